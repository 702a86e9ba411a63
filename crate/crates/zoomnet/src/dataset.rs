//! `NHST` dataset files and the PNG export.
//!
//! Layout: magic `NHST`, version `u16`, the generating spec as length-prefixed
//! JSON, then every train sample followed by every test sample as
//! `label u16, center_row u16, center_col u16, pixels f32[C * H * W]`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use zoomnet_core::data::{Dataset, DatasetSpec, Sample};
use zoomnet_core::Tensor;

use crate::error::{Error, Result};
use crate::figures::{to_u8, write_gray};
use crate::wire::{len_u16, put_f32s, put_json, write_file, Reader};

pub const MAGIC: &[u8; 4] = b"NHST";
pub const VERSION: u16 = 1;
const KIND: &str = "dataset";
/// Single-channel images only.
const CHANNELS: usize = 1;

pub fn encode(spec: &DatasetSpec, data: &Dataset) -> Result<Vec<u8>> {
    if data.train.len() != spec.n_train || data.test.len() != spec.n_test {
        return Err(Error::format(KIND, "sample counts disagree with the spec"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_json(&mut out, spec)?;
    for s in data.train.iter().chain(&data.test) {
        if s.image.shape() != [CHANNELS, spec.rows, spec.cols] {
            return Err(Error::format(KIND, format!("sample shape {:?}", s.image.shape())));
        }
        for v in [s.label, s.center.0, s.center.1] {
            out.extend_from_slice(&len_u16(v, "label or centre")?.to_le_bytes());
        }
        put_f32s(&mut out, s.image.data());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(DatasetSpec, Dataset)> {
    let mut r = Reader::new(bytes, KIND);
    if &r.bytes::<4>()? != MAGIC {
        return Err(Error::format(KIND, "bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(KIND, format!("unsupported version {version}")));
    }
    let spec: DatasetSpec = r.json()?;
    spec.validate()?;
    let pixels = CHANNELS * spec.rows * spec.cols;
    let mut samples = Vec::with_capacity(spec.n_train + spec.n_test);
    for _ in 0..spec.n_train + spec.n_test {
        let label = r.u16()? as usize;
        let center = (r.u16()? as usize, r.u16()? as usize);
        if label >= spec.classes {
            return Err(Error::format(KIND, format!("label {label} with {} classes", spec.classes)));
        }
        let image = Tensor::new(&[CHANNELS, spec.rows, spec.cols], r.f32s(pixels)?)?;
        samples.push(Sample { image, label, center });
    }
    r.expect_end()?;
    let test = samples.split_off(spec.n_train);
    Ok((spec, Dataset { train: samples, test }))
}

pub fn save(path: &Path, spec: &DatasetSpec, data: &Dataset) -> Result<()> {
    write_file(path, &encode(spec, data)?)
}

pub fn load(path: &Path) -> Result<(DatasetSpec, Dataset)> {
    decode(&fs::read(path).map_err(Error::io(path))?)
}

/// Writes `train_00000.png`, ..., `test_00000.png`, ... and `labels.csv` into `dir`.
pub fn export_png(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut csv = String::from("filename,label,center_row,center_col\n");
    for (split, samples) in [("train", &data.train), ("test", &data.test)] {
        for (i, s) in samples.iter().enumerate() {
            let name = format!("{split}_{i:05}.png");
            let (_, h, w) = (s.image.shape()[0], s.image.shape()[1], s.image.shape()[2]);
            write_gray(&dir.join(&name), w, h, &to_u8(s.image.channel(0)))?;
            let _ = writeln!(csv, "{name},{},{},{}", s.label, s.center.0, s.center.1);
        }
    }
    let labels = dir.join("labels.csv");
    write_file(&labels, csv.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use zoomnet_core::data::generate;

    fn small() -> DatasetSpec {
        DatasetSpec {
            rows: 24,
            cols: 20,
            n_train: 5,
            n_test: 3,
            seed: 4,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let spec = small();
        let data = generate(&spec).unwrap();
        let (back_spec, back) = decode(&encode(&spec, &data).unwrap()).unwrap();
        assert_eq!(back_spec, spec);
        assert_eq!(back, data);
    }

    #[test]
    fn rejects_damage() {
        let spec = small();
        let bytes = encode(&spec, &generate(&spec).unwrap()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(decode(&magic).is_err());
    }
}
