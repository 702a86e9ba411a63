use std::fs;
use std::path::{Path, PathBuf};

use zoomnet::checkpoint;
use zoomnet::cli::{run, DATASET_FILE};
use zoomnet::figures::Figure;
use zoomnet_core::sampler::SamplingGrid;
use zoomnet_core::{Model, PipelineConfig};

fn zoomnet(args: &[&str]) -> i32 {
    run(std::iter::once("zoomnet").chain(args.iter().copied()))
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Every file below `dir` with its contents, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn small_data(dir: &Path, seed: &str) {
    let code = zoomnet(&[
        "gen-data", "--seed", seed, "--n-train", "12", "--n-test", "6", "--out", path_arg(dir),
    ]);
    assert_eq!(code, 0);
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(zoomnet(&["--help"]), 0);
    assert_eq!(zoomnet(&[]), 2);
    assert_eq!(zoomnet(&["train", "--no-such-flag"]), 2);
    assert_eq!(zoomnet(&["gen-data", "--classes", "many"]), 2);
}

#[test]
fn runtime_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.ssck");
    assert_eq!(zoomnet(&["eval", "--ckpt", path_arg(&missing)]), 1);
    let bad = tmp.path().join("bad");
    assert_eq!(
        zoomnet(&["gen-data", "--classes", "9", "--n-train", "2", "--n-test", "1", "--out", path_arg(&bad)]),
        1
    );
}

#[test]
fn gen_data_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    small_data(&a, "7");
    small_data(&b, "7");
    let snap = snapshot(&a);
    assert_eq!(snap, snapshot(&b));
    let names: Vec<_> = snap.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    assert!(names.contains(&DATASET_FILE.to_string()));
    assert!(names.contains(&"labels.csv".to_string()));
    assert_eq!(names.iter().filter(|n| n.ends_with(".png")).count(), 18);
    let labels = fs::read_to_string(a.join("labels.csv")).unwrap();
    assert!(labels.starts_with("filename,label,center_row,center_col\n"));
    assert_eq!(labels.lines().count(), 19);
}

#[test]
fn grad_check_passes_and_catches_a_fault() {
    assert_eq!(zoomnet(&["grad-check", "--seed", "3"]), 0);
    assert_eq!(zoomnet(&["grad-check", "--seed", "3", "--inject-fault", "grid_sample"]), 1);
    assert_eq!(zoomnet(&["grad-check", "--seed", "3", "--inject-fault", "pipeline"]), 1);
}

#[test]
fn train_eval_visualize_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "1");
    let run_train = |tag: &str| {
        let ckpt = tmp.path().join(format!("{tag}.ssck"));
        let csv = tmp.path().join(format!("{tag}.csv"));
        let code = zoomnet(&[
            "train",
            "--seed",
            "5",
            "--data",
            path_arg(&data),
            "--epochs",
            "2",
            "--batch",
            "4",
            "--ckpt-out",
            path_arg(&ckpt),
            "--metrics-out",
            path_arg(&csv),
        ]);
        assert_eq!(code, 0);
        (fs::read(&ckpt).unwrap(), fs::read_to_string(&csv).unwrap(), ckpt)
    };
    let (ckpt_a, csv_a, path) = run_train("a");
    let (ckpt_b, csv_b, _) = run_train("b");
    assert_eq!(ckpt_a, ckpt_b);
    assert_eq!(csv_a, csv_b);
    assert_eq!(csv_a.lines().count(), 3);

    let report = tmp.path().join("eval.json");
    let code = zoomnet(&["eval", "--ckpt", path_arg(&path), "--data", path_arg(&data), "--out", path_arg(&report)]);
    assert_eq!(code, 0);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(json["samples"], 6);

    let before = fs::read(&path).unwrap();
    for tag in ["v1", "v2"] {
        let out = tmp.path().join(tag);
        let code = zoomnet(&["visualize", "--ckpt", path_arg(&path), "--data", path_arg(&data), "--index", "2", "--out", path_arg(&out)]);
        assert_eq!(code, 0);
    }
    assert_eq!(fs::read(&path).unwrap(), before, "visualize must not touch the checkpoint");
    let snap = snapshot(&tmp.path().join("v1"));
    assert_eq!(snap, snapshot(&tmp.path().join("v2")));
    let names: Vec<_> = snap.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["grid.png", "original.png", "saliency.png", "sampled.png"]);

    // a PNG input goes through the same path
    let png = tmp.path().join("v1").join("original.png");
    let out = tmp.path().join("v3");
    assert_eq!(zoomnet(&["visualize", "--ckpt", path_arg(&path), "--input", path_arg(&png), "--out", path_arg(&out)]), 0);
}

#[test]
fn uniform_checkpoint_draws_a_regular_lattice() {
    let model = Model::new(PipelineConfig::default(), 0, true).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("fresh.ssck");
    checkpoint::save(&path, &model, None, 0).unwrap();
    let (_, loaded) = checkpoint::load(&path).unwrap();
    let image = zoomnet_core::data::generate_sample(&Default::default(), 0).unwrap().image;
    let fig = Figure::render(&loaded, &image).unwrap();
    let expected = zoomnet::figures::grid_lines(&SamplingGrid::identity(31, 31), 96, 96);
    assert_eq!(fig.line_mask, expected);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    small_data(&data, "2");
    let ckpt = |threads: &str| {
        let path = tmp.path().join(format!("t{threads}.ssck"));
        let code = zoomnet(&[
            "train", "--threads", threads, "--data", path_arg(&data), "--epochs", "1", "--batch", "4", "--ckpt-out",
            path_arg(&path),
        ]);
        assert_eq!(code, 0);
        fs::read(path).unwrap()
    };
    assert_eq!(ckpt("1"), ckpt("3"));
}
