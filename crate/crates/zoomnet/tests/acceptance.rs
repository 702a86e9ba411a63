//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zoomnet::checkpoint;
use zoomnet::cli::run;
use zoomnet::figures::Figure;
use zoomnet_core::data::{generate, DatasetSpec};
use zoomnet_core::gradcheck::run_suite;
use zoomnet_core::ops::resize_bilinear;
use zoomnet_core::sampler::{
    compute_grid_bruteforce, compute_grid_conv, count_within_radius, foldover_stats, lattice, KernelSpec,
    SaliencyMap, SamplingGrid,
};
use zoomnet_core::{Mode, Model, PipelineConfig, Tensor};

const FOLDOVER_LIMIT: f64 = 0.05;
const MARGIN_FLOOR: f64 = 5.0;
const MARGIN_TARGET: f64 = 15.0;
const LOCALIZATION_FLOOR: f64 = 0.8;
const LOCALIZATION_PX: f64 = 12.0;
const DENSITY_RADIUS: f64 = 0.15;
const DENSITY_SIGMA_PX: f64 = 4.0;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { name, passed, detail }
}

fn zoomnet(args: &[&str]) -> i32 {
    run(std::iter::once("zoomnet").chain(args.iter().copied()))
}

fn arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn random_map(rng: &mut ChaCha8Rng, n: usize) -> SaliencyMap {
    let scale = rng.random_range(0.1..6.0);
    let logits = Tensor::from_fn(&[n, n], |_| scale * rng.random_range(-1.0..1.0));
    SaliencyMap::from_logits(&logits, 1.0).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut maps = 0;
    for n in [5, 9, 31] {
        let spec = KernelSpec::for_map_width(n);
        for _ in 0..100 {
            let s = random_map(&mut rng, n);
            let conv = compute_grid_conv(&s, &spec).unwrap();
            let brute = compute_grid_bruteforce(&s, &spec).unwrap();
            worst = worst.max(conv.max_abs_diff(&brute));
            maps += 1;
        }
    }
    let took = start.elapsed();
    outcome(
        "oracle equivalence",
        worst < 1e-9 && took < Duration::from_secs(30),
        format!("max |conv - brute force| {worst:.2e} over {maps} maps in {:.1} s", took.as_secs_f64()),
    )
}

fn identity_degradation() -> Outcome {
    let mut grid_err = 0.0f64;
    for n in [5, 9, 31] {
        let g = compute_grid_conv(&SaliencyMap::uniform(n, n), &KernelSpec::for_map_width(n)).unwrap();
        grid_err = grid_err.max(g.max_abs_diff(&SamplingGrid::identity(n, n)));
    }
    // a fresh sampler model emits a uniform map, so J should be the plain resize
    let cfg = PipelineConfig::default();
    let model = Model::new(cfg.clone(), 0, true).unwrap();
    let spec = DatasetSpec::default();
    let mut pixel_err = 0.0f64;
    for index in 0..8 {
        let image = zoomnet_core::data::generate_sample(&spec, index).unwrap().image;
        let fwd = model.forward(&image, Mode::Eval).unwrap();
        let plain = resize_bilinear(&image, cfg.low.0, cfg.low.1).unwrap();
        pixel_err = pixel_err.max(fwd.sampled.max_abs_diff(&plain));
    }
    outcome(
        "identity/degradation",
        grid_err < 1e-6 && pixel_err < 1e-5,
        format!("grid error {grid_err:.2e}, max pixel error {pixel_err:.2e}"),
    )
}

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for n in [5, 9, 31] {
        let spec = KernelSpec::for_map_width(n);
        for _ in 0..20 {
            let s = random_map(&mut rng, n);
            let g = compute_grid_conv(&s, &spec).unwrap();
            let lr = compute_grid_conv(&s.flip_horizontal(), &spec).unwrap();
            let tb = compute_grid_conv(&s.flip_vertical(), &spec).unwrap();
            let tr = compute_grid_conv(&s.transpose(), &spec).unwrap();
            let at = |t: &Tensor, r: usize, c: usize| t.data()[r * n + c];
            for i in 0..n {
                for j in 0..n {
                    let (m, k) = (n - 1 - i, n - 1 - j);
                    for diff in [
                        at(&lr.u, i, j) - (1.0 - at(&g.u, i, k)),
                        at(&lr.v, i, j) - at(&g.v, i, k),
                        at(&tb.u, i, j) - at(&g.u, m, j),
                        at(&tb.v, i, j) - (1.0 - at(&g.v, m, j)),
                        at(&tr.u, i, j) - at(&g.v, j, i),
                        at(&tr.v, i, j) - at(&g.u, j, i),
                    ] {
                        worst = worst.max(diff.abs());
                    }
                }
            }
        }
    }
    outcome(
        "equivariance",
        worst <= 1e-9,
        format!("max deviation {worst:.2e} over flips and transpose of 60 maps"),
    )
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let report = run_suite(0, None).unwrap();
    let took = start.elapsed();
    let mut worst_op = 0.0f64;
    let mut composed = 0.0f64;
    for c in &report.checks {
        if c.name == "pipeline" {
            composed = composed.max(c.max_rel_err);
        } else {
            worst_op = worst_op.max(c.max_rel_err);
        }
        if !c.passed() {
            println!("      {} failed: {:.2e} >= {:.0e}", c.name, c.max_rel_err, c.tolerance);
        }
    }
    outcome(
        "gradient suite",
        report.passed() && took < Duration::from_secs(120),
        format!(
            "{} checks, worst op {worst_op:.2e}, composed {composed:.2e}, {:.1} s",
            report.checks.len(),
            took.as_secs_f64()
        ),
    )
}

fn density() -> Outcome {
    let n = 31;
    let spec = KernelSpec::for_map_width(n);
    let uniform = SamplingGrid::identity(n, n);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut wins = 0;
    let mut gains = Vec::new();
    for _ in 0..20 {
        let (r, c) = (rng.random_range(0..n), rng.random_range(0..n));
        let logits = Tensor::from_fn(&[n, n], |i| if i == r * n + c { 5.0 } else { 0.0 });
        let g = compute_grid_conv(&SaliencyMap::from_logits(&logits, 1.0).unwrap(), &spec).unwrap();
        let (x, y) = (lattice(c, n), lattice(r, n));
        let peaked = count_within_radius(&g, x, y, DENSITY_RADIUS);
        let flat = count_within_radius(&uniform, x, y, DENSITY_RADIUS);
        if peaked > flat {
            wins += 1;
        }
        gains.push(peaked as f64 / flat as f64);
    }
    let least = gains.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        "density",
        wins == 20,
        format!("{wins}/20 peaks gain points within {DENSITY_RADIUS}, smallest gain x{least:.2}"),
    )
}

fn foldover(report_path: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let n = 31;
    let spec = KernelSpec::for_map_width(n);
    let mut csv = String::from("map,inversions,pairs,fraction\n");
    let (mut total, mut pairs, mut worst, mut nonzero) = (0, 0, 0.0f64, 0);
    for i in 0..1000 {
        let s = random_map(&mut rng, n);
        let stats = foldover_stats(&compute_grid_conv(&s, &spec).unwrap());
        total += stats.inversions;
        pairs += stats.pairs;
        worst = worst.max(stats.fraction());
        writeln!(csv, "{i},{},{},{}", stats.inversions, stats.pairs, stats.fraction()).unwrap();
        if stats.inversions > 0 {
            nonzero += 1;
            println!("      map {i}: {} inversions ({:.4})", stats.inversions, stats.fraction());
        }
    }
    fs::write(report_path, csv).unwrap();
    let mean = total as f64 / pairs as f64;
    outcome(
        "fold-over report",
        report_path.exists() && worst < FOLDOVER_LIMIT,
        format!(
            "mean {mean:.4}, worst map {worst:.4}, {nonzero} maps nonzero, report {}",
            report_path.display()
        ),
    )
}

type Snapshot = Vec<(PathBuf, Vec<u8>)>;

/// Every file below `dir`, sorted by relative path.
fn snapshot(dir: &Path) -> Snapshot {
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

fn determinism(root: &Path) -> Outcome {
    let run_all = |tag: &str| -> Vec<(&'static str, Snapshot)> {
        let base = root.join(tag);
        let data = base.join("data");
        let dirs = ["train", "eval", "ab", "vis"].map(|d| base.join(d));
        dirs.iter().for_each(|d| fs::create_dir_all(d).unwrap());
        let [train, eval, ab, vis] = &dirs;
        let ckpt = train.join("model.ssck");
        let codes = [
            zoomnet(&["gen-data", "--seed", "3", "--n-train", "64", "--n-test", "16", "--out", arg(&data)]),
            zoomnet(&[
                "train", "--seed", "3", "--data", arg(&data), "--epochs", "2", "--batch", "8",
                "--ckpt-out", arg(&ckpt), "--metrics-out", arg(&train.join("metrics.csv")),
            ]),
            zoomnet(&["eval", "--ckpt", arg(&ckpt), "--data", arg(&data), "--out", arg(&eval.join("eval.json"))]),
            zoomnet(&[
                "ab-test", "--seed", "3", "--data", arg(&data), "--epochs", "1", "--batch", "8",
                "--ckpt-out", arg(ab), "--metrics-out", arg(ab), "--report", arg(&ab.join("report.json")),
            ]),
            zoomnet(&["visualize", "--ckpt", arg(&ckpt), "--data", arg(&data), "--index", "3", "--out", arg(vis)]),
        ];
        assert!(codes.iter().all(|&c| c == 0), "a command failed: {codes:?}");
        vec![
            ("gen-data", snapshot(&data)),
            ("train", snapshot(train)),
            ("eval", snapshot(eval)),
            ("ab-test", snapshot(ab)),
            ("visualize", snapshot(vis)),
        ]
    };
    let (a, b) = (run_all("first"), run_all("second"));
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1 || x.1.is_empty()).map(|(x, _)| x.0).collect();
    let files: usize = a.iter().map(|(_, s)| s.len()).sum();
    outcome(
        "determinism",
        differing.is_empty(),
        if differing.is_empty() {
            format!("{files} files identical across two runs of five commands")
        } else {
            format!("outputs differ for {differing:?}")
        },
    )
}

/// Trains both arms through the CLI, then scores the sampler checkpoint.
fn ab_and_localization(root: &Path) -> [Outcome; 2] {
    let dir = root.join("ab");
    let report = dir.join("report.json");
    let start = Instant::now();
    let code = zoomnet(&["ab-test", "--ckpt-out", arg(&dir), "--metrics-out", arg(&dir), "--report", arg(&report)]);
    let took = start.elapsed();
    assert_eq!(code, 0, "ab-test failed");
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let baseline = json["baseline"]["accuracy"].as_f64().unwrap();
    let sampler = json["sampler"]["accuracy"].as_f64().unwrap();
    let margin = 100.0 * (sampler - baseline);
    let ab = outcome(
        "A/B experiment",
        margin > MARGIN_FLOOR && took < Duration::from_secs(20 * 60),
        format!(
            "sampler {:.1}% vs baseline {:.1}%, margin {margin:+.1} points (floor {MARGIN_FLOOR}, target {MARGIN_TARGET}), {:.0} s",
            100.0 * sampler,
            100.0 * baseline,
            took.as_secs_f64()
        ),
    );

    let (_, model) = checkpoint::load(&dir.join("sampler.ssck")).unwrap();
    let data = generate(&DatasetSpec::default()).unwrap();
    let (hs, ws) = model.config.map;
    let (h, w) = model.config.high;
    let near = |y: f64, x: f64, center: (usize, usize)| {
        let (dy, dx) = (y - center.0 as f64, x - center.1 as f64);
        (dy * dy + dx * dx).sqrt() <= LOCALIZATION_PX
    };
    let (mut hits, mut dense_hits) = (0, 0);
    for sample in &data.test {
        let fwd = model.forward(&sample.image, Mode::Eval).unwrap();
        let (r, c) = fwd.saliency.as_ref().unwrap().map.argmax();
        let y = r as f64 * (h - 1) as f64 / (hs - 1) as f64;
        let x = c as f64 * (w - 1) as f64 / (ws - 1) as f64;
        hits += usize::from(near(y, x, sample.center));
        let (dr, dc) = Figure::render(&model, &sample.image).unwrap().densest_region(DENSITY_SIGMA_PX).unwrap();
        dense_hits += usize::from(near(dr as f64, dc as f64, sample.center));
    }
    let n = data.test.len();
    let rate = hits as f64 / n as f64;
    let loc = outcome(
        "zoom localization",
        rate >= LOCALIZATION_FLOOR,
        format!(
            "{hits}/{n} saliency peaks within {LOCALIZATION_PX} px of the glyph ({:.1}%); densest grid region on the glyph for {dense_hits}/{n}",
            100.0 * rate
        ),
    );
    [ab, loc]
}

fn report(o: &Outcome) {
    println!("{} {:<22} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
}

fn main() {
    let scratch = tempfile::tempdir().unwrap();
    let report_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&report_dir).unwrap();
    let mut outcomes = Vec::new();
    let mut record = |o: Outcome| {
        report(&o);
        outcomes.push(o);
    };
    record(oracle_equivalence());
    record(identity_degradation());
    record(equivariance());
    record(gradient_suite());
    record(density());
    record(foldover(&report_dir.join("foldover.csv")));
    record(determinism(scratch.path()));
    for o in ab_and_localization(scratch.path()) {
        record(o);
    }

    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("\n{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
