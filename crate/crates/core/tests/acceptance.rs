//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs sequentially so the reported runtimes are meaningful.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use deepdim::activations::{all_maps, Estimator, LayerActivations};
use deepdim::augment::Image;
use deepdim::cli;
use deepdim::linalg::oracle::gram_eigen_oracle;
use deepdim::linalg::{singular_values, Matrix};
use deepdim::rng;
use deepdim::spectrum::{detect_drop, Theta};
use deepdim::storage::{
    decode_activations, encode_activations, read_activations, write_activations, write_image, DimensionReport, Dtype,
};
use deepdim::synthetic::{sample_hyperplane_cluster, sample_independent_blocks, BlockLayout, HyperplaneSpec};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)).unwrap()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng::seeded(1);
    let mut worst_top = 0.0f64;
    let mut worst_rest = 0.0f64;
    let mut ok = 0;
    for _ in 0..200 {
        let small = r.random_range(1..=64);
        let large = r.random_range(1..=400);
        let (rows, cols) = if r.random_bool(0.5) { (small, large) } else { (large, small) };
        let m = gaussian(rows, cols, &mut r);
        let fast = singular_values(&m).unwrap();
        let slow = gram_eigen_oracle(&m).unwrap();
        let s1 = slow.values()[0];
        let top = (fast.values()[0] - s1).abs() / s1;
        let rest = fast
            .values()
            .iter()
            .zip(slow.values())
            .skip(1)
            .map(|(a, b)| (a - b).abs() / s1)
            .fold(0.0, f64::max);
        worst_top = worst_top.max(top);
        worst_rest = worst_rest.max(rest);
        if top <= 1e-10 && rest <= 1e-10 {
            ok += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        ok == 200 && within(t, 10.0),
        format!(
            "SVD oracle equivalence: {ok}/200 within 1e-10 (worst σ₁ rel {worst_top:.1e}, worst others/σ₁ {worst_rest:.1e}) in {:.2}s (limit 10s)",
            t.as_secs_f64()
        ),
    )
}

/// Criteria 2 and 3 share one run of 100 recovery trials.
fn criteria_2_and_3() -> (Outcome, Outcome) {
    let start = Instant::now();
    let theta = Theta::default();
    let mut recovered = 0;
    let mut shaped = 0;
    let mut min_gap = f64::INFINITY;
    let mut max_spread = 0.0f64;
    for trial in 0..100u64 {
        let d = 1 + (trial as usize % 50);
        let spec = HyperplaneSpec {
            ambient_dim: 512,
            intrinsic_dim: d,
            cluster_size: (4 * d).max(20),
            noise_scale: 1e-10,
            coefficient_scale: 1.0,
            seed: 1000 + trial,
        };
        let s = singular_values(&sample_hyperplane_cluster(&spec).unwrap()).unwrap();
        if detect_drop(&s, theta).unwrap().dimension == d {
            recovered += 1;
        }
        let v = s.values();
        let gap = v[d - 1] / v[d];
        let spread = v[0] / v[d - 1];
        min_gap = min_gap.min(gap);
        max_spread = max_spread.max(spread);
        if gap > 1e5 && spread < 1e3 {
            shaped += 1;
        }
    }
    let t = start.elapsed();
    (
        outcome(
            recovered == 100 && within(t, 60.0),
            format!(
                "known-dimension recovery (D=512, d=1..50, n=max(4d,20), noise 1e-10): {recovered}/100 exact in {:.2}s (limit 60s)",
                t.as_secs_f64()
            ),
        ),
        outcome(
            shaped == 100,
            format!(
                "drop shape: {shaped}/100 with σ_d/σ_(d+1) > 1e5 and σ_1/σ_d < 1e3 (smallest gap {min_gap:.2e}, largest spread {max_spread:.2})"
            ),
        ),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let estimator = Estimator::default();
    let mut r = rng::seeded(4);
    let mut equal = 0;
    let mut strict = 0;
    for trial in 0..100u64 {
        let layout = if trial < 50 { BlockLayout::Disjoint } else { BlockLayout::Shared };
        let k = r.random_range(2..=6);
        let ranks: Vec<usize> = (0..k).map(|_| r.random_range(1..=8)).collect();
        let rows = r.random_range(10..=24);
        let n = ranks.iter().sum::<usize>() + r.random_range(0..=20);
        let blocks = sample_independent_blocks(&ranks, rows, n, layout, 4000 + trial).unwrap();
        let acts = LayerActivations::from_map_matrices("blocks", rows, 1, &blocks).unwrap();
        let s = estimator.summarize(&acts, &all_maps(&acts), true, false).unwrap();
        let concat = s.concatenated.unwrap();
        match layout {
            BlockLayout::Disjoint if concat == s.estimated && s.per_map_dimensions == ranks => equal += 1,
            BlockLayout::Shared if concat < s.estimated => strict += 1,
            _ => {}
        }
    }
    let t = start.elapsed();
    outcome(
        equal == 50 && strict == 50 && within(t, 30.0),
        format!(
            "block equality: {equal}/50 concatenated = per-map sum; shared-row-space controls: {strict}/50 concatenated < sum; {:.2}s (limit 30s)",
            t.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut r = rng::seeded(5);
    let mut ok = 0;
    for _ in 0..20 {
        let big_d = r.random_range(2..=200);
        let n = big_d + r.random_range(0..=200);
        let report = detect_drop(&singular_values(&gaussian(big_d, n, &mut r)).unwrap(), Theta::default()).unwrap();
        if report.full_space && report.dimension == big_d {
            ok += 1;
        }
    }
    outcome(ok == 20, format!("full-space fallback on full-row-rank D ≤ n matrices: {ok}/20"))
}

fn seed_image(dir: &Path) -> String {
    let img = Image::from_fn(16, 16, |y, x, c| ((x * 16 + y * 7 + c * 50) % 256) as f32 / 255.0).unwrap();
    let path = dir.join("seed.ppm");
    write_image(&img, &path).unwrap();
    path.to_str().unwrap().to_owned()
}

fn pipeline(image: &str, extra: &[&str]) -> Result<Vec<u8>, String> {
    let mut args = vec!["deepdim", "pipeline", image, "--confidence", "0", "--seed", "6"];
    args.extend_from_slice(extra);
    let mut out = Vec::new();
    let mut err = Vec::new();
    match cli::run(args, &mut out, &mut err) {
        0 => Ok(out),
        code => Err(format!("exit {code}: {}", String::from_utf8_lossy(&err).trim())),
    }
}

fn criterion_6(image: &str) -> Outcome {
    let start = Instant::now();
    let mut identical = 0;
    let mut bounded = true;
    let mut above_n = Vec::new();
    let mut problems = Vec::new();
    for method in ["crop", "gaussian-noise", "rotation"] {
        let args = ["--n", "1000", "--method", method, "--crop-max", "3", "--concat", "--original"];
        let (a, b) = match (pipeline(image, &args), pipeline(image, &args)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                problems.push(format!("{method}: {e}"));
                continue;
            }
        };
        if a == b {
            identical += 1;
        }
        let report = DimensionReport::from_json(std::str::from_utf8(&a).unwrap()).unwrap();
        for l in &report.layers {
            let n = l.cluster_size;
            let map_size = l.activation_dim / l.map_indices.len();
            let single = l.per_map_dimensions.iter().all(|&d| d <= n && d <= map_size);
            let joint = [l.concatenated, l.original].iter().flatten().all(|&d| d <= 1000 && d <= l.activation_dim);
            let sum = l.estimated <= l.activation_dim && l.estimated <= l.map_indices.len() * n;
            bounded &= n <= 1000 && single && joint && sum;
            if l.estimated > n {
                above_n.push(format!("{method}/{}={}", l.layer_name, l.estimated));
            }
        }
    }
    let t = start.elapsed();
    let mut detail = format!(
        "pipeline determinism (tiny net, 16x16, n=1000, 3 methods): {identical}/3 byte-identical; per-map, concatenated and original ≤ 1000 and ≤ D: {bounded}; {:.1}s (limit 300s)",
        t.as_secs_f64()
    );
    if !above_n.is_empty() {
        detail.push_str(&format!(
            "\n       note: estimated (a per-map sum, bounded by D) exceeds n in {}",
            above_n.join(", ")
        ));
    }
    if !problems.is_empty() {
        detail.push_str(&format!("\n       errors: {}", problems.join("; ")));
    }
    outcome(identical == 3 && bounded && problems.is_empty() && within(t, 300.0), detail)
}

fn criterion_7(image: &str) -> Outcome {
    let sizes = [250usize, 500, 1000, 3000];
    let mut reports = Vec::new();
    for n in sizes {
        let n_arg = n.to_string();
        match pipeline(image, &["--n", &n_arg, "--method", "gaussian-noise"]) {
            Ok(bytes) => reports.push(DimensionReport::from_json(std::str::from_utf8(&bytes).unwrap()).unwrap()),
            Err(e) => return outcome(false, format!("size growth: pipeline failed at n={n}: {e}")),
        }
    }
    let mut monotone = true;
    let mut lines = Vec::new();
    for (i, layer) in reports[0].layers.iter().enumerate() {
        let series: Vec<usize> = reports.iter().map(|r| r.layers[i].estimated).collect();
        monotone &= series.windows(2).all(|w| w[0] <= w[1]);
        let growth = 100.0 * (series[3] as f64 - series[2] as f64) / series[2].max(1) as f64;
        lines.push(format!(
            "{}: {} (+{growth:.1}% from n=1000 to 3000)",
            layer.layer_name,
            series.iter().map(usize::to_string).collect::<Vec<_>>().join(" → ")
        ));
    }
    outcome(
        monotone,
        format!(
            "size growth (gaussian noise, n = 250/500/1000/3000): estimated non-decreasing in every layer: {monotone}\n       {}",
            lines.join("\n       ")
        ),
    )
}

fn criterion_8(dir: &Path) -> Outcome {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_f32.actv");
    let stored = std::fs::read(&fixture).unwrap_or_default();
    let data: Vec<f64> = (0..24).map(|i| (i as f64 - 11.0) * 0.25).collect();
    let golden = LayerActivations::new("conv5_1", 2, 3, 2, 2, data).unwrap();
    let mut expected = b"ACTV\x01\x00\x01\x04".to_vec();
    for d in [2u64, 3, 2, 2] {
        expected.extend_from_slice(&d.to_le_bytes());
    }
    expected.extend_from_slice(&7u16.to_le_bytes());
    expected.extend_from_slice(b"conv5_1");
    for v in golden.data() {
        expected.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let golden_ok = stored == expected
        && encode_activations(&golden, Dtype::F32).ok() == Some(stored.clone())
        && decode_activations(&stored).map(|(t, _)| t).ok() == Some(golden);

    let mut r = rng::seeded(8);
    let mut ok = 0;
    for i in 0..50 {
        let (n, c, h, w) = (r.random_range(1..=6), r.random_range(1..=4), r.random_range(1..=7), r.random_range(1..=7));
        let dtype = if i % 2 == 0 { Dtype::F32 } else { Dtype::F64 };
        let data: Vec<f64> = (0..n * c * h * w)
            .map(|_| {
                let v: f64 = r.sample::<f64, _>(StandardNormal) * 1e3;
                if dtype == Dtype::F32 { f64::from(v as f32) } else { v }
            })
            .collect();
        let t = LayerActivations::new(format!("layer_{i}"), n, c, h, w, data).unwrap();
        let path = dir.join(format!("t{i}.actv"));
        write_activations(&t, dtype, &path).unwrap();
        if read_activations(&path).ok().as_ref() == Some(&t) {
            ok += 1;
        }
    }
    outcome(
        golden_ok && ok == 50,
        format!("formats: golden ACTV fixture byte-stable: {golden_ok}; read∘write identity on {ok}/50 random tensors"),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let image = seed_image(dir.path());
    let (c2, c3) = criteria_2_and_3();
    let results = [
        criterion_1(),
        c2,
        c3,
        criterion_4(),
        criterion_5(),
        criterion_6(&image),
        criterion_7(&image),
        criterion_8(dir.path()),
    ];
    println!();
    for (i, r) in results.iter().enumerate() {
        println!("{} [{}] {}", if r.pass { "PASS" } else { "FAIL" }, i + 1, r.detail);
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
