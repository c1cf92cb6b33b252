use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fissure_scan::field::{fissure_pixels, generate_noise, inject_anomaly};
use fissure_scan::io::read_field;
use fissure_scan::stats::equidistant_angles;
use fissure_scan::{Exec, NoiseModel, RectAnomaly, ScanPlan, SigmaSource, SignalSpec, StatConfig, StatKind, WindowSpec};
use serde_json::Value;

fn fissure(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fissure")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = fissure(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<Option<f64>>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|c| if c.is_empty() { None } else { Some(c.parse().unwrap()) }).collect())
        .collect()
}

#[test]
fn generate_null_marks_truth_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["generate", "--t", "40", "--seed", "5", "--out", s(&a)]);
    ok(&["generate", "--t", "40", "--seed", "5", "--out", s(&b)]);
    let truth = json(&a.join("truth.json"));
    assert_eq!(truth["result"]["null"], Value::Bool(true));
    assert_eq!(truth["result"]["fissurePixels"], 0);
    assert_eq!(truth["config"]["arguments"]["command"], "generate");
    assert_eq!(fs::read(a.join("field.pgm")).unwrap(), fs::read(b.join("field.pgm")).unwrap());
    assert_eq!(fs::read(a.join("field.pgm.json")).unwrap(), fs::read(b.join("field.pgm.json")).unwrap());
}

#[test]
fn scan_round_trip_stays_within_quantization_bound() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let out = dir.path().join("scan");
    ok(&["generate", "--t", "80", "--seed", "11", "--delta", "2", "--width", "0.03", "--out", s(&gen)]);
    ok(&[
        "scan",
        s(&gen.join("field.pgm")),
        "--d",
        "0.2",
        "--h",
        "0.05",
        "--num-angles",
        "3",
        "--sigma",
        "known:1",
        "--beta",
        "50",
        "--out",
        s(&out),
    ]);

    let noise = generate_noise(&NoiseModel::standard_normal(), 80, 11).unwrap();
    let rect = RectAnomaly::new([0.5, 0.5], 1.0, 0.03, 30f64.to_radians(), 2.0).unwrap();
    let field = inject_anomaly(&noise, &SignalSpec { baseline: 0.0, anomaly: rect }).unwrap();
    let cfg = StatConfig::new(
        StatKind::Fnb1,
        WindowSpec::new(0.2, 0.05).unwrap(),
        equidistant_angles(3),
        SigmaSource::Known(1.0),
    )
    .unwrap();
    let hm = ScanPlan::new(&cfg, 80).unwrap().heatmap(&field, 1.0, Exec::Sequential).unwrap();

    let bound = json(&gen.join("field.pgm.json"))["maxStatErrorTimesSigma"].as_f64().unwrap();
    let csv = read_csv(&out.join("heatmap.csv"));
    let mut worst: f64 = 0.0;
    for (r, row) in csv.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let k = [c + 1, r + 1];
            match (cell, hm.get(k)) {
                (Some(v), Some(w)) => worst = worst.max((v - w).abs()),
                (None, None) => {}
                other => panic!("anchor mismatch at {k:?}: {other:?}"),
            }
        }
    }
    assert!(worst <= bound, "worst {worst} > bound {bound}");
    assert!(bound < 0.1);
}

#[test]
fn strong_fissure_is_found_where_it_is() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    ok(&["generate", "--t", "80", "--seed", "3", "--delta", "6", "--width", "0.05", "--fissure-angle", "0", "--out", s(&gen)]);
    let args = |out: &Path| {
        vec![
            "scan".to_string(),
            s(&gen.join("field.pgm")).to_string(),
            "--d".into(),
            "0.2".into(),
            "--h".into(),
            "0.05".into(),
            "--beta".into(),
            "20".into(),
            "--out".into(),
            s(out).to_string(),
        ]
    };
    let o1 = dir.path().join("s1");
    let files = ["heatmap.csv", "heatmap.png", "heatmap.png.json", "mask.pgm", "summary.json"];
    ok(&args(&o1).iter().map(String::as_str).collect::<Vec<_>>());
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(o1.join(f)).unwrap()).collect();
    ok(&args(&o1).iter().map(String::as_str).collect::<Vec<_>>());
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(o1.join(f)).unwrap(), bytes, "{f} differs");
    }
    let summary = json(&o1.join("summary.json"));
    assert!(summary["result"]["nSignificant"].as_u64().unwrap() > 0);
    assert_eq!(summary["config"]["arguments"]["command"], "scan");
    assert_eq!(summary["result"]["beta"], 20.0);

    let (mask, _) = read_field(&o1.join("mask.pgm")).unwrap();
    let rect = RectAnomaly::new([0.5, 0.5], 1.0, 0.05, 0.0, 6.0).unwrap();
    let hit = fissure_pixels(&rect, 80).into_iter().any(|k| mask.get(k) > 0.5);
    assert!(hit, "no significant anchor on the fissure");
}

#[test]
fn constant_image_has_no_significant_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("c.pgm");
    let mut bytes = b"P5\n40 40\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(77u8, 1600));
    fs::write(&img, bytes).unwrap();
    let out = dir.path().join("o");
    ok(&["scan", s(&img), "--d", "0.3", "--h", "0.1", "--beta", "0.001", "--out", s(&out)]);
    assert_eq!(json(&out.join("summary.json"))["result"]["nSignificant"], 0);
}

#[test]
fn estimate_sigma_on_standard_normal_image() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("g");
    ok(&["generate", "--t", "100", "--seed", "21", "--out", s(&gen)]);
    let out = ok(&["estimate-sigma", s(&gen.join("field.pgm"))]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sigma = v["result"]["value"].as_f64().unwrap();
    assert!((0.95..=1.05).contains(&sigma), "{sigma}");
}

#[test]
fn calibrate_twice_gives_identical_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    let args = ["calibrate", "--t", "50", "--d", "0.2", "--h", "0.05", "--reps", "50", "--seed", "4", "--threshold-cache", s(&cache)];
    let first = ok(&args);
    let bytes = fs::read(&cache).unwrap();
    let second = ok(&args);
    assert_eq!(bytes, fs::read(&cache).unwrap());
    let a: Value = serde_json::from_slice(&first.stdout).unwrap();
    let b: Value = serde_json::from_slice(&second.stdout).unwrap();
    assert_eq!(a["result"], b["result"]);
    assert_eq!(b["config"]["resolved"]["fromCache"], true);

    let fresh = dir.path().join("other.json");
    let mut other = args.to_vec();
    *other.last_mut().unwrap() = s(&fresh);
    ok(&other);
    assert_eq!(bytes, fs::read(&fresh).unwrap());
}

#[test]
fn studies_use_the_cached_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache.json");
    ok(&["calibrate", "--t", "50", "--d", "0.2", "--h", "0.05", "--reps", "60", "--seed", "8", "--threshold-cache", s(&cache)]);
    let fp = dir.path().join("fp");
    ok(&[
        "simulate-fp", "--t", "50", "--d", "0.2", "--h", "0.05", "--p-list", "1,2", "--reps", "30", "--seed", "9",
        "--threshold-cache", s(&cache), "--out", s(&fp),
    ]);
    let csv = fs::read_to_string(fp.join("fp.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().next().unwrap().contains("hits,replicates,rate,ci_low,ci_high"));

    let det = dir.path().join("det");
    ok(&[
        "simulate-detect", "--t", "50", "--d", "0.2", "--h", "0.05", "--widths", "0.04", "--amplitudes", "3",
        "--offsets", "0,30", "--reps", "20", "--seed", "9", "--threshold-cache", s(&cache), "--out", s(&det),
    ]);
    let doc = json(&det.join("detect.json"));
    assert_eq!(doc["result"]["cells"].as_array().unwrap().len(), 2);
    assert_eq!(doc["config"]["arguments"]["command"], "simulate-detect");
}

#[test]
fn fast_scan_writes_mask_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("g");
    ok(&["generate", "--t", "60", "--seed", "2", "--delta", "4", "--width", "0.05", "--fissure-angle", "0", "--out", s(&gen)]);
    let out = dir.path().join("fs");
    ok(&[
        "fast-scan", s(&gen.join("field.pgm")), "--d", "0.2", "--h", "0.05", "--num-angles1", "2", "--num-angles2", "4",
        "--beta-liberal", "5", "--beta-conservative", "15", "--out", s(&out),
    ]);
    let doc = json(&out.join("summary.json"));
    let stats = &doc["result"]["stats"];
    assert!(stats["evaluations"].as_u64().unwrap() < stats["fullScanEvaluations"].as_u64().unwrap());
    assert!(out.join("mask.pgm").exists());
}

#[test]
fn verify_with_default_seed_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = fissure(&["verify", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&dir.path().join("verify.json"))["result"]["passed"], true);
}

#[test]
fn verify_failure_exits_with_three() {
    let out = fissure(&["verify", "--reps", "200", "--seed", "10"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn exit_codes_for_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("g");
    ok(&["generate", "--t", "40", "--seed", "1", "--out", s(&gen)]);
    let img = gen.join("field.pgm");
    let o = dir.path().join("o");

    assert_eq!(fissure(&["scan", s(&img), "--out", s(&o)]).status.code(), Some(1), "missing threshold");
    assert_eq!(fissure(&["generate", "--out", s(&o)]).status.code(), Some(1), "missing seed");
    assert_eq!(fissure(&["scan", "--bogus"]).status.code(), Some(1));
    assert_eq!(fissure(&["scan", s(&img), "--stat", "f9", "--beta", "1", "--out", s(&o)]).status.code(), Some(1));
    assert_eq!(fissure(&["scan", "nope.pgm", "--beta", "1", "--out", s(&o)]).status.code(), Some(1));
    assert_eq!(fissure(&["--help"]).status.code(), Some(0));

    let rect = dir.path().join("r.pgm");
    let mut bytes = b"P5\n40 30\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(1u8, 1200));
    fs::write(&rect, bytes).unwrap();
    assert_eq!(fissure(&["scan", s(&rect), "--beta", "1", "--d", "0.3", "--h", "0.1", "--out", s(&o)]).status.code(), Some(2));

    let color = dir.path().join("c.ppm");
    let mut bytes = b"P6\n40 40\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(1u8, 4800));
    fs::write(&color, bytes).unwrap();
    assert_eq!(fissure(&["estimate-sigma", s(&color)]).status.code(), Some(2));

    let cache = dir.path().join("cache.json");
    fs::write(&cache, "{ not json").unwrap();
    assert_eq!(fissure(&["scan", s(&img), "--threshold-cache", s(&cache), "--out", s(&o)]).status.code(), Some(2));
}
