use std::f64::consts::PI;

use fissure_scan::calibrate::{calibrate_threshold, CalibrationRequest, ThresholdRecord};
use fissure_scan::experiments::{
    centered_fissure, detection_rate_study, detection_table, fp_rate_study, min_angles_for_target, sigma_bias_study,
    DetectionScenario,
};
use fissure_scan::{Exec, NoiseModel, ScanError, SigmaSource, StatConfig, StatKind, WindowSpec};

fn setup() -> (StatConfig, ThresholdRecord) {
    let window = WindowSpec::new(0.2, 0.05).unwrap();
    let config = StatConfig::new(StatKind::Fnb1, window, vec![0.0], SigmaSource::SilvermanGlobal).unwrap();
    let req = CalibrationRequest {
        config: config.clone(),
        t: 50,
        level: 0.95,
        replicates: 200,
        noise: NoiseModel::standard_normal(),
        seed: 31,
    };
    (config, calibrate_threshold(&req, Exec::default()).unwrap())
}

#[test]
fn detection_degrades_with_the_angle_offset() {
    let (config, threshold) = setup();
    let offsets = [0.0, 15.0, 30.0, 45.0, 90.0];
    let scenarios: Vec<DetectionScenario> = offsets
        .iter()
        .map(|&delta_deg| DetectionScenario {
            t: 50,
            fissure: centered_fissure(1.0, 0.04, PI / 6.0, 1.5).unwrap(),
            delta_deg,
            config: config.clone(),
            threshold: threshold.clone(),
            noise: NoiseModel::standard_normal(),
            replicates: 80,
            seed: 5,
        })
        .collect();
    let cells = detection_rate_study(&scenarios, Exec::default()).unwrap();
    let n = 80.0;
    for w in cells.windows(2) {
        let discordant = w[0].detected.iter().zip(&w[1].detected).filter(|(a, b)| a != b).count() as f64;
        let slack = 2.0 * discordant.sqrt() / n;
        assert!(w[1].rate <= w[0].rate + slack, "{} -> {}", w[0].rate, w[1].rate);
    }
    assert!(cells[0].rate > 0.9, "{}", cells[0].rate);
    assert!(cells[4].rate < 0.5, "{}", cells[4].rate);

    let rules = min_angles_for_target(&cells, 0.75);
    assert_eq!(rules.len(), 1);
    if let (Some(dm), Some(p)) = (rules[0].delta_max_deg, rules[0].min_angles) {
        assert_eq!(p, (90.0 / dm).ceil() as usize);
    }
    let csv = detection_table(&cells).to_csv().unwrap();
    assert_eq!(csv.lines().count(), offsets.len() + 1);
}

#[test]
fn detection_is_reproducible_and_thread_independent() {
    let (config, threshold) = setup();
    let s = DetectionScenario {
        t: 50,
        fissure: centered_fissure(1.0, 0.04, 0.3, 1.0).unwrap(),
        delta_deg: 10.0,
        config,
        threshold,
        noise: NoiseModel::box_average(1, 1.0),
        replicates: 30,
        seed: 77,
    };
    let a = detection_rate_study(std::slice::from_ref(&s), Exec::Sequential).unwrap();
    let b = detection_rate_study(std::slice::from_ref(&s), Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn false_positive_rate_tracks_the_level() {
    let (config, threshold) = setup();
    let row = fp_rate_study(&config, &threshold, 50, 300, &NoiseModel::standard_normal(), 1234, Exec::default()).unwrap();
    assert!(row.ci_low <= 0.10 && row.rate < 0.15, "{row:?}");
    assert!(row.ci_low <= row.rate && row.rate <= row.ci_high);

    let mut high = threshold.clone();
    high.beta = 1e9;
    let none = fp_rate_study(&config, &high, 50, 20, &NoiseModel::standard_normal(), 1, Exec::default()).unwrap();
    assert_eq!((none.hits, none.ci_low), (0, 0.0));

    let wrong = config.with_kind(StatKind::F1);
    assert!(matches!(
        fp_rate_study(&wrong, &threshold, 50, 20, &NoiseModel::standard_normal(), 1, Exec::default()),
        Err(ScanError::Config(_))
    ));
    assert!(matches!(
        fp_rate_study(&config, &threshold, 60, 20, &NoiseModel::standard_normal(), 1, Exec::default()),
        Err(ScanError::Config(_))
    ));
}

#[test]
fn sigma_study_is_close_to_one_for_standard_normal() {
    let s = sigma_bias_study(100, 40, &NoiseModel::standard_normal(), 9, Exec::default()).unwrap();
    assert!((s.mean - 1.0).abs() < 0.02, "{s:?}");
    assert!(s.min > 0.9 && s.max < 1.1);
}
