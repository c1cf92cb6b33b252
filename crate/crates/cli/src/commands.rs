use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fissure_scan::calibrate::{calibrate_threshold, CalibrationRequest, ThresholdCache, ThresholdRecord};
use fissure_scan::experiments::{
    self, detection_rate_study, detection_table, fp_rate_study, min_angles_for_target, DetectionScenario,
    FastScanConfig, StudyTable,
};
use fissure_scan::field::{generate_noise, fissure_pixels, inject_anomaly};
use fissure_scan::io::{self, GrayImage};
use fissure_scan::stats::{equidistant_angles, significance_mask, HeatMap, SignificanceMask};
use fissure_scan::verify::{default_suite, SuiteConfig};
use fissure_scan::{
    Exec, GrayField, NoiseModel, RectAnomaly, ScanError, ScanPlan, SigmaSource, SignalSpec, StatConfig, StatKind, WindowSpec,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{
    CalibrateArgs, EstimateSigmaArgs, FastScanArgs, GenerateArgs, ScanArgs, SimulateDetectArgs, SimulateFpArgs,
    StatArgs, ThresholdArgs, VerifyArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Scan(ScanError),
    VerificationFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Scan(e) => match e {
                ScanError::Domain(_)
                | ScanError::DegenerateWindow(_)
                | ScanError::WindowTooLarge { .. }
                | ScanError::OutOfBounds(..)
                | ScanError::Config(_) => 1,
                ScanError::Data(_)
                | ScanError::Load { .. }
                | ScanError::Io(_)
                | ScanError::Json(_)
                | ScanError::Image(_) => 2,
            },
            CliError::VerificationFailed(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Scan(e) => write!(f, "{e}"),
            CliError::VerificationFailed(n) => write!(f, "{n} verification check(s) failed"),
        }
    }
}

impl From<ScanError> for CliError {
    fn from(e: ScanError) -> Self {
        CliError::Scan(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn parse<T: FromStr>(s: &str, what: &str) -> CliResult<T> {
    s.trim().parse().map_err(|_| CliError::Usage(format!("invalid {what} '{s}'")))
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    let v = s.split(',').filter(|p| !p.trim().is_empty()).map(|p| parse(p, what)).collect::<CliResult<Vec<T>>>()?;
    if v.is_empty() {
        return usage(format!("empty {what} list"));
    }
    Ok(v)
}

fn degrees_to_angles(s: &str) -> CliResult<Vec<f64>> {
    Ok(parse_list::<f64>(s, "angle")?.into_iter().map(f64::to_radians).collect())
}

fn angle_set(angles: Option<&str>, num: Option<usize>, default_num: usize) -> CliResult<Vec<f64>> {
    match (angles, num) {
        (Some(a), _) => degrees_to_angles(a),
        (None, Some(0)) => usage("--num-angles must be >= 1"),
        (None, Some(p)) => Ok(equidistant_angles(p)),
        (None, None) => Ok(equidistant_angles(default_num)),
    }
}

fn stat_config(kind: &str, d: f64, h: f64, sigma: &str, angles: Vec<f64>) -> CliResult<StatConfig> {
    let kind: StatKind = kind.parse()?;
    let sigma: SigmaSource = sigma.parse()?;
    Ok(StatConfig::new(kind, WindowSpec::new(d, h)?, angles, sigma)?)
}

fn stat_args_config(a: &StatArgs) -> CliResult<StatConfig> {
    stat_config(&a.stat, a.d, a.h, &a.sigma, angle_set(a.angles.as_deref(), a.num_angles, 1)?)
}

fn read_input(path: &Path) -> CliResult<(GrayField, Option<io::FieldSidecar>)> {
    if !path.is_file() {
        return usage(format!("input file {} does not exist", path.display()));
    }
    Ok(io::read_field(path)?)
}

fn noise(s: &str) -> CliResult<NoiseModel> {
    Ok(s.parse()?)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Scan(ScanError::Io(e)))
}

/// `{"config": ..., "result": ...}` with the echoed arguments and the
/// resolved settings under `config`.
fn report(echo: Value, resolved: Value, result: impl Serialize) -> CliResult<Value> {
    Ok(json!({
        "config": { "arguments": echo, "resolved": resolved },
        "result": serde_json::to_value(result).map_err(ScanError::from)?,
    }))
}

fn emit(doc: &Value, out: Option<&Path>) -> CliResult<()> {
    if let Some(path) = out {
        io::write_json(path, doc)?;
    }
    println!("{}", serde_json::to_string_pretty(doc).map_err(ScanError::from)?);
    Ok(())
}

fn resolved_config(config: &StatConfig) -> Value {
    json!({
        "stat": config.kind.name(),
        "d": config.window.d,
        "h": config.window.h,
        "anglesRad": config.angles,
        "anglesDeg": config.angles.iter().map(|a| a.to_degrees()).collect::<Vec<_>>(),
        "sigma": config.sigma.tag(),
    })
}

/// Threshold from `--beta` or the unique matching cache record.
fn resolve_threshold(a: &ThresholdArgs, kind: StatKind, config: &StatConfig, t: usize) -> CliResult<ThresholdRecord> {
    resolve_threshold_at(a.beta, a.threshold_cache.as_deref(), a, a.level, kind, config, t)
}

fn resolve_threshold_at(
    beta: Option<f64>,
    cache: Option<&Path>,
    filters: &ThresholdArgs,
    level: Option<f64>,
    kind: StatKind,
    config: &StatConfig,
    t: usize,
) -> CliResult<ThresholdRecord> {
    if let Some(beta) = beta {
        if !beta.is_finite() {
            return usage(format!("threshold must be finite, got {beta}"));
        }
        return Ok(ThresholdRecord {
            beta,
            stat_kind: kind,
            d: config.window.d,
            h: config.window.h,
            t,
            calibration_angles: Vec::new(),
            level: level.unwrap_or(0.0),
            replicates: 0,
            seed: 0,
            noise_model: "explicit".into(),
            sigma_source: config.sigma.tag(),
            retries: 0,
        });
    }
    let Some(path) = cache else {
        return usage("missing threshold: pass --beta or --threshold-cache");
    };
    if !path.exists() {
        return usage(format!("threshold cache {} does not exist", path.display()));
    }
    let cache = ThresholdCache::load(path)?;
    let cal_noise = filters.cal_noise.as_deref().map(noise).transpose()?.map(|n| n.tag());
    let sigma = config.sigma.tag();
    let hits: Vec<&ThresholdRecord> = cache
        .records()
        .iter()
        .filter(|r| r.stat_kind == kind && r.d == config.window.d && r.h == config.window.h && r.t == t)
        .filter(|r| r.sigma_source == sigma)
        .filter(|r| level.is_none_or(|l| r.level == l))
        .filter(|r| filters.cal_reps.is_none_or(|n| r.replicates == n))
        .filter(|r| filters.cal_seed.is_none_or(|s| r.seed == s))
        .filter(|r| cal_noise.as_ref().is_none_or(|n| &r.noise_model == n))
        .collect();
    match hits.as_slice() {
        [one] => Ok((*one).clone()),
        [] => usage(format!(
            "missing threshold: no record in {} for stat {kind}, d = {}, h = {}, T = {t}, sigma {sigma}",
            path.display(),
            config.window.d,
            config.window.h
        )),
        many => usage(format!(
            "{} records in {} match; narrow with --level, --cal-reps, --cal-seed or --cal-noise",
            many.len(),
            path.display()
        )),
    }
}

fn threshold_summary(r: &ThresholdRecord) -> Value {
    if r.replicates == 0 {
        json!({ "source": "explicit", "beta": r.beta })
    } else {
        json!({ "source": "cache", "record": r })
    }
}

fn write_mask_pgm(path: &Path, mask: &SignificanceMask) -> CliResult<()> {
    let codes = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    Ok(io::write_pgm(path, &GrayImage { width: mask.t, height: mask.t, maxval: 255, codes })?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Scan(ScanError::Io(e)))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct ScanSummary {
    sigma: f64,
    sigma_method: String,
    beta: f64,
    n_significant: usize,
    anchor_rect: fissure_scan::AnchorRect,
    max_stat: Option<f64>,
    argmax: Option<[usize; 2]>,
    gray_mapping: Value,
    warnings: Vec<String>,
}

pub fn scan(a: &ScanArgs, echo: Value) -> CliResult<()> {
    let config = stat_args_config(&a.stat)?;
    let (field, sidecar) = read_input(&a.image)?;
    let t = field.t();
    let threshold = resolve_threshold(&a.threshold, config.kind, &config, t)?;
    threshold.check_compatible(&config, t)?;
    let plan = ScanPlan::new(&config, t)?;
    let sigma = config.sigma.resolve(&field)?;
    let mut warnings = Vec::new();
    let hm = if sigma.degenerate {
        warnings.push("sigma estimate is zero; every contrast vanishes and no anchor is significant".into());
        let mut values = vec![f64::NAN; t * t];
        for k in plan.anchors().iter() {
            values[(k[1] - 1) * t + (k[0] - 1)] = 0.0;
        }
        HeatMap { t, values, anchors: plan.anchors() }
    } else {
        plan.heatmap(&field, sigma.value, Exec::default())?
    };
    let mask = if sigma.degenerate { SignificanceMask::empty(t) } else { significance_mask(&hm, threshold.beta) };
    create_dir(&a.out)?;
    write_text(&a.out.join("heatmap.csv"), &io::heatmap_to_csv(&hm))?;
    io::write_heatmap_png(&a.out.join("heatmap.png"), &hm)?;
    write_mask_pgm(&a.out.join("mask.pgm"), &mask)?;
    let gray_mapping = match &sidecar {
        Some(sc) => json!({ "source": "sidecar", "offset": sc.offset, "scale": sc.scale,
                            "maxStatErrorTimesSigma": sc.max_stat_error_times_sigma }),
        None => json!({ "source": "value/maxval" }),
    };
    let nonempty = !plan.anchors().is_empty();
    let summary = ScanSummary {
        sigma: sigma.value,
        sigma_method: sigma.method.clone(),
        beta: threshold.beta,
        n_significant: mask.count(),
        anchor_rect: plan.anchors(),
        max_stat: nonempty.then(|| hm.max()),
        argmax: nonempty.then(|| hm.argmax()),
        gray_mapping,
        warnings,
    };
    let resolved = json!({ "stat": resolved_config(&config), "T": t, "threshold": threshold_summary(&threshold) });
    emit(&report(echo, resolved, summary)?, Some(&a.out.join("summary.json")))
}

pub fn generate(a: &GenerateArgs, echo: Value) -> CliResult<()> {
    let model = noise(&a.noise)?;
    let center: Vec<f64> = parse_list(&a.center, "center coordinate")?;
    let [cx, cy] = center[..] else {
        return usage(format!("--center needs two coordinates, got '{}'", a.center));
    };
    let noise_field = generate_noise(&model, a.t, a.seed)?;
    let fissure = if a.delta != 0.0 {
        Some(RectAnomaly::new([cx, cy], a.length, a.width, a.fissure_angle.to_radians(), a.delta)?)
    } else {
        None
    };
    let field = match &fissure {
        Some(f) => inject_anomaly(&noise_field, &SignalSpec { baseline: a.baseline, anomaly: *f })?,
        None => noise_field.map(|v| v + a.baseline),
    };
    create_dir(&a.out)?;
    let extra = json!({ "fissure": fissure, "baseline": a.baseline, "noise": model.tag(), "seed": a.seed, "T": a.t });
    let image = a.out.join("field.pgm");
    let sidecar = io::write_field_pgm(&image, &field, Some(extra))?;
    if a.csv {
        write_text(&a.out.join("field.csv"), &io::field_to_csv(&field))?;
    }
    let truth = json!({
        "null": fissure.is_none(),
        "fissure": fissure,
        "fissurePixels": fissure.as_ref().map_or(0, |f| fissure_pixels(f, a.t).len()),
        "clipped": fissure.as_ref().is_some_and(|f| f.is_clipped()),
        "image": image,
        "sidecar": sidecar,
    });
    let resolved = json!({ "noise": model.tag(), "fissureAngleRad": a.fissure_angle.to_radians() });
    emit(&report(echo, resolved, truth)?, Some(&a.out.join("truth.json")))
}

pub fn calibrate(a: &CalibrateArgs, echo: Value) -> CliResult<()> {
    let config = stat_args_config(&a.stat)?;
    let req = CalibrationRequest { config: config.clone(), t: a.t, level: a.level, replicates: a.reps, noise: noise(&a.noise)?, seed: a.seed };
    req.validate()?;
    let mut cache = ThresholdCache::load(&a.threshold_cache)?;
    let cached = cache.get(&req.key()).is_some();
    let record = match cache.get(&req.key()) {
        Some(r) => r.clone(),
        None => {
            let r = calibrate_threshold(&req, Exec::default())?;
            cache.put(r.clone());
            cache.save()?;
            r
        }
    };
    let resolved = json!({ "stat": resolved_config(&config), "noise": req.noise.tag(), "fromCache": cached });
    let doc = report(echo, resolved, &record)?;
    if let Some(dir) = &a.out {
        create_dir(dir)?;
    }
    emit(&doc, a.out.as_ref().map(|d| d.join("calibration.json")).as_deref())
}

pub fn simulate_fp(a: &SimulateFpArgs, echo: Value) -> CliResult<()> {
    let model = noise(&a.noise)?;
    let angle_sets = match &a.p_list {
        Some(list) => {
            let ps: Vec<usize> = parse_list(list, "angle count")?;
            if ps.contains(&0) {
                return usage("angle counts must be >= 1");
            }
            ps.into_iter().map(equidistant_angles).collect()
        }
        None => vec![angle_set(a.stat.angles.as_deref(), a.stat.num_angles, 1)?],
    };
    let base = stat_config(&a.stat.stat, a.stat.d, a.stat.h, &a.stat.sigma, angle_sets[0].clone())?;
    let threshold = resolve_threshold(&a.threshold, base.kind, &base, a.t)?;
    let mut table = StudyTable::default();
    for angles in angle_sets {
        let config = StatConfig::new(base.kind, base.window, angles, base.sigma)?;
        table.rows.push(fp_rate_study(&config, &threshold, a.t, a.reps, &model, a.seed, Exec::default())?);
    }
    create_dir(&a.out)?;
    write_text(&a.out.join("fp.csv"), &table.to_csv()?)?;
    let resolved = json!({ "stat": resolved_config(&base), "noise": model.tag(), "threshold": threshold_summary(&threshold) });
    emit(&report(echo, resolved, &table)?, Some(&a.out.join("fp.json")))
}

pub fn simulate_detect(a: &SimulateDetectArgs, echo: Value) -> CliResult<()> {
    let model = noise(&a.noise)?;
    let widths: Vec<f64> = parse_list(&a.widths, "width")?;
    let amplitudes: Vec<f64> = parse_list(&a.amplitudes, "amplitude")?;
    let offsets: Vec<f64> = parse_list(&a.offsets, "offset")?;
    let fissure_angle = a.fissure_angle.to_radians();
    let config = stat_config(&a.stat, a.d, a.h, &a.sigma, vec![0.0])?;
    let threshold = resolve_threshold(&a.threshold, config.kind, &config, a.t)?;
    let mut scenarios = Vec::new();
    for &w in &widths {
        for &amp in &amplitudes {
            for &off in &offsets {
                scenarios.push(DetectionScenario {
                    t: a.t,
                    fissure: experiments::centered_fissure(a.length, w, fissure_angle, amp)?,
                    delta_deg: off,
                    config: config.clone(),
                    threshold: threshold.clone(),
                    noise: model.clone(),
                    replicates: a.reps,
                    seed: a.seed,
                });
            }
        }
    }
    let cells = detection_rate_study(&scenarios, Exec::default())?;
    let rules = min_angles_for_target(&cells, a.target);
    create_dir(&a.out)?;
    write_text(&a.out.join("detect.csv"), &detection_table(&cells).to_csv()?)?;
    let resolved = json!({
        "stat": resolved_config(&config),
        "noise": model.tag(),
        "fissureAngleRad": fissure_angle,
        "threshold": threshold_summary(&threshold),
    });
    let result = json!({ "cells": cells, "angleRules": rules });
    emit(&report(echo, resolved, result)?, Some(&a.out.join("detect.json")))
}

pub fn fast_scan(a: &FastScanArgs, echo: Value) -> CliResult<()> {
    let (field, sidecar) = read_input(&a.image)?;
    let t = field.t();
    let stage1 = angle_set(a.angles1.as_deref(), Some(a.num_angles1), 3)?;
    let stage2 = angle_set(a.angles2.as_deref(), Some(a.num_angles2), 9)?;
    let lib_cfg = stat_config("f1", a.d, a.h, &a.sigma, stage1.clone())?;
    let cons_cfg = stat_config("fnb1", a.d, a.h, &a.sigma, stage2.clone())?;
    let filters = ThresholdArgs {
        beta: None,
        threshold_cache: a.threshold_cache.clone(),
        level: None,
        cal_reps: None,
        cal_seed: None,
        cal_noise: None,
    };
    let cache = a.threshold_cache.as_deref();
    let lib = resolve_threshold_at(a.beta_liberal, cache, &filters, Some(a.liberal_level), StatKind::F1, &lib_cfg, t)?;
    let cons =
        resolve_threshold_at(a.beta_conservative, cache, &filters, Some(a.level), StatKind::Fnb1, &cons_cfg, t)?;
    let cfg = FastScanConfig {
        window: lib_cfg.window,
        angles_stage1: stage1,
        angles_stage2: stage2,
        darkness_quantile: a.darkness,
        beta_liberal: lib.beta,
        beta_conservative: cons.beta,
        sigma: lib_cfg.sigma,
    };
    let res = experiments::fast_scan(&field, &cfg, Exec::default())?;
    create_dir(&a.out)?;
    write_mask_pgm(&a.out.join("mask.pgm"), &res.mask)?;
    let resolved = json!({
        "fastScan": cfg,
        "T": t,
        "grayMapping": if sidecar.is_some() { "sidecar" } else { "value/maxval" },
        "liberal": threshold_summary(&lib),
        "conservative": threshold_summary(&cons),
    });
    let result = json!({ "nSignificant": res.mask.count(), "stats": res.stats });
    emit(&report(echo, resolved, result)?, Some(&a.out.join("summary.json")))
}

pub fn verify(a: &VerifyArgs, echo: Value) -> CliResult<()> {
    let cfg = SuiteConfig { replicates: a.reps, seed: a.seed, d: a.d, h: a.h, t: a.t };
    let rep = default_suite(&cfg, Exec::default())?;
    let failed = rep.failures().count();
    let result = json!({ "passed": rep.passed(), "failures": failed, "checks": rep.checks });
    let out: Option<PathBuf> = match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            Some(dir.join("verify.json"))
        }
        None => None,
    };
    emit(&report(echo, json!(cfg), result)?, out.as_deref())?;
    if failed > 0 {
        return Err(CliError::VerificationFailed(failed));
    }
    Ok(())
}

pub fn estimate_sigma(a: &EstimateSigmaArgs, echo: Value) -> CliResult<()> {
    let (field, sidecar) = read_input(&a.image)?;
    let est = SigmaSource::SilvermanGlobal.resolve(&field)?;
    let resolved = json!({ "T": field.t(), "grayMapping": if sidecar.is_some() { "sidecar" } else { "value/maxval" } });
    let out: Option<PathBuf> = match &a.out {
        Some(dir) => {
            create_dir(dir)?;
            Some(dir.join("sigma.json"))
        }
        None => None,
    };
    emit(&report(echo, resolved, est)?, out.as_deref())
}
