//! Simulation studies: bias of the robust sigma estimate, false-positive
//! rates, detection rates under angle misspecification, power at the fissure
//! center, and the two-stage fast scan.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::calibrate::{null_field, ThresholdRecord};
use crate::error::{domain, Result, ScanError};
use crate::exec::Exec;
use crate::field::{fissure_pixels, generate_noise_replicate, inject_anomaly, GrayField, NoiseModel, SignalSpec};
use crate::geometry::{normalize_angle, AnchorRect, RectAnomaly, SegmentId, WindowSpec};
use crate::stats::{
    combine, quantile_sorted, silverman_sigma, sort_floats, RawMaxima, ScanPlan, SigmaEstimate, SigmaSource,
    SignificanceMask, StatConfig, StatKind,
};
use crate::verify::{area_intersection_estimate, AREA_RESOLUTION};

/// Wilson score interval for `hits` successes out of `n` at 95%.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, Normal};
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = Normal::standard().inverse_cdf(0.975);
    let nf = n as f64;
    let p = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// One row of a study: its parameters and an estimated rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    /// Parameter name to value, in sorted key order.
    pub params: Map<String, Value>,
    pub hits: usize,
    pub replicates: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl StudyRow {
    pub fn new(params: Map<String, Value>, hits: usize, replicates: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(hits, replicates);
        let rate = if replicates == 0 { 0.0 } else { hits as f64 / replicates as f64 };
        Self { params, hits, replicates, rate, ci_low, ci_high }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

fn csv_cell(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

impl StudyTable {
    /// CSV with one column per parameter followed by the rate columns. Rows
    /// must share their parameter names.
    pub fn to_csv(&self) -> Result<String> {
        let Some(first) = self.rows.first() else {
            return Ok("hits,replicates,rate,ci_low,ci_high\n".into());
        };
        let keys: Vec<&String> = first.params.keys().collect();
        let mut out = String::new();
        for k in &keys {
            out.push_str(k);
            out.push(',');
        }
        out.push_str("hits,replicates,rate,ci_low,ci_high\n");
        for row in &self.rows {
            if row.params.keys().collect::<Vec<_>>() != keys {
                return Err(ScanError::Data("study rows have different parameter sets".into()));
            }
            for v in row.params.values() {
                out.push_str(&csv_cell(v));
                out.push(',');
            }
            out.push_str(&format!("{},{},{},{},{}\n", row.hits, row.replicates, row.rate, row.ci_low, row.ci_high));
        }
        Ok(out)
    }
}

fn degrees_list(angles: &[f64]) -> String {
    angles.iter().map(|a| format!("{}", a.to_degrees())).collect::<Vec<_>>().join(";")
}

/// Summary of the sigma estimate over null replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaStudy {
    pub noise: String,
    #[serde(rename = "T")]
    pub t: usize,
    pub replicates: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Robust sigma estimate on `replicates` null fields.
pub fn sigma_bias_study(t: usize, replicates: usize, noise: &NoiseModel, seed: u64, exec: Exec) -> Result<SigmaStudy> {
    if replicates < 2 {
        return domain("need at least 2 replicates");
    }
    let est: Vec<Result<f64>> = exec.map(replicates, |r| {
        let f = generate_noise_replicate(noise, t, seed, r as u64, Exec::Sequential)?;
        Ok(silverman_sigma(&f)?.value)
    });
    let v = est.into_iter().collect::<Result<Vec<f64>>>()?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(SigmaStudy {
        noise: noise.tag(),
        t,
        replicates,
        mean,
        sd,
        min: v.iter().cloned().fold(f64::INFINITY, f64::min),
        max: v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn check_threshold(threshold: &ThresholdRecord, config: &StatConfig, t: usize) -> Result<()> {
    threshold.check_compatible(config, t)?;
    if threshold.stat_kind != config.kind {
        return Err(ScanError::Config(format!(
            "threshold is for {} but the statistic is {}",
            threshold.stat_kind, config.kind
        )));
    }
    Ok(())
}

/// Fraction of null fields whose heat-map maximum reaches the threshold.
pub fn fp_rate_study(
    config: &StatConfig,
    threshold: &ThresholdRecord,
    t: usize,
    replicates: usize,
    noise: &NoiseModel,
    seed: u64,
    exec: Exec,
) -> Result<StudyRow> {
    check_threshold(threshold, config, t)?;
    if replicates == 0 {
        return domain("replicates must be >= 1");
    }
    let plan = ScanPlan::new(config, t)?;
    let beta = threshold.beta;
    let hit: Vec<Result<bool>> = exec.map(replicates, |r| {
        let (field, sigma, _) = null_field(noise, &config.sigma, t, seed, r as u64)?;
        Ok(plan.max_stat(&field, sigma.value)? >= beta)
    });
    let hits = hit.into_iter().collect::<Result<Vec<bool>>>()?.into_iter().filter(|&h| h).count();
    let mut p = Map::new();
    p.insert("stat".into(), config.kind.name().into());
    p.insert("d".into(), config.window.d.into());
    p.insert("h".into(), config.window.h.into());
    p.insert("T".into(), t.into());
    p.insert("P".into(), config.angles.len().into());
    p.insert("evalAnglesDeg".into(), degrees_list(&config.angles).into());
    p.insert("calibrationAnglesDeg".into(), degrees_list(&threshold.calibration_angles).into());
    p.insert("level".into(), threshold.level.into());
    p.insert("beta".into(), beta.into());
    p.insert("noise".into(), noise.tag().into());
    p.insert("sigma".into(), config.sigma.tag().into());
    p.insert("seed".into(), seed.into());
    Ok(StudyRow::new(p, hits, replicates))
}

/// A fissure of the given shape and signal strength centered in the image.
pub fn centered_fissure(length: f64, width: f64, angle: f64, amplitude: f64) -> Result<RectAnomaly> {
    RectAnomaly::new([0.5, 0.5], length, width, angle, amplitude)
}

/// One cell of the misspecification study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DetectionScenario {
    #[serde(rename = "T")]
    pub t: usize,
    pub fissure: RectAnomaly,
    /// Offset of the evaluated angle from the fissure angle, degrees.
    pub delta_deg: f64,
    /// Statistic, window and sigma source; the angle list is replaced by the
    /// single angle `fissure.angle + delta`.
    pub config: StatConfig,
    pub threshold: ThresholdRecord,
    pub noise: NoiseModel,
    pub replicates: usize,
    pub seed: u64,
}

impl DetectionScenario {
    pub fn evaluated_angle(&self) -> f64 {
        normalize_angle(self.fissure.angle + self.delta_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DetectionCell {
    pub width: f64,
    pub length: f64,
    pub amplitude: f64,
    pub fissure_angle_deg: f64,
    pub delta_deg: f64,
    pub evaluated_angle_deg: f64,
    pub clipped: bool,
    pub eligible_anchors: usize,
    pub hits: usize,
    pub replicates: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Per-replicate detection indicator.
    #[serde(skip)]
    pub detected: Vec<bool>,
}

/// Anchors whose window pixel set meets `pixels`, row-major.
pub fn eligible_anchors(plan: &ScanPlan, pixels: &[[usize; 2]]) -> Vec<[usize; 2]> {
    let t = plan.t();
    let mut marked = vec![false; t * t];
    for k in pixels {
        marked[(k[1] - 1) * t + (k[0] - 1)] = true;
    }
    let offs = plan.window_offsets();
    plan.anchors()
        .iter()
        .filter(|j| {
            offs.iter().any(|o| {
                let k = [(j[0] as i64 + o[0] as i64) as usize, (j[1] as i64 + o[1] as i64) as usize];
                marked[(k[1] - 1) * t + (k[0] - 1)]
            })
        })
        .collect()
}

fn resolved_sigma(sigma: &SigmaSource, field: &GrayField) -> Result<SigmaEstimate> {
    let s = sigma.resolve(field)?;
    if s.degenerate {
        return Err(ScanError::Data("sigma estimate is zero".into()));
    }
    Ok(s)
}

/// Detection rate for one scenario. Replicate `r` uses noise stream `r`, so
/// cells sharing a seed use common random numbers.
pub fn detection_rate(s: &DetectionScenario, exec: Exec) -> Result<DetectionCell> {
    if !(0.0..=90.0).contains(&s.delta_deg) {
        return domain(format!("angle offset must lie in [0, 90] degrees, got {}", s.delta_deg));
    }
    if s.replicates == 0 {
        return domain("replicates must be >= 1");
    }
    let config = StatConfig { angles: vec![s.evaluated_angle()], ..s.config.clone() };
    check_threshold(&s.threshold, &config, s.t)?;
    let plan = ScanPlan::new(&config, s.t)?;
    let eligible = eligible_anchors(&plan, &fissure_pixels(&s.fissure, s.t));
    let signal = SignalSpec { baseline: 0.0, anomaly: s.fissure };
    let beta = s.threshold.beta;
    let det: Vec<Result<bool>> = exec.map(s.replicates, |r| {
        if eligible.is_empty() {
            return Ok(false);
        }
        let noise = generate_noise_replicate(&s.noise, s.t, s.seed, r as u64, Exec::Sequential)?;
        let field = inject_anomaly(&noise, &signal)?;
        let sigma = resolved_sigma(&config.sigma, &field)?;
        Ok(plan.max_stat_over(&field, sigma.value, &eligible)? >= beta)
    });
    let detected = det.into_iter().collect::<Result<Vec<bool>>>()?;
    let hits = detected.iter().filter(|&&d| d).count();
    let (ci_low, ci_high) = wilson_interval(hits, s.replicates);
    Ok(DetectionCell {
        width: s.fissure.width,
        length: s.fissure.length,
        amplitude: s.fissure.amplitude,
        fissure_angle_deg: s.fissure.angle.to_degrees(),
        delta_deg: s.delta_deg,
        evaluated_angle_deg: s.evaluated_angle().to_degrees(),
        clipped: s.fissure.is_clipped(),
        eligible_anchors: eligible.len(),
        hits,
        replicates: s.replicates,
        rate: hits as f64 / s.replicates as f64,
        ci_low,
        ci_high,
        detected,
    })
}

pub fn detection_rate_study(scenarios: &[DetectionScenario], exec: Exec) -> Result<Vec<DetectionCell>> {
    scenarios.iter().map(|s| detection_rate(s, exec)).collect()
}

pub fn detection_table(cells: &[DetectionCell]) -> StudyTable {
    let rows = cells
        .iter()
        .map(|c| {
            let mut p = Map::new();
            p.insert("w".into(), c.width.into());
            p.insert("l".into(), c.length.into());
            p.insert("delta".into(), c.amplitude.into());
            p.insert("fissureAngleDeg".into(), c.fissure_angle_deg.into());
            p.insert("DeltaDeg".into(), c.delta_deg.into());
            p.insert("evaluatedAngleDeg".into(), c.evaluated_angle_deg.into());
            p.insert("clipped".into(), c.clipped.into());
            p.insert("eligibleAnchors".into(), c.eligible_anchors.into());
            StudyRow::new(p, c.hits, c.replicates)
        })
        .collect();
    StudyTable { rows }
}

/// Largest studied angle offset meeting the target rate for one `(w, delta)`
/// pair, and the number of equidistant angles that keeps every fissure within
/// that offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AngleRule {
    pub width: f64,
    pub amplitude: f64,
    pub delta_max_deg: Option<f64>,
    /// `ceil(90 / delta_max)`; absent when no offset qualifies or only the
    /// exact angle does (`delta_max = 0` needs unboundedly many angles).
    pub min_angles: Option<usize>,
}

pub fn min_angles_for_target(cells: &[DetectionCell], target: f64) -> Vec<AngleRule> {
    let mut groups: Vec<(f64, f64)> = Vec::new();
    for c in cells {
        if !groups.contains(&(c.width, c.amplitude)) {
            groups.push((c.width, c.amplitude));
        }
    }
    groups
        .into_iter()
        .map(|(w, a)| {
            let delta_max = cells
                .iter()
                .filter(|c| c.width == w && c.amplitude == a && c.rate >= target)
                .map(|c| c.delta_deg)
                .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))));
            let min_angles = delta_max.filter(|&d| d > 0.0).map(angles_for_offset);
            AngleRule { width: w, amplitude: a, delta_max_deg: delta_max, min_angles }
        })
        .collect()
}

/// `ceil(90 / delta_deg)`, robust to the rounding of exact divisors.
pub fn angles_for_offset(delta_deg: f64) -> usize {
    (90.0 / delta_deg - 1e-9).ceil().max(1.0) as usize
}

/// Medians of the statistics at the fissure center for one signal strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerPoint {
    pub amplitude: f64,
    pub median_f1: f64,
    pub median_nb: f64,
    pub median_fnb1: f64,
    pub replicates: usize,
}

/// Setup for power at the fissure center: a fissure centered on the anchor
/// `center` and scanned with the single angle `fissure_angle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PowerProbe {
    pub window: WindowSpec,
    #[serde(rename = "T")]
    pub t: usize,
    pub length: f64,
    pub width: f64,
    pub angle: f64,
    pub center: [usize; 2],
    pub sigma: SigmaSource,
}

impl PowerProbe {
    pub fn fissure(&self, amplitude: f64) -> Result<RectAnomaly> {
        let tf = self.t as f64;
        RectAnomaly::new([self.center[0] as f64 / tf, self.center[1] as f64 / tf], self.length, self.width, self.angle, amplitude)
    }

    /// Growth of the F1 contrast per unit amplitude predicted from areas:
    /// `T * lambda(inner ∩ F) / lambda(inner)`.
    pub fn predicted_slope(&self) -> Result<f64> {
        let tf = self.t as f64;
        let pos = [self.center[0] as f64 / tf, self.center[1] as f64 / tf];
        let inner = crate::geometry::PlacedSegment::new(self.window, SegmentId::Inner, self.angle, pos)?;
        let f = self.fissure(1.0)?;
        let inter = area_intersection_estimate(&inner, &f, AREA_RESOLUTION)?;
        Ok(tf * inter.area / crate::geometry::exact_area(&self.window, SegmentId::Inner))
    }

    /// Medians of F1, nB and FnB1 at the center anchor over `replicates` noise
    /// fields; each amplitude reuses the same noise.
    pub fn run(&self, amplitudes: &[f64], replicates: usize, noise: &NoiseModel, seed: u64, exec: Exec) -> Result<Vec<PowerPoint>> {
        if replicates == 0 {
            return domain("replicates must be >= 1");
        }
        let cfg = StatConfig::new(StatKind::Fnb1, self.window, vec![self.angle], self.sigma)?;
        let plan = ScanPlan::new(&cfg, self.t)?;
        let signals = amplitudes
            .iter()
            .map(|&a| Ok(SignalSpec { baseline: 0.0, anomaly: self.fissure(a)? }))
            .collect::<Result<Vec<_>>>()?;
        let per: Vec<Result<Vec<[f64; 3]>>> = exec.map(replicates, |r| {
            let noise = generate_noise_replicate(noise, self.t, seed, r as u64, Exec::Sequential)?;
            signals
                .iter()
                .map(|sig| {
                    let field = inject_anomaly(&noise, sig)?;
                    let sigma = resolved_sigma(&self.sigma, &field)?.value;
                    let c = plan.contrasts(&field, self.center, 0)?;
                    let f1 = c.s12.min(c.s13) / sigma;
                    let nb = c.s45.abs() / sigma;
                    Ok([f1, nb, (f1 - nb).max(0.0)])
                })
                .collect()
        });
        let per = per.into_iter().collect::<Result<Vec<_>>>()?;
        let median = |i: usize, j: usize| {
            let mut v: Vec<f64> = per.iter().map(|row| row[i][j]).collect();
            sort_floats(&mut v);
            quantile_sorted(&v, 0.5)
        };
        Ok(amplitudes
            .iter()
            .enumerate()
            .map(|(i, &a)| PowerPoint {
                amplitude: a,
                median_f1: median(i, 0),
                median_nb: median(i, 1),
                median_fnb1: median(i, 2),
                replicates,
            })
            .collect())
    }
}

/// Parameters of the two-stage scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FastScanConfig {
    pub window: WindowSpec,
    pub angles_stage1: Vec<f64>,
    pub angles_stage2: Vec<f64>,
    /// Fraction of the darkest pixels that become candidates.
    pub darkness_quantile: f64,
    pub beta_liberal: f64,
    pub beta_conservative: f64,
    pub sigma: SigmaSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FastScanStats {
    pub sigma: f64,
    pub valid_anchors: usize,
    pub candidates: usize,
    pub stage1_survivors: usize,
    pub stage2_survivors: usize,
    pub significant: usize,
    /// Segment means computed (three per angle for F1, two per angle for nB).
    pub evaluations: u64,
    /// Segment means a full FnB1 scan with the stage-2 angles would compute.
    pub full_scan_evaluations: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FastScanResult {
    pub mask: SignificanceMask,
    pub stats: FastScanStats,
}

/// Darkness rule: with `n` pixels and `m = round(q n)`, a pixel is dark when
/// its value is at most the `m`-th smallest value. `q = 0` marks nothing.
pub fn darkness_cutoff(field: &GrayField, q: f64) -> Result<Option<f64>> {
    if !(0.0..=1.0).contains(&q) {
        return domain(format!("darkness quantile must lie in [0, 1], got {q}"));
    }
    let mut v = field.values().to_vec();
    let m = (q * v.len() as f64).round() as usize;
    if m == 0 {
        return Ok(None);
    }
    sort_floats(&mut v);
    Ok(Some(v[m - 1]))
}

fn intersect(a: AnchorRect, b: AnchorRect) -> AnchorRect {
    AnchorRect { lo: [a.lo[0].max(b.lo[0]), a.lo[1].max(b.lo[1])], hi: [a.hi[0].min(b.hi[0]), a.hi[1].min(b.hi[1])] }
}

/// Dark pixels, then F1 with the coarse angles against the liberal threshold,
/// then F1 with the fine angles against the conservative threshold, then FnB1
/// on the survivors. FnB1 never exceeds F1, so the stage-2 cut only removes
/// anchors that cannot be significant when `beta_conservative > 0`.
pub fn fast_scan(field: &GrayField, cfg: &FastScanConfig, exec: Exec) -> Result<FastScanResult> {
    if cfg.beta_liberal > cfg.beta_conservative {
        return Err(ScanError::Config(format!(
            "liberal threshold {} exceeds conservative threshold {}",
            cfg.beta_liberal, cfg.beta_conservative
        )));
    }
    let t = field.t();
    let plan1 = ScanPlan::new(&StatConfig::new(StatKind::F1, cfg.window, cfg.angles_stage1.clone(), cfg.sigma)?, t)?;
    let plan2 = ScanPlan::new(&StatConfig::new(StatKind::Fnb1, cfg.window, cfg.angles_stage2.clone(), cfg.sigma)?, t)?;
    let sigma = resolved_sigma(&cfg.sigma, field)?.value;
    let inv = 1.0 / sigma;
    let anchors = intersect(plan1.anchors(), plan2.anchors());
    let (p1, p2) = (cfg.angles_stage1.len() as u64, cfg.angles_stage2.len() as u64);
    let mut stats = FastScanStats {
        sigma,
        valid_anchors: anchors.len(),
        candidates: 0,
        stage1_survivors: 0,
        stage2_survivors: 0,
        significant: 0,
        evaluations: 0,
        full_scan_evaluations: plan2.anchors().len() as u64 * p2 * 5,
        warnings: Vec::new(),
    };
    let mut mask = SignificanceMask::empty(t);
    let Some(cut) = darkness_cutoff(field, cfg.darkness_quantile)? else {
        stats.warnings.push("no candidate anchors: darkness quantile selects no pixels".into());
        return Ok(FastScanResult { mask, stats });
    };
    let candidates: Vec<[usize; 2]> = anchors.iter().filter(|&k| field.get(k) <= cut).collect();
    stats.candidates = candidates.len();
    if candidates.is_empty() {
        stats.warnings.push("no candidate anchors among the valid anchors".into());
        return Ok(FastScanResult { mask, stats });
    }
    let data = field.values();
    let f1_at = |plan: &ScanPlan, k: [usize; 2]| {
        let raw = plan.raw_at(data, plan.linear_base(k), true, false, false);
        (combine(StatKind::F1, raw, inv), raw.f1)
    };
    let keep1: Vec<bool> = exec.map(candidates.len(), |i| f1_at(&plan1, candidates[i]).0 >= cfg.beta_liberal);
    let stage1: Vec<[usize; 2]> = candidates.iter().zip(&keep1).filter(|(_, &k)| k).map(|(c, _)| *c).collect();
    stats.stage1_survivors = stage1.len();
    stats.evaluations += candidates.len() as u64 * p1 * 3;

    let f1_2: Vec<(f64, f64)> = exec.map(stage1.len(), |i| f1_at(&plan2, stage1[i]));
    let stage2: Vec<([usize; 2], f64)> = stage1
        .iter()
        .zip(&f1_2)
        .filter(|(_, (v, _))| *v >= cfg.beta_conservative)
        .map(|(k, (_, raw))| (*k, *raw))
        .collect();
    stats.stage2_survivors = stage2.len();
    stats.evaluations += stage1.len() as u64 * p2 * 3;

    let fnb: Vec<f64> = exec.map(stage2.len(), |i| {
        let (k, f1) = stage2[i];
        let nb = plan2.raw_at(data, plan2.linear_base(k), false, true, false).nb;
        combine(StatKind::Fnb1, RawMaxima { f1, f2: 0.0, nb }, inv)
    });
    stats.evaluations += stage2.len() as u64 * p2 * 2;
    for ((k, _), v) in stage2.iter().zip(&fnb) {
        if *v >= cfg.beta_conservative {
            mask.set(*k);
        }
    }
    stats.significant = mask.count();
    Ok(FastScanResult { mask, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{heatmap, significance_mask};

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(50, 1000);
        assert!(lo < 0.05 && hi > 0.05);
        // textbook value for 50/1000
        assert!((lo - 0.03813).abs() < 1e-4 && (hi - 0.06531).abs() < 1e-4, "{lo} {hi}");
        assert_eq!(wilson_interval(0, 10).0, 0.0);
    }

    #[test]
    fn angle_rule_examples() {
        assert_eq!(angles_for_offset(25.0), 4);
        assert_eq!(angles_for_offset(5.0), 18);
        assert_eq!(angles_for_offset(90.0), 1);
        assert_eq!(angles_for_offset(20.0), 5);
        assert_eq!(angles_for_offset(15.0), 6);
    }

    fn cell(delta: f64, rate: f64) -> DetectionCell {
        DetectionCell {
            width: 0.02,
            length: 1.0,
            amplitude: 1.5,
            fissure_angle_deg: 0.0,
            delta_deg: delta,
            evaluated_angle_deg: delta,
            clipped: false,
            eligible_anchors: 1,
            hits: (rate * 100.0) as usize,
            replicates: 100,
            rate,
            ci_low: 0.0,
            ci_high: 1.0,
            detected: vec![],
        }
    }

    #[test]
    fn min_angles_from_cells() {
        let cells: Vec<_> = [(0.0, 1.0), (5.0, 0.95), (10.0, 0.9), (15.0, 0.8), (20.0, 0.6), (25.0, 0.3)]
            .into_iter()
            .map(|(d, r)| cell(d, r))
            .collect();
        let rule = &min_angles_for_target(&cells, 0.75)[0];
        assert_eq!(rule.delta_max_deg, Some(15.0));
        assert_eq!(rule.min_angles, Some(6));
        let none = min_angles_for_target(&[cell(0.0, 0.1)], 0.75);
        assert_eq!(none[0].min_angles, None);
    }

    #[test]
    fn darkness_rule() {
        let f = GrayField::from_fn(4, |k| (k[0] + 4 * k[1]) as f64);
        assert_eq!(darkness_cutoff(&f, 0.0).unwrap(), None);
        assert_eq!(darkness_cutoff(&f, 1.0).unwrap(), Some(f.min_max().1));
        assert_eq!(darkness_cutoff(&f, 0.25).unwrap(), Some(8.0));
        assert!(darkness_cutoff(&f, 1.5).is_err());
    }

    fn strip_field(t: usize) -> GrayField {
        let mut f = generate_noise_replicate(&NoiseModel::standard_normal(), t, 3, 0, Exec::Sequential).unwrap();
        for k1 in 1..=t {
            for k2 in [t / 2] {
                let v = f.get([k1, k2]) - 40.0;
                f.set([k1, k2], v);
            }
        }
        f
    }

    #[test]
    fn fast_scan_with_everything_enabled_equals_full_scan() {
        let t = 40;
        let field = strip_field(t);
        let window = WindowSpec::new(0.3, 0.1).unwrap();
        let angles = crate::stats::equidistant_angles(4);
        let cfg = FastScanConfig {
            window,
            angles_stage1: angles.clone(),
            angles_stage2: angles.clone(),
            darkness_quantile: 1.0,
            beta_liberal: f64::NEG_INFINITY,
            beta_conservative: 30.0,
            sigma: SigmaSource::Known(1.0),
        };
        let fast = fast_scan(&field, &cfg, Exec::default()).unwrap();
        let sc = StatConfig::new(StatKind::Fnb1, window, angles, SigmaSource::Known(1.0)).unwrap();
        let full = significance_mask(&heatmap(&field, &sc).unwrap().0, 30.0);
        assert!(full.count() > 0);
        assert_eq!(fast.mask, full);
        assert!(fast.stats.evaluations >= fast.stats.full_scan_evaluations * 3 / 5);
    }

    #[test]
    fn fast_scan_empty_candidates() {
        let field = strip_field(40);
        let cfg = FastScanConfig {
            window: WindowSpec::new(0.3, 0.1).unwrap(),
            angles_stage1: vec![0.0],
            angles_stage2: vec![0.0],
            darkness_quantile: 0.0,
            beta_liberal: 0.0,
            beta_conservative: 1.0,
            sigma: SigmaSource::SilvermanGlobal,
        };
        let r = fast_scan(&field, &cfg, Exec::Sequential).unwrap();
        assert_eq!(r.mask.count(), 0);
        assert_eq!(r.stats.evaluations, 0);
        assert_eq!(r.stats.warnings.len(), 1);
    }

    #[test]
    fn fast_scan_rejects_inverted_thresholds() {
        let field = strip_field(40);
        let cfg = FastScanConfig {
            window: WindowSpec::new(0.3, 0.1).unwrap(),
            angles_stage1: vec![0.0],
            angles_stage2: vec![0.0],
            darkness_quantile: 0.5,
            beta_liberal: 2.0,
            beta_conservative: 1.0,
            sigma: SigmaSource::SilvermanGlobal,
        };
        assert!(matches!(fast_scan(&field, &cfg, Exec::Sequential), Err(ScanError::Config(_))));
    }

    #[test]
    fn study_csv_has_parameter_header() {
        let mut p = Map::new();
        p.insert("b".into(), 2.0.into());
        p.insert("a".into(), "x,y".into());
        let t = StudyTable { rows: vec![StudyRow::new(p, 1, 4)] };
        let csv = t.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "a,b,hits,replicates,rate,ci_low,ci_high");
        assert!(lines.next().unwrap().starts_with("\"x,y\",2.0,1,4,0.25,"));
    }
}
