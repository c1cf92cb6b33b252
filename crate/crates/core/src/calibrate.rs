//! Monte Carlo calibration of family-wise thresholds and the JSON threshold
//! cache.
//!
//! A threshold is the empirical `level`-quantile of the per-field maximum of a
//! statistic over null fields. Replicate `r` always uses noise stream `r`, so
//! the sampled maxima (and hence the threshold) do not depend on scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, ScanError};
use crate::exec::Exec;
use crate::field::{generate_noise_replicate, GrayField, NoiseModel};
use crate::rng::derive_seed;
use crate::stats::{quantile_sorted, sort_floats, ScanPlan, SigmaEstimate, SigmaSource, StatConfig, StatKind};

/// Attempts per replicate before a degenerate sigma estimate becomes an error.
const MAX_ATTEMPTS: u64 = 16;

/// A calibrated threshold together with everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThresholdRecord {
    pub beta: f64,
    pub stat_kind: StatKind,
    pub d: f64,
    pub h: f64,
    #[serde(rename = "T")]
    pub t: usize,
    /// Radians.
    pub calibration_angles: Vec<f64>,
    pub level: f64,
    pub replicates: usize,
    pub seed: u64,
    pub noise_model: String,
    pub sigma_source: String,
    /// Replicates that had to be redrawn because sigma came out as zero.
    #[serde(default)]
    pub retries: usize,
}

impl ThresholdRecord {
    pub fn key(&self) -> CacheKey {
        CacheKey {
            stat_kind: self.stat_kind,
            d: self.d,
            h: self.h,
            t: self.t,
            calibration_angles: self.calibration_angles.clone(),
            level: self.level,
            noise_model: self.noise_model.clone(),
            sigma_source: self.sigma_source.clone(),
            replicates: self.replicates,
            seed: self.seed,
        }
    }

    /// Errors unless the record was calibrated for this window and image size.
    pub fn check_compatible(&self, config: &StatConfig, t: usize) -> Result<()> {
        if self.d != config.window.d || self.h != config.window.h || self.t != t {
            return Err(ScanError::Config(format!(
                "threshold calibrated for d = {}, h = {}, T = {} but used with d = {}, h = {}, T = {t}",
                self.d, self.h, self.t, config.window.d, config.window.h
            )));
        }
        Ok(())
    }
}

/// Inputs of one calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationRequest {
    /// Statistic, window, calibration angles and sigma source.
    pub config: StatConfig,
    #[serde(rename = "T")]
    pub t: usize,
    pub level: f64,
    pub replicates: usize,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl CalibrationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return domain("replicates must be >= 1");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return domain(format!("level must lie in (0, 1), got {}", self.level));
        }
        self.noise.validate()
    }

    pub fn key(&self) -> CacheKey {
        CacheKey {
            stat_kind: self.config.kind,
            d: self.config.window.d,
            h: self.config.window.h,
            t: self.t,
            calibration_angles: self.config.angles.clone(),
            level: self.level,
            noise_model: self.noise.tag(),
            sigma_source: self.config.sigma.tag(),
            replicates: self.replicates,
            seed: self.seed,
        }
    }
}

/// Per-field maxima of a null sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NullMaxima {
    /// Indexed by replicate.
    pub maxima: Vec<f64>,
    pub retries: usize,
}

/// Draws replicate `r` of the null model and resolves sigma, redrawing with a
/// derived seed while the estimate is degenerate. Returns the field, its sigma
/// and the number of redraws.
pub fn null_field(
    noise: &NoiseModel,
    sigma: &SigmaSource,
    t: usize,
    seed: u64,
    replicate: u64,
) -> Result<(GrayField, SigmaEstimate, usize)> {
    let mut s = seed;
    for attempt in 0..MAX_ATTEMPTS {
        let field = generate_noise_replicate(noise, t, s, replicate, Exec::Sequential)?;
        let est = sigma.resolve(&field)?;
        if !est.degenerate {
            return Ok((field, est, attempt as usize));
        }
        s = derive_seed(seed, attempt + 1);
    }
    Err(ScanError::Data(format!(
        "replicate {replicate}: sigma estimate degenerate after {MAX_ATTEMPTS} attempts"
    )))
}

/// Maximum of the statistic over all valid anchors for each null replicate.
pub fn sample_null_maxima(req: &CalibrationRequest, exec: Exec) -> Result<NullMaxima> {
    req.validate()?;
    let plan = ScanPlan::new(&req.config, req.t)?;
    let per: Vec<Result<(f64, usize)>> = exec.map(req.replicates, |r| {
        let (field, sigma, retries) = null_field(&req.noise, &req.config.sigma, req.t, req.seed, r as u64)?;
        Ok((plan.max_stat(&field, sigma.value)?, retries))
    });
    let mut maxima = Vec::with_capacity(req.replicates);
    let mut retries = 0;
    for p in per {
        let (m, k) = p?;
        maxima.push(m);
        retries += k;
    }
    Ok(NullMaxima { maxima, retries })
}

/// Empirical `level`-quantile of the maxima (linear interpolation).
pub fn threshold_from_maxima(maxima: &[f64], level: f64) -> Result<f64> {
    if maxima.is_empty() {
        return domain("no maxima to take a quantile of");
    }
    if !(level > 0.0 && level < 1.0) {
        return domain(format!("level must lie in (0, 1), got {level}"));
    }
    let mut v = maxima.to_vec();
    sort_floats(&mut v);
    Ok(quantile_sorted(&v, level))
}

pub fn calibrate_threshold(req: &CalibrationRequest, exec: Exec) -> Result<ThresholdRecord> {
    let sample = sample_null_maxima(req, exec)?;
    record_from_maxima(req, &sample)
}

/// Builds the record for `req` from already sampled maxima.
pub fn record_from_maxima(req: &CalibrationRequest, sample: &NullMaxima) -> Result<ThresholdRecord> {
    let beta = threshold_from_maxima(&sample.maxima, req.level)?;
    if !beta.is_finite() {
        return Err(ScanError::Data(format!("calibrated threshold is not finite: {beta}")));
    }
    let k = req.key();
    Ok(ThresholdRecord {
        beta,
        stat_kind: k.stat_kind,
        d: k.d,
        h: k.h,
        t: k.t,
        calibration_angles: k.calibration_angles,
        level: k.level,
        replicates: k.replicates,
        seed: k.seed,
        noise_model: k.noise_model,
        sigma_source: k.sigma_source,
        retries: sample.retries,
    })
}

/// Identity of a cache entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheKey {
    pub stat_kind: StatKind,
    pub d: f64,
    pub h: f64,
    pub t: usize,
    pub calibration_angles: Vec<f64>,
    pub level: f64,
    pub noise_model: String,
    pub sigma_source: String,
    pub replicates: usize,
    pub seed: u64,
}

/// Thresholds stored as a JSON array in a single file. The file is the
/// authority: whatever it holds is returned, edited or not.
#[derive(Debug, Clone, Default)]
pub struct ThresholdCache {
    path: Option<PathBuf>,
    records: Vec<ThresholdRecord>,
}

impl ThresholdCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the cache at `path`; a missing file is an empty cache.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let load_err = |reason: String| ScanError::Load { path: path.clone(), reason };
        let records = match fs::read_to_string(&path) {
            Ok(text) if text.trim().is_empty() => Vec::new(),
            Ok(text) => serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(load_err(e.to_string())),
        };
        Ok(Self { path: Some(path), records })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn records(&self) -> &[ThresholdRecord] {
        &self.records
    }

    pub fn get(&self, key: &CacheKey) -> Option<&ThresholdRecord> {
        self.records.iter().find(|r| &r.key() == key)
    }

    /// Inserts `record`, replacing any entry with the same key.
    pub fn put(&mut self, record: ThresholdRecord) {
        let key = record.key();
        match self.records.iter_mut().find(|r| r.key() == key) {
            Some(slot) => *slot = record,
            None => self.records.push(record),
        }
    }

    /// Writes the cache back to its file (no-op for in-memory caches).
    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(&self.records)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Cached record for `req`, calibrating and storing it on a miss.
    pub fn get_or_calibrate(&mut self, req: &CalibrationRequest, exec: Exec) -> Result<ThresholdRecord> {
        if let Some(r) = self.get(&req.key()) {
            return Ok(r.clone());
        }
        let rec = calibrate_threshold(req, exec)?;
        self.put(rec.clone());
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WindowSpec;

    fn request(replicates: usize, level: f64) -> CalibrationRequest {
        let window = WindowSpec::new(0.3, 0.1).unwrap();
        CalibrationRequest {
            config: StatConfig::new(StatKind::Fnb1, window, vec![0.0], SigmaSource::SilvermanGlobal).unwrap(),
            t: 30,
            level,
            replicates,
            noise: NoiseModel::standard_normal(),
            seed: 11,
        }
    }

    #[test]
    fn top_quantile_is_the_maximum() {
        let req = request(10, 0.999_999_999);
        let sample = sample_null_maxima(&req, Exec::default()).unwrap();
        let rec = record_from_maxima(&req, &sample).unwrap();
        let max = sample.maxima.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((rec.beta - max).abs() < 1e-6 * max.abs().max(1.0));
    }

    #[test]
    fn calibration_is_deterministic_and_schedule_free() {
        let req = request(12, 0.9);
        let a = calibrate_threshold(&req, Exec::Sequential).unwrap();
        let b = calibrate_threshold(&req, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.beta > 0.0);
    }

    #[test]
    fn higher_level_gives_higher_threshold() {
        let req = request(40, 0.95);
        let s = sample_null_maxima(&req, Exec::default()).unwrap();
        let b95 = threshold_from_maxima(&s.maxima, 0.95).unwrap();
        let b99 = threshold_from_maxima(&s.maxima, 0.99).unwrap();
        assert!(b99 >= b95);
    }

    #[test]
    fn bad_requests_are_rejected() {
        assert!(calibrate_threshold(&request(0, 0.95), Exec::Sequential).is_err());
        assert!(calibrate_threshold(&request(5, 1.0), Exec::Sequential).is_err());
        assert!(threshold_from_maxima(&[], 0.5).is_err());
    }

    #[test]
    fn degenerate_sigma_is_not_retried_for_known_sigma() {
        let (_, est, retries) =
            null_field(&NoiseModel::standard_normal(), &SigmaSource::Known(2.0), 10, 1, 0).unwrap();
        assert_eq!((est.value, retries), (2.0, 0));
    }

    #[test]
    fn incompatible_threshold_is_a_config_error() {
        let req = request(3, 0.5);
        let rec = calibrate_threshold(&req, Exec::Sequential).unwrap();
        assert!(rec.check_compatible(&req.config, 30).is_ok());
        assert!(matches!(rec.check_compatible(&req.config, 31), Err(ScanError::Config(_))));
    }
}
