//! Local window means, segment contrasts and the five scan statistics.
//!
//! For an anchor `s` and angle `alpha` the scaled mean of segment `A` is
//! `T / |A| * sum_{o in A} Y[s + o]`. The contrasts are
//!
//! * `s12 = mean(Upper) - mean(Inner)`
//! * `s13 = mean(Lower) - mean(Inner)`
//! * `s45 = mean(HalfPos) - mean(HalfNeg)`
//!
//! and the statistics maximize `min(s12, s13)` (F1), `min(|s12|, |s13|)` (F2)
//! or `|s45|` (NB) over the angle list, divided by sigma. FnB1 and FnB2
//! subtract NB from F1 and F2 and clamp at zero.
//!
//! Every local sum accumulates in row-major offset order starting from `0.0`,
//! so a naive per-pixel loop in the same order reproduces the output bit for
//! bit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, ScanError};
use crate::exec::Exec;
use crate::field::{GrayField, NoiseModel};
use crate::geometry::{build_offset_mask, valid_anchor_pixels, AnchorRect, OffsetMask, SegmentId, WindowSpec};

/// `Phi^{-1}(0.75)`.
pub const NORMAL_Q75: f64 = 0.674489750196082;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    F1,
    F2,
    Nb,
    Fnb1,
    Fnb2,
}

impl StatKind {
    pub const ALL: [StatKind; 5] = [StatKind::F1, StatKind::F2, StatKind::Nb, StatKind::Fnb1, StatKind::Fnb2];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::F1 => "f1",
            StatKind::F2 => "f2",
            StatKind::Nb => "nb",
            StatKind::Fnb1 => "fnb1",
            StatKind::Fnb2 => "fnb2",
        }
    }

    fn needs_strip(self) -> bool {
        !matches!(self, StatKind::Nb)
    }

    fn needs_halves(self) -> bool {
        matches!(self, StatKind::Nb | StatKind::Fnb1 | StatKind::Fnb2)
    }
}

impl fmt::Display for StatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StatKind {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self> {
        StatKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ScanError::Config(format!("unknown statistic '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    Known(f64),
    SilvermanGlobal,
}

impl SigmaSource {
    pub fn tag(&self) -> String {
        self.to_string()
    }

    /// Resolves sigma for one field.
    pub fn resolve(&self, field: &GrayField) -> Result<SigmaEstimate> {
        match *self {
            SigmaSource::Known(s) if s > 0.0 && s.is_finite() => {
                Ok(SigmaEstimate { value: s, degenerate: false, method: "known".into(), sample_size: 0 })
            }
            SigmaSource::Known(s) => domain(format!("known sigma must be > 0, got {s}")),
            SigmaSource::SilvermanGlobal => silverman_sigma(field),
        }
    }
}

impl fmt::Display for SigmaSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaSource::Known(s) => write!(f, "known:{s}"),
            SigmaSource::SilvermanGlobal => f.write_str("silverman"),
        }
    }
}

impl FromStr for SigmaSource {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "silverman" {
            return Ok(SigmaSource::SilvermanGlobal);
        }
        match s.strip_prefix("known:").map(str::parse::<f64>) {
            Some(Ok(v)) if v > 0.0 && v.is_finite() => Ok(SigmaSource::Known(v)),
            _ => Err(ScanError::Config(format!("sigma must be 'silverman' or 'known:<v>' with v > 0, got '{s}'"))),
        }
    }
}

/// `P` equidistant angles `k * pi / P`, `k = 0..P`.
pub fn equidistant_angles(p: usize) -> Vec<f64> {
    (0..p).map(|k| k as f64 * PI / p as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatConfig {
    pub kind: StatKind,
    pub window: WindowSpec,
    /// Strictly increasing angles in `[0, pi)`, radians.
    pub angles: Vec<f64>,
    pub sigma: SigmaSource,
}

impl StatConfig {
    pub fn new(kind: StatKind, window: WindowSpec, angles: Vec<f64>, sigma: SigmaSource) -> Result<Self> {
        if angles.is_empty() {
            return domain("at least one angle is required");
        }
        if !angles.iter().all(|a| (0.0..PI).contains(a)) {
            return domain(format!("angles must lie in [0, pi): {angles:?}"));
        }
        if !angles.windows(2).all(|w| w[0] < w[1]) {
            return domain(format!("angles must be strictly increasing: {angles:?}"));
        }
        Ok(Self { kind, window, angles, sigma })
    }

    pub fn with_kind(&self, kind: StatKind) -> Self {
        Self { kind, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub value: f64,
    pub degenerate: bool,
    pub method: String,
    pub sample_size: usize,
}

/// Empirical quantile with linear interpolation at zero-based position
/// `p * (n - 1)` of the sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

pub fn sort_floats(v: &mut [f64]) {
    v.sort_unstable_by(f64::total_cmp);
}

/// Robust global sigma: interquartile range over `2 * Phi^{-1}(0.75)`.
pub fn silverman_sigma(field: &GrayField) -> Result<SigmaEstimate> {
    let n = field.values().len();
    if n < 4 {
        return domain(format!("need at least 4 pixels, got {n}"));
    }
    let mut v = field.values().to_vec();
    sort_floats(&mut v);
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let value = iqr / (2.0 * NORMAL_Q75);
    Ok(SigmaEstimate { value, degenerate: !(value > 0.0), method: "silverman_global".into(), sample_size: n })
}

/// Large-sample limit of the Silverman estimator for an i.i.d. distribution.
pub fn silverman_limit(model: &NoiseModel) -> Result<f64> {
    use statrs::distribution::{ContinuousCDF, Exp, Gamma, StudentsT};
    model.validate()?;
    let err = |e: statrs::distribution::ExpError| ScanError::Domain(e.to_string());
    let (q25, q75) = match *model {
        NoiseModel::IidGaussian { sd } => return Ok(sd),
        NoiseModel::IidStudentT { nu } => {
            let d = StudentsT::new(0.0, 1.0, nu).map_err(|e| ScanError::Domain(e.to_string()))?;
            (d.inverse_cdf(0.25), d.inverse_cdf(0.75))
        }
        NoiseModel::IidExponential { rate } => {
            let d = Exp::new(rate).map_err(err)?;
            (d.inverse_cdf(0.25), d.inverse_cdf(0.75))
        }
        NoiseModel::IidGamma { shape, rate } => {
            let d = Gamma::new(shape, rate).map_err(|e| ScanError::Domain(e.to_string()))?;
            (d.inverse_cdf(0.25), d.inverse_cdf(0.75))
        }
        NoiseModel::MovingAverage { .. } => {
            return domain("the Silverman limit is tabulated for i.i.d. distributions only");
        }
    };
    Ok((q75 - q25) / (2.0 * NORMAL_Q75))
}

fn check_anchor(field: &GrayField, mask: &OffsetMask, anchor: [usize; 2]) -> Result<()> {
    let t = field.t() as i64;
    let (lo, hi) = mask.extent();
    for i in 0..2 {
        let a = anchor[i] as i64;
        if a + (lo[i] as i64) < 1 || a + (hi[i] as i64) > t {
            return Err(ScanError::OutOfBounds(anchor[0], anchor[1]));
        }
    }
    Ok(())
}

/// Sum of the field over the mask placed at `anchor`.
pub fn local_sum(field: &GrayField, mask: &OffsetMask, anchor: [usize; 2]) -> Result<f64> {
    check_anchor(field, mask, anchor)?;
    let mut acc = 0.0;
    for o in &mask.offsets {
        acc += field.get([(anchor[0] as i64 + o[0] as i64) as usize, (anchor[1] as i64 + o[1] as i64) as usize]);
    }
    Ok(acc)
}

/// `T / |mask| * local_sum`.
pub fn local_mean_scaled(field: &GrayField, mask: &OffsetMask, anchor: [usize; 2], t: usize) -> Result<f64> {
    if mask.count() == 0 {
        return Err(ScanError::DegenerateWindow("empty mask".into()));
    }
    Ok(mean_scale(t, mask.count()) * local_sum(field, mask, anchor)?)
}

#[inline]
pub(crate) fn mean_scale(t: usize, count: usize) -> f64 {
    t as f64 / count as f64
}

/// The three segment contrasts at one anchor and angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrasts {
    pub s12: f64,
    pub s13: f64,
    pub s45: f64,
}

/// A mask flattened to row runs `(start delta, length)` relative to the anchor's
/// linear index; runs follow row-major offset order.
#[derive(Debug, Clone)]
struct FlatMask {
    runs: Vec<(isize, usize)>,
    scale: f64,
}

impl FlatMask {
    fn new(mask: &OffsetMask, t: usize) -> Self {
        let mut runs: Vec<(isize, usize)> = Vec::new();
        let mut prev: Option<[i32; 2]> = None;
        for o in &mask.offsets {
            let delta = o[1] as isize * t as isize + o[0] as isize;
            match (prev, runs.last_mut()) {
                (Some(p), Some(run)) if p[1] == o[1] && p[0] + 1 == o[0] => run.1 += 1,
                _ => runs.push((delta, 1)),
            }
            prev = Some(*o);
        }
        Self { runs, scale: mean_scale(t, mask.count()) }
    }

    #[inline]
    fn mean(&self, data: &[f64], base: usize) -> f64 {
        let mut acc = 0.0;
        for &(delta, len) in &self.runs {
            let start = (base as isize + delta) as usize;
            for &v in &data[start..start + len] {
                acc += v;
            }
        }
        self.scale * acc
    }
}

#[derive(Debug, Clone)]
struct AngleKernel {
    segs: [FlatMask; 5],
}

impl AngleKernel {
    #[inline]
    fn mean(&self, seg: SegmentId, data: &[f64], base: usize) -> f64 {
        self.segs[seg as usize - 1].mean(data, base)
    }
}

/// Raw (not yet divided by sigma) maxima over the angle list at one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMaxima {
    pub f1: f64,
    pub f2: f64,
    pub nb: f64,
}

/// Offset masks and anchor rectangle for one configuration at one resolution.
/// Build once, evaluate at every anchor of every field of that size.
#[derive(Debug, Clone)]
pub struct ScanPlan {
    config: StatConfig,
    t: usize,
    masks: Vec<[OffsetMask; 5]>,
    kernels: Vec<AngleKernel>,
    anchors: AnchorRect,
}

impl ScanPlan {
    pub fn new(config: &StatConfig, t: usize) -> Result<Self> {
        let mut masks = Vec::with_capacity(config.angles.len());
        for &a in &config.angles {
            let m = SegmentId::ALL.map(|seg| build_offset_mask(&config.window, seg, a, t));
            let [m1, m2, m3, m4, m5] = m;
            masks.push([m1?, m2?, m3?, m4?, m5?]);
        }
        let anchors = valid_anchor_pixels(&config.window, masks.iter().flatten(), t)?;
        let kernels = masks
            .iter()
            .map(|ms| AngleKernel { segs: ms.each_ref().map(|m| FlatMask::new(m, t)) })
            .collect();
        Ok(Self { config: config.clone(), t, masks, kernels, anchors })
    }

    pub fn config(&self) -> &StatConfig {
        &self.config
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn anchors(&self) -> AnchorRect {
        self.anchors
    }

    pub fn masks(&self, angle_idx: usize) -> &[OffsetMask; 5] {
        &self.masks[angle_idx]
    }

    /// Union of the window pixel offsets (the disk) at the first angle.
    pub fn window_offsets(&self) -> Vec<[i32; 2]> {
        let mut v: Vec<[i32; 2]> = self.masks[0]
            .iter()
            .take(3)
            .flat_map(|m| m.offsets.iter().copied())
            .collect();
        v.sort_by_key(|o| (o[1], o[0]));
        v
    }

    fn check_field(&self, field: &GrayField) -> Result<()> {
        if field.t() != self.t {
            return Err(ScanError::Config(format!("plan built for T = {}, field has T = {}", self.t, field.t())));
        }
        Ok(())
    }

    fn base(&self, anchor: [usize; 2]) -> usize {
        (anchor[1] - 1) * self.t + (anchor[0] - 1)
    }

    pub fn contrasts(&self, field: &GrayField, anchor: [usize; 2], angle_idx: usize) -> Result<Contrasts> {
        self.check_field(field)?;
        if !self.anchors.contains(anchor) {
            return Err(ScanError::OutOfBounds(anchor[0], anchor[1]));
        }
        let k = &self.kernels[angle_idx];
        let (data, base) = (field.values(), self.base(anchor));
        let inner = k.mean(SegmentId::Inner, data, base);
        Ok(Contrasts {
            s12: k.mean(SegmentId::Upper, data, base) - inner,
            s13: k.mean(SegmentId::Lower, data, base) - inner,
            s45: k.mean(SegmentId::HalfPos, data, base) - k.mean(SegmentId::HalfNeg, data, base),
        })
    }

    /// Raw maxima over the angle list; terms not needed are left at 0.
    #[inline]
    pub(crate) fn raw_at(&self, data: &[f64], base: usize, strip: bool, halves: bool, two_sided: bool) -> RawMaxima {
        let mut f1 = f64::NEG_INFINITY;
        let mut f2 = f64::NEG_INFINITY;
        let mut nb = f64::NEG_INFINITY;
        for k in &self.kernels {
            if strip {
                let inner = k.mean(SegmentId::Inner, data, base);
                let s12 = k.mean(SegmentId::Upper, data, base) - inner;
                let s13 = k.mean(SegmentId::Lower, data, base) - inner;
                if two_sided {
                    f2 = f2.max(s12.abs().min(s13.abs()));
                } else {
                    f1 = f1.max(s12.min(s13));
                }
            }
            if halves {
                let s45 = k.mean(SegmentId::HalfPos, data, base) - k.mean(SegmentId::HalfNeg, data, base);
                nb = nb.max(s45.abs());
            }
        }
        let fix = |v: f64| if v == f64::NEG_INFINITY { 0.0 } else { v };
        RawMaxima { f1: fix(f1), f2: fix(f2), nb: fix(nb) }
    }

    #[inline]
    fn value_at(&self, data: &[f64], base: usize, inv_sigma: f64) -> f64 {
        let kind = self.config.kind;
        let two_sided = matches!(kind, StatKind::F2 | StatKind::Fnb2);
        let raw = self.raw_at(data, base, kind.needs_strip(), kind.needs_halves(), two_sided);
        combine(kind, raw, inv_sigma)
    }

    /// Statistic value at one anchor.
    pub fn stat_at(&self, field: &GrayField, sigma: f64, anchor: [usize; 2]) -> Result<f64> {
        self.check_field(field)?;
        check_sigma(sigma)?;
        if !self.anchors.contains(anchor) {
            return Err(ScanError::OutOfBounds(anchor[0], anchor[1]));
        }
        Ok(self.value_at(field.values(), self.base(anchor), 1.0 / sigma))
    }

    /// Statistic over every valid anchor.
    pub fn heatmap(&self, field: &GrayField, sigma: f64, exec: Exec) -> Result<HeatMap> {
        self.check_field(field)?;
        check_sigma(sigma)?;
        let t = self.t;
        let a = self.anchors;
        let inv = 1.0 / sigma;
        let data = field.values();
        let mut values = vec![f64::NAN; t * t];
        exec.fill_chunks(&mut values, t, |row, out| {
            let k2 = row + 1;
            if k2 < a.lo[1] || k2 > a.hi[1] {
                return;
            }
            for k1 in a.lo[0]..=a.hi[0] {
                out[k1 - 1] = self.value_at(data, row * t + (k1 - 1), inv);
            }
        });
        Ok(HeatMap { t, values, anchors: a })
    }

    /// Maximum of the statistic over all anchors, without storing the map.
    pub fn max_stat(&self, field: &GrayField, sigma: f64) -> Result<f64> {
        self.check_field(field)?;
        check_sigma(sigma)?;
        let inv = 1.0 / sigma;
        let data = field.values();
        Ok(self
            .anchors
            .iter()
            .map(|k| self.value_at(data, self.base(k), inv))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Maximum of the statistic over a subset of anchors.
    pub fn max_stat_over(&self, field: &GrayField, sigma: f64, anchors: &[[usize; 2]]) -> Result<f64> {
        self.check_field(field)?;
        check_sigma(sigma)?;
        let inv = 1.0 / sigma;
        let data = field.values();
        let mut best = f64::NEG_INFINITY;
        for &k in anchors {
            if !self.anchors.contains(k) {
                return Err(ScanError::OutOfBounds(k[0], k[1]));
            }
            best = best.max(self.value_at(data, self.base(k), inv));
        }
        Ok(best)
    }

    pub(crate) fn linear_base(&self, anchor: [usize; 2]) -> usize {
        self.base(anchor)
    }
}

#[inline]
pub(crate) fn combine(kind: StatKind, raw: RawMaxima, inv_sigma: f64) -> f64 {
    match kind {
        StatKind::F1 => raw.f1 * inv_sigma,
        StatKind::F2 => raw.f2 * inv_sigma,
        StatKind::Nb => raw.nb * inv_sigma,
        StatKind::Fnb1 => (raw.f1 * inv_sigma - raw.nb * inv_sigma).max(0.0),
        StatKind::Fnb2 => (raw.f2 * inv_sigma - raw.nb * inv_sigma).max(0.0),
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        domain(format!("sigma must be > 0, got {sigma}"))
    }
}

/// One-shot contrasts at an anchor; builds the masks for `config.angles[angle_idx]`.
pub fn contrasts(field: &GrayField, config: &StatConfig, anchor: [usize; 2], angle_idx: usize) -> Result<Contrasts> {
    let cfg = StatConfig { angles: vec![config.angles[angle_idx]], ..config.clone() };
    ScanPlan::new(&cfg, field.t())?.contrasts(field, anchor, 0)
}

/// One-shot statistic at an anchor.
pub fn stat_at(field: &GrayField, config: &StatConfig, sigma: f64, anchor: [usize; 2]) -> Result<f64> {
    ScanPlan::new(config, field.t())?.stat_at(field, sigma, anchor)
}

/// Heat map with sigma taken from the configuration's sigma source.
pub fn heatmap(field: &GrayField, config: &StatConfig) -> Result<(HeatMap, SigmaEstimate)> {
    let sigma = config.sigma.resolve(field)?;
    if sigma.degenerate {
        return Err(ScanError::Data("sigma estimate is zero (constant image)".into()));
    }
    let plan = ScanPlan::new(config, field.t())?;
    Ok((plan.heatmap(field, sigma.value, Exec::default())?, sigma))
}

/// Per-anchor statistic values; `NaN` marks pixels that are not anchors.
#[derive(Debug, Clone)]
pub struct HeatMap {
    pub t: usize,
    pub values: Vec<f64>,
    pub anchors: AnchorRect,
}

/// Bitwise equality, so the `NaN` marker compares equal to itself.
impl PartialEq for HeatMap {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.anchors == other.anchors
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl HeatMap {
    pub fn get(&self, k: [usize; 2]) -> Option<f64> {
        self.anchors.contains(k).then(|| self.values[(k[1] - 1) * self.t + (k[0] - 1)])
    }

    pub fn max(&self) -> f64 {
        self.anchors.iter().filter_map(|k| self.get(k)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.anchors.iter().filter_map(|k| self.get(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn argmax(&self) -> [usize; 2] {
        let mut best = (f64::NEG_INFINITY, self.anchors.lo);
        for k in self.anchors.iter() {
            let v = self.get(k).unwrap();
            if v > best.0 {
                best = (v, k);
            }
        }
        best.1
    }
}

/// Anchors whose statistic reaches the threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignificanceMask {
    pub t: usize,
    pub bits: Vec<bool>,
}

impl SignificanceMask {
    pub fn empty(t: usize) -> Self {
        Self { t, bits: vec![false; t * t] }
    }

    pub fn get(&self, k: [usize; 2]) -> bool {
        self.bits[(k[1] - 1) * self.t + (k[0] - 1)]
    }

    pub fn set(&mut self, k: [usize; 2]) {
        self.bits[(k[1] - 1) * self.t + (k[0] - 1)] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pixels(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        let t = self.t;
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| [i % t + 1, i / t + 1])
    }

    pub fn is_subset_of(&self, other: &SignificanceMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// `hm >= beta` on valid anchors, false elsewhere.
pub fn significance_mask(hm: &HeatMap, beta: f64) -> SignificanceMask {
    let mut m = SignificanceMask::empty(hm.t);
    for k in hm.anchors.iter() {
        if hm.get(k).is_some_and(|v| v >= beta) {
            m.set(k);
        }
    }
    m
}
