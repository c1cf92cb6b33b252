//! Gray-value fields, synthetic noise models and fissure injection.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, ScanError};
use crate::exec::Exec;
use crate::geometry::RectAnomaly;
use crate::rng::row_rng;

/// A `t x t` grid of gray values.
///
/// Pixels are addressed 1-based as `k = [k1, k2]` with `k1` the column and
/// `k2` the row; the pixel sits at rescaled position `k / t`. Storage is
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayField {
    t: usize,
    values: Vec<f64>,
}

impl GrayField {
    pub fn new(t: usize, values: Vec<f64>) -> Result<Self> {
        if t == 0 || values.len() != t * t {
            return Err(ScanError::Data(format!(
                "field needs {} values for T = {t}, got {}",
                t * t,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ScanError::Data(format!("non-finite value at index {i}")));
        }
        Ok(Self { t, values })
    }

    pub fn constant(t: usize, c: f64) -> Self {
        Self { t, values: vec![c; t * t] }
    }

    /// Builds a field from a function of the 1-based pixel index.
    pub fn from_fn(t: usize, f: impl Fn([usize; 2]) -> f64) -> Self {
        let mut values = Vec::with_capacity(t * t);
        for k2 in 1..=t {
            for k1 in 1..=t {
                values.push(f([k1, k2]));
            }
        }
        Self { t, values }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, k: [usize; 2]) -> usize {
        (k[1] - 1) * self.t + (k[0] - 1)
    }

    #[inline]
    pub fn get(&self, k: [usize; 2]) -> f64 {
        self.values[self.index(k)]
    }

    pub fn set(&mut self, k: [usize; 2], v: f64) {
        let i = self.index(k);
        self.values[i] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayField {
        GrayField { t: self.t, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Integer shift: `out[k] = self[k - shift]`, with `fill` where the source
    /// falls outside the image.
    pub fn shifted(&self, shift: [i64; 2], fill: f64) -> GrayField {
        let t = self.t as i64;
        GrayField::from_fn(self.t, |k| {
            let src = [k[0] as i64 - shift[0], k[1] as i64 - shift[1]];
            if (1..=t).contains(&src[0]) && (1..=t).contains(&src[1]) {
                self.get([src[0] as usize, src[1] as usize])
            } else {
                fill
            }
        })
    }
}

/// Stationary noise distributions. All variants are centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    IidGaussian { sd: f64 },
    IidStudentT { nu: f64 },
    /// Exponential(rate) shifted by its mean.
    IidExponential { rate: f64 },
    /// Gamma(shape, rate) shifted by its mean.
    IidGamma { shape: f64, rate: f64 },
    /// `eps_k = innovation_sd * sum_j w_j * eta_{k+j}` over `|j|_inf <= radius`,
    /// weights row-major over the `(2 radius + 1)^2` window.
    MovingAverage { radius: usize, weights: Vec<f64>, innovation_sd: f64 },
}

impl NoiseModel {
    pub fn standard_normal() -> Self {
        NoiseModel::IidGaussian { sd: 1.0 }
    }

    /// Moving average with all weights equal to one.
    pub fn box_average(radius: usize, innovation_sd: f64) -> Self {
        let side = 2 * radius + 1;
        NoiseModel::MovingAverage { radius, weights: vec![1.0; side * side], innovation_sd }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::IidGaussian { sd } if !(sd > 0.0 && sd.is_finite()) => domain(format!("sd must be > 0, got {sd}")),
            NoiseModel::IidStudentT { nu } if !(nu > 2.0 && nu.is_finite()) => {
                domain(format!("Student-t needs nu > 2 for a finite variance, got {nu}"))
            }
            NoiseModel::IidExponential { rate } if !(rate > 0.0 && rate.is_finite()) => {
                domain(format!("rate must be > 0, got {rate}"))
            }
            NoiseModel::IidGamma { shape, rate } if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) => {
                domain(format!("gamma needs shape, rate > 0, got {shape}, {rate}"))
            }
            NoiseModel::MovingAverage { radius, ref weights, innovation_sd } => {
                let side = 2 * radius + 1;
                if weights.len() != side * side {
                    return domain(format!("radius {radius} needs {} weights, got {}", side * side, weights.len()));
                }
                if !weights.iter().all(|w| w.is_finite()) || weights.iter().all(|&w| w == 0.0) {
                    return domain("moving-average weights must be finite with at least one nonzero");
                }
                if !(innovation_sd > 0.0 && innovation_sd.is_finite()) {
                    return domain(format!("innovation sd must be > 0, got {innovation_sd}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Long-run variance: the marginal variance plus all lagged covariances.
    pub fn long_run_variance(&self) -> f64 {
        match *self {
            NoiseModel::IidGaussian { sd } => sd * sd,
            NoiseModel::IidStudentT { nu } => nu / (nu - 2.0),
            NoiseModel::IidExponential { rate } => 1.0 / (rate * rate),
            NoiseModel::IidGamma { shape, rate } => shape / (rate * rate),
            NoiseModel::MovingAverage { ref weights, innovation_sd, .. } => {
                let s: f64 = weights.iter().sum();
                innovation_sd * innovation_sd * s * s
            }
        }
    }

    /// Marginal variance of a single pixel.
    pub fn marginal_variance(&self) -> f64 {
        match *self {
            NoiseModel::MovingAverage { ref weights, innovation_sd, .. } => {
                innovation_sd * innovation_sd * weights.iter().map(|w| w * w).sum::<f64>()
            }
            _ => self.long_run_variance(),
        }
    }

    /// Sup-norm range `M` beyond which pixels are independent.
    pub fn m_dependence_range(&self) -> usize {
        match *self {
            NoiseModel::MovingAverage { radius, .. } => 2 * radius,
            _ => 0,
        }
    }

    /// Compact tag in the command-line syntax.
    pub fn tag(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseModel::IidGaussian { sd } => write!(f, "gauss:{sd}"),
            NoiseModel::IidStudentT { nu } => write!(f, "t:{nu}"),
            NoiseModel::IidExponential { rate } => write!(f, "exp:{rate}"),
            NoiseModel::IidGamma { shape, rate } => write!(f, "gamma:{shape}:{rate}"),
            NoiseModel::MovingAverage { radius, weights, innovation_sd } => {
                if weights.iter().all(|&w| w == 1.0) {
                    write!(f, "ma:{radius}:{innovation_sd}")
                } else {
                    let w: Vec<String> = weights.iter().map(|w| w.to_string()).collect();
                    write!(f, "ma:{radius}:{innovation_sd}:[{}]", w.join(","))
                }
            }
        }
    }
}

impl FromStr for NoiseModel {
    type Err = ScanError;

    /// Parses `gauss:<sd>`, `t:<nu>`, `exp:<rate>`, `gamma:<shape>:<rate>` or
    /// `ma:<m>:<sd>` (box weights).
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize| -> Result<f64> {
            parts
                .get(i)
                .ok_or_else(|| ScanError::Config(format!("noise '{s}': missing parameter")))?
                .parse::<f64>()
                .map_err(|_| ScanError::Config(format!("noise '{s}': bad number")))
        };
        let model = match (parts[0], parts.len()) {
            ("gauss", 2) => NoiseModel::IidGaussian { sd: num(1)? },
            ("t", 2) => NoiseModel::IidStudentT { nu: num(1)? },
            ("exp", 2) => NoiseModel::IidExponential { rate: num(1)? },
            ("gamma", 3) => NoiseModel::IidGamma { shape: num(1)?, rate: num(2)? },
            ("ma", 3) => {
                let m = num(1)?;
                if m < 0.0 || m.fract() != 0.0 {
                    return Err(ScanError::Config(format!("noise '{s}': radius must be a nonnegative integer")));
                }
                NoiseModel::box_average(m as usize, num(2)?)
            }
            _ => return Err(ScanError::Config(format!("unrecognized noise model '{s}'"))),
        };
        model.validate().map_err(|e| ScanError::Config(e.to_string()))?;
        Ok(model)
    }
}

fn iid_row<D: Distribution<f64>>(dist: &D, shift: f64, seed: u64, replicate: u64, row: usize, out: &mut [f64]) {
    let mut rng = row_rng(seed, replicate, row as u64);
    for v in out.iter_mut() {
        *v = dist.sample(&mut rng) - shift;
    }
}

/// Draws replicate 0 of the noise model.
pub fn generate_noise(model: &NoiseModel, t: usize, seed: u64) -> Result<GrayField> {
    generate_noise_replicate(model, t, seed, 0, Exec::Sequential)
}

/// Draws one replicate. Row `j` of the (possibly enlarged) innovation grid
/// always comes from stream `(seed, replicate, j)`.
pub fn generate_noise_replicate(
    model: &NoiseModel,
    t: usize,
    seed: u64,
    replicate: u64,
    exec: Exec,
) -> Result<GrayField> {
    model.validate()?;
    if t == 0 {
        return domain("T must be >= 1");
    }
    let mut values = vec![0.0; t * t];
    match *model {
        NoiseModel::IidGaussian { sd } => exec.fill_chunks(&mut values, t, |j, row| {
            let mut rng = row_rng(seed, replicate, j as u64);
            for v in row.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = sd * z;
            }
        }),
        NoiseModel::IidStudentT { nu } => {
            let dist = StudentT::new(nu).map_err(|e| ScanError::Domain(e.to_string()))?;
            exec.fill_chunks(&mut values, t, |j, row| iid_row(&dist, 0.0, seed, replicate, j, row))
        }
        NoiseModel::IidExponential { rate } => {
            let dist = Exp::new(rate).map_err(|e| ScanError::Domain(e.to_string()))?;
            exec.fill_chunks(&mut values, t, |j, row| iid_row(&dist, 1.0 / rate, seed, replicate, j, row))
        }
        NoiseModel::IidGamma { shape, rate } => {
            let dist = Gamma::new(shape, 1.0 / rate).map_err(|e| ScanError::Domain(e.to_string()))?;
            exec.fill_chunks(&mut values, t, |j, row| iid_row(&dist, shape / rate, seed, replicate, j, row))
        }
        NoiseModel::MovingAverage { radius, ref weights, innovation_sd } => {
            let side = t + 2 * radius;
            let mut eta = vec![0.0; side * side];
            exec.fill_chunks(&mut eta, side, |j, row| {
                let mut rng = row_rng(seed, replicate, j as u64);
                for v in row.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            });
            let w = 2 * radius + 1;
            exec.fill_chunks(&mut values, t, |r, row| {
                // pixel (c, r) zero-based sits at (c + radius, r + radius) in eta
                for (c, v) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j2 in 0..w {
                        let base = (r + j2) * side + c;
                        let wrow = &weights[j2 * w..(j2 + 1) * w];
                        for (j1, &wt) in wrow.iter().enumerate() {
                            acc += wt * eta[base + j1];
                        }
                    }
                    *v = innovation_sd * acc;
                }
            });
        }
    }
    GrayField::new(t, values)
}

/// Baseline level plus a rectangular fissure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub baseline: f64,
    pub anomaly: RectAnomaly,
}

/// Pixels `k` with `k / t` inside the rectangle, row-major.
pub fn fissure_pixels(rect: &RectAnomaly, t: usize) -> Vec<[usize; 2]> {
    let tf = t as f64;
    let mut out = Vec::new();
    for k2 in 1..=t {
        for k1 in 1..=t {
            if rect.contains([k1 as f64 / tf, k2 as f64 / tf]) {
                out.push([k1, k2]);
            }
        }
    }
    out
}

/// `out_k = baseline - amplitude * 1{k/T in F} + field_k`.
pub fn inject_anomaly(field: &GrayField, signal: &SignalSpec) -> Result<GrayField> {
    let rect = &signal.anomaly;
    let corners = rect.corners();
    let lo = corners.iter().fold([f64::INFINITY; 2], |a, c| [a[0].min(c[0]), a[1].min(c[1])]);
    let hi = corners.iter().fold([f64::NEG_INFINITY; 2], |a, c| [a[0].max(c[0]), a[1].max(c[1])]);
    if hi[0] < 0.0 || hi[1] < 0.0 || lo[0] > 1.0 || lo[1] > 1.0 {
        return domain("anomaly rectangle does not intersect the unit square");
    }
    let mut out = field.map(|v| v + signal.baseline);
    for k in fissure_pixels(rect, field.t()) {
        let i = out.index(k);
        out.values[i] -= rect.amplitude;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
    }

    #[test]
    fn generation_is_deterministic() {
        for model in [
            NoiseModel::standard_normal(),
            NoiseModel::IidStudentT { nu: 5.0 },
            NoiseModel::IidGamma { shape: 4.0, rate: 2.0 },
            NoiseModel::box_average(1, 1.0),
        ] {
            let a = generate_noise(&model, 40, 9).unwrap();
            let b = generate_noise(&model, 40, 9).unwrap();
            assert_eq!(a, b);
            let c = generate_noise(&model, 40, 10).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn parallel_generation_is_bit_identical() {
        for model in [NoiseModel::IidExponential { rate: 2.0 }, NoiseModel::box_average(2, 0.5)] {
            let a = generate_noise_replicate(&model, 64, 3, 5, Exec::Sequential).unwrap();
            let b = generate_noise_replicate(&model, 64, 3, 5, Exec::Parallel).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gaussian_grand_mean() {
        let f = generate_noise(&NoiseModel::standard_normal(), 200, 1).unwrap();
        assert!(f.mean().abs() <= 0.015, "mean {}", f.mean());
    }

    #[test]
    fn skewed_models_are_centered() {
        let t = 200;
        for model in [NoiseModel::IidExponential { rate: 1.0 }, NoiseModel::IidGamma { shape: 4.0, rate: 2.0 }] {
            let f = generate_noise(&model, t, 4).unwrap();
            let sd = model.marginal_variance().sqrt();
            assert!(f.mean().abs() <= 4.0 * sd / t as f64, "{model}: {}", f.mean());
        }
    }

    #[test]
    fn ma_noise_is_m_dependent() {
        // box weights radius 1: covariance vanishes beyond lag 2
        let model = NoiseModel::box_average(1, 1.0);
        let mut lag2 = (0.0, 0.0, 0.0, 0.0, 0.0, 0usize);
        let mut lag3 = lag2;
        let acc = |s: &mut (f64, f64, f64, f64, f64, usize), a: f64, b: f64| {
            s.0 += a;
            s.1 += b;
            s.2 += a * b;
            s.3 += a * a;
            s.4 += b * b;
            s.5 += 1;
        };
        let mut rep = 0;
        while lag3.5 < 1_000_000 {
            let f = generate_noise_replicate(&model, 256, 77, rep, Exec::Parallel).unwrap();
            for k2 in 1..=256 {
                for k1 in 1..=253 {
                    acc(&mut lag3, f.get([k1, k2]), f.get([k1 + 3, k2]));
                    acc(&mut lag2, f.get([k1, k2]), f.get([k1 + 2, k2]));
                }
            }
            rep += 1;
        }
        let corr = |s: (f64, f64, f64, f64, f64, usize)| {
            let n = s.5 as f64;
            let cov = s.2 / n - s.0 / n * s.1 / n;
            cov / ((s.3 / n - (s.0 / n).powi(2)) * (s.4 / n - (s.1 / n).powi(2))).sqrt()
        };
        assert!(corr(lag3).abs() <= 0.05, "lag 3 corr {}", corr(lag3));
        // exact lag-2 correlation is 3/9
        assert!((corr(lag2) - 1.0 / 3.0).abs() < 0.02, "lag 2 corr {}", corr(lag2));
    }

    #[test]
    fn long_run_variances() {
        assert_eq!(NoiseModel::standard_normal().long_run_variance(), 1.0);
        assert_eq!(NoiseModel::box_average(1, 1.0).long_run_variance(), 81.0);
        assert_eq!(NoiseModel::box_average(1, 2.0).long_run_variance(), 324.0);
        assert!((NoiseModel::IidStudentT { nu: 3.0 }.long_run_variance() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn long_run_variance_matches_block_sums() {
        // Var(block sum) / side^2 approaches the long-run variance for large blocks
        let weights = vec![0.5, 1.0, 0.2, -0.3, 1.0, 0.7, 0.1, 0.4, 0.9];
        let model = NoiseModel::MovingAverage { radius: 1, weights, innovation_sd: 1.0 };
        let block = 128;
        let per_rep: Vec<Vec<f64>> = Exec::Parallel.map(600, |rep| {
            let f = generate_noise_replicate(&model, 256, 5, rep as u64, Exec::Sequential).unwrap();
            let mut out = Vec::new();
            for b2 in 0..2 {
                for b1 in 0..2 {
                    let mut s = 0.0;
                    for k2 in 0..block {
                        for k1 in 0..block {
                            s += f.get([b1 * block + k1 + 1, b2 * block + k2 + 1]);
                        }
                    }
                    out.push(s / block as f64);
                }
            }
            out
        });
        let sums: Vec<f64> = per_rep.into_iter().flatten().collect();
        let ratio = variance(&sums) / model.long_run_variance();
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn m_dependence_ranges() {
        assert_eq!(NoiseModel::standard_normal().m_dependence_range(), 0);
        assert_eq!(NoiseModel::box_average(1, 1.0).m_dependence_range(), 2);
        assert_eq!(NoiseModel::box_average(3, 1.0).m_dependence_range(), 6);
    }

    #[test]
    fn ma_covariance_vanishes_at_lag_2m_plus_1() {
        let model = NoiseModel::box_average(3, 1.0);
        let (mut s7, mut s6, mut n) = (0.0, 0.0, 0usize);
        for rep in 0..6 {
            let f = generate_noise_replicate(&model, 200, 8, rep, Exec::Parallel).unwrap();
            for k2 in 1..=200 {
                for k1 in 1..=193 {
                    s7 += f.get([k1, k2]) * f.get([k1 + 7, k2]);
                    s6 += f.get([k1, k2]) * f.get([k1 + 6, k2]);
                    n += 1;
                }
            }
        }
        let var = model.marginal_variance();
        // lag 6 shares one column of 7 innovations: corr 7/49
        assert!((s6 / n as f64 / var - 7.0 / 49.0).abs() < 0.03);
        assert!((s7 / n as f64 / var).abs() < 0.03);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(generate_noise(&NoiseModel::IidGaussian { sd: 0.0 }, 10, 1).is_err());
        assert!(generate_noise(&NoiseModel::IidStudentT { nu: 2.0 }, 10, 1).is_err());
        let bad = NoiseModel::MovingAverage { radius: 1, weights: vec![0.0; 9], innovation_sd: 1.0 };
        assert!(generate_noise(&bad, 10, 1).is_err());
        assert!("ma:1.5:1".parse::<NoiseModel>().is_err());
        assert!("cauchy:1".parse::<NoiseModel>().is_err());
    }

    #[test]
    fn noise_tags_round_trip() {
        for s in ["gauss:1", "t:3", "exp:1", "gamma:4:2", "ma:1:1"] {
            let m: NoiseModel = s.parse().unwrap();
            assert_eq!(m.tag(), s);
        }
    }

    #[test]
    fn injection_examples() {
        let base = generate_noise(&NoiseModel::standard_normal(), 50, 2).unwrap();
        let rect = RectAnomaly::new([0.5, 0.5], 0.4, 0.04, 0.3, 0.0).unwrap();
        let out = inject_anomaly(&base, &SignalSpec { baseline: 3.0, anomaly: rect }).unwrap();
        assert_eq!(out, base.map(|v| v + 3.0));

        let rect = RectAnomaly { amplitude: 2.0, ..rect };
        let out = inject_anomaly(&base, &SignalSpec { baseline: 3.0, anomaly: rect }).unwrap();
        let c = out.index([25, 25]);
        assert!((out.values()[c] - (base.values()[c] + 3.0 - 2.0)).abs() < 1e-12);

        let far = RectAnomaly::new([3.0, 3.0], 0.1, 0.1, 0.0, 1.0).unwrap();
        assert!(inject_anomaly(&base, &SignalSpec { baseline: 0.0, anomaly: far }).is_err());
    }

    #[test]
    fn fissure_pixel_fraction_approaches_area() {
        let rect = RectAnomaly::new([0.5, 0.5], 0.4, 0.05, 0.7, 1.0).unwrap();
        let err = |t: usize| (fissure_pixels(&rect, t).len() as f64 / (t * t) as f64 - rect.area()).abs();
        let (e1, e2) = (err(100), err(800));
        assert!(e2 < e1 || e2 < 1e-4, "{e1} {e2}");
        assert!(e2 / rect.area() < 0.01);
    }

    #[test]
    fn ma_subrectangles_are_stationary() {
        let model = NoiseModel::box_average(1, 1.0);
        let f = generate_noise(&model, 300, 12).unwrap();
        let stats = |r: std::ops::RangeInclusive<usize>| {
            let v: Vec<f64> = r.clone().flat_map(|k2| (1..=300).map(move |k1| [k1, k2])).map(|k| f.get(k)).collect();
            (v.iter().sum::<f64>() / v.len() as f64, variance(&v))
        };
        let (m1, v1) = stats(1..=150);
        let (m2, v2) = stats(151..=300);
        // the mean of 45000 MA values has sd ~ sqrt(81 / 45000) = 0.042
        assert!((m1 - m2).abs() < 0.25);
        assert!((v1 / v2 - 1.0).abs() < 0.05);
        assert!((v1 / model.marginal_variance() - 1.0).abs() < 0.05);
    }
}
