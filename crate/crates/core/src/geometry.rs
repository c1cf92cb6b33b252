//! Scan-window geometry.
//!
//! A scan window is a disk of diameter `d` split by a strip of width `h`
//! running through its center at angle `alpha` (counterclockwise from the
//! first coordinate axis). The strip gives the inner segment and the two
//! outer circle segments; the strip axis also bisects the disk into two
//! half-disks. All coordinates here are rescaled, i.e. pixel `k` sits at
//! `k / T`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result, ScanError};

/// Relative slack used for boundary ties. Lattice points that land exactly on
/// a segment boundary can be perturbed by a few ulps after rotation, so ties
/// are resolved against `TIE_REL * d`.
const TIE_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Disk diameter in rescaled units.
    pub d: f64,
    /// Inner strip width in rescaled units.
    pub h: f64,
}

impl WindowSpec {
    pub fn new(d: f64, h: f64) -> Result<Self> {
        if !(d.is_finite() && h.is_finite() && 0.0 < h && h < d && d < 1.0) {
            return domain(format!("window requires 0 < h < d < 1, got d = {d}, h = {h}"));
        }
        Ok(Self { d, h })
    }

    pub fn radius(&self) -> f64 {
        self.d / 2.0
    }

    fn tie(&self) -> f64 {
        TIE_REL * self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SegmentId {
    Inner = 1,
    Upper = 2,
    Lower = 3,
    HalfPos = 4,
    HalfNeg = 5,
}

impl SegmentId {
    pub const ALL: [SegmentId; 5] = [
        SegmentId::Inner,
        SegmentId::Upper,
        SegmentId::Lower,
        SegmentId::HalfPos,
        SegmentId::HalfNeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SegmentId::Inner => "inner",
            SegmentId::Upper => "upper",
            SegmentId::Lower => "lower",
            SegmentId::HalfPos => "half_pos",
            SegmentId::HalfNeg => "half_neg",
        }
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SegmentId {
    type Err = ScanError;

    fn from_str(s: &str) -> Result<Self> {
        SegmentId::ALL
            .into_iter()
            .find(|seg| seg.name() == s)
            .ok_or_else(|| ScanError::Domain(format!("unknown segment '{s}'")))
    }
}

/// Reduces any angle to the canonical range `[0, pi)`.
pub fn normalize_angle(alpha: f64) -> f64 {
    let a = alpha.rem_euclid(PI);
    // rem_euclid can round up to exactly PI for tiny negative inputs
    if a >= PI {
        0.0
    } else {
        a
    }
}

fn check_angle(alpha: f64) -> Result<()> {
    if (0.0..PI).contains(&alpha) {
        Ok(())
    } else {
        domain(format!("angle {alpha} is outside [0, pi)"))
    }
}

#[cfg(test)]
/// Signed distance of `x` from the strip axis at angle `alpha`.
#[inline]
fn perpendicular(alpha: f64, x: [f64; 2]) -> f64 {
    let (sin, cos) = alpha.sin_cos();
    -x[0] * sin + x[1] * cos
}

/// Membership test without the angle precondition; `sin_cos` precomputed.
#[inline]
fn contains_unchecked(spec: &WindowSpec, seg: SegmentId, sin_cos: (f64, f64), x: [f64; 2]) -> bool {
    let tie = spec.tie();
    let r = spec.radius();
    if (x[0] * x[0] + x[1] * x[1]).sqrt() > r + tie {
        return false;
    }
    let (sin, cos) = sin_cos;
    let u = -x[0] * sin + x[1] * cos;
    let c = spec.h / 2.0;
    match seg {
        SegmentId::Inner => u.abs() <= c + tie,
        SegmentId::Upper => u > c + tie,
        SegmentId::Lower => u < -(c + tie),
        // the axis itself belongs to neither half, so the halves are mirror images
        SegmentId::HalfPos => u > tie,
        SegmentId::HalfNeg => u < -tie,
    }
}

/// Whether the point `x` (relative to the window center) lies in segment `seg`
/// of the window turned by `alpha`.
pub fn segment_contains(spec: &WindowSpec, seg: SegmentId, alpha: f64, x: [f64; 2]) -> Result<bool> {
    check_angle(alpha)?;
    Ok(contains_unchecked(spec, seg, alpha.sin_cos(), x))
}

/// Whether `x` lies anywhere in the disk of the window (all segments united).
pub fn disk_contains(spec: &WindowSpec, x: [f64; 2]) -> bool {
    (x[0] * x[0] + x[1] * x[1]).sqrt() <= spec.radius() + spec.tie()
}

/// Closed-form Lebesgue measure of a segment. Independent of the angle.
pub fn exact_area(spec: &WindowSpec, seg: SegmentId) -> f64 {
    let r = spec.radius();
    let c = spec.h / 2.0;
    let disk = PI * r * r;
    let inner = 2.0 * c * (r * r - c * c).sqrt() + 2.0 * r * r * (c / r).asin();
    match seg {
        SegmentId::Inner => inner,
        SegmentId::Upper | SegmentId::Lower => (disk - inner) / 2.0,
        SegmentId::HalfPos | SegmentId::HalfNeg => disk / 2.0,
    }
}

/// A rotated rectangle carrying a gray-value drop of `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectAnomaly {
    pub center: [f64; 2],
    pub length: f64,
    pub width: f64,
    /// Direction of the long axis in `[0, pi)`.
    pub angle: f64,
    pub amplitude: f64,
}

impl RectAnomaly {
    pub fn new(center: [f64; 2], length: f64, width: f64, angle: f64, amplitude: f64) -> Result<Self> {
        if !(length > 0.0 && width > 0.0) {
            return domain(format!("rectangle needs positive length and width, got {length} x {width}"));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return domain(format!("amplitude must be finite and >= 0, got {amplitude}"));
        }
        check_angle(angle)?;
        Ok(Self { center, length, width, angle, amplitude })
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        let (sin, cos) = self.angle.sin_cos();
        let dx = [x[0] - self.center[0], x[1] - self.center[1]];
        let v = dx[0] * cos + dx[1] * sin;
        let u = -dx[0] * sin + dx[1] * cos;
        let tie = TIE_REL * self.length.max(self.width);
        v.abs() <= self.length / 2.0 + tie && u.abs() <= self.width / 2.0 + tie
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (sin, cos) = self.angle.sin_cos();
        let (a, b) = (self.length / 2.0, self.width / 2.0);
        let mut out = [[0.0; 2]; 4];
        for (i, (sv, su)) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)].into_iter().enumerate() {
            out[i] = [
                self.center[0] + sv * a * cos - su * b * sin,
                self.center[1] + sv * a * sin + su * b * cos,
            ];
        }
        out
    }

    /// True when part of the rectangle falls outside the unit square.
    pub fn is_clipped(&self) -> bool {
        self.corners()
            .iter()
            .any(|c| c.iter().any(|&v| !(0.0..=1.0).contains(&v)))
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }
}

/// Free-function form of [`RectAnomaly::contains`].
pub fn rect_contains(rect: &RectAnomaly, x: [f64; 2]) -> bool {
    rect.contains(x)
}

/// Integer pixel offsets realizing one window segment at resolution `t`.
///
/// Offsets are stored in row-major order (second coordinate outer, first
/// coordinate inner, both ascending).
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetMask {
    pub segment: SegmentId,
    pub angle: f64,
    pub t: usize,
    pub offsets: Vec<[i32; 2]>,
}

impl OffsetMask {
    pub fn count(&self) -> usize {
        self.offsets.len()
    }

    /// Per-coordinate (min, max) offsets.
    pub fn extent(&self) -> ([i32; 2], [i32; 2]) {
        let mut lo = [i32::MAX; 2];
        let mut hi = [i32::MIN; 2];
        for o in &self.offsets {
            for i in 0..2 {
                lo[i] = lo[i].min(o[i]);
                hi[i] = hi[i].max(o[i]);
            }
        }
        (lo, hi)
    }

    /// Debug text: header `segment angle T count`, then one `o1 o2` per line.
    pub fn to_debug_text(&self) -> String {
        let mut s = format!("{} {:?} {} {}\n", self.segment, self.angle, self.t, self.count());
        for o in &self.offsets {
            s.push_str(&format!("{} {}\n", o[0], o[1]));
        }
        s
    }

    pub fn from_debug_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| ScanError::Data(format!("mask text: {msg}"));
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if header.len() != 4 {
            return Err(bad("header must be 'segment angle T count'"));
        }
        let segment: SegmentId = header[0].parse()?;
        let angle: f64 = header[1].parse().map_err(|_| bad("angle"))?;
        let t: usize = header[2].parse().map_err(|_| bad("T"))?;
        let count: usize = header[3].parse().map_err(|_| bad("count"))?;
        let mut offsets = Vec::with_capacity(count);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace().map(str::parse::<i32>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => offsets.push([a, b]),
                _ => return Err(bad(&format!("bad offset line '{line}'"))),
            }
        }
        if offsets.len() != count {
            return Err(bad(&format!("header says {count} offsets, found {}", offsets.len())));
        }
        Ok(Self { segment, angle, t, offsets })
    }
}

/// Rasterizes a segment: every offset `o` with `o / t` inside the segment.
pub fn build_offset_mask(spec: &WindowSpec, seg: SegmentId, alpha: f64, t: usize) -> Result<OffsetMask> {
    check_angle(alpha)?;
    if (t as f64) * spec.h < 2.0 - 1e-9 {
        return Err(ScanError::DegenerateWindow(format!(
            "inner strip narrower than two pixels (T * h = {})",
            t as f64 * spec.h
        )));
    }
    let reach = (spec.radius() * t as f64).ceil() as i32 + 1;
    let sc = alpha.sin_cos();
    let tf = t as f64;
    let mut offsets = Vec::new();
    for o2 in -reach..=reach {
        for o1 in -reach..=reach {
            if contains_unchecked(spec, seg, sc, [o1 as f64 / tf, o2 as f64 / tf]) {
                offsets.push([o1, o2]);
            }
        }
    }
    if offsets.is_empty() {
        return Err(ScanError::DegenerateWindow(format!("segment {seg} at angle {alpha} has no pixels at T = {t}")));
    }
    Ok(OffsetMask { segment: seg, angle: alpha, t, offsets })
}

/// Pixel offsets of the whole disk (union of all segments).
pub fn disk_offsets(spec: &WindowSpec, t: usize) -> Vec<[i32; 2]> {
    let reach = (spec.radius() * t as f64).ceil() as i32 + 1;
    let tf = t as f64;
    let mut out = Vec::new();
    for o2 in -reach..=reach {
        for o1 in -reach..=reach {
            if disk_contains(spec, [o1 as f64 / tf, o2 as f64 / tf]) {
                out.push([o1, o2]);
            }
        }
    }
    out
}

/// Inclusive 1-based rectangle of anchor pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRect {
    pub lo: [usize; 2],
    pub hi: [usize; 2],
}

impl AnchorRect {
    pub fn contains(&self, k: [usize; 2]) -> bool {
        (0..2).all(|i| self.lo[i] <= k[i] && k[i] <= self.hi[i])
    }

    pub fn width(&self) -> usize {
        self.hi[0] + 1 - self.lo[0]
    }

    pub fn height(&self) -> usize {
        self.hi[1] + 1 - self.lo[1]
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Anchors in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        (self.lo[1]..=self.hi[1]).flat_map(move |k2| (self.lo[0]..=self.hi[0]).map(move |k1| [k1, k2]))
    }
}

/// Anchors `j` such that `j + o` stays inside `{1..t}^2` for every offset of
/// every mask.
pub fn valid_anchor_pixels<'a>(
    spec: &WindowSpec,
    masks: impl IntoIterator<Item = &'a OffsetMask>,
    t: usize,
) -> Result<AnchorRect> {
    let mut lo = [0i64; 2];
    let mut hi = [0i64; 2];
    let mut any = false;
    for m in masks {
        let (mlo, mhi) = m.extent();
        for i in 0..2 {
            lo[i] = lo[i].min(mlo[i] as i64);
            hi[i] = hi[i].max(mhi[i] as i64);
        }
        any = true;
    }
    if !any {
        return Err(ScanError::DegenerateWindow("no masks given".into()));
    }
    let t = t as i64;
    let first = [1 - lo[0], 1 - lo[1]];
    let last = [t - hi[0], t - hi[1]];
    if first[0] > last[0] || first[1] > last[1] {
        return Err(ScanError::WindowTooLarge { d: spec.d, t: t as usize });
    }
    Ok(AnchorRect {
        lo: [first[0] as usize, first[1] as usize],
        hi: [last[0] as usize, last[1] as usize],
    })
}

/// Whether `x` is within sup-norm distance `gamma` of the segment, by dense
/// candidate search on a grid of spacing `gamma / 100` over the sup-ball.
pub fn fattening_contains(spec: &WindowSpec, seg: SegmentId, alpha: f64, gamma: f64, x: [f64; 2]) -> Result<bool> {
    check_angle(alpha)?;
    if !(gamma >= 0.0) {
        return domain(format!("fattening radius must be >= 0, got {gamma}"));
    }
    let sc = alpha.sin_cos();
    if contains_unchecked(spec, seg, sc, x) {
        return Ok(true);
    }
    if gamma == 0.0 {
        return Ok(false);
    }
    const STEPS: i32 = 100;
    let step = gamma / STEPS as f64;
    for i in -STEPS..=STEPS {
        for j in -STEPS..=STEPS {
            let z = [x[0] + i as f64 * step, x[1] + j as f64 * step];
            if contains_unchecked(spec, seg, sc, z) {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// A bounded planar set with a known bound on its boundary length, used for
/// grid-count area estimates.
pub trait Region: Sync {
    fn contains(&self, x: [f64; 2]) -> bool;
    /// (lower-left, upper-right) corners of an axis-aligned bounding box.
    fn bounding_box(&self) -> ([f64; 2], [f64; 2]);
    /// Upper bound on the length of the boundary.
    fn boundary_length(&self) -> f64;
}

/// A window segment placed at a center point.
#[derive(Debug, Clone, Copy)]
pub struct PlacedSegment {
    pub spec: WindowSpec,
    pub segment: SegmentId,
    pub angle: f64,
    pub center: [f64; 2],
}

impl PlacedSegment {
    pub fn new(spec: WindowSpec, segment: SegmentId, angle: f64, center: [f64; 2]) -> Result<Self> {
        check_angle(angle)?;
        Ok(Self { spec, segment, angle, center })
    }
}

impl Region for PlacedSegment {
    fn contains(&self, x: [f64; 2]) -> bool {
        contains_unchecked(
            &self.spec,
            self.segment,
            self.angle.sin_cos(),
            [x[0] - self.center[0], x[1] - self.center[1]],
        )
    }

    fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let r = self.spec.radius();
        ([self.center[0] - r, self.center[1] - r], [self.center[0] + r, self.center[1] + r])
    }

    fn boundary_length(&self) -> f64 {
        // arc plus at most two chords
        PI * self.spec.d + 2.0 * self.spec.d
    }
}

/// The full disk of a window placed at a center point.
#[derive(Debug, Clone, Copy)]
pub struct PlacedDisk {
    pub spec: WindowSpec,
    pub center: [f64; 2],
}

impl Region for PlacedDisk {
    fn contains(&self, x: [f64; 2]) -> bool {
        disk_contains(&self.spec, [x[0] - self.center[0], x[1] - self.center[1]])
    }

    fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let r = self.spec.radius();
        ([self.center[0] - r, self.center[1] - r], [self.center[0] + r, self.center[1] + r])
    }

    fn boundary_length(&self) -> f64 {
        PI * self.spec.d
    }
}

impl Region for RectAnomaly {
    fn contains(&self, x: [f64; 2]) -> bool {
        RectAnomaly::contains(self, x)
    }

    fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let cs = self.corners();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for c in cs {
            for i in 0..2 {
                lo[i] = lo[i].min(c[i]);
                hi[i] = hi[i].max(c[i]);
            }
        }
        (lo, hi)
    }

    fn boundary_length(&self) -> f64 {
        2.0 * (self.length + self.width)
    }
}
