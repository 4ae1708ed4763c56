//! Curve analysis: cache-level plateaus, saturation points and crossovers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::median;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no plateau of two or more samples found")]
    NoPlateauFound,
    #[error("curve never settles within tolerance (last x = {last_x})")]
    NeverSaturates { last_x: u64 },
    #[error("curves do not share any x range")]
    DisjointDomains,
    #[error("expected a {expected:?} axis, got {got:?}")]
    WrongAxis { expected: &'static [XKind], got: XKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XKind {
    Bytes,
    Warps,
    Ilp,
    ChainLen,
}

/// Points with strictly increasing x and finite positive y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyCurve {
    pub x_kind: XKind,
    points: Vec<(u64, f64)>,
}

impl LatencyCurve {
    pub fn new(x_kind: XKind, points: Vec<(u64, f64)>) -> Result<Self, CurveError> {
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CurveError::InvalidCurve(format!("x not strictly increasing at {}", w[1].0)));
            }
        }
        if let Some(&(x, y)) = points.iter().find(|p| !(p.1.is_finite() && p.1 > 0.0)) {
            return Err(CurveError::InvalidCurve(format!("y = {y} at x = {x} is not finite and positive")));
        }
        Ok(LatencyCurve { x_kind, points })
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, CurveError> {
        Self::new(self.x_kind, self.points.iter().map(|&(x, y)| (x, y * factor)).collect())
    }

    /// Linear interpolation inside the sampled range.
    pub fn value_at(&self, x: f64) -> Option<f64> {
        let p = &self.points;
        let (first, last) = (p.first()?, p.last()?);
        if x < first.0 as f64 || x > last.0 as f64 {
            return None;
        }
        let i = p.partition_point(|q| (q.0 as f64) < x);
        if (p[i].0 as f64) == x {
            return Some(p[i].1);
        }
        let (x0, y0) = (p[i - 1].0 as f64, p[i - 1].1);
        let (x1, y1) = (p[i].0 as f64, p[i].1);
        Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub label: String,
    pub plateau_cycles: f64,
    pub extent_lower_bytes: u64,
    pub extent_upper_bytes: u64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyReport {
    pub levels: Vec<Level>,
    pub boundaries: Vec<u64>,
}

fn level_label(i: usize, n: usize) -> String {
    if n > 1 && i + 1 == n {
        "Global".into()
    } else {
        format!("L{}", i + 1)
    }
}

fn median_filter3(y: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(y.len() - 1);
            median(&[y[lo], y[i], y[hi]])
        })
        .collect()
}

/// Split a bytes-axis latency curve into plateaus.
///
/// After a width-3 median filter, a new segment starts where a sample reaches
/// `min_jump_ratio` times the running median of the current segment. Single
/// sample segments are transitions, not levels. Each boundary is the
/// geometric mean of the last x of one level and the first x of the next, so
/// level extents partition the sampled range.
pub fn detect_boundaries(curve: &LatencyCurve, min_jump_ratio: f64) -> Result<HierarchyReport, CurveError> {
    if curve.x_kind != XKind::Bytes {
        return Err(CurveError::WrongAxis { expected: &[XKind::Bytes], got: curve.x_kind });
    }
    if !(min_jump_ratio.is_finite() && min_jump_ratio > 1.0) {
        return Err(CurveError::InvalidCurve(format!("jump ratio {min_jump_ratio} must exceed 1")));
    }
    let pts = curve.points();
    if pts.len() < 3 {
        return Err(CurveError::TooFewPoints { needed: 3, got: pts.len() });
    }
    let raw: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let filtered = median_filter3(&raw);

    let mut segments: Vec<std::ops::Range<usize>> = Vec::new();
    let mut start = 0;
    for i in 1..filtered.len() {
        let reference = median(&filtered[start..i]);
        if filtered[i] >= min_jump_ratio * reference {
            segments.push(start..i);
            start = i;
        }
    }
    segments.push(start..filtered.len());
    let plateaus: Vec<_> = segments.into_iter().filter(|s| s.len() >= 2).collect();
    if plateaus.is_empty() {
        return Err(CurveError::NoPlateauFound);
    }

    let boundaries: Vec<u64> = plateaus
        .windows(2)
        .map(|w| {
            let a = pts[w[0].end - 1].0 as f64;
            let b = pts[w[1].start].0 as f64;
            (a * b).sqrt().round() as u64
        })
        .collect();
    let n = plateaus.len();
    let levels = plateaus
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            let ys = &raw[seg.clone()];
            let plateau = median(ys);
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().copied().fold(0.0, f64::max);
            let spread = (hi - lo) / plateau;
            Level {
                label: level_label(i, n),
                plateau_cycles: plateau,
                extent_lower_bytes: if i == 0 { pts[0].0 } else { boundaries[i - 1] },
                extent_upper_bytes: if i + 1 == n { pts[pts.len() - 1].0 } else { boundaries[i] },
                confidence: (1.0 - spread / (min_jump_ratio - 1.0)).clamp(0.0, 1.0),
            }
        })
        .collect();
    Ok(HierarchyReport { levels, boundaries })
}

/// Which direction of y counts as better when looking for saturation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSense {
    HigherIsBetter,
    LowerIsBetter,
}

/// Smallest x from which every later sample stays within `tolerance` of the
/// maximum of that tail, with at least `window` samples in the tail.
/// Latency curves are inverted first.
pub fn saturation_point(
    curve: &LatencyCurve,
    window: usize,
    tolerance: f64,
    sense: CurveSense,
) -> Result<u64, CurveError> {
    if !matches!(curve.x_kind, XKind::Warps | XKind::Ilp) {
        return Err(CurveError::WrongAxis { expected: &[XKind::Warps, XKind::Ilp], got: curve.x_kind });
    }
    if window == 0 || !(0.0..1.0).contains(&tolerance) {
        return Err(CurveError::InvalidCurve(format!("window {window} / tolerance {tolerance} out of range")));
    }
    let pts = curve.points();
    let needed = window.max(3);
    if pts.len() < needed {
        return Err(CurveError::TooFewPoints { needed, got: pts.len() });
    }
    let v: Vec<f64> = pts
        .iter()
        .map(|p| match sense {
            CurveSense::HigherIsBetter => p.1,
            CurveSense::LowerIsBetter => 1.0 / p.1,
        })
        .collect();
    for i in 0..=v.len() - window {
        let tail = &v[i..];
        let hi = tail.iter().copied().fold(f64::MIN, f64::max);
        let lo = tail.iter().copied().fold(f64::MAX, f64::min);
        if lo >= (1.0 - tolerance) * hi {
            return Ok(pts[i].0);
        }
    }
    Err(CurveError::NeverSaturates { last_x: pts[pts.len() - 1].0 })
}

/// First x in the shared domain where `a - b` changes sign.
///
/// Both curves are linearly interpolated on the union of their x samples. A
/// zero difference after a nonzero one counts when the sign flips afterwards
/// or the shared domain ends there. Identical curves have no crossover.
pub fn crossover(a: &LatencyCurve, b: &LatencyCurve) -> Result<Option<f64>, CurveError> {
    if a.x_kind != b.x_kind {
        return Err(CurveError::InvalidCurve(format!("axis mismatch {:?} vs {:?}", a.x_kind, b.x_kind)));
    }
    let (pa, pb) = (a.points(), b.points());
    if pa.is_empty() || pb.is_empty() {
        return Err(CurveError::TooFewPoints { needed: 1, got: 0 });
    }
    let lo = pa[0].0.max(pb[0].0);
    let hi = pa[pa.len() - 1].0.min(pb[pb.len() - 1].0);
    if lo > hi {
        return Err(CurveError::DisjointDomains);
    }
    let mut xs: Vec<u64> = pa.iter().chain(pb).map(|p| p.0).filter(|x| (lo..=hi).contains(x)).collect();
    xs.sort_unstable();
    xs.dedup();
    let diff: Vec<(f64, f64)> = xs
        .iter()
        .map(|&x| {
            let x = x as f64;
            (x, a.value_at(x).unwrap_or(0.0) - b.value_at(x).unwrap_or(0.0))
        })
        .collect();

    let mut last: Option<(f64, f64)> = None;
    let mut touch: Option<f64> = None;
    for &(x, d) in &diff {
        if d == 0.0 {
            if last.is_some() && touch.is_none() {
                touch = Some(x);
            }
            continue;
        }
        if let Some((x0, d0)) = last {
            if d0.signum() != d.signum() {
                return Ok(Some(touch.unwrap_or_else(|| x0 + (x - x0) * d0 / (d0 - d))));
            }
        }
        touch = None;
        last = Some((x, d));
    }
    Ok(touch)
}
