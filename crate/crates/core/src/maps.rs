//! Interval maps with explicit branch structure.
//!
//! Every map is a finite list of monotone branches with closed-form forward
//! maps, derivatives and inverses. Branch domains are half-open `(lo, hi]`
//! except that the leftmost branch may include the ambient left endpoint.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance-to-critical guard on `|df|`.
pub const DELTA_CRIT: f64 = 1e-8;
/// Round-trip tolerance for inverse branches.
pub const EPS_INV: f64 = 1e-12;
/// Largest admissible total gap between branch domains.
pub const EPS_GAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo < hi && lo.is_finite() && hi.is_finite() {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidInterval { lo, hi })
        }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Half-open membership `lo < x <= hi`.
    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x <= self.hi
    }

    pub fn contains_closed(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Intersection with positive length, if any.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Point at relative position `s` in `[0, 1]`.
    pub fn at(&self, s: f64) -> f64 {
        self.lo + s * (self.hi - self.lo)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}]", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Increasing,
    Decreasing,
}

/// User-supplied branch formula.
pub trait BranchFn: Send + Sync + fmt::Debug {
    fn forward(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn inverse(&self, y: f64) -> f64;
}

#[derive(Debug, Clone)]
pub enum BranchFormula {
    Affine { slope: f64, intercept: f64 },
    /// `1 - a x^2`; `Increasing` is the left half, `Decreasing` the right half.
    Quadratic { a: f64, side: Orientation },
    Custom(Arc<dyn BranchFn>),
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub domain: Interval,
    pub orientation: Orientation,
    formula: BranchFormula,
}

impl Branch {
    pub fn new(domain: Interval, orientation: Orientation, formula: BranchFormula) -> Self {
        Self { domain, orientation, formula }
    }

    pub fn formula(&self) -> &BranchFormula {
        &self.formula
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.formula, BranchFormula::Affine { .. })
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        match &self.formula {
            BranchFormula::Affine { slope, intercept } => slope * x + intercept,
            BranchFormula::Quadratic { a, .. } => 1.0 - a * x * x,
            BranchFormula::Custom(f) => f.forward(x),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match &self.formula {
            BranchFormula::Affine { slope, .. } => *slope,
            BranchFormula::Quadratic { a, .. } => -2.0 * a * x,
            BranchFormula::Custom(f) => f.derivative(x),
        }
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        match &self.formula {
            BranchFormula::Affine { slope, intercept } => (y - intercept) / slope,
            BranchFormula::Quadratic { a, side } => {
                let r = ((1.0 - y).max(0.0) / a).sqrt();
                match side {
                    Orientation::Increasing => -r,
                    Orientation::Decreasing => r,
                }
            }
            BranchFormula::Custom(f) => f.inverse(y),
        }
    }

    pub fn image(&self) -> Interval {
        let a = self.forward(self.domain.lo);
        let b = self.forward(self.domain.hi);
        Interval { lo: a.min(b), hi: a.max(b) }
    }

    /// Preimage of `target` under this branch, or `None` if it misses the image.
    pub fn pull_back(&self, target: &Interval) -> Option<Interval> {
        let r = target.intersect(&self.image())?;
        let a = self.inverse(r.lo);
        let b = self.inverse(r.hi);
        let lo = a.min(b).max(self.domain.lo);
        let hi = a.max(b).min(self.domain.hi);
        (lo < hi).then_some(Interval { lo, hi })
    }

    /// Forward image of a subinterval of the domain.
    pub fn push_forward(&self, iv: &Interval) -> Interval {
        let a = self.forward(iv.lo);
        let b = self.forward(iv.hi);
        Interval { lo: a.min(b), hi: a.max(b) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    MarkovExpanding,
    Unimodal,
    Custom,
}

/// Named constructions that can be rebuilt from a descriptor.
#[derive(Debug, Clone, PartialEq)]
pub enum MapFamily {
    Doubling,
    Tent { slope: f64 },
    Quadratic { a: f64 },
    Custom { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDescriptor {
    pub lo: f64,
    pub hi: f64,
    pub dir: Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDescriptor {
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub branches: Vec<BranchDescriptor>,
}

#[derive(Debug, Clone)]
pub struct PiecewiseMap {
    pub ambient: Interval,
    branches: Vec<Branch>,
    kind: MapKind,
    family: MapFamily,
    include_lo: bool,
}

impl PiecewiseMap {
    /// Builds and validates a map. Branches must be sorted left to right.
    pub fn new(
        ambient: Interval,
        branches: Vec<Branch>,
        kind: MapKind,
        family: MapFamily,
        include_lo: bool,
    ) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidParameter("map has no branches".into()));
        }
        let mut gap = (branches[0].domain.lo - ambient.lo).abs()
            + (ambient.hi - branches[branches.len() - 1].domain.hi).abs();
        for w in branches.windows(2) {
            if w[1].domain.lo < w[0].domain.hi {
                return Err(Error::InvalidParameter("branch domains overlap".into()));
            }
            gap += w[1].domain.lo - w[0].domain.hi;
        }
        if gap > EPS_GAP {
            return Err(Error::InvalidParameter(format!("branch gaps total {gap:e}")));
        }
        let tol = 1e-12 * ambient.len().max(1.0);
        for (i, b) in branches.iter().enumerate() {
            let img = b.image();
            if img.lo < ambient.lo - tol || img.hi > ambient.hi + tol {
                return Err(Error::InvalidParameter(format!("branch {i} image {img} leaves the ambient interval")));
            }
            let sign = match b.orientation {
                Orientation::Increasing => 1.0,
                Orientation::Decreasing => -1.0,
            };
            let mut prev = b.forward(b.domain.lo);
            for k in 1..=64 {
                let x = b.domain.at(k as f64 / 65.0);
                let y = b.forward(x);
                if sign * (y - prev) <= 0.0 || b.derivative(x) == 0.0 {
                    return Err(Error::InvalidParameter(format!("branch {i} is not strictly monotone")));
                }
                if (b.inverse(y) - x).abs() > 1e-10 * ambient.len().max(1.0) {
                    return Err(Error::InvalidParameter(format!("branch {i} inverse does not round-trip")));
                }
                prev = y;
            }
        }
        Ok(Self { ambient, branches, kind, family, include_lo })
    }

    /// `f(x) = 2x mod 1` on `(0, 1]`.
    pub fn doubling() -> Self {
        let ambient = Interval { lo: 0.0, hi: 1.0 };
        let branches = vec![
            Branch::new(
                Interval { lo: 0.0, hi: 0.5 },
                Orientation::Increasing,
                BranchFormula::Affine { slope: 2.0, intercept: 0.0 },
            ),
            Branch::new(
                Interval { lo: 0.5, hi: 1.0 },
                Orientation::Increasing,
                BranchFormula::Affine { slope: 2.0, intercept: -1.0 },
            ),
        ];
        Self::new(ambient, branches, MapKind::MarkovExpanding, MapFamily::Doubling, false)
            .expect("doubling map is valid")
    }

    /// `f(x) = s min(x, 1 - x)` on `[0, 1]`.
    pub fn tent(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope <= 2.0) {
            return Err(Error::InvalidParameter(format!("tent slope {slope} not in (0, 2]")));
        }
        let ambient = Interval { lo: 0.0, hi: 1.0 };
        let branches = vec![
            Branch::new(
                Interval { lo: 0.0, hi: 0.5 },
                Orientation::Increasing,
                BranchFormula::Affine { slope, intercept: 0.0 },
            ),
            Branch::new(
                Interval { lo: 0.5, hi: 1.0 },
                Orientation::Decreasing,
                BranchFormula::Affine { slope: -slope, intercept: slope },
            ),
        ];
        let kind = if slope == 2.0 { MapKind::MarkovExpanding } else { MapKind::Custom };
        Self::new(ambient, branches, kind, MapFamily::Tent { slope }, true)
    }

    /// `f(x) = 1 - a x^2` on `[-b, b]` with `f(-b) = -b`.
    pub fn quadratic(a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 2.0) {
            return Err(Error::InvalidParameter(format!("quadratic parameter {a} not in (0, 2]")));
        }
        let b = quadratic_boundary(a);
        let ambient = Interval { lo: -b, hi: b };
        let branches = vec![
            Branch::new(
                Interval { lo: -b, hi: 0.0 },
                Orientation::Increasing,
                BranchFormula::Quadratic { a, side: Orientation::Increasing },
            ),
            Branch::new(
                Interval { lo: 0.0, hi: b },
                Orientation::Decreasing,
                BranchFormula::Quadratic { a, side: Orientation::Decreasing },
            ),
        ];
        Self::new(ambient, branches, MapKind::Unimodal, MapFamily::Quadratic { a }, true)
    }

    pub fn from_descriptor(desc: &MapDescriptor) -> Result<Self> {
        let param = |key: &str| {
            desc.params
                .get(key)
                .copied()
                .ok_or_else(|| Error::InvalidParameter(format!("map kind {} needs parameter {key}", desc.kind)))
        };
        match desc.kind.as_str() {
            "doubling" => Ok(Self::doubling()),
            "tent" => Self::tent(param("s")?),
            "quadratic" => Self::quadratic(param("a")?),
            other => Err(Error::InvalidParameter(format!("unknown map kind {other}"))),
        }
    }

    pub fn descriptor(&self) -> MapDescriptor {
        let (kind, params) = match &self.family {
            MapFamily::Doubling => ("doubling".to_string(), BTreeMap::new()),
            MapFamily::Tent { slope } => ("tent".to_string(), BTreeMap::from([("s".to_string(), *slope)])),
            MapFamily::Quadratic { a } => ("quadratic".to_string(), BTreeMap::from([("a".to_string(), *a)])),
            MapFamily::Custom { name } => (name.clone(), BTreeMap::new()),
        };
        let branches = self
            .branches
            .iter()
            .map(|b| BranchDescriptor { lo: b.domain.lo, hi: b.domain.hi, dir: b.orientation })
            .collect();
        MapDescriptor { kind, params, branches }
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, id: usize) -> &Branch {
        &self.branches[id]
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    /// True when every branch is affine with the same `|slope|`.
    pub fn is_uniformly_affine(&self) -> bool {
        let mut slope = None;
        self.branches.iter().all(|b| match b.formula {
            BranchFormula::Affine { slope: s, .. } => match slope {
                None => {
                    slope = Some(s.abs());
                    true
                }
                Some(v) => v == s.abs(),
            },
            _ => false,
        })
    }

    pub fn branch_of(&self, x: f64) -> Option<usize> {
        if self.include_lo && x == self.ambient.lo {
            return Some(0);
        }
        self.branches.iter().position(|b| b.domain.contains(x))
    }

    pub fn step(&self, x: f64) -> Result<f64> {
        let i = self.branch_of(x).ok_or(Error::OutOfDomain { x })?;
        Ok(self.branches[i].forward(x))
    }

    /// `f^n(x)` by repeated branch dispatch.
    pub fn eval(&self, x: f64, n: usize) -> Result<f64> {
        (0..n).try_fold(x, |y, _| self.step(y))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        let i = self.branch_of(x).ok_or(Error::OutOfDomain { x })?;
        Ok(self.branches[i].derivative(x))
    }

    /// `(log |df(f^k x)|)` for `k < n`.
    pub fn log_deriv_orbit(&self, x: f64, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut y = x;
        for _ in 0..n {
            let i = self.branch_of(y).ok_or(Error::OutOfDomain { x: y })?;
            let d = self.branches[i].derivative(y).abs();
            if d <= DELTA_CRIT {
                return Err(Error::NearCritical { x: y, deriv: d });
            }
            out.push(d.ln());
            y = self.branches[i].forward(y);
        }
        Ok(out)
    }

    /// Preimage of `target` under the inverse branches of `word`, applied last symbol first.
    pub fn inverse_branch_compose(&self, word: &[usize], target: &Interval) -> Result<Interval> {
        let mut running = *target;
        for (position, &b) in word.iter().enumerate().rev() {
            running = self.branches[b]
                .pull_back(&running)
                .ok_or(Error::EmptyPreimage { position })?;
        }
        Ok(running)
    }

    /// Forward image of `x` along the given branch word, without dispatch.
    #[inline]
    pub fn apply_word(&self, word: &[usize], x: f64) -> f64 {
        word.iter().fold(x, |y, &b| self.branches[b].forward(y))
    }

    /// Pointwise inverse along `word`, clamping into each branch image.
    #[inline]
    pub fn inverse_word(&self, word: &[usize], y: f64) -> f64 {
        word.iter().rev().fold(y, |z, &b| {
            let br = &self.branches[b];
            br.inverse(br.image().clamp(z))
        })
    }

    /// `d/dx f^{|word|}` at `x` along `word`.
    pub fn word_derivative(&self, word: &[usize], x: f64) -> f64 {
        let mut y = x;
        let mut d = 1.0;
        for &b in word {
            let br = &self.branches[b];
            d *= br.derivative(y);
            y = br.forward(y);
        }
        d
    }

    /// `sum_k log |df(f^k x)|` along `word`, guarded by [`DELTA_CRIT`].
    pub fn word_log_derivative(&self, word: &[usize], x: f64) -> Result<f64> {
        let mut y = x;
        let mut s = 0.0;
        for &b in word {
            let br = &self.branches[b];
            let d = br.derivative(y).abs();
            if d <= DELTA_CRIT {
                return Err(Error::NearCritical { x: y, deriv: d });
            }
            s += d.ln();
            y = br.forward(y);
        }
        Ok(s)
    }
}

fn quadratic_boundary(a: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * a).sqrt()) / (2.0 * a)
}

/// The quadratic family `f_a(x) = 1 - a x^2` with its distinguished points.
#[derive(Debug, Clone)]
pub struct UnimodalMap {
    a: f64,
    map: PiecewiseMap,
}

impl UnimodalMap {
    pub fn quadratic(a: f64) -> Result<Self> {
        Ok(Self { a, map: PiecewiseMap::quadratic(a)? })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn map(&self) -> &PiecewiseMap {
        &self.map
    }

    pub fn critical_point(&self) -> f64 {
        0.0
    }

    pub fn order(&self) -> f64 {
        2.0
    }

    /// Fixed point on the side opposite the fixed endpoint, with `f'(alpha) < -1`.
    pub fn alpha(&self) -> Result<f64> {
        let alpha = (-1.0 + (1.0 + 4.0 * self.a).sqrt()) / (2.0 * self.a);
        if -2.0 * self.a * alpha < -1.0 {
            Ok(alpha)
        } else {
            Err(Error::NoAlpha { a: self.a })
        }
    }

    /// The point on the fixed-endpoint side with `f(alpha1) = -alpha`.
    pub fn alpha1(&self) -> Result<f64> {
        let alpha = self.alpha()?;
        Ok(-((1.0 + alpha) / self.a).sqrt())
    }

    /// `A = (-|alpha|, |alpha|)`.
    pub fn base_a(&self) -> Result<Interval> {
        let alpha = self.alpha()?;
        Interval::new(-alpha, alpha).map_err(|_| Error::Degenerate)
    }

    /// `Â = (-|alpha1|, |alpha1|)`.
    pub fn base_a_hat(&self) -> Result<Interval> {
        let alpha1 = self.alpha1()?.abs();
        Interval::new(-alpha1, alpha1).map_err(|_| Error::Degenerate)
    }
}

impl Deref for UnimodalMap {
    type Target = PiecewiseMap;

    fn deref(&self) -> &PiecewiseMap {
        &self.map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubling_iterates() {
        let f = PiecewiseMap::doubling();
        assert_abs_diff_eq!(f.eval(0.3, 1).unwrap(), 0.6, epsilon = 1e-15);
        assert_eq!(f.eval(0.3, 0).unwrap(), 0.3);
        assert!(matches!(f.eval(0.0, 1), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn quadratic_critical_orbit() {
        let f = UnimodalMap::quadratic(2.0).unwrap();
        assert_eq!(f.eval(0.0, 2).unwrap(), -1.0);
        assert_abs_diff_eq!(f.ambient.lo, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn log_derivatives() {
        let f = PiecewiseMap::doubling();
        let v = f.log_deriv_orbit(0.3, 4).unwrap();
        assert!(v.iter().all(|&d| (d - 2f64.ln()).abs() < 1e-15));
        let q = UnimodalMap::quadratic(2.0).unwrap();
        assert_abs_diff_eq!(q.log_deriv_orbit(0.6, 1).unwrap()[0], 2.4f64.ln(), epsilon = 1e-14);
        assert!(matches!(q.log_deriv_orbit(0.0, 3), Err(Error::NearCritical { .. })));
    }

    #[test]
    fn inverse_compose_examples() {
        let f = PiecewiseMap::doubling();
        let unit = Interval::new(0.0, 1.0).unwrap();
        assert_eq!(f.inverse_branch_compose(&[0], &unit).unwrap(), Interval { lo: 0.0, hi: 0.5 });
        assert_eq!(f.inverse_branch_compose(&[0, 0], &unit).unwrap(), Interval { lo: 0.0, hi: 0.25 });
        let quarter = Interval::new(0.0, 0.25).unwrap();
        assert_eq!(f.inverse_branch_compose(&[1], &quarter).unwrap(), Interval { lo: 0.5, hi: 0.625 });
    }

    #[test]
    fn empty_preimage_reported() {
        let t = PiecewiseMap::tent(1.0).unwrap();
        let high = Interval::new(0.8, 0.9).unwrap();
        assert!(matches!(t.inverse_branch_compose(&[0], &high), Err(Error::EmptyPreimage { position: 0 })));
    }

    #[test]
    fn alpha_points() {
        let f = UnimodalMap::quadratic(2.0).unwrap();
        assert_abs_diff_eq!(f.alpha().unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(f.alpha1().unwrap(), -(3f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert!(matches!(UnimodalMap::quadratic(0.5).unwrap().alpha(), Err(Error::NoAlpha { .. })));
    }

    #[test]
    fn descriptor_rebuilds() {
        let q = PiecewiseMap::quadratic(1.9).unwrap();
        let desc = q.descriptor();
        let json = serde_json::to_string(&desc).unwrap();
        let back: MapDescriptor = serde_json::from_str(&json).unwrap();
        let q2 = PiecewiseMap::from_descriptor(&back).unwrap();
        assert_eq!(q2.ambient, q.ambient);
    }
}
