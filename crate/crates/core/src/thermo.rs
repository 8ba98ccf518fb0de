//! Induced potentials, the pressure `P_L`, equilibrium measures and their lifts.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{exponential_bound, ols};
use crate::maps::{MapKind, PiecewiseMap, DELTA_CRIT};
use crate::scheme::{ElementFamily, InducingScheme};
use crate::shift::{
    decode, gibbs_constants, gibbs_from_table, leading_eigen, variation, CylinderMeasure, ShiftPotential,
    StateTable,
};

/// A potential `φ` on the interval.
#[derive(Clone)]
pub enum BasePotential {
    /// `ξ_{c,t} = -t log|df| + c`.
    Geometric { t: f64, c: f64 },
    Custom { name: String, f: Arc<dyn Fn(f64) -> f64 + Send + Sync> },
}

impl fmt::Debug for BasePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Geometric { t, c } => write!(f, "Geometric {{ t: {t}, c: {c} }}"),
            Self::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl BasePotential {
    pub fn phi_t(t: f64) -> Self {
        Self::Geometric { t, c: 0.0 }
    }

    pub fn constant(c: f64) -> Self {
        Self::Geometric { t: 0.0, c }
    }

    pub fn value(&self, map: &PiecewiseMap, x: f64) -> Result<f64> {
        match self {
            Self::Geometric { t, c } if *t == 0.0 => Ok(*c),
            Self::Geometric { t, c } => {
                let d = map.derivative(x)?.abs();
                if d <= DELTA_CRIT {
                    return Err(Error::NearCritical { x, deriv: d });
                }
                Ok(-t * d.ln() + c)
            }
            Self::Custom { f, .. } => Ok(f(x)),
        }
    }
}

/// `φ̄(x) = Σ_{k<τ(J)} φ(f^k x)` on the elements of a scheme.
pub struct InducedPotential<'a> {
    scheme: &'a InducingScheme,
    base: BasePotential,
    constant_per_element: bool,
    extrema: Vec<(f64, f64)>,
}

fn sample_indices(fam: &ElementFamily, constant: bool) -> Vec<u64> {
    if constant || fam.count == 1 {
        vec![0]
    } else if fam.count <= 16 {
        (0..fam.count).collect()
    } else {
        (0..16).map(|k| k * (fam.count - 1) / 15).collect()
    }
}

impl<'a> InducedPotential<'a> {
    pub fn new(scheme: &'a InducingScheme, base: BasePotential) -> Result<Self> {
        let constant_per_element = match base {
            BasePotential::Geometric { t, .. } => t == 0.0 || scheme.map().is_uniformly_affine(),
            BasePotential::Custom { .. } => false,
        };
        let mut pot = Self { scheme, base, constant_per_element, extrema: Vec::new() };
        let extrema = scheme
            .families()
            .par_iter()
            .map(|fam| pot.family_extrema(fam))
            .collect::<Result<Vec<_>>>()?;
        pot.extrema = extrema;
        Ok(pot)
    }

    fn family_extrema(&self, fam: &ElementFamily) -> Result<(f64, f64)> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let points: &[f64] = if self.constant_per_element {
            &[0.5]
        } else {
            &[0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0]
        };
        for i in sample_indices(fam, self.constant_per_element) {
            let j = fam.piece(i);
            let word = fam.piece_word(i);
            for &s in points {
                let v = self.eval_word(&word, fam.tau, j.at(s))?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Ok((lo, hi))
    }

    fn eval_word(&self, word: &[usize], tau: u32, x: f64) -> Result<f64> {
        let map = self.scheme.map();
        match &self.base {
            BasePotential::Geometric { t, c } if *t == 0.0 => Ok(c * tau as f64),
            BasePotential::Geometric { t, c } => Ok(-t * map.word_log_derivative(word, x)? + c * tau as f64),
            BasePotential::Custom { f, .. } => {
                let mut y = x;
                let mut s = 0.0;
                for &b in word {
                    s += f(y);
                    y = map.branch(b).forward(y);
                }
                Ok(s)
            }
        }
    }

    pub fn scheme(&self) -> &'a InducingScheme {
        self.scheme
    }

    pub fn base(&self) -> &BasePotential {
        &self.base
    }

    /// True when `φ̄` is constant on every element.
    pub fn is_element_constant(&self) -> bool {
        self.constant_per_element
    }

    pub fn eval(&self, symbol: u64, x: f64) -> Result<f64> {
        let (f, i) = self.scheme.family_of(symbol);
        let fam = &self.scheme.families()[f];
        self.eval_word(&fam.piece_word(i), fam.tau, x)
    }

    pub fn eval_at(&self, x: f64) -> Result<f64> {
        let s = self.scheme.locate(x).ok_or(Error::NotInW { x })?;
        self.eval(s, x)
    }

    pub fn inf(&self, symbol: u64) -> f64 {
        self.extrema[self.scheme.family_of(symbol).0].0
    }

    pub fn sup(&self, symbol: u64) -> f64 {
        self.extrema[self.scheme.family_of(symbol).0].1
    }

    pub fn family_sup(&self, family: usize) -> f64 {
        self.extrema[family].1
    }

    /// `Φ - c τ` on the first `alphabet` symbols.
    pub fn shift_potential(&self, alphabet: u64, c: f64) -> InducedShift<'_, 'a> {
        InducedShift { pot: self, alphabet: alphabet.min(self.scheme.len()) as usize, c }
    }
}

/// `Φ = (φ̄ - cτ) ∘ h` on the truncated alphabet.
pub struct InducedShift<'p, 'a> {
    pot: &'p InducedPotential<'a>,
    alphabet: usize,
    c: f64,
}

impl InducedShift<'_, '_> {
    fn value(&self, word: &[usize]) -> Result<f64> {
        let s0 = word[0] as u64;
        let tau = self.pot.scheme.tau(s0) as f64;
        if self.pot.constant_per_element {
            return Ok(self.pot.sup(s0) - self.c * tau);
        }
        let cycle: Vec<u64> = word.iter().map(|&s| s as u64).collect();
        let x = self.pot.scheme.periodic_point(&cycle)?;
        Ok(self.pot.eval(s0, x)? - self.c * tau)
    }

    pub fn taus(&self) -> Vec<f64> {
        (0..self.alphabet as u64).map(|s| self.pot.scheme.tau(s) as f64).collect()
    }
}

impl ShiftPotential for InducedShift<'_, '_> {
    fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    fn periodic_value(&self, word: &[usize]) -> f64 {
        self.value(word).unwrap_or(f64::NAN)
    }

    fn memory(&self) -> Option<usize> {
        self.pot.constant_per_element.then_some(1)
    }

    fn oscillation(&self, word: &[usize]) -> f64 {
        if self.pot.constant_per_element {
            return 0.0;
        }
        let scheme = self.pot.scheme;
        let words: Vec<Vec<usize>> = word.iter().map(|&s| scheme.word(s as u64)).collect();
        let w = scheme.w();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..=8 {
            let u = w.at(0.02 + 0.96 * k as f64 / 8.0);
            let x = words
                .iter()
                .rev()
                .fold(u, |z, bw| scheme.map().inverse_word(bw, w.clamp(z)));
            if let Ok(v) = self.pot.eval(word[0] as u64, x) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if hi >= lo {
            hi - lo
        } else {
            f64::NAN
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureOptions {
    /// Number of leading symbols (by τ, then position) kept in the alphabet.
    pub alphabet: u64,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureRoot {
    pub value: f64,
    /// `|P_G(φ̄ - value·τ)|`.
    pub residual: f64,
    /// `max_J φ̄(x_J)/τ(J)` over fixed points of `F`.
    pub lower_bound: f64,
    /// `max(0, P_G(φ̄))`.
    pub upper_bound: f64,
    /// Root with the top two τ levels of the alphabet dropped.
    pub coarse: Option<f64>,
    pub leakage: f64,
    pub alphabet: u64,
}

fn root_on_table(table: &StateTable, taus: &[f64]) -> Result<(f64, f64)> {
    let g = |c: f64| leading_eigen(&table.shifted(taus, c)).map(|s| s.log_lambda);
    let (mut lo, mut hi) = (-50.0, 50.0);
    if !(g(lo)? > 0.0 && g(hi)? < 0.0) {
        return Err(Error::NoBracket { lo, hi });
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm == 0.0 || hi - lo <= 1e-15 * mid.abs().max(1.0) {
            break;
        }
        if gm > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((mid, g(mid)?.abs()))
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Mass outside the alphabet relative to the total, at `c`.
fn truncation_leakage(pot: &InducedPotential<'_>, alphabet: u64, c: f64) -> f64 {
    let scheme = pot.scheme();
    let mut kept = Vec::new();
    let mut missing = Vec::new();
    let mut levels: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut offset = 0u64;
    for (fi, fam) in scheme.families().iter().enumerate() {
        let log_each = pot.family_sup(fi) - c * fam.tau as f64;
        let inside = alphabet.saturating_sub(offset).min(fam.count);
        if inside > 0 {
            kept.push(log_each + (inside as f64).ln());
        }
        if fam.count > inside {
            missing.push(log_each + ((fam.count - inside) as f64).ln());
        }
        levels.entry(fam.tau).or_default().push(log_each + (fam.count as f64).ln());
        offset += fam.count;
    }
    if let (Some((_, last)), Some(rate)) = (
        levels.iter().next_back(),
        tail_rate(levels.iter().map(|(&t, v)| (t as f64, log_sum_exp(v)))),
    ) {
        if rate >= 1.0 {
            return 1.0;
        }
        missing.push(log_sum_exp(last) + (rate / (1.0 - rate)).ln());
    }
    let kept = log_sum_exp(&kept);
    let missing = log_sum_exp(&missing);
    if missing == f64::INFINITY {
        return 1.0;
    }
    1.0 / (1.0 + (kept - missing).exp())
}

/// `P_L(φ)` as the root of `c ↦ P_G(φ̄ - cτ)`.
pub fn compute_pl(pot: &InducedPotential<'_>, opts: &PressureOptions) -> Result<PressureRoot> {
    let scheme = pot.scheme();
    let alphabet = opts.alphabet.min(scheme.len());
    let shift = pot.shift_potential(alphabet, 0.0);
    let table = StateTable::build(&shift, opts.depth)?;
    let taus = shift.taus();
    let (value, residual) = root_on_table(&table, &taus)?;

    let upper_bound = leading_eigen(&table)?.log_lambda.max(0.0);
    let mut lower_bound = f64::NEG_INFINITY;
    for s in 0..alphabet.min(1 << 16) {
        let x = scheme.periodic_point(&[s])?;
        lower_bound = lower_bound.max(pot.eval(s, x)? / scheme.tau(s) as f64);
    }

    let top = scheme.max_tau(alphabet);
    let coarse_alphabet = scheme.alphabet_up_to_tau(top.saturating_sub(2));
    let coarse = if coarse_alphabet > 0 && coarse_alphabet < alphabet {
        let cs = pot.shift_potential(coarse_alphabet, 0.0);
        let ct = StateTable::build(&cs, opts.depth)?;
        root_on_table(&ct, &cs.taus()).ok().map(|r| r.0)
    } else {
        None
    };
    Ok(PressureRoot {
        value,
        residual,
        lower_bound,
        upper_bound,
        coarse,
        leakage: truncation_leakage(pot, alphabet, value),
        alphabet,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationFit {
    pub a: f64,
    pub r: f64,
    pub pass: bool,
    pub table: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCheck {
    /// `(τ, log of the level term)`.
    pub log_terms: Vec<(u32, f64)>,
    pub log_sum: f64,
    /// Ratios of consecutive level terms, last level first.
    pub tail_ratios: Vec<f64>,
    /// Per-unit-τ decay rate fitted on the upper half of the levels.
    pub rate: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub k: f64,
    pub theta: f64,
    pub max_residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialReport {
    pub p1: VariationFit,
    /// `Σ_J sup_J exp(φ̄ + shift·τ)`.
    pub p2: SeriesCheck,
    pub p2_shift: f64,
    pub p3_eps0: Option<f64>,
    pub p3_pass: bool,
    pub p4: Option<TailBound>,
}

/// Default ε-grid `2^{-k}`, `k = 1..=12`.
pub fn default_eps_grid() -> Vec<f64> {
    (1..=12).map(|k| 0.5f64.powi(k)).collect()
}

const TAIL_RATE_MAX: f64 = 0.99;

/// `exp(slope)` of a least-squares line through the upper half (at least three) of `(x, log term)` points.
fn tail_rate(points: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.filter(|p| p.1.is_finite()).collect();
    if pts.len() < 3 {
        return None;
    }
    let keep = (pts.len() / 2).max(3);
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts[pts.len() - keep..].iter().copied().unzip();
    ols(&xs, &ys).map(|f| f.slope.exp())
}

/// Groups `log(count) + log_value(family)` by τ and checks the last five ratios.
fn level_series(scheme: &InducingScheme, log_value: impl Fn(usize, &ElementFamily) -> f64) -> SeriesCheck {
    let mut levels: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (fi, fam) in scheme.families().iter().enumerate() {
        levels
            .entry(fam.tau)
            .or_default()
            .push(log_value(fi, fam) + (fam.count as f64).ln());
    }
    let log_terms: Vec<(u32, f64)> = levels.iter().map(|(&t, v)| (t, log_sum_exp(v))).collect();
    let all: Vec<f64> = log_terms.iter().map(|t| t.1).collect();
    let tail_ratios: Vec<f64> = log_terms
        .windows(2)
        .rev()
        .take(5)
        .map(|w| (w[1].1 - w[0].1).exp())
        .collect();
    let rate = tail_rate(log_terms.iter().map(|&(t, l)| (t as f64, l)));
    let pass = rate.is_some_and(|r| r < TAIL_RATE_MAX);
    SeriesCheck { log_terms, log_sum: log_sum_exp(&all), tail_ratios, rate, pass }
}

/// (P2) at shift `c`: `Σ_J sup exp(φ̄ + cτ)`.
pub fn p2_series(pot: &InducedPotential<'_>, c: f64) -> SeriesCheck {
    level_series(pot.scheme(), |fi, fam| pot.family_sup(fi) + c * fam.tau as f64)
}

/// (P3) at `ε`: `Σ_J τ sup exp(φ̄ - P τ + ε τ)`.
pub fn p3_series(pot: &InducedPotential<'_>, pressure: f64, eps: f64) -> SeriesCheck {
    level_series(pot.scheme(), |fi, fam| {
        let t = fam.tau as f64;
        t.ln() + pot.family_sup(fi) + (eps - pressure) * t
    })
}

/// Shift below which (P2) is expected to hold, from the last level ratio.
pub fn p2_abscissa(pot: &InducedPotential<'_>) -> f64 {
    let s = p2_series(pot, 0.0);
    let n = s.log_terms.len();
    if n < 2 {
        return 0.0;
    }
    let (t1, l1) = s.log_terms[n - 2];
    let (t2, l2) = s.log_terms[n - 1];
    -(l2 - l1) / (t2 as f64 - t1 as f64)
}

/// Checks (P1)–(P3); (P4) is filled in once a Gibbs measure exists.
pub fn check_p(
    pot: &InducedPotential<'_>,
    eps_grid: &[f64],
    opts: &PressureOptions,
    pressure: Option<f64>,
) -> Result<PotentialReport> {
    let shift = pot.shift_potential(opts.alphabet, 0.0);
    let mut table = Vec::new();
    for n in 1..=6 {
        table.push((n, variation(&shift, n, 2000)?));
    }
    let p1 = if table.iter().all(|t| t.1 == 0.0) {
        VariationFit { a: 0.0, r: 0.0, pass: true, table }
    } else {
        let (ns, vs): (Vec<f64>, Vec<f64>) = table.iter().map(|&(n, v)| (n as f64, v)).unzip();
        match exponential_bound(&ns, &vs) {
            Some((a, r, _)) => VariationFit { a, r, pass: r < 1.0 && vs.iter().all(|v| v.is_finite()), table },
            None => VariationFit { a: f64::NAN, r: f64::NAN, pass: false, table },
        }
    };
    let p2 = p2_series(pot, 0.0);
    let pressure = match pressure {
        Some(p) => Some(p),
        None => compute_pl(pot, opts).ok().map(|r| r.value),
    };
    let mut eps: Vec<f64> = eps_grid.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let p3_eps0 = pressure.and_then(|p| eps.into_iter().find(|&e| p3_series(pot, p, e).pass));
    Ok(PotentialReport { p1, p2, p2_shift: 0.0, p3_eps0, p3_pass: p3_eps0.is_some(), p4: None })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TBounds {
    pub t0: f64,
    pub t1: f64,
    pub degenerate: bool,
}

impl TBounds {
    pub fn contains(&self, t: f64) -> bool {
        self.t0 < t && t < self.t1
    }
}

/// The admissible `t`-range from `λ₁`, `λ₃`, `γ`.
pub fn t_bounds(lambda1: f64, lambda3: f64, gamma: f64) -> Result<TBounds> {
    if !(lambda1 > 1.0 && lambda3 >= lambda1 && gamma >= 1.0) {
        return Err(Error::InvalidConstants(format!(
            "need lambda3 >= lambda1 > 1 and gamma >= 1, got ({lambda1}, {lambda3}, {gamma})"
        )));
    }
    if (lambda3 / lambda1).ln() <= 1e-12 {
        return Ok(TBounds { t0: f64::NEG_INFINITY, t1: f64::INFINITY, degenerate: true });
    }
    let spread = (lambda3 / lambda1).ln();
    let t1 = lambda3.ln() / spread;
    let t0 = if gamma < lambda1 {
        (gamma / lambda1).ln() / spread
    } else {
        1.0 - lambda1.ln() / gamma.ln()
    };
    Ok(TBounds { t0, t1, degenerate: false })
}

/// An induced measure with its lift to the tower.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerMeasure {
    pub measure: CylinderMeasure,
    pub q: f64,
    pub taus: Vec<u32>,
    /// `ν(J)/Q`, the mass of each level `(J, k)`.
    pub level_mass: Vec<f64>,
}

impl TowerMeasure {
    pub fn levels(&self) -> impl Iterator<Item = (usize, u32, f64)> + '_ {
        self.taus
            .iter()
            .zip(&self.level_mass)
            .enumerate()
            .flat_map(|(s, (&t, &m))| (0..t).map(move |k| (s, k, m)))
    }

    pub fn total_mass(&self) -> f64 {
        self.taus.iter().zip(&self.level_mass).map(|(&t, m)| t as f64 * m).sum()
    }

    /// `∫ φ dL(ν)` by pushing each state's coded point through its levels with branch dispatch.
    pub fn integrate(&self, scheme: &InducingScheme, phi: impl Fn(f64) -> Result<f64> + Sync) -> Result<f64> {
        let m = &self.measure;
        let map = scheme.map();
        let parts: Vec<Result<f64>> = (0..m.states())
            .into_par_iter()
            .map(|s| {
                let w = m.weights[s];
                if w == 0.0 {
                    return Ok(0.0);
                }
                let word: Vec<u64> = decode(s, m.symbols, m.depth).into_iter().map(|x| x as u64).collect();
                let mut y = scheme.periodic_point(&word)?;
                let mut acc = 0.0;
                for _ in 0..scheme.tau(word[0]) {
                    acc += phi(y)?;
                    y = map.step(y)?;
                }
                Ok(w * acc)
            })
            .collect();
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total / self.q)
    }

    /// `∫ log|df| dL(ν)`.
    pub fn lyapunov(&self, scheme: &InducingScheme) -> Result<f64> {
        let map = scheme.map();
        self.integrate(scheme, |x| {
            let d = map.derivative(x)?.abs();
            if d <= DELTA_CRIT {
                return Err(Error::NearCritical { x, deriv: d });
            }
            Ok(d.ln())
        })
    }
}

/// `Q_ν = Σ τ(J) ν(J)` over the measure's alphabet.
pub fn q_of(measure: &CylinderMeasure, scheme: &InducingScheme) -> f64 {
    measure
        .symbol_marginal()
        .iter()
        .enumerate()
        .map(|(s, p)| scheme.tau(s as u64) as f64 * p)
        .sum()
}

fn q_increments(measure: &CylinderMeasure, scheme: &InducingScheme) -> Vec<(f64, f64)> {
    let mut levels: BTreeMap<u32, f64> = BTreeMap::new();
    for (s, p) in measure.symbol_marginal().iter().enumerate() {
        let t = scheme.tau(s as u64);
        *levels.entry(t).or_insert(0.0) += t as f64 * p;
    }
    levels.into_iter().filter(|v| v.1 > 0.0).map(|(t, v)| (t as f64, v.ln())).collect()
}

/// Lifts without the convergence test on `Q`.
pub fn lift_unchecked(measure: &CylinderMeasure, scheme: &InducingScheme) -> TowerMeasure {
    let q = q_of(measure, scheme);
    let marginal = measure.symbol_marginal();
    let taus: Vec<u32> = (0..measure.symbols as u64).map(|s| scheme.tau(s)).collect();
    let level_mass = marginal.iter().map(|p| p / q).collect();
    TowerMeasure { measure: measure.clone(), q, taus, level_mass }
}

/// `L(ν)`, refusing when the τ-level increments of `Q` do not decay.
pub fn lift(measure: &CylinderMeasure, scheme: &InducingScheme) -> Result<TowerMeasure> {
    let inc = q_increments(measure, scheme);
    if inc.len() >= 3 && !tail_rate(inc.into_iter()).is_some_and(|r| r < TAIL_RATE_MAX) {
        return Err(Error::QDiverges);
    }
    Ok(lift_unchecked(measure, scheme))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumOptions {
    pub alphabet: u64,
    pub depth: usize,
    pub audit_depth: usize,
    pub audit_cap: usize,
    pub force: bool,
    pub range: Option<TBounds>,
}

impl EquilibriumOptions {
    pub fn pressure(&self) -> PressureOptions {
        PressureOptions { alphabet: self.alphabet, depth: self.depth }
    }
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub root: PressureRoot,
    pub measure: CylinderMeasure,
    pub tower: TowerMeasure,
    pub report: PotentialReport,
    /// Conditions that failed but were overridden by `force`.
    pub overridden: Vec<&'static str>,
}

/// The equilibrium measure of `φ_t = -t log|df|`.
pub fn equilibrium(scheme: &InducingScheme, t: f64, opts: &EquilibriumOptions) -> Result<Equilibrium> {
    if let Some(range) = opts.range {
        if !range.contains(t) && !opts.force {
            return Err(Error::OutsideRange { t, t0: range.t0, t1: range.t1 });
        }
    }
    let pot = InducedPotential::new(scheme, BasePotential::phi_t(t))?;
    equilibrium_for(&pot, opts)
}

/// The equilibrium measure of an arbitrary induced potential.
pub fn equilibrium_for(pot: &InducedPotential<'_>, opts: &EquilibriumOptions) -> Result<Equilibrium> {
    let scheme = pot.scheme();
    let root = compute_pl(pot, &opts.pressure())?;
    let mut report = check_p(pot, &default_eps_grid(), &opts.pressure(), Some(root.value))?;
    let mut overridden = Vec::new();
    if !report.p2.pass {
        let c = p2_abscissa(pot).min(0.0) - 1.0;
        let shifted = p2_series(pot, c);
        if shifted.pass {
            report.p2 = shifted;
            report.p2_shift = c;
        }
    }
    for (ok, name) in [(report.p1.pass, "(P1)"), (report.p2.pass, "(P2)"), (report.p3_pass, "(P3)")] {
        if !ok {
            if !opts.force {
                return Err(Error::ConditionFailed {
                    condition: name,
                    detail: format!("at truncation {} the series does not pass its tail test", opts.alphabet),
                });
            }
            overridden.push(name);
        }
    }
    let normalized = pot.shift_potential(root.alphabet, root.value);
    let table = StateTable::build(&normalized, opts.depth)?;
    let mut measure = gibbs_from_table(&table)?;
    measure.leakage = root.leakage;
    let (c1, c2) = gibbs_constants(&measure, &normalized, opts.audit_depth, opts.audit_cap)?;
    measure.c1 = Some(c1);
    measure.c2 = Some(c2);
    report.p4 = p4_fit(&measure, scheme);
    let tower = match lift(&measure, scheme) {
        Ok(t) => t,
        Err(Error::QDiverges) if opts.force => {
            overridden.push("Q");
            lift_unchecked(&measure, scheme)
        }
        Err(e) => return Err(e),
    };
    Ok(Equilibrium { root, measure, tower, report, overridden })
}

/// Fits `ν(τ ≥ n) ≤ K θ^n`.
pub fn p4_fit(measure: &CylinderMeasure, scheme: &InducingScheme) -> Option<TailBound> {
    let mut by_tau: BTreeMap<u32, f64> = BTreeMap::new();
    for (s, p) in measure.symbol_marginal().iter().enumerate() {
        *by_tau.entry(scheme.tau(s as u64)).or_insert(0.0) += p;
    }
    let lo = *by_tau.keys().next()?;
    let hi = *by_tau.keys().last()?;
    let mut ns = Vec::new();
    let mut vs = Vec::new();
    let mut acc: f64 = by_tau.values().sum();
    for n in lo..=hi {
        ns.push(n as f64);
        vs.push(acc.max(0.0));
        acc -= by_tau.get(&n).copied().unwrap_or(0.0);
    }
    let (k, theta, res) = exponential_bound(&ns, &vs)?;
    Some(TailBound { k, theta, max_residual: res, pass: theta < 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbramovKac {
    pub h_induced: f64,
    pub q: f64,
    /// `h_{L(ν)}(f)` from itinerary block entropies, when available.
    pub h_map: Option<f64>,
    pub entropy_residual: Option<f64>,
    pub entropy_note: Option<String>,
    pub integral_induced: f64,
    pub integral_lift: f64,
    pub kac_residual: f64,
}

const TOWER_STATE_CAP: usize = 200_000;

/// Block entropies `H_n` of the `f`-itinerary process under `L(ν)`, for `n = 1..=n_max`.
pub fn itinerary_block_entropies(
    measure: &CylinderMeasure,
    scheme: &InducingScheme,
    n_max: usize,
) -> Result<Vec<f64>> {
    let map = scheme.map();
    if map.kind() != MapKind::MarkovExpanding {
        return Err(Error::EntropyUnavailable(format!("{:?}", map.kind())));
    }
    let n = measure.symbols;
    let d = measure.depth;
    let block = measure.states() / n;
    let words: Vec<Vec<usize>> = (0..n as u64).map(|s| scheme.word(s)).collect();
    let mut start = vec![0usize; measure.states() + 1];
    for s in 0..measure.states() {
        let s0 = s / block;
        start[s + 1] = start[s] + words[s0].len();
    }
    let total = start[measure.states()];
    if total > TOWER_STATE_CAP {
        return Err(Error::EntropyUnavailable(format!("{total} tower states exceed the cap")));
    }
    let q = q_of(measure, scheme);
    let mut emit = vec![0usize; total];
    let mut owner = vec![0usize; total];
    let mut init = vec![0.0; total];
    for s in 0..measure.states() {
        let s0 = s / block;
        for k in 0..words[s0].len() {
            emit[start[s] + k] = words[s0][k];
            owner[start[s] + k] = s;
            init[start[s] + k] = measure.weights[s] / q;
        }
    }
    let branches = map.branches().len();
    let mut h = vec![0.0; n_max];
    fn walk(
        alpha: &[f64],
        depth: usize,
        ctx: &Ctx<'_>,
        h: &mut [f64],
    ) {
        if depth == h.len() {
            return;
        }
        let mut next = vec![vec![0.0; alpha.len()]; ctx.branches];
        for (j, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let b = ctx.emit[j];
            let s = ctx.owner[j];
            if j + 1 < ctx.start[s + 1] {
                next[b][j + 1] += a;
            } else {
                let sigma = if ctx.depth == 1 { 0 } else { s % ctx.block };
                for c in 0..ctx.symbols {
                    let p = ctx.measure.transition(sigma, c);
                    if p > 0.0 {
                        let s2 = sigma * ctx.symbols + c;
                        next[b][ctx.start[s2]] += a * p;
                    }
                }
            }
        }
        for v in next {
            let p: f64 = v.iter().sum();
            if p > 1e-300 {
                h[depth] -= p * p.ln();
                walk(&v, depth + 1, ctx, h);
            }
        }
    }
    struct Ctx<'m> {
        emit: Vec<usize>,
        owner: Vec<usize>,
        start: Vec<usize>,
        branches: usize,
        symbols: usize,
        block: usize,
        depth: usize,
        measure: &'m CylinderMeasure,
    }
    let ctx = Ctx { emit, owner, start, branches, symbols: n, block, depth: d, measure };
    walk(&init, 0, &ctx, &mut h);
    Ok(h)
}

/// Entropy of `L(ν)` under `f` as `H_{n+1} - H_n`, increasing `n` until it settles.
pub fn itinerary_entropy(measure: &CylinderMeasure, scheme: &InducingScheme) -> Result<f64> {
    let mut prev = f64::NAN;
    let mut last = f64::NAN;
    for n in [6usize, 8, 10, 12] {
        let h = itinerary_block_entropies(measure, scheme, n + 1)?;
        last = h[n] - h[n - 1];
        if (last - prev).abs() < 1e-10 {
            break;
        }
        prev = last;
    }
    Ok(last)
}

/// Residuals of `h_ν(F) = Q h_{L(ν)}(f)` and `∫φ̄ dν = Q ∫φ dL(ν)`.
pub fn verify_abramov_kac(
    measure: &CylinderMeasure,
    scheme: &InducingScheme,
    base: &BasePotential,
) -> Result<AbramovKac> {
    let tower = lift_unchecked(measure, scheme);
    let q = tower.q;
    let h_induced = measure.entropy();
    let (h_map, entropy_note) = match itinerary_entropy(measure, scheme) {
        Ok(h) => (Some(h), None),
        Err(Error::EntropyUnavailable(why)) => (None, Some(why)),
        Err(e) => return Err(e),
    };
    let induced = InducedPotential::new(scheme, base.clone())?;
    let mut integral_induced = 0.0;
    for s in 0..measure.states() {
        let w = measure.weights[s];
        if w == 0.0 {
            continue;
        }
        let word: Vec<u64> = decode(s, measure.symbols, measure.depth).into_iter().map(|x| x as u64).collect();
        let x = scheme.periodic_point(&word)?;
        integral_induced += w * induced.eval(word[0], x)?;
    }
    let map = scheme.map();
    let integral_lift = tower.integrate(scheme, |x| base.value(map, x))?;
    Ok(AbramovKac {
        h_induced,
        q,
        h_map,
        entropy_residual: h_map.map(|h| (h_induced - q * h).abs()),
        entropy_note,
        integral_induced,
        integral_lift,
        kac_residual: (integral_induced - q * integral_lift).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub t: f64,
    pub p: f64,
    pub root_residual: f64,
    pub q: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub leakage: f64,
    pub p4_theta: Option<f64>,
    pub lyapunov: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    pub samples: Vec<CurveSample>,
    pub monotone: bool,
    pub convex: bool,
    /// `P_t ≥ (1-t) log λ₁` for `t ≤ 1` and `P_t ≥ (1-t) log λ₃` for `t ≥ 1`.
    pub bounds_ok: bool,
}

/// `t ↦ P_t` with per-point equilibrium diagnostics.
pub fn pressure_curve(
    scheme: &InducingScheme,
    ts: &[f64],
    opts: &EquilibriumOptions,
    lambda1: f64,
    lambda3: f64,
) -> Result<PressureCurve> {
    let samples = ts
        .par_iter()
        .map(|&t| {
            let pot = InducedPotential::new(scheme, BasePotential::phi_t(t))?;
            let root = compute_pl(&pot, &opts.pressure())?;
            let eq_opts = EquilibriumOptions { force: false, ..*opts };
            let in_range = opts.range.map_or(true, |r| r.contains(t));
            let eq = if in_range {
                equilibrium_for(&pot, &eq_opts)
            } else {
                Err(Error::OutsideRange { t, t0: opts.range.unwrap().t0, t1: opts.range.unwrap().t1 })
            };
            Ok(match eq {
                Ok(eq) => CurveSample {
                    t,
                    p: root.value,
                    root_residual: root.residual,
                    q: Some(eq.tower.q),
                    c1: eq.measure.c1,
                    c2: eq.measure.c2,
                    leakage: root.leakage,
                    p4_theta: eq.report.p4.map(|p| p.theta),
                    lyapunov: eq.tower.lyapunov(scheme).ok(),
                    status: "ok".into(),
                },
                Err(e) => CurveSample {
                    t,
                    p: root.value,
                    root_residual: root.residual,
                    q: None,
                    c1: None,
                    c2: None,
                    leakage: root.leakage,
                    p4_theta: None,
                    lyapunov: None,
                    status: e.to_string(),
                },
            })
        })
        .collect::<Result<Vec<CurveSample>>>()?;
    let tol = 1e-9;
    let monotone = samples.windows(2).all(|w| w[1].p <= w[0].p + tol);
    let slopes: Vec<f64> = samples.windows(2).map(|w| (w[1].p - w[0].p) / (w[1].t - w[0].t)).collect();
    let convex = slopes.windows(2).all(|s| s[1] >= s[0] - 1e-6);
    let bounds_ok = samples.iter().all(|s| {
        let slack = 1e-6 + s.leakage;
        let lb1 = if s.t <= 1.0 { (1.0 - s.t) * lambda1.ln() } else { f64::NEG_INFINITY };
        let lb3 = if s.t >= 1.0 { (1.0 - s.t) * lambda3.ln() } else { f64::NEG_INFINITY };
        s.p >= lb1 - slack && s.p >= lb3 - slack
    });
    Ok(PressureCurve { samples, monotone, convex, bounds_ok })
}

#[derive(Clone)]
pub enum Density {
    Length,
    PointMass(u64),
    /// Total mass assigned to each element family.
    Custom(Arc<dyn Fn(&ElementFamily) -> f64 + Send + Sync>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LiftVerdict {
    Liftable,
    NotLiftable,
    Inconclusive,
}

impl fmt::Display for LiftVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Liftable => "liftable",
            Self::NotLiftable => "not-liftable",
            Self::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftLevel {
    pub tau: u32,
    pub mass: f64,
    pub increment: f64,
    pub partial: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Liftability {
    pub verdict: LiftVerdict,
    pub levels: Vec<LiftLevel>,
    pub limit: Option<f64>,
}

/// Partial sums of `Σ τ(J) mass(J)` by increasing τ, with a verdict on their growth.
pub fn check_liftability(scheme: &InducingScheme, density: &Density) -> Liftability {
    let mut masses: BTreeMap<u32, f64> = BTreeMap::new();
    let total = match density {
        Density::Length => {
            for f in scheme.families() {
                *masses.entry(f.tau).or_insert(0.0) += f.hi - f.lo;
            }
            scheme.w().len()
        }
        Density::PointMass(s) => {
            masses.insert(scheme.tau(*s), 1.0);
            1.0
        }
        Density::Custom(g) => {
            for f in scheme.families() {
                *masses.entry(f.tau).or_insert(0.0) += g(f);
            }
            masses.values().sum()
        }
    };
    let mut partial = 0.0;
    let mut levels = Vec::new();
    for (&tau, &m) in &masses {
        let mass = m / total;
        let increment = tau as f64 * mass;
        partial += increment;
        levels.push(LiftLevel { tau, mass, increment, partial });
    }
    let k = levels.len();
    if k <= 1 {
        return Liftability { verdict: LiftVerdict::Liftable, limit: Some(partial), levels };
    }
    let mut remaining: f64 = 1.0;
    let mut g = Vec::with_capacity(k);
    for l in &levels {
        g.push(l.tau as f64 * remaining.max(0.0));
        remaining -= l.mass;
    }
    let g_max = g.iter().copied().fold(0.0, f64::max);
    let g_last = g[k - 1];
    let ratios: Vec<f64> = levels.windows(2).rev().take(5).map(|w| w[1].increment / w[0].increment).collect();
    let r = ratios.iter().copied().fold(0.0, f64::max);
    let mean = partial / k as f64;
    let last_incs = levels.iter().rev().take(3);
    let verdict = if r < 0.9 && g_last < 0.1 * g_max {
        LiftVerdict::Liftable
    } else if last_incs.clone().all(|l| l.increment >= 0.25 * mean) && g_last >= 0.5 * g_max {
        LiftVerdict::NotLiftable
    } else {
        LiftVerdict::Inconclusive
    };
    let limit = (verdict == LiftVerdict::Liftable).then(|| partial + levels[k - 1].increment * r / (1.0 - r));
    Liftability { verdict, levels, limit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::{build_doubling_scheme, DoublingVariant};
    use approx::assert_abs_diff_eq;

    fn plain(n: u32) -> InducingScheme {
        build_doubling_scheme(DoublingVariant::Plain, n).unwrap()
    }

    #[test]
    fn induced_phi_one_on_plain() {
        let s = plain(10);
        let pot = InducedPotential::new(&s, BasePotential::phi_t(1.0)).unwrap();
        for sym in 0..s.len() {
            assert_abs_diff_eq!(pot.sup(sym), -(sym as f64 + 1.0) * 2f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_potential_sums_tau() {
        let s = build_doubling_scheme(DoublingVariant::Refined, 3).unwrap();
        let pot = InducedPotential::new(&s, BasePotential::constant(-2.0)).unwrap();
        for sym in [0, 3, 10, 200] {
            assert_eq!(pot.sup(sym), -2.0 * s.tau(sym) as f64);
        }
    }

    #[test]
    fn pressure_zero_at_t_one() {
        let s = plain(29);
        let pot = InducedPotential::new(&s, BasePotential::phi_t(1.0)).unwrap();
        let r = compute_pl(&pot, &PressureOptions { alphabet: 30, depth: 1 }).unwrap();
        assert!(r.value.abs() < 1e-6);
        assert!(r.residual < 1e-9);
        assert!(r.lower_bound <= r.value && r.value <= r.upper_bound);
    }

    #[test]
    fn pressure_log_two_at_t_zero() {
        let s = plain(39);
        let pot = InducedPotential::new(&s, BasePotential::phi_t(0.0)).unwrap();
        let r = compute_pl(&pot, &PressureOptions { alphabet: 40, depth: 1 }).unwrap();
        assert_abs_diff_eq!(r.value, 2f64.ln(), epsilon = 1e-6);
    }

    #[test]
    fn bounds_examples() {
        let b = t_bounds(2.0, 8.0, 1.0).unwrap();
        assert_eq!((b.t0, b.t1), (-0.5, 1.5));
        assert_eq!(t_bounds(2.0, 8.0, 4.0).unwrap().t0, 0.5);
        let d = t_bounds(2.0, 2.0, 1.0).unwrap();
        assert!(d.degenerate && d.t0 == f64::NEG_INFINITY && d.t1 == f64::INFINITY);
        assert!(t_bounds(0.5, 2.0, 1.0).is_err());
    }

    #[test]
    fn lift_examples() {
        let s = plain(5);
        let point = CylinderMeasure::bernoulli(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let t = lift_unchecked(&point, &s);
        assert_eq!(t.q, 1.0);
        assert_eq!(t.levels().filter(|l| l.2 > 0.0).count(), 1);
        let uniform = CylinderMeasure::bernoulli(&[0.5, 0.0, 0.5, 0.0, 0.0, 0.0]).unwrap();
        let t = lift_unchecked(&uniform, &s);
        let masses: Vec<f64> = t.levels().filter(|l| l.2 > 0.0).map(|l| l.2).collect();
        assert_eq!(masses, vec![0.25; 4]);
    }

    #[test]
    fn liftability_examples() {
        let p = check_liftability(&plain(40), &Density::Length);
        assert_eq!(p.verdict, LiftVerdict::Liftable);
        assert_abs_diff_eq!(p.limit.unwrap(), 2.0, epsilon = 1e-9);
        let r = check_liftability(&build_doubling_scheme(DoublingVariant::Refined, 5).unwrap(), &Density::Length);
        assert_eq!(r.verdict, LiftVerdict::NotLiftable);
        let pm = check_liftability(&plain(5), &Density::PointMass(3));
        assert_eq!(pm.verdict, LiftVerdict::Liftable);
        assert_eq!(pm.limit, Some(4.0));
    }

    #[test]
    fn p2_examples() {
        let s = plain(30);
        let pot = InducedPotential::new(&s, BasePotential::phi_t(1.0)).unwrap();
        let p2 = p2_series(&pot, 0.0);
        assert!(p2.pass);
        assert_abs_diff_eq!(p2.log_sum.exp(), 1.0 - 0.5f64.powi(31), epsilon = 1e-12);
        let r = build_doubling_scheme(DoublingVariant::Refined, 4).unwrap();
        let zero = InducedPotential::new(&r, BasePotential::constant(0.0)).unwrap();
        assert!(!p2_series(&zero, 0.0).pass);
        let minus_two = InducedPotential::new(&r, BasePotential::constant(-2.0)).unwrap();
        assert!(p2_series(&minus_two, 0.0).pass);
    }
}
