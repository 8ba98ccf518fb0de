//! Sampling from lifted measures: Lyapunov exponents, correlations and the CLT.
//!
//! Orbits are generated symbolically. The induced symbols are drawn from the
//! Markov measure and points are recovered by pulling a random tail back
//! through enough upcoming symbols to fill the f64 mantissa. Forward steps
//! then follow the drawn branches until the accumulated expansion reaches
//! `RESYNC_GROWTH`, after which the point is recomputed from the symbols.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::fit::ols;
use crate::maps::{PiecewiseMap, DELTA_CRIT};
use crate::scheme::InducingScheme;
use crate::shift::decode;
use crate::thermo::TowerMeasure;

/// Default number of induced symbols a sample point is resolved to.
pub const DEFAULT_SAMPLE_DEPTH: usize = 12;
const RESYNC_GROWTH: f64 = 1e6;
const LOOKAHEAD_GAIN: f64 = 1e23;
const LOOKAHEAD_CAP: usize = 512;
const BLOCK: usize = 4096;

fn block_rng(seed: u64, block: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ block as u64)
}

/// Per-symbol data shared by all streams drawn from one tower measure.
pub struct Sampler<'a> {
    tower: &'a TowerMeasure,
    scheme: &'a InducingScheme,
    words: Vec<Vec<usize>>,
    gains: Vec<f64>,
    lifted_cdf: Vec<f64>,
    depth: usize,
}

impl<'a> Sampler<'a> {
    pub fn new(tower: &'a TowerMeasure, scheme: &'a InducingScheme, depth: usize) -> Result<Self> {
        if !tower.q.is_finite() {
            return Err(Error::QDiverges);
        }
        let m = &tower.measure;
        let words: Vec<Vec<usize>> = (0..m.symbols as u64).map(|s| scheme.word(s)).collect();
        let gains = (0..m.symbols as u64)
            .map(|s| {
                let j = scheme.interval(s);
                let g = [0.1, 0.5, 0.9]
                    .iter()
                    .map(|&u| scheme.derivative(s, j.at(u)).abs())
                    .fold(f64::INFINITY, f64::min);
                g.max(1.0 + 1e-3)
            })
            .collect();
        let block = m.states() / m.symbols;
        let mut acc = 0.0;
        let mut lifted_cdf: Vec<f64> = m
            .weights
            .iter()
            .enumerate()
            .map(|(s, w)| {
                acc += w * words[s / block].len() as f64;
                acc
            })
            .collect();
        for c in &mut lifted_cdf {
            *c /= acc;
        }
        Ok(Self { tower, scheme, words, gains, lifted_cdf, depth })
    }

    /// A stream started from the lifted measure.
    pub fn stream<R: Rng>(&self, mut rng: R) -> OrbitStream<'_, 'a, R> {
        let m = &self.tower.measure;
        let u: f64 = rng.gen();
        let state = self.lifted_cdf.partition_point(|&c| c <= u).min(m.states() - 1);
        let symbols = decode(state, m.symbols, m.depth);
        let block = m.states() / m.symbols;
        let level = rng.gen_range(0..self.words[symbols[0]].len());
        let mut s = OrbitStream {
            sampler: self,
            rng,
            queue: symbols.into_iter().collect(),
            sigma: if block == 1 { 0 } else { state % block },
            pos: 0,
            x: 0.0,
            growth: 1.0,
        };
        s.resync();
        for _ in 0..level {
            s.advance();
        }
        s
    }
}

/// An `f`-orbit whose symbolic itinerary follows the sampled measure.
pub struct OrbitStream<'s, 'a, R> {
    sampler: &'s Sampler<'a>,
    rng: R,
    queue: VecDeque<usize>,
    sigma: usize,
    pos: usize,
    x: f64,
    growth: f64,
}

impl<R: Rng> OrbitStream<'_, '_, R> {
    fn push_symbol(&mut self) {
        let m = &self.sampler.tower.measure;
        let c = m.sample_next(self.sigma, &mut self.rng);
        let block = m.states() / m.symbols;
        self.sigma = if block == 1 { 0 } else { (self.sigma * m.symbols + c) % block };
        self.queue.push_back(c);
    }

    fn resync(&mut self) {
        let mut gain = 1.0;
        let mut k = 0;
        while k < LOOKAHEAD_CAP && (gain < LOOKAHEAD_GAIN || k < self.sampler.depth) {
            if k == self.queue.len() {
                self.push_symbol();
            }
            gain *= self.sampler.gains[self.queue[k]];
            k += 1;
        }
        let w = self.sampler.scheme.w();
        let map = self.sampler.scheme.map();
        let mut y = w.at(self.rng.gen());
        for i in (0..k).rev() {
            y = map.inverse_word(&self.sampler.words[self.queue[i]], w.clamp(y));
        }
        self.x = y;
        self.pos = 0;
        self.growth = 1.0;
    }

    fn advance(&mut self) {
        let map = self.sampler.scheme.map();
        let word = &self.sampler.words[self.queue[0]];
        let br = map.branch(word[self.pos]);
        self.growth *= br.derivative(self.x).abs();
        self.x = br.forward(self.x);
        self.pos += 1;
        if self.pos == word.len() {
            self.queue.pop_front();
            self.pos = 0;
            if self.queue.is_empty() {
                self.push_symbol();
            }
            if self.growth > RESYNC_GROWTH {
                self.resync();
            }
        }
    }

    /// Returns the current point and steps the orbit once.
    pub fn next_point(&mut self) -> f64 {
        let x = self.x;
        self.advance();
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<f64>,
    pub seed: u64,
    pub depth: usize,
    pub measure_id: String,
}

impl SampleSet {
    pub fn mean(&self) -> f64 {
        self.points.iter().sum::<f64>() / self.points.len() as f64
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut out = format!("# seed={},depth={},measure={}{}\nx\n", self.seed, self.depth, self.measure_id, header);
        for x in &self.points {
            out.push_str(&format!("{x}\n"));
        }
        out
    }
}

/// Draws `n` points from `L(ν)`, deterministic given `seed`.
pub fn sample_lift(
    tower: &TowerMeasure,
    scheme: &InducingScheme,
    n: usize,
    seed: u64,
    depth: usize,
    measure_id: &str,
) -> Result<SampleSet> {
    let sampler = Sampler::new(tower, scheme, depth)?;
    let blocks = n.div_ceil(BLOCK);
    let points: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let count = BLOCK.min(n - b * BLOCK);
            let mut rng = block_rng(seed, b);
            let sampler = &sampler;
            (0..count)
                .map(move |_| {
                    let child = ChaCha8Rng::seed_from_u64(rng.gen());
                    sampler.stream(child).x
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(SampleSet { points, seed, depth, measure_id: measure_id.to_string() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    pub used: usize,
    /// Points within `DELTA_CRIT` of a critical point that were skipped.
    pub near_critical: usize,
}

/// Mean of `log|df|` over sample points.
pub fn lyapunov_samples(samples: &SampleSet, map: &PiecewiseMap) -> Result<LyapunovEstimate> {
    let mut sum = 0.0;
    let mut used = 0;
    let mut near = 0;
    for &x in &samples.points {
        let d = map.derivative(x)?.abs();
        if d <= DELTA_CRIT {
            near += 1;
            continue;
        }
        sum += d.ln();
        used += 1;
    }
    if used == 0 || near * 100 > samples.points.len() {
        return Err(Error::NearCritical { x: f64::NAN, deriv: 0.0 });
    }
    Ok(LyapunovEstimate { value: sum / used as f64, used, near_critical: near })
}

/// Birkhoff average of `log|df|` along a floating-point orbit of length `len` from `x0`.
pub fn lyapunov_orbit(map: &PiecewiseMap, x0: f64, len: usize, seed: u64) -> Result<LyapunovEstimate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = len / 100 + 10;
    let mut x = x0;
    let mut sum = 0.0;
    let mut near = 0;
    let mut used = 0;
    while used < len {
        let d = map.derivative(x)?.abs();
        if d <= DELTA_CRIT {
            near += 1;
            if near > budget {
                return Err(Error::NearCritical { x, deriv: d });
            }
            x = map.ambient.at(rng.gen());
            continue;
        }
        sum += d.ln();
        used += 1;
        x = map.step(x)?;
    }
    Ok(LyapunovEstimate { value: sum / len as f64, used, near_critical: near })
}

/// A bounded observable with its Hölder data.
#[derive(Clone)]
pub struct Observable {
    pub id: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub holder_constant: f64,
    pub holder_exponent: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({})", self.id)
    }
}

impl Observable {
    pub fn new(
        id: impl Into<String>,
        holder_constant: f64,
        holder_exponent: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { id: id.into(), f: Arc::new(f), holder_constant, holder_exponent }
    }

    pub fn identity() -> Self {
        Self::new("x", 1.0, 1.0, |x| x)
    }

    pub fn centered_identity() -> Self {
        Self::new("x-1/2", 1.0, 1.0, |x| x - 0.5)
    }

    pub fn cos2pi() -> Self {
        Self::new("cos2pix", 2.0 * std::f64::consts::PI, 1.0, |x| (2.0 * std::f64::consts::PI * x).cos())
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const{c}"), 0.0, 1.0, move |_| c)
    }

    /// `g∘f - g` for `g = sin 2πx`.
    pub fn sine_coboundary(map: PiecewiseMap) -> Self {
        let g = |x: f64| (2.0 * std::f64::consts::PI * x).sin();
        Self::new("sin2pi(f)-sin2pi", f64::NAN, 1.0, move |x| g(map.step(x).unwrap_or(x)) - g(x))
    }

    pub fn by_id(id: &str, map: &PiecewiseMap) -> Result<Self> {
        match id {
            "x" => Ok(Self::identity()),
            "x-1/2" => Ok(Self::centered_identity()),
            "cos2pix" => Ok(Self::cos2pi()),
            "coboundary" => Ok(Self::sine_coboundary(map.clone())),
            other => other
                .strip_prefix("const")
                .and_then(|c| c.parse().ok())
                .map(Self::constant)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown observable {other}"))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub lags: Vec<usize>,
    pub correlations: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Lags with `|C(n)| > 3 se` used in the fit.
    pub fitted_lags: Vec<usize>,
    pub k: f64,
    pub theta: f64,
    pub max_residual: f64,
    pub observables: (String, String),
    pub samples: usize,
}

impl CorrelationFit {
    pub fn pass(&self) -> bool {
        self.theta > 0.0 && self.theta < 1.0
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut out = format!(
            "# observables={}|{},samples={},K={},theta={},max_residual={}{}\nlag,C,se\n",
            self.observables.0, self.observables.1, self.samples, self.k, self.theta, self.max_residual, header
        );
        for i in 0..self.lags.len() {
            out.push_str(&format!("{},{},{}\n", self.lags[i], self.correlations[i], self.std_errors[i]));
        }
        out
    }
}

/// Raw correlation table without a fit; `AllNoise` and fitting are left to `correlation_fit`.
pub fn correlation_table(
    sampler: &Sampler<'_>,
    h1: &Observable,
    h2: &Observable,
    lag_max: usize,
    n: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let lags = lag_max + 1;
    let blocks = n.div_ceil(BLOCK);
    // Per lag: Σ h1(x_n), Σ h2(x_0), Σ h1(x_n)h2(x_0), Σ (h1(x_n)h2(x_0))².
    let partials: Vec<Vec<[f64; 4]>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK.min(n - b * BLOCK);
            let mut rng = block_rng(seed, b);
            let mut acc = vec![[0.0; 4]; lags];
            let mut xs = vec![0.0; lags];
            for _ in 0..count {
                let mut st = sampler.stream(ChaCha8Rng::seed_from_u64(rng.gen()));
                for x in xs.iter_mut() {
                    *x = st.next_point();
                }
                let a = h2.eval(xs[0]);
                for (l, x) in xs.iter().enumerate() {
                    let v = h1.eval(*x);
                    let p = v * a;
                    acc[l][0] += v;
                    acc[l][1] += a;
                    acc[l][2] += p;
                    acc[l][3] += p * p;
                }
            }
            acc
        })
        .collect();
    let mut tot = vec![[0.0; 4]; lags];
    for p in partials {
        for (t, q) in tot.iter_mut().zip(p) {
            for k in 0..4 {
                t[k] += q[k];
            }
        }
    }
    let nf = n as f64;
    let mut cs = Vec::with_capacity(lags);
    let mut ses = Vec::with_capacity(lags);
    for t in tot {
        let (m1, m2, mp) = (t[0] / nf, t[1] / nf, t[2] / nf);
        cs.push(mp - m1 * m2);
        let var = (t[3] / nf - mp * mp).max(0.0);
        ses.push((var / nf).sqrt());
    }
    (cs, ses)
}

/// Monte-Carlo correlations from i.i.d. starts with an exponential fit.
pub fn correlation_fit(
    sampler: &Sampler<'_>,
    h1: &Observable,
    h2: &Observable,
    lag_max: usize,
    n: usize,
    seed: u64,
) -> Result<CorrelationFit> {
    let (correlations, std_errors) = correlation_table(sampler, h1, h2, lag_max, n, seed);
    let fitted_lags: Vec<usize> = (0..=lag_max)
        .filter(|&l| correlations[l].abs() > 3.0 * std_errors[l] && correlations[l] != 0.0)
        .collect();
    if !fitted_lags.iter().any(|&l| l >= 1) || fitted_lags.len() < 2 {
        return Err(Error::AllNoise);
    }
    let xs: Vec<f64> = fitted_lags.iter().map(|&l| l as f64).collect();
    let ys: Vec<f64> = fitted_lags.iter().map(|&l| correlations[l].abs().ln()).collect();
    let line = ols(&xs, &ys).ok_or(Error::AllNoise)?;
    Ok(CorrelationFit {
        lags: (0..=lag_max).collect(),
        correlations,
        std_errors,
        fitted_lags,
        k: line.intercept.exp(),
        theta: line.slope.exp(),
        max_residual: line.max_residual,
        observables: (h1.id.clone(), h2.id.clone()),
        samples: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub block_len: usize,
    pub blocks: usize,
    pub gamma: f64,
    pub ks_distance: f64,
    /// `Var(S_n) / Var(S_{n/16})`; about 16 for a non-degenerate limit.
    pub variance_growth: f64,
    pub mean: f64,
    pub observable: String,
    pub seed: u64,
}

/// Kolmogorov–Smirnov distance between a sample and `N(0, γ²)`.
pub fn ks_distance(values: &mut [f64], gamma: f64) -> Result<f64> {
    let normal = Normal::new(0.0, gamma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    values.sort_by(f64::total_cmp);
    let m = values.len() as f64;
    Ok(values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = normal.cdf(v);
            (c - i as f64 / m).abs().max((c - (i + 1) as f64 / m).abs())
        })
        .fold(0.0, f64::max))
}

/// Normalised block sums `S_n/√n` from `blocks` independent starts.
pub fn clt_test(
    sampler: &Sampler<'_>,
    h: &Observable,
    block_len: usize,
    blocks: usize,
    seed: u64,
) -> Result<CltReport> {
    if block_len < 16 || blocks < 2 {
        return Err(Error::InvalidParameter("clt needs block_len >= 16 and at least 2 blocks".into()));
    }
    let short = block_len / 16;
    let chunks = blocks.div_ceil(64);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let count = 64.min(blocks - b * 64);
            let mut rng = block_rng(seed, b);
            (0..count)
                .map(|_| {
                    let mut st = sampler.stream(ChaCha8Rng::seed_from_u64(rng.gen()));
                    let mut s = 0.0;
                    let mut s_short = 0.0;
                    for i in 0..block_len {
                        s += h.eval(st.next_point());
                        if i + 1 == short {
                            s_short = s;
                        }
                    }
                    (s, s_short)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    let m = blocks as f64;
    let mean = sums.iter().map(|s| s.0).sum::<f64>() / (m * block_len as f64);
    let var = |k: usize, pick: fn(&(f64, f64)) -> f64| {
        let c: Vec<f64> = sums.iter().map(|s| pick(s) - mean * k as f64).collect();
        let mu = c.iter().sum::<f64>() / m;
        c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1.0)
    };
    let var_long = var(block_len, |s| s.0);
    let var_short = var(short, |s| s.1);
    let gamma = (var_long / block_len as f64).sqrt();
    let variance_growth = var_long / var_short;
    if gamma < 1e-6 || !(variance_growth >= 4.0) {
        return Err(Error::DegenerateVariance { gamma, growth: variance_growth });
    }
    let scale = (block_len as f64).sqrt();
    let mut normalized: Vec<f64> = sums.iter().map(|s| (s.0 - mean * block_len as f64) / scale).collect();
    let ks = ks_distance(&mut normalized, gamma)?;
    Ok(CltReport {
        block_len,
        blocks,
        gamma,
        ks_distance: ks,
        variance_growth,
        mean,
        observable: h.id.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheme::{build_doubling_scheme, DoublingVariant};
    use crate::shift::CylinderMeasure;
    use crate::thermo::lift_unchecked;

    fn lebesgue_tower(s: &InducingScheme) -> TowerMeasure {
        let probs: Vec<f64> = (0..s.len()).map(|k| 0.5f64.powi(k as i32 + 1)).collect();
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        lift_unchecked(&CylinderMeasure::bernoulli(&probs).unwrap(), s)
    }

    #[test]
    fn samples_are_lebesgue() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 39).unwrap();
        let t = lebesgue_tower(&s);
        let set = sample_lift(&t, &s, 100_000, 7, DEFAULT_SAMPLE_DEPTH, "leb").unwrap();
        assert!((set.mean() - 0.5).abs() < 0.005);
        let upper = set.points.iter().filter(|&&x| x > 0.5).count() as f64 / 1e5;
        assert!((upper - 0.5).abs() < 0.005);
        assert!(set.points.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn point_mass_samples() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 3).unwrap();
        let t = lift_unchecked(&CylinderMeasure::bernoulli(&[1.0, 0.0, 0.0, 0.0]).unwrap(), &s);
        let set = sample_lift(&t, &s, 100, 1, 4, "pm").unwrap();
        assert!(set.points.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn deterministic_in_seed() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 20).unwrap();
        let t = lebesgue_tower(&s);
        let a = sample_lift(&t, &s, 10_000, 3, 12, "m").unwrap();
        let b = sample_lift(&t, &s, 10_000, 3, 12, "m").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_observable_has_no_correlation() {
        let s = build_doubling_scheme(DoublingVariant::Plain, 20).unwrap();
        let t = lebesgue_tower(&s);
        let sampler = Sampler::new(&t, &s, 12).unwrap();
        let c = Observable::constant(3.0);
        let (cs, _) = correlation_table(&sampler, &c, &c, 5, 1000, 1);
        assert!(cs.iter().all(|&v| v == 0.0));
        assert!(matches!(correlation_fit(&sampler, &c, &c, 5, 1000, 1), Err(Error::AllNoise)));
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let normal = Normal::new(0.0, 2.0).unwrap();
        let mut v: Vec<f64> = (0..1000).map(|i| normal.inverse_cdf((i as f64 + 0.5) / 1000.0)).collect();
        assert!(ks_distance(&mut v, 2.0).unwrap() < 1e-3);
    }
}
