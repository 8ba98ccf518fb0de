//! Thermodynamics of the full shift on a finite alphabet.
//!
//! States of the depth-`d` operator are words of length `d`, indexed in base
//! `N` with the first symbol most significant. The operator moves `w` to
//! `w[1..]·c` with weight `exp Φ(w[1..]·c)`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest number of operator states.
pub const STATE_CAP: usize = 1 << 24;
/// Largest number of words enumerated per orbit-sum level.
pub const ENUM_CAP: usize = 1 << 21;
const ITERATION_CAP: usize = 100_000;
const RESIDUAL_TOL: f64 = 1e-12;
const PAR_THRESHOLD: usize = 1 << 12;

/// A potential on the one-sided full shift over `alphabet_size()` symbols.
pub trait ShiftPotential: Sync {
    fn alphabet_size(&self) -> usize;

    /// `Φ(word^∞)`.
    fn periodic_value(&self, word: &[usize]) -> f64;

    /// Number of leading symbols `Φ` depends on, when finite.
    fn memory(&self) -> Option<usize>;

    /// Oscillation of `Φ` over the cylinder `[word]`.
    fn oscillation(&self, word: &[usize]) -> f64 {
        let n = self.alphabet_size();
        let extra = match self.memory() {
            Some(m) if m <= word.len() => return 0.0,
            Some(m) => m - word.len(),
            None => 3,
        };
        let count = n.checked_pow(extra as u32).unwrap_or(usize::MAX).min(4096);
        let mut ext = word.to_vec();
        ext.resize(word.len() + extra, 0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..count {
            let mut r = k;
            for slot in ext[word.len()..].iter_mut().rev() {
                *slot = r % n;
                r /= n;
            }
            let v = self.periodic_value(&ext);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        hi - lo
    }
}

/// `Φ(ω) = values[ω₀]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstSymbolPotential {
    pub values: Vec<f64>,
}

impl ShiftPotential for FirstSymbolPotential {
    fn alphabet_size(&self) -> usize {
        self.values.len()
    }

    fn periodic_value(&self, word: &[usize]) -> f64 {
        self.values[word[0]]
    }

    fn memory(&self) -> Option<usize> {
        Some(1)
    }
}

/// `Φ(ω) = values[index(ω₀ … ω_{m-1})]` for a fixed memory `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPotential {
    pub symbols: usize,
    pub memory: usize,
    pub values: Vec<f64>,
}

impl BlockPotential {
    pub fn new(symbols: usize, memory: usize, values: Vec<f64>) -> Result<Self> {
        if memory == 0 || symbols.checked_pow(memory as u32) != Some(values.len()) {
            return Err(Error::InvalidParameter("block potential needs symbols^memory values".into()));
        }
        Ok(Self { symbols, memory, values })
    }
}

impl ShiftPotential for BlockPotential {
    fn alphabet_size(&self) -> usize {
        self.symbols
    }

    fn periodic_value(&self, word: &[usize]) -> f64 {
        let idx = (0..self.memory).fold(0, |acc, k| acc * self.symbols + word[k % word.len()]);
        self.values[idx]
    }

    fn memory(&self) -> Option<usize> {
        Some(self.memory)
    }
}

pub(crate) fn decode(mut idx: usize, n: usize, len: usize) -> Vec<usize> {
    let mut w = vec![0; len];
    for slot in w.iter_mut().rev() {
        *slot = idx % n;
        idx /= n;
    }
    w
}

pub(crate) fn encode(word: &[usize], n: usize) -> usize {
    word.iter().fold(0, |acc, &s| acc * n + s)
}

fn checked_states(n: usize, depth: usize) -> Result<usize> {
    n.checked_pow(depth as u32)
        .filter(|&s| s <= STATE_CAP)
        .ok_or(Error::DepthInfeasible { depth, alphabet: n })
}

/// `Φ_n(w^∞) = Σ_k Φ(σ^k w^∞)`.
pub fn periodic_sum<P: ShiftPotential + ?Sized>(pot: &P, word: &[usize]) -> f64 {
    let n = word.len();
    let doubled: Vec<usize> = word.iter().chain(word).copied().collect();
    (0..n).map(|k| pot.periodic_value(&doubled[k..k + n])).sum()
}

/// Log-weights of the depth-`d` operator states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    pub symbols: usize,
    pub depth: usize,
    pub log_weight: Vec<f64>,
}

impl StateTable {
    pub fn build<P: ShiftPotential + ?Sized>(pot: &P, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidParameter("depth must be at least 1".into()));
        }
        let n = pot.alphabet_size();
        let states = checked_states(n, depth)?;
        let eval = |s: usize| pot.periodic_value(&decode(s, n, depth));
        let log_weight: Vec<f64> = if states >= PAR_THRESHOLD {
            (0..states).into_par_iter().map(eval).collect()
        } else {
            (0..states).map(eval).collect()
        };
        if let Some(bad) = log_weight.iter().position(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::InvalidParameter(format!(
                "potential is not finite on cylinder {:?}",
                decode(bad, n, depth)
            )));
        }
        Ok(Self { symbols: n, depth, log_weight })
    }

    /// The table for `Φ - c·shift(ω₀)`.
    pub fn shifted(&self, shift: &[f64], c: f64) -> Self {
        let block = self.symbols.pow(self.depth as u32 - 1);
        let log_weight = self
            .log_weight
            .iter()
            .enumerate()
            .map(|(s, v)| v - c * shift[s / block])
            .collect();
        Self { symbols: self.symbols, depth: self.depth, log_weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub log_lambda: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn map_indices(len: usize, f: impl Fn(usize) -> f64 + Sync + Send) -> Vec<f64> {
    if len >= PAR_THRESHOLD {
        (0..len).into_par_iter().map(f).collect()
    } else {
        (0..len).map(f).collect()
    }
}

/// Normalizes to unit sum and returns the Collatz–Wielandt ratio bracket.
fn normalize_with_ratios(next: &mut [f64], prev: &[f64]) -> (f64, f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (a, b) in next.iter().zip(prev) {
        if *b > 1e-300 {
            let r = a / b;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    let total: f64 = next.iter().sum();
    next.iter_mut().for_each(|x| *x /= total);
    (lo, hi, total)
}

/// Leading eigenvalue and eigenvectors of the depth-`d` operator.
pub fn leading_eigen(table: &StateTable) -> Result<Spectrum> {
    let n = table.symbols;
    let states = table.log_weight.len();
    let block = states / n;
    let shift = table.log_weight.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::InvalidParameter("all operator weights vanish".into()));
    }
    let e: Vec<f64> = table.log_weight.iter().map(|v| (v - shift).exp()).collect();

    let mut right = vec![1.0 / states as f64; states];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut lambda = 0.0;
    while iterations < ITERATION_CAP {
        let u = map_indices(block, |sigma| (0..n).map(|c| e[sigma * n + c] * right[sigma * n + c]).sum());
        let mut next: Vec<f64> = (0..states).map(|s| u[s % block]).collect();
        let (lo, hi, total) = normalize_with_ratios(&mut next, &right);
        iterations += 1;
        right = next;
        lambda = total;
        residual = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
        if residual < RESIDUAL_TOL {
            break;
        }
    }
    if residual >= RESIDUAL_TOL {
        return Err(Error::OperatorNoConvergence { iterations, residual });
    }

    let mut left = vec![1.0 / states as f64; states];
    let mut left_residual = f64::INFINITY;
    let mut left_iterations = 0;
    while left_iterations < ITERATION_CAP {
        let p = map_indices(block, |tau| (0..n).map(|c| left[c * block + tau]).sum());
        let mut next: Vec<f64> = (0..states).map(|s| e[s] * p[s / n]).collect();
        let (lo, hi, _) = normalize_with_ratios(&mut next, &left);
        left_iterations += 1;
        left = next;
        left_residual = if hi > 0.0 { (hi - lo) / hi } else { 0.0 };
        if left_residual < RESIDUAL_TOL {
            break;
        }
    }
    if left_residual >= RESIDUAL_TOL {
        return Err(Error::OperatorNoConvergence { iterations: left_iterations, residual: left_residual });
    }
    Ok(Spectrum {
        log_lambda: lambda.ln() + shift,
        right,
        left,
        iterations: iterations.max(left_iterations),
        residual: residual.max(left_residual),
    })
}

/// `log` of the leading eigenvalue of the depth-`d` operator.
pub fn gurevich_pressure_operator<P: ShiftPotential + ?Sized>(pot: &P, depth: usize) -> Result<f64> {
    Ok(leading_eigen(&StateTable::build(pot, depth)?)?.log_lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitEstimate {
    pub n: usize,
    /// `log Σ_{σ^n ω = ω, ω₀ = a} exp Φ_n(ω)`.
    pub log_z: f64,
    /// `(1/n) log Z_n`.
    pub raw: f64,
    /// `log (Z_n / Z_{n-1})`, the estimate free of the `O(1/n)` prefactor bias.
    pub ratio: Option<f64>,
}

impl OrbitEstimate {
    pub fn estimate(&self) -> f64 {
        self.ratio.unwrap_or(self.raw)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_z_enumerate<P: ShiftPotential + ?Sized>(pot: &P, n: usize, base: usize) -> f64 {
    let k = pot.alphabet_size();
    let count = k.pow(n as u32 - 1);
    let chunk = 4096;
    let chunks = count.div_ceil(chunk);
    let partial = |ci: usize| {
        let start = ci * chunk;
        let end = (start + chunk).min(count);
        log_sum_exp((start..end).map(|i| {
            let mut w = Vec::with_capacity(n);
            w.push(base);
            w.extend(decode(i, k, n - 1));
            periodic_sum(pot, &w)
        }))
    };
    let parts: Vec<f64> = if chunks > 1 {
        (0..chunks).into_par_iter().map(partial).collect()
    } else {
        (0..chunks).map(partial).collect()
    };
    log_sum_exp(parts.into_iter())
}

/// Closed-walk transfer sums for a memory-`m` potential, `n ≥ m`.
fn log_z_memory<P: ShiftPotential + ?Sized>(pot: &P, m: usize, n: usize, base: usize) -> f64 {
    let k = pot.alphabet_size();
    if m == 1 {
        let g: Vec<f64> = (0..k).map(|c| pot.periodic_value(&[c])).collect();
        return g[base] + (n as f64 - 1.0) * log_sum_exp(g.iter().copied());
    }
    let states = k.pow(m as u32 - 1);
    let g: Vec<f64> = (0..states * k).map(|idx| pot.periodic_value(&decode(idx, k, m))).collect();
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = g.iter().map(|v| (v - gmax).exp()).collect();
    let block = states / k;
    let starts: Vec<usize> = (base * block..(base + 1) * block).collect();
    let terms: Vec<f64> = starts
        .iter()
        .map(|&u0| {
            let mut v = vec![0.0; states];
            v[u0] = 1.0;
            let mut log_scale = 0.0;
            for _ in 0..n {
                let mut next = vec![0.0; states];
                for (u, &vu) in v.iter().enumerate() {
                    if vu == 0.0 {
                        continue;
                    }
                    let tail = (u % block) * k;
                    for c in 0..k {
                        next[tail + c] += vu * e[u * k + c];
                    }
                }
                let s: f64 = next.iter().sum();
                next.iter_mut().for_each(|x| *x /= s);
                log_scale += s.ln();
                v = next;
            }
            v[u0].ln() + log_scale
        })
        .collect();
    log_sum_exp(terms.into_iter()) + n as f64 * gmax
}

/// Periodic-orbit sums through `[base]` for `n = 1..=n_max`.
pub fn gurevich_pressure_orbits<P: ShiftPotential + ?Sized>(
    pot: &P,
    n_max: usize,
    base: usize,
) -> Result<Vec<OrbitEstimate>> {
    let k = pot.alphabet_size();
    if base >= k {
        return Err(Error::InvalidParameter(format!("base symbol {base} outside alphabet of {k}")));
    }
    let mut out: Vec<OrbitEstimate> = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let enumerable = k.checked_pow(n as u32 - 1).is_some_and(|c| c <= ENUM_CAP);
        let log_z = match pot.memory() {
            Some(m) if n >= m && (!enumerable || m == 1) => log_z_memory(pot, m, n, base),
            _ if enumerable => log_z_enumerate(pot, n, base),
            _ => return Err(Error::DepthInfeasible { depth: n, alphabet: k }),
        };
        let ratio = out.last().map(|p| log_z - p.log_z);
        out.push(OrbitEstimate { n, log_z, raw: log_z / n as f64, ratio });
    }
    Ok(out)
}

/// `sup` of oscillations over depth-`n` cylinders, enumerated or sampled.
pub fn variation<P: ShiftPotential + ?Sized>(pot: &P, n: usize, sample_cap: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("variation depth must be at least 1".into()));
    }
    let k = pot.alphabet_size();
    if sample_cap == 0 {
        return Err(Error::DepthInfeasible { depth: n, alphabet: k });
    }
    let words: Vec<Vec<usize>> = match k.checked_pow(n as u32).filter(|&c| c <= sample_cap) {
        Some(c) => (0..c).map(|i| decode(i, k, n)).collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003 ^ n as u64);
            (0..sample_cap).map(|_| (0..n).map(|_| rng.gen_range(0..k)).collect()).collect()
        }
    };
    Ok(words
        .par_iter()
        .map(|w| pot.oscillation(w))
        .reduce(|| 0.0, f64::max))
}

/// A stationary depth-`d` Markov approximation of a Gibbs measure.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderMeasure {
    pub symbols: usize,
    pub depth: usize,
    pub weights: Vec<f64>,
    /// `P_G` of the potential the weights were built from.
    pub pressure: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    /// Relative mass outside the truncated alphabet.
    pub leakage: f64,
    /// Largest `|ν[w] - Σ_c ν[wc]|`.
    pub consistency_defect: f64,
    /// Largest `|Σ_a ν[aw] - ν[w]|`.
    pub shift_defect: f64,
    cond_cdf: Vec<f64>,
}

impl CylinderMeasure {
    pub fn from_weights(symbols: usize, depth: usize, weights: Vec<f64>, pressure: f64) -> Result<Self> {
        let states = checked_states(symbols, depth)?;
        if weights.len() != states || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be nonnegative, one per state".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let block = states / symbols;
        let mut cond_cdf = Vec::with_capacity(states);
        for sigma in 0..block {
            let row = &weights[sigma * symbols..(sigma + 1) * symbols];
            let s: f64 = row.iter().sum();
            let mut acc = 0.0;
            for &w in row {
                acc += if s > 0.0 { w / s } else { 1.0 / symbols as f64 };
                cond_cdf.push(acc);
            }
        }
        let mut m = Self {
            symbols,
            depth,
            weights,
            pressure,
            c1: None,
            c2: None,
            leakage: 0.0,
            consistency_defect: 0.0,
            shift_defect: 0.0,
            cond_cdf,
        };
        m.audit_consistency();
        Ok(m)
    }

    /// Bernoulli measure with the given symbol probabilities.
    pub fn bernoulli(probs: &[f64]) -> Result<Self> {
        Self::from_weights(probs.len(), 1, probs.to_vec(), 0.0)
    }

    fn audit_consistency(&mut self) {
        let n = self.symbols;
        let mut consistency: f64 = 0.0;
        let mut shift: f64 = 0.0;
        for len in 1..self.depth {
            for i in 0..n.pow(len as u32) {
                let w = decode(i, n, len);
                let m = self.cylinder_mass(&w);
                let mut ext = w.clone();
                ext.push(0);
                let mut down = 0.0;
                for c in 0..n {
                    ext[len] = c;
                    down += self.cylinder_mass(&ext);
                }
                consistency = consistency.max((m - down).abs());
                let mut pre = vec![0];
                pre.extend_from_slice(&w);
                let mut up = 0.0;
                for a in 0..n {
                    pre[0] = a;
                    up += self.cylinder_mass(&pre);
                }
                shift = shift.max((m - up).abs());
            }
        }
        self.consistency_defect = consistency;
        self.shift_defect = shift;
    }

    pub fn states(&self) -> usize {
        self.weights.len()
    }

    /// Depth-1 marginal.
    pub fn symbol_marginal(&self) -> Vec<f64> {
        let block = self.states() / self.symbols;
        (0..self.symbols)
            .map(|a| self.weights[a * block..(a + 1) * block].iter().sum())
            .collect()
    }

    /// `P(next = c | last d-1 symbols = sigma)`.
    pub fn transition(&self, sigma: usize, c: usize) -> f64 {
        let row = sigma * self.symbols;
        let prev = if c == 0 { 0.0 } else { self.cond_cdf[row + c - 1] };
        self.cond_cdf[row + c] - prev
    }

    /// Samples the next symbol after a state whose last `d-1` symbols index as `sigma`.
    pub fn sample_next<R: Rng + ?Sized>(&self, sigma: usize, rng: &mut R) -> usize {
        let row = &self.cond_cdf[sigma * self.symbols..(sigma + 1) * self.symbols];
        let u: f64 = rng.gen();
        row.partition_point(|&c| c <= u).min(self.symbols - 1)
    }

    /// Samples a depth-`d` state from the stationary weights.
    pub fn sample_state<R: Rng + ?Sized>(&self, cdf: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        cdf.partition_point(|&c| c <= u).min(self.states() - 1)
    }

    pub fn state_cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    }

    pub fn cylinder_mass(&self, word: &[usize]) -> f64 {
        let n = self.symbols;
        let d = self.depth;
        if word.is_empty() {
            return 1.0;
        }
        if word.len() <= d {
            let span = n.pow((d - word.len()) as u32);
            let start = encode(word, n) * span;
            return self.weights[start..start + span].iter().sum();
        }
        let mut mass = self.weights[encode(&word[..d], n)];
        let block = n.pow(d as u32 - 1);
        for k in d..word.len() {
            let sigma = if d == 1 { 0 } else { encode(&word[k + 1 - d..k], n) % block };
            mass *= self.transition(sigma, word[k]);
        }
        mass
    }

    /// Entropy of the depth-`d` Markov approximation.
    pub fn entropy(&self) -> f64 {
        let n = self.symbols;
        let block = self.states() / n;
        let mut h = 0.0;
        for (s, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let sigma = s % block;
            for c in 0..n {
                let p = self.transition(sigma, c);
                if p > 0.0 {
                    h -= w * p * p.ln();
                }
            }
        }
        h
    }

    pub fn to_csv(&self, extra_header: &str) -> String {
        let mut out = String::new();
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x}"));
        let _ = writeln!(
            out,
            "# P_G={},C1={},C2={},leakage={},depth={},symbols={}{}",
            self.pressure,
            fmt_opt(self.c1),
            fmt_opt(self.c2),
            self.leakage,
            self.depth,
            self.symbols,
            extra_header
        );
        out.push_str("word,weight\n");
        for (s, w) in self.weights.iter().enumerate() {
            let word = decode(s, self.symbols, self.depth);
            let label: Vec<String> = word.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{},{}", label.join("-"), w);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| Error::InvalidParameter("measure CSV lacks its header row".into()))?;
        let field = |key: &str| -> Option<&str> {
            header.split(',').find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        };
        let parse = |key: &str| -> Result<f64> {
            field(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("measure CSV header lacks {key}")))
        };
        let depth = parse("depth")? as usize;
        let symbols = parse("symbols")? as usize;
        let mut weights = vec![0.0; checked_states(symbols, depth)?];
        for line in lines.skip(1).filter(|l| !l.trim().is_empty()) {
            let (word, w) = line
                .split_once(',')
                .ok_or_else(|| Error::InvalidParameter(format!("bad measure row {line}")))?;
            let word: Vec<usize> = word
                .split('-')
                .map(|s| s.parse().map_err(|_| Error::InvalidParameter(format!("bad word {word}"))))
                .collect::<Result<_>>()?;
            if word.len() != depth || word.iter().any(|&s| s >= symbols) {
                return Err(Error::InvalidParameter(format!("word {word:?} does not fit the header")));
            }
            weights[encode(&word, symbols)] = w
                .trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad weight {w}")))?;
        }
        let mut m = Self::from_weights(symbols, depth, weights, parse("P_G")?)?;
        m.c1 = parse("C1").ok().filter(|v| v.is_finite());
        m.c2 = parse("C2").ok().filter(|v| v.is_finite());
        m.leakage = parse("leakage").unwrap_or(0.0);
        Ok(m)
    }
}

/// Gibbs weights from the left and right leading eigenvectors.
pub fn gibbs_from_table(table: &StateTable) -> Result<CylinderMeasure> {
    let spec = leading_eigen(table)?;
    let weights: Vec<f64> = spec.left.iter().zip(&spec.right).map(|(l, r)| l * r).collect();
    CylinderMeasure::from_weights(table.symbols, table.depth, weights, spec.log_lambda)
}

pub fn gibbs_weights<P: ShiftPotential + ?Sized>(pot: &P, depth: usize) -> Result<CylinderMeasure> {
    gibbs_from_table(&StateTable::build(pot, depth)?)
}

/// Extremes of `ν[w] / exp(-n P_G + Φ_n(w^∞))` over cylinders of length `1..=audit_depth`.
pub fn gibbs_constants<P: ShiftPotential + ?Sized>(
    measure: &CylinderMeasure,
    pot: &P,
    audit_depth: usize,
    sample_cap: usize,
) -> Result<(f64, f64)> {
    let k = measure.symbols;
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for n in 1..=audit_depth {
        let words: Vec<Vec<usize>> = match k.checked_pow(n as u32).filter(|&c| c <= sample_cap) {
            Some(c) => (0..c).map(|i| decode(i, k, n)).collect(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004 ^ n as u64);
                (0..sample_cap).map(|_| (0..n).map(|_| rng.gen_range(0..k)).collect()).collect()
            }
        };
        let ratios: Vec<Result<f64>> = words
            .par_iter()
            .map(|w| {
                let mass = measure.cylinder_mass(w);
                if mass <= 0.0 {
                    return Err(Error::ZeroWeightCylinder { word: w.clone() });
                }
                let log_ref = -(n as f64) * measure.pressure + periodic_sum(pot, w);
                Ok((mass.ln() - log_ref).exp())
            })
            .collect();
        for r in ratios {
            let r = r?;
            c1 = c1.min(r);
            c2 = c2.max(r);
        }
    }
    Ok((c1, c2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn zero(n: usize) -> FirstSymbolPotential {
        FirstSymbolPotential { values: vec![0.0; n] }
    }

    #[test]
    fn zero_potential_operator() {
        let p = gurevich_pressure_operator(&zero(2), 1).unwrap();
        assert_abs_diff_eq!(p, 2f64.ln(), epsilon = 1e-12);
        let p3 = gurevich_pressure_operator(&zero(2), 3).unwrap();
        assert_abs_diff_eq!(p3, 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn zero_potential_orbits() {
        let est = gurevich_pressure_orbits(&zero(2), 16, 0).unwrap();
        assert_abs_diff_eq!(est[15].estimate(), 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn normalized_first_symbol() {
        let pot = FirstSymbolPotential { values: vec![(1.0f64 / 3.0).ln(), (2.0f64 / 3.0).ln()] };
        assert_abs_diff_eq!(gurevich_pressure_operator(&pot, 1).unwrap(), 0.0, epsilon = 1e-12);
        let est = gurevich_pressure_orbits(&pot, 12, 1).unwrap();
        assert!(est.iter().skip(1).all(|e| e.estimate().abs() < 1e-9));
        let m = gibbs_weights(&pot, 1).unwrap();
        assert_abs_diff_eq!(m.weights[0], 1.0 / 3.0, epsilon = 1e-12);
        let (c1, c2) = gibbs_constants(&m, &pot, 6, 1 << 16).unwrap();
        assert_abs_diff_eq!(c1, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c2, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn uniform_depth_three() {
        let m = gibbs_weights(&zero(2), 3).unwrap();
        assert!(m.weights.iter().all(|w| (w - 0.125).abs() < 1e-14));
    }

    #[test]
    fn enumeration_and_transfer_agree() {
        let pot = BlockPotential::new(3, 2, (0..9).map(|i| 0.1 * i as f64 - 0.3).collect()).unwrap();
        let dp = log_z_memory(&pot, 2, 7, 1);
        let en = log_z_enumerate(&pot, 7, 1);
        assert_abs_diff_eq!(dp, en, epsilon = 1e-11);
    }

    #[test]
    fn csv_round_trip() {
        let pot = BlockPotential::new(3, 2, (0..9).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut m = gibbs_weights(&pot, 2).unwrap();
        m.c1 = Some(0.9);
        let back = CylinderMeasure::from_csv(&m.to_csv(",scheme=test")).unwrap();
        assert_eq!(back.weights, m.weights);
        assert_eq!(back.c1, Some(0.9));
        assert_eq!(back.pressure, m.pressure);
    }

    #[test]
    fn markov_entropy_of_bernoulli() {
        let m = CylinderMeasure::bernoulli(&[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(m.entropy(), 2f64.ln(), epsilon = 1e-15);
    }
}
