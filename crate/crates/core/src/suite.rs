//! The end-to-end verification suite behind `verify-all`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{PiecewiseMap, UnimodalMap};
use crate::scheme::{build_doubling_scheme, build_unimodal_scheme, compute_n0, verify_scheme, DoublingVariant, InducingScheme};
use crate::shift::{
    decode, gibbs_constants, gibbs_weights, gurevich_pressure_operator, gurevich_pressure_orbits, periodic_sum,
    BlockPotential, CylinderMeasure, FirstSymbolPotential,
};
use crate::stats::{clt_test, correlation_fit, correlation_table, Observable, Sampler, DEFAULT_SAMPLE_DEPTH};
use crate::thermo::{
    check_liftability, compute_pl, equilibrium_for, lift_unchecked, p2_series, pressure_curve, t_bounds,
    verify_abramov_kac, BasePotential, Density, EquilibriumOptions, InducedPotential, LiftVerdict,
    PressureOptions, TowerMeasure,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub corr_samples: usize,
    pub corr_lag_max: usize,
    pub clt_block_len: usize,
    pub clt_blocks: usize,
    pub coboundary_block_len: usize,
    pub coboundary_blocks: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0x5eed,
            corr_samples: 1_000_000,
            corr_lag_max: 20,
            clt_block_len: 1 << 14,
            clt_blocks: 10_000,
            coboundary_block_len: 1 << 10,
            coboundary_blocks: 2_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub values: Vec<(String, f64)>,
}

pub const CRITERIA: [(u8, &str); 12] = [
    (1, "pressure of the zero potential"),
    (2, "P_1=0 and the pressure curve"),
    (3, "Abramov and Kac formulae"),
    (4, "Gibbs certification"),
    (5, "non-liftability of length"),
    (6, "singular equilibrium"),
    (7, "t-range formulas"),
    (8, "scheme verification"),
    (9, "unimodal constants"),
    (10, "Lyapunov bracket"),
    (11, "decay of correlations"),
    (12, "central limit theorem"),
];

struct Outcome {
    pass: bool,
    detail: String,
    values: Vec<(String, f64)>,
}

impl Outcome {
    fn new(pass: bool, values: Vec<(&str, f64)>) -> Self {
        let values: Vec<(String, f64)> = values.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let detail = values.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
        Self { pass, detail, values }
    }
}

fn plain(n_max: u32) -> Result<InducingScheme> {
    build_doubling_scheme(DoublingVariant::Plain, n_max)
}

/// Bernoulli weights `2^{-(n+1)}` on the first `symbols` elements of the plain scheme.
pub fn lebesgue_induced(symbols: usize) -> Result<CylinderMeasure> {
    let probs: Vec<f64> = (0..symbols).map(|k| 0.5f64.powi(k as i32 + 1)).collect();
    let total: f64 = probs.iter().sum();
    CylinderMeasure::bernoulli(&probs.iter().map(|p| p / total).collect::<Vec<_>>())
}

fn curve_options() -> EquilibriumOptions {
    EquilibriumOptions { alphabet: 30, depth: 1, audit_depth: 3, audit_cap: 30_000, force: false, range: None }
}

const CURVE_TS: [f64; 5] = [-0.5, 0.0, 0.5, 1.0, 1.5];

fn refined_equilibrium(scheme: &InducingScheme) -> Result<(TowerMeasure, CylinderMeasure)> {
    let pot = InducedPotential::new(scheme, BasePotential::constant(-2.0))?;
    let opts =
        EquilibriumOptions { alphabet: scheme.len(), depth: 1, audit_depth: 1, audit_cap: 1 << 17, force: true, range: None };
    let eq = equilibrium_for(&pot, &opts)?;
    Ok((eq.tower, eq.measure))
}

fn c1() -> Result<Outcome> {
    let pot = FirstSymbolPotential { values: vec![0.0, 0.0] };
    let op = gurevich_pressure_operator(&pot, 1)?;
    let orbit = gurevich_pressure_orbits(&pot, 16, 0)?.last().map(|e| e.estimate()).unwrap_or(f64::NAN);
    let ln2 = 2f64.ln();
    Ok(Outcome::new(
        (op - ln2).abs() < 1e-12 && (orbit - ln2).abs() < 1e-9,
        vec![("operator", op), ("orbits_n16", orbit)],
    ))
}

fn c2() -> Result<Outcome> {
    let s = plain(29)?;
    let pot = InducedPotential::new(&s, BasePotential::phi_t(1.0))?;
    let p1 = compute_pl(&pot, &PressureOptions { alphabet: 30, depth: 1 })?.value;
    let report = verify_scheme(&s, 6)?;
    let curve = pressure_curve(&s, &CURVE_TS, &curve_options(), report.tail.lambda1, report.lambda3)?;
    let err = curve
        .samples
        .iter()
        .map(|p| (p.p - (1.0 - p.t) * 2f64.ln()).abs())
        .fold(0.0, f64::max);
    Ok(Outcome::new(
        p1.abs() < 1e-6 && err < 1e-4 && curve.monotone && curve.convex,
        vec![
            ("P_1", p1),
            ("max_curve_error", err),
            ("monotone", curve.monotone as u8 as f64),
            ("convex", curve.convex as u8 as f64),
        ],
    ))
}

fn c3() -> Result<Outcome> {
    let s = plain(49)?;
    let nu = lebesgue_induced(50)?;
    let ak = verify_abramov_kac(&nu, &s, &BasePotential::phi_t(1.0))?;
    let ln2 = 2f64.ln();
    let h_map = ak.h_map.ok_or_else(|| Error::EntropyUnavailable(ak.entropy_note.clone().unwrap_or_default()))?;
    let closed = (ak.h_induced - 2.0 * ln2).abs().max((ak.q - 2.0).abs()).max((h_map - ln2).abs());
    let entropy_residual = ak.entropy_residual.unwrap_or(f64::NAN);
    Ok(Outcome::new(
        entropy_residual < 1e-9 && ak.kac_residual < 1e-9 && closed < 1e-9,
        vec![
            ("h_F", ak.h_induced),
            ("Q", ak.q),
            ("h_f", h_map),
            ("abramov_residual", entropy_residual),
            ("kac_residual", ak.kac_residual),
            ("closed_form_error", closed),
        ],
    ))
}

/// `ν[u]` from periodic-orbit sums over words of length `n` starting with `u`.
pub fn brute_force_cylinders(pot: &BlockPotential, prefix_len: usize, n: usize) -> Vec<f64> {
    let k = pot.symbols;
    let total = k.pow(n as u32);
    let span = k.pow((n - prefix_len) as u32);
    let mut sums = vec![0.0; k.pow(prefix_len as u32)];
    for idx in 0..total {
        let w = decode(idx, k, n);
        sums[idx / span] += periodic_sum(pot, &w).exp();
    }
    let z: f64 = sums.iter().sum();
    sums.iter().map(|v| v / z).collect()
}

fn c4() -> Result<Outcome> {
    let first = FirstSymbolPotential { values: vec![0.3, -1.2, 0.5, -0.1] };
    let m = gibbs_weights(&first, 1)?;
    let (lo, hi) = gibbs_constants(&m, &first, 4, 1 << 12)?;
    let values: Vec<f64> = (0..9).map(|i| 0.1 * ((i * 7 % 9) as f64 - 4.0) / 4.0).collect();
    let block = BlockPotential::new(3, 2, values)?;
    let depth3 = gibbs_weights(&block, 3)?;
    let brute = brute_force_cylinders(&block, 3, 8);
    let err = depth3.weights.iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Outcome::new(
        (lo - 1.0).abs() < 1e-10 && (hi - 1.0).abs() < 1e-10 && err < 1e-6,
        vec![("C1", lo), ("C2", hi), ("memory2_max_error", err)],
    ))
}

fn c5() -> Result<Outcome> {
    let s = build_doubling_scheme(DoublingVariant::Refined, 5)?;
    let lift = check_liftability(&s, &Density::Length);
    let min_inc = lift.levels.iter().skip(1).take(5).map(|l| l.increment).fold(f64::INFINITY, f64::min);
    let pot = InducedPotential::new(&s, BasePotential::constant(-2.0))?;
    let p2 = p2_series(&pot, 0.0);
    let ratio = (p2.log_terms[4].1 - p2.log_terms[3].1).exp();
    Ok(Outcome::new(
        min_inc >= 0.4 && lift.verdict == LiftVerdict::NotLiftable && p2.pass && ratio < 1e-3,
        vec![
            ("min_increment_levels_1_5", min_inc),
            ("not_liftable", (lift.verdict == LiftVerdict::NotLiftable) as u8 as f64),
            ("p2_level4_ratio", ratio),
            ("p2_sum", p2.log_sum.exp()),
        ],
    ))
}

fn c6() -> Result<Outcome> {
    let s = build_doubling_scheme(DoublingVariant::Refined, 4)?;
    let (_, nu) = refined_equilibrium(&s)?;
    let lengths: Vec<f64> = (0..s.len()).map(|k| s.interval(k).len()).collect();
    let total: f64 = lengths.iter().sum();
    let tv = 0.5
        * nu
            .symbol_marginal()
            .iter()
            .zip(&lengths)
            .map(|(p, l)| (p - l / total).abs())
            .sum::<f64>();
    Ok(Outcome::new(tv > 0.1, vec![("total_variation", tv)]))
}

fn c7() -> Result<Outcome> {
    let a = t_bounds(2.0, 8.0, 1.0)?;
    let b = t_bounds(2.0, 8.0, 4.0)?;
    let d = t_bounds(2.0, 2.0, 1.0)?;
    Ok(Outcome::new(
        a.t0 == -0.5 && a.t1 == 1.5 && b.t0 == 0.5 && d.degenerate,
        vec![("t0", a.t0), ("t1", a.t1), ("t0_gamma4", b.t0), ("degenerate", d.degenerate as u8 as f64)],
    ))
}

fn c8() -> Result<Outcome> {
    let s = plain(29)?;
    let r = verify_scheme(&s, 6)?;
    let s_ok = r.s_counts.values().all(|&c| c == 1);
    let zero_defect = r.distortion.c2 == 0.0 && r.distortion.lambda2.is_none();
    let u = UnimodalMap::quadratic(1.999)?;
    let us = build_unimodal_scheme(&u, 12)?;
    let ur = verify_scheme(&us, 2)?;
    Ok(Outcome::new(
        (r.tail.lambda1 - 2.0).abs() < 1e-6 && s_ok && zero_defect && ur.h1_pass,
        vec![
            ("lambda1", r.tail.lambda1),
            ("S_constant_one", s_ok as u8 as f64),
            ("distortion_c2", r.distortion.c2),
            ("unimodal_elements", us.len() as f64),
            ("unimodal_h1_max_defect", ur.h1_max_defect),
        ],
    ))
}

fn c9() -> Result<Outcome> {
    let u = UnimodalMap::quadratic(2.0)?;
    let alpha = u.alpha()?;
    let alpha1 = u.alpha1()?;
    let v = UnimodalMap::quadratic(1.999)?;
    let n0 = compute_n0(&v, 1 << 20)?;
    let a = 1.999f64;
    let alpha_v = (-1.0 + (1.0 + 4.0 * a).sqrt()) / (2.0 * a);
    let mut x = 0.0f64;
    let mut direct = 0;
    for n in 1..=(1 << 20) {
        x = 1.0 - a * x * x;
        if x.abs() < alpha_v {
            direct = n;
            break;
        }
    }
    Ok(Outcome::new(
        (alpha - 0.5).abs() < 1e-10 && (alpha1 + 3f64.sqrt() / 2.0).abs() < 1e-10 && n0 == direct,
        vec![("alpha", alpha), ("alpha1", alpha1), ("N0", n0 as f64), ("N0_direct", direct as f64)],
    ))
}

fn c10() -> Result<Outcome> {
    let s = plain(29)?;
    let r = verify_scheme(&s, 6)?;
    let curve = pressure_curve(&s, &CURVE_TS, &curve_options(), r.tail.lambda1, r.lambda3)?;
    let tol = 1e-3;
    let mut worst: f64 = f64::NEG_INFINITY;
    let mut all = true;
    for sample in &curve.samples {
        let Some(l) = sample.lyapunov else {
            all = false;
            continue;
        };
        worst = worst.max(r.tail.lambda1.ln() - l).max(l - r.lambda3.ln());
    }
    let rs = build_doubling_scheme(DoublingVariant::Refined, 4)?;
    let rr = verify_scheme(&rs, 4)?;
    let (tower, _) = refined_equilibrium(&rs)?;
    let lr = tower.lyapunov(&rs)?;
    let refined_gap = (rr.tail.lambda1.ln() - lr).max(lr - rr.lambda3.ln());
    worst = worst.max(refined_gap);
    Ok(Outcome::new(
        all && worst <= tol,
        vec![
            ("worst_violation", worst),
            ("refined_lyapunov", lr),
            ("refined_log_lambda1", rr.tail.lambda1.ln()),
            ("refined_log_lambda3", rr.lambda3.ln()),
        ],
    ))
}

fn lebesgue_tower() -> Result<(InducingScheme, TowerMeasure)> {
    let s = plain(39)?;
    let t = lift_unchecked(&lebesgue_induced(40)?, &s);
    Ok((s, t))
}

fn c11(cfg: &SuiteConfig) -> Result<Outcome> {
    let (s, t) = lebesgue_tower()?;
    let sampler = Sampler::new(&t, &s, DEFAULT_SAMPLE_DEPTH)?;
    let x = Observable::identity();
    let fit = correlation_fit(&sampler, &x, &x, cfg.corr_lag_max, cfg.corr_samples, cfg.seed)?;
    let z_exact = fit
        .fitted_lags
        .iter()
        .map(|&l| (fit.correlations[l] - 0.5f64.powi(l as i32) / 12.0).abs() / fit.std_errors[l])
        .fold(0.0, f64::max);
    let c = Observable::cos2pi();
    let (cs, se) = correlation_table(&sampler, &c, &c, cfg.corr_lag_max, cfg.corr_samples, cfg.seed ^ 0x11);
    let z_cos = cs.iter().zip(&se).skip(1).map(|(v, e)| (v / e).abs()).fold(0.0, f64::max);
    Ok(Outcome::new(
        (fit.theta - 0.5).abs() <= 0.05 && z_exact < 5.0 && z_cos <= 3.0,
        vec![("theta", fit.theta), ("K", fit.k), ("max_z_vs_exact", z_exact), ("max_z_cos", z_cos)],
    ))
}

fn c12(cfg: &SuiteConfig) -> Result<Outcome> {
    let (s, t) = lebesgue_tower()?;
    let sampler = Sampler::new(&t, &s, DEFAULT_SAMPLE_DEPTH)?;
    let r = clt_test(&sampler, &Observable::centered_identity(), cfg.clt_block_len, cfg.clt_blocks, cfg.seed)?;
    let cob = Observable::sine_coboundary(PiecewiseMap::doubling());
    let degenerate = match clt_test(&sampler, &cob, cfg.coboundary_block_len, cfg.coboundary_blocks, cfg.seed ^ 0x12) {
        Err(Error::DegenerateVariance { .. }) => true,
        Err(e) => return Err(e),
        Ok(_) => false,
    };
    Ok(Outcome::new(
        (r.gamma - 0.5).abs() <= 0.02 && r.ks_distance < 0.05 && degenerate,
        vec![
            ("gamma", r.gamma),
            ("ks_distance", r.ks_distance),
            ("variance_growth", r.variance_growth),
            ("coboundary_degenerate", degenerate as u8 as f64),
        ],
    ))
}

/// Runs one criterion; errors become failures carrying the message.
pub fn run_criterion(id: u8, cfg: &SuiteConfig) -> CriterionResult {
    let outcome = match id {
        1 => c1(),
        2 => c2(),
        3 => c3(),
        4 => c4(),
        5 => c5(),
        6 => c6(),
        7 => c7(),
        8 => c8(),
        9 => c9(),
        10 => c10(),
        11 => c11(cfg),
        12 => c12(cfg),
        _ => Err(Error::InvalidParameter(format!("no criterion {id}"))),
    };
    let name = CRITERIA.iter().find(|c| c.0 == id).map_or("unknown", |c| c.1).to_string();
    match outcome {
        Ok(o) => CriterionResult { id, name, pass: o.pass, detail: o.detail, values: o.values },
        Err(e) => CriterionResult { id, name, pass: false, detail: format!("error: {e}"), values: Vec::new() },
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|&(id, _)| run_criterion(id, cfg)).collect()
}
