//! Subcommand implementations. Each writes its artifacts into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use serde_json::json;
use thermoscheme::maps::{Interval, MapKind, PiecewiseMap, UnimodalMap};
use thermoscheme::scheme::{
    build_doubling_scheme, build_first_return_scheme, build_unimodal_scheme, verify_scheme, DoublingVariant,
    InducingScheme, SchemeReport,
};
use thermoscheme::shift::{gibbs_weights, gurevich_pressure_orbits, leading_eigen, CylinderMeasure, StateTable};
use thermoscheme::stats::{
    clt_test, correlation_fit, correlation_table, lyapunov_samples, sample_lift, Observable, Sampler,
};
use thermoscheme::suite::{run_suite, SuiteConfig};
use thermoscheme::thermo::{
    check_liftability, equilibrium_for, lift, lift_unchecked, pressure_curve, t_bounds,
    verify_abramov_kac, BasePotential, Density, EquilibriumOptions, InducedPotential, TBounds, TowerMeasure,
};
use thermoscheme::Error;

use crate::config::RunConfig;

/// Why a command stopped: maps onto the process exit status.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(Error),
    #[error("{0}")]
    Acceptance(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical(_) => 3,
            Self::Acceptance(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Self::Numerical(e)
        } else {
            Self::Config(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Config(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

/// Shared state for one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
    pub out_dir: PathBuf,
}

fn clean(s: &str) -> String {
    s.replace([',', '\n'], ";")
}

impl Ctx {
    pub fn new(cfg: RunConfig, out_dir: PathBuf) -> Result<Self, Failure> {
        fs::create_dir_all(&out_dir)?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, out_dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn csv_header(&self, scheme: Option<&InducingScheme>) -> String {
        let mut h = format!(",config_hash={},preset={}", self.hash, self.cfg.preset);
        if let Some(s) = scheme {
            let m = s.meta();
            h.push_str(&format!(
                ",scheme={},truncation={},tau_convention={}",
                clean(&m.variant),
                m.truncation,
                clean(&m.tau_convention)
            ));
        }
        h
    }

    fn write_json<T: Serialize>(&self, name: &str, scheme: Option<&InducingScheme>, result: &T) -> CmdResult {
        let doc = json!({
            "config_hash": self.hash,
            "preset": self.cfg.preset,
            "scheme_meta": scheme.map(|s| s.meta()),
            "result": result,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Config(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    fn write(&self, name: &str, text: &str) -> CmdResult {
        let p = self.path(name);
        fs::write(&p, text)?;
        info!("wrote {}", p.display());
        Ok(())
    }

    pub fn map(&self) -> Result<PiecewiseMap, Failure> {
        Ok(match self.cfg.map.as_str() {
            "doubling" => PiecewiseMap::doubling(),
            "tent" => PiecewiseMap::tent(self.cfg.slope)?,
            _ => PiecewiseMap::quadratic(self.cfg.a)?,
        })
    }

    pub fn scheme(&self) -> Result<InducingScheme, Failure> {
        let c = &self.cfg;
        let need = |m: &str| {
            if c.map == m {
                Ok(())
            } else {
                Err(Failure::Config(format!("scheme {} needs map {m}, got {}", c.scheme, c.map)))
            }
        };
        let s = match c.scheme.as_str() {
            "plain" | "refined" => {
                need("doubling")?;
                let v = if c.scheme == "plain" { DoublingVariant::Plain } else { DoublingVariant::Refined };
                build_doubling_scheme(v, c.n_max)?
            }
            "first-return" => {
                let map = self.map()?;
                let hi = map.ambient.hi;
                let base = Interval::new(map.ambient.mid(), hi)?;
                build_first_return_scheme(&map, base, c.n_max)?
            }
            _ => {
                need("quadratic")?;
                build_unimodal_scheme(&UnimodalMap::quadratic(c.a)?, c.n_max)?
            }
        };
        info!("scheme {} with {} elements", s.meta().variant, s.len());
        Ok(s)
    }

    fn potential(&self) -> BasePotential {
        BasePotential::Geometric { t: self.cfg.t, c: self.cfg.c }
    }

    fn eq_options(&self, range: Option<TBounds>) -> EquilibriumOptions {
        EquilibriumOptions {
            alphabet: self.cfg.alphabet,
            depth: self.cfg.depth,
            audit_depth: self.cfg.audit_depth,
            audit_cap: self.cfg.audit_cap,
            force: self.cfg.force,
            range,
        }
    }

    /// The admissible `t`-range; it constrains unimodal maps only.
    fn range(&self, scheme: &InducingScheme, report: &SchemeReport) -> Option<TBounds> {
        if scheme.map().kind() != MapKind::Unimodal {
            return None;
        }
        t_bounds(report.tail.lambda1, report.lambda3, report.gamma.gamma).ok()
    }
}

pub fn scheme_build(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    ctx.write_json("scheme.json", Some(&s), &s.to_json())?;
    println!("elements\t{}", s.len());
    println!("max_tau\t{}", s.max_tau(s.len()));
    Ok(())
}

pub fn scheme_verify(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let r = verify_scheme(&s, ctx.cfg.verify_depth)?;
    ctx.write_json("report.json", Some(&s), &r)?;
    println!("lambda1\t{}", r.tail.lambda1);
    println!("lambda3\t{}", r.lambda3);
    println!("gamma\t{}", r.gamma.gamma);
    println!("h1_max_defect\t{}", r.h1_max_defect);
    let checks = [
        (r.h1_pass && r.h1_max_defect < ctx.cfg.h1_tol, "(H1)", format!("max endpoint defect {}", r.h1_max_defect)),
        (r.h2_pass, "(H2)", format!("worst cylinder ratio {}", r.h2_worst_ratio)),
        (r.tail.pass, "(H4)", format!("tail fit residual {}", r.tail.max_residual)),
        (r.distortion.pass, "(H5)", format!("distortion fit residual {}", r.distortion.max_residual)),
    ];
    for (ok, cond, detail) in checks {
        println!("{cond}\t{}", if ok { "pass" } else { "fail" });
        if !ok && !ctx.cfg.force {
            return Err(Failure::Numerical(Error::ConditionFailed { condition: cond, detail }));
        }
    }
    Ok(())
}

pub fn shift_pressure(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let pot = InducedPotential::new(&s, ctx.potential())?;
    let shift = pot.shift_potential(ctx.cfg.alphabet, 0.0);
    let table = StateTable::build(&shift, ctx.cfg.depth)?;
    let spectrum = leading_eigen(&table)?;
    let orbits = gurevich_pressure_orbits(&shift, 8, 0).unwrap_or_default();
    let result = json!({
        "operator": spectrum.log_lambda,
        "iterations": spectrum.iterations,
        "residual": spectrum.residual,
        "orbits": orbits.iter().map(|o| json!({"n": o.n, "log_z": o.log_z, "estimate": o.estimate()})).collect::<Vec<_>>(),
    });
    ctx.write_json("pressure.json", Some(&s), &result)?;
    println!("P_G\t{}", spectrum.log_lambda);
    Ok(())
}

pub fn shift_gibbs(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let pot = InducedPotential::new(&s, ctx.potential())?;
    let shift = pot.shift_potential(ctx.cfg.alphabet, 0.0);
    let mut m = gibbs_weights(&shift, ctx.cfg.depth)?;
    let (c1, c2) = thermoscheme::shift::gibbs_constants(&m, &shift, ctx.cfg.audit_depth, ctx.cfg.audit_cap)?;
    m.c1 = Some(c1);
    m.c2 = Some(c2);
    ctx.write("gibbs.csv", &m.to_csv(&ctx.csv_header(Some(&s))))?;
    println!("P_G\t{}\nC1\t{c1}\nC2\t{c2}", m.pressure);
    Ok(())
}

struct Solved {
    measure: CylinderMeasure,
    tower: TowerMeasure,
    report: SchemeReport,
}

/// The equilibrium of the configured potential, or the measure named in the config.
fn solve(ctx: &Ctx, s: &InducingScheme, write: bool) -> Result<Solved, Failure> {
    let report = verify_scheme(s, ctx.cfg.verify_depth)?;
    if let Some(path) = &ctx.cfg.measure {
        let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("cannot read {path}: {e}")))?;
        let measure = CylinderMeasure::from_csv(&text)?;
        if measure.symbols as u64 > s.len() {
            return Err(Failure::Config(format!(
                "measure has {} symbols but the scheme only {}",
                measure.symbols,
                s.len()
            )));
        }
        let tower = if ctx.cfg.force { lift_unchecked(&measure, s) } else { lift(&measure, s)? };
        return Ok(Solved { measure, tower, report });
    }
    let range = ctx.range(s, &report);
    if let Some(r) = range {
        if !r.contains(ctx.cfg.t) && !ctx.cfg.force {
            return Err(Failure::Numerical(Error::OutsideRange { t: ctx.cfg.t, t0: r.t0, t1: r.t1 }));
        }
    }
    let pot = InducedPotential::new(s, ctx.potential())?;
    let eq = equilibrium_for(&pot, &ctx.eq_options(range))?;
    if write {
        let q = eq.tower.q;
        let lyapunov = eq.tower.lyapunov(s).ok();
        ctx.write("measure.csv", &eq.measure.to_csv(&format!("{},Q={q}", ctx.csv_header(Some(s)))))?;
        let result = json!({
            "t": ctx.cfg.t,
            "c": ctx.cfg.c,
            "range": range,
            "root": eq.root,
            "conditions": eq.report,
            "overridden": eq.overridden,
            "Q": q,
            "lyapunov": lyapunov,
        });
        ctx.write_json("equilibrium.json", Some(s), &result)?;
        println!("P_L\t{}\nQ\t{q}", eq.root.value);
        if !eq.overridden.is_empty() {
            println!("forced past\t{}", eq.overridden.join(" "));
        }
    }
    Ok(Solved { measure: eq.measure, tower: eq.tower, report })
}

pub fn thermo_equilibrium(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    solve(ctx, &s, true).map(|_| ())
}

pub fn thermo_pressure_curve(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let report = verify_scheme(&s, ctx.cfg.verify_depth)?;
    let range = ctx.range(&s, &report);
    let curve = pressure_curve(&s, &ctx.cfg.t_grid, &ctx.eq_options(range), report.tail.lambda1, report.lambda3)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
    let mut out = format!(
        "# monotone={},convex={},bounds_ok={}{}\nt,P,root_residual,Q,C1,C2,leakage,p4_theta,lyapunov,status\n",
        curve.monotone,
        curve.convex,
        curve.bounds_ok,
        ctx.csv_header(Some(&s))
    );
    for p in &curve.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.t,
            p.p,
            p.root_residual,
            opt(p.q),
            opt(p.c1),
            opt(p.c2),
            p.leakage,
            opt(p.p4_theta),
            opt(p.lyapunov),
            clean(&p.status)
        ));
        println!("{}\t{}\t{}", p.t, p.p, p.status);
    }
    ctx.write("pressure_curve.csv", &out)?;
    println!("monotone\t{}\nconvex\t{}\nbounds\t{}", curve.monotone, curve.convex, curve.bounds_ok);
    Ok(())
}

pub fn thermo_liftability(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let l = check_liftability(&s, &Density::Length);
    ctx.write_json("liftability.json", Some(&s), &l)?;
    println!("verdict\t{}", l.verdict);
    if let Some(q) = l.limit {
        println!("Q\t{q}");
    }
    Ok(())
}

pub fn thermo_abramov_kac(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let solved = solve(ctx, &s, false)?;
    let ak = verify_abramov_kac(&solved.measure, &s, &ctx.potential())?;
    ctx.write_json("abramov_kac.json", Some(&s), &ak)?;
    println!("h_F\t{}\nQ\t{}", ak.h_induced, ak.q);
    match (ak.h_map, ak.entropy_residual) {
        (Some(h), Some(r)) => println!("h_f\t{h}\nabramov_residual\t{r}"),
        _ => println!("h_f\tunavailable ({})", ak.entropy_note.as_deref().unwrap_or("")),
    }
    println!("kac_residual\t{}", ak.kac_residual);
    Ok(())
}

fn measure_id(ctx: &Ctx) -> String {
    ctx.cfg.measure.clone().unwrap_or_else(|| format!("equilibrium:t={},c={}", ctx.cfg.t, ctx.cfg.c))
}

pub fn stats_sample(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let solved = solve(ctx, &s, false)?;
    let set = sample_lift(&solved.tower, &s, ctx.cfg.n, ctx.cfg.seed, ctx.cfg.sample_depth, &measure_id(ctx))?;
    ctx.write("samples.csv", &set.to_csv(&ctx.csv_header(Some(&s))))?;
    println!("samples\t{}\nmean\t{}", set.points.len(), set.mean());
    Ok(())
}

pub fn stats_lyapunov(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let solved = solve(ctx, &s, false)?;
    let set = sample_lift(&solved.tower, &s, ctx.cfg.n, ctx.cfg.seed, ctx.cfg.sample_depth, &measure_id(ctx))?;
    let est = lyapunov_samples(&set, s.map())?;
    let quadrature = solved.tower.lyapunov(&s).ok();
    let lo = solved.report.tail.lambda1.ln();
    let hi = solved.report.lambda3.ln();
    let tol = ctx.cfg.bracket_tol;
    let value = quadrature.unwrap_or(est.value);
    let inside = lo - tol <= value && value <= hi + tol;
    let result = json!({
        "sampled": est,
        "quadrature": quadrature,
        "log_lambda1": lo,
        "log_lambda3": hi,
        "inside_bracket": inside,
    });
    ctx.write_json("lyapunov.json", Some(&s), &result)?;
    println!("lyapunov\t{value}\nsampled\t{}\nbracket\t[{lo}, {hi}]\tinside={inside}", est.value);
    Ok(())
}

pub fn stats_correlations(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let solved = solve(ctx, &s, false)?;
    let sampler = Sampler::new(&solved.tower, &s, ctx.cfg.sample_depth)?;
    let map = s.map();
    let h1 = Observable::by_id(&ctx.cfg.observable, map)?;
    let h2 = Observable::by_id(&ctx.cfg.observable2, map)?;
    let (c, header) = (&ctx.cfg, ctx.csv_header(Some(&s)));
    match correlation_fit(&sampler, &h1, &h2, c.lag_max, c.n, c.seed) {
        Ok(fit) => {
            ctx.write("correlations.csv", &fit.to_csv(&header))?;
            println!("theta\t{}\nK\t{}", fit.theta, fit.k);
        }
        Err(Error::AllNoise) => {
            let (cs, se) = correlation_table(&sampler, &h1, &h2, c.lag_max, c.n, c.seed);
            let mut out = format!("# observables={}|{},samples={},fit=all-noise{header}\nlag,C,se\n", h1.id, h2.id, c.n);
            for (l, (v, e)) in cs.iter().zip(&se).enumerate() {
                out.push_str(&format!("{l},{v},{e}\n"));
            }
            ctx.write("correlations.csv", &out)?;
            println!("fit\tno lag above noise; consistent with fast decay");
        }
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

pub fn stats_clt(ctx: &Ctx) -> CmdResult {
    let s = ctx.scheme()?;
    let solved = solve(ctx, &s, false)?;
    let sampler = Sampler::new(&solved.tower, &s, ctx.cfg.sample_depth)?;
    let h = Observable::by_id(&ctx.cfg.observable, s.map())?;
    let r = clt_test(&sampler, &h, ctx.cfg.block_len, ctx.cfg.blocks, ctx.cfg.seed)?;
    ctx.write_json("clt.json", Some(&s), &r)?;
    println!("gamma\t{}\nks\t{}", r.gamma, r.ks_distance);
    Ok(())
}

/// Runs criteria 1–12 and writes the pass/fail table.
pub fn verify_all(ctx: &Ctx) -> CmdResult {
    let cfg = SuiteConfig { seed: ctx.cfg.seed, ..SuiteConfig::default() };
    let results = run_suite(&cfg);
    let mut csv = format!("# suite{}\nid,name,status,detail\n", ctx.csv_header(None));
    for r in &results {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!("{:>2}  {status}  {:<32} {}", r.id, r.name, r.detail);
        csv.push_str(&format!("{},{},{status},{}\n", r.id, r.name, clean(&r.detail)));
    }
    ctx.write("verify_all.csv", &csv)?;
    ctx.write_json("verify_all.json", None, &results)?;
    let failed: Vec<String> = results.iter().filter(|r| !r.pass).map(|r| r.id.to_string()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Acceptance(format!("criteria failed: {}", failed.join(", "))))
    }
}

pub fn out_dir_or_default(p: Option<&Path>) -> PathBuf {
    p.map_or_else(|| PathBuf::from("out"), Path::to_path_buf)
}
