use proptest::prelude::*;
use thermoscheme::maps::UnimodalMap;
use thermoscheme::scheme::{build_doubling_scheme, verify_scheme, DoublingVariant};
use thermoscheme::stats::{correlation_table, lyapunov_orbit, sample_lift, Observable, Sampler};
use thermoscheme::suite::lebesgue_induced;
use thermoscheme::thermo::{equilibrium, lift_unchecked, verify_abramov_kac, BasePotential, EquilibriumOptions};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn abramov_and_kac_closed_forms() {
    let s = build_doubling_scheme(DoublingVariant::Plain, 49).unwrap();
    let nu = lebesgue_induced(50).unwrap();
    let ak = verify_abramov_kac(&nu, &s, &BasePotential::phi_t(1.0)).unwrap();
    let ln2 = 2f64.ln();
    assert!((ak.h_induced - 2.0 * ln2).abs() < 1e-9);
    assert!((ak.q - 2.0).abs() < 1e-9);
    assert!((ak.h_map.unwrap() - ln2).abs() < 1e-9);
    assert!(ak.kac_residual < 1e-9 && ak.entropy_residual.unwrap() < 1e-9);
}

#[test]
fn equilibrium_lyapunov_in_bracket() {
    let s = build_doubling_scheme(DoublingVariant::Plain, 29).unwrap();
    let r = verify_scheme(&s, 6).unwrap();
    let opts = EquilibriumOptions { alphabet: 30, depth: 1, audit_depth: 2, audit_cap: 1000, force: false, range: None };
    for t in [-0.5, 0.0, 0.5, 1.0, 1.5] {
        let eq = equilibrium(&s, t, &opts).unwrap();
        let l = eq.tower.lyapunov(&s).unwrap();
        assert!(r.tail.lambda1.ln() - 1e-3 <= l && l <= r.lambda3.ln() + 1e-3);
    }
}

#[test]
fn quadratic_orbit_lyapunov_is_log_two() {
    let u = UnimodalMap::quadratic(2.0).unwrap();
    let est = lyapunov_orbit(&u, 0.3141, 1_000_000, 1).unwrap();
    assert!((est.value - 2f64.ln()).abs() < 0.01);
}

#[test]
fn doubling_identity_correlations_follow_exact_series() {
    let s = build_doubling_scheme(DoublingVariant::Plain, 39).unwrap();
    let t = lift_unchecked(&lebesgue_induced(40).unwrap(), &s);
    let sampler = Sampler::new(&t, &s, 12).unwrap();
    let x = Observable::identity();
    let (cs, se) = correlation_table(&sampler, &x, &x, 6, 200_000, 5);
    for (n, (c, e)) in cs.iter().zip(&se).enumerate() {
        let exact = 0.5f64.powi(n as i32) / 12.0;
        assert!((c - exact).abs() < 5.0 * e, "lag {n}: {c} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn samples_independent_of_worker_count(seed in any::<u64>()) {
        let s = build_doubling_scheme(DoublingVariant::Plain, 20).unwrap();
        let t = lift_unchecked(&lebesgue_induced(21).unwrap(), &s);
        let one = in_pool(1, || sample_lift(&t, &s, 9000, seed, 12, "m").unwrap());
        let four = in_pool(4, || sample_lift(&t, &s, 9000, seed, 12, "m").unwrap());
        prop_assert_eq!(one, four);
    }
}
