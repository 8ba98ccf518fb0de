use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use thermoscheme::scheme::{build_doubling_scheme, DoublingVariant};
use thermoscheme::shift::{
    gibbs_weights, gurevich_pressure_operator, gurevich_pressure_orbits, BlockPotential, CylinderMeasure,
    FirstSymbolPotential,
};
use thermoscheme::thermo::{
    compute_pl, equilibrium_for, BasePotential, EquilibriumOptions, InducedPotential, PressureOptions,
};

/// `log` of the spectral radius of `exp(values[a*k + b])` by plain power iteration.
fn matrix_log_radius(k: usize, values: &[f64]) -> f64 {
    let mut v = vec![1.0; k];
    let mut log_norm = 0.0;
    for _ in 0..2000 {
        let w: Vec<f64> = (0..k).map(|a| (0..k).map(|b| values[a * k + b].exp() * v[b]).sum()).collect();
        let n: f64 = w.iter().sum();
        log_norm = n.ln() - v.iter().sum::<f64>().ln();
        v = w.iter().map(|x| x / n).collect();
    }
    log_norm
}

#[test]
fn zero_potential_on_two_shift() {
    let pot = FirstSymbolPotential { values: vec![0.0, 0.0] };
    assert_abs_diff_eq!(gurevich_pressure_operator(&pot, 1).unwrap(), 2f64.ln(), epsilon = 1e-12);
    let orbits = gurevich_pressure_orbits(&pot, 16, 0).unwrap();
    assert_abs_diff_eq!(orbits.last().unwrap().estimate(), 2f64.ln(), epsilon = 1e-9);
}

#[test]
fn truncated_geometric_pressure() {
    let s = build_doubling_scheme(DoublingVariant::Plain, 29).unwrap();
    let pot = InducedPotential::new(&s, BasePotential::phi_t(1.0)).unwrap();
    let shift = pot.shift_potential(30, 0.0);
    let p = gurevich_pressure_operator(&shift, 1).unwrap();
    assert_abs_diff_eq!(p, (1.0 - 0.5f64.powi(30)).ln(), epsilon = 1e-15);
}

#[test]
fn pressure_matches_closed_form_in_t() {
    let s = build_doubling_scheme(DoublingVariant::Plain, 39).unwrap();
    for t in [-0.5, 0.0, 0.5, 1.0, 1.5] {
        let pot = InducedPotential::new(&s, BasePotential::phi_t(t)).unwrap();
        let p = compute_pl(&pot, &PressureOptions { alphabet: 40, depth: 1 }).unwrap();
        assert_abs_diff_eq!(p.value, (1.0 - t) * 2f64.ln(), epsilon = 1e-6);
    }
}

#[test]
fn memory_two_weights_match_periodic_sums() {
    let values = [0.05, -0.02, 0.01, 0.03, -0.04, 0.0, 0.02, 0.01, -0.01];
    let pot = BlockPotential::new(3, 2, values.to_vec()).unwrap();
    let m = gibbs_weights(&pot, 3).unwrap();
    let brute = thermoscheme::suite::brute_force_cylinders(&pot, 3, 8);
    for (a, b) in m.weights.iter().zip(&brute) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-6);
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|x| **x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn operator_and_orbit_routes_agree(values in prop::collection::vec(-0.5f64..0.5, 9)) {
        let pot = BlockPotential::new(3, 2, values.clone()).unwrap();
        let op = gurevich_pressure_operator(&pot, 2).unwrap();
        let orbit = gurevich_pressure_orbits(&pot, 14, 0).unwrap().last().unwrap().estimate();
        let oracle = matrix_log_radius(3, &values);
        prop_assert!((op - oracle).abs() < 1e-10);
        prop_assert!((orbit - oracle).abs() < 1e-6);
    }

    #[test]
    fn first_symbol_measures_are_exact_gibbs(values in prop::collection::vec(-2.0f64..2.0, 2..6)) {
        let pot = FirstSymbolPotential { values: values.clone() };
        let m = gibbs_weights(&pot, 1).unwrap();
        let z: f64 = values.iter().map(|v| v.exp()).sum();
        for (w, v) in m.weights.iter().zip(&values) {
            prop_assert!((w - v.exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_invariance(t in -0.5f64..1.5, c in -3.0f64..3.0) {
        let s = build_doubling_scheme(DoublingVariant::Plain, 29).unwrap();
        let opts = EquilibriumOptions { alphabet: 30, depth: 1, audit_depth: 2, audit_cap: 1000, force: false, range: None };
        let a = InducedPotential::new(&s, BasePotential::Geometric { t, c: 0.0 }).unwrap();
        let b = InducedPotential::new(&s, BasePotential::Geometric { t, c }).unwrap();
        let ea = equilibrium_for(&a, &opts).unwrap();
        let eb = equilibrium_for(&b, &opts).unwrap();
        prop_assert!((eb.root.value - ea.root.value - c).abs() < 1e-9);
        for (x, y) in ea.measure.weights.iter().zip(&eb.measure.weights) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    /// `(h(p) + ∫φ̄ dp) / ∫τ dp ≤ P_t` for Bernoulli `p` on the plain scheme.
    #[test]
    fn free_energy_never_exceeds_pressure(raw in prop::collection::vec(0.01f64..1.0, 30), t in -0.5f64..1.5) {
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let ln2 = 2f64.ln();
        let mean_tau: f64 = p.iter().enumerate().map(|(k, x)| x * (k + 1) as f64).sum();
        let free = (entropy(&p) - t * ln2 * mean_tau) / mean_tau;
        let s = build_doubling_scheme(DoublingVariant::Plain, 29).unwrap();
        let pot = InducedPotential::new(&s, BasePotential::phi_t(t)).unwrap();
        let pl = compute_pl(&pot, &PressureOptions { alphabet: 30, depth: 1 }).unwrap().value;
        prop_assert!(free <= pl + 1e-9);
    }

    #[test]
    fn measure_csv_round_trip(raw in prop::collection::vec(0.01f64..1.0, 2..8)) {
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let m = CylinderMeasure::bernoulli(&p).unwrap();
        let back = CylinderMeasure::from_csv(&m.to_csv(",note=x")).unwrap();
        for (a, b) in back.weights.iter().zip(&m.weights) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }
}
