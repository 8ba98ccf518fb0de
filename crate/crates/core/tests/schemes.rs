use proptest::prelude::*;
use thermoscheme::maps::{PiecewiseMap, UnimodalMap};
use thermoscheme::scheme::{
    build_doubling_scheme, build_first_return_scheme, build_unimodal_scheme, verify_scheme, DoublingVariant,
    InducingScheme,
};
use thermoscheme::thermo::{check_liftability, Density, LiftVerdict};

#[test]
fn plain_report_constants() {
    let s = build_doubling_scheme(DoublingVariant::Plain, 29).unwrap();
    let r = verify_scheme(&s, 6).unwrap();
    assert!((r.tail.lambda1 - 2.0).abs() < 1e-6);
    assert!(r.s_counts.values().all(|&c| c == 1));
    assert_eq!(r.distortion.c2, 0.0);
    assert!(r.distortion.lambda2.is_none());
    assert!(r.h1_pass && r.h2_pass);
}

#[test]
fn first_return_matches_plain_lengths() {
    let map = PiecewiseMap::doubling();
    let w = thermoscheme::maps::Interval::new(0.5, 1.0).unwrap();
    let s = build_first_return_scheme(&map, w, 12).unwrap();
    let mut lengths: Vec<(u32, f64)> = (0..s.len()).map(|k| (s.tau(k), s.interval(k).len())).collect();
    lengths.sort_by(|a, b| a.0.cmp(&b.0));
    for (tau, len) in lengths {
        assert!((len - 0.5f64.powi(tau as i32 + 1)).abs() < 1e-15);
    }
}

#[test]
fn unimodal_elements_pass_h1() {
    let u = UnimodalMap::quadratic(1.999).unwrap();
    let s = build_unimodal_scheme(&u, 12).unwrap();
    assert!(s.len() > 0);
    let r = verify_scheme(&s, 2).unwrap();
    assert!(r.h1_pass && r.h1_max_defect < 1e-9);
}

#[test]
fn plain_length_is_liftable_with_q_two() {
    let s = build_doubling_scheme(DoublingVariant::Plain, 40).unwrap();
    let l = check_liftability(&s, &Density::Length);
    assert_eq!(l.verdict, LiftVerdict::Liftable);
    assert!((l.limit.unwrap() - 2.0).abs() < 1e-9);
}

fn plain() -> InducingScheme {
    build_doubling_scheme(DoublingVariant::Plain, 20).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `F(h(w)) = h(σw)` for coded points with a periodic tail.
    #[test]
    fn coding_commutes_with_shift(prefix in prop::collection::vec(0u64..6, 1..5), cycle in prop::collection::vec(0u64..6, 1..3)) {
        let s = plain();
        let x = s.code_word(&prefix, &cycle).unwrap();
        let y = s.code_word(&prefix[1..], &cycle).unwrap();
        prop_assert!((s.apply(prefix[0], x) - y).abs() < 1e-9);
        prop_assert!(s.interval(prefix[0]).contains_closed(x));
    }

    #[test]
    fn cylinders_nest(word in prop::collection::vec(0u64..8, 1..6)) {
        let s = plain();
        let mut outer = s.w();
        for k in 1..=word.len() {
            let c = s.cylinder(&word[..k]);
            prop_assert!(c.lo >= outer.lo - 1e-15 && c.hi <= outer.hi + 1e-15);
            outer = c;
        }
    }

    #[test]
    fn inverse_then_forward(sym in 0u64..20, u in 0.01f64..0.99) {
        let s = plain();
        let y = s.w().at(u);
        let x = s.inverse(sym, y);
        prop_assert!(s.interval(sym).contains_closed(x));
        prop_assert!((s.apply(sym, x) - y).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip(n in 4u32..12, refined in any::<bool>()) {
        let v = if refined { DoublingVariant::Refined } else { DoublingVariant::Plain };
        let s = build_doubling_scheme(v, n.min(if refined { 4 } else { 12 })).unwrap();
        let back = InducingScheme::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(back.len(), s.len());
        for k in [0, s.len() / 2, s.len() - 1] {
            prop_assert_eq!(back.interval(k), s.interval(k));
            prop_assert_eq!(back.word(k), s.word(k));
        }
    }
}
