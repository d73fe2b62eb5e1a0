use proptest::prelude::*;
use strokescript::ensemble::{combine, opposite_error, BinaryDecision};

const LN_2: f64 = std::f64::consts::LN_2;

#[test]
fn fixed_point_at_ln_two() {
    assert!((opposite_error(LN_2).unwrap() - LN_2).abs() < 1e-9);
}

#[test]
fn tenth_maps_to_known_value() {
    // -ln(1 - exp(-0.1)) evaluated at higher precision: 2.3521684610440908
    assert!((opposite_error(0.1).unwrap() - 2.352_168_461_044_090_8).abs() < 1e-12);
}

#[test]
fn zero_and_negative() {
    assert_eq!(opposite_error(0.0).unwrap(), f64::INFINITY);
    assert!(opposite_error(-0.1).is_err());
    assert!(opposite_error(f64::NAN).is_err());
}

#[test]
fn disagreement_fixtures() {
    let d = |c, e| BinaryDecision::new(c, e).unwrap();
    // (a, b, expected class)
    let fixtures = [
        (d(0, 0.1), d(1, 0.5), 0),
        (d(0, 0.5), d(1, 0.1), 1),
        (d(1, 0.05), d(0, 2.0), 1),
        (d(1, 3.0), d(0, 0.2), 0),
        (d(0, 0.69), d(1, 0.70), 0),
        (d(0, 0.4), d(1, 0.4), 0),
    ];
    for (a, b, want) in fixtures {
        let c = combine(a, b);
        assert_eq!(c.predicted_class, want, "{a:?} {b:?}");
        let lower = if a.error <= b.error { a } else { b };
        assert_eq!(c.predicted_class, lower.predicted_class);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn involution(e in 1e-6f64..10.0) {
        let back = opposite_error(opposite_error(e).unwrap()).unwrap();
        prop_assert!((back - e).abs() < 1e-9, "{e} -> {back}");
    }

    #[test]
    fn strictly_decreasing(a in 1e-6f64..10.0, b in 1e-6f64..10.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (fa, fb) = (opposite_error(a).unwrap(), opposite_error(b).unwrap());
        prop_assert_eq!(a < b, fa > fb);
    }

    #[test]
    fn agreement_keeps_class(c in 0usize..2, ea in 0.0f64..5.0, eb in 0.0f64..5.0) {
        let out = combine(BinaryDecision::new(c, ea).unwrap(), BinaryDecision::new(c, eb).unwrap());
        prop_assert_eq!(out.predicted_class, c);
        prop_assert_eq!(out.error, ea.min(eb));
    }

    #[test]
    fn symmetric_except_ties(ca in 0usize..2, ea in 1e-4f64..5.0, eb in 1e-4f64..5.0) {
        prop_assume!((ea - eb).abs() > 1e-12);
        let a = BinaryDecision::new(ca, ea).unwrap();
        let b = BinaryDecision::new(1 - ca, eb).unwrap();
        prop_assert_eq!(combine(a, b).predicted_class, combine(b, a).predicted_class);
    }
}
