//! Property checks on the parsers, the number formatter and the unit and
//! momentum round trips.

use proptest::prelude::*;

use qhj::basis::{BoundState, Coordinate};
use qhj::io::config::{parse_key_values, parse_state};
use qhj::io::csv::Num;
use qhj::momenta::{HiddenVariables, MomentumComponent, Sign};
use qhj::quantum::TrajectoryState;
use qhj::units::{QuantityKind, UnitSystem};

fn nonzero() -> impl Strategy<Value = f64> {
    prop_oneof![0.05..5.0f64, -5.0..-0.05f64]
}

fn sign() -> impl Strategy<Value = Sign> {
    prop_oneof![Just(Sign::Plus), Just(Sign::Minus)]
}

proptest! {
    #[test]
    fn num_text_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        let back: f64 = Num(v).to_string().parse().unwrap();
        prop_assert_eq!(back.to_bits(), v.to_bits());
    }

    #[test]
    fn hidden_variables_round_trip(
        ar in nonzero(), br in -2.0..2.0f64,
        at in nonzero(), bt in -2.0..2.0f64,
        ap in nonzero(), bp in -2.0..2.0f64,
        s in (sign(), sign(), sign()),
    ) {
        let h = HiddenVariables::new(ar, br, at, bt, ap, bp).unwrap().with_signs(s.0, s.1, s.2);
        let back: HiddenVariables = h.to_string().parse().unwrap();
        prop_assert_eq!(back.to_string(), h.to_string());
        prop_assert_eq!(back.signs(), h.signs());
    }

    #[test]
    fn state_triples_parse(n in 1u32..6, l_off in 0u32..5, m_off in 0i32..9) {
        let l = l_off % n;
        let m = (m_off % (2 * l as i32 + 1)) - l as i32;
        let st = parse_state(&format!("({n}, {l}, {m})")).unwrap();
        prop_assert_eq!(st, BoundState::new(n, l, m).unwrap());
        let bad = format!("{n},{},0", n + l_off);
        prop_assert!(parse_state(&bad).is_err());
    }

    #[test]
    fn key_values_normalize_dashes(v in -1e3..1e3f64) {
        let m = parse_key_values(&format!("# run\nt-end = {v}\n\nrel_tol={v}  # trailing\n")).unwrap();
        prop_assert_eq!(m.get("t_end").map(|s| s.parse::<f64>().unwrap()), Some(v));
        prop_assert_eq!(m.get("rel_tol").map(|s| s.parse::<f64>().unwrap()), Some(v));
    }

    #[test]
    fn si_conversion_inverts(q in 1e-3..1e3f64) {
        let u = UnitSystem::si();
        for k in [QuantityKind::Length, QuantityKind::Time, QuantityKind::Energy] {
            let back = u.to_internal(u.from_internal(q, k), k);
            prop_assert!((back - q).abs() <= 1e-14 * q);
        }
    }

    #[test]
    fn cartesian_keeps_the_radius(r in 1e-3..50.0f64, th in 0.0..std::f64::consts::PI, ph in -10.0..10.0f64) {
        let h = HiddenVariables::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0).unwrap();
        let [x, y, z] = TrajectoryState::at(r, &h).with_angles(th, ph).cartesian();
        prop_assert!(((x * x + y * y + z * z).sqrt() - r).abs() <= 1e-13 * r);
        prop_assert!((z / r - th.cos()).abs() <= 1e-13);
    }

    #[test]
    fn flipping_the_sign_flips_the_momentum(a in nonzero(), b in -2.0..2.0f64, r in 0.1..1.9f64) {
        let st = BoundState::new(1, 0, 0).unwrap();
        let h = HiddenVariables::new(a, b, 1.0, 0.0, 1.0, 0.0).unwrap();
        let plus = MomentumComponent::for_state(&st, &h, Coordinate::Radial).unwrap();
        let minus = MomentumComponent::for_state(&st, &h.with_signs(Sign::Minus, Sign::Plus, Sign::Plus), Coordinate::Radial).unwrap();
        let (p, q) = (plus.momentum(r).unwrap(), minus.momentum(r).unwrap());
        prop_assert_eq!(p, -q);
    }
}
