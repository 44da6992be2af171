mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use regpca::{design_matrix, SieveKind, SieveSpec};

fn any_spec() -> impl Strategy<Value = SieveSpec> {
    (0usize..3, 1usize..4, 0usize..6, any::<bool>()).prop_map(|(kind, m, knots, icpt)| match kind {
        0 => SieveSpec::linear(m, icpt),
        1 => SieveSpec::quadratic(m, icpt),
        _ => SieveSpec::bspline(m, knots, icpt),
    })
}

#[test]
fn dimensions() {
    assert_eq!(SieveSpec::linear(3, true).total_dim(), 4);
    assert_eq!(SieveSpec::quadratic(3, false).total_dim(), 6);
    assert_eq!(SieveSpec::bspline(2, 3, true).total_dim(), 9);
    assert_eq!(SieveSpec::bspline(2, 3, true).per_char_dim(), 4);
    let null = SieveSpec::bspline(2, 3, false).linear_null();
    assert_eq!(null.kind, SieveKind::Linear);
    assert_eq!(null.total_dim(), 2);
    assert!(SieveSpec::linear(0, true).validate().is_err());
    let mut s = SieveSpec::linear(1, true);
    s.domain = (1.0, 1.0);
    assert!(s.validate().is_err());
}

#[test]
fn hat_values_on_a_grid() {
    // three internal knots at -0.25, 0, 0.25
    let s = SieveSpec::bspline(1, 3, false);
    let at = |z: f64| s.eval_basis(&[z]).unwrap().0;
    assert_eq!(at(-0.5), vec![0.0; 4]);
    assert_eq!(at(-0.25), vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(at(0.0), vec![0.0, 1.0, 0.0, 0.0]);
    assert_eq!(at(0.5), vec![0.0, 0.0, 0.0, 1.0]);
    let mid = at(0.125);
    assert!((mid[1] - 0.5).abs() < 1e-15 && (mid[2] - 0.5).abs() < 1e-15);
    assert_eq!(at(9.0), at(0.5));
    assert_eq!(at(-9.0), at(-0.5));
}

#[test]
fn design_matrix_matches_basis() {
    let mut r = rng(3);
    let spec = SieveSpec::bspline(2, 2, true);
    let p = random_panel(&mut r, 9, 2, 2, 0.4, 3);
    for t in 0..2 {
        let phi = design_matrix(&spec, &p, t).unwrap();
        for i in 0..9 {
            let want = if p.is_observed(t, i) {
                basis(&spec, p.z(t, i))
            } else {
                vec![0.0; 7]
            };
            for c in 0..7 {
                assert_eq!(phi[(i, c)], want[c]);
            }
        }
    }
    assert!(design_matrix(&spec, &p, 2).is_err());
    assert!(design_matrix(&SieveSpec::linear(3, true), &p, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn basis_matches_oracle(spec in any_spec(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let z: Vec<f64> = (0..spec.n_chars).map(|_| r.random_range(-0.7..0.7)).collect();
        let got = spec.eval_basis(&z).unwrap().0;
        let want = basis(&spec, &z);
        prop_assert_eq!(got.len(), spec.total_dim());
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn hats_reproduce_linear_functions(knots in 0usize..8, z in -0.5f64..=0.5) {
        let spec = SieveSpec::bspline(1, knots, false);
        let psi = spec.eval_basis(&[z]).unwrap().0;
        let j = psi.len();
        let h = 1.0 / j as f64;
        prop_assert!(psi.iter().all(|&v| (0.0..=1.0 + 1e-15).contains(&v)));
        prop_assert!(psi.iter().filter(|&&v| v > 0.0).count() <= 2);
        // with the implicit hat at the lower end the weights sum to one
        let rest = 1.0 - psi.iter().sum::<f64>();
        prop_assert!(rest > -1e-12);
        let lin = -0.5 * rest + psi.iter().enumerate().map(|(k, v)| (-0.5 + (k + 1) as f64 * h) * v).sum::<f64>();
        prop_assert!((lin - z).abs() < 1e-12);
    }

    #[test]
    fn hats_are_lipschitz(knots in 0usize..6, z in -0.6f64..0.6, dz in -0.01f64..0.01) {
        let spec = SieveSpec::bspline(1, knots, true);
        let a = spec.eval_basis(&[z]).unwrap().0;
        let b = spec.eval_basis(&[z + dz]).unwrap().0;
        let lip = (knots + 1) as f64;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= lip * dz.abs() + 1e-12);
        }
    }

    #[test]
    fn spec_json_round_trip(spec in any_spec()) {
        let text = serde_json::to_string(&spec).unwrap();
        let back: SieveSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, spec);
    }
}
