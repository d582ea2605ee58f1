use neurostab::dalgebra::{monomial_count, Algebra, Jet, Scalar, TPoly};
use proptest::prelude::*;

fn poly(alg: &Algebra) -> impl Strategy<Value = TPoly> {
    let alg = alg.clone();
    prop::collection::vec(-2.0..2.0f64, alg.len()).prop_map(move |c| TPoly::from_coeffs(&alg, c).unwrap())
}

fn close(a: &TPoly, b: &TPoly, tol: f64) -> bool {
    a.coeffs()
        .iter()
        .zip(b.coeffs())
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

fn alg() -> Algebra {
    Algebra::new(3, 4).unwrap()
}

proptest! {
    #[test]
    fn ring_axioms(a in poly(&alg()), b in poly(&alg()), c in poly(&alg())) {
        prop_assert!(close(&(&a * &b), &(&b * &a), 1e-13));
        prop_assert!(close(&(&(&a * &b) * &c), &(&a * &(&b * &c)), 1e-12));
        prop_assert!(close(&(&a * &(&b + &c)), &(&(&a * &b) + &(&a * &c)), 1e-12));
        prop_assert!(close(&(&a - &a), &TPoly::zero(a.algebra()), 0.0));
        let one = TPoly::constant(a.algebra(), 1.0);
        prop_assert!(close(&(&a * &one), &a, 0.0));
    }

    #[test]
    fn truncation_commutes_with_products(a in poly(&alg()), b in poly(&alg()), k in 1usize..4) {
        let lhs = (&a * &b).truncate(k).unwrap();
        let rhs = &a.truncate(k).unwrap() * &b.truncate(k).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn division_inverts_multiplication(a in poly(&alg()), b0 in 0.5..3.0f64, b in poly(&alg())) {
        let mut c = b.coeffs().to_vec();
        c[0] = b0;
        let b = TPoly::from_coeffs(a.algebra(), c).unwrap();
        prop_assert!(close(&(&(&a * &b) / &b), &a, 1e-10));
    }

    #[test]
    fn elementary_identities(x0 in -1.0..1.0f64, y0 in -1.0..1.0f64) {
        let alg = Algebra::new(2, 5).unwrap();
        let x = TPoly::variable(&alg, 0, x0).unwrap();
        let y = TPoly::variable(&alg, 1, y0).unwrap();
        let s = &x * &y + x.clone();
        let one = TPoly::constant(&alg, 1.0);
        prop_assert!(close(&(s.sin() * s.sin() + s.cos() * s.cos()), &one, 1e-12));
        prop_assert!(close(&s.exp().ln(), &s, 1e-11));
        let e = s.exp();
        prop_assert!(close(&e.sqrt().powf(2.0), &e, 1e-11));
    }

    #[test]
    fn evaluation_matches_point_values(x0 in -0.5..0.5f64, dx in -0.05..0.05f64) {
        let alg = Algebra::new(1, 8).unwrap();
        let x = TPoly::variable(&alg, 0, x0).unwrap();
        let f = (x.clone() * 2.0).tanh() + x.exp() * x.sin();
        let xe = x0 + dx;
        let exact = (2.0 * xe).tanh() + xe.exp() * xe.sin();
        // Ninth-order remainder of an entire-like function with unit-scale
        // derivatives.
        prop_assert!((f.evaluate(&[dx]).unwrap() - exact).abs() < 1e-9);
    }

    #[test]
    fn jet_constant_part_matches_f64(x in -2.0..2.0f64, y in 0.1..2.0f64) {
        let jx = Jet::<2>::variable(0, x);
        let jy = Jet::<2>::variable(1, y);
        let j = (jx * jy).softplus() / jy.sqrt() - jx.cos().exp();
        let v = (x * y).softplus() / y.sqrt() - x.cos().exp();
        prop_assert!((j.value - v).abs() <= 1e-14 * (1.0 + v.abs()));
    }
}

#[test]
fn term_counts_match_binomials() {
    for k in 1..=7 {
        let mut binom = 1usize;
        for j in 1..=5 {
            binom = binom * (k + j) / j;
        }
        assert_eq!(monomial_count(5, k, false), binom - 1);
        assert_eq!(Algebra::new(5, k).unwrap().len(), binom);
    }
}
