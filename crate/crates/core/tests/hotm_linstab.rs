use nalgebra::DMatrix;
use neurostab::dalgebra::{Scalar, TPoly};
use neurostab::hotm::{map_vs_truth_with, norm_profile, propagate_maps_with, unfold_norms};
use neurostab::linstab::{critical_delay, pade_augment, root_locus, DelayOptions, LinModel};
use neurostab::linalg::spectral_abscissa;
use neurostab::odeflow::IntegratorConfig;

// Damped pendulum with a cubic spring.
fn pendulum<S: Scalar>(x: &[S]) -> Vec<S> {
    vec![
        x[1].clone(),
        -x[0].sin() - x[1].clone() * 0.3 - x[0].clone() * x[0].clone() * x[0].clone() * 0.1,
    ]
}

#[test]
fn endpoint_error_scales_with_the_order() {
    let cfg = IntegratorConfig::oracle().with_tol(1e-12);
    let x0 = [1.0, 0.0];
    for k in 1..=3 {
        let maps = propagate_maps_with(|x: &[TPoly]| pendulum(x), &x0, k, 2.0, &cfg).unwrap();
        let err = |h: f64| {
            map_vs_truth_with(|x: &[f64]| pendulum(x), &maps, &[h, -h], &cfg)
                .unwrap()
                .pop()
                .unwrap()
                .error
        };
        let hs = [0.04, 0.02, 0.01];
        let e: Vec<f64> = hs.iter().map(|&h| err(h)).collect();
        let slope = (e[0] / e[2]).ln() / (hs[0] / hs[2]).ln();
        assert!(slope > k as f64 && slope < k as f64 + 2.0, "order {k}: slope {slope}, errors {e:?}");
    }
}

#[test]
fn polynomial_bound_holds_inside_the_radius() {
    // x' = x², x(0) = 1 + δ: the exact flow is known in closed form.
    let cfg = IntegratorConfig::oracle().with_tol(1e-12);
    let maps = propagate_maps_with(|x: &[TPoly]| vec![&x[0] * &x[0]], &[1.0], 7, 0.5, &cfg).unwrap();
    let profile = norm_profile(&maps, &[0.0]);
    for (m, radius) in maps.iter().zip(profile.radii()) {
        let Some(radius) = radius else { continue };
        if radius.infinite || m.t == 0.0 {
            continue;
        }
        let b = unfold_norms(&m.components);
        let nominal = m.nominal()[0];
        for s in 1..=50 {
            let d = 0.9 * radius.epsilon * (s as f64 / 50.0 - 0.5) * 2.0;
            let exact = (1.0 + d) / (1.0 - (1.0 + d) * m.t);
            let bound: f64 = b.iter().enumerate().map(|(i, bi)| bi * d.abs().powi(i as i32 + 1)).sum();
            // The truncated series only bounds the flow up to its tail, and the
            // high-order coefficients carry the integration error.
            let tail = (d.abs() / radius.epsilon).powi(8) * b[6] * radius.epsilon.powi(7) / (1.0 - d.abs() / radius.epsilon);
            assert!((exact - nominal).abs() <= bound + tail + 1e-7 * exact.abs(), "t {}, d {d}: {} vs {bound} + {tail}", m.t, (exact - nominal).abs());
        }
    }
}

#[test]
fn root_locus_crosses_at_the_critical_delay() {
    // Lightly damped oscillator with delayed velocity feedback.
    let a_s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -0.2]);
    let a_n = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -1.0]);
    let lin = LinModel::new(a_s, a_n).unwrap();
    let cd = critical_delay(&lin, &DelayOptions::default()).unwrap();
    let tau = cd.best().unwrap();
    assert!(spectral_abscissa(&pade_augment(&lin, 0.98 * tau).unwrap()).unwrap() < 0.0);
    assert!(spectral_abscissa(&pade_augment(&lin, 1.02 * tau).unwrap()).unwrap() > 0.0);
    let locus = root_locus(&lin, &[0.5 * tau, 0.98 * tau, 1.02 * tau]).unwrap();
    let max_re = |g: usize| locus.paths[g].iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    assert!(max_re(1) < 0.0 && max_re(2) > 0.0);
    assert_eq!(locus.paths[0].len(), 2);
}
