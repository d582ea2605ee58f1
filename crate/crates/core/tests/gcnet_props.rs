use neurostab::dalgebra::{Algebra, TPoly};
use neurostab::gcnet::{find_equilibrium, shift_axes, EquilibriumOptions, InputMap, NetSpec, OutputMap};
use neurostab::odeflow::QuadParams;
use proptest::prelude::*;

fn net(seed: u64) -> NetSpec {
    let pre = InputMap {
        shift: vec![0.1, -0.2, 0.0, 0.3, 0.05],
        scale: vec![0.2, 0.4, 0.25, 0.5, 1.5],
    };
    NetSpec::random(5, &[8, 8], 2, pre, OutputMap::quad_controls(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_in_the_control_box(x in prop::array::uniform5(-50.0..50.0f64), seed in 0u64..20) {
        let u = net(seed).forward(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&u[0]));
        prop_assert!((-1.0..=1.0).contains(&u[1]));
    }

    #[test]
    fn tpoly_constant_part_is_the_real_forward(x in prop::array::uniform5(-3.0..3.0f64), seed in 0u64..20) {
        let n = net(seed);
        let alg = Algebra::new(5, 3).unwrap();
        let seeded: Vec<TPoly> = (0..5).map(|i| TPoly::variable(&alg, i, x[i]).unwrap()).collect();
        let t = n.forward(&seeded).unwrap();
        let f = n.forward(&x).unwrap();
        for k in 0..2 {
            prop_assert!((t[k].constant_part() - f[k]).abs() <= 4.0 * f64::EPSILON * (1.0 + f[k].abs()));
        }
    }

    #[test]
    fn second_partials_match_differences(x in prop::array::uniform5(-2.0..2.0f64), i in 0usize..5, j in 0usize..5) {
        let n = net(3);
        let alg = Algebra::new(5, 2).unwrap();
        let seeded: Vec<TPoly> = (0..5).map(|k| TPoly::variable(&alg, k, x[k]).unwrap()).collect();
        let t = n.forward(&seeded).unwrap();
        let mut exps = [0u32; 5];
        exps[i] += 1;
        exps[j] += 1;
        let h = 1e-3;
        let f = |di: f64, dj: f64| {
            let mut y = x;
            y[i] += di;
            y[j] += dj;
            n.forward(&y).unwrap()
        };
        let (pp, pm, mp, mm) = (f(h, h), f(h, -h), f(-h, h), f(-h, -h));
        for k in 0..2 {
            let fd = (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h);
            let an = t[k].partial(&exps).unwrap();
            prop_assert!((fd - an).abs() <= 1e-3 * an.abs().max(1e-2), "{fd} vs {an}");
        }
    }
}

#[test]
fn axis_shift_is_idempotent() {
    let p = QuadParams::default();
    let opts = EquilibriumOptions::default();
    let mut tried = 0;
    for seed in 0..40 {
        let n = net(seed);
        let Ok(eq) = find_equilibrium(&n, &p, &opts) else {
            continue;
        };
        tried += 1;
        let shifted = shift_axes(&n, &eq.x_hat);
        let again = find_equilibrium(&shifted, &p, &opts).unwrap();
        let r = again.x_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(r < 1e-10, "seed {seed}: second offset {r}");
    }
    assert!(tried > 0, "no random network had an equilibrium");
}

#[test]
fn weights_round_trip_through_files() {
    let dir = tempdir();
    let n = net(7);
    let path = dir.join("n.json");
    n.save_weights(&path).unwrap();
    let first = std::fs::read(&path).unwrap();
    let back = NetSpec::load_weights(&path).unwrap();
    back.save_weights(&path).unwrap();
    assert_eq!(first, std::fs::read(&path).unwrap());
    let mut rng_x = 0.37f64;
    for _ in 0..100 {
        rng_x = (rng_x * 9301.0 + 0.4927).fract();
        let x = [rng_x * 4.0 - 2.0, rng_x, -rng_x, 2.0 * rng_x, 0.5 - rng_x];
        assert_eq!(n.forward(&x).unwrap(), back.forward(&x).unwrap());
    }
    std::fs::remove_dir_all(dir).unwrap();
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("neurostab-gcnet-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
