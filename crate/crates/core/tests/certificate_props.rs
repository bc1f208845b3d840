//! Randomized configuration sweeps: every certificate check must hold on
//! every run whose hypotheses hold by construction.

use adalab_core::analysis::{check_trajectory_invariants, CheckStatus, InvariantOptions};
use adalab_core::optim::run_trajectory;
use adalab_core::oracles::NoiseSpec;
use adalab_core::problems::Smoothness;
use adalab_core::rng::stream_rng;
use adalab_core::trajectory::{norm, norm_sq};
use adalab_core::{HyperParams, Method, Oracle, Problem};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn quadratic_gradient_identity_is_exact() {
    // For f = L/2 ||x||^2 the smoothness inequality ||grad||^2 <= 2L (f - f*)
    // is an identity; it must hold to machine precision pointwise.
    let l = 2.0;
    let p = Problem::quadratic(4, l);
    let mut rng = stream_rng(0x1D, 0);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lhs = norm_sq(&p.gradient(&x));
        let rhs = 2.0 * l * p.value(&x);
        let scale = 1f64.max(lhs.abs()).max(rhs.abs());
        assert!((lhs - rhs).abs() / scale < 1e-14, "{lhs} vs {rhs} at {x:?}");
    }
}

#[test]
fn quartic_certificate_covers_gradient_values_on_the_probe_box() {
    let p = Problem::quartic(4).unwrap();
    let Some(Smoothness::Generalized { l0, l1 }) = p.smoothness() else {
        panic!("quartic must carry a generalized certificate");
    };
    let mut rng = stream_rng(0x2E, 0);
    let mut worst = f64::INFINITY;
    for i in 0..1000 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gap = p.value(&x); // f* = 0
        let lhs = norm(&p.gradient(&x));
        let rhs = (4.0 * l1 * gap).max((4.0 * l0 * gap).sqrt());
        let slack = (rhs - lhs) / 1f64.max(lhs).max(rhs);
        worst = worst.min(slack);
        assert!(slack >= -1e-9, "point {i}: ||grad|| {lhs} above bound {rhs} (L0={l0}, L1={l1})");
    }
    // the bound must actually engage on this box, not hold by a mile only
    assert!(worst < 0.9, "bound never came within 10%: worst slack {worst}");
}

fn small_configs() -> impl Strategy<Value = (f64, f64, u8, u16, u64, u8)> {
    (
        1e-3f64..0.5,  // eta
        0.0f64..0.95,  // beta
        2u8..=6,       // dim
        20u16..=200,   // horizon
        any::<u64>(),  // seed
        0u8..=2,       // noise level index
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn random_quadratic_configs_pass_every_applicable_check(
        (eta, beta, dim, horizon, seed, noise) in small_configs()
    ) {
        let p = Problem::quadratic(dim as usize, 1.5);
        let (oracle, spec) = match noise {
            0 => (Oracle::Exact, NoiseSpec::new(0.0, 0.0, 0.0).unwrap()),
            1 => {
                let s = NoiseSpec::new(0.5, 0.5, 0.2).unwrap();
                (Oracle::SyntheticA3 { spec: s }, s)
            }
            _ => {
                let s = NoiseSpec::new(2.0, 0.0, 1.0).unwrap();
                (Oracle::SyntheticA3 { spec: s }, s)
            }
        };
        let h = HyperParams::new(eta, beta, 1e-4, horizon as usize).unwrap();
        let x1 = vec![0.9; dim as usize];
        let rec = run_trajectory(&p, &oracle, Method::AdaGradM, &h, &x1, seed).unwrap();
        prop_assert!(!rec.diverged);

        // direct momentum bound, independent of the report
        let mbound = eta * (dim as f64).sqrt() / (1.0 - beta);
        for e in &rec.steps {
            prop_assert!(norm(&e.m) <= mbound * (1.0 + 1e-12));
        }

        let opts = InvariantOptions { spec: Some(spec), ..Default::default() };
        let report = check_trajectory_invariants(&rec, &p, &opts).unwrap();
        prop_assert!(
            report.strict_pass(),
            "eta={eta} beta={beta} d={dim} T={horizon} seed={seed} noise={noise}: {:?}",
            report.failed()
        );
        // every smooth-family check must actually have run
        for c in report.checks.iter().take(14) {
            prop_assert!(
                c.status == CheckStatus::Pass,
                "{} was {:?}",
                c.name,
                c.status
            );
        }
    }
}
