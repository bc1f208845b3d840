//! Cross-module consistency: the two update formulations, the reduction at
//! beta = 0, gradient implementations against finite differences, and the
//! worked proxy-step example.

use adalab_core::analysis::{log_sum_lemma, proxy_stepsize};
use adalab_core::optim::{heavy_ball_trajectory, run_trajectory};
use adalab_core::oracles::NoiseSpec;
use adalab_core::rng::stream_rng;
use adalab_core::trajectory::derive_y_sequence;
use adalab_core::{HyperParams, Method, Oracle, Problem};
use rand::Rng;

fn max_coord_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn momentum_and_heavy_ball_forms_agree_with_noise() {
    let p = Problem::quadratic(5, 1.5);
    let oracle = Oracle::SyntheticA3 { spec: NoiseSpec::new(1.0, 0.5, 0.5).unwrap() };
    for (k, beta) in [0.0, 0.5, 0.9, 0.99].into_iter().enumerate() {
        let h = HyperParams::new(0.2, beta, 1e-6, 400).unwrap();
        let x1 = vec![1.0; 5];
        let rec = run_trajectory(&p, &oracle, Method::AdaGradM, &h, &x1, 100 + k as u64).unwrap();
        let gs: Vec<Vec<f64>> = rec.steps.iter().map(|e| e.g.clone()).collect();
        let hb = heavy_ball_trajectory(&x1, &gs, &h);
        assert_eq!(hb.len(), 401);
        let mut worst = 0.0f64;
        for (s, e) in rec.steps.iter().enumerate() {
            worst = worst.max(max_coord_diff(&e.x, &hb[s]));
        }
        worst = worst.max(max_coord_diff(&rec.final_x, &hb[400]));
        assert!(worst < 1e-12, "beta={beta}: forms diverged by {worst:e}");
    }
}

#[test]
fn beta_zero_momentum_run_is_plain_adagrad() {
    let p = Problem::quadratic(4, 2.0);
    let oracle = Oracle::Gaussian { sigma2: 0.5 };
    let h = HyperParams::new(0.1, 0.0, 1e-8, 250).unwrap();
    let x1 = vec![0.7, -0.3, 1.1, 0.0];
    let a = run_trajectory(&p, &oracle, Method::AdaGradM, &h, &x1, 77).unwrap();
    let b = run_trajectory(&p, &oracle, Method::AdaGrad, &h, &x1, 77).unwrap();
    assert_eq!(a.final_x, b.final_x);
    for (ea, eb) in a.steps.iter().zip(&b.steps) {
        assert_eq!(ea.x, eb.x);
        assert_eq!(ea.v, eb.v);
    }
}

#[test]
fn auxiliary_sequence_identity_holds_on_noisy_runs() {
    let p = Problem::quadratic(6, 1.0);
    let oracle = Oracle::Gaussian { sigma2: 2.0 };
    for seed in 0..5u64 {
        let h = HyperParams::new(0.3, 0.9, 1e-4, 500).unwrap();
        let rec =
            run_trajectory(&p, &oracle, Method::AdaGradM, &h, &vec![1.0; 6], seed).unwrap();
        let y = derive_y_sequence(&rec).unwrap();
        assert!(y.max_residual < 1e-10, "seed {seed}: residual {:e}", y.max_residual);
        // y_1 = x_1 exactly
        assert_eq!(y.ys[0], rec.steps[0].x);
    }
}

#[test]
fn proxy_step_worked_example() {
    // One coordinate, v_prev = 9, eps = 0.5. Observed g = 0 gives
    // b = sqrt(9) + 0.5 = 3.5; budget G = 4 gives a = sqrt(9+16) + 0.5 = 5.5.
    // The gap |1/a - 1/b| = 2/19.25 must stay below G/(a b) = 4/19.25.
    let a = proxy_stepsize(&[9.0], 4.0, 0.5).unwrap()[0];
    assert_eq!(a, 5.5);
    let b = 9.0f64.sqrt() + 0.5;
    let gap = (1.0 / a - 1.0 / b).abs();
    let bound = 4.0 / (a * b);
    assert!((gap - 2.0 / 19.25).abs() < 1e-15);
    assert!((bound - 4.0 / 19.25).abs() < 1e-15);
    assert!(gap <= bound);
}

#[test]
fn log_sum_bound_on_random_sequences() {
    let mut rng = stream_rng(0xDECAF, 0);
    for trial in 0..200 {
        let n = rng.gen_range(1..=200);
        let eps = 10f64.powf(rng.gen_range(-6.0..2.0));
        let alphas: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    0.0
                } else {
                    10f64.powf(rng.gen_range(-8.0..4.0))
                }
            })
            .collect();
        let (lhs, rhs) = log_sum_lemma(&alphas, eps).unwrap();
        assert!(
            lhs <= rhs * (1.0 + 1e-12) + 1e-15,
            "trial {trial}: {lhs} > {rhs} (n={n}, eps={eps})"
        );
    }
}

#[test]
fn gradients_match_central_differences() {
    let quartic = Problem::quartic(4).unwrap();
    let quadratic = Problem::quadratic(4, 2.5);
    let mut rng = stream_rng(0xFD, 0);
    for p in [&quadratic, &quartic] {
        for _ in 0..20 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let grad = p.gradient(&x);
            let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let h = 1e-5 * (1.0 + norm);
            for i in 0..p.dim() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (p.value(&xp) - p.value(&xm)) / (2.0 * h);
                let scale = 1f64.max(grad[i].abs()).max(fd.abs());
                assert!(
                    (grad[i] - fd).abs() / scale < 1e-6,
                    "{}: coord {i}: analytic {} vs fd {}",
                    p.id(),
                    grad[i],
                    fd
                );
            }
        }
    }
}
