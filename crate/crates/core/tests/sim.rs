mod common;

use common::{kavg_reference, logcosh_local_reference, scalar_heavy_ball};
use mavg::error::Error;
use mavg::objectives::ObjectiveSpec;
use mavg::rng::learner_stream;
use mavg::sim::{auxiliary_sequence, local_k_steps, reconstruct_g, run, run_with, HyperParams, RunOptions};
use mavg::vecops::norm;

fn hyper(p: usize, b: usize, k: usize, eta: f64, mu: f64, n: usize, seed: u64) -> HyperParams {
    HyperParams {
        num_learners: p,
        batch_size: b,
        local_steps: k,
        step_size: eta,
        momentum: mu,
        meta_iters: n,
        master_seed: seed,
    }
}

#[test]
fn zero_step_size_leaves_start() {
    let spec = ObjectiveSpec::logcosh(5, 0.5);
    let h = HyperParams { step_size: 0.0, ..hyper(1, 4, 3, 0.1, 0.0, 1, 1) };
    let start = vec![0.3, -1.0, 2.0, 0.0, 5.0];
    let mut rng = learner_stream(1, 1, 1);
    assert_eq!(local_k_steps(&start, &spec, &h, &mut rng).unwrap(), start);
}

#[test]
fn noiseless_quadratic_contracts() {
    let spec = ObjectiveSpec::quadratic(3, 10.0, 0.0);
    let eta = 0.2;
    let start = vec![1.0, -2.0, 4.0];
    let mut rng = learner_stream(0, 1, 1);
    let out = local_k_steps(&start, &spec, &hyper(1, 5, 3, eta, 0.0, 1, 0), &mut rng).unwrap();
    let c = (1.0 - eta as f64).powi(3);
    for (o, s) in out.iter().zip(&start) {
        assert!((o - c * s).abs() < 1e-14);
    }
}

#[test]
fn local_loop_matches_straight_line_reference() {
    let spec = ObjectiveSpec::logcosh(20, 0.01);
    let h = hyper(1, 16, 8, 0.01, 0.0, 1, 77);
    let start = spec.init_point.clone();
    let got = local_k_steps(&start, &spec, &h, &mut learner_stream(77, 3, 5)).unwrap();
    let want = logcosh_local_reference(&start, 0.01, 16, 8, 0.01, &mut learner_stream(77, 3, 5));
    assert_eq!(got, want);
}

#[test]
fn local_divergence_reports_step() {
    let spec = ObjectiveSpec::quadratic(2, 10.0, 0.0);
    let mut rng = learner_stream(0, 1, 1);
    let err = local_k_steps(&[1e300, 1e300], &spec, &hyper(1, 1, 5, 1e10, 0.0, 1, 0), &mut rng).unwrap_err();
    assert!(matches!(err, Error::Divergence { step: Some(1), .. }), "{err:?}");
}

#[test]
fn run_divergence_reports_iteration_and_learner() {
    let spec = ObjectiveSpec::quadratic(2, 10.0, 0.0);
    let err = run(&spec, &hyper(2, 1, 2, 1e200, 0.0, 3, 0)).unwrap_err();
    match err {
        Error::Divergence { iteration, learner, step } => {
            assert_eq!(iteration, Some(1));
            assert_eq!(learner, Some(1));
            assert!(step.is_some());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_learner_single_step_is_sgd() {
    let spec = ObjectiveSpec::logcosh(6, 0.3);
    let h = hyper(1, 4, 1, 0.05, 0.0, 30, 9);
    let trace = run(&spec, &h).unwrap();
    let mut w = spec.init_point.clone();
    for n in 1..=30 {
        assert_eq!(trace.record(n).unwrap().weights, w);
        let mut rng = learner_stream(9, 1, n);
        let mut acc = vec![0.0; 6];
        for _ in 0..4 {
            let g = spec.sample_gradient(&w, &mut rng).unwrap();
            acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x);
        }
        w.iter_mut().zip(&acc).for_each(|(wi, a)| *wi -= 0.05 / 4.0 * a);
    }
    assert_eq!(trace.final_weights, w);
}

#[test]
fn zero_momentum_matches_kavg_reference() {
    for (p, b, k, seed) in [(3, 5, 4, 1u64), (4, 2, 7, 2)] {
        for spec in [ObjectiveSpec::logcosh(8, 0.2), ObjectiveSpec::logistic().unwrap()] {
            let h = hyper(p, b, k, 0.05, 0.0, 20, seed);
            let trace = run(&spec, &h).unwrap();
            let reference = kavg_reference(&spec, p, b, k, 0.05, 20, seed);
            for n in 1..=20 {
                assert_eq!(trace.record(n).unwrap().weights, reference[n - 1]);
            }
            assert_eq!(trace.final_weights, reference[20]);
        }
    }
}

#[test]
fn two_learner_heavy_ball_on_scalar_quadratic() {
    let eta = 0.1;
    let spec = ObjectiveSpec::quadratic(1, 10.0, 0.0).with_init_point(vec![3.0]).unwrap();
    for mu in [0.0, 0.4, 0.8] {
        let trace = run(&spec, &hyper(2, 3, 4, eta, mu, 2, 0)).unwrap();
        let xs = scalar_heavy_ball(3.0, (1.0 - eta).powi(4), mu, 2);
        assert!((trace.record(2).unwrap().weights[0] - xs[1]).abs() < 1e-14);
        assert!((trace.final_weights[0] - xs[2]).abs() < 1e-14);
    }
}

#[test]
fn serial_and_parallel_agree_bitwise() {
    let spec = ObjectiveSpec::logistic().unwrap();
    let h = hyper(6, 8, 4, 0.05, 0.5, 15, 31);
    let serial = run_with(&spec, &h, RunOptions { record_endpoints: true, ..Default::default() }).unwrap();
    let parallel = run_with(
        &spec,
        &h,
        RunOptions { parallel: true, record_endpoints: true, ..Default::default() },
    )
    .unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial, run_with(&spec, &h, RunOptions { record_endpoints: true, ..Default::default() }).unwrap());
}

#[test]
fn noiseless_learners_agree() {
    let spec = ObjectiveSpec::logcosh(4, 0.0);
    let h = hyper(5, 3, 6, 0.1, 0.5, 4, 2);
    let trace = run_with(&spec, &h, RunOptions { record_endpoints: true, ..Default::default() }).unwrap();
    for r in &trace.records {
        let ends = r.endpoints.as_ref().unwrap();
        assert!(ends.iter().all(|e| e == &ends[0]));
        let d: Vec<f64> = ends[0].iter().zip(&r.weights).map(|(a, w)| a - w).collect();
        for (x, y) in d.iter().zip(&r.displacement) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}

#[test]
fn reconstructed_g_for_one_deterministic_step_is_gradient() {
    let spec = ObjectiveSpec::logcosh(5, 0.0);
    let h = hyper(1, 2, 1, 0.125, 0.0, 3, 0);
    let trace = run(&spec, &h).unwrap();
    for n in 1..=3 {
        let g = reconstruct_g(&trace, n, &h).unwrap();
        let exact = spec.gradient(&trace.record(n).unwrap().weights).unwrap();
        for (a, b) in g.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-14 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn reconstructed_g_scalar_division() {
    let spec = ObjectiveSpec::quadratic(2, 10.0, 0.0);
    let h = hyper(1, 1, 1, 0.1, 0.0, 1, 0);
    let mut trace = run(&spec, &h).unwrap();
    trace.records[0].displacement = vec![-0.02, 0.05];
    let g = reconstruct_g(&trace, 1, &h).unwrap();
    assert!((g[0] - 0.2).abs() < 1e-15 && (g[1] + 0.5).abs() < 1e-15);
    assert!(reconstruct_g(&trace, 2, &h).is_err());
}

#[test]
fn reconstructed_g_matches_logged_samples() {
    let spec = ObjectiveSpec::logistic().unwrap();
    let (p, b, k) = (3, 4, 5);
    let h = hyper(p, b, k, 0.05, 0.0, 4, 12);
    let trace = run_with(&spec, &h, RunOptions { record_samples: true, ..Default::default() }).unwrap();
    for n in 1..=4 {
        let samples = trace.record(n).unwrap().samples.as_ref().unwrap();
        assert_eq!(samples.len(), p * k * b);
        let mut direct = vec![0.0; spec.dim];
        for s in samples {
            direct.iter_mut().zip(s).for_each(|(a, x)| *a += x);
        }
        direct.iter_mut().for_each(|a| *a /= (b * p) as f64);
        let g = reconstruct_g(&trace, n, &h).unwrap();
        for (a, x) in g.iter().zip(&direct) {
            assert!((a - x).abs() <= 1e-9 * (1.0 + x.abs()), "{a} vs {x}");
        }
    }
}

#[test]
fn auxiliary_sequence_trivial_cases() {
    let spec = ObjectiveSpec::logcosh(3, 0.1);
    let h0 = hyper(2, 2, 2, 0.05, 0.0, 5, 3);
    let t0 = run(&spec, &h0).unwrap();
    let z0 = auxiliary_sequence(&t0, &h0);
    assert_eq!(z0.len(), 6);
    for (n, z) in z0.iter().enumerate().take(5) {
        assert_eq!(z, &t0.records[n].weights);
    }
    let h = HyperParams { momentum: 0.7, ..h0 };
    let t = run(&spec, &h).unwrap();
    assert_eq!(auxiliary_sequence(&t, &h)[0], spec.init_point);
}

#[test]
fn auxiliary_identity_and_geometric_sum() {
    let spec = ObjectiveSpec::logcosh(10, 0.05);
    for mu in [0.2, 0.9] {
        let h = hyper(3, 4, 5, 0.02, mu, 60, 4);
        let t = run(&spec, &h).unwrap();
        let z = auxiliary_sequence(&t, &h);
        for n in 1..=60 {
            let g = reconstruct_g(&t, n, &h).unwrap();
            let resid: Vec<f64> = (0..10).map(|i| z[n][i] - z[n - 1][i] + h.step_size / (1.0 - mu) * g[i]).collect();
            assert!(norm(&resid) <= 1e-9 * (1.0 + norm(&z[n - 1])));
            let mut v = vec![0.0; 10];
            for i in 0..n {
                let d = &t.records[n - 1 - i].displacement;
                v.iter_mut().zip(d).for_each(|(a, x)| *a += mu.powi(i as i32) * x);
            }
            let diff: Vec<f64> = v.iter().zip(&t.records[n - 1].momentum).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) <= 1e-9 * norm(&v).max(1e-300));
        }
    }
}

#[test]
fn quadratic_leaving_ball_flags_trace() {
    let spec = ObjectiveSpec::quadratic(2, 1.0, 4.0).with_init_distance(0.9);
    let t = run(&spec, &hyper(1, 1, 2, 0.5, 0.0, 20, 0)).unwrap();
    assert!(t.assumption_violated);
    let calm = ObjectiveSpec::quadratic(2, 10.0, 0.0);
    assert!(!run(&calm, &hyper(1, 1, 2, 0.1, 0.0, 5, 0)).unwrap().assumption_violated);
}
