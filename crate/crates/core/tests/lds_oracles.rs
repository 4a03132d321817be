mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempoquant::lds::*;

#[test]
fn smoothed_moments_match_dense_joint() {
    let mut r = rng(11);
    for trial in 0..40 {
        let d = 1 + trial % 3;
        let m = 1 + trial % 2;
        let n = 1 + trial % 8;
        let sys = random_lds(&mut r, d, m, n);
        let msgs = MessageSet::compute(&sys.spec, &sys.a, &sys.y).unwrap();
        let dense = dense_joint(&sys.spec, &sys.a, &sys.y);
        assert!(rel_diff(msgs.forward.log_likelihood, dense.log_likelihood) < 1e-9);
        for k in 0..n {
            let mo = msgs.smooth(k).unwrap().to_moments().unwrap();
            for i in 0..d {
                assert!((mo.mean[i] - dense.post_mean[k * d + i]).abs() < 1e-9);
                for j in 0..d {
                    assert!((mo.cov[(i, j)] - dense.post_cov[(k * d + i, k * d + j)]).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn random_walk_smoothing_between_filter_and_future() {
    let spec = LdsSpec {
        c: DMatrix::identity(1, 1),
        q: DMatrix::from_element(1, 1, 0.5),
        r: StepMatrices::Constant(DMatrix::from_element(1, 1, 0.3)),
        prior_mu: DVector::from_element(1, 0.0),
        prior_cov: DMatrix::from_element(1, 1, 1.0),
    };
    let a = StepMatrices::Constant(DMatrix::identity(1, 1));
    let y = vec![DVector::from_element(1, 0.2), DVector::from_element(1, 1.5)];
    let msgs = MessageSet::compute(&spec, &a, &y).unwrap();
    let filt = msgs.forward.alpha_filt[0].to_moments().unwrap().mean[0];
    let smooth = msgs.smooth(0).unwrap().to_moments().unwrap().mean[0];
    assert!(filt < smooth && smooth < 1.5);
    let dense = dense_joint(&spec, &a, &y);
    assert!((smooth - dense.post_mean[0]).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn forward_backward_and_smoothing_identity(seed in 0u64..10_000, d in 1usize..=4, n in 1usize..=100) {
        let mut r = rng(seed);
        let sys = random_lds(&mut r, d, 1 + (seed as usize % 2), n);
        let msgs = MessageSet::compute(&sys.spec, &sys.a, &sys.y).unwrap();
        let f = msgs.forward.log_likelihood;
        prop_assert!(rel_diff(f, msgs.backward.log_likelihood) < 1e-8);
        for k in 0..n {
            let lk = msgs.smooth(k).unwrap().log_integral().unwrap();
            prop_assert!(rel_diff(f, lk) < 1e-8);
        }
    }
}

fn simulate_1d(rng: &mut ChaCha8Rng, n: usize, q: f64, r: f64) -> Vec<DVector<f64>> {
    let zeta = Normal::new(0.0, q.sqrt()).unwrap();
    let eps = Normal::new(0.0, r.sqrt()).unwrap();
    let mut z = Normal::new(0.0, 1.0).unwrap().sample(rng);
    (0..n)
        .map(|k| {
            if k > 0 {
                z = 0.9 * z + zeta.sample(rng);
            }
            DVector::from_element(1, z + eps.sample(rng))
        })
        .collect()
}

fn scalar_spec(q: f64, r: f64) -> LdsSpec<f64> {
    LdsSpec {
        c: DMatrix::identity(1, 1),
        q: DMatrix::from_element(1, 1, q),
        r: StepMatrices::Constant(DMatrix::from_element(1, 1, r)),
        prior_mu: DVector::from_element(1, 0.0),
        prior_cov: DMatrix::from_element(1, 1, 1.0),
    }
}

#[test]
fn em_recovers_observation_noise() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let data: Vec<EmSequence<f64>> = (0..50)
        .map(|_| EmSequence {
            y: simulate_1d(&mut r, 50, 0.1, 0.25),
            transitions: StepMatrices::Constant(DMatrix::identity(1, 1)),
        })
        .collect();
    let fit = em_fit(
        &data,
        &scalar_spec(1.0, 1.0),
        EmStructure::Unconstrained { a: DMatrix::from_element(1, 1, 0.5) },
        EmOptions::default(),
    )
    .unwrap();
    let r_hat = fit.spec.r.at(0)[(0, 0)];
    assert!((r_hat - 0.25).abs() / 0.25 < 0.2, "R = {r_hat}");
    for w in fit.log_likelihoods.windows(2) {
        assert!(w[1] >= w[0] - 1e-10);
    }
}

#[test]
fn em_free_block_is_monotone() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let data: Vec<EmSequence<f64>> = (0..5)
        .map(|_| {
            let y = simulate_1d(&mut r, 30, 0.05, 0.1);
            EmSequence {
                y: y.iter().map(|v| DVector::from_element(1, v[0])).collect(),
                transitions: StepMatrices::Constant(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.3])),
            }
        })
        .collect();
    let spec = LdsSpec {
        c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.1])),
        r: StepMatrices::Constant(DMatrix::from_element(1, 1, 0.5)),
        prior_mu: DVector::zeros(2),
        prior_cov: DMatrix::identity(2, 2),
    };
    let fit = em_fit(
        &data,
        &spec,
        EmStructure::FreeBlock { start: 1, block: DMatrix::from_element(1, 1, 0.3) },
        EmOptions { max_iterations: 30, tolerance: 1e-9 },
    )
    .unwrap();
    assert!(fit.log_likelihoods.len() > 2);
    for w in fit.log_likelihoods.windows(2) {
        assert!(w[1] >= w[0] - 1e-10, "{} -> {}", w[0], w[1]);
    }
    let q = &fit.spec.q;
    assert_eq!(q[(0, 1)], 0.0);
}
