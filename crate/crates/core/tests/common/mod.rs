#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempoquant::lds::{LdsSpec, StepMatrices};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, floor: f64) -> DMatrix<f64> {
    let l = random_matrix(rng, d, d, 1.0);
    &l * l.transpose() * 0.5 + DMatrix::identity(d, d) * floor
}

pub struct RandomLds {
    pub spec: LdsSpec<f64>,
    pub a: StepMatrices<f64>,
    pub y: Vec<DVector<f64>>,
}

/// Random stable system with per-step transitions and observations drawn from it.
pub fn random_lds(rng: &mut ChaCha8Rng, d: usize, m: usize, n: usize) -> RandomLds {
    let a: Vec<DMatrix<f64>> = (0..n.saturating_sub(1))
        .map(|_| DMatrix::identity(d, d) * 0.8 + random_matrix(rng, d, d, 0.3 / d as f64))
        .collect();
    let spec = LdsSpec {
        c: random_matrix(rng, m, d, 1.0) + DMatrix::from_fn(m, d, |i, j| if i == j { 1.0 } else { 0.0 }),
        q: random_spd(rng, d, 0.2),
        r: StepMatrices::Constant(random_spd(rng, m, 0.3)),
        prior_mu: DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)),
        prior_cov: random_spd(rng, d, 0.5),
    };
    let y = (0..n)
        .map(|_| DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0)))
        .collect();
    RandomLds {
        spec,
        a: StepMatrices::PerStep(a),
        y,
    }
}

pub struct DenseJoint {
    pub log_likelihood: f64,
    pub post_mean: DVector<f64>,
    pub post_cov: DMatrix<f64>,
}

pub fn log_normal_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let e = x - mean;
    let sol = chol.solve(&e);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    -0.5 * (n * (2.0 * std::f64::consts::PI).ln() + log_det + e.dot(&sol))
}

/// Joint Gaussian of all states built by explicit covariance propagation.
pub fn dense_joint(spec: &LdsSpec<f64>, a: &StepMatrices<f64>, y: &[DVector<f64>]) -> DenseJoint {
    let d = spec.prior_mu.len();
    let m = spec.c.nrows();
    let n = y.len();
    let mut mean = DVector::zeros(n * d);
    let mut cov = DMatrix::zeros(n * d, n * d);
    mean.rows_mut(0, d).copy_from(&spec.prior_mu);
    cov.view_mut((0, 0), (d, d)).copy_from(&spec.prior_cov);
    for k in 1..n {
        let ak = a.at(k - 1);
        let prev_mean = mean.rows((k - 1) * d, d).into_owned();
        mean.rows_mut(k * d, d).copy_from(&(ak * prev_mean));
        for j in 0..k {
            let block = ak * cov.view(((k - 1) * d, j * d), (d, d)).into_owned();
            cov.view_mut((k * d, j * d), (d, d)).copy_from(&block);
            cov.view_mut((j * d, k * d), (d, d)).copy_from(&block.transpose());
        }
        let prev = cov.view(((k - 1) * d, (k - 1) * d), (d, d)).into_owned();
        cov.view_mut((k * d, k * d), (d, d)).copy_from(&(ak * prev * ak.transpose() + &spec.q));
    }
    let mut big_c = DMatrix::zeros(n * m, n * d);
    let mut big_r = DMatrix::zeros(n * m, n * m);
    let mut big_y = DVector::zeros(n * m);
    for k in 0..n {
        big_c.view_mut((k * m, k * d), (m, d)).copy_from(&spec.c);
        big_r.view_mut((k * m, k * m), (m, m)).copy_from(spec.r.at(k));
        big_y.rows_mut(k * m, m).copy_from(&y[k]);
    }
    let y_mean = &big_c * &mean;
    let s = &big_c * &cov * big_c.transpose() + big_r;
    let log_likelihood = log_normal_pdf(&big_y, &y_mean, &s);
    let s_inv = s.clone().cholesky().unwrap().inverse();
    let gain = &cov * big_c.transpose() * &s_inv;
    let post_mean = &mean + &gain * (big_y - y_mean);
    let post_cov = &cov - &gain * &big_c * &cov;
    DenseJoint {
        log_likelihood,
        post_mean,
        post_cov,
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

use tempoquant::mcmc::{full_supports, Supports};
use tempoquant::score::beat;
use tempoquant::tempo::{simulate, Model, NoiseMode, OnsetSequence, TempoParams};
use tempoquant::{Score, ScorePrior};

pub struct Problem {
    pub model: Model<f64>,
    pub onsets: OnsetSequence<f64>,
    pub supports: Supports,
    pub truth: Score,
}

/// Small simulated problem with a deliberately vague posterior over intervals.
pub fn small_problem(seed: u64, k: usize, grid_size: usize) -> Problem {
    let all = [beat(1, 2), beat(1, 1), beat(3, 4)];
    let grid: Vec<_> = all[..grid_size].to_vec();
    let params = TempoParams::random_walk(0.02f64.powi(2), 0.05f64.powi(2), 0.06f64.powi(2));
    let model = Model::new(params.clone(), ScorePrior::binary(3, 0.7, grid.clone()).unwrap()).unwrap();
    let mut r = rng(seed);
    let gammas: Vec<_> = (0..k).map(|_| grid[r.gen_range(0..grid.len())]).collect();
    let truth = Score::new(gammas, beat(0, 1)).unwrap();
    let (onsets, _) = simulate(&truth, &params, NoiseMode::Full, None, None, seed).unwrap();
    Problem {
        model,
        onsets,
        supports: full_supports(&grid, k),
        truth,
    }
}
