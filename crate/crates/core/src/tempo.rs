//! Switching state-space tempo model.
//!
//! The continuous state is `z_k = (tau_k, delta_1, ..., delta_{D-1})` where `tau_k`
//! is the intended onset time in seconds and the deltas are period variables in
//! seconds per beat. The score interval `gamma_k` selects the transition matrix.

use nalgebra::{DMatrix, DVector};
use num_traits::{Signed, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::{tick, GaussianPotential, Label, SpdFactor};
use crate::lds::{self, LdsSpec, StepMatrices};
use crate::scalar::{ln_2pi, Scalar};
use crate::score::{log_prior_score, Beat, Score, ScorePrior};

pub fn beat_value<T: Scalar>(b: Beat) -> T {
    T::lit(b.numer().to_f64().expect("finite") / b.denom().to_f64().expect("finite"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TempoParams<T: Scalar> {
    pub dim: usize,
    /// Row-major `(D-2) x (D-2)` block driving `delta_2..delta_{D-1}`; empty for `D = 2`.
    pub a_coeffs: Vec<T>,
    /// Diagonal of `Q`: `q_tau, q_delta_1, ...`.
    pub q: Vec<T>,
    pub r: T,
    pub r_off: T,
    pub r_outlier: T,
    pub prior_delta_mean: T,
    pub prior_delta_var: T,
    pub prior_tau_var: T,
}

impl<T: Scalar> TempoParams<T> {
    /// Three-dimensional model with maximum-likelihood values fitted to piano performances.
    pub fn reference() -> Self {
        TempoParams {
            dim: 3,
            a_coeffs: vec![T::lit(-0.072)],
            q: vec![T::lit(0.008 * 0.008), T::lit(0.007 * 0.007), T::lit(0.050 * 0.050)],
            r: T::lit(0.013 * 0.013),
            r_off: T::lit(0.25),
            r_outlier: T::lit(2.0),
            prior_delta_mean: T::lit(0.5),
            prior_delta_var: T::lit(0.2 * 0.2),
            prior_tau_var: T::lit(1e6),
        }
    }

    /// Two-dimensional random-walk tempo model.
    pub fn random_walk(q_tau: T, q_delta: T, r: T) -> Self {
        TempoParams {
            dim: 2,
            a_coeffs: Vec::new(),
            q: vec![q_tau, q_delta],
            r,
            ..Self::reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.dim < 2 {
            return bad("model dimension must be at least 2");
        }
        if self.a_coeffs.len() != (self.dim - 2) * (self.dim - 2) {
            return bad("a_coeffs must hold (D-2)^2 values");
        }
        if self.q.len() != self.dim {
            return bad("q must hold D variances");
        }
        let positive = |x: T| x > T::zero() && x.is_finite_value();
        if !self.q.iter().all(|&q| positive(q)) {
            return bad("transition variances must be positive");
        }
        if !positive(self.r) || !positive(self.r_off) || !positive(self.r_outlier) {
            return bad("observation variances must be positive");
        }
        if self.r_off < self.r {
            return bad("offset variance must not be below the onset variance");
        }
        if !positive(self.prior_delta_mean) || !positive(self.prior_delta_var) || !positive(self.prior_tau_var) {
            return bad("prior mean and variances must be positive");
        }
        Ok(())
    }

    pub fn free_block(&self) -> DMatrix<T> {
        let b = self.dim - 2;
        DMatrix::from_row_slice(b, b, &self.a_coeffs)
    }

    pub fn with_free_block(mut self, block: &DMatrix<T>) -> Self {
        self.a_coeffs = block.transpose().iter().copied().collect();
        self
    }

    pub fn q_matrix(&self) -> DMatrix<T> {
        DMatrix::from_diagonal(&DVector::from_vec(self.q.clone()))
    }

    /// Prior mean: `tau_0 = 0`, `delta_1 = prior_delta_mean`, higher components `0`.
    pub fn prior_mean(&self) -> DVector<T> {
        let mut mu = DVector::zeros(self.dim);
        mu[1] = self.prior_delta_mean;
        mu
    }

    /// Prior covariance; components beyond `delta_1` use their transition variance.
    pub fn prior_cov(&self) -> DMatrix<T> {
        let mut d = DVector::zeros(self.dim);
        d[0] = self.prior_tau_var;
        d[1] = self.prior_delta_var;
        for j in 2..self.dim {
            d[j] = self.q[j];
        }
        DMatrix::from_diagonal(&d)
    }

    /// `z_k = A(gamma) z_{k-1} + zeta_k`.
    pub fn transition_matrix(&self, gamma: Beat) -> Result<DMatrix<T>> {
        if gamma.is_negative() {
            return Err(Error::NegativeInterval(gamma));
        }
        let d = self.dim;
        let g = beat_value::<T>(gamma);
        let mut a = DMatrix::zeros(d, d);
        a[(0, 0)] = T::one();
        a[(0, 1)] = g;
        a[(1, 1)] = T::one();
        if d >= 3 {
            a[(0, 2)] = g;
            let b = d - 2;
            for i in 0..b {
                for j in 0..b {
                    a[(2 + i, 2 + j)] = self.a_coeffs[i * b + j];
                }
            }
        }
        Ok(a)
    }

    /// Seconds per beat implied by a state: `delta_1 + delta_2` when `D >= 3`.
    pub fn period(&self, z: &DVector<T>) -> T {
        if self.dim >= 3 {
            z[1] + z[2]
        } else {
            z[1]
        }
    }

    /// Mean and variance of the period under a state distribution.
    pub fn period_moments(&self, mean: &DVector<T>, cov: &DMatrix<T>) -> (T, T) {
        if self.dim >= 3 {
            (mean[1] + mean[2], cov[(1, 1)] + cov[(2, 2)] + cov[(1, 2)] * T::lit(2.0))
        } else {
            (mean[1], cov[(1, 1)])
        }
    }

    pub fn variance(&self, kind: EventKind) -> T {
        match kind {
            EventKind::Onset => self.r,
            EventKind::Offset => self.r_off,
            EventKind::Outlier => self.r_outlier,
        }
    }
}

/// How an observed time relates to the intended onset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum EventKind {
    #[default]
    Onset,
    Offset,
    Outlier,
}

/// Observed event times `y_0..y_K` with optional event kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetSequence<T: Scalar> {
    pub times: Vec<T>,
    pub kinds: Option<Vec<EventKind>>,
}

impl<T: Scalar> OnsetSequence<T> {
    pub fn new(times: Vec<T>) -> Self {
        OnsetSequence { times, kinds: None }
    }

    pub fn with_kinds(times: Vec<T>, kinds: Vec<EventKind>) -> Result<Self> {
        if kinds.len() != times.len() {
            return Err(Error::DimensionMismatch {
                what: "event kinds",
                expected: times.len(),
                found: kinds.len(),
            });
        }
        Ok(OnsetSequence { times, kinds: Some(kinds) })
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() {
            return Err(Error::InvalidParameter("onset sequence is empty".into()));
        }
        if let Some(t) = self.times.iter().find(|t| !t.is_finite_value()) {
            return Err(Error::InvalidParameter(format!("non-finite onset time {t}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn kind(&self, k: usize) -> EventKind {
        self.kinds.as_ref().map_or(EventKind::Onset, |ks| ks[k])
    }

    pub fn prefix(&self, n: usize) -> Self {
        OnsetSequence {
            times: self.times[..n].to_vec(),
            kinds: self.kinds.as_ref().map(|ks| ks[..n].to_vec()),
        }
    }
}

/// Likelihood `N(y; tau, variance)` as a potential on the `tau` label.
pub fn observe_potential<T: Scalar>(y: T, variance: T, tau: Label) -> GaussianPotential<T> {
    let prec = T::one() / variance;
    let g = -(ln_2pi::<T>() + variance.ln()) * T::lit(0.5) - y * y * prec * T::lit(0.5);
    GaussianPotential::new(vec![tau], DVector::from_element(1, y * prec), DMatrix::from_element(1, 1, prec), g)
        .expect("one-dimensional potential is well formed")
}

/// Model parameters together with the score prior.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub params: TempoParams<T>,
    pub prior: ScorePrior,
    q_inv: DMatrix<T>,
    q_log_norm: T,
}

const PREV_OFFSET: u32 = 64;

impl<T: Scalar> Model<T> {
    pub fn new(params: TempoParams<T>, prior: ScorePrior) -> Result<Self> {
        params.validate()?;
        let f = SpdFactor::new(&params.q_matrix()).ok_or(Error::SingularCovariance)?;
        let d = T::from_usize(params.dim).expect("dimension fits");
        Ok(Model {
            q_inv: f.inverse(),
            q_log_norm: -(f.log_det() + d * ln_2pi::<T>()) * T::lit(0.5),
            params,
            prior,
        })
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn grid(&self) -> &[Beat] {
        self.prior.gamma_grid()
    }

    pub fn labels(&self) -> Vec<Label> {
        lds::state_labels(self.dim())
    }

    fn prev_labels(&self) -> Vec<Label> {
        lds::shifted_labels(self.dim(), PREV_OFFSET)
    }

    pub fn initial_potential(&self) -> GaussianPotential<T> {
        GaussianPotential::from_moments(self.labels(), &self.params.prior_mean(), &self.params.prior_cov(), T::zero())
            .expect("prior covariance is diagonal and positive")
    }

    pub fn observe(&self, y: T, kind: EventKind) -> GaussianPotential<T> {
        observe_potential(y, self.params.variance(kind), Label(0))
    }

    /// `p(y_0, z_0)`.
    pub fn first(&self, y0: T, kind: EventKind) -> GaussianPotential<T> {
        tick();
        self.initial_potential().multiply(&self.observe(y0, kind))
    }

    /// Transition potential over `(z_prev, z_cur)` with `z_prev` on shifted labels.
    pub fn transition_potential(&self, gamma: Beat) -> Result<GaussianPotential<T>> {
        let a = self.params.transition_matrix(gamma)?;
        let d = self.dim();
        let q_inv_a = &self.q_inv * &a;
        let mut k = DMatrix::zeros(2 * d, 2 * d);
        k.view_mut((0, 0), (d, d)).copy_from(&(a.transpose() * &q_inv_a));
        k.view_mut((0, d), (d, d)).copy_from(&(-q_inv_a.transpose()));
        k.view_mut((d, 0), (d, d)).copy_from(&(-&q_inv_a));
        k.view_mut((d, d), (d, d)).copy_from(&self.q_inv);
        let labels = [self.prev_labels(), self.labels()].concat();
        GaussianPotential::new(labels, DVector::zeros(2 * d), k, self.q_log_norm)
    }

    /// `phi_k(z_k) = integral p(y_k | z_k) p(z_k | z_{k-1}, gamma) phi_{k-1}(z_{k-1}) dz_{k-1}`.
    pub fn extend(&self, phi: &GaussianPotential<T>, gamma: Beat, y: T, kind: EventKind) -> Result<GaussianPotential<T>> {
        tick();
        let prev = phi.clone().relabeled(self.prev_labels())?;
        let joint = prev
            .multiply(&self.transition_potential(gamma)?)
            .multiply(&self.observe(y, kind));
        joint.marginalize(&self.labels())
    }

    pub fn transitions(&self, gammas: &[Beat]) -> Result<StepMatrices<T>> {
        Ok(StepMatrices::PerStep(
            gammas
                .iter()
                .map(|&g| self.params.transition_matrix(g))
                .collect::<Result<_>>()?,
        ))
    }

    pub fn lds_spec(&self, onsets: &OnsetSequence<T>) -> LdsSpec<T> {
        let d = self.dim();
        let mut c = DMatrix::zeros(1, d);
        c[(0, 0)] = T::one();
        let r = (0..onsets.len())
            .map(|k| DMatrix::from_element(1, 1, self.params.variance(onsets.kind(k))))
            .collect();
        LdsSpec {
            c,
            q: self.params.q_matrix(),
            r: StepMatrices::PerStep(r),
            prior_mu: self.params.prior_mean(),
            prior_cov: self.params.prior_cov(),
        }
    }

    fn check_lengths(&self, gammas: &[Beat], onsets: &OnsetSequence<T>) -> Result<()> {
        onsets.validate()?;
        if gammas.len() + 1 != onsets.len() {
            return Err(Error::DimensionMismatch {
                what: "score intervals",
                expected: onsets.len() - 1,
                found: gammas.len(),
            });
        }
        Ok(())
    }

    /// `log p(y_{0:K} | gamma_{1:K})`.
    pub fn log_likelihood(&self, gammas: &[Beat], onsets: &OnsetSequence<T>) -> Result<T> {
        self.check_lengths(gammas, onsets)?;
        lds::log_likelihood(&self.lds_spec(onsets), &self.transitions(gammas)?, &observations(onsets))
    }

    /// `log p(gamma_{1:K}, y_{0:K})`, the MAP objective.
    pub fn log_joint(&self, score: &Score, onsets: &OnsetSequence<T>) -> Result<T> {
        Ok(self.log_likelihood(&score.gammas, onsets)? + log_prior_score::<T>(score, &self.prior)?)
    }

    pub fn messages(&self, gammas: &[Beat], onsets: &OnsetSequence<T>) -> Result<lds::MessageSet<T>> {
        self.check_lengths(gammas, onsets)?;
        lds::MessageSet::compute(&self.lds_spec(onsets), &self.transitions(gammas)?, &observations(onsets))
    }
}

pub fn observations<T: Scalar>(onsets: &OnsetSequence<T>) -> Vec<DVector<T>> {
    onsets.times.iter().map(|&t| DVector::from_element(1, t)).collect()
}

/// Which noise sources the simulator draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Full,
    /// No noise on `tau`; the period and observation noise stay active.
    ZetaTauZero,
    Noiseless,
}

/// Draws onset times for `score`.
///
/// `tau_0 = 0`. When `forced_period` is given, the period at step `k` (for
/// `k < K`) is overridden by `forced_period[k]` instead of following its dynamics.
pub fn simulate<T: Scalar>(
    score: &Score,
    params: &TempoParams<T>,
    noise: NoiseMode,
    forced_period: Option<&[T]>,
    kinds: Option<&[EventKind]>,
    seed: u64,
) -> Result<(OnsetSequence<T>, Vec<DVector<T>>)> {
    params.validate()?;
    let n = score.len() + 1;
    if let Some(f) = forced_period {
        if f.len() < score.len() {
            return Err(Error::DimensionMismatch {
                what: "forced periods",
                expected: score.len(),
                found: f.len(),
            });
        }
    }
    if let Some(ks) = kinds {
        if ks.len() != n {
            return Err(Error::DimensionMismatch {
                what: "event kinds",
                expected: n,
                found: ks.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |var: T, active: bool| -> T {
        let x: f64 = StandardNormal.sample(&mut rng);
        if active {
            T::lit(x) * var.sqrt()
        } else {
            T::zero()
        }
    };
    let d = params.dim;
    let noisy = noise != NoiseMode::Noiseless;
    let mut z = params.prior_mean();
    let pc = params.prior_cov();
    for j in 1..d {
        z[j] += normal(pc[(j, j)], noisy);
    }
    let force = |z: &mut DVector<T>, k: usize| {
        if let Some(f) = forced_period {
            if k < f.len() {
                z[1] = f[k];
                for j in 2..d {
                    z[j] = T::zero();
                }
            }
        }
    };
    force(&mut z, 0);
    let kind = |k: usize| kinds.map_or(EventKind::Onset, |ks| ks[k]);
    let mut latent = vec![z.clone()];
    let mut times = vec![z[0] + normal(params.variance(kind(0)), noise == NoiseMode::Full || noise == NoiseMode::ZetaTauZero)];
    for (k, &gamma) in score.gammas.iter().enumerate() {
        let a = params.transition_matrix(gamma)?;
        let mut next = &a * &z;
        next[0] += normal(params.q[0], noise == NoiseMode::Full);
        for j in 1..d {
            next[j] += normal(params.q[j], noisy);
        }
        z = next;
        force(&mut z, k + 1);
        times.push(z[0] + normal(params.variance(kind(k + 1)), noisy));
        latent.push(z.clone());
    }
    let onsets = match kinds {
        Some(ks) => OnsetSequence::with_kinds(times, ks.to_vec())?,
        None => OnsetSequence::new(times),
    };
    Ok((onsets, latent))
}

/// One-step predictive log density of `y` under each `gamma`, given the filtered `phi` at the previous slice.
pub fn predictive_log_densities<T: Scalar>(
    phi: &GaussianPotential<T>,
    y: T,
    variance: T,
    grid: &[Beat],
    params: &TempoParams<T>,
) -> Result<Vec<T>> {
    let m = phi.aligned_to(&lds::state_labels(params.dim))?.to_moments()?;
    let q = params.q_matrix();
    grid.iter()
        .map(|&g| {
            let a = params.transition_matrix(g)?;
            let mean = (&a * &m.mean)[0];
            let var = (&a * &m.cov * a.transpose() + &q)[(0, 0)] + variance;
            Ok(-(ln_2pi::<T>() + var.ln()) * T::lit(0.5) - (y - mean) * (y - mean) / (var * T::lit(2.0)))
        })
        .collect()
}

/// Grid values whose predictive density is at least `threshold` times the best one.
///
/// The result keeps grid order and always contains the best candidate.
pub fn candidate_gammas<T: Scalar>(
    phi: &GaussianPotential<T>,
    y: T,
    variance: T,
    grid: &[Beat],
    threshold: f64,
    params: &TempoParams<T>,
) -> Result<Vec<Beat>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("candidate grid is empty".into()));
    }
    let lp = predictive_log_densities(phi, y, variance, grid, params)?;
    let best = lp.iter().copied().fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if threshold <= 0.0 {
        return Ok(grid.to_vec());
    }
    let cut = best.as_f64() + threshold.ln();
    Ok(grid
        .iter()
        .zip(&lp)
        .filter(|(_, &l)| l == best || l.as_f64() >= cut)
        .map(|(&g, _)| g)
        .collect())
}

/// Two-variance mixture for flagging outliers when the score is known.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierModel<T: Scalar> {
    pub inlier_var: T,
    pub outlier_var: T,
}

impl<T: Scalar> Default for OutlierModel<T> {
    fn default() -> Self {
        OutlierModel {
            inlier_var: T::lit(0.002),
            outlier_var: T::lit(2.0),
        }
    }
}

/// MAP outlier indicators under a uniform prior: greedy filtering, then
/// single-flip iterative improvement until no flip raises the likelihood.
pub fn detect_outliers<T: Scalar>(
    model: &Model<T>,
    gammas: &[Beat],
    times: &[T],
    outliers: OutlierModel<T>,
) -> Result<Vec<bool>> {
    let mut params = model.params.clone();
    params.r = outliers.inlier_var;
    params.r_off = outliers.inlier_var.max(params.r_off);
    params.r_outlier = outliers.outlier_var;
    let m = Model::new(params, model.prior.clone())?;
    let kinds = |flags: &[bool]| -> Vec<EventKind> {
        flags
            .iter()
            .map(|&o| if o { EventKind::Outlier } else { EventKind::Onset })
            .collect()
    };
    let score_ll = |flags: &[bool]| -> Result<T> {
        let seq = OnsetSequence::with_kinds(times.to_vec(), kinds(flags))?;
        m.log_likelihood(gammas, &seq)
    };
    let mut flags = Vec::with_capacity(times.len());
    let mut phi: Option<GaussianPotential<T>> = None;
    for (k, &y) in times.iter().enumerate() {
        let step = |kind| match &phi {
            None => Ok(m.first(y, kind)),
            Some(p) => m.extend(p, gammas[k - 1], y, kind),
        };
        let a = step(EventKind::Onset)?;
        let b = step(EventKind::Outlier)?;
        let (flag, next) = if b.log_integral()? > a.log_integral()? { (true, b) } else { (false, a) };
        flags.push(flag);
        phi = Some(next);
    }
    let mut best = score_ll(&flags)?;
    loop {
        let mut changed = false;
        for k in 0..flags.len() {
            flags[k] = !flags[k];
            let ll = score_ll(&flags)?;
            if ll > best {
                best = ll;
                changed = true;
            } else {
                flags[k] = !flags[k];
            }
        }
        if !changed {
            return Ok(flags);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::beat;

    fn b(n: i64, d: i64) -> Beat {
        beat(n, d)
    }

    #[test]
    fn random_walk_transition() {
        let p = TempoParams::<f64>::random_walk(1e-4, 1e-4, 1e-4);
        let a = p.transition_matrix(b(1, 2)).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]));
        assert!(p.transition_matrix(b(-1, 2)).is_err());
    }

    #[test]
    fn three_dimensional_transition() {
        let p = TempoParams::<f64>::reference();
        let a = p.transition_matrix(b(1, 1)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, -0.072]);
        assert_eq!(a, expected);
    }

    #[test]
    fn zero_interval_keeps_tau_mean() {
        let p = TempoParams::<f64>::reference();
        let a = p.transition_matrix(b(0, 1)).unwrap();
        let z = DVector::from_vec(vec![3.0, 0.5, 0.1]);
        assert_eq!((&a * z)[0], 3.0);
    }

    #[test]
    fn observation_potential_parameters() {
        let r = 0.013f64 * 0.013;
        let p = observe_potential(2.0, r, Label(0));
        assert!((p.k()[(0, 0)] - 1.0 / r).abs() < 1e-6);
        assert!((p.h()[0] - 2.0 / r).abs() < 1e-6);
        let flat = observe_potential(2.0, 1e8, Label(0));
        assert!(flat.k()[(0, 0)] < 1e-7);
        let m = Model::new(TempoParams::<f64>::reference(), ScorePrior::binary(4, 1.0, vec![b(1, 1)]).unwrap()).unwrap();
        assert_eq!(m.params.variance(EventKind::Outlier), 2.0);
        assert!((OutlierModel::<f64>::default().inlier_var - 0.002).abs() < 1e-15);
    }

    #[test]
    fn table_realization() {
        let score = Score::new(vec![b(1, 2), b(1, 1), b(1, 2)], b(0, 1)).unwrap();
        let p = TempoParams::<f64>::random_walk(1e-4, 1e-4, 1e-4);
        let (_, z) = simulate(&score, &p, NoiseMode::ZetaTauZero, Some(&[0.5, 0.6, 0.7]), None, 3).unwrap();
        let tau: Vec<f64> = z.iter().map(|v| v[0]).collect();
        for (t, e) in tau.iter().zip([0.0, 0.25, 0.85, 1.20]) {
            assert!((t - e).abs() <= 1e-12, "{tau:?}");
        }
    }

    #[test]
    fn metronome_is_noiseless() {
        let score = Score::new(vec![b(1, 1); 3], b(0, 1)).unwrap();
        let p = TempoParams::<f64>::random_walk(1e-4, 1e-4, 1e-4);
        let (y, _) = simulate(&score, &p, NoiseMode::Noiseless, None, None, 0).unwrap();
        assert_eq!(y.times, vec![0.0, 0.5, 1.0, 1.5]);
    }

    #[test]
    fn simulation_is_reproducible() {
        let score = Score::new(vec![b(1, 2); 10], b(0, 1)).unwrap();
        let p = TempoParams::<f64>::reference();
        let a = simulate(&score, &p, NoiseMode::Full, None, None, 17).unwrap();
        let c = simulate(&score, &p, NoiseMode::Full, None, None, 17).unwrap();
        assert_eq!(a, c);
        let d = simulate(&score, &p, NoiseMode::Full, None, None, 18).unwrap();
        assert_ne!(a.0, d.0);
    }

    fn point_potential(tau: f64, delta: f64, var: f64) -> GaussianPotential<f64> {
        GaussianPotential::from_moments(
            lds::state_labels(2),
            &DVector::from_vec(vec![tau, delta]),
            &(DMatrix::identity(2, 2) * var),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn candidate_pruning() {
        let p = TempoParams::<f64>::random_walk(1e-8, 1e-8, 1e-6);
        let grid = vec![b(0, 1), b(1, 2), b(1, 1), b(3, 2)];
        let phi = point_potential(1.0, 0.5, 1e-8);
        assert_eq!(candidate_gammas(&phi, 1.5, 1e-6, &grid, 1e-8, &p).unwrap(), vec![b(1, 1)]);
        assert_eq!(candidate_gammas(&phi, 1.5, 1e-6, &grid, 0.0, &p).unwrap(), grid);

        let p = TempoParams::<f64>::random_walk(1e-3, 1e-3, 1e-3);
        let phi = point_potential(1.0, 0.5, 1e-3);
        let lp = predictive_log_densities(&phi, 1.5, 1e-3, &grid, &p).unwrap();
        let best = (0..4).max_by(|&i, &j| lp[i].partial_cmp(&lp[j]).unwrap()).unwrap();
        assert_eq!(grid[best], b(1, 1));
        // exhaustive check of the predictive density by direct integration
        for (g, l) in grid.iter().zip(&lp) {
            let model = Model::new(p.clone(), ScorePrior::binary(3, 1.0, grid.clone()).unwrap()).unwrap();
            let ext = model.extend(&phi, *g, 1.5, EventKind::Onset).unwrap();
            assert!((ext.log_integral().unwrap() - l).abs() < 1e-9);
        }
    }

    #[test]
    fn outliers_are_flagged() {
        let grid = vec![b(1, 1)];
        let p = TempoParams::<f64>::random_walk(1e-6, 1e-6, 1e-4);
        let m = Model::new(p, ScorePrior::binary(2, 1.0, grid).unwrap()).unwrap();
        let mut times: Vec<f64> = (0..12).map(|k| k as f64 * 0.5).collect();
        times[6] += 0.4;
        let flags = detect_outliers(&m, &[b(1, 1); 11], &times, OutlierModel::default()).unwrap();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 1);
        assert!(flags[6]);
    }
}
