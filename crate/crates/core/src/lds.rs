//! Linear dynamical systems over a fixed discrete trajectory.
//!
//! Forward messages `alpha`, backward messages `beta` and smoothed marginals are
//! all canonical potentials on the state labels `0..D`. Transition matrices may
//! change from step to step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, tick, GaussianPotential, Label, Moments, SpdFactor};
use crate::scalar::{ln_2pi, Scalar};

/// A matrix that is either shared by all steps or given per step.
#[derive(Clone, Debug, PartialEq)]
pub enum StepMatrices<T: Scalar> {
    Constant(DMatrix<T>),
    PerStep(Vec<DMatrix<T>>),
}

impl<T: Scalar> StepMatrices<T> {
    pub fn at(&self, k: usize) -> &DMatrix<T> {
        match self {
            StepMatrices::Constant(m) => m,
            StepMatrices::PerStep(ms) => &ms[k],
        }
    }

    fn check_len(&self, expected: usize, what: &'static str) -> Result<()> {
        match self {
            StepMatrices::PerStep(ms) if ms.len() != expected => Err(Error::DimensionMismatch {
                what,
                expected,
                found: ms.len(),
            }),
            _ => Ok(()),
        }
    }
}

/// Model parameters; the transition matrices are supplied separately.
#[derive(Clone, Debug, PartialEq)]
pub struct LdsSpec<T: Scalar> {
    pub c: DMatrix<T>,
    pub q: DMatrix<T>,
    pub r: StepMatrices<T>,
    pub prior_mu: DVector<T>,
    pub prior_cov: DMatrix<T>,
}

impl<T: Scalar> LdsSpec<T> {
    pub fn state_dim(&self) -> usize {
        self.prior_mu.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    fn validate(&self, a: &StepMatrices<T>, y: &[DVector<T>]) -> Result<()> {
        let d = self.state_dim();
        let m = self.obs_dim();
        if y.is_empty() {
            return Err(Error::InvalidParameter("observation sequence is empty".into()));
        }
        let check = |what, expected: usize, found: usize| {
            if expected == found {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, found })
            }
        };
        check("prior covariance", d, self.prior_cov.nrows())?;
        check("observation matrix", d, self.c.ncols())?;
        check("transition noise", d, self.q.nrows())?;
        a.check_len(y.len() - 1, "transition sequence")?;
        self.r.check_len(y.len(), "observation noise sequence")?;
        for (k, yk) in y.iter().enumerate() {
            check("observation", m, yk.len())?;
            check("observation noise", m, self.r.at(k).nrows())?;
            if k + 1 < y.len() {
                check("transition matrix", d, a.at(k).nrows())?;
                check("transition matrix", d, a.at(k).ncols())?;
            }
        }
        Ok(())
    }
}

pub fn state_labels(d: usize) -> Vec<Label> {
    (0..d as u32).map(Label).collect()
}

/// Labels `offset..offset+d`, used for a second copy of the state.
pub fn shifted_labels(d: usize, offset: u32) -> Vec<Label> {
    (0..d as u32).map(|i| Label(offset + i)).collect()
}

/// `p(y = y_hat | z)` as a potential on `labels`.
pub fn observation_potential<T: Scalar>(
    c: &DMatrix<T>,
    r: &DMatrix<T>,
    y: &DVector<T>,
    labels: Vec<Label>,
) -> Result<GaussianPotential<T>> {
    let f = SpdFactor::new(r).ok_or(Error::SingularCovariance)?;
    let r_inv_y = f.solve_vec(y);
    let r_inv_c = f.solve_mat(c);
    let m = T::from_usize(y.len()).expect("dimension fits");
    let g = -(f.log_det() + m * ln_2pi::<T>()) * T::lit(0.5) - y.dot(&r_inv_y) * T::lit(0.5);
    GaussianPotential::new(labels, c.transpose() * r_inv_y, c.transpose() * r_inv_c, g)
}

/// `p(z_cur | z_prev)` for `z_cur = A z_prev + N(0, Q)`, on `prev ++ cur` labels.
pub fn transition_potential<T: Scalar>(
    a: &DMatrix<T>,
    q: &DMatrix<T>,
    prev: &[Label],
    cur: &[Label],
) -> Result<GaussianPotential<T>> {
    let d = a.nrows();
    let f = SpdFactor::new(q).ok_or(Error::SingularCovariance)?;
    let q_inv = f.inverse();
    let q_inv_a = &q_inv * a;
    let mut k = DMatrix::zeros(2 * d, 2 * d);
    k.view_mut((0, 0), (d, d)).copy_from(&(a.transpose() * &q_inv_a));
    k.view_mut((0, d), (d, d)).copy_from(&(-q_inv_a.transpose()));
    k.view_mut((d, 0), (d, d)).copy_from(&(-&q_inv_a));
    k.view_mut((d, d), (d, d)).copy_from(&q_inv);
    let n = T::from_usize(d).expect("dimension fits");
    let g = -(f.log_det() + n * ln_2pi::<T>()) * T::lit(0.5);
    let labels = prev.iter().chain(cur.iter()).copied().collect();
    GaussianPotential::new(labels, DVector::zeros(2 * d), k, g)
}

/// Forward messages `alpha_{k|k-1}` and `alpha_{k|k}`.
#[derive(Clone, Debug)]
pub struct ForwardMessages<T: Scalar> {
    pub alpha_pred: Vec<GaussianPotential<T>>,
    pub alpha_filt: Vec<GaussianPotential<T>>,
    pub log_likelihood: T,
}

/// Backward messages `beta_{k|k+1}` and `beta_{k|k}`. These may be improper.
#[derive(Clone, Debug)]
pub struct BackwardMessages<T: Scalar> {
    pub beta: Vec<GaussianPotential<T>>,
    pub beta_filt: Vec<GaussianPotential<T>>,
    pub log_likelihood: T,
}

#[derive(Clone, Debug)]
pub struct MessageSet<T: Scalar> {
    pub forward: ForwardMessages<T>,
    pub backward: BackwardMessages<T>,
}

impl<T: Scalar> MessageSet<T> {
    pub fn compute(spec: &LdsSpec<T>, a: &StepMatrices<T>, y: &[DVector<T>]) -> Result<Self> {
        Ok(MessageSet {
            forward: forward_pass(spec, a, y)?,
            backward: backward_pass(spec, a, y)?,
        })
    }

    pub fn len(&self) -> usize {
        self.forward.alpha_filt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `alpha_{k|k} * beta_{k|k+1}`, proportional to `p(z_k | y_{all})`.
    pub fn smooth(&self, k: usize) -> Result<GaussianPotential<T>> {
        smooth(self, k)
    }
}

struct Update<T: Scalar> {
    h: DVector<T>,
    k: DMatrix<T>,
    g: T,
}

fn observe_update<T: Scalar>(
    c: &DMatrix<T>,
    r: &DMatrix<T>,
    y: &DVector<T>,
    h: &DVector<T>,
    k: &DMatrix<T>,
    g: T,
) -> Result<Update<T>> {
    let f = SpdFactor::new(r).ok_or(Error::SingularCovariance)?;
    let r_inv_y = f.solve_vec(y);
    let r_inv_c = f.solve_mat(c);
    let m = T::from_usize(y.len()).expect("dimension fits");
    Ok(Update {
        h: c.transpose() * r_inv_y.clone() + h,
        k: symmetrize(c.transpose() * r_inv_c + k),
        g: g - (f.log_det() + m * ln_2pi::<T>()) * T::lit(0.5) - y.dot(&r_inv_y) * T::lit(0.5),
    })
}

/// `log|2 pi M|` for `M = inv(W)` given the factor of `W`.
fn log_det_2pi_inverse<T: Scalar>(w: &SpdFactor<T>, d: usize) -> T {
    T::from_usize(d).expect("dimension fits") * ln_2pi::<T>() - w.log_det()
}

/// Forward recursion. `a.at(k)` maps `z_k` to `z_{k+1}`.
pub fn forward_pass<T: Scalar>(
    spec: &LdsSpec<T>,
    a: &StepMatrices<T>,
    y: &[DVector<T>],
) -> Result<ForwardMessages<T>> {
    spec.validate(a, y)?;
    let d = spec.state_dim();
    let labels = state_labels(d);
    let qf = SpdFactor::new(&spec.q).ok_or(Error::SingularCovariance)?;
    let q_inv = qf.inverse();
    let log_det_2pi_q = qf.log_det() + T::from_usize(d).expect("dimension fits") * ln_2pi::<T>();

    let prior = GaussianPotential::from_moments(labels.clone(), &spec.prior_mu, &spec.prior_cov, T::zero())?;
    let mut alpha_pred = Vec::with_capacity(y.len());
    let mut alpha_filt = Vec::with_capacity(y.len());
    let (mut h, mut k, mut g) = (prior.h().clone(), prior.k().clone(), prior.g());
    alpha_pred.push(prior);
    for (step, yk) in y.iter().enumerate() {
        tick();
        let u = observe_update(&spec.c, spec.r.at(step), yk, &h, &k, g)?;
        alpha_filt.push(GaussianPotential::new(labels.clone(), u.h.clone(), u.k.clone(), u.g)?);
        if step + 1 == y.len() {
            break;
        }
        let am = a.at(step);
        let q_inv_a = &q_inv * am;
        let w = symmetrize(am.transpose() * &q_inv_a + &u.k);
        let wf = SpdFactor::new(&w).ok_or(Error::ImproperPotential("filtered potential cannot be propagated"))?;
        let m_h = wf.solve_vec(&u.h);
        h = &q_inv_a * &m_h;
        k = symmetrize(&q_inv - &q_inv_a * wf.solve_mat(&q_inv_a.transpose()));
        g = u.g - log_det_2pi_q * T::lit(0.5) + log_det_2pi_inverse(&wf, d) * T::lit(0.5)
            + u.h.dot(&m_h) * T::lit(0.5);
        alpha_pred.push(GaussianPotential::new(labels.clone(), h.clone(), k.clone(), g)?);
    }
    let log_likelihood = alpha_filt
        .last()
        .expect("non-empty")
        .log_integral()
        .map_err(|_| Error::ImproperPotential("final filtered potential is not normalizable"))?;
    Ok(ForwardMessages {
        alpha_pred,
        alpha_filt,
        log_likelihood,
    })
}

/// Backward recursion starting from the flat message `beta_{K|K+1} = 1`.
pub fn backward_pass<T: Scalar>(
    spec: &LdsSpec<T>,
    a: &StepMatrices<T>,
    y: &[DVector<T>],
) -> Result<BackwardMessages<T>> {
    spec.validate(a, y)?;
    let d = spec.state_dim();
    let labels = state_labels(d);
    let qf = SpdFactor::new(&spec.q).ok_or(Error::SingularCovariance)?;
    let q_inv = qf.inverse();
    let log_det_2pi_q = qf.log_det() + T::from_usize(d).expect("dimension fits") * ln_2pi::<T>();

    let n = y.len();
    let mut beta = vec![GaussianPotential::flat(labels.clone()); n];
    let mut beta_filt = vec![GaussianPotential::flat(labels.clone()); n];
    let (mut h, mut k, mut g) = (DVector::zeros(d), DMatrix::zeros(d, d), T::zero());
    for step in (0..n).rev() {
        tick();
        let u = observe_update(&spec.c, spec.r.at(step), &y[step], &h, &k, g)?;
        beta_filt[step] = GaussianPotential::new(labels.clone(), u.h.clone(), u.k.clone(), u.g)?;
        if step == 0 {
            break;
        }
        let am = a.at(step - 1);
        let w = symmetrize(&q_inv + &u.k);
        let wf = SpdFactor::new(&w).ok_or(Error::ImproperPotential("backward message cannot be propagated"))?;
        let m_h = wf.solve_vec(&u.h);
        let at_q_inv = am.transpose() * &q_inv;
        h = &at_q_inv * &m_h;
        // A' Q^-1 (Q - M) Q^-1 A
        let middle = &spec.q - wf.inverse();
        k = symmetrize(&at_q_inv * middle * at_q_inv.transpose());
        g = u.g - log_det_2pi_q * T::lit(0.5) + log_det_2pi_inverse(&wf, d) * T::lit(0.5)
            + u.h.dot(&m_h) * T::lit(0.5);
        beta[step - 1] = GaussianPotential::new(labels.clone(), h.clone(), k.clone(), g)?;
    }
    let prior = GaussianPotential::from_moments(labels, &spec.prior_mu, &spec.prior_cov, T::zero())?;
    let log_likelihood = prior.multiply(&beta_filt[0]).log_integral()?;
    Ok(BackwardMessages {
        beta,
        beta_filt,
        log_likelihood,
    })
}

/// Smoothed potential at step `k`; its log-integral is the sequence log-likelihood.
pub fn smooth<T: Scalar>(msgs: &MessageSet<T>, k: usize) -> Result<GaussianPotential<T>> {
    let n = msgs.len();
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, len: n });
    }
    Ok(msgs.forward.alpha_filt[k].multiply(&msgs.backward.beta[k]))
}

/// Log-likelihood only.
pub fn log_likelihood<T: Scalar>(spec: &LdsSpec<T>, a: &StepMatrices<T>, y: &[DVector<T>]) -> Result<T> {
    Ok(forward_pass(spec, a, y)?.log_likelihood)
}

/// One training sequence with its (clamped) transition matrices.
#[derive(Clone, Debug)]
pub struct EmSequence<T: Scalar> {
    pub y: Vec<DVector<T>>,
    pub transitions: StepMatrices<T>,
}

/// Which parameters EM is allowed to move.
#[derive(Clone, Debug, PartialEq)]
pub enum EmStructure<T: Scalar> {
    /// One shared transition matrix (initial value given), full `Q` and `R`.
    Unconstrained { a: DMatrix<T> },
    /// The per-sequence transitions are clamped except the square block of rows
    /// and columns `start..D`, which is replaced by a shared free block. `Q` is
    /// diagonal and `R` is full.
    FreeBlock { start: usize, block: DMatrix<T> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iterations: 200,
            tolerance: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmFit<T: Scalar> {
    pub spec: LdsSpec<T>,
    pub structure: EmStructure<T>,
    /// Training log-likelihood before each M-step (and at the returned parameters last).
    pub log_likelihoods: Vec<T>,
    pub converged: bool,
}

struct PairStats<T: Scalar> {
    a: DMatrix<T>,
    cur_cur: DMatrix<T>,
    cur_prev: DMatrix<T>,
    prev_prev: DMatrix<T>,
}

struct Stats<T: Scalar> {
    pairs: Vec<PairStats<T>>,
    resid: DMatrix<T>,
    n_obs: usize,
    log_likelihood: T,
}

fn transitions_for<T: Scalar>(seq: &EmSequence<T>, structure: &EmStructure<T>) -> StepMatrices<T> {
    match structure {
        EmStructure::Unconstrained { a } => StepMatrices::Constant(a.clone()),
        EmStructure::FreeBlock { start, block } => {
            let n = seq.y.len().saturating_sub(1);
            StepMatrices::PerStep((0..n).map(|k| with_block(seq.transitions.at(k), *start, block)).collect())
        }
    }
}

/// Replaces rows `start..D` of `a` by `[0 | block]`.
pub fn with_block<T: Scalar>(a: &DMatrix<T>, start: usize, block: &DMatrix<T>) -> DMatrix<T> {
    let mut out = a.clone();
    let d = a.nrows();
    for r in start..d {
        for c in 0..d {
            out[(r, c)] = if c < start { T::zero() } else { block[(r - start, c - start)] };
        }
    }
    out
}

fn outer<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> DMatrix<T> {
    a * b.transpose()
}

fn e_step<T: Scalar>(
    spec: &LdsSpec<T>,
    data: &[EmSequence<T>],
    structure: &EmStructure<T>,
) -> Result<Stats<T>> {
    let d = spec.state_dim();
    let m = spec.obs_dim();
    let prev = shifted_labels(d, d as u32);
    let cur = state_labels(d);
    let mut stats = Stats {
        pairs: Vec::new(),
        resid: DMatrix::zeros(m, m),
        n_obs: 0,
        log_likelihood: T::zero(),
    };
    for seq in data {
        let a = transitions_for(seq, structure);
        let msgs = MessageSet::compute(spec, &a, &seq.y)?;
        stats.log_likelihood += msgs.forward.log_likelihood;
        for (k, yk) in seq.y.iter().enumerate() {
            let Moments { mean, cov, .. } = msgs.smooth(k)?.to_moments()?;
            let e = yk - &spec.c * &mean;
            stats.resid += outer(&e, &e) + &spec.c * cov * spec.c.transpose();
            stats.n_obs += 1;
            if k == 0 {
                continue;
            }
            let ak = a.at(k - 1);
            let joint = msgs.forward.alpha_filt[k - 1]
                .clone()
                .relabeled(prev.clone())?
                .multiply(&transition_potential(ak, &spec.q, &prev, &cur)?)
                .multiply(&msgs.backward.beta_filt[k]);
            let jm = joint.aligned_to(&[prev.clone(), cur.clone()].concat())?.to_moments()?;
            let second = &jm.cov + outer(&jm.mean, &jm.mean);
            stats.pairs.push(PairStats {
                a: ak.clone(),
                cur_cur: second.view((d, d), (d, d)).into_owned(),
                cur_prev: second.view((d, 0), (d, d)).into_owned(),
                prev_prev: second.view((0, 0), (d, d)).into_owned(),
            });
        }
    }
    Ok(stats)
}

fn m_step<T: Scalar>(
    spec: &LdsSpec<T>,
    stats: &Stats<T>,
    structure: &EmStructure<T>,
) -> Result<(LdsSpec<T>, EmStructure<T>)> {
    let d = spec.state_dim();
    let mut next = spec.clone();
    let n_obs = T::from_usize(stats.n_obs).expect("count fits");
    let r = symmetrize(&stats.resid / n_obs);
    if SpdFactor::new(&r).is_none() {
        return Err(Error::DegenerateStatistics("observation noise estimate is singular"));
    }
    next.r = StepMatrices::Constant(r);
    if stats.pairs.is_empty() {
        return Ok((next, structure.clone()));
    }
    let n_pairs = T::from_usize(stats.pairs.len()).expect("count fits");
    let sum = |f: &dyn Fn(&PairStats<T>) -> DMatrix<T>| {
        stats
            .pairs
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, p| acc + f(p))
    };
    match structure {
        EmStructure::Unconstrained { .. } => {
            let s11 = sum(&|p| p.cur_cur.clone());
            let s10 = sum(&|p| p.cur_prev.clone());
            let s00 = sum(&|p| p.prev_prev.clone());
            let f = SpdFactor::new(&s00).ok_or(Error::DegenerateStatistics("state second moment is singular"))?;
            let a = f.solve_mat(&s10.transpose()).transpose();
            let q = symmetrize((s11 - &a * s10.transpose()) / n_pairs);
            if SpdFactor::new(&q).is_none() {
                return Err(Error::DegenerateStatistics("transition noise estimate is singular"));
            }
            next.q = q;
            Ok((next, EmStructure::Unconstrained { a }))
        }
        EmStructure::FreeBlock { start, block } => {
            let start = *start;
            let b = d - start;
            let block = if b == 0 {
                block.clone()
            } else {
                let s10 = sum(&|p| p.cur_prev.clone()).view((start, start), (b, b)).into_owned();
                let s00 = sum(&|p| p.prev_prev.clone()).view((start, start), (b, b)).into_owned();
                let f = SpdFactor::new(&s00).ok_or(Error::DegenerateStatistics("free-block second moment is singular"))?;
                f.solve_mat(&s10.transpose()).transpose()
            };
            let mut q_diag = DVector::zeros(d);
            for p in &stats.pairs {
                let a = with_block(&p.a, start, &block);
                let e = &p.cur_cur - &a * p.cur_prev.transpose() - &p.cur_prev * a.transpose()
                    + &a * &p.prev_prev * a.transpose();
                for i in 0..d {
                    q_diag[i] += e[(i, i)];
                }
            }
            q_diag /= n_pairs;
            if q_diag.iter().any(|&q| !(q > T::lit(1e-300))) {
                return Err(Error::DegenerateStatistics("transition noise variance collapsed"));
            }
            next.q = DMatrix::from_diagonal(&q_diag);
            Ok((next, EmStructure::FreeBlock { start, block }))
        }
    }
}

/// Expectation-maximization with the discrete trajectory clamped.
///
/// The initial-state prior is kept fixed; each iteration never decreases the
/// training log-likelihood.
pub fn em_fit<T: Scalar>(
    data: &[EmSequence<T>],
    init: &LdsSpec<T>,
    structure: EmStructure<T>,
    options: EmOptions,
) -> Result<EmFit<T>> {
    if data.is_empty() || data.iter().all(|s| s.y.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if let (StepMatrices::PerStep(_), _) = (&init.r, ()) {
        return Err(Error::InvalidParameter("EM fits a single shared observation noise".into()));
    }
    if let EmStructure::FreeBlock { start, block } = &structure {
        let b = init.state_dim().checked_sub(*start).ok_or(Error::InvalidParameter("free block start exceeds dimension".into()))?;
        if block.nrows() != b || block.ncols() != b {
            return Err(Error::DimensionMismatch {
                what: "free block",
                expected: b,
                found: block.nrows(),
            });
        }
    }
    let mut spec = init.clone();
    let mut structure = structure;
    let mut log_likelihoods = Vec::new();
    let mut converged = false;
    for iter in 0..=options.max_iterations {
        let stats = e_step(&spec, data, &structure)?;
        log_likelihoods.push(stats.log_likelihood);
        if iter > 0 {
            let gain = (stats.log_likelihood - log_likelihoods[iter - 1]).as_f64();
            if gain < options.tolerance {
                converged = true;
                break;
            }
        }
        if iter == options.max_iterations {
            break;
        }
        let (s, st) = m_step(&spec, &stats, &structure)?;
        spec = s;
        structure = st;
    }
    Ok(EmFit {
        spec,
        structure,
        log_likelihoods,
        converged,
    })
}
