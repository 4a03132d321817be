//! Rao-Blackwellized particle filtering over score intervals.
//!
//! Each particle carries a discrete trajectory `gamma_{1:k}` and the exact
//! potential `phi_k(z_k) = p(y_{0:k}, z_k | gamma_{1:k})`, so only the discrete
//! part is sampled.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianPotential;
use crate::mcmc::{self, McmcResult, Supports};
use crate::scalar::{log_sum_exp, Scalar};
use crate::score::{Beat, PriorAccumulator, Score};
use crate::tempo::{candidate_gammas, EventKind, Model, OnsetSequence};

/// How the next generation is chosen among all `(particle, gamma)` extensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Selection {
    /// `N` independent draws proportional to the extension weights.
    Multinomial,
    /// The `N` heaviest extensions without replacement.
    Greedy,
    /// The heaviest extension plus `N - 1` multinomial draws.
    Hybrid,
    /// Keep every extension; the set grows geometrically.
    ExpandAll,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmcConfig {
    pub particles: usize,
    pub selection: Selection,
    /// Relative predictive-mass threshold for candidate pruning; `0` disables it.
    pub prune_threshold: f64,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 100,
            selection: Selection::Multinomial,
            prune_threshold: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Particle<T: Scalar> {
    pub gammas: Vec<Beat>,
    pub prior: PriorAccumulator<T>,
    pub phi: GaussianPotential<T>,
    /// `log p(gamma_{1:k}, y_{0:k})`.
    pub log_weight: T,
    /// `log sum_s p(gamma_{1:k-1}, gamma_k = s, y_{0:k})` over the parent's extensions.
    pub log_marginal: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T: Scalar> {
    /// Distinct `gamma_k` values among the surviving particles, sorted.
    pub support: Vec<Beat>,
    pub ess: f64,
    /// Log of the total joint mass of the distinct surviving trajectories.
    pub log_mass: T,
    pub distinct: usize,
    pub extensions: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet<T: Scalar> {
    pub particles: Vec<Particle<T>>,
    pub c0: Beat,
    pub history: Vec<StepRecord<T>>,
}

impl<T: Scalar> ParticleSet<T> {
    /// Number of processed observations minus one.
    pub fn step(&self) -> usize {
        self.history.len()
    }

    /// Indices of the first particle of every distinct trajectory.
    pub fn distinct(&self) -> Vec<usize> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for (i, p) in self.particles.iter().enumerate() {
            if seen.insert(p.gammas.as_slice(), i).is_none() {
                out.push(i);
            }
        }
        out
    }

    /// Normalized weights over distinct trajectories (zero for repeats).
    pub fn normalized_weights(&self) -> Vec<f64> {
        let idx = self.distinct();
        let lw: Vec<f64> = idx.iter().map(|&i| self.particles[i].log_weight.as_f64()).collect();
        let z = log_sum_exp(lw.iter().copied());
        let mut w = vec![0.0; self.particles.len()];
        for (&i, l) in idx.iter().zip(&lw) {
            w[i] = (l - z).exp();
        }
        w
    }

    /// Supports `Gamma_1..Gamma_k` for refinement.
    pub fn supports(&self) -> Supports {
        self.history.iter().map(|h| h.support.clone()).collect()
    }
}

/// All particles share `phi_0 = p(y_0, z_0)`.
pub fn rbpf_init<T: Scalar>(model: &Model<T>, y0: T, kind: EventKind, c0: Beat, n: usize) -> Result<ParticleSet<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("particle count must be at least 1".into()));
    }
    let phi = model.first(y0, kind);
    let z = phi
        .log_integral()
        .map_err(|_| Error::ImproperPotential("initial potential is not normalizable"))?;
    let p = Particle {
        gammas: Vec::new(),
        prior: PriorAccumulator::start(c0),
        phi,
        log_weight: z,
        log_marginal: z,
    };
    Ok(ParticleSet {
        particles: vec![p; n],
        c0,
        history: Vec::new(),
    })
}

struct Extension<T: Scalar> {
    parent: usize,
    gamma: Beat,
    phi: GaussianPotential<T>,
    prior: PriorAccumulator<T>,
    log_q: T,
}

fn lex_better<T: Scalar>(a: &Extension<T>, b: &Extension<T>, parents: &[Particle<T>]) -> std::cmp::Ordering {
    b.log_q
        .partial_cmp(&a.log_q)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| {
            parents[a.parent]
                .gammas
                .iter()
                .chain(std::iter::once(&a.gamma))
                .cmp(parents[b.parent].gammas.iter().chain(std::iter::once(&b.gamma)))
        })
}

fn multinomial_draws<R: Rng>(log_q: &[f64], count: usize, rng: &mut R) -> Vec<usize> {
    let z = log_sum_exp(log_q.iter().copied());
    let mut cdf = Vec::with_capacity(log_q.len());
    let mut acc = 0.0;
    for l in log_q {
        acc += (l - z).exp();
        cdf.push(acc);
    }
    let uniforms: Vec<f64> = (0..count).map(|_| rng.gen::<f64>()).collect();
    uniforms
        .into_iter()
        .map(|u| {
            let target = u * acc;
            cdf.partition_point(|&c| c <= target).min(log_q.len() - 1)
        })
        .collect()
}

/// Extends every distinct trajectory by every candidate `gamma` and selects the next generation.
pub fn rbpf_step<T: Scalar, R: Rng>(
    ps: &ParticleSet<T>,
    model: &Model<T>,
    y: T,
    kind: EventKind,
    grid: &[Beat],
    config: &SmcConfig,
    rng: &mut R,
) -> Result<ParticleSet<T>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("interval grid is empty".into()));
    }
    let variance = model.params.variance(kind);
    let parents: Vec<Particle<T>> = ps.distinct().into_iter().map(|i| ps.particles[i].clone()).collect();
    let mut ext = Vec::new();
    let mut parent_mass = Vec::with_capacity(parents.len());
    for (j, p) in parents.iter().enumerate() {
        let cands = if config.prune_threshold > 0.0 {
            candidate_gammas(&p.phi, y, variance, grid, config.prune_threshold, &model.params)?
        } else {
            grid.to_vec()
        };
        let first = ext.len();
        for s in cands {
            let prior = match p.prior.push(s, &model.prior) {
                Ok(a) => a,
                Err(Error::OffGrid(_)) => continue,
                Err(e) => return Err(e),
            };
            let phi = model.extend(&p.phi, s, y, kind)?;
            let log_q = phi.log_integral()? + prior.log_prior;
            if !log_q.is_finite_value() {
                continue;
            }
            ext.push(Extension {
                parent: j,
                gamma: s,
                phi,
                prior,
                log_q,
            });
        }
        parent_mass.push(log_sum_exp(ext[first..].iter().map(|e| e.log_q.as_f64())));
    }
    if ext.is_empty() {
        return Err(Error::NoFeasibleExtension(ps.step() + 1));
    }
    let n = ps.particles.len();
    let log_q: Vec<f64> = ext.iter().map(|e| e.log_q.as_f64()).collect();
    let ranked = || {
        let mut order: Vec<usize> = (0..ext.len()).collect();
        order.sort_by(|&a, &b| lex_better(&ext[a], &ext[b], &parents));
        order
    };
    let chosen: Vec<usize> = match config.selection {
        Selection::ExpandAll => (0..ext.len()).collect(),
        Selection::Multinomial => multinomial_draws(&log_q, n, rng),
        Selection::Greedy => ranked().into_iter().cycle().take(n).collect(),
        Selection::Hybrid => {
            let mut c = vec![ranked()[0]];
            c.extend(multinomial_draws(&log_q, n - 1, rng));
            c
        }
    };
    let particles: Vec<Particle<T>> = chosen
        .iter()
        .map(|&i| {
            let e = &ext[i];
            let mut gammas = parents[e.parent].gammas.clone();
            gammas.push(e.gamma);
            Particle {
                gammas,
                prior: e.prior.clone(),
                phi: e.phi.clone(),
                log_weight: e.log_q,
                log_marginal: T::lit(parent_mass[e.parent]),
            }
        })
        .collect();
    let mut next = ParticleSet {
        particles,
        c0: ps.c0,
        history: ps.history.clone(),
    };
    let distinct = next.distinct();
    let w = next.normalized_weights();
    let mut support: Vec<Beat> = distinct.iter().map(|&i| *next.particles[i].gammas.last().expect("non-empty")).collect();
    support.sort();
    support.dedup();
    let mut counts = vec![0usize; next.particles.len()];
    let index: HashMap<&[Beat], usize> = distinct.iter().map(|&i| (next.particles[i].gammas.as_slice(), i)).collect();
    for p in &next.particles {
        counts[index[p.gammas.as_slice()]] += 1;
    }
    // ESS of the per-particle weights, splitting each trajectory's mass over its copies
    let ess = {
        let s2: f64 = distinct.iter().map(|&i| w[i] * w[i] / counts[i] as f64).sum();
        1.0 / s2
    };
    let log_mass = T::lit(log_sum_exp(distinct.iter().map(|&i| next.particles[i].log_weight.as_f64())));
    next.history.push(StepRecord {
        support,
        ess,
        log_mass,
        distinct: distinct.len(),
        extensions: ext.len(),
    });
    Ok(next)
}

/// Posterior summary of the current slice.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterEstimate<T: Scalar> {
    pub tau_mean: T,
    pub tau_var: T,
    pub delta_mean: T,
    pub delta_var: T,
    pub log_evidence: T,
}

/// Mixture moments of `p(z_k | gamma^(i), y_{0:k})` under the normalized weights.
pub fn filter_estimate<T: Scalar>(ps: &ParticleSet<T>, model: &Model<T>) -> Result<FilterEstimate<T>> {
    let w = ps.normalized_weights();
    let mut comps = Vec::new();
    for (p, &wi) in ps.particles.iter().zip(&w) {
        if wi == 0.0 {
            continue;
        }
        let m = p.phi.aligned_to(&model.labels())?.to_moments()?;
        let (dm, dv) = model.params.period_moments(&m.mean, &m.cov);
        comps.push((T::lit(wi), m.mean[0], m.cov[(0, 0)], dm, dv));
    }
    let tau_mean = comps.iter().fold(T::zero(), |a, c| a + c.0 * c.1);
    let delta_mean = comps.iter().fold(T::zero(), |a, c| a + c.0 * c.3);
    let tau_var = comps
        .iter()
        .fold(T::zero(), |a, c| a + c.0 * (c.2 + (c.1 - tau_mean) * (c.1 - tau_mean)));
    let delta_var = comps
        .iter()
        .fold(T::zero(), |a, c| a + c.0 * (c.4 + (c.3 - delta_mean) * (c.3 - delta_mean)));
    let log_evidence = T::lit(log_sum_exp(
        ps.distinct().into_iter().map(|i| ps.particles[i].log_weight.as_f64()),
    ));
    Ok(FilterEstimate {
        tau_mean,
        tau_var,
        delta_mean,
        delta_var,
        log_evidence,
    })
}

/// Index of the heaviest particle; ties go to the lexicographically smallest trajectory.
pub fn best_particle<T: Scalar>(ps: &ParticleSet<T>) -> usize {
    let mut best = 0;
    for (i, p) in ps.particles.iter().enumerate().skip(1) {
        let b = &ps.particles[best];
        if p.log_weight > b.log_weight || (p.log_weight == b.log_weight && p.gammas < b.gammas) {
            best = i;
        }
    }
    best
}

/// Surviving trajectory with the highest `log p(gamma_{1:K}, y_{0:K})`.
pub fn map_extract<T: Scalar>(ps: &ParticleSet<T>) -> Score {
    let p = &ps.particles[best_particle(ps)];
    Score {
        gammas: p.gammas.clone(),
        c0: ps.c0,
    }
}

/// Online filter owning its random stream; feeding observations one at a time
/// gives the same result as feeding a longer sequence and stopping early.
#[derive(Clone, Debug)]
pub struct ParticleFilter<T: Scalar> {
    pub model: Model<T>,
    pub config: SmcConfig,
    pub c0: Beat,
    rng: ChaCha8Rng,
    set: Option<ParticleSet<T>>,
}

impl<T: Scalar> ParticleFilter<T> {
    pub fn new(model: Model<T>, config: SmcConfig, c0: Beat, seed: u64) -> Self {
        ParticleFilter {
            model,
            config,
            c0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            set: None,
        }
    }

    pub fn push(&mut self, y: T, kind: EventKind) -> Result<&ParticleSet<T>> {
        let next = match &self.set {
            None => rbpf_init(&self.model, y, kind, self.c0, self.config.particles)?,
            Some(ps) => {
                let grid = self.model.grid().to_vec();
                rbpf_step(ps, &self.model, y, kind, &grid, &self.config, &mut self.rng)?
            }
        };
        self.set = Some(next);
        Ok(self.set.as_ref().expect("just set"))
    }

    pub fn set(&self) -> Option<&ParticleSet<T>> {
        self.set.as_ref()
    }

    pub fn estimate(&self) -> Result<FilterEstimate<T>> {
        let ps = self.set.as_ref().ok_or(Error::InvalidParameter("no observations processed".into()))?;
        filter_estimate(ps, &self.model)
    }
}

/// Runs the filter over a whole sequence.
pub fn run_filter<T: Scalar>(
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    config: &SmcConfig,
    c0: Beat,
    seed: u64,
) -> Result<ParticleSet<T>> {
    onsets.validate()?;
    let mut pf = ParticleFilter::new(model.clone(), *config, c0, seed);
    for (k, &y) in onsets.times.iter().enumerate() {
        pf.push(y, onsets.kind(k))?;
    }
    Ok(pf.set.expect("non-empty sequence"))
}

/// Single-particle greedy filter (split-track) solution.
pub fn greedy_score<T: Scalar>(model: &Model<T>, onsets: &OnsetSequence<T>, c0: Beat) -> Result<Score> {
    let config = SmcConfig {
        particles: 1,
        selection: Selection::Greedy,
        prune_threshold: 0.0,
    };
    Ok(map_extract(&run_filter(model, onsets, &config, c0, 0)?))
}

/// Search mode on the reduced configuration space.
#[derive(Clone, Debug, PartialEq)]
pub enum RefineMode {
    IterativeImprovement,
    Annealing(Vec<f64>),
}

/// Improves a MAP candidate by searching only over `Gamma_1 x ... x Gamma_K`.
pub fn refine_reduced<T: Scalar>(
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    candidate: &Score,
    supports: &Supports,
    mode: &RefineMode,
    block: usize,
    seed: u64,
) -> Result<McmcResult<T>> {
    match mode {
        RefineMode::IterativeImprovement => mcmc::climb(model, onsets, supports, candidate, block, None),
        RefineMode::Annealing(schedule) => mcmc::run_sa(model, onsets, supports, schedule, candidate, block, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{beat, ScorePrior};
    use crate::tempo::TempoParams;

    fn model(grid: Vec<Beat>) -> Model<f64> {
        Model::new(
            TempoParams::random_walk(0.01f64.powi(2), 0.02f64.powi(2), 0.02f64.powi(2)),
            ScorePrior::binary(3, 1.0, grid).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_particle_init() {
        let m = model(vec![beat(1, 1)]);
        let ps = rbpf_init(&m, 0.3, EventKind::Onset, beat(0, 1), 1).unwrap();
        assert_eq!(ps.particles.len(), 1);
        assert_eq!(ps.normalized_weights(), vec![1.0]);
        let mo = ps.particles[0].phi.to_moments().unwrap();
        assert!((mo.mean[0] - 0.3).abs() < 1e-3);
        assert!(rbpf_init(&m, 0.3, EventKind::Onset, beat(0, 1), 0).is_err());
    }

    #[test]
    fn mixture_of_two_particles() {
        let m = model(vec![beat(1, 1)]);
        let mk = |mean: f64, g: Beat| {
            let phi = GaussianPotential::from_moments(
                m.labels(),
                &nalgebra::DVector::from_vec(vec![mean, 0.5]),
                &(nalgebra::DMatrix::identity(2, 2) * 0.01),
                0.0,
            )
            .unwrap();
            Particle {
                gammas: vec![g],
                prior: PriorAccumulator::start(beat(0, 1)),
                phi,
                log_weight: 0.0,
                log_marginal: 0.0,
            }
        };
        let ps = ParticleSet {
            particles: vec![mk(0.4, beat(1, 1)), mk(0.6, beat(1, 2))],
            c0: beat(0, 1),
            history: Vec::new(),
        };
        let e = filter_estimate(&ps, &m).unwrap();
        assert!((e.tau_mean - 0.5).abs() < 1e-12);
        assert!((e.tau_var - 0.02).abs() < 1e-12);
    }

    #[test]
    fn map_ties_prefer_smaller_trajectory() {
        let m = model(vec![beat(1, 1)]);
        let base = rbpf_init(&m, 0.0, EventKind::Onset, beat(0, 1), 2).unwrap();
        let mut ps = base.clone();
        ps.particles[0].gammas = vec![beat(1, 1)];
        ps.particles[1].gammas = vec![beat(1, 2)];
        assert_eq!(map_extract(&ps).gammas, vec![beat(1, 2)]);
    }
}
