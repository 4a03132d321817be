//! Batch MAP search over score intervals with the continuous state integrated out.
//!
//! A sweep computes backward messages under the incoming intervals, then scans
//! blocks of `L` consecutive intervals forward, drawing each block from its full
//! conditional raised to the power `rho`. `rho = inf` picks the best block, which
//! is iterative improvement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaussian::GaussianPotential;
use crate::lds;
use crate::scalar::{log_sum_exp, Scalar};
use crate::score::{conditional_log_prior, log_prior_score, Beat, Score};
use crate::smc::{self, run_filter, Selection, SmcConfig};
use crate::tempo::{observations, Model, OnsetSequence};

/// Allowed intervals for each slice, `Gamma_1..Gamma_K`.
pub type Supports = Vec<Vec<Beat>>;

pub fn full_supports(grid: &[Beat], k: usize) -> Supports {
    vec![grid.to_vec(); k]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepState<T: Scalar> {
    pub score: Score,
    /// `phi_k = p(y_{0:k}, z_k | gamma_{1:k})` for `k = 0..K`.
    pub forward: Vec<GaussianPotential<T>>,
    /// `beta_k = p(y_{k+1:K} | z_k, gamma_{k+1:K})` from the last backward pass.
    pub beta: Vec<GaussianPotential<T>>,
    /// `log p(gamma_{1:K}, y_{0:K})`.
    pub log_posterior: T,
    pub rho: f64,
}

fn forward_cache<T: Scalar>(model: &Model<T>, onsets: &OnsetSequence<T>, gammas: &[Beat]) -> Result<Vec<GaussianPotential<T>>> {
    let mut out = Vec::with_capacity(onsets.len());
    out.push(model.first(onsets.times[0], onsets.kind(0)));
    for (k, &g) in gammas.iter().enumerate() {
        let next = model.extend(&out[k], g, onsets.times[k + 1], onsets.kind(k + 1))?;
        out.push(next);
    }
    Ok(out)
}

fn backward_cache<T: Scalar>(model: &Model<T>, onsets: &OnsetSequence<T>, gammas: &[Beat]) -> Result<Vec<GaussianPotential<T>>> {
    let b = lds::backward_pass(&model.lds_spec(onsets), &model.transitions(gammas)?, &observations(onsets))?;
    Ok(b.beta)
}

impl<T: Scalar> SweepState<T> {
    pub fn new(model: &Model<T>, onsets: &OnsetSequence<T>, score: Score) -> Result<Self> {
        onsets.validate()?;
        if score.len() + 1 != onsets.len() {
            return Err(Error::DimensionMismatch {
                what: "score intervals",
                expected: onsets.len() - 1,
                found: score.len(),
            });
        }
        let forward = forward_cache(model, onsets, &score.gammas)?;
        let beta = backward_cache(model, onsets, &score.gammas)?;
        let log_posterior = forward.last().expect("non-empty").log_integral()? + log_prior_score::<T>(&score, &model.prior)?;
        Ok(SweepState {
            score,
            forward,
            beta,
            log_posterior,
            rho: 1.0,
        })
    }

    fn refresh_beta(&mut self, model: &Model<T>, onsets: &OnsetSequence<T>) -> Result<()> {
        self.beta = backward_cache(model, onsets, &self.score.gammas)?;
        Ok(())
    }
}

/// Unnormalized block conditional over every assignment in the product of supports.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockProposal<T: Scalar> {
    pub start: usize,
    pub assignments: Vec<Vec<Beat>>,
    /// `log p(gamma_block = a, gamma_rest, y_{0:K})`; `-inf` for impossible assignments.
    pub log_q: Vec<T>,
}

impl<T: Scalar> BlockProposal<T> {
    /// Normalized log probabilities at inverse temperature `rho` (finite).
    pub fn normalized(&self, rho: f64) -> Vec<f64> {
        let scaled: Vec<f64> = self.log_q.iter().map(|l| l.as_f64() * rho).collect();
        let z = log_sum_exp(scaled.iter().copied());
        scaled.into_iter().map(|s| s - z).collect()
    }
}

/// Conditional of intervals `start..start+len` (0-based) given the rest.
///
/// Uses the cached forward potential at slice `start` and the backward message
/// at slice `start + len`.
pub fn slice_proposal<T: Scalar>(
    state: &SweepState<T>,
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    supports: &Supports,
    start: usize,
    len: usize,
) -> Result<BlockProposal<T>> {
    let k = state.score.len();
    if len == 0 || start + len > k {
        return Err(Error::IndexOutOfRange { index: start + len, len: k });
    }
    if supports.len() != k {
        return Err(Error::DimensionMismatch {
            what: "supports",
            expected: k,
            found: supports.len(),
        });
    }
    let mut out = BlockProposal {
        start,
        assignments: Vec::new(),
        log_q: Vec::new(),
    };
    let beta = &state.beta[start + len];
    let mut assign = Vec::with_capacity(len);
    descend(state, model, onsets, supports, start, len, &state.forward[start], beta, &mut assign, &mut out)?;
    if out.log_q.iter().all(|l| !l.is_finite_value()) {
        return Err(Error::InfeasibleBlock(start));
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn descend<T: Scalar>(
    state: &SweepState<T>,
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    supports: &Supports,
    start: usize,
    len: usize,
    phi: &GaussianPotential<T>,
    beta: &GaussianPotential<T>,
    assign: &mut Vec<Beat>,
    out: &mut BlockProposal<T>,
) -> Result<()> {
    let level = assign.len();
    if level == len {
        let prior = match conditional_log_prior::<T>(&state.score, start..start + len, assign, &model.prior) {
            Ok(p) => p,
            Err(Error::OffGrid(_)) => T::neg_infinity(),
            Err(e) => return Err(e),
        };
        let lq = if prior.is_finite_value() {
            phi.multiply(beta).log_integral()? + prior
        } else {
            prior
        };
        out.assignments.push(assign.clone());
        out.log_q.push(lq);
        return Ok(());
    }
    let slot = start + level;
    for &s in &supports[slot] {
        let next = model.extend(phi, s, onsets.times[slot + 1], onsets.kind(slot + 1))?;
        assign.push(s);
        descend(state, model, onsets, supports, start, len, &next, beta, assign, out)?;
        assign.pop();
    }
    Ok(())
}

fn choose<T: Scalar, R: Rng>(p: &BlockProposal<T>, current: &[Beat], rho: f64, rng: &mut R) -> usize {
    if rho.is_infinite() {
        let best = p
            .log_q
            .iter()
            .copied()
            .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
        if let Some(i) = p.assignments.iter().position(|a| a.as_slice() == current) {
            if p.log_q[i] == best {
                return i;
            }
        }
        return p.log_q.iter().position(|&l| l == best).expect("a maximum exists");
    }
    let lp = p.normalized(rho);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    lp.iter().rposition(|l| l.is_finite()).expect("a feasible assignment exists")
}

/// One backward pass and one forward block scan at inverse temperature `rho`.
pub fn gibbs_sweep<T: Scalar, R: Rng>(
    state: &SweepState<T>,
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    supports: &Supports,
    block: usize,
    rho: f64,
    rng: &mut R,
) -> Result<SweepState<T>> {
    if block == 0 {
        return Err(Error::InvalidParameter("block length must be at least 1".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter("inverse temperature must be positive".into()));
    }
    let mut s = state.clone();
    s.rho = rho;
    s.refresh_beta(model, onsets)?;
    let k = s.score.len();
    let mut start = 0;
    while start < k {
        let len = block.min(k - start);
        let p = slice_proposal(&s, model, onsets, supports, start, len)?;
        let i = choose(&p, &s.score.gammas[start..start + len], rho, rng);
        for (off, &g) in p.assignments[i].iter().enumerate() {
            s.score.gammas[start + off] = g;
        }
        for slot in start..start + len {
            s.forward[slot + 1] = model.extend(&s.forward[slot], s.score.gammas[slot], onsets.times[slot + 1], onsets.kind(slot + 1))?;
        }
        start += len;
    }
    s.log_posterior = s.forward[k].log_integral()? + log_prior_score::<T>(&s.score, &model.prior)?;
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub restart: usize,
    pub sweep: usize,
    pub rho: f64,
    pub log_posterior: f64,
    pub best_so_far: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McmcResult<T: Scalar> {
    pub best: Score,
    pub best_log_posterior: T,
    pub init_log_posterior: T,
    pub trace: Vec<TraceRow>,
}

/// Linear schedule from 0.1 to 10 over the first two thirds of the sweeps, then `inf`.
///
/// For 50 sweeps this is 33 linear steps followed by 17 greedy sweeps.
pub fn default_schedule(sweeps: usize) -> Vec<f64> {
    let linear = ((sweeps as f64) * 33.0 / 50.0).round() as usize;
    (0..sweeps)
        .map(|i| {
            if i >= linear {
                f64::INFINITY
            } else if linear == 1 {
                0.1
            } else {
                0.1 + (10.0 - 0.1) * i as f64 / (linear - 1) as f64
            }
        })
        .collect()
}

/// How a search run is started.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    GreedyFilter,
    /// A one-particle filter that samples each interval from its optimal proposal.
    Random,
    Given(Score),
}

pub fn initial_score<T: Scalar>(model: &Model<T>, onsets: &OnsetSequence<T>, init: &Init, c0: Beat, seed: u64) -> Result<Score> {
    match init {
        Init::GreedyFilter => smc::greedy_score(model, onsets, c0),
        Init::Random => {
            let config = SmcConfig {
                particles: 1,
                selection: Selection::Multinomial,
                prune_threshold: 0.0,
            };
            Ok(smc::map_extract(&run_filter(model, onsets, &config, c0, seed)?))
        }
        Init::Given(s) => Ok(s.clone()),
    }
}

/// Simulated annealing; returns the best configuration visited.
pub fn run_sa<T: Scalar>(
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    supports: &Supports,
    schedule: &[f64],
    init: &Score,
    block: usize,
    seed: u64,
) -> Result<McmcResult<T>> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("annealing schedule is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = SweepState::new(model, onsets, init.clone())?;
    let mut result = McmcResult {
        best: state.score.clone(),
        best_log_posterior: state.log_posterior,
        init_log_posterior: state.log_posterior,
        trace: Vec::with_capacity(schedule.len()),
    };
    for (i, &rho) in schedule.iter().enumerate() {
        state = gibbs_sweep(&state, model, onsets, supports, block, rho, &mut rng)?;
        if state.log_posterior > result.best_log_posterior {
            result.best = state.score.clone();
            result.best_log_posterior = state.log_posterior;
        }
        result.trace.push(TraceRow {
            restart: 0,
            sweep: i + 1,
            rho,
            log_posterior: state.log_posterior.as_f64(),
            best_so_far: result.best_log_posterior.as_f64(),
        });
    }
    Ok(result)
}

/// Greedy sweeps from `init` until a full sweep changes nothing (or the budget runs out).
pub fn climb<T: Scalar>(
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    supports: &Supports,
    init: &Score,
    block: usize,
    max_sweeps: Option<usize>,
) -> Result<McmcResult<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut state = SweepState::new(model, onsets, init.clone())?;
    let init_lp = state.log_posterior;
    let mut trace = Vec::new();
    let mut sweep = 0;
    loop {
        if max_sweeps.is_some_and(|m| sweep >= m) {
            break;
        }
        let next = gibbs_sweep(&state, model, onsets, supports, block, f64::INFINITY, &mut rng)?;
        sweep += 1;
        let changed = next.score != state.score;
        state = next;
        trace.push(TraceRow {
            restart: 0,
            sweep,
            rho: f64::INFINITY,
            log_posterior: state.log_posterior.as_f64(),
            best_so_far: state.log_posterior.as_f64(),
        });
        if !changed {
            break;
        }
    }
    Ok(McmcResult {
        best: state.score,
        best_log_posterior: state.log_posterior,
        init_log_posterior: init_lp,
        trace,
    })
}

/// How restarts after the first are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reinit {
    GreedyFilter,
    SampleFromProposal,
}

/// Iterative improvement with restarts; returns the best local maximum.
///
/// The first restart starts from `init`. `sweep_budget` caps the total number of
/// sweeps across restarts.
#[allow(clippy::too_many_arguments)]
pub fn run_ii<T: Scalar>(
    model: &Model<T>,
    onsets: &OnsetSequence<T>,
    supports: &Supports,
    init: &Score,
    restarts: usize,
    reinit: Reinit,
    block: usize,
    seed: u64,
    sweep_budget: Option<usize>,
) -> Result<McmcResult<T>> {
    if restarts == 0 {
        return Err(Error::InvalidParameter("at least one restart is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result: Option<McmcResult<T>> = None;
    let mut used = 0usize;
    for r in 0..restarts {
        let remaining = sweep_budget.map(|b| b.saturating_sub(used));
        if remaining == Some(0) {
            break;
        }
        let start = if r == 0 {
            init.clone()
        } else {
            let s = rng.gen::<u64>();
            match reinit {
                Reinit::GreedyFilter => initial_score(model, onsets, &Init::GreedyFilter, init.c0, s)?,
                Reinit::SampleFromProposal => initial_score(model, onsets, &Init::Random, init.c0, s)?,
            }
        };
        let mut run = climb(model, onsets, supports, &start, block, remaining)?;
        used += run.trace.len();
        let prev_best = result.as_ref().map(|b| b.best_log_posterior);
        for row in &mut run.trace {
            row.restart = r;
            if let Some(pb) = prev_best {
                row.best_so_far = row.best_so_far.max(pb.as_f64());
            }
        }
        result = Some(match result {
            None => run,
            Some(mut best) => {
                best.trace.extend(run.trace);
                if run.best_log_posterior > best.best_log_posterior {
                    best.best = run.best;
                    best.best_log_posterior = run.best_log_posterior;
                }
                best
            }
        });
    }
    Ok(result.expect("at least one restart ran"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_schedule() {
        let s = default_schedule(50);
        assert_eq!(s.len(), 50);
        assert!((s[0] - 0.1).abs() < 1e-12);
        assert!((s[32] - 10.0).abs() < 1e-12);
        assert!(s[33..].iter().all(|r| r.is_infinite()));
        for w in s[..33].windows(2) {
            assert!(((w[1] - w[0]) - 9.9 / 32.0).abs() < 1e-12);
        }
    }
}
