//! Evaluation: edit distance, the clave benchmark generator and method comparison.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::exact::exact_map;
use crate::gaussian::potential_ops;
use crate::mcmc::{self, default_schedule, full_supports, Reinit};
use crate::score::{beat, uniform_grid, Beat, Score, ScorePrior};
use crate::smc::{self, run_filter, Selection, SmcConfig};
use crate::tempo::{beat_value, Model, OnsetSequence, TempoParams};

/// Levenshtein distance between interval sequences with unit costs.
///
/// With `exclude_zero`, positions where the reference interval is `0` are
/// removed from both sequences first (positions are matched by onset index).
pub fn edit_distance(reference: &Score, candidate: &Score, exclude_zero: bool) -> usize {
    let (a, b): (Vec<Beat>, Vec<Beat>) = if exclude_zero {
        let keep = |i: usize| !(i < reference.gammas.len() && reference.gammas[i] == Beat::from_integer(0));
        (
            reference.gammas.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, g)| *g).collect(),
            candidate.gammas.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, g)| *g).collect(),
        )
    } else {
        (reference.gammas.clone(), candidate.gammas.clone())
    };
    levenshtein(&a, &b)
}

pub fn levenshtein<X: PartialEq>(a: &[X], b: &[X]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Deterministic tempo curve `omega(c)` in log2 units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Modulation {
    None,
    Sinusoidal { amplitude: f64, period_beats: f64 },
}

impl Modulation {
    pub fn omega(&self, c: Beat) -> f64 {
        match *self {
            Modulation::None => 0.0,
            Modulation::Sinusoidal { amplitude, period_beats } => {
                amplitude * (2.0 * std::f64::consts::PI * beat_value::<f64>(c) / period_beats).sin()
            }
        }
    }
}

/// Inter-onset pattern of one four-beat son clave cycle.
pub fn clave_pattern() -> [Beat; 5] {
    [beat(3, 4), beat(3, 4), beat(1, 1), beat(1, 2), beat(1, 1)]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClaveConfig {
    pub n_onsets: usize,
    /// Seconds per beat at `omega = 0`.
    pub base_tempo: f64,
    pub modulation: Modulation,
    pub r: f64,
}

impl Default for ClaveConfig {
    fn default() -> Self {
        ClaveConfig {
            n_onsets: 11,
            base_tempo: 0.5,
            modulation: Modulation::Sinusoidal {
                amplitude: 0.3,
                period_beats: 32.0,
            },
            r: 0.025 * 0.025,
        }
    }
}

/// One generated benchmark instance.
#[derive(Clone, Debug, PartialEq)]
pub struct ClaveInstance {
    pub onsets: OnsetSequence<f64>,
    pub score: Score,
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
}

/// Repeated clave with tempo `delta_k = 2^omega(c_k) * base_tempo`.
pub fn gen_clave(config: &ClaveConfig, seed: u64) -> Result<ClaveInstance> {
    if config.n_onsets == 0 {
        return Err(Error::InvalidParameter("at least one onset is required".into()));
    }
    if !(config.base_tempo > 0.0) || !(config.r >= 0.0) {
        return Err(Error::InvalidParameter("tempo must be positive and noise non-negative".into()));
    }
    let pattern = clave_pattern();
    let gammas: Vec<Beat> = (0..config.n_onsets - 1).map(|k| pattern[k % pattern.len()]).collect();
    let score = Score::new(gammas, beat(0, 1))?;
    let locations = score.locations();
    let omega: Vec<f64> = locations.iter().map(|&c| config.modulation.omega(c)).collect();
    let delta: Vec<f64> = omega.iter().map(|w| w.exp2() * config.base_tempo).collect();
    let mut tau = vec![0.0];
    for (k, g) in score.gammas.iter().enumerate() {
        tau.push(tau[k] + beat_value::<f64>(*g) * delta[k]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.r.sqrt()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let times = tau.iter().map(|t| t + noise.sample(&mut rng)).collect();
    Ok(ClaveInstance {
        onsets: OnsetSequence::new(times),
        score,
        tau,
        delta,
        omega,
    })
}

/// The fixed benchmark grid `{0, 1/4, ..., 3}`.
pub fn clave_grid() -> Vec<Beat> {
    uniform_grid(beat(1, 4), beat(3, 1))
}

/// Random-walk model matched to the clave generator.
pub fn clave_model() -> Model<f64> {
    let params = TempoParams {
        prior_delta_mean: 0.5,
        prior_delta_var: 0.05 * 0.05,
        ..TempoParams::random_walk(0.01 * 0.01, 0.03 * 0.03, 0.025 * 0.025)
    };
    Model::new(params, ScorePrior::binary(2, 0.5, clave_grid()).expect("grid lies on quarters")).expect("valid parameters")
}

/// An inference method for the MAP score.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Pf { particles: usize, refine: bool },
    Gf { particles: usize },
    Hybrid { particles: usize, refine: bool },
    Gibbs { sweeps: usize, block: usize },
    Sa { sweeps: usize, block: usize },
    Ii { sweeps: usize, block: usize },
    Exact,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Pf { particles, refine } => format!("pf-n{particles}{}", if *refine { "+ii" } else { "" }),
            Method::Gf { particles } => format!("gf-n{particles}"),
            Method::Hybrid { particles, refine } => format!("hybrid-n{particles}{}", if *refine { "+ii" } else { "" }),
            Method::Gibbs { sweeps, block } => format!("gibbs-s{sweeps}-l{block}"),
            Method::Sa { sweeps, block } => format!("sa-s{sweeps}-l{block}"),
            Method::Ii { sweeps, block } => format!("ii-s{sweeps}-l{block}"),
            Method::Exact => "exact".to_string(),
        }
    }

    pub fn is_online(&self) -> bool {
        matches!(self, Method::Pf { .. } | Method::Gf { .. } | Method::Hybrid { .. })
    }
}

/// MAP score and its log posterior (up to the evidence).
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub score: Score,
    pub log_posterior: f64,
}

/// Runs `method` end to end on one sequence.
pub fn infer_map(model: &Model<f64>, onsets: &OnsetSequence<f64>, method: &Method, c0: Beat, seed: u64) -> Result<Inference> {
    onsets.validate()?;
    let k = onsets.len() - 1;
    let supports = full_supports(model.grid(), k);
    let filter = |particles: usize, selection: Selection, refine: bool| -> Result<Inference> {
        let config = SmcConfig {
            particles,
            selection,
            prune_threshold: 1e-8,
        };
        let ps = run_filter(model, onsets, &config, c0, seed)?;
        let map = smc::map_extract(&ps);
        if refine {
            let r = mcmc::climb(model, onsets, &ps.supports(), &map, 1, None)?;
            Ok(Inference {
                score: r.best,
                log_posterior: r.best_log_posterior,
            })
        } else {
            let lp = model.log_joint(&map, onsets)?;
            Ok(Inference { score: map, log_posterior: lp })
        }
    };
    let from = |r: mcmc::McmcResult<f64>| Inference {
        score: r.best,
        log_posterior: r.best_log_posterior,
    };
    match *method {
        Method::Pf { particles, refine } => filter(particles, Selection::Multinomial, refine),
        Method::Gf { particles } => filter(particles, Selection::Greedy, false),
        Method::Hybrid { particles, refine } => filter(particles, Selection::Hybrid, refine),
        Method::Gibbs { sweeps, block } => {
            let init = smc::greedy_score(model, onsets, c0)?;
            mcmc::run_sa(model, onsets, &supports, &vec![1.0; sweeps.max(1)], &init, block, seed).map(from)
        }
        Method::Sa { sweeps, block } => {
            let init = smc::greedy_score(model, onsets, c0)?;
            mcmc::run_sa(model, onsets, &supports, &default_schedule(sweeps.max(1)), &init, block, seed).map(from)
        }
        Method::Ii { sweeps, block } => {
            let init = smc::greedy_score(model, onsets, c0)?;
            mcmc::run_ii(model, onsets, &supports, &init, usize::MAX, Reinit::SampleFromProposal, block, seed, Some(sweeps.max(1)))
                .map(from)
        }
        Method::Exact => {
            let (score, lp) = exact_map(model, onsets, &supports, c0)?;
            Ok(Inference { score, log_posterior: lp })
        }
    }
}

/// Linear-interpolation quantile of unsorted data; `NaN` for empty input.
pub fn quantile(data: &[f64], q: f64) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(data: &[f64]) -> Self {
        Quartiles {
            q25: quantile(data, 0.25),
            median: quantile(data, 0.5),
            q75: quantile(data, 0.75),
        }
    }
}

/// Where benchmark sequences come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Clave(ClaveConfig),
    Fixed(Vec<(OnsetSequence<f64>, Score)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub edit_distance: usize,
    pub log_lik_diff: f64,
    pub score: Score,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub trials: usize,
    pub failures: usize,
    pub edit: Quartiles,
    pub log_lik_diff: Quartiles,
    pub potential_ops: u64,
    pub wall_seconds: f64,
    pub results: Vec<Option<TrialResult>>,
}

impl ReportRow {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.method == other.method
            && self.results == other.results
            && self.potential_ops == other.potential_ops
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str =
    "method,trials,failures,edit_median,edit_q25,edit_q75,loglik_diff_median,loglik_diff_q25,loglik_diff_q75,potential_ops,wall_seconds";

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{:.6}\n",
                r.method,
                r.trials,
                r.failures,
                r.edit.median,
                r.edit.q25,
                r.edit.q75,
                r.log_lik_diff.median,
                r.log_lik_diff.q25,
                r.log_lik_diff.q75,
                r.potential_ops,
                r.wall_seconds
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>6} {:>5} {:>22} {:>30} {:>12} {:>9}\n",
            "method", "trials", "fail", "edit (q25/med/q75)", "loglik diff (q25/med/q75)", "ops", "seconds"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<18} {:>6} {:>5} {:>22} {:>30} {:>12} {:>9.3}\n",
                r.method,
                r.trials,
                r.failures,
                format!("{}/{}/{}", r.edit.q25, r.edit.median, r.edit.q75),
                format!("{:.2}/{:.2}/{:.2}", r.log_lik_diff.q25, r.log_lik_diff.median, r.log_lik_diff.q75),
                r.potential_ops,
                r.wall_seconds
            ));
        }
        out
    }
}

fn trial_problem(problem: &Problem, t: usize, seed: u64) -> Result<(OnsetSequence<f64>, Score)> {
    match problem {
        Problem::Clave(cfg) => {
            let inst = gen_clave(cfg, seed)?;
            Ok((inst.onsets, inst.score))
        }
        Problem::Fixed(items) => {
            if items.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Ok(items[t % items.len()].clone())
        }
    }
}

/// Runs every method on `trials` problems; trial `t` uses seed `seed + t` for
/// both the problem and every method, so rows do not depend on method order.
pub fn run_benchmark(
    model: &Model<f64>,
    methods: &[Method],
    problem: &Problem,
    trials: usize,
    seed: u64,
) -> Result<BenchmarkReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    let instances: Vec<(OnsetSequence<f64>, Score, u64)> = (0..trials)
        .map(|t| {
            let s = seed.wrapping_add(t as u64);
            trial_problem(problem, t, s).map(|(o, sc)| (o, sc, s))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let start = Instant::now();
        let ops0 = potential_ops();
        let mut results = Vec::with_capacity(trials);
        for (onsets, truth, s) in &instances {
            let outcome = infer_map(model, onsets, method, truth.c0, *s).and_then(|inf| {
                let truth_lp = model.log_joint(truth, onsets)?;
                Ok(TrialResult {
                    edit_distance: edit_distance(truth, &inf.score, false),
                    log_lik_diff: inf.log_posterior - truth_lp,
                    score: inf.score,
                })
            });
            results.push(outcome.ok());
        }
        let ok: Vec<&TrialResult> = results.iter().flatten().collect();
        let edits: Vec<f64> = ok.iter().map(|r| r.edit_distance as f64).collect();
        let diffs: Vec<f64> = ok.iter().map(|r| r.log_lik_diff).collect();
        rows.push(ReportRow {
            method: method.label(),
            trials,
            failures: trials - ok.len(),
            edit: Quartiles::of(&edits),
            log_lik_diff: Quartiles::of(&diffs),
            potential_ops: potential_ops() - ops0,
            wall_seconds: start.elapsed().as_secs_f64(),
            results,
        });
    }
    Ok(BenchmarkReport { rows })
}

/// Default comparison matrix: Gibbs, SA and II at 10 and 50 sweeps with blocks of
/// 1 and 2, the greedy filter, and particle filters of several sizes.
pub fn default_methods() -> Vec<Method> {
    let mut m = Vec::new();
    for sweeps in [10, 50] {
        for block in [1, 2] {
            m.push(Method::Gibbs { sweeps, block });
            m.push(Method::Sa { sweeps, block });
            m.push(Method::Ii { sweeps, block });
        }
    }
    m.push(Method::Gf { particles: 1 });
    for particles in [5, 10, 50, 100] {
        m.push(Method::Pf { particles, refine: false });
    }
    m
}

/// Latent `(tau, period)` means along a score, used for trajectory output.
pub fn smoothed_path(model: &Model<f64>, score: &Score, onsets: &OnsetSequence<f64>) -> Result<Vec<(f64, f64, f64, f64)>> {
    let msgs = model.messages(&score.gammas, onsets)?;
    (0..onsets.len())
        .map(|k| {
            let m = msgs.smooth(k)?.to_moments()?;
            let (dm, dv) = model.params.period_moments(&m.mean, &m.cov);
            Ok((m.mean[0], dm, m.cov[(0, 0)], dv))
        })
        .collect()
}
