//! Command implementations behind the `tempoquant` binary.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::eval::{default_methods, run_benchmark, smoothed_path, BenchmarkReport, Problem};
use crate::io::{
    parse_onsets, parse_score, write_onsets, write_score, MethodName, OnsetReader, RunConfig, TrajectoryRow, TRACE_HEADER,
    TRAJECTORY_HEADER,
};
use crate::lds::{em_fit, EmOptions, EmSequence, EmStructure};
use crate::mcmc::{self, default_schedule, full_supports, McmcResult, Reinit, TraceRow};
use crate::score::{Beat, Score};
use crate::smc::{self, best_particle, run_filter, ParticleFilter, Selection, SmcConfig};
use crate::tempo::{observations, simulate as simulate_onsets, Model, OnsetSequence, TempoParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FORMAT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } | Error::Io(_) | Error::OffGrid(_) | Error::NegativeInterval(_) | Error::DimensionMismatch { .. } => {
            EXIT_FORMAT
        }
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_CONFIG,
        Error::NoFeasibleExtension(_)
        | Error::InfeasibleBlock(_)
        | Error::SingularCovariance
        | Error::ImproperPotential(_)
        | Error::DegenerateStatistics(_)
        | Error::EmptyDataset => EXIT_INFEASIBLE,
        Error::UnknownLabel(_) | Error::IndexOutOfRange { .. } => 1,
    }
}

fn smc_config(cfg: &RunConfig) -> Result<SmcConfig> {
    let selection = match cfg.method {
        MethodName::Pf => Selection::Multinomial,
        MethodName::Gf => Selection::Greedy,
        MethodName::Hybrid => Selection::Hybrid,
        other => return Err(Error::Config(format!("method `{other:?}` is not an online filter"))),
    };
    if cfg.particles == 0 {
        return Err(Error::Config("`particles` must be positive".into()));
    }
    Ok(SmcConfig {
        particles: cfg.particles,
        selection,
        prune_threshold: cfg.prune_threshold,
    })
}

fn location(c0: Beat, gammas: &[Beat]) -> Beat {
    gammas.iter().fold(c0, |c, &g| c + g)
}

/// Online tracking: reads events one at a time and writes one trajectory row per
/// event as soon as it is processed. Row `k` depends only on events `0..=k`.
pub fn track<R: BufRead, W: Write>(cfg: &RunConfig, input: R, out: &mut W) -> Result<()> {
    let config = smc_config(cfg)?;
    let model = cfg.model()?;
    let mut filter = ParticleFilter::new(model, config, cfg.c0, cfg.seed);
    let mut reader = OnsetReader::new(input);
    let mut k = 0;
    let mut last = f64::NEG_INFINITY;
    while let Some(event) = reader.next_event()? {
        if event.time < last {
            return Err(Error::Parse {
                line: event.line,
                message: "onset times must be non-decreasing".into(),
            });
        }
        last = event.time;
        if k == 0 {
            writeln!(out, "{TRAJECTORY_HEADER}")?;
        }
        filter.push(event.time, event.kind.unwrap_or_default())?;
        let est = filter.estimate()?;
        let ps = filter.set().expect("pushed");
        let best = &ps.particles[best_particle(ps)];
        let row = TrajectoryRow {
            k,
            y: event.time,
            tau_mean: est.tau_mean,
            delta_mean: est.delta_mean,
            tau_var: est.tau_var,
            delta_var: est.delta_var,
            gamma: best.gammas.last().copied().unwrap_or(cfg.c0),
            c: location(ps.c0, &best.gammas),
        };
        writeln!(out, "{}", row.to_csv())?;
        out.flush()?;
        k += 1;
    }
    if k == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no onsets".into(),
        });
    }
    Ok(())
}

/// Offline result: MAP score, its log posterior, the smoothed trajectory and
/// the optimizer trace (empty for pure filtering and enumeration).
#[derive(Clone, Debug, PartialEq)]
pub struct Transcription {
    pub score: Score,
    pub log_posterior: f64,
    pub trajectory: Vec<TrajectoryRow>,
    pub trace: Vec<TraceRow>,
}

pub fn transcribe(cfg: &RunConfig, onsets: &OnsetSequence<f64>) -> Result<Transcription> {
    onsets.validate()?;
    let model = cfg.model()?;
    let k = onsets.len() - 1;
    let block = cfg.block.max(1);
    let sweeps = cfg.sweeps.max(1);
    let result: McmcResult<f64> = match cfg.method {
        MethodName::Pf | MethodName::Gf | MethodName::Hybrid => {
            let ps = run_filter(&model, onsets, &smc_config(cfg)?, cfg.c0, cfg.seed)?;
            let map = smc::map_extract(&ps);
            if cfg.refine {
                mcmc::climb(&model, onsets, &ps.supports(), &map, block, None)?
            } else {
                let lp = model.log_joint(&map, onsets)?;
                McmcResult {
                    best: map,
                    best_log_posterior: lp,
                    init_log_posterior: lp,
                    trace: Vec::new(),
                }
            }
        }
        MethodName::Gibbs | MethodName::Sa | MethodName::Ii => {
            let supports = full_supports(model.grid(), k);
            let init = smc::greedy_score(&model, onsets, cfg.c0)?;
            match cfg.method {
                MethodName::Gibbs => mcmc::run_sa(&model, onsets, &supports, &vec![1.0; sweeps], &init, block, cfg.seed)?,
                MethodName::Sa => {
                    let schedule = cfg.schedule.clone().unwrap_or_else(|| default_schedule(sweeps));
                    mcmc::run_sa(&model, onsets, &supports, &schedule, &init, block, cfg.seed)?
                }
                _ => mcmc::run_ii(
                    &model,
                    onsets,
                    &supports,
                    &init,
                    cfg.restarts.max(1),
                    Reinit::SampleFromProposal,
                    block,
                    cfg.seed,
                    None,
                )?,
            }
        }
        MethodName::Exact => {
            let supports = full_supports(model.grid(), k);
            let (best, lp) = crate::exact::exact_map(&model, onsets, &supports, cfg.c0)?;
            McmcResult {
                best,
                best_log_posterior: lp,
                init_log_posterior: lp,
                trace: Vec::new(),
            }
        }
    };
    let trajectory = trajectory_rows(&model, &result.best, onsets)?;
    Ok(Transcription {
        score: result.best,
        log_posterior: result.best_log_posterior,
        trajectory,
        trace: result.trace,
    })
}

/// Smoothed trajectory along a fixed score.
pub fn trajectory_rows(model: &Model<f64>, score: &Score, onsets: &OnsetSequence<f64>) -> Result<Vec<TrajectoryRow>> {
    let path = smoothed_path(model, score, onsets)?;
    let locs = score.locations();
    Ok(path
        .into_iter()
        .enumerate()
        .map(|(k, (tau_mean, delta_mean, tau_var, delta_var))| TrajectoryRow {
            k,
            y: onsets.times[k],
            tau_mean,
            delta_mean,
            tau_var,
            delta_var,
            gamma: if k == 0 { score.c0 } else { score.gammas[k - 1] },
            c: locs[k],
        })
        .collect())
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut s = format!("{TRAJECTORY_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for (i, t) in trace.iter().enumerate() {
        s.push_str(&format!("{},{},{:.9},{:.9}\n", i, t.rho, t.log_posterior, t.best_so_far));
    }
    s
}

/// Draws onsets for `score`; returns them with a latent-state CSV.
pub fn simulate(cfg: &RunConfig, score: &Score) -> Result<(OnsetSequence<f64>, String)> {
    let forced = cfg.forced_delta.as_ref().map(|f| {
        if f.len() == 1 {
            vec![f[0]; score.len()]
        } else {
            f.clone()
        }
    });
    let (onsets, states) = simulate_onsets(score, &cfg.params, cfg.noise, forced.as_deref(), None, cfg.seed)?;
    let mut csv = String::from("k,c_k,tau,delta,omega\n");
    for (k, (z, c)) in states.iter().zip(score.locations()).enumerate() {
        let delta = cfg.params.period(z);
        csv.push_str(&format!("{k},{c},{:.9},{:.9},{:.9}\n", z[0], delta, delta.log2()));
    }
    Ok((onsets, csv))
}

pub fn benchmark(cfg: &RunConfig) -> Result<BenchmarkReport> {
    let model = cfg.model()?;
    let methods = cfg.bench_methods.clone().unwrap_or_else(default_methods);
    run_benchmark(&model, &methods, &Problem::Clave(cfg.clave), cfg.trials, cfg.seed)
}

/// Maximum-likelihood noise (and, for `D >= 3`, the shared period block)
/// from performances with known scores.
pub fn fit(cfg: &RunConfig, data: &[(OnsetSequence<f64>, Score)]) -> Result<TempoParams<f64>> {
    let model = cfg.model()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let sequences = data
        .iter()
        .map(|(onsets, score)| {
            onsets.validate()?;
            if score.len() + 1 != onsets.len() {
                return Err(Error::DimensionMismatch {
                    what: "score intervals",
                    expected: onsets.len() - 1,
                    found: score.len(),
                });
            }
            Ok(EmSequence {
                y: observations(onsets),
                transitions: model.transitions(&score.gammas)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut init = model.lds_spec(&OnsetSequence::new(vec![0.0]));
    init.r = crate::lds::StepMatrices::Constant(DMatrix::from_element(1, 1, cfg.params.r));
    let d = model.dim();
    let structure = EmStructure::FreeBlock {
        start: 2,
        block: if d > 2 { cfg.params.free_block() } else { DMatrix::zeros(0, 0) },
    };
    let fitted = em_fit(&sequences, &init, structure, EmOptions::default())?;
    let mut params = cfg.params.clone();
    if let EmStructure::FreeBlock { block, .. } = &fitted.structure {
        if d > 2 {
            params = params.with_free_block(block);
        }
    }
    params.q = (0..d).map(|i| fitted.spec.q[(i, i)]).collect();
    params.r = fitted.spec.r.at(0)[(0, 0)];
    params.validate()?;
    Ok(params)
}

#[derive(Parser, Debug)]
#[command(name = "tempoquant", version, about = "Tempo tracking and rhythm quantization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// pf, gf, hybrid, gibbs, sa, ii or exact.
    #[arg(long, global = true)]
    pub method: Option<String>,
    #[arg(long, global = true)]
    pub particles: Option<usize>,
    #[arg(long, global = true)]
    pub sweeps: Option<usize>,
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    #[arg(long, global = true)]
    pub block: Option<usize>,
    /// Main output file (stdout when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Online tempo tracking; writes the filtered trajectory CSV.
    Track {
        input: Option<PathBuf>,
        /// Read onsets from standard input, emitting a row per onset.
        #[arg(long)]
        stdin: bool,
    },
    /// Offline MAP transcription; writes a score file.
    Transcribe {
        input: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Skip reduced-space refinement after filtering.
        #[arg(long)]
        no_refine: bool,
    },
    /// Draws a performance of a score file; writes an onset file.
    Simulate {
        score: PathBuf,
        #[arg(long)]
        latent: Option<PathBuf>,
    },
    /// Clave benchmark; prints a table and writes the report CSV.
    Benchmark {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Fits noise parameters from `ONSETS SCORE` file pairs; writes a params file.
    Fit {
        #[arg(required = true, num_args = 2..)]
        pairs: Vec<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn write_to(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let base = match self.command {
            Command::Benchmark { .. } => RunConfig::benchmark_default(),
            _ => RunConfig::default(),
        };
        let mut cfg = match &self.config {
            Some(p) => base.apply(&read(p).map_err(|e| Error::Config(e.to_string()))?)?,
            None => base,
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse()?;
        }
        if let Some(n) = self.particles {
            cfg.particles = n;
        }
        if let Some(n) = self.sweeps {
            cfg.sweeps = n;
        }
        if let Some(n) = self.restarts {
            cfg.restarts = n;
        }
        if let Some(n) = self.block {
            cfg.block = n;
        }
        match &self.command {
            Command::Transcribe { no_refine: true, .. } => cfg.refine = false,
            Command::Benchmark { trials: Some(t) } => cfg.trials = *t,
            _ => {}
        }
        Ok(cfg)
    }

    fn emit<W: Write>(&self, stdout: &mut W, text: &str) -> Result<()> {
        match &self.out {
            Some(p) => write_to(p, text),
            None => Ok(stdout.write_all(text.as_bytes())?),
        }
    }

    /// Runs the command, writing the main output to `--out` or `stdout`.
    pub fn execute<R: BufRead, W: Write>(&self, stdin: R, stdout: &mut W, stderr: &mut impl Write) -> Result<()> {
        let cfg = self.run_config()?;
        match &self.command {
            Command::Track { input, stdin: use_stdin } => {
                if matches!(cfg.method, MethodName::Gibbs | MethodName::Sa | MethodName::Ii | MethodName::Exact) {
                    return Err(Error::Config("tracking requires an online method (pf, gf or hybrid)".into()));
                }
                let mut sink: Box<dyn Write + '_> = match &self.out {
                    Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?),
                    None => Box::new(&mut *stdout),
                };
                match (input, use_stdin) {
                    (Some(path), false) => {
                        let f = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                        track(&cfg, BufReader::new(f), &mut sink)
                    }
                    (None, true) => track(&cfg, stdin, &mut sink),
                    _ => Err(Error::Config("give exactly one of an input file or --stdin".into())),
                }
            }
            Command::Transcribe { input, trajectory, trace, .. } => {
                let onsets = parse_onsets(&read(input)?)?;
                let t = transcribe(&cfg, &onsets)?;
                self.emit(stdout, &write_score(&t.score))?;
                if let Some(p) = trajectory {
                    write_to(p, &trajectory_csv(&t.trajectory))?;
                }
                if let Some(p) = trace {
                    write_to(p, &trace_csv(&t.trace))?;
                }
                writeln!(stderr, "log posterior {:.6}", t.log_posterior)?;
                Ok(())
            }
            Command::Simulate { score, latent } => {
                let score = parse_score(&read(score)?)?;
                let (onsets, csv) = simulate(&cfg, &score)?;
                self.emit(stdout, &write_onsets(&onsets))?;
                if let Some(p) = latent {
                    write_to(p, &csv)?;
                }
                Ok(())
            }
            Command::Benchmark { .. } => {
                let report = benchmark(&cfg)?;
                write!(stdout, "{}", report.to_table())?;
                match &self.out {
                    Some(p) => write_to(p, &report.to_csv()),
                    None => Ok(write!(stdout, "\n{}", report.to_csv())?),
                }
            }
            Command::Fit { pairs } => {
                if pairs.len() % 2 != 0 {
                    return Err(Error::Config("fit takes ONSETS SCORE pairs".into()));
                }
                let data = pairs
                    .chunks(2)
                    .map(|p| Ok((parse_onsets(&read(&p[0])?)?, parse_score(&read(&p[1])?)?)))
                    .collect::<Result<Vec<_>>>()?;
                let params = fit(&cfg, &data)?;
                self.emit(stdout, &RunConfig::params_text(&params))
            }
        }
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I, stdin: impl BufRead, stdout: &mut impl Write, stderr: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.execute(stdin, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
