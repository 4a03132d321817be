//! Text formats: onset lists, score files, trajectory CSV and `key = value` configs.

use std::io::BufRead;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{clave_model, ClaveConfig, Method, Modulation};
use crate::score::{uniform_grid, Beat, PriorMode, Score, ScorePrior, SubdivisionSchema, TablePrior};
use crate::tempo::{EventKind, Model, NoiseMode, OnsetSequence, TempoParams};

pub const ONSETS_HEADER: &str = "#onsets v1";
pub const SCORE_HEADER: &str = "#score v1";
pub const TRAJECTORY_HEADER: &str = "k,y_k,tau_mean,delta_mean,omega_mean,tau_var,delta_var,gamma_map,c_map";
pub const TRACE_HEADER: &str = "sweep,rho,log_posterior,best_so_far";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn parse_beat(s: &str) -> std::result::Result<Beat, String> {
    Beat::from_str(s.trim()).map_err(|_| format!("`{}` is not an exact rational", s.trim()))
}

/// One event parsed from an onset file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub line: usize,
    pub time: f64,
    pub kind: Option<EventKind>,
}

/// Streams events from an onset file, checking the header first.
pub struct OnsetReader<R: BufRead> {
    input: R,
    line: usize,
    header_seen: bool,
}

impl<R: BufRead> OnsetReader<R> {
    pub fn new(input: R) -> Self {
        OnsetReader {
            input,
            line: 0,
            header_seen: false,
        }
    }

    pub fn next_event(&mut self) -> Result<Option<Event>> {
        let mut buf = String::new();
        loop {
            buf.clear();
            if self.input.read_line(&mut buf)? == 0 {
                if !self.header_seen {
                    return Err(parse_err(self.line.max(1), "missing `#onsets v1` header"));
                }
                return Ok(None);
            }
            self.line += 1;
            let text = buf.trim();
            if text.is_empty() {
                continue;
            }
            if !self.header_seen {
                if text != ONSETS_HEADER {
                    return Err(parse_err(self.line, format!("expected `{ONSETS_HEADER}` header")));
                }
                self.header_seen = true;
                continue;
            }
            if text.starts_with('#') {
                continue;
            }
            return parse_event(text, self.line).map(Some);
        }
    }
}

fn parse_event(text: &str, line: usize) -> Result<Event> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.is_empty() || fields.len() > 2 {
        return Err(parse_err(line, "expected `time [u]`"));
    }
    let time: f64 = fields[0]
        .parse()
        .map_err(|_| parse_err(line, format!("`{}` is not a number", fields[0])))?;
    if !time.is_finite() {
        return Err(parse_err(line, "onset time must be finite"));
    }
    let kind = match fields.get(1) {
        None => None,
        Some(&"1") => Some(EventKind::Onset),
        Some(&"0") => Some(EventKind::Offset),
        Some(other) => return Err(parse_err(line, format!("indicator `{other}` must be 0 or 1"))),
    };
    Ok(Event { line, time, kind })
}

pub fn parse_onsets(text: &str) -> Result<OnsetSequence<f64>> {
    let mut reader = OnsetReader::new(text.as_bytes());
    let mut times = Vec::new();
    let mut kinds = Vec::new();
    let mut any_kind = false;
    while let Some(e) = reader.next_event()? {
        times.push(e.time);
        any_kind |= e.kind.is_some();
        kinds.push(e.kind.unwrap_or(EventKind::Onset));
    }
    if times.is_empty() {
        return Err(parse_err(reader.line.max(1), "no onsets"));
    }
    if any_kind {
        OnsetSequence::with_kinds(times, kinds)
    } else {
        Ok(OnsetSequence::new(times))
    }
}

pub fn write_onsets(seq: &OnsetSequence<f64>) -> String {
    let mut out = format!("{ONSETS_HEADER}\n");
    for (k, t) in seq.times.iter().enumerate() {
        match &seq.kinds {
            None => out.push_str(&format!("{t:.9}\n")),
            Some(_) => {
                let u = if seq.kind(k) == EventKind::Offset { 0 } else { 1 };
                out.push_str(&format!("{t:.9} {u}\n"));
            }
        }
    }
    out
}

/// Score file: one `c_k gamma_k` line per onset. The first line holds `c_0 c_0`.
pub fn parse_score(text: &str) -> Result<Score> {
    let mut header = false;
    let mut rows: Vec<(usize, Beat, Beat)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() {
            continue;
        }
        if !header {
            if t != SCORE_HEADER {
                return Err(parse_err(line, format!("expected `{SCORE_HEADER}` header")));
            }
            header = true;
            continue;
        }
        if t.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        if f.len() != 2 {
            return Err(parse_err(line, "expected `c_k gamma_k`"));
        }
        let c = parse_beat(f[0]).map_err(|m| parse_err(line, m))?;
        let g = parse_beat(f[1]).map_err(|m| parse_err(line, m))?;
        rows.push((line, c, g));
    }
    if !header {
        return Err(parse_err(1, format!("missing `{SCORE_HEADER}` header")));
    }
    let Some(&(line0, c0, g0)) = rows.first() else {
        return Err(parse_err(1, "no onsets"));
    };
    if g0 != c0 {
        return Err(parse_err(line0, "first line must repeat c_0 as its interval"));
    }
    let mut gammas = Vec::with_capacity(rows.len() - 1);
    let mut c = c0;
    for &(line, ck, gk) in &rows[1..] {
        if ck != c + gk {
            return Err(parse_err(line, format!("location {ck} does not equal {c} + {gk}")));
        }
        gammas.push(gk);
        c = ck;
    }
    Score::new(gammas, c0).map_err(|e| parse_err(line0, e.to_string()))
}

pub fn write_score(score: &Score) -> String {
    let mut out = format!("{SCORE_HEADER}\n{} {}\n", score.c0, score.c0);
    let locs = score.locations();
    for (g, c) in score.gammas.iter().zip(&locs[1..]) {
        out.push_str(&format!("{c} {g}\n"));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub k: usize,
    pub y: f64,
    pub tau_mean: f64,
    pub delta_mean: f64,
    pub tau_var: f64,
    pub delta_var: f64,
    pub gamma: Beat,
    pub c: Beat,
}

impl TrajectoryRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9e},{:.9e},{},{}",
            self.k,
            self.y,
            self.tau_mean,
            self.delta_mean,
            self.delta_mean.log2(),
            self.tau_var,
            self.delta_var,
            self.gamma,
            self.c
        )
    }
}

/// Prior family selected in a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    Depth,
    Table,
}

/// Inference method named in a config.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodName {
    Pf,
    Gf,
    Hybrid,
    Gibbs,
    Sa,
    Ii,
    Exact,
}

impl FromStr for MethodName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "pf" => MethodName::Pf,
            "gf" => MethodName::Gf,
            "hybrid" => MethodName::Hybrid,
            "gibbs" => MethodName::Gibbs,
            "sa" => MethodName::Sa,
            "ii" => MethodName::Ii,
            "exact" => MethodName::Exact,
            other => return Err(Error::Config(format!("unknown method `{other}`"))),
        })
    }
}

impl MethodName {
    pub fn is_online(self) -> bool {
        matches!(self, MethodName::Pf | MethodName::Gf | MethodName::Hybrid)
    }
}

/// Every setting of a run; each field has a default.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub params: TempoParams<f64>,
    pub prior: PriorKind,
    pub lambda: f64,
    pub schemas: Vec<(Vec<u32>, f64)>,
    pub table: Vec<(Beat, f64)>,
    pub table_floor: f64,
    pub table_resolution: i64,
    pub grid: Option<Vec<Beat>>,
    pub c0: Beat,
    pub method: MethodName,
    pub particles: usize,
    pub sweeps: usize,
    pub restarts: usize,
    pub block: usize,
    pub refine: bool,
    pub prune_threshold: f64,
    pub schedule: Option<Vec<f64>>,
    pub seed: u64,
    pub noise: NoiseMode,
    pub forced_delta: Option<Vec<f64>>,
    pub trials: usize,
    pub clave: ClaveConfig,
    pub bench_methods: Option<Vec<Method>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let table = TablePrior::reference();
        RunConfig {
            params: TempoParams::reference(),
            prior: PriorKind::Table,
            lambda: 1.0,
            schemas: vec![(vec![2, 2], 1.0)],
            table: table.entries().to_vec(),
            table_floor: table.floor(),
            table_resolution: table.resolution(),
            grid: None,
            c0: Beat::from_integer(0),
            method: MethodName::Pf,
            particles: 100,
            sweeps: 50,
            restarts: 10,
            block: 1,
            refine: true,
            prune_threshold: 1e-8,
            schedule: None,
            seed: 0,
            noise: NoiseMode::Full,
            forced_delta: None,
            trials: 20,
            clave: ClaveConfig::default(),
            bench_methods: None,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: `{}` is not a number", v.trim())))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: `{}` is not a non-negative integer", v.trim())))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_f64(key, x)).collect()
}

fn parse_beat_cfg(key: &str, v: &str) -> Result<Beat> {
    parse_beat(v).map_err(|m| Error::Config(format!("`{key}`: {m}")))
}

/// `start:step:end` or a comma-separated list.
pub fn parse_grid(v: &str) -> Result<Vec<Beat>> {
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() == 3 {
        let start = parse_beat_cfg("grid", parts[0])?;
        let step = parse_beat_cfg("grid", parts[1])?;
        let end = parse_beat_cfg("grid", parts[2])?;
        if step <= Beat::from_integer(0) {
            return Err(Error::Config("`grid`: step must be positive".into()));
        }
        return Ok(uniform_grid(step, end).into_iter().filter(|&g| g >= start).collect());
    }
    v.split(',').map(|x| parse_beat_cfg("grid", x)).collect()
}

fn parse_schemas(v: &str) -> Result<Vec<(Vec<u32>, f64)>> {
    v.split('|')
        .map(|part| {
            let (divs, weight) = match part.split_once('@') {
                Some((d, w)) => (d, parse_f64("schemas", w)?),
                None => (part, 1.0),
            };
            let divisors = divs
                .split(',')
                .map(|d| {
                    d.trim()
                        .parse::<u32>()
                        .map_err(|_| Error::Config(format!("`schemas`: `{}` is not a divisor", d.trim())))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((divisors, weight))
        })
        .collect()
}

fn parse_table(v: &str) -> Result<Vec<(Beat, f64)>> {
    v.split(',')
        .map(|e| {
            let (k, p) = e
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("`table`: entry `{}` needs `fraction:probability`", e.trim())))?;
            Ok((parse_beat_cfg("table", k)?, parse_f64("table", p)?))
        })
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => Err(Error::Config(format!("`{key}`: `{other}` is not a boolean"))),
    }
}

impl RunConfig {
    /// Settings for the clave benchmark: the matched random-walk model and a quarter-beat grid.
    pub fn benchmark_default() -> Self {
        let m = clave_model();
        RunConfig {
            params: m.params.clone(),
            prior: PriorKind::Depth,
            lambda: 0.5,
            schemas: vec![(vec![2, 2], 1.0)],
            grid: Some(m.grid().to_vec()),
            ..RunConfig::default()
        }
    }

    /// Applies `key = value` lines on top of `self`. Unknown keys are errors.
    pub fn apply(mut self, text: &str) -> Result<Self> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(self)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.params;
        match key {
            "dim" => {
                p.dim = parse_usize(key, v)?;
                if p.dim < 2 {
                    return Err(Error::Config("`dim` must be at least 2".into()));
                }
                let b = p.dim - 2;
                if p.a_coeffs.len() != b * b {
                    p.a_coeffs = vec![0.0; b * b];
                }
                if p.q.len() != p.dim {
                    p.q.resize(p.dim, *p.q.last().unwrap_or(&1e-4));
                }
            }
            "params" => {
                let text = std::fs::read_to_string(v).map_err(|e| Error::Config(format!("`params`: {v}: {e}")))?;
                let mut loaded = RunConfig {
                    params: self.params.clone(),
                    ..RunConfig::default()
                }
                .apply(&text)?;
                self.params = std::mem::replace(&mut loaded.params, TempoParams::reference());
            }
            "a" => p.a_coeffs = parse_list(key, v)?,
            "q" => p.q = parse_list(key, v)?,
            "r" => p.r = parse_f64(key, v)?,
            "r_off" => p.r_off = parse_f64(key, v)?,
            "r_outlier" => p.r_outlier = parse_f64(key, v)?,
            "prior_delta_mean" => p.prior_delta_mean = parse_f64(key, v)?,
            "prior_delta_var" => p.prior_delta_var = parse_f64(key, v)?,
            "prior_tau_var" => p.prior_tau_var = parse_f64(key, v)?,
            "prior" => {
                self.prior = match v {
                    "depth" => PriorKind::Depth,
                    "table" => PriorKind::Table,
                    other => return Err(Error::Config(format!("`prior`: unknown family `{other}`"))),
                }
            }
            "lambda" => self.lambda = parse_f64(key, v)?,
            "schemas" => self.schemas = parse_schemas(v)?,
            "table" => self.table = parse_table(v)?,
            "table_floor" => self.table_floor = parse_f64(key, v)?,
            "table_resolution" => {
                self.table_resolution = v
                    .parse()
                    .map_err(|_| Error::Config(format!("`table_resolution`: `{v}` is not an integer")))?
            }
            "grid" => self.grid = Some(parse_grid(v)?),
            "c0" => self.c0 = parse_beat_cfg(key, v)?,
            "method" => self.method = v.parse()?,
            "particles" => self.particles = parse_usize(key, v)?,
            "sweeps" => self.sweeps = parse_usize(key, v)?,
            "restarts" => self.restarts = parse_usize(key, v)?,
            "block" => self.block = parse_usize(key, v)?,
            "refine" => self.refine = parse_bool(key, v)?,
            "prune_threshold" => self.prune_threshold = parse_f64(key, v)?,
            "schedule" => {
                self.schedule = if v == "default" {
                    None
                } else {
                    Some(
                        v.split(',')
                            .map(|x| if x.trim() == "inf" { Ok(f64::INFINITY) } else { parse_f64(key, x) })
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "seed" => {
                self.seed = v
                    .parse()
                    .map_err(|_| Error::Config(format!("`seed`: `{v}` is not an unsigned integer")))?
            }
            "noise" => {
                self.noise = match v {
                    "full" => NoiseMode::Full,
                    "zeta_tau_zero" => NoiseMode::ZetaTauZero,
                    "noiseless" => NoiseMode::Noiseless,
                    other => return Err(Error::Config(format!("`noise`: unknown mode `{other}`"))),
                }
            }
            "forced_delta" => self.forced_delta = Some(parse_list(key, v)?),
            "trials" => self.trials = parse_usize(key, v)?,
            "clave_onsets" => self.clave.n_onsets = parse_usize(key, v)?,
            "clave_tempo" => self.clave.base_tempo = parse_f64(key, v)?,
            "clave_r" => self.clave.r = parse_f64(key, v)?,
            "clave_amplitude" | "clave_period" => {
                let x = parse_f64(key, v)?;
                let (mut amplitude, mut period_beats) = match self.clave.modulation {
                    Modulation::Sinusoidal { amplitude, period_beats } => (amplitude, period_beats),
                    Modulation::None => (0.0, 32.0),
                };
                if key == "clave_amplitude" {
                    amplitude = x;
                } else {
                    period_beats = x;
                }
                self.clave.modulation = if amplitude == 0.0 {
                    Modulation::None
                } else {
                    Modulation::Sinusoidal { amplitude, period_beats }
                };
            }
            "bench_methods" => {
                self.bench_methods = Some(v.split(',').map(|m| Method::from_str(m.trim())).collect::<Result<_>>()?)
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn score_prior(&self) -> Result<ScorePrior> {
        let mode = match self.prior {
            PriorKind::Depth => PriorMode::Depth(
                self.schemas
                    .iter()
                    .map(|(d, w)| Ok((SubdivisionSchema::new(d.clone(), self.lambda)?, *w)))
                    .collect::<Result<_>>()?,
            ),
            PriorKind::Table => PriorMode::Table(TablePrior::new(self.table.clone(), self.table_floor, self.table_resolution)?),
        };
        let grid = match &self.grid {
            Some(g) => g.clone(),
            None => self.default_grid(),
        };
        ScorePrior::new(mode, grid)
    }

    /// Multiples of `1/s` up to 3 beats for each base subdivision `s` of the prior.
    fn default_grid(&self) -> Vec<Beat> {
        let three = Beat::from_integer(3);
        let steps: Vec<i64> = match self.prior {
            PriorKind::Table => vec![4, 6],
            PriorKind::Depth => self
                .schemas
                .iter()
                .map(|(d, _)| d.iter().map(|&x| x as i64).product::<i64>())
                .collect(),
        };
        let mut g: Vec<Beat> = steps
            .into_iter()
            .flat_map(|s| uniform_grid(Beat::new(1, s.max(1)), three))
            .collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn model(&self) -> Result<Model<f64>> {
        self.params
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Model::new(self.params.clone(), self.score_prior().map_err(|e| Error::Config(e.to_string()))?)
    }

    /// Model keys only, in a form [`RunConfig::apply`] reads back.
    pub fn params_text(params: &TempoParams<f64>) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ");
        format!(
            "dim = {}\na = {}\nq = {}\nr = {:e}\nr_off = {:e}\nr_outlier = {:e}\nprior_delta_mean = {:e}\nprior_delta_var = {:e}\nprior_tau_var = {:e}\n",
            params.dim,
            list(&params.a_coeffs),
            list(&params.q),
            params.r,
            params.r_off,
            params.r_outlier,
            params.prior_delta_mean,
            params.prior_delta_var,
            params.prior_tau_var
        )
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Parses labels such as `pf-n100+ii`, `gf-n1`, `gibbs-s50-l2` or `exact`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown benchmark method `{s}`"));
        if s == "exact" {
            return Ok(Method::Exact);
        }
        let (body, refine) = match s.strip_suffix("+ii") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let parts: Vec<&str> = body.split('-').collect();
        let num = |p: &str, prefix: char| -> Result<usize> {
            p.strip_prefix(prefix).and_then(|x| x.parse().ok()).ok_or_else(bad)
        };
        match parts.as_slice() {
            ["pf", n] => Ok(Method::Pf { particles: num(n, 'n')?, refine }),
            ["hybrid", n] => Ok(Method::Hybrid { particles: num(n, 'n')?, refine }),
            ["gf", n] if !refine => Ok(Method::Gf { particles: num(n, 'n')? }),
            [name, sw, l] if !refine => {
                let sweeps = num(sw, 's')?;
                let block = num(l, 'l')?;
                match *name {
                    "gibbs" => Ok(Method::Gibbs { sweeps, block }),
                    "sa" => Ok(Method::Sa { sweeps, block }),
                    "ii" => Ok(Method::Ii { sweeps, block }),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::beat;

    #[test]
    fn onset_round_trip() {
        let seq = OnsetSequence::with_kinds(vec![0.0, 0.25, 1.123456789], vec![EventKind::Onset, EventKind::Offset, EventKind::Onset]).unwrap();
        let text = write_onsets(&seq);
        assert_eq!(parse_onsets(&text).unwrap(), seq);
        let plain = OnsetSequence::new(vec![0.5, 1.0]);
        assert_eq!(parse_onsets(&write_onsets(&plain)).unwrap(), plain);
    }

    #[test]
    fn onset_errors_name_the_line() {
        let e = parse_onsets("#onsets v1\n0.1\n# note\nabc\n").unwrap_err();
        assert_eq!(e, Error::Parse { line: 4, message: "`abc` is not a number".into() });
        assert!(matches!(parse_onsets(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_onsets("#onsets v1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_onsets("0.1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_onsets("#onsets v1\n0.1 7\n"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn score_round_trip() {
        let s = Score::new(vec![beat(1, 2), beat(1, 1), beat(0, 1), beat(5, 6)], beat(1, 4)).unwrap();
        let text = write_score(&s);
        assert!(text.starts_with("#score v1\n1/4 1/4\n3/4 1/2\n"));
        assert_eq!(parse_score(&text).unwrap(), s);
        assert!(parse_score("#score v1\n0 0\n2 1\n").is_err());
    }

    #[test]
    fn config_keys() {
        let c = RunConfig::default()
            .apply("dim = 2\nq = 1e-4, 2e-4\nprior = depth\nschemas = 2,2,2@0.7 | 3,2@0.3\ngrid = 0:1/4:2\nmethod = gibbs # comment\n")
            .unwrap();
        assert_eq!(c.params.dim, 2);
        assert_eq!(c.method, MethodName::Gibbs);
        assert_eq!(c.grid.as_ref().unwrap().len(), 9);
        assert_eq!(c.schemas.len(), 2);
        c.model().unwrap();
        assert!(matches!(RunConfig::default().apply("partciles = 3"), Err(Error::Config(_))));
    }

    #[test]
    fn default_config_builds_reference_model() {
        let c = RunConfig::default();
        let m = c.model().unwrap();
        assert_eq!(m.params.dim, 3);
        assert_eq!(m.grid().len(), 25);
    }

    #[test]
    fn params_text_round_trips() {
        let p = TempoParams::<f64>::reference();
        let c = RunConfig::default().apply(&RunConfig::params_text(&p)).unwrap();
        assert_eq!(c.params, p);
    }

    #[test]
    fn method_labels_round_trip() {
        for m in crate::eval::default_methods()
            .into_iter()
            .chain([Method::Exact, Method::Pf { particles: 100, refine: true }, Method::Hybrid { particles: 5, refine: false }])
        {
            assert_eq!(Method::from_str(&m.label()).unwrap(), m);
        }
    }
}
