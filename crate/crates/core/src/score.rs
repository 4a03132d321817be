//! Score prior: quantization locations, subdivision depth and the prior over scores.
//!
//! Locations and intervals are exact rationals ([`Beat`]); grid membership is
//! never decided with floating point.

use std::ops::Range;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A score-time position or interval, in beats.
pub type Beat = Ratio<i64>;

pub fn beat(numer: i64, denom: i64) -> Beat {
    Ratio::new(numer, denom)
}

/// `c mod 1`, always in `[0, 1)`.
pub fn fraction(c: Beat) -> Beat {
    c - c.floor()
}

/// Recursive subdivision of the unit interval, e.g. `[2, 2, 2]` or `[3, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubdivisionSchema {
    divisors: Vec<u32>,
    lambda: f64,
}

impl SubdivisionSchema {
    pub fn new(divisors: Vec<u32>, lambda: f64) -> Result<Self> {
        if divisors.is_empty() {
            return Err(Error::InvalidParameter("subdivision schema is empty".into()));
        }
        if let Some(d) = divisors.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidParameter(format!("divisor {d} is smaller than 2")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        let grid = divisors.iter().try_fold(1i64, |acc, &d| acc.checked_mul(d as i64));
        if grid.is_none_or(|g| g > 1 << 40) {
            return Err(Error::InvalidParameter("subdivision grid is too fine".into()));
        }
        Ok(SubdivisionSchema { divisors, lambda })
    }

    /// `depth` binary levels: `[2; depth]`.
    pub fn binary(depth: usize, lambda: f64) -> Result<Self> {
        Self::new(vec![2; depth], lambda)
    }

    pub fn divisors(&self) -> &[u32] {
        &self.divisors
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of grid points per unit, the product of all divisors.
    pub fn resolution(&self) -> i64 {
        self.divisors.iter().map(|&d| d as i64).product()
    }

    fn level_sizes(&self) -> impl Iterator<Item = i64> + '_ {
        self.divisors.iter().scan(1i64, |acc, &d| {
            *acc *= d as i64;
            Some(*acc)
        })
    }

    /// Iteration at which `c mod 1` first appears on the subdivision grid; 0 for integers.
    pub fn depth(&self, c: Beat) -> Result<u32> {
        let denom = *fraction(c).denom();
        if denom == 1 {
            return Ok(0);
        }
        self.level_sizes()
            .position(|size| size % denom == 0)
            .map(|i| i as u32 + 1)
            .ok_or(Error::OffGrid(c))
    }

    pub fn contains(&self, c: Beat) -> bool {
        self.resolution() % fraction(c).denom() == 0
    }

    /// `log sum_{f on one unit period} exp(-lambda d(f))`.
    fn log_normalizer(&self) -> f64 {
        let mut z = 1.0;
        let mut prev = 1i64;
        for (i, size) in self.level_sizes().enumerate() {
            z += (size - prev) as f64 * (-self.lambda * (i as f64 + 1.0)).exp();
            prev = size;
        }
        z.ln()
    }
}

/// Explicit probability table over `c mod 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TablePrior {
    entries: Vec<(Beat, f64)>,
    floor: f64,
    resolution: i64,
    log_normalizer: f64,
}

impl TablePrior {
    /// Fractions not listed get `floor`; the table is normalized over the
    /// `resolution` grid points of one unit period.
    pub fn new(entries: Vec<(Beat, f64)>, floor: f64, resolution: i64) -> Result<Self> {
        if resolution < 1 {
            return Err(Error::InvalidParameter("table resolution must be positive".into()));
        }
        if !(floor > 0.0) {
            return Err(Error::InvalidParameter("table floor must be positive".into()));
        }
        let mut on_grid = 0i64;
        for (i, &(key, p)) in entries.iter().enumerate() {
            if key.is_negative() || key >= Beat::from_integer(1) {
                return Err(Error::InvalidParameter(format!("table key {key} outside [0, 1)")));
            }
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::InvalidParameter(format!("table probability for {key} must be positive")));
            }
            if entries[..i].iter().any(|(k, _)| *k == key) {
                return Err(Error::InvalidParameter(format!("duplicate table key {key}")));
            }
            if resolution % key.denom() == 0 {
                on_grid += 1;
            }
        }
        let listed: f64 = entries.iter().map(|(_, p)| p).sum();
        let unlisted = (resolution - on_grid).max(0) as f64;
        let log_normalizer = (listed + floor * unlisted).ln();
        Ok(TablePrior {
            entries,
            floor,
            resolution,
            log_normalizer,
        })
    }

    /// The table estimated from the training score in the reference experiments.
    pub fn reference() -> Self {
        TablePrior::new(
            vec![
                (beat(0, 1), 0.80),
                (beat(1, 3), 0.0082),
                (beat(1, 2), 0.15),
                (beat(5, 6), 0.0418),
            ],
            1e-6,
            12,
        )
        .expect("reference table is valid")
    }

    pub fn entries(&self) -> &[(Beat, f64)] {
        &self.entries
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn resolution(&self) -> i64 {
        self.resolution
    }

    fn log_prob(&self, c: Beat) -> f64 {
        let f = fraction(c);
        let p = self
            .entries
            .iter()
            .find(|(k, _)| *k == f)
            .map_or(self.floor, |(_, p)| *p);
        p.ln() - self.log_normalizer
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PriorMode {
    /// Mixture over subdivision schemata with weights `p(S)`.
    Depth(Vec<(SubdivisionSchema, f64)>),
    Table(TablePrior),
}

/// Prior over quantization locations together with the grid of allowed intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePrior {
    mode: PriorMode,
    gamma_grid: Vec<Beat>,
}

impl ScorePrior {
    pub fn new(mode: PriorMode, mut gamma_grid: Vec<Beat>) -> Result<Self> {
        match &mode {
            PriorMode::Depth(schemas) => {
                if schemas.is_empty() {
                    return Err(Error::InvalidParameter("depth prior needs at least one schema".into()));
                }
                if schemas.iter().any(|(_, w)| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::InvalidParameter("schema probabilities must be positive".into()));
                }
            }
            PriorMode::Table(_) => {}
        }
        gamma_grid.sort();
        gamma_grid.dedup();
        if gamma_grid.is_empty() {
            return Err(Error::InvalidParameter("interval grid is empty".into()));
        }
        let prior = ScorePrior { mode, gamma_grid };
        for &g in &prior.gamma_grid {
            if g.is_negative() {
                return Err(Error::NegativeInterval(g));
            }
            if !prior.on_grid(g) {
                return Err(Error::OffGrid(g));
            }
        }
        Ok(prior)
    }

    /// Single binary schema with depth prior.
    pub fn binary(depth: usize, lambda: f64, gamma_grid: Vec<Beat>) -> Result<Self> {
        Self::new(
            PriorMode::Depth(vec![(SubdivisionSchema::binary(depth, lambda)?, 1.0)]),
            gamma_grid,
        )
    }

    pub fn mode(&self) -> &PriorMode {
        &self.mode
    }

    pub fn gamma_grid(&self) -> &[Beat] {
        &self.gamma_grid
    }

    pub fn with_grid(&self, gamma_grid: Vec<Beat>) -> Result<Self> {
        Self::new(self.mode.clone(), gamma_grid)
    }

    fn on_grid(&self, c: Beat) -> bool {
        match &self.mode {
            PriorMode::Depth(schemas) => schemas.iter().any(|(s, _)| s.contains(c)),
            PriorMode::Table(t) => t.resolution % fraction(c).denom() == 0,
        }
    }

    fn log_prob_f64(&self, c: Beat) -> Result<f64> {
        match &self.mode {
            PriorMode::Table(t) => Ok(t.log_prob(c)),
            PriorMode::Depth(schemas) => {
                let total: f64 = schemas.iter().map(|(_, w)| w).sum();
                let mut terms = Vec::with_capacity(schemas.len());
                for (s, w) in schemas {
                    if let Ok(d) = s.depth(c) {
                        terms.push((w / total).ln() - s.lambda * d as f64 - s.log_normalizer());
                    }
                }
                if terms.is_empty() {
                    return Err(Error::OffGrid(c));
                }
                Ok(crate::scalar::log_sum_exp(terms))
            }
        }
    }
}

/// `log p(c)`, normalized over one unit period.
pub fn log_prior_c<T: Scalar>(c: Beat, prior: &ScorePrior) -> Result<T> {
    prior.log_prob_f64(c).map(T::lit)
}

/// A score: intervals `gamma_1..gamma_K` between consecutive onsets and the first location `c_0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Score {
    pub gammas: Vec<Beat>,
    pub c0: Beat,
}

impl Score {
    pub fn new(gammas: Vec<Beat>, c0: Beat) -> Result<Self> {
        if let Some(&g) = gammas.iter().find(|g| g.is_negative()) {
            return Err(Error::NegativeInterval(g));
        }
        if c0.is_negative() || c0 >= Beat::from_integer(1) {
            return Err(Error::InvalidParameter(format!("c0 = {c0} is outside [0, 1)")));
        }
        Ok(Score { gammas, c0 })
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// Quantization locations `c_0..c_K`.
    pub fn locations(&self) -> Vec<Beat> {
        let mut c = self.c0;
        let mut out = Vec::with_capacity(self.gammas.len() + 1);
        out.push(c);
        for &g in &self.gammas {
            c += g;
            out.push(c);
        }
        out
    }
}

/// `sum_{k=1..K} log p(c_k)`; `c_0` has a uniform prior and is left out.
pub fn log_prior_score<T: Scalar>(score: &Score, prior: &ScorePrior) -> Result<T> {
    let mut total = T::zero();
    let mut c = score.c0;
    for &g in &score.gammas {
        c += g;
        total += log_prior_c::<T>(c, prior)?;
    }
    Ok(total)
}

/// Joint log prior of `score` with `range` (0-based interval indices) replaced.
///
/// Every location from the start of the range onward is re-evaluated because the
/// replacement shifts all later `c_k`.
pub fn conditional_log_prior<T: Scalar>(
    score: &Score,
    range: Range<usize>,
    replacement: &[Beat],
    prior: &ScorePrior,
) -> Result<T> {
    if range.len() != replacement.len() {
        return Err(Error::DimensionMismatch {
            what: "replacement",
            expected: range.len(),
            found: replacement.len(),
        });
    }
    if range.end > score.gammas.len() {
        return Err(Error::IndexOutOfRange {
            index: range.end,
            len: score.gammas.len(),
        });
    }
    let mut total = T::zero();
    let mut c = score.c0;
    for (k, &g) in score.gammas.iter().enumerate() {
        let g = if range.contains(&k) {
            replacement[k - range.start]
        } else {
            g
        };
        if g.is_negative() {
            return Err(Error::NegativeInterval(g));
        }
        c += g;
        total += log_prior_c::<T>(c, prior)?;
    }
    Ok(total)
}

/// Incrementally maintained `sum log p(c_k)`, evaluated in the same order as
/// [`log_prior_score`] so both agree bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorAccumulator<T: Scalar> {
    pub location: Beat,
    pub log_prior: T,
}

impl<T: Scalar> PriorAccumulator<T> {
    pub fn start(c0: Beat) -> Self {
        PriorAccumulator {
            location: c0,
            log_prior: T::zero(),
        }
    }

    pub fn push(&self, gamma: Beat, prior: &ScorePrior) -> Result<Self> {
        let location = self.location + gamma;
        Ok(PriorAccumulator {
            location,
            log_prior: self.log_prior + log_prior_c::<T>(location, prior)?,
        })
    }
}

/// Least common multiple of the denominators of a set of beats.
pub fn common_denominator(values: &[Beat]) -> i64 {
    values.iter().fold(1i64, |acc, v| acc.lcm(v.denom()))
}

/// Grid `{0, step, 2 step, ..., max}`.
pub fn uniform_grid(step: Beat, max: Beat) -> Vec<Beat> {
    assert!(step > Beat::zero(), "grid step must be positive");
    let mut out = Vec::new();
    let mut g = Beat::zero();
    while g <= max {
        out.push(g);
        g += step;
    }
    out
}
