//! Brute-force enumeration of all interval sequences in a product of supports.

use crate::error::{Error, Result};
use crate::mcmc::Supports;
use crate::scalar::{log_sum_exp, Scalar};
use crate::score::{Beat, Score};
use crate::tempo::{Model, OnsetSequence};

/// Refuses enumerations larger than this many sequences.
pub const MAX_ENUMERATION: usize = 2_000_000;

pub fn product_size(supports: &Supports) -> Option<usize> {
    supports.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.len()))
}

/// Every sequence in lexicographic order of the supports.
pub fn sequences(supports: &Supports) -> Result<Vec<Vec<Beat>>> {
    let n = product_size(supports).filter(|&n| n <= MAX_ENUMERATION).ok_or_else(|| {
        Error::InvalidParameter("enumeration is too large".into())
    })?;
    let mut out = Vec::with_capacity(n);
    let mut cur = Vec::with_capacity(supports.len());
    fn rec(supports: &Supports, cur: &mut Vec<Beat>, out: &mut Vec<Vec<Beat>>) {
        if cur.len() == supports.len() {
            out.push(cur.clone());
            return;
        }
        for &g in &supports[cur.len()] {
            cur.push(g);
            rec(supports, cur, out);
            cur.pop();
        }
    }
    rec(supports, &mut cur, &mut out);
    Ok(out)
}

/// `(score, log p(gamma, y))` for every sequence, each from its own Kalman run.
pub fn enumerate<T: Scalar>(model: &Model<T>, onsets: &OnsetSequence<T>, supports: &Supports, c0: Beat) -> Result<Vec<(Score, T)>> {
    sequences(supports)?
        .into_iter()
        .map(|g| {
            let s = Score { gammas: g, c0 };
            let lj = match model.log_joint(&s, onsets) {
                Ok(v) => v,
                Err(Error::OffGrid(_)) => T::neg_infinity(),
                Err(e) => return Err(e),
            };
            Ok((s, lj))
        })
        .collect()
}

/// Exact MAP; ties go to the lexicographically smallest sequence.
pub fn exact_map<T: Scalar>(model: &Model<T>, onsets: &OnsetSequence<T>, supports: &Supports, c0: Beat) -> Result<(Score, T)> {
    let all = enumerate(model, onsets, supports, c0)?;
    let mut best: Option<(Score, T)> = None;
    for (s, l) in all {
        match &best {
            Some((bs, bl)) if l < *bl || (l == *bl && s.gammas >= bs.gammas) => {}
            _ => best = Some((s, l)),
        }
    }
    best.ok_or(Error::NoFeasibleExtension(0))
}

/// Exact posterior moments of the last slice and the log evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPosterior<T: Scalar> {
    pub tau_mean: T,
    pub tau_var: T,
    pub delta_mean: T,
    pub delta_var: T,
    pub log_evidence: T,
}

pub fn exact_posterior<T: Scalar>(model: &Model<T>, onsets: &OnsetSequence<T>, supports: &Supports, c0: Beat) -> Result<ExactPosterior<T>> {
    let all = enumerate(model, onsets, supports, c0)?;
    let log_z = log_sum_exp(all.iter().map(|(_, l)| l.as_f64()));
    let mut comps = Vec::new();
    for (s, l) in &all {
        if !l.is_finite_value() {
            continue;
        }
        let msgs = model.messages(&s.gammas, onsets)?;
        let m = msgs.forward.alpha_filt.last().expect("non-empty").to_moments()?;
        let (dm, dv) = model.params.period_moments(&m.mean, &m.cov);
        comps.push(((l.as_f64() - log_z).exp(), m.mean[0].as_f64(), m.cov[(0, 0)].as_f64(), dm.as_f64(), dv.as_f64()));
    }
    let tm: f64 = comps.iter().map(|c| c.0 * c.1).sum();
    let dm: f64 = comps.iter().map(|c| c.0 * c.3).sum();
    let tv: f64 = comps.iter().map(|c| c.0 * (c.2 + (c.1 - tm).powi(2))).sum();
    let dv: f64 = comps.iter().map(|c| c.0 * (c.4 + (c.3 - dm).powi(2))).sum();
    Ok(ExactPosterior {
        tau_mean: T::lit(tm),
        tau_var: T::lit(tv),
        delta_mean: T::lit(dm),
        delta_var: T::lit(dv),
        log_evidence: T::lit(log_z),
    })
}
