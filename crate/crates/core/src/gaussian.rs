//! Unnormalized Gaussian potentials in canonical form.
//!
//! A potential over the variables `x` (one [`Label`] per dimension) is
//! `phi(x) = exp(g + h'x - x'Kx / 2)`. Everything is kept in the log domain:
//! `g` carries the log scale and no linear-domain normalizer is ever stored.
//! Domains are label based, so products of potentials over overlapping sets
//! of variables line up automatically.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::scalar::{ln_2pi, Scalar};

/// Smallest Cholesky pivot (squared diagonal of the factor) accepted as positive definite.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

thread_local! {
    static OPS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn tick() {
    OPS.with(|c| c.set(c.get() + 1));
}

/// Number of potential operations performed on this thread so far.
///
/// Used as a portable cost proxy by the benchmark harness.
pub fn potential_ops() -> u64 {
    OPS.with(|c| c.get())
}

/// Identifier of one scalar variable in a potential's domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(pub u32);

/// Moment form of a proper potential: `phi = exp(log_integral) * N(mean, cov)`.
#[derive(Clone, Debug)]
pub struct Moments<T: Scalar> {
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
    pub log_integral: T,
}

/// Cholesky factor of a symmetric matrix that passed the pivot check.
pub(crate) struct SpdFactor<T: Scalar> {
    chol: Option<Cholesky<T, Dyn>>,
    log_det: T,
}

impl<T: Scalar> SpdFactor<T> {
    pub(crate) fn new(m: &DMatrix<T>) -> Option<Self> {
        if m.nrows() == 0 {
            return Some(SpdFactor {
                chol: None,
                log_det: T::zero(),
            });
        }
        let chol = m.clone().cholesky()?;
        let tol = T::lit(PIVOT_TOLERANCE);
        let mut log_det = T::zero();
        {
            let l = chol.l_dirty();
            for i in 0..m.nrows() {
                let d = l[(i, i)];
                if !(d * d >= tol) {
                    return None;
                }
                log_det += d.ln();
            }
        }
        Some(SpdFactor {
            chol: Some(chol),
            log_det: log_det + log_det,
        })
    }

    pub(crate) fn log_det(&self) -> T {
        self.log_det
    }

    pub(crate) fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        match &self.chol {
            Some(c) => c.solve(b),
            None => b.clone(),
        }
    }

    pub(crate) fn solve_mat(&self, b: &DMatrix<T>) -> DMatrix<T> {
        match &self.chol {
            Some(c) => c.solve(b),
            None => b.clone(),
        }
    }

    pub(crate) fn inverse(&self) -> DMatrix<T> {
        match &self.chol {
            Some(c) => symmetrize(c.inverse()),
            None => DMatrix::zeros(0, 0),
        }
    }
}

pub(crate) fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (&m + m.transpose()) * half
}

/// Canonical-form Gaussian potential `[h, K, g]` over a labelled domain.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPotential<T: Scalar> {
    labels: Vec<Label>,
    h: DVector<T>,
    k: DMatrix<T>,
    g: T,
}

impl<T: Scalar> GaussianPotential<T> {
    pub fn new(labels: Vec<Label>, h: DVector<T>, k: DMatrix<T>, g: T) -> Result<Self> {
        let n = labels.len();
        if h.len() != n {
            return Err(Error::DimensionMismatch {
                what: "canonical mean",
                expected: n,
                found: h.len(),
            });
        }
        if k.nrows() != n || k.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "precision matrix",
                expected: n,
                found: k.nrows().max(k.ncols()),
            });
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidParameter(format!("duplicate label {l:?}")));
            }
        }
        Ok(GaussianPotential {
            labels,
            h,
            k: symmetrize(k),
            g,
        })
    }

    /// The constant potential `[0, 0, 0]`, the multiplicative identity.
    pub fn flat(labels: Vec<Label>) -> Self {
        let n = labels.len();
        GaussianPotential {
            labels,
            h: DVector::zeros(n),
            k: DMatrix::zeros(n, n),
            g: T::zero(),
        }
    }

    /// `exp(log_scale) * N(mu, sigma)` in canonical form.
    pub fn from_moments(
        labels: Vec<Label>,
        mu: &DVector<T>,
        sigma: &DMatrix<T>,
        log_scale: T,
    ) -> Result<Self> {
        let n = labels.len();
        if mu.len() != n || sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "moments",
                expected: n,
                found: mu.len(),
            });
        }
        let factor = SpdFactor::new(sigma).ok_or(Error::SingularCovariance)?;
        let k = factor.inverse();
        let h = factor.solve_vec(mu);
        let n_t = T::from_usize(n).expect("dimension fits");
        // log|K/2pi| = -log|Sigma| - n log 2pi, and h'K^{-1}h = mu'h
        let g = log_scale - (factor.log_det() + n_t * ln_2pi::<T>()) * T::lit(0.5)
            - mu.dot(&h) * T::lit(0.5);
        tick();
        GaussianPotential::new(labels, h, k, g)
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn h(&self) -> &DVector<T> {
        &self.h
    }

    pub fn k(&self) -> &DMatrix<T> {
        &self.k
    }

    pub fn g(&self) -> T {
        self.g
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn position(&self, label: Label) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    fn positions(&self, labels: &[Label]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|&l| self.position(l).ok_or(Error::UnknownLabel(l)))
            .collect()
    }

    /// Returns the same potential with its log scale shifted by `delta`.
    pub fn scaled(mut self, delta: T) -> Self {
        self.g += delta;
        self
    }

    /// Renames the variables one-to-one, keeping the parameters.
    pub fn relabeled(mut self, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                what: "relabel",
                expected: self.labels.len(),
                found: labels.len(),
            });
        }
        self.labels = labels;
        Ok(self)
    }

    /// Permutes the domain into the given label order (which must be a permutation of it).
    pub fn aligned_to(&self, labels: &[Label]) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(Error::DimensionMismatch {
                what: "alignment",
                expected: self.labels.len(),
                found: labels.len(),
            });
        }
        let idx = self.positions(labels)?;
        Ok(GaussianPotential {
            labels: labels.to_vec(),
            h: select_vec(&self.h, &idx),
            k: select_block(&self.k, &idx, &idx),
            g: self.g,
        })
    }

    /// `log phi(x)` with `x` ordered like [`Self::labels`].
    pub fn log_density(&self, x: &DVector<T>) -> T {
        self.g + self.h.dot(x) - (x.transpose() * &self.k * x)[(0, 0)] * T::lit(0.5)
    }

    /// Moment parameters and `log \int phi`. Fails unless `K` is positive definite.
    pub fn to_moments(&self) -> Result<Moments<T>> {
        tick();
        let factor = SpdFactor::new(&self.k)
            .ok_or(Error::ImproperPotential("precision is not positive definite"))?;
        let mean = factor.solve_vec(&self.h);
        let n_t = T::from_usize(self.dim()).expect("dimension fits");
        let log_integral = self.g - (factor.log_det() - n_t * ln_2pi::<T>()) * T::lit(0.5)
            + self.h.dot(&mean) * T::lit(0.5);
        Ok(Moments {
            mean,
            cov: factor.inverse(),
            log_integral,
        })
    }

    pub fn log_integral(&self) -> Result<T> {
        Ok(self.to_moments()?.log_integral)
    }

    /// Product of two potentials on the union of their domains.
    ///
    /// The result lists `self`'s labels first, followed by labels only present in `other`.
    pub fn multiply(&self, other: &Self) -> Self {
        tick();
        let mut labels = self.labels.clone();
        for &l in &other.labels {
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        let n = labels.len();
        let mut h = DVector::zeros(n);
        let mut k = DMatrix::zeros(n, n);
        h.rows_mut(0, self.dim()).copy_from(&self.h);
        k.view_mut((0, 0), (self.dim(), self.dim()))
            .copy_from(&self.k);
        let idx: Vec<usize> = other
            .labels
            .iter()
            .map(|l| labels.iter().position(|m| m == l).expect("label in union"))
            .collect();
        for (a, &ia) in idx.iter().enumerate() {
            h[ia] += other.h[a];
            for (b, &ib) in idx.iter().enumerate() {
                k[(ia, ib)] += other.k[(a, b)];
            }
        }
        GaussianPotential {
            labels,
            h,
            k,
            g: self.g + other.g,
        }
    }

    /// Integrates out every variable not in `keep`.
    ///
    /// The kept variables stay in their original order. The eliminated block of
    /// the precision must be positive definite; the kept block may be improper.
    pub fn marginalize(&self, keep: &[Label]) -> Result<Self> {
        self.positions(keep)?;
        let (kept, dropped): (Vec<usize>, Vec<usize>) =
            (0..self.dim()).partition(|&i| keep.contains(&self.labels[i]));
        if dropped.is_empty() {
            return Ok(self.clone());
        }
        tick();
        let h1 = select_vec(&self.h, &kept);
        let h2 = select_vec(&self.h, &dropped);
        let k11 = select_block(&self.k, &kept, &kept);
        let k12 = select_block(&self.k, &kept, &dropped);
        let k22 = select_block(&self.k, &dropped, &dropped);
        let factor =
            SpdFactor::new(&k22).ok_or(Error::ImproperPotential("eliminated block is not positive definite"))?;
        let k22_inv_h2 = factor.solve_vec(&h2);
        let k22_inv_k21 = factor.solve_mat(&k12.transpose());
        let n2 = T::from_usize(dropped.len()).expect("dimension fits");
        let g = self.g - (factor.log_det() - n2 * ln_2pi::<T>()) * T::lit(0.5)
            + h2.dot(&k22_inv_h2) * T::lit(0.5);
        Ok(GaussianPotential {
            labels: kept.iter().map(|&i| self.labels[i]).collect(),
            h: h1 - &k12 * k22_inv_h2,
            k: symmetrize(k11 - &k12 * k22_inv_k21),
            g,
        })
    }

    /// Integrates out the listed variables.
    pub fn marginalize_out(&self, drop: &[Label]) -> Result<Self> {
        self.positions(drop)?;
        let keep: Vec<Label> = self
            .labels
            .iter()
            .copied()
            .filter(|l| !drop.contains(l))
            .collect();
        self.marginalize(&keep)
    }

    /// Fixes `observed` variables to `values`; the result lives on the remaining variables.
    pub fn condition(&self, observed: &[Label], values: &DVector<T>) -> Result<Self> {
        if values.len() != observed.len() {
            return Err(Error::DimensionMismatch {
                what: "conditioning values",
                expected: observed.len(),
                found: values.len(),
            });
        }
        let obs_idx = self.positions(observed)?;
        if obs_idx.is_empty() {
            return Ok(self.clone());
        }
        tick();
        let rest: Vec<usize> = (0..self.dim()).filter(|i| !obs_idx.contains(i)).collect();
        let h1 = select_vec(&self.h, &rest);
        let h2 = select_vec(&self.h, &obs_idx);
        let k11 = select_block(&self.k, &rest, &rest);
        let k12 = select_block(&self.k, &rest, &obs_idx);
        let k22 = select_block(&self.k, &obs_idx, &obs_idx);
        let quad = (values.transpose() * &k22 * values)[(0, 0)];
        Ok(GaussianPotential {
            labels: rest.iter().map(|&i| self.labels[i]).collect(),
            h: h1 - &k12 * values,
            k: k11,
            g: self.g + h2.dot(values) - quad * T::lit(0.5),
        })
    }

    /// Largest absolute difference of the canonical parameters after aligning labels.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        let other = other.aligned_to(&self.labels)?;
        let mut d = (self.g - other.g).abs();
        for (a, b) in self.h.iter().zip(other.h.iter()) {
            d = d.max((*a - *b).abs());
        }
        for (a, b) in self.k.iter().zip(other.k.iter()) {
            d = d.max((*a - *b).abs());
        }
        Ok(d)
    }
}

fn select_vec<T: Scalar>(v: &DVector<T>, idx: &[usize]) -> DVector<T> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn select_block<T: Scalar>(m: &DMatrix<T>, rows: &[usize], cols: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}
