use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::powerflow::{AffineRows, MagnitudeModel};

/// Origin of an uncertain injection entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Certain,
    LoadGaussian,
    PvGmm,
}

/// Forecast-error moments over the stacked injection vector `[x_Y; x_Delta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertainInjection {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub tags: Vec<SourceTag>,
}

impl UncertainInjection {
    pub fn certain(n: usize) -> Self {
        UncertainInjection {
            mu: DVector::zeros(n),
            cov: DMatrix::zeros(n, n),
            tags: vec![SourceTag::Certain; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Adds an independent error on entry `i`.
    pub fn add_independent(&mut self, i: usize, mean: f64, var: f64, tag: SourceTag) {
        self.mu[i] += mean;
        self.cov[(i, i)] += var;
        self.tags[i] = tag;
    }

    /// Adds one scalar error `e` entering entry `idx[j]` with weight `w[j]`.
    pub fn add_shared(&mut self, idx: &[usize], w: &[f64], mean: f64, var: f64, tag: SourceTag) {
        for (a, &i) in idx.iter().enumerate() {
            self.mu[i] += w[a] * mean;
            for (b, &j) in idx.iter().enumerate() {
                self.cov[(i, j)] += w[a] * w[b] * var;
            }
            self.tags[i] = tag;
        }
    }

    /// Entries with nonzero variance.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.cov[(i, i)] > 0.0).collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        UncertainInjection {
            mu: self.mu.clone(),
            cov: &self.cov * (c * c),
            tags: self.tags.clone(),
        }
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        let s = self.support();
        if s.is_empty() {
            return true;
        }
        let sub = self.cov.select_rows(&s).select_columns(&s);
        if (&sub - sub.transpose()).amax() > tol {
            return false;
        }
        sub.symmetric_eigenvalues().min() >= -tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub v_mean: DVector<f64>,
    pub v_std: DVector<f64>,
    pub i_mean: DVector<f64>,
    pub i_std: DVector<f64>,
}

/// Mean and standard deviation of each affine magnitude at decision `x`.
pub fn propagate(model: &MagnitudeModel, x: &DVector<f64>, u: &UncertainInjection) -> Propagation {
    let shifted = x + &u.mu;
    let s = u.support();
    Propagation {
        v_mean: model.voltage.eval(&shifted),
        v_std: row_std(&model.voltage.coeff, &u.cov, &s),
        i_mean: model.current.eval(&shifted),
        i_std: row_std(&model.current.coeff, &u.cov, &s),
    }
}

/// `sqrt(diag(B Sigma B^T))`, restricted to the support of `Sigma`.
pub(crate) fn row_std(b: &DMatrix<f64>, cov: &DMatrix<f64>, support: &[usize]) -> DVector<f64> {
    if support.is_empty() {
        return DVector::zeros(b.nrows());
    }
    let bs = b.select_columns(support);
    let cs = cov.select_rows(support).select_columns(support);
    let t = &bs * cs;
    DVector::from_fn(b.nrows(), |r, _| t.row(r).dot(&bs.row(r)).max(0.0).sqrt())
}

/// Largest standard deviation of the 2-vector `(f1, f2)` over all directions.
pub(crate) fn radial_std(f1: &DMatrix<f64>, f2: &DMatrix<f64>, cov: &DMatrix<f64>) -> f64 {
    let a = (f1 * cov * f1.transpose())[(0, 0)];
    let b = (f1 * cov * f2.transpose())[(0, 0)];
    let d = (f2 * cov * f2.transpose())[(0, 0)];
    let tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (tr + disc).max(0.0).sqrt()
}

impl AffineRows {
    pub fn row(&self, r: usize) -> (f64, DVector<f64>) {
        (self.offset[r], self.coeff.row(r).transpose())
    }
}
