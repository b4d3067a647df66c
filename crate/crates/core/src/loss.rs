//! Local losses, gradients and reference estimators.
//!
//! Squared error uses the halved form `(y - x^T theta)^2 / 2`, so the Hessian
//! is the empirical second-moment matrix. Logistic regression uses labels in
//! `{0, 1}`.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::spectral::smallest_eigenvalue_psd;
use crate::ParamVector;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SquaredError,
    Logistic,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn check_dim(ds: &ClientDataset, theta: &ParamVector) -> Result<()> {
    if ds.p() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: ds.p(),
            actual: theta.len(),
        });
    }
    Ok(())
}

fn per_sample_loss(kind: LossKind, eta: f64, y: f64) -> f64 {
    match kind {
        LossKind::SquaredError => 0.5 * (y - eta) * (y - eta),
        LossKind::Logistic => softplus(eta) - y * eta,
    }
}

/// `d loss / d eta` for linear predictor `eta = x^T theta`.
fn per_sample_slope(kind: LossKind, eta: f64, y: f64) -> f64 {
    match kind {
        LossKind::SquaredError => eta - y,
        LossKind::Logistic => sigmoid(eta) - y,
    }
}

fn per_sample_curvature(kind: LossKind, eta: f64) -> f64 {
    match kind {
        LossKind::SquaredError => 1.0,
        LossKind::Logistic => {
            let s = sigmoid(eta);
            s * (1.0 - s)
        }
    }
}

/// `L_m(theta) = n^{-1} sum_i loss(x_i, y_i; theta)`.
pub fn local_loss(kind: LossKind, ds: &ClientDataset, theta: &ParamVector) -> Result<f64> {
    check_dim(ds, theta)?;
    let eta = &ds.x * theta;
    let total: f64 = eta
        .iter()
        .zip(ds.y.iter())
        .map(|(&e, &y)| per_sample_loss(kind, e, y))
        .sum();
    Ok(total / ds.n() as f64)
}

/// Gradient of [`local_loss`]; for squared error `-n^{-1} X^T (Y - X theta)`.
pub fn local_gradient(kind: LossKind, ds: &ClientDataset, theta: &ParamVector) -> Result<ParamVector> {
    check_dim(ds, theta)?;
    let eta = &ds.x * theta;
    let slope = DVector::from_iterator(
        ds.n(),
        eta.iter().zip(ds.y.iter()).map(|(&e, &y)| per_sample_slope(kind, e, y)),
    );
    Ok(ds.x.tr_mul(&slope) / ds.n() as f64)
}

pub fn local_hessian(kind: LossKind, ds: &ClientDataset, theta: &ParamVector) -> Result<DMatrix<f64>> {
    check_dim(ds, theta)?;
    Ok(weighted_gram(kind, std::slice::from_ref(ds), theta))
}

/// `N^{-1} sum_i c_i x_i x_i^T` over all rows of `datasets`.
fn weighted_gram(kind: LossKind, datasets: &[ClientDataset], theta: &ParamVector) -> DMatrix<f64> {
    let p = theta.len();
    let mut h = DMatrix::zeros(p, p);
    let mut count = 0usize;
    for ds in datasets {
        match kind {
            LossKind::SquaredError => h += ds.x.tr_mul(&ds.x),
            LossKind::Logistic => {
                let eta = &ds.x * theta;
                let mut scaled = ds.x.clone();
                for (i, mut row) in scaled.row_iter_mut().enumerate() {
                    row *= per_sample_curvature(kind, eta[i]);
                }
                h += ds.x.tr_mul(&scaled);
            }
        }
        count += ds.n();
    }
    h / count as f64
}

/// A client's local objective with cached sufficient statistics.
///
/// For squared error the gradient is `G theta - b` with `G = X^T X / n` and
/// `b = X^T Y / n`, which costs `O(p^2)` per evaluation instead of `O(np)`.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: LossKind,
    data: ClientDataset,
    gram: Option<DMatrix<f64>>,
    xty: Option<DVector<f64>>,
}

impl Objective {
    pub fn new(kind: LossKind, data: ClientDataset) -> Self {
        let (gram, xty) = match kind {
            LossKind::SquaredError => {
                let n = data.n() as f64;
                (Some(data.x.tr_mul(&data.x) / n), Some(data.x.tr_mul(&data.y) / n))
            }
            LossKind::Logistic => (None, None),
        };
        Objective {
            kind,
            data,
            gram,
            xty,
        }
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn data(&self) -> &ClientDataset {
        &self.data
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    pub fn loss(&self, theta: &ParamVector) -> Result<f64> {
        local_loss(self.kind, &self.data, theta)
    }

    /// Write the local gradient at `theta` into `out`.
    pub fn gradient_into(&self, theta: &ParamVector, out: &mut ParamVector) {
        match (&self.gram, &self.xty) {
            (Some(gram), Some(xty)) => {
                out.copy_from(xty);
                out.gemv(1.0, gram, theta, -1.0);
            }
            _ => {
                let g = local_gradient(self.kind, &self.data, theta)
                    .expect("objective dimension checked at construction");
                out.copy_from(&g);
            }
        }
    }

    pub fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        if theta.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                actual: theta.len(),
            });
        }
        let mut out = DVector::zeros(self.p());
        self.gradient_into(theta, &mut out);
        Ok(out)
    }
}

pub fn objectives(kind: LossKind, datasets: &[ClientDataset]) -> Vec<Objective> {
    datasets
        .iter()
        .map(|ds| Objective::new(kind, ds.clone()))
        .collect()
}

/// Reference estimators computed from pooled data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceEstimates {
    /// Minimizer of the pooled loss over every client.
    #[serde(serialize_with = "crate::serialize_vector")]
    pub whole_sample: ParamVector,
    /// Minimizer of the pooled loss over normal clients only.
    #[serde(serialize_with = "crate::serialize_vector")]
    pub oracle: ParamVector,
    /// Per-client minimizers; `None` where the local design is rank deficient.
    #[serde(skip)]
    pub local: Vec<Option<ParamVector>>,
}

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 200;

/// Minimize the pooled loss over `datasets`.
pub fn pooled_minimizer(
    kind: LossKind,
    datasets: &[ClientDataset],
    estimator: &'static str,
) -> Result<ParamVector> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::invalid(format!("{estimator} estimator has no data")))?;
    match kind {
        LossKind::SquaredError => least_squares(datasets, first.p(), estimator),
        LossKind::Logistic => newton(datasets, first.p(), estimator),
    }
}

fn least_squares(datasets: &[ClientDataset], p: usize, estimator: &'static str) -> Result<ParamVector> {
    let n_total: usize = datasets.iter().map(|d| d.n()).sum();
    if n_total < p {
        return Err(Error::RankDeficient { estimator });
    }
    let mut x = DMatrix::zeros(n_total, p);
    let mut y = DVector::zeros(n_total);
    let mut offset = 0;
    for ds in datasets {
        x.view_mut((offset, 0), (ds.n(), p)).copy_from(&ds.x);
        y.rows_mut(offset, ds.n()).copy_from(&ds.y);
        offset += ds.n();
    }
    let qr = x.qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = scale * (n_total.max(p) as f64) * f64::EPSILON;
    if scale == 0.0 || r.diagonal().iter().any(|v| v.abs() <= tol) {
        return Err(Error::RankDeficient { estimator });
    }
    qr.q_tr_mul(&mut y);
    let rhs = y.rows(0, p).into_owned();
    r.solve_upper_triangular(&rhs)
        .ok_or(Error::RankDeficient { estimator })
}

fn pooled_gradient(datasets: &[ClientDataset], theta: &ParamVector) -> ParamVector {
    let n_total: usize = datasets.iter().map(|d| d.n()).sum();
    let mut g = DVector::zeros(theta.len());
    for ds in datasets {
        g += local_gradient(LossKind::Logistic, ds, theta).expect("dims checked") * ds.n() as f64;
    }
    g / n_total as f64
}

fn pooled_loss(datasets: &[ClientDataset], theta: &ParamVector) -> f64 {
    let n_total: usize = datasets.iter().map(|d| d.n()).sum();
    datasets
        .iter()
        .map(|ds| local_loss(LossKind::Logistic, ds, theta).expect("dims checked") * ds.n() as f64)
        .sum::<f64>()
        / n_total as f64
}

fn newton(datasets: &[ClientDataset], p: usize, estimator: &'static str) -> Result<ParamVector> {
    let mut theta = DVector::zeros(p);
    let mut loss = pooled_loss(datasets, &theta);
    for _ in 0..NEWTON_MAX_ITER {
        let g = pooled_gradient(datasets, &theta);
        if g.norm() <= NEWTON_TOL {
            return accept_newton(datasets, theta, estimator);
        }
        let h = weighted_gram(LossKind::Logistic, datasets, &theta);
        let chol = h.cholesky().ok_or(Error::RankDeficient { estimator })?;
        let step = chol.solve(&g);
        // backtracking on the pooled loss
        let mut t = 1.0;
        loop {
            let candidate = &theta - &step * t;
            let next = pooled_loss(datasets, &candidate);
            if next <= loss - 1e-4 * t * g.dot(&step) || t < 1e-12 {
                theta = candidate;
                loss = next;
                break;
            }
            t *= 0.5;
        }
    }
    let g = pooled_gradient(datasets, &theta);
    if g.norm() <= NEWTON_TOL {
        return accept_newton(datasets, theta, estimator);
    }
    Err(Error::NotConverged {
        what: "newton solver",
        iterations: NEWTON_MAX_ITER,
    })
}

/// On separable data the gradient vanishes only because the fitted
/// probabilities saturate; reject stationary points where the curvature has
/// collapsed relative to the design.
fn accept_newton(datasets: &[ClientDataset], theta: ParamVector, estimator: &'static str) -> Result<ParamVector> {
    let curvature = weighted_gram(LossKind::Logistic, datasets, &theta)
        .symmetric_eigen()
        .eigenvalues
        .min();
    let design = weighted_gram(LossKind::SquaredError, datasets, &theta)
        .symmetric_eigen()
        .eigenvalues
        .min();
    if design <= 0.0 {
        return Err(Error::RankDeficient { estimator });
    }
    if curvature < 1e-8 * design {
        return Err(Error::NotConverged {
            what: "newton solver (separable data)",
            iterations: NEWTON_MAX_ITER,
        });
    }
    Ok(theta)
}

/// Whole-sample, oracle and local estimators.
pub fn solve_reference(
    kind: LossKind,
    datasets: &[ClientDataset],
    abnormal: &BTreeSet<usize>,
) -> Result<ReferenceEstimates> {
    let whole_sample = pooled_minimizer(kind, datasets, "whole-sample")?;
    let normal: Vec<ClientDataset> = datasets
        .iter()
        .filter(|ds| !abnormal.contains(&ds.client_id))
        .cloned()
        .collect();
    let oracle = if normal.len() == datasets.len() {
        whole_sample.clone()
    } else {
        pooled_minimizer(kind, &normal, "oracle")?
    };
    let local = datasets
        .iter()
        .map(|ds| pooled_minimizer(kind, std::slice::from_ref(ds), "local").ok())
        .collect();
    Ok(ReferenceEstimates {
        whole_sample,
        oracle,
        local,
    })
}

/// Plug-in estimate of the client bias: `||grad L_m(theta0)||`.
pub fn empirical_bias(kind: LossKind, ds: &ClientDataset, theta0: &ParamVector) -> Result<f64> {
    Ok(local_gradient(kind, ds, theta0)?.norm())
}

/// Smallest eigenvalue of the local Hessian at the local minimizer, or
/// `None` when the local problem has no unique minimizer.
pub fn local_lambda_min(kind: LossKind, ds: &ClientDataset) -> Result<Option<f64>> {
    let theta = match pooled_minimizer(kind, std::slice::from_ref(ds), "local") {
        Ok(t) => t,
        Err(Error::RankDeficient { .. }) | Err(Error::NotConverged { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let h = local_hessian(kind, ds, &theta)?;
    smallest_eigenvalue_psd(&h).map(Some)
}
