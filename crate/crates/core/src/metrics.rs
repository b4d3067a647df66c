//! Evaluation metrics and condition diagnostics.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::algorithms::{FleetState, TrustWeights};
use crate::data::ClientDataset;
use crate::error::{Error, Result};
use crate::loss::{empirical_bias, local_lambda_min, LossKind};
use crate::topology::{network_balance, spectral_condition, Adjacency, WeightMatrix};
use crate::ParamVector;

/// Metrics logged for one iteration of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub mse_normal: f64,
    pub consensus_error: f64,
    pub oracle_distance: f64,
    pub whole_sample_distance: f64,
}

impl MetricRow {
    pub fn compute(
        state: &FleetState,
        theta0: &ParamVector,
        abnormal: &BTreeSet<usize>,
        oracle: &ParamVector,
        whole_sample: &ParamVector,
    ) -> Result<Self> {
        Ok(MetricRow {
            iteration: state.t,
            mse_normal: mse_normal(state, theta0, abnormal)?,
            consensus_error: consensus_error(state),
            oracle_distance: stacked_distance(state, oracle)?,
            whole_sample_distance: stacked_distance(state, whole_sample)?,
        })
    }
}

/// Mean of `||theta_m - theta0||^2` over normal clients.
pub fn mse_normal(state: &FleetState, theta0: &ParamVector, abnormal: &BTreeSet<usize>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (m, theta) in state.thetas.iter().enumerate() {
        if abnormal.contains(&m) {
            continue;
        }
        if theta.len() != theta0.len() {
            return Err(Error::DimensionMismatch {
                expected: theta0.len(),
                actual: theta.len(),
            });
        }
        total += (theta - theta0).norm_squared();
        count += 1;
    }
    if count == 0 {
        return Err(Error::invalid("every client is abnormal"));
    }
    Ok(total / count as f64)
}

/// Across-client mean of the current estimates.
pub fn fleet_mean(state: &FleetState) -> ParamVector {
    let mut mean = ParamVector::zeros(state.p());
    for theta in &state.thetas {
        mean += theta;
    }
    if state.m() > 0 {
        mean /= state.m() as f64;
    }
    mean
}

/// `M^{-1} sum_m ||theta_m - mean||^2`.
pub fn consensus_error(state: &FleetState) -> f64 {
    if state.m() == 0 {
        return 0.0;
    }
    let mean = fleet_mean(state);
    state
        .thetas
        .iter()
        .map(|t| (t - &mean).norm_squared())
        .sum::<f64>()
        / state.m() as f64
}

/// `M^{-1/2} (sum_m ||theta_m - reference||^2)^{1/2}`.
pub fn stacked_distance(state: &FleetState, reference: &ParamVector) -> Result<f64> {
    if state.m() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for theta in &state.thetas {
        if theta.len() != reference.len() {
            return Err(Error::DimensionMismatch {
                expected: reference.len(),
                actual: theta.len(),
            });
        }
        total += (theta - reference).norm_squared();
    }
    Ok((total / state.m() as f64).sqrt())
}

/// Data-dependent drivers of the weighted-DFL error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightStats {
    /// `M^{-1} sum_{m normal} omega_m`.
    pub omega_bar_g: f64,
    /// `(|A|^{-1} sum_{m in A} omega_m^2)^{1/2}`.
    pub omega_bar2_a: f64,
    /// `(M^{-1} sum_m (omega_m - (1 - a_m))^2)^{1/2}`.
    pub delta_bar2: f64,
    /// `(|A|^{-1} sum_{m in A} ||b_m||^2)^{1/2}` with plug-in biases.
    pub bias_bar2_a: f64,
    pub rho_frac: f64,
}

pub fn weight_stats(
    tw: &TrustWeights,
    abnormal: &BTreeSet<usize>,
    kind: LossKind,
    datasets: &[ClientDataset],
    theta0: &ParamVector,
) -> Result<WeightStats> {
    let m = tw.len();
    if datasets.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: datasets.len(),
        });
    }
    if m == 0 {
        return Err(Error::invalid("weight statistics of an empty fleet"));
    }
    let mf = m as f64;
    let mut good_sum = 0.0;
    let mut bad_sq = 0.0;
    let mut delta_sq = 0.0;
    let mut bias_sq = 0.0;
    for (i, &omega) in tw.omega.iter().enumerate() {
        if abnormal.contains(&i) {
            bad_sq += omega * omega;
            delta_sq += omega * omega;
            bias_sq += empirical_bias(kind, &datasets[i], theta0)?.powi(2);
        } else {
            good_sum += omega;
            delta_sq += (omega - 1.0) * (omega - 1.0);
        }
    }
    let a = abnormal.len() as f64;
    let (omega_bar2_a, bias_bar2_a) = if abnormal.is_empty() {
        (0.0, 0.0)
    } else {
        ((bad_sq / a).sqrt(), (bias_sq / a).sqrt())
    };
    Ok(WeightStats {
        omega_bar_g: good_sum / mf,
        omega_bar2_a,
        delta_bar2: (delta_sq / mf).sqrt(),
        bias_bar2_a,
        rho_frac: a / mf,
    })
}

/// Advisory report on the conditions behind the convergence guarantees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub network_balance: f64,
    /// `||W^T (I - J) W|| + SE(W)`.
    pub spectral_condition: f64,
    pub spectral_pass: bool,
    pub strongly_connected: bool,
    /// `lambda_n M^{-1} sum_m ||theta_init_m - mean||^2`.
    pub consensus_statistic: f64,
    pub min_abnormal_bias: Option<f64>,
    pub max_normal_bias: Option<f64>,
    pub bias_separated: Option<bool>,
    /// Smallest eigenvalue of each client's Hessian at its local minimizer.
    pub local_lambda_min: Vec<Option<f64>>,
}

pub fn condition_checks(
    adjacency: &Adjacency,
    w: &WeightMatrix,
    kind: LossKind,
    datasets: &[ClientDataset],
    abnormal: &BTreeSet<usize>,
    theta0: &ParamVector,
    initial: &FleetState,
    lambda_n: f64,
) -> Result<ConditionReport> {
    let spectral = spectral_condition(w)?;
    let mut min_abnormal: Option<f64> = None;
    let mut max_normal: Option<f64> = None;
    for ds in datasets {
        let b = empirical_bias(kind, ds, theta0)?;
        if abnormal.contains(&ds.client_id) {
            min_abnormal = Some(min_abnormal.map_or(b, |v| v.min(b)));
        } else {
            max_normal = Some(max_normal.map_or(b, |v| v.max(b)));
        }
    }
    let bias_separated = match (min_abnormal, max_normal) {
        (Some(lo), Some(hi)) => Some(lo > hi),
        _ => None,
    };
    let local_lambda_min = datasets
        .iter()
        .map(|ds| local_lambda_min(kind, ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionReport {
        network_balance: network_balance(w),
        spectral_condition: spectral,
        spectral_pass: spectral < 1.0,
        strongly_connected: adjacency.is_strongly_connected(),
        consensus_statistic: lambda_n * consensus_error(initial),
        min_abnormal_bias: min_abnormal,
        max_normal_bias: max_normal,
        bias_separated,
        local_lambda_min,
    })
}
