use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::topology::WeightMatrix;
use crate::ParamVector;

use super::{check_finite, FleetState, TrustWeights};

/// `sum_k w_mk theta_k`, accumulated over row `m` in increasing `k`.
pub(crate) fn mix(w: &WeightMatrix, thetas: &[ParamVector], m: usize, out: &mut ParamVector) {
    out.fill(0.0);
    for &(k, wk) in w.row(m) {
        out.axpy(wk, &thetas[k], 1.0);
    }
}

/// Gradient step `theta - step * grad L_m(theta)` applied in place.
pub(crate) fn descend(objective: &Objective, step: f64, theta: &mut ParamVector, scratch: &mut ParamVector) {
    objective.gradient_into(theta, scratch);
    theta.axpy(-step, scratch, 1.0);
}

pub(crate) fn check_shapes(state: &FleetState, m: usize, objectives: &[Objective]) -> Result<()> {
    if state.m() != m || objectives.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: if state.m() != m { state.m() } else { objectives.len() },
        });
    }
    let p = state.p();
    if let Some(bad) = state.thetas.iter().find(|t| t.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: bad.len(),
        });
    }
    if let Some(obj) = objectives.iter().find(|o| o.p() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: obj.p(),
        });
    }
    Ok(())
}

/// Update of a single client from the round-`t` snapshot.
pub(crate) fn weighted_client_update(
    state: &FleetState,
    w: &WeightMatrix,
    objectives: &[Objective],
    step: f64,
    m: usize,
) -> ParamVector {
    let p = state.p();
    let mut theta = ParamVector::zeros(p);
    let mut scratch = ParamVector::zeros(p);
    mix(w, &state.thetas, m, &mut theta);
    descend(&objectives[m], step, &mut theta, &mut scratch);
    theta
}

fn weighted_round(
    state: &FleetState,
    w: &WeightMatrix,
    objectives: &[Objective],
    steps: &[f64],
    name: &str,
) -> Result<FleetState> {
    check_shapes(state, w.m(), objectives)?;
    let thetas = (0..state.m())
        .map(|m| weighted_client_update(state, w, objectives, steps[m], m))
        .collect();
    let next = FleetState {
        t: state.t + 1,
        thetas,
        weights: state.weights.clone(),
    };
    check_finite(&next, name)?;
    Ok(next)
}

/// Standard DFL round: average over in-neighbors, then one local gradient
/// step of size `alpha`.
pub fn dfl_step(
    state: &FleetState,
    w: &WeightMatrix,
    objectives: &[Objective],
    alpha: f64,
) -> Result<FleetState> {
    let steps = vec![alpha; state.m()];
    weighted_round(state, w, objectives, &steps, "dfl")
}

/// Weighted DFL round: client `m` uses learning rate `alpha * omega_m`.
pub fn weighted_dfl_step(
    state: &FleetState,
    w: &WeightMatrix,
    objectives: &[Objective],
    alpha: f64,
    weights: &TrustWeights,
) -> Result<FleetState> {
    if weights.len() != state.m() {
        return Err(Error::DimensionMismatch {
            expected: state.m(),
            actual: weights.len(),
        });
    }
    if let Some(bad) = weights.omega.iter().find(|o| !(0.0..=1.0).contains(*o)) {
        return Err(Error::invalid(format!("trust weight {bad} outside [0, 1]")));
    }
    let steps: Vec<f64> = weights.omega.iter().map(|&o| alpha * o).collect();
    weighted_round(state, w, objectives, &steps, "weighted_dfl")
}
