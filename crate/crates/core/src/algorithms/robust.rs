//! Robust-aggregation baselines: coordinate-wise screening (BRIDGE) and
//! clipped gossip.

use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::topology::{Adjacency, WeightMatrix};
use crate::ParamVector;

use super::step::{check_shapes, descend};
use super::{check_finite, FleetState, Tau};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BridgeVariant {
    Median,
    /// Drop the `b` smallest and `b` largest values per coordinate.
    Trimmed(usize),
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn sort_floats(v: &mut [f64]) {
    v.sort_by(|a, b| a.total_cmp(b));
}

/// Coordinate-wise median of `values`.
pub fn coordinate_median(values: &[&ParamVector]) -> Result<ParamVector> {
    let first = values
        .first()
        .ok_or_else(|| Error::invalid("median of an empty set"))?;
    let p = first.len();
    let mut column = vec![0.0; values.len()];
    Ok(ParamVector::from_fn(p, |j, _| {
        for (slot, v) in column.iter_mut().zip(values) {
            *slot = v[j];
        }
        sort_floats(&mut column);
        median_sorted(&column)
    }))
}

/// Coordinate-wise mean after dropping the `b` smallest and `b` largest values.
pub fn trimmed_mean(values: &[&ParamVector], b: usize) -> Result<ParamVector> {
    let count = values.len();
    if count <= 2 * b {
        return Err(Error::invalid(format!(
            "trimmed mean with b = {b} needs more than {} values, got {count}",
            2 * b
        )));
    }
    let p = values[0].len();
    let kept = (count - 2 * b) as f64;
    let mut column = vec![0.0; count];
    Ok(ParamVector::from_fn(p, |j, _| {
        for (slot, v) in column.iter_mut().zip(values) {
            *slot = v[j];
        }
        sort_floats(&mut column);
        column[b..count - b].iter().sum::<f64>() / kept
    }))
}

/// BRIDGE round: coordinate-wise screening over in-neighbors (self
/// included), then a local gradient step of size `alpha`.
pub fn bridge_step(
    state: &FleetState,
    adjacency: &Adjacency,
    objectives: &[Objective],
    alpha: f64,
    variant: BridgeVariant,
) -> Result<FleetState> {
    check_shapes(state, adjacency.m(), objectives)?;
    let p = state.p();
    let mut scratch = ParamVector::zeros(p);
    let mut thetas = Vec::with_capacity(state.m());
    for m in 0..state.m() {
        let received: Vec<&ParamVector> = adjacency
            .in_neighbors(m)
            .into_iter()
            .map(|k| &state.thetas[k])
            .collect();
        let mut theta = match variant {
            BridgeVariant::Median => coordinate_median(&received)?,
            BridgeVariant::Trimmed(b) => trimmed_mean(&received, b)?,
        };
        descend(&objectives[m], alpha, &mut theta, &mut scratch);
        thetas.push(theta);
    }
    let next = FleetState {
        t: state.t + 1,
        thetas,
        weights: None,
    };
    check_finite(&next, "bridge")?;
    Ok(next)
}

/// Median distance from client `m` to its in-neighbors (self excluded).
fn auto_radius(state: &FleetState, w: &WeightMatrix, m: usize) -> f64 {
    let mut dists: Vec<f64> = w
        .row(m)
        .iter()
        .filter(|&&(k, _)| k != m)
        .map(|&(k, _)| (&state.thetas[k] - &state.thetas[m]).norm())
        .collect();
    if dists.is_empty() {
        return 0.0;
    }
    sort_floats(&mut dists);
    median_sorted(&dists)
}

/// Clipped-gossip round:
/// `theta_m + sum_k w_mk clip(theta_k - theta_m, tau)` followed by a local
/// gradient step, with `clip(v, tau) = v min(1, tau / ||v||)`.
///
/// The aggregate is accumulated as `sum_k w_mk z_k` with `z_k = theta_k` for
/// unclipped neighbors, which equals the formula above because rows of `W`
/// sum to one and makes `tau = inf` reproduce [`super::dfl_step`] exactly.
pub fn clipped_gossip_step(
    state: &FleetState,
    w: &WeightMatrix,
    objectives: &[Objective],
    alpha: f64,
    tau: Tau,
) -> Result<FleetState> {
    check_shapes(state, w.m(), objectives)?;
    let p = state.p();
    let mut scratch = ParamVector::zeros(p);
    let mut clipped = ParamVector::zeros(p);
    let mut thetas = Vec::with_capacity(state.m());
    for m in 0..state.m() {
        let radius = match tau {
            Tau::Fixed(r) => r,
            Tau::Auto => auto_radius(state, w, m),
        };
        let own = &state.thetas[m];
        let mut theta = ParamVector::zeros(p);
        for &(k, wk) in w.row(m) {
            let other = &state.thetas[k];
            let dist = (other - own).norm();
            if dist <= radius {
                theta.axpy(wk, other, 1.0);
            } else {
                // own + (other - own) * radius / dist
                clipped.copy_from(own);
                clipped.axpy(radius / dist, &(other - own), 1.0);
                theta.axpy(wk, &clipped, 1.0);
            }
        }
        descend(&objectives[m], alpha, &mut theta, &mut scratch);
        thetas.push(theta);
    }
    let next = FleetState {
        t: state.t + 1,
        thetas,
        weights: None,
    };
    check_finite(&next, "clipped_gossip")?;
    Ok(next)
}
