//! Decentralized update rules and the algorithms built from them.
//!
//! Every round is synchronous: client `m`'s estimate at round `t + 1` is a
//! pure function of the full round-`t` snapshot, so the order in which
//! clients are updated never matters.

mod adaptive;
mod robust;
mod step;

pub use adaptive::{
    adaptive_weights, default_lambda_grid, renormalize_weights, run_adfl, run_adfl_from_init,
    run_multistage_adfl, run_multistage_from_init, select_lambda_cv, RenormReport,
};
pub use robust::{bridge_step, clipped_gossip_step, coordinate_median, trimmed_mean, BridgeVariant};
pub use step::{dfl_step, weighted_dfl_step};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::topology::{Adjacency, WeightMatrix};
use crate::ParamVector;

/// Per-client trust weights `omega_m` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrustWeights {
    pub omega: Vec<f64>,
    pub lambda_n: f64,
    pub normalized: bool,
}

impl TrustWeights {
    /// All weights equal to one.
    pub fn ones(m: usize) -> Self {
        TrustWeights {
            omega: vec![1.0; m],
            lambda_n: 0.0,
            normalized: true,
        }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Stacked estimates of every client at round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    pub t: usize,
    pub thetas: Vec<ParamVector>,
    pub weights: Option<TrustWeights>,
}

impl FleetState {
    pub fn zeros(m: usize, p: usize) -> Self {
        FleetState {
            t: 0,
            thetas: vec![ParamVector::zeros(p); m],
            weights: None,
        }
    }

    pub fn from_thetas(thetas: Vec<ParamVector>) -> Self {
        FleetState {
            t: 0,
            thetas,
            weights: None,
        }
    }

    pub fn m(&self) -> usize {
        self.thetas.len()
    }

    pub fn p(&self) -> usize {
        self.thetas.first().map_or(0, |t| t.len())
    }

    /// Largest per-client movement between two states.
    pub fn max_movement(&self, other: &FleetState) -> f64 {
        self.thetas
            .iter()
            .zip(&other.thetas)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Clipping radius for clipped gossip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tau {
    Fixed(f64),
    /// Median distance to the in-neighbors, per client and round.
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TauRepr {
    Number(f64),
    Text(String),
}

impl Serialize for Tau {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Tau::Fixed(v) if v.is_infinite() => TauRepr::Text("inf".into()).serialize(s),
            Tau::Fixed(v) => TauRepr::Number(v).serialize(s),
            Tau::Auto => TauRepr::Text("auto".into()).serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Tau {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match TauRepr::deserialize(d)? {
            TauRepr::Number(v) => Ok(Tau::Fixed(v)),
            TauRepr::Text(t) if t == "auto" => Ok(Tau::Auto),
            TauRepr::Text(t) if t == "inf" => Ok(Tau::Fixed(f64::INFINITY)),
            TauRepr::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number, \"inf\" or \"auto\", got {t:?}"
            ))),
        }
    }
}

/// How the adaptive-weight scale `lambda_n` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaChoice {
    Fixed(f64),
    Named(LambdaRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// `log N` with `N` the total sample size.
    LogN,
    /// Holdout cross-validation over [`default_lambda_grid`].
    Cv,
}

impl LambdaChoice {
    /// Resolve to a number when no data-driven selection is needed.
    pub fn fixed_value(&self, total_samples: usize) -> Option<f64> {
        match self {
            LambdaChoice::Fixed(v) => Some(*v),
            LambdaChoice::Named(LambdaRule::LogN) => Some((total_samples as f64).ln()),
            LambdaChoice::Named(LambdaRule::Cv) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    Dfl,
    Adfl,
    BridgeM,
    BridgeT { trim_b: usize },
    ClippedGossip { tau: Tau },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Dfl => "dfl",
            Algorithm::Adfl => "adfl",
            Algorithm::BridgeM => "bridge_m",
            Algorithm::BridgeT { .. } => "bridge_t",
            Algorithm::ClippedGossip { .. } => "clipped_gossip",
        }
    }
}

/// Hyperparameters of one algorithm run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    pub alpha: f64,
    /// Rounds per aDFL stage.
    pub max_iter: usize,
    /// Standard DFL rounds used to build the initial estimator.
    pub init_iters: usize,
    pub stages: usize,
    pub lambda: LambdaChoice,
    pub renormalize: bool,
    /// Stop once no client moves more than this in a round.
    pub early_stop: Option<f64>,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm, alpha: f64, max_iter: usize) -> Self {
        AlgoConfig {
            algorithm,
            alpha,
            max_iter,
            init_iters: 200,
            stages: 1,
            lambda: LambdaChoice::Named(LambdaRule::LogN),
            renormalize: true,
            early_stop: None,
        }
    }

    /// Total number of communication rounds. Baselines run this many rounds
    /// so that every algorithm gets the same budget as aDFL.
    pub fn total_rounds(&self) -> usize {
        self.init_iters + self.stages * self.max_iter
    }

    pub fn validate(&self, adjacency: &Adjacency) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("learning rate {} must be > 0", self.alpha)));
        }
        if self.stages == 0 {
            return Err(Error::invalid("stage count must be at least 1"));
        }
        if let LambdaChoice::Fixed(v) = self.lambda {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("lambda_n {v} must be >= 0")));
            }
        }
        match self.algorithm {
            Algorithm::BridgeT { trim_b } => {
                let min_count = adjacency.min_in_degree() + 1;
                if 2 * trim_b >= min_count {
                    return Err(Error::invalid(format!(
                        "trim level {trim_b} too large for minimum in-degree {min_count}"
                    )));
                }
            }
            Algorithm::ClippedGossip {
                tau: Tau::Fixed(tau),
            } => {
                if !(tau >= 0.0) {
                    return Err(Error::invalid(format!("clipping radius {tau} must be >= 0")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Receives every state an algorithm passes through, starting at `t = 0`.
pub trait Observer {
    fn observe(&mut self, state: &FleetState);
}

impl<F: FnMut(&FleetState)> Observer for F {
    fn observe(&mut self, state: &FleetState) {
        self(state)
    }
}

/// Discards everything.
pub struct NoTrace;

impl Observer for NoTrace {
    fn observe(&mut self, _: &FleetState) {}
}

/// Keeps every `every`-th state.
#[derive(Debug, Clone)]
pub struct TraceRecorder {
    pub every: usize,
    pub states: Vec<FleetState>,
}

impl TraceRecorder {
    pub fn new(every: usize) -> Self {
        TraceRecorder {
            every: every.max(1),
            states: Vec::new(),
        }
    }
}

impl Observer for TraceRecorder {
    fn observe(&mut self, state: &FleetState) {
        if state.t % self.every == 0 {
            self.states.push(state.clone());
        }
    }
}

/// Result of running an algorithm to completion.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub final_state: FleetState,
    /// Trust weights used in each aDFL stage (empty for baselines).
    pub stage_weights: Vec<TrustWeights>,
    /// Estimates aDFL started its first stage from.
    pub initial: Option<Vec<ParamVector>>,
    pub lambda_n: Option<f64>,
    pub renorm: Vec<RenormReport>,
}

/// One synchronous round of the given baseline or DFL rule.
fn baseline_round(
    state: &FleetState,
    adjacency: &Adjacency,
    w: &WeightMatrix,
    objectives: &[Objective],
    cfg: &AlgoConfig,
) -> Result<FleetState> {
    match cfg.algorithm {
        Algorithm::Dfl | Algorithm::Adfl => dfl_step(state, w, objectives, cfg.alpha),
        Algorithm::BridgeM => bridge_step(state, adjacency, objectives, cfg.alpha, BridgeVariant::Median),
        Algorithm::BridgeT { trim_b } => bridge_step(
            state,
            adjacency,
            objectives,
            cfg.alpha,
            BridgeVariant::Trimmed(trim_b),
        ),
        Algorithm::ClippedGossip { tau } => clipped_gossip_step(state, w, objectives, cfg.alpha, tau),
    }
}

/// Iterate a round function from `state`, reporting every state.
pub(crate) fn iterate<F>(
    mut state: FleetState,
    rounds: usize,
    early_stop: Option<f64>,
    observer: &mut dyn Observer,
    mut round: F,
) -> Result<FleetState>
where
    F: FnMut(&FleetState) -> Result<FleetState>,
{
    for _ in 0..rounds {
        let next = round(&state)?;
        let moved = early_stop.map(|_| next.max_movement(&state));
        state = next;
        observer.observe(&state);
        if let (Some(tol), Some(moved)) = (early_stop, moved) {
            if moved < tol {
                break;
            }
        }
    }
    Ok(state)
}

/// Run DFL or a robust baseline for [`AlgoConfig::total_rounds`] rounds from
/// all-zero estimates.
pub fn run_baseline(
    objectives: &[Objective],
    adjacency: &Adjacency,
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    cfg.validate(adjacency)?;
    let p = objectives.first().map_or(0, |o| o.p());
    let start = FleetState::zeros(objectives.len(), p);
    observer.observe(&start);
    let final_state = iterate(start, cfg.total_rounds(), cfg.early_stop, observer, |s| {
        baseline_round(s, adjacency, w, objectives, cfg)
    })?;
    Ok(RunOutcome {
        final_state,
        stage_weights: Vec::new(),
        initial: None,
        lambda_n: None,
        renorm: Vec::new(),
    })
}

/// Dispatch on [`AlgoConfig::algorithm`]. `lambda_n` must already be
/// resolved for aDFL.
pub fn run_algorithm(
    objectives: &[Objective],
    adjacency: &Adjacency,
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    lambda_n: f64,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    match cfg.algorithm {
        Algorithm::Adfl => run_multistage_adfl(objectives, adjacency, w, cfg, lambda_n, observer),
        _ => run_baseline(objectives, adjacency, w, cfg, observer),
    }
}

pub(crate) fn check_finite(state: &FleetState, algorithm: &str) -> Result<()> {
    for (m, theta) in state.thetas.iter().enumerate() {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                algorithm: algorithm.to_string(),
                iteration: state.t,
                client: m,
            });
        }
    }
    Ok(())
}
