//! Adaptive trust weights and the (multi-stage) aDFL driver.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::topology::{Adjacency, WeightMatrix};
use crate::ParamVector;

use super::{
    dfl_step, iterate, weighted_dfl_step, AlgoConfig, FleetState, LambdaChoice, NoTrace, Observer,
    RunOutcome, TrustWeights,
};

/// `omega_m = exp(-lambda_n * ||grad L_m(theta_init_m)||)`.
pub fn adaptive_weights(
    objectives: &[Objective],
    init: &[ParamVector],
    lambda_n: f64,
) -> Result<TrustWeights> {
    if !(lambda_n >= 0.0) {
        return Err(Error::invalid(format!("lambda_n {lambda_n} must be >= 0")));
    }
    if objectives.len() != init.len() {
        return Err(Error::DimensionMismatch {
            expected: objectives.len(),
            actual: init.len(),
        });
    }
    let omega = objectives
        .iter()
        .zip(init)
        .map(|(obj, theta)| Ok((-lambda_n * obj.gradient(theta)?.norm()).exp()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(TrustWeights {
        omega,
        lambda_n,
        normalized: false,
    })
}

/// Outcome of the distributed max-consensus behind weight renormalization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenormReport {
    /// Rounds in which at least one client's running maximum changed.
    pub rounds: usize,
    /// Whether every client converged to the global maximum.
    pub global: bool,
}

/// Divide each weight by the network-wide maximum, obtained by max-consensus
/// over in-neighbors. On graphs that are not strongly connected each client
/// uses the largest weight it can reach and the report flags it.
pub fn renormalize_weights(tw: &TrustWeights, w: &WeightMatrix) -> Result<(TrustWeights, RenormReport)> {
    let m = w.m();
    if tw.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: tw.len(),
        });
    }
    let mut running = tw.omega.clone();
    let mut rounds = 0;
    for _ in 0..m {
        let next: Vec<f64> = (0..m)
            .map(|i| {
                w.row(i)
                    .iter()
                    .map(|&(k, _)| running[k])
                    .fold(running[i], f64::max)
            })
            .collect();
        if next == running {
            break;
        }
        running = next;
        rounds += 1;
    }
    let global_max = tw.omega.iter().copied().fold(0.0, f64::max);
    let global = running.iter().all(|&v| v == global_max);
    if !global {
        log::warn!("max-consensus did not reach the global maximum; graph is not strongly connected");
    }
    let omega = tw
        .omega
        .iter()
        .zip(&running)
        .map(|(&o, &mx)| if mx > 0.0 { o / mx } else { 0.0 })
        .collect();
    Ok((
        TrustWeights {
            omega,
            lambda_n: tw.lambda_n,
            normalized: true,
        },
        RenormReport { rounds, global },
    ))
}

fn stage1_initial(
    objectives: &[Objective],
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    observer: &mut dyn Observer,
) -> Result<FleetState> {
    let p = objectives.first().map_or(0, |o| o.p());
    let start = FleetState::zeros(objectives.len(), p);
    observer.observe(&start);
    iterate(start, cfg.init_iters, cfg.early_stop, observer, |s| {
        dfl_step(s, w, objectives, cfg.alpha)
    })
}

/// Run `stages` aDFL stages starting from `init`. Each stage recomputes the
/// trust weights at its starting point and keeps them fixed for `max_iter`
/// rounds; the final estimates of one stage initialize the next.
///
/// `init.t` is preserved so traces continue the round count of whatever
/// produced the initial estimates.
pub fn run_multistage_from_init(
    objectives: &[Objective],
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    lambda_n: f64,
    stages: usize,
    init: FleetState,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    if stages == 0 {
        return Err(Error::invalid("stage count must be at least 1"));
    }
    let initial = init.thetas.clone();
    let mut state = init;
    let mut stage_weights = Vec::with_capacity(stages);
    let mut renorm = Vec::new();
    for _ in 0..stages {
        let raw = adaptive_weights(objectives, &state.thetas, lambda_n)?;
        let weights = if cfg.renormalize {
            let (tw, report) = renormalize_weights(&raw, w)?;
            renorm.push(report);
            tw
        } else {
            raw
        };
        state.weights = Some(weights.clone());
        state = iterate(state, cfg.max_iter, cfg.early_stop, observer, |s| {
            weighted_dfl_step(s, w, objectives, cfg.alpha, &weights)
        })?;
        stage_weights.push(weights);
    }
    Ok(RunOutcome {
        final_state: state,
        stage_weights,
        initial: Some(initial),
        lambda_n: Some(lambda_n),
        renorm,
    })
}

/// Single-stage aDFL from given initial estimates.
pub fn run_adfl_from_init(
    objectives: &[Objective],
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    lambda_n: f64,
    init: FleetState,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    run_multistage_from_init(objectives, w, cfg, lambda_n, 1, init, observer)
}

/// aDFL: `init_iters` standard DFL rounds from zero produce the initial
/// estimators, then one weighted stage of `max_iter` rounds.
pub fn run_adfl(
    objectives: &[Objective],
    adjacency: &Adjacency,
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    lambda_n: f64,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    cfg.validate(adjacency)?;
    let init = stage1_initial(objectives, w, cfg, observer)?;
    run_adfl_from_init(objectives, w, cfg, lambda_n, init, observer)
}

/// Multi-stage aDFL with `cfg.stages` stages.
pub fn run_multistage_adfl(
    objectives: &[Objective],
    adjacency: &Adjacency,
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    lambda_n: f64,
    observer: &mut dyn Observer,
) -> Result<RunOutcome> {
    cfg.validate(adjacency)?;
    let init = stage1_initial(objectives, w, cfg, observer)?;
    run_multistage_from_init(objectives, w, cfg, lambda_n, cfg.stages, init, observer)
}

/// Eight geometrically spaced values, in increasing order, covering the
/// admissible scale `log N .. sqrt(n) M^{-1/8}`.
///
/// The range only holds up to constants and its endpoints cross at moderate
/// `n`; the grid always runs from the smaller endpoint to the larger.
pub fn default_lambda_grid(n: usize, m: usize) -> Vec<f64> {
    let a = ((n * m) as f64).ln();
    let b = (n as f64).sqrt() * (m as f64).powf(-0.125);
    let (lo, hi) = (a.min(b), a.max(b));
    (0..8)
        .map(|i| lo * (hi / lo).powf(i as f64 / 7.0))
        .collect()
}

/// Choose `lambda_n` by holdout validation.
///
/// Each client keeps a random 20% of its rows aside. For each candidate the
/// full multi-stage aDFL runs on the remaining rows; every client scores its
/// own final estimate on its holdout and the candidate's score is the median
/// over clients. Ties go to the larger candidate.
pub fn select_lambda_cv<R: Rng + ?Sized>(
    objectives: &[Objective],
    adjacency: &Adjacency,
    w: &WeightMatrix,
    cfg: &AlgoConfig,
    grid: &[f64],
    rng: &mut R,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let mut train = Vec::with_capacity(objectives.len());
    let mut holdout = Vec::with_capacity(objectives.len());
    for obj in objectives {
        let n = obj.data().n();
        if n < 10 {
            return Err(Error::invalid(format!(
                "cross-validation needs at least 10 samples per client, got {n}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let k = n / 5;
        let (held, kept) = idx.split_at(k);
        let mut kept = kept.to_vec();
        let mut held = held.to_vec();
        kept.sort_unstable();
        held.sort_unstable();
        train.push(Objective::new(obj.kind(), obj.data().select_rows(&kept)));
        holdout.push(Objective::new(obj.kind(), obj.data().select_rows(&held)));
    }

    let mut probe = cfg.clone();
    probe.lambda = LambdaChoice::Fixed(0.0);
    probe.validate(adjacency)?;
    let init = stage1_initial(&train, w, &probe, &mut NoTrace)?;

    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let outcome = run_multistage_from_init(
            &train,
            w,
            &probe,
            lambda,
            probe.stages,
            init.clone(),
            &mut NoTrace,
        )?;
        let mut scores = outcome
            .final_state
            .thetas
            .iter()
            .zip(&holdout)
            .map(|(theta, obj)| obj.loss(theta))
            .collect::<Result<Vec<f64>>>()?;
        scores.sort_by(|a, b| a.total_cmp(b));
        let k = scores.len();
        let score = if k % 2 == 1 {
            scores[k / 2]
        } else {
            0.5 * (scores[k / 2 - 1] + scores[k / 2])
        };
        log::debug!("lambda {lambda}: median holdout loss {score}");
        best = match best {
            Some((s, l)) if score > s || (score == s && lambda <= l) => Some((s, l)),
            _ => Some((score, lambda)),
        };
    }
    Ok(best.map(|(_, l)| l).expect("grid is non-empty"))
}
