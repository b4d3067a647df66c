//! Experiment configuration (TOML).
//!
//! ```toml
//! master_seed = 7
//! replications = 20
//!
//! [model]
//! p = 50
//!
//! [data]
//! n = 100
//! m = 100
//! corruptions = ["bf", "ood", "mp"]
//! rho = [0.0, 0.1, 0.2, 0.3]
//!
//! [[topology]]
//! kind = "directed_circle"
//! d = 5
//!
//! [training]
//! alpha = 0.1
//! max_iter = 500
//!
//! [[algorithm]]
//! kind = "dfl"
//!
//! [[algorithm]]
//! kind = "adfl"
//! stages = 2
//! lambda = "cv"
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgoConfig, Algorithm, LambdaChoice, LambdaRule, Tau};
use crate::data::{Corruption, CorruptionSpec, CovariateSpec, OodResponse, TrueModel};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::topology::{Adjacency, TopologySpec};

fn default_replications() -> usize {
    20
}

fn default_log_every() -> usize {
    10
}

fn default_noise_sd() -> f64 {
    1.0
}

fn default_init_iters() -> usize {
    200
}

fn default_stages() -> usize {
    1
}

fn default_lambda() -> LambdaChoice {
    LambdaChoice::Named(LambdaRule::Cv)
}

fn default_true() -> bool {
    true
}

fn default_rho_hat() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Output directory; the CLI `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Log metrics every `log_every` rounds (and always at the last round).
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Export adjacency and weight matrices as CSV next to the outputs.
    #[serde(default)]
    pub export_matrices: bool,
    pub model: ModelSection,
    pub data: DataSection,
    pub topology: Vec<TopologySpec>,
    pub training: TrainingSection,
    pub algorithm: Vec<AlgorithmEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub p: usize,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub covariates: CovariateSpec,
    pub corruptions: Vec<Corruption>,
    pub rho: Vec<f64>,
    #[serde(default)]
    pub ood_response: OodResponse,
}

/// Defaults shared by every algorithm entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub alpha: f64,
    pub max_iter: usize,
    #[serde(default = "default_init_iters")]
    pub init_iters: usize,
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaChoice,
    /// Candidate grid for `lambda = "cv"`; defaults to the admissible range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_true")]
    pub renormalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Dfl,
    Adfl,
    BridgeM,
    BridgeT,
    ClippedGossip,
}

/// One `[[algorithm]]` table. Unset hyperparameters fall back to
/// `[training]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    pub kind: AlgorithmKind,
    /// Name in the output tables; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renormalize: Option<bool>,
    /// BRIDGE-T trim level; defaults to `floor(rho_hat * min in-degree)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trim_b: Option<usize>,
    /// Assumed abnormal fraction used to size the default trim level.
    #[serde(default = "default_rho_hat")]
    pub rho_hat: f64,
    /// Clipping radius for clipped gossip; defaults to `"auto"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Tau>,
}

impl AlgorithmEntry {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| {
            match self.kind {
                AlgorithmKind::Dfl => "dfl",
                AlgorithmKind::Adfl => "adfl",
                AlgorithmKind::BridgeM => "bridge_m",
                AlgorithmKind::BridgeT => "bridge_t",
                AlgorithmKind::ClippedGossip => "clipped_gossip",
            }
            .to_string()
        })
    }

    /// Concrete hyperparameters for a given graph.
    pub fn resolve(&self, training: &TrainingSection, adjacency: &Adjacency) -> AlgoConfig {
        let algorithm = match self.kind {
            AlgorithmKind::Dfl => Algorithm::Dfl,
            AlgorithmKind::Adfl => Algorithm::Adfl,
            AlgorithmKind::BridgeM => Algorithm::BridgeM,
            AlgorithmKind::BridgeT => Algorithm::BridgeT {
                trim_b: self.trim_b.unwrap_or_else(|| {
                    (self.rho_hat * adjacency.min_in_degree() as f64).floor() as usize
                }),
            },
            AlgorithmKind::ClippedGossip => Algorithm::ClippedGossip {
                tau: self.tau.unwrap_or(Tau::Auto),
            },
        };
        AlgoConfig {
            algorithm,
            alpha: self.alpha.unwrap_or(training.alpha),
            max_iter: self.max_iter.unwrap_or(training.max_iter),
            init_iters: self.init_iters.unwrap_or(training.init_iters),
            stages: self.stages.unwrap_or(training.stages),
            lambda: self.lambda.clone().unwrap_or_else(|| training.lambda.clone()),
            renormalize: self.renormalize.unwrap_or(training.renormalize),
            early_stop: training.early_stop,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn true_model(&self) -> Result<TrueModel> {
        TrueModel::new(self.model.p, self.model.noise_sd, self.model.loss)
    }

    pub fn corruption_spec(&self, kind: Corruption, rho: f64) -> CorruptionSpec {
        CorruptionSpec {
            kind,
            rho,
            ood_response: self.data.ood_response,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.replications < 1 {
            return fail("replications must be at least 1".into());
        }
        if self.log_every < 1 {
            return fail("log_every must be at least 1".into());
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        if self.model.p == 0 {
            return fail("model.p must be positive".into());
        }
        if !(self.model.noise_sd > 0.0) || !self.model.noise_sd.is_finite() {
            return fail(format!("model.noise_sd {} must be > 0", self.model.noise_sd));
        }
        if self.data.n == 0 || self.data.m == 0 {
            return fail("data.n and data.m must be positive".into());
        }
        if self.data.corruptions.is_empty() {
            return fail("data.corruptions is empty".into());
        }
        if self.data.rho.is_empty() {
            return fail("data.rho is empty".into());
        }
        for &rho in &self.data.rho {
            if !(0.0..0.5).contains(&rho) {
                return fail(format!("rho {rho} outside [0, 0.5)"));
            }
        }
        let corruptions: BTreeSet<_> = self.data.corruptions.iter().collect();
        if corruptions.len() != self.data.corruptions.len() {
            return fail("data.corruptions lists a kind twice".into());
        }
        if self.topology.is_empty() {
            return fail("at least one [[topology]] is required".into());
        }
        for topo in &self.topology {
            topo.validate(self.data.m).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.algorithm.is_empty() {
            return fail("at least one [[algorithm]] is required".into());
        }
        let mut labels = BTreeSet::new();
        for entry in &self.algorithm {
            let label = entry.label();
            if label.is_empty() || label.contains(',') || label.contains('"') {
                return fail(format!("algorithm label {label:?} is not a plain name"));
            }
            if !labels.insert(label.clone()) {
                return fail(format!("algorithm label {label:?} is used twice"));
            }
            if !(0.0..0.5).contains(&entry.rho_hat) {
                return fail(format!("{label}: rho_hat {} outside [0, 0.5)", entry.rho_hat));
            }
        }
        if let Some(grid) = &self.training.lambda_grid {
            if grid.is_empty() || grid.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return fail("training.lambda_grid must hold non-negative numbers".into());
            }
        }
        // Hyperparameters are checked against the deterministic graphs here;
        // random graphs are checked again once built.
        for topo in &self.topology {
            if let TopologySpec::DirectedCircle { d } = *topo {
                let adjacency = crate::topology::build_directed_circle(self.data.m, d)?;
                for entry in &self.algorithm {
                    entry
                        .resolve(&self.training, &adjacency)
                        .validate(&adjacency)
                        .map_err(|e| Error::Config(format!("{}: {e}", entry.label())))?;
                }
            }
        }
        if self.data.n < 10 && self.uses_cv() {
            return fail("lambda = \"cv\" needs at least 10 samples per client".into());
        }
        Ok(())
    }

    fn uses_cv(&self) -> bool {
        self.algorithm.iter().any(|e| {
            e.kind == AlgorithmKind::Adfl
                && e.lambda.as_ref().unwrap_or(&self.training.lambda) == &LambdaChoice::Named(LambdaRule::Cv)
        })
    }
}
