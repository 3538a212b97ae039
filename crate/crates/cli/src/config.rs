//! TOML run configuration.
//!
//! Every section is optional and falls back to built-in defaults, but a
//! present `[model]` section must name `n` and `d`. Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! out = "results"
//!
//! [model]
//! n = 8
//! d = 8
//! heads = 2
//! bound = 1.0
//! variant = "dot"        # dot | l2 | scsa
//! layers = 1
//! init = "gaussian"      # gaussian | zeros
//! weight_seed = 0
//!
//! [model.scsa]
//! nabla = 1.0
//! nu = 1.0
//! tau = 1.0
//! window = 4
//!
//! [experiment]
//! poolings = ["avg", "sum", "max", "last"]
//! eps = [0.001, 0.01, 0.1]
//! sigma = [0.1]
//! trials = 200
//! fd_step = 1e-5
//! parallel = true
//!
//! [training]
//! task = "last-token"    # global-mean | last-token | mixed
//! pooling = "weighted-avg"
//! samples = 512
//! lr = 0.8
//! epochs = 2000
//! batch = 0              # 0 = full batch
//! backbone = "zeros"     # zeros | model
//! ```

use std::path::{Path, PathBuf};

use expressivity::model::{ModelConfig, ScsaParams, Variant};
use expressivity::pooling::PoolingSpec;
use expressivity::trainer::{TaskKind, TrainConfig, DEFAULT_LEARNING_RATE};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub training: TrainingSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Gaussian,
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n: usize,
    pub d: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::bound")]
    pub bound: f64,
    #[serde(default = "defaults::variant")]
    pub variant: String,
    #[serde(default = "defaults::layers")]
    pub layers: usize,
    #[serde(default = "defaults::init")]
    pub init: Init,
    #[serde(default)]
    pub weight_seed: u64,
    #[serde(default)]
    pub scsa: Option<ScsaSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScsaSection {
    #[serde(default = "defaults::one")]
    pub nabla: f64,
    #[serde(default = "defaults::one")]
    pub nu: f64,
    #[serde(default = "defaults::one")]
    pub tau: f64,
    #[serde(default = "defaults::window")]
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "defaults::poolings")]
    pub poolings: Vec<String>,
    #[serde(default = "defaults::eps")]
    pub eps: Vec<f64>,
    #[serde(default = "defaults::sigma")]
    pub sigma: Vec<f64>,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::fd_step")]
    pub fd_step: f64,
    #[serde(default = "defaults::yes")]
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingBackbone {
    /// Zero attention and feed-forward weights: two centre-norms.
    Zeros,
    /// The `[model]` section's weights.
    Model,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "defaults::task")]
    pub task: String,
    #[serde(default = "defaults::learnable")]
    pub pooling: String,
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub batch: usize,
    #[serde(default = "defaults::backbone")]
    pub backbone: TrainingBackbone,
    /// Row-norm bound of the task inputs. Defaults to `√d`, which makes every
    /// entry uniform on `[0, 1]`.
    #[serde(default)]
    pub input_bound: Option<f64>,
}

mod defaults {
    use super::{Init, TrainingBackbone};

    pub fn heads() -> usize {
        2
    }
    pub fn bound() -> f64 {
        1.0
    }
    pub fn variant() -> String {
        "dot".into()
    }
    pub fn layers() -> usize {
        1
    }
    pub fn init() -> Init {
        Init::Gaussian
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn window() -> usize {
        4
    }
    pub fn poolings() -> Vec<String> {
        ["avg", "sum", "max", "last"].map(String::from).to_vec()
    }
    pub fn eps() -> Vec<f64> {
        vec![1e-3, 1e-2, 1e-1]
    }
    pub fn sigma() -> Vec<f64> {
        vec![0.1]
    }
    pub fn trials() -> usize {
        200
    }
    pub fn fd_step() -> f64 {
        1e-5
    }
    pub fn yes() -> bool {
        true
    }
    pub fn task() -> String {
        "last-token".into()
    }
    pub fn learnable() -> String {
        "weighted-avg".into()
    }
    pub fn samples() -> usize {
        512
    }
    pub fn lr() -> f64 {
        super::DEFAULT_LEARNING_RATE
    }
    pub fn epochs() -> usize {
        2000
    }
    pub fn backbone() -> TrainingBackbone {
        TrainingBackbone::Zeros
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n: 8,
            d: 8,
            heads: defaults::heads(),
            bound: defaults::bound(),
            variant: defaults::variant(),
            layers: defaults::layers(),
            init: defaults::init(),
            weight_seed: 0,
            scsa: None,
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            poolings: defaults::poolings(),
            eps: defaults::eps(),
            sigma: defaults::sigma(),
            trials: defaults::trials(),
            fd_step: defaults::fd_step(),
            parallel: true,
        }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            task: defaults::task(),
            pooling: defaults::learnable(),
            samples: defaults::samples(),
            lr: DEFAULT_LEARNING_RATE,
            epochs: defaults::epochs(),
            batch: 0,
            backbone: defaults::backbone(),
            input_bound: None,
        }
    }
}

/// Library errors keyed by a bare field name are re-keyed under `section`.
fn in_section(section: &str, err: expressivity::Error) -> CliError {
    match err {
        expressivity::Error::Config { key, message } => CliError::Config {
            key: format!("{section}.{key}"),
            message,
        },
        other => CliError::Library(other),
    }
}

/// Library config errors re-keyed to the exact config path `key`.
fn rekey(key: &str, err: expressivity::Error) -> CliError {
    match err {
        expressivity::Error::Config { message, .. } => config_err(key, message),
        other => CliError::Library(other),
    }
}

fn config_err(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        self.model.variant.parse().map_err(|e| rekey("model.variant", e))
    }

    fn scsa(&self, variant: Variant) -> Option<ScsaParams> {
        match (variant, self.model.scsa) {
            (_, Some(s)) => Some(ScsaParams {
                nabla: s.nabla,
                nu: s.nu,
                tau: s.tau,
                window: s.window,
            }),
            (Variant::Scsa, None) => Some(ScsaParams::default()),
            _ => None,
        }
    }

    /// The `[model]` section as a validated model.
    pub fn model(&self) -> Result<ModelConfig, CliError> {
        let m = &self.model;
        let variant = self.variant()?;
        let scsa = self.scsa(variant);
        let built = match m.init {
            Init::Gaussian => ModelConfig::gaussian(m.n, m.d, m.heads, m.bound, variant, m.layers, scsa, m.weight_seed),
            Init::Zeros => ModelConfig::zeros(m.n, m.d, m.heads, m.bound, variant, m.layers, scsa),
        };
        built.map_err(|e| in_section("model", e))
    }

    pub fn poolings(&self) -> Result<Vec<PoolingSpec>, CliError> {
        if self.experiment.poolings.is_empty() {
            return Err(config_err("experiment.poolings", "at least one pooling is required"));
        }
        self.experiment
            .poolings
            .iter()
            .map(|s| s.parse().map_err(|e| rekey("experiment.poolings", e)))
            .collect()
    }

    /// Poolings with a closed-form factor; learnable ones are a config error here.
    pub fn fixed_poolings(&self) -> Result<Vec<PoolingSpec>, CliError> {
        let specs = self.poolings()?;
        if let Some(s) = specs.iter().find(|s| s.is_learnable()) {
            return Err(config_err(
                "experiment.poolings",
                format!("{s} pooling has no closed-form bound"),
            ));
        }
        Ok(specs)
    }

    pub fn eps_grid(&self) -> Result<&[f64], CliError> {
        let eps = &self.experiment.eps;
        if eps.is_empty() || eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(config_err(
                "experiment.eps",
                "must be a non-empty list of positive radii",
            ));
        }
        if eps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(config_err("experiment.eps", "must be strictly increasing"));
        }
        Ok(eps)
    }

    pub fn sigma_grid(&self) -> Result<&[f64], CliError> {
        let sigma = &self.experiment.sigma;
        if sigma.is_empty() || sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(config_err(
                "experiment.sigma",
                "must be a non-empty list of positive thresholds",
            ));
        }
        Ok(sigma)
    }

    pub fn trials(&self) -> Result<usize, CliError> {
        if self.experiment.trials == 0 {
            return Err(config_err("experiment.trials", "must be at least 1"));
        }
        Ok(self.experiment.trials)
    }

    pub fn fd_step(&self) -> Result<f64, CliError> {
        let h = self.experiment.fd_step;
        if !(h.is_finite() && h > 0.0) {
            return Err(config_err("experiment.fd_step", "must be positive"));
        }
        Ok(h)
    }

    pub fn task(&self) -> Result<TaskKind, CliError> {
        self.training.task.parse().map_err(CliError::from)
    }

    pub fn learnable_pooling(&self) -> Result<PoolingSpec, CliError> {
        let spec: PoolingSpec = self
            .training
            .pooling
            .parse()
            .map_err(|e| rekey("training.pooling", e))?;
        if !spec.is_learnable() {
            return Err(config_err(
                "training.pooling",
                format!("{spec} pooling has nothing to train"),
            ));
        }
        Ok(spec)
    }

    pub fn input_bound(&self) -> Result<f64, CliError> {
        let b = self.training.input_bound.unwrap_or((self.model.d as f64).sqrt());
        if !(b.is_finite() && b > 0.0) {
            return Err(config_err("training.input_bound", "must be positive"));
        }
        Ok(b)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let tc = TrainConfig {
            learning_rate: self.training.lr,
            epochs: self.training.epochs,
            batch: self.training.batch,
            seed: self.seed,
        };
        tc.validate()?;
        if self.training.samples == 0 {
            return Err(config_err("training.samples", "must be at least 1"));
        }
        Ok(tc)
    }

    /// Backbone used for training, with inputs bounded by [`Self::input_bound`].
    pub fn training_model(&self) -> Result<ModelConfig, CliError> {
        let base = self.model()?;
        let bound = self.input_bound()?;
        let layers = match self.training.backbone {
            TrainingBackbone::Model => base.layers().to_vec(),
            TrainingBackbone::Zeros => {
                let zeros = ModelConfig::zeros(
                    base.n(),
                    base.d(),
                    base.num_heads(),
                    bound,
                    base.variant(),
                    base.num_layers(),
                    base.scsa().copied(),
                )
                .map_err(|e| in_section("model", e))?;
                zeros.layers().to_vec()
            }
        };
        ModelConfig::new(
            base.n(),
            base.d(),
            base.num_heads(),
            bound,
            base.variant(),
            layers,
            base.scsa().copied(),
        )
        .map_err(|e| in_section("model", e))
    }
}
