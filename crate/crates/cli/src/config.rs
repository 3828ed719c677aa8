//! Run configuration read from a TOML file. Every field has a default, so
//! an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subrank::data::DatasetFormat;
use subrank::llm::ClientConfig;
use subrank::metrics::{CsProbabilities, DEFAULT_BINS};
use subrank::scorer::{Aggregation, Backend, ScorerConfig, GPTSCORE_PARAPHRASE_TEMPLATE};
use subrank::stats::{DEFAULT_ALPHA, K_S_BENCHMARK};
use subrank::toy::{ToyConfig, ToyTraining};
use subrank::train::TrainConfig;
use subrank::SamplingPlan;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub scorer: ScorerSection,
    pub data: DataSection,
    pub sampling: SamplingPlan,
    pub eval: EvalSection,
    pub stat: StatSection,
    pub train: TrainConfig,
    pub llm: ClientConfig,
    pub toy: ToySection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Masked LM checkpoint.
    pub checkpoint: Option<PathBuf>,
    /// Name used in reports; defaults to the checkpoint file stem.
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    pub checkpoint: Option<PathBuf>,
    pub backend: Backend,
    pub model_id: String,
    pub aggregation: Aggregation,
    /// Only for `CAUSAL_LM_PROMPTED`; defaults to the paraphrase template.
    pub prompt_template: Option<String>,
    pub cache: Option<PathBuf>,
}

impl Default for ScorerSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            backend: Backend::Seq2seqLl,
            model_id: "scorer".into(),
            aggregation: Aggregation::Sum,
            prompt_template: None,
            cache: None,
        }
    }
}

impl ScorerSection {
    pub fn scorer_config(&self) -> ScorerConfig {
        let prompt_template = match self.backend {
            Backend::Seq2seqLl => self.prompt_template.clone(),
            Backend::CausalLmPrompted => Some(
                self.prompt_template
                    .clone()
                    .unwrap_or_else(|| GPTSCORE_PARAPHRASE_TEMPLATE.to_string()),
            ),
        };
        ScorerConfig {
            backend: self.backend,
            model_id: self.model_id.clone(),
            aggregation: self.aggregation,
            prompt_template,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub format: String,
    pub name: Option<String>,
    pub heldout: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            format: "sws".into(),
            name: None,
            heldout: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub cs_probabilities: CsProbabilities,
    pub bins: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            cs_probabilities: CsProbabilities::default(),
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatSection {
    pub k_s: usize,
    pub alpha: f64,
}

impl Default for StatSection {
    fn default() -> Self {
        Self {
            k_s: K_S_BENCHMARK,
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySection {
    pub world: ToyConfig,
    pub training: ToyTraining,
    pub seed: u64,
    pub train_sentences: usize,
    pub heldout_sentences: usize,
}

impl Default for ToySection {
    fn default() -> Self {
        Self {
            world: ToyConfig::default(),
            training: ToyTraining::default(),
            seed: 1,
            train_sentences: 200,
            heldout_sentences: 50,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scorer_cache: Option<PathBuf>,
    pub k_s: Option<usize>,
    pub alpha: Option<f64>,
}

impl RunConfig {
    /// Reads and validates `path`, resolving relative paths against its
    /// directory. `None` gives the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            let cfg = Self::default();
            cfg.validate()?;
            return Ok(cfg);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut self.model.checkpoint);
        fix(&mut self.scorer.checkpoint);
        fix(&mut self.scorer.cache);
        fix(&mut self.data.path);
        fix(&mut self.data.heldout);
        fix(&mut self.llm.archive);
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.sampling.rng_seed = seed;
            self.train.rng_seed = seed;
            self.toy.seed = seed;
        }
        if let Some(p) = &o.scorer_cache {
            self.scorer.cache = Some(p.clone());
        }
        if let Some(k) = o.k_s {
            self.stat.k_s = k;
        }
        if let Some(a) = o.alpha {
            self.stat.alpha = a;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.sampling.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.scorer
            .scorer_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if let Err(e) = self.data.format.parse::<DatasetFormat>() {
            return bad(e.to_string());
        }
        if self.stat.k_s < 2 {
            return bad(format!("stat.k_s must be >= 2, got {}", self.stat.k_s));
        }
        if !(self.stat.alpha > 0.0 && self.stat.alpha < 1.0) {
            return bad(format!("stat.alpha must be in (0, 1), got {}", self.stat.alpha));
        }
        if self.eval.bins == 0 {
            return bad("eval.bins must be >= 1".into());
        }
        if self.llm.max_retries == 0 {
            return bad("llm.max_retries must be >= 1".into());
        }
        Ok(())
    }

    pub fn dataset_format(&self) -> DatasetFormat {
        self.data.format.parse().expect("validated")
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Config(format!("{key} is required for this command")))
    }
}
