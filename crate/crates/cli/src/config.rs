//! Run configuration: a single JSON document, with dotted-path overrides
//! from the command line (`--set train.val_every=100`).

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use tarn_core::comparison::Measure;
use tarn_core::data::{self, Dataset, SyntheticSpec};
use tarn_core::episodic::{EpisodeSpec, TrainConfig};
use tarn_core::error::{Result, TarnError};
use tarn_core::model::{Mode, ModelConfig, Variant};
use tarn_core::optim::{LrSchedule, OptimizerKind};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    /// Feature width; defaults to the dataset's width.
    pub d_in: Option<usize>,
    pub hidden: Option<usize>,
    pub nn_hidden: Option<usize>,
    pub relation_hidden: Option<usize>,
    /// Semantic vector width; defaults to the dataset's width (ZSL).
    pub d_sem: Option<usize>,
    pub semantic_hidden: Option<usize>,
    pub semantic_out: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSection {
    /// Classes per episode. ZSL episodes always use the whole class pool
    /// (seen classes in training, unseen in testing) and ignore this.
    pub way: usize,
    pub shot: usize,
    /// Query items per episode; defaults to 1 in FSL and 16 in ZSL.
    pub queries: Option<usize>,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        EpisodeSection {
            way: 5,
            shot: 1,
            queries: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub optimizer: Option<OptimizerKind>,
    pub lr_schedule: Option<LrSchedule>,
    pub grad_clip: Option<f64>,
    pub train_episodes: Option<u64>,
    pub val_episodes: Option<u64>,
    pub test_episodes: Option<u64>,
    pub val_every: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// Segment-feature file (`TSF1`).
    pub tsf: Option<PathBuf>,
    /// Semantic-vector file (`TSV1`), for ZSL runs on file data.
    pub tsv: Option<PathBuf>,
    /// Synthetic dataset generated in-process instead of files.
    pub synthetic: Option<SyntheticSpec>,
    pub seen_fraction: Option<f64>,
    pub split_seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub variant: Variant,
    pub measure: Measure,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub episode: EpisodeSection,
    #[serde(default)]
    pub train: TrainSection,
    pub data: DataSection,
    pub out_dir: PathBuf,
    pub seed: u64,
}

/// Parses `path=value` and applies it to a JSON tree, creating intermediate
/// objects as needed. Values parse as JSON first, falling back to strings.
pub fn apply_set(root: &mut serde_json::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        TarnError::Config(format!("--set expects path=value, got '{assignment}'"))
    })?;
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(TarnError::Config(format!("--set path '{path}' is malformed")));
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            TarnError::Config(format!("--set path '{path}' descends into a non-object"))
        })?;
        if i == parts.len() - 1 {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split never yields an empty iterator")
}

/// Reads the config document and applies `--set` overrides.
pub fn load_config(path: &Path, sets: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TarnError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| TarnError::Config(format!("config is not valid JSON: {e}")))?;
    for s in sets {
        apply_set(&mut value, s)?;
    }
    let cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| TarnError::Config(format!("config does not match the schema: {e}")))?;
    Ok(cfg)
}

impl RunConfig {
    /// Loads the dataset from files or generates the synthetic one.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.data.synthetic, &self.data.tsf) {
            (Some(spec), None) => data::generate_synthetic(spec),
            (None, Some(tsf)) => {
                let ds = data::load_dataset(tsf)?;
                match &self.data.tsv {
                    Some(tsv) => ds.with_semantics(data::load_semantics(tsv)?),
                    None => Ok(ds),
                }
            }
            (Some(_), Some(_)) => Err(TarnError::Config(
                "config sets both data.synthetic and data.tsf; pick one".into(),
            )),
            (None, None) => Err(TarnError::Config(
                "config needs either data.synthetic or data.tsf".into(),
            )),
        }
    }

    /// Seen/unseen class partition for this run.
    pub fn split(&self, dataset: &Dataset) -> Result<(Vec<u32>, Vec<u32>)> {
        let fraction = self.data.seen_fraction.unwrap_or(0.5);
        let seed = self.data.split_seed.unwrap_or(self.seed);
        data::split_classes(dataset, fraction, seed)
    }

    /// Resolves the model dimensions against the loaded dataset.
    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig> {
        let d_in = match self.model.d_in {
            Some(d) if d != dataset.d_in() => {
                return Err(TarnError::Config(format!(
                    "model.d_in {d} does not match dataset feature width {}",
                    dataset.d_in()
                )))
            }
            Some(d) => d,
            None => dataset.d_in(),
        };
        let d_sem = if self.mode == Mode::Zsl {
            let from_data = dataset.d_sem();
            match (self.model.d_sem, from_data) {
                (Some(d), Some(dd)) if d != dd => {
                    return Err(TarnError::Config(format!(
                        "model.d_sem {d} does not match dataset semantic width {dd}"
                    )))
                }
                (Some(d), _) => Some(d),
                (None, Some(dd)) => Some(dd),
                (None, None) => {
                    return Err(TarnError::Config(
                        "zsl run needs semantic vectors (data.tsv or synthetic semantic_dim)"
                            .into(),
                    ))
                }
            }
        } else {
            self.model.d_sem
        };
        let cfg = ModelConfig {
            mode: self.mode,
            variant: self.variant,
            measure: self.measure,
            d_in,
            hidden: self.model.hidden.unwrap_or(256),
            nn_hidden: self.model.nn_hidden.unwrap_or(512),
            relation_hidden: self.model.relation_hidden.unwrap_or(256),
            d_sem,
            semantic_hidden: self.model.semantic_hidden.unwrap_or(4096),
            semantic_out: self.model.semantic_out,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Episode shape for a given class pool (training or testing).
    pub fn episode_spec(&self, pool_size: usize) -> EpisodeSpec {
        let way = match self.mode {
            Mode::Fsl => self.episode.way,
            Mode::Zsl => pool_size,
        };
        let queries = self.episode.queries.unwrap_or(match self.mode {
            Mode::Fsl => 1,
            Mode::Zsl => 16,
        });
        EpisodeSpec {
            way,
            shot: match self.mode {
                Mode::Fsl => self.episode.shot,
                Mode::Zsl => 1,
            },
            queries,
            mode: self.mode,
        }
    }

    /// Optimizer, schedule and episode counts with per-mode paper defaults
    /// for anything the config leaves out.
    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = match self.mode {
            Mode::Fsl => TrainConfig::fsl_defaults(self.seed),
            Mode::Zsl => TrainConfig::zsl_defaults(self.seed),
        };
        if let Some(o) = self.train.optimizer {
            cfg.optimizer = o;
        }
        if let Some(s) = &self.train.lr_schedule {
            cfg.lr_schedule = s.clone();
        }
        if let Some(c) = self.train.grad_clip {
            cfg.grad_clip = Some(c);
        }
        if let Some(n) = self.train.train_episodes {
            cfg.train_episodes = n;
        }
        if let Some(n) = self.train.val_episodes {
            cfg.val_episodes = n;
        }
        if let Some(n) = self.train.test_episodes {
            cfg.test_episodes = n;
        }
        if let Some(n) = self.train.val_every {
            cfg.val_every = n;
        }
        cfg
    }
}
