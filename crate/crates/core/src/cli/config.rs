use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{GeneratorSpec, SplitSpec};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::numerics::OptimizerConfig;
use crate::signal::{DEFAULT_HOP, DEFAULT_N_FFT};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    /// Output directory of training, probing and evaluation runs.
    pub run: PathBuf,
    /// Checkpoint read by `probe` and `eval`; defaults to `<run>/checkpoint.egos`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data/synthetic".into(),
            run: "runs/default".into(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            n_fft: DEFAULT_N_FFT,
            hop: DEFAULT_HOP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            optimizer: OptimizerConfig::adam(3e-3),
        }
    }
}

/// Everything a run needs. Serialized verbatim into every metrics file.
///
/// The per-component seeds (generator, split, encoders) are derived from
/// `seed` by [`ExperimentConfig::resolve`], so a single number reproduces a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub n_pairs: usize,
    pub generator: GeneratorSpec,
    pub stft: StftConfig,
    pub video_encoder: EncoderConfig,
    pub motion_encoder: EncoderConfig,
    pub temperature: f64,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub epochs: usize,
    pub freeze: Vec<String>,
    pub split: SplitSpec,
    pub probe: ProbeConfig,
    pub supervised: SupervisedConfig,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let generator = GeneratorSpec::default();
        let g = generator.geometry.video_shape();
        let stft = StftConfig::default();
        let frames = (generator.geometry.imu_samples() - stft.n_fft) / stft.hop + 1;
        let mut cfg = Self {
            paths: Paths::default(),
            n_pairs: 2000,
            video_encoder: EncoderConfig::video(g, 0),
            motion_encoder: EncoderConfig::motion([6, stft.n_fft / 2 + 1, frames], 0),
            generator,
            stft,
            temperature: 0.2,
            optimizer: OptimizerConfig::adam(3e-3),
            batch_size: 32,
            eval_batch_size: 32,
            epochs: 30,
            freeze: Vec::new(),
            split: SplitSpec::default(),
            probe: ProbeConfig::default(),
            supervised: SupervisedConfig::default(),
            seed: 0,
            deterministic: true,
        };
        cfg.resolve();
        cfg
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve();
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Sets one key addressed by a dotted path, e.g. `generator.video_noise=0.1`.
    /// The value is parsed as JSON, falling back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        let mut root = self.to_json();
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = match slot {
                Value::Object(map) => map
                    .get_mut(key)
                    .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?,
                Value::Array(items) => key
                    .parse::<usize>()
                    .ok()
                    .and_then(|i| items.get_mut(i))
                    .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?,
                _ => return Err(Error::Config(format!("unknown config key {path:?}"))),
            };
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("override {path}: {e}")))?;
        self.resolve();
        Ok(())
    }

    /// Derives every component seed from the global seed.
    pub fn resolve(&mut self) {
        self.generator.seed = self.seed;
        self.split.seed = self.seed;
        self.video_encoder.seed = self.seed.wrapping_mul(2).wrapping_add(1);
        self.motion_encoder.seed = self.seed.wrapping_mul(2).wrapping_add(2);
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.run.join("checkpoint.egos"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        self.generator.validate()?;
        self.split.validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            temperature: self.temperature,
            optimizer: self.optimizer,
            freeze: self.freeze.clone(),
            seed: self.seed,
            deterministic: self.deterministic,
        }
    }

    pub fn supervised_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.supervised.epochs,
            optimizer: self.supervised.optimizer,
            ..self.train_config()
        }
    }
}
