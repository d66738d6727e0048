//! Flat `key = value` experiment files with dotted section prefixes.
//!
//! ```text
//! # comment
//! model.preset = toy
//! channel.carrier_hz = 1e9
//! eval.snr_db = 0, 6, 12, 18
//! experiment.schemes = deepssc, no_ii
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Reliability training followed by secrecy training.
    Deepssc,
    /// Reliability training only.
    NoIi,
    /// Single-phase weighted loss.
    Integrated,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Deepssc, Scheme::NoIi, Scheme::Integrated];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Deepssc => "deepssc",
            Scheme::NoIi => "no_ii",
            Scheme::Integrated => "integrated",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}; expected deepssc, no_ii or integrated")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Grammar-generated sentences split into train and test.
    Synthetic { train: usize, test: usize },
    /// One sentence per line in each file.
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub min_words: usize,
    pub max_words: usize,
    pub max_vocab: usize,
    /// `vocab_size` is replaced by the size of the built vocabulary.
    pub model: ModelConfig,
    pub channel: ChannelConfig,
    pub training: TrainConfig,
    pub snr_sweep: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Fading realizations evaluated per sweep point.
    pub eval_draws: usize,
    /// Test sentences sharing one realization.
    pub eval_batch: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ExperimentConfig {
    /// The desk-scale setup on the synthetic corpus.
    pub fn toy() -> Self {
        Self {
            corpus: CorpusSource::Synthetic { train: 5000, test: 500 },
            min_words: 4,
            max_words: 12,
            max_vocab: 50,
            model: ModelConfig::toy(50),
            channel: ChannelConfig::default(),
            training: TrainConfig {
                learning_rate: 1e-3,
                phase2_learning_rate: Some(3e-4),
                batch_size: 64,
                epochs_stage_a: 20,
                epochs_stage_b: 10,
                epochs_phase2: 10,
                epochs_integrated: None,
                snr_train_db: (0.0, 18.0),
                eve_weight: 0.4,
                optimizer: OptimizerKind::Adam,
                grad_clip: Some(5.0),
                ..TrainConfig::default()
            },
            snr_sweep: vec![0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0],
            schemes: Scheme::ALL.to_vec(),
            eval_draws: 1000,
            eval_batch: 8,
            output_dir: PathBuf::from("results"),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_sweep.is_empty() {
            return Err(Error::Config("eval.snr_db must list at least one SNR".into()));
        }
        if self.snr_sweep.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("eval.snr_db entries must be finite".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("experiment.schemes must name at least one scheme".into()));
        }
        if self.eval_draws == 0 || self.eval_batch == 0 {
            return Err(Error::Config("eval.draws and eval.batch must be positive".into()));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::Config(format!(
                "corpus length range {}..={} is empty",
                self.min_words, self.max_words
            )));
        }
        if self.max_words + 2 > self.model.max_len {
            return Err(Error::Config(format!(
                "{}-word sentences need {} slots but model.max_len is {}",
                self.max_words,
                self.max_words + 2,
                self.model.max_len
            )));
        }
        if let CorpusSource::Synthetic { train, test } = self.corpus {
            if train == 0 || test == 0 {
                return Err(Error::Config("synthetic corpus splits must be non-empty".into()));
            }
        }
        self.model.validate()?;
        self.channel.validate()?;
        self.training.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses a key-value file on top of [`ExperimentConfig::toy`]. A
    /// `model.preset` line is applied before any other model key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", lineno + 1)))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
        }

        let mut cfg = Self::toy();
        if let Some(preset) = entries.remove("model.preset") {
            cfg.model = match preset.as_str() {
                "toy" => ModelConfig::toy(cfg.model.vocab_size),
                "full_scale" => ModelConfig::full_scale(cfg.model.vocab_size),
                "miniature" => ModelConfig::miniature(),
                other => return Err(Error::Config(format!("unknown model.preset {other:?}"))),
            };
        }
        let mut train_path = None;
        let mut test_path = None;
        for (key, value) in &entries {
            let v = value.as_str();
            match key.as_str() {
                "corpus.train" => train_path = Some(PathBuf::from(v)),
                "corpus.test" => test_path = Some(PathBuf::from(v)),
                "corpus.synthetic_train" | "corpus.synthetic_test" => {
                    let n = parse::<usize>(key, v)?;
                    let CorpusSource::Synthetic { train, test } = &mut cfg.corpus else {
                        unreachable!("files are only set after this loop")
                    };
                    if key.ends_with("train") {
                        *train = n;
                    } else {
                        *test = n;
                    }
                }
                "corpus.min_words" => cfg.min_words = parse(key, v)?,
                "corpus.max_words" => cfg.max_words = parse(key, v)?,
                "corpus.max_vocab" => cfg.max_vocab = parse(key, v)?,

                "model.max_len" => cfg.model.max_len = parse(key, v)?,
                "model.model_dim" => cfg.model.model_dim = parse(key, v)?,
                "model.symbol_dim" => cfg.model.symbol_dim = parse(key, v)?,
                "model.layers" => cfg.model.layers = parse(key, v)?,
                "model.heads" => cfg.model.heads = parse(key, v)?,
                "model.ff_dim" => cfg.model.ff_dim = parse(key, v)?,
                "model.channel_hidden" => cfg.model.channel_hidden = parse(key, v)?,

                "channel.carrier_hz" => cfg.channel.carrier_hz = parse(key, v)?,
                "channel.bandwidth_hz" => cfg.channel.bandwidth_hz = parse(key, v)?,
                "channel.noise_figure_db" => cfg.channel.noise_figure_db = parse(key, v)?,
                "channel.d_bob_m" => cfg.channel.d_bob_m = parse(key, v)?,
                "channel.d_eve_m" => cfg.channel.d_eve_m = parse(key, v)?,

                "training.learning_rate" => cfg.training.learning_rate = parse(key, v)?,
                "training.phase2_learning_rate" => cfg.training.phase2_learning_rate = parse_optional(key, v)?,
                "training.batch_size" => cfg.training.batch_size = parse(key, v)?,
                "training.epochs_stage_a" => cfg.training.epochs_stage_a = parse(key, v)?,
                "training.epochs_stage_b" => cfg.training.epochs_stage_b = parse(key, v)?,
                "training.epochs_phase2" => cfg.training.epochs_phase2 = parse(key, v)?,
                "training.epochs_integrated" => cfg.training.epochs_integrated = parse_optional(key, v)?,
                "training.snr_db" => {
                    let range: Vec<f64> = parse_list(key, v)?;
                    cfg.training.snr_train_db = match range[..] {
                        [x] => (x, x),
                        [lo, hi] => (lo, hi),
                        _ => return Err(Error::Config(format!("{key}: expected one value or a lo, hi pair"))),
                    };
                }
                "training.w1" => cfg.training.w1 = parse(key, v)?,
                "training.w2" => cfg.training.w2 = parse(key, v)?,
                "training.eve_weight" => cfg.training.eve_weight = parse(key, v)?,
                "training.clamp" => cfg.training.clamp = parse(key, v)?,
                "training.optimizer" => {
                    cfg.training.optimizer = match v {
                        "sgd" => OptimizerKind::Sgd,
                        "adam" => OptimizerKind::Adam,
                        other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
                    }
                }
                "training.grad_clip" => cfg.training.grad_clip = parse_optional(key, v)?,

                "eval.snr_db" => cfg.snr_sweep = parse_list(key, v)?,
                "eval.draws" => cfg.eval_draws = parse(key, v)?,
                "eval.batch" => cfg.eval_batch = parse(key, v)?,

                "experiment.schemes" => cfg.schemes = parse_list(key, v)?,
                "experiment.out" => cfg.output_dir = PathBuf::from(v),
                "experiment.seed" => cfg.seed = parse(key, v)?,
                _ => return Err(Error::Config(format!("unknown key {key}"))),
            }
        }
        match (train_path, test_path) {
            (Some(train), Some(test)) => cfg.corpus = CorpusSource::Files { train, test },
            (None, None) => {}
            _ => return Err(Error::Config("corpus.train and corpus.test must be given together".into())),
        }
        cfg.schemes.sort();
        cfg.schemes.dedup();
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}
