//! Flat TOML run configuration. Every key is optional; missing model
//! hyperparameters fall back to the reference values for the chosen kind.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use motion_language::l2m::L2MConfig;
use motion_language::m2l::M2LConfig;
use motion_language::nn::NadamConfig;
use motion_language::prepare::PrepareConfig;
use motion_language::text::SpellingTable;
use motion_language::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    M2l,
    L2m,
}

impl FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2l" => Ok(ModelKind::M2l),
            "l2m" => Ok(ModelKind::L2m),
            other => bail!("unknown model kind `{other}` (expected m2l or l2m)"),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::M2l => "m2l",
            ModelKind::L2m => "l2m",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prepared: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,

    // Preparation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_ratios: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_duration_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub downsample_factor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spelling_table: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary_from_train: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,

    // Model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_layers: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoder_layers: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_normalization: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dimension: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixture_components: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_motion_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_sentence_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam_width: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_hypothesis: Option<usize>,

    // Training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `inf` disables clipping.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_clipping: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training_epochs: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1).max(1)
    }

    pub fn kind(&self) -> Result<ModelKind> {
        self.model.context("config needs `model = \"m2l\"` or `model = \"l2m\"`")
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().context("no output directory (set `out` or pass --out)")
    }

    pub fn prepared_dir(&self) -> Result<&Path> {
        self.prepared.as_deref().context("no prepared data directory (set `prepared`)")
    }

    pub fn prepare_config(&self) -> Result<PrepareConfig> {
        let mut cfg = PrepareConfig {
            seed: self.seed(),
            ..PrepareConfig::default()
        };
        if let Some(r) = self.split_ratios {
            cfg.ratios = r;
        }
        if let Some(s) = self.max_duration_seconds {
            cfg.max_seconds = s;
        }
        if let Some(f) = self.downsample_factor {
            cfg.downsample_factor = f;
        }
        if let Some(l) = self.max_motion_length {
            cfg.max_motion_len = l;
        }
        if let Some(l) = self.max_sentence_length {
            cfg.max_sentence_len = l;
        }
        if let Some(j) = &self.joint_names {
            cfg.joints = j.clone();
        }
        if let Some(p) = &self.spelling_table {
            cfg.spelling = SpellingTable::read(p)?;
        }
        cfg.vocab_from_train = self.vocabulary_from_train.unwrap_or(false);
        Ok(cfg)
    }

    pub fn m2l_config(&self, vocab_size: usize, joints: usize) -> M2LConfig {
        let r = M2LConfig::reference(vocab_size);
        M2LConfig {
            encoder_hidden: self.encoder_layers.clone().unwrap_or(r.encoder_hidden),
            decoder_hidden: self.decoder_layers.clone().unwrap_or(r.decoder_hidden),
            embedding_dim: self.embedding_dimension.unwrap_or(r.embedding_dim),
            dropout: self.dropout_rate.unwrap_or(r.dropout),
            vocab_size,
            joints,
            max_motion_len: self.max_motion_length.unwrap_or(r.max_motion_len),
            max_sentence_len: self.max_sentence_length.unwrap_or(r.max_sentence_len),
            beam_width: self.beam_width.unwrap_or(r.beam_width),
        }
    }

    pub fn l2m_config(&self, vocab_size: usize, joints: usize) -> L2MConfig {
        let r = L2MConfig::reference(vocab_size);
        L2MConfig {
            encoder_hidden: self.encoder_layers.clone().unwrap_or(r.encoder_hidden),
            decoder_hidden: self.decoder_layers.clone().unwrap_or(r.decoder_hidden),
            embedding_dim: self.embedding_dimension.unwrap_or(r.embedding_dim),
            dropout: self.dropout_rate.unwrap_or(r.dropout),
            vocab_size,
            joints,
            components: self.mixture_components.unwrap_or(r.components),
            layer_norm: self.layer_normalization.unwrap_or(r.layer_norm),
            max_motion_len: self.max_motion_length.unwrap_or(r.max_motion_len),
            max_sentence_len: self.max_sentence_length.unwrap_or(r.max_sentence_len),
            beam_width: self.beam_width.unwrap_or(r.beam_width),
            samples_per_hypothesis: self.samples_per_hypothesis.unwrap_or(r.samples_per_hypothesis),
        }
    }

    /// Reference clipping is off for m2l and 25 for l2m.
    pub fn train_config(&self, kind: ModelKind) -> TrainConfig {
        let d = NadamConfig::default();
        let clip = match kind {
            ModelKind::M2l => f64::INFINITY,
            ModelKind::L2m => 25.0,
        };
        TrainConfig {
            epochs: self.training_epochs.unwrap_or(100),
            batch_size: self.batch_size.unwrap_or(128),
            optimizer: NadamConfig {
                learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                beta1: self.beta1.unwrap_or(d.beta1),
                beta2: self.beta2.unwrap_or(d.beta2),
                epsilon: self.epsilon.unwrap_or(d.epsilon),
            },
            clip_norm: self.gradient_clipping.unwrap_or(clip),
            seed: self.seed(),
            threads: self.threads(),
        }
    }
}
