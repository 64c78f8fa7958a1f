//! Run configuration: one TOML document per experiment.

use std::fs;
use std::path::{Path, PathBuf};

use ichain::alignment::BlockConfig;
use ichain::corpus::{CorpusConfig, Vocab};
use ichain::incremental::EngineConfig;
use ichain::recognizer::RecognizerConfig;
use ichain::synthesizer::SynthesizerConfig;
use ichain::trainer::TrainConfig;
use ichain::Error;
use serde::{Deserialize, Serialize};

/// Recognizer layer sizes; input and vocabulary sizes come from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecognizerSizes {
    pub input_units: usize,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub embed_dim: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
}

impl Default for RecognizerSizes {
    fn default() -> Self {
        RecognizerSizes {
            input_units: 12,
            encoder_hidden: 12,
            encoder_layers: 3,
            embed_dim: 8,
            decoder_hidden: 16,
            attention_dim: 16,
        }
    }
}

/// Synthesizer layer sizes; output and vocabulary sizes come from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesizerSizes {
    pub embed_dim: usize,
    pub encoder_units: usize,
    pub encoder_hidden: usize,
    pub prenet_units: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    pub frames_per_step: usize,
    pub leaky_slope: f64,
}

impl Default for SynthesizerSizes {
    fn default() -> Self {
        SynthesizerSizes {
            embed_dim: 8,
            encoder_units: 16,
            encoder_hidden: 12,
            prenet_units: 16,
            decoder_hidden: 24,
            attention_dim: 16,
            frames_per_step: 4,
            leaky_slope: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamLimits {
    /// Token cap per recognition step; three character blocks when unset.
    pub max_tokens_per_step: Option<usize>,
    pub max_synth_steps_per_char: usize,
}

impl Default for StreamLimits {
    fn default() -> Self {
        StreamLimits {
            max_tokens_per_step: None,
            max_synth_steps_per_char: 4,
        }
    }
}

/// Checkpoints that stage two and evaluation read. Unset paths default to
/// the files stage one writes under the output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointPaths {
    /// Non-incremental recognizer whose attention supplies alignments.
    pub teacher: Option<PathBuf>,
    pub recognizer: Option<PathBuf>,
    pub synthesizer: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    /// Seed for model initialization and training; the corpus has its own.
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub recognizer: RecognizerSizes,
    #[serde(default)]
    pub synthesizer: SynthesizerSizes,
    #[serde(default)]
    pub blocks: BlockConfig,
    #[serde(default)]
    pub stream: StreamLimits,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub checkpoints: CheckpointPaths,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config {
                field: "<document>".into(),
                message: e.message().to_string(),
            })?;
        let explicit_train_seed = raw
            .get("train")
            .and_then(|t| t.as_table())
            .and_then(|t| t.get("seed"))
            .and_then(|v| v.as_integer());
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: "<document>".into(),
            message: e.message().to_string(),
        })?;
        if let Some(s) = explicit_train_seed {
            if s as u64 != config.seed {
                return Err(Error::Config {
                    field: "train.seed".into(),
                    message: format!("is {s} but the run seed is {}; set only `seed`", config.seed),
                });
            }
        }
        config.train.seed = config.seed;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Checks every section; returns the vocabulary.
    pub fn validate(&self) -> Result<Vocab, Error> {
        let vocab = self.corpus.validate()?;
        self.recognizer_config(&vocab).validate().map_err(|e| prefix(e, "recognizer"))?;
        self.synthesizer_config(&vocab).validate().map_err(|e| prefix(e, "synthesizer"))?;
        self.blocks.validate()?;
        self.blocks.check_subsampling(1 << self.recognizer.encoder_layers)?;
        if self.stream.max_synth_steps_per_char == 0 {
            return Err(Error::Config {
                field: "stream.max_synth_steps_per_char".into(),
                message: "must be at least 1".into(),
            });
        }
        if self.stream.max_tokens_per_step == Some(0) {
            return Err(Error::Config {
                field: "stream.max_tokens_per_step".into(),
                message: "must be at least 1".into(),
            });
        }
        self.train.validate()?;
        Ok(vocab)
    }

    pub fn recognizer_config(&self, vocab: &Vocab) -> RecognizerConfig {
        let s = &self.recognizer;
        RecognizerConfig {
            feature_dim: self.corpus.frame_spec.feature_dim,
            vocab_size: vocab.size(),
            input_units: s.input_units,
            encoder_hidden: s.encoder_hidden,
            encoder_layers: s.encoder_layers,
            embed_dim: s.embed_dim,
            decoder_hidden: s.decoder_hidden,
            attention_dim: s.attention_dim,
        }
    }

    pub fn synthesizer_config(&self, vocab: &Vocab) -> SynthesizerConfig {
        let s = &self.synthesizer;
        SynthesizerConfig {
            feature_dim: self.corpus.frame_spec.feature_dim,
            vocab_size: vocab.size(),
            embed_dim: s.embed_dim,
            encoder_units: s.encoder_units,
            encoder_hidden: s.encoder_hidden,
            prenet_units: s.prenet_units,
            decoder_hidden: s.decoder_hidden,
            attention_dim: s.attention_dim,
            frames_per_step: s.frames_per_step,
            leaky_slope: s.leaky_slope,
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            max_tokens_per_step: self.stream.max_tokens_per_step,
            max_synth_steps_per_char: self.stream.max_synth_steps_per_char,
            ..EngineConfig::new(self.blocks, self.corpus.frame_spec)
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.output_dir.join("corpus")
    }
}

/// Puts model-level config errors under their section name.
fn prefix(e: Error, section: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{section}.{field}"),
            message,
        },
        other => other,
    }
}
