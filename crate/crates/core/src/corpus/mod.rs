//! Synthetic paired speech/text corpus, manifests and frame timing.
//!
//! Each character owns a fixed prototype block of `frames_per_char` feature
//! frames drawn once from the seed; an utterance's features are its
//! characters' prototypes stacked in order plus i.i.d. Gaussian noise.

mod manifest;
mod vocab;

pub use manifest::{load_manifest, read_features, write_features, ManifestRecord, MANIFEST_FILE};
pub use vocab::{strip_special, TokenId, Vocab, EOB, EOS, NUM_SPECIAL, SOS};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Tensor};

/// Framing of the feature extractor the corpus stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub feature_dim: usize,
}

impl FrameSpec {
    /// 80-dim log-Mel frames of 50 ms every 12.5 ms.
    pub const MEL_80: FrameSpec = FrameSpec {
        frame_length_ms: 50.0,
        frame_shift_ms: 12.5,
        feature_dim: 80,
    };

    pub fn toy() -> Self {
        FrameSpec {
            feature_dim: 8,
            ..FrameSpec::MEL_80
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::config("frame_spec.feature_dim", "must be at least 1"));
        }
        if !(self.frame_shift_ms > 0.0) || !self.frame_length_ms.is_finite() {
            return Err(Error::config("frame_spec.frame_shift_ms", "must be positive"));
        }
        if self.frame_shift_ms > self.frame_length_ms {
            return Err(Error::config(
                "frame_spec.frame_shift_ms",
                "frame shift exceeds frame length",
            ));
        }
        Ok(())
    }
}

/// Seconds spanned by `frames` consecutive frames: one full frame plus a
/// shift for every further frame.
pub fn block_duration(spec: &FrameSpec, frames: usize) -> f64 {
    assert!(frames >= 1, "a block holds at least one frame");
    (spec.frame_length_ms + (frames - 1) as f64 * spec.frame_shift_ms) / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Paired data for independent supervised training.
    Train,
    /// Data reserved for closed-loop training.
    Chain,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Chain, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Chain => "chain",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub chain: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Chain => self.chain,
            Split::Dev => self.dev,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.chain + self.dev + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Ordered character inventory, special tokens excluded.
    pub vocabulary: String,
    pub frames_per_char: usize,
    pub frame_spec: FrameSpec,
    pub noise_std: f64,
    pub min_text_len: usize,
    pub max_text_len: usize,
    pub splits: SplitCounts,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocabulary: "abcdefgh".into(),
            frames_per_char: 4,
            frame_spec: FrameSpec::toy(),
            noise_std: 0.1,
            min_text_len: 5,
            max_text_len: 40,
            splits: SplitCounts {
                train: 50,
                chain: 100,
                dev: 25,
                test: 25,
            },
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<Vocab> {
        let vocab = Vocab::new(&self.vocabulary)
            .map_err(|e| match e {
                Error::Config { message, .. } => Error::config("corpus.vocabulary", message),
                other => other,
            })?;
        self.frame_spec.validate()?;
        if self.frames_per_char == 0 {
            return Err(Error::config("corpus.frames_per_char", "must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("corpus.noise_std", "must be a nonnegative finite number"));
        }
        if self.min_text_len == 0 || self.min_text_len > self.max_text_len {
            return Err(Error::config(
                "corpus.min_text_len",
                format!(
                    "need 1 <= min_text_len <= max_text_len, got [{}, {}]",
                    self.min_text_len, self.max_text_len
                ),
            ));
        }
        for split in Split::ALL {
            if self.splits.get(split) == 0 {
                return Err(Error::config(
                    format!("corpus.splits.{}", split.name()),
                    "utterance count must be positive",
                ));
            }
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub split: Split,
    /// Character tokens, no special tokens.
    pub text: Vec<TokenId>,
    /// `[S, feature_dim]` frames.
    pub features: Tensor,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub feature_dim: usize,
    /// Sorted by `(split, id)`.
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.split == split).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub(crate) fn sort(&mut self) {
        self.utterances
            .sort_by(|a, b| (a.split, &a.id).cmp(&(b.split, &b.id)));
    }
}

/// Per-character prototype frame blocks, in vocabulary order.
pub fn prototypes(config: &CorpusConfig, vocab: &Vocab) -> Vec<Tensor> {
    let mut rng = seeded_rng(config.seed, 0);
    let dim = config.frame_spec.feature_dim;
    vocab
        .chars()
        .iter()
        .map(|_| {
            let data = (0..config.frames_per_char * dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            Tensor::new(config.frames_per_char, dim, data).expect("positive extents")
        })
        .collect()
}

/// Noise-free features of `text`: its characters' prototypes stacked in order.
pub fn render(text: &[TokenId], prototypes: &[Tensor]) -> Result<Tensor> {
    let blocks = text
        .iter()
        .enumerate()
        .map(|(pos, &t)| {
            t.checked_sub(NUM_SPECIAL)
                .and_then(|i| prototypes.get(i))
                .ok_or(Error::UnknownToken {
                    token: format!("id {t}"),
                    position: pos,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::vstack(&blocks)
}

/// Generates all four splits; a pure function of `config`.
pub fn generate(config: &CorpusConfig) -> Result<Corpus> {
    let vocab = config.validate()?;
    let protos = prototypes(config, &vocab);
    let dim = config.frame_spec.feature_dim;
    let noise = Normal::new(0.0, config.noise_std)
        .map_err(|e| Error::config("corpus.noise_std", e.to_string()))?;

    let mut utterances = Vec::with_capacity(config.splits.total());
    for (si, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = seeded_rng(config.seed, 1 + si as u64);
        for i in 0..config.splits.get(split) {
            let len = rng.random_range(config.min_text_len..=config.max_text_len);
            let text: Vec<TokenId> = (0..len)
                .map(|_| NUM_SPECIAL + rng.random_range(0..vocab.chars().len()))
                .collect();
            let mut features = render(&text, &protos)?;
            if config.noise_std > 0.0 {
                for v in features.data_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            utterances.push(Utterance {
                id: format!("{}-{i:05}", split.name()),
                split,
                text,
                features,
            });
        }
    }
    let mut corpus = Corpus {
        vocab,
        feature_dim: dim,
        utterances,
    };
    corpus.sort();
    Ok(corpus)
}
