//! Common interface of the two trainable networks and their checkpoints.
//!
//! A model checkpoint stores the parameters under their own names and a
//! JSON `meta` document `{"kind", "vocabulary", "config"}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, ParamStore, Tensor};
use crate::recognizer::{Recognizer, RecognizerConfig};
use crate::synthesizer::{Synthesizer, SynthesizerConfig};

pub trait Model: Clone {
    type Config: Clone + PartialEq + Serialize + DeserializeOwned;
    const KIND: &'static str;

    fn init(config: Self::Config, seed: u64) -> Result<Self>;
    fn model_config(&self) -> &Self::Config;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn vocab_size(&self) -> usize;

    /// Rebuilds a model of `config` holding the parameters in `map`.
    fn from_map(config: Self::Config, map: &BTreeMap<String, Tensor>) -> Result<Self> {
        let mut m = Self::init(config, 0)?;
        m.params_mut().load_map(map)?;
        Ok(m)
    }
}

impl Model for Recognizer {
    type Config = RecognizerConfig;
    const KIND: &'static str = "recognizer";

    fn init(config: RecognizerConfig, seed: u64) -> Result<Self> {
        Recognizer::new(config, seed)
    }
    fn model_config(&self) -> &RecognizerConfig {
        self.config()
    }
    fn params(&self) -> &ParamStore {
        Recognizer::params(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        Recognizer::params_mut(self)
    }
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }
}

impl Model for Synthesizer {
    type Config = SynthesizerConfig;
    const KIND: &'static str = "synthesizer";

    fn init(config: SynthesizerConfig, seed: u64) -> Result<Self> {
        Synthesizer::new(config, seed)
    }
    fn model_config(&self) -> &SynthesizerConfig {
        self.config()
    }
    fn params(&self) -> &ParamStore {
        Synthesizer::params(self)
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        Synthesizer::params_mut(self)
    }
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta<C> {
    kind: String,
    vocabulary: Vocab,
    config: C,
}

pub fn model_checkpoint<M: Model>(model: &M, vocab: &Vocab, seed: u64, step: u64) -> Result<Checkpoint> {
    let meta = ModelMeta {
        kind: M::KIND.to_string(),
        vocabulary: vocab.clone(),
        config: model.model_config().clone(),
    };
    Ok(Checkpoint {
        seed,
        step,
        meta: serde_json::to_string(&meta)?,
        tensors: model.params().to_map(),
    })
}

pub fn model_from_checkpoint<M: Model>(ckpt: &Checkpoint) -> Result<(M, Vocab)> {
    let meta: ModelMeta<M::Config> = serde_json::from_str(&ckpt.meta)
        .map_err(|e| Error::Format(format!("checkpoint is not a {} checkpoint: {e}", M::KIND)))?;
    if meta.kind != M::KIND {
        return Err(Error::Format(format!(
            "checkpoint holds a {}, expected a {}",
            meta.kind,
            M::KIND
        )));
    }
    let model = M::from_map(meta.config, &ckpt.tensors)?;
    if model.vocab_size() != meta.vocabulary.size() {
        return Err(Error::Format("checkpoint vocabulary disagrees with its model size".into()));
    }
    Ok((model, meta.vocabulary))
}

pub fn save_model<M: Model>(model: &M, vocab: &Vocab, seed: u64, step: u64, path: &Path) -> Result<()> {
    model_checkpoint(model, vocab, seed, step)?.save(path)
}

pub fn load_model<M: Model>(path: &Path) -> Result<(M, Vocab)> {
    model_from_checkpoint(&Checkpoint::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_both_kinds() {
        let vocab = Vocab::new("abc").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = Recognizer::new(RecognizerConfig::toy(4, vocab.size()), 3).unwrap();
        let path = dir.path().join("r.ckpt");
        save_model(&r, &vocab, 3, 7, &path).unwrap();
        let (back, v): (Recognizer, _) = load_model(&path).unwrap();
        assert_eq!(back.params().to_map(), r.params().to_map());
        assert_eq!(v, vocab);
        assert!(load_model::<Synthesizer>(&path).is_err());

        let s = Synthesizer::new(SynthesizerConfig::toy(4, vocab.size()), 3).unwrap();
        save_model(&s, &vocab, 3, 7, &path).unwrap();
        let (back, _): (Synthesizer, _) = load_model(&path).unwrap();
        assert_eq!(back.params().to_map(), s.params().to_map());
    }
}
