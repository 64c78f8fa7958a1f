//! Attention-based encoder-decoder speech recognizer.
//!
//! The same network serves as the non-incremental teacher, the
//! non-incremental baseline and the incremental student; only the way it
//! is fed differs. The encoder stacks `L` bidirectional LSTM layers, each
//! preceded by a 2x temporal subsampling that concatenates adjacent frames,
//! so one final encoder state covers `2^L` input frames.

mod cer;

pub use cer::{cer, edit_distance};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Vocab, EOB, EOS, SOS};
use crate::error::{Error, Result};
use crate::nn::{AdditiveAttention, AttentionMemory, BiLstm, Linear, Lstm, LstmState, LstmValues};
use crate::numerics::{argmax, log_sum_exp, seeded_rng, Axis, Bound, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognizerConfig {
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub input_units: usize,
    pub encoder_hidden: usize,
    /// Number of bidirectional layers `L`; total subsampling is `2^L`.
    pub encoder_layers: usize,
    pub embed_dim: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
}

impl RecognizerConfig {
    pub fn toy(feature_dim: usize, vocab_size: usize) -> Self {
        RecognizerConfig {
            feature_dim,
            vocab_size,
            input_units: 24,
            encoder_hidden: 24,
            encoder_layers: 2,
            embed_dim: 16,
            decoder_hidden: 32,
            attention_dim: 24,
        }
    }

    /// Layer sizes of the WSJ system (512-unit input layer, three 256-unit
    /// bidirectional layers, 256-dim embeddings, 512-unit decoder).
    pub fn wsj(vocab_size: usize) -> Self {
        RecognizerConfig {
            feature_dim: 80,
            vocab_size,
            input_units: 512,
            encoder_hidden: 256,
            encoder_layers: 3,
            embed_dim: 256,
            decoder_hidden: 512,
            attention_dim: 256,
        }
    }

    pub fn subsampling(&self) -> usize {
        1 << self.encoder_layers
    }

    pub fn state_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// Number of encoder states produced for `frames` input frames.
    pub fn num_states(&self, frames: usize) -> usize {
        frames.div_ceil(self.subsampling())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("input_units", self.input_units),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_layers", self.encoder_layers),
            ("embed_dim", self.embed_dim),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("recognizer.{name}"), "must be positive"));
            }
        }
        if self.vocab_size <= crate::corpus::NUM_SPECIAL {
            return Err(Error::config("recognizer.vocab_size", "vocabulary has no characters"));
        }
        if self.encoder_layers > 8 {
            return Err(Error::config("recognizer.encoder_layers", "at most 8 layers"));
        }
        Ok(())
    }
}

/// Right-pads with copies of the last frame to a multiple of `multiple` rows.
pub fn pad_to_multiple(features: &Tensor, multiple: usize) -> Tensor {
    let s = features.rows();
    let target = s.div_ceil(multiple) * multiple;
    if target == s {
        return features.clone();
    }
    let last = features.slice_rows(s - 1, s);
    let mut parts = vec![features];
    let pads = vec![last; target - s];
    parts.extend(pads.iter());
    Tensor::vstack(&parts).expect("equal widths")
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    config: RecognizerConfig,
    params: ParamStore,
    input: Linear,
    layers: Vec<BiLstm>,
    embedding: ParamId,
    decoder: Lstm,
    attention: AdditiveAttention,
    output: Linear,
}

/// Decoder recurrent state plus the token fed at the next step.
#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub lstm: LstmState,
    pub prev: TokenId,
}

/// Graph-independent [`DecoderState`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderCarry {
    pub lstm: LstmValues,
    pub prev: TokenId,
}

impl DecoderCarry {
    pub fn bind(&self, g: &mut Graph) -> DecoderState {
        DecoderState {
            lstm: LstmState::from_values(g, &self.lstm),
            prev: self.prev,
        }
    }

    pub fn capture(g: &Graph, s: &DecoderState) -> Self {
        DecoderCarry {
            lstm: s.lstm.values(g),
            prev: s.prev,
        }
    }
}

/// Output of greedy decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Emitted tokens, including the terminating special token if one was produced.
    pub tokens: Vec<TokenId>,
    /// One row per emitted token over the encoder states.
    pub attention: Tensor,
    /// Log-probability of each emitted token.
    pub log_probs: Vec<f64>,
    /// Decoding stopped at the length cap rather than on a terminator.
    pub truncated: bool,
}

impl DecodeResult {
    /// Character tokens only.
    pub fn text(&self) -> Vec<TokenId> {
        crate::corpus::strip_special(&self.tokens)
    }

    pub fn terminator(&self) -> Option<TokenId> {
        self.tokens.last().copied().filter(|&t| t == EOS || t == EOB)
    }
}

/// Per-utterance decode export record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub log_probs: Vec<f64>,
    pub truncated: bool,
}

impl DecodeRecord {
    pub fn new(id: &str, result: &DecodeResult, vocab: &Vocab) -> Self {
        DecodeRecord {
            id: id.to_string(),
            tokens: result.tokens.iter().map(|&t| vocab.symbol(t)).collect(),
            log_probs: result.log_probs.clone(),
            truncated: result.truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForced {
    /// `[n, vocab]` logits.
    pub logits: Tensor,
    /// `[n, M]` attention weights.
    pub attention: Tensor,
}

/// Graph handles of one teacher-forced pass.
#[derive(Debug, Clone, Copy)]
pub struct TeacherForcedVars {
    pub logits: Var,
    pub attention: Var,
    pub state: DecoderState,
}

impl Recognizer {
    pub fn new(config: RecognizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed, 0x5245_4301);
        Ok(Self::build(config, &mut rng))
    }

    fn build(config: RecognizerConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new();
        let c = &config;
        let input = Linear::new(&mut p, "enc.input", c.feature_dim, c.input_units, rng);
        let mut layers = Vec::with_capacity(c.encoder_layers);
        let mut in_dim = c.input_units;
        for l in 0..c.encoder_layers {
            layers.push(BiLstm::new(&mut p, &format!("enc.blstm{l}"), 2 * in_dim, c.encoder_hidden, rng));
            in_dim = 2 * c.encoder_hidden;
        }
        let embedding = p.add_uniform("dec.embedding", c.vocab_size, c.embed_dim, rng);
        let decoder = Lstm::new(&mut p, "dec.lstm", c.embed_dim + c.state_dim(), c.decoder_hidden, rng);
        let attention = AdditiveAttention::new(&mut p, "dec.attention", c.state_dim(), c.decoder_hidden, c.attention_dim, rng);
        let output = Linear::new(&mut p, "dec.output", c.decoder_hidden + c.state_dim(), c.vocab_size, rng);
        Recognizer {
            config,
            params: p,
            input,
            layers,
            embedding,
            decoder,
            attention,
            output,
        }
    }

    pub fn config(&self) -> &RecognizerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn initial_carry(&self) -> DecoderCarry {
        DecoderCarry {
            lstm: LstmValues::zeros(self.config.decoder_hidden),
            prev: SOS,
        }
    }

    pub fn initial_state(&self, g: &mut Graph) -> DecoderState {
        DecoderState {
            lstm: LstmState::zeros(g, self.config.decoder_hidden),
            prev: SOS,
        }
    }

    /// Encoder states `[ceil(S / 2^L), state_dim]` for `features` (`[S, feature_dim]`).
    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, features: &Tensor) -> Result<Var> {
        if features.cols() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "features have dim {}, recognizer expects {}",
                features.cols(),
                self.config.feature_dim
            )));
        }
        let padded = pad_to_multiple(features, self.config.subsampling());
        let x = g.constant(padded);
        let x = self.input.forward(g, p, x)?;
        let mut h = g.tanh(x);
        for layer in &self.layers {
            let t = g.value(h);
            let (m, d) = (t.rows(), t.cols());
            let pairs = g.reshape(h, m / 2, 2 * d)?;
            h = layer.forward(g, p, pairs)?;
        }
        Ok(h)
    }

    pub fn memory(&self, g: &mut Graph, p: &Bound, states: Var) -> Result<AttentionMemory> {
        self.attention.memory(g, p, states)
    }

    /// One decoder step; returns `(logits, attention weights, context)`.
    pub fn step(
        &self,
        g: &mut Graph,
        p: &Bound,
        mem: &AttentionMemory,
        state: &mut DecoderState,
        ctx_prev: Var,
    ) -> Result<(Var, Var, Var)> {
        let emb = g.embedding(p[self.embedding], &[state.prev])?;
        let x = g.concat(&[emb, ctx_prev], Axis::Cols)?;
        state.lstm = self.decoder.step(g, p, x, state.lstm)?;
        let (ctx, weights) = self.attention.attend(g, p, mem, state.lstm.h)?;
        let out = g.concat(&[state.lstm.h, ctx], Axis::Cols)?;
        let logits = self.output.forward(g, p, out)?;
        Ok((logits, weights, ctx))
    }

    fn zero_context(&self, g: &mut Graph) -> Var {
        g.constant(Tensor::zeros(1, self.config.state_dim()))
    }

    /// Teacher-forced pass predicting `targets`, feeding each target as the
    /// next input.
    pub fn teacher_forced_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        mem: &AttentionMemory,
        mut state: DecoderState,
        targets: &[TokenId],
    ) -> Result<TeacherForcedVars> {
        if targets.is_empty() {
            return Err(Error::Argument("teacher forcing needs a nonempty reference".into()));
        }
        self.check_tokens(targets)?;
        let mut ctx = self.zero_context(g);
        let mut logits = Vec::with_capacity(targets.len());
        let mut weights = Vec::with_capacity(targets.len());
        for &t in targets {
            let (l, w, c) = self.step(g, p, mem, &mut state, ctx)?;
            logits.push(l);
            weights.push(w);
            ctx = c;
            state.prev = t;
        }
        Ok(TeacherForcedVars {
            logits: g.concat(&logits, Axis::Rows)?,
            attention: g.concat(&weights, Axis::Rows)?,
            state,
        })
    }

    /// Greedy decoding until a terminator in `stop` or `max_len` tokens.
    pub fn greedy_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        mem: &AttentionMemory,
        state: &mut DecoderState,
        max_len: usize,
        stop: &[TokenId],
    ) -> Result<DecodeResult> {
        if max_len == 0 {
            return Err(Error::Argument("max_len must be at least 1".into()));
        }
        let mut ctx = self.zero_context(g);
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        let mut rows = Vec::new();
        let mut truncated = true;
        while tokens.len() < max_len {
            let (l, w, c) = self.step(g, p, mem, state, ctx)?;
            ctx = c;
            let logits = g.value(l).row_slice(0);
            let best = argmax(logits);
            let lse = log_sum_exp(logits);
            log_probs.push(logits[best] - lse);
            rows.push(g.value(w).clone());
            tokens.push(best);
            state.prev = best;
            if stop.contains(&best) {
                truncated = false;
                break;
            }
        }
        let refs: Vec<&Tensor> = rows.iter().collect();
        Ok(DecodeResult {
            tokens,
            attention: Tensor::vstack(&refs)?,
            log_probs,
            truncated,
        })
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().position(|&t| t >= self.config.vocab_size) {
            Some(pos) => Err(Error::UnknownToken {
                token: format!("id {}", tokens[pos]),
                position: pos,
            }),
            None => Ok(()),
        }
    }

    /// Encoder states for `features`.
    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        if features.rows() == 0 {
            return Err(Error::Argument("cannot encode an empty feature sequence".into()));
        }
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let s = self.encode_graph(&mut g, &p, features)?;
        Ok(g.value(s).clone())
    }

    fn states_memory(&self, g: &mut Graph, p: &Bound, states: &Tensor) -> Result<AttentionMemory> {
        if states.cols() != self.config.state_dim() {
            return Err(Error::Shape(format!(
                "encoder states have dim {}, decoder expects {}",
                states.cols(),
                self.config.state_dim()
            )));
        }
        let s = g.constant(states.clone());
        self.memory(g, p, s)
    }

    /// Greedy decoding from `<sos>` over precomputed encoder states. Stops at
    /// end-of-sentence or end-of-block, or after `max_len` tokens.
    pub fn decode_greedy(&self, states: &Tensor, max_len: usize) -> Result<DecodeResult> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let mem = self.states_memory(&mut g, &p, states)?;
        let mut state = self.initial_state(&mut g);
        self.greedy_graph(&mut g, &p, &mem, &mut state, max_len, &[EOS, EOB])
    }

    /// Teacher-forced decoding of `reference` (which should end in its terminator).
    pub fn decode_teacher_forced(&self, states: &Tensor, reference: &[TokenId]) -> Result<TeacherForced> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let mem = self.states_memory(&mut g, &p, states)?;
        let state = self.initial_state(&mut g);
        let tf = self.teacher_forced_graph(&mut g, &p, &mem, state, reference)?;
        Ok(TeacherForced {
            logits: g.value(tf.logits).clone(),
            attention: g.value(tf.attention).clone(),
        })
    }

    /// Encode then greedily decode a whole utterance.
    pub fn recognize(&self, features: &Tensor, max_len: usize) -> Result<DecodeResult> {
        let states = self.encode(features)?;
        self.decode_greedy(&states, max_len)
    }

    /// Mean cross-entropy of `text + <eos>` given the whole utterance.
    pub fn loss_graph(&self, g: &mut Graph, p: &Bound, features: &Tensor, text: &[TokenId]) -> Result<Var> {
        let states = self.encode_graph(g, p, features)?;
        let mem = self.memory(g, p, states)?;
        let state = self.initial_state(g);
        let mut targets = text.to_vec();
        targets.push(EOS);
        let tf = self.teacher_forced_graph(g, p, &mem, state, &targets)?;
        g.cross_entropy(tf.logits, &targets)
    }
}

#[cfg(test)]
mod tests;
