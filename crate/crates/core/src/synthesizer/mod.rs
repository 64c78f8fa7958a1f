//! Attention-based text-to-feature synthesizer.
//!
//! The text encoder embeds each token together with a one-hot role marker
//! (look-back context, main segment, look-ahead context), applies a leaky
//! ReLU layer and a bidirectional LSTM. The decoder runs a leaky ReLU
//! prenet over the previous frame, two LSTM layers and additive attention,
//! and emits `r` frames plus a two-way stop decision per step.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::nn::{AdditiveAttention, AttentionMemory, BiLstm, Linear, Lstm, LstmState, LstmValues};
use crate::numerics::{seeded_rng, Axis, Bound, Graph, ParamId, ParamStore, Tensor, Var};
use crate::recognizer::pad_to_multiple;

pub const STOP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesizerConfig {
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub encoder_units: usize,
    pub encoder_hidden: usize,
    pub prenet_units: usize,
    pub decoder_hidden: usize,
    pub attention_dim: usize,
    /// Frames emitted per decoder step.
    pub frames_per_step: usize,
    pub leaky_slope: f64,
}

impl SynthesizerConfig {
    pub fn toy(feature_dim: usize, vocab_size: usize) -> Self {
        SynthesizerConfig {
            feature_dim,
            vocab_size,
            embed_dim: 16,
            encoder_units: 24,
            encoder_hidden: 16,
            prenet_units: 16,
            decoder_hidden: 32,
            attention_dim: 24,
            frames_per_step: 4,
            leaky_slope: 0.01,
        }
    }

    /// Decoder sizes of the WSJ system (two 256-unit LSTMs, 4 frames per step).
    pub fn wsj(vocab_size: usize) -> Self {
        SynthesizerConfig {
            feature_dim: 80,
            vocab_size,
            embed_dim: 256,
            encoder_units: 256,
            encoder_hidden: 128,
            prenet_units: 256,
            decoder_hidden: 256,
            attention_dim: 128,
            frames_per_step: 4,
            leaky_slope: 0.01,
        }
    }

    pub fn memory_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("encoder_units", self.encoder_units),
            ("encoder_hidden", self.encoder_hidden),
            ("prenet_units", self.prenet_units),
            ("decoder_hidden", self.decoder_hidden),
            ("attention_dim", self.attention_dim),
            ("frames_per_step", self.frames_per_step),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("synthesizer.{name}"), "must be positive"));
            }
        }
        if self.vocab_size <= crate::corpus::NUM_SPECIAL {
            return Err(Error::config("synthesizer.vocab_size", "vocabulary has no characters"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::config("synthesizer.leaky_slope", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Tokens fed to the text encoder: the main segment with optional context.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TextWindow {
    pub look_back: Vec<TokenId>,
    pub main: Vec<TokenId>,
    pub look_ahead: Vec<TokenId>,
}

impl TextWindow {
    pub fn whole(tokens: &[TokenId]) -> Self {
        TextWindow {
            main: tokens.to_vec(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.look_back.len() + self.main.len() + self.look_ahead.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tokens_and_roles(&self) -> (Vec<TokenId>, Tensor) {
        let mut tokens = Vec::with_capacity(self.len());
        let mut roles = Tensor::zeros(self.len(), 3);
        let mut row = 0;
        for (role, part) in [&self.look_back, &self.main, &self.look_ahead].into_iter().enumerate() {
            for &t in part {
                tokens.push(t);
                roles.data_mut()[row * 3 + role] = 1.0;
                row += 1;
            }
        }
        (tokens, roles)
    }
}

#[derive(Debug, Clone)]
pub struct Synthesizer {
    config: SynthesizerConfig,
    params: ParamStore,
    embedding: ParamId,
    enc_input: Linear,
    enc_rnn: BiLstm,
    prenet: Linear,
    lstm1: Lstm,
    lstm2: Lstm,
    attention: AdditiveAttention,
    frame_out: Linear,
    stop_out: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct SynthState {
    pub l1: LstmState,
    pub l2: LstmState,
    /// Last emitted (or reference) frame, `[1, feature_dim]`.
    pub prev: Var,
}

/// Graph-independent [`SynthState`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCarry {
    pub l1: LstmValues,
    pub l2: LstmValues,
    pub prev: Tensor,
}

impl SynthCarry {
    pub fn bind(&self, g: &mut Graph) -> SynthState {
        SynthState {
            l1: LstmState::from_values(g, &self.l1),
            l2: LstmState::from_values(g, &self.l2),
            prev: g.constant(self.prev.clone()),
        }
    }

    pub fn capture(g: &Graph, s: &SynthState) -> Self {
        SynthCarry {
            l1: s.l1.values(g),
            l2: s.l2.values(g),
            prev: g.value(s.prev).clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    /// `[steps * r, feature_dim]`.
    pub frames: Tensor,
    pub stop_probs: Vec<f64>,
    /// One row per decoder step over the encoded tokens.
    pub attention: Tensor,
    pub truncated: bool,
}

impl SynthesisResult {
    pub fn steps(&self) -> usize {
        self.stop_probs.len()
    }
}

/// Graph handles of one teacher-forced pass.
#[derive(Debug, Clone, Copy)]
pub struct SynthTeacherForced {
    /// `[steps * r, feature_dim]`.
    pub frames: Var,
    /// `[steps, 2]`; column 1 is "stop".
    pub stop_logits: Var,
    pub attention: Var,
    pub state: SynthState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherForcedFrames {
    pub frames: Tensor,
    pub stop_logits: Tensor,
    pub attention: Tensor,
}

impl Synthesizer {
    pub fn new(config: SynthesizerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed, 0x5454_5301);
        Ok(Self::build(config, &mut rng))
    }

    fn build(config: SynthesizerConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new();
        let c = &config;
        let embedding = p.add_uniform("enc.embedding", c.vocab_size, c.embed_dim, rng);
        let enc_input = Linear::new(&mut p, "enc.input", c.embed_dim + 3, c.encoder_units, rng);
        let enc_rnn = BiLstm::new(&mut p, "enc.blstm", c.encoder_units, c.encoder_hidden, rng);
        let prenet = Linear::new(&mut p, "dec.prenet", c.feature_dim, c.prenet_units, rng);
        let lstm1 = Lstm::new(&mut p, "dec.lstm1", c.prenet_units + c.memory_dim(), c.decoder_hidden, rng);
        let lstm2 = Lstm::new(&mut p, "dec.lstm2", c.decoder_hidden, c.decoder_hidden, rng);
        let attention = AdditiveAttention::new(&mut p, "dec.attention", c.memory_dim(), c.decoder_hidden, c.attention_dim, rng);
        let frame_out = Linear::new(
            &mut p,
            "dec.frames",
            c.decoder_hidden + c.memory_dim(),
            c.frames_per_step * c.feature_dim,
            rng,
        );
        let stop_out = Linear::new(&mut p, "dec.stop", c.decoder_hidden + c.memory_dim(), 2, rng);
        Synthesizer {
            config,
            params: p,
            embedding,
            enc_input,
            enc_rnn,
            prenet,
            lstm1,
            lstm2,
            attention,
            frame_out,
            stop_out,
        }
    }

    pub fn config(&self) -> &SynthesizerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn initial_carry(&self) -> SynthCarry {
        SynthCarry {
            l1: LstmValues::zeros(self.config.decoder_hidden),
            l2: LstmValues::zeros(self.config.decoder_hidden),
            prev: Tensor::zeros(1, self.config.feature_dim),
        }
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

    /// Encoded text `[len, memory_dim]`, returned as attention memory.
    pub fn encode_graph(&self, g: &mut Graph, p: &Bound, window: &TextWindow) -> Result<AttentionMemory> {
        if window.main.is_empty() {
            return Err(Error::Argument("main text segment is empty".into()));
        }
        let (tokens, roles) = window.tokens_and_roles();
        self.check_tokens(&tokens)?;
        let emb = g.embedding(p[self.embedding], &tokens)?;
        let roles = g.constant(roles);
        let x = g.concat(&[emb, roles], Axis::Cols)?;
        let x = self.enc_input.forward(g, p, x)?;
        let x = g.leaky_relu(x, self.config.leaky_slope);
        let h = self.enc_rnn.forward(g, p, x)?;
        self.attention.memory(g, p, h)
    }

    fn zero_context(&self, g: &mut Graph) -> Var {
        g.constant(Tensor::zeros(1, self.config.memory_dim()))
    }

    /// One decoder step: `(frames [r, dim], stop logits [1, 2], attention, context)`.
    pub fn step(
        &self,
        g: &mut Graph,
        p: &Bound,
        mem: &AttentionMemory,
        state: &mut SynthState,
        ctx_prev: Var,
    ) -> Result<(Var, Var, Var, Var)> {
        let pre = self.prenet.forward(g, p, state.prev)?;
        let pre = g.leaky_relu(pre, self.config.leaky_slope);
        let x = g.concat(&[pre, ctx_prev], Axis::Cols)?;
        state.l1 = self.lstm1.step(g, p, x, state.l1)?;
        state.l2 = self.lstm2.step(g, p, state.l1.h, state.l2)?;
        let (ctx, weights) = self.attention.attend(g, p, mem, state.l2.h)?;
        let out = g.concat(&[state.l2.h, ctx], Axis::Cols)?;
        let flat = self.frame_out.forward(g, p, out)?;
        let frames = g.reshape(flat, self.config.frames_per_step, self.config.feature_dim)?;
        let stop = self.stop_out.forward(g, p, out)?;
        Ok((frames, stop, weights, ctx))
    }

    fn check_frames(&self, frames: &Tensor) -> Result<()> {
        if frames.cols() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "frames have dim {}, synthesizer expects {}",
                frames.cols(),
                self.config.feature_dim
            )));
        }
        Ok(())
    }

    /// Teacher-forced pass over `reference`, whose row count must be a
    /// multiple of `r`. Step `j` is fed the last reference frame of group
    /// `j - 1` (the carried frame for `j = 0`).
    pub fn teacher_forced_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        mem: &AttentionMemory,
        mut state: SynthState,
        reference: &Tensor,
    ) -> Result<SynthTeacherForced> {
        self.check_frames(reference)?;
        let r = self.config.frames_per_step;
        if !reference.rows().is_multiple_of(r) {
            return Err(Error::Shape(format!(
                "reference has {} frames, not a multiple of {r}",
                reference.rows()
            )));
        }
        let steps = reference.rows() / r;
        let mut ctx = self.zero_context(g);
        let (mut frames, mut stops, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..steps {
            let (f, s, w, c) = self.step(g, p, mem, &mut state, ctx)?;
            frames.push(f);
            stops.push(s);
            weights.push(w);
            ctx = c;
            let last = (j + 1) * r;
            state.prev = g.constant(reference.slice_rows(last - 1, last));
        }
        Ok(SynthTeacherForced {
            frames: g.concat(&frames, Axis::Rows)?,
            stop_logits: g.concat(&stops, Axis::Rows)?,
            attention: g.concat(&weights, Axis::Rows)?,
            state,
        })
    }

    /// Frame loss plus stop-flag loss of a teacher-forced segment. The
    /// reference is padded to a multiple of `r` with its last frame. Returns
    /// `(frame loss, stop loss, pass)`.
    pub fn segment_loss_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        window: &TextWindow,
        reference: &Tensor,
        state: SynthState,
    ) -> Result<(Var, Var, SynthTeacherForced)> {
        let mem = self.encode_graph(g, p, window)?;
        let padded = pad_to_multiple(reference, self.config.frames_per_step);
        let tf = self.teacher_forced_graph(g, p, &mem, state, &padded)?;
        let target = g.constant(padded);
        let frame_loss = g.squared_error(tf.frames, target)?;
        let stop_targets = stop_targets(g.value(tf.stop_logits).rows());
        let stop_loss = g.cross_entropy(tf.stop_logits, &stop_targets)?;
        Ok((frame_loss, stop_loss, tf))
    }

    /// Whole-utterance training loss from the initial state.
    pub fn loss_graph(&self, g: &mut Graph, p: &Bound, text: &[TokenId], reference: &Tensor) -> Result<Var> {
        let state = self.initial_carry().bind(g);
        let (f, s, _) = self.segment_loss_graph(g, p, &TextWindow::whole(text), reference, state)?;
        g.add(f, s)
    }

    /// Free-running synthesis until the stop probability exceeds the
    /// threshold or `max_steps` steps.
    pub fn greedy_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        mem: &AttentionMemory,
        state: &mut SynthState,
        max_steps: usize,
    ) -> Result<SynthesisResult> {
        if max_steps == 0 {
            return Err(Error::Argument("max_steps must be at least 1".into()));
        }
        let r = self.config.frames_per_step;
        let mut ctx = self.zero_context(g);
        let (mut frames, mut stop_probs, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        let mut truncated = true;
        while stop_probs.len() < max_steps {
            let (f, s, w, c) = self.step(g, p, mem, state, ctx)?;
            ctx = c;
            let logits = g.value(s).row_slice(0);
            let prob = crate::numerics::sigmoid(logits[1] - logits[0]);
            let group = g.value(f).clone();
            state.prev = g.constant(group.slice_rows(r - 1, r));
            frames.push(group);
            weights.push(g.value(w).clone());
            stop_probs.push(prob);
            if prob > STOP_THRESHOLD {
                truncated = false;
                break;
            }
        }
        Ok(SynthesisResult {
            frames: Tensor::vstack(&frames.iter().collect::<Vec<_>>())?,
            stop_probs,
            attention: Tensor::vstack(&weights.iter().collect::<Vec<_>>())?,
            truncated,
        })
    }

    /// Synthesizes one text window from a carried state.
    pub fn synthesize_window(
        &self,
        window: &TextWindow,
        carry: &SynthCarry,
        max_steps: usize,
    ) -> Result<(SynthesisResult, SynthCarry)> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let mem = self.encode_graph(&mut g, &p, window)?;
        let mut state = carry.bind(&mut g);
        let result = self.greedy_graph(&mut g, &p, &mem, &mut state, max_steps)?;
        Ok((result, SynthCarry::capture(&g, &state)))
    }

    pub fn synthesize_greedy(&self, tokens: &[TokenId], max_steps: usize) -> Result<SynthesisResult> {
        if tokens.is_empty() {
            return Err(Error::Argument("cannot synthesize empty text".into()));
        }
        Ok(self.synthesize_window(&TextWindow::whole(tokens), &self.initial_carry(), max_steps)?.0)
    }

    pub fn synthesize_teacher_forced(&self, tokens: &[TokenId], reference: &Tensor) -> Result<TeacherForcedFrames> {
        let mut g = Graph::new();
        let p = g.bind(&self.params, false);
        let mem = self.encode_graph(&mut g, &p, &TextWindow::whole(tokens))?;
        let state = self.initial_carry().bind(&mut g);
        let tf = self.teacher_forced_graph(&mut g, &p, &mem, state, reference)?;
        Ok(TeacherForcedFrames {
            frames: g.value(tf.frames).clone(),
            stop_logits: g.value(tf.stop_logits).clone(),
            attention: g.value(tf.attention).clone(),
        })
    }
}

/// Stop class per decoder step: 1 on the final step, 0 elsewhere.
pub fn stop_targets(steps: usize) -> Vec<usize> {
    (0..steps).map(|j| usize::from(j + 1 == steps)).collect()
}

/// Mean over frames of the squared Euclidean distance. When lengths differ
/// the shorter sequence is padded with copies of its own last frame.
pub fn feature_loss(predicted: &Tensor, reference: &Tensor) -> Result<f64> {
    if predicted.cols() != reference.cols() {
        return Err(Error::Shape(format!(
            "feature dims differ: {} vs {}",
            predicted.cols(),
            reference.cols()
        )));
    }
    let rows = predicted.rows().max(reference.rows());
    fn row(t: &Tensor, i: usize) -> &[f64] {
        t.row_slice(i.min(t.rows() - 1))
    }
    let total: f64 = (0..rows)
        .map(|i| {
            row(predicted, i)
                .iter()
                .zip(row(reference, i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / rows as f64)
}

/// Binary cross-entropy of stop probabilities against the stop-on-last target.
pub fn stop_loss(stop_probs: &[f64]) -> f64 {
    let eps = 1e-12;
    let n = stop_probs.len();
    stop_probs
        .iter()
        .zip(stop_targets(n))
        .map(|(&p, t)| if t == 1 { -(p.max(eps)).ln() } else { -((1.0 - p).max(eps)).ln() })
        .sum::<f64>()
        / n.max(1) as f64
}

#[cfg(test)]
mod tests;
