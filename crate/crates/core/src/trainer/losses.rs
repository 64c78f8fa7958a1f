//! Per-utterance training losses: supervised incremental losses and the two
//! unrolled chain directions, each averaged over incremental steps.
//!
//! Every function builds the consumer's loss in the caller's graph; the
//! producer always runs in a private graph with frozen parameters, so
//! gradients can only reach the consumer.

use std::ops::Range;

use crate::alignment::{build_isr_targets, build_itts_segments, isr_window, itts_window, BlockConfig, SegmentAlignment};
use crate::corpus::{TokenId, EOS};
use crate::error::{Error, Result};
use crate::incremental::{isr_step, EngineConfig, IsrState};
use crate::numerics::{argmax, Bound, Graph, Tensor, Var};
use crate::recognizer::Recognizer;
use crate::synthesizer::Synthesizer;

use super::Intermediate;

/// Averaged loss with the per-step terms it was built from.
#[derive(Debug, Clone)]
pub struct StepLosses {
    pub mean: Var,
    pub steps: Vec<Var>,
}

impl StepLosses {
    fn from_steps(g: &mut Graph, steps: Vec<Var>) -> Result<Self> {
        let mut acc = *steps
            .first()
            .ok_or_else(|| Error::Argument("no incremental steps to average".into()))?;
        for &v in &steps[1..] {
            acc = g.add(acc, v)?;
        }
        let mean = g.scale(acc, 1.0 / steps.len() as f64)?;
        Ok(StepLosses { mean, steps })
    }

    pub fn step_values(&self, g: &Graph) -> Vec<f64> {
        self.steps.iter().map(|&v| g.value(v).item()).collect()
    }
}

/// Positions that are scored: decoding ends at end-of-sentence, so nothing
/// after it is ever predicted.
pub fn scored_targets(targets: &[TokenId]) -> &[TokenId] {
    match targets.iter().position(|&t| t == EOS) {
        Some(p) => &targets[..=p],
        None => targets,
    }
}

/// Recognizer cross-entropy over fixed windows of `features`, carrying the
/// decoder state from window to window.
pub fn isr_windows_loss(
    g: &mut Graph,
    p: &Bound,
    isr: &Recognizer,
    features: &Tensor,
    targets: &[Vec<TokenId>],
    blocks: &BlockConfig,
) -> Result<StepLosses> {
    let n = blocks.num_windows(features.rows());
    if targets.len() != n {
        return Err(Error::Argument(format!("{} target segments for {n} windows", targets.len())));
    }
    let mut state = isr.initial_state(g);
    let mut steps = Vec::with_capacity(n);
    for (i, t) in targets.iter().enumerate() {
        let window = isr_window(features, blocks, i);
        let states = isr.encode_graph(g, p, &window)?;
        let mem = isr.memory(g, p, states)?;
        let t = scored_targets(t);
        let tf = isr.teacher_forced_graph(g, p, &mem, state, t)?;
        steps.push(g.cross_entropy(tf.logits, t)?);
        state = tf.state;
    }
    StepLosses::from_steps(g, steps)
}

/// Synthesizer frame and stop losses over aligned segments of `features`,
/// carrying the decoder state from segment to segment.
pub fn itts_segments_loss(
    g: &mut Graph,
    p: &Bound,
    itts: &Synthesizer,
    features: &Tensor,
    text: &[TokenId],
    segments: &SegmentAlignment,
    blocks: &BlockConfig,
) -> Result<StepLosses> {
    let mut state = itts.initial_carry().bind(g);
    let mut steps = Vec::with_capacity(segments.len());
    for seg in &segments.segments {
        let window = itts_window(text, blocks, seg.tokens.clone());
        let reference = features.slice_rows(seg.frames.start, seg.frames.end);
        let (f, s, tf) = itts.segment_loss_graph(g, p, &window, &reference, state)?;
        steps.push(g.add(f, s)?);
        state = tf.state;
    }
    StepLosses::from_steps(g, steps)
}

/// Greedy recognizer output per fixed window; windows after end-of-sentence are empty.
pub fn isr_greedy_segments(isr: &Recognizer, features: &Tensor, engine: &EngineConfig) -> Result<Vec<Vec<TokenId>>> {
    let blocks = &engine.blocks;
    let mut state = IsrState::new(isr);
    (0..blocks.num_windows(features.rows()))
        .map(|n| {
            if state.closed {
                return Ok(Vec::new());
            }
            isr_step(isr, &mut state, &isr_window(features, blocks, n), engine.token_cap())
        })
        .collect()
}

/// Character argmax of each logit row.
fn char_argmax(logits: &Tensor, rows: Range<usize>) -> Vec<TokenId> {
    let first = crate::corpus::NUM_SPECIAL;
    rows.map(|r| first + argmax(&logits.row_slice(r)[first..])).collect()
}

/// Teacher-forced recognizer output per window: at each reference
/// character position, the most likely character.
pub fn isr_forced_segments(
    isr: &Recognizer,
    features: &Tensor,
    text: &[TokenId],
    alignment: &SegmentAlignment,
    blocks: &BlockConfig,
) -> Result<Vec<Vec<TokenId>>> {
    let targets = build_isr_targets(alignment, text)?;
    let mut g = Graph::new();
    let p = g.bind(isr.params(), false);
    let mut state = isr.initial_state(&mut g);
    let mut out = Vec::with_capacity(targets.len());
    for (n, (t, seg)) in targets.iter().zip(&alignment.segments).enumerate() {
        let window = isr_window(features, blocks, n);
        let states = isr.encode_graph(&mut g, &p, &window)?;
        let mem = isr.memory(&mut g, &p, states)?;
        let tf = isr.teacher_forced_graph(&mut g, &p, &mem, state, scored_targets(t))?;
        out.push(char_argmax(g.value(tf.logits), 0..seg.num_tokens()));
        state = tf.state;
    }
    Ok(out)
}

/// Teacher-forced synthesizer output over aligned segments, each trimmed to
/// its reference width, concatenated.
pub fn itts_forced_frames(
    itts: &Synthesizer,
    features: &Tensor,
    text: &[TokenId],
    segments: &SegmentAlignment,
    blocks: &BlockConfig,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = g.bind(itts.params(), false);
    let mut state = itts.initial_carry().bind(&mut g);
    let mut parts = Vec::with_capacity(segments.len());
    for seg in &segments.segments {
        let window = itts_window(text, blocks, seg.tokens.clone());
        let reference = features.slice_rows(seg.frames.start, seg.frames.end);
        let (_, _, tf) = itts.segment_loss_graph(&mut g, &p, &window, &reference, state)?;
        parts.push(g.value(tf.frames).slice_rows(0, seg.width()));
        state = tf.state;
    }
    Tensor::vstack(&parts.iter().collect::<Vec<_>>())
}

/// Greedy synthesis over fixed text segments. Returns the frames and, per
/// segment, its token range and produced frame range.
pub fn itts_greedy_frames(
    itts: &Synthesizer,
    text: &[TokenId],
    engine: &EngineConfig,
) -> Result<(Tensor, Vec<(Range<usize>, Range<usize>)>)> {
    let mut carry = itts.initial_carry();
    let mut parts = Vec::new();
    let mut spans = Vec::new();
    let mut origin = 0;
    for seg in engine.text_segments(text.len()) {
        let window = itts_window(text, &engine.blocks, seg.clone());
        let (out, next) = itts.synthesize_window(&window, &carry, engine.synth_cap(seg.len()))?;
        carry = next;
        let rows = out.frames.rows();
        spans.push((seg, origin..origin + rows));
        origin += rows;
        parts.push(out.frames);
    }
    Ok((Tensor::vstack(&parts.iter().collect::<Vec<_>>())?, spans))
}

/// Places tokens evenly inside the frames synthesized for them and groups
/// them by fixed window.
pub fn uniform_alignment(
    spans: &[(Range<usize>, Range<usize>)],
    blocks: &BlockConfig,
    num_frames: usize,
) -> Result<SegmentAlignment> {
    let mut counts = vec![0; blocks.num_windows(num_frames)];
    let w = blocks.window_frames();
    let last = counts.len() - 1;
    for (tokens, frames) in spans {
        let k = tokens.len();
        for j in 0..k {
            let pos = frames.start + ((2 * j + 1) * frames.len()) / (2 * k);
            counts[(pos / w).min(last)] += 1;
        }
    }
    SegmentAlignment::from_counts(&counts, blocks, num_frames)
}

/// What a chain step may see of one utterance.
#[derive(Debug, Clone, Copy)]
pub struct ChainExample<'a> {
    pub features: Option<&'a Tensor>,
    pub text: Option<&'a [TokenId]>,
    /// Teacher alignment of `features` and `text`.
    pub alignment: Option<&'a SegmentAlignment>,
}

fn need<'a, T: ?Sized>(v: Option<&'a T>, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::Argument(format!("chain step needs the utterance {what}")))
}

/// Outcome of one unrolled direction on one utterance.
#[derive(Debug, Clone)]
pub struct ChainLoss {
    pub losses: StepLosses,
    /// Producer steps whose output was empty and had to be merged away.
    pub degenerate_steps: usize,
    /// Characters handed from producer to consumer.
    pub tokens: usize,
}

/// Recognizer-to-synthesizer direction: the recognizer transcribes each
/// speech window, the synthesizer reconstructs the window's frames from the
/// transcription. `None` when the recognizer produced no characters at all.
pub fn isr_to_itts_loss(
    g: &mut Graph,
    p: &Bound,
    isr: &Recognizer,
    itts: &Synthesizer,
    ex: &ChainExample,
    mode: Intermediate,
    engine: &EngineConfig,
) -> Result<Option<ChainLoss>> {
    let blocks = &engine.blocks;
    let x = need(ex.features, "features")?;
    let produced = match mode {
        Intermediate::Greedy => isr_greedy_segments(isr, x, engine)?,
        Intermediate::TeacherForcing => {
            isr_forced_segments(isr, x, need(ex.text, "text")?, need(ex.alignment, "alignment")?, blocks)?
        }
    };
    let counts: Vec<usize> = produced.iter().map(Vec::len).collect();
    if counts.iter().all(|&k| k == 0) {
        return Ok(None);
    }
    let degenerate_steps = counts.iter().filter(|&&k| k == 0).count();
    let alignment = SegmentAlignment::from_counts(&counts, blocks, x.rows())?;
    let segments = build_itts_segments(&alignment, blocks)?;
    let text: Vec<TokenId> = produced.concat();
    let losses = itts_segments_loss(g, p, itts, x, &text, &segments, blocks)?;
    Ok(Some(ChainLoss {
        losses,
        degenerate_steps,
        tokens: text.len(),
    }))
}

/// Synthesizer-to-recognizer direction: the synthesizer speaks each text
/// segment, the recognizer transcribes the synthetic windows.
pub fn itts_to_isr_loss(
    g: &mut Graph,
    p: &Bound,
    isr: &Recognizer,
    itts: &Synthesizer,
    ex: &ChainExample,
    mode: Intermediate,
    engine: &EngineConfig,
) -> Result<Option<ChainLoss>> {
    let blocks = &engine.blocks;
    let text = need(ex.text, "text")?;
    let (synthetic, alignment) = match mode {
        Intermediate::TeacherForcing => {
            let x = need(ex.features, "features")?;
            let alignment = need(ex.alignment, "alignment")?;
            let segments = build_itts_segments(alignment, blocks)?;
            (itts_forced_frames(itts, x, text, &segments, blocks)?, alignment.clone())
        }
        Intermediate::Greedy => {
            let (frames, spans) = itts_greedy_frames(itts, text, engine)?;
            if frames.rows() == 0 {
                return Ok(None);
            }
            let alignment = uniform_alignment(&spans, blocks, frames.rows())?;
            (frames, alignment)
        }
    };
    let targets = build_isr_targets(&alignment, text)?;
    let losses = isr_windows_loss(g, p, isr, &synthetic, &targets, blocks)?;
    Ok(Some(ChainLoss {
        losses,
        degenerate_steps: 0,
        tokens: text.len(),
    }))
}

/// Whole-utterance recognizer-to-synthesizer loss.
pub fn asr_to_tts_loss(
    g: &mut Graph,
    p: &Bound,
    asr: &Recognizer,
    tts: &Synthesizer,
    ex: &ChainExample,
    mode: Intermediate,
    engine: &EngineConfig,
) -> Result<Option<Var>> {
    let x = need(ex.features, "features")?;
    let produced = match mode {
        Intermediate::Greedy => asr.recognize(x, engine.token_cap().max(x.rows()))?.text(),
        Intermediate::TeacherForcing => {
            let text = need(ex.text, "text")?;
            let mut reference = text.to_vec();
            reference.push(EOS);
            let tf = asr.decode_teacher_forced(&asr.encode(x)?, &reference)?;
            char_argmax(&tf.logits, 0..text.len())
        }
    };
    if produced.is_empty() {
        return Ok(None);
    }
    tts.loss_graph(g, p, &produced, x).map(Some)
}

/// Whole-utterance synthesizer-to-recognizer loss.
pub fn tts_to_asr_loss(
    g: &mut Graph,
    p: &Bound,
    asr: &Recognizer,
    tts: &Synthesizer,
    ex: &ChainExample,
    mode: Intermediate,
    engine: &EngineConfig,
) -> Result<Option<Var>> {
    let text = need(ex.text, "text")?;
    let synthetic = match mode {
        Intermediate::Greedy => {
            let frames = tts.synthesize_greedy(text, engine.synth_cap(text.len()))?.frames;
            if frames.rows() == 0 {
                return Ok(None);
            }
            frames
        }
        Intermediate::TeacherForcing => {
            let x = need(ex.features, "features")?;
            let padded = crate::recognizer::pad_to_multiple(x, tts.config().frames_per_step);
            let tf = tts.synthesize_teacher_forced(text, &padded)?;
            tf.frames.slice_rows(0, x.rows())
        }
    };
    asr.loss_graph(g, p, &synthetic, text).map(Some)
}
