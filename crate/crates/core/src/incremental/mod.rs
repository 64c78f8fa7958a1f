//! Streaming recognition and synthesis with state carried across steps.
//!
//! A recognizer stream consumes one speech window per step and emits the
//! tokens decoded up to end-of-block. A synthesizer stream consumes one
//! text segment per step and emits frames until its stop flag. The chained
//! modes hand every producer step's output to one consumer step before the
//! producer continues.

use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::{compute_delays, isr_window, BlockConfig};
use crate::corpus::{FrameSpec, TokenId, EOB, EOS};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};
use crate::recognizer::{pad_to_multiple, DecoderCarry, Recognizer};
use crate::synthesizer::{SynthCarry, Synthesizer, TextWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub blocks: BlockConfig,
    pub frame_spec: FrameSpec,
    /// Token cap per recognition step; defaults to three character blocks.
    pub max_tokens_per_step: Option<usize>,
    /// Synthesizer decoder-step cap per main-segment character.
    pub max_synth_steps_per_char: usize,
}

impl EngineConfig {
    pub fn new(blocks: BlockConfig, frame_spec: FrameSpec) -> Self {
        EngineConfig {
            blocks,
            frame_spec,
            max_tokens_per_step: None,
            max_synth_steps_per_char: 4,
        }
    }

    pub fn token_cap(&self) -> usize {
        self.max_tokens_per_step.unwrap_or(3 * self.blocks.chars_per_block)
    }

    pub fn synth_cap(&self, main_tokens: usize) -> usize {
        (self.max_synth_steps_per_char * main_tokens).max(1)
    }

    /// Main text segment length in characters for fixed segmentation.
    pub fn main_chars(&self) -> usize {
        ((self.blocks.main_char_blocks * self.blocks.chars_per_block as f64).round() as usize).max(1)
    }

    /// Splits `len` characters into consecutive fixed-size main segments.
    pub fn text_segments(&self, len: usize) -> Vec<Range<usize>> {
        let m = self.main_chars();
        (0..len.div_ceil(m)).map(|i| i * m..((i + 1) * m).min(len)).collect()
    }
}

/// Carried recognizer stream state.
#[derive(Debug, Clone, PartialEq)]
pub struct IsrState {
    pub carry: DecoderCarry,
    /// Index of the next step.
    pub step: usize,
    pub output: Vec<TokenId>,
    /// End-of-sentence has been emitted.
    pub closed: bool,
}

impl IsrState {
    pub fn new(model: &Recognizer) -> Self {
        IsrState {
            carry: model.initial_carry(),
            step: 0,
            output: Vec::new(),
            closed: false,
        }
    }
}

/// One recognition step over `window`: decodes until end-of-block,
/// end-of-sentence or `max_tokens`, returning the character tokens.
pub fn isr_step(model: &Recognizer, state: &mut IsrState, window: &Tensor, max_tokens: usize) -> Result<Vec<TokenId>> {
    if state.closed {
        return Err(Error::State("recognizer stream already closed by end-of-sentence".into()));
    }
    let mut g = Graph::new();
    let p = g.bind(model.params(), false);
    let states = model.encode_graph(&mut g, &p, window)?;
    let mem = model.memory(&mut g, &p, states)?;
    let mut dec = state.carry.bind(&mut g);
    let result = model.greedy_graph(&mut g, &p, &mem, &mut dec, max_tokens, &[EOS, EOB])?;
    state.carry = DecoderCarry::capture(&g, &dec);
    state.step += 1;
    state.closed = result.terminator() == Some(EOS);
    let tokens = result.text();
    state.output.extend_from_slice(&tokens);
    Ok(tokens)
}

/// Carried synthesizer stream state.
#[derive(Debug, Clone, PartialEq)]
pub struct IttsState {
    pub carry: SynthCarry,
    pub step: usize,
    /// Tokens consumed so far.
    pub origin: usize,
    pub output: Vec<Tensor>,
}

impl IttsState {
    pub fn new(model: &Synthesizer) -> Self {
        IttsState {
            carry: model.initial_carry(),
            step: 0,
            origin: 0,
            output: Vec::new(),
        }
    }

    pub fn frames(&self) -> Option<Tensor> {
        (!self.output.is_empty()).then(|| Tensor::vstack(&self.output.iter().collect::<Vec<_>>()).expect("same dim"))
    }
}

/// One synthesis step over a text window, decoding until the stop flag or
/// `max_steps` decoder steps.
pub fn itts_step(model: &Synthesizer, state: &mut IttsState, window: &TextWindow, max_steps: usize) -> Result<Tensor> {
    if window.main.is_empty() {
        return Err(Error::Argument("synthesis step needs at least one main token".into()));
    }
    let (result, carry) = model.synthesize_window(window, &state.carry, max_steps)?;
    state.carry = carry;
    state.step += 1;
    state.origin += window.main.len();
    state.output.push(result.frames.clone());
    Ok(result.frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    Isr,
    Itts,
    IsrToItts,
    IttsToIsr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Isr,
    Itts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub mode: StreamMode,
    pub component: Component,
    pub n: usize,
    /// Main input span: frames for the recognizer, tokens for the synthesizer.
    pub bounds: [usize; 2],
    pub emitted_tokens: Vec<TokenId>,
    pub emitted_frames: usize,
    pub wall_ms: f64,
    /// Seconds of speech (recognizer) or characters of text (synthesizer)
    /// that must arrive before this step's output.
    pub modeled_delay: f64,
    /// Event counter values at step start and end.
    pub started: usize,
    pub finished: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamInput {
    Features(Tensor),
    Text(Vec<TokenId>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub tokens: Vec<TokenId>,
    pub frames: Option<Tensor>,
    pub traces: Vec<StepTrace>,
}

struct Clock {
    events: usize,
}

impl Clock {
    fn tick(&mut self) -> usize {
        self.events += 1;
        self.events
    }
}

/// Drives a full stream in `mode`. Chained modes alternate strictly: each
/// producer step is followed by the consumer step on its output.
pub fn run_stream(
    mode: StreamMode,
    isr: &Recognizer,
    itts: &Synthesizer,
    config: &EngineConfig,
    input: &StreamInput,
) -> Result<StreamOutput> {
    config.blocks.check_subsampling(isr.config().subsampling())?;
    let delays = compute_delays(&config.blocks, &config.frame_spec);
    let mut clock = Clock { events: 0 };
    let mut traces = Vec::new();
    let mut isr_state = IsrState::new(isr);
    let mut itts_state = IttsState::new(itts);
    let blocks = &config.blocks;

    match (mode, input) {
        (StreamMode::Isr | StreamMode::IsrToItts, StreamInput::Features(x)) => {
            let n_windows = blocks.num_windows(x.rows());
            let mut consumed: Vec<TokenId> = Vec::new();
            for n in 0..n_windows {
                if isr_state.closed {
                    break;
                }
                let started = clock.tick();
                let t0 = Instant::now();
                let window = isr_window(x, blocks, n);
                let tokens = isr_step(isr, &mut isr_state, &window, config.token_cap())?;
                let main = n * blocks.window_frames()..((n + 1) * blocks.window_frames()).min(x.rows());
                traces.push(StepTrace {
                    mode,
                    component: Component::Isr,
                    n,
                    bounds: [main.start, main.end],
                    emitted_tokens: tokens.clone(),
                    emitted_frames: 0,
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                    modeled_delay: delays.isr_seconds,
                    started,
                    finished: clock.tick(),
                });
                if mode == StreamMode::IsrToItts && !tokens.is_empty() {
                    let back = blocks.look_back_blocks * blocks.chars_per_block;
                    let window = TextWindow {
                        look_back: consumed[consumed.len().saturating_sub(back)..].to_vec(),
                        main: tokens.clone(),
                        look_ahead: Vec::new(),
                    };
                    let origin = itts_state.origin;
                    let started = clock.tick();
                    let t0 = Instant::now();
                    let frames = itts_step(itts, &mut itts_state, &window, config.synth_cap(tokens.len()))
                        .map_err(|e| Error::StreamAborted {
                            step: n,
                            source: Box::new(e),
                        })?;
                    traces.push(StepTrace {
                        mode,
                        component: Component::Itts,
                        n,
                        bounds: [origin, origin + tokens.len()],
                        emitted_tokens: Vec::new(),
                        emitted_frames: frames.rows(),
                        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                        modeled_delay: tokens.len() as f64,
                        started,
                        finished: clock.tick(),
                    });
                    consumed.extend_from_slice(&tokens);
                }
            }
        }
        (StreamMode::Itts | StreamMode::IttsToIsr, StreamInput::Text(text)) => {
            if text.is_empty() {
                return Err(Error::Argument("cannot stream empty text".into()));
            }
            let fpb = blocks.frames_per_block;
            let mut synthesized: Vec<Tensor> = Vec::new();
            let mut frame_origin = 0;
            for (n, seg) in config.text_segments(text.len()).into_iter().enumerate() {
                let window = crate::alignment::itts_window(text, blocks, seg.clone());
                let started = clock.tick();
                let t0 = Instant::now();
                let frames = itts_step(itts, &mut itts_state, &window, config.synth_cap(seg.len()))?;
                traces.push(StepTrace {
                    mode,
                    component: Component::Itts,
                    n,
                    bounds: [seg.start, seg.end],
                    emitted_tokens: Vec::new(),
                    emitted_frames: frames.rows(),
                    wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                    modeled_delay: (window.main.len() + window.look_ahead.len()) as f64,
                    started,
                    finished: clock.tick(),
                });
                if mode == StreamMode::IttsToIsr && !isr_state.closed {
                    let history = if synthesized.is_empty() {
                        None
                    } else {
                        Some(Tensor::vstack(&synthesized.iter().collect::<Vec<_>>())?)
                    };
                    let window = streaming_isr_window(history.as_ref(), blocks.look_back_frames(), &frames, blocks.look_ahead_frames(), fpb)?;
                    let started = clock.tick();
                    let t0 = Instant::now();
                    let tokens = isr_step(isr, &mut isr_state, &window, config.token_cap()).map_err(|e| {
                        Error::StreamAborted {
                            step: n,
                            source: Box::new(e),
                        }
                    })?;
                    traces.push(StepTrace {
                        mode,
                        component: Component::Isr,
                        n,
                        bounds: [frame_origin, frame_origin + frames.rows()],
                        emitted_tokens: tokens,
                        emitted_frames: 0,
                        wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                        modeled_delay: delays.isr_seconds,
                        started,
                        finished: clock.tick(),
                    });
                }
                frame_origin += frames.rows();
                synthesized.push(frames);
            }
        }
        _ => return Err(Error::Argument(format!("{mode:?} stream got the wrong input kind"))),
    }

    Ok(StreamOutput {
        tokens: isr_state.output,
        frames: itts_state.frames(),
        traces,
    })
}

/// Recognizer window over freshly synthesized `main` frames: the last
/// `back` frames of `history` (zero-padded), `main` padded to whole blocks,
/// and `ahead` frames repeating the last one, since no later speech exists yet.
fn streaming_isr_window(
    history: Option<&Tensor>,
    back: usize,
    main: &Tensor,
    ahead: usize,
    fpb: usize,
) -> Result<Tensor> {
    let dim = main.cols();
    let mut parts: Vec<Tensor> = Vec::new();
    let h = history.map_or(0, Tensor::rows);
    let take = back.min(h);
    if back > take {
        parts.push(Tensor::zeros(back - take, dim));
    }
    if let Some(history) = history.filter(|_| take > 0) {
        parts.push(history.slice_rows(h - take, h));
    }
    parts.push(pad_to_multiple(main, fpb));
    if ahead > 0 {
        let last = main.slice_rows(main.rows() - 1, main.rows());
        parts.extend(std::iter::repeat_n(last, ahead));
    }
    Tensor::vstack(&parts.iter().collect::<Vec<_>>())
}

/// Checks that consecutive producer and consumer steps never overlap.
pub fn strictly_alternating(traces: &[StepTrace]) -> bool {
    traces.windows(2).all(|w| w[0].finished < w[1].started)
}
