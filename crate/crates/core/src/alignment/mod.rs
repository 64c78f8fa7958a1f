//! Hard segment alignments derived from teacher attention.
//!
//! Every transcript token is assigned to the encoder state it attends to
//! most. Encoder states are grouped into fixed windows of `W` frames; the
//! tokens landing in window `n` form the token segment `Y_n` of speech
//! segment `X_n`.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{block_duration, FrameSpec, TokenId, EOB, EOS};
use crate::error::{Error, Result};
use crate::numerics::{argmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockConfig {
    /// Frames per speech block; equals the recognizer's total subsampling.
    pub frames_per_block: usize,
    /// Speech blocks per main window.
    pub main_blocks: usize,
    /// Context blocks before the main segment, speech or character.
    pub look_back_blocks: usize,
    /// Context blocks after the main segment, speech or character.
    pub look_ahead_blocks: usize,
    pub chars_per_block: usize,
    /// Average synthesizer main segment length in character blocks, used for
    /// the nominal delay figure.
    pub main_char_blocks: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        BlockConfig {
            frames_per_block: 8,
            main_blocks: 4,
            look_back_blocks: 2,
            look_ahead_blocks: 4,
            chars_per_block: 5,
            main_char_blocks: 2.0,
        }
    }
}

impl BlockConfig {
    /// A single window spanning `frames` frames with no context.
    pub fn whole_utterance(frames: usize, frames_per_block: usize) -> Self {
        BlockConfig {
            frames_per_block,
            main_blocks: frames.div_ceil(frames_per_block).max(1),
            look_back_blocks: 0,
            look_ahead_blocks: 0,
            ..Default::default()
        }
    }

    /// Main window width `W` in frames.
    pub fn window_frames(&self) -> usize {
        self.main_blocks * self.frames_per_block
    }

    pub fn look_back_frames(&self) -> usize {
        self.look_back_blocks * self.frames_per_block
    }

    pub fn look_ahead_frames(&self) -> usize {
        self.look_ahead_blocks * self.frames_per_block
    }

    /// Number of main windows `N = ceil(S / W)`.
    pub fn num_windows(&self, frames: usize) -> usize {
        frames.div_ceil(self.window_frames())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_block == 0 || !self.frames_per_block.is_power_of_two() {
            return Err(Error::config("blocks.frames_per_block", "must be a power of two"));
        }
        if self.main_blocks == 0 {
            return Err(Error::config("blocks.main_blocks", "must be positive"));
        }
        if self.chars_per_block == 0 {
            return Err(Error::config("blocks.chars_per_block", "must be positive"));
        }
        if !(self.main_char_blocks > 0.0) || !self.main_char_blocks.is_finite() {
            return Err(Error::config("blocks.main_char_blocks", "must be positive"));
        }
        Ok(())
    }

    /// Checks that blocks line up with `subsampling` encoder frames per state.
    pub fn check_subsampling(&self, subsampling: usize) -> Result<()> {
        if self.frames_per_block != subsampling {
            return Err(Error::config(
                "blocks.frames_per_block",
                format!("is {} but the recognizer subsamples by {subsampling}", self.frames_per_block),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub frames: Range<usize>,
    pub tokens: Range<usize>,
}

impl Segment {
    pub fn width(&self) -> usize {
        self.frames.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentAlignment {
    pub segments: Vec<Segment>,
    pub num_frames: usize,
    pub num_tokens: usize,
    /// Tokens whose argmax window was pulled forward to keep segments ordered.
    pub repairs: usize,
}

impl SegmentAlignment {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn token_counts(&self) -> Vec<usize> {
        self.segments.iter().map(Segment::num_tokens).collect()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.segments.iter().map(Segment::width).collect()
    }

    /// Builds an alignment from per-segment token counts over fixed windows.
    pub fn from_counts(counts: &[usize], config: &BlockConfig, num_frames: usize) -> Result<Self> {
        let n = config.num_windows(num_frames);
        if counts.len() != n {
            return Err(Error::Argument(format!(
                "{} token counts for {n} windows",
                counts.len()
            )));
        }
        let w = config.window_frames();
        let mut start = 0;
        let segments = counts
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let seg = Segment {
                    frames: i * w..((i + 1) * w).min(num_frames),
                    tokens: start..start + k,
                };
                start += k;
                seg
            })
            .collect();
        Ok(SegmentAlignment {
            segments,
            num_frames,
            num_tokens: start,
            repairs: 0,
        })
    }
}

/// Assigns each token to a main window through its attention argmax.
///
/// `attention` has one row per token and one column per encoder state.
pub fn extract_alignment(
    attention: &Tensor,
    config: &BlockConfig,
    num_frames: usize,
    num_tokens: usize,
) -> Result<SegmentAlignment> {
    if attention.rows() != num_tokens {
        return Err(Error::Shape(format!(
            "attention has {} rows for {num_tokens} tokens",
            attention.rows()
        )));
    }
    let states = num_frames.div_ceil(config.frames_per_block);
    if attention.cols() != states {
        return Err(Error::Shape(format!(
            "attention has {} columns, {num_frames} frames give {states} encoder states",
            attention.cols()
        )));
    }
    let n = config.num_windows(num_frames);
    let mut counts = vec![0; n];
    let mut floor = 0;
    let mut repairs = 0;
    for t in 0..num_tokens {
        let window = argmax(attention.row_slice(t)) / config.main_blocks;
        if window < floor {
            repairs += 1;
        }
        floor = floor.max(window);
        counts[floor] += 1;
    }
    let mut alignment = SegmentAlignment::from_counts(&counts, config, num_frames)?;
    alignment.repairs = repairs;
    Ok(alignment)
}

/// Per-segment recognizer targets: `Y_n` then end-of-block, with
/// end-of-sentence before the final end-of-block.
pub fn build_isr_targets(alignment: &SegmentAlignment, text: &[TokenId]) -> Result<Vec<Vec<TokenId>>> {
    if text.len() != alignment.num_tokens {
        return Err(Error::Argument(format!(
            "text has {} tokens, alignment covers {}",
            text.len(),
            alignment.num_tokens
        )));
    }
    let last = alignment.len() - 1;
    Ok(alignment
        .segments
        .iter()
        .enumerate()
        .map(|(n, seg)| {
            let mut t = text[seg.tokens.clone()].to_vec();
            if n == last {
                t.push(EOS);
            }
            t.push(EOB);
            t
        })
        .collect())
}

/// Merges token-less segments into a neighbour for synthesizer training.
///
/// Leading empty segments fold into the first non-empty one; every other
/// empty segment folds into its predecessor. A final segment narrower than
/// `W` (the utterance tail) also folds into its predecessor.
pub fn build_itts_segments(alignment: &SegmentAlignment, config: &BlockConfig) -> Result<SegmentAlignment> {
    if alignment.num_tokens == 0 {
        return Err(Error::Argument("alignment has no tokens to anchor segments".into()));
    }
    let mut merged: Vec<Segment> = Vec::with_capacity(alignment.len());
    let mut pending: Option<Range<usize>> = None;
    for seg in &alignment.segments {
        if seg.num_tokens() == 0 {
            match merged.last_mut() {
                Some(prev) => prev.frames.end = seg.frames.end,
                None => {
                    let start = pending.as_ref().map_or(seg.frames.start, |p| p.start);
                    pending = Some(start..seg.frames.end);
                }
            }
            continue;
        }
        let mut seg = seg.clone();
        if let Some(p) = pending.take() {
            seg.frames.start = p.start;
        }
        merged.push(seg);
    }
    if merged.len() >= 2 && merged.last().is_some_and(|s| s.width() < config.window_frames()) {
        let tail = merged.pop().expect("nonempty");
        let prev = merged.last_mut().expect("two segments");
        prev.frames.end = tail.frames.end;
        prev.tokens.end = tail.tokens.end;
    }
    Ok(SegmentAlignment {
        segments: merged,
        num_frames: alignment.num_frames,
        num_tokens: alignment.num_tokens,
        repairs: alignment.repairs,
    })
}

/// Modeled delays: recognizer seconds until the first output and
/// synthesizer characters consumed before the first output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delays {
    pub isr_seconds: f64,
    pub itts_characters: f64,
}

pub fn compute_delays(config: &BlockConfig, spec: &FrameSpec) -> Delays {
    let frames = (config.main_blocks + config.look_ahead_blocks) * config.frames_per_block;
    Delays {
        isr_seconds: block_duration(spec, frames),
        itts_characters: (config.main_char_blocks + config.look_ahead_blocks as f64) * config.chars_per_block as f64,
    }
}

/// Realized average synthesizer main segment length in character blocks.
pub fn average_main_char_blocks<'a>(
    alignments: impl IntoIterator<Item = &'a SegmentAlignment>,
    chars_per_block: usize,
) -> Option<f64> {
    let (mut tokens, mut segments) = (0usize, 0usize);
    for a in alignments {
        tokens += a.num_tokens;
        segments += a.len();
    }
    (segments > 0).then(|| tokens as f64 / segments as f64 / chars_per_block as f64)
}

/// Recognizer input for window `n`: look-back, main and look-ahead frames.
/// Missing look-back frames are zeros; frames past the end repeat the last
/// frame, so every window has the same width.
pub fn isr_window(features: &Tensor, config: &BlockConfig, n: usize) -> Tensor {
    let s = features.rows() as isize;
    let dim = features.cols();
    let w = config.window_frames() as isize;
    let start = n as isize * w - config.look_back_frames() as isize;
    let width = config.look_back_frames() + config.window_frames() + config.look_ahead_frames();
    let mut data = Vec::with_capacity(width * dim);
    for i in 0..width as isize {
        let f = start + i;
        if f < 0 {
            data.extend(std::iter::repeat_n(0.0, dim));
        } else {
            data.extend_from_slice(features.row_slice(f.min(s - 1) as usize));
        }
    }
    Tensor::new(width, dim, data).expect("window shape")
}

/// Synthesizer input for the token range `tokens` plus up to the
/// configured number of context character blocks on each side.
pub fn itts_window(text: &[TokenId], config: &BlockConfig, tokens: Range<usize>) -> crate::synthesizer::TextWindow {
    let back = config.look_back_blocks * config.chars_per_block;
    let ahead = config.look_ahead_blocks * config.chars_per_block;
    crate::synthesizer::TextWindow {
        look_back: text[tokens.start.saturating_sub(back)..tokens.start].to_vec(),
        main: text[tokens.clone()].to_vec(),
        look_ahead: text[tokens.end..(tokens.end + ahead).min(text.len())].to_vec(),
    }
}

/// Alignment export record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub id: String,
    pub frames: Vec<[usize; 2]>,
    pub tokens: Vec<[usize; 2]>,
    pub repairs: usize,
}

impl AlignmentRecord {
    pub fn new(id: &str, alignment: &SegmentAlignment) -> Self {
        AlignmentRecord {
            id: id.to_string(),
            frames: alignment.segments.iter().map(|s| [s.frames.start, s.frames.end]).collect(),
            tokens: alignment.segments.iter().map(|s| [s.tokens.start, s.tokens.end]).collect(),
            repairs: alignment.repairs,
        }
    }
}

#[cfg(test)]
mod tests;
