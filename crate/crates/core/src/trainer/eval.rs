//! Dev and test metrics in either operating mode.

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::incremental::EngineConfig;
use crate::numerics::Tensor;
use crate::recognizer::{edit_distance, Recognizer};
use crate::synthesizer::{feature_loss, Synthesizer};

use super::losses::{isr_greedy_segments, itts_greedy_frames};
use super::TrainMode;

/// Recognizer transcript of `features`, streamed window by window in
/// incremental mode.
pub fn transcribe(isr: &Recognizer, features: &Tensor, mode: TrainMode, engine: &EngineConfig) -> Result<Vec<TokenId>> {
    match mode {
        TrainMode::Nonincremental => {
            let cap = engine.token_cap().max(features.rows());
            Ok(isr.recognize(features, cap)?.text())
        }
        TrainMode::Incremental => Ok(isr_greedy_segments(isr, features, engine)?.concat()),
    }
}

/// Synthesized features for `text`, segment by segment in incremental mode.
pub fn speak(itts: &Synthesizer, text: &[TokenId], mode: TrainMode, engine: &EngineConfig) -> Result<Tensor> {
    match mode {
        TrainMode::Nonincremental => Ok(itts.synthesize_greedy(text, engine.synth_cap(text.len()))?.frames),
        TrainMode::Incremental => Ok(itts_greedy_frames(itts, text, engine)?.0),
    }
}

/// Corpus-level character error rate in percent: total edits over total
/// reference characters.
pub fn corpus_cer(pairs: &[(Vec<TokenId>, &[TokenId])]) -> Result<f64> {
    let (mut edits, mut chars) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        let r = crate::corpus::strip_special(reference);
        edits += edit_distance(&crate::corpus::strip_special(hyp), &r);
        chars += r.len();
    }
    if chars == 0 {
        return Err(Error::Argument("no reference characters to score".into()));
    }
    Ok(100.0 * edits as f64 / chars as f64)
}

/// CER of the recognizer over `(features, text)` items.
pub fn recognizer_cer(
    isr: &Recognizer,
    items: &[(&Tensor, &[TokenId])],
    mode: TrainMode,
    engine: &EngineConfig,
) -> Result<f64> {
    let pairs = items
        .iter()
        .map(|&(x, t)| Ok((transcribe(isr, x, mode, engine)?, t)))
        .collect::<Result<Vec<_>>>()?;
    corpus_cer(&pairs)
}

/// Mean feature loss of the synthesizer over `(features, text)` items.
pub fn synthesizer_loss(
    itts: &Synthesizer,
    items: &[(&Tensor, &[TokenId])],
    mode: TrainMode,
    engine: &EngineConfig,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Argument("no utterances to score".into()));
    }
    let mut total = 0.0;
    for &(x, t) in items {
        total += feature_loss(&speak(itts, t, mode, engine)?, x)?;
    }
    Ok(total / items.len() as f64)
}
