//! Scoring a trained recognizer/synthesizer pair on natural or synthetic input.

use ichain::alignment::compute_delays;
use ichain::corpus::{block_duration, Split};
use ichain::numerics::Tensor;
use ichain::recognizer::Recognizer;
use ichain::synthesizer::{feature_loss, Synthesizer};
use ichain::trainer::eval::{corpus_cer, speak, transcribe};
use ichain::trainer::TrainMode;
use ichain::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::generate::{check_vocab, load_corpus};
use crate::layout::{mode_name, model_stem, write_file, Regime, RunLayout};
use crate::RunConfig;

/// Where the input of the scored component comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Corpus features for the recognizer, corpus text for the synthesizer.
    Natural,
    /// Output of the counterpart component.
    Synthetic,
}

impl InputKind {
    pub fn name(self) -> &'static str {
        match self {
            InputKind::Natural => "natural",
            InputKind::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Chain,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Chain => Split::Chain,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalArgs {
    pub mode: TrainMode,
    pub regime: Regime,
    pub input: InputKind,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub id: String,
    pub mode: TrainMode,
    pub regime: Regime,
    pub input: InputKind,
    pub split: Split,
    /// Checkpoint stems of the scored pair.
    pub recognizer: String,
    pub synthesizer: String,
    pub utterances: usize,
    /// Recognizer character error rate in percent.
    pub cer: f64,
    /// Mean synthesizer feature loss.
    pub feature_loss: f64,
    /// Speech that must arrive before recognizer output; the whole
    /// utterance on average outside incremental mode.
    pub delay_seconds: f64,
    /// Text that must arrive before synthesizer output.
    pub delay_characters: f64,
}

pub fn eval_id(args: &EvalArgs) -> String {
    format!(
        "{}-{}-{}-{}",
        mode_name(args.mode),
        args.regime.name(),
        args.input.name(),
        args.split.name()
    )
}

/// Synthesizer features for `text`; an empty transcript yields one silent frame.
fn speak_or_silence(itts: &Synthesizer, text: &[usize], mode: TrainMode, config: &RunConfig) -> Result<Tensor> {
    if text.is_empty() {
        return Ok(Tensor::zeros(1, config.corpus.frame_spec.feature_dim));
    }
    speak(itts, text, mode, &config.engine())
}

/// Scores the pair from `args.regime` and writes the record under `eval/`.
pub fn evaluate(config: &RunConfig, args: &EvalArgs) -> Result<EvalRecord> {
    let vocab = config.validate()?;
    let corpus = load_corpus(config, &vocab)?;
    let layout = RunLayout::new(&config.output_dir);
    let engine = config.engine();
    let rstem = model_stem(true, args.mode, args.regime);
    let sstem = model_stem(false, args.mode, args.regime);
    let isr: Recognizer = load_pair_member(&layout, &rstem, &vocab)?;
    let itts: Synthesizer = load_pair_member(&layout, &sstem, &vocab)?;
    let utts = corpus.split(args.split);
    if utts.is_empty() {
        return Err(Error::Argument(format!("split {} is empty", args.split.name())));
    }

    let mut pairs = Vec::with_capacity(utts.len());
    let mut loss = 0.0;
    for u in &utts {
        let (hyp, predicted) = match args.input {
            InputKind::Natural => (
                transcribe(&isr, &u.features, args.mode, &engine)?,
                speak_or_silence(&itts, &u.text, args.mode, config)?,
            ),
            InputKind::Synthetic => {
                let spoken = speak_or_silence(&itts, &u.text, args.mode, config)?;
                let heard = transcribe(&isr, &u.features, args.mode, &engine)?;
                (
                    transcribe(&isr, &spoken, args.mode, &engine)?,
                    speak_or_silence(&itts, &heard, args.mode, config)?,
                )
            }
        };
        loss += feature_loss(&predicted, &u.features)?;
        pairs.push((hyp, u.text.as_slice()));
    }
    let n = utts.len() as f64;
    let (delay_seconds, delay_characters) = match args.mode {
        TrainMode::Incremental => {
            let d = compute_delays(&config.blocks, &config.corpus.frame_spec);
            (d.isr_seconds, d.itts_characters)
        }
        TrainMode::Nonincremental => (
            utts.iter()
                .map(|u| block_duration(&config.corpus.frame_spec, u.num_frames()))
                .sum::<f64>()
                / n,
            utts.iter().map(|u| u.text.len() as f64).sum::<f64>() / n,
        ),
    };
    let record = EvalRecord {
        id: eval_id(args),
        mode: args.mode,
        regime: args.regime,
        input: args.input,
        split: args.split,
        recognizer: rstem,
        synthesizer: sstem,
        utterances: utts.len(),
        cer: corpus_cer(&pairs)?,
        feature_loss: loss / n,
        delay_seconds,
        delay_characters,
    };
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    write_file(&layout.eval(&record.id), text.as_bytes())?;
    log::info!(
        "{}: cer {:.2}% feature loss {:.4} over {} utterances",
        record.id,
        record.cer,
        record.feature_loss,
        record.utterances
    );
    Ok(record)
}

fn load_pair_member<M: ichain::model::Model>(layout: &RunLayout, stem: &str, vocab: &ichain::corpus::Vocab) -> Result<M> {
    let path = layout.checkpoint(stem);
    if !path.is_file() {
        return Err(Error::Config {
            field: "checkpoints".into(),
            message: format!("checkpoint {} does not exist; train it first", path.display()),
        });
    }
    let (model, found) = ichain::model::load_model::<M>(&path)?;
    check_vocab(&found, vocab, &path)?;
    Ok(model)
}
