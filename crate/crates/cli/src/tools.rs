//! Alignment export and the streaming demo.

use std::path::PathBuf;

use ichain::alignment::{average_main_char_blocks, AlignmentRecord};
use ichain::corpus::Split;
use ichain::incremental::{run_stream, StreamInput, StreamMode};
use ichain::model::load_model;
use ichain::recognizer::Recognizer;
use ichain::synthesizer::Synthesizer;
use ichain::trainer::{teacher_alignment, TrainMode};
use ichain::{Error, Result};
use serde::Serialize;

use crate::generate::{check_vocab, load_corpus};
use crate::layout::{model_stem, Regime, RunLayout};
use crate::{config_error, write_jsonl, RunConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AlignSummary {
    pub path: PathBuf,
    pub utterances: usize,
    pub avg_main_char_blocks: Option<f64>,
}

/// Writes the teacher's segment alignment of every utterance in `split`.
pub fn align(config: &RunConfig, split: Split) -> Result<AlignSummary> {
    let vocab = config.validate()?;
    let corpus = load_corpus(config, &vocab)?;
    let layout = RunLayout::new(&config.output_dir);
    let path = config
        .checkpoints
        .teacher
        .clone()
        .unwrap_or_else(|| layout.checkpoint(&model_stem(true, TrainMode::Nonincremental, Regime::Independent)));
    if !path.is_file() {
        return Err(config_error(
            "checkpoints.teacher",
            format!("checkpoint {} does not exist", path.display()),
        ));
    }
    let (teacher, found): (Recognizer, _) = load_model(&path)?;
    check_vocab(&found, &vocab, &path)?;
    let mut records = Vec::new();
    let mut alignments = Vec::new();
    for u in corpus.split(split) {
        let a = teacher_alignment(&teacher, &u.features, &u.text, &config.blocks)?;
        records.push(AlignmentRecord::new(&u.id, &a));
        alignments.push(a);
    }
    let out = layout.alignments(split.name());
    write_jsonl(&out, &records)?;
    Ok(AlignSummary {
        path: out,
        utterances: records.len(),
        avg_main_char_blocks: average_main_char_blocks(&alignments, config.blocks.chars_per_block),
    })
}

#[derive(Debug, Clone, Serialize)]
struct StreamRecord {
    id: String,
    mode: StreamMode,
    output_text: String,
    output_frames: usize,
    /// Step traces without wall-clock times, so reruns write identical files.
    steps: Vec<serde_json::Value>,
}

/// Streams every utterance of `split` (or only `id`) through the
/// incremental pair of `regime` and writes the step traces.
pub fn stream(config: &RunConfig, mode: StreamMode, regime: Regime, split: Split, id: Option<&str>) -> Result<PathBuf> {
    let vocab = config.validate()?;
    let corpus = load_corpus(config, &vocab)?;
    let layout = RunLayout::new(&config.output_dir);
    let rpath = layout.checkpoint(&model_stem(true, TrainMode::Incremental, regime));
    let spath = layout.checkpoint(&model_stem(false, TrainMode::Incremental, regime));
    for p in [&rpath, &spath] {
        if !p.is_file() {
            return Err(config_error("checkpoints", format!("checkpoint {} does not exist", p.display())));
        }
    }
    let (isr, v1): (Recognizer, _) = load_model(&rpath)?;
    check_vocab(&v1, &vocab, &rpath)?;
    let (itts, v2): (Synthesizer, _) = load_model(&spath)?;
    check_vocab(&v2, &vocab, &spath)?;
    let engine = config.engine();

    let utts: Vec<_> = corpus
        .split(split)
        .into_iter()
        .filter(|u| id.is_none_or(|i| i == u.id))
        .collect();
    if utts.is_empty() {
        return Err(Error::Argument(match id {
            Some(i) => format!("no utterance `{i}` in split {}", split.name()),
            None => format!("split {} is empty", split.name()),
        }));
    }
    let mut records = Vec::with_capacity(utts.len());
    for u in utts {
        let input = match mode {
            StreamMode::Isr | StreamMode::IsrToItts => StreamInput::Features(u.features.clone()),
            StreamMode::Itts | StreamMode::IttsToIsr => StreamInput::Text(u.text.clone()),
        };
        let out = run_stream(mode, &isr, &itts, &engine, &input)?;
        let steps = out
            .traces
            .iter()
            .map(|t| {
                let mut v = serde_json::to_value(t)?;
                if let Some(obj) = v.as_object_mut() {
                    obj.remove("wall_ms");
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(StreamRecord {
            id: u.id.clone(),
            mode,
            output_text: vocab.decode(&out.tokens),
            output_frames: out.frames.as_ref().map_or(0, |f| f.rows()),
            steps,
        });
    }
    let name = format!(
        "{}-{}-{}",
        serde_json::to_value(mode)?.as_str().unwrap_or("stream"),
        regime.name(),
        split.name()
    );
    let path = layout.stream(&name);
    write_jsonl(&path, &records)?;
    Ok(path)
}
