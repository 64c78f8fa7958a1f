//! Two-stage training. Stage one trains the recognizer and the synthesizer
//! independently on paired data; stage two couples them through the two
//! unrolled directions, each updating only the component that
//! reconstructs.
//!
//! Training state lives in a [`Session`], which serializes to a checkpoint
//! after every epoch. Every epoch draws its own shuffle from the seed, so a
//! session resumed from a checkpoint continues exactly as an uninterrupted
//! run would.

pub mod eval;
pub mod losses;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::alignment::{build_isr_targets, build_itts_segments, extract_alignment, BlockConfig, SegmentAlignment};
use crate::corpus::{Corpus, Split, TokenId, Vocab, EOS};
use crate::error::{Error, Result};
use crate::incremental::EngineConfig;
use crate::model::Model;
use crate::numerics::{seeded_rng, Adam, AdamConfig, Bound, Checkpoint, Graph, Tensor, Var};
use crate::recognizer::{Recognizer, RecognizerConfig};
use crate::synthesizer::{Synthesizer, SynthesizerConfig};

use losses::{ChainExample, ChainLoss};

const STAGE_ONE_STREAM: u64 = 0x5354_0100;
const STAGE_TWO_STREAM: u64 = 0x5354_0200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Nonincremental,
    Incremental,
}

/// How the producing component generates the intermediate sequence in the
/// closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intermediate {
    TeacherForcing,
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Asr,
    Isr,
    Tts,
    Itts,
}

impl ComponentKind {
    pub fn recognizer(mode: TrainMode) -> Self {
        match mode {
            TrainMode::Nonincremental => ComponentKind::Asr,
            TrainMode::Incremental => ComponentKind::Isr,
        }
    }

    pub fn synthesizer(mode: TrainMode) -> Self {
        match mode {
            TrainMode::Nonincremental => ComponentKind::Tts,
            TrainMode::Incremental => ComponentKind::Itts,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Asr => "asr",
            ComponentKind::Isr => "isr",
            ComponentKind::Tts => "tts",
            ComponentKind::Itts => "itts",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub mode: TrainMode,
    pub intermediate: Intermediate,
    /// Stage-one epoch limit.
    pub epochs: usize,
    /// Stage-two epoch limit.
    pub chain_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub chain_learning_rate: f64,
    pub clip_norm: Option<f64>,
    /// Epochs without dev improvement before a component stops training.
    pub patience: usize,
    /// Follow every stage-two batch with a supervised batch for the
    /// component that was just updated.
    pub supervised_interleave: bool,
    /// An epoch loss this many times the first epoch's loss aborts training.
    pub divergence_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::One,
            mode: TrainMode::Nonincremental,
            intermediate: Intermediate::TeacherForcing,
            epochs: 30,
            chain_epochs: 10,
            batch_size: 8,
            learning_rate: 3e-3,
            chain_learning_rate: 1e-3,
            clip_norm: Some(5.0),
            patience: 10,
            supervised_interleave: false,
            divergence_factor: 100.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        for (field, lr) in [
            ("train.learning_rate", self.learning_rate),
            ("train.chain_learning_rate", self.chain_learning_rate),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(field, "must be positive and finite"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("train.clip_norm", "must be positive and finite"));
            }
        }
        if self.patience == 0 {
            return Err(Error::config("train.patience", "must be at least 1"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::config("train.divergence_factor", "must exceed 1"));
        }
        Ok(())
    }

    fn adam(&self, stage: Stage) -> AdamConfig {
        AdamConfig {
            learning_rate: match stage {
                Stage::One => self.learning_rate,
                Stage::Two => self.chain_learning_rate,
            },
            clip_norm: self.clip_norm,
            ..Default::default()
        }
    }

    fn epoch_limit(&self, stage: Stage) -> usize {
        match stage {
            Stage::One => self.epochs,
            Stage::Two => self.chain_epochs,
        }
    }
}

/// One component's results for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub component: ComponentKind,
    /// Mean training loss; absent when every step of the epoch was degenerate.
    pub loss: Option<f64>,
    /// Supervised loss on the dev split; drives early stopping.
    pub dev_loss: f64,
    pub dev_cer: Option<f64>,
    pub dev_feature_loss: Option<f64>,
    /// Realized average synthesizer main segment length in character blocks.
    pub avg_main_char_blocks: Option<f64>,
    pub degenerate_steps: usize,
}

/// A component under training with its optimizer and early-stopping state.
#[derive(Debug, Clone)]
pub struct Tracked<M: Model> {
    pub model: M,
    pub adam: Adam,
    /// Parameters of the best dev epoch so far (the initial ones before any).
    pub best: M,
    pub best_metric: Option<f64>,
    pub best_epoch: usize,
    /// Epochs since the last dev improvement.
    pub stale: usize,
    pub initial_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackedMeta {
    best_metric: Option<f64>,
    best_epoch: usize,
    stale: usize,
    initial_loss: Option<f64>,
    adam_step: u64,
    adam: AdamConfig,
}

impl<M: Model> Tracked<M> {
    pub fn new(model: M, adam: AdamConfig) -> Self {
        Tracked {
            adam: Adam::new(adam, model.params()),
            best: model.clone(),
            model,
            best_metric: None,
            best_epoch: 0,
            stale: 0,
            initial_loss: None,
        }
    }

    pub fn active(&self, patience: usize) -> bool {
        self.stale < patience
    }

    fn observe(&mut self, epoch: usize, metric: f64) {
        if self.best_metric.is_none_or(|b| metric < b) {
            self.best = self.model.clone();
            self.best_metric = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
    }

    fn check_divergence(&mut self, epoch: usize, loss: f64, factor: f64) -> Result<()> {
        match self.initial_loss {
            None => self.initial_loss = Some(loss),
            Some(initial) if !loss.is_finite() || loss > factor * initial => {
                return Err(Error::Divergence {
                    epoch,
                    loss,
                    initial,
                    factor,
                })
            }
            Some(_) => {}
        }
        Ok(())
    }

    fn store(&self, prefix: &str, tensors: &mut BTreeMap<String, Tensor>) -> TrackedMeta {
        for (name, t) in self.model.params().to_map() {
            tensors.insert(format!("{prefix}/model/{name}"), t);
        }
        for (name, t) in self.best.params().to_map() {
            tensors.insert(format!("{prefix}/best/{name}"), t);
        }
        for (name, t) in self.adam.state_map(self.model.params()) {
            tensors.insert(format!("{prefix}/{name}"), t);
        }
        TrackedMeta {
            best_metric: self.best_metric,
            best_epoch: self.best_epoch,
            stale: self.stale,
            initial_loss: self.initial_loss,
            adam_step: self.adam.step_count(),
            adam: self.adam.config,
        }
    }

    fn restore(prefix: &str, config: M::Config, meta: TrackedMeta, tensors: &BTreeMap<String, Tensor>) -> Result<Self> {
        let section = |part: &str| -> BTreeMap<String, Tensor> {
            let head = format!("{prefix}/{part}");
            tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&head).map(|rest| (format!("{part}{rest}"), v.clone())))
                .collect()
        };
        let strip = |part: &str| -> BTreeMap<String, Tensor> {
            section(&format!("{part}/"))
                .into_iter()
                .map(|(k, v)| (k[part.len() + 1..].to_string(), v))
                .collect()
        };
        let model = M::from_map(config.clone(), &strip("model"))?;
        let best = M::from_map(config, &strip("best"))?;
        let mut adam_state = section("adam.m/");
        adam_state.extend(section("adam.v/"));
        let adam = Adam::restore(meta.adam, model.params(), meta.adam_step, &adam_state)?;
        Ok(Tracked {
            model,
            adam,
            best,
            best_metric: meta.best_metric,
            best_epoch: meta.best_epoch,
            stale: meta.stale,
            initial_loss: meta.initial_loss,
        })
    }
}

/// The state of one training stage for both components.
#[derive(Debug, Clone)]
pub struct Session {
    pub stage: Stage,
    pub mode: TrainMode,
    pub isr: Tracked<Recognizer>,
    pub itts: Tracked<Synthesizer>,
    /// Completed epochs.
    pub epoch: usize,
    pub records: Vec<TrainRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionMeta {
    kind: String,
    stage: Stage,
    mode: TrainMode,
    vocabulary: Vocab,
    recognizer: RecognizerConfig,
    synthesizer: SynthesizerConfig,
    epoch: usize,
    isr: TrackedMeta,
    itts: TrackedMeta,
    records: Vec<TrainRecord>,
}

const SESSION_KIND: &str = "session";

impl Session {
    pub fn new(stage: Stage, isr: Recognizer, itts: Synthesizer, config: &TrainConfig) -> Self {
        let adam = config.adam(stage);
        Session {
            stage,
            mode: config.mode,
            isr: Tracked::new(isr, adam),
            itts: Tracked::new(itts, adam),
            epoch: 0,
            records: Vec::new(),
        }
    }

    pub fn to_checkpoint(&self, vocab: &Vocab, seed: u64) -> Result<Checkpoint> {
        let mut tensors = BTreeMap::new();
        let isr = self.isr.store("isr", &mut tensors);
        let itts = self.itts.store("itts", &mut tensors);
        let meta = SessionMeta {
            kind: SESSION_KIND.into(),
            stage: self.stage,
            mode: self.mode,
            vocabulary: vocab.clone(),
            recognizer: self.isr.model.config().clone(),
            synthesizer: self.itts.model.config().clone(),
            epoch: self.epoch,
            isr,
            itts,
            records: self.records.clone(),
        };
        Ok(Checkpoint {
            seed,
            step: self.epoch as u64,
            meta: serde_json::to_string(&meta)?,
            tensors,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Vocab)> {
        let meta: SessionMeta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::Format(format!("checkpoint is not a training session: {e}")))?;
        if meta.kind != SESSION_KIND {
            return Err(Error::Format(format!("checkpoint holds a {}, expected a session", meta.kind)));
        }
        let session = Session {
            stage: meta.stage,
            mode: meta.mode,
            isr: Tracked::restore("isr", meta.recognizer, meta.isr, &ckpt.tensors)?,
            itts: Tracked::restore("itts", meta.synthesizer, meta.itts, &ckpt.tensors)?,
            epoch: meta.epoch,
            records: meta.records,
        };
        Ok((session, meta.vocabulary))
    }

    fn check_resume(&self, stage: Stage, config: &TrainConfig) -> Result<()> {
        if self.stage != stage || self.mode != config.mode {
            return Err(Error::config(
                "train",
                format!(
                    "resumed session is stage {:?} {:?}, run asks for stage {stage:?} {:?}",
                    self.stage, self.mode, config.mode
                ),
            ));
        }
        Ok(())
    }
}

/// One training utterance with its teacher alignment when the mode needs one.
#[derive(Debug, Clone)]
pub struct Item<'a> {
    pub features: &'a Tensor,
    pub text: &'a [TokenId],
    pub alignment: Option<SegmentAlignment>,
}

impl<'a> Item<'a> {
    fn alignment(&self) -> Result<&SegmentAlignment> {
        self.alignment
            .as_ref()
            .ok_or_else(|| Error::State("incremental training needs teacher alignments".into()))
    }

    fn example(&self) -> ChainExample<'_> {
        ChainExample {
            features: Some(self.features),
            text: Some(self.text),
            alignment: self.alignment.as_ref(),
        }
    }
}

/// Hard segment alignment of one utterance from the teacher's attention
/// while it is teacher-forced on the transcript.
pub fn teacher_alignment(
    teacher: &Recognizer,
    features: &Tensor,
    text: &[TokenId],
    blocks: &BlockConfig,
) -> Result<SegmentAlignment> {
    blocks.check_subsampling(teacher.config().subsampling())?;
    let states = teacher.encode(features)?;
    let mut reference = text.to_vec();
    reference.push(EOS);
    let tf = teacher.decode_teacher_forced(&states, &reference)?;
    extract_alignment(&tf.attention.slice_rows(0, text.len()), blocks, features.rows(), text.len())
}

fn items<'a>(
    corpus: &'a Corpus,
    split: Split,
    teacher: Option<&Recognizer>,
    blocks: &BlockConfig,
) -> Result<Vec<Item<'a>>> {
    corpus
        .split(split)
        .into_iter()
        .map(|u| {
            let alignment = match teacher {
                Some(t) => Some(teacher_alignment(t, &u.features, &u.text, blocks)?),
                None => None,
            };
            Ok(Item {
                features: &u.features,
                text: &u.text,
                alignment,
            })
        })
        .collect()
}

fn dev_items<'a>(corpus: &'a Corpus, teacher: Option<&Recognizer>, blocks: &BlockConfig) -> Result<Vec<Item<'a>>> {
    let dev = items(corpus, Split::Dev, teacher, blocks)?;
    if dev.is_empty() {
        return Err(Error::config("corpus.splits.dev", "dev split is empty"));
    }
    Ok(dev)
}

fn required_teacher(teacher: Option<&Recognizer>, mode: TrainMode) -> Result<Option<&Recognizer>> {
    match mode {
        TrainMode::Nonincremental => Ok(None),
        TrainMode::Incremental => teacher.map(Some).ok_or_else(|| {
            Error::config("train.teacher", "incremental training needs a trained non-incremental teacher recognizer")
        }),
    }
}

/// Mean supervised loss of a model over `items`, without gradients.
fn mean_loss<M: Model>(
    model: &M,
    items: &[Item],
    loss: impl Fn(&mut Graph, &Bound, &M, &Item) -> Result<StepOutcome>,
) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let mut g = Graph::new();
        let p = g.bind(model.params(), false);
        let out = loss(&mut g, &p, model, item)?;
        total += g.value(out.loss).item();
    }
    Ok(total / items.len() as f64)
}

/// Loss of one utterance for one component, with bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub loss: Var,
    /// Producer steps with empty output.
    pub degenerate: usize,
    /// Synthesizer segments and the characters they cover.
    pub segments: usize,
    pub tokens: usize,
}

/// Totals over the utterances of one or more updates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub loss_sum: f64,
    /// Utterances that contributed a loss.
    pub count: usize,
    /// Utterances skipped because the producer emitted nothing.
    pub skipped: usize,
    pub degenerate: usize,
    pub segments: usize,
    pub tokens: usize,
}

impl BatchStats {
    fn merge(&mut self, o: BatchStats) {
        self.loss_sum += o.loss_sum;
        self.count += o.count;
        self.skipped += o.skipped;
        self.degenerate += o.degenerate;
        self.segments += o.segments;
        self.tokens += o.tokens;
    }

    pub fn mean_loss(&self) -> Option<f64> {
        (self.count > 0).then(|| self.loss_sum / self.count as f64)
    }
}

/// One optimizer step on the mean gradient of the utterance losses in
/// `batch`. `None` from `loss` skips an utterance; if all are skipped the
/// parameters are left alone.
pub fn batch_update<M: Model, T>(
    tracked: &mut Tracked<M>,
    batch: &[T],
    mut loss: impl FnMut(&mut Graph, &Bound, &M, &T) -> Result<Option<StepOutcome>>,
) -> Result<BatchStats> {
    let mut stats = BatchStats::default();
    let mut total: Option<Vec<Tensor>> = None;
    for item in batch {
        let mut g = Graph::new();
        let p = g.bind(tracked.model.params(), true);
        let Some(out) = loss(&mut g, &p, &tracked.model, item)? else {
            stats.skipped += 1;
            continue;
        };
        let grads = g.backward_scalar(out.loss)?.for_params(tracked.model.params(), &p);
        match total.as_mut() {
            None => total = Some(grads),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
            }
        }
        stats.loss_sum += g.value(out.loss).item();
        stats.count += 1;
        stats.degenerate += out.degenerate;
        stats.segments += out.segments;
        stats.tokens += out.tokens;
    }
    if let Some(mut grads) = total {
        let inv = 1.0 / stats.count as f64;
        for t in &mut grads {
            t.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        let Tracked { model, adam, .. } = tracked;
        adam.step(model.params_mut(), &grads)?;
    }
    Ok(stats)
}

/// Supervised recognizer loss of one utterance.
pub fn recognizer_loss(g: &mut Graph, p: &Bound, isr: &Recognizer, item: &Item, mode: TrainMode, blocks: &BlockConfig) -> Result<StepOutcome> {
    let loss = match mode {
        TrainMode::Nonincremental => isr.loss_graph(g, p, item.features, item.text)?,
        TrainMode::Incremental => {
            let targets = build_isr_targets(item.alignment()?, item.text)?;
            losses::isr_windows_loss(g, p, isr, item.features, &targets, blocks)?.mean
        }
    };
    Ok(StepOutcome {
        loss,
        degenerate: 0,
        segments: 0,
        tokens: 0,
    })
}

/// Supervised synthesizer loss of one utterance.
pub fn synthesizer_loss(g: &mut Graph, p: &Bound, itts: &Synthesizer, item: &Item, mode: TrainMode, blocks: &BlockConfig) -> Result<StepOutcome> {
    match mode {
        TrainMode::Nonincremental => Ok(StepOutcome {
            loss: itts.loss_graph(g, p, item.text, item.features)?,
            degenerate: 0,
            segments: 1,
            tokens: item.text.len(),
        }),
        TrainMode::Incremental => {
            let segments = build_itts_segments(item.alignment()?, blocks)?;
            let l = losses::itts_segments_loss(g, p, itts, item.features, item.text, &segments, blocks)?;
            Ok(StepOutcome {
                loss: l.mean,
                degenerate: 0,
                segments: segments.len(),
                tokens: item.text.len(),
            })
        }
    }
}

fn chain_outcome(out: Option<ChainLoss>, tokens: impl Fn(&ChainLoss) -> usize) -> Option<StepOutcome> {
    out.map(|c| StepOutcome {
        loss: c.losses.mean,
        degenerate: c.degenerate_steps,
        segments: c.losses.steps.len(),
        tokens: tokens(&c),
    })
}

/// One update of the synthesizer through the recognizer-to-synthesizer
/// direction. The recognizer is only read.
pub fn chain_step_isr_to_itts(
    isr: &Recognizer,
    itts: &mut Tracked<Synthesizer>,
    batch: &[ChainExample],
    mode: TrainMode,
    intermediate: Intermediate,
    engine: &EngineConfig,
) -> Result<BatchStats> {
    batch_update(itts, batch, |g, p, model, ex| match mode {
        TrainMode::Incremental => Ok(chain_outcome(
            losses::isr_to_itts_loss(g, p, isr, model, ex, intermediate, engine)?,
            |c| c.tokens,
        )),
        TrainMode::Nonincremental => Ok(losses::asr_to_tts_loss(g, p, isr, model, ex, intermediate, engine)?.map(|loss| {
            StepOutcome {
                loss,
                degenerate: 0,
                segments: 0,
                tokens: 0,
            }
        })),
    })
}

/// One update of the recognizer through the synthesizer-to-recognizer
/// direction. The synthesizer is only read.
pub fn chain_step_itts_to_isr(
    isr: &mut Tracked<Recognizer>,
    itts: &Synthesizer,
    batch: &[ChainExample],
    mode: TrainMode,
    intermediate: Intermediate,
    engine: &EngineConfig,
) -> Result<BatchStats> {
    batch_update(isr, batch, |g, p, model, ex| match mode {
        TrainMode::Incremental => Ok(chain_outcome(
            losses::itts_to_isr_loss(g, p, model, itts, ex, intermediate, engine)?,
            |_| 0,
        )),
        TrainMode::Nonincremental => Ok(losses::tts_to_asr_loss(g, p, model, itts, ex, intermediate, engine)?.map(|loss| {
            StepOutcome {
                loss,
                degenerate: 0,
                segments: 0,
                tokens: 0,
            }
        })),
    })
}

/// Per-epoch training statistics of the two components; `None` for a
/// component that has stopped.
type EpochStats = (Option<BatchStats>, Option<BatchStats>);

/// Runs epochs until the stage's limit or until both components stop,
/// calling `on_epoch` after each. The supervised dev loss drives early
/// stopping.
fn drive(
    mut session: Session,
    config: &TrainConfig,
    engine: &EngineConfig,
    dev: &[Item],
    on_epoch: &mut dyn FnMut(&Session) -> Result<()>,
    mut epoch_fn: impl FnMut(&mut Session, usize) -> Result<EpochStats>,
) -> Result<Session> {
    let stage = session.stage;
    let mode = session.mode;
    let blocks = engine.blocks;
    let cpb = blocks.chars_per_block as f64;
    let pairs: Vec<(&Tensor, &[TokenId])> = dev.iter().map(|it| (it.features, it.text)).collect();
    while session.epoch < config.epoch_limit(stage)
        && (session.isr.active(config.patience) || session.itts.active(config.patience))
    {
        let epoch = session.epoch + 1;
        let (isr_stats, itts_stats) = epoch_fn(&mut session, epoch)?;
        if let Some(stats) = isr_stats {
            let loss = stats.mean_loss();
            if let Some(l) = loss {
                session.isr.check_divergence(epoch, l, config.divergence_factor)?;
            }
            let dev_loss = mean_loss(&session.isr.model, dev, |g, p, m, it| recognizer_loss(g, p, m, it, mode, &blocks))?;
            session.isr.observe(epoch, dev_loss);
            let cer = eval::recognizer_cer(&session.isr.model, &pairs, mode, engine)?;
            session.records.push(TrainRecord {
                stage,
                epoch,
                component: ComponentKind::recognizer(mode),
                loss,
                dev_loss,
                dev_cer: Some(cer),
                dev_feature_loss: None,
                avg_main_char_blocks: None,
                degenerate_steps: stats.degenerate + stats.skipped,
            });
        }
        if let Some(stats) = itts_stats {
            let loss = stats.mean_loss();
            if let Some(l) = loss {
                session.itts.check_divergence(epoch, l, config.divergence_factor)?;
            }
            let dev_loss = mean_loss(&session.itts.model, dev, |g, p, m, it| synthesizer_loss(g, p, m, it, mode, &blocks))?;
            session.itts.observe(epoch, dev_loss);
            let fl = eval::synthesizer_loss(&session.itts.model, &pairs, mode, engine)?;
            let avg = (mode == TrainMode::Incremental && stats.segments > 0)
                .then(|| stats.tokens as f64 / stats.segments as f64 / cpb);
            session.records.push(TrainRecord {
                stage,
                epoch,
                component: ComponentKind::synthesizer(mode),
                loss,
                dev_loss,
                dev_cer: None,
                dev_feature_loss: Some(fl),
                avg_main_char_blocks: avg,
                degenerate_steps: stats.degenerate + stats.skipped,
            });
        }
        session.epoch = epoch;
        on_epoch(&session)?;
    }
    Ok(session)
}

fn shuffled(len: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut seeded_rng(seed, stream));
    order
}

/// Stage one: each component trained on its own from the labeled train
/// split. Incremental mode needs a trained non-incremental `teacher` whose
/// attention supplies the segment alignments.
#[allow(clippy::too_many_arguments)]
pub fn train_stage1(
    corpus: &Corpus,
    isr: Recognizer,
    itts: Synthesizer,
    teacher: Option<&Recognizer>,
    config: &TrainConfig,
    engine: &EngineConfig,
    resume: Option<Session>,
    on_epoch: &mut dyn FnMut(&Session) -> Result<()>,
) -> Result<Session> {
    config.validate()?;
    let teacher = required_teacher(teacher, config.mode)?;
    let train = items(corpus, Split::Train, teacher, &engine.blocks)?;
    if train.is_empty() {
        return Err(Error::config("corpus.splits.train", "train split is empty"));
    }
    let dev = dev_items(corpus, teacher, &engine.blocks)?;
    let session = match resume {
        Some(s) => {
            s.check_resume(Stage::One, config)?;
            s
        }
        None => Session::new(Stage::One, isr, itts, config),
    };
    let mode = config.mode;
    let blocks = engine.blocks;
    drive(session, config, engine, &dev, on_epoch, |s, epoch| {
        let order = shuffled(train.len(), config.seed, STAGE_ONE_STREAM + epoch as u64);
        let run_isr = s.isr.active(config.patience);
        let run_itts = s.itts.active(config.patience);
        let (mut a, mut b) = (BatchStats::default(), BatchStats::default());
        for batch in order.chunks(config.batch_size) {
            let batch: Vec<&Item> = batch.iter().map(|&i| &train[i]).collect();
            if run_isr {
                a.merge(batch_update(&mut s.isr, &batch, |g, p, m, it| {
                    recognizer_loss(g, p, m, it, mode, &blocks).map(Some)
                })?);
            }
            if run_itts {
                b.merge(batch_update(&mut s.itts, &batch, |g, p, m, it| {
                    synthesizer_loss(g, p, m, it, mode, &blocks).map(Some)
                })?);
            }
        }
        Ok((run_isr.then_some(a), run_itts.then_some(b)))
    })
}

/// Stage two: closed-loop training on the chain split, alternating the two
/// directions batch by batch. In greedy mode the first half of the chain
/// split is seen only as speech and the second half only as text.
/// Incremental mode needs the `teacher` for segment alignments of the dev
/// split and, with teacher forcing, of the chain split.
#[allow(clippy::too_many_arguments)]
pub fn train_stage2(
    corpus: &Corpus,
    isr: Recognizer,
    itts: Synthesizer,
    teacher: Option<&Recognizer>,
    config: &TrainConfig,
    engine: &EngineConfig,
    resume: Option<Session>,
    on_epoch: &mut dyn FnMut(&Session) -> Result<()>,
) -> Result<Session> {
    config.validate()?;
    let mode = config.mode;
    let intermediate = config.intermediate;
    let blocks = engine.blocks;
    let teacher = required_teacher(teacher, mode)?;
    let chain_teacher = teacher.filter(|_| intermediate == Intermediate::TeacherForcing);
    let chain = items(corpus, Split::Chain, chain_teacher, &blocks)?;
    if chain.is_empty() {
        return Err(Error::config("corpus.splits.chain", "chain split is empty"));
    }
    let train = if config.supervised_interleave {
        let t = items(corpus, Split::Train, teacher, &blocks)?;
        if t.is_empty() {
            return Err(Error::config("corpus.splits.train", "supervised interleaving needs a train split"));
        }
        t
    } else {
        Vec::new()
    };
    let (speech_pool, text_pool): (Vec<ChainExample>, Vec<ChainExample>) = match intermediate {
        Intermediate::TeacherForcing => (
            chain.iter().map(Item::example).collect(),
            chain.iter().map(Item::example).collect(),
        ),
        Intermediate::Greedy => {
            let half = chain.len().div_ceil(2);
            let speech = chain[..half]
                .iter()
                .map(|it| ChainExample {
                    features: Some(it.features),
                    text: None,
                    alignment: None,
                })
                .collect();
            let text = chain[half..]
                .iter()
                .map(|it| ChainExample {
                    features: None,
                    text: Some(it.text),
                    alignment: None,
                })
                .collect();
            (speech, text)
        }
    };
    let dev = dev_items(corpus, teacher, &blocks)?;
    let session = match resume {
        Some(s) => {
            s.check_resume(Stage::Two, config)?;
            s
        }
        None => Session::new(Stage::Two, isr, itts, config),
    };
    drive(session, config, engine, &dev, on_epoch, |s, epoch| {
        let stream = STAGE_TWO_STREAM + 3 * epoch as u64;
        let speech_order = shuffled(speech_pool.len(), config.seed, stream);
        let text_order = shuffled(text_pool.len(), config.seed, stream + 1);
        let train_order = shuffled(train.len(), config.seed, stream + 2);
        let mut train_batches = train_order.chunks(config.batch_size).cycle();
        let speech_batches: Vec<_> = speech_order.chunks(config.batch_size).collect();
        let text_batches: Vec<_> = text_order.chunks(config.batch_size).collect();
        let run_isr = s.isr.active(config.patience);
        let run_itts = s.itts.active(config.patience);
        let (mut a, mut b) = (BatchStats::default(), BatchStats::default());
        for i in 0..speech_batches.len().max(text_batches.len()) {
            if let (true, Some(batch)) = (run_itts, speech_batches.get(i)) {
                let batch: Vec<ChainExample> = batch.iter().map(|&j| speech_pool[j]).collect();
                b.merge(chain_step_isr_to_itts(&s.isr.model, &mut s.itts, &batch, mode, intermediate, engine)?);
                if let Some(sup) = train_batches.next().filter(|_| config.supervised_interleave) {
                    let sup: Vec<&Item> = sup.iter().map(|&j| &train[j]).collect();
                    batch_update(&mut s.itts, &sup, |g, p, m, it| synthesizer_loss(g, p, m, it, mode, &blocks).map(Some))?;
                }
            }
            if let (true, Some(batch)) = (run_isr, text_batches.get(i)) {
                let batch: Vec<ChainExample> = batch.iter().map(|&j| text_pool[j]).collect();
                a.merge(chain_step_itts_to_isr(&mut s.isr, &s.itts.model, &batch, mode, intermediate, engine)?);
                if let Some(sup) = train_batches.next().filter(|_| config.supervised_interleave) {
                    let sup: Vec<&Item> = sup.iter().map(|&j| &train[j]).collect();
                    batch_update(&mut s.isr, &sup, |g, p, m, it| recognizer_loss(g, p, m, it, mode, &blocks).map(Some))?;
                }
            }
        }
        Ok((run_isr.then_some(a), run_itts.then_some(b)))
    })
}

#[cfg(test)]
mod tests;
