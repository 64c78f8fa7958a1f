use std::path::{Path, PathBuf};

use ichain::corpus::Vocab;
use ichain::model::{load_model, model_checkpoint, Model};
use ichain::numerics::Checkpoint;
use ichain::recognizer::Recognizer;
use ichain::synthesizer::Synthesizer;
use ichain::trainer::{train_stage1, train_stage2, Intermediate, Session, Stage, TrainConfig, TrainMode};
use ichain::{Error, Result};

use crate::generate::{check_vocab, load_corpus};
use crate::layout::{intermediate_name, mode_name, model_stem, write_file, Regime, RunLayout};
use crate::{config_error, write_jsonl, RunConfig};

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub stage: Stage,
    /// Overrides `train.mode`.
    pub mode: Option<TrainMode>,
    /// Overrides `train.intermediate`.
    pub intermediate: Option<Intermediate>,
    /// Continue from the saved session of this run if there is one.
    pub resume: bool,
    /// Stop after this many epochs in this invocation.
    pub max_epochs: Option<usize>,
}

impl TrainArgs {
    pub fn new(stage: Stage, mode: TrainMode, intermediate: Intermediate) -> Self {
        TrainArgs {
            stage,
            mode: Some(mode),
            intermediate: Some(intermediate),
            resume: false,
            max_epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainOutcome {
    Completed {
        run: String,
        recognizer: PathBuf,
        synthesizer: PathBuf,
    },
    Interrupted {
        run: String,
        epoch: usize,
    },
}

/// Name of a training run; keys its session, records and outputs.
pub fn run_name(stage: Stage, config: &TrainConfig) -> String {
    match stage {
        Stage::One => format!("stage1-{}", mode_name(config.mode)),
        Stage::Two => format!(
            "stage2-{}-{}",
            mode_name(config.mode),
            intermediate_name(config.intermediate)
        ),
    }
}

fn load_checked<M: Model>(path: &Path, field: &str, vocab: &Vocab, expected: &M::Config) -> Result<M> {
    if !path.is_file() {
        return Err(config_error(
            field,
            format!("checkpoint {} does not exist", path.display()),
        ));
    }
    let (model, found): (M, Vocab) = load_model(path)?;
    check_vocab(&found, vocab, path)?;
    if model.model_config() != expected {
        return Err(config_error(
            field,
            format!("checkpoint {} has layer sizes that differ from the config", path.display()),
        ));
    }
    Ok(model)
}

fn save<M: Model>(model: &M, vocab: &Vocab, seed: u64, step: usize, path: &Path) -> Result<()> {
    write_file(path, &model_checkpoint(model, vocab, seed, step as u64)?.to_bytes())
}

/// Runs one training stage and writes the best models of each component.
pub fn train(config: &RunConfig, args: &TrainArgs) -> Result<TrainOutcome> {
    let vocab = config.validate()?;
    let mut tc = config.train.clone();
    tc.stage = args.stage;
    if let Some(m) = args.mode {
        tc.mode = m;
    }
    if let Some(i) = args.intermediate {
        tc.intermediate = i;
    }
    let corpus = load_corpus(config, &vocab)?;
    let layout = RunLayout::new(&config.output_dir);
    write_file(&layout.config(), config.to_toml().as_bytes())?;
    let engine = config.engine();
    let rc = config.recognizer_config(&vocab);
    let sc = config.synthesizer_config(&vocab);
    let mode = tc.mode;
    let run = run_name(args.stage, &tc);

    let teacher_path = config
        .checkpoints
        .teacher
        .clone()
        .unwrap_or_else(|| layout.checkpoint(&model_stem(true, TrainMode::Nonincremental, Regime::Independent)));
    let teacher: Option<Recognizer> = match mode {
        TrainMode::Incremental => Some(load_checked(&teacher_path, "checkpoints.teacher", &vocab, &rc)?),
        TrainMode::Nonincremental => None,
    };

    let (isr, itts) = match (args.stage, mode) {
        (Stage::One, TrainMode::Nonincremental) => {
            (Recognizer::new(rc.clone(), tc.seed)?, Synthesizer::new(sc.clone(), tc.seed)?)
        }
        (Stage::One, TrainMode::Incremental) => {
            // Students start from the non-incremental models.
            let tts = layout.checkpoint(&model_stem(false, TrainMode::Nonincremental, Regime::Independent));
            let itts = load_checked(&tts, "checkpoints.synthesizer", &vocab, &sc)?;
            (teacher.clone().expect("incremental mode loads a teacher"), itts)
        }
        (Stage::Two, _) => {
            let r = config
                .checkpoints
                .recognizer
                .clone()
                .unwrap_or_else(|| layout.checkpoint(&model_stem(true, mode, Regime::Independent)));
            let s = config
                .checkpoints
                .synthesizer
                .clone()
                .unwrap_or_else(|| layout.checkpoint(&model_stem(false, mode, Regime::Independent)));
            (
                load_checked(&r, "checkpoints.recognizer", &vocab, &rc)?,
                load_checked(&s, "checkpoints.synthesizer", &vocab, &sc)?,
            )
        }
    };

    let session_path = layout.session(&run);
    let resume = if args.resume && session_path.is_file() {
        let (s, found) = Session::from_checkpoint(&Checkpoint::load(&session_path)?)?;
        check_vocab(&found, &vocab, &session_path)?;
        if s.isr.model.config() != &rc || s.itts.model.config() != &sc {
            return Err(config_error(
                "train",
                format!("session {} has layer sizes that differ from the config", session_path.display()),
            ));
        }
        log::info!("resuming {run} after epoch {}", s.epoch);
        Some(s)
    } else {
        None
    };

    let records_path = layout.records(&run);
    let mut last: Option<Session> = resume.clone();
    let mut ran = 0;
    let mut on_epoch = |s: &Session| -> Result<()> {
        write_file(&session_path, &s.to_checkpoint(&vocab, tc.seed)?.to_bytes())?;
        write_jsonl(&records_path, &s.records)?;
        for r in s.records.iter().filter(|r| r.epoch == s.epoch) {
            log::info!(
                "{run} epoch {} {}: loss {:?} dev loss {:.4} cer {:?} feature loss {:?}",
                r.epoch,
                r.component.name(),
                r.loss,
                r.dev_loss,
                r.dev_cer,
                r.dev_feature_loss
            );
        }
        last = Some(s.clone());
        ran += 1;
        match args.max_epochs {
            Some(m) if ran >= m => Err(Error::Interrupted { epoch: s.epoch }),
            _ => Ok(()),
        }
    };

    let (isr0, itts0) = (isr.clone(), itts.clone());
    let result = match args.stage {
        Stage::One => train_stage1(&corpus, isr, itts, teacher.as_ref(), &tc, &engine, resume, &mut on_epoch),
        Stage::Two => train_stage2(&corpus, isr, itts, teacher.as_ref(), &tc, &engine, resume, &mut on_epoch),
    };
    let regime = match args.stage {
        Stage::One => Regime::Independent,
        Stage::Two => Regime::chain(tc.intermediate),
    };
    let recognizer = layout.checkpoint(&model_stem(true, mode, regime));
    let synthesizer = layout.checkpoint(&model_stem(false, mode, regime));
    let write_best = |s: &Session| -> Result<()> {
        save(&s.isr.best, &vocab, tc.seed, s.isr.best_epoch, &recognizer)?;
        save(&s.itts.best, &vocab, tc.seed, s.itts.best_epoch, &synthesizer)
    };
    match result {
        Ok(session) => {
            write_jsonl(&records_path, &session.records)?;
            write_best(&session)?;
            log::info!(
                "{run} done after {} epochs; best epochs {} / {}",
                session.epoch,
                session.isr.best_epoch,
                session.itts.best_epoch
            );
            Ok(TrainOutcome::Completed {
                run,
                recognizer,
                synthesizer,
            })
        }
        Err(Error::Interrupted { epoch }) => Ok(TrainOutcome::Interrupted { run, epoch }),
        Err(e @ Error::Divergence { .. }) => {
            match &last {
                Some(s) => write_best(s)?,
                None => {
                    save(&isr0, &vocab, tc.seed, 0, &recognizer)?;
                    save(&itts0, &vocab, tc.seed, 0, &synthesizer)?;
                }
            }
            log::error!("{run}: {e}; kept the best models of the last completed epoch");
            Err(e)
        }
        Err(e) => Err(e),
    }
}
