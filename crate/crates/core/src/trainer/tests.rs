use super::losses::*;
use super::*;
use crate::alignment::{isr_window, itts_window};
use crate::corpus::{generate, CorpusConfig, FrameSpec, SplitCounts};
use crate::numerics::seeded_rng;
use rand::Rng;

const DIM: usize = 4;
const VOCAB: usize = 7;

fn models() -> (Recognizer, Synthesizer) {
    let sc = SynthesizerConfig {
        frames_per_step: 2,
        ..SynthesizerConfig::toy(DIM, VOCAB)
    };
    (
        Recognizer::new(RecognizerConfig::toy(DIM, VOCAB), 1).unwrap(),
        Synthesizer::new(sc, 2).unwrap(),
    )
}

fn blocks() -> BlockConfig {
    BlockConfig {
        frames_per_block: 4,
        main_blocks: 1,
        look_back_blocks: 1,
        look_ahead_blocks: 1,
        chars_per_block: 2,
        main_char_blocks: 1.0,
    }
}

fn engine(blocks: BlockConfig) -> EngineConfig {
    EngineConfig::new(blocks, FrameSpec::toy())
}

fn utterance(rng: &mut rand_chacha::ChaCha8Rng) -> (Tensor, Vec<TokenId>) {
    let t = rng.random_range(2..7);
    let text: Vec<TokenId> = (0..t).map(|_| rng.random_range(3..VOCAB)).collect();
    let s = rng.random_range(t..4 * t + 3);
    let x = Tensor::new(s, DIM, (0..s * DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    (x, text)
}

/// Monotone token counts over the windows of `s` frames.
fn random_alignment(rng: &mut rand_chacha::ChaCha8Rng, blocks: &BlockConfig, s: usize, t: usize) -> SegmentAlignment {
    let mut counts = vec![0; blocks.num_windows(s)];
    for _ in 0..t {
        let n = rng.random_range(0..counts.len());
        counts[n] += 1;
    }
    SegmentAlignment::from_counts(&counts, blocks, s).unwrap()
}

fn eval_graph<F>(params: &crate::numerics::ParamStore, f: F) -> f64
where
    F: FnOnce(&mut Graph, &Bound) -> Var,
{
    let mut g = Graph::new();
    let p = g.bind(params, true);
    let v = f(&mut g, &p);
    g.value(v).item()
}

/// Loss of recognizer window `n` alone, rebuilt from scratch: earlier
/// windows only advance the decoder state.
fn isr_step_alone(isr: &Recognizer, x: &Tensor, targets: &[Vec<TokenId>], blocks: &BlockConfig, n: usize) -> f64 {
    let mut g = Graph::new();
    let p = g.bind(isr.params(), true);
    let mut state = isr.initial_state(&mut g);
    for (i, t) in targets.iter().enumerate().take(n + 1) {
        let states = isr.encode_graph(&mut g, &p, &isr_window(x, blocks, i)).unwrap();
        let mem = isr.memory(&mut g, &p, states).unwrap();
        let t = scored_targets(t);
        let tf = isr.teacher_forced_graph(&mut g, &p, &mem, state, t).unwrap();
        if i == n {
            let l = g.cross_entropy(tf.logits, t).unwrap();
            return g.value(l).item();
        }
        state = tf.state;
    }
    unreachable!()
}

fn itts_step_alone(
    itts: &Synthesizer,
    x: &Tensor,
    text: &[TokenId],
    segments: &SegmentAlignment,
    blocks: &BlockConfig,
    n: usize,
) -> f64 {
    let mut g = Graph::new();
    let p = g.bind(itts.params(), true);
    let mut state = itts.initial_carry().bind(&mut g);
    for (i, seg) in segments.segments.iter().enumerate().take(n + 1) {
        let window = itts_window(text, blocks, seg.tokens.clone());
        let reference = x.slice_rows(seg.frames.start, seg.frames.end);
        let (f, s, tf) = itts.segment_loss_graph(&mut g, &p, &window, &reference, state).unwrap();
        if i == n {
            return g.value(f).item() + g.value(s).item();
        }
        state = tf.state;
    }
    unreachable!()
}

#[test]
fn step_average_matches_per_step_recomputation() {
    let (isr, itts) = models();
    let b = blocks();
    let mut rng = seeded_rng(21, 0);
    for _ in 0..10 {
        let (x, text) = utterance(&mut rng);
        let a = random_alignment(&mut rng, &b, x.rows(), text.len());

        let targets = build_isr_targets(&a, &text).unwrap();
        let got = eval_graph(isr.params(), |g, p| isr_windows_loss(g, p, &isr, &x, &targets, &b).unwrap().mean);
        let want: f64 = (0..targets.len()).map(|n| isr_step_alone(&isr, &x, &targets, &b, n)).sum::<f64>()
            / targets.len() as f64;
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");

        let segs = build_itts_segments(&a, &b).unwrap();
        let got = eval_graph(itts.params(), |g, p| {
            itts_segments_loss(g, p, &itts, &x, &text, &segs, &b).unwrap().mean
        });
        let want: f64 =
            (0..segs.len()).map(|n| itts_step_alone(&itts, &x, &text, &segs, &b, n)).sum::<f64>() / segs.len() as f64;
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

fn whole(x: &Tensor, text: &[TokenId]) -> EngineConfig {
    let mut b = BlockConfig::whole_utterance(x.rows(), 4);
    b.chars_per_block = 1;
    b.main_char_blocks = text.len() as f64;
    EngineConfig {
        max_tokens_per_step: Some(x.rows().max(3)),
        ..engine(b)
    }
}

#[test]
fn single_window_collapses_to_whole_utterance_losses() {
    let (isr, itts) = models();
    let mut rng = seeded_rng(22, 0);
    for _ in 0..5 {
        let (x, text) = utterance(&mut rng);
        let e = whole(&x, &text);
        let a = SegmentAlignment::from_counts(&[text.len()], &e.blocks, x.rows()).unwrap();
        let ex = ChainExample {
            features: Some(&x),
            text: Some(&text),
            alignment: Some(&a),
        };
        for mode in [Intermediate::TeacherForcing, Intermediate::Greedy] {
            let mut g = Graph::new();
            let p = g.bind(itts.params(), true);
            let inc = isr_to_itts_loss(&mut g, &p, &isr, &itts, &ex, mode, &e).unwrap();
            let full = asr_to_tts_loss(&mut g, &p, &isr, &itts, &ex, mode, &e).unwrap();
            match (inc, full) {
                (Some(i), Some(f)) => assert_eq!(g.value(i.losses.mean).item(), g.value(f).item()),
                (None, None) => {}
                _ => panic!("only one side was degenerate"),
            }
        }

        let mut g = Graph::new();
        let p = g.bind(isr.params(), true);
        let inc = itts_to_isr_loss(&mut g, &p, &isr, &itts, &ex, Intermediate::TeacherForcing, &e).unwrap().unwrap();
        let full = tts_to_asr_loss(&mut g, &p, &isr, &itts, &ex, Intermediate::TeacherForcing, &e).unwrap().unwrap();
        assert_eq!(g.value(inc.losses.mean).item(), g.value(full).item());

        // Greedy synthesis decides the length, so the window is sized afterwards.
        let produced = itts.synthesize_greedy(&text, e.synth_cap(text.len())).unwrap().frames;
        let e = whole(&produced, &text);
        let mut g = Graph::new();
        let p = g.bind(isr.params(), true);
        let inc = itts_to_isr_loss(&mut g, &p, &isr, &itts, &ex, Intermediate::Greedy, &e).unwrap().unwrap();
        let full = tts_to_asr_loss(&mut g, &p, &isr, &itts, &ex, Intermediate::Greedy, &e).unwrap().unwrap();
        assert_eq!(inc.losses.steps.len(), 1);
        assert_eq!(g.value(inc.losses.mean).item(), g.value(full).item());
    }
}

#[test]
fn chain_steps_update_only_the_consumer() {
    let (isr, itts) = models();
    let cfg = TrainConfig::default();
    let mut s = Session::new(Stage::Two, isr, itts, &cfg);
    let b = blocks();
    let e = engine(b);
    let mut rng = seeded_rng(23, 0);
    let data: Vec<_> = (0..3)
        .map(|_| {
            let (x, text) = utterance(&mut rng);
            let a = random_alignment(&mut rng, &b, x.rows(), text.len());
            (x, text, a)
        })
        .collect();
    let batch: Vec<ChainExample> = data
        .iter()
        .map(|(x, t, a)| ChainExample {
            features: Some(x),
            text: Some(t),
            alignment: Some(a),
        })
        .collect();
    for mode in [TrainMode::Incremental, TrainMode::Nonincremental] {
        let isr_before = s.isr.model.params().clone();
        let itts_before = s.itts.model.params().clone();
        let stats =
            chain_step_isr_to_itts(&s.isr.model, &mut s.itts, &batch, mode, Intermediate::TeacherForcing, &e).unwrap();
        assert_eq!(stats.count + stats.skipped, 3);
        assert_eq!(s.isr.model.params(), &isr_before);
        assert_ne!(s.itts.model.params(), &itts_before);

        let itts_before = s.itts.model.params().clone();
        chain_step_itts_to_isr(&mut s.isr, &s.itts.model, &batch, mode, Intermediate::TeacherForcing, &e).unwrap();
        assert_eq!(s.itts.model.params(), &itts_before);
        assert_ne!(s.isr.model.params(), &isr_before);
    }
}

#[test]
fn teacher_alignment_conserves_tokens() {
    let (isr, _) = models();
    let b = blocks();
    let mut rng = seeded_rng(24, 0);
    for _ in 0..10 {
        let (x, text) = utterance(&mut rng);
        let a = teacher_alignment(&isr, &x, &text, &b).unwrap();
        assert_eq!(a.num_tokens, text.len());
        assert_eq!(a.num_frames, x.rows());
    }
    let wide = BlockConfig {
        frames_per_block: 8,
        ..b
    };
    let (x, text) = utterance(&mut rng);
    assert!(teacher_alignment(&isr, &x, &text, &wide).is_err());
}

fn toy_corpus() -> Corpus {
    generate(&CorpusConfig {
        vocabulary: "abcd".into(),
        frames_per_char: 2,
        frame_spec: FrameSpec {
            feature_dim: DIM,
            ..FrameSpec::toy()
        },
        min_text_len: 2,
        max_text_len: 5,
        splits: SplitCounts {
            train: 4,
            chain: 4,
            dev: 2,
            test: 1,
        },
        ..Default::default()
    })
    .unwrap()
}

fn quick() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        chain_epochs: 2,
        batch_size: 2,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_the_initial_models() {
    let corpus = toy_corpus();
    let (isr, itts) = models();
    let cfg = TrainConfig { epochs: 0, ..quick() };
    let s = train_stage1(&corpus, isr.clone(), itts.clone(), None, &cfg, &engine(blocks()), None, &mut |_| Ok(())).unwrap();
    assert_eq!(s.isr.best.params(), isr.params());
    assert_eq!(s.itts.best.params(), itts.params());
    assert!(s.records.is_empty());
}

#[test]
fn incremental_stage_one_requires_a_teacher() {
    let corpus = toy_corpus();
    let (isr, itts) = models();
    let cfg = TrainConfig {
        mode: TrainMode::Incremental,
        ..quick()
    };
    let err = train_stage1(&corpus, isr, itts, None, &cfg, &engine(blocks()), None, &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}

fn checkpoints_of(
    run: impl FnOnce(&mut dyn FnMut(&Session) -> Result<()>) -> Result<Session>,
    vocab: &Vocab,
) -> (Session, Vec<Vec<u8>>) {
    let mut saved = Vec::new();
    let s = run(&mut |s| {
        saved.push(s.to_checkpoint(vocab, 0)?.to_bytes());
        Ok(())
    })
    .unwrap();
    (s, saved)
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let corpus = toy_corpus();
    let (isr, itts) = models();
    let e = engine(blocks());
    let teacher = isr.clone();
    for (stage, mode, inter) in [
        (Stage::One, TrainMode::Nonincremental, Intermediate::TeacherForcing),
        (Stage::One, TrainMode::Incremental, Intermediate::TeacherForcing),
        (Stage::Two, TrainMode::Incremental, Intermediate::TeacherForcing),
        (Stage::Two, TrainMode::Incremental, Intermediate::Greedy),
    ] {
        let cfg = TrainConfig {
            mode,
            intermediate: inter,
            ..quick()
        };
        let train = |resume: Option<Session>, cb: &mut dyn FnMut(&Session) -> Result<()>| match stage {
            Stage::One => train_stage1(&corpus, isr.clone(), itts.clone(), Some(&teacher), &cfg, &e, resume, cb),
            Stage::Two => train_stage2(&corpus, isr.clone(), itts.clone(), Some(&teacher), &cfg, &e, resume, cb),
        };
        let (full, saved) = checkpoints_of(|cb| train(None, cb), &corpus.vocab);
        assert_eq!(saved.len(), cfg.epoch_limit(stage));
        let (again, saved_again) = checkpoints_of(|cb| train(None, cb), &corpus.vocab);
        assert_eq!(saved, saved_again);

        let (mid, _) = Session::from_checkpoint(&Checkpoint::from_bytes(&saved[0]).unwrap()).unwrap();
        let (resumed, saved_resumed) = checkpoints_of(|cb| train(Some(mid), cb), &corpus.vocab);
        assert_eq!(&saved_resumed[..], &saved[1..]);
        assert_eq!(resumed.records, full.records);
        assert_eq!(again.isr.best.params(), full.isr.best.params());
        for r in &full.records {
            assert!(r.loss.is_some_and(f64::is_finite), "{r:?}");
        }
    }
}

#[test]
fn divergence_is_detected_against_the_first_epoch() {
    let (isr, _) = models();
    let mut t = Tracked::new(isr, AdamConfig::default());
    t.check_divergence(1, 2.0, 100.0).unwrap();
    t.check_divergence(2, 150.0, 100.0).unwrap();
    assert!(matches!(
        t.check_divergence(3, 201.0, 100.0),
        Err(Error::Divergence { epoch: 3, .. })
    ));
}

#[test]
fn train_config_validation_names_fields() {
    let bad = TrainConfig {
        batch_size: 0,
        ..Default::default()
    };
    match bad.validate() {
        Err(Error::Config { field, .. }) => assert_eq!(field, "train.batch_size"),
        other => panic!("{other:?}"),
    }
    let json = r#"{"epochs": 3, "bogus": 1}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
}

#[test]
fn uniform_alignment_spreads_tokens_over_their_frames() {
    let b = blocks();
    let a = uniform_alignment(&[(0..2, 0..8), (2..3, 8..12)], &b, 12).unwrap();
    assert_eq!(a.token_counts(), vec![1, 1, 1]);
}
