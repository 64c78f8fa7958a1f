use super::*;
use crate::numerics::{gradcheck, Adam, AdamConfig};
use proptest::prelude::*;
use rand::Rng;

fn tiny() -> SynthesizerConfig {
    SynthesizerConfig {
        feature_dim: 3,
        vocab_size: 6,
        embed_dim: 3,
        encoder_units: 4,
        encoder_hidden: 3,
        prenet_units: 3,
        decoder_hidden: 4,
        attention_dim: 3,
        frames_per_step: 2,
        leaky_slope: 0.1,
    }
}

fn frames(rows: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = seeded_rng(seed, 77);
    Tensor::new(rows, dim, (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn teacher_forced_shapes() {
    let mut c = tiny();
    c.frames_per_step = 4;
    let s = Synthesizer::new(c, 1).unwrap();
    let tf = s.synthesize_teacher_forced(&[3, 4, 5], &frames(12, 3, 0)).unwrap();
    assert_eq!(tf.frames.shape(), [12, 3]);
    assert_eq!(tf.stop_logits.shape(), [3, 2]);
    assert_eq!(tf.attention.shape(), [3, 3]);
    assert!(matches!(
        s.synthesize_teacher_forced(&[3], &frames(12, 2, 0)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn max_steps_one_gives_one_group() {
    let mut c = tiny();
    c.frames_per_step = 4;
    let s = Synthesizer::new(c, 2).unwrap();
    let r = s.synthesize_greedy(&[3, 4], 1).unwrap();
    assert_eq!(r.frames.rows(), 4);
    assert_eq!(r.steps(), 1);
}

#[test]
fn greedy_is_deterministic_and_grouped() {
    let s = Synthesizer::new(tiny(), 3).unwrap();
    let a = s.synthesize_greedy(&[3, 4, 5, 3], 7).unwrap();
    let b = s.synthesize_greedy(&[3, 4, 5, 3], 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.frames.rows(), a.steps() * 2);
    assert_eq!(a.attention.rows(), a.steps());
    for i in 0..a.attention.rows() {
        let sum: f64 = a.attention.row_slice(i).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
    assert!(a.stop_probs.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)));
}

#[test]
fn unknown_token_and_empty_text() {
    let s = Synthesizer::new(tiny(), 3).unwrap();
    match s.synthesize_greedy(&[3, 4, 8], 2) {
        Err(Error::UnknownToken { position, .. }) => assert_eq!(position, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(s.synthesize_greedy(&[], 2), Err(Error::Argument(_))));
}

#[test]
fn zero_weight_model_loss_is_reference_energy() {
    let mut s = Synthesizer::new(tiny(), 4).unwrap();
    s.params_mut().zero_all();
    let reference = frames(6, 3, 1);
    let tf = s.synthesize_teacher_forced(&[3, 4], &reference).unwrap();
    assert!(tf.frames.data().iter().all(|&v| v == 0.0));
    let energy: f64 = reference.data().iter().map(|v| v * v).sum::<f64>() / 6.0;
    assert!((feature_loss(&tf.frames, &reference).unwrap() - energy).abs() < 1e-12);
}

#[test]
fn feature_loss_values() {
    let a = frames(5, 4, 2);
    assert_eq!(feature_loss(&a, &a).unwrap(), 0.0);
    let b = a.map(|v| v + 1.0);
    assert!((feature_loss(&b, &a).unwrap() - 4.0).abs() < 1e-12);
    // shorter side repeats its last frame
    let short = a.slice_rows(0, 3);
    let padded = Tensor::vstack(&[&short, &a.slice_rows(2, 3), &a.slice_rows(2, 3)]).unwrap();
    assert_eq!(feature_loss(&short, &a).unwrap(), feature_loss(&padded, &a).unwrap());
    assert!(feature_loss(&a, &frames(5, 3, 0)).is_err());
}

#[test]
fn stop_loss_of_confident_correct_flags_is_small() {
    assert!(stop_loss(&[0.0001, 0.0001, 0.9999]) < 1e-3);
    assert!((stop_loss(&[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let s = Synthesizer::new(tiny(), 5).unwrap();
    let reference = frames(6, 3, 3);
    let window = TextWindow {
        look_back: vec![5],
        main: vec![3, 4],
        look_ahead: vec![4],
    };
    let report = gradcheck::check(s.params(), 1e-5, Some(6), |ps| {
        let mut model = s.clone();
        *model.params_mut() = ps.clone();
        let mut g = Graph::new();
        let p = g.bind(ps, true);
        let state = model.initial_carry().bind(&mut g);
        let (f, st, _) = model.segment_loss_graph(&mut g, &p, &window, &reference, state)?;
        let loss = g.add(f, st)?;
        Ok((g, loss, p))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn teacher_forced_loss_drops_tenfold_on_one_utterance() {
    let mut c = tiny();
    c.decoder_hidden = 12;
    c.encoder_hidden = 8;
    c.encoder_units = 8;
    c.prenet_units = 8;
    let mut s = Synthesizer::new(c, 6).unwrap();
    let text = [3, 5, 4];
    let reference = frames(6, 3, 4);
    let mut adam = Adam::new(AdamConfig { learning_rate: 0.01, ..Default::default() }, s.params());
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..200 {
        let mut g = Graph::new();
        let p = g.bind(s.params(), true);
        let state = s.initial_carry().bind(&mut g);
        let (f, st, _) = s.segment_loss_graph(&mut g, &p, &TextWindow::whole(&text), &reference, state).unwrap();
        let loss = g.add(f, st).unwrap();
        last = g.value(f).item();
        first.get_or_insert(last);
        let grads = g.backward_scalar(loss).unwrap().for_params(s.params(), &p);
        adam.step(s.params_mut(), &grads).unwrap();
    }
    assert!(last * 10.0 < first.unwrap(), "{first:?} -> {last}");
    let out = s.synthesize_greedy(&text, 10).unwrap();
    assert!(!out.truncated);
    assert_eq!(out.frames.rows(), 6);
    assert!(feature_loss(&out.frames, &reference).unwrap() < 0.1);
}

proptest! {
    #[test]
    fn feature_loss_matches_direct_summation(seed in 0u64..1000, rows in 1usize..9, dim in 1usize..6) {
        let a = frames(rows, dim, seed);
        let b = frames(rows, dim, seed + 5000);
        let mut direct = 0.0;
        for i in 0..rows {
            for j in 0..dim {
                direct += (a.get(i, j) - b.get(i, j)).powi(2);
            }
        }
        direct /= rows as f64;
        let got = feature_loss(&a, &b).unwrap();
        prop_assert!((got - direct).abs() < 1e-12);
        prop_assert_eq!(got, feature_loss(&b, &a).unwrap());
    }
}
