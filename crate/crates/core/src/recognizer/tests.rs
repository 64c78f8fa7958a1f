use super::*;
use crate::numerics::gradcheck;

fn tiny() -> RecognizerConfig {
    RecognizerConfig {
        feature_dim: 3,
        vocab_size: 6,
        input_units: 4,
        encoder_hidden: 3,
        encoder_layers: 2,
        embed_dim: 3,
        decoder_hidden: 4,
        attention_dim: 3,
    }
}

fn features(frames: usize, dim: usize, seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = seeded_rng(seed, 99);
    let data = (0..frames * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(frames, dim, data).unwrap()
}

#[test]
fn encoder_output_length_is_ceil_of_subsampled_frames() {
    let m = Recognizer::new(tiny(), 1).unwrap();
    for s in [1, 3, 4, 5, 8, 9, 13] {
        let states = m.encode(&features(s, 3, s as u64)).unwrap();
        assert_eq!(states.shape(), [s.div_ceil(4), 6], "S = {s}");
    }
}

#[test]
fn padding_repeats_last_frame() {
    let x = features(5, 2, 0);
    let p = pad_to_multiple(&x, 4);
    assert_eq!(p.rows(), 8);
    for r in 5..8 {
        assert_eq!(p.row_slice(r), x.row_slice(4));
    }
    assert_eq!(pad_to_multiple(&x, 5), x);
}

#[test]
fn wrong_feature_dim_is_shape_error() {
    let m = Recognizer::new(tiny(), 1).unwrap();
    assert!(matches!(m.encode(&features(4, 2, 0)), Err(Error::Shape(_))));
}

#[test]
fn greedy_attention_rows_match_tokens_and_are_distributions() {
    let m = Recognizer::new(tiny(), 3).unwrap();
    let states = m.encode(&features(11, 3, 7)).unwrap();
    let r = m.decode_greedy(&states, 9).unwrap();
    assert!(!r.tokens.is_empty() && r.tokens.len() <= 9);
    assert_eq!(r.attention.shape(), [r.tokens.len(), states.rows()]);
    assert_eq!(r.log_probs.len(), r.tokens.len());
    for i in 0..r.attention.rows() {
        let s: f64 = r.attention.row_slice(i).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    assert!(r.log_probs.iter().all(|&lp| lp <= 0.0));
    assert_eq!(r.truncated, r.terminator().is_none());
}

#[test]
fn max_len_one_emits_at_most_one_token() {
    let m = Recognizer::new(tiny(), 4).unwrap();
    let states = m.encode(&features(6, 3, 1)).unwrap();
    let r = m.decode_greedy(&states, 1).unwrap();
    assert_eq!(r.tokens.len(), 1);
    assert!(m.decode_greedy(&states, 0).is_err());
}

#[test]
fn teacher_forced_shapes_and_unknown_token() {
    let m = Recognizer::new(tiny(), 5).unwrap();
    let states = m.encode(&features(7, 3, 2)).unwrap();
    let tf = m.decode_teacher_forced(&states, &[3, 4, 5, EOS]).unwrap();
    assert_eq!(tf.logits.shape(), [4, 6]);
    assert_eq!(tf.attention.shape(), [4, 2]);
    match m.decode_teacher_forced(&states, &[3, 9, EOS]) {
        Err(Error::UnknownToken { position, .. }) => assert_eq!(position, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn greedy_agrees_with_teacher_forcing_on_its_own_output() {
    let m = Recognizer::new(tiny(), 6).unwrap();
    let states = m.encode(&features(9, 3, 3)).unwrap();
    let r = m.decode_greedy(&states, 6).unwrap();
    let tf = m.decode_teacher_forced(&states, &r.tokens).unwrap();
    assert_eq!(tf.attention, r.attention);
    for (i, &t) in r.tokens.iter().enumerate() {
        assert_eq!(tf.logits.argmax_row(i), t);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let m = Recognizer::new(tiny(), 8).unwrap();
    let x = features(6, 3, 4);
    let report = gradcheck::check(m.params(), 1e-5, Some(6), |ps| {
        let mut model = m.clone();
        *model.params_mut() = ps.clone();
        let mut g = Graph::new();
        let p = g.bind(ps, true);
        let loss = model.loss_graph(&mut g, &p, &x, &[3, 5, 4])?;
        Ok((g, loss, p))
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn single_utterance_can_be_memorised() {
    use crate::numerics::{Adam, AdamConfig};
    let mut m = Recognizer::new(tiny(), 9).unwrap();
    let x = features(8, 3, 5);
    let text = [4, 3, 5];
    let mut adam = Adam::new(AdamConfig { learning_rate: 0.02, ..Default::default() }, m.params());
    for _ in 0..150 {
        let mut g = Graph::new();
        let p = g.bind(m.params(), true);
        let loss = m.loss_graph(&mut g, &p, &x, &text).unwrap();
        let grads = g.backward_scalar(loss).unwrap().for_params(m.params(), &p);
        adam.step(m.params_mut(), &grads).unwrap();
    }
    let r = m.recognize(&x, 10).unwrap();
    assert_eq!(r.tokens, vec![4, 3, 5, EOS]);
}

#[test]
fn decode_record_renders_symbols() {
    let vocab = Vocab::new("abc").unwrap();
    let r = DecodeResult {
        tokens: vec![3, 5, EOB],
        attention: Tensor::filled(3, 1, 1.0),
        log_probs: vec![-0.1, -0.2, -0.3],
        truncated: false,
    };
    let rec = DecodeRecord::new("u1", &r, &vocab);
    assert_eq!(rec.tokens, vec!["a", "c", "<eob>"]);
    assert_eq!(r.text(), vec![3, 5]);
    assert_eq!(r.terminator(), Some(EOB));
}
