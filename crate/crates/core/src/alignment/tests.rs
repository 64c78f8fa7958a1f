use super::*;
use crate::numerics::seeded_rng;
use proptest::prelude::*;
use rand::Rng;

fn reference() -> BlockConfig {
    BlockConfig::default()
}

fn one_block_windows() -> BlockConfig {
    BlockConfig {
        main_blocks: 1,
        ..reference()
    }
}

fn one_hot_rows(cols: usize, hot: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(hot.len(), cols);
    for (r, &c) in hot.iter().enumerate() {
        t.data_mut()[r * cols + c] = 1.0;
    }
    t
}

#[test]
fn diagonal_attention_gives_one_token_per_window() {
    let a = extract_alignment(&one_hot_rows(4, &[0, 1, 2, 3]), &one_block_windows(), 32, 4).unwrap();
    assert_eq!(a.token_counts(), vec![1, 1, 1, 1]);
    assert_eq!(a.widths(), vec![8, 8, 8, 8]);
}

#[test]
fn mass_on_last_state_puts_everything_last() {
    let a = extract_alignment(&one_hot_rows(4, &[3, 3, 3]), &one_block_windows(), 32, 3).unwrap();
    assert_eq!(a.token_counts(), vec![0, 0, 0, 3]);
}

#[test]
fn ties_go_to_the_earlier_state_and_order_is_repaired() {
    let att = Tensor::from_rows(&[vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
    let a = extract_alignment(&att, &one_block_windows(), 24, 3).unwrap();
    assert_eq!(a.token_counts(), vec![1, 0, 2]);
    assert_eq!(a.repairs, 1);
}

#[test]
fn shape_errors() {
    let att = one_hot_rows(4, &[0, 1]);
    assert!(extract_alignment(&att, &one_block_windows(), 32, 3).is_err());
    assert!(extract_alignment(&att, &one_block_windows(), 40, 2).is_err());
}

#[test]
fn isr_targets_follow_the_block_rule() {
    let a = SegmentAlignment::from_counts(&[2, 0, 1], &one_block_windows(), 24).unwrap();
    let t = build_isr_targets(&a, &[10, 11, 12]).unwrap();
    assert_eq!(t, vec![vec![10, 11, EOB], vec![EOB], vec![12, EOS, EOB]]);
    let one = SegmentAlignment::from_counts(&[3], &reference(), 20).unwrap();
    assert_eq!(build_isr_targets(&one, &[4, 5, 6]).unwrap(), vec![vec![4, 5, 6, EOS, EOB]]);
}

#[test]
fn itts_merge_examples() {
    let cfg = one_block_windows();
    let a = SegmentAlignment::from_counts(&[2, 0, 1], &cfg, 24).unwrap();
    let m = build_itts_segments(&a, &cfg).unwrap();
    assert_eq!(m.widths(), vec![16, 8]);
    assert_eq!(m.token_counts(), vec![2, 1]);

    let lead = SegmentAlignment::from_counts(&[0, 0, 2, 1], &cfg, 32).unwrap();
    let m = build_itts_segments(&lead, &cfg).unwrap();
    assert_eq!(m.widths(), vec![24, 8]);
    assert_eq!(m.segments[0].frames, 0..24);

    let full = SegmentAlignment::from_counts(&[1, 2, 1], &cfg, 24).unwrap();
    assert_eq!(build_itts_segments(&full, &cfg).unwrap(), full);

    let tail = SegmentAlignment::from_counts(&[1, 2, 1], &cfg, 20).unwrap();
    let m = build_itts_segments(&tail, &cfg).unwrap();
    assert_eq!(m.widths(), vec![8, 12]);
    assert_eq!(m.token_counts(), vec![1, 3]);

    let none = SegmentAlignment::from_counts(&[0, 0], &cfg, 16).unwrap();
    assert!(build_itts_segments(&none, &cfg).is_err());
}

#[test]
fn reference_delays_are_exact() {
    let d = compute_delays(&reference(), &FrameSpec::MEL_80);
    assert_eq!(d.isr_seconds, 0.8375);
    assert_eq!(d.itts_characters, 30.0);
    let minimal = BlockConfig {
        main_blocks: 1,
        look_ahead_blocks: 0,
        ..reference()
    };
    assert_eq!(compute_delays(&minimal, &FrameSpec::MEL_80).isr_seconds, 0.1375);
}

#[test]
fn isr_window_pads_both_edges() {
    let cfg = BlockConfig {
        frames_per_block: 2,
        main_blocks: 1,
        look_back_blocks: 1,
        look_ahead_blocks: 1,
        ..reference()
    };
    let x = Tensor::new(5, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    assert_eq!(isr_window(&x, &cfg, 0).data(), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
    assert_eq!(isr_window(&x, &cfg, 2).data(), &[3.0, 4.0, 5.0, 5.0, 5.0, 5.0]);
}

#[test]
fn itts_window_takes_context_blocks() {
    let cfg = BlockConfig {
        chars_per_block: 2,
        look_back_blocks: 1,
        look_ahead_blocks: 2,
        ..reference()
    };
    let text: Vec<TokenId> = (3..13).collect();
    let w = itts_window(&text, &cfg, 1..3);
    assert_eq!(w.look_back, vec![3]);
    assert_eq!(w.main, vec![4, 5]);
    assert_eq!(w.look_ahead, vec![6, 7, 8, 9]);
}

/// Random attention matrix with rows drawn around a drifting peak.
fn random_attention(rng: &mut rand_chacha::ChaCha8Rng, t: usize, states: usize, monotone: bool) -> Tensor {
    let mut data = Vec::with_capacity(t * states);
    let mut peak = 0;
    for _ in 0..t {
        if monotone {
            peak = (peak + rng.random_range(0..3)).min(states - 1);
        } else {
            peak = rng.random_range(0..states);
        }
        let mut row: Vec<f64> = (0..states).map(|_| rng.random_range(0.0..0.5)).collect();
        row[peak] += 1.0;
        let z: f64 = row.iter().sum();
        data.extend(row.iter().map(|v| v / z));
    }
    Tensor::new(t, states, data).unwrap()
}

#[test]
fn monotone_attention_matches_direct_argmax_grouping() {
    let cfg = BlockConfig {
        frames_per_block: 4,
        main_blocks: 2,
        ..reference()
    };
    let mut rng = seeded_rng(11, 0);
    for _ in 0..200 {
        let s: usize = rng.random_range(1..60);
        let states = s.div_ceil(4);
        let t = rng.random_range(1..15);
        let att = random_attention(&mut rng, t, states, true);
        let a = extract_alignment(&att, &cfg, s, t).unwrap();
        let mut expected = vec![0; cfg.num_windows(s)];
        for r in 0..t {
            let row = att.row_slice(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            expected[best * 4 / cfg.window_frames()] += 1;
        }
        assert_eq!(a.token_counts(), expected);
        assert_eq!(a.repairs, 0);
    }
}

#[test]
fn conservation_over_random_attention() {
    let cfg = BlockConfig {
        frames_per_block: 4,
        main_blocks: 2,
        ..reference()
    };
    let mut rng = seeded_rng(12, 0);
    for _ in 0..1000 {
        let s: usize = rng.random_range(1..80);
        let t = rng.random_range(1..20);
        let monotone = rng.random_bool(0.5);
        let att = random_attention(&mut rng, t, s.div_ceil(4), monotone);
        let a = extract_alignment(&att, &cfg, s, t).unwrap();
        assert_eq!(a.token_counts().iter().sum::<usize>(), t);
        assert_eq!(a.widths().iter().sum::<usize>(), s);
        let targets = build_isr_targets(&a, &vec![5; t]).unwrap();
        assert_eq!(targets.iter().flatten().filter(|&&x| x == 5).count(), t);
        let m = build_itts_segments(&a, &cfg).unwrap();
        assert_eq!(m.widths().iter().sum::<usize>(), s);
        assert_eq!(m.token_counts().iter().sum::<usize>(), t);
        assert!(m.token_counts().iter().all(|&k| k >= 1));
        if m.len() > 1 {
            assert!(m.widths().iter().all(|&w| w >= cfg.window_frames()));
        }
        assert_eq!(build_itts_segments(&m, &cfg).unwrap(), m);
    }
}

proptest! {
    #[test]
    fn argmax_preserving_perturbation_keeps_alignment(seed in 0u64..500, scale in 0.1f64..0.9) {
        let cfg = BlockConfig { frames_per_block: 4, main_blocks: 2, ..reference() };
        let mut rng = seeded_rng(seed, 1);
        let att = random_attention(&mut rng, 6, 5, false);
        let mut bent = att.clone();
        for r in 0..6 {
            let best = argmax(att.row_slice(r));
            for c in 0..5 {
                if c != best {
                    bent.data_mut()[r * 5 + c] *= scale;
                }
            }
        }
        prop_assert_eq!(
            extract_alignment(&att, &cfg, 20, 6).unwrap(),
            extract_alignment(&bent, &cfg, 20, 6).unwrap()
        );
    }
}
