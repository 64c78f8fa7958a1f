use crate::corpus::{strip_special, TokenId};
use crate::error::{Error, Result};

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate in percent of `hypothesis` against `reference`,
/// ignoring special tokens on both sides.
pub fn cer(hypothesis: &[TokenId], reference: &[TokenId]) -> Result<f64> {
    let h = strip_special(hypothesis);
    let r = strip_special(reference);
    if r.is_empty() {
        return Err(Error::Argument("reference has no characters".into()));
    }
    Ok(100.0 * edit_distance(&h, &r) as f64 / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EOB, EOS};
    use proptest::prelude::*;

    /// Exhaustive recursion over the three edit operations.
    fn brute(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute(ra, rb) + usize::from(x != y);
                sub.min(brute(ra, b) + 1).min(brute(a, rb) + 1)
            }
        }
    }

    #[test]
    fn known_values() {
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance::<u8>(b"", b"abc"), 3);
        assert_eq!(cer(&[3, 4, 5], &[3, 4, 5]).unwrap(), 0.0);
        assert_eq!(cer(&[], &[3, 4, 5, 6, 7]).unwrap(), 100.0);
        assert!((cer(&[3, 4, 5], &[3, 6, 5]).unwrap() - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer(&[3, EOB, 4, EOS], &[3, 4]).unwrap(), 0.0);
    }

    #[test]
    fn empty_reference_is_an_error() {
        assert!(cer(&[3], &[EOS]).is_err());
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in proptest::collection::vec(0u8..3, 0..7), b in proptest::collection::vec(0u8..3, 0..7)) {
            prop_assert_eq!(edit_distance(&a, &b), brute(&a, &b));
        }

        #[test]
        fn symmetric_and_bounded(a in proptest::collection::vec(0u8..4, 0..12), b in proptest::collection::vec(0u8..4, 0..12)) {
            let d = edit_distance(&a, &b);
            prop_assert_eq!(d, edit_distance(&b, &a));
            prop_assert!(d <= a.len().max(b.len()));
            prop_assert!(d >= a.len().abs_diff(b.len()));
        }
    }
}
