use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Start-of-sentence; only ever a decoder input.
pub const SOS: TokenId = 0;
/// End-of-sentence.
pub const EOS: TokenId = 1;
/// End-of-block: closes the output of one incremental recognition step.
pub const EOB: TokenId = 2;
pub const NUM_SPECIAL: usize = 3;

/// Closed character vocabulary. Ids `0..3` are the special tokens and
/// characters follow in configuration order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    pub fn new(chars: &str) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        if chars.is_empty() {
            return Err(Error::config("vocabulary", "vocabulary is empty"));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::config(
                    "vocabulary",
                    format!("duplicate character {c:?} at position {i}"),
                ));
            }
            if c.is_control() {
                return Err(Error::config(
                    "vocabulary",
                    format!("control character {c:?} at position {i}"),
                ));
            }
        }
        Ok(Vocab { chars })
    }

    /// Total number of token ids including special tokens.
    pub fn size(&self) -> usize {
        self.chars.len() + NUM_SPECIAL
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn char_ids(&self) -> std::ops::Range<TokenId> {
        NUM_SPECIAL..self.size()
    }

    pub fn is_special(id: TokenId) -> bool {
        id < NUM_SPECIAL
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .enumerate()
            .map(|(pos, c)| {
                self.chars
                    .iter()
                    .position(|&v| v == c)
                    .map(|i| i + NUM_SPECIAL)
                    .ok_or(Error::UnknownToken {
                        token: c.to_string(),
                        position: pos,
                    })
            })
            .collect()
    }

    /// Renders character tokens; special tokens are skipped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !Vocab::is_special(id))
            .filter_map(|&id| self.chars.get(id - NUM_SPECIAL))
            .collect()
    }

    pub fn symbol(&self, id: TokenId) -> String {
        match id {
            SOS => "<sos>".into(),
            EOS => "<eos>".into(),
            EOB => "<eob>".into(),
            _ => self
                .chars
                .get(id - NUM_SPECIAL)
                .map(|c| c.to_string())
                .unwrap_or_else(|| format!("<{id}?>")),
        }
    }

    /// Checks that every id is a valid token, reporting the first offender.
    pub fn validate(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().position(|&id| id >= self.size()) {
            Some(pos) => Err(Error::UnknownToken {
                token: format!("id {}", ids[pos]),
                position: pos,
            }),
            None => Ok(()),
        }
    }
}

/// Drops special tokens.
pub fn strip_special(ids: &[TokenId]) -> Vec<TokenId> {
    ids.iter().copied().filter(|&id| !Vocab::is_special(id)).collect()
}

impl TryFrom<String> for Vocab {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Vocab::new(&s)
    }
}

impl From<Vocab> for String {
    fn from(v: Vocab) -> String {
        v.chars.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode() {
        let v = Vocab::new("abc ").unwrap();
        assert_eq!(v.size(), 7);
        let ids = v.encode("ca b").unwrap();
        assert_eq!(ids, vec![5, 3, 6, 4]);
        assert_eq!(v.decode(&[SOS, 5, EOB, 3, EOS]), "ca");
    }

    #[test]
    fn unknown_char_reports_position() {
        let v = Vocab::new("ab").unwrap();
        match v.encode("abz") {
            Err(Error::UnknownToken { token, position }) => {
                assert_eq!(token, "z");
                assert_eq!(position, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!(matches!(Vocab::new(""), Err(Error::Config { .. })));
        assert!(matches!(Vocab::new("aba"), Err(Error::Config { .. })));
    }
}
