use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";

const SPECIALS: [&str; 5] = [PAD, UNK, MASK, BOS, EOS];

/// Lower-cased word vocabulary with a fixed block of special tokens at the
/// front.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Builds a vocabulary from words; duplicates and case variants collapse.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, usize> =
            all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if w.is_empty() || index.contains_key(&w) {
                continue;
            }
            index.insert(w.clone(), all.len());
            all.push(w);
        }
        Self { words: all, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index
            .get(word)
            .or_else(|| self.index.get(&word.to_lowercase()))
            .copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.id(word).unwrap_or(1)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn unk(&self) -> usize {
        1
    }

    pub fn mask(&self) -> usize {
        2
    }

    pub fn bos(&self) -> usize {
        3
    }

    pub fn eos(&self) -> usize {
        4
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// Whether the entry can be offered as a whole-word substitute: not a
    /// special token, not a subword continuation, and purely alphabetic.
    pub fn is_admissible(&self, id: usize) -> bool {
        if self.is_special(id) {
            return false;
        }
        let w = &self.words[id];
        !w.is_empty() && !w.starts_with("##") && w.chars().all(char::is_alphabetic)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Vocab::new(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())))
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first_and_case_folded() {
        let v = Vocab::new(["The", "cat", "the", "##s", ","]);
        assert_eq!(v.len(), 5 + 4);
        assert_eq!(v.id("THE"), v.id("the"));
        assert!(v.is_special(v.mask()));
        assert!(!v.is_admissible(v.id("##s").unwrap()));
        assert!(!v.is_admissible(v.id(",").unwrap()));
        assert!(v.is_admissible(v.id("cat").unwrap()));
        assert_eq!(v.id_or_unk("zebra"), v.unk());
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::new(["a", "b"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
    }
}
