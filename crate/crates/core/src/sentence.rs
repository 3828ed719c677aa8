//! Whole-word tokenization and character-span splicing.
//!
//! A [`Sentence`] keeps the raw text together with the byte spans of every
//! token, so substitutions splice into the original string and leave all
//! surrounding whitespace and punctuation untouched.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SentenceError {
    #[error("EMPTY_TEXT: text is empty or whitespace only")]
    EmptyText,
    #[error("BAD_SITE: position {position} out of range for sentence of {len} tokens")]
    BadSite { position: usize, len: usize },
    #[error("BAD_SITE: site does not belong to this sentence")]
    ForeignSite,
    #[error("EMPTY_TEXT: replacement token is empty")]
    EmptyReplacement,
}

/// Tokenized text. Spans are byte offsets into `text`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    text: String,
    tokens: Vec<String>,
    spans: Vec<(usize, usize)>,
}

impl Sentence {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, position: usize) -> Option<&str> {
        self.tokens.get(position).map(String::as_str)
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false for a constructed sentence (N >= 1); present for clippy.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Reassembles the text from tokens and the gaps between spans.
    pub fn detokenize(&self) -> String {
        let mut out = String::with_capacity(self.text.len());
        let mut cursor = 0;
        for (tok, &(start, end)) in self.tokens.iter().zip(&self.spans) {
            out.push_str(&self.text[cursor..start]);
            out.push_str(tok);
            cursor = end;
        }
        out.push_str(&self.text[cursor..]);
        out
    }

    pub fn site(self: &Arc<Self>, position: usize) -> Result<TokenSite, SentenceError> {
        TokenSite::new(Arc::clone(self), position)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Word,
    Space,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_alphanumeric() {
        CharClass::Word
    } else if c.is_whitespace() {
        CharClass::Space
    } else {
        CharClass::Other
    }
}

/// Splits text into whole words and single punctuation marks.
///
/// Words are maximal alphanumeric runs; an apostrophe or hyphen joins two
/// runs when it sits directly between alphanumerics ("don't", "well-known").
pub fn tokenize(text: &str) -> Result<Sentence, SentenceError> {
    if text.trim().is_empty() {
        return Err(SentenceError::EmptyText);
    }
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        match class_of(c) {
            CharClass::Space => i += 1,
            CharClass::Other => {
                let end = start + c.len_utf8();
                tokens.push(text[start..end].to_string());
                spans.push((start, end));
                i += 1;
            }
            CharClass::Word => {
                let mut j = i + 1;
                while j < chars.len() {
                    let cj = chars[j].1;
                    if class_of(cj) == CharClass::Word {
                        j += 1;
                    } else if matches!(cj, '\'' | '’' | '-')
                        && j + 1 < chars.len()
                        && class_of(chars[j + 1].1) == CharClass::Word
                    {
                        j += 2;
                    } else {
                        break;
                    }
                }
                let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
                tokens.push(text[start..end].to_string());
                spans.push((start, end));
                i = j;
            }
        }
    }
    Ok(Sentence {
        text: text.to_string(),
        tokens,
        spans,
    })
}

/// A token position inside a shared sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSite {
    sentence: Arc<Sentence>,
    position: usize,
}

impl TokenSite {
    pub fn new(sentence: Arc<Sentence>, position: usize) -> Result<Self, SentenceError> {
        if position >= sentence.len() {
            return Err(SentenceError::BadSite {
                position,
                len: sentence.len(),
            });
        }
        Ok(Self { sentence, position })
    }

    pub fn sentence(&self) -> &Arc<Sentence> {
        &self.sentence
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn original_token(&self) -> &str {
        &self.sentence.tokens[self.position]
    }
}

/// Replaces the token at `site` with `candidate`, splicing into the text span.
pub fn apply_substitution(
    sentence: &Sentence,
    site: &TokenSite,
    candidate: &str,
) -> Result<Sentence, SentenceError> {
    if site.sentence.as_ref() != sentence {
        return Err(SentenceError::ForeignSite);
    }
    substitute_at(sentence, site.position, candidate)
}

/// Position-based variant of [`apply_substitution`].
pub fn substitute_at(
    sentence: &Sentence,
    position: usize,
    candidate: &str,
) -> Result<Sentence, SentenceError> {
    if position >= sentence.len() {
        return Err(SentenceError::BadSite {
            position,
            len: sentence.len(),
        });
    }
    if candidate.is_empty() {
        return Err(SentenceError::EmptyReplacement);
    }
    let (start, end) = sentence.spans[position];
    let mut text = String::with_capacity(sentence.text.len() + candidate.len());
    text.push_str(&sentence.text[..start]);
    text.push_str(candidate);
    text.push_str(&sentence.text[end..]);

    let delta = candidate.len() as isize - (end - start) as isize;
    let shift = |b: usize| (b as isize + delta) as usize;
    let spans = sentence
        .spans
        .iter()
        .enumerate()
        .map(|(i, &(s, e))| match i.cmp(&position) {
            std::cmp::Ordering::Less => (s, e),
            std::cmp::Ordering::Equal => (s, s + candidate.len()),
            std::cmp::Ordering::Greater => (shift(s), shift(e)),
        })
        .collect();
    let mut tokens = sentence.tokens.clone();
    tokens[position] = candidate.to_string();
    Ok(Sentence {
        text,
        tokens,
        spans,
    })
}

/// Copies the leading-capital pattern of `original` onto `replacement`.
pub fn match_case(original: &str, replacement: &str) -> String {
    let mut orig_chars = original.chars().filter(|c| c.is_alphabetic());
    let first_upper = orig_chars.next().is_some_and(char::is_uppercase);
    let all_upper = first_upper
        && original.chars().filter(|c| c.is_alphabetic()).count() > 1
        && original
            .chars()
            .filter(|c| c.is_alphabetic())
            .all(char::is_uppercase);
    if all_upper {
        replacement.to_uppercase()
    } else if first_upper {
        let mut chars = replacement.chars();
        match chars.next() {
            Some(c) => c.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    } else {
        replacement.to_string()
    }
}
