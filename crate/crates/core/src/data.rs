//! Dataset loaders.
//!
//! Everything is normalized into one canonical JSON-lines schema:
//!
//! ```text
//! {"id": "s1", "text": "The critical role ...", "annotations": [{"pos": 1, "suggestions": ["crucial"]}]}
//! ```
//!
//! Source formats:
//! - `SWS`: the canonical schema itself.
//! - `LS07` / `LS14`: SemEval-style XML (`<lexelt item=..><instance id=..><context>.. <head>w</head> ..</context>`)
//!   with a sibling `.gold` file of `item id :: sub n;sub n;` lines. Gold
//!   labels are kept verbatim (lemmatized).
//! - `XSUM`: JSON lines with `id` and `document`; every sentence of the
//!   document becomes a record without annotations.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sentence::{tokenize, Sentence};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("PARSE_ERROR: {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("UNKNOWN_FORMAT: {0}")]
    UnknownFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DatasetFormat {
    Sws,
    Ls07,
    Ls14,
    Xsum,
}

impl FromStr for DatasetFormat {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SWS" | "CANONICAL" => Ok(Self::Sws),
            "LS07" => Ok(Self::Ls07),
            "LS14" => Ok(Self::Ls14),
            "XSUM" => Ok(Self::Xsum),
            _ => Err(DataError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub target_position: usize,
    pub suggestions: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub sentence_id: String,
    pub sentence: Arc<Sentence>,
    pub annotations: Vec<Annotation>,
}

impl DatasetRecord {
    /// Annotator suggestions for a position; empty when not annotated.
    pub fn suggestions_at(&self, position: usize) -> BTreeSet<String> {
        self.annotations
            .iter()
            .filter(|a| a.target_position == position)
            .flat_map(|a| a.suggestions.iter().cloned())
            .collect()
    }

    pub fn to_canonical(&self) -> CanonicalRecord {
        CanonicalRecord {
            id: self.sentence_id.clone(),
            text: self.sentence.text().to_string(),
            annotations: self
                .annotations
                .iter()
                .map(|a| CanonicalAnnotation {
                    pos: a.target_position,
                    suggestions: a.suggestions.iter().cloned().collect(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalAnnotation {
    pub pos: usize,
    pub suggestions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub annotations: Vec<CanonicalAnnotation>,
}

impl CanonicalRecord {
    /// Validates and tokenizes. Suggestions equal to the original token are
    /// dropped.
    pub fn into_record(self) -> Result<DatasetRecord, String> {
        let sentence = tokenize(&self.text).map_err(|e| format!("record {:?}: {e}", self.id))?;
        let mut annotations = Vec::with_capacity(self.annotations.len());
        for a in self.annotations {
            let original = sentence.token(a.pos).ok_or_else(|| {
                format!(
                    "record {:?}: target_position {} out of range for {} tokens",
                    self.id,
                    a.pos,
                    sentence.len()
                )
            })?;
            let suggestions = a
                .suggestions
                .into_iter()
                .filter(|s| !s.is_empty() && s.to_lowercase() != original.to_lowercase())
                .collect();
            annotations.push(Annotation {
                target_position: a.pos,
                suggestions,
            });
        }
        Ok(DatasetRecord {
            sentence_id: self.id,
            sentence: Arc::new(sentence),
            annotations,
        })
    }
}

/// Streaming record source.
pub struct Loader {
    inner: LoaderInner,
}

enum LoaderInner {
    Canonical {
        path: String,
        lines: Lines<BufReader<File>>,
        lineno: usize,
    },
    Buffered(std::vec::IntoIter<Result<DatasetRecord, DataError>>),
}

impl Iterator for Loader {
    type Item = Result<DatasetRecord, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            LoaderInner::Buffered(it) => it.next(),
            LoaderInner::Canonical { path, lines, lineno } => loop {
                let line = lines.next()?;
                *lineno += 1;
                let line = match line {
                    Ok(l) => l,
                    Err(source) => {
                        return Some(Err(DataError::Io {
                            path: path.clone(),
                            source,
                        }))
                    }
                };
                if line.trim().is_empty() {
                    continue;
                }
                let parse_err = |message: String| DataError::Parse {
                    path: path.clone(),
                    line: *lineno,
                    message,
                };
                return Some(
                    serde_json::from_str::<CanonicalRecord>(&line)
                        .map_err(|e| parse_err(e.to_string()))
                        .and_then(|r| r.into_record().map_err(parse_err)),
                );
            },
        }
    }
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Opens `path` in the given source format.
pub fn load(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Loader, DataError> {
    let path = path.as_ref();
    let inner = match format {
        DatasetFormat::Sws => LoaderInner::Canonical {
            path: path.display().to_string(),
            lines: BufReader::new(open(path)?).lines(),
            lineno: 0,
        },
        DatasetFormat::Ls07 | DatasetFormat::Ls14 => LoaderInner::Buffered(load_lexsub(path)?.into_iter()),
        DatasetFormat::Xsum => LoaderInner::Buffered(load_xsum(path)?.into_iter()),
    };
    Ok(Loader { inner })
}

/// Loads everything, failing on the first bad record.
pub fn load_all(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<DatasetRecord>, DataError> {
    load(path, format)?.collect()
}

pub fn write_canonical(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&r.to_canonical()).expect("canonical record serializes"));
        out.push('\n');
    }
    out
}

fn unescape_xml(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn gold_path(xml: &Path) -> PathBuf {
    xml.with_extension("gold")
}

/// Parses `item id :: sub n;sub n;` lines keyed by instance id.
fn parse_gold(path: &Path) -> Result<HashMap<String, Vec<String>>, DataError> {
    let text = read(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: &str| DataError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: message.to_string(),
        };
        let (head, subs) = line.split_once("::").ok_or_else(|| err("missing '::'"))?;
        let mut parts = head.split_whitespace();
        let (_item, id) = match (parts.next(), parts.next()) {
            (Some(item), Some(id)) => (item, id),
            _ => return Err(err("expected '<item> <id>' before '::'")),
        };
        let mut words = Vec::new();
        for entry in subs.split(';') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            let word = match entry.rsplit_once(char::is_whitespace) {
                Some((w, count)) if count.parse::<u32>().is_ok() => w.trim(),
                _ => entry,
            };
            words.push(word.to_string());
        }
        out.insert(id.to_string(), words);
    }
    Ok(out)
}

fn load_lexsub(path: &Path) -> Result<Vec<Result<DatasetRecord, DataError>>, DataError> {
    let xml = read(path)?;
    let gold_file = gold_path(path);
    let gold = if gold_file.exists() {
        parse_gold(&gold_file)?
    } else {
        HashMap::new()
    };
    let instance = Regex::new(r#"(?s)<instance\s+id="([^"]+)"\s*>\s*<context>(.*?)</context>"#).expect("valid regex");
    let head = Regex::new(r"(?s)<head>(.*?)</head>").expect("valid regex");
    let tag = Regex::new(r"<[^>]*>").expect("valid regex");
    let pstr = path.display().to_string();
    let mut out = Vec::new();
    for cap in instance.captures_iter(&xml) {
        let whole = cap.get(0).expect("match");
        let line = line_of(&xml, whole.start());
        let id = cap[1].to_string();
        let context = &cap[2];
        let record = (|| -> Result<DatasetRecord, String> {
            let h = head
                .captures(context)
                .ok_or_else(|| format!("instance {id:?} has no <head>"))?;
            let hm = h.get(0).expect("match");
            let clean = |s: &str| unescape_xml(&tag.replace_all(s, ""));
            let before = clean(&context[..hm.start()]);
            let target = clean(&h[1]).trim().to_string();
            let after = clean(&context[hm.end()..]);
            let before_trim = before.trim_start();
            let text = format!("{before_trim}{target}{after}");
            let text = text.trim_end().to_string();
            let offset = before_trim.len();
            let sentence = tokenize(&text).map_err(|e| format!("instance {id:?}: {e}"))?;
            let pos = sentence
                .spans()
                .iter()
                .position(|&(s, _)| s == offset)
                .ok_or_else(|| format!("instance {id:?}: head does not start a token"))?;
            let suggestions = gold.get(&id).cloned().unwrap_or_default();
            CanonicalRecord {
                id: id.clone(),
                text,
                annotations: vec![CanonicalAnnotation { pos, suggestions }],
            }
            .into_record()
        })();
        out.push(record.map_err(|message| DataError::Parse {
            path: pstr.clone(),
            line,
            message,
        }));
    }
    Ok(out)
}

#[derive(Deserialize)]
struct XsumLine {
    id: serde_json::Value,
    document: String,
}

/// Splits on newlines and on `.`, `!`, `?` followed by whitespace.
pub fn split_sentences(document: &str) -> Vec<String> {
    let mut out = Vec::new();
    for para in document.lines() {
        let mut start = 0;
        let chars: Vec<(usize, char)> = para.char_indices().collect();
        for (i, &(b, c)) in chars.iter().enumerate() {
            if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_some_and(|&(_, n)| n.is_whitespace()) {
                let end = b + c.len_utf8();
                let s = para[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
        }
        let s = para[start..].trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    }
    out
}

fn load_xsum(path: &Path) -> Result<Vec<Result<DatasetRecord, DataError>>, DataError> {
    let text = read(path)?;
    let pstr = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: XsumLine = match serde_json::from_str(line) {
            Ok(p) => p,
            Err(e) => {
                out.push(Err(DataError::Parse {
                    path: pstr.clone(),
                    line: i + 1,
                    message: e.to_string(),
                }));
                continue;
            }
        };
        let doc_id = match parsed.id {
            serde_json::Value::String(s) => s,
            other => other.to_string(),
        };
        for (j, sent) in split_sentences(&parsed.document).into_iter().enumerate() {
            out.push(
                CanonicalRecord {
                    id: format!("{doc_id}-{j}"),
                    text: sent,
                    annotations: Vec::new(),
                }
                .into_record()
                .map_err(|message| DataError::Parse {
                    path: pstr.clone(),
                    line: i + 1,
                    message,
                }),
            );
        }
    }
    Ok(out)
}

/// Uniform sample without replacement, clamped to the corpus size.
pub fn sample_corpus(records: &[DatasetRecord], n: usize, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records
        .choose_multiple(&mut rng, n.min(records.len()))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const CANONICAL: &str = concat!(
        r#"{"id":"s1","text":"The critical role of law.","annotations":[{"pos":1,"suggestions":["crucial","important"]}]}"#,
        "\n",
        r#"{"id":"s2","text":"He argues that houses exist.","annotations":[]}"#,
        "\n",
        r#"{"id":"s3","text":"Resolve disputes quickly.","annotations":[{"pos":0,"suggestions":["settle"]},{"pos":2,"suggestions":[]}]}"#,
        "\n"
    );

    #[test]
    fn empty_file_is_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.jsonl", "");
        assert_eq!(load_all(&p, DatasetFormat::Sws).unwrap().len(), 0);
    }

    #[test]
    fn canonical_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.jsonl", CANONICAL);
        let recs = load_all(&p, DatasetFormat::Sws).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(write_canonical(&recs), CANONICAL);
        assert_eq!(recs[0].suggestions_at(1).len(), 2);
    }

    #[test]
    fn out_of_range_position_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "bad.jsonl",
            "{\"id\":\"ok\",\"text\":\"a b\"}\n{\"id\":\"bad7\",\"text\":\"a b\",\"annotations\":[{\"pos\":9,\"suggestions\":[\"x\"]}]}\n",
        );
        let mut it = load(&p, DatasetFormat::Sws).unwrap();
        assert!(it.next().unwrap().is_ok());
        match it.next().unwrap() {
            Err(DataError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("bad7"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn original_token_removed_from_suggestions() {
        let r = CanonicalRecord {
            id: "x".into(),
            text: "a bright idea".into(),
            annotations: vec![CanonicalAnnotation {
                pos: 1,
                suggestions: vec!["Bright".into(), "clever".into()],
            }],
        }
        .into_record()
        .unwrap();
        assert_eq!(r.suggestions_at(1), ["clever".to_string()].into());
    }

    #[test]
    fn lexsub_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let xml = write(
            dir.path(),
            "lst.xml",
            r#"<corpus lang="english">
<lexelt item="bright.a">
<instance id="1">
<context>The sun was <head>bright</head> &amp; hot today .</context>
</instance>
<instance id="2">
<context>She is a <head>bright</head> student .</context>
</instance>
</lexelt>
</corpus>
"#,
        );
        write(
            dir.path(),
            "lst.gold",
            "bright.a 1 :: shining 3;brilliant 2;\nbright.a 2 :: intelligent 3;clever 2;smart 1;\n",
        );
        let recs = load_all(&xml, DatasetFormat::Ls07).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].sentence.text(), "The sun was bright & hot today .");
        assert_eq!(recs[0].annotations[0].target_position, 3);
        assert_eq!(recs[1].sentence.token(3), Some("bright"));
        assert_eq!(
            recs[1].suggestions_at(3),
            ["clever", "intelligent", "smart"].iter().map(|s| s.to_string()).collect()
        );
        assert_eq!(load_all(&xml, DatasetFormat::Ls14).unwrap(), recs);
    }

    #[test]
    fn xsum_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "x.jsonl",
            "{\"id\": \"3452\", \"document\": \"The storm hit the coast. Roads were closed!\\nPower returned later.\", \"summary\": \"s\"}\n",
        );
        let recs = load_all(&p, DatasetFormat::Xsum).unwrap();
        let ids: Vec<&str> = recs.iter().map(|r| r.sentence_id.as_str()).collect();
        assert_eq!(ids, ["3452-0", "3452-1", "3452-2"]);
        assert!(recs.iter().all(|r| r.annotations.is_empty()));
        assert_eq!(recs[1].sentence.text(), "Roads were closed!");
    }

    #[test]
    fn unknown_format() {
        assert!(matches!("ls99".parse::<DatasetFormat>(), Err(DataError::UnknownFormat(_))));
        assert_eq!("ls07".parse::<DatasetFormat>().unwrap(), DatasetFormat::Ls07);
    }

    #[test]
    fn loading_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "c.jsonl", CANONICAL);
        assert_eq!(load_all(&p, DatasetFormat::Sws).unwrap(), load_all(&p, DatasetFormat::Sws).unwrap());
    }

    fn corpus(n: usize) -> Vec<DatasetRecord> {
        (0..n)
            .map(|i| {
                CanonicalRecord {
                    id: format!("r{i}"),
                    text: format!("word{i} here"),
                    annotations: vec![],
                }
                .into_record()
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn sampling_clamps_and_is_deterministic() {
        let c = corpus(5);
        let all = sample_corpus(&c, 10, 1);
        assert_eq!(all.len(), 5);
        let mut ids: Vec<_> = all.iter().map(|r| r.sentence_id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["r0", "r1", "r2", "r3", "r4"]);
        assert_eq!(sample_corpus(&c, 3, 9), sample_corpus(&c, 3, 9));
    }

    #[test]
    fn single_draw_is_uniform() {
        let c = corpus(5);
        let mut counts = [0usize; 5];
        let trials = 10_000;
        for seed in 0..trials {
            let pick = &sample_corpus(&c, 1, seed as u64)[0];
            let i: usize = pick.sentence_id[1..].parse().unwrap();
            counts[i] += 1;
        }
        let expected = trials as f64 / 5.0;
        let sd = (trials as f64 * 0.2 * 0.8).sqrt();
        for &k in &counts {
            assert!((k as f64 - expected).abs() < 3.0 * sd, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&k| (k as f64 - expected).powi(2) / expected).sum();
        // chi-square with 4 dof, 0.999 quantile
        assert!(chi2 < 18.47, "chi2 = {chi2}");
    }
}
