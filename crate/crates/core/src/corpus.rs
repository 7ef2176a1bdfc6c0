//! Dataset ingestion: line-delimited JSON records, HTML-to-text
//! normalization and seeded splits.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// URLs longer than this are dropped from HTML-derived text.
pub const MAX_URL_CHARS: usize = 80;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("split counts {requested} exceed dataset size {available}")]
    SplitTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TextKind {
    #[default]
    Plain,
    Html,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Dev => "dev",
            SplitTag::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    #[serde(flatten)]
    pub sample: Sample,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl LabeledSample {
    pub fn new(sample: Sample, label: impl Into<String>) -> Self {
        LabeledSample {
            sample,
            label: Some(label.into()),
        }
    }
}

/// On-disk record shape.
#[derive(Debug, Deserialize, Serialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default)]
    kind: TextKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    split: SplitTag,
    samples: Vec<LabeledSample>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids.
    pub fn new(split: SplitTag, samples: Vec<LabeledSample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            if !seen.insert(s.sample.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: s.sample.id.clone(),
                });
            }
        }
        Ok(Dataset { split, samples })
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledSample> {
        self.samples.iter().find(|s| s.sample.id == id)
    }
}

/// Reads a line-delimited JSON dataset. Blank lines are skipped; every
/// record's text is normalized according to its `kind`.
pub fn load_dataset(path: impl AsRef<Path>, split: SplitTag) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(BufReader::new(file), split)
}

pub fn parse_dataset(reader: impl BufRead, split: SplitTag) -> Result<Dataset, CorpusError> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Line {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            line: lineno,
            message: e.to_string(),
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: lineno,
                id: raw.id,
            });
        }
        let text = normalize_text(&raw.text, raw.kind);
        if text.trim().is_empty() {
            return Err(CorpusError::Line {
                line: lineno,
                message: format!("sample {:?} has no text after normalization", raw.id),
            });
        }
        samples.push(LabeledSample {
            sample: Sample {
                id: raw.id,
                text,
                meta: raw.meta,
            },
            label: raw.label,
        });
    }
    Ok(Dataset { split, samples })
}

/// Writes a dataset in the same line-delimited format `load_dataset` reads.
/// Texts are already normalized, so records are written as plain.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = fs::File::create(path).map_err(io_err)?;
    for s in &dataset.samples {
        let raw = RawRecord {
            id: s.sample.id.clone(),
            text: s.sample.text.clone(),
            label: s.label.clone(),
            kind: TextKind::Plain,
            meta: s.sample.meta.clone(),
        };
        let line = serde_json::to_string(&raw).expect("record serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

/// Seeded shuffle, then consecutive partition into train/dev/test.
pub fn split_dataset(
    dataset: &Dataset,
    seed: u64,
    counts: (usize, usize, usize),
) -> Result<(Dataset, Dataset, Dataset), CorpusError> {
    let (n_train, n_dev, n_test) = counts;
    let requested = n_train + n_dev + n_test;
    if requested > dataset.len() {
        return Err(CorpusError::SplitTooLarge {
            requested,
            available: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>, split| Dataset {
        split,
        samples: order[range]
            .iter()
            .map(|&i| dataset.samples[i].clone())
            .collect(),
    };
    Ok((
        take(0..n_train, SplitTag::Train),
        take(n_train..n_train + n_dev, SplitTag::Dev),
        take(n_train + n_dev..requested, SplitTag::Test),
    ))
}

pub fn normalize_text(raw: &str, kind: TextKind) -> String {
    match kind {
        TextKind::Plain => normalize_line_endings(raw),
        TextKind::Html => normalize_html(raw),
    }
}

fn normalize_line_endings(raw: &str) -> String {
    raw.replace("\r\n", "\n").replace('\r', "\n")
}

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "center", "dd", "div", "dl", "dt",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5", "h6",
    "head", "header", "hr", "html", "li", "main", "nav", "ol", "p", "pre", "section", "table",
    "tbody", "td", "tfoot", "th", "thead", "title", "tr", "ul",
];

fn normalize_html(raw: &str) -> String {
    let stripped = strip_tags(raw);
    let decoded = decode_to_fixpoint(&stripped);
    let collapsed = collapse_whitespace(&decoded);
    drop_long_urls(&collapsed)
}

/// Removes markup. Block elements become blank lines, `<br>` a newline;
/// script/style bodies and comments are dropped.
fn strip_tags(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find('<') {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        if let Some(body) = after.strip_prefix("!--") {
            rest = match body.find("-->") {
                Some(end) => &body[end + 3..],
                None => "",
            };
            continue;
        }
        let starts_tag = after
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || matches!(c, '/' | '!' | '?'));
        let close = after.find('>');
        match (starts_tag, close) {
            (true, Some(end)) => {
                let inner = &after[..end];
                rest = &after[end + 1..];
                let closing = inner.starts_with('/');
                let name: String = inner
                    .trim_start_matches('/')
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric())
                    .collect::<String>()
                    .to_ascii_lowercase();
                if !closing && (name == "script" || name == "style") {
                    let needle = format!("</{name}");
                    let lower = rest.to_ascii_lowercase();
                    rest = match lower.find(&needle) {
                        Some(i) => {
                            let tail = &rest[i..];
                            match tail.find('>') {
                                Some(j) => &tail[j + 1..],
                                None => "",
                            }
                        }
                        None => "",
                    };
                    out.push_str("\n\n");
                } else if name == "br" {
                    out.push('\n');
                } else if BLOCK_TAGS.contains(&name.as_str()) {
                    out.push_str("\n\n");
                }
            }
            // Not markup: the stray bracket is dropped, the text kept.
            _ => rest = after,
        }
    }
    out.push_str(rest);
    out
}

fn decode_to_fixpoint(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let decoded = html_escape::decode_html_entities(&current);
        let next: String = decoded.chars().filter(|c| *c != '<' && *c != '>').collect();
        if next == current {
            return next;
        }
        current = next;
    }
}

/// Whitespace runs with two or more newlines become a blank line, a single
/// newline stays a newline, anything else a single space.
fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut newlines = 0usize;
    let mut space = false;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if ch == '\n' {
                newlines += 1;
            }
            space = true;
            continue;
        }
        if !out.is_empty() {
            if newlines >= 2 {
                out.push_str("\n\n");
            } else if newlines == 1 {
                out.push('\n');
            } else if space {
                out.push(' ');
            }
        }
        newlines = 0;
        space = false;
        out.push(ch);
    }
    out
}

fn drop_long_urls(text: &str) -> String {
    let is_long_url = |w: &str| {
        (w.starts_with("http://") || w.starts_with("https://") || w.starts_with("www."))
            && w.chars().count() > MAX_URL_CHARS
    };
    if !text.split_whitespace().any(is_long_url) {
        return text.to_string();
    }
    let mut rebuilt = String::with_capacity(text.len());
    for (i, line) in text.split('\n').enumerate() {
        if i > 0 {
            rebuilt.push('\n');
        }
        let kept: Vec<&str> = line.split(' ').filter(|w| !is_long_url(w)).collect();
        rebuilt.push_str(&kept.join(" "));
    }
    collapse_whitespace(&rebuilt)
}
