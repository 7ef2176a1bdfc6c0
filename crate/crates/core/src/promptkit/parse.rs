use serde::{Deserialize, Serialize};

use super::{ClassifierSpec, PromptError};
use crate::llm::PurposeTag;

/// Labels a reply of each kind must contain, in the order the prompt asks
/// for them. Summaries are free text.
pub fn schema(kind: PurposeTag) -> &'static [&'static str] {
    match kind {
        PurposeTag::GenQuestion => &["Thoughts", "Question", "Explanation"],
        PurposeTag::InteractivePredict | PurposeTag::Predict | PurposeTag::Baseline => {
            &["Thoughts", "Class", "Reflection"]
        }
        PurposeTag::Update => &["Thoughts", "Description", "Reason"],
        PurposeTag::SummarizeChunk => &[],
    }
}

/// Labeled sections of a reply, in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FieldMap(Vec<(String, String)>);

impl FieldMap {
    pub fn new(fields: Vec<(String, String)>) -> Self {
        FieldMap(fields)
    }

    pub fn get(&self, label: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(l, _)| l.eq_ignore_ascii_case(label))
            .map(|(_, v)| v.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|(l, _)| l.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(l, v)| (l.as_str(), v.as_str()))
    }
}

/// Emits `Label: value` lines in schema order.
pub fn synthesize(fields: &FieldMap) -> String {
    fields
        .iter()
        .map(|(l, v)| format!("{l}: {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// If `line` starts with one of `labels` followed by a colon, returns the
/// label index and the remainder of the line.
fn label_at<'a>(line: &'a str, labels: &[&str]) -> Option<(usize, &'a str)> {
    let body = line.trim_start().trim_start_matches(['*', '#', '-', '_']).trim_start();
    for (i, label) in labels.iter().enumerate() {
        let Some(head) = body.get(..label.len()) else {
            continue;
        };
        if !head.eq_ignore_ascii_case(label) {
            continue;
        }
        let rest = body[label.len()..].trim_start_matches(['*', '_']).trim_start();
        if let Some(value) = rest.strip_prefix(':') {
            return Some((i, value.trim_start_matches(['*', '_'])));
        }
    }
    None
}

/// Splits a reply into the schema's labeled fields. Labels are matched
/// case-insensitively at line starts; a value runs until the next label
/// line. Text before the first label is ignored, and a repeated label keeps
/// its first value.
pub fn parse(kind: PurposeTag, reply: &str) -> Result<FieldMap, PromptError> {
    let labels = schema(kind);
    if labels.is_empty() {
        return Ok(FieldMap(vec![("Summary".to_string(), reply.trim().to_string())]));
    }
    let mut values: Vec<Option<String>> = vec![None; labels.len()];
    let mut current: Option<(usize, Vec<&str>)> = None;

    let mut flush = |current: &mut Option<(usize, Vec<&str>)>| {
        if let Some((idx, lines)) = current.take() {
            if values[idx].is_none() {
                values[idx] = Some(lines.join("\n").trim().to_string());
            }
        }
    };

    for line in reply.lines() {
        if let Some((idx, first)) = label_at(line, labels) {
            flush(&mut current);
            current = Some((idx, vec![first]));
        } else if let Some((_, lines)) = current.as_mut() {
            lines.push(line);
        }
    }
    flush(&mut current);

    let missing: Vec<String> = labels
        .iter()
        .zip(&values)
        .filter(|(_, v)| v.is_none())
        .map(|(l, _)| l.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(PromptError::Parse { kind, missing });
    }
    Ok(FieldMap(
        labels
            .iter()
            .zip(values)
            .map(|(l, v)| (l.to_string(), v.expect("checked")))
            .collect(),
    ))
}

const STRIP: &[char] = &[
    '"', '\'', '`', '.', ',', ';', ':', '!', '?', '*', '_', '(', ')', '[', ']', '<', '>', '“', '”',
    '‘', '’',
];

fn whole_word_hits(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut hits = Vec::new();
    if needle.is_empty() {
        return hits;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            hits.push((start, end));
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    hits
}

/// Resolves a model's class answer to a class of `spec`.
///
/// First an exact, case-insensitive comparison after stripping quotes and
/// punctuation; otherwise the class whose name is the only one to occur as a
/// whole word. An occurrence lying inside a longer class name's occurrence
/// ("Important" inside "Not Important") does not count separately.
pub fn match_class<'s>(raw: &str, spec: &'s ClassifierSpec) -> Option<&'s str> {
    let cleaned = raw.trim().trim_matches(STRIP).trim().to_lowercase();
    if let Some(c) = spec
        .classes
        .iter()
        .find(|c| c.name.trim().to_lowercase() == cleaned)
    {
        return Some(&c.name);
    }

    let hay = raw.to_lowercase();
    let hits: Vec<(usize, Vec<(usize, usize)>)> = spec
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (i, whole_word_hits(&hay, &c.name.trim().to_lowercase())))
        .filter(|(_, h)| !h.is_empty())
        .collect();
    let standalone: Vec<usize> = hits
        .iter()
        .filter(|(i, spans)| {
            spans.iter().any(|&(s, e)| {
                !hits.iter().any(|(j, other)| {
                    j != i
                        && other
                            .iter()
                            .any(|&(os, oe)| os <= s && e <= oe && (oe - os) > (e - s))
                })
            })
        })
        .map(|(i, _)| *i)
        .collect();
    match standalone.as_slice() {
        [only] => Some(&spec.classes[*only].name),
        _ => None,
    }
}
