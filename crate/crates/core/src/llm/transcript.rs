use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Completion, CompletionRequest, PurposeTag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub request: CompletionRequest,
    pub completion: Completion,
    /// Wall-clock time of the call, milliseconds since the Unix epoch.
    pub timestamp_ms: i64,
}

/// Append-only log of every model call made by one session or run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

/// The persisted, line-delimited form of one transcript entry. Timestamps
/// are left out so identical call sequences persist identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub seq: usize,
    pub purpose: PurposeTag,
    pub request_digest: String,
    pub reply: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

impl Transcript {
    pub(crate) fn record(&mut self, request: CompletionRequest, completion: Completion) {
        self.entries.push(TranscriptEntry {
            request,
            completion,
            timestamp_ms: chrono::Utc::now().timestamp_millis(),
        });
    }

    /// Appends the entries of another transcript, preserving their order.
    pub fn absorb(&mut self, other: Transcript) {
        self.entries.extend(other.entries);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.completion.prompt_tokens).sum()
    }

    pub fn output_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.completion.output_tokens).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens() + self.output_tokens()
    }

    pub fn count(&self, purpose: PurposeTag) -> usize {
        self.entries
            .iter()
            .filter(|e| e.request.purpose == purpose)
            .count()
    }

    pub fn counts_by_purpose(&self) -> BTreeMap<PurposeTag, usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry(e.request.purpose).or_insert(0) += 1;
        }
        counts
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.entries
            .iter()
            .enumerate()
            .map(|(seq, e)| TranscriptRecord {
                seq,
                purpose: e.request.purpose,
                request_digest: e.request.digest(),
                reply: e.completion.text.clone(),
                prompt_tokens: e.completion.prompt_tokens,
                output_tokens: e.completion.output_tokens,
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<TranscriptRecord>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }

    /// SHA-256 of the persisted form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}
