//! Deterministic scripted backend.
//!
//! Each call consumes the first not-yet-used script entry whose matcher
//! accepts the request. Nothing touches the network.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, Completion, CompletionRequest, LlmError, PurposeTag, TranscriptRecord};
use crate::textbudget::TokenCounter;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Matcher {
    Any,
    Purpose(PurposeTag),
    /// Substring of the concatenated message contents.
    Contains(String),
    PurposeContains(PurposeTag, String),
    /// Exact request digest, used for transcript replay.
    Digest(String),
}

impl Matcher {
    fn accepts(&self, req: &CompletionRequest, prompt: &str) -> bool {
        match self {
            Matcher::Any => true,
            Matcher::Purpose(p) => req.purpose == *p,
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::PurposeContains(p, s) => req.purpose == *p && prompt.contains(s.as_str()),
            Matcher::Digest(d) => req.digest() == *d,
        }
    }
}

/// Script file entry: `{"purpose": "...", "contains": "...", "reply": "..."}`,
/// with `purpose` and `contains` both optional.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<PurposeTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub reply: String,
}

impl ScriptEntry {
    pub fn any(reply: impl Into<String>) -> Self {
        ScriptEntry {
            purpose: None,
            contains: None,
            digest: None,
            reply: reply.into(),
        }
    }

    pub fn purpose(purpose: PurposeTag, reply: impl Into<String>) -> Self {
        ScriptEntry {
            purpose: Some(purpose),
            ..ScriptEntry::any(reply)
        }
    }

    pub fn containing(
        purpose: PurposeTag,
        needle: impl Into<String>,
        reply: impl Into<String>,
    ) -> Self {
        ScriptEntry {
            purpose: Some(purpose),
            contains: Some(needle.into()),
            ..ScriptEntry::any(reply)
        }
    }

    pub fn matcher(&self) -> Matcher {
        if let Some(d) = &self.digest {
            return Matcher::Digest(d.clone());
        }
        match (&self.purpose, &self.contains) {
            (None, None) => Matcher::Any,
            (Some(p), None) => Matcher::Purpose(*p),
            (None, Some(s)) => Matcher::Contains(s.clone()),
            (Some(p), Some(s)) => Matcher::PurposeContains(*p, s.clone()),
        }
    }
}

#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<(Matcher, String)>,
    consumed: Mutex<Vec<bool>>,
    counter: TokenCounter,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self::with_matchers(entries.into_iter().map(|e| (e.matcher(), e.reply)).collect())
    }

    pub fn with_matchers(entries: Vec<(Matcher, String)>) -> Self {
        let n = entries.len();
        ScriptedBackend {
            entries,
            consumed: Mutex::new(vec![false; n]),
            counter: TokenCounter::default(),
        }
    }

    pub fn with_counter(mut self, counter: TokenCounter) -> Self {
        self.counter = counter;
        self
    }

    /// Parses a script file: a JSON array of [`ScriptEntry`].
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(text)
            .map_err(|e| LlmError::Config(format!("invalid mock script: {e}")))?;
        Ok(Self::new(entries))
    }

    /// A backend that answers exactly the recorded requests with the
    /// recorded replies.
    pub fn replay(records: &[TranscriptRecord]) -> Self {
        Self::with_matchers(
            records
                .iter()
                .map(|r| (Matcher::Digest(r.request_digest.clone()), r.reply.clone()))
                .collect(),
        )
    }

    pub fn remaining(&self) -> usize {
        self.consumed
            .lock()
            .expect("script lock")
            .iter()
            .filter(|c| !**c)
            .count()
    }

    pub fn reset(&self) {
        self.consumed.lock().expect("script lock").fill(false);
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn send(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let prompt = request.prompt_text();
        let mut consumed = self.consumed.lock().expect("script lock");
        if consumed.iter().all(|c| *c) {
            return Err(LlmError::ScriptUnderrun {
                purpose: request.purpose,
            });
        }
        let idx = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, (m, _))| !consumed[*i] && m.accepts(request, &prompt))
            .map(|(i, _)| i)
            .ok_or(LlmError::ScriptMismatch {
                purpose: request.purpose,
            })?;
        consumed[idx] = true;
        let text = self.entries[idx].1.clone();
        Ok(Completion {
            prompt_tokens: self.counter.count(&prompt) as u64,
            output_tokens: self.counter.count(&text) as u64,
            text,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, ChatMessage, Transcript};

    fn req(purpose: PurposeTag, user: &str) -> CompletionRequest {
        CompletionRequest::new(purpose, vec![ChatMessage::system("sys"), ChatMessage::user(user)])
    }

    #[test]
    fn purpose_matching() {
        let b = ScriptedBackend::new(vec![ScriptEntry::purpose(
            PurposeTag::GenQuestion,
            "Question: Is work mail important?",
        )]);
        let err = b.send(&req(PurposeTag::Predict, "x")).unwrap_err();
        assert!(matches!(err, LlmError::ScriptMismatch { purpose: PurposeTag::Predict }));
        assert!(err.to_string().contains("predict"));
        let c = b.send(&req(PurposeTag::GenQuestion, "x")).unwrap();
        assert_eq!(c.text, "Question: Is work mail important?");
        assert!(matches!(
            b.send(&req(PurposeTag::GenQuestion, "x")),
            Err(LlmError::ScriptUnderrun { .. })
        ));
    }

    #[test]
    fn consumes_first_matching_entry() {
        let b = ScriptedBackend::new(vec![
            ScriptEntry::containing(PurposeTag::Predict, "beta", "B"),
            ScriptEntry::purpose(PurposeTag::Predict, "A"),
        ]);
        assert_eq!(b.send(&req(PurposeTag::Predict, "alpha")).unwrap().text, "A");
        assert_eq!(b.send(&req(PurposeTag::Predict, "beta")).unwrap().text, "B");
        assert_eq!(b.remaining(), 0);
    }

    #[test]
    fn token_accounting_uses_concatenated_contents() {
        let b = ScriptedBackend::new(vec![ScriptEntry::any("abcd")]);
        let r = req(PurposeTag::Predict, "12345");
        let c = b.send(&r).unwrap();
        // "sys" + "12345" = 8 chars
        assert_eq!(c.prompt_tokens, 2);
        assert_eq!(c.output_tokens, 1);
    }

    #[test]
    fn replay_reproduces_completions() {
        let b = ScriptedBackend::new(vec![ScriptEntry::any("r1"), ScriptEntry::any("r2")]);
        let mut t = Transcript::default();
        complete(&b, &mut t, req(PurposeTag::Update, "one")).unwrap();
        complete(&b, &mut t, req(PurposeTag::Predict, "two")).unwrap();

        let replay = ScriptedBackend::replay(&t.records());
        let mut t2 = Transcript::default();
        for e in t.entries() {
            complete(&replay, &mut t2, e.request.clone()).unwrap();
        }
        let a: Vec<_> = t.entries().iter().map(|e| &e.completion).collect();
        let b: Vec<_> = t2.entries().iter().map(|e| &e.completion).collect();
        assert_eq!(a, b);
        assert_eq!(t.to_jsonl(), t2.to_jsonl());
    }

    #[test]
    fn script_file_parses() {
        let json = r#"[{"purpose":"predict","reply":"Class: A"},{"contains":"x","reply":"y"}]"#;
        let b = ScriptedBackend::from_json(json).unwrap();
        assert_eq!(b.remaining(), 2);
        assert!(ScriptedBackend::from_json("{").is_err());
    }
}
