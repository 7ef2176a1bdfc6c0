//! Chained, purpose-aware summarization for inputs over the threshold.
//!
//! The input is chunked, the first chunk is summarized on its own, and each
//! later chunk is summarized with the running summary and the classifier
//! purpose in the prompt. Each part's summary is appended to the running
//! summary and asked to be about as long as the average part so far.

use serde::{Deserialize, Serialize};

use crate::llm::{self, Backend, LlmError, PurposeTag, Transcript};
use crate::promptkit::{self, ClassSpec, ClassifierSpec, RenderContext};
use crate::textbudget::{self, Chunk, CutAt, TokenCounter};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizeConfig {
    /// Inputs above this many tokens are summarized.
    pub threshold: usize,
    pub chunk_tokens: usize,
    /// Floor on the requested length of a part summary.
    pub min_part_words: usize,
    /// Multiplier on the average words per summarized part.
    pub part_length_scale: f64,
    pub temperature: f64,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig {
            threshold: 1024,
            chunk_tokens: textbudget::DEFAULT_CHUNK_TOKENS,
            min_part_words: 40,
            part_length_scale: 1.0,
            temperature: PurposeTag::SummarizeChunk.default_temperature(),
        }
    }
}

pub const MIN_THRESHOLD: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryState {
    pub parts_done: usize,
    pub summary_so_far: String,
    pub purpose: String,
    pub class_names: Vec<String>,
}

impl SummaryState {
    pub fn new(spec: &ClassifierSpec) -> Self {
        SummaryState {
            parts_done: 0,
            summary_so_far: String::new(),
            purpose: spec.purpose.clone(),
            class_names: spec.classes.iter().map(|c| c.name.clone()).collect(),
        }
    }

    fn spec(&self) -> ClassifierSpec {
        ClassifierSpec::new(
            self.purpose.clone(),
            self.class_names
                .iter()
                .map(|n| ClassSpec::new(n.clone(), ""))
                .collect(),
        )
    }

    /// Words requested for the next part: the running summary's average
    /// words per part, scaled, with a floor. `None` for the first part.
    pub fn target_words(&self, cfg: &SummarizeConfig) -> Option<usize> {
        if self.parts_done == 0 {
            return None;
        }
        let words = self.summary_so_far.split_whitespace().count() as f64;
        let per_part = words / self.parts_done as f64 * cfg.part_length_scale;
        Some((per_part.round() as usize).max(cfg.min_part_words))
    }

    fn absorb(&mut self, reply: &str) {
        if self.parts_done > 0 && !self.summary_so_far.is_empty() {
            self.summary_so_far.push_str("\n\n");
        }
        self.summary_so_far.push_str(reply);
        self.parts_done += 1;
    }
}

/// Summarizes one chunk given the state so far. Returns the reply text.
pub fn request_chunk_summary(
    state: &SummaryState,
    chunk: &Chunk,
    cfg: &SummarizeConfig,
    backend: &dyn Backend,
    transcript: &mut Transcript,
) -> Result<String, LlmError> {
    let spec = state.spec();
    let ctx = RenderContext {
        spec: Some(&spec),
        text: Some(&chunk.text),
        part_index: Some(state.parts_done + 1),
        summary_so_far: Some(&state.summary_so_far),
        target_words: state.target_words(cfg),
        ..Default::default()
    };
    let mut bundle = promptkit::render(PurposeTag::SummarizeChunk, &ctx)
        .expect("summarization template placeholders are always supplied");
    bundle.temperature = cfg.temperature;
    let completion = llm::complete(backend, transcript, bundle.request())?;
    Ok(completion.text.trim().to_string())
}

/// Returns `text` unchanged when it fits the threshold, otherwise a chained
/// summary of at most `cfg.threshold` tokens.
///
/// If the chained summary is still too long it is summarized once more with
/// an explicit word target, and as a last resort truncated at a sentence end.
pub fn summarize(
    text: &str,
    spec: &ClassifierSpec,
    cfg: &SummarizeConfig,
    counter: &TokenCounter,
    backend: &dyn Backend,
    transcript: &mut Transcript,
) -> Result<String, LlmError> {
    assert!(cfg.threshold >= MIN_THRESHOLD, "summarize threshold below {MIN_THRESHOLD}");
    assert!(cfg.chunk_tokens >= MIN_THRESHOLD, "chunk budget below {MIN_THRESHOLD}");
    if text.is_empty() || counter.count(text) <= cfg.threshold {
        return Ok(text.to_string());
    }

    let mut state = SummaryState::new(spec);
    for chunk in textbudget::split_chunks(text, cfg.chunk_tokens, counter) {
        let reply = request_chunk_summary(&state, &chunk, cfg, backend, transcript)?;
        state.absorb(&reply);
    }
    let mut summary = state.summary_so_far;
    if counter.count(&summary) <= cfg.threshold {
        return Ok(summary);
    }

    // Tightened pass over the whole summary as a single part.
    let words = (cfg.threshold * 3 / 5).max(cfg.min_part_words);
    let tighten = SummaryState {
        parts_done: 0,
        summary_so_far: String::new(),
        purpose: spec.purpose.clone(),
        class_names: spec.class_names().iter().map(|s| s.to_string()).collect(),
    };
    let spec_view = tighten.spec();
    let ctx = RenderContext {
        spec: Some(&spec_view),
        text: Some(&summary),
        part_index: Some(1),
        summary_so_far: Some(""),
        target_words: Some(words),
        ..Default::default()
    };
    let mut bundle = promptkit::render(PurposeTag::SummarizeChunk, &ctx)
        .expect("summarization template placeholders are always supplied");
    bundle.temperature = cfg.temperature;
    let reply = llm::complete(backend, transcript, bundle.request())?;
    summary = reply.text.trim().to_string();
    if counter.count(&summary) > cfg.threshold {
        summary =
            textbudget::truncate_to_tokens(&summary, cfg.threshold, counter, CutAt::Sentence)
                .to_string();
    }
    Ok(summary)
}
