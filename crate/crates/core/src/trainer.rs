//! The interactive training loop as an explicit state machine.
//!
//! For each sample the model asks `M` clarifying questions, then classifies
//! the sample using the answers. The user supplies the true class and an
//! explanation, and the model rewrites that class's description. Every
//! intermediate description set is kept in the session history.
//!
//! Operations only mutate the session after their model calls succeed, so a
//! failed call can simply be retried.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    ArtifactConfig, ClassifierArtifact, Demonstration, Provenance, ARTIFACT_SCHEMA_VERSION,
};
use crate::corpus::Sample;
use crate::llm::{Engine, LlmError, PurposeTag, Transcript};
use crate::promptkit::{
    self, match_class, CallError, ClassSpec, ClassifierSpec, PromptBundle, PromptError, QAItem,
    RenderContext,
};
use crate::summarizer::{self, SummarizeConfig};
use crate::textbudget;

pub const SESSION_SCHEMA_VERSION: u32 = 1;

/// Meta key holding a sample's text from before summarization.
pub const ORIGINAL_TEXT_META: &str = "original_text";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    State(String),
    #[error("samples not yet labeled: {}", .0.join(", "))]
    Unlabeled(Vec<String>),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl From<CallError> for TrainError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Llm(e) => TrainError::Llm(e),
            CallError::Prompt(e) => TrainError::Prompt(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub gen_question: f64,
    pub interactive_predict: f64,
    pub update: f64,
    pub summarize_chunk: f64,
    pub predict: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            gen_question: PurposeTag::GenQuestion.default_temperature(),
            interactive_predict: PurposeTag::InteractivePredict.default_temperature(),
            update: PurposeTag::Update.default_temperature(),
            summarize_chunk: PurposeTag::SummarizeChunk.default_temperature(),
            predict: PurposeTag::Predict.default_temperature(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Clarifying questions per sample (M).
    pub questions_per_sample: usize,
    /// Texts above this many tokens are summarized (K).
    pub summarize_threshold: usize,
    pub chunk_tokens: usize,
    pub temperatures: Temperatures,
}

pub const DEFAULT_CONTEXT_WINDOW: usize = 4096;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            questions_per_sample: 3,
            summarize_threshold: DEFAULT_CONTEXT_WINDOW / 4,
            chunk_tokens: textbudget::DEFAULT_CHUNK_TOKENS,
            temperatures: Temperatures::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.summarize_threshold < summarizer::MIN_THRESHOLD {
            return Err(TrainError::Validation(format!(
                "summarize_threshold must be at least {}",
                summarizer::MIN_THRESHOLD
            )));
        }
        if self.chunk_tokens < summarizer::MIN_THRESHOLD {
            return Err(TrainError::Validation(format!(
                "chunk_tokens must be at least {}",
                summarizer::MIN_THRESHOLD
            )));
        }
        let t = &self.temperatures;
        for (name, v) in [
            ("gen_question", t.gen_question),
            ("interactive_predict", t.interactive_predict),
            ("update", t.update),
            ("summarize_chunk", t.summarize_chunk),
            ("predict", t.predict),
        ] {
            if !(0.0..=2.0).contains(&v) {
                return Err(TrainError::Validation(format!(
                    "temperature for {name} must be within [0, 2], got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn summarize(&self) -> SummarizeConfig {
        SummarizeConfig {
            threshold: self.summarize_threshold,
            chunk_tokens: self.chunk_tokens,
            temperature: self.temperatures.summarize_chunk,
            ..SummarizeConfig::default()
        }
    }

    pub fn artifact_config(&self) -> ArtifactConfig {
        ArtifactConfig {
            summarize_threshold: self.summarize_threshold,
            chunk_tokens: self.chunk_tokens,
            predict_temperature: self.temperatures.predict,
            summarize_temperature: self.temperatures.summarize_chunk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Asking,
    Predicted,
    Labeled,
    Updated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedQuestion {
    pub question: String,
    /// Why the model asked.
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractivePrediction {
    /// `None` when the reply named no known class.
    pub class: Option<String>,
    /// The Class field as the model wrote it.
    pub raw_class: String,
    pub thoughts: String,
    /// Offered to the user as the draft explanation.
    pub reflection: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleState {
    pub sample: Sample,
    /// Answered questions, in order.
    pub qa: Vec<QAItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<GeneratedQuestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<InteractivePrediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_explanation: Option<String>,
    pub phase: Phase,
}

impl SampleState {
    fn new(sample: Sample) -> Self {
        SampleState {
            sample,
            qa: Vec::new(),
            pending: None,
            prediction: None,
            user_label: None,
            user_explanation: None,
            phase: Phase::Asking,
        }
    }
}

/// One entry of the description history. Entry 0 holds the initial spec;
/// entry i holds the spec after the update for sample i-1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryStep {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thoughts: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub spec: ClassifierSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub class: String,
    pub previous_description: String,
    pub description: String,
    pub thoughts: String,
    pub reason: String,
    /// Every class description after the update.
    pub descriptions: Vec<ClassSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSession {
    schema_version: u32,
    config: TrainConfig,
    spec: ClassifierSpec,
    history: Vec<HistoryStep>,
    states: Vec<SampleState>,
    cursor: usize,
    transcript: Transcript,
}

/// What a client needs to render a session, without the raw transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub config: TrainConfig,
    pub spec: ClassifierSpec,
    pub history: Vec<HistoryStep>,
    pub states: Vec<SampleState>,
    pub cursor: usize,
    pub complete: bool,
    pub calls: BTreeMap<PurposeTag, usize>,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

impl TrainingSession {
    /// Validates the inputs and summarizes over-threshold texts. The
    /// original text of a summarized sample is kept in its meta.
    pub fn start(
        spec0: ClassifierSpec,
        samples: Vec<Sample>,
        config: TrainConfig,
        engine: &Engine,
    ) -> Result<Self, TrainError> {
        spec0
            .validate()
            .map_err(|e| TrainError::Validation(e.to_string()))?;
        config.validate()?;
        if samples.is_empty() {
            return Err(TrainError::Validation("no training samples".into()));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(TrainError::Validation(format!("sample {:?} has empty text", s.id)));
            }
            if samples[..i].iter().any(|o| o.id == s.id) {
                return Err(TrainError::Validation(format!("duplicate sample id {:?}", s.id)));
            }
        }

        let mut transcript = Transcript::default();
        let summarize = config.summarize();
        let mut states = Vec::with_capacity(samples.len());
        for mut sample in samples {
            let text = summarizer::summarize(
                &sample.text,
                &spec0,
                &summarize,
                &engine.counter,
                engine.backend(),
                &mut transcript,
            )?;
            if text != sample.text {
                let original = std::mem::replace(&mut sample.text, text);
                sample.meta.insert(ORIGINAL_TEXT_META.into(), original);
            }
            states.push(SampleState::new(sample));
        }

        let mut session = TrainingSession {
            schema_version: SESSION_SCHEMA_VERSION,
            config,
            history: vec![HistoryStep {
                sample_id: None,
                updated_class: None,
                thoughts: None,
                reason: None,
                spec: spec0.clone(),
            }],
            spec: spec0,
            states,
            cursor: 0,
            transcript,
        };
        if session.config.questions_per_sample == 0 {
            session.predict_current(engine)?;
        }
        Ok(session)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Current class descriptions.
    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn history(&self) -> &[HistoryStep] {
        &self.history
    }

    /// The spec after `step` updates.
    pub fn spec_at(&self, step: usize) -> Option<&ClassifierSpec> {
        self.history.get(step).map(|h| &h.spec)
    }

    pub fn states(&self) -> &[SampleState] {
        &self.states
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn is_complete(&self) -> bool {
        self.cursor >= self.states.len()
    }

    /// Total questions the session will ask.
    pub fn expected_questions(&self) -> usize {
        self.states.len() * self.config.questions_per_sample
    }

    pub fn current(&self) -> Option<&SampleState> {
        self.states.get(self.cursor)
    }

    fn current_mut(&mut self) -> Result<&mut SampleState, TrainError> {
        let i = self.cursor;
        self.states
            .get_mut(i)
            .ok_or_else(|| TrainError::State("all samples are labeled".into()))
    }

    fn current_state(&self) -> Result<&SampleState, TrainError> {
        self.current()
            .ok_or_else(|| TrainError::State("all samples are labeled".into()))
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            config: self.config.clone(),
            spec: self.spec.clone(),
            history: self.history.clone(),
            states: self.states.clone(),
            cursor: self.cursor,
            complete: self.is_complete(),
            calls: self.transcript.counts_by_purpose(),
            prompt_tokens: self.transcript.prompt_tokens(),
            output_tokens: self.transcript.output_tokens(),
        }
    }

    fn render(&self, kind: PurposeTag, ctx: &RenderContext<'_>) -> Result<PromptBundle, TrainError> {
        let mut bundle = promptkit::render(kind, ctx)?;
        let t = &self.config.temperatures;
        bundle.temperature = match kind {
            PurposeTag::GenQuestion => t.gen_question,
            PurposeTag::InteractivePredict => t.interactive_predict,
            PurposeTag::Update => t.update,
            _ => bundle.temperature,
        };
        Ok(bundle)
    }

    /// Asks the model for the next clarifying question on the current
    /// sample. If a question is already waiting for an answer it is returned
    /// again without a model call.
    pub fn next_question(&mut self, engine: &Engine) -> Result<GeneratedQuestion, TrainError> {
        let m = self.config.questions_per_sample;
        let state = self.current_state()?;
        if state.phase != Phase::Asking {
            return Err(TrainError::State(format!(
                "sample {:?} is past the question stage",
                state.sample.id
            )));
        }
        if let Some(p) = &state.pending {
            return Ok(p.clone());
        }
        if state.qa.len() >= m {
            return Err(TrainError::State(format!(
                "all {m} questions for sample {:?} are answered",
                state.sample.id
            )));
        }
        let bundle = self.render(
            PurposeTag::GenQuestion,
            &RenderContext {
                spec: Some(&self.spec),
                text: Some(&state.sample.text),
                qa: &state.qa,
                ..Default::default()
            },
        )?;
        let reply = promptkit::call_structured(engine.backend(), &mut self.transcript, &bundle)?;
        let q = GeneratedQuestion {
            question: reply.fields.get("Question").unwrap_or_default().to_string(),
            explanation: reply.fields.get("Explanation").unwrap_or_default().to_string(),
        };
        self.current_mut()?.pending = Some(q.clone());
        Ok(q)
    }

    /// Records the answer to the pending question. After the M-th answer the
    /// model classifies the sample; if that call fails the answer is kept
    /// and [`predict_current`](Self::predict_current) can be retried.
    pub fn submit_answer(&mut self, answer: &str, engine: &Engine) -> Result<Phase, TrainError> {
        let answer = answer.trim();
        if answer.is_empty() {
            return Err(TrainError::Validation("answer is empty".into()));
        }
        let m = self.config.questions_per_sample;
        let state = self.current_mut()?;
        let pending = state
            .pending
            .take()
            .ok_or_else(|| TrainError::State("no question is waiting for an answer".into()))?;
        state.qa.push(QAItem {
            question: pending.question,
            answer: answer.to_string(),
            model_explanation: pending.explanation,
        });
        if state.qa.len() == m {
            self.predict_current(engine)?;
        }
        Ok(self.current_state()?.phase)
    }

    /// Classifies the current sample using its questions and answers. A
    /// reply naming no known class is kept as an abstention.
    pub fn predict_current(&mut self, engine: &Engine) -> Result<InteractivePrediction, TrainError> {
        let m = self.config.questions_per_sample;
        let state = self.current_state()?;
        if state.phase != Phase::Asking {
            return Err(TrainError::State(format!(
                "sample {:?} already has a prediction",
                state.sample.id
            )));
        }
        if state.qa.len() < m || state.pending.is_some() {
            return Err(TrainError::State(format!(
                "sample {:?} has {} of {m} questions answered",
                state.sample.id,
                state.qa.len()
            )));
        }
        let bundle = self.render(
            PurposeTag::InteractivePredict,
            &RenderContext {
                spec: Some(&self.spec),
                text: Some(&state.sample.text),
                qa: &state.qa,
                ..Default::default()
            },
        )?;
        let reply = promptkit::call_structured(engine.backend(), &mut self.transcript, &bundle)?;
        let raw = reply.fields.get("Class").unwrap_or_default();
        let prediction = InteractivePrediction {
            class: match_class(raw, &self.spec).map(str::to_string),
            raw_class: raw.to_string(),
            thoughts: reply.fields.get("Thoughts").unwrap_or_default().to_string(),
            reflection: reply.fields.get("Reflection").unwrap_or_default().to_string(),
        };
        if prediction.class.is_none() {
            tracing::info!(raw, "interactive prediction matched no class");
        }
        let state = self.current_mut()?;
        state.prediction = Some(prediction.clone());
        state.phase = Phase::Predicted;
        Ok(prediction)
    }

    /// Records the true class and the user's explanation, then rewrites
    /// that class's description. An empty explanation takes the model's
    /// reflection. If the update call fails the label is kept and this can
    /// be called again.
    pub fn submit_label(
        &mut self,
        label: &str,
        explanation: &str,
        engine: &Engine,
    ) -> Result<UpdateOutcome, TrainError> {
        let state = self.current_state()?;
        if !matches!(state.phase, Phase::Predicted | Phase::Labeled) {
            return Err(TrainError::State(format!(
                "sample {:?} has no prediction yet",
                state.sample.id
            )));
        }
        let class = self
            .spec
            .classes
            .iter()
            .find(|c| c.name == label.trim())
            .or_else(|| {
                self.spec
                    .classes
                    .iter()
                    .find(|c| c.name.eq_ignore_ascii_case(label.trim()))
            })
            .map(|c| c.name.clone())
            .ok_or_else(|| {
                TrainError::Validation(format!(
                    "{label:?} is not one of the classes: {}",
                    self.spec.class_names().join(", ")
                ))
            })?;
        let prediction = state.prediction.as_ref().expect("predicted phase has a prediction");
        let explanation = match explanation.trim() {
            "" => prediction.reflection.clone(),
            e => e.to_string(),
        };
        let model_prediction = prediction
            .class
            .clone()
            .unwrap_or_else(|| prediction.raw_class.clone());

        let sample_id = state.sample.id.clone();
        let state = self.current_mut()?;
        state.user_label = Some(class.clone());
        state.user_explanation = Some(explanation.clone());
        state.phase = Phase::Labeled;

        let state = self.current_state()?;
        let bundle = self.render(
            PurposeTag::Update,
            &RenderContext {
                spec: Some(&self.spec),
                text: Some(&state.sample.text),
                qa: &state.qa,
                model_prediction: Some(&model_prediction),
                correct_class: Some(&class),
                user_explanation: Some(&explanation),
                class_to_be_updated: Some(&class),
                ..Default::default()
            },
        )?;
        let reply = promptkit::call_structured(engine.backend(), &mut self.transcript, &bundle)?;
        let description = reply.fields.get("Description").unwrap_or_default().to_string();
        let thoughts = reply.fields.get("Thoughts").unwrap_or_default().to_string();
        let reason = reply.fields.get("Reason").unwrap_or_default().to_string();

        let slot = self
            .spec
            .classes
            .iter_mut()
            .find(|c| c.name == class)
            .expect("label resolved against spec");
        let previous_description = std::mem::replace(&mut slot.description, description.clone());
        self.history.push(HistoryStep {
            sample_id: Some(sample_id),
            updated_class: Some(class.clone()),
            thoughts: Some(thoughts.clone()),
            reason: Some(reason.clone()),
            spec: self.spec.clone(),
        });
        self.current_mut()?.phase = Phase::Updated;
        self.cursor += 1;

        if self.config.questions_per_sample == 0 && !self.is_complete() {
            if let Err(e) = self.predict_current(engine) {
                tracing::warn!(error = %e, "prediction for the next sample failed; retry it");
            }
        }
        Ok(UpdateOutcome {
            class,
            previous_description,
            description,
            thoughts,
            reason,
            descriptions: self.spec.classes.clone(),
        })
    }

    /// Labeled samples as few-shot demonstrations, carrying the user's
    /// explanation and the answered questions.
    pub fn demonstrations(&self) -> Vec<Demonstration> {
        self.states
            .iter()
            .filter_map(|s| {
                Some(Demonstration {
                    text: s.sample.text.clone(),
                    label: s.user_label.clone()?,
                    explanation: s.user_explanation.clone(),
                    qa: s.qa.clone(),
                })
            })
            .collect()
    }

    /// Freezes the final descriptions into an artifact, applying any
    /// per-class description overrides.
    pub fn finalize(
        &self,
        name: &str,
        edits: &BTreeMap<String, String>,
    ) -> Result<ClassifierArtifact, TrainError> {
        let unlabeled: Vec<String> = self
            .states
            .iter()
            .filter(|s| s.phase != Phase::Updated)
            .map(|s| s.sample.id.clone())
            .collect();
        if !unlabeled.is_empty() {
            return Err(TrainError::Unlabeled(unlabeled));
        }
        if name.trim().is_empty() {
            return Err(TrainError::Validation("classifier name is empty".into()));
        }
        let mut spec = self.spec.clone();
        let mut user_edited = Vec::new();
        for (class, description) in edits {
            let slot = spec
                .classes
                .iter_mut()
                .find(|c| &c.name == class)
                .ok_or_else(|| TrainError::Validation(format!("edit names unknown class {class:?}")))?;
            if slot.description != *description {
                slot.description = description.clone();
                user_edited.push(class.clone());
            }
        }
        // Report edited classes in spec order.
        user_edited.sort_by_key(|c| spec.classes.iter().position(|s| &s.name == c));

        let t = &self.transcript;
        let artifact = ClassifierArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            name: name.trim().to_string(),
            spec,
            config: self.config.artifact_config(),
            provenance: Provenance {
                method: "byoc".into(),
                transcript_digest: Some(t.digest()),
                build_prompt_tokens: t.prompt_tokens(),
                build_output_tokens: t.output_tokens(),
                build_tokens: t.total_tokens(),
                calls: t.counts_by_purpose(),
                samples: self.states.len(),
                questions_per_sample: self.config.questions_per_sample,
                user_edited,
            },
        };
        artifact
            .validate()
            .map_err(|e| TrainError::Validation(e.to_string()))?;
        Ok(artifact)
    }

    pub fn to_checkpoint(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, TrainError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version =
            serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if v.schema_version != SESSION_SCHEMA_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "schema version {} cannot be read by this build (expects {})",
                v.schema_version, SESSION_SCHEMA_VERSION
            )));
        }
        serde_json::from_str(text).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedBackend};
    use std::sync::Arc;

    fn spec() -> ClassifierSpec {
        ClassifierSpec::new(
            "Separate work email from promotions",
            vec![
                ClassSpec::new("Important", "Work emails."),
                ClassSpec::new("Unimportant", "Promotions."),
            ],
        )
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n).map(|i| Sample::new(format!("s{i}"), format!("Email body {i}."))).collect()
    }

    fn q(i: usize) -> ScriptEntry {
        ScriptEntry::purpose(
            PurposeTag::GenQuestion,
            format!("Thoughts: t\nQuestion: Question {i}?\nExplanation: because {i}"),
        )
    }

    fn engine(entries: Vec<ScriptEntry>) -> Engine {
        Engine::new(Arc::new(ScriptedBackend::new(entries)))
    }

    fn predict(class: &str) -> ScriptEntry {
        ScriptEntry::purpose(
            PurposeTag::InteractivePredict,
            format!("Thoughts: t\nClass: {class}\nReflection: looks like {class}"),
        )
    }

    fn update(desc: &str) -> ScriptEntry {
        ScriptEntry::purpose(
            PurposeTag::Update,
            format!("Thoughts: t\nDescription: {desc}\nReason: r"),
        )
    }

    #[test]
    fn rejects_bad_inputs() {
        let e = engine(vec![]);
        let one = ClassifierSpec::new("p", vec![ClassSpec::new("A", "a")]);
        assert!(matches!(
            TrainingSession::start(one, samples(1), TrainConfig::default(), &e),
            Err(TrainError::Validation(_))
        ));
        assert!(matches!(
            TrainingSession::start(spec(), vec![], TrainConfig::default(), &e),
            Err(TrainError::Validation(_))
        ));
    }

    #[test]
    fn one_sample_walkthrough() {
        let e = engine(vec![q(1), q(2), q(3), predict("Important"), update("Work and meetings.")]);
        let mut s = TrainingSession::start(spec(), samples(1), TrainConfig::default(), &e).unwrap();
        assert_eq!(s.expected_questions(), 3);
        assert!(matches!(s.submit_answer("x", &e), Err(TrainError::State(_))));
        for i in 1..=3 {
            let gq = s.next_question(&e).unwrap();
            assert_eq!(gq.question, format!("Question {i}?"));
            // Asking again returns the pending question.
            assert_eq!(s.next_question(&e).unwrap(), gq);
            assert!(matches!(s.submit_answer(" ", &e), Err(TrainError::Validation(_))));
            let phase = s.submit_answer(&format!("answer {i}"), &e).unwrap();
            assert_eq!(phase, if i < 3 { Phase::Asking } else { Phase::Predicted });
        }
        assert!(matches!(s.next_question(&e), Err(TrainError::State(_))));
        assert!(matches!(s.submit_label("Spam", "", &e), Err(TrainError::Validation(_))));
        let out = s.submit_label("Important", "", &e).unwrap();
        assert_eq!(out.previous_description, "Work emails.");
        assert_eq!(out.description, "Work and meetings.");
        assert_eq!(s.states()[0].user_explanation.as_deref(), Some("looks like Important"));
        assert_eq!(s.spec_at(0).unwrap(), &spec());
        assert_eq!(s.spec().classes[1], spec().classes[1]);
        assert!(s.is_complete());
        let a = s.finalize("mail", &BTreeMap::new()).unwrap();
        assert_eq!(a.spec, *s.spec());
        assert_eq!(a.provenance.build_tokens, s.transcript().total_tokens());
        assert!(a.provenance.user_edited.is_empty());
    }

    #[test]
    fn abstention_keeps_the_flow() {
        let e = engine(vec![predict("Junk"), update("Same.")]);
        let cfg = TrainConfig {
            questions_per_sample: 0,
            ..TrainConfig::default()
        };
        let mut s = TrainingSession::start(spec(), samples(1), cfg, &e).unwrap();
        let st = &s.states()[0];
        assert_eq!(st.phase, Phase::Predicted);
        assert_eq!(st.prediction.as_ref().unwrap().class, None);
        s.submit_label("Unimportant", "a promo", &e).unwrap();
        let update_prompt = &s.transcript().entries()[1].request.messages[1].content;
        assert!(update_prompt.contains("Our initial classification was Junk."));
    }

    #[test]
    fn finalize_requires_all_labels_and_applies_edits() {
        let e = engine(vec![predict("Important"), update("W"), predict("Important")]);
        let cfg = TrainConfig {
            questions_per_sample: 0,
            ..TrainConfig::default()
        };
        let mut s = TrainingSession::start(spec(), samples(2), cfg, &e).unwrap();
        s.submit_label("Important", "", &e).unwrap();
        match s.finalize("n", &BTreeMap::new()) {
            Err(TrainError::Unlabeled(ids)) => assert_eq!(ids, vec!["s1".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let e = engine(vec![q(1)]);
        let mut s = TrainingSession::start(spec(), samples(2), TrainConfig::default(), &e).unwrap();
        s.next_question(&e).unwrap();
        let text = s.to_checkpoint();
        let back = TrainingSession::from_checkpoint(&text).unwrap();
        assert_eq!(back, s);
        let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
        assert!(matches!(
            TrainingSession::from_checkpoint(&bumped),
            Err(TrainError::Checkpoint(m)) if m.contains('9')
        ));
    }
}
