//! Inference with frozen class descriptions, the prompt baselines it is
//! compared against, and two-level routing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{Engine, LlmError, PurposeTag, Transcript};
use crate::promptkit::{
    self, match_class, CallError, ClassifierSpec, PromptBundle, PromptError, QAItem, RenderContext,
};
use crate::summarizer::{self, SummarizeConfig};
use crate::textbudget::{self, CutAt, TokenCounter};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

/// Prompt budget left by a 4096-token window after reserving room for the reply.
pub const DEFAULT_PROMPT_BUDGET: usize = 4096 - crate::llm::DEFAULT_MAX_OUTPUT_TOKENS as usize;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("reply class {raw:?} matches none of the classifier's classes")]
    NoMatch { raw: String },
    #[error("prompt needs {needed} tokens but the budget is {budget}")]
    Budget { needed: usize, budget: usize },
    #[error("invalid classifier: {0}")]
    Invalid(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl From<CallError> for ClassifyError {
    fn from(e: CallError) -> Self {
        match e {
            CallError::Llm(e) => ClassifyError::Llm(e),
            CallError::Prompt(e) => ClassifyError::Prompt(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactConfig {
    /// Inputs longer than this many tokens are summarized before prediction.
    pub summarize_threshold: usize,
    pub chunk_tokens: usize,
    pub predict_temperature: f64,
    pub summarize_temperature: f64,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        let s = SummarizeConfig::default();
        ArtifactConfig {
            summarize_threshold: s.threshold,
            chunk_tokens: s.chunk_tokens,
            predict_temperature: PurposeTag::Predict.default_temperature(),
            summarize_temperature: s.temperature,
        }
    }
}

impl ArtifactConfig {
    pub fn summarize(&self) -> SummarizeConfig {
        SummarizeConfig {
            threshold: self.summarize_threshold,
            chunk_tokens: self.chunk_tokens,
            temperature: self.summarize_temperature,
            ..SummarizeConfig::default()
        }
    }
}

/// How an artifact came to be and what it cost to build.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    /// `byoc` for trained classifiers, `manual` for hand-written specs.
    pub method: String,
    /// SHA-256 of the build transcript's line-delimited form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_digest: Option<String>,
    pub build_prompt_tokens: u64,
    pub build_output_tokens: u64,
    pub build_tokens: u64,
    pub calls: BTreeMap<PurposeTag, usize>,
    pub samples: usize,
    pub questions_per_sample: usize,
    /// Classes whose final description was edited by hand.
    pub user_edited: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArtifact {
    pub schema_version: u32,
    pub name: String,
    pub spec: ClassifierSpec,
    pub config: ArtifactConfig,
    pub provenance: Provenance,
}

impl ClassifierArtifact {
    /// An artifact from a hand-written spec, with no build cost.
    pub fn manual(
        name: impl Into<String>,
        spec: ClassifierSpec,
        config: ArtifactConfig,
    ) -> Result<Self, ClassifyError> {
        let artifact = ClassifierArtifact {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            name: name.into(),
            spec,
            config,
            provenance: Provenance {
                method: "manual".into(),
                ..Provenance::default()
            },
        };
        artifact.validate()?;
        Ok(artifact)
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.name.trim().is_empty() {
            return Err(ClassifyError::Invalid("artifact name is empty".into()));
        }
        self.spec.validate()?;
        if self.config.summarize_threshold < summarizer::MIN_THRESHOLD
            || self.config.chunk_tokens < summarizer::MIN_THRESHOLD
        {
            return Err(ClassifyError::Invalid(format!(
                "summarize threshold and chunk size must be at least {}",
                summarizer::MIN_THRESHOLD
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub class: String,
    pub thoughts: String,
    pub reflection: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    /// Model calls made, including summarization and re-asks.
    pub calls: usize,
    /// Parent class chosen by the first stage of a two-level prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_class: Option<String>,
}

impl PredictionOutcome {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.output_tokens
    }
}

/// Prompting regimes, in the order results are reported.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    ZeroShot,
    ZeroShotSummary,
    FewShot,
    FewShotExplanation,
    FewShotQa,
    Byoc,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::ZeroShot,
        BaselineKind::ZeroShotSummary,
        BaselineKind::FewShot,
        BaselineKind::FewShotExplanation,
        BaselineKind::FewShotQa,
        BaselineKind::Byoc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::ZeroShot => "zero_shot",
            BaselineKind::ZeroShotSummary => "zero_shot_summary",
            BaselineKind::FewShot => "few_shot",
            BaselineKind::FewShotExplanation => "few_shot_explanation",
            BaselineKind::FewShotQa => "few_shot_qa",
            BaselineKind::Byoc => "byoc",
        }
    }

    /// Human-readable row label.
    pub fn title(self) -> &'static str {
        match self {
            BaselineKind::ZeroShot => "Zero-Shot",
            BaselineKind::ZeroShotSummary => "Zero-Shot + Summary",
            BaselineKind::FewShot => "Few-Shot",
            BaselineKind::FewShotExplanation => "Few-Shot + Explanation",
            BaselineKind::FewShotQa => "Few-Shot + QA",
            BaselineKind::Byoc => "BYOC",
        }
    }

    pub fn uses_demonstrations(self) -> bool {
        matches!(
            self,
            BaselineKind::FewShot | BaselineKind::FewShotExplanation | BaselineKind::FewShotQa
        )
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown method {s:?}; expected one of {}",
                    BaselineKind::ALL.map(|k| k.as_str()).join(", ")
                )
            })
    }
}

/// A labeled example for few-shot prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub text: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub qa: Vec<QAItem>,
}

impl Demonstration {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        Demonstration {
            text: text.into(),
            label: label.into(),
            explanation: None,
            qa: Vec::new(),
        }
    }

    fn render(&self, index: usize, kind: BaselineKind) -> Result<String, ClassifyError> {
        let mut out = format!("--- Example {index} ---\nText: {}\n", self.text);
        if kind == BaselineKind::FewShotQa {
            if self.qa.is_empty() {
                return Err(ClassifyError::Invalid(format!(
                    "example {index} has no questions and answers"
                )));
            }
            out.push_str("Questions and answers:\n");
            for qa in &self.qa {
                out.push_str(&format!("{}\n{}\n", qa.question, qa.answer));
            }
        }
        if matches!(kind, BaselineKind::FewShotExplanation | BaselineKind::FewShotQa) {
            let e = self
                .explanation
                .as_deref()
                .filter(|e| !e.trim().is_empty())
                .ok_or_else(|| {
                    ClassifyError::Invalid(format!("example {index} has no explanation"))
                })?;
            out.push_str(&format!("Explanation: {e}\n"));
        }
        out.push_str(&format!("Class: {}", self.label));
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Upper bound on prompt tokens (system plus user message).
    pub prompt_budget: usize,
    pub summarize: SummarizeConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            prompt_budget: DEFAULT_PROMPT_BUDGET,
            summarize: SummarizeConfig::default(),
        }
    }
}

fn bundle_tokens(bundle: &PromptBundle, counter: &TokenCounter) -> usize {
    counter.count_concat(bundle.messages.iter().map(|m| m.content.as_str()))
}

fn render_text(
    kind: PurposeTag,
    spec: &ClassifierSpec,
    text: &str,
    demonstrations: Option<&str>,
) -> Result<PromptBundle, ClassifyError> {
    let ctx = RenderContext {
        spec: Some(spec),
        text: Some(text),
        demonstrations,
        ..Default::default()
    };
    Ok(promptkit::render(kind, &ctx)?)
}

/// The deployed prompt: class descriptions and the text, no Q&A.
pub fn predict_prompt(spec: &ClassifierSpec, text: &str) -> Result<PromptBundle, ClassifyError> {
    render_text(PurposeTag::Predict, spec, text, None)
}

/// Renders the prompt for a baseline regime within `budget` prompt tokens.
///
/// `zero_shot` truncates the text at a word boundary to fit. The few-shot
/// kinds include demonstrations in the given order and stop at the first one
/// that no longer fits. `zero_shot_summary` and `byoc` expect `x` to be
/// summarized already.
pub fn build_baseline_prompt(
    kind: BaselineKind,
    spec: &ClassifierSpec,
    demos: &[Demonstration],
    x: &str,
    budget: usize,
    counter: &TokenCounter,
) -> Result<PromptBundle, ClassifyError> {
    spec.validate()?;
    let tag = if kind == BaselineKind::Byoc {
        PurposeTag::Predict
    } else {
        PurposeTag::Baseline
    };
    let check = |bundle: PromptBundle| {
        let needed = bundle_tokens(&bundle, counter);
        if needed > budget {
            Err(ClassifyError::Budget { needed, budget })
        } else {
            Ok(bundle)
        }
    };
    match kind {
        BaselineKind::ZeroShot => {
            let scaffold = bundle_tokens(&render_text(tag, spec, "", None)?, counter);
            let mut room = budget.checked_sub(scaffold).ok_or(ClassifyError::Budget {
                needed: scaffold,
                budget,
            })?;
            loop {
                let cut = textbudget::truncate_to_tokens(x, room, counter, CutAt::Word);
                let bundle = render_text(tag, spec, cut, None)?;
                // Counts need not be additive for plugin tokenizers.
                if bundle_tokens(&bundle, counter) <= budget || room == 0 {
                    return check(bundle);
                }
                room -= 1;
            }
        }
        BaselineKind::ZeroShotSummary | BaselineKind::Byoc => check(render_text(tag, spec, x, None)?),
        BaselineKind::FewShot | BaselineKind::FewShotExplanation | BaselineKind::FewShotQa => {
            let rendered: Vec<String> = demos
                .iter()
                .enumerate()
                .map(|(i, d)| d.render(i + 1, kind))
                .collect::<Result<_, _>>()?;
            let mut best = check(render_text(tag, spec, x, Some(""))?)?;
            for k in 1..=rendered.len() {
                let block = rendered[..k].join("\n\n");
                let bundle = render_text(tag, spec, x, Some(&block))?;
                if bundle_tokens(&bundle, counter) > budget {
                    break;
                }
                best = bundle;
            }
            Ok(best)
        }
    }
}

/// Number of demonstrations a few-shot prompt included.
pub fn demonstrations_included(bundle: &PromptBundle) -> usize {
    bundle.user().matches("\n--- Example ").count()
}

fn resolve(
    spec: &ClassifierSpec,
    bundle: &PromptBundle,
    engine: &Engine,
    transcript: &mut Transcript,
    start: usize,
) -> Result<PredictionOutcome, ClassifyError> {
    let reply = promptkit::call_structured(engine.backend(), transcript, bundle)?;
    let raw = reply.fields.get("Class").unwrap_or_default();
    let class = match_class(raw, spec).ok_or_else(|| ClassifyError::NoMatch {
        raw: raw.to_string(),
    })?;
    let calls = &transcript.entries()[start..];
    Ok(PredictionOutcome {
        class: class.to_string(),
        thoughts: reply.fields.get("Thoughts").unwrap_or_default().to_string(),
        reflection: reply.fields.get("Reflection").unwrap_or_default().to_string(),
        prompt_tokens: calls.iter().map(|e| e.completion.prompt_tokens).sum(),
        output_tokens: calls.iter().map(|e| e.completion.output_tokens).sum(),
        calls: calls.len(),
        parent_class: None,
    })
}

/// Classifies `x` with the artifact's descriptions.
pub fn predict(
    artifact: &ClassifierArtifact,
    x: &str,
    engine: &Engine,
) -> Result<PredictionOutcome, ClassifyError> {
    predict_recorded(artifact, x, engine, &mut Transcript::default())
}

/// [`predict`], appending every model call to `transcript`.
pub fn predict_recorded(
    artifact: &ClassifierArtifact,
    x: &str,
    engine: &Engine,
    transcript: &mut Transcript,
) -> Result<PredictionOutcome, ClassifyError> {
    if x.trim().is_empty() {
        return Err(ClassifyError::EmptyInput);
    }
    let start = transcript.len();
    let text = summarizer::summarize(
        x,
        &artifact.spec,
        &artifact.config.summarize(),
        &engine.counter,
        engine.backend(),
        transcript,
    )?;
    let mut bundle = predict_prompt(&artifact.spec, &text)?;
    bundle.temperature = artifact.config.predict_temperature;
    resolve(&artifact.spec, &bundle, engine, transcript, start)
}

/// Classifies `x` with a non-BYOC regime using the initial spec.
pub fn predict_baseline(
    kind: BaselineKind,
    spec: &ClassifierSpec,
    demos: &[Demonstration],
    x: &str,
    config: &BaselineConfig,
    engine: &Engine,
    transcript: &mut Transcript,
) -> Result<PredictionOutcome, ClassifyError> {
    if kind == BaselineKind::Byoc {
        return Err(ClassifyError::Invalid(
            "byoc predictions need a trained artifact".into(),
        ));
    }
    if x.trim().is_empty() {
        return Err(ClassifyError::EmptyInput);
    }
    let start = transcript.len();
    let text = if kind == BaselineKind::ZeroShotSummary {
        summarizer::summarize(
            x,
            spec,
            &config.summarize,
            &engine.counter,
            engine.backend(),
            transcript,
        )?
    } else {
        x.to_string()
    };
    let bundle =
        build_baseline_prompt(kind, spec, demos, &text, config.prompt_budget, &engine.counter)?;
    resolve(spec, &bundle, engine, transcript, start)
}

/// Checks that every parent class routes to a child and that child class
/// names do not overlap.
pub fn validate_hierarchy(
    parent: &ClassifierArtifact,
    children: &BTreeMap<String, ClassifierArtifact>,
) -> Result<(), ClassifyError> {
    let mut seen: BTreeMap<&str, &str> = BTreeMap::new();
    for name in parent.spec.class_names() {
        let child = children.get(name).ok_or_else(|| {
            ClassifyError::Invalid(format!("no child classifier for parent class {name:?}"))
        })?;
        for c in child.spec.class_names() {
            if let Some(other) = seen.insert(c, name) {
                return Err(ClassifyError::Invalid(format!(
                    "class {c:?} appears under both {other:?} and {name:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Predicts a parent class, then a class of that parent's child classifier.
/// Token counts and calls cover both stages.
pub fn predict_hierarchical(
    parent: &ClassifierArtifact,
    children: &BTreeMap<String, ClassifierArtifact>,
    x: &str,
    engine: &Engine,
) -> Result<PredictionOutcome, ClassifyError> {
    predict_hierarchical_recorded(parent, children, x, engine, &mut Transcript::default())
}

pub fn predict_hierarchical_recorded(
    parent: &ClassifierArtifact,
    children: &BTreeMap<String, ClassifierArtifact>,
    x: &str,
    engine: &Engine,
    transcript: &mut Transcript,
) -> Result<PredictionOutcome, ClassifyError> {
    validate_hierarchy(parent, children)?;
    let first = predict_recorded(parent, x, engine, transcript)?;
    let child = &children[&first.class];
    let second = predict_recorded(child, x, engine, transcript)?;
    Ok(PredictionOutcome {
        prompt_tokens: first.prompt_tokens + second.prompt_tokens,
        output_tokens: first.output_tokens + second.output_tokens,
        calls: first.calls + second.calls,
        parent_class: Some(first.class),
        ..second
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedBackend};
    use crate::promptkit::ClassSpec;
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

    fn engine(replies: &[&str]) -> Engine {
        Engine::new(Arc::new(ScriptedBackend::new(
            replies.iter().map(|r| ScriptEntry::any(*r)).collect(),
        )))
    }

    fn artifact() -> ClassifierArtifact {
        ClassifierArtifact::manual("mail", spec(), ArtifactConfig::default()).unwrap()
    }

    #[test]
    fn predict_resolves_class() {
        let e = engine(&["Thoughts: t\nClass: Unimportant\nReflection: r"]);
        let out = predict(&artifact(), "50% off shoes", &e).unwrap();
        assert_eq!(out.class, "Unimportant");
        assert_eq!((out.thoughts.as_str(), out.reflection.as_str()), ("t", "r"));
        assert_eq!(out.calls, 1);
        assert!(out.prompt_tokens > 0);
    }

    #[test]
    fn unknown_class_is_an_error() {
        let e = engine(&["Thoughts: t\nClass: Spam\nReflection: r"]);
        assert!(matches!(
            predict(&artifact(), "x", &e),
            Err(ClassifyError::NoMatch { raw }) if raw == "Spam"
        ));
        assert!(matches!(predict(&artifact(), "  ", &e), Err(ClassifyError::EmptyInput)));
    }

    #[test]
    fn deployed_prompt_has_no_questions() {
        let b = predict_prompt(&spec(), "hello").unwrap();
        assert!(!b.user().contains("questions and answers"));
        assert!(b.user().contains("Important: Work emails."));
        assert!(b.user().contains("--- Start of text ---\nhello\n--- End of text ---"));
        assert_eq!(b.kind, PurposeTag::Predict);
    }

    #[test]
    fn zero_shot_truncates_to_budget() {
        let c = TokenCounter::default();
        let x = "word ".repeat(2000);
        let b = build_baseline_prompt(BaselineKind::ZeroShot, &spec(), &[], &x, 1000, &c).unwrap();
        assert!(bundle_tokens(&b, &c) <= 1000);
        assert!(b.user().contains("word word"));
        assert!(b.user().contains("word\n--- End of text ---"));
        assert!(matches!(
            build_baseline_prompt(BaselineKind::ZeroShot, &spec(), &[], &x, 10, &c),
            Err(ClassifyError::Budget { .. })
        ));
    }

    #[test]
    fn few_shot_requires_inputs_per_kind() {
        let c = TokenCounter::default();
        let demos = vec![Demonstration::new("a", "Important")];
        assert!(build_baseline_prompt(BaselineKind::FewShot, &spec(), &demos, "x", 4000, &c).is_ok());
        assert!(matches!(
            build_baseline_prompt(BaselineKind::FewShotExplanation, &spec(), &demos, "x", 4000, &c),
            Err(ClassifyError::Invalid(_))
        ));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.as_str().parse::<BaselineKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.as_str()));
        }
        assert!("one_shot".parse::<BaselineKind>().is_err());
    }
}
