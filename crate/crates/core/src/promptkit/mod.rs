//! Prompt rendering and reply parsing.
//!
//! Templates live in `templates/*.txt` as verbatim text with `<placeholder>`
//! markers. The enumerated runs (`<class_1>, <class_2>, .... <class_n>`,
//! the `<class_i_name>: <class_i_description>` block and the
//! `<question_i>`/`<answer_i>` block) are expanded over the class list and
//! the Q&A list; every other marker is a plain substitution.

mod parse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{
    self, Backend, ChatMessage, Completion, CompletionRequest, LlmError, PurposeTag, Transcript,
};

pub use parse::{match_class, parse, schema, synthesize, FieldMap};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no value for template placeholder <{0}>")]
    MissingPlaceholder(&'static str),
    #[error("{kind} reply is missing field(s): {}", .missing.join(", "))]
    Parse {
        kind: PurposeTag,
        missing: Vec<String>,
    },
    #[error("invalid classifier spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum CallError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub description: String,
}

impl ClassSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        ClassSpec {
            name: name.into(),
            description: description.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub purpose: String,
    pub classes: Vec<ClassSpec>,
}

impl ClassifierSpec {
    pub fn new(purpose: impl Into<String>, classes: Vec<ClassSpec>) -> Self {
        ClassifierSpec {
            purpose: purpose.into(),
            classes,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.purpose.trim().is_empty() {
            return Err(PromptError::InvalidSpec("purpose is empty".into()));
        }
        if self.classes.len() < 2 {
            return Err(PromptError::InvalidSpec(format!(
                "need at least 2 classes, got {}",
                self.classes.len()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.name.trim().is_empty() {
                return Err(PromptError::InvalidSpec(format!("class {i} has an empty name")));
            }
            if c.name.contains('\n') || c.name.contains('\r') {
                return Err(PromptError::InvalidSpec(format!(
                    "class name {:?} contains a newline",
                    c.name
                )));
            }
            if self.classes[..i].iter().any(|o| o.name == c.name) {
                return Err(PromptError::InvalidSpec(format!(
                    "duplicate class name {:?}",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn class(&self, name: &str) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn has_class(&self, name: &str) -> bool {
        self.class(name).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub question: String,
    pub answer: String,
    /// The model's stated reason for asking.
    pub model_explanation: String,
}

/// One fully rendered model call: messages, decoding parameters and the
/// labels the reply must contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub kind: PurposeTag,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub schema: Vec<String>,
}

impl PromptBundle {
    pub fn request(&self) -> CompletionRequest {
        CompletionRequest {
            purpose: self.kind,
            messages: self.messages.clone(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }

    pub fn system(&self) -> &str {
        &self.messages[0].content
    }

    pub fn user(&self) -> &str {
        &self.messages[1].content
    }
}

/// Values for template placeholders. Which ones are required depends on
/// the template being rendered.
#[derive(Debug, Clone, Default)]
pub struct RenderContext<'a> {
    pub spec: Option<&'a ClassifierSpec>,
    pub text: Option<&'a str>,
    pub qa: &'a [QAItem],
    pub model_prediction: Option<&'a str>,
    pub correct_class: Option<&'a str>,
    pub user_explanation: Option<&'a str>,
    pub class_to_be_updated: Option<&'a str>,
    /// 1-based index of the part being summarized.
    pub part_index: Option<usize>,
    pub summary_so_far: Option<&'a str>,
    /// Requested length of the new part's summary, in words.
    pub target_words: Option<usize>,
    pub demonstrations: Option<&'a str>,
}

struct Template {
    system: &'static str,
    user: &'static str,
}

fn trim_resource(s: &'static str) -> &'static str {
    s.trim_matches('\n')
}

fn template(kind: PurposeTag, with_demos: bool) -> Template {
    let (system, user) = match kind {
        PurposeTag::GenQuestion => (
            include_str!("../../templates/gen_question.system.txt"),
            include_str!("../../templates/gen_question.user.txt"),
        ),
        PurposeTag::InteractivePredict => (
            include_str!("../../templates/interactive_predict.system.txt"),
            include_str!("../../templates/interactive_predict.user.txt"),
        ),
        PurposeTag::Update => (
            include_str!("../../templates/update.system.txt"),
            include_str!("../../templates/update.user.txt"),
        ),
        PurposeTag::SummarizeChunk => (
            include_str!("../../templates/summarize_chunk.system.txt"),
            include_str!("../../templates/summarize_chunk.user.txt"),
        ),
        PurposeTag::Baseline if with_demos => (
            include_str!("../../templates/baseline.system.txt"),
            include_str!("../../templates/baseline.user.txt"),
        ),
        PurposeTag::Predict | PurposeTag::Baseline => (
            include_str!("../../templates/predict.system.txt"),
            include_str!("../../templates/predict.user.txt"),
        ),
    };
    Template {
        system: trim_resource(system),
        user: trim_resource(user),
    }
}

const CLASS_LIST: &str = "<class_1>, <class_2>, .... <class_n> name";
const CLASS_BLOCK: &str = "<class_1_name>: <class_1_description>\n<class_2_name>: <class_2_description>\n..\n<class_n_name>: <class_n_description>";
const QA_BLOCK_PRIOR: &str =
    "<question_1>\n<answer_1>\n\n<question_2>\n<answer_2>\n\n<question_m-1>\n<answer_m-1>";
const QA_BLOCK_ALL: &str =
    "<question_1>\n<answer_1>\n\n<question_2>\n<answer_2>\n\n<question_m>\n<answer_m>";

/// Renders the system and user messages for `kind`.
pub fn render(kind: PurposeTag, ctx: &RenderContext<'_>) -> Result<PromptBundle, PromptError> {
    let tpl = template(kind, ctx.demonstrations.is_some());
    let values = placeholder_values(ctx);
    let system = substitute(tpl.system, &values)?;
    let mut user = substitute(tpl.user, &values)?;
    if kind == PurposeTag::SummarizeChunk {
        if let (Some(words), Some(part)) = (ctx.target_words, ctx.part_index) {
            user.push_str(&format!(
                "\n\nThe summary of part {part} should be around {words} words."
            ));
        }
    }
    let max_output_tokens = match (kind, ctx.target_words) {
        // Room for the requested words plus some slack.
        (PurposeTag::SummarizeChunk, Some(w)) => (w as u32 * 2).max(128),
        _ => llm::DEFAULT_MAX_OUTPUT_TOKENS,
    };
    Ok(PromptBundle {
        kind,
        messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
        temperature: kind.default_temperature(),
        max_output_tokens,
        schema: schema(kind).iter().map(|s| s.to_string()).collect(),
    })
}

type Values = Vec<(&'static str, &'static str, Option<String>)>;

/// (marker, placeholder name, value)
fn placeholder_values(ctx: &RenderContext<'_>) -> Values {
    let spec = ctx.spec;
    let qa_block = || {
        ctx.qa
            .iter()
            .map(|q| format!("{}\n{}", q.question, q.answer))
            .collect::<Vec<_>>()
            .join("\n\n")
    };
    vec![
        (
            CLASS_LIST,
            "class_list",
            spec.map(|s| s.class_names().join(", ")),
        ),
        (
            CLASS_BLOCK,
            "class_descriptions",
            spec.map(|s| {
                s.classes
                    .iter()
                    .map(|c| format!("{}: {}", c.name, c.description))
                    .collect::<Vec<_>>()
                    .join("\n")
            }),
        ),
        (QA_BLOCK_PRIOR, "questions_and_answers", Some(qa_block())),
        (QA_BLOCK_ALL, "questions_and_answers", Some(qa_block())),
        (
            "<classification_task_description>",
            "classification_task_description",
            spec.map(|s| s.purpose.clone()),
        ),
        ("${text}", "text", ctx.text.map(str::to_string)),
        (
            "<model_prediction>",
            "model_prediction",
            ctx.model_prediction.map(str::to_string),
        ),
        (
            "<correct_class>",
            "correct_class",
            ctx.correct_class.map(str::to_string),
        ),
        (
            "<user_explanation>",
            "user_explanation",
            ctx.user_explanation.map(str::to_string),
        ),
        (
            "<class_to_be_updated>",
            "class_to_be_updated",
            ctx.class_to_be_updated.map(str::to_string),
        ),
        (
            "<summary_of_previous_sections>",
            "summary_of_previous_sections",
            ctx.summary_so_far.map(str::to_string),
        ),
        ("<i-1>", "i-1", ctx.part_index.map(|i| (i - 1).to_string())),
        ("<i>", "i", ctx.part_index.map(|i| i.to_string())),
        ("<current part>", "current part", ctx.text.map(str::to_string)),
        (
            "<demonstrations>",
            "demonstrations",
            ctx.demonstrations.map(str::to_string),
        ),
    ]
}

/// Single left-to-right pass, so substituted values are never rescanned.
fn substitute(template: &str, values: &Values) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut rest = template;
    'scan: while !rest.is_empty() {
        for (marker, name, value) in values {
            if let Some(tail) = rest.strip_prefix(marker) {
                let v = value.as_deref().ok_or(PromptError::MissingPlaceholder(name))?;
                out.push_str(v);
                rest = tail;
                continue 'scan;
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        out.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    Ok(out)
}

/// The answer to a structured call: parsed fields plus the raw completion
/// that produced them.
#[derive(Debug, Clone)]
pub struct StructuredReply {
    pub fields: FieldMap,
    pub completion: Completion,
}

const REASK: &str = "Your previous response could not be read. Respond again using exactly this format:";

/// Sends `bundle` and parses the reply. A malformed reply gets one re-ask
/// that repeats the expected format; a second malformed reply is an error.
pub fn call_structured(
    backend: &dyn Backend,
    transcript: &mut Transcript,
    bundle: &PromptBundle,
) -> Result<StructuredReply, CallError> {
    let request = bundle.request();
    let first = llm::complete(backend, transcript, request.clone())?;
    match parse(bundle.kind, &first.text) {
        Ok(fields) => Ok(StructuredReply {
            fields,
            completion: first,
        }),
        Err(err) => {
            tracing::warn!(kind = %bundle.kind, %err, "malformed reply, asking again");
            let format = bundle
                .schema
                .iter()
                .map(|l| format!("{l}: <{}>", l.to_lowercase()))
                .collect::<Vec<_>>()
                .join("\n");
            let mut retry = request;
            let reply_text = if first.text.trim().is_empty() {
                "(empty)".to_string()
            } else {
                first.text.clone()
            };
            retry.messages.push(ChatMessage::assistant(reply_text));
            retry
                .messages
                .push(ChatMessage::user(format!("{REASK}\n\n{format}")));
            let second = llm::complete(backend, transcript, retry)?;
            let fields = parse(bundle.kind, &second.text)?;
            Ok(StructuredReply {
                fields,
                completion: second,
            })
        }
    }
}
