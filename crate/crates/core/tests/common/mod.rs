//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use byoc_core::classifier::ClassifierArtifact;
use byoc_core::corpus::Sample;
use byoc_core::llm::{
    Backend, Completion, CompletionRequest, Engine, LlmError, PurposeTag, ScriptEntry, ScriptedBackend,
};
use byoc_core::promptkit::{ClassSpec, ClassifierSpec, QAItem, RenderContext};
use byoc_core::textbudget::TokenCounter;
use byoc_core::trainer::{TrainConfig, TrainingSession};

pub const PURPOSE: &str = "Separate urgent work email from promotions";
pub const TEXT: &str = "Reminder: the budget review moved to Friday.";

pub fn email_spec() -> ClassifierSpec {
    ClassifierSpec::new(
        PURPOSE,
        vec![
            ClassSpec::new("Important", "Messages about work deadlines."),
            ClassSpec::new("Unimportant", "Newsletters and sales."),
        ],
    )
}

pub fn golden_qa() -> Vec<QAItem> {
    [
        ("Who sent it?", "My manager."),
        ("Does a date matter?", "Yes, dates mean deadlines."),
        ("Any keywords?", "Budget, review, deadline."),
    ]
    .into_iter()
    .map(|(q, a)| QAItem {
        question: q.into(),
        answer: a.into(),
        model_explanation: String::new(),
    })
    .collect()
}

/// Render inputs matching the golden files under `tests/golden`.
pub fn golden_context<'a>(
    kind: PurposeTag,
    spec: &'a ClassifierSpec,
    qa: &'a [QAItem],
) -> RenderContext<'a> {
    match kind {
        PurposeTag::GenQuestion => RenderContext {
            spec: Some(spec),
            text: Some(TEXT),
            qa: &qa[..2],
            ..Default::default()
        },
        PurposeTag::InteractivePredict => RenderContext {
            spec: Some(spec),
            text: Some(TEXT),
            qa,
            ..Default::default()
        },
        PurposeTag::Update => RenderContext {
            spec: Some(spec),
            text: Some(TEXT),
            qa,
            model_prediction: Some("Unimportant"),
            correct_class: Some("Important"),
            user_explanation: Some("Deadlines always matter."),
            class_to_be_updated: Some("Important"),
            ..Default::default()
        },
        PurposeTag::SummarizeChunk => RenderContext {
            spec: Some(spec),
            text: Some("The third part sets a Friday deadline."),
            part_index: Some(3),
            summary_so_far: Some("Part one covered the agenda.\n\nPart two covered the budget."),
            target_words: Some(80),
            ..Default::default()
        },
        PurposeTag::Predict | PurposeTag::Baseline => RenderContext {
            spec: Some(spec),
            text: Some(TEXT),
            ..Default::default()
        },
    }
}

/// Phrases each template must carry word for word.
pub fn sentinels(kind: PurposeTag) -> &'static [&'static str] {
    match kind {
        PurposeTag::GenQuestion => &[
            "The way we choose to annotate our training data is by asking user's questions about the text",
            "The questions should not be vague or obvious.",
            "do not just directly ask the user what class the text belongs to",
            "also explain why you asked the given question",
            "There might be no questions generated yet.",
            "We want to ask another question about the text to help us improve or broaden the scope of the class descriptions",
        ],
        PurposeTag::InteractivePredict => &[
            "we have also asked the user a series of questions to help us classify this text",
            "then make your best guess as to what class the text belongs to",
            "then reflect on why you chose that class",
            "Thoughts: <thoughts>\nClass: <class>\nReflection: <reflection>",
            "classify the text above - make sure to incorporate your thoughts and a reflection as well.",
        ],
        PurposeTag::Update => &[
            "copy the current class description word for word",
            "to broaden it's scope to contain more examples/possibilities",
            "Without changing or altering the meaning in the current description",
            "Description: <updated_class_description_for_class>",
            "Reason: <reason_why_you_updated_the_class_description>",
            "The user explained the reason that this was the correct class was this explanation:",
        ],
        PurposeTag::SummarizeChunk => &[
            "so I split it into smaller parts",
            "Don't make the length of the summary of this one part of the text equal to length of the the summary of multiple parts of text.",
            "Make the summary of the new thread proportional to how many parts of the text have been summarized so far.",
            "if the summary of about 5 parts of the text are 400 words, the length of the summary of the sixth part should be around 80 words.",
            "Format the reponse with style: free-text.",
            "we want to eventually perform classification on this text.",
        ],
        PurposeTag::Predict | PurposeTag::Baseline => &[],
    }
}

pub fn engine(entries: Vec<ScriptEntry>) -> Engine {
    Engine::new(Arc::new(ScriptedBackend::new(entries)))
}

/// Four short emails with their true labels.
pub fn training_samples() -> Vec<(Sample, &'static str)> {
    [
        ("e1", "Reminder: the budget review moved to Friday.", "Important"),
        ("e2", "Flash sale: 40% off all shoes this weekend.", "Unimportant"),
        ("e3", "Can you send the slides before the client call?", "Important"),
        ("e4", "Your weekly digest of trending recipes.", "Unimportant"),
    ]
    .into_iter()
    .map(|(id, text, label)| (Sample::new(id, text), label))
    .collect()
}

/// Model predictions in the scripted run; sample 3 is predicted wrong.
pub const SCRIPTED_PREDICTIONS: [&str; 4] = ["Important", "Unimportant", "Unimportant", "Unimportant"];

pub fn answer(sample: usize, q: usize) -> String {
    format!("Answer {sample}.{q} from the user.")
}

pub fn user_explanation(sample: usize) -> String {
    format!("Reason {sample} given by the user.")
}

pub fn updated_description(sample: usize, label: &str) -> String {
    format!("{label} description after sample {sample}.")
}

/// Replies for `n` samples with `m` questions each, in call order.
pub fn training_script(n: usize, m: usize) -> Vec<ScriptEntry> {
    let labels: Vec<&str> = training_samples().iter().map(|(_, l)| *l).collect();
    let mut out = Vec::new();
    for i in 0..n {
        for j in 1..=m {
            out.push(ScriptEntry::purpose(
                PurposeTag::GenQuestion,
                format!("Thoughts: thinking {i}.{j}\nQuestion: Question {i}.{j}?\nExplanation: Why {i}.{j}."),
            ));
        }
        let p = SCRIPTED_PREDICTIONS[i % 4];
        out.push(ScriptEntry::purpose(
            PurposeTag::InteractivePredict,
            format!("Thoughts: weighing {i}\nClass: {p}\nReflection: Reflection {i} on {p}."),
        ));
        out.push(ScriptEntry::purpose(
            PurposeTag::Update,
            format!(
                "Thoughts: revising {i}\nDescription: {}\nReason: Reason for update {i}.",
                updated_description(i, labels[i % 4])
            ),
        ));
    }
    out
}

pub fn train_config(m: usize) -> TrainConfig {
    TrainConfig {
        questions_per_sample: m,
        ..TrainConfig::default()
    }
}

/// Drives a whole session through the library API with scripted user input.
pub fn run_training(engine: &Engine, m: usize) -> TrainingSession {
    let samples = training_samples();
    let mut s = TrainingSession::start(
        email_spec(),
        samples.iter().map(|(s, _)| s.clone()).collect(),
        train_config(m),
        engine,
    )
    .expect("session starts");
    for (i, (_, label)) in samples.iter().enumerate() {
        for j in 1..=m {
            s.next_question(engine).expect("question");
            s.submit_answer(&answer(i, j), engine).expect("answer");
        }
        s.submit_label(label, &user_explanation(i), engine).expect("label");
    }
    s
}

pub fn finalize(s: &TrainingSession) -> ClassifierArtifact {
    s.finalize("email-triage", &BTreeMap::new()).expect("finalize")
}

/// Three departments and their eleven teams.
pub const TREE: [(&str, &[&str]); 3] = [
    ("Sales", &["Leads", "Renewals", "Pricing", "Partners"]),
    ("Support", &["Billing", "Outages", "Accounts", "Onboarding"]),
    ("Research", &["Models", "Datasets", "Papers"]),
];

pub fn leaves() -> Vec<(&'static str, &'static str)> {
    TREE.iter()
        .flat_map(|(p, kids)| kids.iter().map(move |k| (*p, *k)))
        .collect()
}

pub fn text_for(leaf: &str) -> String {
    format!("Ticket concerning topic-{leaf} raised this morning.")
}

pub fn toy_artifact(name: &str, purpose: &str, classes: &[&str]) -> ClassifierArtifact {
    let spec = ClassifierSpec::new(
        purpose,
        classes.iter().map(|c| ClassSpec::new(*c, format!("Anything about {c}."))).collect(),
    );
    ClassifierArtifact::manual(name, spec, Default::default()).unwrap()
}

/// Answers each classifier's prompt the way a flat 11-way oracle would,
/// projected onto the classes that classifier offers.
pub struct RoutingBackend {
    counter: TokenCounter,
}

/// A department classifier and one team classifier per department.
pub fn department_tree() -> (ClassifierArtifact, BTreeMap<String, ClassifierArtifact>) {
    let parents: Vec<&str> = TREE.iter().map(|(p, _)| *p).collect();
    let parent = toy_artifact("dept", "Route tickets to a department", &parents);
    let children = TREE
        .iter()
        .map(|(p, kids)| (p.to_string(), toy_artifact(p, &format!("Pick the {p} team"), kids)))
        .collect();
    (parent, children)
}

impl RoutingBackend {
    pub fn engine() -> Engine {
        Engine::new(Arc::new(RoutingBackend {
            counter: TokenCounter::default(),
        }))
    }

    pub fn oracle(text: &str) -> Option<(&'static str, &'static str)> {
        leaves().into_iter().find(|(_, leaf)| text.contains(&format!("topic-{leaf} ")))
    }
}

impl Backend for RoutingBackend {
    fn name(&self) -> &str {
        "routing"
    }

    fn send(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let prompt = request.prompt_text();
        let (parent, leaf) = Self::oracle(&prompt).expect("prompt carries a known ticket");
        let class = if prompt.contains("Route tickets to a department") { parent } else { leaf };
        let text = format!("Thoughts: routing\nClass: {class}\nReflection: matched {class}");
        Ok(Completion {
            prompt_tokens: self.counter.count(&prompt) as u64,
            output_tokens: self.counter.count(&text) as u64,
            text,
        })
    }
}
