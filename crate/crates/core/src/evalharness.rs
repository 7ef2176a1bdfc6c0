//! Accuracy and token-cost measurement over a labeled split.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{
    self, BaselineConfig, BaselineKind, ClassifierArtifact, ClassifyError, Demonstration,
};
use crate::corpus::Dataset;
use crate::llm::{Engine, Transcript};
use crate::promptkit::ClassifierSpec;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("method {method} needs {missing}")]
    MissingInput {
        method: BaselineKind,
        missing: &'static str,
    },
    #[error("sample {0:?} has no label")]
    Unlabeled(String),
    #[error("evaluation split is empty")]
    Empty,
    #[error("malformed report on line {line}: {message}")]
    Import { line: usize, message: String },
}

/// What a method is evaluated with. BYOC needs the artifact; the other
/// methods need the initial spec, and few-shot methods the demonstrations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalInputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<ClassifierArtifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ClassifierSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub demos: Vec<Demonstration>,
    #[serde(default)]
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    Incorrect,
    /// The reply named no known class.
    Abstained,
    /// The model call failed.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<String>,
    pub verdict: Verdict,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: BaselineKind,
    /// Correct over n; abstentions and failures count as wrong.
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    pub incorrect: usize,
    /// Samples that got no class, including failures.
    pub abstained: usize,
    pub failures: usize,
    /// False when any sample's model call failed.
    pub complete: bool,
    pub build_tokens: u64,
    pub run_prompt_tokens: u64,
    pub run_output_tokens: u64,
    pub mean_run_tokens: f64,
    pub transcript_digest: String,
    pub records: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn run_tokens(&self) -> u64 {
        self.run_prompt_tokens + self.run_output_tokens
    }
}

/// A report and the transcript of every call made while producing it.
#[derive(Debug, Clone)]
pub struct EvalRun {
    pub report: EvalReport,
    pub transcript: Transcript,
}

fn check_inputs(method: BaselineKind, inputs: &EvalInputs) -> Result<(), EvalError> {
    let missing = |missing| Err(EvalError::MissingInput { method, missing });
    match method {
        BaselineKind::Byoc if inputs.artifact.is_none() => missing("a trained classifier"),
        BaselineKind::Byoc => Ok(()),
        _ if inputs.spec.is_none() => missing("the initial classifier spec"),
        m if m.uses_demonstrations() && inputs.demos.is_empty() => missing("demonstrations"),
        _ => Ok(()),
    }
}

/// Classifies every sample of `split` in order and aggregates the results.
/// Per-sample model failures are recorded rather than aborting the run.
pub fn evaluate(
    method: BaselineKind,
    inputs: &EvalInputs,
    split: &Dataset,
    engine: &Engine,
) -> Result<EvalRun, EvalError> {
    check_inputs(method, inputs)?;
    if split.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut transcript = Transcript::default();
    let mut records = Vec::with_capacity(split.len());
    for s in split.samples() {
        let gold = s
            .label
            .clone()
            .ok_or_else(|| EvalError::Unlabeled(s.sample.id.clone()))?;
        let start = transcript.len();
        let result = match (method, &inputs.artifact, &inputs.spec) {
            (BaselineKind::Byoc, Some(a), _) => {
                classifier::predict_recorded(a, &s.sample.text, engine, &mut transcript)
            }
            (m, _, Some(spec)) => classifier::predict_baseline(
                m,
                spec,
                &inputs.demos,
                &s.sample.text,
                &inputs.baseline,
                engine,
                &mut transcript,
            ),
            _ => unreachable!("inputs checked"),
        };
        let calls = &transcript.entries()[start..];
        let (predicted, verdict, error) = match result {
            Ok(o) if o.class == gold => (Some(o.class), Verdict::Correct, None),
            Ok(o) => (Some(o.class), Verdict::Incorrect, None),
            Err(e @ ClassifyError::NoMatch { .. }) => (None, Verdict::Abstained, Some(e.to_string())),
            Err(e) => {
                tracing::warn!(id = %s.sample.id, error = %e, "sample failed");
                (None, Verdict::Failed, Some(e.to_string()))
            }
        };
        records.push(SampleRecord {
            id: s.sample.id.clone(),
            gold,
            predicted,
            verdict,
            prompt_tokens: calls.iter().map(|c| c.completion.prompt_tokens).sum(),
            output_tokens: calls.iter().map(|c| c.completion.output_tokens).sum(),
            calls: calls.len(),
            error,
        });
    }

    let n = records.len();
    let count = |v: Verdict| records.iter().filter(|r| r.verdict == v).count();
    let correct = count(Verdict::Correct);
    let failures = count(Verdict::Failed);
    let run_prompt_tokens: u64 = records.iter().map(|r| r.prompt_tokens).sum();
    let run_output_tokens: u64 = records.iter().map(|r| r.output_tokens).sum();
    let report = EvalReport {
        method,
        accuracy: correct as f64 / n as f64,
        n,
        correct,
        incorrect: count(Verdict::Incorrect),
        abstained: count(Verdict::Abstained) + failures,
        failures,
        complete: failures == 0,
        build_tokens: match (method, &inputs.artifact) {
            (BaselineKind::Byoc, Some(a)) => a.provenance.build_tokens,
            _ => 0,
        },
        run_prompt_tokens,
        run_output_tokens,
        mean_run_tokens: (run_prompt_tokens + run_output_tokens) as f64 / n as f64,
        transcript_digest: transcript.digest(),
        records,
    };
    Ok(EvalRun { report, transcript })
}

/// A side-by-side rendering of several reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub table: String,
    /// One report per line.
    pub jsonl: String,
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Renders reports as an aligned table, rows in method order.
pub fn compare(reports: &[EvalReport]) -> Comparison {
    let mut sorted: Vec<&EvalReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.method);

    let header = ["Approach", "Build tokens", "Run tokens", "Accuracy", "n"].map(String::from);
    let rows: Vec<[String; 5]> = sorted
        .iter()
        .map(|r| {
            [
                r.method.title().to_string(),
                thousands(r.build_tokens),
                thousands(r.mean_run_tokens.round() as u64),
                format!("{:.1}%", r.accuracy * 100.0),
                r.n.to_string(),
            ]
        })
        .collect();
    let widths: [usize; 5] = std::array::from_fn(|c| {
        rows.iter()
            .chain([&header])
            .map(|r| r[c].chars().count())
            .max()
            .unwrap_or(0)
    });
    let rule = widths.map(|w| "-".repeat(w));
    let mut table = String::new();
    for cells in [&header, &rule].into_iter().chain(&rows) {
        let line: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect();
        table.push_str(line.join("  ").trim_end());
        table.push('\n');
    }
    Comparison {
        table,
        jsonl: export_reports(&sorted.into_iter().cloned().collect::<Vec<_>>()),
    }
}

pub fn export_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

pub fn import_reports(text: &str) -> Result<Vec<EvalReport>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Import {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
