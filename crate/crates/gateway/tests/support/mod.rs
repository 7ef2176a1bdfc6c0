//! Fixture files, an HTTP client and an in-process CLI runner.
#![allow(dead_code)]

#[path = "../../../core/tests/common/mod.rs"]
pub mod common;

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byoc_core::classifier::Demonstration;
use byoc_core::corpus::{save_dataset, Dataset, LabeledSample, Sample, SplitTag};
use byoc_core::llm::{Engine, PurposeTag, ScriptEntry, ScriptedBackend};
use byoc_core::store::Store;
use byoc_gateway::config::GatewayConfig;
use byoc_gateway::service::Service;
use serde_json::{json, Value};
use tempfile::TempDir;

pub const M: usize = 3;

/// Enough replies for one training run plus a few dozen predictions.
pub fn full_script() -> Vec<ScriptEntry> {
    let mut s = common::training_script(4, M);
    for i in 0..40 {
        let class = if i % 2 == 0 { "Important" } else { "Unimportant" };
        let reply = format!("Thoughts: scripted {i}\nClass: {class}\nReflection: Scripted call {i}.");
        s.push(ScriptEntry::purpose(PurposeTag::Predict, reply.clone()));
        s.push(ScriptEntry::purpose(PurposeTag::Baseline, reply));
    }
    s
}

pub struct Fixture {
    pub dir: TempDir,
    pub spec: PathBuf,
    pub samples: PathBuf,
    pub split: PathBuf,
    pub demos: PathBuf,
    pub script: PathBuf,
}

impl Fixture {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        std::fs::write(p("spec.json"), serde_json::to_string_pretty(&common::email_spec()).unwrap()).unwrap();
        let train = Dataset::new(
            SplitTag::Train,
            common::training_samples()
                .into_iter()
                .map(|(s, l)| LabeledSample::new(s, l))
                .collect(),
        )
        .unwrap();
        save_dataset(&train, p("train.jsonl")).unwrap();
        save_dataset(&test_split(), p("test.jsonl")).unwrap();
        let demos: String = common::training_samples()
            .iter()
            .map(|(s, l)| serde_json::to_string(&Demonstration::new(s.text.clone(), *l)).unwrap() + "\n")
            .collect();
        std::fs::write(p("demos.jsonl"), demos).unwrap();
        std::fs::write(p("script.json"), serde_json::to_string_pretty(&full_script()).unwrap()).unwrap();
        Fixture {
            spec: p("spec.json"),
            samples: p("train.jsonl"),
            split: p("test.jsonl"),
            demos: p("demos.jsonl"),
            script: p("script.json"),
            dir,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn backend(&self) -> String {
        format!("mock:{}", self.script.display())
    }

    /// A service on store `name` whose backend reads the fixture script.
    pub fn service(&self, name: &str) -> Arc<Service> {
        self.service_with(name, Engine::new(Arc::new(ScriptedBackend::new(full_script()))))
    }

    pub fn service_with(&self, name: &str, engine: Engine) -> Arc<Service> {
        let store = Store::open(self.path(name)).unwrap();
        Arc::new(Service::new(store, engine, GatewayConfig::default()))
    }

    pub fn create_body(&self) -> Value {
        json!({
            "spec0": common::email_spec(),
            "dataset": self.samples,
        })
    }
}

pub fn test_split() -> Dataset {
    let samples = (0..6)
        .map(|i| {
            let label = if i % 2 == 0 { "Important" } else { "Unimportant" };
            LabeledSample::new(
                Sample::new(format!("t{i}"), format!("Test email {i} about the weekly plan.")),
                label,
            )
        })
        .collect();
    Dataset::new(SplitTag::Test, samples).unwrap()
}

pub struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    pub fn new(base: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Client { agent, base }
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        let mut r = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn post(&self, path: &str, body: Value) -> (u16, Value) {
        let mut r = self
            .agent
            .post(&format!("{}{path}", self.base))
            .send_json(body)
            .unwrap();
        (r.status().as_u16(), r.body_mut().read_json().unwrap())
    }

    pub fn post_ok(&self, path: &str, body: Value) -> Value {
        let (status, v) = self.post(path, body);
        assert_eq!(status, 200, "POST {path}: {v}");
        v
    }
}

/// Runs the scripted annotation for samples `from..to` of a session.
pub fn annotate_over_http(c: &Client, sid: &str, from: usize, to: usize) {
    let labels: Vec<&str> = common::training_samples().iter().map(|(_, l)| *l).collect();
    for (i, label) in labels.iter().enumerate().take(to).skip(from) {
        for j in 1..=M {
            let q = c.post_ok(&format!("/sessions/{sid}/question"), json!({}));
            assert_eq!(q["question"], format!("Question {i}.{j}?"));
            let a = c.post_ok(&format!("/sessions/{sid}/answer"), json!({ "answer": common::answer(i, j) }));
            if j == M {
                assert_eq!(a["phase"], "predicted");
                assert_eq!(a["prediction"]["class"], common::SCRIPTED_PREDICTIONS[i]);
            }
        }
        let l = c.post_ok(
            &format!("/sessions/{sid}/label"),
            json!({ "class": label, "explanation": common::user_explanation(i) }),
        );
        let updated = l["updated_descriptions"].as_array().unwrap();
        let mine = updated.iter().find(|d| d["name"] == *label).unwrap();
        assert_eq!(mine["description"], common::updated_description(i, label));
    }
}

/// Stdin for `byoc train` that reproduces the scripted annotation.
pub fn cli_training_input(from: usize, to: usize) -> String {
    let labels: Vec<&str> = common::training_samples().iter().map(|(_, l)| *l).collect();
    let mut s = String::new();
    for (i, label) in labels.iter().enumerate().take(to).skip(from) {
        for j in 1..=M {
            s.push_str(&common::answer(i, j));
            s.push('\n');
        }
        s.push_str(label);
        s.push('\n');
        s.push_str(&common::user_explanation(i));
        s.push('\n');
    }
    s
}

pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli(args: &[&str], stdin: &str) -> CliRun {
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("byoc").chain(args.iter().copied());
    let code = byoc_gateway::cli::run(argv, &mut input, &mut out, &mut err);
    CliRun {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
