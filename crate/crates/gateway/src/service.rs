//! Operations shared by the HTTP routes and the command line. Both drivers
//! go through this type, so a scripted interaction yields the same stored
//! artifact either way.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use byoc_core::classifier::{self, ClassifierArtifact, Demonstration, PredictionOutcome};
use byoc_core::corpus::{self, Dataset, LabeledSample, Sample, SplitTag};
use byoc_core::evalharness::{self, EvalInputs, EvalReport};
use byoc_core::llm::Engine;
use byoc_core::promptkit::ClassifierSpec;
use byoc_core::store::{RecordKind, RecordMeta, Store};
use byoc_core::trainer::{
    GeneratedQuestion, InteractivePrediction, Phase, SessionSnapshot, TrainConfig,
    TrainingSession, UpdateOutcome,
};
use serde::{Deserialize, Serialize};

use crate::config::GatewayConfig;
use crate::error::{ApiError, ErrorCode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleInput {
    Text(String),
    Sample {
        #[serde(default)]
        id: Option<String>,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub spec0: ClassifierSpec,
    /// Inline texts; ids default to `s<index>`.
    #[serde(default)]
    pub samples: Vec<SampleInput>,
    /// A JSONL dataset readable by the server, optionally narrowed to ids.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub sample_ids: Vec<String>,
    #[serde(default)]
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerReply {
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<InteractivePrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finalized {
    pub artifact_id: String,
    pub artifact: ClassifierArtifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRequest {
    pub method: classifier::BaselineKind,
    #[serde(default)]
    pub artifact_id: Option<String>,
    #[serde(default)]
    pub spec: Option<ClassifierSpec>,
    /// Inline labeled samples.
    #[serde(default)]
    pub split: Vec<LabeledSample>,
    /// Or a JSONL dataset readable by the server.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub demos: Vec<Demonstration>,
    /// Take demonstrations from a training session's labeled samples.
    #[serde(default)]
    pub demos_session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCreated {
    pub report_id: String,
    pub report: EvalReport,
}

type SessionSlot = Arc<Mutex<TrainingSession>>;

pub struct Service {
    store: Store,
    engine: Engine,
    config: GatewayConfig,
    sessions: Mutex<HashMap<String, SessionSlot>>,
}

impl Service {
    pub fn new(store: Store, engine: Engine, config: GatewayConfig) -> Self {
        Service {
            store,
            engine,
            config,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn slot(&self, id: &str) -> Result<SessionSlot, ApiError> {
        let mut map = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(slot) = map.get(id) {
            return Ok(slot.clone());
        }
        let session = self.store.load_session(id)?;
        let slot = Arc::new(Mutex::new(session));
        map.insert(id.to_string(), slot.clone());
        Ok(slot)
    }

    /// Runs `op` under the session's lock and checkpoints the session
    /// afterwards, whether or not `op` succeeded.
    fn with_session<T>(
        &self,
        id: &str,
        op: impl FnOnce(&mut TrainingSession, &Engine) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let slot = self.slot(id)?;
        let mut session = slot.lock().unwrap_or_else(|p| p.into_inner());
        let result = op(&mut session, &self.engine);
        self.store.save_session(id, &session)?;
        result
    }

    fn samples_for(&self, req: &CreateSession) -> Result<Vec<Sample>, ApiError> {
        let mut samples: Vec<Sample> = req
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                SampleInput::Text(text) => Sample::new(format!("s{i}"), text.clone()),
                SampleInput::Sample { id, text } => {
                    Sample::new(id.clone().unwrap_or_else(|| format!("s{i}")), text.clone())
                }
            })
            .collect();
        if let Some(path) = &req.dataset {
            let d = corpus::load_dataset(path, SplitTag::Train)
                .map_err(|e| ApiError::validation(e.to_string()))?;
            if req.sample_ids.is_empty() {
                samples.extend(d.samples().iter().map(|s| s.sample.clone()));
            } else {
                for id in &req.sample_ids {
                    let s = d.get(id).ok_or_else(|| {
                        ApiError::validation(format!("dataset has no sample {id:?}"))
                    })?;
                    samples.push(s.sample.clone());
                }
            }
        } else if !req.sample_ids.is_empty() {
            return Err(ApiError::validation("sample_ids need a dataset"));
        }
        Ok(samples)
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionCreated, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.create_session_with_id(&id, req)
    }

    pub fn create_session_with_id(
        &self,
        id: &str,
        req: CreateSession,
    ) -> Result<SessionCreated, ApiError> {
        if self.store.exists(RecordKind::Session, id) {
            return Err(ApiError::new(ErrorCode::State, format!("session {id:?} already exists")));
        }
        let samples = self.samples_for(&req)?;
        let config = req.config.unwrap_or_else(|| self.config.train.clone());
        let session = TrainingSession::start(req.spec0, samples, config, &self.engine)?;
        self.store.save_session(id, &session)?;
        self.sessions
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id.to_string(), Arc::new(Mutex::new(session)));
        Ok(SessionCreated {
            session_id: id.to_string(),
        })
    }

    pub fn snapshot(&self, id: &str) -> Result<SessionSnapshot, ApiError> {
        let slot = self.slot(id)?;
        let session = slot.lock().unwrap_or_else(|p| p.into_inner());
        Ok(session.snapshot())
    }

    pub fn question(&self, id: &str) -> Result<GeneratedQuestion, ApiError> {
        self.with_session(id, |s, e| Ok(s.next_question(e)?))
    }

    pub fn answer(&self, id: &str, answer: &str) -> Result<AnswerReply, ApiError> {
        self.with_session(id, |s, e| {
            let phase = s.submit_answer(answer, e)?;
            let prediction = match phase {
                Phase::Predicted => s.current().and_then(|c| c.prediction.clone()),
                _ => None,
            };
            Ok(AnswerReply { phase, prediction })
        })
    }

    pub fn predict(&self, id: &str) -> Result<InteractivePrediction, ApiError> {
        self.with_session(id, |s, e| Ok(s.predict_current(e)?))
    }

    pub fn label(&self, id: &str, class: &str, explanation: &str) -> Result<UpdateOutcome, ApiError> {
        self.with_session(id, |s, e| Ok(s.submit_label(class, explanation, e)?))
    }

    pub fn finalize(
        &self,
        id: &str,
        name: &str,
        edits: &BTreeMap<String, String>,
        replace: bool,
    ) -> Result<Finalized, ApiError> {
        let slot = self.slot(id)?;
        let session = slot.lock().unwrap_or_else(|p| p.into_inner());
        let artifact = session.finalize(name, edits)?;
        let artifact_id = self
            .store
            .save_artifact(&artifact, Some(session.transcript()), replace)?;
        Ok(Finalized {
            artifact_id,
            artifact,
        })
    }

    pub fn list_classifiers(&self) -> Result<Vec<RecordMeta>, ApiError> {
        Ok(self.store.list(RecordKind::Artifact)?)
    }

    pub fn classifier(&self, id: &str) -> Result<ClassifierArtifact, ApiError> {
        Ok(self.store.load_artifact(id)?)
    }

    pub fn classify(&self, id: &str, text: &str) -> Result<PredictionOutcome, ApiError> {
        let artifact = self.store.load_artifact(id)?;
        Ok(classifier::predict(&artifact, text, &self.engine)?)
    }

    /// Routes through a parent classifier to the child registered for the
    /// predicted parent class.
    pub fn classify_hierarchical(
        &self,
        parent_id: &str,
        children: &BTreeMap<String, String>,
        text: &str,
    ) -> Result<PredictionOutcome, ApiError> {
        let parent = self.store.load_artifact(parent_id)?;
        let children = children
            .iter()
            .map(|(class, id)| Ok((class.clone(), self.store.load_artifact(id)?)))
            .collect::<Result<BTreeMap<_, _>, ApiError>>()?;
        Ok(classifier::predict_hierarchical(&parent, &children, text, &self.engine)?)
    }

    pub fn evaluation_inputs(&self, req: &EvaluationRequest) -> Result<(EvalInputs, Dataset), ApiError> {
        let split = match (&req.dataset, req.split.is_empty()) {
            (Some(path), true) => corpus::load_dataset(path, SplitTag::Test)
                .map_err(|e| ApiError::validation(e.to_string()))?,
            (None, false) => Dataset::new(SplitTag::Test, req.split.clone())
                .map_err(|e| ApiError::validation(e.to_string()))?,
            _ => return Err(ApiError::validation("give exactly one of split or dataset")),
        };
        let artifact = req
            .artifact_id
            .as_deref()
            .map(|id| self.store.load_artifact(id))
            .transpose()?;
        let mut demos = req.demos.clone();
        if let Some(sid) = &req.demos_session {
            let slot = self.slot(sid)?;
            demos.extend(slot.lock().unwrap_or_else(|p| p.into_inner()).demonstrations());
        }
        Ok((
            EvalInputs {
                spec: req.spec.clone(),
                artifact,
                demos,
                baseline: self.config.baseline.clone(),
            },
            split,
        ))
    }

    pub fn evaluate(&self, req: &EvaluationRequest) -> Result<EvaluationCreated, ApiError> {
        let (inputs, split) = self.evaluation_inputs(req)?;
        let run = evalharness::evaluate(req.method, &inputs, &split, &self.engine)?;
        let report_id = format!("{}-{}", req.method, uuid::Uuid::new_v4().simple());
        self.store
            .save_report(&report_id, &run.report, Some(&run.transcript), false)?;
        Ok(EvaluationCreated {
            report_id,
            report: run.report,
        })
    }

    pub fn evaluation(&self, id: &str) -> Result<EvalReport, ApiError> {
        Ok(self.store.load_report(id)?)
    }

    /// Writes every cached session to the store.
    pub fn flush(&self) -> Result<(), ApiError> {
        let map = self.sessions.lock().unwrap_or_else(|p| p.into_inner());
        for (id, slot) in map.iter() {
            let session = slot.lock().unwrap_or_else(|p| p.into_inner());
            self.store.save_session(id, &session)?;
        }
        Ok(())
    }
}
