//! Directory-backed persistence for artifacts, sessions, reports and
//! transcripts.
//!
//! Layout under the root:
//!
//! ```text
//! artifacts/<id>.json    sessions/<id>.json    reports/<id>.json
//! transcripts/<ref>.jsonl
//! ```
//!
//! Each `.json` file is an envelope carrying the schema version, id, name,
//! kind, creation time, a store-wide sequence number and the payload.
//! Writes go to a temporary file in the same directory and are renamed into
//! place, so readers never observe a partial record.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierArtifact, ARTIFACT_SCHEMA_VERSION};
use crate::evalharness::EvalReport;
use crate::llm::{Transcript, TranscriptRecord};
use crate::trainer::{TrainError, TrainingSession};

pub const STORE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no {kind} with id {id:?}")]
    NotFound { kind: RecordKind, id: String },
    #[error("{kind} {id:?} already exists; pass replace to overwrite")]
    Collision { kind: RecordKind, id: String },
    #[error("record has schema version {found}, this build reads version {expected}")]
    Migration { found: u32, expected: u32 },
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("invalid id {0:?}")]
    InvalidId(String),
    #[error("invalid record: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Artifact,
    Session,
    Report,
}

impl RecordKind {
    fn dir(self) -> &'static str {
        match self {
            RecordKind::Artifact => "artifacts",
            RecordKind::Session => "sessions",
            RecordKind::Report => "reports",
        }
    }
}

impl std::fmt::Display for RecordKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecordKind::Artifact => "artifact",
            RecordKind::Session => "session",
            RecordKind::Report => "report",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema_version: u32,
    pub id: String,
    pub name: String,
    pub kind: RecordKind,
    /// RFC 3339, UTC.
    pub created_at: String,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_ref: Option<String>,
    pub payload: T,
}

/// An envelope without its payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub schema_version: u32,
    pub id: String,
    pub name: String,
    pub kind: RecordKind,
    pub created_at: String,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_ref: Option<String>,
}

/// Lowercase ASCII letters and digits, other runs collapsed to `-`.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.trim().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

fn check_id(id: &str) -> Result<(), StoreError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.starts_with(|c: char| c.is_ascii_alphanumeric())
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

pub struct Store {
    root: PathBuf,
    // Serializes sequence assignment within this process.
    write_lock: Mutex<()>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

impl Store {
    /// Opens a store, creating its directories if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for dir in ["artifacts", "sessions", "reports", "transcripts"] {
            let p = root.join(dir);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        Ok(Store {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: RecordKind, id: &str) -> PathBuf {
        self.root.join(kind.dir()).join(format!("{id}.json"))
    }

    fn transcript_path(&self, reference: &str) -> PathBuf {
        self.root.join("transcripts").join(format!("{reference}.jsonl"))
    }

    fn next_seq(&self) -> Result<u64, StoreError> {
        let mut max = 0;
        for kind in [RecordKind::Artifact, RecordKind::Session, RecordKind::Report] {
            for meta in self.list(kind)? {
                max = max.max(meta.seq);
            }
        }
        Ok(max + 1)
    }

    fn atomic_write(&self, path: &Path, bytes: &[u8], replace: bool) -> Result<bool, StoreError> {
        let dir = path.parent().expect("record paths have a parent");
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        tmp.write_all(bytes).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
        if replace {
            tmp.persist(path).map_err(|e| StoreError::Io {
                path: path.to_path_buf(),
                source: e.error,
            })?;
            Ok(true)
        } else {
            match tmp.persist_noclobber(path) {
                Ok(_) => Ok(true),
                Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => Ok(false),
                Err(e) => Err(StoreError::Io {
                    path: path.to_path_buf(),
                    source: e.error,
                }),
            }
        }
    }

    fn write_record<T: Serialize>(
        &self,
        kind: RecordKind,
        id: &str,
        name: &str,
        payload: &T,
        transcript: Option<&Transcript>,
        replace: bool,
    ) -> Result<(), StoreError> {
        check_id(id)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = self.path(kind, id);
        if !replace && path.exists() {
            return Err(StoreError::Collision {
                kind,
                id: id.to_string(),
            });
        }
        let transcript_ref = match transcript {
            Some(t) => {
                let reference = format!("{kind}-{id}");
                self.atomic_write(&self.transcript_path(&reference), t.to_jsonl().as_bytes(), true)?;
                Some(reference)
            }
            None => None,
        };
        let envelope = Envelope {
            schema_version: STORE_SCHEMA_VERSION,
            id: id.to_string(),
            name: name.to_string(),
            kind,
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            seq: self.next_seq()?,
            transcript_ref,
            payload,
        };
        let mut text = serde_json::to_string_pretty(&envelope).expect("record serializes");
        text.push('\n');
        if !self.atomic_write(&path, text.as_bytes(), replace)? {
            return Err(StoreError::Collision {
                kind,
                id: id.to_string(),
            });
        }
        Ok(())
    }

    fn read_text(&self, kind: RecordKind, id: &str) -> Result<String, StoreError> {
        check_id(id).map_err(|_| StoreError::NotFound {
            kind,
            id: id.to_string(),
        })?;
        let path = self.path(kind, id);
        fs::read_to_string(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::NotFound {
                kind,
                id: id.to_string(),
            },
            _ => StoreError::Io { path, source: e },
        })
    }

    fn parse_envelope<T: DeserializeOwned>(
        path: &Path,
        text: &str,
    ) -> Result<Envelope<T>, StoreError> {
        let meta: RecordMeta = serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if meta.schema_version != STORE_SCHEMA_VERSION {
            return Err(StoreError::Migration {
                found: meta.schema_version,
                expected: STORE_SCHEMA_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    fn read_record<T: DeserializeOwned>(
        &self,
        kind: RecordKind,
        id: &str,
    ) -> Result<Envelope<T>, StoreError> {
        let text = self.read_text(kind, id)?;
        Self::parse_envelope(&self.path(kind, id), &text)
    }

    /// Record headers of one kind, newest first.
    pub fn list(&self, kind: RecordKind) -> Result<Vec<RecordMeta>, StoreError> {
        let dir = self.root.join(kind.dir());
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let meta: RecordMeta =
                serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
            out.push(meta);
        }
        out.sort_by(|a, b| b.seq.cmp(&a.seq).then_with(|| a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn meta(&self, kind: RecordKind, id: &str) -> Result<RecordMeta, StoreError> {
        let text = self.read_text(kind, id)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: self.path(kind, id),
            message: e.to_string(),
        })
    }

    pub fn exists(&self, kind: RecordKind, id: &str) -> bool {
        check_id(id).is_ok() && self.path(kind, id).exists()
    }

    /// Saves an artifact under the slug of its name and returns the id.
    pub fn save_artifact(
        &self,
        artifact: &ClassifierArtifact,
        transcript: Option<&Transcript>,
        replace: bool,
    ) -> Result<String, StoreError> {
        artifact
            .validate()
            .map_err(|e| StoreError::Invalid(e.to_string()))?;
        let id = slug(&artifact.name);
        if id.is_empty() {
            return Err(StoreError::InvalidId(artifact.name.clone()));
        }
        self.write_record(RecordKind::Artifact, &id, &artifact.name, artifact, transcript, replace)?;
        Ok(id)
    }

    pub fn load_artifact(&self, id: &str) -> Result<ClassifierArtifact, StoreError> {
        let env: Envelope<ClassifierArtifact> = self.read_record(RecordKind::Artifact, id)?;
        check_artifact_version(&env.payload)?;
        Ok(env.payload)
    }

    /// The artifact record exactly as stored, for copying to another store.
    pub fn export_artifact(&self, id: &str) -> Result<String, StoreError> {
        let text = self.read_text(RecordKind::Artifact, id)?;
        let env: Envelope<ClassifierArtifact> =
            Self::parse_envelope(&self.path(RecordKind::Artifact, id), &text)?;
        check_artifact_version(&env.payload)?;
        Ok(text)
    }

    /// Adds an exported artifact record to this store and returns its id.
    pub fn import_artifact(&self, text: &str, replace: bool) -> Result<String, StoreError> {
        let env: Envelope<ClassifierArtifact> = Self::parse_envelope(Path::new("<import>"), text)?;
        if env.kind != RecordKind::Artifact {
            return Err(StoreError::Invalid(format!("expected an artifact, found a {}", env.kind)));
        }
        check_artifact_version(&env.payload)?;
        self.save_artifact(&env.payload, None, replace)
    }

    /// Checkpoints a training session, overwriting the previous checkpoint.
    pub fn save_session(&self, id: &str, session: &TrainingSession) -> Result<(), StoreError> {
        self.write_record(RecordKind::Session, id, id, session, None, true)
    }

    pub fn load_session(&self, id: &str) -> Result<TrainingSession, StoreError> {
        let text = self.read_text(RecordKind::Session, id)?;
        let env: Envelope<serde_json::Value> =
            Self::parse_envelope(&self.path(RecordKind::Session, id), &text)?;
        let payload = serde_json::to_string(&env.payload).expect("value serializes");
        TrainingSession::from_checkpoint(&payload).map_err(|e| match e {
            TrainError::Checkpoint(message) => StoreError::Corrupt {
                path: self.path(RecordKind::Session, id),
                message,
            },
            other => StoreError::Invalid(other.to_string()),
        })
    }

    pub fn save_report(
        &self,
        id: &str,
        report: &EvalReport,
        transcript: Option<&Transcript>,
        replace: bool,
    ) -> Result<(), StoreError> {
        self.write_record(RecordKind::Report, id, report.method.as_str(), report, transcript, replace)
    }

    pub fn load_report(&self, id: &str) -> Result<EvalReport, StoreError> {
        Ok(self.read_record::<EvalReport>(RecordKind::Report, id)?.payload)
    }

    pub fn load_transcript(&self, reference: &str) -> Result<Vec<TranscriptRecord>, StoreError> {
        check_id(reference)?;
        let path = self.transcript_path(reference);
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::InvalidId(reference.to_string()),
            _ => StoreError::Io {
                path: path.clone(),
                source: e,
            },
        })?;
        Transcript::parse_jsonl(&text).map_err(|e| StoreError::Corrupt {
            path,
            message: e.to_string(),
        })
    }
}

fn check_artifact_version(a: &ClassifierArtifact) -> Result<(), StoreError> {
    if a.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(StoreError::Migration {
            found: a.schema_version,
            expected: ARTIFACT_SCHEMA_VERSION,
        });
    }
    Ok(())
}
