//! JSON routes over [`Service`]. Model calls block, so every handler runs
//! its work on the blocking pool.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::error::{ApiError, ErrorCode};
use crate::service::{CreateSession, EvaluationRequest, Service};

type Shared = Arc<Service>;
type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorCode::Backend, format!("worker failed: {e}")))?
        .map(Json)
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    let bytes = if bytes.is_empty() { &b"{}"[..] } else { bytes };
    serde_json::from_slice(bytes).map_err(|e| ApiError::validation(format!("request body: {e}")))
}

#[derive(Deserialize)]
struct AnswerBody {
    answer: String,
}

#[derive(Deserialize)]
struct LabelBody {
    class: String,
    #[serde(default)]
    explanation: String,
}

#[derive(Deserialize)]
struct FinalizeBody {
    name: String,
    #[serde(default)]
    edits: BTreeMap<String, String>,
    #[serde(default)]
    replace: bool,
}

#[derive(Deserialize)]
struct ClassifyBody {
    text: String,
    /// Parent class to child artifact id, for two-level routing.
    #[serde(default)]
    children: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Tokens {
    prompt: u64,
    output: u64,
    total: u64,
}

#[derive(Serialize)]
struct ClassifyReply {
    class: String,
    thoughts: String,
    reflection: String,
    tokens: Tokens,
    calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    parent_class: Option<String>,
}

#[derive(Serialize)]
struct ReportCreated {
    report_id: String,
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/classifiers/sessions", post(create_session))
        .route("/sessions/{id}", get(snapshot))
        .route("/sessions/{id}/question", post(question))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/predict", post(predict))
        .route("/sessions/{id}/label", post(label))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/classifiers", get(list_classifiers))
        .route("/classifiers/{id}", get(get_classifier))
        .route("/classifiers/{id}/classify", post(classify))
        .route("/evaluations", post(create_evaluation))
        .route("/evaluations/{id}", get(get_evaluation))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such route") })
        .with_state(service)
}

async fn create_session(State(s): State<Shared>, b: Bytes) -> ApiResult<impl Serialize> {
    let req: CreateSession = body(&b)?;
    blocking(move || s.create_session(req)).await
}

async fn snapshot(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    blocking(move || s.snapshot(&id)).await
}

async fn question(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    blocking(move || s.question(&id)).await
}

async fn answer(
    State(s): State<Shared>,
    Path(id): Path<String>,
    b: Bytes,
) -> ApiResult<impl Serialize> {
    let req: AnswerBody = body(&b)?;
    blocking(move || s.answer(&id, &req.answer)).await
}

async fn predict(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<impl Serialize> {
    blocking(move || s.predict(&id)).await
}

async fn label(
    State(s): State<Shared>,
    Path(id): Path<String>,
    b: Bytes,
) -> ApiResult<impl Serialize> {
    let req: LabelBody = body(&b)?;
    blocking(move || {
        let out = s.label(&id, &req.class, &req.explanation)?;
        Ok(serde_json::json!({ "updated_descriptions": out.descriptions, "update": out }))
    })
    .await
}

async fn finalize(
    State(s): State<Shared>,
    Path(id): Path<String>,
    b: Bytes,
) -> ApiResult<impl Serialize> {
    let req: FinalizeBody = body(&b)?;
    blocking(move || s.finalize(&id, &req.name, &req.edits, req.replace)).await
}

async fn list_classifiers(State(s): State<Shared>) -> ApiResult<impl Serialize> {
    blocking(move || s.list_classifiers()).await
}

async fn get_classifier(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<impl Serialize> {
    blocking(move || s.classifier(&id)).await
}

async fn classify(
    State(s): State<Shared>,
    Path(id): Path<String>,
    b: Bytes,
) -> ApiResult<impl Serialize> {
    let req: ClassifyBody = body(&b)?;
    blocking(move || {
        let o = if req.children.is_empty() {
            s.classify(&id, &req.text)?
        } else {
            s.classify_hierarchical(&id, &req.children, &req.text)?
        };
        Ok(ClassifyReply {
            tokens: Tokens {
                prompt: o.prompt_tokens,
                output: o.output_tokens,
                total: o.total_tokens(),
            },
            class: o.class,
            thoughts: o.thoughts,
            reflection: o.reflection,
            calls: o.calls,
            parent_class: o.parent_class,
        })
    })
    .await
}

async fn create_evaluation(State(s): State<Shared>, b: Bytes) -> ApiResult<impl Serialize> {
    let req: EvaluationRequest = body(&b)?;
    blocking(move || {
        let created = s.evaluate(&req)?;
        Ok(ReportCreated {
            report_id: created.report_id,
        })
    })
    .await
}

async fn get_evaluation(
    State(s): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<impl Serialize> {
    blocking(move || s.evaluation(&id)).await
}

/// Serves until `shutdown` resolves, then writes all cached sessions.
pub async fn serve_on(
    listener: TcpListener,
    service: Shared,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let flushed = tokio::task::spawn_blocking(move || service.flush()).await;
    if let Ok(Err(e)) = flushed {
        tracing::error!(error = %e, "flushing sessions at shutdown failed");
    }
    Ok(())
}

/// A server on its own runtime thread, stopped on drop.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl BackgroundServer {
    pub fn start(service: Shared, addr: SocketAddr) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve_on(listener, service, async {
                let _ = stopped.await;
            }))
        });
        Ok(BackgroundServer {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
