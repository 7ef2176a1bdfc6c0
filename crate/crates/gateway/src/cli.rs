//! The `byoc` command line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byoc_core::classifier::{BaselineKind, Demonstration};
use byoc_core::evalharness::{self, EvalReport};
use byoc_core::promptkit::ClassifierSpec;
use byoc_core::store::{RecordKind, Store};
use byoc_core::trainer::{Phase, ORIGINAL_TEXT_META};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::config::{BackendChoice, ConfigError, GatewayConfig, DEFAULT_PORT, DEFAULT_STORE};
use crate::error::ApiError;
use crate::service::{CreateSession, EvaluationRequest, Service};

#[derive(Debug, Parser)]
#[command(name = "byoc", version, about = "Build, run and evaluate description-based text classifiers")]
struct Cli {
    /// Store directory for classifiers, sessions and reports.
    #[arg(long, global = true, env = "BYOC_STORE")]
    store: Option<PathBuf>,
    /// `live` or `mock:<script.json>`.
    #[arg(long, global = true)]
    backend: Option<BackendChoice>,
    /// TOML settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Port for `serve`.
    #[arg(long, global = true)]
    port: Option<u16>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a classifier by answering questions and labeling samples.
    Train(TrainArgs),
    /// Classify one text with a stored classifier.
    Classify(ClassifyArgs),
    /// Measure a method on a labeled split.
    Evaluate(EvaluateArgs),
    /// Tabulate evaluation reports.
    Compare(CompareArgs),
    /// Run the HTTP service.
    Serve,
    /// Write a stored classifier to a file.
    Export(ExportArgs),
    /// Add an exported classifier to the store.
    Import(ImportArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// JSON file with `purpose` and `classes` (`name`, `description`).
    #[arg(long, required_unless_present = "resume")]
    spec: Option<PathBuf>,
    /// JSONL samples to annotate.
    #[arg(long, required_unless_present = "resume")]
    samples: Option<PathBuf>,
    /// Only these sample ids, in this order.
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    /// Only the first N samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Questions per sample.
    #[arg(long)]
    questions: Option<usize>,
    /// Name for the finished classifier.
    #[arg(long)]
    name: String,
    /// JSON object of class name to replacement description.
    #[arg(long)]
    edits: Option<PathBuf>,
    /// Continue a checkpointed session.
    #[arg(long)]
    resume: Option<String>,
    /// Id for a new session.
    #[arg(long, conflicts_with = "resume")]
    session_id: Option<String>,
    /// Overwrite a classifier with the same name.
    #[arg(long)]
    replace: bool,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    artifact: String,
    /// Text file, or `-` for stdin.
    #[arg(long = "in", conflicts_with = "text", required_unless_present = "text")]
    input: Option<PathBuf>,
    #[arg(long)]
    text: Option<String>,
    /// Child classifier for a parent class, as `CLASS=ID`.
    #[arg(long, value_parser = parse_child)]
    child: Vec<(String, String)>,
    /// Print the full outcome as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// zero_shot, zero_shot_summary, few_shot, few_shot_explanation, few_shot_qa or byoc.
    #[arg(long)]
    method: BaselineKind,
    /// Labeled JSONL split.
    #[arg(long)]
    split: PathBuf,
    /// Stored classifier, for `byoc`.
    #[arg(long)]
    artifact: Option<String>,
    /// Initial spec JSON, for the other methods.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// JSONL demonstrations for few-shot methods.
    #[arg(long)]
    demos: Option<PathBuf>,
    /// Take demonstrations from a training session.
    #[arg(long)]
    demos_session: Option<String>,
    /// Write the report as one JSON line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// JSONL report files.
    reports: Vec<PathBuf>,
    /// Stored report ids.
    #[arg(long = "id")]
    ids: Vec<String>,
    /// Write the combined reports, one per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    artifact: String,
    /// Destination file; stdout if absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    replace: bool,
}

fn parse_child(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .filter(|(c, id)| !c.is_empty() && !id.is_empty())
        .map(|(c, id)| (c.to_string(), id.to_string()))
        .ok_or_else(|| format!("expected CLASS=ID, got {s:?}"))
}

#[derive(Debug)]
enum Failure {
    /// Bad invocation or settings; exit 2.
    Usage(String),
    /// The operation failed; exit 1.
    Domain(String),
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure::Domain(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(e.to_string())
    }
}

struct Context {
    config: GatewayConfig,
    store_path: PathBuf,
    backend: BackendChoice,
    port: u16,
}

impl Context {
    fn store(&self) -> Result<Store, Failure> {
        Store::open(&self.store_path).map_err(|e| Failure::Domain(e.to_string()))
    }

    fn service(&self) -> Result<Service, Failure> {
        let engine = self.config.engine(&self.backend)?;
        Ok(Service::new(self.store()?, engine, self.config.clone()))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Failure::Domain(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Parses `args` and runs the command. Returns the process exit status.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli, input, out, err) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}");
            2
        }
        Err(Failure::Domain(m)) => {
            let _ = writeln!(err, "error: {m}");
            1
        }
    }
}

fn dispatch(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(path) => GatewayConfig::load(path)?,
        None => GatewayConfig::default(),
    };
    let ctx = Context {
        store_path: cli
            .store
            .clone()
            .or_else(|| config.store.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
        backend: cli
            .backend
            .clone()
            .or_else(|| config.backend.clone())
            .unwrap_or(BackendChoice::Live),
        port: cli.port.or(config.port).unwrap_or(DEFAULT_PORT),
        config,
    };
    match cli.command {
        Command::Train(a) => train(&ctx, a, input, out),
        Command::Classify(a) => classify(&ctx, a, input, out),
        Command::Evaluate(a) => evaluate(&ctx, a, out),
        Command::Compare(a) => compare(&ctx, a, out),
        Command::Serve => serve(&ctx, err),
        Command::Export(a) => export(&ctx, a, out),
        Command::Import(a) => import(&ctx, a, out),
    }
}

fn ask(
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    prompt: &str,
    session: &str,
) -> Result<String, Failure> {
    write!(out, "{prompt}")?;
    out.flush()?;
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(Failure::Domain(format!(
            "input ended before training finished; continue with --resume {session}"
        )));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn train(ctx: &Context, a: TrainArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure> {
    let edits: BTreeMap<String, String> = match &a.edits {
        Some(p) => read_json(p)?,
        None => BTreeMap::new(),
    };
    let service = ctx.service()?;
    let sid = match a.resume {
        Some(id) => id,
        None => {
            let spec0: ClassifierSpec = read_json(a.spec.as_deref().expect("required by clap"))?;
            let mut config = ctx.config.train.clone();
            if let Some(m) = a.questions {
                config.questions_per_sample = m;
            }
            let mut req = CreateSession {
                spec0,
                samples: Vec::new(),
                dataset: a.samples.clone(),
                sample_ids: a.ids.clone(),
                config: Some(config),
            };
            if let Some(limit) = a.limit {
                let d = byoc_core::corpus::load_dataset(
                    a.samples.as_deref().expect("required by clap"),
                    byoc_core::corpus::SplitTag::Train,
                )
                .map_err(|e| Failure::Domain(e.to_string()))?;
                if req.sample_ids.is_empty() {
                    req.sample_ids = d.samples().iter().map(|s| s.sample.id.clone()).collect();
                }
                req.sample_ids.truncate(limit);
            }
            let id = a
                .session_id
                .unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
            service.create_session_with_id(&id, req)?.session_id
        }
    };
    writeln!(out, "session {sid}")?;

    let mut shown: Option<usize> = None;
    loop {
        let snap = service.snapshot(&sid)?;
        if snap.complete {
            break;
        }
        let i = snap.cursor;
        let state = &snap.states[i];
        if shown != Some(i) {
            writeln!(out, "\n=== Sample {}/{} [{}] ===", i + 1, snap.states.len(), state.sample.id)?;
            writeln!(out, "{}", state.sample.text)?;
            if state.sample.meta.contains_key(ORIGINAL_TEXT_META) {
                writeln!(out, "(summary of a longer text)")?;
            }
            shown = Some(i);
        }
        match state.phase {
            Phase::Asking if state.qa.len() < snap.config.questions_per_sample => {
                let q = service.question(&sid)?;
                writeln!(out, "\nQ{}: {}", state.qa.len() + 1, q.question)?;
                writeln!(out, "   (asked because: {})", q.explanation)?;
                let answer = loop {
                    let a = ask(input, out, "answer> ", &sid)?;
                    if !a.trim().is_empty() {
                        break a;
                    }
                };
                service.answer(&sid, &answer)?;
            }
            Phase::Asking => {
                service.predict(&sid)?;
            }
            Phase::Predicted | Phase::Labeled => {
                let p = state.prediction.as_ref().expect("predicted sample has a prediction");
                match &p.class {
                    Some(c) => writeln!(out, "\nModel prediction: {c}")?,
                    None => writeln!(out, "\nModel could not decide (answered {:?})", p.raw_class)?,
                }
                writeln!(out, "Reflection: {}", p.reflection)?;
                let names = snap.spec.class_names().join(", ");
                let label = loop {
                    let l = ask(input, out, &format!("label [{names}]> "), &sid)?;
                    if let Some(name) = snap
                        .spec
                        .class_names()
                        .into_iter()
                        .find(|n| n.eq_ignore_ascii_case(l.trim()))
                    {
                        break name.to_string();
                    }
                    writeln!(out, "choose one of: {names}")?;
                };
                let explanation = ask(input, out, "explanation (empty keeps the reflection)> ", &sid)?;
                let update = service.label(&sid, &label, &explanation)?;
                if update.previous_description == update.description {
                    writeln!(out, "Description of {} unchanged.", update.class)?;
                } else {
                    writeln!(out, "Description of {} is now:\n  {}", update.class, update.description)?;
                }
            }
            Phase::Updated => unreachable!("the cursor moves past updated samples"),
        }
    }

    let done = service.finalize(&sid, &a.name, &edits, a.replace)?;
    writeln!(out, "\nFinal class descriptions:")?;
    for c in &done.artifact.spec.classes {
        writeln!(out, "  {}: {}", c.name, c.description)?;
    }
    writeln!(
        out,
        "saved classifier {} ({} build tokens)",
        done.artifact_id, done.artifact.provenance.build_tokens
    )?;
    Ok(())
}

fn classify(ctx: &Context, a: ClassifyArgs, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<(), Failure> {
    let text = match (&a.text, &a.input) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) if p.as_os_str() == "-" => {
            let mut s = String::new();
            input.read_to_string(&mut s)?;
            s
        }
        (None, Some(p)) => std::fs::read_to_string(p)
            .map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?,
        (None, None) => unreachable!("required by clap"),
    };
    let service = ctx.service()?;
    let outcome = if a.child.is_empty() {
        service.classify(&a.artifact, &text)?
    } else {
        service.classify_hierarchical(&a.artifact, &a.child.into_iter().collect(), &text)?
    };
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&outcome).expect("outcome serializes"))?;
    } else {
        if let Some(p) = &outcome.parent_class {
            writeln!(out, "parent: {p}")?;
        }
        writeln!(out, "class: {}", outcome.class)?;
        writeln!(out, "reflection: {}", outcome.reflection)?;
        writeln!(out, "tokens: {}", outcome.total_tokens())?;
    }
    Ok(())
}

fn evaluate(ctx: &Context, a: EvaluateArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let spec = a.spec.as_deref().map(read_json::<ClassifierSpec>).transpose()?;
    let demos: Vec<Demonstration> = match &a.demos {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let service = ctx.service()?;
    let created = service.evaluate(&EvaluationRequest {
        method: a.method,
        artifact_id: a.artifact,
        spec,
        split: Vec::new(),
        dataset: Some(a.split),
        demos,
        demos_session: a.demos_session,
    })?;
    let cmp = evalharness::compare(std::slice::from_ref(&created.report));
    write!(out, "{}", cmp.table)?;
    writeln!(out, "report {}", created.report_id)?;
    if let Some(path) = a.out {
        std::fs::write(&path, cmp.jsonl)
            .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn compare(ctx: &Context, a: CompareArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut reports: Vec<EvalReport> = Vec::new();
    for p in &a.reports {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?;
        reports.extend(
            evalharness::import_reports(&text)
                .map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?,
        );
    }
    if !a.ids.is_empty() {
        let store = ctx.store()?;
        for id in &a.ids {
            reports.push(store.load_report(id).map_err(|e| Failure::Domain(e.to_string()))?);
        }
    }
    if reports.is_empty() {
        return Err(Failure::Usage("no reports given".into()));
    }
    let cmp = evalharness::compare(&reports);
    write!(out, "{}", cmp.table)?;
    if let Some(path) = a.out {
        std::fs::write(&path, cmp.jsonl)
            .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn serve(ctx: &Context, err: &mut dyn Write) -> Result<(), Failure> {
    let service = Arc::new(ctx.service()?);
    let addr = format!("{}:{}", ctx.config.host, ctx.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::Domain(format!("cannot listen on {addr}: {e}")))?;
        writeln!(err, "listening on http://{}", listener.local_addr()?)?;
        crate::http::serve_on(listener, service, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}

fn export(ctx: &Context, a: ExportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let store = ctx.store()?;
    let text = store
        .export_artifact(&a.artifact)
        .map_err(|e| Failure::Domain(e.to_string()))?;
    match a.out {
        Some(path) => std::fs::write(&path, text)
            .map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?,
        None => write!(out, "{text}")?,
    }
    Ok(())
}

fn import(ctx: &Context, a: ImportArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| Failure::Domain(format!("{}: {e}", a.input.display())))?;
    let store = ctx.store()?;
    let id = store
        .import_artifact(&text, a.replace)
        .map_err(|e| Failure::Domain(e.to_string()))?;
    debug_assert!(store.exists(RecordKind::Artifact, &id));
    writeln!(out, "imported classifier {id}")?;
    Ok(())
}
