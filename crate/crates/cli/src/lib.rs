//! `subjekt`: server launcher, administration client and scripted agents.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid definition, 4 server or
//! transport error, 5 script assertion or timeout.

pub mod client;
pub mod script;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use subjekt_api::{ApiConfig, ApiError, ErrorBody, Server};
use subjekt_core::model_io::parse_definition;
use subjekt_core::scheduler::TaskView;
use subjekt_core::task::TaskKind;
use subjekt_core::{validate, RefinementRegistry, Repository, RoleAssignment, Scheduler, SchedulerEvent, Violation};

use client::Client;
use script::{AgentScript, RunOptions, StepReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Invalid { message: String, body: Option<ErrorBody> },
    #[error("server answered {status}: {}: {}", body.error, body.message)]
    Server { status: u16, body: ErrorBody },
    #[error("cannot reach {url}: {reason}")]
    Unreachable { url: String, reason: String },
    #[error("{0}")]
    Script(String),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Invalid { .. } => 3,
            CliError::Server { .. } | CliError::Unreachable { .. } => 4,
            CliError::Script(_) => 5,
            CliError::Output(_) => 1,
        }
    }

    /// Rejections of a definition document are validation failures, not
    /// server failures.
    fn definition_rejected(self) -> CliError {
        match self {
            CliError::Server { body, .. }
                if matches!(
                    body.error.as_str(),
                    "invalid_definition" | "schema_error" | "syntax_error" | "version_error"
                ) =>
            {
                let mut message = body.message.clone();
                if let Some(p) = &body.path {
                    message = format!("{p}: {message}");
                }
                for v in &body.violations {
                    message.push_str(&format!("\nerror[{}] {}: {}", v.code, v.path, v.message));
                }
                CliError::Invalid { message, body: Some(body) }
            }
            other => other,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "subjekt", version, about = "Subject-oriented process engine")]
pub struct Cli {
    /// Base URL of the task service.
    #[arg(long, global = true, env = "SUBJEKT_URL", default_value = "http://127.0.0.1:8080")]
    pub url: String,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP task service.
    Serve(ServeArgs),
    /// Check a definition document without uploading it.
    Validate { file: PathBuf },
    /// Upload a definition document.
    Upload {
        file: PathBuf,
        #[arg(long = "as", default_value = "admin")]
        user: String,
        /// Write straight into this store instead of going through a server.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Create or replace a user and their roles.
    User {
        username: String,
        /// `pid:SubjectName`, repeatable.
        #[arg(long = "role", value_parser = parse_role)]
        roles: Vec<RoleAssignment>,
        #[arg(long = "as", default_value = "admin")]
        user: String,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// List subjects the user may start.
    Processes {
        #[arg(long = "as", env = "SUBJEKT_USER")]
        user: String,
    },
    /// Start a process instance through a startable subject.
    Start {
        sid: String,
        #[arg(long = "as", env = "SUBJEKT_USER")]
        user: String,
    },
    /// List open tasks, or show one task.
    Tasks {
        #[arg(long = "as", env = "SUBJEKT_USER")]
        user: String,
        tid: Option<String>,
    },
    /// Answer a task with a JSON body such as `{"kind":"send"}`.
    Answer {
        tid: String,
        #[arg(long = "as", env = "SUBJEKT_USER")]
        user: String,
        #[arg(long)]
        body: String,
    },
    /// Show the audit view of a process instance.
    Status {
        piid: String,
        #[arg(long = "as", default_value = "admin")]
        user: String,
    },
    /// Run agent scripts, concurrently when several are given.
    RunScript {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Upper bound of the polling interval in milliseconds.
        #[arg(long, default_value_t = 200)]
        poll_ms: u64,
        /// Per-step timeout in milliseconds.
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
    },
    /// Tail the event stream.
    Watch {
        /// Replay events with a sequence number above this first.
        #[arg(long)]
        after: Option<u64>,
        /// Stop after this many events.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long = "as", default_value = "watcher")]
        user: String,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Directory served for non-API paths.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// `key=url` for the `webhook:key` refinement, repeatable.
    #[arg(long = "webhook", value_parser = parse_webhook)]
    pub webhooks: Vec<(String, String)>,
}

fn parse_role(s: &str) -> Result<RoleAssignment, String> {
    match s.split_once(':') {
        Some((pid, name)) if !pid.is_empty() && !name.is_empty() => {
            Ok(RoleAssignment { pid: pid.to_string(), subject_name: name.to_string() })
        }
        _ => Err(format!("expected pid:SubjectName, got {s:?}")),
    }
}

fn parse_webhook(s: &str) -> Result<(String, String), String> {
    s.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())).ok_or_else(|| format!("expected key=url, got {s:?}"))
}

fn print_json(out: &mut dyn Write, v: &impl Serialize) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, v).expect("output serializes");
    writeln!(out)?;
    Ok(())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn task_line(t: &TaskView) -> String {
    let detail = match &t.task.kind {
        TaskKind::Function { transitions, .. } => format!("-> {}", transitions.join("|")),
        TaskKind::Send { to_subject, mtype, .. } => format!("{mtype} to {to_subject}"),
        TaskKind::Receive { mtypes } => {
            let waiting = t.messages.iter().filter(|m| !m.received).count();
            format!("{} ({waiting} waiting)", mtypes.join("|"))
        }
    };
    format!(
        "{}  {:<8} {} / {}  {}: {}  {detail}",
        t.task.tid,
        t.task.kind.tag(),
        t.process_name,
        t.subject_name,
        t.task.state_id,
        t.task.name
    )
}

fn event_line(e: &SchedulerEvent) -> String {
    let mut line = format!("{:>6} {}", e.seq, e.kind.as_str());
    let fields = [
        ("pid", e.pid.as_deref()),
        ("piid", e.piid.as_ref().map(|p| p.as_str())),
        ("siid", e.siid.as_ref().map(|s| s.as_str())),
        ("tid", e.tid.as_ref().map(|t| t.as_str())),
        ("mtype", e.mtype.as_deref()),
        ("user", e.username.as_deref()),
    ];
    for (k, v) in fields {
        if let Some(v) = v {
            line.push_str(&format!(" {k}={v}"));
        }
    }
    line
}

fn local_scheduler(store: &Path) -> Result<Scheduler, CliError> {
    let repo = Repository::open(store).map_err(|e| CliError::Usage(format!("{}: {e}", store.display())))?;
    Ok(Scheduler::new(Arc::new(repo), RefinementRegistry::new()))
}

fn local_error(e: subjekt_core::SchedulerError) -> CliError {
    let (status, body) = ApiError::from(e).status_and_body();
    CliError::Server { status: status.as_u16(), body }
}

#[derive(Debug, Serialize)]
struct ValidateOutput {
    file: String,
    valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    violations: Vec<Violation>,
    warnings: Vec<Violation>,
}

fn validate_file(file: &Path, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let text = read_file(file)?;
    let mut report = ValidateOutput {
        file: file.display().to_string(),
        valid: false,
        pid: None,
        error: None,
        violations: vec![],
        warnings: vec![],
    };
    match parse_definition(text.as_bytes()) {
        Err(e) => report.error = Some(e.to_string()),
        Ok(doc) => {
            let r = validate(&doc.process);
            report.valid = r.is_valid();
            report.pid = Some(doc.process.pid);
            report.violations = r.violations;
            report.warnings = r.warnings;
        }
    }
    if json {
        print_json(out, &report)?;
    } else {
        for v in &report.warnings {
            writeln!(out, "warning[{}] {}: {}", v.code, v.path, v.message)?;
        }
        if report.valid {
            writeln!(out, "{}: valid", report.pid.as_deref().unwrap_or_default())?;
        }
    }
    if report.valid {
        return Ok(());
    }
    let mut message = format!("{} is invalid", file.display());
    if let Some(e) = &report.error {
        message.push_str(&format!(": {e}"));
    }
    for v in &report.violations {
        message.push_str(&format!("\nerror[{}] {}: {}", v.code, v.path, v.message));
    }
    Err(CliError::Invalid { message, body: None })
}

#[derive(Debug, Serialize)]
struct ScriptResult {
    file: String,
    username: Option<String>,
    ok: bool,
    steps: Vec<StepReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn run_scripts(
    url: &str,
    files: &[PathBuf],
    opts: RunOptions,
    json: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let scripts = files.iter().map(|f| AgentScript::load(f)).collect::<Result<Vec<_>, _>>()?;
    let (tx, rx) = mpsc::channel::<String>();
    let results: Vec<Result<Vec<StepReport>, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scripts
            .iter()
            .map(|s| {
                let tx = tx.clone();
                scope.spawn(move || {
                    let client = Client::new(url);
                    script::run(&client, s, opts, |line| {
                        let _ = tx.send(line);
                    })
                })
            })
            .collect();
        drop(tx);
        for line in rx {
            if !json {
                let _ = writeln!(out, "{line}");
            }
        }
        handles.into_iter().map(|h| h.join().expect("script worker panicked")).collect()
    });

    let mut first_error = None;
    let mut summary = Vec::new();
    for ((file, script), result) in files.iter().zip(&scripts).zip(results) {
        let (steps, error) = match result {
            Ok(steps) => (steps, None),
            Err(e) => {
                if !json {
                    writeln!(out, "{}: {e}", file.display())?;
                }
                let text = e.to_string();
                first_error.get_or_insert(e);
                (Vec::new(), Some(text))
            }
        };
        summary.push(ScriptResult {
            file: file.display().to_string(),
            username: Some(script.username.clone()),
            ok: error.is_none(),
            steps,
            error,
        });
    }
    if json {
        print_json(out, &serde_json::json!({ "scripts": summary }))?;
    }
    first_error.map_or(Ok(()), Err)
}

fn serve(args: ServeArgs, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => ApiConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ApiConfig::default(),
    }
    .with_env();
    if let Some(b) = args.bind {
        config.bind = b;
    }
    if let Some(s) = args.store {
        config.store = s;
    }
    if args.static_dir.is_some() {
        config.static_dir = args.static_dir;
    }
    config.webhooks.extend(args.webhooks);

    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let server = Server::bind(&config).await.map_err(|e| CliError::Usage(e.to_string()))?;
        let addr = server.local_addr()?;
        if json {
            print_json(out, &serde_json::json!({ "listening": addr.to_string() }))?;
        } else {
            writeln!(out, "listening on http://{addr}")?;
        }
        out.flush()?;
        server.run(subjekt_api::shutdown_signal()).await?;
        Ok(())
    })
}

/// Executes one command, writing its output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let client = Client::new(&cli.url);
    let json = cli.json;
    match cli.command {
        Command::Serve(args) => serve(args, json, out),
        Command::Validate { file } => validate_file(&file, json, out),
        Command::Upload { file, user, store } => {
            let text = read_file(&file)?;
            let reply = match store {
                Some(path) => {
                    let s = local_scheduler(&path)?;
                    let o = s.upload_definition(text.as_bytes()).map_err(local_error);
                    o.map(|o| (serde_json::to_value(&o).expect("serializes"), o))
                }
                None => client.upload(&text, &user).map(|r| (r.raw, r.value)),
            };
            let (raw, outcome) = reply.map_err(CliError::definition_rejected)?;
            if json {
                return print_json(out, &raw);
            }
            for v in &outcome.warnings {
                writeln!(out, "warning[{}] {}: {}", v.code, v.path, v.message)?;
            }
            writeln!(out, "uploaded {} ({})", outcome.pid, outcome.name)?;
            Ok(())
        }
        Command::User { username, roles, user, store } => {
            let (raw, rec) = match store {
                Some(path) => {
                    let rec = local_scheduler(&path)?.put_user(&username, roles).map_err(local_error)?;
                    (serde_json::to_value(&rec).expect("serializes"), rec)
                }
                None => {
                    let r = client.put_user(&username, roles, &user)?;
                    (r.raw, r.value)
                }
            };
            if json {
                return print_json(out, &raw);
            }
            let roles: Vec<String> = rec.roles.iter().map(|r| format!("{}:{}", r.pid, r.subject_name)).collect();
            writeln!(out, "{}: {}", rec.username, if roles.is_empty() { "no roles".into() } else { roles.join(", ") })?;
            Ok(())
        }
        Command::Processes { user } => {
            let r = client.processes(&user)?;
            if json {
                return print_json(out, &r.raw);
            }
            if r.value.is_empty() {
                writeln!(out, "no startable processes for {user}")?;
            }
            for p in &r.value {
                writeln!(out, "{}  {} ({})", p.sid, p.process_name, p.pid)?;
            }
            Ok(())
        }
        Command::Start { sid, user } => {
            let r = client.start(&sid, &user)?;
            if json {
                return print_json(out, &r.raw);
            }
            writeln!(out, "started {} piid={} siid={}", r.value.pid, r.value.piid, r.value.siid)?;
            if let Some(t) = &r.value.first_task {
                writeln!(out, "next task {} {}: {}", t.tid, t.state_id, t.name)?;
            }
            Ok(())
        }
        Command::Tasks { user, tid: Some(tid) } => {
            let r = client.task(&tid, &user)?;
            if json {
                return print_json(out, &r.raw);
            }
            writeln!(out, "{}", task_line(&r.value))?;
            match &r.value.task.kind {
                TaskKind::Function { params, .. } | TaskKind::Send { params, .. } => {
                    for p in params {
                        writeln!(out, "  {}{} = {:?}", p.name, if p.writable { "" } else { " (read-only)" }, p.value)?;
                    }
                }
                TaskKind::Receive { .. } => {
                    for m in r.value.messages.iter().filter(|m| !m.received) {
                        writeln!(
                            out,
                            "  {} {} {}",
                            m.mid,
                            m.mtype,
                            serde_json::to_string(&m.params).expect("serializes")
                        )?;
                    }
                }
            }
            Ok(())
        }
        Command::Tasks { user, tid: None } => {
            let r = client.tasks(&user)?;
            if json {
                return print_json(out, &r.raw);
            }
            if r.value.is_empty() {
                writeln!(out, "no open tasks for {user}")?;
            }
            for t in &r.value {
                writeln!(out, "{}", task_line(t))?;
            }
            Ok(())
        }
        Command::Answer { tid, user, body } => {
            let r = client.answer(&tid, &user, &body)?;
            if json {
                return print_json(out, &r.raw);
            }
            let o = &r.value;
            writeln!(out, "answered {}{}", o.tid, if o.claimed { ", instance claimed" } else { "" })?;
            if let Some(t) = &o.next_task {
                writeln!(out, "next task {} {}: {}", t.tid, t.state_id, t.name)?;
            }
            if o.entered_end_state {
                writeln!(out, "entered end state")?;
            }
            if o.process_terminated {
                writeln!(out, "process terminated")?;
            }
            Ok(())
        }
        Command::Status { piid, user } => {
            let r = client.instance(&piid, &user)?;
            if json {
                return print_json(out, &r.raw);
            }
            let v = &r.raw;
            let done = if v["terminated"] == Value::Bool(true) { "terminated" } else { "running" };
            writeln!(out, "{} {} ({done})", v["process_name"].as_str().unwrap_or_default(), piid)?;
            for i in v["instances"].as_array().into_iter().flatten() {
                writeln!(
                    out,
                    "  {} {} owner={} state={}",
                    i["siid"].as_str().unwrap_or_default(),
                    i["subject_name"].as_str().unwrap_or_default(),
                    i["owner"].as_str().unwrap_or("-"),
                    i["snapshot"]["current_state"].as_str().unwrap_or("-")
                )?;
            }
            Ok(())
        }
        Command::RunScript { files, poll_ms, timeout_ms } => {
            let opts = RunOptions { poll: Duration::from_millis(poll_ms), timeout: Duration::from_millis(timeout_ms) };
            run_scripts(client.base(), &files, opts, json, out)
        }
        Command::Watch { after, limit, user } => {
            let mut seen = 0;
            let mut failed = None;
            client.watch(after, &user, |line, e| {
                let written = if json { writeln!(out, "{line}") } else { writeln!(out, "{}", event_line(&e)) };
                if let Err(err) = written.and_then(|_| out.flush()) {
                    failed = Some(err);
                    return false;
                }
                seen += 1;
                limit.is_none_or(|l| seen < l)
            })?;
            failed.map_or(Ok(()), |e| Err(e.into()))
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to `err`; with `--json`, server error bodies also go to `out`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let json = cli.json;
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            if json {
                let body = match &e {
                    CliError::Server { body, .. } | CliError::Invalid { body: Some(body), .. } => Some(body),
                    _ => None,
                };
                if let Some(body) = body {
                    let _ = print_json(out, body);
                }
            }
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
