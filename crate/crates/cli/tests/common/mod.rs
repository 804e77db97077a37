//! In-process server, webhook sink and output helpers shared by the CLI
//! tests and the acceptance suite.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex};

use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

use subjekt_api::{ApiConfig, Server};

pub const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/internal_order.json");

pub fn script(name: &str) -> String {
    format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

pub type Calls = Arc<Mutex<Vec<Value>>>;

async fn record(axum::extract::State(calls): axum::extract::State<Calls>, Json(body): Json<Value>) -> Json<Value> {
    calls.lock().unwrap().push(body);
    Json(json!({}))
}

/// Starts an HTTP endpoint that records every JSON body POSTed to `/erp`.
pub async fn webhook_sink() -> (String, Calls) {
    let calls = Calls::default();
    let app = Router::new().route("/erp", post(record)).with_state(calls.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let url = format!("http://{}/erp", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (url, calls)
}

/// A task service with its own store and webhook sink, running on a
/// background runtime until dropped.
pub struct TestServer {
    pub url: String,
    pub store: PathBuf,
    pub calls: Calls,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
    _dir: Option<tempfile::TempDir>,
}

impl TestServer {
    pub fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Self::start_at(&dir.path().join("store.db"));
        s._dir = Some(dir);
        s
    }

    pub fn start_at(store: &Path) -> Self {
        let (ready_tx, ready_rx) = mpsc::channel();
        let (stop, stop_rx) = oneshot::channel::<()>();
        let store_path = store.to_path_buf();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().unwrap();
            rt.block_on(async move {
                let (hook, calls) = webhook_sink().await;
                let config = ApiConfig {
                    bind: "127.0.0.1:0".into(),
                    store: store_path,
                    webhooks: [("erp".to_string(), hook)].into(),
                    ..Default::default()
                };
                let server = Server::bind(&config).await.unwrap();
                ready_tx.send((format!("http://{}", server.local_addr().unwrap()), calls)).unwrap();
                server
                    .run(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let (url, calls) = ready_rx.recv().unwrap();
        TestServer { url, store: store.to_path_buf(), calls, stop: Some(stop), thread: Some(thread), _dir: None }
    }

    /// Runs the CLI against this server.
    pub fn cli(&self, args: &[&str]) -> Output {
        let mut full = vec!["subjekt", "--url", &self.url];
        full.extend_from_slice(args);
        cli(&full)
    }

    /// Uploads the Internal Order fixture and creates jd and nr.
    pub fn seed(&self) {
        assert_eq!(self.cli(&["upload", FIXTURE]).code, 0);
        assert_eq!(self.cli(&["user", "jd", "--role", "internal-order:Employee"]).code, 0);
        assert_eq!(self.cli(&["user", "nr", "--role", "internal-order:Supervisor"]).code, 0);
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[derive(Debug)]
pub struct Output {
    pub code: u8,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("{e}: {}", self.stdout))
    }
}

pub fn cli(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = subjekt_cli::main_with(args.iter().copied(), &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn is_uuid(s: &str) -> bool {
    s.len() == 36
        && s.char_indices().all(|(i, c)| if [8, 13, 18, 23].contains(&i) { c == '-' } else { c.is_ascii_hexdigit() })
}

/// Replaces generated ids by `<id:N>` in order of first appearance, zeroes
/// timestamps and strips the workspace path from file names.
pub fn normalize(v: &Value) -> Value {
    fn walk(v: &Value, ids: &mut Vec<String>) -> Value {
        match v {
            Value::String(s) if is_uuid(s) => {
                let n = ids.iter().position(|x| x == s).unwrap_or_else(|| {
                    ids.push(s.clone());
                    ids.len() - 1
                });
                Value::String(format!("<id:{n}>"))
            }
            Value::String(s) => Value::String(s.replace(env!("CARGO_MANIFEST_DIR"), "<crate>")),
            Value::Array(a) => Value::Array(a.iter().map(|x| walk(x, ids)).collect()),
            Value::Object(m) => Value::Object(
                m.iter().map(|(k, x)| (k.clone(), if k == "timestamp_ms" { json!(0) } else { walk(x, ids) })).collect(),
            ),
            other => other.clone(),
        }
    }
    walk(v, &mut Vec::new())
}

/// Compares against `tests/golden/<name>.json`; `SUBJEKT_BLESS=1` rewrites it.
pub fn golden(name: &str, actual: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"));
    let actual = serde_json::to_string_pretty(&normalize(actual)).unwrap() + "\n";
    if std::env::var_os("SUBJEKT_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "output differs from {}", path.display());
}

/// Event kinds of a process instance, with TaskCreated counted separately
/// and message types and claimants spelled out.
pub fn milestones(events: &[Value]) -> (Vec<String>, usize) {
    let created = events.iter().filter(|e| e["kind"] == "TaskCreated").count();
    let rest = events
        .iter()
        .filter(|e| e["kind"] != "TaskCreated")
        .map(|e| {
            let kind = e["kind"].as_str().unwrap();
            match (e["mtype"].as_str(), e["username"].as_str()) {
                (Some(m), _) => format!("{kind}({m})"),
                (None, Some(u)) if kind == "InstanceClaimed" => format!("{kind}({u})"),
                _ => kind.to_string(),
            }
        })
        .collect();
    (rest, created)
}
