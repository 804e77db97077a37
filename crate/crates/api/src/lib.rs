//! JSON-over-HTTP task service for the subjekt engine.
//!
//! | method | path | |
//! |---|---|---|
//! | GET  | `/api/processes` | subjects the caller may start |
//! | POST | `/api/processes/{sid}/start` | start a process instance |
//! | GET  | `/api/tasks` | open tasks visible to the caller |
//! | GET  | `/api/tasks/{tid}` | task detail |
//! | POST | `/api/tasks/{tid}/answer` | answer a task |
//! | GET  | `/api/events?after=seq` | newline-delimited JSON event stream |
//! | POST | `/api/admin/definitions` | upload a definition document |
//! | PUT  | `/api/admin/users/{username}` | create or replace a user's roles |
//! | GET  | `/api/admin/instances/{piid}` | audit view of a process instance |
//!
//! Anything else is served from the configured static directory.

pub mod config;
pub mod error;
pub mod webhook;

use std::collections::VecDeque;
use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, watch};
use tower_http::services::ServeDir;

use subjekt_core::repository::StartableProcess;
use subjekt_core::scheduler::{TaskAnswer, TaskView};
use subjekt_core::{
    Piid, RefinementRegistry, RepoError, Repository, RoleAssignment, Scheduler, SchedulerError, SchedulerEvent, Tid,
};

pub use config::ApiConfig;
pub use error::{ApiError, ErrorBody};

#[derive(Clone)]
pub struct AppState {
    scheduler: Arc<Scheduler>,
    user_header: Arc<str>,
    shutdown: watch::Receiver<bool>,
}

impl AppState {
    pub fn new(scheduler: Arc<Scheduler>, config: &ApiConfig, shutdown: watch::Receiver<bool>) -> Self {
        AppState { scheduler, user_header: config.user_header.as_str().into(), shutdown }
    }
}

/// The authenticated caller.
pub struct User(pub String);

impl FromRequestParts<AppState> for User {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let missing = || ApiError::Unauthenticated(format!("missing {} header", state.user_header));
        let value = parts.headers.get(&*state.user_header).ok_or_else(missing)?;
        let name = value.to_str().map_err(|_| missing())?.trim();
        if name.is_empty() {
            return Err(missing());
        }
        Ok(User(name.to_string()))
    }
}

async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Scheduler) -> Result<T, SchedulerError> + Send + 'static,
{
    let scheduler = state.scheduler.clone();
    tokio::task::spawn_blocking(move || f(&scheduler))
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ProcessList {
    pub processes: Vec<StartableProcess>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TaskList {
    pub tasks: Vec<TaskView>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRoles {
    pub roles: Vec<RoleAssignment>,
}

async fn list_processes(State(st): State<AppState>, User(u): User) -> Result<Json<ProcessList>, ApiError> {
    Ok(Json(ProcessList { processes: blocking(&st, move |s| s.startable(&u)).await? }))
}

async fn start_process(
    State(st): State<AppState>,
    User(u): User,
    Path(sid): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(&st, move |s| s.start_process(&sid, &u)).await?))
}

async fn list_tasks(State(st): State<AppState>, User(u): User) -> Result<Json<TaskList>, ApiError> {
    Ok(Json(TaskList { tasks: blocking(&st, move |s| s.open_tasks(&u)).await? }))
}

async fn task_detail(
    State(st): State<AppState>,
    User(u): User,
    Path(tid): Path<String>,
) -> Result<Json<TaskView>, ApiError> {
    Ok(Json(blocking(&st, move |s| s.task_detail(&Tid::new(tid), &u)).await?))
}

async fn answer_task(
    State(st): State<AppState>,
    User(u): User,
    Path(tid): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let answer: TaskAnswer = serde_json::from_slice(&body)?;
    Ok(Json(blocking(&st, move |s| s.answer_task(&Tid::new(tid), &u, answer)).await?))
}

async fn upload_definition(
    State(st): State<AppState>,
    User(u): User,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let outcome = blocking(&st, move |s| s.upload_definition(&body)).await?;
    tracing::info!(pid = %outcome.pid, by = %u, "definition uploaded");
    Ok(Json(outcome))
}

async fn put_user(
    State(st): State<AppState>,
    User(_): User,
    Path(username): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let roles: UserRoles = serde_json::from_slice(&body)?;
    Ok(Json(blocking(&st, move |s| s.put_user(&username, roles.roles)).await?))
}

async fn instance_status(
    State(st): State<AppState>,
    User(_): User,
    Path(piid): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(blocking(&st, move |s| s.instance_status(&Piid::new(piid))).await?))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

struct EventFeed {
    backlog: VecDeque<SchedulerEvent>,
    live: broadcast::Receiver<SchedulerEvent>,
    last: u64,
    state: AppState,
}

fn ndjson(e: &SchedulerEvent) -> Bytes {
    let mut line = serde_json::to_vec(e).expect("events serialize");
    line.push(b'\n');
    line.into()
}

/// Subscribes first, then replays persisted events after `after`, then
/// follows live events, skipping anything already sent.
async fn events(State(st): State<AppState>, User(_): User, Query(q): Query<EventsQuery>) -> Result<Response, ApiError> {
    let live = st.scheduler.subscribe();
    let backlog = match q.after {
        Some(after) => blocking(&st, move |s| s.events_after(after)).await?,
        None => Vec::new(),
    };
    let last = backlog.last().map(|e| e.seq).or(q.after).unwrap_or(0);
    let feed = EventFeed { backlog: backlog.into(), live, last, state: st };

    let stream = futures::stream::unfold(feed, |mut feed| async move {
        loop {
            if let Some(e) = feed.backlog.pop_front() {
                feed.last = e.seq;
                return Some((Ok::<_, Infallible>(ndjson(&e)), feed));
            }
            let mut shutdown = feed.state.shutdown.clone();
            if *shutdown.borrow() {
                return None;
            }
            let next = tokio::select! {
                r = feed.live.recv() => r,
                _ = shutdown.changed() => return None,
            };
            match next {
                Ok(e) if e.seq <= feed.last => continue,
                Ok(e) => {
                    feed.last = e.seq;
                    return Some((Ok(ndjson(&e)), feed));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagged, replaying from store");
                    let after = feed.last;
                    match blocking(&feed.state, move |s| s.events_after(after)).await {
                        Ok(missed) => feed.backlog.extend(missed),
                        Err(_) => return None,
                    }
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson"), (header::CACHE_CONTROL, "no-cache")],
        Body::from_stream(stream),
    )
        .into_response())
}

async fn not_found() -> impl IntoResponse {
    (
        StatusCode::NOT_FOUND,
        Json(ErrorBody { error: "not_found".into(), message: "no such route".into(), path: None, violations: vec![] }),
    )
}

pub fn router(state: AppState, static_dir: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/api/processes", get(list_processes))
        .route("/api/processes/{sid}/start", post(start_process))
        .route("/api/tasks", get(list_tasks))
        .route("/api/tasks/{tid}", get(task_detail))
        .route("/api/tasks/{tid}/answer", post(answer_task))
        .route("/api/events", get(events))
        .route("/api/admin/definitions", post(upload_definition))
        .route("/api/admin/users/{username}", put(put_user))
        .route("/api/admin/instances/{piid}", get(instance_status))
        .route("/api/{*rest}", axum::routing::any(not_found))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error("cannot open store: {0}")]
    Store(#[from] RepoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Opens the store and wires the webhook refinement into a scheduler.
pub fn build_scheduler(config: &ApiConfig) -> Result<Arc<Scheduler>, ServerError> {
    let repo = Repository::open(&config.store)?;
    let mut refinements = RefinementRegistry::new();
    refinements.register("webhook", webhook::WebhookRefinement::new(config.webhooks.clone(), config.webhook_timeout()));
    Ok(Arc::new(Scheduler::new(Arc::new(repo), refinements)))
}

pub struct Server {
    listener: tokio::net::TcpListener,
    router: Router,
    scheduler: Arc<Scheduler>,
    shutdown: watch::Sender<bool>,
}

impl Server {
    pub async fn bind(config: &ApiConfig) -> Result<Server, ServerError> {
        config.validate()?;
        let scheduler = build_scheduler(config)?;
        let (shutdown, rx) = watch::channel(false);
        let router = router(AppState::new(scheduler.clone(), config, rx), config.static_dir.as_deref());
        let listener = tokio::net::TcpListener::bind(config.bind_addr()?).await?;
        Ok(Server { listener, router, scheduler, shutdown })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn scheduler(&self) -> &Arc<Scheduler> {
        &self.scheduler
    }

    /// Serves until `signal` resolves, then closes event streams and drains.
    pub async fn run(self, signal: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        let Server { listener, router, shutdown, .. } = self;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                signal.await;
                let _ = shutdown.send(true);
            })
            .await
    }
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
