//! Live session service.
//!
//! | method | path                         | body                                   |
//! |--------|------------------------------|----------------------------------------|
//! | POST   | /sessions                    | `{"scenario": "campus-walk", "seed": 1}` |
//! | GET    | /sessions/{id}/state         |                                        |
//! | POST   | /sessions/{id}/destination   | `{"channel": "voice", "content": "Library"}` |
//! | POST   | /sessions/{id}/control       | `{"cmd": "move", "speed": 1.2}` and friends |
//! | POST   | /sessions/{id}/capture       |                                        |
//! | GET    | /sessions/{id}/events?from=N | server-sent events                     |
//! | GET    | /sessions/{id}/trace         | the event log so far as trace lines    |
//! | DELETE | /sessions/{id}               |                                        |
//!
//! Each SSE message carries `id: <seq>`, `event: <kind>` and the trace line
//! as `data`. Reconnecting with `Last-Event-ID` (or `?from=`) resumes
//! without gaps. A subscriber that falls more than the buffer behind is
//! disconnected and must resume.

use crate::backend::{self, LlmArgs};
use crate::fail::{scenario_failure, Code, Failure, Outcome};
use crate::run::SessionArgs;
use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::Args;
use futures::stream::{self, Stream};
use serde::Deserialize;
use serde_json::json;
use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;
use tokio::sync::broadcast;
use wayfind::session::{to_trace_line, write_trace, Command, CommandError, InputChannel};
use wayfind::{load_scenario_file, Event, Session, SessionConfig};

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed on stdout.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Directory searched for `<name>.json` scenarios.
    #[arg(long, default_value = "scenarios")]
    pub scenarios: PathBuf,
    /// Scenario used when a create request names none.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Simulated seconds per wall-clock second.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Events buffered per subscriber before it is dropped.
    #[arg(long, default_value_t = 4096)]
    pub stream_buffer: usize,
    #[command(flatten)]
    pub session: SessionArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
}

struct Live {
    session: Mutex<Session>,
    tx: broadcast::Sender<Event>,
}

impl Live {
    /// Runs `f` on the session and publishes whatever it appended. Events
    /// are sent while the lock is held so subscribers see them in order.
    fn with<R>(&self, f: impl FnOnce(&mut Session) -> R) -> R {
        let mut session = self.session.lock().expect("session lock poisoned");
        let before = session.events().len() as u64;
        let out = f(&mut session);
        for e in session.events_since(before) {
            let _ = self.tx.send(e.clone());
        }
        out
    }
}

struct App {
    scenarios: PathBuf,
    default_scenario: Option<PathBuf>,
    config: SessionConfig,
    llm: LlmArgs,
    speed: f64,
    buffer: usize,
    next_id: AtomicU64,
    sessions: Mutex<HashMap<u64, Arc<Live>>>,
}

type Shared = Arc<App>;

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

fn refused(err: CommandError, next_seq: u64) -> Response {
    use wayfind::routing::RouteError;
    let code = match &err {
        CommandError::PermissionDenied(_) => "permission_denied",
        CommandError::Route(RouteError::UnknownDestination(_)) => "unknown_destination",
        CommandError::Route(_) => "unreachable",
        CommandError::NotNavigating => "not_navigating",
        CommandError::StillProcessing => "still_processing",
    };
    let body = json!({
        "error": { "code": code, "message": err.to_string() },
        "next_seq": next_seq,
    });
    (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response()
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    let text = if body.is_empty() { &b"{}"[..] } else { &body[..] };
    serde_json::from_slice(text).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn lookup(app: &App, id: u64) -> Result<Arc<Live>, ApiError> {
    app.sessions
        .lock()
        .expect("session table lock poisoned")
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    scenario: Option<String>,
    seed: Option<u64>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn create(State(app): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateRequest = parse_body(&body)?;
    let path = match &req.scenario {
        Some(name) if valid_name(name) => app.scenarios.join(format!("{name}.json")),
        Some(name) => return Err(ApiError::bad_request(format!("invalid scenario name {name:?}"))),
        None => app
            .default_scenario
            .clone()
            .ok_or_else(|| ApiError::bad_request("no scenario named and the service has no default"))?,
    };
    if !path.is_file() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_scenario",
            format!("no scenario at {}", path.display()),
        ));
    }
    let scenario = load_scenario_file(&path)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "scenario_error", e.to_string()))?;
    let backend = backend::build(&app.llm, &scenario).map_err(|f| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "backend_config", format!("{:#}", f.source))
    })?;
    let mut config = app.config.clone();
    if req.seed.is_some() {
        config.seed = req.seed;
    }
    let timestep = config.timestep;

    let session = Session::start(Arc::new(scenario), config, backend);
    let snapshot = session.snapshot();
    let (tx, _) = broadcast::channel(app.buffer);
    let live = Arc::new(Live {
        session: Mutex::new(session),
        tx,
    });
    let id = app.next_id.fetch_add(1, Ordering::SeqCst);
    app.sessions
        .lock()
        .expect("session table lock poisoned")
        .insert(id, Arc::clone(&live));
    spawn_ticker(Arc::downgrade(&live), Duration::from_secs_f64(timestep / app.speed));
    log::info!("session {id} started from {}", path.display());

    Ok((StatusCode::CREATED, Json(json!({ "id": id, "snapshot": snapshot }))).into_response())
}

fn spawn_ticker(live: Weak<Live>, period: Duration) {
    tokio::spawn(async move {
        let mut clock = tokio::time::interval(period);
        clock.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        clock.tick().await;
        loop {
            clock.tick().await;
            let Some(live) = live.upgrade() else { break };
            live.with(Session::tick);
        }
    });
}

async fn state(State(app): State<Shared>, UrlPath(id): UrlPath<u64>) -> Result<Response, ApiError> {
    let live = lookup(&app, id)?;
    let snapshot = live.session.lock().expect("session lock poisoned").snapshot();
    Ok(Json(snapshot).into_response())
}

async fn trace(State(app): State<Shared>, UrlPath(id): UrlPath<u64>) -> Result<Response, ApiError> {
    let live = lookup(&app, id)?;
    let mut body = Vec::new();
    {
        let session = live.session.lock().expect("session lock poisoned");
        write_trace(&mut body, session.events()).expect("writing to memory");
    }
    Ok(([(axum::http::header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn remove(State(app): State<Shared>, UrlPath(id): UrlPath<u64>) -> Result<Response, ApiError> {
    app.sessions
        .lock()
        .expect("session table lock poisoned")
        .remove(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DestinationRequest {
    #[serde(default = "text_channel")]
    channel: InputChannel,
    content: String,
}

fn text_channel() -> InputChannel {
    InputChannel::Text
}

fn accepted(next_seq: u64) -> Response {
    (StatusCode::ACCEPTED, Json(json!({ "accepted": true, "next_seq": next_seq }))).into_response()
}

async fn destination(State(app): State<Shared>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Result<Response, ApiError> {
    let live = lookup(&app, id)?;
    let req: DestinationRequest = parse_body(&body)?;
    if req.content.trim().is_empty() {
        return Err(ApiError::bad_request("content must not be empty"));
    }
    let (result, next) = live.with(|s| {
        let r = s.set_destination(req.channel, &req.content);
        (r, s.events().len() as u64)
    });
    Ok(match result {
        Ok(()) => accepted(next),
        Err(err) => refused(err, next),
    })
}

async fn control(State(app): State<Shared>, UrlPath(id): UrlPath<u64>, body: Bytes) -> Result<Response, ApiError> {
    let live = lookup(&app, id)?;
    let command: Command = parse_body(&body)?;
    match command {
        Command::Move { .. } | Command::Turn { .. } | Command::Stop | Command::Follow { .. } => {}
        _ => return Err(ApiError::bad_request("control accepts move, turn, stop and follow")),
    }
    let next = live.with(|s| {
        s.set_control(&command);
        s.events().len() as u64
    });
    Ok(accepted(next))
}

async fn capture(State(app): State<Shared>, UrlPath(id): UrlPath<u64>) -> Result<Response, ApiError> {
    let live = lookup(&app, id)?;
    let (result, next) = live.with(|s| {
        let r = s.capture_and_describe();
        (r, s.events().len() as u64)
    });
    Ok(match result {
        Ok(()) => accepted(next),
        Err(err) => refused(err, next),
    })
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    from: Option<u64>,
}

fn sse_message(e: &Event) -> SseEvent {
    SseEvent::default()
        .id(e.seq.to_string())
        .event(e.kind.name())
        .data(to_trace_line(e))
}

async fn events(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<u64>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let live = lookup(&app, id)?;
    let from = match query.from {
        Some(from) => from,
        None => match headers.get("last-event-id") {
            Some(v) => v
                .to_str()
                .ok()
                .and_then(|s| s.trim().parse::<u64>().ok())
                .map(|last| last + 1)
                .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be a sequence number"))?,
            None => 0,
        },
    };

    // Subscribe and copy the backlog under one lock so the two meet exactly.
    let (backlog, rx) = {
        let session = live.session.lock().expect("session lock poisoned");
        let rx = live.tx.subscribe();
        (session.events_since(from).iter().cloned().collect::<VecDeque<_>>(), rx)
    };
    drop(live);

    let stream = stream::unfold((backlog, rx), move |(mut backlog, mut rx)| async move {
        if let Some(e) = backlog.pop_front() {
            return Some((Ok(sse_message(&e)), (backlog, rx)));
        }
        match rx.recv().await {
            Ok(e) => Some((Ok(sse_message(&e)), (backlog, rx))),
            Err(broadcast::error::RecvError::Lagged(n)) => {
                log::warn!("session {id}: subscriber fell {n} events behind, disconnecting");
                None
            }
            Err(broadcast::error::RecvError::Closed) => None,
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

fn router(app: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", axum::routing::delete(remove))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/destination", post(destination))
        .route("/sessions/{id}/control", post(control))
        .route("/sessions/{id}/capture", post(capture))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(app)
}

pub fn serve(args: ServeArgs) -> Outcome {
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        return Err(Failure::new(Code::Usage, anyhow::anyhow!("--speed must be positive")));
    }
    let config = args.session.session_config()?;
    if let Some(path) = &args.scenario {
        let scenario = load_scenario_file(path).map_err(scenario_failure)?;
        backend::build(&args.llm, &scenario)?;
    }
    let app = Arc::new(App {
        scenarios: args.scenarios,
        default_scenario: args.scenario,
        config,
        llm: args.llm,
        speed: args.speed,
        buffer: args.stream_buffer.max(16),
        next_id: AtomicU64::new(1),
        sessions: Mutex::new(HashMap::new()),
    });

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        use std::io::Write;
        std::io::stdout().flush()?;
        axum::serve(listener, router(app)).await.context("serving")?;
        Ok::<(), anyhow::Error>(())
    })?;
    Ok(())
}
