//! Annotation and persona-chat service.
//!
//! | method | path                      | purpose                                 |
//! |--------|---------------------------|-----------------------------------------|
//! | GET    | `/tasks/next?annotator_id`| lease the next item to score (204: none)|
//! | POST   | `/tasks/{id}/score`       | record a 0/1/2 vote                     |
//! | GET    | `/tasks`                  | status of every item                    |
//! | POST   | `/chat`                   | open a session with a persona           |
//! | POST   | `/chat/{session}/message` | send a message, get the persona's reply |
//! | GET    | `/chat/{session}`         | session history and last prompt         |
//! | GET    | `/personas`               | persona profiles                        |
//! | GET    | `/report`                 | latest evaluation report                |
//! | GET    | `/health`                 | liveness and counters                   |

mod chat;
mod clock;
mod queue;

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use persona_align::annotate::VoteLog;
use persona_align::corpus::{parse_records, AnnotationRecord, PersonaProfile, PersonaSet};
use persona_align::metrics::EvalReport;
use serde::Deserialize;
use serde_json::json;

pub use chat::{build_prompt, ChatBackend, ChatSession, PolicyChat, Turn};
pub use clock::{Clock, ManualClock, SystemClock};
pub use queue::{AnnotationItem, AnnotationTask, ItemStatus, TaskStatus, VoteError};

#[derive(Debug, Clone, PartialEq)]
pub struct StudioConfig {
    /// Votes collected before an item is aggregated.
    pub quorum: usize,
    /// How long an assignment stays reserved.
    pub lease: Duration,
    /// Chat turns included in each prompt.
    pub window: usize,
    /// When set, only these annotator ids may take tasks.
    pub annotators: Option<BTreeSet<String>>,
    /// Append-only JSONL vote log, replayed at startup.
    pub vote_log: Option<PathBuf>,
}

impl Default for StudioConfig {
    fn default() -> Self {
        StudioConfig {
            quorum: 3,
            lease: Duration::from_secs(600),
            window: 8,
            annotators: None,
            vote_log: None,
        }
    }
}

struct Inner {
    config: StudioConfig,
    personas: PersonaSet,
    queue: Mutex<queue::Queue>,
    sessions: Mutex<HashMap<String, ChatSession>>,
    next_session: Mutex<u64>,
    chat: Option<Arc<dyn ChatBackend>>,
    report: Option<EvalReport>,
    clock: Arc<dyn Clock>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct Studio(Arc<Inner>);

impl Studio {
    /// Replays `config.vote_log` (if it exists) so statuses survive restarts.
    pub fn new(
        config: StudioConfig,
        personas: PersonaSet,
        items: Vec<AnnotationItem>,
        chat: Option<Arc<dyn ChatBackend>>,
        report: Option<EvalReport>,
        clock: Arc<dyn Clock>,
    ) -> persona_align::Result<Self> {
        let io = |path: &PathBuf, source| persona_align::Error::Io {
            path: path.clone(),
            source,
        };
        let mut log = VoteLog::new();
        let mut sink = None;
        if let Some(path) = &config.vote_log {
            if path.exists() {
                let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
                log = VoteLog::replay(parse_records::<AnnotationRecord>(&text)?.into_iter().map(|l| l.record))?;
                let known: BTreeSet<&str> = items.iter().map(|i| i.item_id.as_str()).collect();
                if let Some(r) = log.records().iter().find(|r| !known.contains(r.item_id.as_str())) {
                    return Err(persona_align::Error::InvalidArgument(format!(
                        "{}: vote for unknown item {}",
                        path.display(),
                        r.item_id
                    )));
                }
            }
            sink = Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| io(path, e))?,
            );
        }
        let queue = queue::Queue::new(items, log, config.quorum, config.lease, sink);
        Ok(Studio(Arc::new(Inner {
            config,
            personas,
            queue: Mutex::new(queue),
            sessions: Mutex::new(HashMap::new()),
            next_session: Mutex::new(0),
            chat,
            report,
            clock,
        })))
    }

    pub fn statuses(&self) -> Vec<ItemStatus> {
        let now = self.0.clock.now();
        self.0.queue.lock().expect("queue lock").statuses(now)
    }

    pub fn session(&self, id: &str) -> Option<ChatSession> {
        self.0.sessions.lock().expect("session lock").get(id).cloned()
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn generation_failed(message: &str) -> Response {
    (
        StatusCode::SERVICE_UNAVAILABLE,
        Json(json!({ "error": format!("generation failed: {message}"), "retry": true })),
    )
        .into_response()
}

#[derive(Deserialize)]
struct NextQuery {
    annotator_id: Option<String>,
}

async fn next_task(State(s): State<Studio>, Query(q): Query<NextQuery>) -> Response {
    let Some(annotator) = q.annotator_id.filter(|a| !a.trim().is_empty()) else {
        return error(StatusCode::BAD_REQUEST, "annotator_id is required");
    };
    if let Some(allowed) = &s.0.config.annotators {
        if !allowed.contains(&annotator) {
            return error(
                StatusCode::FORBIDDEN,
                format!("annotator {annotator} is not registered"),
            );
        }
    }
    let now = s.0.clock.now();
    let task = s.0.queue.lock().expect("queue lock").next(&annotator, now);
    match task {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

#[derive(Deserialize)]
struct ScoreBody {
    annotator_id: String,
    score: i64,
}

async fn score_task(State(s): State<Studio>, Path(item_id): Path<String>, Json(body): Json<ScoreBody>) -> Response {
    if let Some(allowed) = &s.0.config.annotators {
        if !allowed.contains(&body.annotator_id) {
            return error(
                StatusCode::FORBIDDEN,
                format!("annotator {} is not registered", body.annotator_id),
            );
        }
    }
    let now = s.0.clock.now();
    let result =
        s.0.queue
            .lock()
            .expect("queue lock")
            .score(&item_id, &body.annotator_id, body.score, now);
    match result {
        Ok(status) => Json(status).into_response(),
        Err(e) => {
            let code = match e {
                VoteError::UnknownItem(_) => StatusCode::NOT_FOUND,
                VoteError::OutOfRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
                VoteError::Duplicate { .. } | VoteError::AlreadyResolved(_) => StatusCode::CONFLICT,
                VoteError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            };
            error(code, e.to_string())
        }
    }
}

async fn list_tasks(State(s): State<Studio>) -> Response {
    Json(s.statuses()).into_response()
}

#[derive(Deserialize)]
struct NewSession {
    persona_id: String,
}

async fn new_session(State(s): State<Studio>, Json(body): Json<NewSession>) -> Response {
    if s.0.chat.is_none() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no checkpoint loaded for chat");
    }
    if s.0.personas.get(&body.persona_id).is_none() {
        return error(StatusCode::NOT_FOUND, format!("unknown persona {}", body.persona_id));
    }
    let id = {
        let mut n = s.0.next_session.lock().expect("session counter");
        *n += 1;
        format!("s{n}")
    };
    let session = ChatSession {
        session_id: id.clone(),
        persona_id: body.persona_id,
        history: Vec::new(),
        last_prompt: None,
    };
    s.0.sessions.lock().expect("session lock").insert(id, session.clone());
    (StatusCode::CREATED, Json(session)).into_response()
}

#[derive(Deserialize)]
struct Message {
    text: String,
}

async fn send_message(State(s): State<Studio>, Path(id): Path<String>, Json(body): Json<Message>) -> Response {
    let Some(chat) = s.0.chat.clone() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no checkpoint loaded for chat");
    };
    if body.text.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "message text is empty");
    }
    let Some(session) = s.session(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"));
    };
    let persona: PersonaProfile =
        s.0.personas
            .get(&session.persona_id)
            .expect("checked at creation")
            .clone();
    let prompt = build_prompt(&persona, &session.history, s.0.config.window, &body.text);
    let p = prompt.clone();
    let reply = tokio::task::spawn_blocking(move || chat.reply(&p)).await;
    let reply = match reply {
        Ok(Ok(r)) if !r.trim().is_empty() => r,
        Ok(Ok(_)) => return generation_failed("empty reply"),
        Ok(Err(m)) => return generation_failed(&m),
        Err(e) => return generation_failed(&e.to_string()),
    };
    log::info!("chat {id}: {} -> {}", body.text.trim(), reply);
    let mut sessions = s.0.sessions.lock().expect("session lock");
    let Some(session) = sessions.get_mut(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown session {id}"));
    };
    session.history.push(Turn {
        user: body.text.trim().to_string(),
        reply: reply.clone(),
    });
    session.last_prompt = Some(prompt);
    Json(json!({ "session_id": id, "reply": reply, "turns": session.history.len() })).into_response()
}

async fn get_session(State(s): State<Studio>, Path(id): Path<String>) -> Response {
    match s.session(&id) {
        Some(session) => Json(session).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown session {id}")),
    }
}

async fn personas(State(s): State<Studio>) -> Response {
    Json(s.0.personas.iter().cloned().collect::<Vec<_>>()).into_response()
}

async fn report(State(s): State<Studio>) -> Response {
    match &s.0.report {
        Some(r) => Json(r).into_response(),
        None => error(StatusCode::NOT_FOUND, "no evaluation report yet"),
    }
}

async fn health(State(s): State<Studio>) -> Response {
    let (items, votes) = {
        let q = s.0.queue.lock().expect("queue lock");
        (q.len(), q.vote_count())
    };
    let sessions = s.0.sessions.lock().expect("session lock").len();
    Json(json!({
        "status": "ok",
        "items": items,
        "votes": votes,
        "sessions": sessions,
        "chat": s.0.chat.is_some(),
    }))
    .into_response()
}

pub fn router(studio: Studio) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}/score", post(score_task))
        .route("/chat", post(new_session))
        .route("/chat/{session}", get(get_session))
        .route("/chat/{session}/message", post(send_message))
        .route("/personas", get(personas))
        .route("/report", get(report))
        .route("/health", get(health))
        .with_state(studio)
}

pub async fn serve(studio: Studio, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(studio)).await
}
