//! JSON-over-HTTP routes for [`dialogctl::service::Service`], with
//! server-sent events for chat turns and job progress.

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dialogctl::dialog::{DomainHooks, SelectionMode};
use dialogctl::service::{CorrectionRequest, JobSpec, JobState, Service, ServiceConfig};
use dialogctl::Error;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NoSuchSession(_) | Error::NoSuchJob(_) => StatusCode::NOT_FOUND,
            Error::SessionClosed | Error::Busy => StatusCode::CONFLICT,
            Error::RepairFailed(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::InvalidArgument(_)
            | Error::MaskedCorpusAction { .. }
            | Error::CorpusParse { .. }
            | Error::UnknownTemplate(_)
            | Error::Config(_)
            | Error::Checkpoint(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking service work off the async executor.
async fn blocking<T, F>(svc: &Arc<Service>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> dialogctl::Result<T> + Send + 'static,
{
    let svc = Arc::clone(svc);
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(Error::InvalidArgument(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

#[derive(Deserialize, Default)]
struct CreateSession {
    #[serde(default)]
    mode: SelectionMode,
}

#[derive(Deserialize)]
struct Utterance {
    #[serde(default)]
    text: String,
}

#[derive(Deserialize)]
struct Limit {
    limit: Option<usize>,
}

#[derive(Deserialize, Default)]
struct CheckpointBody {
    path: Option<PathBuf>,
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/model", get(model_info))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_info).delete(close_session))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/utterances/stream", post(stream_utterance))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/corrections", post(correction))
        .route("/queue", get(queue))
        .route("/corpus", get(get_corpus).put(put_corpus))
        .route("/checkpoint/save", post(save_checkpoint))
        .route("/checkpoint/load", post(load_checkpoint))
        .route("/jobs", post(start_job))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/cancel", post(cancel_job))
        .route("/jobs/{id}/events", get(job_events))
        .with_state(svc)
}

async fn model_info(State(svc): State<Arc<Service>>) -> Json<Value> {
    let m = svc.model();
    let domain = svc.engine().domain();
    Json(json!({
        "version": m.version,
        "kind": m.params.kind,
        "input_dim": m.params.input_dim,
        "hidden_dim": m.params.hidden_dim,
        "actions": domain.templates().iter().map(|t| &t.name).collect::<Vec<_>>(),
    }))
}

async fn create_session(
    State(svc): State<Arc<Service>>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<Json<Value>> {
    let mode = body.map(|b| b.0.mode).unwrap_or_default();
    let id = svc.create_session(mode)?;
    Ok(Json(json!({ "id": id })))
}

async fn list_sessions(State(svc): State<Arc<Service>>) -> Json<Vec<u64>> {
    Json(svc.list_sessions())
}

async fn session_info(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.session_info(id)?))
}

async fn close_session(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
) -> ApiResult<StatusCode> {
    svc.close_session(id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn post_utterance(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
    Json(u): Json<Utterance>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(
        blocking(&svc, move |s| s.post_utterance(id, &u.text)).await?,
    ))
}

/// Same turn as `post_utterance`, pushed as one `action` event per executed
/// action followed by a `done` event.
async fn stream_utterance(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
    Json(u): Json<Utterance>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let r = blocking(&svc, move |s| s.post_utterance(id, &u.text)).await?;
    let mut events: Vec<Event> = r
        .actions
        .iter()
        .enumerate()
        .map(|(i, a)| {
            Event::default()
                .event("action")
                .id((r.first_turn + i).to_string())
                .json_data(a)
                .unwrap_or_default()
        })
        .collect();
    events.push(
        Event::default()
            .event("done")
            .json_data(json!({ "closed": r.closed, "model_version": r.model_version }))
            .unwrap_or_default(),
    );
    Ok(Sse::new(stream::iter(events.into_iter().map(Ok))))
}

async fn transcript(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.transcript(id)?))
}

async fn correction(
    State(svc): State<Arc<Service>>,
    Json(req): Json<CorrectionRequest>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(
        blocking(&svc, move |s| s.submit_correction(req)).await?,
    ))
}

async fn queue(State(svc): State<Arc<Service>>, Query(q): Query<Limit>) -> impl IntoResponse {
    Json(svc.uncertainty_queue(q.limit.unwrap_or(20)))
}

async fn get_corpus(State(svc): State<Arc<Service>>) -> String {
    svc.corpus_text()
}

async fn put_corpus(State(svc): State<Arc<Service>>, body: String) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(&svc, move |s| s.put_corpus(&body)).await?))
}

async fn save_checkpoint(
    State(svc): State<Arc<Service>>,
    body: Option<Json<CheckpointBody>>,
) -> ApiResult<Json<Value>> {
    let path = body.and_then(|b| b.0.path);
    let written = blocking(&svc, move |s| s.save_checkpoint(path.as_deref())).await?;
    Ok(Json(json!({ "path": written })))
}

async fn load_checkpoint(
    State(svc): State<Arc<Service>>,
    body: Option<Json<CheckpointBody>>,
) -> ApiResult<Json<Value>> {
    let path = body.and_then(|b| b.0.path);
    let version = blocking(&svc, move |s| s.load_checkpoint(path.as_deref())).await?;
    Ok(Json(json!({ "model_version": version })))
}

async fn start_job(
    State(svc): State<Arc<Service>>,
    Json(spec): Json<JobSpec>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = svc.start_job(spec)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "id": id }))))
}

async fn job_status(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(svc.job_status(id)?))
}

async fn cancel_job(State(svc): State<Arc<Service>>, Path(id): Path<u64>) -> ApiResult<StatusCode> {
    svc.cancel_job(id)?;
    Ok(StatusCode::ACCEPTED)
}

/// Job events in order, ending after the final event.
async fn job_events(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    svc.job_status(id)?;
    let events = stream::unfold(
        (svc, 0usize, false),
        move |(svc, from, finished)| async move {
            if finished {
                return None;
            }
            let s = Arc::clone(&svc);
            let (state, batch) = tokio::task::spawn_blocking(move || {
                s.wait_job_events(id, from, Duration::from_secs(1))
            })
            .await
            .ok()?
            .ok()?;
            let next = from + batch.len();
            let done = state != JobState::Running && batch.is_empty();
            let out: Vec<Result<Event, Infallible>> = batch
                .iter()
                .map(|e| {
                    Ok(Event::default()
                        .event("job")
                        .id(e.seq.to_string())
                        .json_data(e)
                        .unwrap_or_default())
                })
                .collect();
            Some((stream::iter(out), (svc, next, done)))
        },
    )
    .flatten();
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

/// Builds the service from `config` and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let addr = config.addr();
    let svc = tokio::task::spawn_blocking(move || Service::new(config))
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
