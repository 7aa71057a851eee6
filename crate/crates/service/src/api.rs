//! Operator HTTP API. All bodies are JSON except the feature export (CSV)
//! and the record stream (server-sent events carrying JSON records).

use std::convert::Infallible;
use std::sync::mpsc::Sender;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use phasorwatch::AnomalyClass;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::hub::StreamRecord;
use crate::pipeline::{request, Control, Shared, Status};
use crate::store::{EventView, LabelRecord, ThresholdChange};

#[derive(Clone)]
pub struct AppState {
    pub shared: Arc<Shared>,
    pub control: Sender<Control>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/config", get(config))
        .route("/model", get(model))
        .route("/events", get(events))
        .route("/events/{id}", get(event))
        .route("/events/{id}/label", post(label))
        .route("/threshold", post(threshold))
        .route("/stream", get(stream_records))
        .route("/export/features.csv", get(export_features))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let code = match &self {
            ServiceError::Validation(_) | ServiceError::Config(_) => StatusCode::BAD_REQUEST,
            ServiceError::Core(phasorwatch::Error::Validation(_)) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Stopped => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub subscribers: usize,
    #[serde(flatten)]
    pub pipeline: Status,
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        subscribers: s.shared.hub.subscriber_count(),
        pipeline: s.shared.status(),
    })
}

async fn config(State(s): State<AppState>) -> Json<crate::config::PipelineConfig> {
    Json(s.shared.config.clone())
}

async fn model(State(s): State<AppState>) -> Json<crate::hub::ModelSnapshot> {
    Json(s.shared.model())
}

#[derive(Debug, Deserialize)]
struct Since {
    since: Option<u64>,
}

async fn events(State(s): State<AppState>, Query(q): Query<Since>) -> Json<Vec<EventView>> {
    Json(s.shared.store.read().views_since(q.since.unwrap_or(0)))
}

async fn event(State(s): State<AppState>, Path(id): Path<u64>) -> ApiResult<EventView> {
    s.shared
        .store
        .read()
        .view(id)
        .map(Json)
        .ok_or_else(|| ServiceError::NotFound(format!("event {id}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ThresholdRequest {
    pub value: f64,
    #[serde(default)]
    pub author: Option<String>,
}

async fn threshold(
    State(s): State<AppState>,
    Json(body): Json<ThresholdRequest>,
) -> ApiResult<ThresholdChange> {
    let author = body.author.unwrap_or_else(|| "anonymous".into());
    let value = body.value;
    request(&s.control, |reply| Control::SetThreshold { value, author, reply })
        .await
        .map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub class: String,
    pub operator: String,
}

async fn label(
    State(s): State<AppState>,
    Path(id): Path<u64>,
    Json(body): Json<LabelRequest>,
) -> ApiResult<LabelRecord> {
    let class: AnomalyClass = body
        .class
        .parse()
        .map_err(|e: phasorwatch::Error| ServiceError::Validation(e.to_string()))?;
    let operator = body.operator;
    request(&s.control, |reply| Control::Label {
        event_id: id,
        class,
        operator,
        reply,
    })
    .await
    .map(Json)
}

fn record_kind(r: &StreamRecord) -> &'static str {
    match r {
        StreamRecord::Snapshot { .. } => "snapshot",
        StreamRecord::Score(_) => "score",
        StreamRecord::EventOpened { .. } => "event_opened",
        StreamRecord::EventClosed(_) => "event_closed",
        StreamRecord::Threshold(_) => "threshold",
        StreamRecord::Label(_) => "label",
        StreamRecord::Dropped { .. } => "dropped",
        StreamRecord::End => "end",
    }
}

async fn stream_records(
    State(s): State<AppState>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let sub = s.shared.hub.subscribe();
    let records = stream::unfold(sub, |sub| async move {
        let record = sub.recv().await?;
        let event = Event::default()
            .event(record_kind(&record))
            .data(serde_json::to_string(&record).expect("records serialize"));
        Some((Ok(event), sub))
    });
    Sse::new(records).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    operator_only: bool,
}

async fn export_features(State(s): State<AppState>, Query(q): Query<ExportQuery>) -> Response {
    let csv = s.shared.store.read().export_features_csv(q.operator_only);
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response()
}

/// Binds `addr` and serves until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    addr: &str,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
