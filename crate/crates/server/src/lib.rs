//! JSON API over a [`ConsultService`]:
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/api/sessions` | - | 201 session |
//! | POST | `/api/sessions/{id}/turns` | `{message, k?, included_keys?}` | turn |
//! | GET | `/api/sessions/{id}` | - | session |
//! | POST | `/api/retrieve` | `{query, k?}` | retrieval result |
//! | POST | `/api/audit` | `{text}` | audit report |
//! | POST | `/api/rankings` | ranking ballot | 201 |
//! | GET | `/api/rankings/summary` | - | rank proportions per system |

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::info;

use lexlab_core::audit::AuditError;
use lexlab_core::consult::{ConsultError, ConsultOverrides, ConsultService, FailureStage};
use lexlab_core::corpus::CitationKey;
use lexlab_core::evaluator::{aggregate_rankings, EvalError, HumanRankRecord, RankingSummary};
use lexlab_core::retriever::{RetrievalError, DEFAULT_K};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        Self { status, body: json!({ "error": message.to_string() }) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ConsultError> for ApiError {
    fn from(e: ConsultError) -> Self {
        match e {
            ConsultError::UnknownSession(_) => Self::new(StatusCode::NOT_FOUND, e),
            ConsultError::EmptyQuery => Self::new(StatusCode::BAD_REQUEST, e),
            ConsultError::TurnFailed { reason, stage, turn } => {
                let status = match stage {
                    FailureStage::Query | FailureStage::Retrieval => StatusCode::BAD_REQUEST,
                    FailureStage::Chat => StatusCode::BAD_GATEWAY,
                    FailureStage::Audit => StatusCode::UNPROCESSABLE_ENTITY,
                };
                Self { status, body: json!({ "error": reason, "stage": stage, "turn": turn }) }
            }
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other),
        }
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Backend(_) => Self::new(StatusCode::BAD_GATEWAY, e),
            _ => Self::new(StatusCode::BAD_REQUEST, e),
        }
    }
}

impl From<AuditError> for ApiError {
    fn from(e: AuditError) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e)
    }
}

/// Ranking ballots collected through the API.
#[derive(Debug, Default)]
pub struct BallotBox {
    /// Systems every non-draw ballot must rank; fixed by the first ballot when empty.
    systems: Mutex<Vec<String>>,
    records: Mutex<Vec<HumanRankRecord>>,
}

impl BallotBox {
    pub fn new(systems: Vec<String>) -> Self {
        Self { systems: Mutex::new(systems), records: Mutex::new(Vec::new()) }
    }

    pub fn submit(&self, record: HumanRankRecord) -> Result<usize, EvalError> {
        record.validate()?;
        let mut systems = self.systems.lock().unwrap();
        if !record.draw {
            let ranked: BTreeSet<&str> = record.entries.iter().map(|e| e.system_id.as_str()).collect();
            if systems.is_empty() {
                *systems = ranked.iter().map(|s| s.to_string()).collect();
            } else if ranked != systems.iter().map(String::as_str).collect() {
                return Err(EvalError::MalformedBallot(record.question_id));
            }
        }
        let mut records = self.records.lock().unwrap();
        records.push(record);
        Ok(records.len())
    }

    pub fn summary(&self) -> Result<RankingSummary, EvalError> {
        let systems = self.systems.lock().unwrap().clone();
        let records = self.records.lock().unwrap();
        if records.is_empty() {
            return Ok(RankingSummary { total: 0, draw: 0.0, systems: Default::default() });
        }
        aggregate_rankings(&records, &systems)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<ConsultService>,
    pub ballots: Arc<BallotBox>,
}

impl AppState {
    pub fn new(service: ConsultService) -> Self {
        Self { service: Arc::new(service), ballots: Arc::new(BallotBox::default()) }
    }

    pub fn with_ballots(mut self, ballots: BallotBox) -> Self {
        self.ballots = Arc::new(ballots);
        self
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/turns", post(post_turn))
        .route("/api/retrieve", post(post_retrieve))
        .route("/api/audit", post(post_audit))
        .route("/api/rankings", post(post_ranking))
        .route("/api/rankings/summary", get(get_summary))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
}

async fn create_session(State(st): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    let session = blocking(move || Ok(st.service.create_session()?)).await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let session = blocking(move || Ok(st.service.session(&id)?)).await?;
    Ok(Json(session))
}

#[derive(Debug, Deserialize)]
struct TurnBody {
    message: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    included_keys: Option<Vec<CitationKey>>,
}

async fn post_turn(State(st): State<AppState>, Path(id): Path<String>, Json(body): Json<TurnBody>) -> Result<impl IntoResponse, ApiError> {
    let overrides = ConsultOverrides { k: body.k, included_keys: body.included_keys };
    let turn = blocking(move || Ok(st.service.consult(&id, &body.message, &overrides)?)).await?;
    Ok(Json(turn))
}

#[derive(Debug, Deserialize)]
struct RetrieveBody {
    query: String,
    #[serde(default)]
    k: Option<usize>,
}

async fn post_retrieve(State(st): State<AppState>, Json(body): Json<RetrieveBody>) -> Result<impl IntoResponse, ApiError> {
    let result = blocking(move || Ok(st.service.retrieve(&body.query, body.k.unwrap_or(DEFAULT_K))?)).await?;
    Ok(Json(result))
}

#[derive(Debug, Deserialize)]
struct AuditBody {
    text: String,
}

async fn post_audit(State(st): State<AppState>, Json(body): Json<AuditBody>) -> Result<impl IntoResponse, ApiError> {
    let report = blocking(move || Ok(st.service.auditor().audit(&body.text)?)).await?;
    Ok(Json(report))
}

async fn post_ranking(State(st): State<AppState>, Json(record): Json<HumanRankRecord>) -> Result<impl IntoResponse, ApiError> {
    let count = st.ballots.submit(record).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    Ok((StatusCode::CREATED, Json(json!({ "accepted": count }))))
}

async fn get_summary(State(st): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    let summary = st.ballots.summary().map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    Ok(Json(summary))
}
