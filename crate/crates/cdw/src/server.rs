//! Read-only HTTP JSON API over the warehouse.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

use cdw_core::olap::{self, Axis, QuerySpec};
use cdw_core::reports::{self, REPORT_IDS};
use cdw_core::schema::MemberPath;
use cdw_core::warehouse::{latest_version, Snapshot};
use cdw_core::Error;

use crate::access_log::{self, AccessLogEntry, AccessLogFilter, AccessLogWriter, Operation};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

pub const ACTOR_HEADER: &str = "x-actor";
pub const DEFAULT_ACTOR: &str = "anonymous";

pub struct ServerConfig {
    pub warehouse: PathBuf,
    /// Allowed CORS origins; empty allows any origin.
    pub cors_origins: Vec<String>,
    pub static_dir: Option<PathBuf>,
    /// Source of `generated_at` in reports.
    pub clock: Clock,
}

impl ServerConfig {
    pub fn new(warehouse: impl Into<PathBuf>) -> Self {
        ServerConfig {
            warehouse: warehouse.into(),
            cors_origins: Vec::new(),
            static_dir: None,
            clock: Arc::new(Utc::now),
        }
    }
}

struct AppState {
    warehouse: PathBuf,
    current: Mutex<Arc<Snapshot>>,
    log: AccessLogWriter,
    clock: Clock,
}

impl AppState {
    /// The newest committed snapshot, reopened only when the version moved.
    fn snapshot(&self) -> Result<Arc<Snapshot>, Error> {
        let cached = self.current.lock().expect("snapshot cache poisoned").clone();
        if latest_version(&self.warehouse)?.unwrap_or(0) == cached.version() {
            return Ok(cached);
        }
        let fresh = Arc::new(Snapshot::open(&self.warehouse)?);
        *self.current.lock().expect("snapshot cache poisoned") = fresh.clone();
        Ok(fresh)
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

pub fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::UnknownCube(_)
        | Error::UnknownMember(_)
        | Error::UnknownCancerType(_)
        | Error::UnknownDrug(_)
        | Error::UnknownBatch(_) => StatusCode::NOT_FOUND,
        e if e.is_validation() => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn error_response(status: StatusCode, code: &str, message: String) -> Response {
    let body = serde_json::to_vec(&ErrorBody { code, message }).expect("error body serializes");
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn core_error(e: &Error) -> Response {
    error_response(status_of(e), e.code(), e.to_string())
}

fn json_response<T: Serialize>(value: &T) -> Result<Response, Error> {
    let body = serde_json::to_vec(value)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

fn actor(headers: &HeaderMap) -> String {
    headers
        .get(ACTOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .unwrap_or(DEFAULT_ACTOR)
        .to_string()
}

/// Runs `work` against the current snapshot off the async threads and
/// records exactly one access-log entry for it.
async fn analytical<F>(state: Arc<AppState>, headers: &HeaderMap, operation: Operation, request: Vec<u8>, work: F) -> Response
where
    F: FnOnce(&AppState, Arc<Snapshot>) -> Result<Response, Error> + Send + 'static,
{
    let started = Instant::now();
    let timestamp = Utc::now();
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || worker.snapshot().and_then(|s| work(&worker, s)))
        .await
        .unwrap_or_else(|e| Err(Error::InvalidConfig(format!("request worker failed: {e}"))));
    let entry = AccessLogEntry {
        timestamp,
        actor: actor(headers),
        operation,
        request_digest: access_log::digest(&request),
        duration_ms: started.elapsed().as_millis() as u64,
        outcome: access_log::outcome(&result),
    };
    if let Err(e) = state.log.record(entry).await {
        log::error!("access log append failed: {e}");
    }
    match result {
        Ok(r) => r,
        Err(e) => core_error(&e),
    }
}

fn get_digest(uri: &Uri) -> Vec<u8> {
    uri.path_and_query()
        .map(|p| p.as_str().to_string())
        .unwrap_or_else(|| uri.path().to_string())
        .into_bytes()
}

async fn catalog(State(state): State<Arc<AppState>>, headers: HeaderMap, uri: Uri) -> Response {
    analytical(state, &headers, Operation::Catalog, get_digest(&uri), |_, _| {
        json_response(&olap::catalog())
    })
    .await
}

async fn query(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let request = body.to_vec();
    analytical(state, &headers, Operation::Query, request.clone(), move |_, snap| {
        let spec = parse_spec(&request)?;
        json_response(&olap::query(&snap, &spec)?)
    })
    .await
}

fn parse_spec(body: &[u8]) -> Result<QuerySpec, Error> {
    let text = std::str::from_utf8(body).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    QuerySpec::from_json(text)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Down,
    Up,
}

/// Body of `POST /api/drill`. `member_path` is required for drilling down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrillRequest {
    pub spec: QuerySpec,
    pub axis: Axis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub member_path: Option<MemberPath>,
    #[serde(default)]
    pub direction: Direction,
}

pub fn apply_drill(snapshot: &Snapshot, req: &DrillRequest) -> Result<QuerySpec, Error> {
    match req.direction {
        Direction::Down => {
            let member = req
                .member_path
                .as_ref()
                .ok_or_else(|| Error::InvalidSpec("drilling down needs a member_path".into()))?;
            olap::drill_down(snapshot, &req.spec, req.axis, req.dimension.as_deref(), member)
        }
        Direction::Up => olap::roll_up(&req.spec, req.axis, req.dimension.as_deref()),
    }
}

async fn drill(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    let request = body.to_vec();
    analytical(state, &headers, Operation::Drill, request.clone(), move |_, snap| {
        let req: DrillRequest = serde_json::from_slice(&request).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        json_response(&apply_drill(&snap, &req)?)
    })
    .await
}

async fn report(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(mut params): Query<BTreeMap<String, String>>,
    headers: HeaderMap,
    uri: Uri,
) -> Response {
    if !REPORT_IDS.contains(&id.as_str()) {
        return error_response(StatusCode::NOT_FOUND, "UnknownReport", format!("no report named '{id}'"));
    }
    analytical(state, &headers, Operation::Report, get_digest(&uri), move |app, snap| {
        let csv = params.remove("format").is_some_and(|f| f.eq_ignore_ascii_case("csv"));
        let result = reports::run_report(&snap, &id, &params, (app.clock)())?;
        if csv {
            Ok(([(header::CONTENT_TYPE, "text/csv")], result.to_csv()?).into_response())
        } else {
            json_response(&result)
        }
    })
    .await
}

async fn access_log_entries(
    State(state): State<Arc<AppState>>,
    Query(filter): Query<AccessLogFilter>,
) -> Response {
    match access_log::read(&access_log::log_path(&state.warehouse), &filter) {
        Ok(entries) => match json_response(&entries) {
            Ok(r) => r,
            Err(e) => core_error(&e),
        },
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "Io", format!("{e:#}")),
    }
}

fn cors(origins: &[String]) -> anyhow::Result<CorsLayer> {
    let layer = CorsLayer::new()
        .allow_methods(Any)
        .allow_headers(Any);
    if origins.is_empty() {
        return Ok(layer.allow_origin(Any));
    }
    let list = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).with_context(|| format!("invalid CORS origin '{o}'")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(list)))
}

/// Builds the router after checking that the warehouse opens cleanly. Must
/// be called inside a tokio runtime.
pub fn router(config: ServerConfig) -> anyhow::Result<Router> {
    let snapshot = Snapshot::open(&config.warehouse)
        .with_context(|| format!("opening warehouse {}", config.warehouse.display()))?;
    let state = Arc::new(AppState {
        log: AccessLogWriter::spawn(access_log::log_path(&config.warehouse)),
        warehouse: config.warehouse,
        current: Mutex::new(Arc::new(snapshot)),
        clock: config.clock,
    });
    let mut app = Router::new()
        .route("/api/catalog", get(catalog))
        .route("/api/query", post(query))
        .route("/api/drill", post(drill))
        .route("/api/reports/{id}", get(report))
        .route("/api/access-log", get(access_log_entries))
        .with_state(state);
    if let Some(dir) = config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    Ok(app.layer(cors(&config.cors_origins)?))
}

pub async fn serve(config: ServerConfig, bind: SocketAddr) -> anyhow::Result<()> {
    let app = router(config)?;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
