//! HTTP control surface over a run directory.
//!
//! Every response body is a JSON object carrying the schema version `v`.
//! Reads are served from the latest published [`RunSnapshot`]; score
//! submissions and pause requests are queued to the exploration loop.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use holmes_core::analysis::{diversity, DiversityBins, BINS_PER_AXIS};
use holmes_core::runstore::{
    ControlHandle, RunDir, RunSnapshot, ScoreRejection, ScoreSubmission, SnapshotCell, SCHEMA_VERSION,
};
use holmes_core::NodeKey;

/// Side of a served gallery thumbnail.
pub const THUMBNAIL_SIZE: u32 = 64;
pub const DEFAULT_PATTERN_LIMIT: usize = 24;
const REPLY_TIMEOUT: Duration = Duration::from_secs(600);

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("no snapshot published yet")]
    NotReady,
    #[error(transparent)]
    Core(#[from] holmes_core::Error),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ApiError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ApiError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ApiError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ApiError::Unprocessable(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
            ApiError::NotReady => (StatusCode::SERVICE_UNAVAILABLE, "not_ready"),
            ApiError::Core(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let body = json!({ "v": SCHEMA_VERSION, "error": kind, "detail": self.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared between handlers. Without a control handle the run is served
/// read-only and write endpoints answer with a conflict.
#[derive(Clone)]
pub struct AppState {
    run_dir: Arc<RunDir>,
    snapshots: SnapshotCell,
    control: Option<ControlHandle>,
}

impl AppState {
    pub fn live(run_dir: RunDir, snapshots: SnapshotCell, control: ControlHandle) -> Self {
        Self {
            run_dir: Arc::new(run_dir),
            snapshots,
            control: Some(control),
        }
    }

    /// Serves a run that is not executing, from its latest checkpoint.
    pub fn offline(root: &Path) -> holmes_core::Result<Self> {
        let run_dir = RunDir::open(root)?;
        let snapshots = SnapshotCell::new();
        snapshots.publish(RunSnapshot::from_run_dir(&run_dir)?);
        Ok(Self {
            run_dir: Arc::new(run_dir),
            snapshots,
            control: None,
        })
    }

    fn snapshot(&self) -> ApiResult<Arc<RunSnapshot>> {
        self.snapshots.load().ok_or(ApiError::NotReady)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/tree", get(tree))
        .route("/node/{key}/patterns", get(patterns))
        .route("/scores", post(scores))
        .route("/control/pause", post(pause))
        .route("/analysis/diversity", get(analysis_diversity))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

async fn status(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let s = st.snapshot()?;
    Ok(Json(json!({
        "v": SCHEMA_VERSION,
        "snapshot_version": s.version,
        "run_id": s.manifest.run_id,
        "status": s.manifest.status,
        "step": s.manifest.step,
        "n_total": s.manifest.config.n_total,
        "tree_version": s.manifest.tree_version,
        "variant": s.manifest.config.variant,
        "guidance_mode": s.manifest.config.guidance,
        "leaves": s.leaves(),
        "active_scores": s.active_scores,
        "guidance": s.guidance,
        "interactive": st.control.is_some(),
    })))
}

#[derive(Serialize)]
struct TreeNode<'a> {
    key: &'a NodeKey,
    parent: Option<NodeKey>,
    children: Vec<NodeKey>,
    depth: usize,
    population: usize,
    frozen: bool,
    leaf: bool,
    split_threshold: usize,
    boundary: Option<BoundarySummary>,
}

#[derive(Serialize)]
struct BoundarySummary {
    method: Option<holmes_core::holmes::BoundaryMethod>,
    weight_norm: f64,
    bias: f64,
    left: usize,
    right: usize,
}

async fn tree(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let s = st.snapshot()?;
    let population = |k: &NodeKey| s.members.get(k).map_or(0, Vec::len);
    let nodes: Vec<TreeNode> = s
        .tree
        .nodes
        .iter()
        .map(|n| {
            let children = if n.leaf { vec![] } else { vec![n.key.left(), n.key.right()] };
            let boundary = n.boundary.as_ref().map(|b| BoundarySummary {
                method: n.boundary_method,
                weight_norm: b.weight.iter().map(|w| w * w).sum::<f64>().sqrt(),
                bias: b.bias,
                left: population(&n.key.left()),
                right: population(&n.key.right()),
            });
            TreeNode {
                key: &n.key,
                parent: n.key.parent(),
                children,
                depth: n.depth,
                population: n.population,
                frozen: n.frozen,
                leaf: n.leaf,
                split_threshold: n.split_threshold,
                boundary,
            }
        })
        .collect();
    Ok(Json(json!({
        "v": SCHEMA_VERSION,
        "snapshot_version": s.version,
        "tree_version": s.manifest.tree_version,
        "nodes": nodes,
    })))
}

#[derive(Debug, Deserialize)]
pub struct PatternQuery {
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: usize,
    /// Full-resolution PNGs instead of thumbnails.
    #[serde(default)]
    pub full: bool,
}

#[derive(Serialize)]
struct PatternItem {
    entry: usize,
    category: holmes_core::analysis::PatternCategory,
    goal_directed: bool,
    goal: Vec<f32>,
    width: u32,
    png_base64: String,
}

fn parse_key(raw: &str) -> ApiResult<NodeKey> {
    NodeKey::parse(raw).map_err(|e| ApiError::BadRequest(e.to_string()))
}

async fn patterns(
    State(st): State<AppState>,
    UrlPath(raw): UrlPath<String>,
    Query(q): Query<PatternQuery>,
) -> ApiResult<Json<Value>> {
    let key = parse_key(&raw)?;
    let s = st.snapshot()?;
    let members = s
        .members
        .get(&key)
        .ok_or_else(|| ApiError::NotFound(format!("unknown node {key}")))?;
    let limit = q.limit.unwrap_or(DEFAULT_PATTERN_LIMIT);
    let page: Vec<(usize, Vec<f32>)> = members.iter().skip(q.offset).take(limit).cloned().collect();
    let population = members.len();
    let dir = st.run_dir.clone();
    let thumb = (!q.full).then_some(THUMBNAIL_SIZE);
    let items = tokio::task::spawn_blocking(move || -> ApiResult<Vec<PatternItem>> {
        page.into_iter()
            .map(|(entry, goal)| {
                let meta = dir.read_entry(entry)?;
                let o = dir.read_observation(entry)?;
                Ok(PatternItem {
                    entry,
                    category: meta.category,
                    goal_directed: meta.goal_directed,
                    goal,
                    width: thumb.unwrap_or(o.size() as u32),
                    png_base64: base64::engine::general_purpose::STANDARD.encode(o.to_png(thumb)?),
                })
            })
            .collect()
    })
    .await
    .map_err(|e| ApiError::Core(holmes_core::Error::InvalidArgument(e.to_string())))??;
    Ok(Json(json!({
        "v": SCHEMA_VERSION,
        "snapshot_version": s.version,
        "key": key,
        "population": population,
        "offset": q.offset,
        "limit": limit,
        "items": items,
    })))
}

async fn scores(State(st): State<AppState>, Json(sub): Json<ScoreSubmission>) -> ApiResult<Json<Value>> {
    let control = st
        .control
        .clone()
        .ok_or_else(|| ApiError::Conflict("run is not executing; scores cannot be applied".into()))?;
    let s = st.snapshot()?;
    if s.manifest.status != holmes_core::RunStatus::PausedAwaitingScores {
        return Err(ApiError::Conflict(ScoreRejection::NotPaused.to_string()));
    }
    sub.validate(&s.leaves())
        .map_err(|e| ApiError::Unprocessable(e.to_string()))?;
    let rx = control
        .submit(sub)
        .ok_or_else(|| ApiError::Conflict("exploration loop has exited".into()))?;
    let verdict = tokio::task::spawn_blocking(move || rx.recv_timeout(REPLY_TIMEOUT))
        .await
        .map_err(|e| ApiError::Core(holmes_core::Error::InvalidArgument(e.to_string())))?
        .map_err(|_| ApiError::Conflict("exploration loop did not answer".into()))?;
    match verdict {
        Ok(()) => {
            let status = st.snapshot()?.manifest.status;
            Ok(Json(json!({ "v": SCHEMA_VERSION, "accepted": true, "status": status })))
        }
        Err(ScoreRejection::NotPaused) => Err(ApiError::Conflict(ScoreRejection::NotPaused.to_string())),
        Err(ScoreRejection::Invalid(d)) => Err(ApiError::Unprocessable(d)),
    }
}

async fn pause(State(st): State<AppState>) -> ApiResult<(StatusCode, Json<Value>)> {
    let control = st
        .control
        .as_ref()
        .ok_or_else(|| ApiError::Conflict("run is not executing".into()))?;
    let s = st.snapshot()?;
    match s.manifest.status {
        holmes_core::RunStatus::Finished => Err(ApiError::Conflict("run has finished".into())),
        holmes_core::RunStatus::PausedAwaitingScores => Ok((
            StatusCode::OK,
            Json(json!({ "v": SCHEMA_VERSION, "requested": false, "status": s.manifest.status })),
        )),
        holmes_core::RunStatus::Running => {
            if !control.pause() {
                return Err(ApiError::Conflict("exploration loop has exited".into()));
            }
            Ok((
                StatusCode::ACCEPTED,
                Json(json!({ "v": SCHEMA_VERSION, "requested": true, "status": s.manifest.status })),
            ))
        }
    }
}

#[derive(Serialize)]
struct NodeDiversity<'a> {
    key: &'a NodeKey,
    leaf: bool,
    population: usize,
    diversity: usize,
}

async fn analysis_diversity(State(st): State<AppState>) -> ApiResult<Json<Value>> {
    let s = st.snapshot()?;
    let bins = DiversityBins::default();
    let nodes: Vec<NodeDiversity> = s
        .tree
        .nodes
        .iter()
        .map(|n| {
            let members = s.members.get(&n.key).map(Vec::as_slice).unwrap_or_default();
            NodeDiversity {
                key: &n.key,
                leaf: n.leaf,
                population: members.len(),
                diversity: diversity(members.iter().map(|(_, g)| g.as_slice()), &bins),
            }
        })
        .collect();
    Ok(Json(json!({
        "v": SCHEMA_VERSION,
        "snapshot_version": s.version,
        "bins_per_axis": BINS_PER_AXIS,
        "range": bins.ranges.first(),
        "nodes": nodes,
    })))
}
