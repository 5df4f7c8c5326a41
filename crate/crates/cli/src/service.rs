//! HTTP API for hosting solved policies and conducting live trials.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::Context;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use blockrar::solver::TIE_TOLERANCE;
use blockrar::store::{self, PolicyHeader};
use blockrar::{BlockAction, ContingencyState, Error as CoreError, Policy, StratumTable};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;

use crate::session::{now_ms, LoggedBlock, Session, LOG_EXTENSION};

pub struct LoadedPolicy {
    pub id: String,
    pub path: PathBuf,
    pub header: PolicyHeader,
    pub policy: Arc<Policy>,
}

pub struct AppState {
    pub policies: BTreeMap<String, LoadedPolicy>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    sessions_dir: PathBuf,
}

fn policy_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".tmdp.json")
        .or_else(|| name.strip_suffix(".tmdp.bin"))
        .map(str::to_string)
}

impl AppState {
    /// Loads every policy file in `policies_dir` and replays every session
    /// log in `sessions_dir`.
    pub fn load(policies_dir: &Path, sessions_dir: &Path) -> anyhow::Result<Self> {
        let mut policies = BTreeMap::new();
        let entries = std::fs::read_dir(policies_dir).with_context(|| format!("reading {}", policies_dir.display()))?;
        for entry in entries {
            let path = entry?.path();
            let Some(id) = policy_id(&path) else { continue };
            let policy = store::load(&path).with_context(|| format!("loading {}", path.display()))?;
            if policies.contains_key(&id) {
                anyhow::bail!("policy id {id} appears in more than one file");
            }
            policies.insert(
                id.clone(),
                LoadedPolicy {
                    id,
                    path,
                    header: PolicyHeader::of(&policy),
                    policy: Arc::new(policy),
                },
            );
        }
        std::fs::create_dir_all(sessions_dir).with_context(|| format!("creating {}", sessions_dir.display()))?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(sessions_dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(LOG_EXTENSION) {
                continue;
            }
            match Session::open(&path) {
                Ok(s) => match policies.get(&s.policy_id) {
                    Some(p) if s.current_state().total() <= p.policy.n_patients() => {
                        sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
                    }
                    _ => tracing::warn!(path = %path.display(), "skipping session without a matching policy"),
                },
                Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping unreadable session log"),
            }
        }
        Ok(AppState {
            policies,
            sessions: RwLock::new(sessions),
            sessions_dir: sessions_dir.to_path_buf(),
        })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    fn policy(&self, id: &str) -> Result<&LoadedPolicy, ApiError> {
        self.policies
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("no policy {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/policies", get(list_policies))
        .route("/policies/{id}", get(get_policy))
        .route("/trials", get(list_trials).post(create_trial))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/blocks", post(post_block))
        .route("/trials/{id}/whatif", get(what_if))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    extra: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    fn not_found(message: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"code": self.code, "message": self.message});
        if let Some(extra) = self.extra {
            body["detail"] = extra;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Serialize)]
struct PolicySummary {
    id: String,
    #[serde(flatten)]
    header: PolicyHeader,
    root_value: f64,
}

#[derive(Serialize)]
struct PolicyDetail {
    #[serde(flatten)]
    summary: PolicySummary,
    allowed_totals: Vec<u32>,
}

fn summary(p: &LoadedPolicy) -> PolicySummary {
    PolicySummary {
        id: p.id.clone(),
        header: p.header.clone(),
        root_value: p.policy.root_value(),
    }
}

async fn list_policies(State(app): State<Arc<AppState>>) -> Json<Vec<PolicySummary>> {
    Json(app.policies.values().map(summary).collect())
}

async fn get_policy(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<PolicyDetail> {
    let p = app.policy(&id)?;
    Ok(Json(PolicyDetail {
        summary: summary(p),
        allowed_totals: p.policy.schedule().allowed_totals().to_vec(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub block_size: u32,
    pub allocation: f64,
    #[serde(rename = "assigned_A")]
    pub assigned_a: u32,
    #[serde(rename = "assigned_B")]
    pub assigned_b: u32,
}

impl From<BlockAction> for Recommendation {
    fn from(a: BlockAction) -> Self {
        Recommendation {
            block_size: a.block_size,
            allocation: a.allocation,
            assigned_a: a.assigned_a(),
            assigned_b: a.assigned_b(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Complete,
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    policy_id: String,
    n_patients: u32,
    current_state: ContingencyState,
    status: Status,
    recommendation: Option<Recommendation>,
    /// Expected remaining utility at the current table under the policy.
    value: Option<f64>,
    /// Closest allowed totals below and above an off-schedule table.
    nearest_totals: Option<[Option<u32>; 2]>,
    block_log: Vec<LoggedBlock>,
    created_ms: u64,
}

fn view(session: &Session, policy: &Policy) -> SessionView {
    let s = session.current_state();
    let n = policy.n_patients();
    let status = if s.total() == n {
        Status::Complete
    } else {
        Status::Active
    };
    let (recommendation, value, nearest_totals) = match status {
        Status::Complete => (None, Some(0.0), None),
        Status::Active => match policy.entry(&s) {
            Ok(e) => (Some(e.action.into()), Some(e.value), None),
            Err(_) => {
                let (below, above) = policy.schedule().nearest(s.total());
                (None, None, Some([below, above]))
            }
        },
    };
    SessionView {
        session_id: session.id.clone(),
        policy_id: session.policy_id.clone(),
        n_patients: n,
        current_state: s,
        status,
        recommendation,
        value,
        nearest_totals,
        block_log: session.blocks.clone(),
        created_ms: session.created_ms,
    }
}

#[derive(Deserialize)]
struct CreateTrial {
    policy_id: String,
}

async fn create_trial(
    State(app): State<Arc<AppState>>,
    body: Result<Json<CreateTrial>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let Json(req) = body?;
    let policy = app.policy(&req.policy_id)?;
    let session = Session::create(&app.sessions_dir, &req.policy_id).map_err(ApiError::internal)?;
    let v = view(&session, &policy.policy);
    app.sessions
        .write()
        .unwrap()
        .insert(session.id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(v)))
}

#[derive(Serialize)]
struct SessionListing {
    session_id: String,
    policy_id: String,
    status: Status,
    total: u32,
    n_patients: u32,
    created_ms: u64,
}

async fn list_trials(State(app): State<Arc<AppState>>) -> Json<Vec<SessionListing>> {
    let handles: Vec<_> = app.sessions.read().unwrap().values().cloned().collect();
    let mut out = Vec::with_capacity(handles.len());
    for h in handles {
        let s = h.lock().await;
        let n = app.policies.get(&s.policy_id).map_or(0, |p| p.policy.n_patients());
        let total = s.current_state().total();
        out.push(SessionListing {
            session_id: s.id.clone(),
            policy_id: s.policy_id.clone(),
            status: if total == n { Status::Complete } else { Status::Active },
            total,
            n_patients: n,
            created_ms: s.created_ms,
        });
    }
    out.sort_by(|a, b| {
        a.created_ms
            .cmp(&b.created_ms)
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    Json(out)
}

async fn get_trial(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SessionView> {
    let handle = app.session(&id)?;
    let s = handle.lock().await;
    Ok(Json(view(&s, &app.policy(&s.policy_id)?.policy)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enforce {
    #[default]
    Strict,
    Free,
}

#[derive(Deserialize)]
struct BlockEntry {
    #[serde(rename = "successes_A")]
    successes_a: u32,
    #[serde(rename = "failures_A")]
    failures_a: u32,
    #[serde(rename = "successes_B")]
    successes_b: u32,
    #[serde(rename = "failures_B")]
    failures_b: u32,
    #[serde(default)]
    enforce: Enforce,
}

async fn post_block(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<BlockEntry>, JsonRejection>,
) -> ApiResult<SessionView> {
    let Json(req) = body?;
    let handle = app.session(&id)?;
    let mut session = handle.lock().await;
    let policy = &app.policy(&session.policy_id)?.policy;
    let s = session.current_state();
    let n = policy.n_patients();
    if s.total() == n {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "session_complete",
            "the trial is complete",
        ));
    }
    let (a, b) = (
        u64::from(req.successes_a) + u64::from(req.failures_a),
        u64::from(req.successes_b) + u64::from(req.failures_b),
    );
    let block = a + b;
    if block == 0 {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "empty_block",
            "a block must contain at least one patient",
        ));
    }
    if block > u64::from(n - s.total()) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "exceeds_remaining",
            format!("block of {block} exceeds the {} remaining patients", n - s.total()),
        ));
    }
    let stratum = StratumTable::from_outcomes(req.successes_a, req.failures_a, req.successes_b, req.failures_b);
    let recommended = policy.lookup_action(&s).ok();
    let action = match (req.enforce, recommended) {
        (Enforce::Strict, None) => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "no_recommendation",
                format!("no recommendation at {s}; strict entry is impossible"),
            ))
        }
        (Enforce::Strict, Some(r)) if (u64::from(r.assigned_a()), u64::from(r.assigned_b())) != (a, b) => {
            let mut err = ApiError::new(
                StatusCode::CONFLICT,
                "strict_mismatch",
                format!(
                    "recommended split is {}:{} but the block has {a}:{b}",
                    r.assigned_a(),
                    r.assigned_b()
                ),
            );
            err.extra = Some(json!({"recommendation": Recommendation::from(r)}));
            return Err(err);
        }
        (_, Some(r)) if (u64::from(r.assigned_a()), u64::from(r.assigned_b())) == (a, b) => r,
        _ => BlockAction::new(block as u32, a as f64 / block as f64),
    };
    session
        .append(LoggedBlock {
            action,
            stratum,
            timestamp_ms: now_ms(),
        })
        .map_err(ApiError::internal)?;
    Ok(Json(view(&session, policy)))
}

#[derive(Deserialize)]
struct WhatIfQuery {
    block_size: u32,
    allocation: f64,
}

#[derive(Serialize)]
struct WhatIf {
    candidate_value: f64,
    recommended_value: f64,
    recommendation: Recommendation,
}

async fn what_if(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    query: Result<Query<WhatIfQuery>, QueryRejection>,
) -> ApiResult<WhatIf> {
    let Query(q) = query?;
    let handle = app.session(&id)?;
    let session = handle.lock().await;
    let policy = &app.policy(&session.policy_id)?.policy;
    let s = session.current_state();
    let unprocessable = |code, message: String| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message);
    let entry = policy
        .entry(&s)
        .map_err(|e| unprocessable("no_recommendation", e.to_string()))?;
    let candidate = BlockAction::new(q.block_size, q.allocation);
    let candidate_value = match policy.action_value(&s, &candidate) {
        Ok(v) => v,
        Err(CoreError::ActionInfeasible { rule, .. }) => {
            let mut err = unprocessable("infeasible", format!("infeasible at {s}: {rule}"));
            err.extra = Some(json!({"rule": rule}));
            return Err(err);
        }
        Err(e) => return Err(unprocessable("infeasible", e.to_string())),
    };
    let recommended_value = policy.action_value(&s, &entry.action).map_err(ApiError::internal)?;
    // The solver only prefers a later candidate when it wins by more than
    // the tie tolerance; anything closer is reported as a tie.
    let candidate_value = if candidate_value > recommended_value
        && candidate_value - recommended_value <= TIE_TOLERANCE * recommended_value.abs().max(1.0)
    {
        recommended_value
    } else {
        candidate_value
    };
    Ok(Json(WhatIf {
        candidate_value,
        recommended_value,
        recommendation: entry.action.into(),
    }))
}
