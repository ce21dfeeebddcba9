use axum::extract::{DefaultBodyLimit, FromRequest, Path, Request, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use surveil_core::analysis::{summarize, SummaryReport};
use surveil_core::api::{
    AnalyzeRequest, CreateSessionRequest, DecisionRequest, DecisionResponse, EvaluateRequest,
    InstructionsView, MplRequest, PayoffView, PlanAck, PlanRequest, QuizRequest, QuizResponse,
    ResultView, SessionView, SimulateRequest, SolveRequest, SolveResponse, SynthRequest,
};
use surveil_core::agents::generate_sessions;
use surveil_core::policy::{evaluate_policy_exact, simulate_missions, ExactEvaluation, PolicyStats};
use surveil_core::session::{Questionnaire, SessionLog};
use surveil_core::MissionConfig;

use crate::error::ApiError;
use crate::AppState;

/// Upper bounds on compute requests.
const MAX_SIMULATED_MISSIONS: u64 = 20_000_000;
const MAX_SYNTH_AGENTS: u32 = 1_000_000;
const BODY_LIMIT: usize = 256 * 1024 * 1024;

/// JSON body whose rejections use the API error format.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(e) => Err(ApiError::validation(e.body_text())),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", get(view))
        .route("/api/sessions/{id}/instructions", get(instructions))
        .route("/api/sessions/{id}/instructions/ack", post(ack))
        .route("/api/sessions/{id}/quiz", post(quiz))
        .route("/api/sessions/{id}/decision", post(decision))
        .route("/api/sessions/{id}/plan", post(plan))
        .route("/api/sessions/{id}/result", get(result))
        .route("/api/sessions/{id}/questionnaire", post(questionnaire))
        .route("/api/sessions/{id}/mpl", post(mpl))
        .route("/api/sessions/{id}/payoff", get(payoff))
        .route("/api/solve", post(solve))
        .route("/api/evaluate", post(evaluate))
        .route("/api/simulate", post(simulate))
        .route("/api/synth", post(synth))
        .route("/api/analyze", post(analyze))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn create(
    State(st): State<AppState>,
    ApiJson(req): ApiJson<CreateSessionRequest>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let session = st.create_session(&req)?;
    Ok((StatusCode::CREATED, Json(session.view())))
}

async fn view(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    st.read_session(&id, |s| Ok(s.view())).await.map(Json)
}

async fn instructions(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<InstructionsView> {
    st.read_session(&id, |s| Ok(s.instructions())).await.map(Json)
}

async fn ack(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    st.update_session(&id, |s, _| {
        let events = s.ack_instructions()?;
        Ok((s.view(), events))
    })
    .await
    .map(Json)
}

async fn quiz(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<QuizRequest>,
) -> ApiResult<QuizResponse> {
    st.update_session(&id, |s, _| s.submit_quiz(&req.answers)).await.map(Json)
}

async fn decision(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<DecisionRequest>,
) -> ApiResult<DecisionResponse> {
    st.update_session(&id, |s, _| s.decide(&req)).await.map(Json)
}

async fn plan(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<PlanRequest>,
) -> ApiResult<PlanAck> {
    st.update_session(&id, |s, _| s.submit_plan(&req)).await.map(Json)
}

async fn result(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<ResultView> {
    st.read_session(&id, |s| s.result()).await.map(Json)
}

async fn questionnaire(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<Questionnaire>,
) -> ApiResult<SessionView> {
    st.update_session(&id, |s, _| {
        let events = s.submit_questionnaire(req)?;
        Ok((s.view(), events))
    })
    .await
    .map(Json)
}

async fn mpl(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<MplRequest>,
) -> ApiResult<PayoffView> {
    st.update_session(&id, |s, app| {
        let mut draws = app.0.payout_rng.lock().expect("payout rng lock");
        s.submit_mpl(&req, || app.next_participant_index(), &mut *draws)
    })
    .await
    .map(Json)
}

async fn payoff(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<PayoffView> {
    st.read_session(&id, |s| s.payoff()).await.map(Json)
}

fn mission_config(st: &AppState, given: Option<MissionConfig>) -> Result<MissionConfig, ApiError> {
    let cfg = given.unwrap_or_else(|| st.settings().mission.clone());
    cfg.validate()?;
    Ok(cfg)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

async fn solve(State(st): State<AppState>, ApiJson(req): ApiJson<SolveRequest>) -> ApiResult<SolveResponse> {
    let cfg = mission_config(&st, req.config)?;
    blocking(move || Ok(SolveResponse::compute(&cfg)?)).await
}

async fn evaluate(
    State(st): State<AppState>,
    ApiJson(req): ApiJson<EvaluateRequest>,
) -> ApiResult<ExactEvaluation> {
    let cfg = mission_config(&st, req.config)?;
    blocking(move || {
        let mut policy = req.policy.build(&cfg, req.treatment)?;
        Ok(evaluate_policy_exact(&mut policy, &cfg)?)
    })
    .await
}

async fn simulate(
    State(st): State<AppState>,
    ApiJson(req): ApiJson<SimulateRequest>,
) -> ApiResult<PolicyStats> {
    let cfg = mission_config(&st, req.config)?;
    if req.n_missions > MAX_SIMULATED_MISSIONS {
        return Err(ApiError::validation(format!("at most {MAX_SIMULATED_MISSIONS} missions per request")));
    }
    blocking(move || {
        let policy = req.policy.build(&cfg, req.treatment)?;
        Ok(simulate_missions(&policy, &cfg, req.seed, req.n_missions)?)
    })
    .await
}

async fn synth(State(st): State<AppState>, ApiJson(req): ApiJson<SynthRequest>) -> ApiResult<Vec<SessionLog>> {
    let cfg = mission_config(&st, req.config)?;
    if req.population.size() > MAX_SYNTH_AGENTS {
        return Err(ApiError::validation(format!("at most {MAX_SYNTH_AGENTS} agents per request")));
    }
    blocking(move || Ok(generate_sessions(&req.population, &cfg)?)).await
}

async fn analyze(
    State(st): State<AppState>,
    ApiJson(req): ApiJson<AnalyzeRequest>,
) -> ApiResult<SummaryReport> {
    let opts = req.options.unwrap_or_else(|| st.settings().analysis.clone());
    opts.validate()?;
    blocking(move || {
        for s in &req.sessions {
            s.verify()?;
        }
        Ok(summarize(&req.sessions, &opts))
    })
    .await
}
