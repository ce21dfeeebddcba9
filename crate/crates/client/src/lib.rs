//! Async client for the experiment service.
//!
//! ```no_run
//! # async fn demo() -> Result<(), surveil_client::ClientError> {
//! use surveil_client::ExperimentClient;
//! use surveil_core::api::CreateSessionRequest;
//!
//! let client = ExperimentClient::new("http://127.0.0.1:8080")?;
//! let session = client.create_session(&CreateSessionRequest::default()).await?;
//! println!("{} plays {}", session.participant_code, session.treatment);
//! # Ok(())
//! # }
//! ```

use reqwest::{Method, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;
use surveil_core::analysis::SummaryReport;
use surveil_core::api::{
    AnalyzeRequest, CreateSessionRequest, DecisionRequest, DecisionResponse, ErrorBody,
    EvaluateRequest, InstructionsView, MplRequest, PayoffView, PlanAck, PlanRequest, QuizRequest,
    QuizResponse, ResultView, SessionView, SimulateRequest, SolveRequest, SolveResponse,
    SynthRequest,
};
use surveil_core::policy::{ExactEvaluation, PolicyStats};
use surveil_core::session::{Questionnaire, SessionLog};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("bad service url: {0}")]
    Url(String),
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("service answered {status}: {} ({:?})", body.message, body.code)]
    Api { status: u16, body: ErrorBody },
    #[error("service answered {status} with an unexpected body: {text}")]
    Unexpected { status: u16, text: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct ExperimentClient {
    base: Url,
    http: reqwest::Client,
}

impl ExperimentClient {
    pub fn new(base: &str) -> Result<Self> {
        Self::with_client(base, reqwest::Client::new())
    }

    pub fn with_client(base: &str, http: reqwest::Client) -> Result<Self> {
        let mut base = Url::parse(base).map_err(|e| ClientError::Url(format!("{base}: {e}")))?;
        if !base.path().ends_with('/') {
            let path = format!("{}/", base.path());
            base.set_path(&path);
        }
        Ok(Self { base, http })
    }

    async fn send<B: Serialize + ?Sized, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
    ) -> Result<T> {
        let url = self.base.join(path).map_err(|e| ClientError::Url(e.to_string()))?;
        let mut req = self.http.request(method, url);
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            return serde_json::from_slice(&bytes).map_err(|_| ClientError::Unexpected {
                status: status.as_u16(),
                text: String::from_utf8_lossy(&bytes).into_owned(),
            });
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => Err(ClientError::Api { status: status.as_u16(), body }),
            Err(_) => Err(ClientError::Unexpected {
                status: status.as_u16(),
                text: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.send::<(), T>(Method::GET, path, None).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(Method::POST, path, Some(body)).await
    }

    pub async fn health(&self) -> Result<()> {
        let url = self.base.join("api/health").map_err(|e| ClientError::Url(e.to_string()))?;
        self.http.get(url).send().await?.error_for_status()?;
        Ok(())
    }

    pub async fn create_session(&self, req: &CreateSessionRequest) -> Result<SessionView> {
        self.post("api/sessions", req).await
    }

    pub async fn session(&self, id: &str) -> Result<SessionView> {
        self.get(&format!("api/sessions/{id}")).await
    }

    pub async fn instructions(&self, id: &str) -> Result<InstructionsView> {
        self.get(&format!("api/sessions/{id}/instructions")).await
    }

    pub async fn ack_instructions(&self, id: &str) -> Result<SessionView> {
        self.send::<(), _>(Method::POST, &format!("api/sessions/{id}/instructions/ack"), None).await
    }

    pub async fn submit_quiz(&self, id: &str, answers: &[f64]) -> Result<QuizResponse> {
        self.post(&format!("api/sessions/{id}/quiz"), &QuizRequest { answers: answers.to_vec() }).await
    }

    pub async fn decide(&self, id: &str, req: &DecisionRequest) -> Result<DecisionResponse> {
        self.post(&format!("api/sessions/{id}/decision"), req).await
    }

    pub async fn submit_plan(&self, id: &str, req: &PlanRequest) -> Result<PlanAck> {
        self.post(&format!("api/sessions/{id}/plan"), req).await
    }

    pub async fn result(&self, id: &str) -> Result<ResultView> {
        self.get(&format!("api/sessions/{id}/result")).await
    }

    pub async fn submit_questionnaire(&self, id: &str, q: &Questionnaire) -> Result<SessionView> {
        self.post(&format!("api/sessions/{id}/questionnaire"), q).await
    }

    pub async fn submit_mpl(&self, id: &str, req: &MplRequest) -> Result<PayoffView> {
        self.post(&format!("api/sessions/{id}/mpl"), req).await
    }

    pub async fn payoff(&self, id: &str) -> Result<PayoffView> {
        self.get(&format!("api/sessions/{id}/payoff")).await
    }

    pub async fn solve(&self, req: &SolveRequest) -> Result<SolveResponse> {
        self.post("api/solve", req).await
    }

    pub async fn evaluate(&self, req: &EvaluateRequest) -> Result<ExactEvaluation> {
        self.post("api/evaluate", req).await
    }

    pub async fn simulate(&self, req: &SimulateRequest) -> Result<PolicyStats> {
        self.post("api/simulate", req).await
    }

    pub async fn synth(&self, req: &SynthRequest) -> Result<Vec<SessionLog>> {
        self.post("api/synth", req).await
    }

    pub async fn analyze(&self, req: &AnalyzeRequest) -> Result<SummaryReport> {
        self.post("api/analyze", req).await
    }
}
