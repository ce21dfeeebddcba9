//! Request and response bodies of the experiment service HTTP API.
//!
//! Session endpoints, all under `/api/sessions`:
//!
//! | method | path                        | body                      | response          |
//! |--------|-----------------------------|---------------------------|-------------------|
//! | POST   | `/`                         | [`CreateSessionRequest`]  | [`SessionView`]   |
//! | GET    | `/{id}`                     |                           | [`SessionView`]   |
//! | GET    | `/{id}/instructions`        |                           | [`InstructionsView`] |
//! | POST   | `/{id}/instructions/ack`    |                           | [`SessionView`]   |
//! | POST   | `/{id}/quiz`                | [`QuizRequest`]           | [`QuizResponse`]  |
//! | POST   | `/{id}/decision`            | [`DecisionRequest`]       | [`DecisionResponse`] |
//! | POST   | `/{id}/plan`                | [`PlanRequest`]           | [`PlanAck`]       |
//! | GET    | `/{id}/result`              |                           | [`ResultView`]    |
//! | POST   | `/{id}/questionnaire`       | [`Questionnaire`]         | [`SessionView`]   |
//! | POST   | `/{id}/mpl`                 | [`MplRequest`]            | [`PayoffView`]    |
//! | GET    | `/{id}/payoff`              |                           | [`PayoffView`]    |
//!
//! Compute endpoints: `POST /api/solve`, `/api/evaluate`, `/api/simulate`,
//! `/api/synth`, `/api/analyze`. Errors come back as [`ErrorBody`].

use serde::{Deserialize, Serialize};

use crate::agents::PopulationSpec;
use crate::analysis::{AnalysisOptions, Attitude};
use crate::catalog::PolicySpec;
use crate::dp::{solve_dp, Disagreement, DpEntry};
use crate::error::Result;
use crate::mission::{Euros, MissionConfig, Taler};
use crate::policy::{evaluate_policy_exact, ClosedLoopHeuristic};
use crate::session::{MplChoice, SessionLog, Treatment};

/// Session lifecycle. Sessions start in `Instructions`; `Created` exists
/// only inside the creation request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Created,
    Instructions,
    Quiz,
    Flying,
    Questionnaire,
    Mpl,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Created => "created",
            Phase::Instructions => "instructions",
            Phase::Quiz => "quiz",
            Phase::Flying => "flying",
            Phase::Questionnaire => "questionnaire",
            Phase::Mpl => "mpl",
            Phase::Done => "done",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    /// Forced treatment; balanced random assignment when absent.
    #[serde(default)]
    pub treatment: Option<Treatment>,
    /// Eight alphanumeric characters; generated when absent.
    #[serde(default)]
    pub participant_code: Option<String>,
    /// Accept scripted flight outcomes (only if the service allows it).
    #[serde(default)]
    pub scripted: bool,
}

/// What a closed-loop participant sees between rounds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosedView {
    pub junction: u32,
    pub rounds_here: u32,
    pub sigma: Taler,
    pub intact: bool,
    /// Information banked at the junctions already left.
    pub banked: Taler,
    #[serde(default)]
    pub last_increased: Option<bool>,
    pub can_fly: bool,
    pub mission_over: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_code: String,
    pub treatment: Treatment,
    pub phase: Phase,
    /// Closed treatment only, from the flying phase on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<ClosedView>,
    /// Open treatment only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_submitted: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionsView {
    pub treatment: Treatment,
    pub drone_value: Taler,
    pub increase_prob: f64,
    pub crash_prob: f64,
    pub num_junctions: u32,
    pub max_rounds: u32,
    pub ladder: Vec<Taler>,
    pub taler_per_euro: u32,
    pub mpl_payout_modulus: u32,
    pub quiz: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuizRequest {
    pub answers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizResponse {
    pub passed: bool,
    /// 0-based indices of the wrong answers.
    pub wrong: Vec<usize>,
    pub phase: Phase,
}

/// Outcome to use instead of the generator in scripted sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedFlight {
    pub increased: bool,
    pub crashed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub fly: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted: Option<ScriptedFlight>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub phase: Phase,
    pub view: ClosedView,
    /// The flight just made; absent for a stop.
    #[serde(default)]
    pub increased: Option<bool>,
    /// Information banked by a stop.
    #[serde(default)]
    pub banked_now: Option<Taler>,
}

/// Increase and crash draws consumed in order by a scripted open session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPlan {
    #[serde(default)]
    pub increases: Vec<bool>,
    #[serde(default)]
    pub crashes: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub planned_rounds: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted: Option<ScriptedPlan>,
}

/// Acknowledges a plan; deliberately carries no outcome data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAck {
    pub phase: Phase,
    pub planned_rounds: Vec<u32>,
}

/// Result screen: available once the mission is over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultView {
    pub treatment: Treatment,
    pub junction_infos: Vec<Taler>,
    pub total_info: Taler,
    pub intact: bool,
    pub total_value: Taler,
    pub mission_euros: Euros,
}

/// Price-list draw for scripted sessions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDraw {
    pub row: u32,
    pub lottery_won: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MplRequest {
    pub choices: Vec<MplChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scripted: Option<ScriptedDraw>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoffView {
    pub participant_index: u32,
    pub total_value: Taler,
    pub mission_euros: Euros,
    pub risk_attitude: Attitude,
    #[serde(default)]
    pub paid_row: Option<u32>,
    #[serde(default)]
    pub paid_choice: Option<MplChoice>,
    #[serde(default)]
    pub lottery_won: Option<bool>,
    #[serde(default)]
    pub mpl_outcome: Option<Euros>,
    pub payoff: Euros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    OutOfPhase,
    Validation,
    Crashed,
    NotFound,
    Conflict,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRequest {
    /// Service configuration when absent.
    #[serde(default)]
    pub config: Option<MissionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResponse {
    pub expected_value: f64,
    pub heuristic_expected_value: f64,
    pub bellman_residual: f64,
    pub entries: Vec<DpEntry>,
    pub disagreements: Vec<Disagreement>,
}

impl SolveResponse {
    /// Solves `cfg` and compares against the myopic closed-loop heuristic.
    pub fn compute(cfg: &MissionConfig) -> Result<Self> {
        let table = solve_dp(cfg)?;
        let heuristic = evaluate_policy_exact(&mut ClosedLoopHeuristic::new(cfg), cfg)?;
        Ok(Self {
            expected_value: table.expected_value(),
            heuristic_expected_value: heuristic.expected_value,
            bellman_residual: table.bellman_residual(),
            entries: table.entries(),
            disagreements: table.disagreements(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRequest {
    pub policy: PolicySpec,
    #[serde(default)]
    pub treatment: Option<Treatment>,
    #[serde(default)]
    pub config: Option<MissionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateRequest {
    pub policy: PolicySpec,
    #[serde(default)]
    pub treatment: Option<Treatment>,
    #[serde(default)]
    pub config: Option<MissionConfig>,
    pub seed: u64,
    pub n_missions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRequest {
    pub population: PopulationSpec,
    #[serde(default)]
    pub config: Option<MissionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRequest {
    pub sessions: Vec<SessionLog>,
    #[serde(default)]
    pub options: Option<AnalysisOptions>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_are_ordered() {
        assert!(Phase::Instructions < Phase::Quiz);
        assert!(Phase::Flying < Phase::Questionnaire);
        assert!(Phase::Mpl < Phase::Done);
        assert_eq!(serde_json::to_string(&Phase::Questionnaire).unwrap(), "\"questionnaire\"");
        let req: DecisionRequest = serde_json::from_str(r#"{"fly":true}"#).unwrap();
        assert!(req.fly && req.scripted.is_none());
        assert!(serde_json::from_str::<DecisionRequest>(r#"{"fly":true,"sigma":5}"#).is_err());
    }
}
