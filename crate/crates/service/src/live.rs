//! The per-session state machine.
//!
//! Every operation checks the phase and its inputs before touching any
//! state, and returns the events to append. Flights draw from the session's
//! own ChaCha stream in decision order, which is exactly how the event
//! replay regenerates them.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;
use surveil_core::analysis::classify_risk;
use surveil_core::api::{
    ClosedView, DecisionRequest, DecisionResponse, InstructionsView, MplRequest, PayoffView, Phase,
    PlanAck, PlanRequest, QuizResponse, ResultView, SessionView,
};
use surveil_core::config::QuizQuestion;
use surveil_core::mission::{taler_to_euros, ScriptedDice};
use surveil_core::policy::{execute_plan, mission_rng, OpenLoopPlan};
use surveil_core::session::{
    CreatedPayload, DecisionPayload, EventKind, MplChoice, MplPayload, MplRecord, MplSheet,
    PayoffPayload, PlanPayload, QuizPayload, Questionnaire, SessionLog, MPL_ROWS,
};
use surveil_core::{payoff_euro, Mission, MissionConfig, MissionLog, Treatment};

use crate::error::ApiError;

pub type Events = Vec<(EventKind, Value)>;

fn ev<T: Serialize>(kind: EventKind, payload: &T) -> (EventKind, Value) {
    (kind, serde_json::to_value(payload).expect("payloads serialize"))
}

#[derive(Debug, Clone)]
pub struct LiveSession {
    pub id: String,
    pub code: String,
    pub treatment: Treatment,
    pub phase: Phase,
    pub seed: u64,
    pub stream: u64,
    pub scripted: bool,
    pub created_ms: u64,
    cfg: MissionConfig,
    quiz: Vec<QuizQuestion>,
    rng: ChaCha8Rng,
    mission: Mission,
    last_increased: Option<bool>,
    outcome: Option<MissionLog>,
    plan: Option<OpenLoopPlan>,
    questionnaire: Option<Questionnaire>,
    mpl: Option<MplRecord>,
    payoff: Option<PayoffView>,
    /// Next event sequence number.
    pub seq: u64,
}

impl LiveSession {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: String,
        code: String,
        treatment: Treatment,
        seed: u64,
        stream: u64,
        scripted: bool,
        cfg: MissionConfig,
        quiz: Vec<QuizQuestion>,
        created_ms: u64,
    ) -> Result<(Self, Events), ApiError> {
        let mission = Mission::new(cfg.clone())?;
        let created = CreatedPayload {
            participant_code: code.clone(),
            treatment,
            seed,
            stream,
            scripted,
            config: cfg.clone(),
        };
        let session = Self {
            id,
            code,
            treatment,
            phase: Phase::Instructions,
            seed,
            stream,
            scripted,
            created_ms,
            rng: mission_rng(seed, stream),
            cfg,
            quiz,
            mission,
            last_increased: None,
            outcome: None,
            plan: None,
            questionnaire: None,
            mpl: None,
            payoff: None,
            seq: 0,
        };
        Ok((session, vec![ev(EventKind::Created, &created)]))
    }

    fn require(&self, phase: Phase) -> Result<(), ApiError> {
        if self.phase != phase {
            return Err(ApiError::out_of_phase(format!(
                "session is in phase {}, this request needs {phase}",
                self.phase
            )));
        }
        Ok(())
    }

    fn require_treatment(&self, t: Treatment) -> Result<(), ApiError> {
        if self.treatment != t {
            return Err(ApiError::out_of_phase(format!("not available in the {} treatment", self.treatment)));
        }
        Ok(())
    }

    fn closed_view(&self) -> ClosedView {
        let st = self.mission.state();
        ClosedView {
            junction: st.junction,
            rounds_here: st.rounds_here,
            sigma: st.sigma,
            intact: st.intact,
            banked: st.banked_info,
            last_increased: self.last_increased,
            can_fly: st.intact && !st.finished && st.rounds_here < self.cfg.max_rounds,
            mission_over: st.finished,
        }
    }

    pub fn view(&self) -> SessionView {
        let (closed, plan_submitted) = match self.treatment {
            Treatment::Closed => ((self.phase >= Phase::Flying).then(|| self.closed_view()), None),
            Treatment::Open => (None, Some(self.plan.is_some())),
        };
        SessionView {
            session_id: self.id.clone(),
            participant_code: self.code.clone(),
            treatment: self.treatment,
            phase: self.phase,
            closed,
            plan_submitted,
        }
    }

    pub fn instructions(&self) -> InstructionsView {
        InstructionsView {
            treatment: self.treatment,
            drone_value: self.cfg.drone_value,
            increase_prob: self.cfg.increase_prob,
            crash_prob: self.cfg.crash_prob,
            num_junctions: self.cfg.num_junctions,
            max_rounds: self.cfg.max_rounds,
            ladder: self.cfg.rho.ladder().to_vec(),
            taler_per_euro: self.cfg.taler_per_euro,
            mpl_payout_modulus: self.cfg.mpl_payout_modulus,
            quiz: self.quiz.iter().map(|q| q.prompt.clone()).collect(),
        }
    }

    pub fn ack_instructions(&mut self) -> Result<Events, ApiError> {
        self.require(Phase::Instructions)?;
        self.phase = Phase::Quiz;
        Ok(Vec::new())
    }

    pub fn submit_quiz(&mut self, answers: &[f64]) -> Result<(QuizResponse, Events), ApiError> {
        self.require(Phase::Quiz)?;
        if answers.len() != self.quiz.len() {
            return Err(ApiError::validation(format!(
                "expected {} answers, got {}",
                self.quiz.len(),
                answers.len()
            )));
        }
        let wrong: Vec<usize> = self
            .quiz
            .iter()
            .zip(answers)
            .enumerate()
            .filter(|(_, (q, &a))| !q.accepts(a))
            .map(|(i, _)| i)
            .collect();
        let passed = wrong.is_empty();
        if passed {
            self.phase = Phase::Flying;
        }
        let payload = QuizPayload { answers: answers.to_vec(), wrong: wrong.clone(), passed };
        Ok((QuizResponse { passed, wrong, phase: self.phase }, vec![ev(EventKind::QuizAnswer, &payload)]))
    }

    fn finish_mission(&mut self, log: MissionLog) {
        self.outcome = Some(log);
        self.phase = Phase::Questionnaire;
    }

    pub fn decide(&mut self, req: &DecisionRequest) -> Result<(DecisionResponse, Events), ApiError> {
        self.require_treatment(Treatment::Closed)?;
        if self.phase > Phase::Flying && !self.mission.state().intact {
            return Err(surveil_core::Error::Crashed.into());
        }
        self.require(Phase::Flying)?;
        if req.scripted.is_some() && !self.scripted {
            return Err(ApiError::validation("scripted outcomes are not enabled for this session"));
        }
        let st = self.mission.state();
        let decision = DecisionPayload { junction: st.junction, round: st.rounds_here, fly: req.fly };
        let mut events = Vec::new();
        let mut increased = None;
        let mut banked_now = None;
        if req.fly {
            let outcome = match req.scripted {
                Some(s) => self.mission.fly(&mut ScriptedDice::new([s.increased], [s.crashed]))?,
                None => self.mission.fly(&mut self.rng)?,
            };
            events.push(ev(EventKind::Decision, &decision));
            events.push(ev(EventKind::FlightOutcome, &outcome));
            self.last_increased = Some(outcome.increased);
            increased = Some(outcome.increased);
        } else {
            banked_now = Some(self.mission.stop()?);
            events.push(ev(EventKind::Decision, &decision));
            self.last_increased = None;
        }
        if self.mission.is_finished() {
            let log = self.mission.clone().into_log()?;
            self.finish_mission(log);
        }
        let resp = DecisionResponse { phase: self.phase, view: self.closed_view(), increased, banked_now };
        Ok((resp, events))
    }

    pub fn submit_plan(&mut self, req: &PlanRequest) -> Result<(PlanAck, Events), ApiError> {
        self.require_treatment(Treatment::Open)?;
        self.require(Phase::Flying)?;
        if req.scripted.is_some() && !self.scripted {
            return Err(ApiError::validation("scripted outcomes are not enabled for this session"));
        }
        let plan = OpenLoopPlan { planned_rounds: req.planned_rounds.clone() };
        plan.validate(&self.cfg)?;
        let log = match &req.scripted {
            Some(s) => execute_plan(
                &plan,
                &self.cfg,
                &mut ScriptedDice::new(s.increases.iter().copied(), s.crashes.iter().copied()),
            )?,
            None => execute_plan(&plan, &self.cfg, &mut mission_rng(self.seed, self.stream))?,
        };
        let mut events = vec![ev(EventKind::PlanSubmitted, &PlanPayload { planned_rounds: plan.planned_rounds.clone() })];
        for o in log.junctions.iter().flatten() {
            events.push(ev(EventKind::FlightOutcome, o));
        }
        self.plan = Some(plan.clone());
        self.finish_mission(log);
        Ok((PlanAck { phase: self.phase, planned_rounds: plan.planned_rounds }, events))
    }

    pub fn result(&self) -> Result<ResultView, ApiError> {
        let log = self
            .outcome
            .as_ref()
            .ok_or_else(|| ApiError::out_of_phase("the mission is not over yet"))?;
        Ok(ResultView {
            treatment: self.treatment,
            junction_infos: log.junction_infos(),
            total_info: log.total_info(),
            intact: log.intact,
            total_value: log.total_value,
            mission_euros: taler_to_euros(log.total_value, &self.cfg),
        })
    }

    pub fn submit_questionnaire(&mut self, q: Questionnaire) -> Result<Events, ApiError> {
        self.require(Phase::Questionnaire)?;
        q.validate()?;
        let events = vec![ev(EventKind::Questionnaire, &q)];
        self.questionnaire = Some(q);
        self.phase = Phase::Mpl;
        Ok(events)
    }

    /// Records the price list and computes the payoff. `next_index` hands
    /// out the participant index and is only called once the request is
    /// known to be valid.
    pub fn submit_mpl(
        &mut self,
        req: &MplRequest,
        next_index: impl FnOnce() -> u32,
        draws: &mut dyn RngCore,
    ) -> Result<(PayoffView, Events), ApiError> {
        self.require(Phase::Mpl)?;
        if req.choices.len() != MPL_ROWS {
            return Err(ApiError::validation(format!(
                "price list needs {MPL_ROWS} choices, got {}",
                req.choices.len()
            )));
        }
        if req.scripted.is_some() && !self.scripted {
            return Err(ApiError::validation("scripted draws are not enabled for this session"));
        }
        if let Some(d) = req.scripted {
            if !(1..=MPL_ROWS as u32).contains(&d.row) {
                return Err(ApiError::validation(format!("row {} outside 1..={MPL_ROWS}", d.row)));
            }
        }
        let risk = classify_risk(&req.choices)?;
        let total_value = self.outcome.as_ref().expect("mission over before mpl").total_value;

        let index = next_index();
        let sheet = MplSheet::default();
        let mut mpl = MplRecord { choices: req.choices.clone(), paid_row: None, lottery_won: None, outcome: None };
        let mut paid_choice = None;
        if index % self.cfg.mpl_payout_modulus == 0 {
            let (row, won) = match req.scripted {
                Some(d) => (d.row as usize, d.lottery_won),
                None => (draws.random_range(1..=MPL_ROWS), draws.random_bool(sheet.lottery_win_prob)),
            };
            let choice = req.choices[row - 1];
            mpl.paid_row = Some(row as u32);
            mpl.lottery_won = (choice == MplChoice::B).then_some(won);
            mpl.outcome = Some(sheet.payout(row, choice, won)?);
            paid_choice = Some(choice);
        }
        let payoff = payoff_euro(total_value, mpl.outcome, index, &self.cfg)?;
        let view = PayoffView {
            participant_index: index,
            total_value,
            mission_euros: taler_to_euros(total_value, &self.cfg),
            risk_attitude: risk.attitude,
            paid_row: mpl.paid_row,
            paid_choice,
            lottery_won: mpl.lottery_won,
            mpl_outcome: mpl.outcome,
            payoff,
        };
        let events = vec![
            ev(EventKind::MplChoice, &MplPayload { choices: req.choices.clone() }),
            ev(
                EventKind::Payoff,
                &PayoffPayload {
                    participant_index: index,
                    total_value,
                    paid_row: mpl.paid_row,
                    lottery_won: mpl.lottery_won,
                    mpl_outcome: mpl.outcome,
                    payoff,
                },
            ),
        ];
        self.mpl = Some(mpl);
        self.payoff = Some(view.clone());
        self.phase = Phase::Done;
        Ok((view, events))
    }

    pub fn payoff(&self) -> Result<PayoffView, ApiError> {
        self.payoff.clone().ok_or_else(|| ApiError::out_of_phase("the session is not finished"))
    }

    /// Snapshot of a finished session in the shared log schema.
    pub fn snapshot(&self) -> Option<SessionLog> {
        let payoff = self.payoff.as_ref()?;
        let mut log = SessionLog::from_mission(
            self.id.clone(),
            self.code.clone(),
            self.treatment,
            self.seed,
            self.stream,
            self.outcome.clone()?,
            self.plan.as_ref(),
        );
        log.scripted = self.scripted;
        log.participant_index = Some(payoff.participant_index);
        log.mpl = self.mpl.clone();
        log.questionnaire = self.questionnaire.clone();
        log.payoff = Some(payoff.payoff);
        Some(log)
    }
}
