//! Session log schema shared by the experiment service, the synthetic agents
//! and the analysis pipeline.
//!
//! Two line-delimited JSON files describe a run:
//!
//! * `events.jsonl`: one [`EventRecord`] per line, append-only, in the order
//!   the service accepted requests. Sequence numbers are per session.
//! * `sessions.jsonl`: one [`SessionLog`] per completed session.
//!
//! [`replay_events`] rebuilds session logs from the event stream and checks
//! every recorded outcome against the mission dynamics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mission::{
    junction_info, payoff_euro, Euros, FlightOutcome, MissionConfig, MissionLog, ScriptedDice,
    Taler,
};
use crate::policy::{execute_plan, mission_rng, OpenLoopPlan};

pub const SCHEMA_VERSION: u32 = 1;

/// Feedback regime of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Closed,
    Open,
}

impl Treatment {
    pub const ALL: [Treatment; 2] = [Treatment::Closed, Treatment::Open];

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Closed => "closed",
            Treatment::Open => "open",
        }
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(Treatment::Closed),
            "open" => Ok(Treatment::Open),
            other => Err(Error::Domain(format!("unknown treatment {other:?}"))),
        }
    }
}

/// Price-list choice: A is the safe amount, B the lottery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MplChoice {
    A,
    B,
}

/// The 20-row price list: row `k` offers €(k-1) safe against a 50% chance of €30.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MplSheet {
    pub safe_amounts: Vec<Euros>,
    pub lottery_prize: Euros,
    pub lottery_win_prob: f64,
}

pub const MPL_ROWS: usize = 20;

impl Default for MplSheet {
    fn default() -> Self {
        Self {
            safe_amounts: (0..MPL_ROWS as u64).map(Euros::from_whole).collect(),
            lottery_prize: Euros::from_whole(30),
            lottery_win_prob: 0.5,
        }
    }
}

impl MplSheet {
    pub fn rows(&self) -> usize {
        self.safe_amounts.len()
    }

    /// Payout of `row` (1-based) given the choice made there and the lottery
    /// draw (ignored for A).
    pub fn payout(&self, row: usize, choice: MplChoice, lottery_won: bool) -> Result<Euros> {
        let safe = self
            .safe_amounts
            .get(row.wrapping_sub(1))
            .copied()
            .ok_or_else(|| Error::Domain(format!("price-list row {row} outside 1..={}", self.rows())))?;
        Ok(match choice {
            MplChoice::A => safe,
            MplChoice::B if lottery_won => self.lottery_prize,
            MplChoice::B => Euros(0),
        })
    }
}

/// Price-list answers and, for paid participants, the row played out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MplRecord {
    pub choices: Vec<MplChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paid_row: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lottery_won: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Euros>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Questionnaire {
    pub age: u32,
    pub gender: String,
    /// Perceived task difficulty, 1 (very easy) to 7 (very hard).
    pub difficulty: u8,
    pub strategy: String,
}

impl Questionnaire {
    pub fn validate(&self) -> Result<()> {
        if !(1..=7).contains(&self.difficulty) {
            return Err(Error::Domain(format!("difficulty {} outside 1..=7", self.difficulty)));
        }
        if !(10..=120).contains(&self.age) {
            return Err(Error::Domain(format!("age {} out of range", self.age)));
        }
        Ok(())
    }
}

/// Everything that happened at one junction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JunctionRecord {
    pub junction: u32,
    pub flights: Vec<FlightOutcome>,
}

impl JunctionRecord {
    pub fn info(&self) -> Taler {
        junction_info(&self.flights)
    }

    pub fn crashed(&self) -> bool {
        self.flights.last().is_some_and(|o| o.crashed)
    }

    /// Value before each flight, then the final value.
    pub fn sigma_path(&self) -> Vec<Taler> {
        std::iter::once(0).chain(self.flights.iter().map(|o| o.sigma_after)).collect()
    }
}

/// Complete record of one participant, human or synthetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub schema_version: u32,
    pub session_id: String,
    pub participant_code: String,
    /// Arrival order among completed sessions, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant_index: Option<u32>,
    pub treatment: Treatment,
    /// Master seed and ChaCha8 stream of the mission generator.
    pub seed: u64,
    pub stream: u64,
    /// Outcomes were scripted rather than drawn from the generator.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub scripted: bool,
    /// Ground-truth profile label for synthetic participants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    pub config: MissionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<u32>>,
    pub junctions: Vec<JunctionRecord>,
    pub intact: bool,
    pub total_value: Taler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpl: Option<MplRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questionnaire: Option<Questionnaire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<Euros>,
    /// Analysis hints such as `weakly_identified`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub const FLAG_WEAKLY_IDENTIFIED: &str = "weakly_identified";

impl SessionLog {
    pub fn mission_log(&self) -> MissionLog {
        MissionLog {
            config: self.config.clone(),
            junctions: self.junctions.iter().map(|j| j.flights.clone()).collect(),
            intact: self.intact,
            total_value: self.total_value,
        }
    }

    pub fn crashed(&self) -> bool {
        !self.intact
    }

    pub fn total_info(&self) -> Taler {
        self.junctions.iter().map(JunctionRecord::info).sum()
    }

    pub fn total_flights(&self) -> usize {
        self.junctions.iter().map(|j| j.flights.len()).sum()
    }

    /// Builds the mission part of a log from a finished mission.
    pub fn from_mission(
        session_id: String,
        participant_code: String,
        treatment: Treatment,
        seed: u64,
        stream: u64,
        log: MissionLog,
        plan: Option<&OpenLoopPlan>,
    ) -> Self {
        let junctions = log
            .junctions
            .into_iter()
            .enumerate()
            .map(|(i, flights)| JunctionRecord { junction: i as u32 + 1, flights })
            .collect();
        let mut flags = Vec::new();
        if plan.is_some_and(|p| p.planned_rounds.iter().all(|&r| r == 0)) {
            flags.push(FLAG_WEAKLY_IDENTIFIED.to_string());
        }
        Self {
            schema_version: SCHEMA_VERSION,
            session_id,
            participant_code,
            participant_index: None,
            treatment,
            seed,
            stream,
            scripted: false,
            agent: None,
            config: log.config,
            plan: plan.map(|p| p.planned_rounds.clone()),
            junctions,
            intact: log.intact,
            total_value: log.total_value,
            mpl: None,
            questionnaire: None,
            payoff: None,
            flags,
        }
    }

    /// Checks internal consistency: outcomes follow the dynamics, the value
    /// matches and the payoff matches the value and price-list outcome.
    pub fn verify(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Replay(format!("unsupported schema version {}", self.schema_version)));
        }
        for (i, j) in self.junctions.iter().enumerate() {
            if j.junction != i as u32 + 1 {
                return Err(Error::Replay(format!("junction numbering broken at {}", j.junction)));
            }
        }
        self.mission_log().verify()?;
        if let (Some(payoff), Some(index)) = (self.payoff, self.participant_index) {
            let mpl = self.mpl.as_ref().and_then(|m| m.outcome);
            let expected = payoff_euro(self.total_value, mpl, index, &self.config)?;
            if expected != payoff {
                return Err(Error::Replay(format!("payoff {payoff} but value gives {expected}")));
            }
        }
        Ok(())
    }
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Domain(format!("line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::Domain(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Created,
    QuizAnswer,
    Decision,
    FlightOutcome,
    PlanSubmitted,
    MplChoice,
    Questionnaire,
    Payoff,
}

/// One line of the append-only event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub session_id: String,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
    pub timestamp_ms: u64,
}

/// Payload of [`EventKind::Created`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedPayload {
    pub participant_code: String,
    pub treatment: Treatment,
    pub seed: u64,
    pub stream: u64,
    #[serde(default)]
    pub scripted: bool,
    pub config: MissionConfig,
}

/// Payload of [`EventKind::QuizAnswer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuizPayload {
    pub answers: Vec<f64>,
    pub wrong: Vec<usize>,
    pub passed: bool,
}

/// Payload of [`EventKind::Decision`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionPayload {
    pub junction: u32,
    pub round: u32,
    pub fly: bool,
}

/// Payload of [`EventKind::PlanSubmitted`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanPayload {
    pub planned_rounds: Vec<u32>,
}

/// Payload of [`EventKind::MplChoice`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MplPayload {
    pub choices: Vec<MplChoice>,
}

/// Payload of [`EventKind::Payoff`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayoffPayload {
    pub participant_index: u32,
    pub total_value: Taler,
    #[serde(default)]
    pub paid_row: Option<u32>,
    #[serde(default)]
    pub lottery_won: Option<bool>,
    #[serde(default)]
    pub mpl_outcome: Option<Euros>,
    pub payoff: Euros,
}

fn payload<T: for<'de> Deserialize<'de>>(ev: &EventRecord) -> Result<T> {
    serde_json::from_value(ev.payload.clone()).map_err(|e| {
        Error::Replay(format!("session {} seq {} ({:?}): {e}", ev.session_id, ev.seq, ev.kind))
    })
}

#[derive(Default)]
struct Replay {
    created: Option<CreatedPayload>,
    decisions: Vec<DecisionPayload>,
    outcomes: Vec<FlightOutcome>,
    plan: Option<Vec<u32>>,
    mpl: Option<Vec<MplChoice>>,
    questionnaire: Option<Questionnaire>,
    payoff: Option<PayoffPayload>,
    last_seq: Option<u64>,
}

fn rebuild(session_id: &str, r: Replay) -> Result<Option<SessionLog>> {
    let created = r
        .created
        .ok_or_else(|| Error::Replay(format!("session {session_id} has no created event")))?;
    let Some(pay) = r.payoff else {
        return Ok(None);
    };
    let cfg = created.config.clone();
    let mut junctions: Vec<JunctionRecord> = Vec::new();
    let mut open_plan = None;
    match created.treatment {
        Treatment::Closed => {
            let mut outcomes = r.outcomes.iter();
            let mut current = JunctionRecord { junction: 1, flights: Vec::new() };
            for d in &r.decisions {
                if d.junction != current.junction {
                    return Err(Error::Replay(format!(
                        "session {session_id}: decision for junction {} while at {}",
                        d.junction, current.junction
                    )));
                }
                if d.fly {
                    let o = outcomes.next().ok_or_else(|| {
                        Error::Replay(format!("session {session_id}: decision without outcome"))
                    })?;
                    current.flights.push(*o);
                } else {
                    let next = current.junction + 1;
                    junctions.push(std::mem::replace(
                        &mut current,
                        JunctionRecord { junction: next, flights: Vec::new() },
                    ));
                }
            }
            if outcomes.next().is_some() {
                return Err(Error::Replay(format!("session {session_id}: outcome without decision")));
            }
            if current.crashed() {
                junctions.push(current);
            }
        }
        Treatment::Open => {
            let plan = OpenLoopPlan {
                planned_rounds: r.plan.clone().ok_or_else(|| {
                    Error::Replay(format!("session {session_id}: open session without plan"))
                })?,
            };
            for o in &r.outcomes {
                if junctions.last().is_none_or(|j| j.junction != o.junction) {
                    while junctions.len() + 1 < o.junction as usize {
                        let n = junctions.len() as u32 + 1;
                        junctions.push(JunctionRecord { junction: n, flights: Vec::new() });
                    }
                    junctions.push(JunctionRecord { junction: o.junction, flights: Vec::new() });
                }
                junctions.last_mut().expect("pushed").flights.push(*o);
            }
            let crashed = junctions.last().is_some_and(JunctionRecord::crashed);
            if !crashed {
                while junctions.len() < cfg.num_junctions as usize {
                    let n = junctions.len() as u32 + 1;
                    junctions.push(JunctionRecord { junction: n, flights: Vec::new() });
                }
            }
            open_plan = Some(plan);
        }
    }

    let intact = !junctions.last().is_some_and(JunctionRecord::crashed);
    let drone = if intact { cfg.drone_value } else { 0 };
    let total_value = drone + junctions.iter().map(JunctionRecord::info).sum::<Taler>();
    let mut log = SessionLog::from_mission(
        session_id.to_string(),
        created.participant_code.clone(),
        created.treatment,
        created.seed,
        created.stream,
        MissionLog {
            config: cfg.clone(),
            junctions: junctions.into_iter().map(|j| j.flights).collect(),
            intact,
            total_value,
        },
        open_plan.as_ref(),
    );
    log.scripted = created.scripted;
    log.participant_index = Some(pay.participant_index);
    log.mpl = r.mpl.map(|choices| MplRecord {
        choices,
        paid_row: pay.paid_row,
        lottery_won: pay.lottery_won,
        outcome: pay.mpl_outcome,
    });
    log.questionnaire = r.questionnaire;
    log.payoff = Some(pay.payoff);
    if pay.total_value != total_value {
        return Err(Error::Replay(format!(
            "session {session_id}: stored value {} but events give {total_value}",
            pay.total_value
        )));
    }
    log.verify()?;

    if !created.scripted {
        regenerate(&log, open_plan.as_ref(), &r.decisions)?;
    }
    Ok(Some(log))
}

/// Re-runs the mission from the seed and the recorded decisions and checks
/// that the same outcomes come out.
fn regenerate(
    log: &SessionLog,
    plan: Option<&OpenLoopPlan>,
    decisions: &[DecisionPayload],
) -> Result<()> {
    let mut rng = mission_rng(log.seed, log.stream);
    let regenerated = match plan {
        Some(plan) => execute_plan(plan, &log.config, &mut rng)?,
        None => {
            let mut mission = crate::mission::Mission::new(log.config.clone())?;
            for d in decisions {
                if d.fly {
                    mission.fly(&mut rng)?;
                } else {
                    mission.stop()?;
                }
            }
            mission.into_log()?
        }
    };
    if regenerated != log.mission_log() {
        return Err(Error::Replay(format!(
            "session {}: regenerating from seed {} stream {} gives different outcomes",
            log.session_id, log.seed, log.stream
        )));
    }
    Ok(())
}

/// Rebuilds every completed session from an event stream. Sessions without
/// a payoff event are still in progress and are skipped.
pub fn replay_events(events: &[EventRecord]) -> Result<Vec<SessionLog>> {
    let mut by_session: BTreeMap<&str, Replay> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for ev in events {
        let entry = by_session.entry(ev.session_id.as_str()).or_insert_with(|| {
            order.push(ev.session_id.as_str());
            Replay::default()
        });
        if entry.last_seq.is_some_and(|s| ev.seq <= s) {
            return Err(Error::Replay(format!(
                "session {}: sequence {} not increasing",
                ev.session_id, ev.seq
            )));
        }
        entry.last_seq = Some(ev.seq);
        match ev.kind {
            EventKind::Created => entry.created = Some(payload(ev)?),
            EventKind::QuizAnswer => {}
            EventKind::Decision => entry.decisions.push(payload(ev)?),
            EventKind::FlightOutcome => entry.outcomes.push(payload(ev)?),
            EventKind::PlanSubmitted => entry.plan = Some(payload::<PlanPayload>(ev)?.planned_rounds),
            EventKind::MplChoice => entry.mpl = Some(payload::<MplPayload>(ev)?.choices),
            EventKind::Questionnaire => entry.questionnaire = Some(payload(ev)?),
            EventKind::Payoff => entry.payoff = Some(payload(ev)?),
        }
    }
    let mut out = Vec::new();
    for id in order {
        let r = by_session.remove(id).expect("recorded");
        if let Some(log) = rebuild(id, r)? {
            out.push(log);
        }
    }
    out.sort_by_key(|s| s.participant_index);
    Ok(out)
}

/// Checks a scripted-dice replay of a recorded junction list; used where
/// the seed cannot regenerate the outcomes.
pub fn outcomes_consistent(cfg: &MissionConfig, flights: &[FlightOutcome]) -> bool {
    let mut state = crate::mission::MissionState::new();
    state.junction = flights.first().map_or(1, |o| o.junction);
    flights.iter().all(|o| {
        let mut dice = ScriptedDice::new([o.increased], [o.crashed]);
        state.fly_once(cfg, &mut dice).is_ok_and(|r| r == *o)
    })
}
