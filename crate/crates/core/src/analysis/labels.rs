//! Per-junction behavior labels, subject-level confidence degrees and
//! behavior categories, and hot-hand detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mission::{MissionConfig, Taler};
use crate::policy::OPEN_LOOP_ROUNDS;
use crate::session::{JunctionRecord, SessionLog, Treatment};

use super::AnalysisOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Overconfident,
    Underconfident,
    Optimal,
    Unobservable,
}

/// Label of one junction and the signed deviation from the heuristic.
///
/// In the closed loop a positive deviation counts flights made at or above
/// the stopping value; a negative one is the fewest further increases that
/// would have been needed to reach it. In the open loop it is the planned
/// rounds minus the heuristic's five.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JunctionLabel {
    pub label: Label,
    pub rounds_beyond_optimum: i32,
}

impl JunctionLabel {
    fn new(label: Label, rounds_beyond_optimum: i32) -> Self {
        Self { label, rounds_beyond_optimum }
    }
}

/// Labels one junction against the heuristic of its treatment.
///
/// `planned` is the junction's entry of the open-loop plan.
pub fn label_junction(
    junction: &JunctionRecord,
    planned: Option<u32>,
    treatment: Treatment,
    cfg: &MissionConfig,
) -> JunctionLabel {
    match treatment {
        Treatment::Open => {
            let Some(planned) = planned else {
                return JunctionLabel::new(Label::Unobservable, 0);
            };
            let optimum = OPEN_LOOP_ROUNDS.min(cfg.max_rounds) as i32;
            let delta = planned as i32 - optimum;
            let label = match delta.signum() {
                1 => Label::Overconfident,
                -1 => Label::Underconfident,
                _ => Label::Optimal,
            };
            JunctionLabel::new(label, delta)
        }
        Treatment::Closed => label_closed(junction, cfg),
    }
}

fn label_closed(junction: &JunctionRecord, cfg: &MissionConfig) -> JunctionLabel {
    let threshold = cfg.myopic_threshold();
    let path = junction.sigma_path();
    let flights = junction.flights.len();
    let beyond = path[..flights].iter().filter(|&&s| s >= threshold).count() as i32;
    if beyond > 0 {
        return JunctionLabel::new(Label::Overconfident, beyond);
    }
    if junction.crashed() {
        return if flights == 1 {
            JunctionLabel::new(Label::Unobservable, 0)
        } else {
            JunctionLabel::new(Label::Optimal, 0)
        };
    }
    let last = *path.last().expect("path starts at 0");
    if flights as u32 >= cfg.max_rounds || last >= threshold {
        return JunctionLabel::new(Label::Optimal, 0);
    }
    let short = steps_to(last, threshold, cfg).min(cfg.max_rounds - flights as u32) as i32;
    JunctionLabel::new(Label::Underconfident, -short.max(1))
}

fn steps_to(mut sigma: Taler, threshold: Taler, cfg: &MissionConfig) -> u32 {
    let mut steps = 0;
    while sigma < threshold {
        match cfg.rho.increment(sigma) {
            Some(inc) => sigma += inc,
            None => break,
        }
        steps += 1;
    }
    steps
}

/// Labels of the junctions that count for a session's degrees, paired with
/// the junction index (1-based).
pub fn session_labels(session: &SessionLog, opts: &AnalysisOptions) -> Vec<(u32, JunctionLabel)> {
    let cfg = &session.config;
    match session.treatment {
        Treatment::Closed => session
            .junctions
            .iter()
            .map(|j| (j.junction, label_junction(j, None, Treatment::Closed, cfg)))
            .collect(),
        Treatment::Open => {
            let Some(plan) = &session.plan else {
                return Vec::new();
            };
            let counted = if opts.count_all_open_plans {
                plan.len()
            } else {
                session.junctions.len().min(plan.len())
            };
            let empty = JunctionRecord { junction: 0, flights: Vec::new() };
            (0..counted)
                .map(|k| {
                    let j = session.junctions.get(k).unwrap_or(&empty);
                    (k as u32 + 1, label_junction(j, Some(plan[k]), Treatment::Open, cfg))
                })
                .collect()
        }
    }
}

/// Subject-level shares of overconfident, underconfident and optimal
/// junctions among the observable ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfidenceDegrees {
    pub overconfident: u32,
    pub underconfident: u32,
    pub optimal: u32,
}

impl ConfidenceDegrees {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a JunctionLabel>) -> Self {
        let mut d = ConfidenceDegrees { overconfident: 0, underconfident: 0, optimal: 0 };
        for l in labels {
            match l.label {
                Label::Overconfident => d.overconfident += 1,
                Label::Underconfident => d.underconfident += 1,
                Label::Optimal => d.optimal += 1,
                Label::Unobservable => {}
            }
        }
        d
    }

    pub fn observed(&self) -> u32 {
        self.overconfident + self.underconfident + self.optimal
    }

    fn share(&self, n: u32) -> f64 {
        f64::from(n) / f64::from(self.observed())
    }

    pub fn oc_degree(&self) -> f64 {
        self.share(self.overconfident)
    }

    pub fn uc_degree(&self) -> f64 {
        self.share(self.underconfident)
    }

    pub fn opt_degree(&self) -> f64 {
        self.share(self.optimal)
    }
}

/// Degrees of one session; fails when no junction is observable (the drone
/// crashed on its very first flight).
pub fn confidence_degrees(session: &SessionLog, opts: &AnalysisOptions) -> Result<ConfidenceDegrees> {
    let labels = session_labels(session, opts);
    let d = ConfidenceDegrees::from_labels(labels.iter().map(|(_, l)| l));
    if d.observed() == 0 {
        return Err(Error::NoObservableJunctions);
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorCategory {
    Optimal,
    RatherOverconfident,
    StronglyOverconfident,
    RatherUnderconfident,
    StronglyUnderconfident,
    Mixed,
    Excluded,
}

impl BehaviorCategory {
    pub const ALL: [BehaviorCategory; 7] = [
        BehaviorCategory::Optimal,
        BehaviorCategory::RatherOverconfident,
        BehaviorCategory::StronglyOverconfident,
        BehaviorCategory::RatherUnderconfident,
        BehaviorCategory::StronglyUnderconfident,
        BehaviorCategory::Mixed,
        BehaviorCategory::Excluded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorCategory::Optimal => "optimal",
            BehaviorCategory::RatherOverconfident => "rather_overconfident",
            BehaviorCategory::StronglyOverconfident => "strongly_overconfident",
            BehaviorCategory::RatherUnderconfident => "rather_underconfident",
            BehaviorCategory::StronglyUnderconfident => "strongly_underconfident",
            BehaviorCategory::Mixed => "mixed",
            BehaviorCategory::Excluded => "excluded",
        }
    }

    pub fn is_overconfident(self) -> bool {
        matches!(self, BehaviorCategory::RatherOverconfident | BehaviorCategory::StronglyOverconfident)
    }
}

/// Category from degrees: above one half is strong, above one third up to
/// one half is rather; when both directions exceed one third the larger
/// wins and an exact tie is mixed.
pub fn categorize(degrees: &ConfidenceDegrees) -> BehaviorCategory {
    if degrees.observed() == 0 {
        return BehaviorCategory::Excluded;
    }
    if degrees.optimal == degrees.observed() {
        return BehaviorCategory::Optimal;
    }
    let third = 1.0 / 3.0;
    let (oc, uc) = (degrees.oc_degree(), degrees.uc_degree());
    let over = if oc > third && uc > third {
        match degrees.overconfident.cmp(&degrees.underconfident) {
            std::cmp::Ordering::Greater => Some(true),
            std::cmp::Ordering::Less => Some(false),
            std::cmp::Ordering::Equal => None,
        }
    } else if oc > third {
        Some(true)
    } else if uc > third {
        Some(false)
    } else {
        None
    };
    match over {
        Some(true) if oc > 0.5 => BehaviorCategory::StronglyOverconfident,
        Some(true) => BehaviorCategory::RatherOverconfident,
        Some(false) if uc > 0.5 => BehaviorCategory::StronglyUnderconfident,
        Some(false) => BehaviorCategory::RatherUnderconfident,
        None => BehaviorCategory::Mixed,
    }
}

pub fn session_category(session: &SessionLog, opts: &AnalysisOptions) -> BehaviorCategory {
    confidence_degrees(session, opts).map_or(BehaviorCategory::Excluded, |d| categorize(&d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotHandRecord {
    pub junction: u32,
    /// The first `streak_len` pictures all raised the value and the drone
    /// was intact with rounds left.
    pub hot_hand_situation: bool,
    /// At least one further flight was chosen in that situation.
    pub fallacy: bool,
}

/// One record per junction where at least one flight was made.
pub fn hot_hand_scan(session: &SessionLog, streak_len: u32) -> Result<Vec<HotHandRecord>> {
    if session.treatment != Treatment::Closed {
        return Err(Error::Unsupported("hot-hand detection needs closed-loop feedback".into()));
    }
    if streak_len == 0 {
        return Err(Error::Domain("streak length must be at least 1".into()));
    }
    let n = streak_len as usize;
    let cap = session.config.max_rounds as usize;
    Ok(session
        .junctions
        .iter()
        .filter(|j| !j.flights.is_empty())
        .map(|j| {
            let f = &j.flights;
            let situation = f.len() >= n
                && n < cap
                && f[..n].iter().all(|o| o.increased)
                && !f[..n].iter().any(|o| o.crashed);
            HotHandRecord {
                junction: j.junction,
                hot_hand_situation: situation,
                fallacy: situation && f.len() > n,
            }
        })
        .collect())
}

/// Counts of the hot-hand contingency table over started closed-loop
/// junctions: rows no-hot-hand / hot-hand, columns not-overconfident /
/// overconfident.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HotHandTable {
    pub no_hot_hand_not_oc: u64,
    pub no_hot_hand_oc: u64,
    pub hot_hand_not_oc: u64,
    pub hot_hand_oc: u64,
}

impl HotHandTable {
    pub fn from_sessions<'a>(
        sessions: impl IntoIterator<Item = &'a SessionLog>,
        streak_len: u32,
    ) -> Result<Self> {
        let mut t = HotHandTable::default();
        for s in sessions.into_iter().filter(|s| s.treatment == Treatment::Closed) {
            let records = hot_hand_scan(s, streak_len)?;
            for r in records {
                let j = &s.junctions[r.junction as usize - 1];
                let oc = label_junction(j, None, Treatment::Closed, &s.config).label
                    == Label::Overconfident;
                match (r.hot_hand_situation, oc) {
                    (false, false) => t.no_hot_hand_not_oc += 1,
                    (false, true) => t.no_hot_hand_oc += 1,
                    (true, false) => t.hot_hand_not_oc += 1,
                    (true, true) => t.hot_hand_oc += 1,
                }
            }
        }
        Ok(t)
    }

    pub fn situations(&self) -> u64 {
        self.hot_hand_not_oc + self.hot_hand_oc
    }

    pub fn total(&self) -> u64 {
        self.no_hot_hand_not_oc + self.no_hot_hand_oc + self.situations()
    }

    /// Share of hot-hand situations that ended in a further flight.
    pub fn fallacy_share(&self) -> Option<f64> {
        (self.situations() > 0).then(|| self.hot_hand_oc as f64 / self.situations() as f64)
    }
}
