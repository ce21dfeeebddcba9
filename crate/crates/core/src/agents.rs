//! Synthetic decision makers with known behavioral biases.
//!
//! Populations of these agents produce session logs in the same schema as
//! live participants, so the analysis pipeline can be checked against a
//! known ground truth.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mission::{payoff_euro, MissionConfig, Taler};
use crate::policy::{
    closed_loop_decide, derive_plan, execute_plan, mission_rng, play_closed_loop, DecisionContext,
    Policy, OPEN_LOOP_ROUNDS,
};
use crate::session::{MplChoice, MplRecord, MplSheet, SessionLog, Treatment, MPL_ROWS};

/// Extra rounds an overconfident agent flies past the stopping point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtraRounds {
    Fixed(u32),
    /// Drawn uniformly from `min..=max` at every junction.
    Uniform { min: u32, max: u32 },
}

impl ExtraRounds {
    fn draw(self, rng: &mut dyn RngCore) -> u32 {
        match self {
            ExtraRounds::Fixed(k) => k,
            ExtraRounds::Uniform { min, max } => rng.random_range(min..=max),
        }
    }

    fn is_fixed(self) -> bool {
        match self {
            ExtraRounds::Fixed(_) => true,
            ExtraRounds::Uniform { min, max } => min == max,
        }
    }
}

fn default_streak() -> u32 {
    3
}

/// Behavioral profile of a synthetic participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasProfile {
    /// Follows the heuristic of the treatment.
    Optimizer,
    /// Flies `extra_rounds` beyond the heuristic stopping point.
    Overconfident { extra_rounds: ExtraRounds },
    /// Stops once the value reaches `stop_threshold`, or after
    /// `max_flights` rounds if given.
    Underconfident {
        stop_threshold: Taler,
        #[serde(default)]
        max_flights: Option<u32>,
    },
    /// Follows the heuristic, but after `streak_len` increases in a row from
    /// the start of a junction keeps flying each round with probability
    /// `continue_prob`. With `gambler` set it instead stops right after the
    /// streak.
    HotHand {
        continue_prob: f64,
        #[serde(default = "default_streak")]
        streak_len: u32,
        #[serde(default)]
        gambler: bool,
    },
    /// Flies the same number of rounds everywhere, ignoring feedback.
    OpenLoopFixed { planned_rounds: u32 },
}

impl BiasProfile {
    pub fn kind(&self) -> &'static str {
        match self {
            BiasProfile::Optimizer => "optimizer",
            BiasProfile::Overconfident { .. } => "overconfident",
            BiasProfile::Underconfident { .. } => "underconfident",
            BiasProfile::HotHand { .. } => "hot_hand",
            BiasProfile::OpenLoopFixed { .. } => "open_loop_fixed",
        }
    }

    pub fn validate(&self, cfg: &MissionConfig) -> Result<()> {
        match *self {
            BiasProfile::Optimizer => Ok(()),
            BiasProfile::Overconfident { extra_rounds } => match extra_rounds {
                ExtraRounds::Uniform { min, max } if min > max => Err(Error::InvalidConfig(format!(
                    "extra_rounds range {min}..={max} is empty"
                ))),
                _ => Ok(()),
            },
            BiasProfile::Underconfident { stop_threshold, max_flights } => {
                if !cfg.rho.contains(stop_threshold) {
                    return Err(Error::OffLadder(stop_threshold));
                }
                if stop_threshold >= cfg.myopic_threshold() {
                    return Err(Error::InvalidConfig(format!(
                        "underconfident threshold {stop_threshold} must lie below {}",
                        cfg.myopic_threshold()
                    )));
                }
                if max_flights.is_some_and(|m| m > cfg.max_rounds) {
                    return Err(Error::InvalidConfig("max_flights exceeds the round cap".into()));
                }
                Ok(())
            }
            BiasProfile::HotHand { continue_prob, streak_len, .. } => {
                if !(0.0..=1.0).contains(&continue_prob) {
                    return Err(Error::InvalidConfig(format!(
                        "continue_prob {continue_prob} outside [0, 1]"
                    )));
                }
                if streak_len == 0 {
                    return Err(Error::InvalidConfig("streak_len must be at least 1".into()));
                }
                Ok(())
            }
            BiasProfile::OpenLoopFixed { planned_rounds } => {
                if planned_rounds > cfg.max_rounds {
                    return Err(Error::InvalidConfig("planned_rounds exceeds the round cap".into()));
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for BiasProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiasProfile::Optimizer => write!(f, "optimizer"),
            BiasProfile::Overconfident { extra_rounds: ExtraRounds::Fixed(k) } => {
                write!(f, "overconfident:extra_rounds={k}")
            }
            BiasProfile::Overconfident { extra_rounds: ExtraRounds::Uniform { min, max } } => {
                write!(f, "overconfident:extra_min={min},extra_max={max}")
            }
            BiasProfile::Underconfident { stop_threshold, max_flights } => {
                write!(f, "underconfident:stop_threshold={stop_threshold}")?;
                if let Some(m) = max_flights {
                    write!(f, ",max_flights={m}")?;
                }
                Ok(())
            }
            BiasProfile::HotHand { continue_prob, streak_len, gambler } => {
                write!(f, "hot_hand:continue_prob={continue_prob},streak_len={streak_len}")?;
                if *gambler {
                    write!(f, ",gambler=true")?;
                }
                Ok(())
            }
            BiasProfile::OpenLoopFixed { planned_rounds } => {
                write!(f, "open_loop_fixed:planned_rounds={planned_rounds}")
            }
        }
    }
}

/// Parses `kind[:key=value,...]`, the inverse of `Display`.
impl FromStr for BiasProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut params = std::collections::BTreeMap::new();
        for kv in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {kv:?}")))?;
            params.insert(k.trim(), v.trim());
        }
        fn take<T: FromStr>(
            params: &mut std::collections::BTreeMap<&str, &str>,
            key: &str,
        ) -> Result<Option<T>> {
            params
                .remove(key)
                .map(|v| v.parse().map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {v:?}"))))
                .transpose()
        }
        let profile = match kind {
            "optimizer" => BiasProfile::Optimizer,
            "overconfident" => {
                let fixed: Option<u32> = take(&mut params, "extra_rounds")?;
                let min: Option<u32> = take(&mut params, "extra_min")?;
                let max: Option<u32> = take(&mut params, "extra_max")?;
                let extra_rounds = match (fixed, min, max) {
                    (Some(k), None, None) => ExtraRounds::Fixed(k),
                    (None, Some(min), Some(max)) => ExtraRounds::Uniform { min, max },
                    (None, None, None) => ExtraRounds::Fixed(1),
                    _ => {
                        return Err(Error::InvalidConfig(
                            "give extra_rounds or both extra_min and extra_max".into(),
                        ))
                    }
                };
                BiasProfile::Overconfident { extra_rounds }
            }
            "underconfident" => BiasProfile::Underconfident {
                stop_threshold: take(&mut params, "stop_threshold")?.unwrap_or(50),
                max_flights: take(&mut params, "max_flights")?,
            },
            "hot_hand" => BiasProfile::HotHand {
                continue_prob: take(&mut params, "continue_prob")?.unwrap_or(1.0),
                streak_len: take(&mut params, "streak_len")?.unwrap_or(3),
                gambler: take(&mut params, "gambler")?.unwrap_or(false),
            },
            "open_loop_fixed" => BiasProfile::OpenLoopFixed {
                planned_rounds: take(&mut params, "planned_rounds")?
                    .ok_or_else(|| Error::InvalidConfig("open_loop_fixed needs planned_rounds".into()))?,
            },
            other => return Err(Error::InvalidConfig(format!("unknown agent kind {other:?}"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(Error::InvalidConfig(format!("unknown parameter {k:?} for {kind}")));
        }
        Ok(profile)
    }
}

/// A profile bound to a treatment and mission configuration.
#[derive(Debug, Clone)]
pub struct AgentPolicy {
    profile: BiasProfile,
    treatment: Treatment,
    cfg: MissionConfig,
    threshold: Taler,
    junction_extra: u32,
}

/// Builds the decision rule of a profile for a treatment.
pub fn make_policy(
    profile: &BiasProfile,
    treatment: Treatment,
    cfg: &MissionConfig,
) -> Result<AgentPolicy> {
    profile.validate(cfg)?;
    match (profile, treatment) {
        (BiasProfile::HotHand { .. }, Treatment::Open) => {
            return Err(Error::InvalidConfig(
                "hot_hand agents need feedback and cannot play the open treatment".into(),
            ))
        }
        (BiasProfile::Underconfident { max_flights: None, .. }, Treatment::Open) => {
            return Err(Error::InvalidConfig(
                "underconfident agents in the open treatment need max_flights".into(),
            ))
        }
        (BiasProfile::Underconfident { max_flights: Some(m), .. }, Treatment::Open)
            if *m >= OPEN_LOOP_ROUNDS.min(cfg.max_rounds) =>
        {
            return Err(Error::InvalidConfig(format!(
                "open-treatment underconfident agents must plan fewer than {OPEN_LOOP_ROUNDS} rounds"
            )))
        }
        _ => {}
    }
    Ok(AgentPolicy {
        profile: profile.clone(),
        treatment,
        cfg: cfg.clone(),
        threshold: cfg.myopic_threshold(),
        junction_extra: 0,
    })
}

impl AgentPolicy {
    pub fn profile(&self) -> &BiasProfile {
        &self.profile
    }

    pub fn treatment(&self) -> Treatment {
        self.treatment
    }

    /// Round at which the value first reached the stopping threshold.
    fn threshold_round(&self, increases: &[bool]) -> Option<u32> {
        let mut sigma = 0;
        if sigma >= self.threshold {
            return Some(0);
        }
        for (k, &inc) in increases.iter().enumerate() {
            if inc {
                sigma += self.cfg.rho.increment(sigma).unwrap_or(0);
            }
            if sigma >= self.threshold {
                return Some(k as u32 + 1);
            }
        }
        None
    }

    fn decide_closed(&self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<bool> {
        let sigma = ctx.sigma().ok_or(Error::NoFeedback)?;
        let increases = ctx.increases().unwrap_or(&[]);
        let heuristic = closed_loop_decide(ctx, &self.cfg)?;
        let cap_ok = ctx.intact && ctx.rounds_here < self.cfg.max_rounds;
        Ok(match self.profile {
            BiasProfile::Optimizer => heuristic,
            BiasProfile::Overconfident { .. } => match self.threshold_round(increases) {
                None => heuristic,
                Some(t) => cap_ok && ctx.rounds_here - t < self.junction_extra,
            },
            BiasProfile::Underconfident { stop_threshold, max_flights } => {
                cap_ok
                    && sigma < stop_threshold
                    && max_flights.is_none_or(|m| ctx.rounds_here < m)
            }
            BiasProfile::HotHand { continue_prob, streak_len, gambler } => {
                let n = streak_len as usize;
                let streak = increases.len() >= n && increases[..n].iter().all(|&b| b);
                if !streak {
                    heuristic
                } else if gambler {
                    false
                } else {
                    heuristic || (cap_ok && rng.random_bool(continue_prob))
                }
            }
            BiasProfile::OpenLoopFixed { planned_rounds } => cap_ok && ctx.rounds_here < planned_rounds,
        })
    }

    fn decide_open(&self, ctx: &DecisionContext<'_>) -> bool {
        let base = OPEN_LOOP_ROUNDS.min(self.cfg.max_rounds);
        let planned = match self.profile {
            BiasProfile::Optimizer => base,
            BiasProfile::Overconfident { .. } => (base + self.junction_extra).min(self.cfg.max_rounds),
            BiasProfile::Underconfident { max_flights, .. } => max_flights.unwrap_or(0),
            BiasProfile::OpenLoopFixed { planned_rounds } => planned_rounds,
            BiasProfile::HotHand { .. } => base,
        };
        ctx.intact && ctx.rounds_here < planned
    }
}

impl Policy for AgentPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<bool> {
        match self.treatment {
            Treatment::Closed => self.decide_closed(ctx, rng),
            Treatment::Open => Ok(self.decide_open(ctx)),
        }
    }

    fn start_junction(&mut self, _junction: u32, rng: &mut dyn RngCore) {
        if let BiasProfile::Overconfident { extra_rounds } = self.profile {
            self.junction_extra = extra_rounds.draw(rng);
        }
    }

    fn is_deterministic(&self) -> bool {
        match self.profile {
            BiasProfile::Overconfident { extra_rounds } => extra_rounds.is_fixed(),
            BiasProfile::HotHand { continue_prob, gambler, .. } => {
                gambler || continue_prob == 0.0 || continue_prob == 1.0
            }
            _ => true,
        }
    }

    fn needs_feedback(&self) -> bool {
        self.treatment == Treatment::Closed
    }

    fn name(&self) -> String {
        format!("agent:{}", self.profile)
    }
}

fn default_switch_row() -> u32 {
    17
}

/// One homogeneous group of agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentGroup {
    pub profile: BiasProfile,
    pub count: u32,
    pub treatment: Treatment,
    /// First row answered with A on the price list; rows before are B.
    /// 17 is the risk-neutral sheet, 21 means B everywhere.
    #[serde(default = "default_switch_row")]
    pub mpl_switch_row: u32,
}

/// Declarative description of a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub seed: u64,
    #[serde(rename = "group")]
    pub groups: Vec<AgentGroup>,
}

impl PopulationSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn size(&self) -> u32 {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn validate(&self, cfg: &MissionConfig) -> Result<()> {
        for g in &self.groups {
            make_policy(&g.profile, g.treatment, cfg)?;
            if !(1..=MPL_ROWS as u32 + 1).contains(&g.mpl_switch_row) {
                return Err(Error::InvalidConfig(format!(
                    "mpl_switch_row {} outside 1..={}",
                    g.mpl_switch_row,
                    MPL_ROWS + 1
                )));
            }
        }
        Ok(())
    }
}

fn participant_code(rng: &mut dyn RngCore) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZ23456789";
    (0..8).map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char).collect()
}

fn generate_one(
    group: &AgentGroup,
    index: u32,
    seed: u64,
    cfg: &MissionConfig,
) -> Result<SessionLog> {
    let stream = u64::from(index);
    let mut rng = mission_rng(seed, stream);
    let mut policy = make_policy(&group.profile, group.treatment, cfg)?;
    let code = participant_code(&mut rng);
    let (mission, plan) = match group.treatment {
        Treatment::Closed => (play_closed_loop(&mut policy, cfg, &mut rng)?, None),
        Treatment::Open => {
            let plan = derive_plan(&mut policy, cfg, &mut rng)?;
            (execute_plan(&plan, cfg, &mut rng)?, Some(plan))
        }
    };
    let mut log = SessionLog::from_mission(
        format!("agent-{seed:016x}-{index:06}"),
        code,
        group.treatment,
        seed,
        stream,
        mission,
        plan.as_ref(),
    );
    log.agent = Some(group.profile.to_string());

    let participant_index = index + 1;
    let choices: Vec<MplChoice> = (1..=MPL_ROWS as u32)
        .map(|row| if row < group.mpl_switch_row { MplChoice::B } else { MplChoice::A })
        .collect();
    let sheet = MplSheet::default();
    let mut mpl = MplRecord { choices, paid_row: None, lottery_won: None, outcome: None };
    if participant_index % cfg.mpl_payout_modulus == 0 {
        let row = rng.random_range(1..=MPL_ROWS);
        let choice = mpl.choices[row - 1];
        let won = rng.random_bool(sheet.lottery_win_prob);
        mpl.paid_row = Some(row as u32);
        mpl.lottery_won = (choice == MplChoice::B).then_some(won);
        mpl.outcome = Some(sheet.payout(row, choice, won)?);
    }
    log.payoff = Some(payoff_euro(log.total_value, mpl.outcome, participant_index, cfg)?);
    log.participant_index = Some(participant_index);
    log.mpl = Some(mpl);
    Ok(log)
}

/// One complete session per agent, in group order. Agent `n` (0-based over
/// the whole population) draws from stream `n` of the population seed, so
/// the output does not depend on thread scheduling.
pub fn generate_sessions(spec: &PopulationSpec, cfg: &MissionConfig) -> Result<Vec<SessionLog>> {
    cfg.validate()?;
    spec.validate(cfg)?;
    let mut jobs = Vec::with_capacity(spec.size() as usize);
    for group in &spec.groups {
        for _ in 0..group.count {
            jobs.push(group);
        }
    }
    jobs.par_iter()
        .enumerate()
        .map(|(n, group)| generate_one(group, n as u32, spec.seed, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn decide_path(policy: &mut AgentPolicy, increases: &[bool]) -> bool {
        let cfg = MissionConfig::default();
        let mut sigma = 0;
        for (k, &inc) in increases.iter().enumerate() {
            if inc || k == 0 {
                sigma += cfg.rho.increment(sigma).unwrap();
            }
        }
        let ctx = DecisionContext::closed(1, increases.len() as u32, sigma, true, increases);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        policy.decide(&ctx, &mut rng).unwrap()
    }

    #[test]
    fn overconfident_flies_exactly_k_more() {
        let cfg = MissionConfig::default();
        let profile = BiasProfile::Overconfident { extra_rounds: ExtraRounds::Fixed(2) };
        let mut p = make_policy(&profile, Treatment::Closed, &cfg).unwrap();
        p.start_junction(1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(decide_path(&mut p, &[true, true]));
        assert!(decide_path(&mut p, &[true, true, true]));
        assert!(decide_path(&mut p, &[true, true, true, false]));
        assert!(!decide_path(&mut p, &[true, true, true, false, true]));
    }

    #[test]
    fn hot_hand_keeps_flying_after_streak() {
        let cfg = MissionConfig::default();
        let profile = BiasProfile::HotHand { continue_prob: 1.0, streak_len: 3, gambler: false };
        let mut p = make_policy(&profile, Treatment::Closed, &cfg).unwrap();
        assert!(decide_path(&mut p, &[true, true, true]));
        assert!(decide_path(&mut p, &[true, true, true, true, false, false, false]));
        // a miss on the way breaks the streak: ordinary heuristic stop at 70
        assert!(!decide_path(&mut p, &[true, false, true, true]));
    }

    #[test]
    fn gambler_variant_stops_after_short_streak() {
        let cfg = MissionConfig::default();
        let profile = BiasProfile::HotHand { continue_prob: 0.0, streak_len: 2, gambler: true };
        let mut p = make_policy(&profile, Treatment::Closed, &cfg).unwrap();
        assert!(!decide_path(&mut p, &[true, true]));
        assert!(decide_path(&mut p, &[true, false]));
    }

    #[test]
    fn profile_treatment_mismatch() {
        let cfg = MissionConfig::default();
        let hot = BiasProfile::HotHand { continue_prob: 0.5, streak_len: 3, gambler: false };
        assert!(matches!(make_policy(&hot, Treatment::Open, &cfg), Err(Error::InvalidConfig(_))));
        let under = BiasProfile::Underconfident { stop_threshold: 50, max_flights: None };
        assert!(make_policy(&under, Treatment::Open, &cfg).is_err());
        let too_high = BiasProfile::Underconfident { stop_threshold: 70, max_flights: None };
        assert!(make_policy(&too_high, Treatment::Closed, &cfg).is_err());
    }

    #[test]
    fn profile_strings_round_trip() {
        let profiles = [
            BiasProfile::Optimizer,
            BiasProfile::Overconfident { extra_rounds: ExtraRounds::Fixed(3) },
            BiasProfile::Overconfident { extra_rounds: ExtraRounds::Uniform { min: 1, max: 4 } },
            BiasProfile::Underconfident { stop_threshold: 25, max_flights: Some(3) },
            BiasProfile::HotHand { continue_prob: 0.25, streak_len: 3, gambler: false },
            BiasProfile::OpenLoopFixed { planned_rounds: 8 },
        ];
        for p in profiles {
            assert_eq!(p.to_string().parse::<BiasProfile>().unwrap(), p);
        }
        assert!("optimizer:foo=1".parse::<BiasProfile>().is_err());
        assert!("wizard".parse::<BiasProfile>().is_err());
    }

    #[test]
    fn population_spec_from_toml() {
        let spec = PopulationSpec::from_toml(
            r#"
            seed = 9
            [[group]]
            profile = { kind = "optimizer" }
            count = 3
            treatment = "closed"

            [[group]]
            profile = { kind = "overconfident", extra_rounds = { min = 1, max = 3 } }
            count = 2
            treatment = "open"
            mpl_switch_row = 12
            "#,
        )
        .unwrap();
        assert_eq!(spec.size(), 5);
        assert!(PopulationSpec::from_toml("seed = 1\ngroup = []\nextra = 2\n").is_err());
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let cfg = MissionConfig::default();
        let spec = PopulationSpec {
            seed: 5,
            groups: vec![
                AgentGroup {
                    profile: BiasProfile::Optimizer,
                    count: 20,
                    treatment: Treatment::Closed,
                    mpl_switch_row: 17,
                },
                AgentGroup {
                    profile: BiasProfile::Optimizer,
                    count: 20,
                    treatment: Treatment::Open,
                    mpl_switch_row: 10,
                },
            ],
        };
        let a = generate_sessions(&spec, &cfg).unwrap();
        let b = generate_sessions(&spec, &cfg).unwrap();
        let ja: Vec<String> = a.iter().map(|s| serde_json::to_string(s).unwrap()).collect();
        let jb: Vec<String> = b.iter().map(|s| serde_json::to_string(s).unwrap()).collect();
        assert_eq!(ja, jb);
        for s in &a {
            s.verify().unwrap();
            assert_eq!(s.participant_code.len(), 8);
        }
        let paid = a.iter().filter(|s| s.mpl.as_ref().unwrap().paid_row.is_some()).count();
        assert_eq!(paid, 2);
    }

    #[test]
    fn optimizer_stops_at_first_threshold_hit() {
        let cfg = MissionConfig::default();
        let mut p = make_policy(&BiasProfile::Optimizer, Treatment::Closed, &cfg).unwrap();
        let mut rng = mission_rng(77, 0);
        for _ in 0..50 {
            let log = play_closed_loop(&mut p, &cfg, &mut rng).unwrap();
            for flights in &log.junctions {
                let path: Vec<_> = flights.iter().map(|o| o.sigma_after).collect();
                let crashed = flights.last().is_some_and(|o| o.crashed);
                if let Some(pos) = path.iter().position(|&s| s >= 70) {
                    assert_eq!(pos + 1, path.len(), "{path:?}");
                } else {
                    assert!(crashed || path.len() == 8, "{path:?}");
                }
            }
        }
    }
}
