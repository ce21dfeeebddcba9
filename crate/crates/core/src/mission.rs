//! Mission dynamics, value accounting and payoff arithmetic.
//!
//! Information values live on a finite ladder. Before the first picture at a
//! junction the value is 0; the first picture always adds the first ladder
//! increment, later pictures add the next increment with probability `p`.
//! After every picture the drone crashes with probability `r`. Information
//! gathered up to and including the crash round is kept, the drone value is
//! lost and the mission ends.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Experimental currency; one Taler per unit of information value.
pub type Taler = u32;

/// Increments of the default information ladder, starting from 0.
pub const DEFAULT_INCREMENTS: [Taler; 8] = [25, 25, 20, 10, 5, 5, 5, 5];

/// The ladder of attainable information values and the increment `rho`
/// attached to every value below the top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Taler>", into = "Vec<Taler>")]
pub struct RhoLadder {
    increments: Vec<Taler>,
    ladder: Vec<Taler>,
}

impl RhoLadder {
    /// Builds a ladder from its increments. Increments must be positive and
    /// non-increasing.
    pub fn from_increments(increments: &[Taler]) -> Result<Self> {
        if increments.is_empty() {
            return Err(Error::InvalidConfig("rho ladder needs at least one increment".into()));
        }
        if increments.contains(&0) {
            return Err(Error::InvalidConfig("rho increments must be positive".into()));
        }
        if increments.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidConfig("rho increments must be non-increasing".into()));
        }
        let mut ladder = Vec::with_capacity(increments.len() + 1);
        let mut acc: Taler = 0;
        ladder.push(acc);
        for &inc in increments {
            acc = acc
                .checked_add(inc)
                .ok_or_else(|| Error::InvalidConfig("rho ladder overflows".into()))?;
            ladder.push(acc);
        }
        Ok(Self { increments: increments.to_vec(), ladder })
    }

    pub fn ladder(&self) -> &[Taler] {
        &self.ladder
    }

    pub fn increments(&self) -> &[Taler] {
        &self.increments
    }

    pub fn top(&self) -> Taler {
        *self.ladder.last().expect("ladder is never empty")
    }

    pub fn index_of(&self, sigma: Taler) -> Option<usize> {
        self.ladder.binary_search(&sigma).ok()
    }

    pub fn contains(&self, sigma: Taler) -> bool {
        self.index_of(sigma).is_some()
    }

    /// `rho(sigma)`; `None` at the top or off the ladder.
    pub fn increment(&self, sigma: Taler) -> Option<Taler> {
        self.index_of(sigma).and_then(|i| self.increments.get(i).copied())
    }

    /// Multiplies every increment by `factor`.
    pub fn scaled(&self, factor: Taler) -> Result<Self> {
        let incs: Vec<Taler> = self.increments.iter().map(|v| v * factor).collect();
        Self::from_increments(&incs)
    }
}

impl Default for RhoLadder {
    fn default() -> Self {
        Self::from_increments(&DEFAULT_INCREMENTS).expect("default ladder is valid")
    }
}

impl TryFrom<Vec<Taler>> for RhoLadder {
    type Error = Error;

    fn try_from(value: Vec<Taler>) -> Result<Self> {
        Self::from_increments(&value)
    }
}

impl From<RhoLadder> for Vec<Taler> {
    fn from(value: RhoLadder) -> Self {
        value.increments
    }
}

/// `sigma + rho(sigma)`.
pub fn next_value(sigma: Taler, rho: &RhoLadder) -> Result<Taler> {
    if !rho.contains(sigma) {
        return Err(Error::OffLadder(sigma));
    }
    match rho.increment(sigma) {
        Some(inc) => Ok(sigma + inc),
        None => Err(Error::LadderTop(sigma)),
    }
}

fn default_drone_value() -> Taler {
    400
}
fn default_increase_prob() -> f64 {
    0.5
}
fn default_crash_prob() -> f64 {
    0.02
}
fn default_num_junctions() -> u32 {
    10
}
fn default_max_rounds() -> u32 {
    8
}
fn default_taler_per_euro() -> u32 {
    120
}
fn default_mpl_payout_modulus() -> u32 {
    15
}

/// All parameters of one mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionConfig {
    /// Sale value of an intact drone at mission end (`D`).
    #[serde(default = "default_drone_value")]
    pub drone_value: Taler,
    /// Probability that a picture after the first one increases the value (`p`).
    #[serde(default = "default_increase_prob")]
    pub increase_prob: f64,
    /// Crash probability after each picture (`r`).
    #[serde(default = "default_crash_prob")]
    pub crash_prob: f64,
    #[serde(default = "default_num_junctions")]
    pub num_junctions: u32,
    /// Round cap per junction (`N`).
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default, rename = "rho_increments")]
    pub rho: RhoLadder,
    #[serde(default = "default_taler_per_euro")]
    pub taler_per_euro: u32,
    /// Every participant whose index is a multiple of this is paid for one
    /// price-list row.
    #[serde(default = "default_mpl_payout_modulus")]
    pub mpl_payout_modulus: u32,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            drone_value: default_drone_value(),
            increase_prob: default_increase_prob(),
            crash_prob: default_crash_prob(),
            num_junctions: default_num_junctions(),
            max_rounds: default_max_rounds(),
            rho: RhoLadder::default(),
            taler_per_euro: default_taler_per_euro(),
            mpl_payout_modulus: default_mpl_payout_modulus(),
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.increase_prob) {
            return Err(Error::InvalidConfig(format!(
                "increase_prob must lie in [0, 1], got {}",
                self.increase_prob
            )));
        }
        if !(0.0..1.0).contains(&self.crash_prob) {
            return Err(Error::InvalidConfig(format!(
                "crash_prob must lie in [0, 1), got {}",
                self.crash_prob
            )));
        }
        if self.num_junctions == 0 {
            return Err(Error::InvalidConfig("num_junctions must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::InvalidConfig("max_rounds must be at least 1".into()));
        }
        if self.taler_per_euro == 0 {
            return Err(Error::InvalidConfig("taler_per_euro must be positive".into()));
        }
        if self.mpl_payout_modulus == 0 {
            return Err(Error::InvalidConfig("mpl_payout_modulus must be positive".into()));
        }
        Ok(())
    }

    /// Probability that the picture taken in round `round_index` (0-based)
    /// raises the value.
    pub fn increase_prob_at(&self, round_index: u32) -> f64 {
        if round_index == 0 {
            1.0
        } else {
            self.increase_prob
        }
    }

    /// Expected one-round gain `p * rho(sigma) - D * r`.
    pub fn marginal_gain(&self, sigma: Taler) -> Result<f64> {
        let inc = match self.rho.increment(sigma) {
            Some(inc) => inc,
            None if self.rho.contains(sigma) => return Err(Error::LadderTop(sigma)),
            None => return Err(Error::OffLadder(sigma)),
        };
        Ok(self.increase_prob * f64::from(inc) - f64::from(self.drone_value) * self.crash_prob)
    }

    /// Same as [`marginal_gain`](Self::marginal_gain) but with the certain
    /// first picture when no round has been flown yet.
    pub fn marginal_gain_first_round(&self) -> f64 {
        let inc = self.rho.increments()[0];
        f64::from(inc) - f64::from(self.drone_value) * self.crash_prob
    }

    /// Smallest ladder value at which the myopic rule stops flying.
    ///
    /// Increments are non-increasing, so the marginal gain is non-increasing
    /// along the ladder and the rule "fly iff gain > 0" is a threshold rule.
    pub fn myopic_threshold(&self) -> Taler {
        for &sigma in self.rho.ladder() {
            match self.marginal_gain(sigma) {
                Ok(g) if g > 0.0 => continue,
                _ => return sigma,
            }
        }
        self.rho.top()
    }

    /// Upper bound on the value of any mission.
    pub fn max_value(&self) -> Taler {
        self.drone_value + self.rho.top() * self.num_junctions
    }
}

/// Result of a single round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightOutcome {
    pub junction: u32,
    pub round: u32,
    pub increased: bool,
    pub crashed: bool,
    pub sigma_after: Taler,
}

/// Source of the two random draws made by every flight.
pub trait FlightDice {
    fn increase(&mut self, p: f64) -> bool;
    fn crash(&mut self, r: f64) -> bool;
}

impl<R: RngCore + ?Sized> FlightDice for R {
    fn increase(&mut self, p: f64) -> bool {
        self.random_bool(p)
    }

    fn crash(&mut self, r: f64) -> bool {
        self.random_bool(r)
    }
}

/// Dice that replay fixed outcome sequences. Exhausted queues yield `false`.
#[derive(Debug, Clone, Default)]
pub struct ScriptedDice {
    increases: VecDeque<bool>,
    crashes: VecDeque<bool>,
}

impl ScriptedDice {
    pub fn new(
        increases: impl IntoIterator<Item = bool>,
        crashes: impl IntoIterator<Item = bool>,
    ) -> Self {
        Self { increases: increases.into_iter().collect(), crashes: crashes.into_iter().collect() }
    }
}

impl FlightDice for ScriptedDice {
    fn increase(&mut self, _p: f64) -> bool {
        self.increases.pop_front().unwrap_or(false)
    }

    fn crash(&mut self, _r: f64) -> bool {
        self.crashes.pop_front().unwrap_or(false)
    }
}

/// Live state of one mission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissionState {
    /// Current junction, 1-based.
    pub junction: u32,
    pub rounds_here: u32,
    pub sigma: Taler,
    pub intact: bool,
    /// Sum of the information of completed junctions.
    pub banked_info: Taler,
    pub finished: bool,
}

impl Default for MissionState {
    fn default() -> Self {
        Self::new()
    }
}

impl MissionState {
    pub fn new() -> Self {
        Self { junction: 1, rounds_here: 0, sigma: 0, intact: true, banked_info: 0, finished: false }
    }

    fn check_can_fly(&self, cfg: &MissionConfig) -> Result<()> {
        if !self.intact {
            return Err(Error::Crashed);
        }
        if self.finished {
            return Err(Error::MissionFinished);
        }
        if self.rounds_here >= cfg.max_rounds {
            return Err(Error::RoundCap(cfg.max_rounds));
        }
        Ok(())
    }

    /// Flies one round: picture first, then the crash draw.
    pub fn fly_once<D: FlightDice + ?Sized>(
        &mut self,
        cfg: &MissionConfig,
        dice: &mut D,
    ) -> Result<FlightOutcome> {
        self.check_can_fly(cfg)?;
        if !cfg.rho.contains(self.sigma) {
            return Err(Error::OffLadder(self.sigma));
        }
        let can_grow = cfg.rho.increment(self.sigma).is_some();
        let increased = if self.rounds_here == 0 {
            true
        } else if can_grow {
            dice.increase(cfg.increase_prob)
        } else {
            false
        };
        if increased {
            self.sigma = next_value(self.sigma, &cfg.rho)?;
        }
        let crashed = dice.crash(cfg.crash_prob);
        self.rounds_here += 1;
        if crashed {
            self.intact = false;
            self.finished = true;
        }
        Ok(FlightOutcome {
            junction: self.junction,
            round: self.rounds_here,
            increased,
            crashed,
            sigma_after: self.sigma,
        })
    }

    /// Closes the current junction, banking its information. Returns the
    /// banked value `I_j`.
    pub fn stop(&mut self, cfg: &MissionConfig) -> Result<Taler> {
        if !self.intact {
            return Err(Error::Crashed);
        }
        if self.finished {
            return Err(Error::MissionFinished);
        }
        let info = self.sigma;
        self.banked_info += info;
        self.sigma = 0;
        self.rounds_here = 0;
        if self.junction >= cfg.num_junctions {
            self.finished = true;
        } else {
            self.junction += 1;
        }
        Ok(info)
    }

    /// Current combined value `D c + sigma + banked`.
    pub fn running_value(&self, cfg: &MissionConfig) -> Taler {
        let drone = if self.intact { cfg.drone_value } else { 0 };
        drone + self.sigma + self.banked_info
    }
}

/// A state machine that records every outcome it produces.
#[derive(Debug, Clone)]
pub struct Mission {
    cfg: MissionConfig,
    state: MissionState,
    junctions: Vec<Vec<FlightOutcome>>,
}

impl Mission {
    pub fn new(cfg: MissionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, state: MissionState::new(), junctions: vec![Vec::new()] })
    }

    pub fn config(&self) -> &MissionConfig {
        &self.cfg
    }

    pub fn state(&self) -> &MissionState {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.state.finished
    }

    /// Outcomes of the current junction so far.
    pub fn current_junction(&self) -> &[FlightOutcome] {
        self.junctions.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn junctions(&self) -> &[Vec<FlightOutcome>] {
        &self.junctions
    }

    pub fn fly<D: FlightDice + ?Sized>(&mut self, dice: &mut D) -> Result<FlightOutcome> {
        let outcome = self.state.fly_once(&self.cfg, dice)?;
        self.junctions.last_mut().expect("at least one junction").push(outcome);
        Ok(outcome)
    }

    pub fn stop(&mut self) -> Result<Taler> {
        let info = self.state.stop(&self.cfg)?;
        if !self.state.finished {
            self.junctions.push(Vec::new());
        }
        Ok(info)
    }

    pub fn into_log(self) -> Result<MissionLog> {
        if !self.state.finished {
            return Err(Error::MissionUnfinished);
        }
        let total_value = self.state.running_value(&self.cfg);
        Ok(MissionLog {
            config: self.cfg,
            junctions: self.junctions,
            intact: self.state.intact,
            total_value,
        })
    }
}

/// Complete record of a finished mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionLog {
    pub config: MissionConfig,
    /// One entry per junction that was reached, in order.
    pub junctions: Vec<Vec<FlightOutcome>>,
    pub intact: bool,
    pub total_value: Taler,
}

impl MissionLog {
    /// `I_j` for every reached junction.
    pub fn junction_infos(&self) -> Vec<Taler> {
        self.junctions.iter().map(|flights| junction_info(flights)).collect()
    }

    pub fn crashed(&self) -> bool {
        self.junctions.last().and_then(|f| f.last()).is_some_and(|o| o.crashed)
    }

    pub fn total_info(&self) -> Taler {
        self.junction_infos().iter().sum()
    }

    pub fn total_flights(&self) -> usize {
        self.junctions.iter().map(Vec::len).sum()
    }

    /// Pushes every recorded outcome back through the dynamics and checks it
    /// is consistent with the configuration.
    pub fn verify(&self) -> Result<()> {
        let cfg = &self.config;
        let mut state = MissionState::new();
        for (idx, flights) in self.junctions.iter().enumerate() {
            let j = idx as u32 + 1;
            if state.junction != j || state.finished {
                return Err(Error::Replay(format!("junction {j} reached out of order")));
            }
            for outcome in flights {
                let mut dice = ScriptedDice::new([outcome.increased], [outcome.crashed]);
                let replayed = state.fly_once(cfg, &mut dice).map_err(|e| {
                    Error::Replay(format!("junction {j} round {}: {e}", outcome.round))
                })?;
                if replayed != *outcome {
                    return Err(Error::Replay(format!(
                        "junction {j} round {}: recorded {:?}, dynamics give {:?}",
                        outcome.round, outcome, replayed
                    )));
                }
            }
            if state.intact && idx + 1 < self.junctions.len() {
                state.stop(cfg)?;
            }
        }
        if state.intact && !state.finished {
            state.stop(cfg)?;
        }
        if !state.finished {
            return Err(Error::MissionUnfinished);
        }
        if state.intact != self.intact {
            return Err(Error::Replay("recorded drone state disagrees with outcomes".into()));
        }
        let value = state.running_value(cfg);
        if value != self.total_value {
            return Err(Error::Replay(format!(
                "recorded value {} but outcomes give {value}",
                self.total_value
            )));
        }
        Ok(())
    }
}

/// `I_j`: the value after the last flight, 0 if the junction was skipped.
pub fn junction_info(flights: &[FlightOutcome]) -> Taler {
    flights.last().map_or(0, |o| o.sigma_after)
}

/// Total value `V = D c + sum_j I_j` of a finished mission.
pub fn mission_value(log: &MissionLog) -> Result<Taler> {
    let cfg = &log.config;
    let crashed = log.crashed();
    let complete = log.junctions.len() as u32 == cfg.num_junctions;
    if !crashed && !complete {
        return Err(Error::MissionUnfinished);
    }
    let drone = if crashed { 0 } else { cfg.drone_value };
    Ok(drone + log.total_info())
}

/// Money amount in whole euro cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Euros(pub u64);

impl Euros {
    pub fn from_whole(euros: u64) -> Self {
        Self(euros * 100)
    }

    pub fn cents(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Euros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "€{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

impl std::ops::Add for Euros {
    type Output = Euros;

    fn add(self, rhs: Self) -> Self::Output {
        Euros(self.0 + rhs.0)
    }
}

/// Converts Taler to euros, rounding half-up to whole cents.
pub fn taler_to_euros(value: Taler, cfg: &MissionConfig) -> Euros {
    let rate = u64::from(cfg.taler_per_euro);
    let scaled = u64::from(value) * 100;
    Euros((2 * scaled + rate) / (2 * rate))
}

/// Total payoff: `V / rate`, plus the price-list outcome for every
/// `mpl_payout_modulus`-th participant. `participant_index` is 1-based.
pub fn payoff_euro(
    value: Taler,
    mpl_outcome: Option<Euros>,
    participant_index: u32,
    cfg: &MissionConfig,
) -> Result<Euros> {
    if participant_index == 0 {
        return Err(Error::Domain("participant index is 1-based".into()));
    }
    if cfg.taler_per_euro == 0 || cfg.mpl_payout_modulus == 0 {
        return Err(Error::InvalidConfig("exchange rate and payout modulus must be positive".into()));
    }
    let base = taler_to_euros(value, cfg);
    let extra = if participant_index % cfg.mpl_payout_modulus == 0 {
        mpl_outcome.unwrap_or_default()
    } else {
        Euros(0)
    };
    Ok(base + extra)
}
