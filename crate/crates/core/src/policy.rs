//! Decision rules, exact evaluation and seeded Monte Carlo simulation.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mission::{FlightDice, Mission, MissionConfig, MissionLog, Taler};

/// Rounds per junction flown by the open-loop heuristic: the certain first
/// picture plus enough attempts for two expected increases at `p = 0.5`.
pub const OPEN_LOOP_ROUNDS: u32 = 5;

/// What a policy may observe before deciding whether to fly another round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionContext<'a> {
    pub junction: u32,
    pub rounds_here: u32,
    pub intact: bool,
    sigma: Option<Taler>,
    increases: &'a [bool],
}

impl<'a> DecisionContext<'a> {
    /// Context with feedback: the current value and the increase history of
    /// this junction are visible.
    pub fn closed(
        junction: u32,
        rounds_here: u32,
        sigma: Taler,
        intact: bool,
        increases: &'a [bool],
    ) -> Self {
        Self { junction, rounds_here, intact, sigma: Some(sigma), increases }
    }

    /// Context without feedback; outcomes are masked.
    pub fn open(junction: u32, rounds_here: u32, intact: bool) -> Self {
        Self { junction, rounds_here, intact, sigma: None, increases: &[] }
    }

    pub fn feedback_available(&self) -> bool {
        self.sigma.is_some()
    }

    pub fn sigma(&self) -> Option<Taler> {
        self.sigma
    }

    /// Increase flags of the rounds flown at this junction (feedback only).
    pub fn increases(&self) -> Option<&'a [bool]> {
        self.sigma.map(|_| self.increases)
    }
}

/// A decision rule mapping the observable context to fly (`true`) or stop.
pub trait Policy: Send {
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<bool>;

    /// Called once when a junction is entered.
    fn start_junction(&mut self, _junction: u32, _rng: &mut dyn RngCore) {}

    /// Whether `decide` depends only on the context.
    fn is_deterministic(&self) -> bool {
        true
    }

    /// Whether the policy reads `sigma` (closed loop) or plans blind.
    fn needs_feedback(&self) -> bool;

    fn name(&self) -> String;
}

/// Expected one-round gain `p rho(sigma) - D r`.
pub fn marginal_gain(sigma: Taler, cfg: &MissionConfig) -> Result<f64> {
    cfg.marginal_gain(sigma)
}

/// Myopic closed-loop rule: fly iff intact, below the round cap and below
/// the value at which the marginal gain turns non-positive.
pub fn closed_loop_decide(ctx: &DecisionContext<'_>, cfg: &MissionConfig) -> Result<bool> {
    let sigma = ctx.sigma().ok_or(Error::NoFeedback)?;
    if !cfg.rho.contains(sigma) {
        return Err(Error::OffLadder(sigma));
    }
    Ok(ctx.intact && ctx.rounds_here < cfg.max_rounds && sigma < cfg.myopic_threshold())
}

/// Number of rounds to attempt at each junction, fixed before flying.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenLoopPlan {
    pub planned_rounds: Vec<u32>,
}

impl OpenLoopPlan {
    pub fn uniform(rounds: u32, cfg: &MissionConfig) -> Self {
        Self { planned_rounds: vec![rounds; cfg.num_junctions as usize] }
    }

    pub fn validate(&self, cfg: &MissionConfig) -> Result<()> {
        if self.planned_rounds.len() != cfg.num_junctions as usize {
            return Err(Error::Domain(format!(
                "plan has {} entries, expected {}",
                self.planned_rounds.len(),
                cfg.num_junctions
            )));
        }
        if let Some(bad) = self.planned_rounds.iter().find(|&&r| r > cfg.max_rounds) {
            return Err(Error::Domain(format!(
                "planned rounds {bad} exceed the cap of {}",
                cfg.max_rounds
            )));
        }
        Ok(())
    }

    pub fn rounds_at(&self, junction: u32) -> u32 {
        self.planned_rounds.get(junction as usize - 1).copied().unwrap_or(0)
    }
}

/// Five rounds at every junction (capped at the round limit).
pub fn open_loop_heuristic_plan(cfg: &MissionConfig) -> OpenLoopPlan {
    OpenLoopPlan::uniform(OPEN_LOOP_ROUNDS.min(cfg.max_rounds), cfg)
}

#[derive(Debug, Clone)]
pub struct ClosedLoopHeuristic {
    cfg: MissionConfig,
}

impl ClosedLoopHeuristic {
    pub fn new(cfg: &MissionConfig) -> Self {
        Self { cfg: cfg.clone() }
    }
}

impl Policy for ClosedLoopHeuristic {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<bool> {
        closed_loop_decide(ctx, &self.cfg)
    }

    fn needs_feedback(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "closed-heuristic".into()
    }
}

/// Flies a fixed plan without looking at outcomes.
#[derive(Debug, Clone)]
pub struct PlannedPolicy {
    plan: OpenLoopPlan,
}

impl PlannedPolicy {
    pub fn new(plan: OpenLoopPlan) -> Self {
        Self { plan }
    }

    pub fn plan(&self) -> &OpenLoopPlan {
        &self.plan
    }
}

impl Policy for PlannedPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<bool> {
        Ok(ctx.intact && ctx.rounds_here < self.plan.rounds_at(ctx.junction))
    }

    fn needs_feedback(&self) -> bool {
        false
    }

    fn name(&self) -> String {
        let p = &self.plan.planned_rounds;
        if p.windows(2).all(|w| w[0] == w[1]) {
            format!("plan:{}x{}", p.first().copied().unwrap_or(0), p.len())
        } else {
            format!("plan:{p:?}")
        }
    }
}

/// Plays one closed-loop mission, asking the policy before every round.
pub fn play_closed_loop<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &MissionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MissionLog> {
    let mut mission = Mission::new(cfg.clone())?;
    let mut increases: Vec<bool> = Vec::with_capacity(cfg.max_rounds as usize);
    let mut entered = 0;
    while !mission.is_finished() {
        let state = mission.state().clone();
        if state.junction != entered {
            entered = state.junction;
            increases.clear();
            policy.start_junction(state.junction, rng);
        }
        let fly = state.rounds_here < cfg.max_rounds && {
            let ctx = DecisionContext::closed(
                state.junction,
                state.rounds_here,
                state.sigma,
                state.intact,
                &increases,
            );
            policy.decide(&ctx, rng)?
        };
        if fly {
            let out = mission.fly(rng)?;
            increases.push(out.increased);
        } else {
            mission.stop()?;
        }
    }
    mission.into_log()
}

/// Asks a blind policy for its full plan up front.
pub fn derive_plan<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &MissionConfig,
    rng: &mut dyn RngCore,
) -> Result<OpenLoopPlan> {
    let mut planned_rounds = Vec::with_capacity(cfg.num_junctions as usize);
    for j in 1..=cfg.num_junctions {
        policy.start_junction(j, rng);
        let mut rounds = 0;
        while rounds < cfg.max_rounds && policy.decide(&DecisionContext::open(j, rounds, true), rng)? {
            rounds += 1;
        }
        planned_rounds.push(rounds);
    }
    Ok(OpenLoopPlan { planned_rounds })
}

/// Flies a plan until it is exhausted or the drone crashes.
pub fn execute_plan<D: FlightDice + ?Sized>(
    plan: &OpenLoopPlan,
    cfg: &MissionConfig,
    dice: &mut D,
) -> Result<MissionLog> {
    plan.validate(cfg)?;
    let mut mission = Mission::new(cfg.clone())?;
    while !mission.is_finished() {
        let state = mission.state();
        if state.rounds_here < plan.rounds_at(state.junction) {
            mission.fly(dice)?;
        } else {
            mission.stop()?;
        }
    }
    mission.into_log()
}

/// Runs one mission with either feedback regime; blind policies commit to a
/// plan before the first flight.
pub fn run_mission<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &MissionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(MissionLog, Option<OpenLoopPlan>)> {
    if policy.needs_feedback() {
        Ok((play_closed_loop(policy, cfg, rng)?, None))
    } else {
        let plan = derive_plan(policy, cfg, rng)?;
        let log = execute_plan(&plan, cfg, rng)?;
        Ok((log, Some(plan)))
    }
}

/// Exact distribution of one junction's outcome, given it is reached with an
/// intact drone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JunctionDistribution {
    /// Probability of leaving the junction intact.
    pub survive_prob: f64,
    /// `E[I_j]`, crash or not.
    pub expected_info: f64,
    pub expected_info_sq: f64,
    /// `E[I_j ; intact]`.
    pub expected_info_survived: f64,
    pub expected_flights: f64,
    /// Probability of each final information value.
    pub info_probs: BTreeMap<Taler, f64>,
}

impl JunctionDistribution {
    pub fn prob_at_least(&self, sigma: Taler) -> f64 {
        self.info_probs.range(sigma..).map(|(_, p)| p).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactEvaluation {
    pub policy: String,
    pub expected_value: f64,
    pub std_value: f64,
    /// Probability that the drone is intact at mission end.
    pub survival_prob: f64,
    /// Probability of reaching each junction.
    pub reach_probs: Vec<f64>,
    pub junctions: Vec<JunctionDistribution>,
}

impl ExactEvaluation {
    /// Expected rounds per reached junction.
    pub fn mean_rounds_per_junction(&self) -> f64 {
        let reached: f64 = self.reach_probs.iter().sum();
        let flights: f64 =
            self.reach_probs.iter().zip(&self.junctions).map(|(r, j)| r * j.expected_flights).sum();
        flights / reached
    }
}

#[derive(Default)]
struct JunctionAcc {
    survive: f64,
    info: f64,
    info_sq: f64,
    info_survived: f64,
    flights: f64,
    probs: BTreeMap<Taler, f64>,
}

impl JunctionAcc {
    fn terminal(&mut self, prob: f64, sigma: Taler, flights: u32, survived: bool) {
        let s = f64::from(sigma);
        self.info += prob * s;
        self.info_sq += prob * s * s;
        self.flights += prob * f64::from(flights);
        *self.probs.entry(sigma).or_insert(0.0) += prob;
        if survived {
            self.survive += prob;
            self.info_survived += prob * s;
        }
    }
}

struct Explorer<'c, P: ?Sized> {
    policy: &'c mut P,
    cfg: &'c MissionConfig,
    rng: ChaCha8Rng,
    junction: u32,
    increases: Vec<bool>,
    acc: JunctionAcc,
}

impl<P: Policy + ?Sized> Explorer<'_, P> {
    fn visit(&mut self, rounds: u32, sigma: Taler, prob: f64) -> Result<()> {
        let fly = rounds < self.cfg.max_rounds && {
            let ctx = if self.policy.needs_feedback() {
                DecisionContext::closed(self.junction, rounds, sigma, true, &self.increases)
            } else {
                DecisionContext::open(self.junction, rounds, true)
            };
            self.policy.decide(&ctx, &mut self.rng)?
        };
        if !fly {
            self.acc.terminal(prob, sigma, rounds, true);
            return Ok(());
        }
        let grow = self.cfg.rho.increment(sigma).is_some();
        let q = if grow { self.cfg.increase_prob_at(rounds) } else { 0.0 };
        let r = self.cfg.crash_prob;
        for (increased, p_branch) in [(true, q), (false, 1.0 - q)] {
            if p_branch == 0.0 {
                continue;
            }
            let next = if increased { sigma + self.cfg.rho.increment(sigma).unwrap_or(0) } else { sigma };
            let p = prob * p_branch;
            if r > 0.0 {
                self.acc.terminal(p * r, next, rounds + 1, false);
            }
            self.increases.push(increased);
            self.visit(rounds + 1, next, p * (1.0 - r))?;
            self.increases.pop();
        }
        Ok(())
    }
}

/// Exact expected mission value of a deterministic policy.
///
/// Each junction's outcome tree is enumerated once; junctions are chained
/// through the probability of arriving intact.
pub fn evaluate_policy_exact<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &MissionConfig,
) -> Result<ExactEvaluation> {
    cfg.validate()?;
    if !policy.is_deterministic() {
        return Err(Error::Unsupported(format!(
            "exact evaluation needs a deterministic policy, {} is randomized",
            policy.name()
        )));
    }
    let mut junctions = Vec::with_capacity(cfg.num_junctions as usize);
    for j in 1..=cfg.num_junctions {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        policy.start_junction(j, &mut rng);
        let mut ex = Explorer {
            policy: &mut *policy,
            cfg,
            rng,
            junction: j,
            increases: Vec::new(),
            acc: JunctionAcc::default(),
        };
        ex.visit(0, 0, 1.0)?;
        let acc = ex.acc;
        junctions.push(JunctionDistribution {
            survive_prob: acc.survive,
            expected_info: acc.info,
            expected_info_sq: acc.info_sq,
            expected_info_survived: acc.info_survived,
            expected_flights: acc.flights,
            info_probs: acc.probs,
        });
    }

    let mut reach_probs = Vec::with_capacity(junctions.len());
    let mut reach = 1.0;
    for jd in &junctions {
        reach_probs.push(reach);
        reach *= jd.survive_prob;
    }
    // Remaining value T_j = I_j + 1{intact} T_{j+1}, T_{J+1} = D.
    let d = f64::from(cfg.drone_value);
    let (mut m1, mut m2) = (d, d * d);
    for jd in junctions.iter().rev() {
        let new_m1 = jd.expected_info + jd.survive_prob * m1;
        let new_m2 = jd.expected_info_sq + 2.0 * jd.expected_info_survived * m1 + jd.survive_prob * m2;
        m1 = new_m1;
        m2 = new_m2;
    }
    Ok(ExactEvaluation {
        policy: policy.name(),
        expected_value: m1,
        std_value: (m2 - m1 * m1).max(0.0).sqrt(),
        survival_prob: reach,
        reach_probs,
        junctions,
    })
}

/// Summary of simulated missions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub policy: String,
    pub n_missions: u64,
    pub mean_value: f64,
    pub std_value: f64,
    pub mean_rounds_per_junction: f64,
    pub mean_junctions_played: f64,
    pub crash_rate: f64,
    /// Count of each per-junction information value over all played junctions.
    pub info_distribution: BTreeMap<Taler, u64>,
}

impl PolicyStats {
    pub fn std_error(&self) -> f64 {
        self.std_value / (self.n_missions as f64).sqrt()
    }
}

#[derive(Default)]
struct SimAcc {
    n: u64,
    sum_v: u64,
    sum_v2: u128,
    flights: u64,
    junctions: u64,
    crashes: u64,
    dist: BTreeMap<Taler, u64>,
}

impl SimAcc {
    fn add(mut self, log: &MissionLog) -> Self {
        let v = u64::from(log.total_value);
        self.n += 1;
        self.sum_v += v;
        self.sum_v2 += u128::from(v) * u128::from(v);
        self.flights += log.total_flights() as u64;
        self.junctions += log.junctions.len() as u64;
        self.crashes += u64::from(log.crashed());
        for info in log.junction_infos() {
            *self.dist.entry(info).or_insert(0) += 1;
        }
        self
    }

    fn merge(mut self, other: Self) -> Self {
        self.n += other.n;
        self.sum_v += other.sum_v;
        self.sum_v2 += other.sum_v2;
        self.flights += other.flights;
        self.junctions += other.junctions;
        self.crashes += other.crashes;
        for (k, v) in other.dist {
            *self.dist.entry(k).or_insert(0) += v;
        }
        self
    }
}

/// RNG for mission `index` under a master seed: one ChaCha stream per mission.
pub fn mission_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Simulates `n_missions` independent missions in parallel.
///
/// Mission `i` uses stream `i` of the seeded generator and a fresh clone of
/// the policy; all aggregation is in integers, so the result does not depend
/// on how work is split across threads.
pub fn simulate_missions<P: Policy + Clone + Sync>(
    policy: &P,
    cfg: &MissionConfig,
    seed: u64,
    n_missions: u64,
) -> Result<PolicyStats> {
    cfg.validate()?;
    if n_missions == 0 {
        return Err(Error::Domain("n_missions must be at least 1".into()));
    }
    let acc = (0..n_missions)
        .into_par_iter()
        .try_fold(SimAcc::default, |acc, i| {
            let mut rng = mission_rng(seed, i);
            let mut p = policy.clone();
            let (log, _) = run_mission(&mut p, cfg, &mut rng)?;
            Ok::<_, Error>(acc.add(&log))
        })
        .try_reduce(SimAcc::default, |a, b| Ok(a.merge(b)))?;

    let n = acc.n as f64;
    let mean = acc.sum_v as f64 / n;
    let var = if acc.n > 1 {
        let sum = acc.sum_v as f64;
        ((acc.sum_v2 as f64) - sum * sum / n) / (n - 1.0)
    } else {
        0.0
    };
    Ok(PolicyStats {
        policy: policy.name(),
        n_missions: acc.n,
        mean_value: mean,
        std_value: var.max(0.0).sqrt(),
        mean_rounds_per_junction: acc.flights as f64 / acc.junctions as f64,
        mean_junctions_played: acc.junctions as f64 / n,
        crash_rate: acc.crashes as f64 / n,
        info_distribution: acc.dist,
    })
}
