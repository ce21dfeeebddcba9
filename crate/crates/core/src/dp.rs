//! Exact optimal stopping policy by backward induction.
//!
//! `W(j, i, sigma)` is the expected value of everything still to be paid out
//! (the current junction's information, all later junctions and the drone
//! sale) for an intact drone at junction `j` after `i` rounds with value
//! `sigma`:
//!
//! ```text
//! stop(j, sigma)   = sigma + W(j + 1, 0, 0),   W(J + 1, ., .) = D
//! fly(j, i, sigma) = sum over increase branches b of P(b) *
//!                    [(1 - r) W(j, i + 1, sigma_b) + r sigma_b]
//! W(j, i, sigma)   = max(stop, fly), only stop at i = N
//! ```
//!
//! A crash keeps the information gathered so far and forfeits the rest.

use std::fmt::Write as _;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mission::{MissionConfig, Taler};
use crate::policy::{closed_loop_decide, DecisionContext, Policy};

/// Relative margin by which flying must beat stopping; ties go to stop.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DpTable {
    cfg: MissionConfig,
    /// Indexed by `[j - 1][i][ladder index]`.
    values: Vec<f64>,
    fly: Vec<bool>,
}

/// One row of the exported table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpEntry {
    pub junction: u32,
    pub round: u32,
    pub sigma: Taler,
    pub value: f64,
    pub stop_value: f64,
    pub fly_value: Option<f64>,
    pub fly: bool,
}

/// A reachable state where the DP and the myopic heuristic disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disagreement {
    pub junction: u32,
    pub round: u32,
    pub sigma: Taler,
    pub dp_fly: bool,
    pub heuristic_fly: bool,
}

impl DpTable {
    fn idx(&self, j: u32, i: u32, s: usize) -> usize {
        let rounds = self.cfg.max_rounds as usize + 1;
        let levels = self.cfg.rho.ladder().len();
        ((j as usize - 1) * rounds + i as usize) * levels + s
    }

    pub fn config(&self) -> &MissionConfig {
        &self.cfg
    }

    fn locate(&self, j: u32, i: u32, sigma: Taler) -> Result<usize> {
        if j == 0 || j > self.cfg.num_junctions {
            return Err(Error::Domain(format!("junction {j} outside 1..={}", self.cfg.num_junctions)));
        }
        if i > self.cfg.max_rounds {
            return Err(Error::Domain(format!("round {i} outside 0..={}", self.cfg.max_rounds)));
        }
        let s = self.cfg.rho.index_of(sigma).ok_or(Error::OffLadder(sigma))?;
        Ok(self.idx(j, i, s))
    }

    /// Expected remaining payout for an intact drone.
    pub fn value(&self, j: u32, i: u32, sigma: Taler) -> Result<f64> {
        Ok(self.values[self.locate(j, i, sigma)?])
    }

    /// Expected gain over the current running value; zero once crashed.
    pub fn remaining_gain(&self, j: u32, i: u32, sigma: Taler, intact: bool) -> Result<f64> {
        let w = self.value(j, i, sigma)?;
        if !intact {
            return Ok(0.0);
        }
        Ok(w - f64::from(sigma) - f64::from(self.cfg.drone_value))
    }

    pub fn action(&self, j: u32, i: u32, sigma: Taler) -> Result<bool> {
        Ok(self.fly[self.locate(j, i, sigma)?])
    }

    /// Expected mission value under the optimal policy.
    pub fn expected_value(&self) -> f64 {
        self.values[self.idx(1, 0, 0)]
    }

    fn continuation(&self, j: u32) -> f64 {
        if j >= self.cfg.num_junctions {
            f64::from(self.cfg.drone_value)
        } else {
            self.values[self.idx(j + 1, 0, 0)]
        }
    }

    fn stop_value(&self, j: u32, s: usize) -> f64 {
        f64::from(self.cfg.rho.ladder()[s]) + self.continuation(j)
    }

    fn fly_value(&self, j: u32, i: u32, s: usize) -> Option<f64> {
        let cfg = &self.cfg;
        if i >= cfg.max_rounds {
            return None;
        }
        let ladder = cfg.rho.ladder();
        let r = cfg.crash_prob;
        let top = s + 1 == ladder.len();
        let q = if top { 0.0 } else { cfg.increase_prob_at(i) };
        let mut total = 0.0;
        for (next, p) in [(s + 1, q), (s, 1.0 - q)] {
            if p == 0.0 {
                continue;
            }
            let w = self.values[self.idx(j, i + 1, next)];
            total += p * ((1.0 - r) * w + r * f64::from(ladder[next]));
        }
        Some(total)
    }

    /// Largest absolute Bellman residual over all states.
    pub fn bellman_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for e in self.entries() {
            let s = self.cfg.rho.index_of(e.sigma).expect("on ladder");
            let stop = self.stop_value(e.junction, s);
            let best = match self.fly_value(e.junction, e.round, s) {
                Some(f) => stop.max(f),
                None => stop,
            };
            worst = worst.max((best - e.value).abs());
        }
        worst
    }

    /// Every state, ordered by junction, round and value.
    pub fn entries(&self) -> Vec<DpEntry> {
        let cfg = &self.cfg;
        let mut out = Vec::with_capacity(self.values.len());
        for j in 1..=cfg.num_junctions {
            for i in 0..=cfg.max_rounds {
                for (s, &sigma) in cfg.rho.ladder().iter().enumerate() {
                    let k = self.idx(j, i, s);
                    out.push(DpEntry {
                        junction: j,
                        round: i,
                        sigma,
                        value: self.values[k],
                        stop_value: self.stop_value(j, s),
                        fly_value: self.fly_value(j, i, s),
                        fly: self.fly[k],
                    });
                }
            }
        }
        out
    }

    /// Whether `(i, sigma)` can occur at a junction: the value needs at least
    /// as many rounds as ladder steps, and any flight leaves the first step.
    pub fn reachable(&self, i: u32, sigma: Taler) -> bool {
        match self.cfg.rho.index_of(sigma) {
            Some(0) => i == 0,
            Some(s) => i >= 1 && s as u32 <= i,
            None => false,
        }
    }

    /// Reachable states where the optimal action differs from the myopic
    /// closed-loop heuristic.
    pub fn disagreements(&self) -> Vec<Disagreement> {
        self.entries()
            .into_iter()
            .filter(|e| self.reachable(e.round, e.sigma))
            .filter_map(|e| {
                let ctx = DecisionContext::closed(e.junction, e.round, e.sigma, true, &[]);
                let heuristic = closed_loop_decide(&ctx, &self.cfg).ok()?;
                (heuristic != e.fly).then_some(Disagreement {
                    junction: e.junction,
                    round: e.round,
                    sigma: e.sigma,
                    dp_fly: e.fly,
                    heuristic_fly: heuristic,
                })
            })
            .collect()
    }

    /// Whitespace-aligned table, one state per line.
    pub fn export_text(&self) -> String {
        entries_text(&self.entries())
    }

    /// Tab-separated table with a header row.
    pub fn export_tsv(&self) -> String {
        entries_tsv(&self.entries())
    }
}

/// Renders table rows as a whitespace-aligned table.
pub fn entries_text(entries: &[DpEntry]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>8} {:>5} {:>5} {:>12} {:>12} {:>12} {:>6}",
        "junction", "round", "sigma", "value", "stop", "fly", "action"
    );
    for e in entries {
        let fly = e.fly_value.map_or_else(|| "-".to_string(), |f| format!("{f:.6}"));
        let _ = writeln!(
            out,
            "{:>8} {:>5} {:>5} {:>12.6} {:>12.6} {:>12} {:>6}",
            e.junction,
            e.round,
            e.sigma,
            e.value,
            e.stop_value,
            fly,
            if e.fly { "fly" } else { "stop" }
        );
    }
    out
}

/// Renders table rows as tab-separated values with a header row.
pub fn entries_tsv(entries: &[DpEntry]) -> String {
    let mut out = String::from("junction\tround\tsigma\tvalue\tstop_value\tfly_value\taction\n");
    for e in entries {
        let fly = e.fly_value.map_or_else(String::new, |f| format!("{f:.12}"));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.12}\t{:.12}\t{}\t{}",
            e.junction,
            e.round,
            e.sigma,
            e.value,
            e.stop_value,
            fly,
            if e.fly { "fly" } else { "stop" }
        );
    }
    out
}

/// Solves the stopping problem for `cfg` by backward induction.
pub fn solve_dp(cfg: &MissionConfig) -> Result<DpTable> {
    cfg.validate()?;
    let levels = cfg.rho.ladder().len();
    let size = cfg.num_junctions as usize * (cfg.max_rounds as usize + 1) * levels;
    let mut table = DpTable { cfg: cfg.clone(), values: vec![0.0; size], fly: vec![false; size] };
    for j in (1..=cfg.num_junctions).rev() {
        for i in (0..=cfg.max_rounds).rev() {
            for s in 0..levels {
                let stop = table.stop_value(j, s);
                let (value, fly) = match table.fly_value(j, i, s) {
                    Some(f) if f > stop + TIE_TOLERANCE * stop.abs().max(1.0) => (f, true),
                    _ => (stop, false),
                };
                let k = table.idx(j, i, s);
                table.values[k] = value;
                table.fly[k] = fly;
            }
        }
    }
    Ok(table)
}

/// Looks up the optimal action; a crashed drone never flies.
pub fn dp_decide(table: &DpTable, ctx: &DecisionContext<'_>) -> Result<bool> {
    let sigma = ctx.sigma().ok_or(Error::NoFeedback)?;
    let action = table.action(ctx.junction, ctx.rounds_here, sigma)?;
    Ok(ctx.intact && action)
}

/// The optimal policy as a [`Policy`].
#[derive(Debug, Clone)]
pub struct DpPolicy {
    table: std::sync::Arc<DpTable>,
}

impl DpPolicy {
    pub fn new(table: DpTable) -> Self {
        Self { table: std::sync::Arc::new(table) }
    }

    pub fn table(&self) -> &DpTable {
        &self.table
    }
}

impl Policy for DpPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, _rng: &mut dyn RngCore) -> Result<bool> {
        dp_decide(&self.table, ctx)
    }

    fn needs_feedback(&self) -> bool {
        true
    }

    fn name(&self) -> String {
        "dp".into()
    }
}
