//! Policies addressable by name from the command line and the service.
//!
//! | name                 | policy                                          |
//! |----------------------|-------------------------------------------------|
//! | `closed-heuristic`   | stop once the marginal gain turns negative      |
//! | `open-heuristic`     | five rounds at every junction, no feedback      |
//! | `dp`                 | exact optimum by backward induction             |
//! | `fixed:<n>`          | `n` rounds at every junction, no feedback       |
//! | `plan:<n1>,<n2>,...` | one entry per junction, no feedback             |
//! | `agent:<profile>`    | synthetic agent, e.g. `agent:overconfident:extra_rounds=2` |

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::agents::{make_policy, AgentPolicy, BiasProfile};
use crate::dp::{solve_dp, DpPolicy};
use crate::error::{Error, Result};
use crate::mission::MissionConfig;
use crate::policy::{
    open_loop_heuristic_plan, ClosedLoopHeuristic, DecisionContext, OpenLoopPlan, Policy,
    PlannedPolicy,
};
use crate::session::Treatment;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    ClosedHeuristic,
    OpenHeuristic,
    Dp,
    Fixed(u32),
    Plan(Vec<u32>),
    Agent(BiasProfile),
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown policy {s:?}"));
        Ok(match s {
            "closed-heuristic" => PolicySpec::ClosedHeuristic,
            "open-heuristic" => PolicySpec::OpenHeuristic,
            "dp" => PolicySpec::Dp,
            _ => {
                let (head, rest) = s.split_once(':').ok_or_else(bad)?;
                match head {
                    "fixed" => PolicySpec::Fixed(rest.trim().parse().map_err(|_| bad())?),
                    "plan" => PolicySpec::Plan(
                        rest.split(',')
                            .map(|x| x.trim().parse())
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| bad())?,
                    ),
                    "agent" => PolicySpec::Agent(rest.parse()?),
                    _ => return Err(bad()),
                }
            }
        })
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::ClosedHeuristic => f.write_str("closed-heuristic"),
            PolicySpec::OpenHeuristic => f.write_str("open-heuristic"),
            PolicySpec::Dp => f.write_str("dp"),
            PolicySpec::Fixed(n) => write!(f, "fixed:{n}"),
            PolicySpec::Plan(p) => {
                let parts: Vec<String> = p.iter().map(u32::to_string).collect();
                write!(f, "plan:{}", parts.join(","))
            }
            PolicySpec::Agent(profile) => write!(f, "agent:{profile}"),
        }
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl PolicySpec {
    /// Builds the policy. `treatment` only matters for agents, which play
    /// closed loop unless told otherwise.
    pub fn build(&self, cfg: &MissionConfig, treatment: Option<Treatment>) -> Result<NamedPolicy> {
        cfg.validate()?;
        Ok(match self {
            PolicySpec::ClosedHeuristic => NamedPolicy::Closed(ClosedLoopHeuristic::new(cfg)),
            PolicySpec::OpenHeuristic => NamedPolicy::Planned(PlannedPolicy::new(open_loop_heuristic_plan(cfg))),
            PolicySpec::Dp => NamedPolicy::Dp(DpPolicy::new(solve_dp(cfg)?)),
            PolicySpec::Fixed(n) => {
                let plan = OpenLoopPlan { planned_rounds: vec![*n; cfg.num_junctions as usize] };
                plan.validate(cfg)?;
                NamedPolicy::Planned(PlannedPolicy::new(plan))
            }
            PolicySpec::Plan(p) => {
                let plan = OpenLoopPlan { planned_rounds: p.clone() };
                plan.validate(cfg)?;
                NamedPolicy::Planned(PlannedPolicy::new(plan))
            }
            PolicySpec::Agent(profile) => NamedPolicy::Agent(make_policy(
                profile,
                treatment.unwrap_or(Treatment::Closed),
                cfg,
            )?),
        })
    }
}

/// Any catalog policy behind one concrete type, so it can be cloned into
/// parallel simulations.
#[derive(Debug, Clone)]
pub enum NamedPolicy {
    Closed(ClosedLoopHeuristic),
    Planned(PlannedPolicy),
    Dp(DpPolicy),
    Agent(AgentPolicy),
}

impl NamedPolicy {
    fn inner(&self) -> &dyn Policy {
        match self {
            NamedPolicy::Closed(p) => p,
            NamedPolicy::Planned(p) => p,
            NamedPolicy::Dp(p) => p,
            NamedPolicy::Agent(p) => p,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Policy {
        match self {
            NamedPolicy::Closed(p) => p,
            NamedPolicy::Planned(p) => p,
            NamedPolicy::Dp(p) => p,
            NamedPolicy::Agent(p) => p,
        }
    }
}

impl Policy for NamedPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>, rng: &mut dyn RngCore) -> Result<bool> {
        self.inner_mut().decide(ctx, rng)
    }

    fn start_junction(&mut self, junction: u32, rng: &mut dyn RngCore) {
        self.inner_mut().start_junction(junction, rng)
    }

    fn is_deterministic(&self) -> bool {
        self.inner().is_deterministic()
    }

    fn needs_feedback(&self) -> bool {
        self.inner().needs_feedback()
    }

    fn name(&self) -> String {
        self.inner().name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::evaluate_policy_exact;

    #[test]
    fn names_round_trip() {
        for s in [
            "closed-heuristic",
            "open-heuristic",
            "dp",
            "fixed:8",
            "plan:1,2,3",
            "agent:overconfident:extra_rounds=2",
            "agent:optimizer",
        ] {
            let spec: PolicySpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        for s in ["", "heuristic", "fixed:x", "agent:nobody", "plan:"] {
            assert!(s.parse::<PolicySpec>().is_err(), "{s}");
        }
    }

    #[test]
    fn fixed_eight_survival() {
        let cfg = MissionConfig::default();
        let mut p = PolicySpec::Fixed(8).build(&cfg, None).unwrap();
        let ev = evaluate_policy_exact(&mut p, &cfg).unwrap();
        assert!((ev.survival_prob - 0.98f64.powi(80)).abs() < 1e-12);
        assert!(PolicySpec::Fixed(9).build(&cfg, None).is_err());
    }

    #[test]
    fn agents_take_treatment() {
        let cfg = MissionConfig::default();
        let spec: PolicySpec = "agent:optimizer".parse().unwrap();
        assert!(spec.build(&cfg, None).unwrap().needs_feedback());
        assert!(!spec.build(&cfg, Some(Treatment::Open)).unwrap().needs_feedback());
    }
}
