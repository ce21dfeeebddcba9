//! Core model of the drone surveillance stopping task.
//!
//! A drone visits a fixed sequence of traffic junctions. At each junction the
//! operator decides round by round whether to fly again (taking another
//! picture, risking a crash) or move on. This crate holds the mission
//! dynamics, the heuristic and dynamic-programming policies, synthetic bias
//! agents, the session log schema shared with the experiment service, and the
//! behavioral analysis pipeline.

pub mod agents;
pub mod analysis;
pub mod api;
pub mod catalog;
pub mod config;
pub mod dp;
mod error;
pub mod mission;
pub mod policy;
pub mod session;

pub use error::{Error, Result};
pub use mission::{
    mission_value, next_value, payoff_euro, Euros, FlightOutcome, Mission, MissionConfig,
    MissionLog, MissionState, RhoLadder, Taler,
};
pub use session::Treatment;
