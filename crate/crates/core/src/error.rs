use thiserror::Error;

use crate::mission::Taler;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("information value {0} is not on the ladder")]
    OffLadder(Taler),
    #[error("information value {0} is the ladder maximum; no further increment is defined")]
    LadderTop(Taler),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("the drone has crashed")]
    Crashed,
    #[error("round cap of {0} reached at this junction")]
    RoundCap(u32),
    #[error("the mission is already finished")]
    MissionFinished,
    #[error("the mission is not finished")]
    MissionUnfinished,
    #[error("decision requires feedback that is not available in this context")]
    NoFeedback,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("degenerate contingency table: {0}")]
    DegenerateTable(String),
    #[error("no observable junction in session")]
    NoObservableJunctions,
    #[error("replay mismatch: {0}")]
    Replay(String),
}
