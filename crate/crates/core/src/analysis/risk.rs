//! Risk attitude from a multiple price list sheet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{MplChoice, MPL_ROWS};

/// First row of the terminal A-run for a risk-neutral subject: B is chosen
/// while the safe amount is below the lottery's €15 expectation.
pub const NEUTRAL_SWITCH_ROW: u32 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attitude {
    RiskAverse,
    RiskNeutral,
    RiskSeeking,
    NotIdentifiable,
}

impl Attitude {
    pub const ALL: [Attitude; 4] =
        [Attitude::RiskAverse, Attitude::RiskNeutral, Attitude::RiskSeeking, Attitude::NotIdentifiable];

    pub fn as_str(self) -> &'static str {
        match self {
            Attitude::RiskAverse => "risk_averse",
            Attitude::RiskNeutral => "risk_neutral",
            Attitude::RiskSeeking => "risk_seeking",
            Attitude::NotIdentifiable => "not_identifiable",
        }
    }

    /// Ordinal code used by distribution tests; not identifiable has none.
    pub fn code(self) -> Option<u32> {
        match self {
            Attitude::RiskAverse => Some(0),
            Attitude::RiskNeutral => Some(1),
            Attitude::RiskSeeking => Some(2),
            Attitude::NotIdentifiable => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskAttitude {
    pub attitude: Attitude,
    /// First row of the terminal run of A choices, if the sheet ends in A.
    pub switch_row: Option<u32>,
    pub switches: u32,
    /// Exactly two switches: classified by the last one, but less reliable.
    pub weakly_identified: bool,
}

pub fn classify_risk(choices: &[MplChoice]) -> Result<RiskAttitude> {
    if choices.len() != MPL_ROWS {
        return Err(Error::Domain(format!(
            "price list needs {MPL_ROWS} choices, got {}",
            choices.len()
        )));
    }
    let switches = choices.windows(2).filter(|w| w[0] != w[1]).count() as u32;
    let tail_a = choices.iter().rev().take_while(|&&c| c == MplChoice::A).count();
    let switch_row = (tail_a > 0).then(|| (MPL_ROWS - tail_a + 1) as u32);
    let attitude = if switches >= 3 {
        Attitude::NotIdentifiable
    } else {
        match switch_row {
            None => Attitude::RiskSeeking,
            Some(r) if r < NEUTRAL_SWITCH_ROW => Attitude::RiskAverse,
            Some(NEUTRAL_SWITCH_ROW) => Attitude::RiskNeutral,
            Some(_) => Attitude::RiskSeeking,
        }
    };
    Ok(RiskAttitude { attitude, switch_row, switches, weakly_identified: switches == 2 })
}

/// Sheet choosing B before `row` and A from `row` on; `row` past the last
/// row gives an all-B sheet.
pub fn switching_sheet(row: u32) -> Vec<MplChoice> {
    (1..=MPL_ROWS as u32)
        .map(|k| if k < row { MplChoice::B } else { MplChoice::A })
        .collect()
}
