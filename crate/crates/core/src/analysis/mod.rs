//! Behavioral analysis of session logs: junction labels, confidence degrees
//! and categories, hot-hand detection, risk attitudes, tests and the summary
//! report.

mod labels;
mod report;
mod risk;
mod stats;

use serde::{Deserialize, Serialize};

pub use labels::{
    categorize, confidence_degrees, hot_hand_scan, label_junction, session_category,
    session_labels, BehaviorCategory, ConfidenceDegrees, HotHandRecord, HotHandTable,
    JunctionLabel, Label,
};
pub use report::{summarize, MeanSd, SummaryReport, TreatmentSummary};
pub use risk::{classify_risk, switching_sheet, Attitude, RiskAttitude, NEUTRAL_SWITCH_ROW};
pub use stats::{
    binom_test_geq, chi2_2x2, kruskal_wallis, ks_two_sample, mann_whitney, mann_whitney_exact,
    mann_whitney_normal, midranks, Alternative, TestMethod, TestResult, MW_EXACT_MAX,
};

/// How over-flight samples are pooled for the between-treatment comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwPooling {
    /// One observation per overconfident junction.
    #[default]
    Junction,
    /// One observation per subject: the mean over their overconfident
    /// junctions.
    SubjectMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Count every entry of an open-loop plan, including junctions never
    /// reached because of a crash.
    pub count_all_open_plans: bool,
    pub streak_len: u32,
    /// Null proportion for the binomial tests.
    pub binomial_null: f64,
    pub mw_pooling: MwPooling,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            count_all_open_plans: false,
            streak_len: 3,
            binomial_null: 0.05,
            mw_pooling: MwPooling::Junction,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> crate::Result<()> {
        if self.streak_len == 0 {
            return Err(crate::Error::InvalidConfig("streak_len must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.binomial_null) {
            return Err(crate::Error::InvalidConfig(format!(
                "binomial_null {} outside [0, 1]",
                self.binomial_null
            )));
        }
        Ok(())
    }
}
