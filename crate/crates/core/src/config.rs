//! TOML configuration shared by the command line and the experiment service.
//!
//! ```toml
//! [mission]
//! drone_value = 400
//! crash_prob = 0.02
//!
//! [analysis]
//! count_all_open_plans = false
//!
//! [service]
//! bind = "127.0.0.1:8080"
//! data_dir = "data"
//!
//! [[service.quiz]]
//! prompt = "How many rounds can you fly at most over one junction?"
//! answer = 8
//! ```
//!
//! Every section is optional and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisOptions;
use crate::error::{Error, Result};
use crate::mission::MissionConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub mission: MissionConfig,
    pub analysis: AnalysisOptions,
    pub service: ServiceSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub bind: String,
    /// Directory for the event log and session snapshots; sessions live
    /// only in memory when unset.
    pub data_dir: Option<PathBuf>,
    /// Master seed for treatment assignment and mission streams; drawn from
    /// the OS when unset.
    pub seed: Option<u64>,
    /// Accept externally supplied flight outcomes (test harnesses only).
    pub allow_scripted_outcomes: bool,
    /// Control questions; derived from the mission parameters when unset.
    pub quiz: Option<Vec<QuizQuestion>>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: None,
            seed: None,
            allow_scripted_outcomes: false,
            quiz: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuizQuestion {
    pub prompt: String,
    pub answer: f64,
}

impl QuizQuestion {
    pub fn accepts(&self, given: f64) -> bool {
        (given - self.answer).abs() <= 1e-9 * self.answer.abs().max(1.0)
    }
}

/// The four control questions: crash risk in percent, drone value, round
/// cap and exchange rate.
pub fn default_quiz(cfg: &MissionConfig) -> Vec<QuizQuestion> {
    vec![
        QuizQuestion {
            prompt: "What is the probability (in percent) that the drone crashes after a picture?".into(),
            answer: cfg.crash_prob * 100.0,
        },
        QuizQuestion {
            prompt: "How many Taler is the drone worth if it is still intact at the end?".into(),
            answer: f64::from(cfg.drone_value),
        },
        QuizQuestion {
            prompt: "How many rounds can you fly at most over one junction?".into(),
            answer: f64::from(cfg.max_rounds),
        },
        QuizQuestion {
            prompt: "How many Taler are worth one Euro?".into(),
            answer: f64::from(cfg.taler_per_euro),
        },
    ]
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.mission.validate()?;
        self.analysis.validate()?;
        if let Some(q) = &self.service.quiz {
            if q.is_empty() {
                return Err(Error::InvalidConfig("quiz must have at least one question".into()));
            }
        }
        Ok(())
    }

    pub fn quiz(&self) -> Vec<QuizQuestion> {
        self.service.quiz.clone().unwrap_or_else(|| default_quiz(&self.mission))
    }
}
