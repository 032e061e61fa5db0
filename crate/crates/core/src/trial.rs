use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::space::Configuration;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    /// Training produced a non-finite loss or error.
    Diverged,
    /// The objective itself raised or panicked.
    Failed,
}

/// One evaluated configuration. `score` is the error (lower is better) and is
/// present exactly when the status is `Ok`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trial {
    #[serde(rename = "i")]
    pub index: u64,
    pub config: Configuration,
    pub score: Option<f64>,
    pub status: TrialStatus,
    pub seed: u64,
    pub wall_time_s: f64,
    #[serde(default)]
    pub tags: BTreeMap<String, serde_json::Value>,
}

impl Trial {
    pub fn ok(index: u64, config: Configuration, score: f64, seed: u64) -> Self {
        let mut t = Trial {
            index,
            config,
            score: Some(score),
            status: TrialStatus::Ok,
            seed,
            wall_time_s: 0.0,
            tags: BTreeMap::new(),
        };
        t.normalize_status();
        t
    }

    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }

    /// A non-finite score on an `Ok` trial is a divergence; a score on a
    /// non-ok trial is dropped.
    pub fn normalize_status(&mut self) {
        match (self.status, self.score) {
            (TrialStatus::Ok, Some(s)) if s.is_finite() => {}
            (TrialStatus::Ok, _) => {
                self.status = TrialStatus::Diverged;
                self.score = None;
            }
            _ => self.score = None,
        }
    }
}
