use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::hub::{Episode, TimestepRecord};
use crate::mpc::DEFAULT_SETPOINT_MAX_C;

pub const DEFAULT_THRESHOLD_W: f64 = 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Event in the hour after next, building pre-cooled.
    Precool,
    /// No event in the hour after next.
    Normal,
    /// Event in the hour after next, building not pre-cooled.
    EventNoPrecool,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Precool, Scenario::Normal, Scenario::EventNoPrecool];

    pub fn code(self) -> u8 {
        match self {
            Scenario::Precool => 1,
            Scenario::Normal => 2,
            Scenario::EventNoPrecool => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == code)
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::Precool => "predicted demand response event and pre-cool the building",
            Scenario::Normal => "no demand response event and keep the building operating normally",
            Scenario::EventNoPrecool => "predicted demand response event, but the building is not pre-cooled",
        }
    }
}

/// A rubric outcome with the values it compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLabel {
    pub scenario: Scenario,
    pub code: u8,
    pub p_limit_t2_w: f64,
    pub threshold_w: f64,
    pub u1_c: f64,
    pub no_precool_setpoint_c: f64,
}

/// Applies the rubric to the raw comparison values.
pub fn classify_values(p_limit_t2: f64, u1: f64, threshold: f64) -> ScenarioLabel {
    let event = p_limit_t2 < threshold;
    let scenario = match (event, u1 < DEFAULT_SETPOINT_MAX_C) {
        (true, true) => Scenario::Precool,
        (true, false) => Scenario::EventNoPrecool,
        (false, _) => Scenario::Normal,
    };
    ScenarioLabel {
        scenario,
        code: scenario.code(),
        p_limit_t2_w: p_limit_t2,
        threshold_w: threshold,
        u1_c: u1,
        no_precool_setpoint_c: DEFAULT_SETPOINT_MAX_C,
    }
}

pub fn classify(record: &TimestepRecord, threshold: f64) -> ScenarioLabel {
    classify_values(record.power_limit_t2_w, record.decision.u1_c, threshold)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioCensus {
    pub precool: usize,
    pub normal: usize,
    pub event_no_precool: usize,
}

impl ScenarioCensus {
    pub fn total(&self) -> usize {
        self.precool + self.normal + self.event_no_precool
    }

    pub fn count(&self, scenario: Scenario) -> usize {
        match scenario {
            Scenario::Precool => self.precool,
            Scenario::Normal => self.normal,
            Scenario::EventNoPrecool => self.event_no_precool,
        }
    }

    pub fn record(&mut self, scenario: Scenario) {
        match scenario {
            Scenario::Precool => self.precool += 1,
            Scenario::Normal => self.normal += 1,
            Scenario::EventNoPrecool => self.event_no_precool += 1,
        }
    }
}

impl Add for ScenarioCensus {
    type Output = ScenarioCensus;

    fn add(self, rhs: Self) -> Self {
        ScenarioCensus {
            precool: self.precool + rhs.precool,
            normal: self.normal + rhs.normal,
            event_no_precool: self.event_no_precool + rhs.event_no_precool,
        }
    }
}

impl AddAssign for ScenarioCensus {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// Counts rubric labels over the episode, classifying unlabeled records
/// with the episode's threshold.
pub fn scenario_census(episode: &Episode) -> ScenarioCensus {
    census_of(&episode.records, episode.header.config.episode.threshold_w)
}

pub fn census_of(records: &[TimestepRecord], threshold: f64) -> ScenarioCensus {
    let mut census = ScenarioCensus::default();
    for r in records {
        let label = r.scenario.unwrap_or_else(|| classify(r, threshold));
        census.record(label.scenario);
    }
    census
}
