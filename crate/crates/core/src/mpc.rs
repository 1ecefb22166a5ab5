//! Two-hour receding-horizon controller searching a discrete setpoint grid.
//!
//! Each candidate pair (u1, u2) is rolled out through the surrogates:
//! x_k = f_x(u_k, x_{k-1}, d_k), y_k = f_y(u_k, x_k, d_k), and scored by
//! sum_k (y_k + V_k) with the quadratic demand-response penalty V_k.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{fx_features, fy_features, Regressor};
use crate::testbed::Disturbance;

pub const HORIZON: usize = 2;
pub const DEFAULT_SETPOINT_MIN_C: f64 = 22.0;
pub const DEFAULT_SETPOINT_MAX_C: f64 = 26.0;
pub const DEFAULT_GRID_STEP_K: f64 = 1.0;

/// Quadratic penalty for exceeding the power limit, zero at or under it.
pub fn penalty(power: f64, limit: f64) -> f64 {
    if power > limit {
        (power - limit).powi(2)
    } else {
        0.0
    }
}

pub struct MpcProblem<'a> {
    /// Zone temperature at the decision instant.
    pub zone_temp: f64,
    /// Disturbances of the two horizon hours.
    pub forecast: [Disturbance; HORIZON],
    /// P_limit(t+1), P_limit(t+2).
    pub power_limits: [f64; HORIZON],
    pub setpoint_min: f64,
    pub setpoint_max: f64,
    pub grid_step: f64,
    pub fx: &'a dyn Regressor,
    pub fy: &'a dyn Regressor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub x1: f64,
    pub y1: f64,
    pub v1: f64,
    pub x2: f64,
    pub y2: f64,
    pub v2: f64,
    pub cost: f64,
}

/// Surrogate inputs along one rolled-out pair, in horizon order.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonInputs {
    pub fx_t1: Vec<f64>,
    pub fy_t1: Vec<f64>,
    pub fx_t2: Vec<f64>,
    pub fy_t2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub u1: f64,
    pub u2: f64,
    /// Absent when the rollout produced a non-finite value.
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcDecision {
    pub u1_c: f64,
    pub u2_c: f64,
    pub x1_c: f64,
    pub x2_c: f64,
    pub y1_w: f64,
    pub y2_w: f64,
    pub v1: f64,
    pub v2: f64,
    pub cost: f64,
    pub candidates: Vec<Candidate>,
}

impl MpcDecision {
    pub fn candidate(&self, u1: f64, u2: f64) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.u1 == u1 && c.u2 == u2)
    }
}

impl<'a> MpcProblem<'a> {
    /// A problem over the default [22, 26] °C grid with 1 K steps.
    pub fn new(
        zone_temp: f64,
        forecast: [Disturbance; HORIZON],
        power_limits: [f64; HORIZON],
        fx: &'a dyn Regressor,
        fy: &'a dyn Regressor,
    ) -> Self {
        Self {
            zone_temp,
            forecast,
            power_limits,
            setpoint_min: DEFAULT_SETPOINT_MIN_C,
            setpoint_max: DEFAULT_SETPOINT_MAX_C,
            grid_step: DEFAULT_GRID_STEP_K,
            fx,
            fy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.zone_temp.is_finite() {
            return Err(Error::InvalidInput("zone temperature is not finite".into()));
        }
        for d in &self.forecast {
            d.validate()?;
        }
        if !(self.setpoint_min.is_finite() && self.setpoint_max.is_finite())
            || self.setpoint_min > self.setpoint_max
        {
            return Err(Error::InvalidInput(format!(
                "setpoint bounds [{}, {}] are not ordered",
                self.setpoint_min, self.setpoint_max
            )));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::InvalidInput("grid step must be > 0".into()));
        }
        if self.power_limits.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidInput("power limits must be > 0".into()));
        }
        Ok(())
    }

    /// Setpoint grid from the lower bound in `grid_step` increments.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.setpoint_max - self.setpoint_min) / self.grid_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| self.setpoint_min + k as f64 * self.grid_step)
            .collect()
    }

    pub fn inputs(&self, u1: f64, u2: f64, x1: f64, x2: f64) -> HorizonInputs {
        let [d1, d2] = &self.forecast;
        HorizonInputs {
            fx_t1: fx_features(u1, self.zone_temp, d1),
            fy_t1: fy_features(u1, x1, d1),
            fx_t2: fx_features(u2, x1, d2),
            fy_t2: fy_features(u2, x2, d2),
        }
    }

    pub fn rollout(&self, u1: f64, u2: f64) -> Result<Rollout> {
        for u in [u1, u2] {
            if !(u >= self.setpoint_min && u <= self.setpoint_max) {
                return Err(Error::InvalidInput(format!(
                    "setpoint {u} outside [{}, {}]",
                    self.setpoint_min, self.setpoint_max
                )));
            }
        }
        let [d1, d2] = &self.forecast;
        let [l1, l2] = self.power_limits;
        let nan = Rollout {
            x1: f64::NAN,
            y1: f64::NAN,
            v1: f64::NAN,
            x2: f64::NAN,
            y2: f64::NAN,
            v2: f64::NAN,
            cost: f64::NAN,
        };
        let x1 = self.fx.predict(&fx_features(u1, self.zone_temp, d1))?;
        if !x1.is_finite() {
            return Ok(Rollout { x1, ..nan });
        }
        let y1 = self.fy.predict(&fy_features(u1, x1, d1))?.max(0.0);
        let x2 = self.fx.predict(&fx_features(u2, x1, d2))?;
        if !x2.is_finite() {
            return Ok(Rollout { x1, y1, x2, ..nan });
        }
        let y2 = self.fy.predict(&fy_features(u2, x2, d2))?.max(0.0);
        let v1 = penalty(y1, l1);
        let v2 = penalty(y2, l2);
        Ok(Rollout {
            x1,
            y1,
            v1,
            x2,
            y2,
            v2,
            cost: y1 + v1 + y2 + v2,
        })
    }

    /// Exhaustive search; among equal costs the larger u1, then larger u2, wins.
    pub fn optimize(&self) -> Result<MpcDecision> {
        self.validate()?;
        let grid = self.grid();
        let mut candidates = Vec::with_capacity(grid.len() * grid.len());
        let mut best: Option<(f64, f64, Rollout)> = None;
        for &u1 in &grid {
            for &u2 in &grid {
                let r = self.rollout(u1, u2)?;
                let finite = r.cost.is_finite();
                candidates.push(Candidate {
                    u1,
                    u2,
                    cost: finite.then_some(r.cost),
                });
                // Ascending enumeration, so `<=` keeps the last of tied pairs.
                if finite && best.is_none_or(|(_, _, b)| r.cost <= b.cost) {
                    best = Some((u1, u2, r));
                }
            }
        }
        let (u1, u2, r) = best.ok_or(Error::OptimizationFailed(candidates.len()))?;
        Ok(MpcDecision {
            u1_c: u1,
            u2_c: u2,
            x1_c: r.x1,
            x2_c: r.x2,
            y1_w: r.y1,
            y2_w: r.y2,
            v1: r.v1,
            v2: r.v2,
            cost: r.cost,
            candidates,
        })
    }
}
