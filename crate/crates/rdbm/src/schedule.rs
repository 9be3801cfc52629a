//! Rate schedules and their cumulative integrals.
//!
//! A schedule assigns the instantaneous mean-reversion rate theta(t) on
//! [0, T]. Everything downstream (bridge coefficients, drifts, ratios)
//! consumes cumulative integrals of theta, so this module also builds a
//! discretized table of them.

use serde::{Deserialize, Serialize};

use crate::error::{RdbmError, Result};
use crate::math::simpson;

/// Default variance scale: 10/255 in pixel-value units squared.
pub const DEFAULT_LAMBDA: f64 = 10.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    Linear,
    Cosine,
    Sigmoid,
    Constant,
}

/// Schedule parameters.
///
/// Families ramp from `theta_min` at t = 0 to `theta_max` at t = T:
/// - linear:   theta_min + k t/T
/// - cosine:   theta_min + k (1 - cos(pi t/T))/2
/// - sigmoid:  theta_min + k s(12(t/T - 1/2)), with the logistic s
///   renormalized to hit exactly 0 and 1 at the endpoints
/// - constant: theta_min everywhere
///
/// with k = theta_max - theta_min.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub family: ScheduleFamily,
    pub theta_min: f64,
    pub theta_max: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    pub lambda: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            family: ScheduleFamily::Cosine,
            theta_min: 0.01,
            theta_max: 1.0,
            horizon: 1.0,
            steps: 10,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

/// Subintervals of Simpson quadrature per grid cell.
const SIMPSON_PER_CELL: usize = 32;

impl ScheduleSpec {
    pub fn constant(theta: f64, horizon: f64, steps: usize, lambda: f64) -> Self {
        ScheduleSpec {
            family: ScheduleFamily::Constant,
            theta_min: theta,
            theta_max: theta,
            horizon,
            steps,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_min >= 0.0) {
            return Err(RdbmError::InvalidConfig(format!(
                "theta_min must be >= 0, got {}",
                self.theta_min
            )));
        }
        if !(self.theta_max >= self.theta_min) {
            return Err(RdbmError::InvalidConfig(format!(
                "theta_max ({}) must be >= theta_min ({})",
                self.theta_max, self.theta_min
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(RdbmError::InvalidConfig(format!(
                "T must be > 0, got {}",
                self.horizon
            )));
        }
        if self.steps < 2 {
            return Err(RdbmError::InvalidConfig(format!(
                "N must be >= 2, got {}",
                self.steps
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(RdbmError::InvalidConfig(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    fn theta_unchecked(&self, t: f64) -> f64 {
        let k = self.theta_max - self.theta_min;
        let tau = t / self.horizon;
        match self.family {
            ScheduleFamily::Constant => self.theta_min,
            ScheduleFamily::Linear => self.theta_min + k * tau,
            ScheduleFamily::Cosine => {
                self.theta_min + k * (1.0 - (std::f64::consts::PI * tau).cos()) / 2.0
            }
            ScheduleFamily::Sigmoid => {
                let s = |x: f64| 1.0 / (1.0 + (-x).exp());
                let lo = s(-6.0);
                let hi = s(6.0);
                self.theta_min + k * (s(12.0 * (tau - 0.5)) - lo) / (hi - lo)
            }
        }
    }

    /// Antiderivative F(x) = integral of theta over [0, x].
    ///
    /// Closed form for constant/linear; composite Simpson at
    /// `SIMPSON_PER_CELL` subintervals per grid cell otherwise. Cumulative
    /// integrals are always formed as F(t) - F(s) so that any partition of
    /// an interval sums to the same value up to rounding.
    fn primitive(&self, x: f64) -> f64 {
        let k = self.theta_max - self.theta_min;
        match self.family {
            ScheduleFamily::Constant => self.theta_min * x,
            ScheduleFamily::Linear => self.theta_min * x + k * x * x / (2.0 * self.horizon),
            _ => {
                if x == 0.0 {
                    return 0.0;
                }
                let h0 = self.horizon / (self.steps as f64 * SIMPSON_PER_CELL as f64);
                let n = ((x / h0).ceil() as usize).max(2);
                simpson(&|t| self.theta_unchecked(t), 0.0, x, n)
            }
        }
    }
}

/// Instantaneous rate at time t.
pub fn theta_at(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(RdbmError::Domain(format!(
            "t = {t} outside schedule domain [0, {}]",
            spec.horizon
        )));
    }
    Ok(spec.theta_unchecked(t))
}

/// Integral of theta over [s, t].
pub fn cumulative_theta(spec: &ScheduleSpec, s: f64, t: f64) -> Result<f64> {
    spec.validate()?;
    if s > t {
        return Err(RdbmError::Domain(format!(
            "cumulative_theta needs s <= t, got s = {s}, t = {t}"
        )));
    }
    if s < 0.0 || t > spec.horizon {
        return Err(RdbmError::Domain(format!(
            "[{s}, {t}] outside schedule domain [0, {}]",
            spec.horizon
        )));
    }
    Ok(spec.primitive(t) - spec.primitive(s))
}

/// Discretized schedule: the uniform grid t_i = i T/N, rates, and
/// cumulative integrals from 0.
#[derive(Debug, Clone)]
pub struct ScheduleTable {
    pub t_grid: Vec<f64>,
    pub theta: Vec<f64>,
    /// cum0[i] = integral of theta over [0, t_i].
    pub cum0: Vec<f64>,
    /// Integral over the whole horizon (== cum0[N]).
    pub total: f64,
    /// Integral over [0, T - T/(2N)]; reverse sampling starts its first
    /// step from finite coefficients taken half a cell before the end.
    pub cum0_backoff_end: f64,
    /// Integral over [0, T/(2N)], the mirrored half-cell at the start.
    pub cum0_backoff_start: f64,
    pub spec: ScheduleSpec,
}

impl ScheduleTable {
    pub fn n_cells(&self) -> usize {
        self.t_grid.len() - 1
    }

    /// Integral of theta over [t_i, T].
    pub fn cum_to_end(&self, i: usize) -> f64 {
        self.total - self.cum0[i]
    }
}

/// Tabulates rates and cumulative integrals on the uniform grid.
pub fn build_table(spec: &ScheduleSpec) -> Result<ScheduleTable> {
    spec.validate()?;
    let n = spec.steps;
    let t_grid: Vec<f64> = (0..=n)
        .map(|i| spec.horizon * i as f64 / n as f64)
        .collect();
    let theta: Vec<f64> = t_grid.iter().map(|&t| spec.theta_unchecked(t)).collect();
    let cum0: Vec<f64> = t_grid.iter().map(|&t| spec.primitive(t)).collect();
    for i in 1..=n {
        if cum0[i] < cum0[i - 1] {
            return Err(RdbmError::InvalidConfig(format!(
                "cumulative rate not monotone between grid points {} and {}",
                i - 1,
                i
            )));
        }
    }
    let half = spec.horizon / (2.0 * n as f64);
    Ok(ScheduleTable {
        total: cum0[n],
        cum0_backoff_end: spec.primitive(spec.horizon - half),
        cum0_backoff_start: spec.primitive(half),
        t_grid,
        theta,
        cum0,
        spec: *spec,
    })
}
