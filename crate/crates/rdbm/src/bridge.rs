//! Closed-form bridge process mathematics.
//!
//! An Ornstein-Uhlenbeck process with rate theta(t), noise profile pi and
//! stationary variance scale lambda, conditioned by the h-transform to
//! arrive at mu at time T, has Gaussian marginals with
//!
//!   mean(t) = mu + (x0 - mu) Theta_t,   Theta_t = sinh(tb_{t:T}) / sinh(tb_{0:T})
//!   var(t)  = pi^2 Sigma_t^2,           Sigma_t^2 = 2 lambda sinh(tb_{0:t}) sinh(tb_{t:T}) / sinh(tb_{0:T})
//!
//! where tb_{s:t} is the cumulative rate integral. This module tabulates
//! those coefficients per grid point, exposes the drift/diffusion of the
//! conditioned SDE, the h-term itself, the residual-to-noise ratio, and
//! the named special-case configurations.

use serde::{Deserialize, Serialize};

use crate::error::{RdbmError, Result};
use crate::math::{coth, log_sinh, one_minus_exp_neg2, sinh_ratio};
use crate::schedule::{cumulative_theta, theta_at, ScheduleSpec, ScheduleTable};
use crate::tensor::TensorGrid;

/// Per-grid-point bridge coefficients.
///
/// `r[0]` is stored as `+inf`: the residual-to-noise ratio diverges at
/// t = 0. `sigma` holds the nonnegative root of the variance shape; the
/// noise profile pi multiplies it separately wherever variance is formed.
#[derive(Debug, Clone)]
pub struct BridgeCoefficients {
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub r: Vec<f64>,
    pub lambda: f64,
    /// (Theta, Sigma) at t = T - T/(2N): finite stand-ins for the
    /// degenerate endpoint pair used by the first reverse step.
    pub backoff_end: (f64, f64),
    /// (Theta, Sigma) at t = T/(2N), mirrored stand-in for index 0.
    pub backoff_start: (f64, f64),
}

impl BridgeCoefficients {
    pub fn n_cells(&self) -> usize {
        self.theta.len() - 1
    }

    /// Effective (Theta, Sigma) pair for reverse step i.
    ///
    /// Grid values for interior indices; the half-cell backoff pairs
    /// stand in at the endpoints where the grid values are degenerate
    /// (Theta_N = Sigma_N = 0 and Sigma_0 = 0).
    pub fn step_coeffs(&self, i: usize) -> (f64, f64) {
        let n = self.n_cells();
        if i == n {
            self.backoff_end
        } else if i == 0 {
            self.backoff_start
        } else {
            (self.theta[i], self.sigma[i])
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        let n = self.n_cells();
        if i > n {
            return Err(RdbmError::IndexOutOfRange { index: i, max: n });
        }
        Ok(())
    }
}

/// Tabulates Theta_i, Sigma_i and R_i from a schedule table.
///
/// All sinh ratios are formed in log space and exponentiated, so extreme
/// cumulative rates neither overflow nor cancel.
pub fn compute_coefficients(table: &ScheduleTable, lambda: f64) -> Result<BridgeCoefficients> {
    if !(lambda > 0.0) {
        return Err(RdbmError::InvalidConfig(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    if table.total <= 0.0 {
        return Err(RdbmError::DegenerateSchedule);
    }
    let n = table.n_cells();
    let ls_total = log_sinh(table.total);
    let mut theta = Vec::with_capacity(n + 1);
    let mut sigma = Vec::with_capacity(n + 1);
    let mut r = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let c0 = table.cum0[i];
        let ct = table.cum_to_end(i);
        let (ls0, lst) = (log_sinh(c0), log_sinh(ct));
        theta.push((lst - ls_total).exp());
        sigma.push((2.0 * lambda).sqrt() * (0.5 * (ls0 + lst - ls_total)).exp());
        r.push((lst - ls0 - ls_total).exp());
    }
    let pair_at = |c0: f64| {
        let ct = table.total - c0;
        let (ls0, lst) = (log_sinh(c0), log_sinh(ct));
        (
            (lst - ls_total).exp(),
            (2.0 * lambda).sqrt() * (0.5 * (ls0 + lst - ls_total)).exp(),
        )
    };
    Ok(BridgeCoefficients {
        theta,
        sigma,
        r,
        lambda,
        backoff_end: pair_at(table.cum0_backoff_end),
        backoff_start: pair_at(table.cum0_backoff_start),
    })
}

/// Residual map pi = x0 - mu (elementwise), or |x0 - mu| when `unsigned`.
pub fn residual(x0: &TensorGrid, mu: &TensorGrid, unsigned: bool) -> Result<TensorGrid> {
    if unsigned {
        x0.zip_map(mu, |a, b| (a - b).abs())
    } else {
        x0.zip_map(mu, |a, b| a - b)
    }
}

/// Draws the marginal at grid index i: mu + (x0 - mu) Theta_i + pi (.) Sigma_i eps.
///
/// The endpoints are returned bit-identically (x0 at i = 0, mu at i = N)
/// rather than reassembled from the algebra.
pub fn forward_sample(
    x0: &TensorGrid,
    mu: &TensorGrid,
    pi: &TensorGrid,
    coeffs: &BridgeCoefficients,
    i: usize,
    eps: &TensorGrid,
) -> Result<TensorGrid> {
    x0.same_shape(mu)?;
    x0.same_shape(pi)?;
    x0.same_shape(eps)?;
    coeffs.check_index(i)?;
    let n = coeffs.n_cells();
    if i == 0 {
        return Ok(x0.clone());
    }
    if i == n {
        return Ok(mu.clone());
    }
    let (th, sg) = (coeffs.theta[i], coeffs.sigma[i]);
    let mut out = TensorGrid::zeros(x0.shape().to_vec());
    for (o, (((&a, &m), &p), &e)) in out.data_mut().iter_mut().zip(
        x0.data()
            .iter()
            .zip(mu.data().iter())
            .zip(pi.data().iter())
            .zip(eps.data().iter()),
    ) {
        *o = m + (a - m) * th + p * sg * e;
    }
    Ok(out)
}

/// Pixel-independent residual-to-noise ratio at grid index i.
///
/// R diverges at t = 0; index 0 returns the stored +inf sentinel.
pub fn rtn_ratio(coeffs: &BridgeCoefficients, i: usize) -> Result<f64> {
    coeffs.check_index(i)?;
    Ok(coeffs.r[i])
}

/// Per-pixel residual-to-noise ratio (x0-mu)^2 / (2 pi^2 lambda) * R-shape.
///
/// Pixels with zero pi but nonzero residual get a +inf sentinel; pixels
/// with zero pi and zero residual report 0.
pub fn rtn_ratio_pixel(
    x0: &TensorGrid,
    mu: &TensorGrid,
    pi: &TensorGrid,
    lambda: f64,
    coeffs: &BridgeCoefficients,
    i: usize,
) -> Result<TensorGrid> {
    x0.same_shape(mu)?;
    x0.same_shape(pi)?;
    coeffs.check_index(i)?;
    if i == 0 {
        return Err(RdbmError::Singularity(
            "residual-to-noise ratio diverges at t = 0".into(),
        ));
    }
    let shape = coeffs.r[i];
    let mut out = TensorGrid::zeros(x0.shape().to_vec());
    for (o, ((&a, &m), &p)) in out.data_mut().iter_mut().zip(
        x0.data()
            .iter()
            .zip(mu.data().iter())
            .zip(pi.data().iter()),
    ) {
        let res2 = (a - m) * (a - m);
        *o = if p == 0.0 {
            if res2 == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            res2 / (2.0 * p * p * lambda) * shape
        };
    }
    Ok(out)
}

/// Drift of the conditioned SDE: theta_t coth(tb_{t:T}) (mu - x), elementwise.
pub fn bridge_drift(
    spec: &ScheduleSpec,
    t: f64,
    x: &TensorGrid,
    mu: &TensorGrid,
) -> Result<TensorGrid> {
    x.same_shape(mu)?;
    if t >= spec.horizon {
        return Err(RdbmError::Singularity(format!(
            "bridge drift diverges at t = T (got t = {t})"
        )));
    }
    let coef = bridge_drift_coefficient(spec, t)?;
    x.zip_map(mu, |xv, mv| coef * (mv - xv))
}

/// The scalar factor theta_t coth(tb_{t:T}).
pub fn bridge_drift_coefficient(spec: &ScheduleSpec, t: f64) -> Result<f64> {
    if t >= spec.horizon {
        return Err(RdbmError::Singularity(format!(
            "bridge drift diverges at t = T (got t = {t})"
        )));
    }
    let tail = cumulative_theta(spec, t, spec.horizon)?;
    if tail == 0.0 {
        return Err(RdbmError::DegenerateSchedule);
    }
    Ok(theta_at(spec, t)? * coth(tail))
}

/// Diffusion magnitude of the conditioned SDE: |pi| sqrt(2 lambda theta_t).
pub fn bridge_diffusion(spec: &ScheduleSpec, t: f64, pi: &TensorGrid) -> Result<TensorGrid> {
    let th = theta_at(spec, t)?;
    let g = (2.0 * spec.lambda * th).sqrt();
    Ok(pi.map(|p| p.abs() * g))
}

/// Unconditioned transition over [s, t]:
/// mean = mu + (x_s - mu) e^{-tb_{s:t}}, var = lambda pi^2 (1 - e^{-2 tb_{s:t}}).
pub fn ou_transition(
    spec: &ScheduleSpec,
    x_s: &TensorGrid,
    mu: &TensorGrid,
    pi: &TensorGrid,
    s: f64,
    t: f64,
) -> Result<(TensorGrid, TensorGrid)> {
    x_s.same_shape(mu)?;
    x_s.same_shape(pi)?;
    let tb = cumulative_theta(spec, s, t)?;
    let decay = (-tb).exp();
    let vshape = spec.lambda * one_minus_exp_neg2(tb);
    let mean = x_s.zip_map(mu, |xv, mv| mv + (xv - mv) * decay)?;
    let var = pi.map(|p| p * p * vshape);
    Ok((mean, var))
}

/// Gradient of the log terminal-transition kernel (the h-term):
/// (mu - x_t) e^{-2 tb_{t:T}} / (lambda pi^2 (1 - e^{-2 tb_{t:T}})).
pub fn doob_h(
    spec: &ScheduleSpec,
    x_t: &TensorGrid,
    mu: &TensorGrid,
    pi: &TensorGrid,
    t: f64,
) -> Result<TensorGrid> {
    x_t.same_shape(mu)?;
    x_t.same_shape(pi)?;
    if t >= spec.horizon {
        return Err(RdbmError::Singularity(format!(
            "h-term diverges at t = T (got t = {t})"
        )));
    }
    if pi.data().iter().any(|&p| p == 0.0) {
        return Err(RdbmError::ZeroPi(
            "h-term divides by pi^2; pi must be nonzero elementwise".into(),
        ));
    }
    let tb = cumulative_theta(spec, t, spec.horizon)?;
    let e2 = (-2.0 * tb).exp();
    let denom_shape = spec.lambda * one_minus_exp_neg2(tb);
    let mut out = TensorGrid::zeros(x_t.shape().to_vec());
    for (o, ((&xv, &mv), &p)) in out.data_mut().iter_mut().zip(
        x_t.data()
            .iter()
            .zip(mu.data().iter())
            .zip(pi.data().iter()),
    ) {
        *o = (mv - xv) * e2 / (denom_shape * p * p);
    }
    Ok(out)
}

/// Integrating factor Psi_i = sinh(tb_{0:T}) / sinh(tb_{t_i:T}).
///
/// Equals exp of the integral of theta_s coth(tb_{s:T}) from 0 to t_i.
pub fn psi_factor(table: &ScheduleTable, i: usize) -> Result<f64> {
    let n = table.n_cells();
    if i >= n {
        return Err(RdbmError::Singularity(format!(
            "integrating factor diverges at the terminal grid point (i = {i}, N = {n})"
        )));
    }
    if table.total <= 0.0 {
        return Err(RdbmError::DegenerateSchedule);
    }
    Ok(sinh_ratio(table.total, table.cum_to_end(i)))
}

/// Named bridge configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    /// Residual-modulated noise: pi = x0 - mu.
    Rdbm,
    /// Global noise: pi = 1 everywhere.
    GlobalNoisePi1,
    /// Deterministic path: pi = 0 (flow-matching configuration).
    DeterministicPi0,
    /// Small-rate limit with 2 lambda theta = 1.
    Brownian,
    /// Small-rate limit, lambda kept.
    VeBridge,
    /// Rate tied to half the squared diffusion, mu = 0.
    VpBridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeVariant {
    pub kind: VariantKind,
    /// Rate used when a limit variant replaces the schedule.
    pub small_theta: f64,
}

impl BridgeVariant {
    pub fn new(kind: VariantKind) -> Self {
        BridgeVariant { kind, small_theta: 1e-5 }
    }

    /// Schedule override for the limit variants; the basic pi-rule
    /// variants keep the caller's schedule.
    pub fn schedule_override(&self, base: &ScheduleSpec) -> ScheduleSpec {
        match self.kind {
            VariantKind::Brownian => ScheduleSpec::constant(
                self.small_theta,
                base.horizon,
                base.steps,
                1.0 / (2.0 * self.small_theta),
            ),
            VariantKind::VeBridge => ScheduleSpec::constant(
                self.small_theta,
                base.horizon,
                base.steps,
                base.lambda,
            ),
            _ => *base,
        }
    }
}

/// Noise profile for a variant: the residual for rdbm, ones or zeros for
/// the global/deterministic rules; the limit variants keep pi = 1 and act
/// through their schedule overrides.
pub fn variant_pi(variant: &BridgeVariant, x0: &TensorGrid, mu: &TensorGrid) -> Result<TensorGrid> {
    x0.same_shape(mu)?;
    match variant.kind {
        VariantKind::Rdbm => residual(x0, mu, false),
        VariantKind::DeterministicPi0 => Ok(TensorGrid::zeros(x0.shape().to_vec())),
        _ => Ok(TensorGrid::ones(x0.shape().to_vec())),
    }
}
