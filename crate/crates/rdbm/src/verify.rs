//! Named verification checks behind the `verify` subcommand.
//!
//! Each check compares an implementation route against an independent
//! one (Monte Carlo vs closed form, quadrature vs log identity, limit
//! configuration vs limit target) and reports a named pass/fail.

use crate::bridge::{
    bridge_drift_coefficient, compute_coefficients, BridgeCoefficients, BridgeVariant, VariantKind,
};
use crate::error::Result;
use crate::math::{adaptive_simpson, coth, rel_err};
use crate::rng::Stream;
use crate::sampler::{oracle_pi_eps, sample_loop, SampleMode};
use crate::schedule::{build_table, cumulative_theta, theta_at, ScheduleFamily, ScheduleSpec};
use crate::sim::{euler_maruyama_forward, MomentEstimate, SimConfig};
use crate::tensor::TensorGrid;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        CheckOutcome { name: name.into(), pass, detail: detail.into() }
    }
}

/// Scalar instance the moment checks run on.
pub const MC_X0: f64 = 1.0;
pub const MC_MU: f64 = 0.0;
pub const MC_PI: f64 = 1.0;

/// One row of the moment report.
pub struct MomentRow {
    pub t: f64,
    pub analytic_mean: f64,
    pub estimate: MomentEstimate,
    pub pass_mean: bool,
    pub analytic_var: f64,
    pub pass_var: bool,
}

/// Euler-Maruyama moments against the closed-form marginals.
///
/// The coefficients are a parameter so a corrupted table is detectable:
/// the simulation integrates the SDE from the schedule alone, the
/// analytic side reads the table.
pub fn moment_checks(
    spec: &ScheduleSpec,
    coeffs: &BridgeCoefficients,
    cfg: &SimConfig,
    label: &str,
) -> Result<(Vec<CheckOutcome>, Vec<MomentRow>)> {
    let moments = euler_maruyama_forward(spec, MC_X0, MC_MU, MC_PI, cfg)?;
    let mut rows = Vec::new();
    let mut mean_ok = true;
    let mut var_ok = true;
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for est in moments {
        let idx = (est.t / spec.horizon * spec.steps as f64).round() as usize;
        if idx == 0 || idx >= spec.steps {
            continue;
        }
        let analytic_mean = MC_MU + (MC_X0 - MC_MU) * coeffs.theta[idx];
        let analytic_var = MC_PI * MC_PI * coeffs.sigma[idx] * coeffs.sigma[idx];
        let mean_dev = (est.mean - analytic_mean).abs();
        let pass_mean = mean_dev <= 4.0 * est.mean_se;
        let var_tol = (0.02 * analytic_var).max(4.0 * est.var_se);
        let var_dev = (est.var - analytic_var).abs();
        let pass_var = var_dev <= var_tol;
        mean_ok &= pass_mean;
        var_ok &= pass_var;
        if est.mean_se > 0.0 {
            worst_mean = worst_mean.max(mean_dev / est.mean_se);
        }
        if var_tol > 0.0 {
            worst_var = worst_var.max(var_dev / var_tol);
        }
        rows.push(MomentRow {
            t: est.t,
            analytic_mean,
            estimate: est,
            pass_mean,
            analytic_var,
            pass_var,
        });
    }
    let checks = vec![
        CheckOutcome::new(
            format!("mc_mean[{label}]"),
            mean_ok,
            format!("worst deviation {worst_mean:.2} se (limit 4)"),
        ),
        CheckOutcome::new(
            format!("mc_variance[{label}]"),
            var_ok,
            format!("worst deviation {worst_var:.2} of tolerance (limit 1)"),
        ),
    ];
    Ok((checks, rows))
}

/// Reverse loop with the exact pi-eps oracle must reproduce the clean
/// data from the degraded endpoint.
pub fn oracle_recovery_check(spec: &ScheduleSpec, label: &str) -> Result<CheckOutcome> {
    let table = build_table(spec)?;
    let coeffs = compute_coefficients(&table, spec.lambda)?;
    let mut stream = Stream::named(404, "verify.recovery");
    let x0 = TensorGrid::zeros(vec![8]).normal_like(&mut stream).map(|v| 0.5 + 0.25 * v);
    let mu = TensorGrid::zeros(vec![8]).normal_like(&mut stream).map(|v| 0.5 + 0.25 * v);
    let predictor =
        |x: &TensorGrid, i: usize, m: &TensorGrid| oracle_pi_eps(&x0, x, m, &coeffs, i);
    let mut loop_stream = Stream::named(404, "verify.recovery.loop");
    let out = sample_loop(&predictor, &mu, &coeffs, spec.steps, SampleMode::Ddim, &mut loop_stream)?;
    let worst = out
        .data()
        .iter()
        .zip(x0.data().iter())
        .map(|(o, t)| rel_err(*o, *t))
        .fold(0.0f64, f64::max);
    Ok(CheckOutcome::new(
        format!("oracle_recovery[{label}]"),
        worst < 1e-8,
        format!("worst relative deviation {worst:.3e} (limit 1e-8)"),
    ))
}

/// Base rate plus the h-term correction equals the conditioned drift.
pub fn drift_identity_check(seed: u64) -> Result<CheckOutcome> {
    let mut stream = Stream::named(seed, "verify.drift");
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let spec = ScheduleSpec {
            family: match stream.next_index(3) {
                0 => ScheduleFamily::Linear,
                1 => ScheduleFamily::Cosine,
                _ => ScheduleFamily::Sigmoid,
            },
            theta_min: 0.01 + 0.5 * stream.next_uniform(),
            theta_max: 1.0 + 2.0 * stream.next_uniform(),
            ..ScheduleSpec::default()
        };
        let t = 0.95 * spec.horizon * stream.next_uniform();
        let th = theta_at(&spec, t)?;
        let tail = cumulative_theta(&spec, t, spec.horizon)?;
        let e2 = (-2.0 * tail).exp();
        let h_coef = e2 / (spec.lambda * (1.0 - e2));
        let lhs = th + 2.0 * spec.lambda * th * h_coef;
        let rhs = bridge_drift_coefficient(&spec, t)?;
        worst = worst.max(rel_err(lhs, rhs));
    }
    Ok(CheckOutcome::new(
        "drift_identity",
        worst < 1e-10,
        format!("worst relative deviation {worst:.3e} (limit 1e-10)"),
    ))
}

/// Quadrature of the conditioned rate integral against the log-sinh form
/// of the integrating factor.
pub fn psi_quadrature_check(seed: u64) -> Result<CheckOutcome> {
    let spec = ScheduleSpec { steps: 50, ..ScheduleSpec::default() };
    let table = build_table(&spec)?;
    let mut stream = Stream::named(seed, "verify.psi");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = 1 + stream.next_index(spec.steps - 1);
        let t_i = table.t_grid[i];
        let f = |s: f64| {
            theta_at(&spec, s).unwrap()
                * coth(cumulative_theta(&spec, s, spec.horizon).unwrap())
        };
        let quad = adaptive_simpson(&f, 0.0, t_i, 1e-12);
        let log_psi = crate::bridge::psi_factor(&table, i)?.ln();
        worst = worst.max((quad - log_psi).abs());
    }
    Ok(CheckOutcome::new(
        "psi_quadrature",
        worst < 1e-8,
        format!("worst absolute deviation {worst:.3e} (limit 1e-8)"),
    ))
}

/// Small-rate coefficients against the linear-interpolation targets.
pub fn brownian_limit_check(small_theta: f64) -> Result<CheckOutcome> {
    let variant = BridgeVariant { kind: VariantKind::Brownian, small_theta };
    let spec = variant.schedule_override(&ScheduleSpec::default());
    let table = build_table(&spec)?;
    let coeffs = compute_coefficients(&table, spec.lambda)?;
    let mut worst = 0.0f64;
    for (i, &t) in table.t_grid.iter().enumerate() {
        let frac = t / spec.horizon;
        worst = worst.max((coeffs.theta[i] - (1.0 - frac)).abs());
        worst = worst.max((coeffs.sigma[i] * coeffs.sigma[i] - t * (1.0 - frac)).abs());
    }
    Ok(CheckOutcome::new(
        "brownian_limit",
        worst < 1e-6,
        format!("worst absolute deviation {worst:.3e} (limit 1e-6)"),
    ))
}

/// Zero noise profile: simulated trajectories must carry zero variance.
pub fn flow_determinism_check(cfg: &SimConfig) -> Result<CheckOutcome> {
    let spec = ScheduleSpec::default();
    let small = SimConfig {
        trajectories: cfg.trajectories.min(2000),
        ..*cfg
    };
    let moments = euler_maruyama_forward(&spec, MC_X0, MC_MU, 0.0, &small)?;
    let worst = moments.iter().map(|m| m.var.abs()).fold(0.0f64, f64::max);
    Ok(CheckOutcome::new(
        "flow_determinism",
        worst == 0.0,
        format!("max sample variance {worst:.3e} (must be exactly 0)"),
    ))
}

/// Small-rate conditioned drift against 1/(T - t).
pub fn ve_drift_limit_check(small_theta: f64) -> Result<CheckOutcome> {
    let spec = ScheduleSpec::constant(small_theta, 1.0, 10, ScheduleSpec::default().lambda);
    let mut worst = 0.0f64;
    for k in 1..20 {
        let t = k as f64 / 20.0 * 0.95;
        let coef = bridge_drift_coefficient(&spec, t)?;
        worst = worst.max(rel_err(coef, 1.0 / (spec.horizon - t)));
    }
    Ok(CheckOutcome::new(
        "ve_drift_limit",
        worst < 1e-4,
        format!("worst relative deviation {worst:.3e} (limit 1e-4)"),
    ))
}

/// Rate tied to half the squared diffusion: the conditioned drift
/// computed through the schedule machinery must match the direct
/// substitution.
pub fn vp_substitution_check(seed: u64) -> Result<CheckOutcome> {
    // sigma^2(t) ramps linearly; theta = sigma^2/2.
    let (s0, s1) = (0.04, 2.0);
    let spec = ScheduleSpec {
        family: ScheduleFamily::Linear,
        theta_min: s0 / 2.0,
        theta_max: s1 / 2.0,
        ..ScheduleSpec::default()
    };
    let mut stream = Stream::named(seed, "verify.vp");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let t = 0.95 * stream.next_uniform();
        let lhs = bridge_drift_coefficient(&spec, t)?;
        // Direct: (sigma^2/2) coth(int sigma^2/2).
        let sig2 = |u: f64| s0 + (s1 - s0) * u;
        let half_int = 0.5 * (s0 * (1.0 - t) + (s1 - s0) * (1.0 - t * t) / 2.0);
        let rhs = 0.5 * sig2(t) * coth(half_int);
        worst = worst.max(rel_err(lhs, rhs));
    }
    Ok(CheckOutcome::new(
        "vp_substitution",
        worst < 1e-9,
        format!("worst relative deviation {worst:.3e} (limit 1e-9)"),
    ))
}

/// The three standard schedules the default verification run covers.
pub fn default_verify_schedules() -> Vec<(String, ScheduleSpec)> {
    vec![
        (
            "constant".into(),
            ScheduleSpec::constant(2.0, 1.0, 10, 0.5),
        ),
        (
            "linear".into(),
            ScheduleSpec {
                family: ScheduleFamily::Linear,
                lambda: 0.5,
                ..ScheduleSpec::default()
            },
        ),
        (
            "cosine".into(),
            ScheduleSpec { lambda: 0.5, ..ScheduleSpec::default() },
        ),
    ]
}
