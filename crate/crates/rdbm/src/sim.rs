//! Monte Carlo verification engine.
//!
//! Simulates the conditioned SDE
//!   dx = theta_t coth(tb_{t:T}) (mu - x) dt + sqrt(2 pi^2 lambda theta_t) dW
//! with Euler-Maruyama steps and compares sample moments against the
//! closed-form marginals. Also provides the scalar Gaussian-conditioning
//! oracle for the reverse posterior.
//!
//! Trajectory k draws from the stream keyed (seed, k), so moments are
//! bitwise-identical for a fixed seed regardless of how trajectories are
//! scheduled across workers. Chunks of fixed size are reduced in index
//! order.

use crate::bridge::{bridge_drift_coefficient, BridgeCoefficients};
use crate::error::{RdbmError, Result};
use crate::rng::Stream;
use crate::schedule::{theta_at, ScheduleSpec};

#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub trajectories: usize,
    pub substeps_per_cell: usize,
    /// Simulation stops at T (1 - endpoint_clip); the drift coefficient
    /// diverges at t = T itself.
    pub endpoint_clip: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trajectories: 200_000,
            substeps_per_cell: 64,
            endpoint_clip: 0.01,
            seed: 42,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories < 1000 {
            return Err(RdbmError::InvalidConfig(format!(
                "moment checks need at least 1000 trajectories, got {}",
                self.trajectories
            )));
        }
        if self.substeps_per_cell == 0 {
            return Err(RdbmError::InvalidConfig("substeps_per_cell must be >= 1".into()));
        }
        if !(self.endpoint_clip > 0.0 && self.endpoint_clip < 1.0) {
            return Err(RdbmError::InvalidConfig(format!(
                "endpoint_clip must be in (0, 1), got {}",
                self.endpoint_clip
            )));
        }
        Ok(())
    }
}

/// Sample moments at one grid time.
#[derive(Debug, Clone, Copy)]
pub struct MomentEstimate {
    pub t: f64,
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
}

const CHUNK: usize = 8192;

fn worker_count() -> usize {
    std::env::var("RDBM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Euler-Maruyama simulation of the conditioned scalar SDE on
/// [0, T(1 - clip)], returning moment estimates at every grid time in
/// range. Drift and diffusion factors are precomputed per substep; each
/// trajectory then costs one fused update and one normal draw per substep.
pub fn euler_maruyama_forward(
    spec: &ScheduleSpec,
    x0: f64,
    mu: f64,
    pi: f64,
    cfg: &SimConfig,
) -> Result<Vec<MomentEstimate>> {
    spec.validate()?;
    cfg.validate()?;
    let n = spec.steps;
    let t_end = spec.horizon * (1.0 - cfg.endpoint_clip);
    let cell = spec.horizon / n as f64;

    // Per-cell substep coefficients, shared by all trajectories. Record
    // moment snapshots at grid boundaries that fall inside [0, t_end].
    struct Segment {
        drift: Vec<f64>,  // a_k dt
        diff: Vec<f64>,   // b_k sqrt(dt)
        record: Option<f64>, // grid time recorded after this segment
    }
    let mut segments = Vec::new();
    for c in 0..n {
        let t0 = c as f64 * cell;
        let t1 = ((c + 1) as f64 * cell).min(t_end);
        if t1 <= t0 {
            break;
        }
        let dt = (t1 - t0) / cfg.substeps_per_cell as f64;
        let mut drift = Vec::with_capacity(cfg.substeps_per_cell);
        let mut diff = Vec::with_capacity(cfg.substeps_per_cell);
        for k in 0..cfg.substeps_per_cell {
            let tk = t0 + k as f64 * dt;
            let a = bridge_drift_coefficient(spec, tk)?;
            let g2 = 2.0 * pi * pi * spec.lambda * theta_at(spec, tk)?;
            drift.push(a * dt);
            diff.push(g2.sqrt() * dt.sqrt());
        }
        let full_cell = (t1 - (c + 1) as f64 * cell).abs() < 1e-15;
        segments.push(Segment {
            drift,
            diff,
            record: if full_cell { Some(t1) } else { None },
        });
    }
    let record_times: Vec<f64> = segments.iter().filter_map(|s| s.record).collect();
    let n_rec = record_times.len();

    // Per-chunk accumulation of sum and sum of squares at each recorded time.
    let n_traj = cfg.trajectories;
    let n_chunks = n_traj.div_ceil(CHUNK);
    let seed = cfg.seed;
    // (sum, sum of squares, min, max); the spread detects the exactly
    // deterministic case, where rounding in the sums must not fabricate
    // a tiny variance.
    type Acc = (f64, f64, f64, f64);
    let run_chunk = |chunk_idx: usize| -> Vec<Acc> {
        let lo = chunk_idx * CHUNK;
        let hi = ((chunk_idx + 1) * CHUNK).min(n_traj);
        let mut acc = vec![(0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY); n_rec];
        for traj in lo..hi {
            let mut stream = Stream::indexed(seed, "mc.traj", traj as u64);
            let mut x = x0;
            let mut rec = 0;
            for seg in &segments {
                for (adt, bsq) in seg.drift.iter().zip(seg.diff.iter()) {
                    x += adt * (mu - x) + bsq * stream.next_normal();
                }
                if seg.record.is_some() {
                    acc[rec].0 += x;
                    acc[rec].1 += x * x;
                    acc[rec].2 = acc[rec].2.min(x);
                    acc[rec].3 = acc[rec].3.max(x);
                    rec += 1;
                }
            }
        }
        acc
    };

    let workers = worker_count();
    let partials: Vec<Vec<Acc>> = if workers <= 1 {
        (0..n_chunks).map(run_chunk).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Vec<Acc>>>> =
            (0..n_chunks).map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers.min(n_chunks) {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if idx >= n_chunks {
                        break;
                    }
                    *slots[idx].lock().unwrap() = Some(run_chunk(idx));
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("chunk completed"))
            .collect()
    };

    // Deterministic in-order reduction.
    let mut totals = vec![(0.0f64, 0.0f64, f64::INFINITY, f64::NEG_INFINITY); n_rec];
    for p in partials {
        for (t, q) in totals.iter_mut().zip(p.iter()) {
            t.0 += q.0;
            t.1 += q.1;
            t.2 = t.2.min(q.2);
            t.3 = t.3.max(q.3);
        }
    }

    let nf = n_traj as f64;
    Ok(record_times
        .iter()
        .zip(totals.iter())
        .map(|(&t, &(s, s2, lo, hi))| {
            if lo == hi {
                // All trajectories coincide: the moments are exact.
                return MomentEstimate { t, mean: lo, mean_se: 0.0, var: 0.0, var_se: 0.0 };
            }
            let mean = s / nf;
            let var = ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0);
            MomentEstimate {
                t,
                mean,
                mean_se: (var / nf).sqrt(),
                var,
                var_se: var * (2.0 / (nf - 1.0)).sqrt(),
            }
        })
        .collect())
}

/// Draws from the exact marginal N(mu + (x0-mu) Theta_i, pi^2 Sigma_i^2).
pub fn exact_transition_sample(
    coeffs: &BridgeCoefficients,
    x0: f64,
    mu: f64,
    pi: f64,
    i: usize,
    stream: &mut Stream,
) -> Result<f64> {
    let n = coeffs.n_cells();
    if i > n {
        return Err(RdbmError::IndexOutOfRange { index: i, max: n });
    }
    Ok(mu + (x0 - mu) * coeffs.theta[i] + pi * coeffs.sigma[i] * stream.next_normal())
}

/// Conditional law of x_{i-1} given (x0, mu, x_i) by bivariate Gaussian
/// conditioning.
///
/// Marginals come from the closed forms; the forward kernel
/// x_i | x_{i-1} is linear with slope Theta_i/Theta_{i-1} and variance
/// pi^2 (Sigma_i^2 - slope^2 Sigma_{i-1}^2). Combining precision-weighted
/// evidence gives the posterior mean and variance. This route is kept
/// independent of the reverse-step formulas it cross-checks.
pub fn posterior_oracle(
    coeffs: &BridgeCoefficients,
    i: usize,
    x0: f64,
    mu: f64,
    pi: f64,
    x_t: f64,
) -> Result<(f64, f64)> {
    let n = coeffs.n_cells();
    if i == 0 || i > n {
        return Err(RdbmError::IndexOutOfRange { index: i, max: n });
    }
    let (th_prev, sg_prev) = (coeffs.theta[i - 1], coeffs.sigma[i - 1]);
    let (th, sg) = (coeffs.theta[i], coeffs.sigma[i]);
    if th_prev <= 0.0 {
        return Err(RdbmError::Inconsistent(format!(
            "Theta_(i-1) must be positive at i = {i}"
        )));
    }
    // Zero slope: the step carries no information about x_{i-1}; the
    // posterior is the unconditioned marginal. This is the i = N case
    // (Theta_N = 0).
    let slope = th / th_prev;
    let prior_mean = mu + (x0 - mu) * th_prev;
    let prior_var = pi * pi * sg_prev * sg_prev;
    if slope == 0.0 {
        return Ok((prior_mean, prior_var));
    }
    let kernel_var = pi * pi * (sg * sg - slope * slope * sg_prev * sg_prev);
    if kernel_var < 0.0 {
        return Err(RdbmError::Inconsistent(format!(
            "negative forward-kernel variance at i = {i}: {kernel_var}"
        )));
    }
    if prior_var == 0.0 {
        // Sigma_{i-1} = 0: x_{i-1} is pinned at its mean.
        return Ok((prior_mean, 0.0));
    }
    if kernel_var == 0.0 {
        // Deterministic kernel: invert it exactly.
        return Ok((mu + (x_t - mu) / slope, 0.0));
    }
    // Work centered on mu: x_t - mu ~ N(slope (x_{i-1} - mu), kernel_var),
    // x_{i-1} - mu ~ N(prior_mean - mu, prior_var).
    let precision = 1.0 / prior_var + slope * slope / kernel_var;
    let post_var = 1.0 / precision;
    let post_mean =
        post_var * ((prior_mean - mu) / prior_var + slope * (x_t - mu) / kernel_var) + mu;
    Ok((post_mean, post_var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::compute_coefficients;
    use crate::math::rel_err;
    use crate::schedule::{build_table, ScheduleSpec};

    fn const2() -> (ScheduleSpec, BridgeCoefficients) {
        let spec = ScheduleSpec::constant(2.0, 1.0, 10, 0.5);
        let coeffs = compute_coefficients(&build_table(&spec).unwrap(), spec.lambda).unwrap();
        (spec, coeffs)
    }

    #[test]
    fn zero_pi_paths_are_deterministic() {
        let (spec, coeffs) = const2();
        let cfg = SimConfig { trajectories: 1000, ..Default::default() };
        let moments = euler_maruyama_forward(&spec, 1.0, 0.0, 0.0, &cfg).unwrap();
        for m in &moments {
            assert_eq!(m.var, 0.0, "no diffusion term, identical trajectories");
        }
        // Deterministic mean still tracks the closed form up to the
        // integrator's own bias.
        let i = 5;
        assert!(rel_err(moments[i - 1].mean, coeffs.theta[i]) < 1e-2);
    }

    #[test]
    fn fixed_point_start_stays_centered() {
        let (spec, _) = const2();
        let cfg = SimConfig { trajectories: 20_000, substeps_per_cell: 16, ..Default::default() };
        let moments = euler_maruyama_forward(&spec, 0.5, 0.5, 1.0, &cfg).unwrap();
        for m in &moments {
            assert!(
                (m.mean - 0.5).abs() <= 4.0 * m.mean_se,
                "t={}: {} vs 0.5 (se {})",
                m.t,
                m.mean,
                m.mean_se
            );
        }
    }

    #[test]
    fn moments_match_closed_form_at_midpoint() {
        let (spec, coeffs) = const2();
        let cfg = SimConfig { trajectories: 50_000, ..Default::default() };
        let moments = euler_maruyama_forward(&spec, 1.0, 0.0, 1.0, &cfg).unwrap();
        let m = &moments[4]; // t = 0.5
        assert!((m.t - 0.5).abs() < 1e-12);
        let mean_an = coeffs.theta[5];
        let var_an = coeffs.sigma[5] * coeffs.sigma[5];
        assert!((m.mean - mean_an).abs() <= 4.0 * m.mean_se);
        assert!((m.var - var_an).abs() <= (0.02 * var_an).max(4.0 * m.var_se));
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let (spec, _) = const2();
        let cfg = SimConfig { trajectories: 9000, substeps_per_cell: 8, ..Default::default() };
        let a = euler_maruyama_forward(&spec, 1.0, 0.0, 1.0, &cfg).unwrap();
        std::env::set_var("RDBM_THREADS", "4");
        let b = euler_maruyama_forward(&spec, 1.0, 0.0, 1.0, &cfg).unwrap();
        std::env::remove_var("RDBM_THREADS");
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.mean.to_bits(), y.mean.to_bits());
            assert_eq!(x.var.to_bits(), y.var.to_bits());
        }
    }

    #[test]
    fn halving_step_size_reduces_moment_error() {
        // Weak-order-1 trend over three step sizes at a fixed budget.
        let (spec, coeffs) = const2();
        let mean_an = coeffs.theta[5];
        let err_at = |sub: usize| {
            let cfg = SimConfig {
                trajectories: 200_000,
                substeps_per_cell: sub,
                ..Default::default()
            };
            let m = euler_maruyama_forward(&spec, 1.0, 0.0, 1.0, &cfg).unwrap()[4];
            (m.mean - mean_an).abs()
        };
        let (e2, e4, e8) = (err_at(2), err_at(4), err_at(8));
        assert!(e4 < e2, "e2={e2} e4={e4}");
        assert!(e8 < e4, "e4={e4} e8={e8}");
    }

    #[test]
    fn exact_sampler_endpoint_and_moments() {
        let (_, coeffs) = const2();
        let mut s = Stream::named(9, "exact");
        assert_eq!(
            exact_transition_sample(&coeffs, 1.0, 0.0, 1.0, 10, &mut s).unwrap(),
            0.0
        );
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for k in 0..n {
            let mut s = Stream::indexed(9, "exact.draw", k as u64);
            let v = exact_transition_sample(&coeffs, 1.0, 0.0, 1.0, 5, &mut s).unwrap();
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum2 - n as f64 * mean * mean) / (n as f64 - 1.0);
        let mean_an = coeffs.theta[5];
        let var_an = coeffs.sigma[5] * coeffs.sigma[5];
        let se = (var / n as f64).sqrt();
        assert!((mean - mean_an).abs() <= 4.0 * se);
        assert!(rel_err(var, var_an) < 0.02);
    }

    #[test]
    fn posterior_oracle_zero_innovation() {
        // x_t on its conditional mean: posterior mean is the marginal mean.
        let (_, coeffs) = const2();
        let (x0, mu, pi) = (0.8, 0.1, 0.7);
        for i in 2..=9 {
            let x_t = mu + (x0 - mu) * coeffs.theta[i];
            let (m, _) = posterior_oracle(&coeffs, i, x0, mu, pi, x_t).unwrap();
            let expect = mu + (x0 - mu) * coeffs.theta[i - 1];
            assert!(rel_err(m, expect) < 1e-12, "i={i}");
        }
    }

    #[test]
    fn posterior_oracle_pinned_at_first_step() {
        // i = 1: Sigma_0 = 0, posterior collapses to x0.
        let (_, coeffs) = const2();
        let (m, v) = posterior_oracle(&coeffs, 1, 0.8, 0.1, 0.7, 0.5).unwrap();
        assert_eq!(v, 0.0);
        assert!(rel_err(m, 0.8) < 1e-14);
    }

    #[test]
    fn posterior_oracle_matches_closed_variance_form() {
        // Sigma_{i-1}^2 (Theta_{i-1}^2 Sigma_i^2 - Theta_i^2 Sigma_{i-1}^2)
        //   / (Theta_{i-1}^2 Sigma_i^2), scaled by pi^2.
        let (_, coeffs) = const2();
        let pi = 1.3;
        for i in 2..=9 {
            let (tp, sp) = (coeffs.theta[i - 1], coeffs.sigma[i - 1]);
            let (tc, sc) = (coeffs.theta[i], coeffs.sigma[i]);
            let expect =
                pi * pi * sp * sp * (tp * tp * sc * sc - tc * tc * sp * sp) / (tp * tp * sc * sc);
            let (_, v) = posterior_oracle(&coeffs, i, 0.3, -0.2, pi, 0.9).unwrap();
            assert!(rel_err(v, expect) < 1e-10, "i={i}: {v} vs {expect}");
        }
    }

    #[test]
    fn posterior_oracle_slope_in_unit_interval() {
        let (_, coeffs) = const2();
        for i in 2..=9 {
            let (m0, v0) = posterior_oracle(&coeffs, i, 0.3, 0.1, 1.0, 0.5).unwrap();
            let (m1, v1) = posterior_oracle(&coeffs, i, 0.3, 0.1, 1.0, 1.5).unwrap();
            let slope = (m1 - m0) / 1.0;
            assert!(slope > 0.0 && slope <= 1.0, "i={i} slope={slope}");
            assert_eq!(v0, v1, "variance independent of x_t");
        }
    }

    #[test]
    fn posterior_oracle_marginal_at_last_index() {
        // i = N: Theta_N = 0, no information flows back.
        let (_, coeffs) = const2();
        let (m, v) = posterior_oracle(&coeffs, 10, 0.8, 0.1, 0.7, 0.1).unwrap();
        assert!(rel_err(m, 0.1 + 0.7 * coeffs.theta[9]) < 1e-14);
        assert!(rel_err(v, 0.49 * coeffs.sigma[9] * coeffs.sigma[9]) < 1e-14);
    }
}
