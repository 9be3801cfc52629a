//! Reverse-time inference.
//!
//! The deterministic reverse step rewrites the marginal identities as
//!
//!   x_{i-1} = mu + (Theta_{i-1}/Theta_i)(x_i - mu)
//!             - ((Theta_{i-1}/Theta_i) Sigma_i - Sigma_{i-1}) * pred
//!
//! where pred estimates the product pi (.) eps that generated x_i. The
//! stochastic alternative draws from the Gaussian posterior of x_{i-1}
//! given (x0 estimate, x_i). The loop starts at x_N = mu; since the grid
//! pair at i = N is degenerate (Theta_N = Sigma_N = 0), the first step
//! uses the half-cell backoff pair carried by the coefficient table.

use crate::bridge::BridgeCoefficients;
use crate::error::{RdbmError, Result};
use crate::rng::Stream;
use crate::tensor::TensorGrid;

/// Coefficients of the Gaussian reverse ansatz
/// x_{i-1} = kappa x_i + eta mu + gamma x0 + sigma pi eps, with the
/// per-step noise set to zero.
#[derive(Debug, Clone, Copy)]
pub struct ReverseStepCoeffs {
    pub kappa: f64,
    pub gamma: f64,
    pub eta: f64,
    /// (Theta_{i-1}/Theta_i) Sigma_i - Sigma_{i-1}, the deterministic
    /// step's weight on the pi-eps prediction.
    pub noise_coeff: f64,
}

/// Solves the reverse-ansatz constraint system at step i with zero
/// per-step noise: kappa = Sigma_{i-1}/Sigma_i, gamma = Theta_{i-1} -
/// Theta_i kappa, eta = 1 - Theta_{i-1} - (1 - Theta_i) kappa.
pub fn reverse_coeffs(coeffs: &BridgeCoefficients, i: usize) -> Result<ReverseStepCoeffs> {
    let n = coeffs.n_cells();
    if i == 0 || i > n {
        return Err(RdbmError::IndexOutOfRange { index: i, max: n });
    }
    let (th, sg) = (coeffs.theta[i], coeffs.sigma[i]);
    let (th_prev, sg_prev) = (coeffs.theta[i - 1], coeffs.sigma[i - 1]);
    if th <= 0.0 || sg <= 0.0 {
        return Err(RdbmError::Inconsistent(format!(
            "reverse ansatz needs Theta_i > 0 and Sigma_i > 0 at i = {i}"
        )));
    }
    let kappa = sg_prev / sg;
    Ok(ReverseStepCoeffs {
        kappa,
        gamma: th_prev - th * kappa,
        eta: 1.0 - th_prev - (1.0 - th) * kappa,
        noise_coeff: (th_prev / th) * sg - sg_prev,
    })
}

/// One deterministic reverse step from grid index i to i-1.
///
/// `pi_eps` is the prediction of pi (.) eps at step i. At i = N the
/// backoff pair stands in for the degenerate grid coefficients and
/// x_i = mu, so the update reduces to an injection of the prediction.
pub fn ddim_step(
    x_t: &TensorGrid,
    mu: &TensorGrid,
    pi_eps: &TensorGrid,
    coeffs: &BridgeCoefficients,
    i: usize,
) -> Result<TensorGrid> {
    x_t.same_shape(mu)?;
    x_t.same_shape(pi_eps)?;
    let n = coeffs.n_cells();
    if i == 0 || i > n {
        return Err(RdbmError::IndexOutOfRange { index: i, max: n });
    }
    let (th, sg) = coeffs.step_coeffs(i);
    if th <= 0.0 {
        return Err(RdbmError::Inconsistent(format!(
            "degenerate Theta at step i = {i}"
        )));
    }
    let (th_prev, sg_prev) = (coeffs.theta[i - 1], coeffs.sigma[i - 1]);
    let ratio = th_prev / th;
    let w = ratio * sg - sg_prev;
    let mut out = TensorGrid::zeros(x_t.shape().to_vec());
    for (o, ((&xv, &mv), &pe)) in out.data_mut().iter_mut().zip(
        x_t.data()
            .iter()
            .zip(mu.data().iter())
            .zip(pi_eps.data().iter()),
    ) {
        *o = mv + ratio * (xv - mv) - w * pe;
    }
    Ok(out)
}

/// Posterior mean and variance of x_{i-1} given (x0 estimate, x_i),
/// elementwise, in the closed form
///
///   mean = mu + (x0-mu) D/(Theta_{i-1} Sigma_i^2)
///             + (x_t-mu) Theta_i Sigma_{i-1}^2/(Theta_{i-1} Sigma_i^2)
///   var  = pi^2 Sigma_{i-1}^2 D / (Theta_{i-1}^2 Sigma_i^2)
///
/// with D = Theta_{i-1}^2 Sigma_i^2 - Theta_i^2 Sigma_{i-1}^2. At i = N
/// (Theta_N = 0) the posterior degenerates to the marginal of x_{N-1}.
pub fn posterior_mean_var(
    x_t: &TensorGrid,
    mu: &TensorGrid,
    x0_est: &TensorGrid,
    pi: &TensorGrid,
    coeffs: &BridgeCoefficients,
    i: usize,
) -> Result<(TensorGrid, TensorGrid)> {
    x_t.same_shape(mu)?;
    x_t.same_shape(x0_est)?;
    x_t.same_shape(pi)?;
    let n = coeffs.n_cells();
    if i == 0 || i > n {
        return Err(RdbmError::IndexOutOfRange { index: i, max: n });
    }
    let (th, sg) = (coeffs.theta[i], coeffs.sigma[i]);
    let (th_prev, sg_prev) = (coeffs.theta[i - 1], coeffs.sigma[i - 1]);
    if th_prev <= 0.0 {
        return Err(RdbmError::Inconsistent(format!(
            "posterior needs Theta_(i-1) > 0 at i = {i}"
        )));
    }
    let (mean_w0, mean_wt, var_shape) = if th == 0.0 {
        // Marginal of x_{i-1}.
        (th_prev, 0.0, sg_prev * sg_prev)
    } else {
        let d = th_prev * th_prev * sg * sg - th * th * sg_prev * sg_prev;
        if d < 0.0 {
            return Err(RdbmError::Inconsistent(format!(
                "negative posterior discriminant at i = {i}"
            )));
        }
        (
            d / (th_prev * sg * sg),
            th * sg_prev * sg_prev / (th_prev * sg * sg),
            sg_prev * sg_prev * d / (th_prev * th_prev * sg * sg),
        )
    };
    let mut mean = TensorGrid::zeros(x_t.shape().to_vec());
    let mut var = TensorGrid::zeros(x_t.shape().to_vec());
    for k in 0..x_t.len() {
        let mv = mu.data()[k];
        mean.data_mut()[k] =
            mv + (x0_est.data()[k] - mv) * mean_w0 + (x_t.data()[k] - mv) * mean_wt;
        let p = pi.data()[k];
        var.data_mut()[k] = p * p * var_shape;
    }
    Ok((mean, var))
}

/// One stochastic reverse step: draws elementwise from the posterior.
pub fn posterior_step(
    x_t: &TensorGrid,
    mu: &TensorGrid,
    x0_est: &TensorGrid,
    pi: &TensorGrid,
    coeffs: &BridgeCoefficients,
    i: usize,
    stream: &mut Stream,
) -> Result<TensorGrid> {
    let (mean, var) = posterior_mean_var(x_t, mu, x0_est, pi, coeffs, i)?;
    let mut out = mean;
    for (o, &v) in out.data_mut().iter_mut().zip(var.data().iter()) {
        *o += v.sqrt() * stream.next_normal();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Ddim,
    Posterior,
}

/// Full reverse loop: x_N = mu, then steps i = N down to 1.
///
/// The predictor maps (x_i, i, mu) to a pi-eps estimate. `steps` must
/// equal the coefficient grid size. Posterior mode reconstructs the x0
/// estimate by inverting the marginal identity at the step's effective
/// coefficients and uses x0_est - mu as the noise profile.
pub fn sample_loop<P>(
    predictor: &P,
    mu: &TensorGrid,
    coeffs: &BridgeCoefficients,
    steps: usize,
    mode: SampleMode,
    stream: &mut Stream,
) -> Result<TensorGrid>
where
    P: Fn(&TensorGrid, usize, &TensorGrid) -> Result<TensorGrid>,
{
    let n = coeffs.n_cells();
    if steps != n {
        return Err(RdbmError::InvalidConfig(format!(
            "sample loop runs on the coefficient grid: steps = {steps} but N = {n}"
        )));
    }
    let mut x = mu.clone();
    for i in (1..=n).rev() {
        let pi_eps = predictor(&x, i, mu)?;
        pi_eps.same_shape(&x)?;
        x = match mode {
            SampleMode::Ddim => ddim_step(&x, mu, &pi_eps, coeffs, i)?,
            SampleMode::Posterior => {
                let (th, sg) = coeffs.step_coeffs(i);
                let mut x0_est = TensorGrid::zeros(x.shape().to_vec());
                for k in 0..x.len() {
                    let mv = mu.data()[k];
                    x0_est.data_mut()[k] =
                        mv + (x.data()[k] - mv - sg * pi_eps.data()[k]) / th;
                }
                let pi_est = x0_est.zip_map(mu, |a, b| a - b)?;
                posterior_step(&x, mu, &x0_est, &pi_est, coeffs, i, stream)?
            }
        };
    }
    Ok(x)
}

/// pi-eps implied by the marginal identity at step i's effective
/// coefficients, given the true x0. Wrapping this in a closure over a
/// known clean image gives the oracle predictor used by recovery tests.
pub fn oracle_pi_eps(
    x0: &TensorGrid,
    x: &TensorGrid,
    mu: &TensorGrid,
    coeffs: &BridgeCoefficients,
    i: usize,
) -> Result<TensorGrid> {
    let (th, sg) = coeffs.step_coeffs(i);
    let mut out = TensorGrid::zeros(x.shape().to_vec());
    for k in 0..x.len() {
        let mv = mu.data()[k];
        out.data_mut()[k] = (x.data()[k] - mv - (x0.data()[k] - mv) * th) / sg;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{compute_coefficients, forward_sample, residual};
    use crate::math::rel_err;
    use crate::schedule::{build_table, ScheduleFamily, ScheduleSpec};
    use crate::sim::posterior_oracle;

    fn coeffs_for(spec: &ScheduleSpec) -> BridgeCoefficients {
        compute_coefficients(&build_table(spec).unwrap(), spec.lambda).unwrap()
    }

    fn const2() -> (ScheduleSpec, BridgeCoefficients) {
        let spec = ScheduleSpec::constant(2.0, 1.0, 10, 0.5);
        let coeffs = coeffs_for(&spec);
        (spec, coeffs)
    }

    #[test]
    fn reverse_coeff_constraints_hold_exactly() {
        let spec = ScheduleSpec::default();
        let c = coeffs_for(&spec);
        for i in 1..c.n_cells() {
            let rc = reverse_coeffs(&c, i).unwrap();
            let lhs1 = rc.kappa * c.theta[i] + rc.gamma;
            assert!(rel_err(lhs1, c.theta[i - 1]) < 1e-12, "i={i}");
            let lhs2 = rc.kappa + rc.eta - rc.kappa * c.theta[i];
            let rhs2 = 1.0 - c.theta[i - 1];
            assert!((lhs2 - rhs2).abs() <= 1e-12 * rhs2.abs().max(1.0), "i={i}");
            // Zero step noise: Sigma_{i-1}^2 = kappa^2 Sigma_i^2.
            let lhs3 = rc.kappa * rc.kappa * c.sigma[i] * c.sigma[i];
            assert!(rel_err(lhs3, c.sigma[i - 1] * c.sigma[i - 1]) < 1e-12, "i={i}");
        }
        assert!(reverse_coeffs(&c, c.n_cells()).is_err(), "Sigma_N = 0");
        assert!(reverse_coeffs(&c, 0).is_err());
    }

    #[test]
    fn two_reverse_forms_agree_with_ground_truth() {
        // mu + kappa (x_t - mu) + gamma pi  vs  the pi-eps form, with the
        // residual noise profile and the true (x0, eps).
        let (_, c) = const2();
        let mut stream = Stream::named(3, "forms");
        for rep in 0..100 {
            let i = 1 + (rep % (c.n_cells() - 1));
            let x0 = TensorGrid::from_scalar(stream.next_normal());
            let mu = TensorGrid::from_scalar(stream.next_normal());
            let pi = residual(&x0, &mu, false).unwrap();
            let eps = TensorGrid::from_scalar(stream.next_normal());
            let x_t = forward_sample(&x0, &mu, &pi, &c, i, &eps).unwrap();
            let rc = reverse_coeffs(&c, i).unwrap();
            let eq18 = mu.data()[0]
                + rc.kappa * (x_t.data()[0] - mu.data()[0])
                + rc.gamma * pi.data()[0];
            let pi_eps = pi.zip_map(&eps, |p, e| p * e).unwrap();
            let eq19 = ddim_step(&x_t, &mu, &pi_eps, &c, i).unwrap().data()[0];
            assert!(rel_err(eq18, eq19) < 1e-10, "rep={rep} i={i}");
        }
    }

    #[test]
    fn ddim_step_fixed_point() {
        let (_, c) = const2();
        let mu = TensorGrid::from_scalar(0.4);
        let zero = TensorGrid::from_scalar(0.0);
        for i in 1..=10 {
            let out = ddim_step(&mu, &mu, &zero, &c, i).unwrap();
            assert_eq!(out.data()[0], 0.4, "i={i}");
        }
    }

    #[test]
    fn ddim_step_direct_value() {
        // mu = 0, Theta_i = 0.324027, Theta_{i-1} = 0.6, x_t = 1,
        // pi_eps = 0: ratio alone, 0.6/0.324027.
        let (_, mut c) = const2();
        c.theta[5] = 0.324027;
        c.theta[4] = 0.6;
        let x = TensorGrid::from_scalar(1.0);
        let mu = TensorGrid::from_scalar(0.0);
        let zero = TensorGrid::from_scalar(0.0);
        let out = ddim_step(&x, &mu, &zero, &c, 5).unwrap();
        assert!(rel_err(out.data()[0], 0.6 / 0.324027) < 1e-12);
        assert!((out.data()[0] - 1.851698).abs() < 1e-5);
    }

    #[test]
    fn ddim_step_round_trip_matches_forward() {
        // Forward to i with known eps, step back with the true pi-eps:
        // equals the forward sample at i-1 with the same eps.
        let (_, c) = const2();
        let mut stream = Stream::named(11, "roundtrip");
        let shape = vec![4];
        for i in 2..=9 {
            let x0 = TensorGrid::zeros(shape.clone()).normal_like(&mut stream);
            let mu = TensorGrid::zeros(shape.clone()).normal_like(&mut stream);
            let pi = residual(&x0, &mu, false).unwrap();
            let eps = TensorGrid::zeros(shape.clone()).normal_like(&mut stream);
            let x_t = forward_sample(&x0, &mu, &pi, &c, i, &eps).unwrap();
            let pi_eps = pi.zip_map(&eps, |p, e| p * e).unwrap();
            let back = ddim_step(&x_t, &mu, &pi_eps, &c, i).unwrap();
            let fwd = forward_sample(&x0, &mu, &pi, &c, i - 1, &eps).unwrap();
            for (b, f) in back.data().iter().zip(fwd.data().iter()) {
                assert!(rel_err(*b, *f) < 1e-10, "i={i}");
            }
        }
    }

    #[test]
    fn posterior_step_matches_scalar_oracle() {
        let (_, c) = const2();
        let mut stream = Stream::named(5, "post");
        for rep in 0..100 {
            let i = 1 + (rep % c.n_cells());
            let x0 = stream.next_normal();
            let mu = stream.next_normal();
            let pi = 0.5 + stream.next_uniform();
            let x_t = stream.next_normal();
            let (mean, var) = posterior_mean_var(
                &TensorGrid::from_scalar(x_t),
                &TensorGrid::from_scalar(mu),
                &TensorGrid::from_scalar(x0),
                &TensorGrid::from_scalar(pi),
                &c,
                i,
            )
            .unwrap();
            let (om, ov) = posterior_oracle(&c, i, x0, mu, pi, x_t).unwrap();
            assert!(
                rel_err(mean.data()[0], om) < 1e-10,
                "rep={rep} i={i}: {} vs {om}",
                mean.data()[0]
            );
            assert!(
                (var.data()[0] - ov).abs() <= 1e-10 * ov.abs().max(1e-12),
                "rep={rep} i={i}: {} vs {ov}",
                var.data()[0]
            );
        }
    }

    #[test]
    fn posterior_step_deterministic_at_first_index() {
        // Sigma_0 = 0: zero posterior variance, output independent of the
        // stream.
        let (_, c) = const2();
        let x_t = TensorGrid::from_scalar(0.31);
        let mu = TensorGrid::from_scalar(0.1);
        let x0 = TensorGrid::from_scalar(0.9);
        let pi = TensorGrid::from_scalar(0.8);
        let mut s1 = Stream::named(1, "a");
        let mut s2 = Stream::named(2, "b");
        let a = posterior_step(&x_t, &mu, &x0, &pi, &c, 1, &mut s1).unwrap();
        let b = posterior_step(&x_t, &mu, &x0, &pi, &c, 1, &mut s2).unwrap();
        assert_eq!(a.data()[0], b.data()[0]);
        assert!(rel_err(a.data()[0], 0.9) < 1e-14);
    }

    #[test]
    fn posterior_chain_recovers_conditional_path_mean() {
        // Deterministic posterior iteration (zero injected noise) with the
        // exact x0 estimate lands on x0.
        let (_, c) = const2();
        let mu = TensorGrid::from_scalar(0.2);
        let x0 = TensorGrid::from_scalar(0.75);
        let pi = residual(&x0, &mu, false).unwrap();
        let mut x = mu.clone();
        for i in (1..=c.n_cells()).rev() {
            let (mean, _) = posterior_mean_var(&x, &mu, &x0, &pi, &c, i).unwrap();
            x = mean;
        }
        assert!(rel_err(x.data()[0], 0.75) < 1e-12);
    }

    #[test]
    fn posterior_step_statistics_match_oracle() {
        let (_, c) = const2();
        let (x0v, muv, piv, xtv, i) = (0.9, 0.1, 0.8, 0.5, 6);
        let (om, ov) = posterior_oracle(&c, i, x0v, muv, piv, xtv).unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let x_t = TensorGrid::from_scalar(xtv);
        let mu = TensorGrid::from_scalar(muv);
        let x0 = TensorGrid::from_scalar(x0v);
        let pi = TensorGrid::from_scalar(piv);
        for k in 0..n {
            let mut s = Stream::indexed(21, "post.stat", k as u64);
            let v = posterior_step(&x_t, &mu, &x0, &pi, &c, i, &mut s).unwrap().data()[0];
            sum += v;
            sum2 += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum2 - n as f64 * mean * mean) / (n as f64 - 1.0);
        let se = (ov / n as f64).sqrt();
        assert!((mean - om).abs() <= 4.0 * se);
        assert!(rel_err(var, ov) < 0.02);
    }

    #[test]
    fn oracle_recovery_all_families() {
        for family in [
            ScheduleFamily::Constant,
            ScheduleFamily::Linear,
            ScheduleFamily::Cosine,
        ] {
            for steps in [10usize, 50] {
                let spec = ScheduleSpec {
                    family,
                    theta_min: if family == ScheduleFamily::Constant { 2.0 } else { 0.01 },
                    theta_max: if family == ScheduleFamily::Constant { 2.0 } else { 1.0 },
                    horizon: 1.0,
                    steps,
                    lambda: 0.5,
                };
                let c = coeffs_for(&spec);
                let mut stream = Stream::named(17, "recovery");
                let shape = vec![6];
                let x0 = TensorGrid::zeros(shape.clone())
                    .normal_like(&mut stream)
                    .map(|v| 0.5 + 0.3 * v);
                let mu = TensorGrid::zeros(shape.clone())
                    .normal_like(&mut stream)
                    .map(|v| 0.5 + 0.3 * v);
                let x0c = x0.clone();
                let predictor = |x: &TensorGrid, i: usize, m: &TensorGrid| {
                    oracle_pi_eps(&x0c, x, m, &c, i)
                };
                let mut rs = Stream::named(17, "recovery.loop");
                let out =
                    sample_loop(&predictor, &mu, &c, steps, SampleMode::Ddim, &mut rs).unwrap();
                for (o, t) in out.data().iter().zip(x0.data().iter()) {
                    assert!(
                        rel_err(*o, *t) < 1e-8,
                        "{:?} N={steps}: {o} vs {t}",
                        family
                    );
                }
            }
        }
    }

    #[test]
    fn identity_task_returns_mu() {
        let (_, c) = const2();
        let mu = TensorGrid::new(vec![3], vec![0.2, 0.5, 0.8]).unwrap();
        let zero_predictor = |x: &TensorGrid, _i: usize, _m: &TensorGrid| {
            Ok(TensorGrid::zeros(x.shape().to_vec()))
        };
        let mut s = Stream::named(1, "id");
        let out = sample_loop(&zero_predictor, &mu, &c, 10, SampleMode::Ddim, &mut s).unwrap();
        assert_eq!(out.data(), mu.data());
    }

    #[test]
    fn reverse_steps_leave_zero_residual_pixels_unchanged() {
        // Exact predictor, pi = x0 - mu: intact pixels never move.
        let (_, c) = const2();
        let x0 = TensorGrid::new(vec![4], vec![0.3, 0.6, 0.2, 0.9]).unwrap();
        let mut mu = x0.clone();
        mu.data_mut()[1] = 0.95;
        let x0c = x0.clone();
        let predictor =
            |x: &TensorGrid, i: usize, m: &TensorGrid| oracle_pi_eps(&x0c, x, m, &c, i);
        let mut x = mu.clone();
        for i in (1..=10).rev() {
            let pe = predictor(&x, i, &mu).unwrap();
            x = ddim_step(&x, &mu, &pe, &c, i).unwrap();
            for k in [0usize, 2, 3] {
                assert!(
                    (x.data()[k] - x0.data()[k]).abs() < 1e-12,
                    "intact pixel {k} moved at step {i}"
                );
            }
        }
    }

    #[test]
    fn sample_loop_rejects_step_mismatch_and_bad_shapes() {
        let (_, c) = const2();
        let mu = TensorGrid::from_scalar(0.5);
        let zero_predictor = |x: &TensorGrid, _i: usize, _m: &TensorGrid| {
            Ok(TensorGrid::zeros(x.shape().to_vec()))
        };
        let mut s = Stream::named(1, "rej");
        assert!(sample_loop(&zero_predictor, &mu, &c, 9, SampleMode::Ddim, &mut s).is_err());
        let bad_predictor =
            |_x: &TensorGrid, _i: usize, _m: &TensorGrid| Ok(TensorGrid::zeros(vec![7]));
        assert!(sample_loop(&bad_predictor, &mu, &c, 10, SampleMode::Ddim, &mut s).is_err());
    }
}
