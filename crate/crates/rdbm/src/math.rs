//! Numerical helpers: stable log-sinh / coth and Simpson quadrature.

/// log(sinh(a)) for a >= 0, stable across the whole range.
///
/// sinh overflows for a > ~710 and cancels badly near 0, so we work in
/// log space: for large a, log sinh a = a + log1p(-e^{-2a}) - log 2; below
/// 1e-3 a series of sinh is accurate to full precision.
/// Returns -inf at a = 0.
pub fn log_sinh(a: f64) -> f64 {
    debug_assert!(a >= 0.0, "log_sinh domain is a >= 0, got {a}");
    if a == 0.0 {
        f64::NEG_INFINITY
    } else if a < 1e-3 {
        // sinh a = a (1 + a^2/6 + a^4/120 + ...)
        let a2 = a * a;
        a.ln() + (a2 / 6.0 * (1.0 + a2 / 20.0)).ln_1p()
    } else {
        a + (-(-2.0 * a).exp()).ln_1p() - std::f64::consts::LN_2
    }
}

/// sinh(x)/sinh(y) for x, y >= 0 via log-space difference.
pub fn sinh_ratio(x: f64, y: f64) -> f64 {
    (log_sinh(x) - log_sinh(y)).exp()
}

/// coth(a) for a > 0; series below 1e-4 avoids the 1/sinh blow-up.
pub fn coth(a: f64) -> f64 {
    debug_assert!(a > 0.0, "coth domain is a > 0, got {a}");
    if a < 1e-4 {
        1.0 / a + a / 3.0 - a * a * a / 45.0
    } else {
        let e = (-2.0 * a).exp();
        (1.0 + e) / (1.0 - e)
    }
}

/// 1 - e^{-2a}, accurate for small a.
pub fn one_minus_exp_neg2(a: f64) -> f64 {
    -(-2.0 * a).exp_m1()
}

/// Composite Simpson rule with `n` subintervals (rounded up to even).
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let n = if n % 2 == 0 { n.max(2) } else { n + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
///
/// Used where the integrand steepens near one end (the reverse-rate
/// integrand grows like 1/(T-s)); fixed grids would need very fine
/// resolution there.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let h = b - a;
        let left = h / 12.0 * (fa + 4.0 * flm + fm);
        let right = h / 12.0 * (fm + 4.0 * frm + fb);
        let s2 = left + right;
        if depth == 0 || (s2 - whole).abs() <= 15.0 * tol {
            s2 + (s2 - whole) / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// |x - y| / max(|x|, |y|, floor): relative error with an absolute floor.
pub fn rel_err(x: f64, y: f64) -> f64 {
    let scale = x.abs().max(y.abs()).max(1e-300);
    (x - y).abs() / scale
}
