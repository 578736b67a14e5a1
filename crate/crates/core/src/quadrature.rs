//! Adaptive Gauss–Kronrod quadrature on finite intervals.
//!
//! A 7-point Gauss rule embedded in a 15-point Kronrod extension gives both
//! an integral estimate and an error estimate per panel; panels whose error
//! exceeds their share of the budget are bisected. Real and complex
//! integrands are supported (complex integrates the parts independently).

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("integration bounds [{0}, {1}] are not finite and increasing")]
    BadInterval(f64, f64),
    #[error("quadrature did not reach tolerance {requested:e}; achieved {achieved:e}")]
    NotConverged { requested: f64, achieved: f64 },
}

// 15-point Kronrod abscissae on [-1, 1] (positive half; rule is symmetric)
// and the matching Kronrod / embedded 7-point Gauss weights.
const XK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.000000000000000,
];
const WK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One G7-K15 evaluation on `[a, b]`: returns the Kronrod value, an error
/// estimate, and the Kronrod estimate of the integral of `|f|` (the
/// roundoff yardstick).
///
/// The raw `|kronrod - gauss|` difference can be deceptively small on
/// panels spanning several oscillation periods (both rules alias the same
/// way), so it is rescaled against the integrand's variation on the panel:
/// `resasc * min(1, (200 err / resasc)^1.5)`. A tiny raw difference on a
/// panel with large variation is treated as suspect and inflated toward
/// the variation scale, forcing a split; once subdivision genuinely
/// resolves the integrand the ratio collapses and the estimate is trusted.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut fv = [0.0; 15];
    fv[7] = fc;
    let mut kronrod = WK[7] * fc;
    let mut gauss = WG[3] * fc;
    let mut resabs = WK[7] * fc.abs();
    for i in 0..7 {
        let dx = half * XK[i];
        let (lo, hi) = (f(center - dx), f(center + dx));
        fv[i] = lo;
        fv[14 - i] = hi;
        let sum = lo + hi;
        kronrod += WK[i] * sum;
        resabs += WK[i] * (lo.abs() + hi.abs());
        if i % 2 == 1 {
            gauss += WG[i / 2] * sum;
        }
    }
    let mean = 0.5 * kronrod;
    let mut resasc = WK[7] * (fc - mean).abs();
    for i in 0..7 {
        resasc += WK[i] * ((fv[i] - mean).abs() + (fv[14 - i] - mean).abs());
    }
    resasc *= half;
    let mut error = ((kronrod - gauss) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * 1.0_f64.min((200.0 * error / resasc).powf(1.5));
    }
    (kronrod * half, error, resabs * half)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Interval halving proceeds depth-first with each panel allotted a budget
/// proportional to its width. A panel is also accepted once its error
/// estimate falls to the rounding floor `50 eps ∫|f|` — past that point
/// `|kronrod - gauss|` measures accumulated roundoff, which shrinks in
/// lockstep with the budget under further bisection, so subdividing can
/// never help. Panels at the depth limit that still miss both marks make
/// the call fail rather than silently degrade.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, QuadratureError> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(QuadratureError::BadInterval(a, b));
    }
    let width = b - a;
    let mut total = 0.0;
    let mut achieved = 0.0;
    let mut converged = true;
    // (a, b, depth) work stack; 48 levels of bisection exhausts f64 spacing.
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (value, error, resabs) = gk15(&mut f, lo, hi);
        let budget = tol * (hi - lo) / width;
        if error <= budget || error <= 50.0 * f64::EPSILON * resabs {
            total += value;
            achieved += error;
        } else if depth >= 48 {
            total += value;
            achieved += error;
            converged = false;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    if converged {
        Ok(total)
    } else {
        Err(QuadratureError::NotConverged {
            requested: tol,
            achieved,
        })
    }
}

/// Complex-valued integral over `[a, b]`, parts integrated independently.
pub fn integrate_complex<F: FnMut(f64) -> Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<Complex64, QuadratureError> {
    let re = integrate(|x| f(x).re, a, b, tol)?;
    let im = integrate(|x| f(x).im, a, b, tol)?;
    Ok(Complex64::new(re, im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_is_exact() {
        // Degree-22 polynomial exceeds the 15-point rule's degree, forcing
        // at least one subdivision; compare against the monomial antiderivative.
        let v = integrate(|x| x.powi(22) - 3.0 * x.powi(5), 0.0, 2.0, 1e-10).unwrap();
        let exact = 2.0f64.powi(23) / 23.0 - 3.0 * 2.0f64.powi(6) / 6.0;
        assert_abs_diff_eq!(v, exact, epsilon = 1e-8);
    }

    #[test]
    fn oscillatory_integrand() {
        let v = integrate(|x| (40.0 * x).cos(), 0.0, PI, 1e-10).unwrap();
        assert_abs_diff_eq!(v, (40.0 * PI).sin() / 40.0, epsilon = 1e-9);
    }

    #[test]
    fn aliased_oscillation_is_not_accepted_early() {
        // A decaying cosine at ~31 half-periods over the interval; at coarse
        // depth Kronrod and Gauss alias the oscillation the same way and the
        // raw error estimate understates the true error by ~1e3. Exercises the
        // variation-scaled inflation, without which this misses by ~2e-6.
        let (a, w) = (6.148754619013798, 62.77162787166707);
        let v = integrate(|x| (-a * x).exp() * (w * x).cos(), 0.0, PI, 1e-9).unwrap();
        let exact = ((-a * PI).exp() * (w * (PI * w).sin() - a * (PI * w).cos()) + a)
            / (a * a + w * w);
        assert_abs_diff_eq!(v, exact, epsilon = 1e-7);
        let tight = integrate(|x| (-a * x).exp() * (w * x).cos(), 0.0, PI, 1e-12).unwrap();
        assert_abs_diff_eq!(tight, exact, epsilon = 1e-11);
    }

    #[test]
    fn kinked_integrand() {
        let v = integrate(|x| x.abs(), -1.0, 2.0, 1e-10).unwrap();
        assert_abs_diff_eq!(v, 2.5, epsilon = 1e-9);
    }

    #[test]
    fn laplacian_density_normalizes() {
        let sigma: f64 = 0.1;
        let b = sigma / 2.0f64.sqrt();
        let norm = 1.0 - (-PI / b).exp();
        let v = integrate(
            |x| (-(x.abs() * 2.0f64.sqrt() / sigma)).exp() / (2.0f64.sqrt() * sigma) / norm * 2.0,
            -PI,
            PI,
            1e-10,
        )
        .unwrap();
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn complex_integrand_matches_euler() {
        let v = integrate_complex(|x| Complex64::from_polar(1.0, x), 0.0, PI / 2.0, 1e-10).unwrap();
        assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.im, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_interval() {
        assert!(integrate(|x| x, 1.0, 0.0, 1e-8).is_err());
        assert!(integrate(|x| x, 0.0, f64::INFINITY, 1e-8).is_err());
    }

    #[test]
    fn reports_nonconvergence() {
        // 1/sqrt(x) is integrable but the endpoint singularity defeats a
        // fixed-depth bisection at this tolerance.
        let r = integrate(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-12);
        match r {
            Err(QuadratureError::NotConverged { requested, achieved }) => {
                assert_eq!(requested, 1e-12);
                assert!(achieved > requested);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
