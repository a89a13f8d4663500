//! Bracketed root finding for nondecreasing scalar functions.
//!
//! Solvers built on monotone coordinate updates need the returned point to
//! stay on the low side of the root, so the result is always the lower
//! bracket endpoint `x` with `f(x) <= 0`.

/// Result of [`lower_root`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Root {
    pub x: f64,
    pub fx: f64,
    pub evals: usize,
}

/// Finds `x >= lo` with `-ftol <= f(x) <= 0` for nondecreasing `f`.
///
/// `flo = f(lo)` must be `<= 0`. `hi` is a first guess for the upper end of
/// the bracket; it is pushed upward geometrically while `f(hi) < 0`. The
/// iteration is regula falsi with the Illinois modification and a bisection
/// step whenever the bracket fails to halve. If the bracket collapses to
/// adjacent floats before `ftol` is met, the lower endpoint is returned
/// anyway and the caller sees the residual in `fx`.
pub(crate) fn lower_root(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    flo: f64,
    hi: f64,
    ftol: f64,
    max_evals: usize,
) -> Root {
    debug_assert!(flo <= 0.0);
    let (mut a, mut fa) = (lo, flo);
    let mut evals = 0;
    if fa >= -ftol {
        return Root { x: a, fx: fa, evals };
    }
    let mut step = (hi - lo).max(1e-3);
    let mut b = lo + step;
    let mut fb = f(b);
    evals += 1;
    while fb < 0.0 {
        a = b;
        fa = fb;
        if fa >= -ftol || evals >= max_evals {
            return Root { x: a, fx: fa, evals };
        }
        step *= 2.0;
        b = a + step;
        fb = f(b);
        evals += 1;
    }
    // Scaled copies for the Illinois update; fa, fb keep the true values.
    let (mut ga, mut gb) = (fa, fb);
    let mut last_side = 0i8;
    let mut width = b - a;
    while evals < max_evals {
        let mut x = b - gb * (b - a) / (gb - ga);
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        if x <= a || x >= b {
            // a and b are adjacent floats.
            break;
        }
        let fx = f(x);
        evals += 1;
        if fx <= 0.0 {
            a = x;
            fa = fx;
            ga = fx;
            if last_side == -1 {
                gb *= 0.5;
            }
            last_side = -1;
            if fa >= -ftol {
                break;
            }
        } else {
            b = x;
            fb = fx;
            gb = fx;
            if last_side == 1 {
                ga *= 0.5;
            }
            last_side = 1;
        }
        let new_width = b - a;
        if new_width > 0.5 * width {
            // Slow progress: force a bisection step.
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = f(m);
            evals += 1;
            if fm <= 0.0 {
                a = m;
                fa = fm;
                ga = fm;
                if fa >= -ftol {
                    break;
                }
            } else {
                b = m;
                fb = fm;
                gb = fm;
            }
        }
        width = b - a;
    }
    let _ = fb;
    Root { x: a, fx: fa, evals }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cubic_root_from_below() {
        let f = |x: f64| x * x * x - 2.0;
        let r = lower_root(f, 0.0, -2.0, 1.0, 1e-13, 200);
        assert!(r.fx <= 0.0 && r.fx >= -1e-13);
        assert!((r.x - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn bracket_expands_upward() {
        let f = |x: f64| x - 1000.0;
        let r = lower_root(f, -5.0, -1005.0, -4.0, 1e-12, 500);
        assert!(r.x <= 1000.0 && r.x > 1000.0 - 1e-12);
    }

    #[test]
    fn already_at_root() {
        let r = lower_root(|x| x, 0.0, 0.0, 1.0, 1e-12, 10);
        assert_eq!((r.x, r.evals), (0.0, 0));
    }

    #[test]
    fn flat_steep_function() {
        // Very asymmetric: regula falsi alone would stall.
        let f = |x: f64| (20.0 * x).exp() - 1.0;
        let r = lower_root(f, -3.0, f(-3.0), 3.0, 1e-14, 400);
        assert!(r.fx <= 0.0 && r.fx >= -1e-14, "{r:?}");
        assert!(r.evals < 200, "{r:?}");
    }

    proptest! {
        #[test]
        fn result_is_below_root(shift in -50.0f64..50.0, scale in 0.01f64..100.0) {
            let f = |x: f64| scale * (x - shift).tanh() + 0.01 * (x - shift);
            let lo = shift - 30.0;
            let r = lower_root(f, lo, f(lo), lo + 1.0, 1e-12, 400);
            prop_assert!(r.fx <= 0.0);
            prop_assert!(r.x <= shift + 1e-9);
            prop_assert!(r.fx >= -1e-12 || (r.x - shift).abs() < 1e-12);
        }
    }
}
