//! Exact solution of the piecewise-linear logit row equation
//!
//! ```text
//! mu0 + Σ_k min(mu0 · exp(la_k), exp(lc_k)) = n
//! ```
//!
//! in the unknown `mu0 > 0`, working with logarithms throughout so that
//! utilities divided by tiny scales neither overflow nor underflow.

/// Returns `ln mu0`. `la[k]` is the log attractiveness of alternative `k`
/// (utility over scale) and `lc[k]` the log of its capacity; `lc[k]` may be
/// `+inf` for an unconstrained alternative.
pub(crate) fn solve_row(n: f64, la: &[f64], lc: &[f64]) -> f64 {
    debug_assert!(n > 0.0);
    debug_assert_eq!(la.len(), lc.len());
    // Alternative k saturates once ln mu0 reaches lc[k] - la[k].
    let mut order: Vec<usize> = (0..la.len()).collect();
    let brk = |k: usize| lc[k] - la[k];
    order.sort_by(|&a, &b| brk(a).total_cmp(&brk(b)));

    // Suffix log-sum-exp of `la` over unsaturated alternatives, including the
    // outside option (log attractiveness 0).
    let mut suffix = vec![0.0; order.len() + 1];
    for i in (0..order.len()).rev() {
        suffix[i] = log_add(suffix[i + 1], la[order[i]]);
    }

    let mut saturated = 0.0;
    for (i, &k) in order.iter().enumerate() {
        let b = brk(k);
        // Left side at ln mu0 = b, alternatives order[..i] saturated.
        let lhs = (b + suffix[i]).exp() + saturated;
        if lhs >= n {
            return (n - saturated).ln() - suffix[i];
        }
        saturated += lc[k].exp();
    }
    (n - saturated).ln() - suffix[order.len()]
}

/// `ln(e^a + e^b)`.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Matched mass `min(exp(l + la), exp(lc))` for one alternative, returning
/// the capacity bit-exactly when it binds.
pub(crate) fn matched(l: f64, la: f64, lc: f64) -> f64 {
    if l + la >= lc {
        lc.exp()
    } else {
        (l + la).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lhs(l: f64, la: &[f64], lc: &[f64]) -> f64 {
        l.exp()
            + la
                .iter()
                .zip(lc)
                .map(|(&a, &c)| matched(l, a, c))
                .sum::<f64>()
    }

    #[test]
    fn one_breakpoint_example() {
        // mu0 + min(mu0, 0.25) = 1 -> mu0 = 0.75.
        let l = solve_row(1.0, &[0.0], &[0.25f64.ln()]);
        assert_abs_diff_eq!(l.exp(), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn two_alternatives_one_binding() {
        // mu0 + min(mu0, 0.1) + min(mu0, 10) = 1 -> mu0 = 0.45.
        let l = solve_row(1.0, &[0.0, 0.0], &[0.1f64.ln(), 10f64.ln()]);
        assert_abs_diff_eq!(l.exp(), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn no_binding_constraint_is_plain_logit() {
        let la = [0.3, -1.0, 2.0];
        let l = solve_row(2.0, &la, &[f64::INFINITY; 3]);
        let denom = 1.0 + la.iter().map(|a: &f64| a.exp()).sum::<f64>();
        assert_abs_diff_eq!(l.exp(), 2.0 / denom, epsilon = 1e-15);
    }

    #[test]
    fn huge_attractiveness_does_not_overflow() {
        // Utilities 2 and 1 at scale 2^-20: both alternatives fill up, so
        // mu0 + 1/3 + 1/3 = 1.
        let la = [2.0 * 2f64.powi(20), 2f64.powi(20)];
        let lc = [(1.0f64 / 3.0).ln(), (1.0f64 / 3.0).ln()];
        let l = solve_row(1.0, &la, &lc);
        assert_abs_diff_eq!(l.exp(), 1.0 / 3.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn solution_satisfies_the_row_equation(
            n in 0.1f64..5.0,
            la in proptest::collection::vec(-4.0f64..4.0, 1..8),
            caps in proptest::collection::vec(0.001f64..5.0, 8),
        ) {
            let lc: Vec<f64> = caps[..la.len()].iter().map(|c| c.ln()).collect();
            let l = solve_row(n, &la, &lc);
            prop_assert!(l.is_finite());
            let r = lhs(l, &la, &lc) - n;
            prop_assert!(r.abs() <= 1e-12 * n.max(1.0), "residual {}", r);
        }
    }
}
