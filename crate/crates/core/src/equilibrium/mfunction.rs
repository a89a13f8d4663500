//! Randomized checks of the M-function structure of excess demand, and the
//! closed-form matching functions.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ExcessDemand;
use crate::demand::{PropertyReport, Violation};
use crate::error::{Error, Result};
use crate::model::MarketSpec;

/// Relative slack for weak inequalities between floating-point demands.
const WEAK_SLACK: f64 = 1e-12;

/// Checks on random waits that the excess demand is off-diagonally
/// antitone, that its sum is strictly increasing in every coordinate, and
/// that it is inverse isotone on random ordered pairs.
///
/// Every trial performs all three checks. Waits are drawn in `[-3, 3]`.
pub fn check_mfunction(spec: &MarketSpec, trials: usize, seed: u64) -> Result<PropertyReport> {
    let ed = ExcessDemand::new(spec)?;
    if !ed.is_smooth() {
        return Err(Error::ProviderNotSmooth("M-function checks".to_string()));
    }
    let (nx, ny) = spec.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut checks = 0;
    for trial in 0..trials {
        let tau = Array2::from_shape_fn((nx, ny), |_| rng.random_range(-3.0..3.0));
        let (e0, _) = ed.eval(&tau);

        // (a) and (b): bump one coordinate.
        let (bx, by) = (rng.random_range(0..nx), rng.random_range(0..ny));
        let delta = rng.random_range(1e-3..=1.0);
        let mut bumped = tau.clone();
        bumped[[bx, by]] += delta;
        let (e1, _) = ed.eval(&bumped);
        for ((x, y), &before) in e0.indexed_iter() {
            if (x, y) == (bx, by) {
                continue;
            }
            checks += 1;
            let after = e1[[x, y]];
            if after > before + WEAK_SLACK * before.abs().max(1.0) {
                violations.push(Violation {
                    property: "off-diagonal antitone".to_string(),
                    witness: format!(
                        "trial {trial}: raising tau[{bx}][{by}] by {delta} moved e[{x}][{y}] {before} -> {after}"
                    ),
                });
            }
        }
        checks += 1;
        let (s0, s1) = (e0.sum(), e1.sum());
        if !(s1 > s0) {
            violations.push(Violation {
                property: "aggregate strictly increasing".to_string(),
                witness: format!(
                    "trial {trial}: raising tau[{bx}][{by}] by {delta} moved sum(e) {s0} -> {s1}"
                ),
            });
        }

        // (c): tau <= tau' with tau != tau' must not give e(tau) >= e(tau').
        let mut upper = tau.clone();
        let mut changed = false;
        for v in upper.iter_mut() {
            if rng.random_bool(0.5) {
                *v += rng.random_range(1e-3..=2.0);
                changed = true;
            }
        }
        if changed {
            checks += 1;
            let (eu, _) = ed.eval(&upper);
            if e0.iter().zip(eu.iter()).all(|(a, b)| a >= b) {
                violations.push(Violation {
                    property: "inverse isotone".to_string(),
                    witness: format!("trial {trial}: e(tau) >= e(tau') with tau <= tau', tau = {tau}, tau' = {upper}"),
                });
            }
        }
    }
    Ok(PropertyReport {
        trials,
        checks,
        violations,
    })
}

/// Inverse isotonicity on one explicit pair: `true` unless `tau <= tau'`,
/// `tau != tau'` and `e(tau) >= e(tau')`. Identical pairs pass vacuously.
pub fn inverse_isotone_pair(
    spec: &MarketSpec,
    tau: &Array2<f64>,
    tau_prime: &Array2<f64>,
) -> Result<bool> {
    let ed = ExcessDemand::new(spec)?;
    let ordered = tau.iter().zip(tau_prime.iter()).all(|(a, b)| a <= b);
    if !ordered || tau == tau_prime {
        return Ok(true);
    }
    let (e, _) = ed.eval(tau);
    let (ep, _) = ed.eval(tau_prime);
    Ok(!e.iter().zip(ep.iter()).all(|(a, b)| a >= b))
}

/// Matched mass predicted by three matching functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchingFunctions {
    /// `mu_x0 mu_0y exp(alpha + gamma)`.
    pub menzel: f64,
    /// `sqrt(mu_x0 mu_0y exp(alpha + gamma))`.
    pub choo_siow: f64,
    /// `min(mu_x0 exp(alpha), mu_0y exp(gamma))`.
    pub leontief: f64,
}

pub fn matching_functions(
    mu_x0: f64,
    mu_0y: f64,
    alpha: f64,
    gamma: f64,
) -> Result<MatchingFunctions> {
    if !(mu_x0 > 0.0 && mu_0y > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "unmatched masses must be positive, got mu_x0 = {mu_x0}, mu_0y = {mu_0y}"
        )));
    }
    if !(alpha.is_finite() && gamma.is_finite() && mu_x0.is_finite() && mu_0y.is_finite()) {
        return Err(Error::InvalidArgument("non-finite matching-function input".to_string()));
    }
    let menzel = mu_x0 * mu_0y * (alpha + gamma).exp();
    Ok(MatchingFunctions {
        menzel,
        choo_siow: menzel.sqrt(),
        leontief: (mu_x0 * alpha.exp()).min(mu_0y * gamma.exp()),
    })
}
