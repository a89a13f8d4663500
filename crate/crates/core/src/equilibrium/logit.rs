//! Closed-form logit equilibrium.
//!
//! With logit shocks the matched mass is
//! `mu_xy = min(mu_x0 exp(alpha_xy / s_x), mu_0y exp(gamma_xy / s_y))`, so
//! equilibrium reduces to one piecewise-linear equation per type in the
//! unmatched masses. Rows and columns are solved exactly in turn, starting
//! from `mu_0y = m_y`, until the row equations also hold.

use ndarray::Array2;

use super::{EquilibriumOptions, ExcessDemand};
use crate::demand::DemandProvider;
use crate::error::{Error, Result};
use crate::logit::{matched, solve_row};
use crate::model::{Diagnostics, EquilibriumOutcome, MarketSpec, Matching, WaitMatrix};

/// Converged logit system, kept in logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMargins {
    /// `ln mu_x0`.
    pub log_outside_x: Vec<f64>,
    /// `ln mu_0y`.
    pub log_outside_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl LogitMargins {
    /// `(A, B)` with `A = ln mu_x0 + alpha / s_x`, `B = ln mu_0y + gamma / s_y`.
    fn log_offers(&self, spec: &MarketSpec, x: usize, y: usize) -> (f64, f64) {
        (
            self.log_outside_x[x] + spec.alpha[[x, y]] / self.sigma_x[x],
            self.log_outside_y[y] + spec.gamma[[x, y]] / self.sigma_y[y],
        )
    }

    pub fn outcome(&self, spec: &MarketSpec) -> EquilibriumOutcome {
        let (nx, ny) = spec.dims();
        let mut mu = Array2::zeros((nx, ny));
        let mut ta = Array2::zeros((nx, ny));
        let mut tg = Array2::zeros((nx, ny));
        for x in 0..nx {
            for y in 0..ny {
                let (a, b) = self.log_offers(spec, x, y);
                mu[[x, y]] = a.min(b).exp();
                // Exactly one of the two is positive, or both are zero.
                ta[[x, y]] = self.sigma_x[x] * (a - b).max(0.0);
                tg[[x, y]] = self.sigma_y[y] * (b - a).max(0.0);
            }
        }
        EquilibriumOutcome {
            matching: Matching::new(mu),
            tau_alpha: WaitMatrix::positive_part(&ta),
            tau_gamma: WaitMatrix::positive_part(&tg),
            diagnostics: Diagnostics {
                solver: "logit".to_string(),
                iterations: self.iterations,
                residual: self.residual,
                seed: None,
            },
        }
    }
}

/// Solves the logit system for the unmatched masses.
pub fn logit_margins(spec: &MarketSpec, opts: &EquilibriumOptions) -> Result<LogitMargins> {
    logit_margins_accepting(spec, opts, opts.tol)
}

/// Like [`logit_margins`], but once `max_iter` alternations are spent the
/// last iterate is still returned if its residual is at most `accept`.
pub(crate) fn logit_margins_accepting(
    spec: &MarketSpec,
    opts: &EquilibriumOptions,
    accept: f64,
) -> Result<LogitMargins> {
    opts.check()?;
    let ed = ExcessDemand::new(spec)?;
    let precondition = || Error::Precondition("the closed-form solver requires logit shocks".into());
    let sigma_x = ed.alpha.logit_scales().ok_or_else(precondition)?;
    let sigma_y = ed.gamma.logit_scales().ok_or_else(precondition)?;
    let (nx, ny) = spec.dims();
    let mut lx = vec![0.0; nx];
    let mut ly: Vec<f64> = spec.m.iter().map(|m| m.ln()).collect();
    let mut la = vec![0.0; ny.max(nx)];
    let mut lc = vec![0.0; ny.max(nx)];
    let mut best = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iter {
        for x in 0..nx {
            for y in 0..ny {
                la[y] = spec.alpha[[x, y]] / sigma_x[x];
                lc[y] = ly[y] + spec.gamma[[x, y]] / sigma_y[y];
            }
            lx[x] = solve_row(spec.n[x], &la[..ny], &lc[..ny]);
        }
        for y in 0..ny {
            for x in 0..nx {
                la[x] = spec.gamma[[x, y]] / sigma_y[y];
                lc[x] = lx[x] + spec.alpha[[x, y]] / sigma_x[x];
            }
            ly[y] = solve_row(spec.m[y], &la[..nx], &lc[..nx]);
        }
        // Columns now hold exactly; measure the row equations.
        residual = 0.0f64;
        for x in 0..nx {
            let mut total = lx[x].exp();
            for y in 0..ny {
                total += matched(
                    lx[x],
                    spec.alpha[[x, y]] / sigma_x[x],
                    ly[y] + spec.gamma[[x, y]] / sigma_y[y],
                );
            }
            residual = residual.max((total - spec.n[x]).abs());
        }
        if residual <= opts.tol {
            return Ok(LogitMargins {
                log_outside_x: lx,
                log_outside_y: ly,
                sigma_x,
                sigma_y,
                iterations: iter,
                residual,
            });
        }
        if residual > 2.0 * best && best > 1e-13 {
            return Err(Error::InvariantViolation(format!(
                "logit alternation lost monotonicity at iteration {iter}: residual {residual:e} after {best:e}"
            )));
        }
        best = best.min(residual);
    }
    if residual <= accept {
        return Ok(LogitMargins {
            log_outside_x: lx,
            log_outside_y: ly,
            sigma_x,
            sigma_y,
            iterations: opts.max_iter,
            residual,
        });
    }
    Err(Error::NotConverged {
        solver: "equilibrium (logit)".to_string(),
        iterations: opts.max_iter,
        residual,
    })
}

/// Logit equilibrium by alternating exact row and column solves.
pub fn solve_equilibrium_logit(
    spec: &MarketSpec,
    opts: &EquilibriumOptions,
) -> Result<EquilibriumOutcome> {
    Ok(logit_margins(spec, opts)?.outcome(spec))
}
