//! Random-utility equilibrium.
//!
//! With a single signed wait `tau[[x, y]]` per segment (passengers wait
//! `tau⁺`, taxis wait `tau⁻`), equilibrium is the zero of the excess demand
//! `e(tau) = mu_gamma(tau⁻) - mu_alpha(tau⁺)`. The general solver runs
//! monotone Gauss–Seidel from a point where `e <= 0`; the logit solver uses
//! the closed-form system in the unmatched masses.

mod logit;
mod mfunction;

pub use logit::{logit_margins, solve_equilibrium_logit, LogitMargins};
pub(crate) use logit::logit_margins_accepting;
pub use mfunction::{check_mfunction, inverse_isotone_pair, matching_functions, MatchingFunctions};

use ndarray::Array2;

use crate::constrained::SweepOrder;
use crate::demand::{check_tau, DemandProvider, ShockProvider};
use crate::error::{Error, Result};
use crate::model::{Diagnostics, EquilibriumOutcome, MarketSpec, Matching, Side, WaitMatrix};
use crate::scalar::lower_root;

#[derive(Debug, Clone, Copy)]
pub struct EquilibriumOptions {
    /// Target sup-norm of the excess demand.
    pub tol: f64,
    /// Cap on full sweeps (general solver) or alternations (logit solver).
    pub max_iter: usize,
    pub order: SweepOrder,
}

impl Default for EquilibriumOptions {
    fn default() -> Self {
        EquilibriumOptions {
            tol: 1e-9,
            max_iter: 100_000,
            order: SweepOrder::RowMajor,
        }
    }
}

impl EquilibriumOptions {
    pub fn with_tol(tol: f64) -> Self {
        EquilibriumOptions {
            tol,
            ..Default::default()
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Both demand providers of a market.
pub struct ExcessDemand {
    pub alpha: ShockProvider,
    pub gamma: ShockProvider,
}

impl ExcessDemand {
    pub fn new(spec: &MarketSpec) -> Result<Self> {
        Ok(ExcessDemand {
            alpha: ShockProvider::new(spec, Side::Alpha)?,
            gamma: ShockProvider::new(spec, Side::Gamma)?,
        })
    }

    pub fn is_smooth(&self) -> bool {
        self.alpha.exactness().is_smooth() && self.gamma.exactness().is_smooth()
    }

    /// `e(tau)` together with the passenger-side demand at `tau⁺`.
    pub fn eval(&self, tau: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (mu_a, _) = self.alpha.demand_unchecked(&tau.mapv(|t| t.max(0.0)));
        let (mu_g, _) = self.gamma.demand_unchecked(&tau.mapv(|t| (-t).max(0.0)));
        (&mu_g - &mu_a, mu_a)
    }
}

/// Excess demand `mu_gamma(tau⁻) - mu_alpha(tau⁺)`.
pub fn excess_demand_eval(spec: &MarketSpec, tau: &Array2<f64>) -> Result<Array2<f64>> {
    check_tau(tau, spec.dims())?;
    let ed = ExcessDemand::new(spec)?;
    if !ed.is_smooth() {
        return Err(Error::ProviderNotSmooth("excess demand".to_string()));
    }
    Ok(ed.eval(tau).0)
}

pub(crate) fn sup_norm(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solves for the equilibrium by monotone Gauss–Seidel on the excess demand.
pub fn solve_equilibrium(spec: &MarketSpec, opts: &EquilibriumOptions) -> Result<EquilibriumOutcome> {
    solve_equilibrium_observed(spec, opts, &mut |_| {})
}

/// Starting level `c` such that `e(-c) <= 0` everywhere: taxis then face
/// waits `c` on every segment while passengers face none.
fn lower_start(ed: &ExcessDemand, spec: &MarketSpec) -> Result<f64> {
    let spread = |a: &Array2<f64>| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sigma = ed
        .alpha
        .logit_scales()
        .into_iter()
        .flatten()
        .chain(ed.gamma.logit_scales().into_iter().flatten())
        .fold(1.0f64, f64::max);
    let mass: f64 = spec.n.iter().chain(&spec.m).sum();
    let mut c = spread(&spec.alpha) + spread(&spec.gamma) + sigma * (1.0 + mass.ln().max(0.0));
    let (nx, ny) = spec.dims();
    for _ in 0..64 {
        let (e, _) = ed.eval(&Array2::from_elem((nx, ny), -c));
        if e.iter().all(|&v| v <= 0.0) {
            return Ok(c);
        }
        c *= 2.0;
    }
    Err(Error::NotConverged {
        solver: "equilibrium start".to_string(),
        iterations: 64,
        residual: c,
    })
}

/// [`solve_equilibrium`] with an observer called with the signed wait
/// matrix after every sweep.
pub fn solve_equilibrium_observed(
    spec: &MarketSpec,
    opts: &EquilibriumOptions,
    observer: &mut dyn FnMut(&Array2<f64>),
) -> Result<EquilibriumOutcome> {
    opts.check()?;
    let ed = ExcessDemand::new(spec)?;
    if !ed.is_smooth() {
        return Err(Error::ProviderNotSmooth(
            "the coordinate solver needs continuous demand".to_string(),
        ));
    }
    let (nx, ny) = spec.dims();
    let cbar = lower_start(&ed, spec)?;
    let mut tau = Array2::from_elem((nx, ny), -cbar);
    let mut tp = Array2::<f64>::zeros((nx, ny));
    let mut tn = Array2::from_elem((nx, ny), cbar);
    let mut buf_a = vec![0.0; ny];
    let mut buf_g = vec![0.0; nx];
    let ftol = opts.tol / 10.0;
    let segments = opts.order.segments(nx, ny);
    let mut residual = f64::INFINITY;

    for sweep in 1..=opts.max_iter {
        for &(x, y) in &segments {
            let old = tau[[x, y]];
            tp[[x, y]] = 0.0;
            tn[[x, y]] = 0.0;
            let a0 = ed.alpha.segment_demand(x, y, &tp, &mut buf_a);
            let g0 = ed.gamma.segment_demand(x, y, &tn, &mut buf_g);
            let new = if g0 >= a0 {
                // Root at or below zero: only the taxi side moves.
                if old >= 0.0 {
                    old
                } else {
                    let mut f = |t: f64| {
                        tn[[x, y]] = (-t).max(0.0);
                        ed.gamma.segment_demand(x, y, &tn, &mut buf_g) - a0
                    };
                    let flo = f(old);
                    if flo > 0.0 {
                        old
                    } else {
                        lower_root(&mut f, old, flo, 0.0, ftol, 400).x.min(0.0)
                    }
                }
            } else {
                let lo = old.max(0.0);
                let mut f = |t: f64| {
                    tp[[x, y]] = t.max(0.0);
                    g0 - ed.alpha.segment_demand(x, y, &tp, &mut buf_a)
                };
                let flo = if lo == 0.0 { g0 - a0 } else { f(lo) };
                if flo > 0.0 {
                    lo
                } else {
                    lower_root(&mut f, lo, flo, lo + 1.0, ftol, 400).x
                }
            };
            let new = new.max(old);
            tau[[x, y]] = new;
            tp[[x, y]] = new.max(0.0);
            tn[[x, y]] = (-new).max(0.0);
        }
        observer(&tau);
        let (e, _) = ed.eval(&tau);
        residual = sup_norm(&e);
        if residual <= opts.tol {
            return Ok(outcome_from_tau(&ed, &tau, "general", sweep, residual));
        }
    }
    Err(Error::NotConverged {
        solver: "equilibrium (general)".to_string(),
        iterations: opts.max_iter,
        residual,
    })
}

fn outcome_from_tau(
    ed: &ExcessDemand,
    tau: &Array2<f64>,
    solver: &str,
    iterations: usize,
    residual: f64,
) -> EquilibriumOutcome {
    let (_, mu) = ed.eval(tau);
    EquilibriumOutcome {
        matching: Matching::new(mu),
        tau_alpha: WaitMatrix::positive_part(tau),
        tau_gamma: WaitMatrix::negative_part(tau),
        diagnostics: Diagnostics {
            solver: solver.to_string(),
            iterations,
            residual,
            seed: None,
        },
    }
}

/// Equilibrium residual of an arbitrary outcome:
/// `max(|mu_alpha(tau_alpha) - mu|, |mu_gamma(tau_gamma) - mu|)` together
/// with the largest two-sided wait `min(tau_alpha, tau_gamma)`.
pub fn definition4_residual(spec: &MarketSpec, out: &EquilibriumOutcome) -> Result<(f64, f64)> {
    let ed = ExcessDemand::new(spec)?;
    let (mu_a, _) = ed.alpha.demand(&out.tau_alpha)?;
    let (mu_g, _) = ed.gamma.demand(&out.tau_gamma)?;
    let r = sup_norm(&(&mu_a - &*out.matching)).max(sup_norm(&(&mu_g - &*out.matching)));
    Ok((r, out.two_sided_wait()))
}
