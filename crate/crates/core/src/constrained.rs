//! Capacity-constrained discrete choice.
//!
//! Given capacities `mu_bar`, find `theta` with
//! `demand(theta⁺) + theta⁻ = mu_bar`: segments whose demand would exceed
//! capacity get a positive wait `theta⁺`, the others keep slack `theta⁻`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{roles, DemandProvider};
use crate::error::{Error, Result};
use crate::io::nested;
use crate::logit::{matched, solve_row};
use crate::model::{Side, WaitMatrix};
use crate::scalar::lower_root;

/// Smallest admissible capacity.
pub const MIN_CAPACITY: f64 = 1e-12;

/// Order in which Gauss–Seidel sweeps visit the segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    #[default]
    RowMajor,
    /// A fixed permutation drawn from the seed.
    Shuffled(u64),
}

impl SweepOrder {
    pub(crate) fn segments(self, nx: usize, ny: usize) -> Vec<(usize, usize)> {
        let mut segs: Vec<(usize, usize)> =
            (0..nx).flat_map(|x| (0..ny).map(move |y| (x, y))).collect();
        if let SweepOrder::Shuffled(seed) = self {
            segs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        segs
    }
}

/// Capacity file layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityFile {
    #[serde(with = "nested")]
    pub mu_bar: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSolution {
    pub side: Side,
    #[serde(with = "nested")]
    pub theta: Array2<f64>,
    /// `theta⁺`, the shadow waiting times.
    pub tau: WaitMatrix,
    /// `theta⁻`, unused capacity.
    #[serde(with = "nested")]
    pub rho: Array2<f64>,
    /// Unconstrained demand at `tau`.
    #[serde(with = "nested")]
    pub demand: Array2<f64>,
    /// Outside-option demand of each chooser at `tau`.
    pub outside: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl ConstrainedSolution {
    /// Constrained demand written as `mu_bar - rho`. It equals `demand` up
    /// to the residual and reproduces the capacity exactly on segments with
    /// a positive wait.
    pub fn constrained_demand(&self, mu_bar: &Array2<f64>) -> Array2<f64> {
        mu_bar - &self.rho
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstrainedOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub order: SweepOrder,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        ConstrainedOptions {
            tol: 1e-10,
            max_iter: 100_000,
            order: SweepOrder::RowMajor,
        }
    }
}

fn check_capacities(provider: &dyn DemandProvider, mu_bar: &Array2<f64>) -> Result<()> {
    let dims = provider.dims();
    if mu_bar.dim() != dims {
        return Err(Error::DimensionMismatch {
            what: "mu_bar".to_string(),
            expected: format!("{}x{}", dims.0, dims.1),
            found: format!("{}x{}", mu_bar.dim().0, mu_bar.dim().1),
        });
    }
    for ((row, col), &value) in mu_bar.indexed_iter() {
        if !(value >= MIN_CAPACITY && value.is_finite()) {
            return Err(Error::NonPositiveCapacity { row, col, value });
        }
    }
    Ok(())
}

/// `q(theta) = mu_bar - theta⁻ - demand(theta⁺)` and the demands used.
fn evaluate(
    provider: &dyn DemandProvider,
    mu_bar: &Array2<f64>,
    theta: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let tau = theta.mapv(|t| t.max(0.0));
    let (demand, outside) = provider.demand_unchecked(&tau);
    let q = Array2::from_shape_fn(theta.dim(), |ij| {
        mu_bar[ij] - (-theta[ij]).max(0.0) - demand[ij]
    });
    (q, demand, outside)
}

fn sup_norm(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn finish(
    provider: &dyn DemandProvider,
    mu_bar: &Array2<f64>,
    theta: Array2<f64>,
    iterations: usize,
) -> ConstrainedSolution {
    let (q, demand, outside) = evaluate(provider, mu_bar, &theta);
    ConstrainedSolution {
        side: provider.side(),
        tau: WaitMatrix::positive_part(&theta),
        rho: WaitMatrix::negative_part(&theta).into_inner(),
        theta,
        demand,
        outside,
        iterations,
        residual: sup_norm(&q),
    }
}

/// Solves the constrained choice problem by monotone Gauss–Seidel from
/// `theta = -mu_bar`.
pub fn solve_constrained(
    provider: &dyn DemandProvider,
    mu_bar: &Array2<f64>,
    opts: &ConstrainedOptions,
) -> Result<ConstrainedSolution> {
    solve_constrained_from(provider, mu_bar, opts, None, &mut |_| {})
}

/// [`solve_constrained`] with an optional starting point and an observer
/// called with the iterate after every sweep.
///
/// The start must satisfy `q(start) <= 0` (for instance the solution for
/// larger capacities); otherwise the default start is used.
pub fn solve_constrained_from(
    provider: &dyn DemandProvider,
    mu_bar: &Array2<f64>,
    opts: &ConstrainedOptions,
    start: Option<&Array2<f64>>,
    observer: &mut dyn FnMut(&Array2<f64>),
) -> Result<ConstrainedSolution> {
    check_capacities(provider, mu_bar)?;
    if !provider.exactness().is_smooth() {
        return Err(Error::ProviderNotSmooth(
            "constrained choice needs continuous demand".to_string(),
        ));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".to_string()));
    }
    let mut theta = mu_bar.mapv(|c| -c);
    if let Some(s) = start {
        if s.dim() == mu_bar.dim() && s.iter().all(|v| v.is_finite()) {
            let (q, _, _) = evaluate(provider, mu_bar, s);
            if q.iter().all(|&v| v <= 0.0) {
                theta = s.clone();
            }
        }
    }
    let (q, _, _) = evaluate(provider, mu_bar, &theta);
    if sup_norm(&q) <= opts.tol {
        return Ok(finish(provider, mu_bar, theta, 0));
    }
    let side = provider.side();
    let (nx, ny) = provider.dims();
    let segments = opts.order.segments(nx, ny);
    let mut tau = theta.mapv(|t| t.max(0.0));
    let mut buf = vec![0.0; provider.num_alternatives()];
    let ftol = opts.tol / 10.0;
    let mut residual = f64::INFINITY;
    for sweep in 1..=opts.max_iter {
        for &(x, y) in &segments {
            let (_, alt) = roles(side, x, y);
            let cap = mu_bar[[x, y]];
            let old = theta[[x, y]];
            tau[[x, y]] = 0.0;
            let d0 = provider.segment_demand(x, y, &tau, &mut buf);
            let new = if d0 <= cap {
                // Root on the linear branch theta <= 0.
                (d0 - cap).min(0.0)
            } else {
                let lo = old.max(0.0);
                let mut f = |t: f64| {
                    tau[[x, y]] = t;
                    let (c, _) = roles(side, x, y);
                    provider.chooser_demand(c, &tau, &mut buf);
                    cap - buf[alt]
                };
                let flo = if lo == 0.0 { cap - d0 } else { f(lo) };
                if flo > 0.0 {
                    lo
                } else {
                    lower_root(&mut f, lo, flo, lo + 1.0, ftol, 400).x
                }
            };
            // Iterates never move down.
            let new = new.max(old);
            theta[[x, y]] = new;
            tau[[x, y]] = new.max(0.0);
        }
        observer(&theta);
        let (q, _, _) = evaluate(provider, mu_bar, &theta);
        residual = sup_norm(&q);
        if residual <= opts.tol {
            return Ok(finish(provider, mu_bar, theta, sweep));
        }
    }
    Err(Error::NotConverged {
        solver: "constrained choice".to_string(),
        iterations: opts.max_iter,
        residual,
    })
}

/// Exact constrained choice for logit providers: one piecewise-linear
/// equation per chooser.
pub fn solve_constrained_logit(
    provider: &dyn DemandProvider,
    mu_bar: &Array2<f64>,
) -> Result<ConstrainedSolution> {
    check_capacities(provider, mu_bar)?;
    let sigmas = provider.logit_scales().ok_or_else(|| {
        Error::Precondition("exact constrained choice requires logit shocks".to_string())
    })?;
    let side = provider.side();
    let dims = provider.dims();
    let util = provider.utilities();
    let mut theta = Array2::zeros(dims);
    let k = provider.num_alternatives();
    let mut la = vec![0.0; k];
    let mut lc = vec![0.0; k];
    for (c, &sigma) in sigmas.iter().enumerate() {
        for a in 0..k {
            let (x, y) = roles(side, c, a);
            la[a] = util[[x, y]] / sigma;
            lc[a] = mu_bar[[x, y]].ln();
        }
        let l = solve_row(provider.masses()[c], &la, &lc);
        for a in 0..k {
            let (x, y) = roles(side, c, a);
            let excess = l + la[a] - lc[a];
            // Demand exactly at capacity up to rounding: zero wait, zero slack.
            let noise = 8.0 * f64::EPSILON * (l.abs() + la[a].abs() + lc[a].abs());
            theta[[x, y]] = if excess.abs() <= noise {
                0.0
            } else if excess > 0.0 {
                sigma * excess
            } else {
                matched(l, la[a], lc[a]) - mu_bar[[x, y]]
            };
        }
    }
    Ok(finish(provider, mu_bar, theta, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{ShockConfig, ShockProvider};
    use crate::model::MarketSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn one_sided(alpha: Array2<f64>, n: Vec<f64>) -> MarketSpec {
        let (nx, ny) = alpha.dim();
        MarketSpec {
            passenger_types: (0..nx).map(|i| format!("x{i}")).collect(),
            taxi_types: (0..ny).map(|i| format!("y{i}")).collect(),
            n,
            m: vec![1.0; ny],
            gamma: Array2::zeros((nx, ny)),
            alpha,
            shocks: Some(ShockConfig::logit(1.0)),
        }
    }

    fn alpha_provider(spec: &MarketSpec) -> ShockProvider {
        ShockProvider::new(spec, Side::Alpha).unwrap()
    }

    #[test]
    fn binding_capacity_example() {
        let spec = one_sided(array![[0.0]], vec![1.0]);
        let p = alpha_provider(&spec);
        let cap = array![[0.25]];
        let exact = solve_constrained_logit(&p, &cap).unwrap();
        assert_abs_diff_eq!(exact.outside[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(exact.tau[[0, 0]], 3f64.ln(), epsilon = 1e-15);
        assert_eq!(exact.rho[[0, 0]], 0.0);
        let general = solve_constrained(&p, &cap, &ConstrainedOptions::default()).unwrap();
        assert_abs_diff_eq!(general.tau[[0, 0]], 3f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(general.demand[[0, 0]], 0.25, epsilon = 1e-10);
    }

    #[test]
    fn slack_capacity_example() {
        let spec = one_sided(array![[0.0]], vec![1.0]);
        let p = alpha_provider(&spec);
        let cap = array![[10.0]];
        for sol in [
            solve_constrained_logit(&p, &cap).unwrap(),
            solve_constrained(&p, &cap, &ConstrainedOptions::default()).unwrap(),
        ] {
            assert_abs_diff_eq!(sol.outside[0], 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(sol.demand[[0, 0]], 0.5, epsilon = 1e-15);
            assert_eq!(sol.tau[[0, 0]], 0.0);
            assert_abs_diff_eq!(sol.rho[[0, 0]], 9.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn capacity_equal_to_free_demand() {
        let spec = one_sided(array![[0.0]], vec![1.0]);
        let p = alpha_provider(&spec);
        let sol = solve_constrained(&p, &array![[0.5]], &ConstrainedOptions::default()).unwrap();
        assert_eq!(sol.theta[[0, 0]], 0.0);
        assert_eq!(sol.tau[[0, 0]], 0.0);
        assert_eq!(sol.rho[[0, 0]], 0.0);
    }

    #[test]
    fn two_alternatives_one_binding() {
        let spec = one_sided(array![[0.0, 0.0]], vec![1.0]);
        let p = alpha_provider(&spec);
        let cap = array![[0.1, 10.0]];
        let sol = solve_constrained_logit(&p, &cap).unwrap();
        assert_abs_diff_eq!(sol.outside[0], 0.45, epsilon = 1e-15);
        let c = sol.constrained_demand(&cap);
        assert_eq!(c[[0, 0]], 0.1);
        assert_abs_diff_eq!(c[[0, 1]], 0.45, epsilon = 1e-15);
    }

    #[test]
    fn huge_capacities_give_plain_logit() {
        let alpha = array![[0.3, -0.2, 1.1]];
        let spec = one_sided(alpha.clone(), vec![2.0]);
        let p = alpha_provider(&spec);
        let sol = solve_constrained_logit(&p, &Array2::from_elem((1, 3), 1e6)).unwrap();
        let denom = 1.0 + alpha.iter().map(|a| a.exp()).sum::<f64>();
        assert_abs_diff_eq!(sol.outside[0], 2.0 / denom, epsilon = 1e-15);
        assert!(sol.tau.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn tiny_capacity_rejected() {
        let spec = one_sided(array![[0.0]], vec![1.0]);
        let p = alpha_provider(&spec);
        assert!(matches!(
            solve_constrained(&p, &array![[0.0]], &ConstrainedOptions::default()),
            Err(Error::NonPositiveCapacity { .. })
        ));
        assert!(matches!(
            solve_constrained_logit(&p, &array![[1e-13]]),
            Err(Error::NonPositiveCapacity { .. })
        ));
    }

    #[test]
    fn gamma_side_uses_columns() {
        let mut spec = one_sided(array![[0.0], [0.0]], vec![1.0, 1.0]);
        spec.gamma = array![[0.0], [0.0]];
        let p = ShockProvider::new(&spec, Side::Gamma).unwrap();
        // m = 1, capacities 0.2 on both passenger types:
        // mu0 + 2 min(mu0, 0.2) = 1 -> mu0 = 0.6.
        let sol = solve_constrained_logit(&p, &array![[0.2], [0.2]]).unwrap();
        assert_abs_diff_eq!(sol.outside[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.tau[[1, 0]], 3f64.ln(), epsilon = 1e-14);
        let general =
            solve_constrained(&p, &array![[0.2], [0.2]], &ConstrainedOptions::default()).unwrap();
        assert_abs_diff_eq!(general.tau[[1, 0]], 3f64.ln(), epsilon = 1e-9);
    }
}
