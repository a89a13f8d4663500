//! Discrete-time fluid market with queues.
//!
//! Each period `n_x` passengers and `m_y` taxis arrive and choose myopically
//! at the current waits. Arrivals join the queue of their segment, the
//! platform clears the shorter of the two queues, and waits are set from the
//! remaining queues by a [`WaitMap`].

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::demand::DemandProvider;
use crate::equilibrium::{
    definition4_residual, solve_equilibrium, solve_equilibrium_logit, sup_norm, EquilibriumOptions,
    ExcessDemand,
};
use crate::error::{Error, Result};
use crate::io::fmt_sig;
use crate::model::{Diagnostics, EquilibriumOutcome, MarketSpec, Matching, WaitMatrix};

/// How remaining queues translate into waits. Both give a positive wait
/// exactly when the queue is nonempty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WaitMap {
    /// `tau(t+1) = kappa Q(t+1)`, i.e. the wait moves by `kappa` times the
    /// excess of arrivals over clearings.
    Relaxation { kappa: f64 },
    /// `tau(t+1) = Q(t+1) / mu(t)`: queue length over throughput.
    Little,
}

impl Default for WaitMap {
    fn default() -> Self {
        WaitMap::Relaxation { kappa: 0.5 }
    }
}

impl FromStr for WaitMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relaxation" => Ok(WaitMap::default()),
            "little" => Ok(WaitMap::Little),
            other => Err(Error::InvalidArgument(format!(
                "unknown wait map {other:?}, expected relaxation or little"
            ))),
        }
    }
}

impl fmt::Display for WaitMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaitMap::Relaxation { kappa } => write!(f, "relaxation(kappa = {kappa})"),
            WaitMap::Little => write!(f, "little"),
        }
    }
}

impl WaitMap {
    fn check(&self) -> Result<()> {
        if let WaitMap::Relaxation { kappa } = *self {
            if !(kappa > 0.0 && kappa.is_finite()) {
                return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
            }
        }
        Ok(())
    }

    fn wait(&self, queue: f64, cleared: f64) -> f64 {
        if queue == 0.0 {
            return 0.0;
        }
        match *self {
            WaitMap::Relaxation { kappa } => kappa * queue,
            WaitMap::Little => queue / cleared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueState {
    /// Passengers waiting at the start of period `t`.
    #[serde(with = "crate::io::nested")]
    pub q_alpha: Array2<f64>,
    /// Taxis waiting at the start of period `t`.
    #[serde(with = "crate::io::nested")]
    pub q_gamma: Array2<f64>,
    pub tau_alpha: WaitMatrix,
    pub tau_gamma: WaitMatrix,
    pub t: usize,
    /// Mass cleared in period `t - 1`.
    #[serde(with = "crate::io::nested")]
    pub matched: Array2<f64>,
    #[serde(with = "crate::io::nested")]
    pub cum_inflow_alpha: Array2<f64>,
    #[serde(with = "crate::io::nested")]
    pub cum_inflow_gamma: Array2<f64>,
    #[serde(with = "crate::io::nested")]
    pub cum_cleared: Array2<f64>,
}

impl QueueState {
    /// Empty queues and zero waits at `t = 0`.
    pub fn empty(nx: usize, ny: usize) -> Self {
        let z = Array2::zeros((nx, ny));
        QueueState {
            q_alpha: z.clone(),
            q_gamma: z.clone(),
            tau_alpha: WaitMatrix::zeros(nx, ny),
            tau_gamma: WaitMatrix::zeros(nx, ny),
            t: 0,
            matched: z.clone(),
            cum_inflow_alpha: z.clone(),
            cum_inflow_gamma: z.clone(),
            cum_cleared: z,
        }
    }

    /// Checks one-sided queues and that waits are positive exactly on
    /// nonempty queues.
    pub fn check_invariants(&self) -> Result<()> {
        let segments = self
            .q_alpha
            .indexed_iter()
            .map(|(ix, &qa)| (ix, qa, self.q_gamma[ix], self.tau_alpha[ix], self.tau_gamma[ix]));
        for ((x, y), qa, qg, ta, tg) in segments {
            if qa < 0.0 || qg < 0.0 {
                return Err(Error::InvariantViolation(format!("negative queue at ({x}, {y})")));
            }
            if qa.min(qg) != 0.0 {
                return Err(Error::InvariantViolation(format!(
                    "both queues nonempty at ({x}, {y}): {qa}, {qg}"
                )));
            }
            if (ta > 0.0) != (qa > 0.0) || (tg > 0.0) != (qg > 0.0) {
                return Err(Error::InvariantViolation(format!(
                    "wait and queue disagree at ({x}, {y})"
                )));
            }
        }
        Ok(())
    }

    /// Sup-norm change of `(Q, tau)` from `other` to `self`.
    pub fn distance(&self, other: &QueueState) -> f64 {
        [
            sup_norm(&(&self.q_alpha - &other.q_alpha)),
            sup_norm(&(&self.q_gamma - &other.q_gamma)),
            sup_norm(&(&*self.tau_alpha - &*other.tau_alpha)),
            sup_norm(&(&*self.tau_gamma - &*other.tau_gamma)),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn step(state: &QueueState, ed: &ExcessDemand, wait_map: WaitMap) -> QueueState {
    let (in_a, _) = ed.alpha.demand_unchecked(&state.tau_alpha);
    let (in_g, _) = ed.gamma.demand_unchecked(&state.tau_gamma);
    let dim = in_a.dim();
    let mut next = QueueState {
        q_alpha: Array2::zeros(dim),
        q_gamma: Array2::zeros(dim),
        tau_alpha: WaitMatrix::zeros(dim.0, dim.1),
        tau_gamma: WaitMatrix::zeros(dim.0, dim.1),
        t: state.t + 1,
        matched: Array2::zeros(dim),
        cum_inflow_alpha: &state.cum_inflow_alpha + &in_a,
        cum_inflow_gamma: &state.cum_inflow_gamma + &in_g,
        cum_cleared: state.cum_cleared.clone(),
    };
    let mut ta = Array2::zeros(dim);
    let mut tg = Array2::zeros(dim);
    for ix in ndarray::indices(dim) {
        let a = state.q_alpha[ix] + in_a[ix];
        let g = state.q_gamma[ix] + in_g[ix];
        let cleared = a.min(g);
        // The shorter side subtracts itself and is exactly zero.
        next.q_alpha[ix] = a - cleared;
        next.q_gamma[ix] = g - cleared;
        next.matched[ix] = cleared;
        next.cum_cleared[ix] += cleared;
        ta[ix] = wait_map.wait(next.q_alpha[ix], cleared);
        tg[ix] = wait_map.wait(next.q_gamma[ix], cleared);
    }
    next.tau_alpha = WaitMatrix::positive_part(&ta);
    next.tau_gamma = WaitMatrix::positive_part(&tg);
    next
}

/// Advances the market by one period.
pub fn sim_step(state: &QueueState, spec: &MarketSpec, wait_map: WaitMap) -> Result<QueueState> {
    spec.validate()?;
    wait_map.check()?;
    if state.q_alpha.dim() != spec.dims() {
        return Err(Error::DimensionMismatch {
            what: "queue state".to_string(),
            expected: format!("{}x{}", spec.nx(), spec.ny()),
            found: format!("{}x{}", state.q_alpha.dim().0, state.q_alpha.dim().1),
        });
    }
    state.check_invariants().map_err(|e| Error::Precondition(e.to_string()))?;
    let ed = ExcessDemand::new(spec)?;
    Ok(step(state, &ed, wait_map))
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub wait_map: WaitMap,
    /// Number of periods.
    pub periods: usize,
    pub stat_tol: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            wait_map: WaitMap::default(),
            periods: 5000,
            stat_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryReport {
    /// Period at which `(Q, tau)` stopped moving, if it did.
    pub stationary_at: Option<usize>,
    /// Last sup-norm change of `(Q, tau)`.
    pub last_change: f64,
    /// Cleared mass and waits of the final period.
    pub outcome: EquilibriumOutcome,
    /// Equilibrium residual of `outcome` against the demand system.
    pub residual: f64,
    /// Sup-norm distance of `(mu, tau)` to the static equilibrium.
    pub static_deviation: f64,
}

impl StationaryReport {
    pub fn is_stationary(&self) -> bool {
        self.stationary_at.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRun {
    /// States from `t = 0` to the last period run.
    pub trajectory: Vec<QueueState>,
    pub report: StationaryReport,
}

/// Runs the market from empty queues until `(Q, tau)` moves by at most
/// `stat_tol` in one period, or for `periods` periods. A run that does not
/// settle is returned with `stationary_at = None`.
pub fn sim_run(spec: &MarketSpec, opts: &SimOptions) -> Result<SimRun> {
    spec.validate()?;
    opts.wait_map.check()?;
    if opts.periods == 0 {
        return Err(Error::InvalidArgument("need at least one period".to_string()));
    }
    if !(opts.stat_tol > 0.0) {
        return Err(Error::InvalidArgument("stat_tol must be positive".to_string()));
    }
    let ed = ExcessDemand::new(spec)?;
    let (nx, ny) = spec.dims();
    let mut trajectory = vec![QueueState::empty(nx, ny)];
    let mut stationary_at = None;
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.periods {
        let prev = trajectory.last().expect("trajectory is nonempty");
        let next = step(prev, &ed, opts.wait_map);
        last_change = next.distance(prev);
        trajectory.push(next);
        if last_change <= opts.stat_tol {
            stationary_at = Some(trajectory.len() - 1);
            break;
        }
    }
    let last = trajectory.last().expect("trajectory is nonempty");
    let outcome = EquilibriumOutcome {
        matching: Matching::new(last.matched.clone()),
        tau_alpha: last.tau_alpha.clone(),
        tau_gamma: last.tau_gamma.clone(),
        diagnostics: Diagnostics {
            solver: format!("queue simulation, {}", opts.wait_map),
            iterations: last.t,
            residual: last_change,
            seed: None,
        },
    };
    let (residual, _) = definition4_residual(spec, &outcome)?;
    let static_opts = EquilibriumOptions::with_tol(1e-12);
    let reference = if ed.alpha.logit_scales().is_some() && ed.gamma.logit_scales().is_some() {
        solve_equilibrium_logit(spec, &static_opts)?
    } else {
        solve_equilibrium(spec, &static_opts)?
    };
    let static_deviation = [
        sup_norm(&(&*outcome.matching - &*reference.matching)),
        sup_norm(&(&*outcome.tau_alpha - &*reference.tau_alpha)),
        sup_norm(&(&*outcome.tau_gamma - &*reference.tau_gamma)),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    if stationary_at.is_some() && residual > 10.0 * opts.stat_tol {
        return Err(Error::InvariantViolation(format!(
            "stationary state has equilibrium residual {residual:e} above {:e}",
            10.0 * opts.stat_tol
        )));
    }
    Ok(SimRun {
        report: StationaryReport {
            stationary_at,
            last_change,
            outcome,
            residual,
            static_deviation,
        },
        trajectory,
    })
}

/// CSV with one row per period: `t`, then per segment the passenger queue,
/// taxi queue, both waits, and the mass cleared in the previous period.
pub fn trace_csv(spec: &MarketSpec, trajectory: &[QueueState]) -> String {
    let segs: Vec<String> = spec
        .passenger_types
        .iter()
        .flat_map(|x| spec.taxi_types.iter().map(move |y| format!("{x}_{y}")))
        .collect();
    let mut header = vec!["t".to_string()];
    for prefix in ["q_alpha", "q_gamma", "tau_alpha", "tau_gamma", "cleared"] {
        header.extend(segs.iter().map(|s| format!("{prefix}_{s}")));
    }
    let mut out = header.join(",");
    out.push('\n');
    for s in trajectory {
        let mut row = vec![s.t.to_string()];
        for m in [&s.q_alpha, &s.q_gamma, &*s.tau_alpha, &*s.tau_gamma, &s.matched] {
            row.extend(m.iter().map(|&v| fmt_sig(v, 12)));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
