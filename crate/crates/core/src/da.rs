//! Generalized deferred acceptance with continuum populations.
//!
//! Each round, passengers choose subject to the offers still available
//! (`P = c_alpha(A)`), taxis choose among the proposals (`K = c_gamma(P)`),
//! and rejected offers leave the pool (`A -= P - K`). Availability starts at
//! `min(n_x, m_y)` and the round loop stops when `|P - K|_∞ <= tol`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::constrained::{
    solve_constrained_from, solve_constrained_logit, ConstrainedOptions, ConstrainedSolution,
};
use crate::demand::DemandProvider;
use crate::equilibrium::{sup_norm, ExcessDemand};
use crate::error::{Error, Result};
use crate::io::{fmt_sig, write_text};
use crate::model::{Diagnostics, EquilibriumOutcome, MarketSpec, Matching, WaitMatrix};

/// Slack for the round-to-round inequalities.
pub const CLAIM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proposer {
    #[default]
    Passengers,
    Taxis,
}

#[derive(Debug, Clone, Copy)]
pub struct DaOptions {
    pub tol: f64,
    pub max_rounds: usize,
    /// Abort on the first violated round invariant instead of recording it.
    pub strict: bool,
    pub proposer: Proposer,
}

impl Default for DaOptions {
    fn default() -> Self {
        DaOptions {
            tol: 1e-8,
            max_rounds: 10_000,
            strict: false,
            proposer: Proposer::Passengers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DAState {
    pub available: Array2<f64>,
    pub proposed: Array2<f64>,
    pub kept: Array2<f64>,
    pub tau_alpha: WaitMatrix,
    pub tau_gamma: WaitMatrix,
    /// Passenger-side solution of the last round; a valid warm start for
    /// the next one since availability only shrinks.
    theta_alpha: Option<Array2<f64>>,
    pub t: usize,
    /// `|P - K|_∞` per round.
    pub history: Vec<f64>,
    /// Round invariants that failed, in order.
    pub violations: Vec<String>,
}

/// Step 0: every segment may receive up to `min(n_x, m_y)` offers.
pub fn da_init(spec: &MarketSpec) -> Result<DAState> {
    spec.validate()?;
    let (nx, ny) = spec.dims();
    let available = Array2::from_shape_fn((nx, ny), |(x, y)| spec.n[x].min(spec.m[y]));
    Ok(DAState {
        available,
        proposed: Array2::zeros((nx, ny)),
        kept: Array2::zeros((nx, ny)),
        tau_alpha: WaitMatrix::zeros(nx, ny),
        tau_gamma: WaitMatrix::zeros(nx, ny),
        theta_alpha: None,
        t: 0,
        history: Vec::new(),
        violations: Vec::new(),
    })
}

fn constrained(
    provider: &dyn DemandProvider,
    cap: &Array2<f64>,
    inner_tol: f64,
    start: Option<&Array2<f64>>,
) -> Result<ConstrainedSolution> {
    if provider.logit_scales().is_some() {
        solve_constrained_logit(provider, cap)
    } else {
        let opts = ConstrainedOptions {
            tol: inner_tol,
            ..Default::default()
        };
        solve_constrained_from(provider, cap, &opts, start, &mut |_| {})
    }
}

/// One proposal / disposal / update round.
pub fn da_step(state: &DAState, spec: &MarketSpec, opts: &DaOptions) -> Result<DAState> {
    let ed = ExcessDemand::new(spec)?;
    step(state, &ed, opts)
}

fn step(state: &DAState, ed: &ExcessDemand, opts: &DaOptions) -> Result<DAState> {
    let inner = opts.tol / 100.0;
    let t = state.t + 1;
    let a = &state.available;
    let sa = constrained(&ed.alpha, a, inner, state.theta_alpha.as_ref())?;
    let proposed = sa.constrained_demand(a);
    let sg = constrained(&ed.gamma, &proposed, inner, None)?;
    let kept = sg.constrained_demand(&proposed);
    let available = a - &(&proposed - &kept);
    let residual = sup_norm(&(&proposed - &kept));

    let mut violations = Vec::new();
    let mut flag = |msg: String| violations.push(format!("round {t}: {msg}"));
    for ((x, y), &p) in proposed.indexed_iter() {
        let k = kept[[x, y]];
        let av = available[[x, y]];
        if !(p > 0.0 && k > 0.0 && av > 0.0) {
            flag(format!(
                "positivity fails at ({x},{y}): available {av}, proposed {p}, kept {k}"
            ));
        }
        if k > p + CLAIM_SLACK {
            flag(format!("kept {k} exceeds proposed {p} at ({x},{y})"));
        }
        if av > a[[x, y]] {
            flag(format!("availability grew at ({x},{y}): {} -> {av}", a[[x, y]]));
        }
        let (ta, tg) = (sa.tau[[x, y]], sg.tau[[x, y]]);
        if ta.min(tg) != 0.0 {
            flag(format!(
                "claim 3: both sides wait at ({x},{y}): tau_alpha {ta}, tau_gamma {tg}"
            ));
        }
        if state.t > 0 {
            let k_prev = state.kept[[x, y]];
            if k_prev > p + CLAIM_SLACK {
                flag(format!(
                    "claim 1: kept {k_prev} in round {} exceeds proposed {p} at ({x},{y})",
                    state.t
                ));
            }
            if ta < state.tau_alpha[[x, y]] - CLAIM_SLACK {
                flag(format!(
                    "claim 2: tau_alpha fell at ({x},{y}): {} -> {ta}",
                    state.tau_alpha[[x, y]]
                ));
            }
            if tg > state.tau_gamma[[x, y]] + CLAIM_SLACK {
                flag(format!(
                    "claim 2: tau_gamma rose at ({x},{y}): {} -> {tg}",
                    state.tau_gamma[[x, y]]
                ));
            }
        }
    }
    if opts.strict {
        if let Some(v) = violations.first() {
            return Err(Error::InvariantViolation(v.clone()));
        }
    }
    let mut history = state.history.clone();
    history.push(residual);
    let mut all = state.violations.clone();
    all.extend(violations);
    Ok(DAState {
        available,
        proposed,
        kept,
        tau_alpha: sa.tau,
        tau_gamma: sg.tau,
        theta_alpha: Some(sa.theta),
        t,
        history,
        violations: all,
    })
}

/// Per-round summary for traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub residual: f64,
    pub min_avail: f64,
    pub max_tau_alpha: f64,
    pub max_tau_gamma: f64,
}

#[derive(Debug, Clone)]
pub struct DaRun {
    pub outcome: EquilibriumOutcome,
    pub rounds: Vec<RoundRecord>,
    pub violations: Vec<String>,
}

fn record(s: &DAState) -> RoundRecord {
    let max = |a: &Array2<f64>| a.iter().fold(0.0f64, |m, &v| m.max(v));
    RoundRecord {
        round: s.t,
        residual: *s.history.last().unwrap_or(&f64::NAN),
        min_avail: s.available.iter().fold(f64::INFINITY, |m, &v| m.min(v)),
        max_tau_alpha: max(&s.tau_alpha),
        max_tau_gamma: max(&s.tau_gamma),
    }
}

/// Runs rounds until `|P - K|_∞ <= tol`. With taxis proposing, the market
/// is transposed and the outcome mapped back.
pub fn da_run(spec: &MarketSpec, opts: &DaOptions) -> Result<DaRun> {
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    let flipped;
    let market = match opts.proposer {
        Proposer::Passengers => spec,
        Proposer::Taxis => {
            flipped = spec.transposed();
            &flipped
        }
    };
    let ed = ExcessDemand::new(market)?;
    if !ed.is_smooth() {
        return Err(Error::ProviderNotSmooth(
            "deferred acceptance needs continuous demand".to_string(),
        ));
    }
    let mut state = da_init(market)?;
    let mut rounds = Vec::new();
    for _ in 0..opts.max_rounds {
        state = step(&state, &ed, opts)?;
        rounds.push(record(&state));
        let residual = *state.history.last().expect("one round done");
        if residual <= opts.tol {
            let outcome = EquilibriumOutcome {
                matching: Matching::new(state.proposed.clone()),
                tau_alpha: state.tau_alpha.clone(),
                tau_gamma: state.tau_gamma.clone(),
                diagnostics: Diagnostics {
                    solver: match opts.proposer {
                        Proposer::Passengers => "da",
                        Proposer::Taxis => "da (taxis propose)",
                    }
                    .to_string(),
                    iterations: state.t,
                    residual,
                    seed: None,
                },
            };
            let outcome = match opts.proposer {
                Proposer::Passengers => outcome,
                Proposer::Taxis => outcome.transposed(),
            };
            return Ok(DaRun {
                outcome,
                rounds,
                violations: state.violations,
            });
        }
    }
    Err(Error::NotConverged {
        solver: "deferred acceptance".to_string(),
        iterations: opts.max_rounds,
        residual: *state.history.last().unwrap_or(&f64::NAN),
    })
}

/// Trace CSV: round, residual, min_avail, max_tau_alpha, max_tau_gamma.
pub fn trace_csv(rounds: &[RoundRecord]) -> String {
    let mut s = String::from("round,residual,min_avail,max_tau_alpha,max_tau_gamma\n");
    for r in rounds {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.round,
            fmt_sig(r.residual, 12),
            fmt_sig(r.min_avail, 12),
            fmt_sig(r.max_tau_alpha, 12),
            fmt_sig(r.max_tau_gamma, 12)
        );
    }
    s
}

pub fn write_trace(rounds: &[RoundRecord], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), trace_csv(rounds).trim_end())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{Family, ShockConfig, ShockSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn single(n: f64, m: f64) -> MarketSpec {
        MarketSpec {
            passenger_types: vec!["x".into()],
            taxi_types: vec!["y".into()],
            n: vec![n],
            m: vec![m],
            alpha: array![[0.0]],
            gamma: array![[0.0]],
            shocks: Some(ShockConfig::logit(1.0)),
        }
    }

    fn intro() -> MarketSpec {
        MarketSpec {
            passenger_types: vec!["p1".into(), "p2".into()],
            taxi_types: vec!["t".into()],
            n: vec![1.0, 1.0],
            m: vec![1.0],
            alpha: array![[2.0], [1.0]],
            gamma: array![[0.0], [0.0]],
            shocks: Some(ShockConfig::logit(1.0)),
        }
    }

    #[test]
    fn init_is_componentwise_min() {
        assert_eq!(da_init(&intro()).unwrap().available, array![[1.0], [1.0]]);
        assert_eq!(da_init(&single(2.0, 1.0)).unwrap().available, array![[1.0]]);
        let mut sq = intro();
        sq.taxi_types.push("t2".into());
        sq.m.push(1.0);
        sq.alpha = Array2::zeros((2, 2));
        sq.gamma = Array2::zeros((2, 2));
        assert_eq!(da_init(&sq).unwrap().available, Array2::<f64>::ones((2, 2)));
    }

    #[test]
    fn hand_worked_rounds() {
        let spec = single(2.0, 1.0);
        let opts = DaOptions::default();
        let s0 = da_init(&spec).unwrap();
        let s1 = da_step(&s0, &spec, &opts).unwrap();
        assert_abs_diff_eq!(s1.proposed[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s1.kept[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s1.available[[0, 0]], 0.5, epsilon = 1e-15);
        let s2 = da_step(&s1, &spec, &opts).unwrap();
        assert_abs_diff_eq!(s2.proposed[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s2.kept[[0, 0]], 0.5, epsilon = 1e-15);
        assert!(s2.history[1] <= 1e-15);
        assert!(s2.violations.is_empty(), "{:?}", s2.violations);
    }

    #[test]
    fn runs_to_equilibrium() {
        let run = da_run(&single(2.0, 1.0), &DaOptions::default()).unwrap();
        assert_abs_diff_eq!(run.outcome.matching[[0, 0]], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(run.outcome.tau_alpha[[0, 0]], 3f64.ln(), epsilon = 1e-7);
        assert_eq!(run.outcome.tau_gamma[[0, 0]], 0.0);

        let run = da_run(&intro(), &DaOptions::default()).unwrap();
        for x in 0..2 {
            assert_abs_diff_eq!(run.outcome.matching[[x, 0]], 1.0 / 3.0, epsilon = 1e-7);
        }
        assert!(run.violations.is_empty(), "{:?}", run.violations);
    }

    #[test]
    fn proposing_side_does_not_matter() {
        let opts = DaOptions::default();
        let a = da_run(&intro(), &opts).unwrap();
        let b = da_run(
            &intro(),
            &DaOptions {
                proposer: Proposer::Taxis,
                ..opts
            },
        )
        .unwrap();
        for (p, q) in a.outcome.matching.iter().zip(b.outcome.matching.iter()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-7);
        }
        assert!(b.violations.is_empty(), "{:?}", b.violations);
    }

    #[test]
    fn general_inner_solver_with_normal_shocks() {
        let mut spec = intro();
        spec.shocks = Some(ShockConfig::uniform(ShockSpec::Iid {
            family: Family::Normal,
            sigma: 1.0,
            order: 32,
        }));
        let opts = DaOptions {
            tol: 1e-7,
            strict: true,
            ..Default::default()
        };
        let run = da_run(&spec, &opts).unwrap();
        let eq = crate::equilibrium::solve_equilibrium(
            &spec,
            &crate::equilibrium::EquilibriumOptions::with_tol(1e-10),
        )
        .unwrap();
        for (p, q) in run.outcome.matching.iter().zip(eq.matching.iter()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-6);
        }
    }

    #[test]
    fn trace_has_header_and_rows() {
        let run = da_run(&single(2.0, 1.0), &DaOptions::default()).unwrap();
        let csv = trace_csv(&run.rounds);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "round,residual,min_avail,max_tau_alpha,max_tau_gamma");
        assert_eq!(lines.len(), run.rounds.len() + 1);
    }
}
