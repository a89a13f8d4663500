//! Vanishing-noise limit of the logit equilibrium.
//!
//! The logit system is solved on `sigma_k = 2^-k` for `k = 0..=K`. Payoffs
//! along the way are `u_x = -sigma ln mu_x0` and `v_y = -sigma ln mu_0y`.
//! The last point is rounded to an integer matching and checked for
//! aggregate stability.

use ndarray::Array2;
use serde::Serialize;

use super::{check_aggregate_stability, max_weight_transport, Verdict};
use crate::demand::ShockConfig;
use crate::equilibrium::{logit_margins_accepting, EquilibriumOptions};
use crate::error::{Error, Result};
use crate::io::fmt_sig;
use crate::model::{DeterministicOutcome, MarketSpec, Matching};

#[derive(Debug, Clone, Copy)]
pub struct LimitOptions {
    /// Last exponent of the schedule.
    pub k_max: u32,
    /// Tolerance of the fallback stability check.
    pub tol: f64,
    /// Payoffs within this distance of a candidate value are snapped to it.
    pub snap: f64,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions {
            k_max: 20,
            tol: super::LIMIT_EPS,
            snap: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaPoint {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    #[serde(with = "crate::io::nested")]
    pub mu: Array2<f64>,
    /// Mass residual of the logit solve.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSchedule {
    pub points: Vec<SigmaPoint>,
}

impl SigmaSchedule {
    /// Sup-norm change of `(u, v)` between consecutive points.
    pub fn successive_differences(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| {
                let du = w[0].u.iter().zip(&w[1].u).map(|(a, b)| (a - b).abs());
                let dv = w[0].v.iter().zip(&w[1].v).map(|(a, b)| (a - b).abs());
                du.chain(dv).fold(0.0, f64::max)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitResult {
    pub schedule: SigmaSchedule,
    /// Rounded outcome with snapped payoffs.
    pub outcome: DeterministicOutcome,
    /// Verdict of the exact check on `outcome`.
    pub verdict: Verdict,
    /// Whether `outcome` passes with zero tolerance.
    pub exact: bool,
}

/// Nearest candidate within `snap`, else the value itself.
fn snap_to(value: f64, candidates: impl Iterator<Item = f64>, snap: f64) -> f64 {
    let mut best = value;
    let mut dist = snap;
    for c in std::iter::once(0.0).chain(candidates) {
        let d = (c - value).abs();
        if d <= dist {
            best = c;
            dist = d;
        }
    }
    best
}

/// Mass residual accepted from a logit solve that stalls. Near-degenerate
/// markets make the row/column alternation crawl at moderate sigma; the
/// residual is kept in the schedule.
const STALL_RESIDUAL: f64 = 1e-6;

/// Logit payoffs on `sigma_k = 2^-k` for `k = 0..=k_max`.
pub fn sigma_schedule(spec: &MarketSpec, k_max: u32) -> Result<SigmaSchedule> {
    let solve_opts = EquilibriumOptions {
        tol: 1e-12,
        max_iter: 20_000,
        ..Default::default()
    };
    let mut points = Vec::with_capacity(k_max as usize + 1);
    for k in 0..=k_max {
        let sigma = (-(k as f64)).exp2();
        let s = spec.with_shocks(Some(ShockConfig::logit(sigma)));
        let margins = logit_margins_accepting(&s, &solve_opts, STALL_RESIDUAL)?;
        let out = margins.outcome(&s);
        points.push(SigmaPoint {
            sigma,
            u: margins.log_outside_x.iter().map(|l| -sigma * l).collect(),
            v: margins.log_outside_y.iter().map(|l| -sigma * l).collect(),
            mu: out.matching.into_inner(),
            residual: margins.residual,
        });
    }
    Ok(SigmaSchedule { points })
}

/// Traces the logit equilibrium as the noise vanishes and rounds the limit
/// to a deterministic outcome. Masses must be integers; the market's own
/// shocks are ignored.
pub fn sigma_limit(spec: &MarketSpec, opts: &LimitOptions) -> Result<LimitResult> {
    spec.validate_deterministic()?;
    if !(opts.tol >= 0.0 && opts.snap >= 0.0) {
        return Err(Error::InvalidArgument("tolerances must be nonnegative".to_string()));
    }
    let (nx, ny) = spec.dims();
    let schedule = sigma_schedule(spec, opts.k_max)?;
    let points = schedule.points;
    let last = points.last().expect("schedule is nonempty");

    let u: Vec<f64> = (0..nx)
        .map(|x| snap_to(last.u[x], spec.alpha.row(x).iter().copied(), opts.snap))
        .collect();
    let v: Vec<f64> = (0..ny)
        .map(|y| snap_to(last.v[y], spec.gamma.column(y).iter().copied(), opts.snap))
        .collect();

    // Only segments meeting the equality in (iv) may carry mass. Ties
    // between equal weights go to the earlier segment.
    let cells = (nx * ny) as f64;
    let weight = Array2::from_shape_fn((nx, ny), |(x, y)| {
        let gap = (u[x] - spec.alpha[[x, y]]).max(v[y] - spec.gamma[[x, y]]);
        (gap == 0.0).then(|| last.mu[[x, y]] * (1.0 - 1e-9 * (x * ny + y + 1) as f64 / cells))
    });
    // Positive payoffs leave nobody of that type unmatched.
    let big = 1e3 * (1.0 + spec.n.iter().sum::<f64>() + spec.m.iter().sum::<f64>());
    let row_bonus: Vec<f64> = u.iter().map(|&p| if p > 0.0 { big } else { 0.0 }).collect();
    let col_bonus: Vec<f64> = v.iter().map(|&p| if p > 0.0 { big } else { 0.0 }).collect();
    let row_caps: Vec<i64> = spec.n.iter().map(|&n| n as i64).collect();
    let col_caps: Vec<i64> = spec.m.iter().map(|&m| m as i64).collect();
    let z = max_weight_transport(&weight, &row_caps, &col_caps, &row_bonus, &col_bonus)?;

    let outcome = DeterministicOutcome {
        matching: Matching::new(z.mapv(|c| c as f64)),
        u,
        v,
    };
    let verdict = check_aggregate_stability(spec, &outcome, 0.0)?;
    let exact = verdict.is_stable();
    if !exact {
        let loose = check_aggregate_stability(spec, &outcome, opts.tol)?;
        if !loose.is_stable() {
            return Err(Error::NoStableRounding(format!(
                "rounded limit at sigma = {} fails: {}",
                last.sigma, loose.violations[0]
            )));
        }
    }
    Ok(LimitResult {
        schedule: SigmaSchedule { points },
        outcome,
        verdict,
        exact,
    })
}

/// CSV with one row per sigma: `sigma, u_<x>..., v_<y>..., residual`.
pub fn trajectory_csv(spec: &MarketSpec, schedule: &SigmaSchedule) -> String {
    let mut header = vec!["sigma".to_string()];
    header.extend(spec.passenger_types.iter().map(|x| format!("u_{x}")));
    header.extend(spec.taxi_types.iter().map(|y| format!("v_{y}")));
    header.push("residual".to_string());
    let mut out = header.join(",");
    out.push('\n');
    for p in &schedule.points {
        let mut row = vec![fmt_sig(p.sigma, 12)];
        row.extend(p.u.iter().chain(&p.v).map(|&x| fmt_sig(x, 12)));
        row.push(fmt_sig(p.residual, 12));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
