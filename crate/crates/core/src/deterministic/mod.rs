//! Deterministic utilities: aggregate and classical stability, the bridge
//! between type-level and individual-level matchings, and the vanishing
//! noise limit of the logit model.
//!
//! With `eps = 0` the checkers are exact for any floating-point input: the
//! sign of a correctly rounded difference is the sign of the true
//! difference, and integer masses are summed as `i64`.

mod classical;
mod flow;
mod limit;

pub use classical::{classical_da, ClassicalDa};
pub use flow::max_weight_transport;
pub use limit::{sigma_limit, sigma_schedule, trajectory_csv, LimitOptions, LimitResult, SigmaPoint, SigmaSchedule};

use std::fmt;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    DeterministicOutcome, IndividualMarket, IndividualMatching, MarketSpec, Matching,
};

/// Default tolerance for outcomes produced by the vanishing-noise limit.
pub const LIMIT_EPS: f64 = 1e-7;

/// One failed stability condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionViolation {
    /// Roman numeral of the condition, `"i"` to `"vi"`.
    pub condition: &'static str,
    pub location: String,
    pub detail: String,
}

impl fmt::Display for ConditionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "condition ({}) at {}: {}", self.condition, self.location, self.detail)
    }
}

/// Result of a stability check. Stable iff no condition is violated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub violations: Vec<ConditionViolation>,
}

impl Verdict {
    pub fn is_stable(&self) -> bool {
        self.violations.is_empty()
    }

    /// Whether a condition with the given numeral is among the violations.
    pub fn cites(&self, condition: &str) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_stable() {
            return write!(f, "stable");
        }
        writeln!(f, "not stable:")?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

fn dims_check(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

/// Checks the six aggregate stability conditions on `(mu, u, v)`.
///
/// `eps` loosens every inequality and equality; with `eps = 0` the check is
/// exact. Every violated condition is reported with its indices.
pub fn check_aggregate_stability(
    spec: &MarketSpec,
    candidate: &DeterministicOutcome,
    eps: f64,
) -> Result<Verdict> {
    spec.validate()?;
    let (nx, ny) = spec.dims();
    let mu = &candidate.matching;
    if mu.dim() != (nx, ny) {
        return Err(Error::DimensionMismatch {
            what: "mu".to_string(),
            expected: format!("{nx}x{ny}"),
            found: format!("{}x{}", mu.dim().0, mu.dim().1),
        });
    }
    dims_check("u", candidate.u.len(), nx)?;
    dims_check("v", candidate.v.len(), ny)?;
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be >= 0, got {eps}")));
    }
    let (u, v) = (&candidate.u, &candidate.v);
    let px = &spec.passenger_types;
    let ty = &spec.taxi_types;
    let mut out = Vec::new();
    let mut add = |condition, location: String, detail: String| {
        out.push(ConditionViolation {
            condition,
            location,
            detail,
        })
    };

    // (i) integrality, exactly; negative entries are infeasible as well.
    for ((x, y), &m) in mu.indexed_iter() {
        if m.fract() != 0.0 || !m.is_finite() || m < 0.0 {
            add("i", format!("({}, {})", px[x], ty[y]), format!("mu = {m} is not a nonnegative integer"));
        }
    }
    let row_sum = |x: usize| -> f64 { (0..ny).map(|y| mu[[x, y]]).sum() };
    let col_sum = |y: usize| -> f64 { (0..nx).map(|x| mu[[x, y]]).sum() };
    let unmatched_x: Vec<f64> = (0..nx).map(|x| spec.n[x] - row_sum(x)).collect();
    let unmatched_y: Vec<f64> = (0..ny).map(|y| spec.m[y] - col_sum(y)).collect();

    // (ii), (iii) feasibility.
    for x in 0..nx {
        if unmatched_x[x] < -eps {
            add("ii", px[x].clone(), format!("row sum {} exceeds n = {}", row_sum(x), spec.n[x]));
        }
    }
    for y in 0..ny {
        if unmatched_y[y] < -eps {
            add("iii", ty[y].clone(), format!("column sum {} exceeds m = {}", col_sum(y), spec.m[y]));
        }
    }

    // (iv) no blocking segment; equality on matched segments.
    for x in 0..nx {
        for y in 0..ny {
            let gap = (u[x] - spec.alpha[[x, y]]).max(v[y] - spec.gamma[[x, y]]);
            let loc = format!("({}, {})", px[x], ty[y]);
            if gap < -eps {
                add(
                    "iv",
                    loc,
                    format!(
                        "max{{{}, {}}} = {gap} < 0: the pair blocks",
                        u[x] - spec.alpha[[x, y]],
                        v[y] - spec.gamma[[x, y]]
                    ),
                );
            } else if mu[[x, y]] > eps && gap > eps {
                add(
                    "iv",
                    loc,
                    format!(
                        "max{{{}, {}}} = {gap} != 0 although mu = {}",
                        u[x] - spec.alpha[[x, y]],
                        v[y] - spec.gamma[[x, y]],
                        mu[[x, y]]
                    ),
                );
            }
        }
    }

    // (v), (vi) individual rationality and equal treatment of the unmatched.
    for x in 0..nx {
        if u[x] < -eps {
            add("v", px[x].clone(), format!("u = {} < 0", u[x]));
        } else if unmatched_x[x] > eps && u[x] > eps {
            add("v", px[x].clone(), format!("u = {} > 0 with {} unmatched", u[x], unmatched_x[x]));
        }
    }
    for y in 0..ny {
        if v[y] < -eps {
            add("vi", ty[y].clone(), format!("v = {} < 0", v[y]));
        } else if unmatched_y[y] > eps && v[y] > eps {
            add("vi", ty[y].clone(), format!("v = {} > 0 with {} unmatched", v[y], unmatched_y[y]));
        }
    }
    Ok(Verdict { violations: out })
}

/// Individual payoffs `u_i = Σ_j pi_ij alpha_ij` and `v_j = Σ_i pi_ij gamma_ij`.
pub fn individual_payoffs(market: &IndividualMarket, pi: &IndividualMatching) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; market.passengers.len()];
    let mut v = vec![0.0; market.taxis.len()];
    for (i, j) in pi.pairs() {
        u[i] += market.alpha_ij(i, j);
        v[j] += market.gamma_ij(i, j);
    }
    (u, v)
}

/// Checks classical (individual-level) stability of `pi`.
pub fn check_classical_stability(
    market: &IndividualMarket,
    pi: &IndividualMatching,
) -> Result<Verdict> {
    let (ni, nj) = (market.passengers.len(), market.taxis.len());
    if pi.pi.dim() != (ni, nj) {
        return Err(Error::DimensionMismatch {
            what: "pi".to_string(),
            expected: format!("{ni}x{nj}"),
            found: format!("{}x{}", pi.pi.dim().0, pi.pi.dim().1),
        });
    }
    let mut out = Vec::new();
    let pid = |i: usize| market.passengers[i].id.clone();
    let tid = |j: usize| market.taxis[j].id.clone();
    for ((i, j), &p) in pi.pi.indexed_iter() {
        if p > 1 {
            out.push(ConditionViolation {
                condition: "i",
                location: format!("({}, {})", pid(i), tid(j)),
                detail: format!("pi = {p} is not binary"),
            });
        }
    }
    for i in 0..ni {
        let s: u32 = pi.pi.row(i).iter().map(|&p| u32::from(p)).sum();
        if s > 1 {
            out.push(ConditionViolation {
                condition: "ii",
                location: pid(i),
                detail: format!("matched {s} times"),
            });
        }
    }
    for j in 0..nj {
        let s: u32 = pi.pi.column(j).iter().map(|&p| u32::from(p)).sum();
        if s > 1 {
            out.push(ConditionViolation {
                condition: "iii",
                location: tid(j),
                detail: format!("matched {s} times"),
            });
        }
    }
    let (u, v) = individual_payoffs(market, pi);
    for i in 0..ni {
        for j in 0..nj {
            let (a, g) = (market.alpha_ij(i, j), market.gamma_ij(i, j));
            if u[i] < a && v[j] < g {
                out.push(ConditionViolation {
                    condition: "iv",
                    location: format!("({}, {})", pid(i), tid(j)),
                    detail: format!("blocking pair: u = {} < {a} and v = {} < {g}", u[i], v[j]),
                });
            }
        }
    }
    for (i, &ui) in u.iter().enumerate() {
        if ui < 0.0 {
            out.push(ConditionViolation {
                condition: "v",
                location: pid(i),
                detail: format!("u = {ui} < 0"),
            });
        }
    }
    for (j, &vj) in v.iter().enumerate() {
        if vj < 0.0 {
            out.push(ConditionViolation {
                condition: "vi",
                location: tid(j),
                detail: format!("v = {vj} < 0"),
            });
        }
    }
    Ok(Verdict { violations: out })
}

/// Type-level outcome of an individual matching, with the time burned by
/// each individual to come down to the worst payoff of its type.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregated {
    pub outcome: DeterministicOutcome,
    pub burned_passengers: Vec<f64>,
    pub burned_taxis: Vec<f64>,
}

/// Aggregates a classically stable individual matching: `mu` counts pairs
/// by type and `u_x`, `v_y` are the smallest payoffs within each type.
pub fn aggregate_outcome(market: &IndividualMarket, pi: &IndividualMatching) -> Result<Aggregated> {
    let verdict = check_classical_stability(market, pi)?;
    if !verdict.is_stable() {
        return Err(Error::Precondition(format!(
            "the individual matching is not classically stable: {}",
            verdict.violations[0]
        )));
    }
    let (nx, ny) = market.alpha.dim();
    let mut mu = Array2::zeros((nx, ny));
    for (i, j) in pi.pairs() {
        mu[[market.passengers[i].kind, market.taxis[j].kind]] += 1.0;
    }
    let (ui, vj) = individual_payoffs(market, pi);
    let mut u = vec![f64::INFINITY; nx];
    let mut v = vec![f64::INFINITY; ny];
    for (p, &val) in market.passengers.iter().zip(&ui) {
        u[p.kind] = u[p.kind].min(val);
    }
    for (t, &val) in market.taxis.iter().zip(&vj) {
        v[t.kind] = v[t.kind].min(val);
    }
    let burned_passengers = market
        .passengers
        .iter()
        .zip(&ui)
        .map(|(p, &val)| val - u[p.kind])
        .collect();
    let burned_taxis = market
        .taxis
        .iter()
        .zip(&vj)
        .map(|(t, &val)| val - v[t.kind])
        .collect();
    Ok(Aggregated {
        outcome: DeterministicOutcome {
            matching: Matching::new(mu),
            u,
            v,
        },
        burned_passengers,
        burned_taxis,
    })
}

/// Builds an individual matching reproducing an aggregate stable `mu`:
/// individuals of each type are taken in a seeded random order and paired
/// segment by segment.
pub fn disaggregate_outcome(
    spec: &MarketSpec,
    out: &DeterministicOutcome,
    seed: u64,
) -> Result<IndividualMatching> {
    let market = IndividualMarket::from_spec(spec)?;
    let verdict = check_aggregate_stability(spec, out, 0.0)?;
    if !verdict.is_stable() {
        return Err(Error::Precondition(format!(
            "the outcome is not aggregate stable: {}",
            verdict.violations[0]
        )));
    }
    let (nx, ny) = spec.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools_x: Vec<Vec<usize>> = vec![Vec::new(); nx];
    let mut pools_y: Vec<Vec<usize>> = vec![Vec::new(); ny];
    for (i, p) in market.passengers.iter().enumerate() {
        pools_x[p.kind].push(i);
    }
    for (j, t) in market.taxis.iter().enumerate() {
        pools_y[t.kind].push(j);
    }
    for pool in pools_x.iter_mut().chain(pools_y.iter_mut()) {
        pool.shuffle(&mut rng);
    }
    let mut pi = IndividualMatching::empty(market.passengers.len(), market.taxis.len());
    for x in 0..nx {
        for y in 0..ny {
            for _ in 0..out.matching[[x, y]] as usize {
                // Feasibility was checked, so both pools are nonempty.
                let i = pools_x[x].pop().expect("row feasibility");
                let j = pools_y[y].pop().expect("column feasibility");
                pi.pi[[i, j]] = 1;
            }
        }
    }
    Ok(pi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn intro() -> MarketSpec {
        MarketSpec {
            passenger_types: vec!["p1".into(), "p2".into()],
            taxi_types: vec!["t".into()],
            n: vec![1.0, 1.0],
            m: vec![1.0],
            alpha: array![[2.0], [1.0]],
            gamma: array![[0.0], [0.0]],
            shocks: None,
        }
    }

    fn outcome(mu: Array2<f64>, u: Vec<f64>, v: Vec<f64>) -> DeterministicOutcome {
        DeterministicOutcome {
            matching: Matching::new(mu),
            u,
            v,
        }
    }

    #[test]
    fn intro_money_burning_outcome_is_stable() {
        let c = outcome(array![[1.0], [0.0]], vec![1.0, 0.0], vec![0.0]);
        assert!(check_aggregate_stability(&intro(), &c, 0.0).unwrap().is_stable());
    }

    #[test]
    fn intro_second_passenger_outcome_is_stable() {
        let c = outcome(array![[0.0], [1.0]], vec![0.0, 0.0], vec![0.0]);
        assert!(check_aggregate_stability(&intro(), &c, 0.0).unwrap().is_stable());
    }

    #[test]
    fn intro_bad_payoffs_violate_iv() {
        let c = outcome(array![[1.0], [0.0]], vec![2.0, 0.0], vec![1.0]);
        let v = check_aggregate_stability(&intro(), &c, 0.0).unwrap();
        assert!(!v.is_stable());
        assert!(v.cites("iv"));
        let iv = v.violations.iter().find(|c| c.condition == "iv").unwrap();
        assert_eq!(iv.location, "(p1, t)");
    }

    #[test]
    fn empty_matching_scan() {
        let c = outcome(array![[0.0], [0.0]], vec![0.0, 0.0], vec![0.0]);
        assert!(check_aggregate_stability(&intro(), &c, 0.0).unwrap().is_stable());
        let mut spec = intro();
        spec.gamma = array![[1.0], [0.0]];
        let v = check_aggregate_stability(&spec, &c, 0.0).unwrap();
        assert!(v.cites("iv") && !v.is_stable());
    }

    #[test]
    fn fractional_and_infeasible_reported() {
        let c = outcome(array![[0.5], [1.0]], vec![0.0, 0.0], vec![0.0]);
        let v = check_aggregate_stability(&intro(), &c, 0.0).unwrap();
        assert!(v.cites("i") && v.cites("iii"));
    }

    fn two_same_type() -> (MarketSpec, IndividualMarket) {
        let spec = MarketSpec {
            passenger_types: vec!["x".into()],
            taxi_types: vec!["y".into()],
            n: vec![2.0],
            m: vec![1.0],
            alpha: array![[2.0]],
            gamma: array![[0.0]],
            shocks: None,
        };
        let market = IndividualMarket::from_spec(&spec).unwrap();
        (spec, market)
    }

    #[test]
    fn classical_two_same_type_passengers() {
        let (_, market) = two_same_type();
        let mut pi = IndividualMatching::empty(2, 1);
        pi.pi[[0, 0]] = 1;
        assert!(check_classical_stability(&market, &pi).unwrap().is_stable());
        let agg = aggregate_outcome(&market, &pi).unwrap();
        assert_eq!(agg.outcome.matching[[0, 0]], 1.0);
        assert_eq!(agg.outcome.u, vec![0.0]);
        assert_eq!(agg.outcome.v, vec![0.0]);
        assert_eq!(agg.burned_passengers, vec![2.0, 0.0]);
    }

    #[test]
    fn empty_individual_matching_blocks_when_both_gain() {
        let spec = MarketSpec {
            passenger_types: vec!["x".into()],
            taxi_types: vec!["y".into()],
            n: vec![1.0],
            m: vec![1.0],
            alpha: array![[1.0]],
            gamma: array![[1.0]],
            shocks: None,
        };
        let market = IndividualMarket::from_spec(&spec).unwrap();
        let v = check_classical_stability(&market, &IndividualMatching::empty(1, 1)).unwrap();
        assert!(v.cites("iv"));
        assert!(aggregate_outcome(&market, &IndividualMatching::empty(1, 1)).is_err());
    }

    #[test]
    fn singleton_types_burn_nothing() {
        let spec = intro();
        let market = IndividualMarket::from_spec(&spec).unwrap();
        let mut pi = IndividualMatching::empty(2, 1);
        pi.pi[[0, 0]] = 1;
        let agg = aggregate_outcome(&market, &pi).unwrap();
        assert!(agg.burned_passengers.iter().all(|&b| b == 0.0));
        assert_eq!(agg.outcome.u, vec![2.0, 0.0]);
        assert!(check_aggregate_stability(&spec, &agg.outcome, 0.0).unwrap().is_stable());
    }

    #[test]
    fn disaggregation_either_passenger() {
        let (spec, market) = two_same_type();
        let out = outcome(array![[1.0]], vec![0.0], vec![0.0]);
        let mut seen = [false; 2];
        for seed in 0..20 {
            let pi = disaggregate_outcome(&spec, &out, seed).unwrap();
            assert!(check_classical_stability(&market, &pi).unwrap().is_stable());
            let (i, _) = pi.pairs()[0];
            seen[i] = true;
        }
        assert_eq!(seen, [true, true]);
    }

    #[test]
    fn disaggregation_of_empty_and_intro() {
        let spec = intro();
        let empty = outcome(array![[0.0], [0.0]], vec![0.0, 0.0], vec![0.0]);
        assert!(disaggregate_outcome(&spec, &empty, 1).unwrap().pairs().is_empty());
        let out = outcome(array![[1.0], [0.0]], vec![1.0, 0.0], vec![0.0]);
        let pi = disaggregate_outcome(&spec, &out, 1).unwrap();
        assert_eq!(pi.pairs(), vec![(0, 0)]);
    }
}
