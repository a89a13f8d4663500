//! Cross-solver batch on seeded random instances.

use ndarray::Array2;
use serde::Serialize;

use crate::da::{da_run, DaOptions, Proposer};
use crate::equilibrium::{solve_equilibrium, solve_equilibrium_logit, sup_norm, EquilibriumOptions};
use crate::error::Result;
use crate::generate::{gen_instance, GenOptions};
use crate::model::MarketSpec;
use crate::queue::{sim_run, SimOptions, WaitMap};

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub instances: usize,
    /// Largest number of types on either side.
    pub max_types: usize,
    pub base_seed: u64,
    /// Pass threshold on the largest pairwise deviation of `mu`.
    pub tol: f64,
    /// Also compare the stationary point of the queue simulation.
    pub simulate: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            instances: 50,
            max_types: 8,
            base_seed: 0,
            tol: 1e-6,
            simulate: true,
        }
    }
}

/// Instance `i` of the default set: logit shocks with unit scale and type
/// counts cycling through `1..=max_types`.
pub fn suite_instance(i: usize, opts: &SuiteOptions) -> Result<MarketSpec> {
    let k = opts.max_types.max(1);
    let seed = opts.base_seed + i as u64;
    gen_instance(&GenOptions {
        nx: 1 + (seed as usize * 7) % k,
        ny: 1 + (seed as usize * 5 + 3) % k,
        seed,
        ..Default::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub index: usize,
    pub nx: usize,
    pub ny: usize,
    /// Solver names, in the order of `matchings`.
    pub solvers: Vec<String>,
    pub max_deviation: f64,
    pub da_rounds: [usize; 2],
    pub da_violations: Vec<String>,
    /// `None` when the simulation was skipped.
    pub simulation_stationary: Option<bool>,
    #[serde(skip)]
    pub matchings: Vec<Array2<f64>>,
}

/// Solves one market with every solver and records the largest pairwise
/// sup-norm distance between the matchings.
pub fn run_instance(index: usize, spec: &MarketSpec, simulate: bool) -> Result<InstanceReport> {
    let eq_opts = EquilibriumOptions::with_tol(1e-11);
    let mut solvers = vec!["general".to_string(), "logit".to_string()];
    let mut matchings = vec![
        solve_equilibrium(spec, &eq_opts)?.matching.into_inner(),
        solve_equilibrium_logit(spec, &eq_opts)?.matching.into_inner(),
    ];
    let mut da_rounds = [0; 2];
    let mut da_violations = Vec::new();
    for (k, proposer) in [Proposer::Passengers, Proposer::Taxis].into_iter().enumerate() {
        let run = da_run(
            spec,
            &DaOptions {
                tol: 1e-10,
                proposer,
                ..Default::default()
            },
        )?;
        da_rounds[k] = run.rounds.len();
        da_violations.extend(run.violations);
        solvers.push(format!("da-{proposer:?}").to_lowercase());
        matchings.push(run.outcome.matching.into_inner());
    }
    let mut simulation_stationary = None;
    if simulate {
        let run = sim_run(
            spec,
            &SimOptions {
                wait_map: WaitMap::Little,
                periods: 100_000,
                stat_tol: 1e-10,
            },
        )?;
        simulation_stationary = Some(run.report.is_stationary());
        if run.report.is_stationary() {
            solvers.push("simulation".to_string());
            matchings.push(run.report.outcome.matching.into_inner());
        }
    }
    let mut max_deviation = 0.0f64;
    for (a, ma) in matchings.iter().enumerate() {
        for mb in &matchings[a + 1..] {
            max_deviation = max_deviation.max(sup_norm(&(ma - mb)));
        }
    }
    Ok(InstanceReport {
        index,
        nx: spec.nx(),
        ny: spec.ny(),
        solvers,
        max_deviation,
        da_rounds,
        da_violations,
        simulation_stationary,
        matchings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub instances: Vec<InstanceReport>,
    pub max_deviation: f64,
    pub tol: f64,
}

impl SuiteReport {
    pub fn from_instances(instances: Vec<InstanceReport>, tol: f64) -> Self {
        let max_deviation = instances.iter().fold(0.0f64, |m, r| m.max(r.max_deviation));
        SuiteReport {
            instances,
            max_deviation,
            tol,
        }
    }

    /// Deviation within tolerance, no DA invariant broken and every
    /// simulation stationary.
    pub fn passed(&self) -> bool {
        self.max_deviation <= self.tol
            && self.instances.iter().all(|r| {
                r.da_violations.is_empty() && r.simulation_stationary != Some(false)
            })
    }
}

/// Runs the suite sequentially.
pub fn run_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let mut reports = Vec::with_capacity(opts.instances);
    for i in 0..opts.instances {
        let spec = suite_instance(i, opts)?;
        reports.push(run_instance(i, &spec, opts.simulate)?);
    }
    Ok(SuiteReport::from_instances(reports, opts.tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = run_suite(&SuiteOptions {
            instances: 4,
            max_types: 3,
            ..Default::default()
        })
        .unwrap();
        assert!(r.passed(), "max deviation {}", r.max_deviation);
        assert_eq!(r.instances[0].solvers.len(), 5);
    }

    #[test]
    fn instances_are_reproducible() {
        let o = SuiteOptions::default();
        assert_eq!(suite_instance(3, &o).unwrap(), suite_instance(3, &o).unwrap());
        let s = suite_instance(5, &o).unwrap();
        assert!(s.nx() <= 8 && s.ny() <= 8);
    }
}
