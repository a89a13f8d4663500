//! Shared data model: markets, matchings, waiting times and outcomes.
//!
//! All numerics operate on dense row-major matrices indexed by
//! `(passenger type, taxi type)`. Type identifiers are kept only for I/O.
//! Unmatched margins are always derived from the matching and the
//! population masses, never stored.

use std::collections::HashSet;
use std::ops::Deref;

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::demand::ShockConfig;
use crate::error::{Error, Result};
use crate::io::nested;

/// Feasibility tolerance for real-valued matchings produced by iterative solvers.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// The two sides of the market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Passengers, choosing among taxi types; utilities `alpha`.
    Alpha,
    /// Taxis, choosing among passenger types; utilities `gamma`.
    Gamma,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Alpha => Side::Gamma,
            Side::Gamma => Side::Alpha,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Alpha => "alpha",
            Side::Gamma => "gamma",
        }
    }
}

/// A full market instance.
///
/// `alpha[[x, y]]` is the systematic utility of passenger type `x` riding a
/// taxi of type `y`; `gamma[[x, y]]` that of taxi type `y` serving `x`.
/// Utilities are measured in units of waiting time. `shocks` is `None` for
/// deterministic markets.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub passenger_types: Vec<String>,
    pub taxi_types: Vec<String>,
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    pub alpha: Array2<f64>,
    pub gamma: Array2<f64>,
    pub shocks: Option<ShockConfig>,
}

impl MarketSpec {
    pub fn nx(&self) -> usize {
        self.passenger_types.len()
    }

    pub fn ny(&self) -> usize {
        self.taxi_types.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx(), self.ny())
    }

    /// Checks every structural invariant. Called by all solver entry points.
    pub fn validate(&self) -> Result<()> {
        if self.passenger_types.is_empty() {
            return Err(Error::EmptyTypeSet("passenger_types"));
        }
        if self.taxi_types.is_empty() {
            return Err(Error::EmptyTypeSet("taxi_types"));
        }
        check_unique(&self.passenger_types)?;
        check_unique(&self.taxi_types)?;
        let (nx, ny) = self.dims();
        check_len("n", self.n.len(), nx)?;
        check_len("m", self.m.len(), ny)?;
        check_shape("alpha", self.alpha.dim(), (nx, ny))?;
        check_shape("gamma", self.gamma.dim(), (nx, ny))?;
        check_masses("n", &self.n)?;
        check_masses("m", &self.m)?;
        check_finite("alpha", &self.alpha)?;
        check_finite("gamma", &self.gamma)?;
        if let Some(shocks) = &self.shocks {
            shocks.validate(&self.passenger_types, &self.taxi_types)?;
        }
        Ok(())
    }

    /// Additional checks for deterministic mode: integer masses.
    pub fn validate_deterministic(&self) -> Result<()> {
        self.validate()?;
        for (side, masses) in [("n", &self.n), ("m", &self.m)] {
            for (index, &value) in masses.iter().enumerate() {
                if value.fract() != 0.0 || value > 1e15 {
                    return Err(Error::NonIntegerMass { side, index, value });
                }
            }
        }
        Ok(())
    }

    /// The same market with the roles of passengers and taxis exchanged.
    ///
    /// Matrices are transposed so that row indices always refer to the new
    /// passenger side. Applying it twice returns the original market.
    pub fn transposed(&self) -> MarketSpec {
        MarketSpec {
            passenger_types: self.taxi_types.clone(),
            taxi_types: self.passenger_types.clone(),
            n: self.m.clone(),
            m: self.n.clone(),
            alpha: self.gamma.t().to_owned(),
            gamma: self.alpha.t().to_owned(),
            shocks: self.shocks.as_ref().map(ShockConfig::swapped),
        }
    }

    /// Copy with a different shock description.
    pub fn with_shocks(&self, shocks: Option<ShockConfig>) -> MarketSpec {
        MarketSpec {
            shocks,
            ..self.clone()
        }
    }
}

/// Validates a market, returning it unchanged if every invariant holds.
pub fn validate_market(spec: MarketSpec) -> Result<MarketSpec> {
    spec.validate()?;
    Ok(spec)
}

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateType(id.clone()));
        }
    }
    Ok(())
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn check_shape(what: &str, found: (usize, usize), expected: (usize, usize)) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        });
    }
    Ok(())
}

fn check_masses(side: &'static str, masses: &[f64]) -> Result<()> {
    for (index, &value) in masses.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveMass { side, index, value });
        }
    }
    Ok(())
}

fn check_finite(matrix: &'static str, a: &Array2<f64>) -> Result<()> {
    for ((row, col), &value) in a.indexed_iter() {
        if !value.is_finite() {
            return Err(Error::NonFiniteUtility {
                matrix,
                row,
                col,
                value,
            });
        }
    }
    Ok(())
}

/// A type-level matching `mu[[x, y]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    mu: Array2<f64>,
}

impl Matching {
    pub fn new(mu: Array2<f64>) -> Self {
        Matching { mu }
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Matching {
            mu: Array2::zeros((nx, ny)),
        }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.mu
    }

    /// Unmatched passengers per type, `n_x - sum_y mu_xy`.
    pub fn unmatched_passengers(&self, n: &[f64]) -> Vec<f64> {
        n.iter()
            .zip(self.mu.rows())
            .map(|(&nx, row)| nx - row.sum())
            .collect()
    }

    /// Unmatched taxis per type, `m_y - sum_x mu_xy`.
    pub fn unmatched_taxis(&self, m: &[f64]) -> Vec<f64> {
        m.iter()
            .zip(self.mu.columns())
            .map(|(&my, col)| my - col.sum())
            .collect()
    }

    /// Nonnegativity and margin feasibility within `eps`.
    pub fn check_feasible(&self, n: &[f64], m: &[f64], eps: f64) -> Result<()> {
        for ((x, y), &v) in self.mu.indexed_iter() {
            if !v.is_finite() || v < -eps {
                return Err(Error::InvariantViolation(format!(
                    "mu[{x}][{y}] = {v} is negative"
                )));
            }
        }
        for (x, slack) in self.unmatched_passengers(n).into_iter().enumerate() {
            if slack < -eps {
                return Err(Error::InvariantViolation(format!(
                    "row {x} exceeds n_x by {}",
                    -slack
                )));
            }
        }
        for (y, slack) in self.unmatched_taxis(m).into_iter().enumerate() {
            if slack < -eps {
                return Err(Error::InvariantViolation(format!(
                    "column {y} exceeds m_y by {}",
                    -slack
                )));
            }
        }
        Ok(())
    }
}

impl Deref for Matching {
    type Target = Array2<f64>;
    fn deref(&self) -> &Array2<f64> {
        &self.mu
    }
}

impl Serialize for Matching {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        nested::serialize(&self.mu, s)
    }
}

impl<'de> Deserialize<'de> for Matching {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Matching::new(nested::deserialize(d)?))
    }
}

/// Nonnegative waiting times for one side of the market.
#[derive(Debug, Clone, PartialEq)]
pub struct WaitMatrix {
    tau: Array2<f64>,
}

impl WaitMatrix {
    pub fn new(tau: Array2<f64>) -> Result<Self> {
        for ((row, col), &v) in tau.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteWait { row, col });
            }
            if v < 0.0 {
                return Err(Error::InvariantViolation(format!(
                    "waiting time [{row}][{col}] = {v} is negative"
                )));
            }
        }
        Ok(WaitMatrix { tau })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        WaitMatrix {
            tau: Array2::zeros((nx, ny)),
        }
    }

    /// Positive part of a signed matrix.
    pub fn positive_part(theta: &Array2<f64>) -> Self {
        WaitMatrix {
            tau: theta.mapv(|t| t.max(0.0)),
        }
    }

    /// Negative part of a signed matrix, `max(-t, 0)`.
    pub fn negative_part(theta: &Array2<f64>) -> Self {
        WaitMatrix {
            tau: theta.mapv(|t| (-t).max(0.0)),
        }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.tau
    }
}

impl Deref for WaitMatrix {
    type Target = Array2<f64>;
    fn deref(&self) -> &Array2<f64> {
        &self.tau
    }
}

impl Serialize for WaitMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        nested::serialize(&self.tau, s)
    }
}

impl<'de> Deserialize<'de> for WaitMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tau = nested::deserialize(d)?;
        WaitMatrix::new(tau).map_err(serde::de::Error::custom)
    }
}

/// Solver bookkeeping attached to every random-utility outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub solver: String,
    pub iterations: usize,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Result of any random-utility solver: the matching and both wait matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumOutcome {
    #[serde(rename = "mu")]
    pub matching: Matching,
    pub tau_alpha: WaitMatrix,
    pub tau_gamma: WaitMatrix,
    pub diagnostics: Diagnostics,
}

impl EquilibriumOutcome {
    /// Largest `min(tau_alpha, tau_gamma)` over segments; zero when waiting
    /// is one-sided everywhere.
    pub fn two_sided_wait(&self) -> f64 {
        self.tau_alpha
            .iter()
            .zip(self.tau_gamma.iter())
            .map(|(a, g)| a.min(*g))
            .fold(0.0, f64::max)
    }

    /// Outcome of the transposed market mapped back to this orientation.
    pub fn transposed(&self) -> EquilibriumOutcome {
        EquilibriumOutcome {
            matching: Matching::new(self.matching.t().to_owned()),
            tau_alpha: WaitMatrix {
                tau: self.tau_gamma.t().to_owned(),
            },
            tau_gamma: WaitMatrix {
                tau: self.tau_alpha.t().to_owned(),
            },
            diagnostics: self.diagnostics.clone(),
        }
    }
}

/// A deterministic-utility outcome `(mu, u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicOutcome {
    #[serde(rename = "mu")]
    pub matching: Matching,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Waiting times compatible with a deterministic outcome:
/// `tau_alpha = max(alpha - u, 0)` and `tau_gamma = max(gamma - v, 0)`.
pub fn recover_waits(
    out: &DeterministicOutcome,
    spec: &MarketSpec,
) -> Result<(WaitMatrix, WaitMatrix)> {
    let (nx, ny) = spec.dims();
    check_len("u", out.u.len(), nx)?;
    check_len("v", out.v.len(), ny)?;
    let tau_alpha = Array2::from_shape_fn((nx, ny), |(x, y)| {
        (spec.alpha[[x, y]] - out.u[x]).max(0.0)
    });
    let tau_gamma = Array2::from_shape_fn((nx, ny), |(x, y)| {
        (spec.gamma[[x, y]] - out.v[y]).max(0.0)
    });
    Ok((WaitMatrix::new(tau_alpha)?, WaitMatrix::new(tau_gamma)?))
}

/// One individual agent and the index of its observable type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Individual {
    pub id: String,
    pub kind: usize,
}

/// The individual-level market underlying a deterministic market with
/// integer masses. Individuals are listed type by type, in type order.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualMarket {
    pub passengers: Vec<Individual>,
    pub taxis: Vec<Individual>,
    pub alpha: Array2<f64>,
    pub gamma: Array2<f64>,
}

impl IndividualMarket {
    pub fn from_spec(spec: &MarketSpec) -> Result<Self> {
        spec.validate_deterministic()?;
        let expand = |ids: &[String], masses: &[f64]| -> Vec<Individual> {
            ids.iter()
                .zip(masses)
                .enumerate()
                .flat_map(|(kind, (id, &count))| {
                    (1..=count as usize).map(move |k| Individual {
                        id: format!("{id}#{k}"),
                        kind,
                    })
                })
                .collect()
        };
        Ok(IndividualMarket {
            passengers: expand(&spec.passenger_types, &spec.n),
            taxis: expand(&spec.taxi_types, &spec.m),
            alpha: spec.alpha.clone(),
            gamma: spec.gamma.clone(),
        })
    }

    pub fn alpha_ij(&self, i: usize, j: usize) -> f64 {
        self.alpha[[self.passengers[i].kind, self.taxis[j].kind]]
    }

    pub fn gamma_ij(&self, i: usize, j: usize) -> f64 {
        self.gamma[[self.passengers[i].kind, self.taxis[j].kind]]
    }

    pub fn type_counts(&self) -> (Vec<usize>, Vec<usize>) {
        let (nx, ny) = self.alpha.dim();
        let mut n = vec![0; nx];
        let mut m = vec![0; ny];
        for p in &self.passengers {
            n[p.kind] += 1;
        }
        for t in &self.taxis {
            m[t.kind] += 1;
        }
        (n, m)
    }
}

/// A binary individual-level matching `pi[[i, j]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualMatching {
    #[serde(with = "nested")]
    pub pi: Array2<u8>,
}

impl IndividualMatching {
    pub fn empty(num_passengers: usize, num_taxis: usize) -> Self {
        IndividualMatching {
            pi: Array2::zeros((num_passengers, num_taxis)),
        }
    }

    /// Matched pairs `(i, j)` in row-major order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.pi
            .indexed_iter()
            .filter(|(_, &v)| v != 0)
            .map(|(ij, _)| ij)
            .collect()
    }
}
