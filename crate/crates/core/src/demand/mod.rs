//! Discrete-choice demand systems for both sides of the market.
//!
//! Passengers of type `x` choose among taxi types (and the outside option)
//! with values `alpha[[x, y]] - tau[[x, y]]`; taxis of type `y` choose among
//! passenger types with values `gamma[[x, y]] - tau[[x, y]]`. Shocks are i.i.d.
//! across alternatives and scaled by `sigma`.

mod kernel;
pub mod quadrature;

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MarketSpec, Side};
use kernel::Kernel;

/// Standardized shock family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gumbel,
    Normal,
    Logistic,
}

fn default_order() -> usize {
    64
}

/// Shock distribution for one chooser type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShockSpec {
    /// Gumbel shocks, closed-form logit probabilities.
    Logit { sigma: f64 },
    /// I.i.d. shocks, probabilities by quadrature of order `order`.
    Iid {
        family: Family,
        sigma: f64,
        #[serde(default = "default_order")]
        order: usize,
    },
    /// I.i.d. shocks, probabilities by frequency over `draws` fixed samples.
    Montecarlo {
        family: Family,
        sigma: f64,
        draws: usize,
        seed: u64,
    },
}

impl ShockSpec {
    pub fn sigma(&self) -> f64 {
        match *self {
            ShockSpec::Logit { sigma }
            | ShockSpec::Iid { sigma, .. }
            | ShockSpec::Montecarlo { sigma, .. } => sigma,
        }
    }

    pub fn exactness(&self) -> Exactness {
        match self {
            ShockSpec::Logit { .. }
            | ShockSpec::Iid {
                family: Family::Gumbel,
                ..
            } => Exactness::ClosedForm,
            ShockSpec::Iid { .. } => Exactness::Quadrature,
            ShockSpec::Montecarlo { .. } => Exactness::Sampled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidShock(format!("sigma must be positive, got {sigma}")));
        }
        match *self {
            ShockSpec::Iid { order, .. } if !(16..=1024).contains(&order) => Err(
                Error::InvalidShock(format!("quadrature order must be in [16, 1024], got {order}")),
            ),
            ShockSpec::Montecarlo { draws, .. } if !(10_000..=10_000_000).contains(&draws) => {
                Err(Error::InvalidShock(format!(
                    "draw count must be in [1e4, 1e7], got {draws}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Copy with a different scale.
    pub fn with_sigma(&self, sigma: f64) -> ShockSpec {
        let mut s = self.clone();
        match &mut s {
            ShockSpec::Logit { sigma: s }
            | ShockSpec::Iid { sigma: s, .. }
            | ShockSpec::Montecarlo { sigma: s, .. } => *s = sigma,
        }
        s
    }
}

/// Market-level shock description: a default for every type plus optional
/// per-type overrides keyed by type identifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockConfig {
    #[serde(flatten)]
    pub default: ShockSpec,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub passenger_overrides: BTreeMap<String, ShockSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub taxi_overrides: BTreeMap<String, ShockSpec>,
}

impl ShockConfig {
    pub fn uniform(default: ShockSpec) -> Self {
        ShockConfig {
            default,
            passenger_overrides: BTreeMap::new(),
            taxi_overrides: BTreeMap::new(),
        }
    }

    pub fn logit(sigma: f64) -> Self {
        ShockConfig::uniform(ShockSpec::Logit { sigma })
    }

    pub fn validate(&self, passenger_types: &[String], taxi_types: &[String]) -> Result<()> {
        self.default.validate()?;
        for (overrides, ids) in [
            (&self.passenger_overrides, passenger_types),
            (&self.taxi_overrides, taxi_types),
        ] {
            for (id, spec) in overrides {
                if !ids.contains(id) {
                    return Err(Error::UnknownType(id.clone()));
                }
                spec.validate()?;
            }
        }
        Ok(())
    }

    /// Shock of the chooser type `id` on `side`.
    pub fn for_type(&self, side: Side, id: &str) -> &ShockSpec {
        let overrides = match side {
            Side::Alpha => &self.passenger_overrides,
            Side::Gamma => &self.taxi_overrides,
        };
        overrides.get(id).unwrap_or(&self.default)
    }

    /// The same description with passenger and taxi overrides exchanged.
    pub fn swapped(&self) -> Self {
        ShockConfig {
            default: self.default.clone(),
            passenger_overrides: self.taxi_overrides.clone(),
            taxi_overrides: self.passenger_overrides.clone(),
        }
    }

    fn all_specs(&self) -> impl Iterator<Item = &ShockSpec> {
        std::iter::once(&self.default)
            .chain(self.passenger_overrides.values())
            .chain(self.taxi_overrides.values())
    }

    /// Common scale if every type has logit shocks.
    pub fn logit_sigma(&self) -> Option<f64> {
        let sigma = self.default.sigma();
        self.all_specs()
            .all(|s| matches!(s, ShockSpec::Logit { .. }) && s.sigma() == sigma)
            .then_some(sigma)
    }
}

/// How a provider computes choice probabilities. Ordered from most to least
/// accurate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exactness {
    ClosedForm,
    Quadrature,
    Sampled,
}

impl Exactness {
    pub fn is_smooth(self) -> bool {
        self != Exactness::Sampled
    }
}

/// Chooser and alternative indices of segment `(x, y)` as seen from `side`.
pub fn roles(side: Side, x: usize, y: usize) -> (usize, usize) {
    match side {
        Side::Alpha => (x, y),
        Side::Gamma => (y, x),
    }
}

/// Demand of one side of the market as a function of that side's waits.
///
/// A chooser is a passenger type (alpha side, one row) or a taxi type (gamma
/// side, one column). Changing `tau[[x, y]]` only affects the chooser that
/// owns segment `(x, y)`.
pub trait DemandProvider: Send + Sync {
    fn side(&self) -> Side;

    /// Market dimensions `(|X|, |Y|)`.
    fn dims(&self) -> (usize, usize);

    fn exactness(&self) -> Exactness;

    /// Masses of the choosing types.
    fn masses(&self) -> &[f64];

    /// Systematic utilities of this side, in `(x, y)` orientation.
    fn utilities(&self) -> &Array2<f64>;

    /// Per-chooser logit scales when every chooser has logit shocks.
    fn logit_scales(&self) -> Option<Vec<f64>>;

    /// Writes chooser `c`'s demand for each alternative into `out` and
    /// returns its outside-option demand.
    fn chooser_demand(&self, c: usize, tau: &Array2<f64>, out: &mut [f64]) -> f64;

    fn num_choosers(&self) -> usize {
        let (nx, ny) = self.dims();
        match self.side() {
            Side::Alpha => nx,
            Side::Gamma => ny,
        }
    }

    fn num_alternatives(&self) -> usize {
        let (nx, ny) = self.dims();
        match self.side() {
            Side::Alpha => ny,
            Side::Gamma => nx,
        }
    }

    /// Demand matrix and outside-option vector at waits `tau`.
    fn demand(&self, tau: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
        check_tau(tau, self.dims())?;
        Ok(self.demand_unchecked(tau))
    }

    /// [`DemandProvider::demand`] without input validation, for solver loops.
    fn demand_unchecked(&self, tau: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
        let side = self.side();
        let mut mu = Array2::zeros(self.dims());
        let mut outside = vec![0.0; self.num_choosers()];
        let mut buf = vec![0.0; self.num_alternatives()];
        for (c, o) in outside.iter_mut().enumerate() {
            *o = self.chooser_demand(c, tau, &mut buf);
            for (a, &d) in buf.iter().enumerate() {
                let (x, y) = roles(side, c, a);
                mu[[x, y]] = d;
            }
        }
        (mu, outside)
    }

    /// Demand for segment `(x, y)` only.
    fn segment_demand(&self, x: usize, y: usize, tau: &Array2<f64>, buf: &mut [f64]) -> f64 {
        let (c, a) = roles(self.side(), x, y);
        self.chooser_demand(c, tau, buf);
        buf[a]
    }
}

pub(crate) fn check_tau(tau: &Array2<f64>, dims: (usize, usize)) -> Result<()> {
    if tau.dim() != dims {
        return Err(Error::DimensionMismatch {
            what: "tau".to_string(),
            expected: format!("{}x{}", dims.0, dims.1),
            found: format!("{}x{}", tau.dim().0, tau.dim().1),
        });
    }
    if let Some(((row, col), _)) = tau.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteWait { row, col });
    }
    Ok(())
}

/// Demand provider built from a market's shock description.
#[derive(Debug, Clone)]
pub struct ShockProvider {
    side: Side,
    dims: (usize, usize),
    masses: Vec<f64>,
    utilities: Array2<f64>,
    kernels: Vec<Kernel>,
    exactness: Exactness,
}

impl ShockProvider {
    pub fn new(spec: &MarketSpec, side: Side) -> Result<Self> {
        spec.validate()?;
        let shocks = spec.shocks.as_ref().ok_or(Error::NoShocks)?;
        let (ids, masses, utilities, alternatives) = match side {
            Side::Alpha => (&spec.passenger_types, &spec.n, &spec.alpha, spec.ny()),
            Side::Gamma => (&spec.taxi_types, &spec.m, &spec.gamma, spec.nx()),
        };
        let specs: Vec<&ShockSpec> = ids.iter().map(|id| shocks.for_type(side, id)).collect();
        let kernels = specs
            .iter()
            .enumerate()
            .map(|(c, s)| Kernel::new(s, alternatives, stream_id(side, c)))
            .collect();
        let exactness = specs
            .iter()
            .map(|s| s.exactness())
            .max()
            .expect("at least one type");
        Ok(ShockProvider {
            side,
            dims: spec.dims(),
            masses: masses.clone(),
            utilities: utilities.clone(),
            kernels,
            exactness,
        })
    }
}

fn stream_id(side: Side, chooser: usize) -> u64 {
    2 * chooser as u64 + u64::from(side == Side::Gamma)
}

impl DemandProvider for ShockProvider {
    fn side(&self) -> Side {
        self.side
    }

    fn dims(&self) -> (usize, usize) {
        self.dims
    }

    fn exactness(&self) -> Exactness {
        self.exactness
    }

    fn masses(&self) -> &[f64] {
        &self.masses
    }

    fn utilities(&self) -> &Array2<f64> {
        &self.utilities
    }

    fn logit_scales(&self) -> Option<Vec<f64>> {
        self.kernels
            .iter()
            .map(|k| match k {
                Kernel::Logit { sigma } => Some(*sigma),
                _ => None,
            })
            .collect()
    }

    fn chooser_demand(&self, c: usize, tau: &Array2<f64>, out: &mut [f64]) -> f64 {
        let w: Vec<f64> = match self.side {
            Side::Alpha => (0..out.len())
                .map(|y| self.utilities[[c, y]] - tau[[c, y]])
                .collect(),
            Side::Gamma => (0..out.len())
                .map(|x| self.utilities[[x, c]] - tau[[x, c]])
                .collect(),
        };
        let p0 = self.kernels[c].probabilities(&w, out);
        let mass = self.masses[c];
        for o in out.iter_mut() {
            *o *= mass;
        }
        p0 * mass
    }
}

/// Passenger-side demand `(mu_alpha, mu_x0)` at waits `tau`.
pub fn demand_alpha(spec: &MarketSpec, tau: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    ShockProvider::new(spec, Side::Alpha)?.demand(tau)
}

/// Taxi-side demand `(mu_gamma, mu_0y)` at waits `tau`.
pub fn demand_gamma(spec: &MarketSpec, tau: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    ShockProvider::new(spec, Side::Gamma)?.demand(tau)
}

/// Scale of each chooser's kernel, for diagnostics.
pub fn chooser_sigmas(spec: &MarketSpec, side: Side) -> Result<Vec<f64>> {
    let p = ShockProvider::new(spec, side)?;
    Ok(p.kernels.iter().map(Kernel::sigma).collect())
}

/// One failed property check with the data that exhibits it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub property: String,
    pub witness: String,
}

/// Outcome of a randomized property check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub trials: usize,
    pub checks: usize,
    pub violations: Vec<Violation>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative slack for weak inequalities between demands computed in
/// floating point.
const WEAK_SLACK: f64 = 1e-13;

/// Randomized check of the gross-substitutes structure of demand.
///
/// Each trial draws `tau` uniformly in `[-3, 3]`, bumps one coordinate by
/// `delta` (uniform in `(0, 1]` when `None`) and checks that own demand
/// strictly falls, cross demands weakly rise, the outside option strictly
/// rises and other choosers are unaffected. With `delta = 0` every demand
/// must be unchanged.
pub fn check_assumption1(
    provider: &dyn DemandProvider,
    trials: usize,
    seed: u64,
    delta: Option<f64>,
) -> Result<PropertyReport> {
    if !provider.exactness().is_smooth() {
        return Err(Error::ProviderNotSmooth(
            "sampled demand is a step function of the waits".to_string(),
        ));
    }
    if let Some(d) = delta {
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("bump must be >= 0, got {d}")));
        }
    }
    let (nx, ny) = provider.dims();
    let side = provider.side();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = Vec::new();
    let mut checks = 0;
    for trial in 0..trials {
        let tau = Array2::from_shape_fn((nx, ny), |_| rng.random_range(-3.0..3.0));
        let (x, y) = (rng.random_range(0..nx), rng.random_range(0..ny));
        let d = delta.unwrap_or_else(|| rng.random_range(f64::EPSILON..=1.0));
        let mut bumped = tau.clone();
        bumped[[x, y]] += d;
        let (mu0, out0) = provider.demand_unchecked(&tau);
        let (mu1, out1) = provider.demand_unchecked(&bumped);
        let (c, own) = roles(side, x, y);
        let mut fail = |property: &str, detail: String| {
            violations.push(Violation {
                property: property.to_string(),
                witness: format!("trial {trial}, bump ({x},{y}) by {d}: {detail}"),
            });
        };
        for cx in 0..nx {
            for cy in 0..ny {
                checks += 1;
                let (before, after) = (mu0[[cx, cy]], mu1[[cx, cy]]);
                let (chooser, alt) = roles(side, cx, cy);
                let slack = WEAK_SLACK * before.abs().max(1e-300);
                if d == 0.0 || chooser != c {
                    if before != after {
                        fail("unchanged", format!("demand ({cx},{cy}) {before} -> {after}"));
                    }
                } else if alt == own {
                    if !(after < before) {
                        fail(
                            "own demand strictly decreasing",
                            format!("demand ({cx},{cy}) {before} -> {after}"),
                        );
                    }
                } else if after < before - slack {
                    fail(
                        "cross demand weakly increasing",
                        format!("demand ({cx},{cy}) {before} -> {after}"),
                    );
                }
            }
        }
        checks += 1;
        let (b, a) = (out0[c], out1[c]);
        if d == 0.0 {
            if b != a {
                fail("unchanged", format!("outside {b} -> {a}"));
            }
        } else if !(a > b) {
            fail("outside demand strictly increasing", format!("outside {b} -> {a}"));
        }
    }
    Ok(PropertyReport {
        trials,
        checks,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn single(n: f64, m: f64, shocks: ShockSpec) -> MarketSpec {
        MarketSpec {
            passenger_types: vec!["x".into()],
            taxi_types: vec!["y".into()],
            n: vec![n],
            m: vec![m],
            alpha: array![[0.0]],
            gamma: array![[0.0]],
            shocks: Some(ShockConfig::uniform(shocks)),
        }
    }

    #[test]
    fn binary_logit_examples() {
        let spec = single(1.0, 1.0, ShockSpec::Logit { sigma: 1.0 });
        let (mu, out) = demand_alpha(&spec, &array![[0.0]]).unwrap();
        assert_eq!(mu[[0, 0]], 0.5);
        assert_eq!(out[0], 0.5);
        let (mu, _) = demand_alpha(&spec, &array![[1.0]]).unwrap();
        let e = (-1f64).exp();
        assert_abs_diff_eq!(mu[[0, 0]], e / (1.0 + e), epsilon = 1e-15);
        assert_abs_diff_eq!(mu[[0, 0]], 0.268941, epsilon = 1e-6);
        let (mu, _) = demand_gamma(&spec, &array![[0.0]]).unwrap();
        assert_eq!(mu[[0, 0]], 0.5);
    }

    #[test]
    fn binary_normal_tie() {
        let spec = single(
            1.0,
            1.0,
            ShockSpec::Iid {
                family: Family::Normal,
                sigma: 1.0,
                order: 64,
            },
        );
        let (mu, _) = demand_alpha(&spec, &array![[0.0]]).unwrap();
        assert_abs_diff_eq!(mu[[0, 0]], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn taxi_choice_over_two_passenger_types() {
        let mut spec = single(1.0, 1.0, ShockSpec::Logit { sigma: 1.0 });
        spec.passenger_types.push("x2".into());
        spec.n.push(1.0);
        spec.alpha = array![[0.0], [0.0]];
        spec.gamma = array![[0.0], [0.0]];
        let (mu, out) = demand_gamma(&spec, &array![[0.0], [0.0]]).unwrap();
        assert_abs_diff_eq!(mu[[0, 0]], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mu[[1, 0]], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[0], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn nonfinite_tau_rejected() {
        let spec = single(1.0, 1.0, ShockSpec::Logit { sigma: 1.0 });
        assert!(matches!(
            demand_alpha(&spec, &array![[f64::INFINITY]]),
            Err(Error::NonFiniteWait { row: 0, col: 0 })
        ));
    }

    #[test]
    fn deterministic_market_has_no_provider() {
        let mut spec = single(1.0, 1.0, ShockSpec::Logit { sigma: 1.0 });
        spec.shocks = None;
        assert!(matches!(
            ShockProvider::new(&spec, Side::Alpha),
            Err(Error::NoShocks)
        ));
    }

    #[test]
    fn shock_validation() {
        assert!(ShockSpec::Logit { sigma: 0.0 }.validate().is_err());
        assert!(ShockSpec::Iid {
            family: Family::Normal,
            sigma: 1.0,
            order: 8
        }
        .validate()
        .is_err());
        assert!(ShockSpec::Montecarlo {
            family: Family::Gumbel,
            sigma: 1.0,
            draws: 100,
            seed: 1
        }
        .validate()
        .is_err());
    }

    #[test]
    fn unknown_override_rejected() {
        let mut spec = single(1.0, 1.0, ShockSpec::Logit { sigma: 1.0 });
        let mut cfg = ShockConfig::logit(1.0);
        cfg.taxi_overrides
            .insert("nope".into(), ShockSpec::Logit { sigma: 2.0 });
        spec.shocks = Some(cfg);
        assert!(matches!(spec.validate(), Err(Error::UnknownType(_))));
    }

    #[test]
    fn override_changes_one_chooser() {
        let mut spec = single(1.0, 1.0, ShockSpec::Logit { sigma: 1.0 });
        spec.passenger_types.push("x2".into());
        spec.n.push(1.0);
        spec.alpha = array![[1.0], [1.0]];
        spec.gamma = array![[0.0], [0.0]];
        let mut cfg = ShockConfig::logit(1.0);
        cfg.passenger_overrides
            .insert("x2".into(), ShockSpec::Logit { sigma: 2.0 });
        spec.shocks = Some(cfg);
        let (mu, _) = demand_alpha(&spec, &array![[0.0], [0.0]]).unwrap();
        let e1 = 1f64.exp();
        let e2 = 0.5f64.exp();
        assert_abs_diff_eq!(mu[[0, 0]], e1 / (1.0 + e1), epsilon = 1e-15);
        assert_abs_diff_eq!(mu[[1, 0]], e2 / (1.0 + e2), epsilon = 1e-15);
        assert_eq!(spec.shocks.as_ref().unwrap().logit_sigma(), None);
    }

    #[test]
    fn shock_json_forms() {
        let c: ShockConfig = serde_json::from_str(r#"{"kind":"logit","sigma":0.5}"#).unwrap();
        assert_eq!(c, ShockConfig::logit(0.5));
        let c: ShockConfig =
            serde_json::from_str(r#"{"kind":"iid","family":"normal","sigma":1}"#).unwrap();
        assert_eq!(
            c.default,
            ShockSpec::Iid {
                family: Family::Normal,
                sigma: 1.0,
                order: 64
            }
        );
        let c: ShockConfig = serde_json::from_str(
            r#"{"kind":"montecarlo","family":"gumbel","sigma":1,"draws":10000,"seed":18446744073709551615,
                "passenger_overrides":{"a":{"kind":"logit","sigma":2}}}"#,
        )
        .unwrap();
        assert!(matches!(c.default, ShockSpec::Montecarlo { seed: u64::MAX, .. }));
        assert_eq!(c.passenger_overrides.len(), 1);
        let back: ShockConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn assumption1_rejects_sampled_provider() {
        let spec = single(
            1.0,
            1.0,
            ShockSpec::Montecarlo {
                family: Family::Gumbel,
                sigma: 1.0,
                draws: 10_000,
                seed: 3,
            },
        );
        let p = ShockProvider::new(&spec, Side::Alpha).unwrap();
        assert!(matches!(
            check_assumption1(&p, 10, 0, None),
            Err(Error::ProviderNotSmooth(_))
        ));
    }

    #[test]
    fn assumption1_zero_bump_is_accepted() {
        let mut spec = single(1.0, 2.0, ShockSpec::Logit { sigma: 1.0 });
        spec.taxi_types.push("y2".into());
        spec.m.push(1.0);
        spec.alpha = array![[0.5, -0.5]];
        spec.gamma = array![[0.0, 1.0]];
        for side in [Side::Alpha, Side::Gamma] {
            let p = ShockProvider::new(&spec, side).unwrap();
            let r = check_assumption1(&p, 20, 1, Some(0.0)).unwrap();
            assert!(r.passed(), "{:?}", r.violations);
        }
    }
}
