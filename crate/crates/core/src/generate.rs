//! Seeded random market instances.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::ShockConfig;
use crate::error::{Error, Result};
use crate::model::MarketSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub nx: usize,
    pub ny: usize,
    pub utility_range: (f64, f64),
    pub mass_range: (f64, f64),
    pub seed: u64,
    /// Draw masses (and utilities) as integers within the ranges.
    pub integer: bool,
    /// `None` produces a deterministic market.
    pub shocks: Option<ShockConfig>,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            nx: 3,
            ny: 3,
            utility_range: (-2.0, 2.0),
            mass_range: (0.5, 2.0),
            seed: 0,
            integer: false,
            shocks: Some(ShockConfig::logit(1.0)),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64), integer: bool) -> f64 {
    if integer {
        let (a, b) = (lo.ceil() as i64, hi.floor() as i64);
        rng.random_range(a..=b) as f64
    } else if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), integer: bool) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::InvalidArgument(format!("{name} range [{lo}, {hi}] is empty")));
    }
    if integer && lo.ceil() > hi.floor() {
        return Err(Error::InvalidArgument(format!(
            "{name} range [{lo}, {hi}] contains no integer"
        )));
    }
    Ok(())
}

/// Draws utilities and masses uniformly from the given ranges. The same
/// options always produce the same market.
pub fn gen_instance(opts: &GenOptions) -> Result<MarketSpec> {
    if opts.nx == 0 || opts.ny == 0 {
        return Err(Error::InvalidArgument("need at least one type per side".to_string()));
    }
    check_range("utility", opts.utility_range, opts.integer)?;
    check_range("mass", opts.mass_range, opts.integer)?;
    if !(opts.mass_range.0 > 0.0) || (opts.integer && opts.mass_range.1 < 1.0) {
        return Err(Error::InvalidArgument("masses must be positive".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (nx, ny) = (opts.nx, opts.ny);
    let alpha = Array2::from_shape_simple_fn((nx, ny), || {
        draw(&mut rng, opts.utility_range, opts.integer)
    });
    let gamma = Array2::from_shape_simple_fn((nx, ny), || {
        draw(&mut rng, opts.utility_range, opts.integer)
    });
    let mass_range = if opts.integer {
        (opts.mass_range.0.max(1.0), opts.mass_range.1)
    } else {
        opts.mass_range
    };
    let n = (0..nx).map(|_| draw(&mut rng, mass_range, opts.integer)).collect();
    let m = (0..ny).map(|_| draw(&mut rng, mass_range, opts.integer)).collect();
    let spec = MarketSpec {
        passenger_types: (1..=nx).map(|i| format!("x{i}")).collect(),
        taxi_types: (1..=ny).map(|j| format!("y{j}")).collect(),
        n,
        m,
        alpha,
        gamma,
        shocks: opts.shocks.clone(),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_market;

    #[test]
    fn same_seed_same_market() {
        let o = GenOptions {
            nx: 4,
            ny: 3,
            seed: 7,
            ..Default::default()
        };
        assert_eq!(gen_instance(&o).unwrap(), gen_instance(&o).unwrap());
        let other = GenOptions { seed: 8, ..o.clone() };
        assert_ne!(gen_instance(&o).unwrap(), gen_instance(&other).unwrap());
    }

    #[test]
    fn point_ranges_give_constants() {
        let o = GenOptions {
            utility_range: (0.5, 0.5),
            mass_range: (2.0, 2.0),
            ..Default::default()
        };
        let s = gen_instance(&o).unwrap();
        assert!(s.alpha.iter().chain(s.gamma.iter()).all(|&v| v == 0.5));
        assert!(s.n.iter().chain(&s.m).all(|&v| v == 2.0));
    }

    #[test]
    fn batch_is_valid() {
        for seed in 0..100 {
            let o = GenOptions {
                nx: 1 + (seed as usize % 5),
                ny: 1 + (seed as usize % 3),
                seed,
                ..Default::default()
            };
            validate_market(gen_instance(&o).unwrap()).unwrap();
        }
    }

    #[test]
    fn integer_markets_are_deterministic_mode() {
        let o = GenOptions {
            utility_range: (-3.0, 3.0),
            mass_range: (1.0, 4.0),
            integer: true,
            shocks: None,
            ..Default::default()
        };
        let s = gen_instance(&o).unwrap();
        s.validate_deterministic().unwrap();
        assert!(s.alpha.iter().all(|v| v.fract() == 0.0 && v.abs() <= 3.0));
    }

    #[test]
    fn bad_ranges_rejected() {
        let o = GenOptions {
            mass_range: (2.0, 1.0),
            ..Default::default()
        };
        assert!(gen_instance(&o).is_err());
        let o = GenOptions {
            nx: 0,
            ..Default::default()
        };
        assert!(gen_instance(&o).is_err());
    }
}
