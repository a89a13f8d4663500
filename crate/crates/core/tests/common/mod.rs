#![allow(dead_code)]

use matchburn::demand::ShockConfig;
use matchburn::MarketSpec;
use ndarray::Array2;
use proptest::prelude::*;

/// Random market with up to `max_types` types per side.
pub fn market(max_types: usize, shocks: Option<ShockConfig>) -> impl Strategy<Value = MarketSpec> {
    (1..=max_types, 1..=max_types).prop_flat_map(move |(nx, ny)| {
        let shocks = shocks.clone();
        (
            prop::collection::vec(0.2f64..3.0, nx),
            prop::collection::vec(0.2f64..3.0, ny),
            prop::collection::vec(-3.0f64..3.0, nx * ny),
            prop::collection::vec(-3.0f64..3.0, nx * ny),
        )
            .prop_map(move |(n, m, a, g)| MarketSpec {
                passenger_types: (1..=nx).map(|i| format!("x{i}")).collect(),
                taxi_types: (1..=ny).map(|j| format!("y{j}")).collect(),
                n,
                m,
                alpha: Array2::from_shape_vec((nx, ny), a).unwrap(),
                gamma: Array2::from_shape_vec((nx, ny), g).unwrap(),
                shocks: shocks.clone(),
            })
    })
}

/// Random deterministic market with integer masses and integer utilities.
pub fn integer_market(max_types: usize, max_mass: u32) -> impl Strategy<Value = MarketSpec> {
    (1..=max_types, 1..=max_types).prop_flat_map(move |(nx, ny)| {
        (
            prop::collection::vec(1..=max_mass, nx),
            prop::collection::vec(1..=max_mass, ny),
            prop::collection::vec(-2i32..=3, nx * ny),
            prop::collection::vec(-2i32..=3, nx * ny),
        )
            .prop_map(move |(n, m, a, g)| MarketSpec {
                passenger_types: (1..=nx).map(|i| format!("x{i}")).collect(),
                taxi_types: (1..=ny).map(|j| format!("y{j}")).collect(),
                n: n.into_iter().map(f64::from).collect(),
                m: m.into_iter().map(f64::from).collect(),
                alpha: Array2::from_shape_vec((nx, ny), a.into_iter().map(f64::from).collect()).unwrap(),
                gamma: Array2::from_shape_vec((nx, ny), g.into_iter().map(f64::from).collect()).unwrap(),
                shocks: None,
            })
    })
}

pub fn sup(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
