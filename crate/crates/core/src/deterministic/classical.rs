//! Gale-Shapley deferred acceptance between individuals.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::da::Proposer;
use crate::error::Result;
use crate::model::{IndividualMarket, IndividualMatching};

/// Output of [`classical_da`]. Ties in utilities are broken by uniform
/// perturbations drawn from `seed`, so the same seed gives the same run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalDa {
    pub matching: IndividualMatching,
    pub proposer: Proposer,
    pub seed: u64,
    pub proposals: usize,
}

/// Strict preference of every agent over the other side, best first,
/// restricted to partners giving a strictly positive payoff.
fn preference_lists(payoff: &Array2<f64>, noise: &Array2<f64>) -> Vec<Vec<usize>> {
    payoff
        .outer_iter()
        .zip(noise.outer_iter())
        .map(|(row, tie)| {
            let mut list: Vec<usize> = (0..row.len()).filter(|&j| row[j] > 0.0).collect();
            list.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(tie[a].total_cmp(&tie[b])));
            list
        })
        .collect()
}

/// Runs proposer-optimal deferred acceptance. `proposer_payoff[i][j]` is
/// what proposer `i` gets with receiver `j`; `receiver_payoff` is indexed
/// the same way.
fn gale_shapley(
    proposer_payoff: &Array2<f64>,
    receiver_payoff: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> (Vec<Option<usize>>, usize) {
    let (np, nr) = proposer_payoff.dim();
    let p_noise = Array2::from_shape_simple_fn((np, nr), || rng.random::<f64>());
    let r_noise = Array2::from_shape_simple_fn((nr, np), || rng.random::<f64>());
    let lists = preference_lists(proposer_payoff, &p_noise);
    let receiver_view = receiver_payoff.t().to_owned();
    // rank[r][p]: position of p in r's order, lower is better.
    let rank: Vec<Vec<usize>> = preference_lists(&receiver_view, &r_noise)
        .into_iter()
        .map(|list| {
            let mut rank = vec![usize::MAX; np];
            for (pos, &p) in list.iter().enumerate() {
                rank[p] = pos;
            }
            rank
        })
        .collect();
    let mut next = vec![0usize; np];
    let mut held: Vec<Option<usize>> = vec![None; nr];
    let mut free: VecDeque<usize> = (0..np).collect();
    let mut proposals = 0;
    while let Some(p) = free.pop_front() {
        let Some(&r) = lists[p].get(next[p]) else {
            continue;
        };
        next[p] += 1;
        proposals += 1;
        if rank[r][p] == usize::MAX {
            free.push_back(p);
            continue;
        }
        match held[r] {
            None => held[r] = Some(p),
            Some(q) if rank[r][p] < rank[r][q] => {
                held[r] = Some(p);
                free.push_back(q);
            }
            Some(_) => free.push_back(p),
        }
    }
    (held, proposals)
}

/// Classical deferred acceptance on an individual market. An agent only
/// accepts partners giving a strictly positive payoff.
pub fn classical_da(market: &IndividualMarket, proposer: Proposer, seed: u64) -> Result<ClassicalDa> {
    let (ni, nj) = (market.passengers.len(), market.taxis.len());
    let a = Array2::from_shape_fn((ni, nj), |(i, j)| market.alpha_ij(i, j));
    let g = Array2::from_shape_fn((ni, nj), |(i, j)| market.gamma_ij(i, j));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matching = IndividualMatching::empty(ni, nj);
    let proposals = match proposer {
        Proposer::Passengers => {
            let (held, k) = gale_shapley(&a, &g, &mut rng);
            for (j, p) in held.into_iter().enumerate() {
                if let Some(i) = p {
                    matching.pi[[i, j]] = 1;
                }
            }
            k
        }
        Proposer::Taxis => {
            let (held, k) = gale_shapley(&g.t().to_owned(), &a.t().to_owned(), &mut rng);
            for (i, p) in held.into_iter().enumerate() {
                if let Some(j) = p {
                    matching.pi[[i, j]] = 1;
                }
            }
            k
        }
    };
    Ok(ClassicalDa {
        matching,
        proposer,
        seed,
        proposals,
    })
}
