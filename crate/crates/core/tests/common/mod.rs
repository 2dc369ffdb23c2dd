#![allow(dead_code)]

use itval_core::data::{PopulationWithTruth, TrialDataset};
use itval_core::simulation::{generate_population, DgmSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A DGM-1 population of `n` individuals.
pub fn dgm1(n: usize, seed: u64) -> PopulationWithTruth {
    generate_population(
        &DgmSpec {
            population_size: n,
            ..DgmSpec::dgm1()
        },
        seed,
    )
    .unwrap()
}

pub fn dgm2(n: usize, seed: u64) -> PopulationWithTruth {
    generate_population(
        &DgmSpec {
            population_size: n,
            ..DgmSpec::dgm2()
        },
        seed,
    )
    .unwrap()
}

pub fn observed(pop: &PopulationWithTruth) -> TrialDataset {
    pop.observed(&(0..pop.len()).collect::<Vec<_>>()).unwrap()
}

/// Probabilities including the endpoints now and then.
pub fn prob(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random::<f64>(),
    }
}

pub fn bern(p: f64, y: u8) -> f64 {
    if y == 1 {
        p
    } else {
        1.0 - p
    }
}

/// `(P(d_k < d_l), P(d_k > d_l), P(d_k = d_l))` with `d = Y1 - Y0`, by enumerating all
/// sixteen joint potential-outcome patterns of two independent individuals.
pub fn enumerate_patterns(g0k: f64, g1k: f64, g0l: f64, g1l: f64) -> (f64, f64, f64) {
    let (mut ben, mut harm, mut none) = (0.0, 0.0, 0.0);
    for y0k in 0..2u8 {
        for y1k in 0..2u8 {
            for y0l in 0..2u8 {
                for y1l in 0..2u8 {
                    let p = bern(g0k, y0k) * bern(g1k, y1k) * bern(g0l, y0l) * bern(g1l, y1l);
                    let dk = y1k as i32 - y0k as i32;
                    let dl = y1l as i32 - y0l as i32;
                    if dk < dl {
                        ben += p;
                    } else if dk > dl {
                        harm += p;
                    } else {
                        none += p;
                    }
                }
            }
        }
    }
    (ben, harm, none)
}

pub fn rank_credit(a: f64, b: f64) -> f64 {
    if a < b {
        1.0
    } else if a == b {
        0.5
    } else {
        0.0
    }
}
