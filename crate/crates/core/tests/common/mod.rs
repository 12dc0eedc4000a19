#![allow(dead_code)]

//! Random configurations for the acceptance and property suites.

use hiring_sim::law::Law;
use hiring_sim::model::{FeatureVector, LabelRule, PopulationSpec};
use hiring_sim::scoring::{LinearScorer, Scorer};
use hiring_sim::ManipulationModel;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug)]
pub enum Family {
    Point,
    Uniform,
    Gaussian,
}

pub fn family(rng: &mut ChaCha8Rng) -> Family {
    match rng.random_range(0..3) {
        0 => Family::Point,
        1 => Family::Uniform,
        _ => Family::Gaussian,
    }
}

/// Any catalog law.
pub fn any_law(rng: &mut ChaCha8Rng) -> Law {
    let base = match family(rng) {
        Family::Point => Law::point(rng.random_range(-2.0..4.0)),
        Family::Uniform => {
            let lo = rng.random_range(-2.0..3.0);
            Law::uniform(lo, lo + rng.random_range(0.2..4.0))
        }
        Family::Gaussian => Law::gaussian(rng.random_range(-1.0..3.0), rng.random_range(0.2..2.0)),
    };
    if rng.random_bool(0.15) {
        Law::shifted(base, rng.random_range(-1.0..1.0))
    } else {
        base
    }
}

/// `count` laws of one family in first-order stochastic order, smallest first.
pub fn ordered_chain(rng: &mut ChaCha8Rng, fam: Family, count: usize) -> Vec<Law> {
    let mut out = Vec::with_capacity(count);
    match fam {
        Family::Point => {
            let mut c = rng.random_range(-2.0..2.0);
            for _ in 0..count {
                out.push(Law::point(c));
                c += rng.random_range(0.0..1.5);
            }
        }
        Family::Uniform => {
            let mut lo = rng.random_range(-2.0..2.0);
            let mut hi = lo + rng.random_range(0.2..3.0);
            for _ in 0..count {
                out.push(Law::uniform(lo, hi));
                lo += rng.random_range(0.0..1.0);
                hi = hi.max(lo + 0.1) + rng.random_range(0.0..1.0);
            }
        }
        Family::Gaussian => {
            let sd = rng.random_range(0.2..1.5);
            let mut m = rng.random_range(-1.0..2.0);
            for _ in 0..count {
                out.push(Law::gaussian(m, sd));
                m += rng.random_range(0.0..1.0);
            }
        }
    }
    out
}

/// `count` independent-marginal models with `models[i+1] ⪰ models[i]`, each
/// dimension drawn from the same family so exact and Monte Carlo score laws
/// never mix between models.
pub fn ordered_models(rng: &mut ChaCha8Rng, d2: usize, count: usize) -> Vec<ManipulationModel> {
    let chains: Vec<Vec<Law>> = (0..d2)
        .map(|_| {
            let f = family(rng);
            ordered_chain(rng, f, count)
        })
        .collect();
    (0..count)
        .map(|i| ManipulationModel::independent(chains.iter().map(|c| c[i].clone()).collect()).unwrap())
        .collect()
}

pub fn any_model(rng: &mut ChaCha8Rng, d2: usize) -> ManipulationModel {
    if rng.random_bool(0.1) {
        return ManipulationModel::Null;
    }
    ManipulationModel::independent((0..d2).map(|_| any_law(rng)).collect()).unwrap()
}

/// A population with `d1` fundamental and `d2` style dimensions, labels by a
/// step rule on the fundamental block (or the style block when `d1 = 0`).
pub fn population(rng: &mut ChaCha8Rng, d1: usize, d2: usize) -> PopulationSpec {
    let fundamental: Vec<Law> = (0..d1)
        .map(|_| {
            let lo = rng.random_range(0.0..2.0);
            Law::uniform(lo, lo + rng.random_range(2.0..10.0))
        })
        .collect();
    let style: Vec<Law> = (0..d2)
        .map(|_| {
            if rng.random_bool(0.5) {
                Law::uniform(0.0, rng.random_range(0.5..2.0))
            } else {
                Law::point(rng.random_range(-1.0..1.0))
            }
        })
        .collect();
    let mut weights = vec![0.0; d1 + d2];
    if d1 > 0 {
        for w in weights.iter_mut().take(d1) {
            *w = rng.random_range(0.5..1.5);
        }
    } else {
        weights[0] = 1.0;
    }
    let mid: f64 = weights
        .iter()
        .zip(fundamental.iter().chain(&style))
        .map(|(w, l)| w * l.quantile(0.5))
        .sum();
    let rule = LabelRule::Step {
        weights,
        offset: 0.0,
        cutoff: mid,
    };
    PopulationSpec::new(fundamental, style, rule, rng.random_range(0.3..0.7)).unwrap()
}

/// Non-negative weights, with at least one positive style weight.
pub fn scorer(rng: &mut ChaCha8Rng, d1: usize, d2: usize) -> Scorer {
    let mut w: Vec<f64> = (0..d1 + d2)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.2..2.0)
            }
        })
        .collect();
    let s = d1 + rng.random_range(0..d2);
    w[s] = rng.random_range(0.5..2.0);
    Scorer::Linear(LinearScorer::new(w, rng.random_range(-1.0..1.0), None).unwrap())
}

pub fn features(f: &[f64], s: &[f64]) -> FeatureVector {
    FeatureVector::new(f.to_vec(), s.to_vec()).unwrap()
}
