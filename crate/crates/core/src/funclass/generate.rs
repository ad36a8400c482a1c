//! Synthetic classes with a planted approximation of Q*.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{FeatureMap, FiniteClass};
use crate::env::{GroundTruth, Table};
use crate::error::{Error, Result};

/// Features for which `θ* = e₁` is within `delta_target` of Q* everywhere.
///
/// The first coordinate is `Q* + b` with `|b| ≤ delta_target`, clamped to
/// `[-1, 1]`; the remaining coordinates are a random direction scaled to fit
/// inside the unit ball.
pub fn gen_linear_features(
    truth: &GroundTruth,
    d: usize,
    delta_target: f64,
    seed: u64,
) -> Result<(FeatureMap, Vec<f64>)> {
    if d < 2 {
        return Err(Error::InvalidParameter("feature dimension must be at least 2".into()));
    }
    if !(delta_target >= 0.0) {
        return Err(Error::InvalidParameter("delta_target must be non-negative".into()));
    }
    let max_q = truth.max_abs_q();
    if max_q > 1.0 + 1e-12 {
        return Err(Error::Infeasible(format!("|Q*| reaches {max_q}, above the unit feature norm")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table: Table<Vec<f64>> = truth
        .q_star
        .iter()
        .map(|level| {
            level
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&q| {
                            let u: f64 = rng.gen_range(-1.0..=1.0);
                            let first = (q + delta_target * u).clamp(-1.0, 1.0);
                            let mut tail: Vec<f64> = (1..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                            let norm = tail.iter().map(|x| x * x).sum::<f64>().sqrt();
                            let room = (1.0 - first * first).max(0.0).sqrt() * (1.0 - 1e-12);
                            let radius = room * rng.gen::<f64>();
                            let scale = if norm > 0.0 { radius / norm } else { 0.0 };
                            tail.iter_mut().for_each(|x| *x *= scale);
                            std::iter::once(first).chain(tail).collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut theta = vec![0.0; d];
    theta[0] = 1.0;
    Ok((FeatureMap::new(d, table)?, theta))
}

/// A class of `m` tables, one of which is `Q* + δ·u` with `u ∈ [-1, 1]`
/// entrywise; the others perturb that table at random entries.
pub fn gen_finite_class(truth: &GroundTruth, m: usize, delta_target: f64, seed: u64) -> Result<FiniteClass> {
    if m == 0 {
        return Err(Error::InvalidParameter("class size must be at least 1".into()));
    }
    if !(delta_target >= 0.0) {
        return Err(Error::InvalidParameter("delta_target must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted: Table<f64> = truth
        .q_star
        .iter()
        .map(|l| l.iter().map(|r| r.iter().map(|&q| q + delta_target * rng.gen_range(-1.0..=1.0)).collect()).collect())
        .collect();
    let slot = rng.gen_range(0..m);
    let mut functions = Vec::with_capacity(m);
    for i in 0..m {
        if i == slot {
            functions.push(planted.clone());
            continue;
        }
        let f = planted
            .iter()
            .map(|l| {
                l.iter()
                    .map(|r| {
                        r.iter()
                            .map(|&v| {
                                if rng.gen_bool(0.5) {
                                    let mag: f64 = rng.gen_range(0.05..=0.5);
                                    if rng.gen_bool(0.5) { v + mag } else { v - mag }
                                } else {
                                    v
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        functions.push(f);
    }
    FiniteClass::new(functions)
}
