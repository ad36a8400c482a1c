//! ε-dependence and Eluder dimension for finite classes.
//!
//! A sequence is admissible when a single ε' ≥ ε makes every element
//! ε'-independent of its predecessors. For one element `x` with prefix `S`,
//! the set of ε' witnessing independence is a finite union of half-open
//! intervals `[‖d_p|_S‖, |d_p(x)|)`, one per function pair `p`. The search
//! carries the running intersection of those sets, so the quantifier over ε'
//! is decided exactly.

use std::collections::HashMap;

use super::FiniteClass;
use crate::env::SaPair;
use crate::error::{Error, Result};

pub const MAX_BRUTEFORCE_DOMAIN: usize = 12;

/// Sorted, disjoint half-open intervals.
type Intervals = Vec<(f64, f64)>;

/// True iff every pair of class functions that agrees within `eps` (in
/// Euclidean norm) on `predecessors` also agrees within `eps` at `pair`.
pub fn is_eps_dependent(pair: SaPair, predecessors: &[SaPair], class: &FiniteClass, eps: f64) -> bool {
    let m = class.len();
    for i in 0..m {
        for j in 0..m {
            let sum: f64 = predecessors.iter().map(|&q| (class.eval(i, q) - class.eval(j, q)).powi(2)).sum();
            let here = (class.eval(i, pair) - class.eval(j, pair)).abs();
            if sum.sqrt() <= eps && here > eps {
                return false;
            }
        }
    }
    true
}

/// Precomputed pairwise differences `diff[p][k]` over the domain.
struct Diffs {
    rows: Vec<Vec<f64>>,
}

impl Diffs {
    fn new(class: &FiniteClass, domain: &[SaPair]) -> Self {
        let m = class.len();
        let mut rows = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                rows.push(domain.iter().map(|&x| class.eval(i, x) - class.eval(j, x)).collect());
            }
        }
        Self { rows }
    }

    /// ε' values for which element `x` is independent of the set `mask`.
    fn witness_set(&self, mask: u64, x: usize) -> Intervals {
        let mut out: Intervals = self
            .rows
            .iter()
            .filter_map(|row| {
                let lo = (0..row.len())
                    .filter(|k| mask & (1 << k) != 0)
                    .map(|k| row[k] * row[k])
                    .sum::<f64>()
                    .sqrt();
                let hi = row[x].abs();
                (lo < hi).then_some((lo, hi))
            })
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Intervals = Vec::with_capacity(out.len());
        for (lo, hi) in out {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        merged
    }
}

fn intersect(a: &Intervals, b: &Intervals) -> Intervals {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo < hi {
            out.push((lo, hi));
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

fn key(mask: u32, set: &Intervals) -> (u32, Vec<(u64, u64)>) {
    (mask, set.iter().map(|&(l, h)| (l.to_bits(), h.to_bits())).collect())
}

struct Search<'a> {
    diffs: &'a Diffs,
    n: usize,
    memo: HashMap<(u32, Vec<(u64, u64)>), usize>,
}

impl Search<'_> {
    /// Longest admissible extension of a prefix occupying `mask`.
    fn extend(&mut self, mask: u32, feasible: &Intervals) -> usize {
        let k = key(mask, feasible);
        if let Some(&v) = self.memo.get(&k) {
            return v;
        }
        let remaining = self.n - mask.count_ones() as usize;
        let mut best = 0;
        for x in 0..self.n {
            if best == remaining {
                break;
            }
            if mask & (1 << x) != 0 {
                continue;
            }
            let next = intersect(feasible, &self.diffs.witness_set(u64::from(mask), x));
            if !next.is_empty() {
                best = best.max(1 + self.extend(mask | (1 << x), &next));
            }
        }
        self.memo.insert(k, best);
        best
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")))
    }
}

/// Exact Eluder dimension of `class` restricted to `domain`.
pub fn eluder_dim_bruteforce(class: &FiniteClass, domain: &[SaPair], eps: f64) -> Result<usize> {
    check_eps(eps)?;
    if domain.len() > MAX_BRUTEFORCE_DOMAIN {
        return Err(Error::DomainTooLarge(domain.len()));
    }
    let diffs = Diffs::new(class, domain);
    let mut search = Search { diffs: &diffs, n: domain.len(), memo: HashMap::new() };
    Ok(search.extend(0, &vec![(eps, f64::INFINITY)]))
}

/// Length of the sequence built by always appending the lowest-index
/// admissible element. A lower bound on the exact value.
pub fn eluder_dim_greedy(class: &FiniteClass, domain: &[SaPair], eps: f64) -> Result<usize> {
    check_eps(eps)?;
    if domain.len() > 64 {
        return Err(Error::DomainTooLarge(domain.len()));
    }
    let diffs = Diffs::new(class, domain);
    let mut feasible = vec![(eps, f64::INFINITY)];
    let mut used = 0u64;
    let mut len = 0;
    loop {
        let step = (0..domain.len()).filter(|&x| used & (1 << x) == 0).find_map(|x| {
            let next = intersect(&feasible, &diffs.witness_set(used, x));
            (!next.is_empty()).then_some((x, next))
        });
        match step {
            Some((x, next)) => {
                used |= 1 << x;
                feasible = next;
                len += 1;
            }
            None => return Ok(len),
        }
    }
}
