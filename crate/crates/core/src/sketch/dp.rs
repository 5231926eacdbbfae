//! Exact dynamic program over (layer, memory used) for one batch size.
//!
//! `best[r]` after layer `l` is the lowest latency of any assignment of
//! layers `0..=l` that uses exactly `r` memory units. The next layer pulls
//! from `best[r - R_b(s)]` for every strategy `s`, so one batch size costs
//! `O(|S| · L · R)` time.

use serde::{Deserialize, Serialize};

use super::profile::{ExecutionPlan, ProfileTable};
use crate::error::{Error, Result};

/// Largest memory capacity the dense DP table will allocate for.
pub const MAX_CAPACITY: u64 = 1 << 26;

const NONE: u32 = u32::MAX;

fn check_capacity(capacity: u64) -> Result<usize> {
    if capacity == 0 {
        return Err(Error::usage("memory capacity must be positive"));
    }
    if capacity > MAX_CAPACITY {
        return Err(Error::usage(format!(
            "memory capacity {capacity} exceeds {MAX_CAPACITY} units; use a coarser memory unit"
        )));
    }
    Ok(capacity as usize)
}

/// Optimal per-layer strategies for `batch`, or `None` if nothing fits.
///
/// Ties go to the lowest strategy index at each step, then to the lowest
/// total memory.
pub fn dp_bootstrap(profile: &ProfileTable, capacity: u64, batch: u32) -> Result<Option<ExecutionPlan>> {
    let cap = check_capacity(capacity)?;
    let b = profile.batch_index(batch)?;
    Ok(solve(profile, cap, b))
}

pub(crate) fn solve(profile: &ProfileTable, cap: usize, b: usize) -> Option<ExecutionPlan> {
    let layers = profile.layers();
    let strategies = profile.strategies().len();
    let mut choice = vec![vec![NONE; cap + 1]; layers];
    let mut best = vec![f64::INFINITY; cap + 1];
    let mut next = vec![f64::INFINITY; cap + 1];

    for l in 0..layers {
        next.fill(f64::INFINITY);
        for r in 0..=cap {
            for s in 0..strategies {
                let m = profile.memory(l, s, b);
                if m > r as u64 {
                    continue;
                }
                let prev = if l == 0 {
                    if m == r as u64 { 0.0 } else { continue }
                } else {
                    best[r - m as usize]
                };
                if prev.is_infinite() {
                    continue;
                }
                let cost = prev + profile.layer_cost(l, s, b, 1.0);
                if cost < next[r] {
                    next[r] = cost;
                    choice[l][r] = s as u32;
                }
            }
        }
        std::mem::swap(&mut best, &mut next);
    }

    let (mut r, _) = best
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .fold(None, |acc: Option<(usize, f64)>, (r, &v)| match acc {
            Some((_, bv)) if bv <= v => acc,
            _ => Some((r, v)),
        })?;

    let mut assignment = vec![0usize; layers];
    for l in (0..layers).rev() {
        let s = choice[l][r] as usize;
        assignment[l] = s;
        r -= profile.memory(l, s, b) as usize;
    }
    debug_assert_eq!(r, 0);
    Some(profile.plan(b, assignment, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub batch: u32,
    pub feasible: bool,
    pub total_latency: Option<f64>,
    pub throughput: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    /// Highest-throughput feasible plan; `None` when no batch size fits.
    pub best: Option<ExecutionPlan>,
    pub per_batch: Vec<BatchOutcome>,
}

/// Runs the DP for every profiled batch size and keeps the plan with the
/// highest throughput (`batch / latency`), preferring the smaller batch on
/// ties.
pub fn dp_bootstrap_all_batches(profile: &ProfileTable, capacity: u64) -> Result<BootstrapReport> {
    let cap = check_capacity(capacity)?;
    let mut best: Option<ExecutionPlan> = None;
    let mut per_batch = Vec::with_capacity(profile.batch_sizes().len());
    for (b, &batch) in profile.batch_sizes().iter().enumerate() {
        let plan = solve(profile, cap, b);
        per_batch.push(BatchOutcome {
            batch,
            feasible: plan.is_some(),
            total_latency: plan.as_ref().map(|p| p.total_latency),
            throughput: plan.as_ref().map(ExecutionPlan::throughput),
        });
        if let Some(plan) = plan {
            if best.as_ref().is_none_or(|cur| plan.throughput() > cur.throughput()) {
                best = Some(plan);
            }
        }
    }
    Ok(BootstrapReport { best, per_batch })
}

/// Largest profiled batch size admitting any assignment within `capacity`,
/// with the DP plan for it.
pub fn estimate_max_batch(profile: &ProfileTable, capacity: u64) -> Result<Option<ExecutionPlan>> {
    let cap = check_capacity(capacity)?;
    // Feasibility only needs the minimum-memory assignment.
    for b in (0..profile.batch_sizes().len()).rev() {
        let min_mem: u64 = (0..profile.layers())
            .map(|l| {
                (0..profile.strategies().len())
                    .map(|s| profile.memory(l, s, b))
                    .min()
                    .unwrap_or(0)
            })
            .sum();
        if min_mem <= capacity {
            return Ok(solve(profile, cap, b));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::profile::StrategyId;

    fn table(strats: &[(&str, f64, u64, f64)], layers: usize) -> ProfileTable {
        ProfileTable::new(
            strats.iter().map(|s| StrategyId::from(s.0)).collect(),
            vec![1],
            vec![strats.iter().map(|s| vec![s.1]).collect(); layers],
            vec![strats.iter().map(|s| vec![s.2]).collect(); layers],
            vec![strats.iter().map(|s| s.3).collect(); layers],
        )
        .unwrap()
    }

    #[test]
    fn forced_single_choice() {
        let p = table(&[("only", 5.0, 3, 1.0)], 1);
        let plan = dp_bootstrap(&p, 4, 1).unwrap().unwrap();
        assert_eq!(plan.total_latency, 6.0);
        assert_eq!(plan.per_layer, vec![StrategyId::from("only")]);
        assert_eq!(plan.memory_used, 3);
        assert!(dp_bootstrap(&p, 2, 1).unwrap().is_none());
    }

    #[test]
    fn two_layer_mix() {
        // AA = 10 (mem 6), AB = BA = 7 (mem 8), BB infeasible (mem 10).
        let p = table(&[("A", 4.0, 3, 1.0), ("B", 1.0, 5, 1.0)], 2);
        let plan = dp_bootstrap(&p, 8, 1).unwrap().unwrap();
        assert_eq!(plan.total_latency, 7.0);
        assert_eq!(plan.memory_used, 8);
        let mut names: Vec<_> = plan.per_layer.iter().map(|s| s.0.as_str()).collect();
        names.sort();
        assert_eq!(names, ["A", "B"]);
        let tight = dp_bootstrap(&p, 7, 1).unwrap().unwrap();
        assert_eq!(tight.total_latency, 10.0);
    }

    #[test]
    fn bad_arguments() {
        let p = table(&[("A", 1.0, 1, 0.0)], 1);
        assert!(dp_bootstrap(&p, 0, 1).unwrap_err().is_usage());
        assert!(dp_bootstrap(&p, 4, 2).unwrap_err().is_usage());
        assert!(dp_bootstrap(&p, MAX_CAPACITY + 1, 1).is_err());
    }

    fn two_batches(t_large: f64, m_large: u64) -> ProfileTable {
        ProfileTable::new(
            vec!["S".into()],
            vec![64, 128],
            vec![vec![vec![10.0, t_large]]],
            vec![vec![vec![4, m_large]]],
            vec![vec![0.0]],
        )
        .unwrap()
    }

    #[test]
    fn larger_batch_wins_when_sublinear() {
        let p = two_batches(15.0, 8);
        let report = dp_bootstrap_all_batches(&p, 16).unwrap();
        assert_eq!(report.best.unwrap().batch, 128);
        assert_eq!(report.per_batch.len(), 2);
    }

    #[test]
    fn throughput_tie_prefers_smaller_batch() {
        let report = dp_bootstrap_all_batches(&two_batches(20.0, 8), 16).unwrap();
        assert_eq!(report.best.unwrap().batch, 64);
    }

    #[test]
    fn infeasible_large_batch_falls_back() {
        let p = two_batches(15.0, 100);
        let report = dp_bootstrap_all_batches(&p, 16).unwrap();
        assert_eq!(report.best.as_ref().unwrap().batch, 64);
        assert!(!report.per_batch[1].feasible);
        assert_eq!(estimate_max_batch(&p, 16).unwrap().unwrap().batch, 64);
        assert_eq!(estimate_max_batch(&p, 1000).unwrap().unwrap().batch, 128);
        assert!(estimate_max_batch(&p, 3).unwrap().is_none());
        assert!(dp_bootstrap_all_batches(&p, 3).unwrap().best.is_none());
    }

    #[test]
    fn single_batch_matches_dp_bootstrap() {
        let p = table(&[("A", 4.0, 3, 1.0), ("B", 1.0, 5, 1.0)], 3);
        let all = dp_bootstrap_all_batches(&p, 12).unwrap().best;
        assert_eq!(all, dp_bootstrap(&p, 12, 1).unwrap());
    }
}
