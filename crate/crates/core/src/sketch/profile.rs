use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque name of a per-layer sharding strategy, e.g. `"Z3@128"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyId(pub String);

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StrategyId {
    fn from(s: &str) -> Self {
        StrategyId(s.to_owned())
    }
}

/// Measured per-layer cost of every (strategy, batch size) pair.
///
/// `latency` and `memory` are indexed `[layer][strategy][batch]`, `comm` is
/// `[layer][strategy]`. Memory is in integral units chosen by whoever
/// produced the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct ProfileTable {
    strategies: Vec<StrategyId>,
    batch_sizes: Vec<u32>,
    latency: Vec<Vec<Vec<f64>>>,
    memory: Vec<Vec<Vec<u64>>>,
    comm: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawProfile {
    strategies: Vec<StrategyId>,
    batch_sizes: Vec<u32>,
    latency: Vec<Vec<Vec<f64>>>,
    memory: Vec<Vec<Vec<u64>>>,
    comm: Vec<Vec<f64>>,
}

impl TryFrom<RawProfile> for ProfileTable {
    type Error = Error;

    fn try_from(r: RawProfile) -> Result<Self> {
        ProfileTable::new(r.strategies, r.batch_sizes, r.latency, r.memory, r.comm)
    }
}

impl From<ProfileTable> for RawProfile {
    fn from(p: ProfileTable) -> Self {
        RawProfile {
            strategies: p.strategies,
            batch_sizes: p.batch_sizes,
            latency: p.latency,
            memory: p.memory,
            comm: p.comm,
        }
    }
}

impl ProfileTable {
    pub fn new(
        strategies: Vec<StrategyId>,
        batch_sizes: Vec<u32>,
        latency: Vec<Vec<Vec<f64>>>,
        memory: Vec<Vec<Vec<u64>>>,
        comm: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let (s, k, l) = (strategies.len(), batch_sizes.len(), latency.len());
        if s == 0 || k == 0 || l == 0 {
            return Err(Error::usage("profile needs at least one layer, strategy and batch size"));
        }
        let mut names = HashSet::new();
        if !strategies.iter().all(|id| names.insert(&id.0)) {
            return Err(Error::usage("strategy names must be unique"));
        }
        if batch_sizes.iter().any(|b| !b.is_power_of_two()) {
            return Err(Error::usage("batch sizes must be powers of two"));
        }
        if batch_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::usage("batch sizes must be strictly increasing"));
        }
        if memory.len() != l || comm.len() != l {
            return Err(Error::usage(format!(
                "profile is incomplete: {l} latency layers, {} memory layers, {} comm layers",
                memory.len(),
                comm.len()
            )));
        }
        for layer in 0..l {
            if latency[layer].len() != s || memory[layer].len() != s || comm[layer].len() != s {
                return Err(Error::usage(format!("profile is incomplete at layer {layer}")));
            }
            for st in 0..s {
                if latency[layer][st].len() != k || memory[layer][st].len() != k {
                    return Err(Error::usage(format!(
                        "profile is incomplete at layer {layer}, strategy {}",
                        strategies[st]
                    )));
                }
                let c = comm[layer][st];
                if latency[layer][st].iter().chain([&c]).any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::data(format!(
                        "layer {layer}, strategy {}: latencies must be finite and non-negative",
                        strategies[st]
                    )));
                }
            }
        }
        Ok(Self {
            strategies,
            batch_sizes,
            latency,
            memory,
            comm,
        })
    }

    pub fn layers(&self) -> usize {
        self.latency.len()
    }

    pub fn strategies(&self) -> &[StrategyId] {
        &self.strategies
    }

    pub fn batch_sizes(&self) -> &[u32] {
        &self.batch_sizes
    }

    pub fn batch_index(&self, batch: u32) -> Result<usize> {
        self.batch_sizes
            .iter()
            .position(|&b| b == batch)
            .ok_or_else(|| Error::usage(format!("batch size {batch} is not profiled")))
    }

    pub fn strategy_index(&self, id: &StrategyId) -> Option<usize> {
        self.strategies.iter().position(|s| s == id)
    }

    pub fn latency(&self, layer: usize, strategy: usize, batch_index: usize) -> f64 {
        self.latency[layer][strategy][batch_index]
    }

    pub fn memory(&self, layer: usize, strategy: usize, batch_index: usize) -> u64 {
        self.memory[layer][strategy][batch_index]
    }

    pub fn comm(&self, layer: usize, strategy: usize) -> f64 {
        self.comm[layer][strategy]
    }

    /// Per-layer cost `T·scale + C`. `scale` stretches compute latency only.
    pub fn layer_cost(&self, layer: usize, strategy: usize, batch_index: usize, compute_scale: f64) -> f64 {
        self.latency(layer, strategy, batch_index) * compute_scale + self.comm(layer, strategy)
    }

    /// Total latency and memory of an assignment, accumulated layer by layer.
    pub fn evaluate(&self, batch_index: usize, strategies: &[usize], compute_scale: f64) -> (f64, u64) {
        debug_assert_eq!(strategies.len(), self.layers());
        strategies
            .iter()
            .enumerate()
            .fold((0.0, 0), |(lat, mem), (l, &s)| {
                (
                    lat + self.layer_cost(l, s, batch_index, compute_scale),
                    mem + self.memory(l, s, batch_index),
                )
            })
    }

    pub fn plan(&self, batch_index: usize, strategies: Vec<usize>, compute_scale: f64) -> ExecutionPlan {
        let (total_latency, memory_used) = self.evaluate(batch_index, &strategies, compute_scale);
        ExecutionPlan {
            batch: self.batch_sizes[batch_index],
            per_layer: strategies.iter().map(|&s| self.strategies[s].clone()).collect(),
            strategy_indices: strategies,
            total_latency,
            memory_used,
        }
    }
}

/// A batch size and one strategy per layer, with its recomputed cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub batch: u32,
    pub per_layer: Vec<StrategyId>,
    pub strategy_indices: Vec<usize>,
    pub total_latency: f64,
    pub memory_used: u64,
}

impl ExecutionPlan {
    /// Samples per millisecond.
    pub fn throughput(&self) -> f64 {
        if self.total_latency == 0.0 {
            f64::INFINITY
        } else {
            f64::from(self.batch) / self.total_latency
        }
    }

    /// Recomputes `(total_latency, memory_used)` from the profile by name.
    pub fn recompute(&self, profile: &ProfileTable, compute_scale: f64) -> Result<(f64, u64)> {
        let b = profile.batch_index(self.batch)?;
        if self.per_layer.len() != profile.layers() {
            return Err(Error::usage("plan and profile disagree on layer count"));
        }
        let idx = self
            .per_layer
            .iter()
            .map(|s| {
                profile
                    .strategy_index(s)
                    .ok_or_else(|| Error::usage(format!("unknown strategy {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(profile.evaluate(b, &idx, compute_scale))
    }
}
