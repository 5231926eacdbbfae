//! Knowledge transfer through precomputed teacher embeddings.
//!
//! A teacher writes per (user, item) embeddings and logits into a store,
//! each stamped with a TTL. Students read them as extra input features. A
//! miss (absent or expired) hands back an all-zero placeholder and queues
//! the pair for the teacher's next refresh cycle. Everything runs against a
//! [`VirtualClock`] so simulations are exactly reproducible.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use rand_distr::Zipf;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{seeded_rng, stable_hash, unit_interval};
use crate::numerics::{sigmoid, smooth_probability};
use crate::types::{Seed, VirtualClock};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub user: String,
    pub item: String,
}

impl PairKey {
    pub fn new(user: impl Into<String>, item: impl Into<String>) -> Result<Self> {
        let (user, item) = (user.into(), item.into());
        if user.is_empty() || item.is_empty() {
            return Err(Error::usage("pair key needs a user id and an item id"));
        }
        Ok(Self { user, item })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: PairKey,
    pub embedding: Vec<f64>,
    pub logit: f64,
    pub written_at: u64,
    pub ttl_ms: u64,
}

impl CacheEntry {
    /// Valid through `written_at + ttl` inclusive.
    pub fn is_valid(&self, now: u64) -> bool {
        now.saturating_sub(self.written_at) <= self.ttl_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub embedding: Vec<f64>,
    pub hit: bool,
    /// True when this query put the key on the refresh queue.
    pub enqueued: bool,
    pub teacher_logit: Option<f64>,
    /// Teacher probability, smoothed when the store is configured to.
    pub soft_label: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferStats {
    pub queries: u64,
    pub hits: u64,
    pub misses_absent: u64,
    pub misses_expired: u64,
    pub refreshes: u64,
    pub evictions: u64,
    pub hit_rate: f64,
}

impl TransferStats {
    fn record(&mut self, outcome: Outcome) {
        self.queries += 1;
        match outcome {
            Outcome::Hit => self.hits += 1,
            Outcome::Absent => self.misses_absent += 1,
            Outcome::Expired => self.misses_expired += 1,
        }
        self.hit_rate = self.hits as f64 / self.queries as f64;
    }

    pub fn is_conserved(&self) -> bool {
        self.queries == self.hits + self.misses_absent + self.misses_expired
    }
}

#[derive(Clone, Copy)]
enum Outcome {
    Hit,
    Absent,
    Expired,
}

/// FIFO of pairs awaiting a teacher refresh. A key is pending at most once.
#[derive(Debug, Clone)]
pub struct RefreshQueue {
    pending: VecDeque<PairKey>,
    members: HashSet<PairKey>,
    budget_per_cycle: usize,
}

impl RefreshQueue {
    pub fn new(budget_per_cycle: usize) -> Result<Self> {
        if budget_per_cycle == 0 {
            return Err(Error::usage("refresh budget must be positive"));
        }
        Ok(Self {
            pending: VecDeque::new(),
            members: HashSet::new(),
            budget_per_cycle,
        })
    }

    /// Returns false if the key was already pending.
    pub fn push(&mut self, key: &PairKey) -> bool {
        if self.members.contains(key) {
            return false;
        }
        self.members.insert(key.clone());
        self.pending.push_back(key.clone());
        true
    }

    fn pop(&mut self) -> Option<PairKey> {
        let key = self.pending.pop_front()?;
        self.members.remove(&key);
        Some(key)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn contains(&self, key: &PairKey) -> bool {
        self.members.contains(key)
    }

    pub fn pending(&self) -> impl Iterator<Item = &PairKey> {
        self.pending.iter()
    }

    pub fn budget_per_cycle(&self) -> usize {
        self.budget_per_cycle
    }
}

/// Produces the embedding and logit for a pair.
pub trait Teacher {
    fn evaluate(&self, key: &PairKey) -> (Vec<f64>, f64);
}

impl<F> Teacher for F
where
    F: Fn(&PairKey) -> (Vec<f64>, f64),
{
    fn evaluate(&self, key: &PairKey) -> (Vec<f64>, f64) {
        self(key)
    }
}

/// Deterministic stand-in teacher: values derived from the hash of the key.
#[derive(Debug, Clone, Copy)]
pub struct HashTeacher {
    pub dim: usize,
    pub seed: Seed,
}

impl Teacher for HashTeacher {
    fn evaluate(&self, key: &PairKey) -> (Vec<f64>, f64) {
        let mut buf = Vec::with_capacity(key.user.len() + key.item.len() + 9);
        buf.extend_from_slice(key.user.as_bytes());
        buf.push(0);
        buf.extend_from_slice(key.item.as_bytes());
        let base = buf.len();
        let mut draw = |j: u64| {
            buf.truncate(base);
            buf.extend_from_slice(&j.to_be_bytes());
            2.0 * unit_interval(stable_hash(&buf, self.seed)) - 1.0
        };
        let embedding = (0..self.dim as u64).map(&mut draw).collect();
        let logit = 4.0 * draw(u64::MAX);
        (embedding, logit)
    }
}

/// Chooses which entry to drop when a capped store is full.
pub trait EvictionPolicy {
    fn victim(&self, entries: &mut dyn Iterator<Item = &CacheEntry>) -> Option<PairKey>;
}

/// Evicts the entry written longest ago; ties go to the smaller key.
#[derive(Debug, Clone, Copy, Default)]
pub struct OldestWritten;

impl EvictionPolicy for OldestWritten {
    fn victim(&self, entries: &mut dyn Iterator<Item = &CacheEntry>) -> Option<PairKey> {
        entries
            .min_by(|a, b| a.written_at.cmp(&b.written_at).then_with(|| a.key.cmp(&b.key)))
            .map(|e| e.key.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub dim: usize,
    pub ttl_ms: u64,
    pub refresh_budget: usize,
    /// Maximum number of entries; unbounded when absent.
    #[serde(default)]
    pub capacity: Option<usize>,
    /// Smoothing applied to teacher probabilities on read.
    #[serde(default)]
    pub label_smoothing: Option<f64>,
}

/// Teacher embedding store with its refresh queue and hit accounting.
pub struct EmbeddingStore {
    config: StoreConfig,
    entries: HashMap<PairKey, CacheEntry>,
    queue: RefreshQueue,
    stats: TransferStats,
    eviction: Box<dyn EvictionPolicy + Send + Sync>,
}

impl EmbeddingStore {
    pub fn new(config: StoreConfig) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::usage("embedding dimension must be positive"));
        }
        if config.ttl_ms == 0 {
            return Err(Error::usage("ttl must be positive"));
        }
        if config.capacity == Some(0) {
            return Err(Error::usage("store capacity must be positive"));
        }
        if let Some(eps) = config.label_smoothing {
            if !(0.0..1.0).contains(&eps) {
                return Err(Error::usage("label smoothing must lie in [0, 1)"));
            }
        }
        Ok(Self {
            queue: RefreshQueue::new(config.refresh_budget)?,
            config,
            entries: HashMap::new(),
            stats: TransferStats::default(),
            eviction: Box::new(OldestWritten),
        })
    }

    pub fn with_eviction(mut self, policy: impl EvictionPolicy + Send + Sync + 'static) -> Self {
        self.eviction = Box::new(policy);
        self
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn stats(&self) -> &TransferStats {
        &self.stats
    }

    pub fn queue(&self) -> &RefreshQueue {
        &self.queue
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Read-only lookup of a valid entry; does not touch stats or the queue.
    pub fn peek(&self, key: &PairKey, now: u64) -> Option<&CacheEntry> {
        self.entries.get(key).filter(|e| e.is_valid(now))
    }

    /// Student-side lookup.
    pub fn student_query(&mut self, key: &PairKey, clock: &VirtualClock) -> QueryResult {
        let now = clock.now();
        let outcome = match self.entries.get(key) {
            Some(e) if e.is_valid(now) => Outcome::Hit,
            Some(_) => Outcome::Expired,
            None => Outcome::Absent,
        };
        self.stats.record(outcome);
        if let Outcome::Hit = outcome {
            let e = &self.entries[key];
            let p = sigmoid(e.logit);
            return QueryResult {
                embedding: e.embedding.clone(),
                hit: true,
                enqueued: false,
                teacher_logit: Some(e.logit),
                soft_label: Some(match self.config.label_smoothing {
                    Some(eps) => smooth_probability(p, eps),
                    None => p,
                }),
            };
        }
        QueryResult {
            embedding: vec![0.0; self.config.dim],
            hit: false,
            enqueued: self.queue.push(key),
            teacher_logit: None,
            soft_label: None,
        }
    }

    /// Writes a fresh entry stamped at `clock.now()`.
    pub fn write(&mut self, key: PairKey, embedding: Vec<f64>, logit: f64, clock: &VirtualClock) -> Result<()> {
        if embedding.len() != self.config.dim {
            return Err(Error::data(format!(
                "teacher embedding for ({}, {}) has dimension {}, expected {}",
                key.user,
                key.item,
                embedding.len(),
                self.config.dim
            )));
        }
        if let Some(cap) = self.config.capacity {
            if !self.entries.contains_key(&key) && self.entries.len() >= cap {
                if let Some(victim) = self.eviction.victim(&mut self.entries.values()) {
                    self.entries.remove(&victim);
                    self.stats.evictions += 1;
                }
            }
        }
        let entry = CacheEntry {
            key: key.clone(),
            embedding,
            logit,
            written_at: clock.now(),
            ttl_ms: self.config.ttl_ms,
        };
        self.entries.insert(key, entry);
        Ok(())
    }

    /// Refreshes up to the per-cycle budget of queued keys, oldest first.
    pub fn teacher_refresh_cycle(&mut self, teacher: &dyn Teacher, clock: &VirtualClock) -> Result<usize> {
        let mut refreshed = 0;
        while refreshed < self.queue.budget_per_cycle() {
            let Some(key) = self.queue.pending.front().cloned() else {
                break;
            };
            let (embedding, logit) = teacher.evaluate(&key);
            self.write(key, embedding, logit, clock)?;
            self.queue.pop();
            refreshed += 1;
        }
        self.stats.refreshes += refreshed as u64;
        Ok(refreshed)
    }
}

/// `[base ‖ embedding]`; a miss contributes `dim` zeros, so the width never
/// depends on whether the query hit.
pub fn student_feature_vector(result: &QueryResult, base: &[f64], dim: usize) -> Result<Vec<f64>> {
    if result.embedding.len() != dim {
        return Err(Error::usage(format!(
            "query embedding has dimension {}, expected {dim}",
            result.embedding.len()
        )));
    }
    let mut out = Vec::with_capacity(base.len() + dim);
    out.extend_from_slice(base);
    out.extend_from_slice(&result.embedding);
    Ok(out)
}

/// How queries are scheduled over the pair population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficPattern {
    /// Evenly spaced arrivals whose pair is drawn from a Zipf law.
    #[default]
    Zipf,
    /// Pair `i` is queried at `i / rate` and once more `gap_ms` later.
    /// Runs until every pair has been queried twice.
    RepeatTwice { gap_ms: u64 },
}

fn default_refresh_interval() -> u64 {
    1_000
}

fn default_epoch() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub pairs: usize,
    #[serde(default)]
    pub zipf_exponent: f64,
    /// Queries per second.
    pub rate: f64,
    pub duration_ms: u64,
    pub ttl_ms: u64,
    pub refresh_budget: usize,
    #[serde(default = "default_refresh_interval")]
    pub refresh_interval_ms: u64,
    pub seed: Seed,
    pub dim: usize,
    #[serde(default = "default_epoch")]
    pub epoch_ms: u64,
    #[serde(default)]
    pub capacity: Option<usize>,
    #[serde(default)]
    pub pattern: TrafficPattern,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        if self.pairs == 0 {
            return Err(Error::usage("workload needs at least one pair"));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::usage("arrival rate must be positive"));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::usage("zipf exponent must be non-negative"));
        }
        if self.refresh_interval_ms == 0 || self.epoch_ms == 0 {
            return Err(Error::usage("refresh interval and epoch length must be positive"));
        }
        Ok(())
    }

    fn key(i: usize) -> PairKey {
        PairKey {
            user: format!("user-{i}"),
            item: format!("item-{i}"),
        }
    }

    /// Query arrivals as `(time_ms, pair index)`, in time order.
    fn arrivals(&self) -> Result<Vec<(u64, usize)>> {
        let gap = 1000.0 / self.rate;
        match self.pattern {
            TrafficPattern::Zipf => {
                let zipf = Zipf::new(self.pairs as f64, self.zipf_exponent)
                    .map_err(|e| Error::usage(format!("zipf distribution: {e}")))?;
                let mut rng = seeded_rng(self.seed);
                let mut out = Vec::new();
                for k in 0u64.. {
                    let t = (k as f64 * gap) as u64;
                    if t >= self.duration_ms {
                        break;
                    }
                    let rank = rng.sample(zipf) as usize;
                    out.push((t, rank.clamp(1, self.pairs) - 1));
                }
                Ok(out)
            }
            TrafficPattern::RepeatTwice { gap_ms } => {
                let mut out: Vec<(u64, usize)> = (0..self.pairs)
                    .flat_map(|i| {
                        let t = (i as f64 * gap) as u64;
                        [(t, i), (t + gap_ms, i)]
                    })
                    .collect();
                out.sort();
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: u64,
    pub start_ms: u64,
    pub queries: u64,
    pub hits: u64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub stats: TransferStats,
    pub series: Vec<EpochPoint>,
}

impl SimulationReport {
    pub fn series_csv(&self) -> String {
        let mut out = String::from("epoch,start_ms,queries,hits,hit_rate\n");
        for p in &self.series {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.epoch, p.start_ms, p.queries, p.hits, p.hit_rate
            ));
        }
        out
    }
}

/// Replays a synthetic workload against a fresh store.
///
/// Refresh cycles run every `refresh_interval_ms`; a cycle due at the same
/// instant as a query runs first.
pub fn simulate(workload: &Workload) -> Result<SimulationReport> {
    workload.validate()?;
    let mut store = EmbeddingStore::new(StoreConfig {
        dim: workload.dim,
        ttl_ms: workload.ttl_ms,
        refresh_budget: workload.refresh_budget,
        capacity: workload.capacity,
        label_smoothing: None,
    })?;
    let teacher = HashTeacher {
        dim: workload.dim,
        seed: workload.seed,
    };
    let mut clock = VirtualClock::new();
    let mut next_refresh = workload.refresh_interval_ms;
    let mut series: Vec<EpochPoint> = Vec::new();

    for (t, pair) in workload.arrivals()? {
        while next_refresh <= t {
            clock.advance_to(next_refresh)?;
            store.teacher_refresh_cycle(&teacher, &clock)?;
            next_refresh += workload.refresh_interval_ms;
        }
        clock.advance_to(t)?;
        let result = store.student_query(&Workload::key(pair), &clock);

        let epoch = t / workload.epoch_ms;
        while series.len() as u64 <= epoch {
            let e = series.len() as u64;
            series.push(EpochPoint {
                epoch: e,
                start_ms: e * workload.epoch_ms,
                queries: 0,
                hits: 0,
                hit_rate: 0.0,
            });
        }
        let point = &mut series[epoch as usize];
        point.queries += 1;
        point.hits += u64::from(result.hit);
    }
    for p in &mut series {
        if p.queries > 0 {
            p.hit_rate = p.hits as f64 / p.queries as f64;
        }
    }
    Ok(SimulationReport {
        stats: store.stats().clone(),
        series,
    })
}
