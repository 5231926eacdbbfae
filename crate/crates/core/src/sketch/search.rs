//! Alternating beam search over sharding plans and model hyperparameters.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dp::{dp_bootstrap_all_batches, BootstrapReport};
use super::profile::{ExecutionPlan, ProfileTable};
use crate::error::{Error, Result};
use crate::hash::{seeded_rng, SeededRng};
use crate::types::Seed;

/// Bounds and default of one tunable knob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnobSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub default: f64,
    #[serde(default)]
    pub integer: bool,
}

/// `flops = base · Π knob^exponent`; knobs without an exponent do not
/// affect FLOPs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialFlops {
    pub base: f64,
    #[serde(default)]
    pub exponents: BTreeMap<String, f64>,
}

impl Default for MonomialFlops {
    fn default() -> Self {
        Self {
            base: 1.0,
            exponents: BTreeMap::new(),
        }
    }
}

pub trait FlopsModel {
    fn flops(&self, knobs: &BTreeMap<String, f64>) -> f64;
}

impl FlopsModel for MonomialFlops {
    fn flops(&self, knobs: &BTreeMap<String, f64>) -> f64 {
        self.exponents.iter().fold(self.base, |acc, (name, e)| {
            acc * knobs.get(name).copied().unwrap_or(1.0).powf(*e)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    #[serde(default)]
    pub knobs: Vec<KnobSpec>,
    #[serde(default)]
    pub flops: MonomialFlops,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamPoint {
    pub knobs: BTreeMap<String, f64>,
    pub flops: f64,
}

impl HyperparamSpace {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for k in &self.knobs {
            if !names.insert(k.name.as_str()) {
                return Err(Error::usage(format!("duplicate knob {:?}", k.name)));
            }
            if !(k.lower <= k.default && k.default <= k.upper) || !k.lower.is_finite() || !k.upper.is_finite() {
                return Err(Error::usage(format!("knob {:?}: need lower <= default <= upper", k.name)));
            }
            if self.flops.exponents.contains_key(&k.name) && k.lower <= 0.0 {
                return Err(Error::usage(format!(
                    "knob {:?} enters the FLOPs formula and must stay positive",
                    k.name
                )));
            }
        }
        if let Some(name) = self.flops.exponents.keys().find(|n| !names.contains(n.as_str())) {
            return Err(Error::usage(format!("FLOPs formula names unknown knob {name:?}")));
        }
        if !(self.flops.base > 0.0 && self.flops.base.is_finite()) {
            return Err(Error::usage("FLOPs base must be positive"));
        }
        Ok(())
    }

    /// Clamps (and rounds integer knobs) into bounds, then derives FLOPs.
    pub fn point(&self, mut knobs: BTreeMap<String, f64>) -> HyperparamPoint {
        for k in &self.knobs {
            let v = knobs.entry(k.name.clone()).or_insert(k.default);
            *v = v.clamp(k.lower, k.upper);
            if k.integer {
                *v = v.round().clamp(k.lower.ceil(), k.upper.floor());
            }
        }
        let flops = self.flops.flops(&knobs);
        HyperparamPoint { knobs, flops }
    }

    pub fn default_point(&self) -> HyperparamPoint {
        self.point(self.knobs.iter().map(|k| (k.name.clone(), k.default)).collect())
    }
}

/// Source of a quality estimate for a configuration. The scaling-law
/// surrogate implements it; measured results can be injected the same way.
pub trait QualityOracle {
    fn quality(&self, hp: &HyperparamPoint) -> f64;
}

/// `quality(f) = baseline · (f / reference_flops)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityModel {
    pub baseline_quality: f64,
    pub reference_flops: f64,
    pub exponent: f64,
}

impl QualityModel {
    pub fn at_flops(&self, flops: f64) -> f64 {
        self.baseline_quality * (flops / self.reference_flops).powf(self.exponent)
    }
}

impl QualityOracle for QualityModel {
    fn quality(&self, hp: &HyperparamPoint) -> f64 {
        self.at_flops(hp.flops)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `quality / flops^α`, throughput breaks ties.
    #[default]
    QualityPerFlops,
    /// Throughput, with quality acting only as a constraint.
    Throughput,
}

fn default_alpha() -> f64 {
    0.003
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam_width: usize,
    pub steps_per_phase: usize,
    /// Latency budget in milliseconds.
    pub latency_budget: f64,
    pub quality_floor: f64,
    pub memory_capacity: u64,
    pub seed: Seed,
    #[serde(default = "default_alpha")]
    pub scaling_exponent: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub score_mode: ScoreMode,
    /// Scale compute latency by `flops / default_flops` when hyperparameters
    /// move away from their defaults.
    #[serde(default = "default_true")]
    pub compute_scales_with_flops: bool,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.steps_per_phase == 0 || self.max_iterations == 0 {
            return Err(Error::usage("beam width, steps per phase and max iterations must be positive"));
        }
        if self.memory_capacity == 0 {
            return Err(Error::usage("memory capacity must be positive"));
        }
        if !(self.latency_budget > 0.0) || !(self.quality_floor > 0.0) {
            return Err(Error::usage("latency budget and quality floor must be positive"));
        }
        if !(self.scaling_exponent > 0.0 && self.scaling_exponent < 1.0) {
            return Err(Error::usage("scaling exponent must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Zero when the plan breaks the latency budget, the memory capacity or the
/// quality floor; otherwise the configured objective.
pub fn score(plan: &ExecutionPlan, hp: &HyperparamPoint, quality: &dyn QualityOracle, cfg: &SearchConfig) -> f64 {
    if plan.total_latency > cfg.latency_budget || plan.memory_used > cfg.memory_capacity {
        return 0.0;
    }
    let q = quality.quality(hp);
    if !(q >= cfg.quality_floor) {
        return 0.0;
    }
    match cfg.score_mode {
        ScoreMode::QualityPerFlops => q / hp.flops.powf(cfg.scaling_exponent),
        ScoreMode::Throughput => plan.throughput(),
    }
}

/// A point in the joint search space.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub batch_index: usize,
    pub strategies: Vec<usize>,
    pub hyperparams: HyperparamPoint,
}

impl Candidate {
    fn key(&self) -> (usize, Vec<usize>, Vec<u64>) {
        (
            self.batch_index,
            self.strategies.clone(),
            self.hyperparams.knobs.values().map(|v| v.to_bits()).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub candidate: Candidate,
    pub plan: ExecutionPlan,
    pub quality: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Sharding,
    Hyperparams,
}

/// Generates mutations during search. Implementations must be
/// deterministic given their own seed.
pub trait Proposer {
    /// Parent for the `step`-th proposal of a phase.
    fn choose_parent(&mut self, beam: &[Scored], step: usize) -> Candidate;
    /// New batch index and per-layer strategies near `parent`.
    fn mutate_sharding(&mut self, parent: &Candidate, profile: &ProfileTable) -> (usize, Vec<usize>);
    /// New knob values near `parent`; the search clamps them into bounds.
    fn mutate_hyperparams(&mut self, parent: &Candidate, space: &HyperparamSpace) -> BTreeMap<String, f64>;
    /// Called with every evaluated candidate at the end of a phase.
    fn observe(&mut self, _kind: PhaseKind, _evaluated: &[Scored]) {}
}

/// Seeded random mutation with geometrically shrinking knob steps and
/// occasional restarts from the best configurations seen so far.
pub struct RandomMutationProposer {
    rng: SeededRng,
    step: f64,
    decay: f64,
    min_step: f64,
    elite_prob: f64,
    elite: Vec<Scored>,
    elite_size: usize,
}

impl RandomMutationProposer {
    pub fn new(seed: Seed, elite_size: usize) -> Self {
        Self {
            rng: seeded_rng(seed),
            step: 0.25,
            decay: 0.7,
            min_step: 0.02,
            elite_prob: 0.2,
            elite: Vec::new(),
            elite_size: elite_size.max(1),
        }
    }
}

impl Proposer for RandomMutationProposer {
    fn choose_parent(&mut self, beam: &[Scored], step: usize) -> Candidate {
        if !self.elite.is_empty() && self.rng.random_bool(self.elite_prob) {
            let i = self.rng.random_range(0..self.elite.len());
            return self.elite[i].candidate.clone();
        }
        beam[step % beam.len()].candidate.clone()
    }

    fn mutate_sharding(&mut self, parent: &Candidate, profile: &ProfileTable) -> (usize, Vec<usize>) {
        let mut strategies = parent.strategies.clone();
        let n_strategies = profile.strategies().len();
        let flips = if self.rng.random_bool(0.3) { 2 } else { 1 };
        for _ in 0..flips {
            let l = self.rng.random_range(0..strategies.len());
            strategies[l] = self.rng.random_range(0..n_strategies);
        }
        let mut batch = parent.batch_index;
        let n_batches = profile.batch_sizes().len();
        if n_batches > 1 && self.rng.random_bool(0.25) {
            batch = if batch == 0 || (batch + 1 < n_batches && self.rng.random_bool(0.5)) {
                batch + 1
            } else {
                batch - 1
            };
        }
        (batch, strategies)
    }

    fn mutate_hyperparams(&mut self, parent: &Candidate, space: &HyperparamSpace) -> BTreeMap<String, f64> {
        let mut knobs = parent.hyperparams.knobs.clone();
        if space.knobs.is_empty() {
            return knobs;
        }
        let k = &space.knobs[self.rng.random_range(0..space.knobs.len())];
        let span = (k.upper - k.lower) * self.step;
        let delta = self.rng.random_range(-1.0..=1.0) * span;
        let v = knobs.entry(k.name.clone()).or_insert(k.default);
        *v += if k.integer && delta.abs() < 1.0 && span >= 0.5 { delta.signum() } else { delta };
        knobs
    }

    fn observe(&mut self, kind: PhaseKind, evaluated: &[Scored]) {
        if kind == PhaseKind::Hyperparams {
            self.step = (self.step * self.decay).max(self.min_step);
        }
        self.elite.extend(evaluated.iter().filter(|s| s.score > 0.0).cloned());
        rank(&mut self.elite);
        dedup(&mut self.elite);
        self.elite.truncate(self.elite_size);
    }
}

/// Score descending, then throughput descending. Stable, so earlier
/// entries win remaining ties.
fn rank(items: &mut [Scored]) {
    items.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.plan.throughput().total_cmp(&a.plan.throughput()))
    });
}

fn dedup(items: &mut Vec<Scored>) {
    let mut seen = HashSet::new();
    items.retain(|s| seen.insert(s.candidate.key()));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPlan {
    pub hyperparams: HyperparamPoint,
    pub plan: ExecutionPlan,
    pub quality: f64,
    pub throughput: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub kind: PhaseKind,
    pub best_score: f64,
    pub beam_changed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamSearchResult {
    /// Final beam, constraint-satisfying entries only, best first.
    pub ranked: Vec<RankedPlan>,
    pub phases: Vec<PhaseRecord>,
    pub bootstrap: BootstrapReport,
    pub diagnostics: Vec<String>,
}

struct Evaluator<'a> {
    profile: &'a ProfileTable,
    quality: &'a dyn QualityOracle,
    cfg: &'a SearchConfig,
    reference_flops: f64,
}

impl Evaluator<'_> {
    fn compute_scale(&self, hp: &HyperparamPoint) -> f64 {
        if self.cfg.compute_scales_with_flops {
            hp.flops / self.reference_flops
        } else {
            1.0
        }
    }

    fn evaluate(&self, candidate: Candidate) -> Scored {
        let scale = self.compute_scale(&candidate.hyperparams);
        let plan = self
            .profile
            .plan(candidate.batch_index, candidate.strategies.clone(), scale);
        let quality = self.quality.quality(&candidate.hyperparams);
        let score = score(&plan, &candidate.hyperparams, self.quality, self.cfg);
        Scored {
            candidate,
            plan,
            quality,
            score,
        }
    }
}

/// Runs the alternating search with the default proposer seeded from
/// `cfg.seed`.
pub fn beam_search(
    profile: &ProfileTable,
    space: &HyperparamSpace,
    quality: &dyn QualityOracle,
    cfg: &SearchConfig,
) -> Result<BeamSearchResult> {
    let mut proposer = RandomMutationProposer::new(cfg.seed, 2 * cfg.beam_width);
    beam_search_with(profile, space, quality, cfg, &mut proposer)
}

/// Beam search with a caller-supplied proposer.
///
/// The beam starts from the DP bootstrap plan at default hyperparameters,
/// padded with perturbations of it. Phases then alternate, sharding first:
/// each evaluates `steps_per_phase` mutations of one half of the
/// configuration with the other half frozen, and keeps the best
/// `beam_width` distinct configurations out of the old beam and the new
/// candidates. The search ends after `max_iterations` phases or once two
/// consecutive phases leave the beam unchanged.
pub fn beam_search_with(
    profile: &ProfileTable,
    space: &HyperparamSpace,
    quality: &dyn QualityOracle,
    cfg: &SearchConfig,
    proposer: &mut dyn Proposer,
) -> Result<BeamSearchResult> {
    cfg.validate()?;
    space.validate()?;
    let default_hp = space.default_point();
    let bootstrap = dp_bootstrap_all_batches(profile, cfg.memory_capacity)?;
    let mut result = BeamSearchResult {
        ranked: Vec::new(),
        phases: Vec::new(),
        bootstrap: bootstrap.clone(),
        diagnostics: Vec::new(),
    };
    let Some(seed_plan) = bootstrap.best else {
        result
            .diagnostics
            .push("no batch size admits a plan within the memory capacity".to_owned());
        return Ok(result);
    };

    let eval = Evaluator {
        profile,
        quality,
        cfg,
        reference_flops: default_hp.flops,
    };
    let root = Candidate {
        batch_index: profile.batch_index(seed_plan.batch)?,
        strategies: seed_plan.strategy_indices.clone(),
        hyperparams: default_hp,
    };
    let mut beam = vec![eval.evaluate(root.clone())];
    for _ in 1..cfg.beam_width {
        let (batch_index, strategies) = proposer.mutate_sharding(&root, profile);
        beam.push(eval.evaluate(Candidate {
            batch_index,
            strategies,
            hyperparams: root.hyperparams.clone(),
        }));
    }
    rank(&mut beam);
    dedup(&mut beam);
    beam.truncate(cfg.beam_width);

    let mut unchanged = 0;
    for phase in 0..cfg.max_iterations {
        let kind = if phase % 2 == 0 {
            PhaseKind::Sharding
        } else {
            PhaseKind::Hyperparams
        };
        let mut evaluated = Vec::with_capacity(cfg.steps_per_phase);
        for step in 0..cfg.steps_per_phase {
            let parent = proposer.choose_parent(&beam, step);
            let child = match kind {
                PhaseKind::Sharding => {
                    let (batch_index, strategies) = proposer.mutate_sharding(&parent, profile);
                    Candidate {
                        batch_index,
                        strategies,
                        hyperparams: parent.hyperparams,
                    }
                }
                PhaseKind::Hyperparams => {
                    let knobs = proposer.mutate_hyperparams(&parent, space);
                    Candidate {
                        hyperparams: space.point(knobs),
                        ..parent
                    }
                }
            };
            evaluated.push(eval.evaluate(child));
        }
        proposer.observe(kind, &evaluated);

        let before: Vec<_> = beam.iter().map(|s| s.candidate.key()).collect();
        beam.extend(evaluated);
        rank(&mut beam);
        dedup(&mut beam);
        beam.truncate(cfg.beam_width);
        let changed = beam.iter().map(|s| s.candidate.key()).collect::<Vec<_>>() != before;
        result.phases.push(PhaseRecord {
            kind,
            best_score: beam[0].score,
            beam_changed: changed,
        });
        unchanged = if changed { 0 } else { unchanged + 1 };
        if unchanged >= 2 {
            break;
        }
    }

    if beam.iter().all(|s| s.score == 0.0) {
        result
            .diagnostics
            .push("no configuration satisfied the latency and quality constraints".to_owned());
    }
    result.ranked = beam
        .into_iter()
        .filter(|s| s.score > 0.0)
        .map(|s| RankedPlan {
            throughput: s.plan.throughput(),
            hyperparams: s.candidate.hyperparams,
            plan: s.plan,
            quality: s.quality,
            score: s.score,
        })
        .collect();
    Ok(result)
}
