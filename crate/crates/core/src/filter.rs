//! Pareto-optimal feature selection across consolidated tasks.
//!
//! Every feature carries one importance score per task. A feature sits on
//! the frontier when no other remaining feature is at least as important on
//! every task and strictly more important on one. Selection peels frontiers
//! off one layer at a time until the budget is met; when a layer is larger
//! than the remaining quota, a seeded uniform subset of it fills the quota.

use std::collections::BTreeMap;
use std::io::Read;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::seeded_rng;
use crate::types::{FeatureId, Seed, TaskId};

/// Per-feature, per-task importance scores, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct ImportanceMatrix {
    features: Vec<FeatureId>,
    tasks: Vec<TaskId>,
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    features: Vec<FeatureId>,
    tasks: Vec<TaskId>,
    scores: Vec<Vec<f64>>,
}

impl TryFrom<RawMatrix> for ImportanceMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        ImportanceMatrix::new(raw.features, raw.tasks, raw.scores)
    }
}

impl From<ImportanceMatrix> for RawMatrix {
    fn from(m: ImportanceMatrix) -> Self {
        let scores = (0..m.features.len()).map(|i| m.row(i).to_vec()).collect();
        RawMatrix {
            features: m.features,
            tasks: m.tasks,
            scores,
        }
    }
}

impl ImportanceMatrix {
    pub fn new(features: Vec<FeatureId>, tasks: Vec<TaskId>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::usage("importance matrix needs at least one task"));
        }
        if rows.len() != features.len() {
            return Err(Error::usage(format!(
                "{} feature names but {} score rows",
                features.len(),
                rows.len()
            )));
        }
        check_unique(features.iter().map(FeatureId::as_str), "feature")?;
        check_unique(tasks.iter().map(TaskId::as_str), "task")?;

        let mut scores = Vec::with_capacity(features.len() * tasks.len());
        for (feature, row) in features.iter().zip(&rows) {
            if row.len() != tasks.len() {
                return Err(Error::usage(format!(
                    "feature {feature}: {} scores for {} tasks",
                    row.len(),
                    tasks.len()
                )));
            }
            for &s in row {
                if !s.is_finite() || s < 0.0 {
                    return Err(Error::data(format!(
                        "feature {feature}: score {s} must be finite and non-negative"
                    )));
                }
            }
            scores.extend_from_slice(row);
        }
        Ok(Self {
            features,
            tasks,
            scores,
        })
    }

    /// Builds a matrix from plain names, mostly for tests and bindings.
    pub fn from_named(features: &[&str], tasks: &[&str], rows: Vec<Vec<f64>>) -> Result<Self> {
        let features = features.iter().map(|f| FeatureId::new(*f)).collect::<Result<_>>()?;
        let tasks = tasks.iter().map(|t| TaskId::new(*t)).collect::<Result<_>>()?;
        Self::new(features, tasks, rows)
    }

    /// Parses CSV with a header row of task names (first header cell labels
    /// the feature column) and one row per feature.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| Error::data(format!("line 1: {e}")))?
            .clone();
        if header.len() < 2 {
            return Err(Error::data("line 1: header needs a feature column and at least one task"));
        }
        let tasks = header
            .iter()
            .skip(1)
            .map(TaskId::new)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::data(format!("line 1: {e}")))?;

        let mut features = Vec::new();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::data(e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(Error::data(format!(
                    "line {line}: expected {} fields, found {}",
                    header.len(),
                    record.len()
                )));
            }
            let feature =
                FeatureId::new(&record[0]).map_err(|e| Error::data(format!("line {line}: {e}")))?;
            let row = record
                .iter()
                .skip(1)
                .map(|cell| {
                    cell.parse::<f64>()
                        .map_err(|_| Error::data(format!("line {line}: cannot parse score {cell:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            features.push(feature);
            rows.push(row);
        }
        Self::new(features, tasks, rows).map_err(|e| match e {
            Error::Usage(m) | Error::Data(m) => Error::Data(m),
        })
    }

    /// Appends extra criteria (cost, storage, ...) as additional score
    /// columns. They take part in dominance exactly like task columns.
    pub fn with_extra_columns(mut self, names: Vec<TaskId>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::usage("one name per extra column"));
        }
        let mut rows: Vec<Vec<f64>> = (0..self.features.len())
            .map(|i| self.row(i).to_vec())
            .collect();
        for column in &columns {
            if column.len() != self.features.len() {
                return Err(Error::usage("extra column length must equal feature count"));
            }
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.reserve(columns.len());
            row.extend(columns.iter().map(|c| c[i]));
        }
        self.tasks.extend(names);
        Self::new(self.features, self.tasks, rows)
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        let n = self.tasks.len();
        &self.scores[feature * n..(feature + 1) * n]
    }

    pub fn index_of(&self, feature: &FeatureId) -> Option<usize> {
        self.features.iter().position(|f| f == feature)
    }
}

fn check_unique<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for name in names {
        if !seen.insert(name) {
            return Err(Error::usage(format!("duplicate {what} {name:?}")));
        }
    }
    Ok(())
}

/// `a ≼ b`: every component of `a` is at most the matching component of `b`.
pub fn dominated_by(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::usage(format!(
            "importance vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::usage("importance vectors must be non-empty"));
    }
    Ok(a.iter().zip(b).all(|(x, y)| x <= y))
}

/// `a ≼ b` and `a ≠ b`. Equal vectors never exclude each other.
pub fn strictly_dominated(a: &[f64], b: &[f64]) -> bool {
    let mut differs = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        differs |= x < y;
    }
    differs
}

/// Active features not strictly dominated by another active feature,
/// returned in matrix order.
pub fn pareto_frontier(matrix: &ImportanceMatrix, active: &[FeatureId]) -> Result<Vec<FeatureId>> {
    if active.is_empty() {
        return Err(Error::usage("pareto frontier of an empty feature set"));
    }
    let mut idx = active
        .iter()
        .map(|f| {
            matrix
                .index_of(f)
                .ok_or_else(|| Error::usage(format!("unknown feature {f}")))
        })
        .collect::<Result<Vec<_>>>()?;
    idx.sort_unstable();
    idx.dedup();
    Ok(frontier_indices(matrix, &idx)
        .into_iter()
        .map(|i| matrix.features[i].clone())
        .collect())
}

/// Index form of [`pareto_frontier`]; `active` must be sorted.
pub fn frontier_indices(matrix: &ImportanceMatrix, active: &[usize]) -> Vec<usize> {
    active
        .iter()
        .copied()
        .filter(|&i| {
            !active
                .iter()
                .any(|&k| k != i && strictly_dominated(matrix.row(i), matrix.row(k)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub selected: Vec<FeatureId>,
    pub iteration_of: BTreeMap<FeatureId, usize>,
    /// Size of the full frontier at each iteration, including the last one
    /// even when only part of it was taken.
    pub frontier_sizes: Vec<usize>,
}

impl SelectionResult {
    pub fn iterations(&self) -> usize {
        self.frontier_sizes.len()
    }
}

/// Selects `budget` features by iterated frontier peeling.
///
/// Layers are found with dominance counts: each feature records how many
/// remaining features strictly dominate it, and removing a layer decrements
/// the counts of everything it dominated. A feature joins the frontier when
/// its count reaches zero.
pub fn select_features(matrix: &ImportanceMatrix, budget: usize, seed: Seed) -> Result<SelectionResult> {
    if matrix.is_empty() {
        return Err(Error::usage("cannot select from an empty importance matrix"));
    }
    if budget == 0 {
        return Err(Error::usage("feature budget must be at least 1"));
    }
    let n = matrix.len();
    let target = budget.min(n);

    let mut dominated_count = vec![0usize; n];
    let mut dominates: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for k in 0..n {
            if i != k && strictly_dominated(matrix.row(i), matrix.row(k)) {
                dominated_count[i] += 1;
                dominates[k].push(i);
            }
        }
    }

    let mut rng = seeded_rng(seed);
    let mut frontier: Vec<usize> = (0..n).filter(|&i| dominated_count[i] == 0).collect();
    let mut result = SelectionResult {
        selected: Vec::with_capacity(target),
        iteration_of: BTreeMap::new(),
        frontier_sizes: Vec::new(),
    };

    while result.selected.len() < target {
        debug_assert!(!frontier.is_empty());
        let iteration = result.frontier_sizes.len() + 1;
        result.frontier_sizes.push(frontier.len());
        let quota = target - result.selected.len();

        let taken: Vec<usize> = if frontier.len() <= quota {
            frontier.clone()
        } else {
            let mut picks: Vec<usize> = index::sample(&mut rng, frontier.len(), quota)
                .into_iter()
                .map(|j| frontier[j])
                .collect();
            picks.sort_unstable();
            picks
        };
        for &i in &taken {
            let id = matrix.features[i].clone();
            result.iteration_of.insert(id.clone(), iteration);
            result.selected.push(id);
        }
        if result.selected.len() == target {
            break;
        }

        let mut next = Vec::new();
        for &i in &frontier {
            for &j in &dominates[i] {
                dominated_count[j] -= 1;
                if dominated_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        frontier = next;
    }
    Ok(result)
}
