//! Cross-domain dataset consolidation and attribution-window mixing.
//!
//! [`merge_domains`] concatenates per-domain datasets over the union of
//! their feature sets, zero-filling features a domain never had.
//! [`zip_dataset`] then assigns every impression to exactly one
//! attribution window by hashing its (user, ad, timestamp) signature, and
//! materializes the binary label of every task under every window.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::{stable_hash, unit_interval};
use crate::types::{FeatureId, Seed, TaskId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub domain: String,
    pub features: Vec<FeatureId>,
}

impl DatasetSchema {
    pub fn new(domain: impl Into<String>, features: Vec<FeatureId>) -> Result<Self> {
        let schema = Self {
            domain: domain.into(),
            features,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for f in &self.features {
            if !seen.insert(f) {
                return Err(Error::usage(format!(
                    "schema {:?} declares feature {f} twice",
                    self.domain
                )));
            }
        }
        Ok(())
    }

    /// Schema listing every feature key the records use, in first-seen order.
    pub fn infer(domain: impl Into<String>, records: &[DomainRecord]) -> Self {
        let mut seen = HashSet::new();
        let mut features = Vec::new();
        for r in records {
            for f in r.features.keys() {
                if seen.insert(f.clone()) {
                    features.push(f.clone());
                }
            }
        }
        Self {
            domain: domain.into(),
            features,
        }
    }

    pub fn contains(&self, feature: &FeatureId) -> bool {
        self.features.contains(feature)
    }
}

/// One impression from one domain. Serializes as a line of the JSON-lines
/// impression log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRecord {
    pub domain: String,
    pub user_id: String,
    pub ad_id: String,
    pub impression_time_ms: u64,
    #[serde(default)]
    pub features: BTreeMap<FeatureId, f64>,
    /// Timestamp of the positive event per task; absent tasks never converted.
    #[serde(default)]
    pub conversions: BTreeMap<TaskId, u64>,
}

impl DomainRecord {
    pub fn delay(&self, task: &TaskId) -> Option<u64> {
        self.conversions
            .get(task)
            .map(|t| t.saturating_sub(self.impression_time_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedDataset<R = DomainRecord> {
    pub schema: DatasetSchema,
    pub records: Vec<R>,
}

/// Concatenates domain datasets over the ordered union of their schemas.
///
/// Records keep their domain tag and input order; features a record's
/// domain does not declare are filled with `0.0`.
pub fn merge_domains(datasets: Vec<(DatasetSchema, Vec<DomainRecord>)>) -> Result<UnifiedDataset> {
    if datasets.is_empty() {
        return Err(Error::usage("merge needs at least one dataset"));
    }
    let mut union = Vec::new();
    let mut seen = HashSet::new();
    for (schema, _) in &datasets {
        schema.validate()?;
        for f in &schema.features {
            if seen.insert(f.clone()) {
                union.push(f.clone());
            }
        }
    }
    let domain = datasets
        .iter()
        .map(|(s, _)| s.domain.as_str())
        .collect::<Vec<_>>()
        .join("+");

    let total = datasets.iter().map(|(_, r)| r.len()).sum();
    let mut records = Vec::with_capacity(total);
    for (schema, rows) in datasets {
        for mut record in rows {
            if let Some(extra) = record.features.keys().find(|f| !schema.contains(f)) {
                return Err(Error::data(format!(
                    "record for user {:?} in domain {:?} has feature {extra} outside its schema",
                    record.user_id, schema.domain
                )));
            }
            for f in &union {
                record.features.entry(f.clone()).or_insert(0.0);
            }
            record.domain = schema.domain.clone();
            records.push(record);
        }
    }
    Ok(UnifiedDataset {
        schema: DatasetSchema {
            domain,
            features: union,
        },
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionWindow {
    pub name: String,
    pub duration_ms: u64,
}

impl AttributionWindow {
    pub fn new(name: impl Into<String>, duration_ms: u64) -> Self {
        Self {
            name: name.into(),
            duration_ms,
        }
    }

    /// Conversions at exactly the window duration are credited.
    pub fn credits(&self, delay_ms: u64) -> bool {
        delay_ms <= self.duration_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawZipperConfig")]
pub struct ZipperConfig {
    pub windows: Vec<AttributionWindow>,
    pub probabilities: Vec<f64>,
    pub seed: Seed,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

#[derive(Deserialize)]
struct RawZipperConfig {
    windows: Vec<AttributionWindow>,
    probabilities: Vec<f64>,
    seed: Seed,
}

impl TryFrom<RawZipperConfig> for ZipperConfig {
    type Error = Error;

    fn try_from(raw: RawZipperConfig) -> Result<Self> {
        ZipperConfig::new(raw.windows, raw.probabilities, raw.seed)
    }
}

impl ZipperConfig {
    pub fn new(windows: Vec<AttributionWindow>, probabilities: Vec<f64>, seed: Seed) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::usage("zipper needs at least one attribution window"));
        }
        if windows.len() != probabilities.len() {
            return Err(Error::usage(format!(
                "{} windows but {} probabilities",
                windows.len(),
                probabilities.len()
            )));
        }
        for pair in windows.windows(2) {
            if pair[1].duration_ms <= pair[0].duration_ms {
                return Err(Error::usage("window durations must be strictly increasing"));
            }
        }
        if windows[0].duration_ms == 0 {
            return Err(Error::usage("window durations must be positive"));
        }
        let mut names = HashSet::new();
        if !windows.iter().all(|w| names.insert(w.name.as_str())) {
            return Err(Error::usage("window names must be unique"));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::usage("window probabilities must be non-negative"));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::usage(format!("window probabilities sum to {sum}, not 1")));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Close the last non-empty interval so rounding never leaves a gap below 1.
        if let Some(last) = probabilities.iter().rposition(|p| *p > 0.0) {
            for c in &mut cumulative[last..] {
                *c = f64::INFINITY;
            }
        }
        Ok(Self {
            windows,
            probabilities,
            seed,
            cumulative,
        })
    }

    /// Equal probability for every window.
    pub fn uniform(windows: Vec<AttributionWindow>, seed: Seed) -> Result<Self> {
        let p = 1.0 / windows.len().max(1) as f64;
        let mut probabilities = vec![p; windows.len()];
        if let Some(last) = probabilities.last_mut() {
            *last = 1.0 - p * (windows.len() - 1) as f64;
        }
        Self::new(windows, probabilities, seed)
    }

    /// Index of the longest window, whose head serves predictions.
    pub fn oracle_window(&self) -> usize {
        self.windows.len() - 1
    }
}

/// Length-prefixed user and ad ids followed by the big-endian timestamp.
pub fn encode_signature(user_id: &str, ad_id: &str, impression_time_ms: u64) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + user_id.len() + ad_id.len());
    for part in [user_id, ad_id] {
        buf.extend_from_slice(&(part.len() as u64).to_be_bytes());
        buf.extend_from_slice(part.as_bytes());
    }
    buf.extend_from_slice(&impression_time_ms.to_be_bytes());
    buf
}

/// Window for an impression, fixed by the hash of its signature.
pub fn assign_window(user_id: &str, ad_id: &str, impression_time_ms: u64, config: &ZipperConfig) -> usize {
    let h = stable_hash(&encode_signature(user_id, ad_id, impression_time_ms), config.seed);
    let u = unit_interval(h);
    config
        .cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(config.windows.len() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZippedRecord {
    #[serde(flatten)]
    pub base: DomainRecord,
    pub assigned_window: usize,
    /// Per task, the label under each window in config order.
    pub window_labels: BTreeMap<TaskId, Vec<u8>>,
}

impl ZippedRecord {
    pub fn label(&self, task: &TaskId, window: usize) -> u8 {
        self.window_labels.get(task).map_or(0, |l| l[window])
    }
}

pub fn zip_records(records: &[DomainRecord], tasks: &[TaskId], config: &ZipperConfig) -> Result<Vec<ZippedRecord>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| zip_one(i, r, tasks, config))
        .collect()
}

fn zip_one(index: usize, r: &DomainRecord, tasks: &[TaskId], config: &ZipperConfig) -> Result<ZippedRecord> {
    let mut window_labels = BTreeMap::new();
    for task in tasks {
        let delay = match r.conversions.get(task) {
            Some(&t) if t < r.impression_time_ms => {
                return Err(Error::data(format!(
                    "record {index} (user {:?}, ad {:?}): {task} converted at {t} before impression at {}",
                    r.user_id, r.ad_id, r.impression_time_ms
                )))
            }
            Some(&t) => Some(t - r.impression_time_ms),
            None => None,
        };
        let labels = config
            .windows
            .iter()
            .map(|w| u8::from(delay.is_some_and(|d| w.credits(d))))
            .collect();
        window_labels.insert(task.clone(), labels);
    }
    Ok(ZippedRecord {
        base: r.clone(),
        assigned_window: assign_window(&r.user_id, &r.ad_id, r.impression_time_ms, config),
        window_labels,
    })
}

pub fn zip_dataset(
    dataset: &UnifiedDataset,
    tasks: &[TaskId],
    config: &ZipperConfig,
) -> Result<UnifiedDataset<ZippedRecord>> {
    Ok(UnifiedDataset {
        schema: dataset.schema.clone(),
        records: zip_records(&dataset.records, tasks, config)?,
    })
}

/// Tasks mentioned by any record, sorted.
pub fn tasks_seen(records: &[DomainRecord]) -> Vec<TaskId> {
    records
        .iter()
        .flat_map(|r| r.conversions.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window: String,
    pub count: usize,
    /// Positive rate of each task on the records routed to this window,
    /// under this window's label. `None` when nothing was routed here.
    pub positive_rate: BTreeMap<TaskId, Option<f64>>,
}

pub fn window_routing_summary(records: &[ZippedRecord], tasks: &[TaskId], config: &ZipperConfig) -> Vec<WindowSummary> {
    let k = config.windows.len();
    let mut counts = vec![0usize; k];
    let mut positives = vec![vec![0usize; tasks.len()]; k];
    for r in records {
        let w = r.assigned_window;
        counts[w] += 1;
        for (t, task) in tasks.iter().enumerate() {
            positives[w][t] += usize::from(r.label(task, w));
        }
    }
    config
        .windows
        .iter()
        .enumerate()
        .map(|(w, window)| WindowSummary {
            window: window.name.clone(),
            count: counts[w],
            positive_rate: tasks
                .iter()
                .enumerate()
                .map(|(t, task)| {
                    let rate = (counts[w] > 0).then(|| positives[w][t] as f64 / counts[w] as f64);
                    (task.clone(), rate)
                })
                .collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: u64 = 60_000;
    const HOUR: u64 = 60 * MIN;

    fn fid(s: &str) -> FeatureId {
        FeatureId::new(s).unwrap()
    }

    fn record(domain: &str, features: &[(&str, f64)]) -> DomainRecord {
        DomainRecord {
            domain: domain.into(),
            user_id: "u".into(),
            ad_id: "a".into(),
            impression_time_ms: 0,
            features: features.iter().map(|(k, v)| (fid(k), *v)).collect(),
            conversions: BTreeMap::new(),
        }
    }

    fn windows() -> Vec<AttributionWindow> {
        vec![AttributionWindow::new("90min", 90 * MIN), AttributionWindow::new("1d", 24 * HOUR)]
    }

    #[test]
    fn merge_zero_pads() {
        let a = DatasetSchema::new("news", vec![fid("a"), fid("b")]).unwrap();
        let b = DatasetSchema::new("video", vec![fid("b"), fid("c")]).unwrap();
        let merged = merge_domains(vec![
            (a, vec![record("news", &[("a", 1.0), ("b", 2.0)])]),
            (b, vec![record("video", &[("b", 3.0), ("c", 4.0)])]),
        ])
        .unwrap();
        assert_eq!(merged.schema.features, vec![fid("a"), fid("b"), fid("c")]);
        assert_eq!(merged.records[0].features[&fid("c")], 0.0);
        assert_eq!(merged.records[1].features[&fid("a")], 0.0);
        assert_eq!(merged.records[1].domain, "video");
    }

    #[test]
    fn merge_single_is_identity() {
        let s = DatasetSchema::new("news", vec![fid("a")]).unwrap();
        let rows = vec![record("news", &[("a", 1.5)])];
        let merged = merge_domains(vec![(s.clone(), rows.clone())]).unwrap();
        assert_eq!(merged.records, rows);
        assert_eq!(merged.schema.features, s.features);
    }

    #[test]
    fn merge_counts_and_errors() {
        let mk = |d: &str, n: usize| {
            (
                DatasetSchema::new(d, vec![fid("x")]).unwrap(),
                vec![record(d, &[("x", 1.0)]); n],
            )
        };
        let merged = merge_domains(vec![mk("a", 2), mk("b", 3), mk("c", 5)]).unwrap();
        assert_eq!(merged.records.len(), 10);
        assert_eq!(merged.records[4].domain, "b");
        assert_eq!(merged.records[5].domain, "c");

        assert!(DatasetSchema::new("d", vec![fid("x"), fid("x")]).is_err());
        assert!(merge_domains(vec![]).is_err());
        let stray = merge_domains(vec![(
            DatasetSchema::new("d", vec![fid("x")]).unwrap(),
            vec![record("d", &[("y", 1.0)])],
        )]);
        assert!(matches!(stray, Err(Error::Data(_))));
    }

    #[test]
    fn config_validation() {
        let seed = Seed(1);
        assert!(ZipperConfig::new(windows(), vec![0.5, 0.6], seed).is_err());
        assert!(ZipperConfig::new(windows(), vec![0.5], seed).is_err());
        assert!(ZipperConfig::new(windows(), vec![-0.5, 1.5], seed).is_err());
        let backwards = vec![AttributionWindow::new("1d", 24 * HOUR), AttributionWindow::new("90min", 90 * MIN)];
        assert!(ZipperConfig::new(backwards, vec![0.5, 0.5], seed).is_err());
        let cfg: ZipperConfig = serde_json::from_str(
            r#"{"windows":[{"name":"90min","duration_ms":5400000},{"name":"1d","duration_ms":86400000}],
                "probabilities":[0.5,0.5],"seed":3}"#,
        )
        .unwrap();
        assert_eq!(cfg.oracle_window(), 1);
        assert_eq!(cfg, ZipperConfig::uniform(windows(), Seed(3)).unwrap());
    }

    #[test]
    fn degenerate_distribution_routes_to_first() {
        let cfg = ZipperConfig::new(windows(), vec![1.0, 0.0], Seed(5)).unwrap();
        for i in 0..1000 {
            assert_eq!(assign_window(&format!("u{i}"), "ad", i, &cfg), 0);
        }
        let cfg = ZipperConfig::new(windows(), vec![0.0, 1.0], Seed(5)).unwrap();
        for i in 0..1000 {
            assert_eq!(assign_window(&format!("u{i}"), "ad", i, &cfg), 1);
        }
    }

    #[test]
    fn signature_encoding_is_unambiguous() {
        assert_ne!(encode_signature("ab", "c", 0), encode_signature("a", "bc", 0));
        assert_eq!(encode_signature("", "", 1).len(), 24);
    }

    #[test]
    fn labels_per_window() {
        let cfg = ZipperConfig::uniform(windows(), Seed(0)).unwrap();
        let cvr = TaskId::new("cvr").unwrap();
        let mut r = record("news", &[]);
        r.conversions.insert(cvr.clone(), 2 * HOUR);
        let z = zip_records(&[r.clone()], &[cvr.clone()], &cfg).unwrap();
        assert_eq!(z[0].window_labels[&cvr], vec![0, 1]);

        r.conversions.insert(cvr.clone(), 90 * MIN);
        let z = zip_records(&[r.clone()], &[cvr.clone()], &cfg).unwrap();
        assert_eq!(z[0].window_labels[&cvr], vec![1, 1]);

        r.conversions.clear();
        let z = zip_records(&[r.clone()], &[cvr.clone()], &cfg).unwrap();
        assert_eq!(z[0].window_labels[&cvr], vec![0, 0]);

        r.impression_time_ms = 10;
        r.conversions.insert(cvr.clone(), 5);
        let err = zip_records(&[record("x", &[]), r], &[cvr], &cfg).unwrap_err();
        assert!(matches!(&err, Error::Data(m) if m.contains("record 1")), "{err}");
    }

    #[test]
    fn summary_counts() {
        let cfg = ZipperConfig::new(windows(), vec![1.0, 0.0], Seed(0)).unwrap();
        let cvr = TaskId::new("cvr").unwrap();
        let records: Vec<_> = (0..20)
            .map(|i| {
                let mut r = record("d", &[]);
                r.user_id = format!("u{i}");
                r.conversions.insert(cvr.clone(), MIN);
                r
            })
            .collect();
        let z = zip_records(&records, &[cvr.clone()], &cfg).unwrap();
        let s = window_routing_summary(&z, &[cvr.clone()], &cfg);
        assert_eq!(s[0].count, 20);
        assert_eq!(s[1].count, 0);
        assert_eq!(s[0].positive_rate[&cvr], Some(1.0));
        assert_eq!(s[1].positive_rate[&cvr], None);
    }

    #[test]
    fn jsonl_line_roundtrip() {
        let line = r#"{"domain":"news","user_id":"u1","ad_id":"a9","impression_time_ms":1000,"features":{"age":3.0},"conversions":{"cvr":5000}}"#;
        let r: DomainRecord = serde_json::from_str(line).unwrap();
        assert_eq!(r.delay(&TaskId::new("cvr").unwrap()), Some(4000));
        assert_eq!(serde_json::to_string(&r).unwrap(), line);
    }
}
