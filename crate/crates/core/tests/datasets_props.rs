use std::collections::BTreeMap;

use lattice_core::datasets::{
    assign_window, merge_domains, zip_records, AttributionWindow, DatasetSchema, DomainRecord, ZipperConfig,
};
use lattice_core::{FeatureId, Seed, TaskId};
use proptest::prelude::*;

fn windows(k: usize) -> Vec<AttributionWindow> {
    (0..k).map(|i| AttributionWindow::new(format!("w{i}"), 1000 * (i as u64 + 1))).collect()
}

fn record_strategy() -> impl Strategy<Value = DomainRecord> {
    ("[a-z]{1,6}", "[a-z0-9]{1,6}", 0u64..1_000_000, prop::option::of(0u64..6000), prop::option::of(0u64..6000))
        .prop_map(|(user, ad, t, c1, c2)| {
            let mut conversions = BTreeMap::new();
            if let Some(d) = c1 {
                conversions.insert(TaskId::new("ctr").unwrap(), t + d);
            }
            if let Some(d) = c2 {
                conversions.insert(TaskId::new("cvr").unwrap(), t + d);
            }
            DomainRecord {
                domain: "d".into(),
                user_id: user,
                ad_id: ad,
                impression_time_ms: t,
                features: BTreeMap::new(),
                conversions,
            }
        })
}

fn tasks() -> Vec<TaskId> {
    vec![TaskId::new("ctr").unwrap(), TaskId::new("cvr").unwrap()]
}

proptest! {
    #[test]
    fn labels_monotone_and_boundary_exact(records in prop::collection::vec(record_strategy(), 1..50), seed in any::<u64>()) {
        let cfg = ZipperConfig::uniform(windows(3), Seed(seed)).unwrap();
        let zipped = zip_records(&records, &tasks(), &cfg).unwrap();
        prop_assert_eq!(zipped.len(), records.len());
        for z in &zipped {
            for t in tasks() {
                let labels = &z.window_labels[&t];
                prop_assert!(labels.windows(2).all(|w| w[0] <= w[1]));
                for (w, window) in cfg.windows.iter().enumerate() {
                    let expect = z.base.delay(&t).is_some_and(|d| d <= window.duration_ms);
                    prop_assert_eq!(labels[w] == 1, expect);
                }
            }
        }
    }

    #[test]
    fn assignment_ignores_labels(mut records in prop::collection::vec(record_strategy(), 2..30), seed in any::<u64>()) {
        let cfg = ZipperConfig::uniform(windows(4), Seed(seed)).unwrap();
        let before: Vec<usize> = zip_records(&records, &tasks(), &cfg).unwrap().iter().map(|z| z.assigned_window).collect();
        // Rotate conversion maps across records, keeping each one after its impression.
        let maps: Vec<_> = records.iter().map(|r| r.conversions.clone()).collect();
        let n = records.len();
        for (i, r) in records.iter_mut().enumerate() {
            r.conversions = maps[(i + 1) % n]
                .iter()
                .map(|(k, v)| (k.clone(), r.impression_time_ms + v % 5000))
                .collect();
        }
        let after: Vec<usize> = zip_records(&records, &tasks(), &cfg).unwrap().iter().map(|z| z.assigned_window).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn padding_is_complete(
        schemas in prop::collection::vec(prop::collection::btree_set("[a-e]", 1..5), 1..4),
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let mut inputs = Vec::new();
        for (d, names) in schemas.iter().enumerate() {
            let features: Vec<FeatureId> = names.iter().map(|n| FeatureId::new(n.as_str()).unwrap()).collect();
            let rows: Vec<DomainRecord> = values
                .iter()
                .take(3)
                .map(|v| DomainRecord {
                    domain: String::new(),
                    user_id: "u".into(),
                    ad_id: "a".into(),
                    impression_time_ms: 0,
                    features: features.iter().map(|f| (f.clone(), *v)).collect(),
                    conversions: BTreeMap::new(),
                })
                .collect();
            inputs.push((DatasetSchema::new(format!("d{d}"), features).unwrap(), rows));
        }
        let originals: Vec<_> = inputs.iter().flat_map(|(_, r)| r.clone()).collect();
        let merged = merge_domains(inputs).unwrap();
        prop_assert_eq!(merged.records.len(), originals.len());
        for (r, orig) in merged.records.iter().zip(&originals) {
            prop_assert_eq!(r.features.len(), merged.schema.features.len());
            for f in &merged.schema.features {
                let expected = orig.features.get(f).copied().unwrap_or(0.0);
                prop_assert_eq!(r.features[f], expected);
            }
        }
    }
}

#[test]
fn distribution_fidelity_across_shapes() {
    let shapes: Vec<Vec<f64>> = vec![
        vec![0.5, 0.5],
        vec![0.4, 0.3, 0.2, 0.1],
        vec![0.05, 0.95],
        vec![0.2; 5],
        vec![0.125; 8],
        vec![0.05, 0.1, 0.15, 0.2, 0.05, 0.1, 0.3, 0.05],
    ];
    let n = 100_000;
    for (s, probs) in shapes.into_iter().enumerate() {
        let cfg = ZipperConfig::new(windows(probs.len()), probs.clone(), Seed(s as u64)).unwrap();
        let mut counts = vec![0usize; probs.len()];
        for i in 0..n {
            counts[assign_window(&format!("user{i}"), &format!("ad{}", i % 97), i as u64 * 13, &cfg)] += 1;
        }
        let l1: f64 = counts.iter().zip(&probs).map(|(c, p)| (*c as f64 / n as f64 - p).abs()).sum();
        assert!(l1 <= 0.01, "shape {probs:?}: L1 {l1}");
    }
}
