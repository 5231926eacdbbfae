mod oracles;

use lattice_core::sketch::{
    beam_search, dp_bootstrap, dp_bootstrap_all_batches, HyperparamSpace, KnobSpec, MonomialFlops, ProfileTable,
    QualityModel, ScoreMode, SearchConfig, StrategyId,
};
use lattice_core::Seed;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    latency: Vec<Vec<Vec<f64>>>,
    memory: Vec<Vec<Vec<u64>>>,
    comm: Vec<Vec<f64>>,
    batches: Vec<u32>,
    capacity: u64,
}

impl Instance {
    fn profile(&self) -> ProfileTable {
        let s = self.latency[0].len();
        ProfileTable::new(
            (0..s).map(|i| StrategyId(format!("s{i}"))).collect(),
            self.batches.clone(),
            self.latency.clone(),
            self.memory.clone(),
            self.comm.clone(),
        )
        .unwrap()
    }
}

fn instance(max_layers: usize, max_strategies: usize) -> impl Strategy<Value = Instance> {
    (1..=max_layers, 1..=max_strategies, 1usize..=3, 1u64..=64).prop_flat_map(|(l, s, k, cap)| {
        (
            prop::collection::vec(prop::collection::vec(prop::collection::vec((0u32..50).prop_map(f64::from), k), s), l),
            prop::collection::vec(prop::collection::vec(prop::collection::vec(0u64..16, k), s), l),
            prop::collection::vec(prop::collection::vec((0u32..10).prop_map(f64::from), s), l),
        )
            .prop_map(move |(latency, memory, comm)| Instance {
                latency,
                memory,
                comm,
                batches: (0..k as u32).map(|i| 32 << i).collect(),
                capacity: cap,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn dp_equals_exhaustive(inst in instance(5, 6)) {
        let p = inst.profile();
        let (best, per_batch) =
            oracles::exhaustive_plans(&inst.latency, &inst.memory, &inst.comm, &inst.batches, inst.capacity);
        for (b, &batch) in inst.batches.iter().enumerate() {
            let plan = dp_bootstrap(&p, inst.capacity, batch).unwrap();
            prop_assert_eq!(plan.as_ref().map(|p| p.total_latency), per_batch[b]);
            if let Some(plan) = plan {
                prop_assert!(plan.memory_used <= inst.capacity);
                prop_assert_eq!(plan.recompute(&p, 1.0).unwrap(), (plan.total_latency, plan.memory_used));
            }
        }
        let report = dp_bootstrap_all_batches(&p, inst.capacity).unwrap();
        prop_assert_eq!(report.best.map(|p| (p.batch, p.total_latency)), best);
    }

    #[test]
    fn more_capacity_never_hurts(inst in instance(4, 5), extra in 1u64..32) {
        let p = inst.profile();
        for &batch in &inst.batches {
            let small = dp_bootstrap(&p, inst.capacity, batch).unwrap();
            let large = dp_bootstrap(&p, inst.capacity + extra, batch).unwrap();
            if let Some(small) = small {
                prop_assert!(large.unwrap().total_latency <= small.total_latency);
            }
        }
    }

    #[test]
    fn beam_output_is_sound(inst in instance(4, 4), seed in any::<u64>(), budget in 20.0f64..200.0, floor in 0.5f64..0.9) {
        let p = inst.profile();
        let space = HyperparamSpace {
            knobs: vec![KnobSpec { name: "width".into(), lower: 0.5, upper: 4.0, default: 1.0, integer: false }],
            flops: MonomialFlops { base: 1.0, exponents: [("width".to_owned(), 1.0)].into() },
        };
        let qm = QualityModel { baseline_quality: 0.8, reference_flops: 1.0, exponent: 0.003 };
        let cfg = SearchConfig {
            beam_width: 3,
            steps_per_phase: 6,
            latency_budget: budget,
            quality_floor: floor,
            memory_capacity: inst.capacity,
            seed: Seed(seed),
            scaling_exponent: 0.003,
            max_iterations: 6,
            score_mode: ScoreMode::QualityPerFlops,
            compute_scales_with_flops: true,
        };
        let out = beam_search(&p, &space, &qm, &cfg).unwrap();
        for r in &out.ranked {
            prop_assert!(r.score > 0.0);
            prop_assert!(r.plan.total_latency <= budget);
            prop_assert!(r.quality >= floor);
            prop_assert!(r.plan.memory_used <= inst.capacity);
            let scale = r.hyperparams.flops;
            prop_assert_eq!(r.plan.recompute(&p, scale).unwrap(), (r.plan.total_latency, r.plan.memory_used));
        }
        prop_assert!(out.ranked.windows(2).all(|w| w[0].score >= w[1].score));
        prop_assert!(out.phases.windows(2).all(|w| w[0].best_score <= w[1].best_score));
        prop_assert_eq!(out, beam_search(&p, &space, &qm, &cfg).unwrap());
    }
}

#[test]
fn scoring_flat_on_scaling_curve() {
    let qm = QualityModel { baseline_quality: 0.8, reference_flops: 1.0, exponent: 0.003 };
    let cfg = SearchConfig {
        beam_width: 1,
        steps_per_phase: 1,
        latency_budget: 1e12,
        quality_floor: 0.1,
        memory_capacity: 1,
        seed: Seed(0),
        scaling_exponent: 0.003,
        max_iterations: 1,
        score_mode: ScoreMode::QualityPerFlops,
        compute_scales_with_flops: false,
    };
    let plan = lattice_core::sketch::ExecutionPlan {
        batch: 1,
        per_layer: vec![],
        strategy_indices: vec![],
        total_latency: 1.0,
        memory_used: 0,
    };
    for k in 0..=10 {
        let hp = lattice_core::sketch::HyperparamPoint { knobs: Default::default(), flops: 2f64.powi(k) };
        let s = lattice_core::sketch::score(&plan, &hp, &qm, &cfg);
        assert!((s - 0.8).abs() <= 1e-9, "f=2^{k}: {s}");
    }
}
