use proptest::prelude::*;

use transducer_core::bench::verify::{random_batch, step_rel_diff, BatchBounds};
use transducer_core::bench::{
    emit_report, parse_json_report, BenchConfig, BenchResult, Format, Status,
};
use transducer_core::engine::{self, run_batched, EngineConfig, Mode};
use transducer_core::loss::{self, LabelSequence};
use transducer_core::tensor::logsumexp_last;
use transducer_core::{MemoryTracker, Precision, Tensor};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tracker_balances_any_allocation_sequence(
        shapes in prop::collection::vec(prop::collection::vec(1usize..6, 1..4), 1..12),
        keep in prop::collection::vec(any::<bool>(), 12),
    ) {
        let tr = MemoryTracker::new();
        let mut kept = Vec::new();
        let mut expected = 0u64;
        for (i, shape) in shapes.iter().enumerate() {
            let t = Tensor::<f32>::zeros(&tr, shape).unwrap();
            if keep[i] {
                expected += t.bytes();
                kept.push(t);
            }
        }
        prop_assert_eq!(tr.live_bytes(), expected);
        drop(kept);
        prop_assert_eq!(tr.live_bytes(), 0);
    }

    #[test]
    fn logsumexp_shifts_with_its_input(
        values in prop::collection::vec(-50.0f64..50.0, 1..16),
        c in -100.0f64..100.0,
    ) {
        let tr = MemoryTracker::new();
        let n = values.len();
        let x = Tensor::from_vec(&tr, &[n], values.clone()).unwrap();
        let shifted = Tensor::from_vec(&tr, &[n], values.iter().map(|v| v + c).collect()).unwrap();
        let a = logsumexp_last(&x).unwrap().data()[0];
        let b = logsumexp_last(&shifted).unwrap().data()[0];
        prop_assert!((b - a - c).abs() <= 1e-12 * (1.0 + b.abs()));
    }

    #[test]
    fn loss_ignores_per_node_score_shifts(
        seed in any::<u64>(),
        c in -20.0f64..20.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (t, u, v) = (rng.gen_range(1..6), rng.gen_range(0..4), rng.gen_range(2..6));
        let tr = MemoryTracker::new();
        let h = Tensor::from_fn(&tr, &[t, u + 1, v], |_| rng.gen_range(-2.0..2.0)).unwrap();
        let y = LabelSequence::new((0..u).map(|_| rng.gen_range(1..v)).collect(), v).unwrap();
        let mut shifted = h.try_clone().unwrap();
        shifted.data_mut().iter_mut().for_each(|x| *x += c);
        let (a, _) = loss::transducer_loss_sample(&h, &y).unwrap();
        let (b, _) = loss::transducer_loss_sample(&shifted, &y).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn engines_agree_on_random_batches(seed in any::<u64>()) {
        let tr = MemoryTracker::new();
        let (batch, jp, op) = random_batch::<f64>(&tr, seed, BatchBounds::EQUIVALENCE).unwrap();
        let reference = run_batched(&batch, &jp, &op).unwrap();
        for mode in [Mode::SampleWise, Mode::SampleWisePr, Mode::SampleWisePrDp] {
            let out = engine::run(&batch, &jp, &op, &EngineConfig::new(mode).with_workers(3)).unwrap();
            prop_assert!(step_rel_diff(&out, &reference) <= 1e-10);
        }
    }

    #[test]
    fn json_reports_round_trip(
        steps in prop::collection::vec(1e-9f64..10.0, 0..6),
        peak in any::<u64>(),
        seed in any::<u64>(),
        checksum in prop::option::of(-1e6f64..1e6),
        f64_precision in any::<bool>(),
    ) {
        let mut config = BenchConfig::tiny();
        config.seed = seed;
        config.precision = if f64_precision { Precision::F64 } else { Precision::F32 };
        let result = BenchResult {
            config,
            median_step_seconds: transducer_core::bench::median(&steps),
            per_step_seconds: steps.clone(),
            peak_bytes: peak,
            live_bytes_after: peak / 2,
            status: if steps.is_empty() { Status::Oom } else { Status::Ok },
            failed_alloc_bytes: steps.is_empty().then_some(peak / 3),
            loss_checksum: checksum,
            parallel_iterations: 1,
        };
        let text = emit_report(std::slice::from_ref(&result), Format::Json).unwrap();
        prop_assert_eq!(parse_json_report(&text).unwrap(), vec![result]);
    }
}
