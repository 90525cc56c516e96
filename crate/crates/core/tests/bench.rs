use transducer_core::bench::verify::{self, Scale, VerifyOptions};
use transducer_core::bench::{
    emit_report, parse_json_report, run_benchmark, sweep, synth_inputs, BenchConfig, Format,
    Status, SweepAxis, SweepValue,
};
use transducer_core::engine::Mode;
use transducer_core::{MemoryTracker, Precision};

fn spec_example_config(mode: Mode) -> BenchConfig {
    BenchConfig {
        mode,
        batch_size: 8,
        frames: 50,
        labels: 10,
        hidden: 64,
        acoustic: 64,
        label_dim: 64,
        vocab: 128,
        warmup_steps: 1,
        bench_steps: 3,
        worker_count: 2,
        ..BenchConfig::desk()
    }
}

#[test]
fn loss_checksum_agrees_across_modes() {
    let batched = run_benchmark(&spec_example_config(Mode::Batched)).unwrap();
    let reference = batched.loss_checksum.unwrap();
    for mode in [Mode::SampleWise, Mode::SampleWisePr, Mode::SampleWisePrDp] {
        let r = run_benchmark(&spec_example_config(mode)).unwrap();
        let l = r.loss_checksum.unwrap();
        assert!(
            (l - reference).abs() <= 1e-4 * reference.abs(),
            "{mode}: {l} vs {reference}"
        );
    }
}

#[test]
fn results_are_reproducible() {
    let cfg = spec_example_config(Mode::SampleWisePrDp);
    let a = run_benchmark(&cfg).unwrap();
    let b = run_benchmark(&cfg).unwrap();
    assert_eq!(
        a.loss_checksum.unwrap().to_bits(),
        b.loss_checksum.unwrap().to_bits()
    );
    assert_eq!(a.live_bytes_after, b.live_bytes_after);

    // Concurrent workers interleave allocations, so only the serial peak is stable.
    let serial = BenchConfig {
        mode: Mode::SampleWisePr,
        ..cfg.clone()
    };
    assert_eq!(
        run_benchmark(&serial).unwrap().peak_bytes,
        run_benchmark(&serial).unwrap().peak_bytes
    );

    let (tr1, tr2) = (MemoryTracker::new(), MemoryTracker::new());
    let (b1, j1, o1) = synth_inputs::<f32>(&cfg, &tr1).unwrap();
    let (b2, j2, o2) = synth_inputs::<f32>(&cfg, &tr2).unwrap();
    assert_eq!(b1.h_a, b2.h_a);
    assert_eq!(b1.h_l, b2.h_l);
    assert_eq!(j1.w_l, j2.w_l);
    assert_eq!(o1.b_o, o2.b_o);
}

#[test]
fn half_ceiling_fails_only_batched() {
    let mut cfg = spec_example_config(Mode::Batched);
    cfg.allocation_ceiling_bytes = Some(cfg.footprint().batched_4d_bytes / 2);
    let batched = run_benchmark(&cfg).unwrap();
    assert_eq!(batched.status, Status::Oom);
    assert!(batched.failed_alloc_bytes.is_some());
    assert!(batched.peak_bytes <= cfg.allocation_ceiling_bytes.unwrap());
    for mode in [Mode::SampleWise, Mode::SampleWisePr, Mode::SampleWisePrDp] {
        cfg.mode = mode;
        let r = run_benchmark(&cfg).unwrap();
        assert_eq!(r.status, Status::Ok, "{mode}");
    }
}

#[test]
fn sweep_records_echo_their_points() {
    let mut base = BenchConfig::tiny();
    base.mode = Mode::SampleWisePr;
    let values = SweepValue::parse_list(SweepAxis::Lengths, "4x2,8x3,12", &base).unwrap();
    let results = sweep(&base, &values).unwrap();
    let lengths: Vec<_> = results
        .iter()
        .map(|r| (r.config.frames, r.config.labels))
        .collect();
    assert_eq!(lengths, [(4, 2), (8, 3), (12, 6)]);
    for r in &results {
        assert_eq!(r.config.mode, base.mode);
        assert_eq!(r.config.seed, base.seed);
        assert_eq!(r.status, Status::Ok);
    }

    let csv = emit_report(&results, Format::Csv).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[2][2], "12");
    assert_eq!(&rows[2][3], "6");
}

#[test]
fn json_report_round_trips_f64_and_f32_runs() {
    let mut cfg = BenchConfig::tiny();
    cfg.bench_steps = 4;
    let mut results = vec![run_benchmark(&cfg).unwrap()];
    cfg.precision = Precision::F64;
    cfg.mode = Mode::SampleWisePrDp;
    cfg.allocation_ceiling_bytes = Some(u64::MAX);
    results.push(run_benchmark(&cfg).unwrap());
    let text = emit_report(&results, Format::Json).unwrap();
    assert_eq!(parse_json_report(&text).unwrap(), results);
    assert!(text.contains("\"B\": 2"));
    assert!(text.contains("\"mode\": \"sample_wise_pr_dp\""));
}

#[test]
fn verify_small_passes() {
    let report = verify::verify(Scale::Small);
    assert!(report.passed(), "{report}");
    assert_eq!(report.suites.len(), 4);
}

#[test]
fn verify_catches_a_perturbed_gradient() {
    fn perturbed(
        h: &transducer_core::Tensor<f64>,
        y: &transducer_core::loss::LabelSequence,
        frames: usize,
    ) -> transducer_core::Result<(f64, transducer_core::Tensor<f64>)> {
        let (l, mut dh) = transducer_core::loss::transducer_loss_masked(h, y, frames)?;
        dh.data_mut()[0] += 1e-3;
        Ok((l, dh))
    }
    let report = verify::verify_with(&VerifyOptions {
        loss_fn: perturbed,
        ..VerifyOptions::new(Scale::Small)
    });
    assert!(!report.passed());
    assert!(!report.suite("finite-difference").unwrap().passed());
    assert!(report.suite("loss-oracle").unwrap().passed());
}
