use transducer_core::bench::verify::{
    check_release, equivalence_configs, normwise_rel_diff, random_batch, step_rel_diff, BatchBounds,
};
use transducer_core::bench::{synth_inputs, BenchConfig};
use transducer_core::compute::{
    joint_backward, joint_forward, output_backward, output_forward, SampleEncodings,
};
use transducer_core::engine::{
    self, footprint, run_batched, run_sample_wise, Batch, EngineConfig, Mode, StepOutput,
};
use transducer_core::loss::{self, LabelSequence};
use transducer_core::{Element, MemoryTracker, Precision, Tensor};

fn assert_bitwise<E: Element>(a: &StepOutput<E>, b: &StepOutput<E>) {
    // Widening is exact, so equal bits before and after.
    assert_eq!(a.loss.widen().to_bits(), b.loss.widen().to_bits());
    assert_eq!(a.sample_losses, b.sample_losses);
    for ((name, x), (_, y)) in a.grads.tensors().iter().zip(b.grads.tensors().iter()) {
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn all_modes_match_batched_on_random_batches() {
    for seed in 100..130 {
        let tr = MemoryTracker::new();
        let (batch, jp, op) = random_batch::<f64>(&tr, seed, BatchBounds::EQUIVALENCE).unwrap();
        let reference = run_batched(&batch, &jp, &op).unwrap();
        for cfg in equivalence_configs() {
            let out = engine::run(&batch, &jp, &op, &cfg).unwrap();
            let rel = step_rel_diff(&out, &reference);
            assert!(rel <= 1e-10, "seed {seed} {}: {rel:e}", cfg.mode);
        }

        let (batch, jp, op) = random_batch::<f32>(&tr, seed, BatchBounds::EQUIVALENCE).unwrap();
        let reference = run_batched(&batch, &jp, &op).unwrap();
        for cfg in equivalence_configs() {
            let out = engine::run(&batch, &jp, &op, &cfg).unwrap();
            let rel = step_rel_diff(&out, &reference);
            assert!(rel <= 2e-4, "seed {seed} {} f32: {rel:e}", cfg.mode);
        }
    }
}

#[test]
fn padded_gradient_slots_are_zero() {
    let tr = MemoryTracker::new();
    let (batch, jp, op) = random_batch::<f64>(&tr, 7, BatchBounds::EQUIVALENCE).unwrap();
    for cfg in equivalence_configs() {
        let out = engine::run(&batch, &jp, &op, &cfg).unwrap();
        let (t, ha) = (batch.frames(), jp.acoustic_dim());
        let (u1, hl) = (batch.label_rows(), jp.label_dim());
        for b in 0..batch.batch_size() {
            let a = &out.grads.d_h_a.data()[b * t * ha..(b + 1) * t * ha];
            assert!(a[batch.t_len[b] * ha..].iter().all(|&x| x == 0.0));
            let l = &out.grads.d_h_l.data()[b * u1 * hl..(b + 1) * u1 * hl];
            assert!(l[(batch.u_len(b) + 1) * hl..].iter().all(|&x| x == 0.0));
        }
    }
}

#[test]
fn single_unpadded_sample_matches_chained_ops() {
    let tr = MemoryTracker::new();
    let mut cfg = BenchConfig::tiny();
    cfg.batch_size = 1;
    cfg.precision = Precision::F64;
    let (batch, jp, op) = synth_inputs::<f64>(&cfg, &tr).unwrap();
    let out = run_batched(&batch, &jp, &op).unwrap();

    let (t, u1) = (batch.frames(), batch.label_rows());
    let enc =
        SampleEncodings::new(batch.h_a.select(0).unwrap(), batch.h_l.select(0).unwrap()).unwrap();
    let z = joint_forward(&enc, &jp).unwrap();
    let h = output_forward(&z, &op)
        .unwrap()
        .reshape(&[t, u1, op.vocab()])
        .unwrap();
    let (l, dh) = loss::transducer_loss_sample(&h, &batch.labels[0]).unwrap();
    let og = output_backward(&dh, &z, &op).unwrap();
    let jg = joint_backward(og.dz, &z, &enc, &jp).unwrap();

    assert!((out.loss - l).abs() <= 1e-12 * l.abs());
    assert!(normwise_rel_diff(&out.grads.d_w_o, &og.d_w_o) <= 1e-12);
    assert!(normwise_rel_diff(&out.grads.d_b_o, &og.d_b_o) <= 1e-12);
    assert!(normwise_rel_diff(&out.grads.d_w_a, &jg.d_w_a) <= 1e-12);
    assert!(normwise_rel_diff(&out.grads.d_w_l, &jg.d_w_l) <= 1e-12);
    assert!(normwise_rel_diff(&out.grads.d_b_z, &jg.d_b_z) <= 1e-12);
    let d_h_a = out.grads.d_h_a.select(0).unwrap();
    assert!(normwise_rel_diff(&d_h_a, &jg.d_h_a) <= 1e-12);
}

fn duplicate<E: Element>(batch: &Batch<E>, times: usize) -> Batch<E> {
    let tr = batch.tracker();
    let rep = |t: &Tensor<E>| {
        let mut shape = t.shape().to_vec();
        shape[0] *= times;
        let data: Vec<E> = (0..times).flat_map(|_| t.data().iter().copied()).collect();
        Tensor::from_vec(tr, &shape, data).unwrap()
    };
    let labels: Vec<LabelSequence> = (0..times).flat_map(|_| batch.labels.clone()).collect();
    let t_len = (0..times).flat_map(|_| batch.t_len.clone()).collect();
    Batch::new(rep(&batch.h_a), rep(&batch.h_l), labels, t_len).unwrap()
}

#[test]
fn duplicated_sample_doubles_loss_and_gradients() {
    let tr = MemoryTracker::new();
    let mut cfg = BenchConfig::tiny();
    cfg.batch_size = 1;
    let (single, jp, op) = synth_inputs::<f64>(&cfg, &tr).unwrap();
    let double = duplicate(&single, 2);
    let one = run_batched(&single, &jp, &op).unwrap();
    for mode in Mode::ALL {
        let two = engine::run(&double, &jp, &op, &EngineConfig::new(mode).with_workers(2)).unwrap();
        assert!(
            (two.loss - 2.0 * one.loss).abs() <= 1e-12 * one.loss.abs(),
            "{mode}"
        );
        for ((name, a), (_, b)) in two
            .grads
            .tensors()
            .iter()
            .zip(one.grads.tensors().iter())
            .take(5)
        {
            let mut doubled = b.try_clone().unwrap();
            doubled.scale(2.0);
            assert!(normwise_rel_diff(*a, &doubled) <= 1e-12, "{mode} {name}");
        }
    }
}

#[test]
fn batch_equals_sum_of_independent_samples() {
    let tr = MemoryTracker::new();
    let mut cfg = BenchConfig::tiny();
    cfg.batch_size = 3;
    let (batch, jp, op) = synth_inputs::<f64>(&cfg, &tr).unwrap();
    let full = run_batched(&batch, &jp, &op).unwrap();

    let mut loss = 0.0;
    let mut d_w_o = Tensor::<f64>::zeros(&tr, op.w_o.shape()).unwrap();
    for b in 0..3 {
        let (t, u1) = (batch.t_len[b], batch.u_len(b) + 1);
        let one = Batch::new(
            batch
                .h_a
                .select_crop(b, &[t, jp.acoustic_dim()])
                .unwrap()
                .reshape(&[1, t, jp.acoustic_dim()])
                .unwrap(),
            batch
                .h_l
                .select_crop(b, &[u1, jp.label_dim()])
                .unwrap()
                .reshape(&[1, u1, jp.label_dim()])
                .unwrap(),
            vec![batch.labels[b].clone()],
            vec![t],
        )
        .unwrap();
        let out = run_batched(&one, &jp, &op).unwrap();
        loss += out.loss;
        d_w_o.add_assign(&out.grads.d_w_o).unwrap();
    }
    assert!((full.loss - loss).abs() <= 1e-10 * loss.abs());
    assert!(normwise_rel_diff(&full.grads.d_w_o, &d_w_o) <= 1e-10);
}

#[test]
fn ordered_reduction_is_bitwise_stable() {
    let tr = MemoryTracker::new();
    let mut cfg = BenchConfig::tiny();
    cfg.batch_size = 4;
    let (batch, jp, op) = synth_inputs::<f64>(&cfg, &tr).unwrap();
    let serial = run_sample_wise(
        &batch,
        &jp,
        &op,
        &EngineConfig::new(Mode::SampleWisePr).with_workers(1),
    )
    .unwrap();
    for workers in [2, 3, 4, 8] {
        let dp = run_sample_wise(
            &batch,
            &jp,
            &op,
            &EngineConfig::new(Mode::SampleWisePrDp).with_workers(workers),
        )
        .unwrap();
        assert!(dp.parallel_iterations > 1);
        assert_bitwise(&dp, &serial);
    }
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    for precision in [Precision::F32, Precision::F64] {
        let mut cfg = BenchConfig::tiny();
        cfg.batch_size = 5;
        cfg.precision = precision;
        for mode in Mode::ALL {
            let ecfg = EngineConfig::new(mode).with_workers(4);
            match precision {
                Precision::F32 => {
                    let (tr1, tr2) = (MemoryTracker::new(), MemoryTracker::new());
                    let (b1, j1, o1) = synth_inputs::<f32>(&cfg, &tr1).unwrap();
                    let (b2, j2, o2) = synth_inputs::<f32>(&cfg, &tr2).unwrap();
                    assert_bitwise(
                        &engine::run(&b1, &j1, &o1, &ecfg).unwrap(),
                        &engine::run(&b2, &j2, &o2, &ecfg).unwrap(),
                    );
                }
                Precision::F64 => {
                    let (tr1, tr2) = (MemoryTracker::new(), MemoryTracker::new());
                    let (b1, j1, o1) = synth_inputs::<f64>(&cfg, &tr1).unwrap();
                    let (b2, j2, o2) = synth_inputs::<f64>(&cfg, &tr2).unwrap();
                    assert_bitwise(
                        &engine::run(&b1, &j1, &o1, &ecfg).unwrap(),
                        &engine::run(&b2, &j2, &o2, &ecfg).unwrap(),
                    );
                }
            }
        }
    }
}

#[test]
fn no_intermediates_survive_a_step() {
    for seed in 0..10 {
        let tr = MemoryTracker::new();
        let (batch, jp, op) = random_batch::<f32>(&tr, seed, BatchBounds::EQUIVALENCE).unwrap();
        for cfg in equivalence_configs() {
            check_release(&batch, &jp, &op, &cfg).unwrap();
        }
    }
}

fn peak_of(cfg: &BenchConfig, ecfg: &EngineConfig) -> (u64, usize) {
    let tr = MemoryTracker::new();
    let (batch, jp, op) = synth_inputs::<f32>(cfg, &tr).unwrap();
    tr.reset_peak();
    let out = engine::run(&batch, &jp, &op, ecfg).unwrap();
    (tr.peak_bytes(), out.parallel_iterations)
}

#[test]
fn peak_ordering_and_dp_bound() {
    let mut cfg = BenchConfig::desk();
    cfg.batch_size = 8;
    let mode_peak = |m: Mode| peak_of(&cfg, &EngineConfig::new(m).with_workers(4));
    let (batched, _) = mode_peak(Mode::Batched);
    let (sw, _) = mode_peak(Mode::SampleWise);
    let (pr, _) = mode_peak(Mode::SampleWisePr);
    let (dp, pi) = mode_peak(Mode::SampleWisePrDp);
    assert!(
        pr <= sw && sw <= batched,
        "pr {pr} sw {sw} batched {batched}"
    );

    let dims = cfg.model_dims();
    let ws = footprint::sample_working_set_bytes(cfg.frames, cfg.labels + 1, &dims, Precision::F32);
    let bound = pr as f64 + (pi - 1) as f64 * ws as f64 * 1.1;
    assert!(pi == 4, "workers cap the desk preset at 4, got {pi}");
    assert!(dp as f64 <= bound, "dp {dp} > {bound}");
}

#[test]
fn sample_wise_at_one_sample_matches_batched_peak() {
    let mut cfg = BenchConfig::desk();
    cfg.batch_size = 1;
    let (batched, _) = peak_of(&cfg, &EngineConfig::new(Mode::Batched));
    let (sw, _) = peak_of(&cfg, &EngineConfig::new(Mode::SampleWise));
    // The extra is one zeroed gradient set plus the per-sample input copies.
    let overhead = footprint::param_bytes(&cfg.model_dims(), Precision::F32)
        + 2 * footprint::sample_3d_bytes(
            cfg.frames,
            cfg.labels + 1,
            &cfg.model_dims(),
            Precision::F32,
        );
    assert!(sw <= batched + overhead, "sw {sw} batched {batched}");
    assert!(batched <= sw + overhead, "sw {sw} batched {batched}");
}

#[test]
fn out_of_memory_names_the_tensor() {
    let mut cfg = BenchConfig::tiny();
    cfg.batch_size = 4;
    let tr = MemoryTracker::new();
    let (batch, jp, op) = synth_inputs::<f32>(&cfg, &tr).unwrap();
    tr.set_ceiling(Some(tr.live_bytes() + 64));
    let err = run_batched(&batch, &jp, &op).err().unwrap();
    assert!(err.is_out_of_memory());
    assert!(err.to_string().contains("proj_a"), "{err}");
    tr.set_ceiling(None);
    assert_eq!(tr.live_bytes(), batch.bytes() + jp.bytes() + op.bytes());
}

#[test]
fn inconsistent_inputs_are_rejected() {
    let tr = MemoryTracker::new();
    let h_a = Tensor::<f64>::zeros(&tr, &[2, 3, 2]).unwrap();
    let h_l = Tensor::<f64>::zeros(&tr, &[2, 2, 2]).unwrap();
    let y = || LabelSequence::new(vec![1], 3).unwrap();
    assert!(Batch::new(
        h_a.try_clone().unwrap(),
        h_l.try_clone().unwrap(),
        vec![y()],
        vec![3, 3]
    )
    .is_err());
    assert!(Batch::new(
        h_a.try_clone().unwrap(),
        h_l.try_clone().unwrap(),
        vec![y(), y()],
        vec![4, 3]
    )
    .is_err());
    assert!(Batch::new(
        h_a.try_clone().unwrap(),
        h_l.try_clone().unwrap(),
        vec![y(), y()],
        vec![0, 3]
    )
    .is_err());
    let mut dirty = h_a.try_clone().unwrap();
    dirty.set(&[1, 2, 0], 1.0).unwrap();
    assert!(Batch::new(dirty, h_l.try_clone().unwrap(), vec![y(), y()], vec![3, 2]).is_err());
    Batch::new(h_a, h_l, vec![y(), y()], vec![3, 2]).unwrap();
}
