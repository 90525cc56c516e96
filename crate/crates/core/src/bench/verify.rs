//! Invariant battery behind the `verify` command.
//!
//! Every case draws from its own seeded generator, so a failure message
//! carries the case seed and dimensions and the case can be replayed alone.

// Tolerance checks are written `!(x <= tol)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{synth_inputs, BenchConfig};
use crate::compute::{
    joint_backward, joint_forward, output_backward, output_forward, JointParams, OutputParams,
    SampleEncodings,
};
use crate::engine::{self, Batch, EngineConfig, Mode, StepOutput};
use crate::error::{Error, Result};
use crate::loss::{self, LabelSequence};
use crate::oracle;
use crate::tensor::{Element, MemoryTracker, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Small,
    Medium,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Scale::Small),
            "medium" => Ok(Scale::Medium),
            other => Err(Error::InvalidInput(format!("unknown scale `{other}`"))),
        }
    }
}

/// Loss and `∂L/∂h` for padded scores `[T, U+1, V]` with `frames` valid frames.
pub type LossFn = fn(&Tensor<f64>, &LabelSequence, usize) -> Result<(f64, Tensor<f64>)>;

pub struct VerifyOptions {
    pub scale: Scale,
    pub seed: u64,
    /// Loss under test; replaced by a perturbed version in mutation checks.
    pub loss_fn: LossFn,
}

impl VerifyOptions {
    pub fn new(scale: Scale) -> Self {
        Self {
            scale,
            seed: 0x5eed,
            loss_fn: loss::transducer_loss_masked::<f64>,
        }
    }

    fn count(&self, small: usize, medium: usize) -> usize {
        match self.scale {
            Scale::Small => small,
            Scale::Medium => medium,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub seconds: f64,
    /// Reproduction details of the first failing case.
    pub failure: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }

    pub fn suite(&self, name: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let verdict = if s.passed() { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{verdict} {:<20} {:>5} cases {:>8.2}s",
                s.name, s.cases, s.seconds
            )?;
        }
        if let Some(s) = self.suites.iter().find(|s| !s.passed()) {
            writeln!(f, "first failure in {}:", s.name)?;
            writeln!(f, "{}", s.failure.as_deref().unwrap_or_default())?;
        }
        Ok(())
    }
}

pub fn verify(scale: Scale) -> VerifyReport {
    verify_with(&VerifyOptions::new(scale))
}

pub fn verify_with(opts: &VerifyOptions) -> VerifyReport {
    let mut suites = vec![
        run_suite("loss-oracle", || loss_oracle_suite(opts)),
        run_suite("finite-difference", || finite_difference_suite(opts)),
        run_suite("engine-equivalence", || engine_equivalence_suite(opts)),
        run_suite("memory-release", || memory_release_suite(opts)),
    ];
    if opts.scale == Scale::Medium {
        suites.push(run_suite("memory-scaling", memory_scaling_suite));
    }
    VerifyReport { suites }
}

/// A suite body returns its case count or a failure description.
type SuiteOutcome = std::result::Result<usize, String>;

fn run_suite(name: &'static str, body: impl FnOnce() -> SuiteOutcome) -> SuiteReport {
    let start = Instant::now();
    let (cases, failure) = match body() {
        Ok(n) => (n, None),
        Err(msg) => (0, Some(msg)),
    };
    SuiteReport {
        name,
        cases,
        seconds: start.elapsed().as_secs_f64(),
        failure,
    }
}

fn case_seed(base: u64, suite: u64, case: usize) -> u64 {
    base ^ (suite << 48) ^ case as u64
}

fn err(case: impl fmt::Display) -> impl Fn(Error) -> String {
    let case = case.to_string();
    move |e| format!("{case}\nerror: {e}")
}

/// `max|a − b| / max|b|`, the normwise relative difference of `a` from the
/// reference `b`.
pub fn normwise_rel_diff<E: Element, F: Element>(a: &Tensor<E>, b: &Tensor<F>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "compared tensors differ in shape");
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.widen() - y.widen()).abs())
        .fold(0.0, f64::max);
    let scale = b.data().iter().map(|y| y.widen().abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

pub fn scalar_rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// A single-sample loss instance with scores padded beyond its lattice.
#[derive(Debug)]
pub struct LossCase {
    pub seed: u64,
    pub scores: Tensor<f64>,
    pub labels: LabelSequence,
    pub frames: usize,
}

impl fmt::Display for LossCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "case seed {:#x}: scores {:?}, T_b={}, labels {:?}",
            self.seed,
            self.scores.shape(),
            self.frames,
            self.labels.labels()
        )?;
        write!(f, "scores = {:?}", self.scores.data())
    }
}

/// Random scores in `[-3, 3]` with `T_b ≤ max_t`, `U_b ≤ max_u`,
/// `2 ≤ V ≤ max_v` and up to `pad` extra frames and label rows.
pub fn random_loss_case(
    tracker: &MemoryTracker,
    seed: u64,
    max_t: usize,
    max_u: usize,
    max_v: usize,
    pad: usize,
) -> Result<LossCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.gen_range(1..=max_t);
    let u = rng.gen_range(0..=max_u);
    let vocab = rng.gen_range(2..=max_v);
    let t_ext = frames + rng.gen_range(0..=pad);
    let u_ext = u + 1 + rng.gen_range(0..=pad);
    let scores = Tensor::from_fn(tracker, &[t_ext, u_ext, vocab], |_| {
        rng.gen_range(-3.0..3.0)
    })?;
    let labels = LabelSequence::new((0..u).map(|_| rng.gen_range(1..vocab)).collect(), vocab)?;
    Ok(LossCase {
        seed,
        scores,
        labels,
        frames,
    })
}

fn loss_oracle_suite(opts: &VerifyOptions) -> SuiteOutcome {
    const TOL: f64 = 1e-9;
    let tracker = MemoryTracker::new();
    let n = opts.count(200, 1000);
    for i in 0..n {
        let seed = case_seed(opts.seed, 1, i);
        let case = random_loss_case(&tracker, seed, 5, 3, 4, 2).map_err(err(seed))?;
        let (fast, _) =
            (opts.loss_fn)(&case.scores, &case.labels, case.frames).map_err(err(&case))?;
        let v = case.scores.shape()[2];
        let cropped = crate::tensor::crop(&case.scores, &[case.frames, case.labels.len() + 1, v])
            .map_err(err(&case))?;
        let log_den = loss::log_denominator(&cropped).map_err(err(&case))?;
        let exact =
            oracle::enumerate_paths_loss(&cropped, &log_den, &case.labels).map_err(err(&case))?;
        let rel = scalar_rel_diff(fast, exact);
        if !(rel <= TOL) {
            return Err(format!(
                "{case}\nloss {fast} vs enumeration {exact} (rel {rel:e} > {TOL:e})"
            ));
        }
    }
    for &(t, u, v) in &[(1, 0, 2), (2, 1, 2), (5, 3, 4), (10, 4, 8)] {
        let scores = loss::uniform_scores::<f64>(&tracker, t, u, v).map_err(err("uniform"))?;
        let y = LabelSequence::new(vec![1; u], v).map_err(err("uniform"))?;
        let (got, _) = (opts.loss_fn)(&scores, &y, t).map_err(err("uniform"))?;
        let want = loss::uniform_logit_loss(t, u, v);
        if !(scalar_rel_diff(got, want) <= TOL) {
            return Err(format!(
                "uniform scores T={t} U={u} V={v}: loss {got}, closed form {want}"
            ));
        }
    }
    Ok(n + 4)
}

/// A single-sample chain `h_A, h_L → z → h → L` with random parameters.
pub struct ChainCase {
    pub seed: u64,
    pub enc: SampleEncodings<f64>,
    pub jp: JointParams<f64>,
    pub op: OutputParams<f64>,
    pub labels: LabelSequence,
}

impl fmt::Display for ChainCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "case seed {:#x}: T_b={}, labels {:?}, H={}, H_A={}, H_L={}, V={}",
            self.seed,
            self.enc.frames(),
            self.labels.labels(),
            self.jp.hidden(),
            self.jp.acoustic_dim(),
            self.jp.label_dim(),
            self.op.vocab()
        )?;
        writeln!(f, "h_A = {:?}", self.enc.h_a.data())?;
        writeln!(f, "h_L = {:?}", self.enc.h_l.data())?;
        writeln!(f, "W_A = {:?}", self.jp.w_a.data())?;
        writeln!(f, "W_L = {:?}", self.jp.w_l.data())?;
        writeln!(f, "b_Z = {:?}", self.jp.b_z.data())?;
        writeln!(f, "W_O = {:?}", self.op.w_o.data())?;
        write!(f, "b_O = {:?}", self.op.b_o.data())
    }
}

/// `T_b ≤ 3, U_b ≤ 2, H ≤ 4, V ≤ 4, H_A = H_L ≤ 3`, values in `[-1, 1]`.
pub fn random_chain_case(tracker: &MemoryTracker, seed: u64) -> Result<ChainCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.gen_range(1..=3);
    let u = rng.gen_range(0..=2);
    let hidden = rng.gen_range(1..=4);
    let vocab = rng.gen_range(2..=4);
    let enc_dim = rng.gen_range(1..=3);
    let mut r = |shape: &[usize]| Tensor::from_fn(tracker, shape, |_| rng.gen_range(-1.0..1.0));
    let enc = SampleEncodings::new(r(&[t, enc_dim])?, r(&[u + 1, enc_dim])?)?;
    let jp = JointParams::new(
        r(&[hidden, enc_dim])?,
        r(&[hidden, enc_dim])?,
        r(&[hidden])?,
    )?;
    let op = OutputParams::new(r(&[vocab, hidden])?, r(&[vocab])?)?;
    let labels = LabelSequence::new((0..u).map(|_| rng.gen_range(1..vocab)).collect(), vocab)?;
    Ok(ChainCase {
        seed,
        enc,
        jp,
        op,
        labels,
    })
}

fn chain_loss(
    loss_fn: LossFn,
    enc: &SampleEncodings<f64>,
    jp: &JointParams<f64>,
    op: &OutputParams<f64>,
    y: &LabelSequence,
) -> Result<f64> {
    let z = joint_forward(enc, jp)?;
    let h = output_forward(&z, op)?.reshape(&[enc.frames(), enc.label_rows(), op.vocab()])?;
    Ok((loss_fn)(&h, y, enc.frames())?.0)
}

/// Which tensor of a chain case a finite-difference probe perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Probe {
    HA,
    HL,
    WA,
    WL,
    BZ,
    WO,
    BO,
}

fn probe_loss(case: &ChainCase, loss_fn: LossFn, probe: Probe, x: &Tensor<f64>) -> Result<f64> {
    let c = |t: &Tensor<f64>| t.try_clone();
    let pick = |p: Probe, t: &Tensor<f64>| if p == probe { x.try_clone() } else { c(t) };
    let enc = SampleEncodings::new(
        pick(Probe::HA, &case.enc.h_a)?,
        pick(Probe::HL, &case.enc.h_l)?,
    )?;
    let jp = JointParams::new(
        pick(Probe::WA, &case.jp.w_a)?,
        pick(Probe::WL, &case.jp.w_l)?,
        pick(Probe::BZ, &case.jp.b_z)?,
    )?;
    let op = OutputParams::new(
        pick(Probe::WO, &case.op.w_o)?,
        pick(Probe::BO, &case.op.b_o)?,
    )?;
    chain_loss(loss_fn, &enc, &jp, &op, &case.labels)
}

/// Checks `∂L/∂h`, the output-layer backward and the joint backward of one
/// chain case against central differences.
pub fn check_chain_gradients(case: &ChainCase, loss_fn: LossFn) -> std::result::Result<(), String> {
    let fail = |what: &str, m: oracle::GradientMismatch| {
        format!(
            "{case}\n{what}: element {} analytic {} vs numeric {}",
            m.index, m.analytic, m.numeric
        )
    };
    let (t, u1, v) = (case.enc.frames(), case.enc.label_rows(), case.op.vocab());

    let z = joint_forward(&case.enc, &case.jp).map_err(err(case))?;
    let h = output_forward(&z, &case.op)
        .and_then(|h| h.reshape(&[t, u1, v]))
        .map_err(err(case))?;
    let (_, dh) = (loss_fn)(&h, &case.labels, t).map_err(err(case))?;

    let num_dh = oracle::finite_diff(
        |x| {
            (loss_fn)(x, &case.labels, t)
                .map(|r| r.0)
                .unwrap_or(f64::NAN)
        },
        &h,
        oracle::DEFAULT_EPS,
    )
    .map_err(err(case))?;
    oracle::check_gradient(&dh, &num_dh).map_err(|m| fail("dL/dh", m))?;

    let og = output_backward(&dh, &z, &case.op).map_err(err(case))?;
    let jg = joint_backward(
        og.dz.try_clone().map_err(err(case))?,
        &z,
        &case.enc,
        &case.jp,
    )
    .map_err(err(case))?;

    let checks: [(&str, Probe, &Tensor<f64>, &Tensor<f64>); 7] = [
        ("dW_O", Probe::WO, &og.d_w_o, &case.op.w_o),
        ("db_O", Probe::BO, &og.d_b_o, &case.op.b_o),
        ("dW_A", Probe::WA, &jg.d_w_a, &case.jp.w_a),
        ("dW_L", Probe::WL, &jg.d_w_l, &case.jp.w_l),
        ("db_Z", Probe::BZ, &jg.d_b_z, &case.jp.b_z),
        ("dh_A", Probe::HA, &jg.d_h_a, &case.enc.h_a),
        ("dh_L", Probe::HL, &jg.d_h_l, &case.enc.h_l),
    ];
    for (name, probe, analytic, at) in checks {
        let numeric = oracle::finite_diff(
            |x| probe_loss(case, loss_fn, probe, x).unwrap_or(f64::NAN),
            at,
            oracle::DEFAULT_EPS,
        )
        .map_err(err(case))?;
        oracle::check_gradient(analytic, &numeric).map_err(|m| fail(name, m))?;
    }

    // dz against differences of L with respect to z through the output layer.
    let num_dz = oracle::finite_diff(
        |x| {
            output_forward(x, &case.op)
                .and_then(|h| h.reshape(&[t, u1, v]))
                .and_then(|h| (loss_fn)(&h, &case.labels, t))
                .map(|r| r.0)
                .unwrap_or(f64::NAN)
        },
        &z,
        oracle::DEFAULT_EPS,
    )
    .map_err(err(case))?;
    oracle::check_gradient(&og.dz, &num_dz).map_err(|m| fail("dz", m))
}

fn finite_difference_suite(opts: &VerifyOptions) -> SuiteOutcome {
    let tracker = MemoryTracker::new();
    let n = opts.count(50, 200);
    for i in 0..n {
        let seed = case_seed(opts.seed, 2, i);
        let case = random_chain_case(&tracker, seed).map_err(err(seed))?;
        check_chain_gradients(&case, opts.loss_fn)?;
    }
    Ok(n)
}

/// Bounds for [`random_batch`].
#[derive(Debug, Clone, Copy)]
pub struct BatchBounds {
    pub batch: usize,
    pub frames: usize,
    pub labels: usize,
    pub hidden: usize,
    pub vocab: usize,
}

impl BatchBounds {
    pub const EQUIVALENCE: BatchBounds = BatchBounds {
        batch: 8,
        frames: 12,
        labels: 5,
        hidden: 8,
        vocab: 6,
    };
}

/// Ragged random batch with values in `[-1, 1]`, drawn in `f64` and cast.
pub fn random_batch<E: Element>(
    tracker: &MemoryTracker,
    seed: u64,
    bounds: BatchBounds,
) -> Result<(Batch<E>, JointParams<E>, OutputParams<E>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bsz = rng.gen_range(1..=bounds.batch);
    let t = rng.gen_range(1..=bounds.frames);
    let u = rng.gen_range(0..=bounds.labels);
    let hidden = rng.gen_range(1..=bounds.hidden);
    let vocab = rng.gen_range(2..=bounds.vocab);
    let ha_dim = rng.gen_range(1..=bounds.hidden);
    let hl_dim = rng.gen_range(1..=bounds.hidden);
    let r = |shape: &[usize], rng: &mut ChaCha8Rng| {
        Tensor::from_fn(tracker, shape, |_| E::cast(rng.gen_range(-1.0..1.0)))
    };
    let jp = JointParams::new(
        r(&[hidden, ha_dim], &mut rng)?,
        r(&[hidden, hl_dim], &mut rng)?,
        r(&[hidden], &mut rng)?,
    )?;
    let op = OutputParams::new(r(&[vocab, hidden], &mut rng)?, r(&[vocab], &mut rng)?)?;

    let mut h_a = r(&[bsz, t, ha_dim], &mut rng)?;
    let mut h_l = r(&[bsz, u + 1, hl_dim], &mut rng)?;
    let mut labels = Vec::with_capacity(bsz);
    let mut t_len = Vec::with_capacity(bsz);
    for b in 0..bsz {
        let tb = rng.gen_range(1..=t);
        let ub = rng.gen_range(0..=u);
        h_a.data_mut()[(b * t + tb) * ha_dim..(b + 1) * t * ha_dim].fill(E::zero());
        h_l.data_mut()[(b * (u + 1) + ub + 1) * hl_dim..(b + 1) * (u + 1) * hl_dim].fill(E::zero());
        labels.push(LabelSequence::new(
            (0..ub).map(|_| rng.gen_range(1..vocab)).collect(),
            vocab,
        )?);
        t_len.push(tb);
    }
    Ok((Batch::new(h_a, h_l, labels, t_len)?, jp, op))
}

fn describe_batch<E: Element>(
    seed: u64,
    batch: &Batch<E>,
    jp: &JointParams<E>,
    op: &OutputParams<E>,
) -> String {
    format!(
        "batch seed {seed:#x} ({}): B={}, T={}, U={}, H={}, H_A={}, H_L={}, V={}, T_b={:?}, labels={:?}",
        E::PRECISION,
        batch.batch_size(),
        batch.frames(),
        batch.label_rows() - 1,
        jp.hidden(),
        jp.acoustic_dim(),
        jp.label_dim(),
        op.vocab(),
        batch.t_len,
        batch.labels.iter().map(|y| y.labels().to_vec()).collect::<Vec<_>>()
    )
}

/// Largest normwise relative difference between two step outputs over the
/// loss, every per-sample loss and every gradient tensor.
pub fn step_rel_diff<E: Element>(a: &StepOutput<E>, reference: &StepOutput<E>) -> f64 {
    let mut worst = scalar_rel_diff(a.loss.widen(), reference.loss.widen());
    for (x, y) in a.sample_losses.iter().zip(&reference.sample_losses) {
        worst = worst.max(scalar_rel_diff(x.widen(), y.widen()));
    }
    for ((_, x), (_, y)) in a
        .grads
        .tensors()
        .iter()
        .zip(reference.grads.tensors().iter())
    {
        worst = worst.max(normwise_rel_diff(*x, *y));
    }
    worst
}

/// Engine configurations covering every mode, including several worker
/// counts for dynamic parallelism.
pub fn equivalence_configs() -> Vec<EngineConfig> {
    let mut cfgs: Vec<_> = Mode::ALL
        .iter()
        .map(|&m| EngineConfig::new(m).with_workers(1))
        .collect();
    for workers in [2, 4] {
        cfgs.push(EngineConfig::new(Mode::SampleWisePrDp).with_workers(workers));
    }
    cfgs
}

fn check_equivalence<E: Element>(seed: u64, tol: f64) -> std::result::Result<(), String> {
    let tracker = MemoryTracker::new();
    let (batch, jp, op) =
        random_batch::<E>(&tracker, seed, BatchBounds::EQUIVALENCE).map_err(err(seed))?;
    let what = describe_batch(seed, &batch, &jp, &op);
    let reference = engine::run_batched(&batch, &jp, &op).map_err(err(&what))?;
    for cfg in equivalence_configs() {
        let out = engine::run(&batch, &jp, &op, &cfg).map_err(err(&what))?;
        let rel = step_rel_diff(&out, &reference);
        if !(rel <= tol) {
            return Err(format!(
                "{what}\nmode {} (workers {}) differs from batched by {rel:e} > {tol:e}",
                cfg.mode, cfg.worker_count
            ));
        }
    }
    Ok(())
}

fn engine_equivalence_suite(opts: &VerifyOptions) -> SuiteOutcome {
    let n = opts.count(20, 50);
    for i in 0..n {
        let seed = case_seed(opts.seed, 3, i);
        check_equivalence::<f64>(seed, 1e-10)?;
        check_equivalence::<f32>(seed, 2e-4)?;
    }
    Ok(2 * n)
}

/// Runs `cfg` and checks that only inputs and declared outputs stay live,
/// and only inputs once the outputs are dropped.
pub fn check_release<E: Element>(
    batch: &Batch<E>,
    jp: &JointParams<E>,
    op: &OutputParams<E>,
    cfg: &EngineConfig,
) -> std::result::Result<(), String> {
    let tracker = batch.tracker();
    let before = tracker.live_bytes();
    let inputs = batch.bytes() + jp.bytes() + op.bytes();
    let out = engine::run(batch, jp, op, cfg).map_err(|e| e.to_string())?;
    let with_outputs = tracker.live_bytes();
    let expected = inputs + out.grads.bytes();
    drop(out);
    let after = tracker.live_bytes();
    if before != inputs || with_outputs != expected || after != inputs {
        return Err(format!(
            "mode {}: live bytes before {before}, with outputs {with_outputs} (expected {expected}), \
             after drop {after} (expected {inputs})",
            cfg.mode
        ));
    }
    Ok(())
}

fn memory_release_suite(opts: &VerifyOptions) -> SuiteOutcome {
    let n = opts.count(5, 20);
    for i in 0..n {
        let seed = case_seed(opts.seed, 4, i);
        let tracker = MemoryTracker::new();
        let (batch, jp, op) =
            random_batch::<f64>(&tracker, seed, BatchBounds::EQUIVALENCE).map_err(err(seed))?;
        for cfg in equivalence_configs() {
            check_release(&batch, &jp, &op, &cfg)
                .map_err(|m| format!("{}\n{m}", describe_batch(seed, &batch, &jp, &op)))?;
        }
    }
    Ok(n)
}

/// Configuration of the batch-size scaling check: T=50, U=10,
/// H=H_A=H_L=64, V=128.
pub fn scaling_config(mode: Mode, batch_size: usize) -> BenchConfig {
    BenchConfig {
        mode,
        batch_size,
        frames: 50,
        labels: 10,
        hidden: 64,
        acoustic: 64,
        label_dim: 64,
        vocab: 128,
        warmup_steps: 0,
        bench_steps: 1,
        worker_count: 1,
        ..BenchConfig::desk()
    }
}

pub const SCALING_BATCHES: [usize; 4] = [1, 4, 16, 64];

/// Peak tracker bytes of one step of `cfg`.
pub fn step_peak(cfg: &BenchConfig) -> Result<u64> {
    let tracker = MemoryTracker::new();
    let (batch, jp, op) = synth_inputs::<f32>(cfg, &tracker)?;
    tracker.reset_peak();
    let out = engine::run(&batch, &jp, &op, &cfg.engine_config())?;
    drop(out);
    Ok(tracker.peak_bytes())
}

fn memory_scaling_suite() -> SuiteOutcome {
    let peak = |mode, b| step_peak(&scaling_config(mode, b)).map_err(err(format!("{mode} B={b}")));
    let fp = scaling_config(Mode::SampleWise, 1).footprint();
    let sw1 = peak(Mode::SampleWise, 1)?;
    let mut cases = 1;
    for &b in &SCALING_BATCHES[1..] {
        let sw = peak(Mode::SampleWise, b)?;
        let bound = sw1 as f64 + 1.1 * (b - 1) as f64 * fp.sample_3d_bytes as f64;
        if sw as f64 > bound {
            return Err(format!(
                "sample_wise B={b}: peak {sw} exceeds {bound} (peak at B=1 {sw1})"
            ));
        }
        let batched = peak(Mode::Batched, b)?;
        let floor = 0.8 * b as f64 * fp.sample_4d_bytes as f64;
        if (batched as f64) < floor {
            return Err(format!("batched B={b}: peak {batched} below {floor}"));
        }
        cases += 2;
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perturbed(h: &Tensor<f64>, y: &LabelSequence, frames: usize) -> Result<(f64, Tensor<f64>)> {
        let (l, mut dh) = loss::transducer_loss_masked(h, y, frames)?;
        // Shift the blank term of the first lattice node.
        dh.data_mut()[0] += 1e-3;
        Ok((l, dh))
    }

    #[test]
    fn mutation_is_caught() {
        let opts = VerifyOptions {
            loss_fn: perturbed,
            ..VerifyOptions::new(Scale::Small)
        };
        let report = run_suite("finite-difference", || finite_difference_suite(&opts));
        assert!(!report.passed());
        assert!(report.failure.unwrap().contains("case seed"));
    }

    #[test]
    fn rel_diff_helpers() {
        let tr = MemoryTracker::new();
        let a = Tensor::from_vec(&tr, &[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&tr, &[2], vec![1.0, 4.0]).unwrap();
        assert_eq!(normwise_rel_diff(&a, &a), 0.0);
        assert_eq!(normwise_rel_diff(&a, &b), 0.5);
        assert_eq!(scalar_rel_diff(3.0, 2.0), 0.5);
    }

    #[test]
    fn random_batches_are_valid_and_reproducible() {
        let tr = MemoryTracker::new();
        for seed in 0..20 {
            let (b1, _, _) = random_batch::<f64>(&tr, seed, BatchBounds::EQUIVALENCE).unwrap();
            let (b2, _, _) = random_batch::<f32>(&tr, seed, BatchBounds::EQUIVALENCE).unwrap();
            assert_eq!(b1.t_len, b2.t_len);
            assert_eq!(b1.h_a.data()[0] as f32, b2.h_a.data()[0]);
        }
    }
}
