//! Training-step engines over a padded batch.
//!
//! [`run_batched`] is the reference: it materializes `z`, `h` and `dh` for the
//! whole padded batch and masks every sample's lattice by its true lengths.
//! [`run_sample_wise`] walks the batch one sample at a time, releasing each
//! sample's intermediates before moving on and accumulating gradients in
//! ascending sample order. With padding removal each sample is first cropped
//! to its true lengths; with dynamic parallelism several samples run
//! concurrently, their count chosen by [`compute_parallel_iterations`].
//!
//! All modes produce the same losses and gradients up to summation order.

pub mod footprint;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compute::{
    joint_backward_batch, joint_forward_batch, output_backward, output_forward, JointParams,
    ModelDims, OutputParams,
};
use crate::error::{Error, Result};
use crate::loss::{self, LabelSequence, LatticeDims};
use crate::tensor::{Element, MemoryTracker, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Batched,
    SampleWise,
    SampleWisePr,
    SampleWisePrDp,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Batched,
        Mode::SampleWise,
        Mode::SampleWisePr,
        Mode::SampleWisePrDp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Batched => "batched",
            Mode::SampleWise => "sample_wise",
            Mode::SampleWisePr => "sample_wise_pr",
            Mode::SampleWisePrDp => "sample_wise_pr_dp",
        }
    }

    fn crops(self) -> bool {
        matches!(self, Mode::SampleWisePr | Mode::SampleWisePrDp)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode `{s}`")))
    }
}

/// Which lattice extents feed the parallel-iterations formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiExtents {
    /// Frames and label rows actually allocated for `h*`: `(T_b, U_b + 1)`.
    LatticeRows,
    /// Frames and label count as written in the formula: `(T_b, U_b)`.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub mode: Mode,
    /// Memory budget for concurrent `h*` tensors under dynamic parallelism.
    pub mem_budget_bytes: u64,
    /// Upper end of the parallel-iterations range; a power of two ≤ 16.
    pub max_parallel: usize,
    /// Threads available to dynamic parallelism.
    pub worker_count: usize,
    pub pi_extents: PiExtents,
}

impl EngineConfig {
    pub const DEFAULT_BUDGET: u64 = 1_000_000_000;
    pub const DEFAULT_MAX_PARALLEL: usize = 16;

    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            mem_budget_bytes: Self::DEFAULT_BUDGET,
            max_parallel: Self::DEFAULT_MAX_PARALLEL,
            worker_count: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            pi_extents: PiExtents::LatticeRows,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.worker_count = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mem_budget_bytes == 0 || self.worker_count == 0 || self.max_parallel == 0 {
            return Err(Error::InvalidInput(format!(
                "budget, worker count and max parallel must be positive: {self:?}"
            )));
        }
        if self.mode == Mode::SampleWisePrDp
            && (!self.max_parallel.is_power_of_two() || self.max_parallel > 16)
        {
            return Err(Error::InvalidInput(format!(
                "max_parallel must be a power of two <= 16, got {}",
                self.max_parallel
            )));
        }
        Ok(())
    }
}

/// Padded batch of synthesized encoder outputs and targets.
pub struct Batch<E: Element> {
    /// `[B, T, H_A]`, zero beyond each sample's frame count.
    pub h_a: Tensor<E>,
    /// `[B, U+1, H_L]`, zero beyond each sample's `U_b + 1` rows.
    pub h_l: Tensor<E>,
    pub labels: Vec<LabelSequence>,
    /// True frame counts `T_b`.
    pub t_len: Vec<usize>,
}

impl<E: Element> Batch<E> {
    pub fn new(
        h_a: Tensor<E>,
        h_l: Tensor<E>,
        labels: Vec<LabelSequence>,
        t_len: Vec<usize>,
    ) -> Result<Self> {
        if h_a.rank() != 3 || h_l.rank() != 3 || h_a.shape()[0] != h_l.shape()[0] {
            return Err(Error::InvalidShape(format!(
                "batch encodings h_A {:?}, h_L {:?}",
                h_a.shape(),
                h_l.shape()
            )));
        }
        let (b, t, u1) = (h_a.shape()[0], h_a.shape()[1], h_l.shape()[1]);
        if labels.len() != b || t_len.len() != b {
            return Err(Error::InvalidInput(format!(
                "batch of {b} needs {b} label sequences and lengths, got {} and {}",
                labels.len(),
                t_len.len()
            )));
        }
        for (i, (&tb, y)) in t_len.iter().zip(&labels).enumerate() {
            if tb < 1 || tb > t || y.len() + 1 > u1 {
                return Err(Error::InvalidInput(format!(
                    "sample {i}: T_b={tb}, U_b={} outside padded extents T={t}, U={}",
                    y.len(),
                    u1 - 1
                )));
            }
        }
        let batch = Self {
            h_a,
            h_l,
            labels,
            t_len,
        };
        batch.check_padding()?;
        Ok(batch)
    }

    fn check_padding(&self) -> Result<()> {
        let (t, ha) = (self.frames(), self.h_a.shape()[2]);
        let (u1, hl) = (self.label_rows(), self.h_l.shape()[2]);
        for b in 0..self.batch_size() {
            let a = &self.h_a.data()[b * t * ha..(b + 1) * t * ha];
            let l = &self.h_l.data()[b * u1 * hl..(b + 1) * u1 * hl];
            let pad_a = &a[self.t_len[b] * ha..];
            let pad_l = &l[(self.u_len(b) + 1) * hl..];
            if pad_a.iter().chain(pad_l).any(|&x| x != E::zero()) {
                return Err(Error::InvalidInput(format!(
                    "sample {b} has non-zero padding"
                )));
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.h_a.shape()[0]
    }

    /// Padded frame extent `T`.
    pub fn frames(&self) -> usize {
        self.h_a.shape()[1]
    }

    /// Padded label-row extent `U + 1`.
    pub fn label_rows(&self) -> usize {
        self.h_l.shape()[1]
    }

    /// True label count `U_b`.
    pub fn u_len(&self, b: usize) -> usize {
        self.labels[b].len()
    }

    pub fn bytes(&self) -> u64 {
        self.h_a.bytes() + self.h_l.bytes()
    }

    pub fn tracker(&self) -> &MemoryTracker {
        self.h_a.tracker()
    }
}

/// Accumulated gradients of one training step.
pub struct GradientSet<E: Element> {
    pub d_w_a: Tensor<E>,
    pub d_w_l: Tensor<E>,
    pub d_b_z: Tensor<E>,
    pub d_w_o: Tensor<E>,
    pub d_b_o: Tensor<E>,
    /// `[B, T, H_A]`
    pub d_h_a: Tensor<E>,
    /// `[B, U+1, H_L]`
    pub d_h_l: Tensor<E>,
}

impl<E: Element> GradientSet<E> {
    pub fn zeros(
        tracker: &MemoryTracker,
        dims: &ModelDims,
        batch: usize,
        frames: usize,
        label_rows: usize,
    ) -> Result<Self> {
        let z = |shape: &[usize], name: &str| Tensor::named_zeros(tracker, shape, name);
        Ok(Self {
            d_w_a: z(&[dims.hidden, dims.acoustic], "d_w_a")?,
            d_w_l: z(&[dims.hidden, dims.label], "d_w_l")?,
            d_b_z: z(&[dims.hidden], "d_b_z")?,
            d_w_o: z(&[dims.vocab, dims.hidden], "d_w_o")?,
            d_b_o: z(&[dims.vocab], "d_b_o")?,
            d_h_a: z(&[batch, frames, dims.acoustic], "d_h_a")?,
            d_h_l: z(&[batch, label_rows, dims.label], "d_h_l")?,
        })
    }

    /// Named views of every gradient tensor, in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &Tensor<E>); 7] {
        [
            ("d_w_a", &self.d_w_a),
            ("d_w_l", &self.d_w_l),
            ("d_b_z", &self.d_b_z),
            ("d_w_o", &self.d_w_o),
            ("d_b_o", &self.d_b_o),
            ("d_h_a", &self.d_h_a),
            ("d_h_l", &self.d_h_l),
        ]
    }

    pub fn bytes(&self) -> u64 {
        self.tensors().iter().map(|(_, t)| t.bytes()).sum()
    }
}

/// Gradient contribution of a single sample. Encoder-input gradients cover
/// only the extents the sample was processed at.
pub struct SampleGrads<E: Element> {
    pub d_w_a: Tensor<E>,
    pub d_w_l: Tensor<E>,
    pub d_b_z: Tensor<E>,
    pub d_w_o: Tensor<E>,
    pub d_b_o: Tensor<E>,
    pub d_h_a: Tensor<E>,
    pub d_h_l: Tensor<E>,
}

pub struct StepOutput<E: Element> {
    /// Batch loss, the sum of `sample_losses` in ascending order.
    pub loss: E,
    pub sample_losses: Vec<E>,
    pub grads: GradientSet<E>,
    /// Samples processed concurrently: the parallel-iterations count capped
    /// by `worker_count` and `B` (1 unless dynamic parallelism is on).
    pub parallel_iterations: usize,
}

/// Adds one sample's parameter gradients into `grads` and writes its
/// encoder-input gradients into slot `b`.
pub fn accumulate<E: Element>(
    grads: &mut GradientSet<E>,
    sample: &SampleGrads<E>,
    b: usize,
) -> Result<()> {
    grads.d_w_a.add_assign(&sample.d_w_a)?;
    grads.d_w_l.add_assign(&sample.d_w_l)?;
    grads.d_b_z.add_assign(&sample.d_b_z)?;
    grads.d_w_o.add_assign(&sample.d_w_o)?;
    grads.d_b_o.add_assign(&sample.d_b_o)?;
    grads.d_h_a.write_prefix(b, &sample.d_h_a)?;
    grads.d_h_l.write_prefix(b, &sample.d_h_l)?;
    Ok(())
}

/// Number of samples to run concurrently:
/// `2^clamp(⌊log2(budget / (4·frames·labels·vocab))⌋, 0, 4)`.
pub fn compute_parallel_iterations(
    frames: usize,
    labels: usize,
    vocab: usize,
    budget: u64,
) -> usize {
    let h_bytes = 4.0 * frames.max(1) as f64 * labels.max(1) as f64 * vocab.max(1) as f64;
    let ratio = budget as f64 / h_bytes;
    let exp = ratio.log2().floor().clamp(0.0, 4.0);
    1usize << (exp as u32)
}

fn model_dims<E: Element>(
    batch: &Batch<E>,
    jp: &JointParams<E>,
    op: &OutputParams<E>,
) -> Result<ModelDims> {
    let dims = ModelDims {
        hidden: jp.hidden(),
        acoustic: jp.acoustic_dim(),
        label: jp.label_dim(),
        vocab: op.vocab(),
    };
    dims.validate()?;
    if op.hidden() != dims.hidden
        || batch.h_a.shape()[2] != dims.acoustic
        || batch.h_l.shape()[2] != dims.label
    {
        return Err(Error::InvalidShape(format!(
            "batch h_A {:?}, h_L {:?} inconsistent with parameters {dims:?}",
            batch.h_a.shape(),
            batch.h_l.shape()
        )));
    }
    if let Some((b, y)) = batch
        .labels
        .iter()
        .enumerate()
        .find(|(_, y)| y.labels().iter().any(|&l| l >= dims.vocab))
    {
        return Err(Error::InvalidInput(format!(
            "sample {b} has labels {:?} outside V={}",
            y.labels(),
            dims.vocab
        )));
    }
    Ok(dims)
}

/// Runs the configured engine.
pub fn run<E: Element>(
    batch: &Batch<E>,
    jp: &JointParams<E>,
    op: &OutputParams<E>,
    cfg: &EngineConfig,
) -> Result<StepOutput<E>> {
    match cfg.mode {
        Mode::Batched => run_batched(batch, jp, op),
        _ => run_sample_wise(batch, jp, op, cfg),
    }
}

/// Reference engine over the full padded batch.
pub fn run_batched<E: Element>(
    batch: &Batch<E>,
    jp: &JointParams<E>,
    op: &OutputParams<E>,
) -> Result<StepOutput<E>> {
    let dims = model_dims(batch, jp, op)?;
    let tracker = batch.tracker();
    let (bsz, t, u1, v) = (
        batch.batch_size(),
        batch.frames(),
        batch.label_rows(),
        dims.vocab,
    );

    let z = joint_forward_batch(&batch.h_a, &batch.h_l, jp)?;
    let h = output_forward(&z, op)?;

    let mut log_den = Tensor::named_zeros(tracker, &[bsz, t, u1], "log_den")?;
    let mut alpha = Tensor::named_zeros(tracker, &[bsz, t, u1], "alpha")?;
    let mut beta = Tensor::named_zeros(tracker, &[bsz, t, u1], "beta")?;
    let mut dh = Tensor::named_zeros(tracker, h.shape(), "dh")?;

    let cells = t * u1;
    let mut sample_losses = Vec::with_capacity(bsz);
    {
        let (ld, al, be, g) = (
            log_den.data_mut(),
            alpha.data_mut(),
            beta.data_mut(),
            dh.data_mut(),
        );
        for b in 0..bsz {
            let dims = LatticeDims {
                t_ext: t,
                u_ext: u1,
                vocab: v,
                frames: batch.t_len[b],
            };
            let labels = batch.labels[b].labels();
            let lattice = b * cells..(b + 1) * cells;
            let scores = &h.data()[b * cells * v..(b + 1) * cells * v];
            loss::log_denominator_into(scores, v, &mut ld[lattice.clone()]);
            loss::forward_backward_into(
                scores,
                &ld[lattice.clone()],
                dims,
                labels,
                &mut al[lattice.clone()],
                &mut be[lattice.clone()],
            );
            let log_z = be[lattice.start];
            if !log_z.is_finite() {
                return Err(Error::NumericDegeneracy(format!(
                    "sample {b}: log-likelihood is {log_z}"
                )));
            }
            sample_losses.push(-log_z);
            loss::gradient_into(
                scores,
                &ld[lattice.clone()],
                &al[lattice.clone()],
                &be[lattice],
                dims,
                labels,
                &mut g[b * cells * v..(b + 1) * cells * v],
            )?;
        }
    }
    drop((log_den, alpha, beta));
    drop(h);

    let og = output_backward(&dh, &z, op)?;
    drop(dh);
    let jg = joint_backward_batch(og.dz, &z, &batch.h_a, &batch.h_l, jp)?;
    drop(z);

    Ok(StepOutput {
        loss: sum_in_order(&sample_losses),
        sample_losses,
        grads: GradientSet {
            d_w_a: jg.d_w_a,
            d_w_l: jg.d_w_l,
            d_b_z: jg.d_b_z,
            d_w_o: og.d_w_o,
            d_b_o: og.d_b_o,
            d_h_a: jg.d_h_a,
            d_h_l: jg.d_h_l,
        },
        parallel_iterations: 1,
    })
}

fn sum_in_order<E: Element>(values: &[E]) -> E {
    values.iter().fold(E::zero(), |acc, &x| acc + x)
}

/// One sample through joint network, output layer, loss and both backward
/// passes. Everything it allocates except the returned gradients is released
/// before it returns.
fn sample_pipeline<E: Element>(
    batch: &Batch<E>,
    b: usize,
    jp: &JointParams<E>,
    op: &OutputParams<E>,
    crop: bool,
) -> Result<(E, SampleGrads<E>)> {
    let (ha_dim, hl_dim) = (jp.acoustic_dim(), jp.label_dim());
    let (t, u1) = if crop {
        (batch.t_len[b], batch.u_len(b) + 1)
    } else {
        (batch.frames(), batch.label_rows())
    };
    let h_a = batch
        .h_a
        .select_crop(b, &[t, ha_dim])
        .map_err(|e| e.for_tensor("h_a[b]"))?
        .reshape(&[1, t, ha_dim])?;
    let h_l = batch
        .h_l
        .select_crop(b, &[u1, hl_dim])
        .map_err(|e| e.for_tensor("h_l[b]"))?
        .reshape(&[1, u1, hl_dim])?;

    let z = joint_forward_batch(&h_a, &h_l, jp)?;
    let h = output_forward(&z, op)?.reshape(&[t, u1, op.vocab()])?;
    let (loss, dh) = loss::transducer_loss_masked(&h, &batch.labels[b], batch.t_len[b])?;
    drop(h);

    let dh = dh.reshape(&[1, t, u1, op.vocab()])?;
    let og = output_backward(&dh, &z, op)?;
    drop(dh);
    let jg = joint_backward_batch(og.dz, &z, &h_a, &h_l, jp)?;
    drop(z);

    Ok((
        loss,
        SampleGrads {
            d_w_a: jg.d_w_a,
            d_w_l: jg.d_w_l,
            d_b_z: jg.d_b_z,
            d_w_o: og.d_w_o,
            d_b_o: og.d_b_o,
            d_h_a: jg.d_h_a.reshape(&[t, ha_dim])?,
            d_h_l: jg.d_h_l.reshape(&[u1, hl_dim])?,
        },
    ))
}

/// Parallel iterations for a batch, from its largest cropped lattice.
pub fn batch_parallel_iterations<E: Element>(
    batch: &Batch<E>,
    vocab: usize,
    cfg: &EngineConfig,
) -> usize {
    let frames = batch.t_len.iter().copied().max().unwrap_or(1);
    let labels = (0..batch.batch_size())
        .map(|b| batch.u_len(b))
        .max()
        .unwrap_or(0);
    let rows = match cfg.pi_extents {
        PiExtents::LatticeRows => labels + 1,
        PiExtents::Literal => labels.max(1),
    };
    compute_parallel_iterations(frames, rows, vocab, cfg.mem_budget_bytes).min(cfg.max_parallel)
}

/// Sample-wise engine in any of its three variants.
pub fn run_sample_wise<E: Element>(
    batch: &Batch<E>,
    jp: &JointParams<E>,
    op: &OutputParams<E>,
    cfg: &EngineConfig,
) -> Result<StepOutput<E>> {
    cfg.validate()?;
    let dims = model_dims(batch, jp, op)?;
    let bsz = batch.batch_size();
    let mut grads = GradientSet::zeros(
        batch.tracker(),
        &dims,
        bsz,
        batch.frames(),
        batch.label_rows(),
    )?;
    let crop = cfg.mode.crops();

    let wave = match cfg.mode {
        Mode::SampleWisePrDp => batch_parallel_iterations(batch, dims.vocab, cfg)
            .min(cfg.worker_count)
            .min(bsz),
        _ => 1,
    };

    let mut sample_losses = Vec::with_capacity(bsz);
    if wave == 1 {
        for b in 0..bsz {
            let (l, g) = sample_pipeline(batch, b, jp, op, crop)?;
            sample_losses.push(l);
            accumulate(&mut grads, &g, b)?;
        }
    } else {
        let indices: Vec<usize> = (0..bsz).collect();
        for chunk in indices.chunks(wave) {
            let results: Vec<Result<(E, SampleGrads<E>)>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&b| s.spawn(move || sample_pipeline(batch, b, jp, op, crop)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("sample worker panicked"))
                    .collect()
            });
            // Ordered reduction: ascending sample index regardless of
            // completion order.
            for (&b, r) in chunk.iter().zip(results) {
                let (l, g) = r?;
                sample_losses.push(l);
                accumulate(&mut grads, &g, b)?;
            }
        }
    }

    Ok(StepOutput {
        loss: sum_in_order(&sample_losses),
        sample_losses,
        grads,
        parallel_iterations: wave,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parallel_iterations_table() {
        assert_eq!(
            compute_parallel_iterations(500, 100, 4096, 1_000_000_000),
            1
        );
        assert_eq!(compute_parallel_iterations(50, 10, 4096, 1_000_000_000), 16);
        assert_eq!(compute_parallel_iterations(232, 46, 4096, 1_000_000_000), 4);
        // Budget smaller than one h*: clamps to 1.
        assert_eq!(compute_parallel_iterations(500, 100, 4096, 1), 1);
        assert_eq!(compute_parallel_iterations(1, 1, 2, u64::MAX), 16);
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert_eq!(
            "sample-wise-pr".parse::<Mode>().unwrap(),
            Mode::SampleWisePr
        );
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = EngineConfig::new(Mode::SampleWisePrDp);
        c.max_parallel = 3;
        assert!(c.validate().is_err());
        c.max_parallel = 32;
        assert!(c.validate().is_err());
        c.max_parallel = 8;
        c.validate().unwrap();
        c.worker_count = 0;
        assert!(c.validate().is_err());
    }

    fn random_grads(tr: &MemoryTracker, dims: &ModelDims, seed: u64) -> SampleGrads<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r =
            |shape: &[usize]| Tensor::from_fn(tr, shape, |_| rng.gen_range(-1.0..1.0)).unwrap();
        SampleGrads {
            d_w_a: r(&[dims.hidden, dims.acoustic]),
            d_w_l: r(&[dims.hidden, dims.label]),
            d_b_z: r(&[dims.hidden]),
            d_w_o: r(&[dims.vocab, dims.hidden]),
            d_b_o: r(&[dims.vocab]),
            d_h_a: r(&[2, dims.acoustic]),
            d_h_l: r(&[1, dims.label]),
        }
    }

    fn negate(tr: &MemoryTracker, g: &SampleGrads<f64>) -> SampleGrads<f64> {
        let n = |t: &Tensor<f64>| {
            let mut c = t.try_clone().unwrap();
            c.scale(-1.0);
            let _ = tr;
            c
        };
        SampleGrads {
            d_w_a: n(&g.d_w_a),
            d_w_l: n(&g.d_w_l),
            d_b_z: n(&g.d_b_z),
            d_w_o: n(&g.d_w_o),
            d_b_o: n(&g.d_b_o),
            d_h_a: n(&g.d_h_a),
            d_h_l: n(&g.d_h_l),
        }
    }

    #[test]
    fn accumulate_identity_and_cancellation() {
        let tr = MemoryTracker::new();
        let dims = ModelDims {
            hidden: 3,
            acoustic: 2,
            label: 2,
            vocab: 4,
        };
        let mut grads = GradientSet::<f64>::zeros(&tr, &dims, 2, 3, 2).unwrap();
        let g = random_grads(&tr, &dims, 1);
        accumulate(&mut grads, &g, 1).unwrap();
        assert_eq!(grads.d_w_o, g.d_w_o);
        assert_eq!(grads.d_b_z, g.d_b_z);
        assert_eq!(grads.d_h_a.get(&[1, 1, 1]), g.d_h_a.get(&[1, 1]));
        assert_eq!(grads.d_h_a.get(&[0, 0, 0]), Some(0.0));
        assert_eq!(grads.d_h_a.get(&[1, 2, 0]), Some(0.0));

        let neg = negate(&tr, &g);
        accumulate(&mut grads, &neg, 1).unwrap();
        for (name, t) in grads.tensors().iter().take(5) {
            assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
        }
    }
}
