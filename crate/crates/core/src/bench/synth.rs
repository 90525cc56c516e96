//! Seeded input synthesis with linear padding ramps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BenchConfig;
use crate::compute::{JointParams, OutputParams};
use crate::engine::Batch;
use crate::error::Result;
use crate::loss::LabelSequence;
use crate::tensor::{Element, MemoryTracker, Tensor};

/// Acoustic padding at the last sample, in thousandths of `T`.
pub const ACOUSTIC_RAMP_PER_MILLE: usize = 93;
/// Label padding at the last sample, in thousandths of `U`.
pub const LABEL_RAMP_PER_MILLE: usize = 458;

const INIT_RANGE: f64 = 0.1;

/// True length of sample `b` (1-indexed) out of `batch`:
/// `max(1, round(full · (1 − ramp·(b−1)/(batch−1))))` with halves rounded
/// away from zero. Computed in integers so no float rounding leaks in.
pub fn ramp_length(full: usize, b: usize, batch: usize, per_mille: usize) -> usize {
    assert!(b >= 1 && b <= batch, "sample index {b} outside 1..={batch}");
    if batch == 1 {
        return full.max(1);
    }
    let den = 1000 * (batch as u128 - 1);
    let num = full as u128 * (den - per_mille as u128 * (b as u128 - 1));
    let rounded = (2 * num + den) / (2 * den);
    (rounded as usize).max(1)
}

/// `(T_b, U_b)` for every sample of a configuration.
pub fn ramp_lengths(cfg: &BenchConfig) -> Vec<(usize, usize)> {
    (1..=cfg.batch_size)
        .map(|b| {
            (
                ramp_length(cfg.frames, b, cfg.batch_size, ACOUSTIC_RAMP_PER_MILLE),
                ramp_length(cfg.labels, b, cfg.batch_size, LABEL_RAMP_PER_MILLE),
            )
        })
        .collect()
}

/// Deterministic inputs for `cfg` allocated on `tracker`. Draw order is
/// `W_A, W_L, b_Z, W_O, b_O, h_A, h_L, labels`; values are drawn in `f64`
/// and cast, so both precisions see the same underlying stream.
pub fn synth_inputs<E: Element>(
    cfg: &BenchConfig,
    tracker: &MemoryTracker,
) -> Result<(Batch<E>, JointParams<E>, OutputParams<E>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let uniform = |shape: &[usize], rng: &mut ChaCha8Rng| {
        Tensor::from_fn(tracker, shape, |_| {
            E::cast(rng.gen_range(-INIT_RANGE..=INIT_RANGE))
        })
    };

    let w_a = uniform(&[cfg.hidden, cfg.acoustic], &mut rng)?;
    let w_l = uniform(&[cfg.hidden, cfg.label_dim], &mut rng)?;
    let b_z = uniform(&[cfg.hidden], &mut rng)?;
    let w_o = uniform(&[cfg.vocab, cfg.hidden], &mut rng)?;
    let b_o = uniform(&[cfg.vocab], &mut rng)?;

    let lengths = ramp_lengths(cfg);
    let (bsz, t, u1) = (cfg.batch_size, cfg.frames, cfg.labels + 1);
    let mut h_a = uniform(&[bsz, t, cfg.acoustic], &mut rng)?;
    let mut h_l = uniform(&[bsz, u1, cfg.label_dim], &mut rng)?;
    for (b, &(tb, ub)) in lengths.iter().enumerate() {
        let a = &mut h_a.data_mut()[b * t * cfg.acoustic..(b + 1) * t * cfg.acoustic];
        a[tb * cfg.acoustic..].fill(E::zero());
        let l = &mut h_l.data_mut()[b * u1 * cfg.label_dim..(b + 1) * u1 * cfg.label_dim];
        l[(ub + 1) * cfg.label_dim..].fill(E::zero());
    }

    let mut labels = Vec::with_capacity(bsz);
    for &(_, ub) in &lengths {
        let y = (0..ub).map(|_| rng.gen_range(1..cfg.vocab)).collect();
        labels.push(LabelSequence::new(y, cfg.vocab)?);
    }
    let t_len = lengths.iter().map(|&(tb, _)| tb).collect();

    Ok((
        Batch::new(h_a, h_l, labels, t_len)?,
        JointParams::new(w_a, w_l, b_z)?,
        OutputParams::new(w_o, b_o)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_examples() {
        let t: Vec<_> = (1..=4)
            .map(|b| ramp_length(500, b, 4, ACOUSTIC_RAMP_PER_MILLE))
            .collect();
        assert_eq!(t, [500, 485, 469, 454]);
        let u: Vec<_> = (1..=4)
            .map(|b| ramp_length(100, b, 4, LABEL_RAMP_PER_MILLE))
            .collect();
        assert_eq!(u, [100, 85, 69, 54]);
        assert_eq!(ramp_length(500, 1, 1, ACOUSTIC_RAMP_PER_MILLE), 500);
        assert_eq!(ramp_length(1, 2, 2, LABEL_RAMP_PER_MILLE), 1);
        assert_eq!(ramp_length(2, 2, 2, LABEL_RAMP_PER_MILLE), 1);
    }

    #[test]
    fn first_sample_unpadded() {
        for bsz in [1, 2, 7, 64] {
            let mut cfg = BenchConfig::desk();
            cfg.batch_size = bsz;
            assert_eq!(ramp_lengths(&cfg)[0], (cfg.frames, cfg.labels));
        }
    }

    #[test]
    fn synthesis_is_reproducible_and_padded() {
        let mut cfg = BenchConfig::tiny();
        cfg.batch_size = 3;
        let tr = MemoryTracker::new();
        let (b1, j1, o1) = synth_inputs::<f64>(&cfg, &tr).unwrap();
        let (b2, j2, o2) = synth_inputs::<f64>(&cfg, &tr).unwrap();
        assert_eq!(b1.h_a, b2.h_a);
        assert_eq!(b1.h_l, b2.h_l);
        assert_eq!(j1.w_a, j2.w_a);
        assert_eq!(o1.w_o, o2.w_o);
        assert_eq!(b1.labels, b2.labels);
        assert!(b1
            .labels
            .iter()
            .flat_map(|y| y.labels())
            .all(|&l| (1..cfg.vocab).contains(&l)));
        assert!(b1.h_a.data().iter().all(|x| x.abs() <= 0.1));

        let (b32, _, _) = synth_inputs::<f32>(&cfg, &tr).unwrap();
        assert_eq!(b32.h_a.data()[5], b1.h_a.data()[5] as f32);
    }
}
