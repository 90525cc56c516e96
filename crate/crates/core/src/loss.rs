//! Transducer loss in log space.
//!
//! The loss runs in four stages per sample: the log softmax denominator of
//! every lattice node, the forward (`alpha`) and backward (`beta`) lattices,
//! the loss `-beta[0,0]`, and the gradient with respect to the output scores.
//! Token probabilities are recomputed on the fly from the scores and the log
//! denominator; no `[T, U+1, V]` probability tensor is ever allocated.
//!
//! Lattice node `(t, u)` means `t+1` frames consumed and `u` labels emitted.
//! A blank advances `t`, a label advances `u`, and every alignment ends with
//! a blank from the terminal node `(T_b-1, U_b)`.
//!
//! All ops accept score tensors with padded extents `[T, U+1, V]` together
//! with the true frame count; nodes outside the `(T_b, U_b+1)` sub-lattice
//! hold `-inf` in the lattices and receive zero gradient.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Element, MemoryTracker, Tensor};

/// Token id reserved for blank.
pub const BLANK: usize = 0;

/// Target labels of one sample, blank excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    labels: Vec<usize>,
}

impl LabelSequence {
    pub fn new(labels: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= vocab) {
            return Err(Error::InvalidInput(format!(
                "label {bad} is blank or outside vocabulary of size {vocab}"
            )));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `U_b`
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Log denominator and both lattices of one sample, each `[T, U+1]`.
pub struct LatticeVars<E: Element> {
    pub log_den: Tensor<E>,
    pub alpha: Tensor<E>,
    pub beta: Tensor<E>,
}

impl<E: Element> LatticeVars<E> {
    /// Total log-probability of the label sequence.
    pub fn log_z(&self) -> E {
        self.beta.data()[0]
    }
}

/// Extents of one sample's (possibly padded) lattice.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LatticeDims {
    /// Padded frame extent.
    pub t_ext: usize,
    /// Padded label-row extent (`U + 1`).
    pub u_ext: usize,
    pub vocab: usize,
    /// True frame count `T_b`.
    pub frames: usize,
}

impl LatticeDims {
    fn check(&self, labels: &[usize]) -> Result<()> {
        if self.frames < 1 || self.frames > self.t_ext {
            return Err(Error::InvalidInput(format!(
                "frame count {} outside 1..={}",
                self.frames, self.t_ext
            )));
        }
        if labels.len() + 1 > self.u_ext {
            return Err(Error::InvalidInput(format!(
                "{} labels need {} lattice rows, scores have {}",
                labels.len(),
                labels.len() + 1,
                self.u_ext
            )));
        }
        if self.vocab < 2 {
            return Err(Error::InvalidInput(
                "vocabulary must include blank and one label".into(),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l >= self.vocab) {
            return Err(Error::InvalidInput(format!(
                "label {bad} invalid for V={}",
                self.vocab
            )));
        }
        Ok(())
    }
}

pub(crate) fn log_denominator_into<E: Element>(h: &[E], vocab: usize, out: &mut [E]) {
    for (o, row) in out.iter_mut().zip(h.chunks_exact(vocab)) {
        *o = kernels::logsumexp(row);
    }
}

/// Fills `alpha` and `beta` (both `t_ext * u_ext`) for one sample.
pub(crate) fn forward_backward_into<E: Element>(
    h: &[E],
    log_den: &[E],
    dims: LatticeDims,
    labels: &[usize],
    alpha: &mut [E],
    beta: &mut [E],
) {
    let LatticeDims {
        u_ext,
        vocab,
        frames,
        ..
    } = dims;
    let rows = labels.len() + 1;
    let last_t = frames - 1;
    let last_u = labels.len();
    let lp = |t: usize, u: usize, k: usize| h[(t * u_ext + u) * vocab + k] - log_den[t * u_ext + u];
    let ninf = E::neg_infinity();

    alpha.iter_mut().for_each(|a| *a = ninf);
    beta.iter_mut().for_each(|b| *b = ninf);

    for t in 0..frames {
        for u in 0..rows {
            let cell = if t == 0 && u == 0 {
                E::zero()
            } else {
                let from_blank = if t > 0 {
                    alpha[(t - 1) * u_ext + u] + lp(t - 1, u, BLANK)
                } else {
                    ninf
                };
                let from_label = if u > 0 {
                    alpha[t * u_ext + u - 1] + lp(t, u - 1, labels[u - 1])
                } else {
                    ninf
                };
                kernels::log_add_exp(from_blank, from_label)
            };
            alpha[t * u_ext + u] = cell;
        }
    }

    for t in (0..frames).rev() {
        for u in (0..rows).rev() {
            let cell = if t == last_t && u == last_u {
                lp(t, u, BLANK)
            } else {
                let via_blank = if t < last_t {
                    lp(t, u, BLANK) + beta[(t + 1) * u_ext + u]
                } else {
                    ninf
                };
                let via_label = if u < last_u {
                    lp(t, u, labels[u]) + beta[t * u_ext + u + 1]
                } else {
                    ninf
                };
                kernels::log_add_exp(via_blank, via_label)
            };
            beta[t * u_ext + u] = cell;
        }
    }
}

/// Writes `∂L/∂h` for one sample into `dh` (`t_ext * u_ext * vocab`, zeroed
/// by the caller outside the valid sub-lattice).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gradient_into<E: Element>(
    h: &[E],
    log_den: &[E],
    alpha: &[E],
    beta: &[E],
    dims: LatticeDims,
    labels: &[usize],
    dh: &mut [E],
) -> Result<()> {
    let LatticeDims {
        u_ext,
        vocab,
        frames,
        ..
    } = dims;
    let log_z = beta[0];
    if !log_z.is_finite() {
        return Err(Error::NumericDegeneracy(format!(
            "log-likelihood is {log_z}"
        )));
    }
    let last_t = frames - 1;
    let last_u = labels.len();
    for t in 0..frames {
        for u in 0..=last_u {
            let node = t * u_ext + u;
            let a = alpha[node];
            let ld = log_den[node];
            let scores = &h[node * vocab..(node + 1) * vocab];
            let out = &mut dh[node * vocab..(node + 1) * vocab];

            let occupancy = (a + beta[node] - log_z).exp();
            for (o, &s) in out.iter_mut().zip(scores) {
                *o = occupancy * (s - ld).exp();
            }
            let blank_dest = if t < last_t {
                beta[(t + 1) * u_ext + u]
            } else if u == last_u {
                E::zero()
            } else {
                E::neg_infinity()
            };
            out[BLANK] = out[BLANK] - (a + (scores[BLANK] - ld) + blank_dest - log_z).exp();
            if u < last_u {
                let k = labels[u];
                out[k] = out[k] - (a + (scores[k] - ld) + beta[node + 1] - log_z).exp();
            }
            if out.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericDegeneracy(format!(
                    "non-finite gradient at lattice node ({t}, {u})"
                )));
            }
        }
    }
    Ok(())
}

fn score_dims<E: Element>(h: &Tensor<E>, frames: usize, y: &LabelSequence) -> Result<LatticeDims> {
    if h.rank() != 3 {
        return Err(Error::InvalidShape(format!(
            "scores must be [T, U+1, V], got {:?}",
            h.shape()
        )));
    }
    let dims = LatticeDims {
        t_ext: h.shape()[0],
        u_ext: h.shape()[1],
        vocab: h.shape()[2],
        frames,
    };
    dims.check(y.labels())?;
    Ok(dims)
}

fn check_lattice<E: Element>(t: &Tensor<E>, dims: LatticeDims, what: &str) -> Result<()> {
    if t.shape() != [dims.t_ext, dims.u_ext] {
        return Err(Error::InvalidShape(format!(
            "{what} {:?} does not match lattice [{}, {}]",
            t.shape(),
            dims.t_ext,
            dims.u_ext
        )));
    }
    Ok(())
}

/// `log_den[t,u] = logsumexp_v h[t,u,v]` for scores `[T, U+1, V]`.
pub fn log_denominator<E: Element>(h: &Tensor<E>) -> Result<Tensor<E>> {
    if h.rank() != 3 || h.shape()[2] < 2 {
        return Err(Error::InvalidShape(format!(
            "scores must be [T, U+1, V] with V >= 2, got {:?}",
            h.shape()
        )));
    }
    let (t, u1, v) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    let mut out = Tensor::named_zeros(h.tracker(), &[t, u1], "log_den")?;
    log_denominator_into(h.data(), v, out.data_mut());
    Ok(out)
}

/// Forward and backward lattices over the full extent of `h`; the label
/// count must be exactly `h.shape()[1] - 1`.
pub fn forward_backward<E: Element>(
    h: &Tensor<E>,
    log_den: &Tensor<E>,
    y: &LabelSequence,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if h.rank() == 3 && h.shape()[1] != y.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "scores have {} lattice rows but {} labels were given",
            h.shape()[1],
            y.len()
        )));
    }
    let frames = h.shape()[0];
    forward_backward_masked(h, log_den, y, frames)
}

/// Forward and backward lattices restricted to the first `frames` frames and
/// `y.len() + 1` label rows of a padded score tensor.
pub fn forward_backward_masked<E: Element>(
    h: &Tensor<E>,
    log_den: &Tensor<E>,
    y: &LabelSequence,
    frames: usize,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let dims = score_dims(h, frames, y)?;
    check_lattice(log_den, dims, "log denominator")?;
    let mut alpha = Tensor::named_zeros(h.tracker(), &[dims.t_ext, dims.u_ext], "alpha")?;
    let mut beta = Tensor::named_zeros(h.tracker(), &[dims.t_ext, dims.u_ext], "beta")?;
    forward_backward_into(
        h.data(),
        log_den.data(),
        dims,
        y.labels(),
        alpha.data_mut(),
        beta.data_mut(),
    );
    Ok((alpha, beta))
}

/// `L_b = -beta[0,0]`.
pub fn loss_value<E: Element>(beta: &Tensor<E>) -> Result<E> {
    let log_z = beta.data()[0];
    if !log_z.is_finite() {
        return Err(Error::NumericDegeneracy(format!(
            "no valid alignment: log-likelihood is {log_z}"
        )));
    }
    Ok(-log_z)
}

/// `∂L_b/∂h` over the full extent of `h`.
pub fn loss_gradient<E: Element>(
    h: &Tensor<E>,
    log_den: &Tensor<E>,
    alpha: &Tensor<E>,
    beta: &Tensor<E>,
    y: &LabelSequence,
) -> Result<Tensor<E>> {
    let frames = h.shape()[0];
    loss_gradient_masked(h, log_den, alpha, beta, y, frames)
}

/// `∂L_b/∂h` for a padded score tensor; zero outside the valid sub-lattice.
pub fn loss_gradient_masked<E: Element>(
    h: &Tensor<E>,
    log_den: &Tensor<E>,
    alpha: &Tensor<E>,
    beta: &Tensor<E>,
    y: &LabelSequence,
    frames: usize,
) -> Result<Tensor<E>> {
    let dims = score_dims(h, frames, y)?;
    check_lattice(log_den, dims, "log denominator")?;
    check_lattice(alpha, dims, "alpha")?;
    check_lattice(beta, dims, "beta")?;
    let mut dh = Tensor::named_zeros(h.tracker(), h.shape(), "dh")?;
    gradient_into(
        h.data(),
        log_den.data(),
        alpha.data(),
        beta.data(),
        dims,
        y.labels(),
        dh.data_mut(),
    )?;
    Ok(dh)
}

/// Runs all four loss stages for one unpadded sample.
pub fn transducer_loss_sample<E: Element>(
    h: &Tensor<E>,
    y: &LabelSequence,
) -> Result<(E, Tensor<E>)> {
    if h.rank() == 3 && h.shape()[1] != y.len() + 1 {
        return Err(Error::InvalidInput(format!(
            "scores have {} lattice rows but {} labels were given",
            h.shape()[1],
            y.len()
        )));
    }
    let frames = h.shape()[0];
    transducer_loss_masked(h, y, frames)
}

/// Runs all four loss stages on a padded sample.
pub fn transducer_loss_masked<E: Element>(
    h: &Tensor<E>,
    y: &LabelSequence,
    frames: usize,
) -> Result<(E, Tensor<E>)> {
    let vars = lattice_vars(h, y, frames)?;
    let loss = loss_value(&vars.beta)?;
    let dh = loss_gradient_masked(h, &vars.log_den, &vars.alpha, &vars.beta, y, frames)?;
    Ok((loss, dh))
}

/// First two stages bundled: log denominator plus both lattices.
pub fn lattice_vars<E: Element>(
    h: &Tensor<E>,
    y: &LabelSequence,
    frames: usize,
) -> Result<LatticeVars<E>> {
    score_dims(h, frames, y)?;
    let log_den = log_denominator(h)?;
    let (alpha, beta) = forward_backward_masked(h, &log_den, y, frames)?;
    Ok(LatticeVars {
        log_den,
        alpha,
        beta,
    })
}

/// Loss of uniform scores, where every alignment has probability `V^-(T+U)`:
/// `(T+U)·ln V − ln C(T+U−1, U)`.
pub fn uniform_logit_loss(frames: usize, labels: usize, vocab: usize) -> f64 {
    let steps = (frames + labels) as f64;
    let paths = crate::oracle::count_paths(frames, labels) as f64;
    steps * (vocab as f64).ln() - paths.ln()
}

/// Zero scores of shape `[frames, labels+1, vocab]`, the uniform-logit case.
pub fn uniform_scores<E: Element>(
    tracker: &MemoryTracker,
    frames: usize,
    labels: usize,
    vocab: usize,
) -> Result<Tensor<E>> {
    Tensor::zeros(tracker, &[frames, labels + 1, vocab])
}
