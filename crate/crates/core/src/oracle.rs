//! Independent reference computations used to check the loss and gradients:
//! exhaustive alignment enumeration, path counting and central differences.
//! Everything here runs in `f64` regardless of the engine precision.

use crate::error::{Error, Result};
use crate::loss::{LabelSequence, BLANK};
use crate::tensor::{kernels, Element, Tensor};

/// Largest number of alignments [`enumerate_paths_loss`] will visit.
pub const MAX_PATHS: u128 = 1_000_000;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const FD_REL_TOL: f64 = 1e-6;
pub const FD_ABS_TOL: f64 = 1e-8;

/// One monotone alignment through the lattice as `(t, u, token)` emissions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub steps: Vec<(usize, usize, usize)>,
}

/// Number of alignments of `frames` frames and `labels` labels,
/// `C(frames + labels − 1, labels)`.
pub fn count_paths(frames: usize, labels: usize) -> u128 {
    assert!(frames >= 1, "at least one frame is required");
    let n = (frames + labels - 1) as u128;
    let k = labels.min(frames - 1) as u128;
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Calls `visit` once per alignment, in depth-first order (blank first).
pub fn for_each_path(frames: usize, labels: &[usize], mut visit: impl FnMut(&AlignmentPath)) {
    fn walk(
        t: usize,
        u: usize,
        frames: usize,
        labels: &[usize],
        path: &mut AlignmentPath,
        visit: &mut dyn FnMut(&AlignmentPath),
    ) {
        if t == frames - 1 && u == labels.len() {
            path.steps.push((t, u, BLANK));
            visit(path);
            path.steps.pop();
            return;
        }
        if t < frames - 1 {
            path.steps.push((t, u, BLANK));
            walk(t + 1, u, frames, labels, path, visit);
            path.steps.pop();
        }
        if u < labels.len() {
            path.steps.push((t, u, labels[u]));
            walk(t, u + 1, frames, labels, path, visit);
            path.steps.pop();
        }
    }
    let mut path = AlignmentPath {
        steps: Vec::with_capacity(frames + labels.len()),
    };
    walk(0, 0, frames, labels, &mut path, &mut visit);
}

/// Log-space pairwise (tree) reduction.
pub fn log_sum_pairwise(values: &[f64]) -> f64 {
    match values.len() {
        0 => f64::NEG_INFINITY,
        1 => values[0],
        n => {
            let (l, r) = values.split_at(n / 2);
            kernels::log_add_exp(log_sum_pairwise(l), log_sum_pairwise(r))
        }
    }
}

/// Log-probabilities of every alignment of an unpadded sample, in
/// [`for_each_path`] order.
pub fn path_log_probs<E: Element>(
    h: &Tensor<E>,
    log_den: &Tensor<E>,
    y: &LabelSequence,
) -> Result<Vec<f64>> {
    if h.rank() != 3 || h.shape()[1] != y.len() + 1 || log_den.shape() != &h.shape()[..2] {
        return Err(Error::InvalidShape(format!(
            "oracle needs unpadded scores [T, U+1, V]; got h {:?}, log_den {:?} for {} labels",
            h.shape(),
            log_den.shape(),
            y.len()
        )));
    }
    let frames = h.shape()[0];
    let paths = count_paths(frames, y.len());
    if paths > MAX_PATHS {
        return Err(Error::InstanceTooLarge {
            paths,
            limit: MAX_PATHS,
        });
    }
    let (u1, v) = (h.shape()[1], h.shape()[2]);
    let (hd, ld) = (h.data(), log_den.data());
    let lp =
        |t: usize, u: usize, k: usize| hd[(t * u1 + u) * v + k].widen() - ld[t * u1 + u].widen();

    let mut out = Vec::with_capacity(paths as usize);
    for_each_path(frames, y.labels(), |p| {
        out.push(p.steps.iter().map(|&(t, u, k)| lp(t, u, k)).sum());
    });
    Ok(out)
}

/// Loss `−ln Σ_paths Π_steps p(token | t, u)` by brute force.
pub fn enumerate_paths_loss<E: Element>(
    h: &Tensor<E>,
    log_den: &Tensor<E>,
    y: &LabelSequence,
) -> Result<f64> {
    let probs = path_log_probs(h, log_den, y)?;
    Ok(-log_sum_pairwise(&probs))
}

/// Central differences of `f` at `x`, one element at a time.
pub fn finite_diff(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    eps: f64,
) -> Result<Tensor<f64>> {
    let mut probe = x.try_clone()?;
    let mut grad = Tensor::zeros(x.tracker(), x.shape())?;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// First element where an analytic gradient departs from a numeric one.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Per-element check `|g − n| ≤ max(1e−6·|g|, 1e−8)`.
pub fn check_gradient<E: Element>(
    analytic: &Tensor<E>,
    numeric: &Tensor<f64>,
) -> std::result::Result<(), GradientMismatch> {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    for (index, (&g, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let g = g.widen();
        let tol = (FD_REL_TOL * g.abs()).max(FD_ABS_TOL);
        if (g - n).abs() > tol || !g.is_finite() {
            return Err(GradientMismatch {
                index,
                analytic: g,
                numeric: n,
            });
        }
    }
    Ok(())
}
