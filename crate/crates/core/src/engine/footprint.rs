//! Analytic tensor sizes used for memory bounds and dry runs.

use crate::compute::ModelDims;
use crate::tensor::Precision;

/// `z`, `h` and `dh` of one sample on a `frames × rows` lattice.
pub fn sample_4d_bytes(frames: usize, rows: usize, dims: &ModelDims, precision: Precision) -> u64 {
    let cells = (frames * rows) as u64;
    cells * (dims.hidden + 2 * dims.vocab) as u64 * precision.bytes_per_element() as u64
}

/// Encoder inputs and encoder-input gradients of one sample at padded extents.
pub fn sample_3d_bytes(frames: usize, rows: usize, dims: &ModelDims, precision: Precision) -> u64 {
    let per = (frames * dims.acoustic + rows * dims.label) as u64;
    2 * per * precision.bytes_per_element() as u64
}

/// `z`, `h` and `dh` of a full padded batch.
pub fn batched_4d_bytes(
    batch: usize,
    frames: usize,
    rows: usize,
    dims: &ModelDims,
    precision: Precision,
) -> u64 {
    batch as u64 * sample_4d_bytes(frames, rows, dims, precision)
}

pub fn param_bytes(dims: &ModelDims, precision: Precision) -> u64 {
    let n = dims.hidden * dims.acoustic
        + dims.hidden * dims.label
        + dims.hidden
        + dims.vocab * dims.hidden
        + dims.vocab;
    (n * precision.bytes_per_element()) as u64
}

/// Upper bound on every tensor one sample pipeline can hold at once: input
/// copies, projections and their gradients, `z`, `h`, `dz`, `dh`, the three
/// lattices, encoder-input gradients and a full set of parameter gradients.
pub fn sample_working_set_bytes(
    frames: usize,
    rows: usize,
    dims: &ModelDims,
    precision: Precision,
) -> u64 {
    let bpe = precision.bytes_per_element() as u64;
    let (t, r) = (frames as u64, rows as u64);
    let (h, v) = (dims.hidden as u64, dims.vocab as u64);
    let inputs = t * dims.acoustic as u64 + r * dims.label as u64;
    let projections = (t + r) * h;
    let cells = t * r;
    let lattice = 3 * cells;
    let elements = 2 * inputs + 2 * projections + cells * (2 * h + 2 * v) + lattice;
    elements * bpe + param_bytes(dims, precision)
}
