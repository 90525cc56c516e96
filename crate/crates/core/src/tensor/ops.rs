use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Row-major matrix product `a [m,k] × b [k,n] → [m,n]`.
pub fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::InvalidShape(format!(
            "matmul of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = Tensor::zeros(a.tracker(), &[m, n])?;
    kernels::gemm_nn(a.data(), b.data(), out.data_mut(), m, k, n);
    Ok(out)
}

/// Max-shifted log-sum-exp over the last axis. A rank-1 input yields shape `[1]`.
pub fn logsumexp_last<E: Element>(t: &Tensor<E>) -> Result<Tensor<E>> {
    let (&v, lead) = t
        .shape()
        .split_last()
        .ok_or_else(|| Error::InvalidShape("empty shape".into()))?;
    let out_shape: Vec<usize> = if lead.is_empty() {
        vec![1]
    } else {
        lead.to_vec()
    };
    let mut out = Tensor::zeros(t.tracker(), &out_shape)?;
    for (dst, row) in out.data_mut().iter_mut().zip(t.data().chunks_exact(v)) {
        *dst = kernels::logsumexp(row);
    }
    Ok(out)
}

/// Copies the leading hyper-rectangle `prefix` of `t` into a new tensor.
pub fn crop<E: Element>(t: &Tensor<E>, prefix: &[usize]) -> Result<Tensor<E>> {
    super::check_prefix(t.shape(), prefix)?;
    let src = t.data();
    let shape = t.shape();
    Tensor::from_parts(t.tracker(), prefix, |d, _| {
        copy_prefix(src, shape, prefix, d)
    })
}

/// Walks the rows (last-axis runs) of the `prefix` region of a row-major
/// array with extents `shape`, yielding (source offset, run length).
fn prefix_rows(shape: &[usize], prefix: &[usize], mut visit: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let run = prefix[rank - 1];
    let outer = &prefix[..rank - 1];
    let rows: usize = outer.iter().product();
    let mut idx = vec![0usize; rank - 1];
    for _ in 0..rows {
        let mut off = 0;
        for (d, &i) in idx.iter().enumerate() {
            off = off * shape[d] + i;
        }
        visit(off * shape[rank - 1], run);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < outer[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

pub(crate) fn copy_prefix<E: Copy>(src: &[E], shape: &[usize], prefix: &[usize], dst: &mut Vec<E>) {
    prefix_rows(shape, prefix, |off, run| {
        dst.extend_from_slice(&src[off..off + run])
    });
}

pub(crate) fn scatter_prefix<E: Copy>(src: &[E], prefix: &[usize], dst: &mut [E], shape: &[usize]) {
    let mut pos = 0;
    prefix_rows(shape, prefix, |off, run| {
        dst[off..off + run].copy_from_slice(&src[pos..pos + run]);
        pos += run;
    });
}

/// Slice-level numeric kernels shared by the compute and loss modules.
///
/// Every kernel visits the reduction axis in a fixed order that does not
/// depend on how many rows are processed, so a row computed inside a batch
/// is bit-identical to the same row computed alone.
pub(crate) mod kernels {
    use crate::tensor::Element;

    const LANES: usize = 8;

    /// Dot product with eight fixed partial sums.
    #[inline]
    pub fn dot<E: Element>(a: &[E], b: &[E]) -> E {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = [E::zero(); LANES];
        let ca = a.chunks_exact(LANES);
        let cb = b.chunks_exact(LANES);
        let (ra, rb) = (ca.remainder(), cb.remainder());
        for (x, y) in ca.zip(cb) {
            for l in 0..LANES {
                acc[l] = acc[l] + x[l] * y[l];
            }
        }
        let mut tail = E::zero();
        for (&x, &y) in ra.iter().zip(rb) {
            tail = tail + x * y;
        }
        let s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        let s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
        (s01 + s23) + tail
    }

    #[inline]
    pub fn axpy<E: Element>(alpha: E, x: &[E], y: &mut [E]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi = *yi + alpha * xi;
        }
    }

    /// `out[m,n] += a[m,k] · b[k,n]`
    pub fn gemm_nn<E: Element>(a: &[E], b: &[E], out: &mut [E], m: usize, k: usize, n: usize) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
                if aip != E::zero() {
                    axpy(aip, &b[p * n..(p + 1) * n], row);
                }
            }
        }
    }

    /// `out[m,n] = a[m,k] · b[n,k]ᵀ (+ bias[n])`
    pub fn gemm_nt<E: Element>(
        a: &[E],
        b: &[E],
        bias: Option<&[E]>,
        out: &mut [E],
        m: usize,
        k: usize,
        n: usize,
    ) {
        for i in 0..m {
            let ai = &a[i * k..(i + 1) * k];
            let row = &mut out[i * n..(i + 1) * n];
            for (j, o) in row.iter_mut().enumerate() {
                let v = dot(ai, &b[j * k..(j + 1) * k]);
                *o = match bias {
                    Some(bias) => v + bias[j],
                    None => v,
                };
            }
        }
    }

    /// `out[m,n] += Σ_r a[r,m] · b[r,n]`, rows visited in ascending order.
    pub fn gemm_tn<E: Element>(a: &[E], b: &[E], out: &mut [E], rows: usize, m: usize, n: usize) {
        for r in 0..rows {
            let br = &b[r * n..(r + 1) * n];
            for (i, &ari) in a[r * m..(r + 1) * m].iter().enumerate() {
                if ari != E::zero() {
                    axpy(ari, br, &mut out[i * n..(i + 1) * n]);
                }
            }
        }
    }

    /// `out[n] += Σ_r a[r,n]`
    pub fn sum_rows<E: Element>(a: &[E], out: &mut [E]) {
        let n = out.len();
        for row in a.chunks_exact(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o = *o + x;
            }
        }
    }

    #[inline]
    pub fn logsumexp<E: Element>(row: &[E]) -> E {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        if max == E::neg_infinity() || !max.is_finite() {
            return max;
        }
        let s: E = row.iter().map(|&x| (x - max).exp()).sum();
        max + s.ln()
    }

    /// `ln(eᵃ + eᵇ)` with `log_add_exp(-inf, x) = x`.
    #[inline]
    pub fn log_add_exp<E: Element>(a: E, b: E) -> E {
        if a == E::neg_infinity() {
            return b;
        }
        if b == E::neg_infinity() {
            return a;
        }
        let (hi, lo) = if a > b { (a, b) } else { (b, a) };
        hi + (lo - hi).exp().ln_1p()
    }
}
