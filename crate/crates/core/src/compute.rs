//! Joint network and output layer, forward and backward.
//!
//! The joint network combines acoustic and label encodings,
//! `z[t,u] = tanh(W_A·h_A[t] + W_L·h_L[u] + b_Z)`, and the output layer
//! projects each joint encoding to vocabulary scores, `h[t,u] = W_O·z[t,u] + b_O`.
//!
//! Every op exists in a per-sample form (`[T, U+1, ·]`) and a batched form
//! (`[B, T, U+1, ·]`). Both run the same row kernels, so a sample evaluated
//! alone reproduces its slice of a batched evaluation bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Element, MemoryTracker, Tensor};

/// Layer widths shared by the joint network and output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Joint encoding size `H`.
    pub hidden: usize,
    /// Acoustic encoding size `H_A`.
    pub acoustic: usize,
    /// Label encoding size `H_L`.
    pub label: usize,
    /// Vocabulary size `V`, blank included.
    pub vocab: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.acoustic == 0 || self.label == 0 {
            return Err(Error::InvalidInput(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        if self.vocab < 2 {
            return Err(Error::InvalidInput(format!(
                "vocabulary needs blank plus at least one label, got V={}",
                self.vocab
            )));
        }
        Ok(())
    }
}

/// Joint network parameters.
pub struct JointParams<E: Element> {
    /// `[H, H_A]`
    pub w_a: Tensor<E>,
    /// `[H, H_L]`
    pub w_l: Tensor<E>,
    /// `[H]`
    pub b_z: Tensor<E>,
}

impl<E: Element> JointParams<E> {
    pub fn new(w_a: Tensor<E>, w_l: Tensor<E>, b_z: Tensor<E>) -> Result<Self> {
        let ok = w_a.rank() == 2
            && w_l.rank() == 2
            && b_z.rank() == 1
            && w_a.shape()[0] == b_z.shape()[0]
            && w_l.shape()[0] == b_z.shape()[0];
        if !ok {
            return Err(Error::InvalidShape(format!(
                "joint params W_A {:?}, W_L {:?}, b_Z {:?}",
                w_a.shape(),
                w_l.shape(),
                b_z.shape()
            )));
        }
        Ok(Self { w_a, w_l, b_z })
    }

    pub fn zeros(tracker: &MemoryTracker, dims: &ModelDims) -> Result<Self> {
        Self::new(
            Tensor::zeros(tracker, &[dims.hidden, dims.acoustic])?,
            Tensor::zeros(tracker, &[dims.hidden, dims.label])?,
            Tensor::zeros(tracker, &[dims.hidden])?,
        )
    }

    pub fn hidden(&self) -> usize {
        self.b_z.shape()[0]
    }

    pub fn acoustic_dim(&self) -> usize {
        self.w_a.shape()[1]
    }

    pub fn label_dim(&self) -> usize {
        self.w_l.shape()[1]
    }

    pub fn bytes(&self) -> u64 {
        self.w_a.bytes() + self.w_l.bytes() + self.b_z.bytes()
    }
}

/// Output layer parameters.
pub struct OutputParams<E: Element> {
    /// `[V, H]`
    pub w_o: Tensor<E>,
    /// `[V]`
    pub b_o: Tensor<E>,
}

impl<E: Element> OutputParams<E> {
    pub fn new(w_o: Tensor<E>, b_o: Tensor<E>) -> Result<Self> {
        if w_o.rank() != 2 || b_o.rank() != 1 || w_o.shape()[0] != b_o.shape()[0] {
            return Err(Error::InvalidShape(format!(
                "output params W_O {:?}, b_O {:?}",
                w_o.shape(),
                b_o.shape()
            )));
        }
        Ok(Self { w_o, b_o })
    }

    pub fn zeros(tracker: &MemoryTracker, dims: &ModelDims) -> Result<Self> {
        Self::new(
            Tensor::zeros(tracker, &[dims.vocab, dims.hidden])?,
            Tensor::zeros(tracker, &[dims.vocab])?,
        )
    }

    pub fn vocab(&self) -> usize {
        self.b_o.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_o.shape()[1]
    }

    pub fn bytes(&self) -> u64 {
        self.w_o.bytes() + self.b_o.bytes()
    }
}

/// Encoder outputs for one sample: `h_a [T_b, H_A]` and `h_l [U_b+1, H_L]`
/// (the first label row belongs to the prepended blank).
pub struct SampleEncodings<E: Element> {
    pub h_a: Tensor<E>,
    pub h_l: Tensor<E>,
}

impl<E: Element> SampleEncodings<E> {
    pub fn new(h_a: Tensor<E>, h_l: Tensor<E>) -> Result<Self> {
        if h_a.rank() != 2 || h_l.rank() != 2 {
            return Err(Error::InvalidShape(format!(
                "sample encodings must be rank 2, got {:?} and {:?}",
                h_a.shape(),
                h_l.shape()
            )));
        }
        Ok(Self { h_a, h_l })
    }

    pub fn frames(&self) -> usize {
        self.h_a.shape()[0]
    }

    /// Lattice rows, `U_b + 1`.
    pub fn label_rows(&self) -> usize {
        self.h_l.shape()[0]
    }
}

pub struct OutputGrads<E: Element> {
    pub dz: Tensor<E>,
    pub d_w_o: Tensor<E>,
    pub d_b_o: Tensor<E>,
}

pub struct JointGrads<E: Element> {
    pub d_h_a: Tensor<E>,
    pub d_h_l: Tensor<E>,
    pub d_w_a: Tensor<E>,
    pub d_w_l: Tensor<E>,
    pub d_b_z: Tensor<E>,
}

fn check_joint_inputs<E: Element>(
    h_a: &Tensor<E>,
    h_l: &Tensor<E>,
    jp: &JointParams<E>,
) -> Result<(usize, usize, usize)> {
    let ok = h_a.rank() == 3
        && h_l.rank() == 3
        && h_a.shape()[0] == h_l.shape()[0]
        && h_a.shape()[2] == jp.acoustic_dim()
        && h_l.shape()[2] == jp.label_dim();
    if !ok {
        return Err(Error::InvalidShape(format!(
            "joint inputs h_A {:?}, h_L {:?} against W_A {:?}, W_L {:?}",
            h_a.shape(),
            h_l.shape(),
            jp.w_a.shape(),
            jp.w_l.shape()
        )));
    }
    Ok((h_a.shape()[0], h_a.shape()[1], h_l.shape()[1]))
}

/// Batched joint network: `h_a [B,T,H_A]`, `h_l [B,U+1,H_L]` → `z [B,T,U+1,H]`.
pub fn joint_forward_batch<E: Element>(
    h_a: &Tensor<E>,
    h_l: &Tensor<E>,
    jp: &JointParams<E>,
) -> Result<Tensor<E>> {
    let (b, t, u1) = check_joint_inputs(h_a, h_l, jp)?;
    let hidden = jp.hidden();
    let tracker = h_a.tracker();

    // One projection per frame and per label row, then broadcast-add.
    let mut proj_a = Tensor::named_zeros(tracker, &[b * t, hidden], "proj_a")?;
    kernels::gemm_nt(
        h_a.data(),
        jp.w_a.data(),
        None,
        proj_a.data_mut(),
        b * t,
        jp.acoustic_dim(),
        hidden,
    );
    let mut proj_l = Tensor::named_zeros(tracker, &[b * u1, hidden], "proj_l")?;
    kernels::gemm_nt(
        h_l.data(),
        jp.w_l.data(),
        None,
        proj_l.data_mut(),
        b * u1,
        jp.label_dim(),
        hidden,
    );

    let mut z = Tensor::named_zeros(tracker, &[b, t, u1, hidden], "z")?;
    let bias = jp.b_z.data();
    let (pa, pl) = (proj_a.data(), proj_l.data());
    for (row, out) in z.data_mut().chunks_exact_mut(hidden).enumerate() {
        let bi = row / (t * u1);
        let ti = (row / u1) % t;
        let ui = row % u1;
        let a = &pa[(bi * t + ti) * hidden..][..hidden];
        let l = &pl[(bi * u1 + ui) * hidden..][..hidden];
        for k in 0..hidden {
            out[k] = ((a[k] + l[k]) + bias[k]).tanh();
        }
    }
    Ok(z)
}

/// Per-sample joint network: `z [T_b, U_b+1, H]`.
pub fn joint_forward<E: Element>(
    enc: &SampleEncodings<E>,
    jp: &JointParams<E>,
) -> Result<Tensor<E>> {
    let (t, u1) = (enc.frames(), enc.label_rows());
    let h_a = enc.h_a.try_clone()?.reshape(&[1, t, enc.h_a.shape()[1]])?;
    let h_l = enc.h_l.try_clone()?.reshape(&[1, u1, enc.h_l.shape()[1]])?;
    let z = joint_forward_batch(&h_a, &h_l, jp)?;
    z.reshape(&[t, u1, jp.hidden()])
}

/// Output layer over any leading shape: `z [..., H]` → `h [..., V]`.
pub fn output_forward<E: Element>(z: &Tensor<E>, op: &OutputParams<E>) -> Result<Tensor<E>> {
    let hidden = op.hidden();
    if z.rank() < 2 || z.shape()[z.rank() - 1] != hidden {
        return Err(Error::InvalidShape(format!(
            "output layer input {:?} against W_O {:?}",
            z.shape(),
            op.w_o.shape()
        )));
    }
    let rows = z.len() / hidden;
    let v = op.vocab();
    let mut shape = z.shape().to_vec();
    *shape.last_mut().unwrap() = v;
    let mut h = Tensor::named_zeros(z.tracker(), &shape, "h")?;
    kernels::gemm_nt(
        z.data(),
        op.w_o.data(),
        Some(op.b_o.data()),
        h.data_mut(),
        rows,
        hidden,
        v,
    );
    Ok(h)
}

/// Output layer backward: `dz = dh·W_O`, `dW_O = Σ dh ⊗ z`, `db_O = Σ dh`.
pub fn output_backward<E: Element>(
    dh: &Tensor<E>,
    z: &Tensor<E>,
    op: &OutputParams<E>,
) -> Result<OutputGrads<E>> {
    let (v, hidden) = (op.vocab(), op.hidden());
    let lead_ok = dh.rank() == z.rank() && dh.shape()[..dh.rank() - 1] == z.shape()[..z.rank() - 1];
    if !lead_ok || dh.shape()[dh.rank() - 1] != v || z.shape()[z.rank() - 1] != hidden {
        return Err(Error::InvalidShape(format!(
            "output backward dh {:?}, z {:?} against W_O {:?}",
            dh.shape(),
            z.shape(),
            op.w_o.shape()
        )));
    }
    let rows = dh.len() / v;
    let tracker = dh.tracker();

    let mut dz = Tensor::named_zeros(tracker, z.shape(), "dz")?;
    kernels::gemm_nn(dh.data(), op.w_o.data(), dz.data_mut(), rows, v, hidden);
    let mut d_w_o = Tensor::named_zeros(tracker, &[v, hidden], "d_w_o")?;
    kernels::gemm_tn(dh.data(), z.data(), d_w_o.data_mut(), rows, v, hidden);
    let mut d_b_o = Tensor::named_zeros(tracker, &[v], "d_b_o")?;
    kernels::sum_rows(dh.data(), d_b_o.data_mut());
    Ok(OutputGrads { dz, d_w_o, d_b_o })
}

/// Batched joint backward. `dz` is consumed: it is overwritten in place with
/// the pre-activation gradient `dz ⊙ (1 − z²)`.
pub fn joint_backward_batch<E: Element>(
    mut dz: Tensor<E>,
    z: &Tensor<E>,
    h_a: &Tensor<E>,
    h_l: &Tensor<E>,
    jp: &JointParams<E>,
) -> Result<JointGrads<E>> {
    let (b, t, u1) = check_joint_inputs(h_a, h_l, jp)?;
    let hidden = jp.hidden();
    let expect = [b, t, u1, hidden];
    if dz.shape() != expect || z.shape() != expect {
        return Err(Error::InvalidShape(format!(
            "joint backward dz {:?}, z {:?}, expected {expect:?}",
            dz.shape(),
            z.shape()
        )));
    }
    let tracker = h_a.tracker();

    for (g, &zv) in dz.data_mut().iter_mut().zip(z.data()) {
        *g = *g * (E::one() - zv * zv);
    }
    let g = dz;

    let mut dproj_a = Tensor::named_zeros(tracker, &[b * t, hidden], "dproj_a")?;
    let mut dproj_l = Tensor::named_zeros(tracker, &[b * u1, hidden], "dproj_l")?;
    {
        let (da, dl) = (dproj_a.data_mut(), dproj_l.data_mut());
        for (row, gr) in g.data().chunks_exact(hidden).enumerate() {
            let bi = row / (t * u1);
            let ti = (row / u1) % t;
            let ui = row % u1;
            kernels::axpy(E::one(), gr, &mut da[(bi * t + ti) * hidden..][..hidden]);
            kernels::axpy(E::one(), gr, &mut dl[(bi * u1 + ui) * hidden..][..hidden]);
        }
    }
    drop(g);

    let (ha_dim, hl_dim) = (jp.acoustic_dim(), jp.label_dim());
    let mut d_h_a = Tensor::named_zeros(tracker, &[b, t, ha_dim], "d_h_a")?;
    kernels::gemm_nn(
        dproj_a.data(),
        jp.w_a.data(),
        d_h_a.data_mut(),
        b * t,
        hidden,
        ha_dim,
    );
    let mut d_h_l = Tensor::named_zeros(tracker, &[b, u1, hl_dim], "d_h_l")?;
    kernels::gemm_nn(
        dproj_l.data(),
        jp.w_l.data(),
        d_h_l.data_mut(),
        b * u1,
        hidden,
        hl_dim,
    );

    let mut d_w_a = Tensor::named_zeros(tracker, &[hidden, ha_dim], "d_w_a")?;
    kernels::gemm_tn(
        dproj_a.data(),
        h_a.data(),
        d_w_a.data_mut(),
        b * t,
        hidden,
        ha_dim,
    );
    let mut d_w_l = Tensor::named_zeros(tracker, &[hidden, hl_dim], "d_w_l")?;
    kernels::gemm_tn(
        dproj_l.data(),
        h_l.data(),
        d_w_l.data_mut(),
        b * u1,
        hidden,
        hl_dim,
    );
    let mut d_b_z = Tensor::named_zeros(tracker, &[hidden], "d_b_z")?;
    kernels::sum_rows(dproj_a.data(), d_b_z.data_mut());

    Ok(JointGrads {
        d_h_a,
        d_h_l,
        d_w_a,
        d_w_l,
        d_b_z,
    })
}

/// Per-sample joint backward; `z` is the retained forward activation.
pub fn joint_backward<E: Element>(
    dz: Tensor<E>,
    z: &Tensor<E>,
    enc: &SampleEncodings<E>,
    jp: &JointParams<E>,
) -> Result<JointGrads<E>> {
    let (t, u1) = (enc.frames(), enc.label_rows());
    let hidden = jp.hidden();
    let dz = dz.reshape(&[1, t, u1, hidden])?;
    let z4 = z.try_clone()?.reshape(&[1, t, u1, hidden])?;
    let h_a = enc.h_a.try_clone()?.reshape(&[1, t, enc.h_a.shape()[1]])?;
    let h_l = enc.h_l.try_clone()?.reshape(&[1, u1, enc.h_l.shape()[1]])?;
    let mut g = joint_backward_batch(dz, &z4, &h_a, &h_l, jp)?;
    g.d_h_a = g.d_h_a.reshape(&[t, jp.acoustic_dim()])?;
    g.d_h_l = g.d_h_l.reshape(&[u1, jp.label_dim()])?;
    Ok(g)
}
