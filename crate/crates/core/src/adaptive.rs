//! Adaptive graph structure learning: a slow attribute-driven macro module,
//! a short-term convolutional micro module, and their fusion into the
//! row-normalized adjacency used by the graph convolutions.

use crate::geo::{check_coords, haversine_km};
use crate::graph::Adjacency;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// The adjacencies of one forward pass.
pub struct GraphState {
    pub a_macro: Tensor,
    pub a_micro: Tensor,
    pub a_fused: Tensor,
}

/// Learnable map behind the macro module: node attributes → embedding.
pub struct MacroParams {
    pub phi_weight: Tensor, // [C, d_e]
    pub phi_bias: Tensor,   // [d_e]
}

/// Kernels of the micro module's two convolutions.
pub struct MicroKernels {
    /// [d_h, D, 1, 3] — feature channels to hidden, 1×3 over time, pad 1.
    pub k1: Tensor,
    /// [N, d_h, 1, T] — hidden channels to one output row per node.
    pub k2: Tensor,
}

/// Distance-kernel adjacency from station coordinates:
/// w_ij = exp(−d_ij²/σ²) on haversine kilometers, entries below
/// `threshold` zeroed, diagonal set to 1.
pub fn build_initial_adjacency(
    stations: &[(f64, f64)],
    sigma_km: f64,
    threshold: f64,
) -> Result<Adjacency> {
    if stations.is_empty() {
        return Err(Error::invalid(
            "build_initial_adjacency",
            "at least one station required",
        ));
    }
    if sigma_km <= 0.0 {
        return Err(Error::invalid(
            "build_initial_adjacency",
            format!("sigma must be positive, got {sigma_km}"),
        ));
    }
    for &(lat, lon) in stations {
        check_coords("build_initial_adjacency", lat, lon)?;
    }
    let n = stations.len();
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let d = haversine_km(stations[i], stations[j]);
            let v = (-d * d / (sigma_km * sigma_km)).exp();
            let v = if v < threshold { 0.0 } else { v };
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    Adjacency::new(n, w)
}

/// Macro-learned adjacency: similarity of linearly projected, time-averaged
/// node attributes, rectified and offset by the initial adjacency.
///
/// h = x_mean·Φ_w + Φ_b; A_l = ReLU(h·hᵀ/√d_e); returns A_l + A⁰.
pub fn macro_adjacency(x_mean: &Tensor, p: &MacroParams, a0: &Tensor) -> Result<Tensor> {
    let xs = x_mean.shape();
    let ws = p.phi_weight.shape();
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
        return Err(Error::ShapeMismatch {
            op: "macro_adjacency",
            lhs: xs,
            rhs: ws,
        });
    }
    let d_e = ws[1];
    let h = x_mean.linear(&p.phi_weight, &p.phi_bias)?;
    let sim = h
        .matmul(&h.transpose2d()?)?
        .mul_const(1.0 / (d_e as f64).sqrt())
        .relu();
    sim.add(a0)
}

/// Micro-learned adjacency from short-term dynamics: the window is laid out
/// as a 1×D×N×T image, convolved D→d_h with a padded 1×3 kernel over time,
/// rectified, then collapsed over time by a 1×T kernel into N output
/// channels forming an N×N matrix. Both convolutions are bias-free.
pub fn micro_adjacency(x: &Tensor, kernels: &MicroKernels) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 {
        return Err(Error::invalid(
            "micro_adjacency",
            format!("window must be [N, T, D], got {:?}", xs),
        ));
    }
    let (n, t, d) = (xs[0], xs[1], xs[2]);
    if t < 3 {
        return Err(Error::invalid(
            "micro_adjacency",
            format!("window length {t} too short, the 1x3 kernel needs T >= 3"),
        ));
    }
    let k1s = kernels.k1.shape();
    let k2s = kernels.k2.shape();
    if k1s.len() != 4 || k1s[1] != d || k1s[2] != 1 || k1s[3] != 3 {
        return Err(Error::ShapeMismatch {
            op: "micro_adjacency",
            lhs: k1s,
            rhs: vec![0, d, 1, 3],
        });
    }
    if k2s != vec![n, k1s[0], 1, t] {
        return Err(Error::ShapeMismatch {
            op: "micro_adjacency",
            lhs: k2s,
            rhs: vec![n, k1s[0], 1, t],
        });
    }
    let img = x.permute(&[2, 0, 1])?.reshape(&[1, d, n, t])?;
    let hid = img.conv2d(&kernels.k1, (1, 1), (0, 1))?.relu();
    let out = hid.conv2d(&kernels.k2, (1, 1), (0, 0))?; // [1, N, N, 1]
    out.reshape(&[n, n])
}

/// Fusion into the optimal adjacency: elementwise gate, rectify, then row
/// L1-normalization (all-zero rows stay all-zero).
pub fn fuse(a_macro: &Tensor, a_micro: &Tensor) -> Result<Tensor> {
    if a_macro.shape() != a_micro.shape() {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            lhs: a_macro.shape(),
            rhs: a_micro.shape(),
        });
    }
    a_macro.mul(a_micro)?.relu().row_l1_normalize(1e-8)
}
