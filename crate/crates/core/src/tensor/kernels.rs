//! Raw numeric kernels shared by the graph ops.
//!
//! Layouts (row-major):
//! - activations `[N, C, L]`: index `n*C*L + c*L + l`
//! - conv weights `[C_out, C_in, K]`: row `co` is the contiguous `C_in*K`
//!   patch the output channel dots against
//! - deconv weights `[C_in, C_out, K]`
//!
//! Convolutions are lowered to per-sample im2col buffers of shape
//! `[L_out, C_in*K]` so both the forward pass (dot) and the backward pass
//! (axpy) run over contiguous slices. Every reduction uses a fixed order, so
//! results are bit-deterministic for identical inputs.

/// Dot product with a fixed 8-lane accumulation order (auto-vectorizes
/// without changing the summation order between runs).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let j = i * 8;
        for lane in 0..8 {
            acc[lane] += a[j + lane] * b[j + lane];
        }
    }
    let mut tail = 0.0;
    for j in chunks * 8..a.len() {
        tail += a[j] * b[j];
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// `dst += a * src`, elementwise.
pub(crate) fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

/// Output length of a stride-1 cross-correlation: `L + 2P - K + 1`.
/// `None` when the kernel does not fit.
pub(crate) fn conv_out_len(l_in: usize, k: usize, padding: usize) -> Option<usize> {
    (l_in + 2 * padding + 1).checked_sub(k)
}

/// Fills `col` (`[l_out, c_in*k]`) with the zero-padded receptive fields of
/// one sample `x` (`[c_in, l_in]`).
fn im2col(
    x: &[f64],
    c_in: usize,
    l_in: usize,
    k: usize,
    padding: usize,
    l_out: usize,
    col: &mut [f64],
) {
    let m = c_in * k;
    debug_assert_eq!(col.len(), l_out * m);
    for lo in 0..l_out {
        let row = &mut col[lo * m..(lo + 1) * m];
        for ci in 0..c_in {
            let xc = &x[ci * l_in..(ci + 1) * l_in];
            for kk in 0..k {
                let pos = lo + kk;
                row[ci * k + kk] = if pos >= padding && pos - padding < l_in {
                    xc[pos - padding]
                } else {
                    0.0
                };
            }
        }
    }
}

/// Scatter-adds a column-gradient buffer back onto one sample's input
/// gradient (the adjoint of [`im2col`]).
fn col2im_add(
    gcol: &[f64],
    c_in: usize,
    l_in: usize,
    k: usize,
    padding: usize,
    l_out: usize,
    gx: &mut [f64],
) {
    let m = c_in * k;
    for lo in 0..l_out {
        let row = &gcol[lo * m..(lo + 1) * m];
        for ci in 0..c_in {
            let gxc = &mut gx[ci * l_in..(ci + 1) * l_in];
            for kk in 0..k {
                let pos = lo + kk;
                if pos >= padding && pos - padding < l_in {
                    gxc[pos - padding] += row[ci * k + kk];
                }
            }
        }
    }
}

/// Stride-1 zero-padded cross-correlation.
/// `x: [n, c_in, l_in]`, `w: [c_out, c_in, k]`, `b: [c_out]` -> `[n, c_out, l_out]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_forward(
    x: &[f64],
    n: usize,
    c_in: usize,
    l_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    b: &[f64],
    padding: usize,
    l_out: usize,
) -> Vec<f64> {
    let m = c_in * k;
    let mut out = vec![0.0; n * c_out * l_out];
    let mut col = vec![0.0; l_out * m];
    for s in 0..n {
        im2col(
            &x[s * c_in * l_in..(s + 1) * c_in * l_in],
            c_in,
            l_in,
            k,
            padding,
            l_out,
            &mut col,
        );
        let out_s = &mut out[s * c_out * l_out..(s + 1) * c_out * l_out];
        for co in 0..c_out {
            let wrow = &w[co * m..(co + 1) * m];
            for lo in 0..l_out {
                out_s[co * l_out + lo] = b[co] + dot(wrow, &col[lo * m..(lo + 1) * m]);
            }
        }
    }
    out
}

/// Gradients of [`conv1d_forward`] w.r.t. input, weights and bias.
/// Returns `(gx, gw, gb)`; im2col buffers are rebuilt rather than cached.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    x: &[f64],
    n: usize,
    c_in: usize,
    l_in: usize,
    w: &[f64],
    c_out: usize,
    k: usize,
    padding: usize,
    l_out: usize,
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = c_in * k;
    let mut gx = vec![0.0; n * c_in * l_in];
    let mut gw = vec![0.0; c_out * m];
    let mut gb = vec![0.0; c_out];
    let mut col = vec![0.0; l_out * m];
    let mut gcol = vec![0.0; l_out * m];
    for s in 0..n {
        im2col(
            &x[s * c_in * l_in..(s + 1) * c_in * l_in],
            c_in,
            l_in,
            k,
            padding,
            l_out,
            &mut col,
        );
        gcol.iter_mut().for_each(|v| *v = 0.0);
        let gout_s = &gout[s * c_out * l_out..(s + 1) * c_out * l_out];
        for co in 0..c_out {
            let gw_row = &mut gw[co * m..(co + 1) * m];
            for lo in 0..l_out {
                let g = gout_s[co * l_out + lo];
                gb[co] += g;
                axpy(gw_row, g, &col[lo * m..(lo + 1) * m]);
            }
        }
        for lo in 0..l_out {
            let grow = &mut gcol[lo * m..(lo + 1) * m];
            for co in 0..c_out {
                let g = gout_s[co * l_out + lo];
                axpy(grow, g, &w[co * m..(co + 1) * m]);
            }
        }
        col2im_add(
            &gcol,
            c_in,
            l_in,
            k,
            padding,
            l_out,
            &mut gx[s * c_in * l_in..(s + 1) * c_in * l_in],
        );
    }
    (gx, gw, gb)
}

/// Rewrites a deconv weight `[c_in, c_out, k]` as the conv weight
/// `[c_out, c_in, k]` with the tap order reversed. A stride-1 transposed
/// convolution equals a stride-1 convolution with `padding = k - 1` under
/// this exact permutation, so the conv kernels serve both ops.
pub(crate) fn flip_deconv_weight(w: &[f64], c_in: usize, c_out: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for ci in 0..c_in {
        for co in 0..c_out {
            for kk in 0..k {
                out[co * c_in * k + ci * k + (k - 1 - kk)] = w[ci * c_out * k + co * k + kk];
            }
        }
    }
    out
}

/// Inverse permutation of [`flip_deconv_weight`], used to route conv-layout
/// weight gradients back to the deconv layout.
pub(crate) fn unflip_deconv_weight_grad(
    gw_conv: &[f64],
    c_in: usize,
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; gw_conv.len()];
    for ci in 0..c_in {
        for co in 0..c_out {
            for kk in 0..k {
                out[ci * c_out * k + co * k + kk] = gw_conv[co * c_in * k + ci * k + (k - 1 - kk)];
            }
        }
    }
    out
}

/// Batch-norm forward products cached for the backward pass.
pub(crate) struct BnForward {
    pub y: Vec<f64>,
    /// `1 / sqrt(var + eps)` per channel (batch var in train, running in eval).
    pub inv_std: Vec<f64>,
    /// Normalized input, same layout as `x`.
    pub x_hat: Vec<f64>,
    /// Batch mean/variance (train mode only; used for running-stat updates).
    pub batch_mean: Option<Vec<f64>>,
    pub batch_var: Option<Vec<f64>>,
}

/// Train-mode batch norm over `[n, c, l]`: per-channel batch mean and biased
/// variance across the `n` and `l` axes.
pub(crate) fn batchnorm_train_forward(
    x: &[f64],
    n: usize,
    c: usize,
    l: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> BnForward {
    let count = (n * l) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            let base = s * c * l + ch * l;
            for i in 0..l {
                sum += x[base + i];
            }
        }
        mean[ch] = sum / count;
        let mut sq = 0.0;
        for s in 0..n {
            let base = s * c * l + ch * l;
            for i in 0..l {
                let d = x[base + i] - mean[ch];
                sq += d * d;
            }
        }
        var[ch] = sq / count;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = s * c * l + ch * l;
            for i in 0..l {
                let xh = (x[base + i] - mean[ch]) * inv_std[ch];
                x_hat[base + i] = xh;
                y[base + i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    BnForward {
        y,
        inv_std,
        x_hat,
        batch_mean: Some(mean),
        batch_var: Some(var),
    }
}

/// Eval-mode batch norm: a per-channel affine map using running statistics.
#[allow(clippy::too_many_arguments)] // mirrors the training kernel's signature
pub(crate) fn batchnorm_eval_forward(
    x: &[f64],
    n: usize,
    c: usize,
    l: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> BnForward {
    let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = s * c * l + ch * l;
            for i in 0..l {
                let xh = (x[base + i] - running_mean[ch]) * inv_std[ch];
                x_hat[base + i] = xh;
                y[base + i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    BnForward {
        y,
        inv_std,
        x_hat,
        batch_mean: None,
        batch_var: None,
    }
}

/// Backward for both batch-norm modes. In train mode the batch statistics
/// depend on `x`, which adds the two correction terms; in eval mode the map
/// is a constant affine transform per channel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batchnorm_backward(
    gy: &[f64],
    x_hat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    n: usize,
    c: usize,
    l: usize,
    train: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let count = (n * l) as f64;
    let mut gx = vec![0.0; gy.len()];
    let mut ggamma = vec![0.0; c];
    let mut gbeta = vec![0.0; c];
    for ch in 0..c {
        let mut sum_gy = 0.0;
        let mut sum_gy_xhat = 0.0;
        for s in 0..n {
            let base = s * c * l + ch * l;
            for i in 0..l {
                sum_gy += gy[base + i];
                sum_gy_xhat += gy[base + i] * x_hat[base + i];
            }
        }
        ggamma[ch] = sum_gy_xhat;
        gbeta[ch] = sum_gy;
        let scale = gamma[ch] * inv_std[ch];
        if train {
            let mean_gy = sum_gy / count;
            let mean_gy_xhat = sum_gy_xhat / count;
            for s in 0..n {
                let base = s * c * l + ch * l;
                for i in 0..l {
                    gx[base + i] =
                        scale * (gy[base + i] - mean_gy - x_hat[base + i] * mean_gy_xhat);
                }
            }
        } else {
            for s in 0..n {
                let base = s * c * l + ch * l;
                for i in 0..l {
                    gx[base + i] = scale * gy[base + i];
                }
            }
        }
    }
    (gx, ggamma, gbeta)
}
