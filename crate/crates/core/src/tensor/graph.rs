//! The autodiff tape: one [`Graph`] per forward pass.
//!
//! Nodes are appended in forward order, so reverse iteration over node ids is
//! a valid topological order for backpropagation. A node's gradient buffer is
//! complete by the time the backward sweep reaches it because every consumer
//! has a higher id.

use super::kernels;
use super::{BatchNormState, BnMode, Tensor, TensorError};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Output handle plus the affine-parameter leaves created by
/// [`Graph::batchnorm1d`], so callers can read gamma/beta gradients back.
#[derive(Debug, Clone, Copy)]
pub struct BnNodes {
    pub out: NodeId,
    pub gamma: NodeId,
    pub beta: NodeId,
}

struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

enum Op {
    Leaf,
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        padding: usize,
    },
    Deconv1d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        cache: BnCache,
    },
    Relu {
        x: NodeId,
    },
    ConcatChannels {
        xs: Vec<NodeId>,
    },
    MseLoss {
        pred: NodeId,
        target: NodeId,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode autodiff tape over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Binds a tensor as a leaf (copies its values and `requires_grad` flag).
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.clone(), t.requires_grad, Op::Leaf)
    }

    /// Binds an owned tensor as a leaf.
    pub fn leaf_owned(&mut self, t: Tensor) -> NodeId {
        let rg = t.requires_grad;
        self.push(t, rg, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target w.r.t. this node, if tracked.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn dims3(&self, op: &'static str, id: NodeId) -> Result<(usize, usize, usize), TensorError> {
        let s = self.nodes[id.0].value.shape();
        if s.len() != 3 {
            return Err(TensorError::Rank {
                op,
                expected: 3,
                shape: s.to_vec(),
            });
        }
        Ok((s[0], s[1], s[2]))
    }

    /// Stride-1 zero-padded 1-D cross-correlation.
    /// `x: [N, C_in, L]`, `w: [C_out, C_in, K]`, `b: [C_out]`
    /// -> `[N, C_out, L + 2*padding - K + 1]`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let (n, c_in, l_in) = self.dims3("conv1d", x)?;
        let ws = self.nodes[w.0].value.shape();
        if ws.len() != 3 {
            return Err(TensorError::Rank {
                op: "conv1d",
                expected: 3,
                shape: ws.to_vec(),
            });
        }
        let (c_out, wc_in, k) = (ws[0], ws[1], ws[2]);
        if wc_in != c_in {
            return Err(TensorError::Shape {
                op: "conv1d",
                msg: format!("weight expects {wc_in} input channels, input has {c_in}"),
            });
        }
        let bs = self.nodes[b.0].value.shape();
        if bs != [c_out] {
            return Err(TensorError::Shape {
                op: "conv1d",
                msg: format!("bias shape {bs:?} does not match {c_out} output channels"),
            });
        }
        let l_out = kernels::conv_out_len(l_in, k, padding)
            .filter(|&l| l > 0)
            .ok_or_else(|| TensorError::Shape {
                op: "conv1d",
                msg: format!("kernel {k} with padding {padding} does not fit input length {l_in}"),
            })?;
        let out = kernels::conv1d_forward(
            self.nodes[x.0].value.data(),
            n,
            c_in,
            l_in,
            self.nodes[w.0].value.data(),
            c_out,
            k,
            self.nodes[b.0].value.data(),
            padding,
            l_out,
        );
        let rg = self.any_requires(&[x, w, b]);
        Ok(self.push(
            Tensor::new([n, c_out, l_out], out).expect("conv1d output length"),
            rg,
            Op::Conv1d { x, w, b, padding },
        ))
    }

    /// Stride-1 transposed convolution (no padding), the adjoint of
    /// [`Graph::conv1d`] with padding 0 over the same weight buffer.
    /// `x: [N, C_in, L]`, `w: [C_in, C_out, K]`, `b: [C_out]`
    /// -> `[N, C_out, L + K - 1]`.
    pub fn deconv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (n, c_in, l_in) = self.dims3("deconv1d", x)?;
        let ws = self.nodes[w.0].value.shape();
        if ws.len() != 3 {
            return Err(TensorError::Rank {
                op: "deconv1d",
                expected: 3,
                shape: ws.to_vec(),
            });
        }
        let (wc_in, c_out, k) = (ws[0], ws[1], ws[2]);
        if wc_in != c_in {
            return Err(TensorError::Shape {
                op: "deconv1d",
                msg: format!("weight expects {wc_in} input channels, input has {c_in}"),
            });
        }
        let bs = self.nodes[b.0].value.shape();
        if bs != [c_out] {
            return Err(TensorError::Shape {
                op: "deconv1d",
                msg: format!("bias shape {bs:?} does not match {c_out} output channels"),
            });
        }
        if k == 0 {
            return Err(TensorError::Shape {
                op: "deconv1d",
                msg: "kernel size must be at least 1".into(),
            });
        }
        let l_out = l_in + k - 1;
        let w_conv = kernels::flip_deconv_weight(self.nodes[w.0].value.data(), c_in, c_out, k);
        let out = kernels::conv1d_forward(
            self.nodes[x.0].value.data(),
            n,
            c_in,
            l_in,
            &w_conv,
            c_out,
            k,
            self.nodes[b.0].value.data(),
            k - 1,
            l_out,
        );
        let rg = self.any_requires(&[x, w, b]);
        Ok(self.push(
            Tensor::new([n, c_out, l_out], out).expect("deconv1d output length"),
            rg,
            Op::Deconv1d { x, w, b },
        ))
    }

    /// Batch normalization over `[N, C, L]` per the state's mode. Train mode
    /// also updates the running statistics in `state` (forward-time side
    /// effect). Returns the output plus the gamma/beta leaves bound for this
    /// call so their gradients can be read back after `backward`.
    pub fn batchnorm1d(
        &mut self,
        x: NodeId,
        state: &mut BatchNormState,
    ) -> Result<BnNodes, TensorError> {
        let (n, c, l) = self.dims3("batchnorm1d", x)?;
        if c != state.channels() {
            return Err(TensorError::Shape {
                op: "batchnorm1d",
                msg: format!("state holds {} channels, input has {c}", state.channels()),
            });
        }
        if n * l == 0 {
            return Err(TensorError::Shape {
                op: "batchnorm1d",
                msg: "empty batch".into(),
            });
        }
        let train = state.mode == BnMode::Train;
        let fwd = if train {
            let fwd = kernels::batchnorm_train_forward(
                self.nodes[x.0].value.data(),
                n,
                c,
                l,
                state.gamma.tensor.data(),
                state.beta.tensor.data(),
                state.eps,
            );
            let (bm, bv) = (
                fwd.batch_mean.as_ref().expect("train stats"),
                fwd.batch_var.as_ref().expect("train stats"),
            );
            let m = state.momentum;
            for ch in 0..c {
                state.running_mean[ch] = (1.0 - m) * state.running_mean[ch] + m * bm[ch];
                state.running_var[ch] = (1.0 - m) * state.running_var[ch] + m * bv[ch];
            }
            fwd
        } else {
            kernels::batchnorm_eval_forward(
                self.nodes[x.0].value.data(),
                n,
                c,
                l,
                state.gamma.tensor.data(),
                state.beta.tensor.data(),
                &state.running_mean,
                &state.running_var,
                state.eps,
            )
        };
        let gamma = self.leaf(&state.gamma.tensor);
        let beta = self.leaf(&state.beta.tensor);
        let rg = self.any_requires(&[x, gamma, beta]);
        let out = self.push(
            Tensor::new([n, c, l], fwd.y).expect("batchnorm output length"),
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache: BnCache {
                    x_hat: fwd.x_hat,
                    inv_std: fwd.inv_std,
                    train,
                },
            },
        );
        Ok(BnNodes { out, gamma, beta })
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.nodes[x.0]
            .value
            .data()
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let shape = self.nodes[x.0].value.shape().to_vec();
        let rg = self.nodes[x.0].requires_grad;
        self.push(
            Tensor::new(shape, y).expect("relu preserves shape"),
            rg,
            Op::Relu { x },
        )
    }

    /// Concatenates `[N, C_i, L]` inputs along the channel axis.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::Shape {
                op: "concat_channels",
                msg: "needs at least one input".into(),
            });
        }
        let (n, _, l) = self.dims3("concat_channels", xs[0])?;
        let mut c_total = 0;
        for &x in xs {
            let (xn, xc, xl) = self.dims3("concat_channels", x)?;
            if xn != n || xl != l {
                return Err(TensorError::Shape {
                    op: "concat_channels",
                    msg: format!(
                        "inputs must agree on batch and length: [{n}, _, {l}] vs [{xn}, _, {xl}]"
                    ),
                });
            }
            c_total += xc;
        }
        let mut out = vec![0.0; n * c_total * l];
        for s in 0..n {
            let mut c_off = 0;
            for &x in xs {
                let xc = self.nodes[x.0].value.shape()[1];
                let src = &self.nodes[x.0].value.data()[s * xc * l..(s + 1) * xc * l];
                out[s * c_total * l + c_off * l..s * c_total * l + (c_off + xc) * l]
                    .copy_from_slice(src);
                c_off += xc;
            }
        }
        let rg = self.any_requires(xs);
        Ok(self.push(
            Tensor::new([n, c_total, l], out).expect("concat output length"),
            rg,
            Op::ConcatChannels { xs: xs.to_vec() },
        ))
    }

    /// Mean squared error over all elements; returns a scalar (shape `[1]`).
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        let ps = self.nodes[pred.0].value.shape();
        let ts = self.nodes[target.0].value.shape();
        if ps != ts {
            return Err(TensorError::Shape {
                op: "mse_loss",
                msg: format!("prediction shape {ps:?} vs target shape {ts:?}"),
            });
        }
        if self.nodes[pred.0].value.numel() == 0 {
            return Err(TensorError::Shape {
                op: "mse_loss",
                msg: "empty tensors".into(),
            });
        }
        let p = self.nodes[pred.0].value.data();
        let t = self.nodes[target.0].value.data();
        let mut sum = 0.0;
        for (a, b) in p.iter().zip(t) {
            let d = a - b;
            sum += d * d;
        }
        let val = sum / p.len() as f64;
        let rg = self.any_requires(&[pred, target]);
        Ok(self.push(Tensor::scalar(val), rg, Op::MseLoss { pred, target }))
    }

    fn any_requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Smallest |value| feeding any ReLU in this graph, if one exists. Used
    /// by the gradient checker to reject instances where a finite-difference
    /// step could cross the ReLU kink.
    pub fn relu_input_margin(&self) -> Option<f64> {
        let mut margin: Option<f64> = None;
        for node in &self.nodes {
            if let Op::Relu { x } = node.op {
                for v in self.nodes[x.0].value.data() {
                    let a = v.abs();
                    margin = Some(margin.map_or(a, |m: f64| m.min(a)));
                }
            }
        }
        margin
    }

    fn accumulate(&mut self, id: NodeId, g: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        let buf = node
            .grad
            .get_or_insert_with(|| vec![0.0; node.value.numel()]);
        for (d, s) in buf.iter_mut().zip(g) {
            *d += *s;
        }
    }

    /// Reverse sweep from a scalar loss node. Gradients accumulate on every
    /// node with `requires_grad`; read them via [`Graph::grad`]. Calling
    /// backward twice accumulates (callers reset by rebuilding the graph).
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NotScalar {
                shape: shape.to_vec(),
            });
        }
        if !self.nodes[loss.0].requires_grad {
            // Nothing reachable tracks gradients; a no-op backward is valid.
            return Ok(());
        }
        self.accumulate(loss, &[1.0]);
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let gout = self.nodes[i].grad.clone().expect("checked above");
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Conv1d { x, w, b, padding } => {
                    let (x, w, b, padding) = (*x, *w, *b, *padding);
                    let (n, c_in, l_in) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1], s[2])
                    };
                    let (c_out, k) = {
                        let s = self.nodes[w.0].value.shape();
                        (s[0], s[2])
                    };
                    let l_out = self.nodes[i].value.shape()[2];
                    let (gx, gw, gb) = kernels::conv1d_backward(
                        self.nodes[x.0].value.data(),
                        n,
                        c_in,
                        l_in,
                        self.nodes[w.0].value.data(),
                        c_out,
                        k,
                        padding,
                        l_out,
                        &gout,
                    );
                    self.accumulate(x, &gx);
                    self.accumulate(w, &gw);
                    self.accumulate(b, &gb);
                }
                Op::Deconv1d { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (n, c_in, l_in) = {
                        let s = self.nodes[x.0].value.shape();
                        (s[0], s[1], s[2])
                    };
                    let (c_out, k) = {
                        let s = self.nodes[w.0].value.shape();
                        (s[1], s[2])
                    };
                    let l_out = self.nodes[i].value.shape()[2];
                    let w_conv =
                        kernels::flip_deconv_weight(self.nodes[w.0].value.data(), c_in, c_out, k);
                    let (gx, gw_conv, gb) = kernels::conv1d_backward(
                        self.nodes[x.0].value.data(),
                        n,
                        c_in,
                        l_in,
                        &w_conv,
                        c_out,
                        k,
                        k - 1,
                        l_out,
                        &gout,
                    );
                    let gw = kernels::unflip_deconv_weight_grad(&gw_conv, c_in, c_out, k);
                    self.accumulate(x, &gx);
                    self.accumulate(w, &gw);
                    self.accumulate(b, &gb);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    let train = cache.train;
                    let s = self.nodes[x.0].value.shape();
                    let (n, c, l) = (s[0], s[1], s[2]);
                    let (gx, ggamma, gbeta) = {
                        let Op::BatchNorm { cache, .. } = &self.nodes[i].op else {
                            unreachable!()
                        };
                        kernels::batchnorm_backward(
                            &gout,
                            &cache.x_hat,
                            &cache.inv_std,
                            self.nodes[gamma.0].value.data(),
                            n,
                            c,
                            l,
                            train,
                        )
                    };
                    self.accumulate(x, &gx);
                    self.accumulate(gamma, &ggamma);
                    self.accumulate(beta, &gbeta);
                }
                Op::Relu { x } => {
                    let x = *x;
                    let gx: Vec<f64> = self.nodes[x.0]
                        .value
                        .data()
                        .iter()
                        .zip(&gout)
                        .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.accumulate(x, &gx);
                }
                Op::ConcatChannels { xs } => {
                    let xs = xs.clone();
                    let l = self.nodes[i].value.shape()[2];
                    let c_total = self.nodes[i].value.shape()[1];
                    let n = self.nodes[i].value.shape()[0];
                    let mut c_off = 0;
                    for x in xs {
                        let xc = self.nodes[x.0].value.shape()[1];
                        let mut gx = vec![0.0; n * xc * l];
                        for s in 0..n {
                            gx[s * xc * l..(s + 1) * xc * l].copy_from_slice(
                                &gout[s * c_total * l + c_off * l
                                    ..s * c_total * l + (c_off + xc) * l],
                            );
                        }
                        self.accumulate(x, &gx);
                        c_off += xc;
                    }
                }
                Op::MseLoss { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    let scale = 2.0 * gout[0] / self.nodes[pred.0].value.numel() as f64;
                    let gp: Vec<f64> = self.nodes[pred.0]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[target.0].value.data())
                        .map(|(p, t)| scale * (p - t))
                        .collect();
                    if self.nodes[target.0].requires_grad {
                        let gt: Vec<f64> = gp.iter().map(|g| -g).collect();
                        self.accumulate(target, &gt);
                    }
                    self.accumulate(pred, &gp);
                }
            }
        }
        Ok(())
    }
}
