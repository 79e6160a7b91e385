//! Minimal reverse-mode differentiation for the image generator.
//!
//! A [`Tape`] records every operation of one optimization step. Parameters
//! live in a [`ParamStore`]; [`Tape::backward`] writes `d loss / d theta`
//! into the store's gradient buffers, and [`ParamStore::adam_step`] consumes
//! them.

mod conv;
mod network;
mod params;
mod tensor;

pub use network::{Network, NetworkConfig};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use tensor::Tensor;

use conv::ConvGeometry;

use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geo: ConvGeometry,
        cols: Vec<f64>,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    ChannelNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Upsample {
        input: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    SigmoidScaled {
        input: Var,
        scale: f64,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    Add {
        a: Var,
        b: Var,
    },
    SumSquares {
        input: Var,
    },
    /// Scalar function of its parents whose local gradients were computed
    /// together with the value.
    Scalar {
        parents: Vec<(Var, Vec<f64>)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records parameter `id`; repeated calls return the same node so that
    /// several forward passes share one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.params.get(id.0) {
            return *v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        self.params[id.0] = Some(v);
        v
    }

    /// Circular-padded convolution; `weight` is `[out, in, k, k]`, `bias` is
    /// `[out]`. Output is `[out, h / stride, w / stride]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let wshape = self.value(weight).shape().to_vec();
        let &[out_ch, in_ch, k, k2] = wshape.as_slice() else {
            return Err(Error::Autodiff(format!(
                "conv weight must be 4-D, got {wshape:?}"
            )));
        };
        if in_ch != c || k != k2 || k % 2 == 0 {
            return Err(Error::Autodiff(format!(
                "conv weight {wshape:?} incompatible with input of {c} channels"
            )));
        }
        if self.value(bias).len() != out_ch {
            return Err(Error::Autodiff("conv bias length mismatch".into()));
        }
        if stride == 0 || h % stride != 0 || w % stride != 0 {
            return Err(Error::Autodiff(format!(
                "input {h}x{w} not divisible by stride {stride}"
            )));
        }
        let geo = ConvGeometry {
            in_channels: c,
            height: h,
            width: w,
            kernel: k,
            stride,
        };
        let (out, cols) = conv::conv_forward(
            &geo,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![out_ch, geo.out_height(), geo.out_width()], out)?;
        let rg = self.requires(input) || self.requires(weight) || self.requires(bias);
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                geo,
                cols,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        self.push(value, Op::LeakyRelu { input, slope }, rg)
    }

    /// Normalizes every channel to zero mean and unit variance over its
    /// spatial positions, then applies `gamma[c] * xhat + beta[c]`
    /// (batch normalization with a batch of one).
    pub fn channel_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Autodiff(format!(
                "channel_norm needs {c} scales and shifts, got {} and {}",
                self.value(gamma).len(),
                self.value(beta).len()
            )));
        }
        let n = h * w;
        let x = self.value(input).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let plane = &x[ch * n..(ch + 1) * n];
            let mean = plane.iter().sum::<f64>() / n as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[ch] = is;
            for (i, &v) in plane.iter().enumerate() {
                let xh = (v - mean) * is;
                xhat[ch * n + i] = xh;
                out[ch * n + i] = g[ch] * xh + b[ch];
            }
        }
        let value = Tensor::new(vec![c, h, w], out)?;
        let rg = self.requires(input) || self.requires(gamma) || self.requires(beta);
        Ok(self.push(
            value,
            Op::ChannelNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Nearest-neighbour upsampling by two in both spatial axes.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let data = conv::upsample_nearest2(self.value(input).data(), c, h, w);
        let value = Tensor::new(vec![c, 2 * h, 2 * w], data)?;
        let rg = self.requires(input);
        Ok(self.push(value, Op::Upsample { input }, rg))
    }

    /// Channel concatenation of two feature maps.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::Autodiff(format!(
                "concat spatial mismatch {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Concat { a, b }, rg))
    }

    /// `scale * sigmoid(x)`.
    pub fn sigmoid_scaled(&mut self, input: Var, scale: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| scale * sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        self.push(value, Op::SigmoidScaled { input, scale }, rg)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| factor * v).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.requires(input);
        self.push(value, Op::Scale { input, factor }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Autodiff(format!(
                "add shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// `sum_i x_i^2` as a scalar.
    pub fn sum_squares(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().map(|v| v * v).sum();
        let rg = self.requires(input);
        self.push(Tensor::scalar(s), Op::SumSquares { input }, rg)
    }

    /// Records a scalar whose value and local gradients (one per parent, same
    /// length as the parent's value) were computed by the caller.
    pub fn scalar_fn(&mut self, value: f64, parents: Vec<(Var, Vec<f64>)>) -> Result<Var> {
        for (v, g) in &parents {
            if self.value(*v).len() != g.len() {
                return Err(Error::Autodiff(format!(
                    "local gradient of length {} for a parent with {} values",
                    g.len(),
                    self.value(*v).len()
                )));
            }
        }
        let rg = parents.iter().any(|(v, _)| self.requires(*v));
        Ok(self.push(Tensor::scalar(value), Op::Scalar { parents }, rg))
    }

    /// Back-propagates from the scalar `loss`, overwriting the gradient
    /// buffers of every parameter recorded on this tape.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Autodiff(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        store.zero_grad();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let acc = |grads: &mut Vec<Option<Vec<f64>>>, v: Var, f: &dyn Fn(&mut [f64])| {
                if !self.requires(v) {
                    return;
                }
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geo,
                    cols,
                } => {
                    let w = self.value(*weight).data();
                    if self.requires(*weight) {
                        acc(&mut grads, *weight, &|slot| {
                            conv::conv_backward(geo, cols, w, &g, Some(slot), None, None)
                        });
                    }
                    if self.requires(*bias) {
                        acc(&mut grads, *bias, &|slot| {
                            conv::conv_backward(geo, cols, w, &g, None, Some(slot), None)
                        });
                    }
                    if self.requires(*input) {
                        acc(&mut grads, *input, &|slot| {
                            conv::conv_backward(geo, cols, w, &g, None, None, Some(slot))
                        });
                    }
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.value(*input).data();
                    acc(&mut grads, *input, &|slot| {
                        for ((s, &gv), &xv) in slot.iter_mut().zip(&g).zip(x) {
                            *s += if xv > 0.0 { gv } else { slope * gv };
                        }
                    });
                }
                Op::ChannelNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let c = inv_std.len();
                    let n = xhat.len() / c;
                    let sums: Vec<(f64, f64)> = (0..c)
                        .map(|ch| {
                            let r = ch * n..(ch + 1) * n;
                            let sg: f64 = g[r.clone()].iter().sum();
                            let sgx: f64 =
                                g[r.clone()].iter().zip(&xhat[r]).map(|(a, b)| a * b).sum();
                            (sg, sgx)
                        })
                        .collect();
                    acc(&mut grads, *beta, &|slot| {
                        for (s, (sg, _)) in slot.iter_mut().zip(&sums) {
                            *s += sg;
                        }
                    });
                    acc(&mut grads, *gamma, &|slot| {
                        for (s, (_, sgx)) in slot.iter_mut().zip(&sums) {
                            *s += sgx;
                        }
                    });
                    let gm = self.value(*gamma).data();
                    acc(&mut grads, *input, &|slot| {
                        // d x = gamma inv_std / n (n g - sum g - xhat sum(g xhat))
                        for ch in 0..c {
                            let (sg, sgx) = sums[ch];
                            let k = gm[ch] * inv_std[ch] / n as f64;
                            for i in ch * n..(ch + 1) * n {
                                slot[i] += k * (n as f64 * g[i] - sg - xhat[i] * sgx);
                            }
                        }
                    });
                }
                Op::Upsample { input } => {
                    let (c, h, w) = self.value(*input).chw()?;
                    acc(&mut grads, *input, &|slot| {
                        conv::upsample_nearest2_backward(&g, c, h, w, slot)
                    });
                }
                Op::Concat { a, b } => {
                    let na = self.value(*a).len();
                    acc(&mut grads, *a, &|slot| add_into(slot, &g[..na]));
                    acc(&mut grads, *b, &|slot| add_into(slot, &g[na..]));
                }
                Op::SigmoidScaled { input, scale } => {
                    let y = node.value.data();
                    acc(&mut grads, *input, &|slot| {
                        for ((s, &gv), &yv) in slot.iter_mut().zip(&g).zip(y) {
                            *s += gv * yv * (1.0 - yv / scale);
                        }
                    });
                }
                Op::Scale { input, factor } => {
                    acc(&mut grads, *input, &|slot| {
                        for (s, &gv) in slot.iter_mut().zip(&g) {
                            *s += factor * gv;
                        }
                    });
                }
                Op::Add { a, b } => {
                    acc(&mut grads, *a, &|slot| add_into(slot, &g));
                    acc(&mut grads, *b, &|slot| add_into(slot, &g));
                }
                Op::SumSquares { input } => {
                    let x = self.value(*input).data();
                    let up = g[0];
                    acc(&mut grads, *input, &|slot| {
                        for (s, &xv) in slot.iter_mut().zip(x) {
                            *s += 2.0 * up * xv;
                        }
                    });
                }
                Op::Scalar { parents } => {
                    let up = g[0];
                    for (v, local) in parents {
                        acc(&mut grads, *v, &|slot| {
                            for (s, &l) in slot.iter_mut().zip(local) {
                                *s += up * l;
                            }
                        });
                    }
                }
            }
        }
        store.mark_grad_ready();
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add(
            "theta",
            Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
        );
        (store, id)
    }

    #[test]
    fn quadratic_gradient_is_theta() {
        let (mut store, id) = store_with(&[1.5, -2.0, 0.25]);
        let mut tape = Tape::new();
        let t = tape.param(&store, id);
        let s = tape.sum_squares(t);
        let loss = tape.scale(s, 0.5);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn constant_loss_has_zero_grad() {
        let (mut store, id) = store_with(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let _ = tape.param(&store, id);
        let c = tape.constant(Tensor::scalar(3.0));
        tape.backward(c, &mut store).unwrap();
        assert!(store.grad(id).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let (mut store, id) = store_with(&[1.0, 2.0]);
        let mut tape = Tape::new();
        let t = tape.param(&store, id);
        assert!(tape.backward(t, &mut store).is_err());
    }

    #[test]
    fn param_node_is_shared() {
        let (mut store, id) = store_with(&[3.0]);
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        // loss = a^2 + a^2 -> grad 4a
        let sa = tape.sum_squares(a);
        let sb = tape.sum_squares(b);
        let loss = tape.add(sa, sb).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(id), &[12.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
