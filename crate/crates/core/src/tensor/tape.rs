//! Reverse-mode differentiation over an explicitly recorded forward pass.
//!
//! Each forward pass builds a fresh [`Tape`]. Nodes are appended in
//! evaluation order, so walking them backwards is a valid topological order.

use rand::Rng;

use super::conv::Conv3dGeometry;
use super::{ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::train::focal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<S> {
    Input,
    Param {
        index: usize,
    },
    Conv3d {
        input: NodeId,
        kernel: NodeId,
        geom: Conv3dGeometry,
    },
    AddChannelBias {
        input: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    GlobalAvgPool(NodeId),
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Vec<S>,
    },
    Scale {
        input: NodeId,
        factor: S,
    },
    MulScalar {
        input: NodeId,
        scalar: NodeId,
    },
    Add(NodeId, NodeId),
    Sum(NodeId),
    Softmax(NodeId),
    FocalLoss {
        probs: NodeId,
        target: usize,
        alpha: f64,
        gamma: f64,
    },
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
}

#[derive(Debug, Default)]
pub struct Tape<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    // (param index, node) pairs; a parameter is recorded once per tape so
    // every use shares one gradient accumulator.
    params: Vec<(usize, String, NodeId)>,
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Records (or reuses) the node for a named parameter.
    pub fn param(&mut self, params: &ParamSet<S>, name: &str) -> Result<NodeId> {
        if let Some((_, _, id)) = self.params.iter().find(|(_, n, _)| n == name) {
            return Ok(*id);
        }
        let index = params
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        let value = params.get(name).expect("index exists").clone();
        let id = self.push(value, Op::Param { index });
        self.params.push((index, name.to_string(), id));
        Ok(id)
    }

    pub fn conv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<NodeId> {
        let geom = Conv3dGeometry::new(
            self.value(input).shape(),
            self.value(kernel).shape(),
            stride,
            padding,
        )?;
        let out = geom.forward(self.value(input).data(), self.value(kernel).data());
        let value = Tensor::from_parts(geom.output_shape().to_vec(), out);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                geom,
            },
        ))
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 0).
    pub fn add_channel_bias(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let b = self.value(bias);
        if b.rank() != 1 || b.shape()[0] != x.shape()[0] {
            return Err(Error::Dimension {
                axis: "channels",
                detail: format!("bias {:?} does not match input {:?}", b.shape(), x.shape()),
            });
        }
        let block = x.numel() / x.shape()[0];
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b.data()[i / block])
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(value, Op::AddChannelBias { input, bias }))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.max(S::zero()));
        self.push(value, Op::Relu(input))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(sigmoid);
        self.push(value, Op::Sigmoid(input))
    }

    /// [C, ...] -> [C], averaging everything past the channel axis.
    pub fn global_avg_pool(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let c = x.shape()[0];
        let block = x.numel() / c;
        let data = x
            .data()
            .chunks_exact(block)
            .map(|chunk| {
                let s: f64 = chunk.iter().map(|v| v.to_f64_lossy()).sum();
                S::from_f64_lossy(s / block as f64)
            })
            .collect();
        self.push(Tensor::from_parts(vec![c], data), Op::GlobalAvgPool(input))
    }

    /// `weight` [out, in] · `input` [in] + `bias` [out].
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if w.rank() != 2 || x.rank() != 1 || w.shape()[1] != x.shape()[0] {
            return Err(Error::Dimension {
                axis: "features",
                detail: format!("weight {:?} cannot map input {:?}", w.shape(), x.shape()),
            });
        }
        if b.shape() != [w.shape()[0]] {
            return Err(Error::Dimension {
                axis: "outputs",
                detail: format!("bias {:?} for weight {:?}", b.shape(), w.shape()),
            });
        }
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        let mut y = b.data().to_vec();
        S::gemm(out, inp, 1, w.data(), false, x.data(), false, &mut y, true);
        Ok(self.push(
            Tensor::from_parts(vec![out], y),
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    /// Inverted dropout: zeroes each element with probability `drop` and
    /// scales survivors by `1 / (1 - drop)`.
    pub fn dropout(&mut self, input: NodeId, drop: f64, rng: &mut impl Rng) -> Result<NodeId> {
        if !(0.0..1.0).contains(&drop) {
            return Err(Error::Config(format!("dropout probability {drop} outside [0, 1)")));
        }
        let scale = S::from_f64_lossy(1.0 / (1.0 - drop));
        let n = self.value(input).numel();
        let mask: Vec<S> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < drop {
                    S::zero()
                } else {
                    scale
                }
            })
            .collect();
        let x = self.value(input);
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(value, Op::Dropout { input, mask }))
    }

    pub fn scale(&mut self, input: NodeId, factor: S) -> NodeId {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale { input, factor })
    }

    /// Multiplies a tensor by a single-element node.
    pub fn mul_scalar(&mut self, input: NodeId, scalar: NodeId) -> Result<NodeId> {
        let s = self.value(scalar).item().ok_or_else(|| Error::Dimension {
            axis: "scalar",
            detail: format!("expected one element, got {:?}", self.value(scalar).shape()),
        })?;
        let value = self.value(input).map(|v| v * s);
        Ok(self.push(value, Op::MulScalar { input, scalar }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Dimension {
                axis: "elementwise",
                detail: format!("{:?} + {:?}", x.shape(), y.shape()),
            });
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.value(input).data().iter().map(|v| v.to_f64_lossy()).sum();
        self.push(Tensor::scalar(S::from_f64_lossy(s)), Op::Sum(input))
    }

    /// Softmax over a rank-1 tensor, with max subtraction.
    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        if x.rank() != 1 {
            return Err(Error::Dimension {
                axis: "classes",
                detail: format!("softmax expects a vector, got {:?}", x.shape()),
            });
        }
        let value = Tensor::from_parts(x.shape().to_vec(), softmax(x.data()));
        Ok(self.push(value, Op::Softmax(input)))
    }

    /// Focal loss of a probability vector against the true class index.
    pub fn focal_loss(
        &mut self,
        probs: NodeId,
        target: usize,
        alpha: f64,
        gamma: f64,
    ) -> Result<NodeId> {
        let p = self.value(probs);
        if p.rank() != 1 || target >= p.numel() {
            return Err(Error::Input(format!(
                "class {target} out of range for probabilities {:?}",
                p.shape()
            )));
        }
        let loss = focal::loss_value(p.data()[target].to_f64_lossy(), alpha, gamma);
        Ok(self.push(
            Tensor::scalar(S::from_f64_lossy(loss)),
            Op::FocalLoss {
                probs,
                target,
                alpha,
                gamma,
            },
        ))
    }

    /// Propagates d(loss)/d(node) back to every recorded parameter and adds
    /// it into `params`. Parameters not reached keep a zero gradient.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet<S>) -> Result<()> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        for (index, name, _) in &self.params {
            if params.index_of(name) != Some(*index) {
                return Err(Error::Contract(format!(
                    "parameter `{name}` was recorded from a different ParamSet"
                )));
            }
        }
        params.ensure_grads();

        let mut grads: Vec<Option<Vec<S>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param { index } => params.accumulate_grad(*index, &g),
                Op::Conv3d {
                    input,
                    kernel,
                    geom,
                } => {
                    let (gi, gk) = geom.backward(
                        self.value(*input).data(),
                        self.value(*kernel).data(),
                        &g,
                    );
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *kernel, gk);
                }
                Op::AddChannelBias { input, bias } => {
                    let c = self.value(*bias).numel();
                    let block = g.len() / c;
                    let gb = g
                        .chunks_exact(block)
                        .map(|chunk| chunk.iter().copied().sum())
                        .collect();
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *input, g);
                }
                Op::Relu(input) => {
                    let gi = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &y)| if y > S::zero() { d } else { S::zero() })
                        .collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::Sigmoid(input) => {
                    let gi = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&d, &y)| d * y * (S::one() - y))
                        .collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::GlobalAvgPool(input) => {
                    let n = self.value(*input).numel();
                    let block = n / g.len();
                    let inv = S::from_f64_lossy(1.0 / block as f64);
                    let gi = (0..n).map(|j| g[j / block] * inv).collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (out, inp) = (w.shape()[0], w.shape()[1]);
                    let mut gx = vec![S::zero(); inp];
                    S::gemm(inp, out, 1, w.data(), true, &g, false, &mut gx, false);
                    let mut gw = vec![S::zero(); out * inp];
                    S::gemm(out, 1, inp, &g, false, x.data(), false, &mut gw, false);
                    accumulate(&mut grads, *input, gx);
                    accumulate(&mut grads, *weight, gw);
                    accumulate(&mut grads, *bias, g);
                }
                Op::Dropout { input, mask } => {
                    let gi = g.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::Scale { input, factor } => {
                    let gi = g.iter().map(|&d| d * *factor).collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::MulScalar { input, scalar } => {
                    let s = self.value(*scalar).data()[0];
                    let x = self.value(*input).data();
                    let gs: S = g.iter().zip(x).map(|(&d, &v)| d * v).sum();
                    let gi = g.iter().map(|&d| d * s).collect();
                    accumulate(&mut grads, *input, gi);
                    accumulate(&mut grads, *scalar, vec![gs]);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sum(input) => {
                    let n = self.value(*input).numel();
                    accumulate(&mut grads, *input, vec![g[0]; n]);
                }
                Op::Softmax(input) => {
                    let y = node.value.data();
                    let dot: S = g.iter().zip(y).map(|(&d, &p)| d * p).sum();
                    let gi = g.iter().zip(y).map(|(&d, &p)| p * (d - dot)).collect();
                    accumulate(&mut grads, *input, gi);
                }
                Op::FocalLoss {
                    probs,
                    target,
                    alpha,
                    gamma,
                } => {
                    let p = self.value(*probs).data()[*target].to_f64_lossy();
                    let mut gp = vec![S::zero(); self.value(*probs).numel()];
                    gp[*target] = g[0] * S::from_f64_lossy(focal::loss_grad(p, *alpha, *gamma));
                    accumulate(&mut grads, *probs, gp);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], id: NodeId, delta: Vec<S>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Softmax with max subtraction.
pub fn softmax<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).to_f64_lossy().exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| S::from_f64_lossy(e / total)).collect()
}
