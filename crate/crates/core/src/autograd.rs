//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied during a forward pass as a
//! node holding its output value. Nodes are appended in evaluation order, so
//! walking the tape backwards visits each node after all of its consumers.
//! [`Graph::backward`] propagates from a scalar loss and adds the resulting
//! parameter gradients into a [`ParamStore`].
//!
//! ```
//! use avsync::autograd::Graph;
//! use avsync::params::ParamStore;
//! use avsync::tensor::Tensor;
//!
//! let mut store = ParamStore::new();
//! let id = store.insert("p", Tensor::vector(&[1.0, -2.0]).unwrap()).unwrap();
//! let mut g = Graph::new();
//! let p = g.param(&store, id);
//! let sq = g.mul(p, p).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss, &mut store).unwrap();
//! assert_eq!(store.grad(id).data(), &[2.0, -4.0]);
//! ```

use crate::error::{Error, Result};
use crate::ops::{self, Conv3dGeometry, DropoutMode};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{strides, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Var,
        geometry: Conv3dGeometry,
        /// Input patches gathered in the forward pass, reused by backward.
        cols: Vec<f64>,
    },
    Pointwise {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
        active: Vec<bool>,
    },
    Dropout {
        input: Var,
        mask: Vec<f64>,
    },
    MeanCells(Var),
    Softmax(Var),
    WeightedSum {
        features: Var,
        weights: Var,
    },
    Stack(Vec<Var>),
    Reshape(Var),
    Permute {
        input: Var,
        perm: Vec<usize>,
    },
    TileConcat {
        visual: Var,
        audio: Var,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
    },
    Sum(Var),
    Mul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Active sets imposed on successive relu calls, and the next index.
    relu_replay: Option<(Vec<Vec<bool>>, usize)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose k-th relu passes exactly the elements marked in
    /// `patterns[k]` instead of the positive ones. Replaying the patterns of
    /// a base point makes the network linear in each relu across nearby
    /// parameters, which is what finite differences need near kinks.
    pub fn with_relu_patterns(patterns: Vec<Vec<bool>>) -> Self {
        Graph {
            nodes: Vec::new(),
            relu_replay: Some((patterns, 0)),
        }
    }

    /// Active sets of every relu recorded so far, in call order.
    pub fn relu_patterns(&self) -> Vec<Vec<bool>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Relu { active, .. } => Some(active.clone()),
                _ => None,
            })
            .collect()
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

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A leaf bound to a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn conv3d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<Var> {
        let geometry =
            Conv3dGeometry::new(self.value(input).shape(), self.value(kernel).shape(), stride, pad)?;
        let b = self.value(bias);
        if b.shape() != [geometry.c_out] {
            return Err(Error::dim(format!(
                "conv3d bias must be [{}], got {:?}",
                geometry.c_out,
                b.shape()
            )));
        }
        let cols = geometry.im2col(self.value(input).data());
        let value = ops::conv3d_forward_cols(&geometry, &cols, self.value(kernel).data(), b.data());
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            },
            rg,
        ))
    }

    pub fn pointwise(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let value = ops::pointwise_conv(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            value,
            Op::Pointwise {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        if self.value(input).rank() != 1 {
            return Err(Error::dim(format!(
                "dense input must be rank 1, got {:?}",
                self.value(input).shape()
            )));
        }
        self.pointwise(input, weight, bias)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let n = self.value(input).len();
        let replayed = match &mut self.relu_replay {
            Some((patterns, next)) => {
                let p = patterns.get(*next).filter(|p| p.len() == n).cloned();
                *next += 1;
                p
            }
            None => None,
        };
        let x = self.value(input);
        let active = replayed.unwrap_or_else(|| x.data().iter().map(|&v| v > 0.0).collect());
        let data = x
            .data()
            .iter()
            .zip(&active)
            .map(|(&v, &on)| if on { v } else { 0.0 })
            .collect();
        let value = Tensor::from_parts(x.shape().to_vec(), data);
        let rg = self.rg(input);
        self.push(value, Op::Relu { input, active }, rg)
    }

    pub fn dropout(
        &mut self,
        input: Var,
        p: f64,
        mode: DropoutMode,
        rng: Option<&mut Rng>,
    ) -> Result<Var> {
        let (value, mask) = ops::dropout(self.value(input), p, mode, rng)?;
        let rg = self.rg(input);
        Ok(match mask {
            Some(mask) => self.push(value, Op::Dropout { input, mask }, rg),
            // identity: alias the input node
            None => input,
        })
    }

    /// Global average pooling of a `[T,H,W,C]` (or `[H,W,T,C]`) tensor to `[C]`.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let value = ops::global_avg_pool(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::MeanCells(input), rg))
    }

    /// Softmax along the trailing axis.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let value = ops::softmax(self.value(input))?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Softmax(input), rg))
    }

    /// `Σ_k weights[k] · features[k, :]`.
    pub fn weighted_sum(&mut self, features: Var, weights: Var) -> Result<Var> {
        let value = ops::weighted_sum_rows(self.value(features), self.value(weights))?;
        let rg = self.rg(features) || self.rg(weights);
        Ok(self.push(value, Op::WeightedSum { features, weights }, rg))
    }

    pub fn stack(&mut self, items: &[Var]) -> Result<Var> {
        let tensors: Vec<Tensor> = items.iter().map(|&v| self.value(v).clone()).collect();
        let value = ops::stack(&tensors)?;
        let rg = items.iter().any(|&v| self.rg(v));
        Ok(self.push(value, Op::Stack(items.to_vec()), rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Reshape(input), rg))
    }

    pub fn permute(&mut self, input: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(input).permute(perm)?;
        let rg = self.rg(input);
        Ok(self.push(
            value,
            Op::Permute {
                input,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    /// Replicates a `[T,Ca]` audio feature over every spatial cell of a
    /// `[H,W,T,Cv]` visual feature and concatenates on channels.
    pub fn tile_concat(&mut self, visual: Var, audio: Var) -> Result<Var> {
        let value = tile_concat(self.value(visual), self.value(audio))?;
        let rg = self.rg(visual) || self.rg(audio);
        Ok(self.push(value, Op::TileConcat { visual, audio }, rg))
    }

    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let loss = ops::cross_entropy(self.value(logits), label)?;
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, label }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.rg(input);
        self.push(value, Op::Sum(input), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{what} of shapes {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_parts(self.value(a).shape().to_vec(), data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        let rg = self.rg(input);
        self.push(value, Op::Scale(input, factor), rg)
    }

    /// Reverse-mode sweep from a one-element `loss`, adding parameter
    /// gradients into `store`. Existing gradients in the store are kept.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &gout, &mut grads, store);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        gout: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut ParamStore,
    ) {
        let mut send = |v: Var, g: Vec<f64>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => store.accumulate_grad(*id, gout),
            Op::Conv3d {
                input,
                kernel,
                bias,
                geometry,
                cols,
            } => {
                let gr = ops::conv3d_backward(
                    geometry,
                    cols,
                    self.value(*input).len(),
                    self.value(*kernel).data(),
                    gout,
                    self.rg(*input),
                );
                if let Some(gx) = gr.input {
                    send(*input, gx);
                }
                send(*kernel, gr.kernel);
                send(*bias, gr.bias);
            }
            Op::Pointwise {
                input,
                weight,
                bias,
            } => {
                let w = self.value(*weight);
                let (cin, cout) = (w.shape()[0], w.shape()[1]);
                let (gx, gw, gb) =
                    ops::pointwise_backward(self.value(*input).data(), w.data(), cin, cout, gout);
                send(*input, gx);
                send(*weight, gw);
                send(*bias, gb);
            }
            Op::Relu { input, active } => {
                let g = active
                    .iter()
                    .zip(gout)
                    .map(|(&on, &gv)| if on { gv } else { 0.0 })
                    .collect();
                send(*input, g);
            }
            Op::Dropout { input, mask } => {
                send(*input, mask.iter().zip(gout).map(|(m, g)| m * g).collect());
            }
            Op::MeanCells(input) => {
                let x = self.value(*input);
                let c = gout.len();
                let inv = 1.0 / (x.len() / c) as f64;
                let mut g = Vec::with_capacity(x.len());
                for _ in 0..x.len() / c {
                    g.extend(gout.iter().map(|v| v * inv));
                }
                send(*input, g);
            }
            Op::Softmax(input) => {
                let y = node.value.data();
                let k = *node.value.shape().last().expect("rank >= 1");
                let mut g = Vec::with_capacity(y.len());
                for (ys, gs) in y.chunks_exact(k).zip(gout.chunks_exact(k)) {
                    let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                    g.extend(ys.iter().zip(gs).map(|(yv, gv)| yv * (gv - dot)));
                }
                send(*input, g);
            }
            Op::WeightedSum { features, weights } => {
                let f = self.value(*features);
                let w = self.value(*weights).data();
                let c = gout.len();
                if self.rg(*features) {
                    let mut gf = Vec::with_capacity(f.len());
                    for &wk in w {
                        gf.extend(gout.iter().map(|g| wk * g));
                    }
                    send(*features, gf);
                }
                if self.rg(*weights) {
                    let gw = f
                        .data()
                        .chunks_exact(c)
                        .map(|row| row.iter().zip(gout).map(|(a, b)| a * b).sum())
                        .collect();
                    send(*weights, gw);
                }
            }
            Op::Stack(items) => {
                let each = gout.len() / items.len();
                for (v, chunk) in items.iter().zip(gout.chunks_exact(each)) {
                    send(*v, chunk.to_vec());
                }
            }
            Op::Reshape(input) => send(*input, gout.to_vec()),
            Op::Permute { input, perm } => {
                let in_shape = self.value(*input).shape();
                let in_strides = strides(in_shape);
                let out_shape = node.value.shape();
                let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                let mut g = vec![0.0; gout.len()];
                let mut index = vec![0usize; out_shape.len()];
                for &gv in gout {
                    let dst: usize = index.iter().zip(&mapped).map(|(i, s)| i * s).sum();
                    g[dst] = gv;
                    for axis in (0..out_shape.len()).rev() {
                        index[axis] += 1;
                        if index[axis] < out_shape[axis] {
                            break;
                        }
                        index[axis] = 0;
                    }
                }
                send(*input, g);
            }
            Op::TileConcat { visual, audio } => {
                let vs = self.value(*visual).shape();
                let (cells_hw, t, cv) = (vs[0] * vs[1], vs[2], vs[3]);
                let ca = self.value(*audio).shape()[1];
                let c = cv + ca;
                let mut gv = Vec::with_capacity(cells_hw * t * cv);
                let mut ga = vec![0.0; t * ca];
                for (cell, chunk) in gout.chunks_exact(c).enumerate() {
                    gv.extend_from_slice(&chunk[..cv]);
                    let ti = cell % t;
                    for (a, &g) in ga[ti * ca..(ti + 1) * ca].iter_mut().zip(&chunk[cv..]) {
                        *a += g;
                    }
                }
                send(*visual, gv);
                send(*audio, ga);
            }
            Op::CrossEntropy { logits, label } => {
                let z = self.value(*logits).data();
                let p = ops::softmax_slice(z).expect("two logits");
                let g = (0..2)
                    .map(|k| gout[0] * (p[k] - if k == *label { 1.0 } else { 0.0 }))
                    .collect();
                send(*logits, g);
            }
            Op::Sum(input) => {
                send(*input, vec![gout[0]; self.value(*input).len()]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga: Vec<f64> = bv.iter().zip(gout).map(|(x, g)| x * g).collect();
                let gb: Vec<f64> = av.iter().zip(gout).map(|(x, g)| x * g).collect();
                send(*a, ga);
                send(*b, gb);
            }
            Op::Add(a, b) => {
                send(*a, gout.to_vec());
                send(*b, gout.to_vec());
            }
            Op::Scale(input, factor) => {
                send(*input, gout.iter().map(|g| g * factor).collect());
            }
        }
    }
}

/// Forward of the audio replication + channel concatenation used by early fusion.
pub fn tile_concat(visual: &Tensor, audio: &Tensor) -> Result<Tensor> {
    if visual.rank() != 4 || audio.rank() != 2 {
        return Err(Error::dim(format!(
            "fusion expects visual [H,W,T,Cv] and audio [T,Ca], got {:?} and {:?}",
            visual.shape(),
            audio.shape()
        )));
    }
    let [h, w, t, cv] = [visual.shape()[0], visual.shape()[1], visual.shape()[2], visual.shape()[3]];
    let (ta, ca) = (audio.shape()[0], audio.shape()[1]);
    if ta != t {
        return Err(Error::dim(format!(
            "visual feature has T={t} but audio feature has T={ta}"
        )));
    }
    let c = cv + ca;
    let mut out = Vec::with_capacity(h * w * t * c);
    for (cell, vcell) in visual.data().chunks_exact(cv).enumerate() {
        let ti = cell % t;
        out.extend_from_slice(vcell);
        out.extend_from_slice(&audio.data()[ti * ca..(ti + 1) * ca]);
    }
    Ok(Tensor::from_parts(vec![h, w, t, c], out))
}
