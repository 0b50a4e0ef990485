use std::collections::BTreeMap;

use super::ops::{self, NormStats, Padding};
use super::{kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    ScalarMul(Var, f32),
    MatMul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: Padding,
    },
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        axis: usize,
        stats: NormStats,
    },
    BatchNorm {
        x: Var,
        gain: Var,
        bias: Var,
        stats: NormStats,
        batch_stats: bool,
    },
    Concat(Vec<Var>, usize),
    Upsample(Var, usize),
    Unfold(Var, usize),
    Fold(Var, usize),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Huber { pred: Var, target: Var },
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Every op appends a node holding its forward value;
/// [`Graph::backward`] walks the nodes in reverse and applies each op's adjoint.
///
/// Leaves registered with [`Graph::param`] are the differentiable inputs.
/// Constants never receive gradients and their ancestors' adjoints are
/// skipped when nothing upstream needs them.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients from one backward pass, one per parameter leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_var: BTreeMap<Var, Tensor>,
    by_name: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_var.get(&v)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name).and_then(|v| self.by_var.get(v))
    }

    /// Name-sorted gradients for every registered parameter.
    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        let mut by_var = self.by_var;
        self.by_name
            .into_iter()
            .map(|(name, v)| {
                let g = by_var.remove(&v).expect("every parameter has a gradient");
                (name, g)
            })
            .collect()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.needs(v))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A value that is not differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A named differentiable leaf. Registering the same name twice returns
    /// the existing leaf.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    // ------------------------------------------------------------ ops

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add(a, b), self.any_needs(&[a, b])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b), self.any_needs(&[a, b])))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let y = ops::add_bias(self.value(x), self.value(bias))?;
        Ok(self.push(y, Op::AddBias(x, bias), self.any_needs(&[x, bias])))
    }

    pub fn scalar_mul(&mut self, x: Var, s: f32) -> Var {
        let y = ops::scalar_mul(self.value(x), s);
        self.push(y, Op::ScalarMul(x, s), self.needs(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b), self.any_needs(&[a, b])))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: Padding) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), self.value(b), stride, padding)?;
        let op = Op::Conv2d {
            x,
            w,
            b,
            stride,
            padding,
        };
        Ok(self.push(y, op, self.any_needs(&[x, w, b])))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu(x), self.needs(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let y = ops::silu(self.value(x));
        self.push(y, Op::Silu(x), self.needs(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x), self.needs(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let y = ops::softmax(self.value(x), axis)?;
        Ok(self.push(y, Op::Softmax(x, axis), self.needs(x)))
    }

    pub fn layer_norm(&mut self, x: Var, axis: usize, gain: Var, bias: Var) -> Result<Var> {
        let (y, stats) = ops::layer_norm_with_stats(self.value(x), axis, self.value(gain), self.value(bias))?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            axis,
            stats,
        };
        Ok(self.push(y, op, self.any_needs(&[x, gain, bias])))
    }

    /// Batch normalization using the statistics of this batch. Returns the
    /// output together with the batch mean and biased variance so callers
    /// can update their running estimates.
    pub fn batch_norm_train(&mut self, x: Var, gain: Var, bias: Var) -> Result<(Var, Vec<f32>, Vec<f32>)> {
        ops::batch_norm_check(self.value(x), self.value(gain), self.value(bias))?;
        let (mean, var) = ops::channel_moments(self.value(x));
        let (y, stats) = ops::batch_norm_apply(self.value(x), self.value(gain), self.value(bias), &mean, &var);
        let op = Op::BatchNorm {
            x,
            gain,
            bias,
            stats,
            batch_stats: true,
        };
        let out = self.push(y, op, self.any_needs(&[x, gain, bias]));
        Ok((out, mean, var))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_infer(&mut self, x: Var, gain: Var, bias: Var, mean: &[f32], var: &[f32]) -> Result<Var> {
        let c = ops::batch_norm_check(self.value(x), self.value(gain), self.value(bias))?;
        if mean.len() != c || var.len() != c {
            return Err(Error::shape("batch_norm", &[c], &[mean.len()]));
        }
        let (y, stats) = ops::batch_norm_apply(self.value(x), self.value(gain), self.value(bias), mean, var);
        let op = Op::BatchNorm {
            x,
            gain,
            bias,
            stats,
            batch_stats: false,
        };
        Ok(self.push(y, op, self.any_needs(&[x, gain, bias])))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat(&values, axis)?;
        let needs = self.any_needs(inputs);
        Ok(self.push(y, Op::Concat(inputs.to_vec(), axis), needs))
    }

    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let y = ops::bilinear_upsample(self.value(x), factor)?;
        Ok(self.push(y, Op::Upsample(x, factor), self.needs(x)))
    }

    pub fn unfold(&mut self, x: Var, patch: usize) -> Result<Var> {
        let y = ops::unfold(self.value(x), patch)?;
        Ok(self.push(y, Op::Unfold(x, patch), self.needs(x)))
    }

    pub fn fold(&mut self, seq: Var, patch: usize, shape: [usize; 4]) -> Result<Var> {
        let y = ops::fold(self.value(seq), patch, shape)?;
        Ok(self.push(y, Op::Fold(seq, patch), self.needs(seq)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(y, Op::Reshape(x), self.needs(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let y = ops::permute(self.value(x), perm)?;
        Ok(self.push(y, Op::Permute(x, perm.to_vec()), self.needs(x)))
    }

    /// Mean Huber loss (transition point 1.0) between `pred` and `target`.
    pub fn huber(&mut self, pred: Var, target: Var) -> Result<Var> {
        let v = ops::huber_mean(self.value(pred), self.value(target))?;
        let needs = self.any_needs(&[pred, target]);
        Ok(self.push(Tensor::scalar(v), Op::Huber { pred, target }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(x), self.needs(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: f64 = t.data().iter().map(|&v| v as f64).sum();
        let m = (s / t.len() as f64) as f32;
        self.push(Tensor::scalar(m), Op::Mean(x), self.needs(x))
    }

    // ------------------------------------------------------------ backward

    /// Back-propagates from a one-element `loss`. Parameters that the loss
    /// does not depend on receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_value.shape().to_vec()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            for (v, g) in self.adjoint(node, &dy) {
                debug_assert_eq!(g.shape(), self.shape(v));
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }

        let by_var = self
            .params
            .values()
            .map(|&v| {
                let g = grads
                    .get_mut(v.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.shape(v).to_vec()));
                (v, g)
            })
            .collect();
        Ok(Gradients {
            by_var,
            by_name: self.params.clone(),
        })
    }

    /// Input gradients of one node given its output gradient `dy`.
    fn adjoint(&self, node: &Node, dy: &Tensor) -> Vec<(Var, Tensor)> {
        let mut out = Vec::new();
        let mut emit = |v: Var, g: Tensor| {
            if self.needs(v) {
                out.push((v, g));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                emit(*a, dy.clone());
                emit(*b, dy.clone());
            }
            Op::Mul(a, b) => {
                emit(*a, ops::mul(dy, self.value(*b)).expect("same shape"));
                emit(*b, ops::mul(dy, self.value(*a)).expect("same shape"));
            }
            Op::AddBias(x, bias) => {
                emit(*x, dy.clone());
                if self.needs(*bias) {
                    let c = self.value(*bias).len();
                    let mut db = vec![0.0f32; c];
                    for row in dy.data().chunks_exact(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    emit(*bias, Tensor::from_parts(vec![c], db));
                }
            }
            Op::ScalarMul(x, s) => emit(*x, ops::scalar_mul(dy, *s)),
            Op::MatMul(a, b) => {
                let (da, db) = ops::matmul_backward(self.value(*a), self.value(*b), dy, self.needs(*a), self.needs(*b));
                if let Some(da) = da {
                    emit(*a, da);
                }
                if let Some(db) = db {
                    emit(*b, db);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let g = ops::conv_geom(xv, wv, self.value(*b), *stride, *padding).expect("validated in forward");
                let (dx, dw, db) = kernels::conv2d_backward(xv.data(), wv.data(), dy.data(), &g, self.needs(*x));
                if let Some(dx) = dx {
                    emit(*x, Tensor::from_parts(xv.shape().to_vec(), dx));
                }
                emit(*w, Tensor::from_parts(wv.shape().to_vec(), dw));
                emit(*b, Tensor::from_parts(vec![g.cout], db));
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                emit(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| {
                        let s = ops::sigmoid_scalar(v);
                        g * s * (1.0 + v * (1.0 - s))
                    })
                    .collect();
                emit(*x, Tensor::from_parts(xv.shape().to_vec(), data));
            }
            Op::Sigmoid(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&s, &g)| g * s * (1.0 - s))
                    .collect();
                emit(*x, Tensor::from_parts(node.value.shape().to_vec(), data));
            }
            Op::Softmax(x, axis) => emit(*x, ops::softmax_backward(&node.value, dy, *axis)),
            Op::LayerNorm {
                x,
                gain,
                bias,
                axis,
                stats,
            } => {
                let (dx, dg, db) = ops::layer_norm_backward(self.value(*x), *axis, self.value(*gain), stats, dy);
                emit(*x, dx);
                emit(*gain, dg);
                emit(*bias, db);
            }
            Op::BatchNorm {
                x,
                gain,
                bias,
                stats,
                batch_stats,
            } => {
                let (dx, dg, db) = ops::batch_norm_backward(self.value(*x), self.value(*gain), stats, dy, *batch_stats);
                emit(*x, dx);
                emit(*gain, dg);
                emit(*bias, db);
            }
            Op::Concat(inputs, axis) => {
                let shapes: Vec<Vec<usize>> = inputs.iter().map(|&v| self.shape(v).to_vec()).collect();
                for (v, g) in inputs.iter().zip(ops::concat_backward(&shapes, *axis, dy)) {
                    emit(*v, g);
                }
            }
            Op::Upsample(x, factor) => emit(*x, ops::bilinear_upsample_backward(self.shape(*x), *factor, dy)),
            Op::Unfold(x, patch) => {
                let s = self.shape(*x);
                let shape = [s[0], s[1], s[2], s[3]];
                emit(*x, ops::fold(dy, *patch, shape).expect("inverse layout"));
            }
            Op::Fold(seq, patch) => emit(*seq, ops::unfold(dy, *patch).expect("inverse layout")),
            Op::Reshape(x) => emit(*x, dy.clone().reshape(self.shape(*x).to_vec()).expect("same size")),
            Op::Permute(x, perm) => emit(*x, ops::permute(dy, &ops::inverse_perm(perm)).expect("valid perm")),
            Op::Huber { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = dy.data()[0] / p.len() as f32;
                let dpred: Vec<f32> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&pv, &tv)| -ops::huber_slope(tv - pv) * scale)
                    .collect();
                if self.needs(*target) {
                    let dt = dpred.iter().map(|v| -v).collect();
                    emit(*target, Tensor::from_parts(t.shape().to_vec(), dt));
                }
                emit(*pred, Tensor::from_parts(p.shape().to_vec(), dpred));
            }
            Op::Sum(x) => emit(*x, Tensor::full(self.shape(*x).to_vec(), dy.data()[0])),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f32;
                emit(*x, Tensor::full(self.shape(*x).to_vec(), dy.data()[0] / n));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_input() {
        let mut g = Graph::new();
        let x = Tensor::from_fn([2, 3], |i| i as f32 - 1.5);
        let w = g.param("w", &Tensor::ones([2, 3]));
        let xv = g.constant(x.clone());
        let p = g.mul(w, xv).unwrap();
        let loss = g.sum(p);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("w").unwrap(), &x);
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut g = Graph::new();
        let a = g.param("a", &Tensor::ones([3]));
        let _b = g.param("b", &Tensor::ones([2, 2]));
        let loss = g.sum(a);
        let grads = g.backward(loss).unwrap().into_named();
        assert_eq!(grads["b"], Tensor::zeros([2, 2]));
        assert_eq!(grads["a"], Tensor::ones([3]));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let a = g.param("a", &Tensor::ones([3]));
        assert!(matches!(g.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let a = g.param("a", &Tensor::full([2], 3.0));
        let sq = g.mul(a, a).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param("a").unwrap().data(), &[6.0, 6.0]);
    }

    #[test]
    fn repeated_backward_is_bit_identical() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn([1, 4, 4, 2], |i| ((i * 7) % 5) as f32 * 0.3));
        let w = g.param("w", &Tensor::from_fn([3, 3, 2, 3], |i| (i as f32 * 0.37).sin()));
        let b = g.param("b", &Tensor::zeros([3]));
        let y = g.conv2d(x, w, b, 1, Padding::Same).unwrap();
        let y = g.silu(y);
        let loss = g.mean(y);
        let g1 = g.backward(loss).unwrap().into_named();
        let g2 = g.backward(loss).unwrap().into_named();
        assert_eq!(g1, g2);
    }
}
