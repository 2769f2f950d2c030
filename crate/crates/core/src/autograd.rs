//! Tape-based reverse-mode differentiation.
//!
//! Every forward op appends one node holding its output value and whatever it
//! needs for its backward rule. [`Tape::backward`] walks the nodes in reverse
//! record order, so each op is visited once and the graph is acyclic by
//! construction. The tape is not consumed: call [`Tape::clear`] to reuse it.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::ops::{self, basic, conv, norm, pool, BatchStats, Conv2dParams, Pool2dParams};
use crate::tensor::{Real, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a, T> {
    /// Normalize with the batch's own statistics.
    Train { epsilon: T },
    /// Normalize with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T], epsilon: T },
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, params: Conv2dParams },
    BatchNorm { input: Var, gamma: Var, beta: Var, saved: norm::BnSaved<T>, train: bool },
    Relu { input: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, params: Pool2dParams },
    GlobalAvg { input: Var },
    GlobalMax { input: Var, argmax: Vec<usize> },
    Concat { a: Var, b: Var },
    Slice { input: Var, axis: usize, from: usize },
    Add { a: Var, b: Var },
    Scale { input: Var, factor: T },
    Linear { input: Var, weight: Var, bias: Var },
    SoftmaxCe { logits: Var, probs: Tensor<T>, labels: Vec<usize> },
    WeightedSum { input: Var, weights: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when `var` did not affect the loss.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Vars issued before the call become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = NEXT_TAPE.fetch_add(1, Ordering::Relaxed);
    }

    fn node(&self, var: Var) -> Result<&Node<T>> {
        if var.tape != self.id {
            return Err(Error::ForeignVar);
        }
        self.nodes.get(var.index).ok_or(Error::ForeignVar)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor<T>> {
        Ok(&self.node(var)?.value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.index].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    /// A constant: gradients are not propagated into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A differentiable leaf whose gradient appears in [`Gradients`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let var = self.push(value, Op::Leaf, &[]);
        self.nodes[var.index].needs_grad = true;
        var
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, params: Conv2dParams) -> Result<Var> {
        let out = conv::conv2d(self.value(input)?, self.value(weight)?, params)?;
        Ok(self.push(out, Op::Conv2d { input, weight, params }, &[input, weight]))
    }

    /// Batch norm over axis 1. Train mode also returns the batch statistics so
    /// the caller can update its running averages.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (x, g, b) = (self.value(input)?, self.value(gamma)?, self.value(beta)?);
        let (out, stats, saved, train) = match mode {
            BnMode::Train { epsilon } => {
                let (y, stats, saved) = norm::batch_norm_train(x, g, b, epsilon)?;
                (y, Some(stats), saved, true)
            }
            BnMode::Eval { mean, var, epsilon } => {
                let (y, saved) = norm::batch_norm_eval(x, g, b, mean, var, epsilon)?;
                (y, None, saved, false)
            }
        };
        let v = self.push(out, Op::BatchNorm { input, gamma, beta, saved, train }, &[input, gamma, beta]);
        Ok((v, stats))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let out = basic::relu(self.value(input)?);
        Ok(self.push(out, Op::Relu { input }, &[input]))
    }

    pub fn max_pool2d(&mut self, input: Var, params: Pool2dParams) -> Result<Var> {
        let (out, argmax) = pool::max_pool2d(self.value(input)?, params)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }

    pub fn avg_pool2d(&mut self, input: Var, params: Pool2dParams) -> Result<Var> {
        let out = pool::avg_pool2d(self.value(input)?, params)?;
        Ok(self.push(out, Op::AvgPool { input, params }, &[input]))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = pool::global_avg_pool(self.value(input)?)?;
        Ok(self.push(out, Op::GlobalAvg { input }, &[input]))
    }

    pub fn global_max_pool(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = pool::global_max_pool(self.value(input)?)?;
        Ok(self.push(out, Op::GlobalMax { input, argmax }, &[input]))
    }

    /// `0.5·(global_avg_pool + global_max_pool)`.
    pub fn mean_max_pool(&mut self, input: Var) -> Result<Var> {
        let avg = self.global_avg_pool(input)?;
        let max = self.global_max_pool(input)?;
        let sum = self.add(avg, max)?;
        self.scale(sum, T::lit(0.5))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = basic::concat_channels(self.value(a)?, self.value(b)?)?;
        Ok(self.push(out, Op::Concat { a, b }, &[a, b]))
    }

    pub fn slice_channels(&mut self, input: Var, from: usize, to: usize) -> Result<Var> {
        self.slice_axis(input, 1, from, to)
    }

    pub fn slice_axis(&mut self, input: Var, axis: usize, from: usize, to: usize) -> Result<Var> {
        let out = basic::slice_axis(self.value(input)?, axis, from, to)?;
        Ok(self.push(out, Op::Slice { input, axis, from }, &[input]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = basic::add(self.value(a)?, self.value(b)?)?;
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let out = basic::scale(self.value(input)?, factor);
        Ok(self.push(out, Op::Scale { input, factor }, &[input]))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = basic::linear(self.value(input)?, self.value(weight)?, self.value(bias)?)?;
        Ok(self.push(out, Op::Linear { input, weight, bias }, &[input, weight, bias]))
    }

    /// Scalar mean cross-entropy of `N×K` logits against integer labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = basic::softmax_cross_entropy(self.value(logits)?, labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe { logits, probs, labels: labels.to_vec() },
            &[logits],
        ))
    }

    /// Scalar `Σ input ⊙ weights` against a constant tensor of the same shape.
    pub fn weighted_sum(&mut self, input: Var, weights: Tensor<T>) -> Result<Var> {
        let x = self.value(input)?;
        if x.shape() != weights.shape() {
            return Err(Error::shape("weighted_sum", format!("{:?} vs {:?}", x.shape(), weights.shape())));
        }
        let total = x.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { input, weights }, &[input]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_node = self.node(loss)?;
        if loss_node.value.len() != 1 {
            return Err(Error::NonScalarLoss(loss_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(loss_node.value.shape().to_vec(), T::one()));

        for index in (0..=loss.index).rev() {
            let node = &self.nodes[index];
            if !node.needs_grad {
                continue;
            }
            let Some(upstream) = grads[index].take() else { continue };
            let emit = |var: Var, g: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                if self.nodes[var.index].needs_grad {
                    accumulate(grads, var.index, g);
                }
            };
            let wants = |var: Var| self.nodes[var.index].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[index] = Some(upstream);
                    continue;
                }
                Op::Conv2d { input, weight, params } => {
                    let (dx, dw) = conv::conv2d_backward(
                        &self.nodes[input.index].value,
                        &self.nodes[weight.index].value,
                        *params,
                        &upstream,
                        wants(*input),
                        wants(*weight),
                    )?;
                    if let Some(dx) = dx {
                        emit(*input, dx, &mut grads);
                    }
                    if let Some(dw) = dw {
                        emit(*weight, dw, &mut grads);
                    }
                }
                Op::BatchNorm { input, gamma, beta, saved, train } => {
                    let (dx, dg, db) =
                        norm::batch_norm_backward(&upstream, &self.nodes[gamma.index].value, saved, *train)?;
                    emit(*input, dx, &mut grads);
                    emit(*gamma, dg, &mut grads);
                    emit(*beta, db, &mut grads);
                }
                Op::Relu { input } => {
                    let dx = basic::relu_backward(&self.nodes[input.index].value, &upstream);
                    emit(*input, dx, &mut grads);
                }
                Op::MaxPool { input, argmax } => {
                    let dx = pool::max_pool2d_backward(self.nodes[input.index].value.shape(), argmax, &upstream)?;
                    emit(*input, dx, &mut grads);
                }
                Op::AvgPool { input, params } => {
                    let dx = pool::avg_pool2d_backward(self.nodes[input.index].value.shape(), *params, &upstream)?;
                    emit(*input, dx, &mut grads);
                }
                Op::GlobalAvg { input } => {
                    let dx = pool::global_avg_pool_backward(self.nodes[input.index].value.shape(), &upstream)?;
                    emit(*input, dx, &mut grads);
                }
                Op::GlobalMax { input, argmax } => {
                    let dx = pool::max_pool2d_backward(self.nodes[input.index].value.shape(), argmax, &upstream)?;
                    emit(*input, dx, &mut grads);
                }
                Op::Concat { a, b } => {
                    let ca = self.nodes[a.index].value.shape()[1];
                    let c = upstream.shape()[1];
                    emit(*a, basic::slice_axis(&upstream, 1, 0, ca)?, &mut grads);
                    emit(*b, basic::slice_axis(&upstream, 1, ca, c)?, &mut grads);
                }
                Op::Slice { input, axis, from } => {
                    let dx = basic::slice_axis_backward(self.nodes[input.index].value.shape(), *axis, *from, &upstream)?;
                    emit(*input, dx, &mut grads);
                }
                Op::Add { a, b } => {
                    emit(*a, upstream.clone(), &mut grads);
                    emit(*b, upstream, &mut grads);
                }
                Op::Scale { input, factor } => {
                    emit(*input, ops::scale(&upstream, *factor), &mut grads);
                }
                Op::Linear { input, weight, bias } => {
                    let (dx, dw, db) =
                        basic::linear_backward(&self.nodes[input.index].value, &self.nodes[weight.index].value, &upstream)?;
                    emit(*input, dx, &mut grads);
                    emit(*weight, dw, &mut grads);
                    emit(*bias, db, &mut grads);
                }
                Op::SoftmaxCe { logits, probs, labels } => {
                    let dl = basic::softmax_cross_entropy_backward(probs, labels, upstream.data()[0]);
                    emit(*logits, dl, &mut grads);
                }
                Op::WeightedSum { input, weights } => {
                    emit(*input, ops::scale(weights, upstream.data()[0]), &mut grads);
                }
            }
        }
        // Only leaves keep their gradients; interior buffers were taken above.
        Ok(Gradients { tape: self.id, grads })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], index: usize, g: Tensor<T>) {
    match &mut grads[index] {
        Some(existing) => {
            for (e, &v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
