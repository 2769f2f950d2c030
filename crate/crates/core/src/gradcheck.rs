//! Central finite-difference checks of every differentiable tape op in 64-bit.
//!
//! The numerical side only ever runs forward passes on fresh tapes, so it does
//! not share any code with the backward rules it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BnMode, Tape, Var};
use crate::error::Result;
use crate::ops::{Conv2dParams, Pool2dParams};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Norm-wise relative error `‖a − n‖ / max(‖a‖, ‖n‖)`, falling back to the
/// absolute error when both gradients are below `1e-12` in norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Builds a scalar loss from leaf vars, one per input tensor.
pub trait LossBuilder: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>> LossBuilder for F {}

fn evaluate(inputs: &[Tensor<f64>], build: &impl LossBuilder) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    Ok(tape.value(loss)?.data()[0])
}

/// Relative error per input tensor between the tape gradient and central
/// differences with step `h`.
pub fn check_gradients(inputs: &[Tensor<f64>], build: impl LossBuilder, h: f64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut errors = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[which], input.shape());
        let mut numeric = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let mut probe = inputs.to_vec();
            let orig = input.data()[i];
            probe[which].data_mut()[i] = orig + h;
            let up = evaluate(&probe, &build)?;
            probe[which].data_mut()[i] = orig - h;
            let down = evaluate(&probe, &build)?;
            numeric.push((up - down) / (2.0 * h));
        }
        errors.push(relative_error(analytic.data(), &numeric));
    }
    Ok(errors)
}

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub trials: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Attach a random projection so that vector-valued ops yield a scalar loss.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out)?.shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let weights = uniform(&mut rng, &shape);
    tape.weighted_sum(out, weights)
}

fn pick(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

type Case = (Vec<Tensor<f64>>, Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>);

fn case(op: &str, rng: &mut ChaCha8Rng, seed: u64) -> Case {
    match op {
        "conv2d" => {
            let groups = pick(rng, 1, 3);
            let cin = groups * pick(rng, 1, 2);
            let cout = groups * pick(rng, 1, 2);
            let k = pick(rng, 1, 3);
            let stride = pick(rng, 1, 2);
            let pad = pick(rng, 0, k / 2);
            let (n, h, w) = (pick(rng, 1, 2), pick(rng, k, 5), pick(rng, k, 5));
            let x = uniform(rng, &[n, cin, h, w]);
            let wt = uniform(rng, &[cout, cin / groups, k, k]);
            let params = Conv2dParams::new(stride, pad, groups);
            (vec![x, wt], Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], params)?;
                project(t, y, seed)
            }))
        }
        "batch_norm_train" | "batch_norm_eval" => {
            let (n, c, h, w) = (pick(rng, 2, 3), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3));
            let x = uniform(rng, &[n, c, h, w]);
            let gamma = Tensor::from_fn(vec![c], |_| rng.random_range(0.5..1.5));
            let beta = uniform(rng, &[c]);
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            let train = op == "batch_norm_train";
            (vec![x, gamma, beta], Box::new(move |t, v| {
                let mode = if train {
                    BnMode::Train { epsilon: 1e-5 }
                } else {
                    BnMode::Eval { mean: &mean, var: &var, epsilon: 1e-5 }
                };
                let (y, _) = t.batch_norm(v[0], v[1], v[2], mode)?;
                project(t, y, seed)
            }))
        }
        "relu" => {
            let shape = [pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)];
            let x = uniform(rng, &shape);
            (vec![x], Box::new(move |t, v| {
                let y = t.relu(v[0])?;
                project(t, y, seed)
            }))
        }
        "max_pool2d" | "avg_pool2d" => {
            let k = pick(rng, 2, 3);
            let stride = pick(rng, 1, 2);
            let pad = pick(rng, 0, k / 2);
            let shape = [pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, k, 6), pick(rng, k, 6)];
            let x = uniform(rng, &shape);
            let params = Pool2dParams::new(k, stride, pad);
            let is_max = op == "max_pool2d";
            (vec![x], Box::new(move |t, v| {
                let y = if is_max { t.max_pool2d(v[0], params)? } else { t.avg_pool2d(v[0], params)? };
                project(t, y, seed)
            }))
        }
        "global_avg_pool" | "global_max_pool" | "mean_max_pool" => {
            let shape = [pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)];
            let x = uniform(rng, &shape);
            let which = op.to_string();
            (vec![x], Box::new(move |t, v| {
                let y = match which.as_str() {
                    "global_avg_pool" => t.global_avg_pool(v[0])?,
                    "global_max_pool" => t.global_max_pool(v[0])?,
                    _ => t.mean_max_pool(v[0])?,
                };
                project(t, y, seed)
            }))
        }
        "concat_channels" => {
            let (n, h, w) = (pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3));
            let shape = [n, pick(rng, 1, 3), h, w];
            let a = uniform(rng, &shape);
            let shape = [n, pick(rng, 1, 3), h, w];
            let b = uniform(rng, &shape);
            (vec![a, b], Box::new(move |t, v| {
                let y = t.concat_channels(v[0], v[1])?;
                project(t, y, seed)
            }))
        }
        "slice_channels" => {
            let c = pick(rng, 2, 5);
            let from = pick(rng, 0, c - 1);
            let to = from + 1 + pick(rng, 0, c - from - 1);
            let shape = [pick(rng, 1, 2), c, pick(rng, 1, 3), pick(rng, 1, 3)];
            let x = uniform(rng, &shape);
            (vec![x], Box::new(move |t, v| {
                let y = t.slice_channels(v[0], from, to)?;
                project(t, y, seed)
            }))
        }
        "add" | "scale" => {
            let shape = [pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 3)];
            let a = uniform(rng, &shape);
            let b = uniform(rng, &shape);
            let factor: f64 = rng.random_range(-2.0..2.0);
            let is_add = op == "add";
            (vec![a, b], Box::new(move |t, v| {
                let y = if is_add { t.add(v[0], v[1])? } else { t.scale(v[0], factor)? };
                project(t, y, seed)
            }))
        }
        "linear" => {
            let (n, c, k) = (pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 4));
            let x = uniform(rng, &[n, c]);
            let w = uniform(rng, &[k, c]);
            let b = uniform(rng, &[k]);
            (vec![x, w, b], Box::new(move |t, v| {
                let y = t.linear(v[0], v[1], v[2])?;
                project(t, y, seed)
            }))
        }
        "softmax_cross_entropy" => {
            let (n, k) = (pick(rng, 1, 4), pick(rng, 2, 6));
            let logits = Tensor::from_fn(vec![n, k], |_| rng.random_range(-3.0..3.0));
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            (vec![logits], Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels)))
        }
        other => unreachable!("no gradient case for {other}"),
    }
}

/// Every differentiable op of the tape.
pub const CHECKED_OPS: &[&str] = &[
    "conv2d",
    "batch_norm_train",
    "batch_norm_eval",
    "relu",
    "max_pool2d",
    "avg_pool2d",
    "global_avg_pool",
    "global_max_pool",
    "mean_max_pool",
    "concat_channels",
    "slice_channels",
    "add",
    "scale",
    "linear",
    "softmax_cross_entropy",
];

/// Runs `trials` random shapes per op and keeps the worst relative error.
pub fn run_suite(seed: u64, trials: usize, tolerance: f64) -> Result<Vec<OpCheck>> {
    CHECKED_OPS
        .iter()
        .enumerate()
        .map(|(i, &op)| {
            let mut worst: f64 = 0.0;
            for trial in 0..trials {
                let case_seed = seed.wrapping_mul(1_000_003).wrapping_add((i * 10_007 + trial) as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
                let (inputs, build) = case(op, &mut rng, case_seed);
                let errors = check_gradients(&inputs, |t: &mut Tape<f64>, v: &[Var]| build(t, v), DEFAULT_STEP)?;
                worst = errors.into_iter().fold(worst, f64::max);
            }
            Ok(OpCheck { op, trials, worst, tolerance })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let e1 = relative_error(&[1.0, 0.0], &[1.1, 0.0]);
        let e2 = relative_error(&[1e3, 0.0], &[1.1e3, 0.0]);
        assert!((e1 - e2).abs() < 1e-12);
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn relu_gradient_passes_and_wrong_gradient_is_flagged() {
        // d/dx of Σ relu(x)·r disagrees with a gradient computed for 2·x.
        let x = Tensor::new(vec![3], vec![0.3, -0.4, 0.9]).unwrap();
        let bad = |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.relu(v[0])?;
            t.weighted_sum(y, Tensor::full(vec![3], 1.0))
        };
        let errors = check_gradients(std::slice::from_ref(&x), bad, DEFAULT_STEP).unwrap();
        assert!(errors[0] < 1e-8);
        let numeric_for_other = [2.0, 2.0, 2.0];
        assert!(relative_error(&[1.0, 0.0, 1.0], &numeric_for_other) > 0.1);
    }
}
