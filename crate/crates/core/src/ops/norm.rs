//! Per-channel batch normalization over `N×C×...` tensors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Per-channel mean and biased variance of one batch, plus the element count
/// they were computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// What a train-mode forward pass keeps for the backward rule.
#[derive(Debug, Clone)]
pub struct BnSaved<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn check_affine<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, s) = x.batch_channels_spatial("batch_norm")?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("{c} channels but gamma/beta have {}/{}", gamma.len(), beta.len()),
        ));
    }
    Ok((n, c, s))
}

fn channel_values<T: Real>(data: &[T], n: usize, c: usize, s: usize, ch: usize) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |b| data[(b * c + ch) * s..][..s].iter().copied())
}

/// Mean and biased variance per channel, accumulated in row-major order.
pub fn channel_stats<T: Real>(x: &Tensor<T>) -> Result<BatchStats<T>> {
    let (n, c, s) = x.batch_channels_spatial("batch_norm")?;
    let m = n * s;
    let data = x.data();
    let (mean, var): (Vec<T>, Vec<T>) = (0..c)
        .into_par_iter()
        .map(|ch| {
            let count = T::from_usize(m).unwrap();
            let mean = channel_values(data, n, c, s, ch).fold(T::zero(), |a, v| a + v) / count;
            let var = channel_values(data, n, c, s, ch).fold(T::zero(), |a, v| a + (v - mean) * (v - mean)) / count;
            (mean, var)
        })
        .unzip();
    Ok(BatchStats { mean, var, count: m })
}

fn normalize<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    keep_xhat: bool,
) -> (Tensor<T>, Option<Tensor<T>>) {
    let (_, c, s) = x.batch_channels_spatial("batch_norm").expect("checked by caller");
    let (g, b) = (gamma.data(), beta.data());
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = if keep_xhat { vec![T::zero(); x.len()] } else { Vec::new() };
    for (i, (yv, &xv)) in y.iter_mut().zip(x.data()).enumerate() {
        let ch = (i / s) % c;
        let h = (xv - mean[ch]) * inv_std[ch];
        if keep_xhat {
            xhat[i] = h;
        }
        *yv = g[ch] * h + b[ch];
    }
    let y = Tensor::new(x.shape().to_vec(), y).expect("same shape");
    let xhat = keep_xhat.then(|| Tensor::new(x.shape().to_vec(), xhat).expect("same shape"));
    (y, xhat)
}

pub fn batch_norm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: T,
) -> Result<(Tensor<T>, BatchStats<T>, BnSaved<T>)> {
    let (n, _, s) = check_affine(x, gamma, beta)?;
    if n * s == 0 {
        return Err(Error::invalid("batch_norm", "empty batch in train mode"));
    }
    if epsilon <= T::zero() {
        return Err(Error::invalid("batch_norm", "epsilon must be positive"));
    }
    let stats = channel_stats(x)?;
    let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let (y, xhat) = normalize(x, gamma, beta, &stats.mean, &inv_std, true);
    Ok((y, stats, BnSaved { xhat: xhat.expect("requested"), inv_std }))
}

pub fn batch_norm_eval<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    epsilon: T,
) -> Result<(Tensor<T>, BnSaved<T>)> {
    let (_, c, _) = check_affine(x, gamma, beta)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape("batch_norm", "running statistics do not match channel count"));
    }
    if epsilon <= T::zero() {
        return Err(Error::invalid("batch_norm", "epsilon must be positive"));
    }
    let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + epsilon).sqrt()).collect();
    let (y, xhat) = normalize(x, gamma, beta, running_mean, &inv_std, true);
    Ok((y, BnSaved { xhat: xhat.expect("requested"), inv_std }))
}

/// Sums of `dy` and `dy·xhat` per channel: the gradients of beta and gamma.
fn affine_grads<T: Real>(dy: &[T], xhat: &[T], n: usize, c: usize, s: usize) -> (Vec<T>, Vec<T>) {
    (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..n {
                let off = (b * c + ch) * s;
                for (&d, &h) in dy[off..off + s].iter().zip(&xhat[off..off + s]) {
                    sum_dy += d;
                    sum_dy_xhat += d * h;
                }
            }
            (sum_dy, sum_dy_xhat)
        })
        .unzip()
}

/// Returns `(dx, dgamma, dbeta)`. In train mode the batch statistics depend on
/// `x`, which adds the two mean-correction terms to `dx`.
pub fn batch_norm_backward<T: Real>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
    train: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, s) = grad_out.batch_channels_spatial("batch_norm backward")?;
    if grad_out.shape() != saved.xhat.shape() {
        return Err(Error::shape("batch_norm backward", "upstream gradient shape"));
    }
    let dy = grad_out.data();
    let xhat = saved.xhat.data();
    let (dbeta, dgamma) = affine_grads(dy, xhat, n, c, s);
    let g = gamma.data();
    let m = T::from_usize(n * s).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    for (i, d) in dx.iter_mut().enumerate() {
        let ch = (i / s) % c;
        let scale = g[ch] * saved.inv_std[ch];
        *d = if train {
            scale * (dy[i] - dbeta[ch] / m - xhat[i] * dgamma[ch] / m)
        } else {
            scale * dy[i]
        };
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Exponential moving average of batch statistics kept for eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    /// `running = momentum·running + (1 − momentum)·batch`.
    pub fn update(&mut self, batch: &BatchStats<T>, momentum: T) {
        let keep = momentum;
        let take = T::one() - momentum;
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = keep * *r + take * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = keep * *r + take * b;
        }
    }
}

/// Pools per-batch statistics into the statistics of their union, using the
/// pairwise mean/M2 combination so a single batch is reproduced exactly.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(channels: usize) -> Self {
        StatsAccumulator { count: 0, mean: vec![0.0; channels], m2: vec![0.0; channels] }
    }

    pub fn push<T: Real>(&mut self, batch: &BatchStats<T>) {
        let nb = batch.count as f64;
        let na = self.count as f64;
        let n = na + nb;
        for ch in 0..self.mean.len() {
            let mb = batch.mean[ch].to_f64().unwrap();
            let m2b = batch.var[ch].to_f64().unwrap() * nb;
            if self.count == 0 {
                self.mean[ch] = mb;
                self.m2[ch] = m2b;
            } else {
                let delta = mb - self.mean[ch];
                self.mean[ch] += delta * nb / n;
                self.m2[ch] += m2b + delta * delta * na * nb / n;
            }
        }
        self.count += batch.count;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish<T: Real>(&self) -> Option<RunningStats<T>> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        Some(RunningStats {
            mean: self.mean.iter().map(|&m| T::lit(m)).collect(),
            var: self.m2.iter().map(|&m2| T::lit(m2 / n)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f64> {
        Tensor::from_fn(vec![3, 2, 2, 2], |i| ((i * 37 % 11) as f64) * 0.3 - 1.0)
    }

    #[test]
    fn train_mode_standardizes_channels() {
        let x = sample();
        let ones = Tensor::full(vec![2], 1.0);
        let zeros = Tensor::zeros(vec![2]);
        let (y, _, _) = batch_norm_train(&x, &ones, &zeros, 1e-5).unwrap();
        let stats = channel_stats(&y).unwrap();
        for ch in 0..2 {
            assert!(stats.mean[ch].abs() < 1e-12);
            assert!((stats.var[ch] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_with_batch_stats_matches_train() {
        let x = sample();
        let gamma = Tensor::new(vec![2], vec![0.7, 1.3]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let (yt, stats, _) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        let (ye, _) = batch_norm_eval(&x, &gamma, &beta, &stats.mean, &stats.var, 1e-5).unwrap();
        assert_eq!(yt, ye);
    }

    #[test]
    fn pooled_stats_of_one_batch_are_that_batch() {
        let x = sample().cast::<f32>();
        let stats = channel_stats(&x).unwrap();
        let mut acc = StatsAccumulator::new(2);
        acc.push(&stats);
        let pooled: RunningStats<f32> = acc.finish().unwrap();
        assert_eq!(pooled.mean, stats.mean);
        assert_eq!(pooled.var, stats.var);
    }

    #[test]
    fn pooled_stats_of_two_halves_are_the_whole() {
        let x = sample();
        let whole = channel_stats(&x).unwrap();
        let (n, c, h, w) = x.nchw("t").unwrap();
        let half = n / 2 * c * h * w;
        let a = Tensor::new(vec![n / 2, c, h, w], x.data()[..half].to_vec()).unwrap();
        let b = Tensor::new(vec![n - n / 2, c, h, w], x.data()[half..].to_vec()).unwrap();
        let mut acc = StatsAccumulator::new(c);
        acc.push(&channel_stats(&a).unwrap());
        acc.push(&channel_stats(&b).unwrap());
        let pooled: RunningStats<f64> = acc.finish().unwrap();
        for ch in 0..c {
            assert!((pooled.mean[ch] - whole.mean[ch]).abs() < 1e-12);
            assert!((pooled.var[ch] - whole.var[ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_affine() {
        let x = sample();
        let g = Tensor::full(vec![3], 1.0);
        let b = Tensor::zeros(vec![2]);
        assert!(batch_norm_train(&x, &g, &b, 1e-5).is_err());
        let g = Tensor::full(vec![2], 1.0);
        assert!(batch_norm_train(&x, &g, &b, 0.0).is_err());
    }
}
