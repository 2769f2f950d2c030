//! Generalized higher-order recurrence and its residual special case.
//!
//! `h^k = g^k( Σ_{t<k} f_t^k(h^t) + x^k )` with `h^0 = x^0`. When the feature
//! functions do not depend on the current step (`f_t^k ≡ f_t`) and `x^k = 0`
//! for `k > 1`, the gathered sum obeys `r^k = r^{k−1} + f_{k−1}(g^{k−1}(r^{k−1}))`,
//! which is the residual update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// `act(W·x + b)` on vectors of length `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Layer<T> {
    pub fn new(dim: usize, weight: Vec<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if dim == 0 || weight.len() != dim * dim || bias.len() != dim {
            return Err(Error::Recurrence(format!(
                "layer of dim {dim} needs {} weights and {dim} biases, got {} and {}",
                dim * dim,
                weight.len(),
                bias.len()
            )));
        }
        Ok(Layer { dim, weight, bias, activation })
    }

    fn random(dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let weight = (0..dim * dim).map(|_| T::lit(rng.random_range(-scale..scale))).collect();
        let bias = match activation {
            Activation::Identity => vec![T::zero(); dim],
            Activation::Tanh => (0..dim).map(|_| T::lit(rng.random_range(-0.5..0.5))).collect(),
        };
        Layer { dim, weight, bias, activation }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        (0..self.dim)
            .map(|i| {
                let row = &self.weight[i * self.dim..][..self.dim];
                let z = row.iter().zip(x).fold(self.bias[i], |acc, (&w, &v)| acc + w * v);
                match self.activation {
                    Activation::Identity => z,
                    Activation::Tanh => z.tanh(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    /// Every `f_t^k` and `g^k` distinct (densely connected network).
    None,
    /// `f_t^k ≡ f_t` for all `k` (precondition of the residual form).
    ShareFOverK,
    /// One `f` and one `g` for every step (tied recurrent network).
    ShareAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceConfig<T> {
    pub steps: usize,
    pub dim: usize,
    pub sharing: Sharing,
    features: Vec<Layer<T>>,
    transforms: Vec<Layer<T>>,
    /// `x^0 ..= x^K`; `x^0` is the initial state `h^0`.
    pub inputs: Vec<Vec<T>>,
}

fn feature_count(steps: usize, sharing: Sharing) -> usize {
    match sharing {
        Sharing::None => steps * (steps + 1) / 2,
        Sharing::ShareFOverK => steps,
        Sharing::ShareAll => 1,
    }
}

fn transform_count(steps: usize, sharing: Sharing) -> usize {
    match sharing {
        Sharing::ShareAll => 1,
        _ => steps,
    }
}

impl<T: Real> RecurrenceConfig<T> {
    pub fn new(
        steps: usize,
        dim: usize,
        sharing: Sharing,
        features: Vec<Layer<T>>,
        transforms: Vec<Layer<T>>,
        inputs: Vec<Vec<T>>,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Recurrence("at least one step is required".into()));
        }
        let (nf, ng) = (feature_count(steps, sharing), transform_count(steps, sharing));
        if features.len() != nf || transforms.len() != ng {
            return Err(Error::Recurrence(format!(
                "{sharing:?} over {steps} steps needs {nf} feature and {ng} transform functions, got {} and {}",
                features.len(),
                transforms.len()
            )));
        }
        if features.iter().chain(&transforms).any(|l| l.dim != dim) {
            return Err(Error::Recurrence(format!("function dimension differs from state dimension {dim}")));
        }
        if inputs.len() != steps + 1 || inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Recurrence(format!("need {} inputs of length {dim}", steps + 1)));
        }
        Ok(RecurrenceConfig { steps, dim, sharing, features, transforms, inputs })
    }

    /// Random linear `f`, `tanh` `g`, random `h^0` and zero later inputs.
    pub fn random(steps: usize, dim: usize, sharing: Sharing, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (0..feature_count(steps, sharing)).map(|_| Layer::random(dim, Activation::Identity, &mut rng)).collect();
        let transforms = (0..transform_count(steps, sharing)).map(|_| Layer::random(dim, Activation::Tanh, &mut rng)).collect();
        let mut inputs = vec![vec![T::zero(); dim]; steps + 1];
        inputs[0] = (0..dim).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
        Self::new(steps, dim, sharing, features, transforms, inputs)
    }

    /// Index of `f_t^k` in the function pool; shared functions map to the same index.
    pub fn feature_index(&self, k: usize, t: usize) -> usize {
        debug_assert!(t < k && k <= self.steps);
        match self.sharing {
            Sharing::None => k * (k - 1) / 2 + t,
            Sharing::ShareFOverK => t,
            Sharing::ShareAll => 0,
        }
    }

    pub fn transform_index(&self, k: usize) -> usize {
        match self.sharing {
            Sharing::ShareAll => 0,
            _ => k - 1,
        }
    }

    /// `f_t^k`.
    pub fn feature(&self, k: usize, t: usize) -> &Layer<T> {
        &self.features[self.feature_index(k, t)]
    }

    /// `g^k`.
    pub fn transform(&self, k: usize) -> &Layer<T> {
        &self.transforms[self.transform_index(k)]
    }

    pub fn features_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.features
    }

    pub fn transforms_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.transforms
    }
}

/// Gathered sums `r^1..r^K` and states `h^0..h^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub gathered: Vec<Vec<T>>,
    pub states: Vec<Vec<T>>,
}

fn add_into<T: Real>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `Σ_{t<k} f_t^k(h^t) + x^k`, summed from the most recent state backwards.
pub fn gather<T: Real>(cfg: &RecurrenceConfig<T>, k: usize, states: &[Vec<T>]) -> Vec<T> {
    let mut sum = cfg.inputs[k].clone();
    for t in (0..k).rev() {
        add_into(&mut sum, &cfg.feature(k, t).apply(&states[t]));
    }
    sum
}

/// Literal evaluation of the general recurrence.
pub fn unroll_general<T: Real>(cfg: &RecurrenceConfig<T>) -> Result<Trajectory<T>> {
    let mut states = vec![cfg.inputs[0].clone()];
    let mut gathered = Vec::with_capacity(cfg.steps);
    for k in 1..=cfg.steps {
        let r = gather(cfg, k, &states);
        states.push(cfg.transform(k).apply(&r));
        gathered.push(r);
    }
    Ok(Trajectory { gathered, states })
}

/// The residual recurrence `r^k = r^{k−1} + φ^{k−1}(r^{k−1})`, `φ^k = f_k ∘ g^k`.
pub fn unroll_residual_form<T: Real>(cfg: &RecurrenceConfig<T>) -> Result<Trajectory<T>> {
    if cfg.sharing == Sharing::None {
        return Err(Error::Recurrence("the residual form needs feature functions shared over steps".into()));
    }
    if let Some(k) = (2..=cfg.steps).find(|&k| cfg.inputs[k].iter().any(|v| !v.is_zero())) {
        return Err(Error::Recurrence(format!("the residual form needs x^k = 0 for k > 1 (x^{k} is nonzero)")));
    }
    let f = |t: usize| &cfg.features[match cfg.sharing {
        Sharing::ShareAll => 0,
        _ => t,
    }];
    let h0 = cfg.inputs[0].clone();
    let mut r = cfg.inputs[1].clone();
    add_into(&mut r, &f(0).apply(&h0));
    let mut gathered = vec![r];
    let mut states = vec![h0];
    for k in 2..=cfg.steps {
        let prev = &gathered[k - 2];
        let h = cfg.transform(k - 1).apply(prev);
        let mut next = prev.clone();
        add_into(&mut next, &f(k - 1).apply(&h));
        states.push(h);
        gathered.push(next);
    }
    let last = cfg.transform(cfg.steps).apply(&gathered[cfg.steps - 1]);
    states.push(last);
    Ok(Trajectory { gathered, states })
}

/// Largest absolute difference per step between two trajectories (over both
/// the gathered sums and the states).
pub fn step_deviation<T: Real>(a: &Trajectory<T>, b: &Trajectory<T>) -> Vec<f64> {
    let d = |x: &[T], y: &[T]| x.iter().zip(y).map(|(&p, &q)| (p - q).abs().to_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    (0..a.gathered.len())
        .map(|k| d(&a.gathered[k], &b.gathered[k]).max(d(&a.states[k + 1], &b.states[k + 1])))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub steps: usize,
    pub dim: usize,
    pub trials: usize,
    pub tolerance: f64,
    /// Worst deviation at each step `1..=K` over all trials.
    pub per_step: Vec<f64>,
    pub max_deviation: f64,
    pub passed: bool,
}

/// Runs both unrollers on `trials` random shared-feature configurations.
pub fn equivalence_report<T: Real>(steps: usize, dim: usize, trials: usize, seed: u64, tolerance: f64) -> Result<EquivalenceReport> {
    if trials == 0 {
        return Err(Error::Recurrence("at least one trial is required".into()));
    }
    let runs: Vec<Vec<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let cfg = RecurrenceConfig::<T>::random(steps, dim, Sharing::ShareFOverK, seed.wrapping_add(i as u64))?;
            Ok(step_deviation(&unroll_general(&cfg)?, &unroll_residual_form(&cfg)?))
        })
        .collect::<Result<_>>()?;
    let per_step: Vec<f64> = (0..steps).map(|k| runs.iter().map(|r| r[k]).fold(0.0, f64::max)).collect();
    let max_deviation = per_step.iter().copied().fold(0.0, f64::max);
    Ok(EquivalenceReport { steps, dim, trials, tolerance, per_step, max_deviation, passed: max_deviation <= tolerance })
}

impl EquivalenceReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("step  max_deviation   (K={}, dim={}, trials={})\n", self.steps, self.dim, self.trials);
        for (k, d) in self.per_step.iter().enumerate() {
            s += &format!("{:>4}  {:.3e}\n", k + 1, d);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let cfg = RecurrenceConfig::<f64>::random(1, 3, Sharing::None, 1).unwrap();
        let out = unroll_general(&cfg).unwrap();
        let want = cfg.transform(1).apply(&cfg.feature(1, 0).apply(&cfg.inputs[0]));
        assert_eq!(out.states[1], want);
    }

    #[test]
    fn zero_features_give_transform_of_zero() {
        let mut cfg = RecurrenceConfig::<f64>::random(4, 3, Sharing::None, 2).unwrap();
        for f in cfg.features_mut() {
            f.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        let out = unroll_general(&cfg).unwrap();
        for k in 1..=4 {
            assert_eq!(out.states[k], cfg.transform(k).apply(&[0.0; 3]));
        }
    }

    #[test]
    fn residual_form_preconditions() {
        let cfg = RecurrenceConfig::<f64>::random(3, 2, Sharing::None, 3).unwrap();
        assert!(unroll_residual_form(&cfg).is_err());
        let mut cfg = RecurrenceConfig::<f64>::random(3, 2, Sharing::ShareFOverK, 3).unwrap();
        cfg.inputs[1] = vec![1.0, 0.0];
        assert!(unroll_residual_form(&cfg).is_ok());
        cfg.inputs[2] = vec![1.0, 0.0];
        assert!(unroll_residual_form(&cfg).is_err());
    }

    #[test]
    fn config_validation() {
        let l = Layer::new(2, vec![0.0; 4], vec![0.0; 2], Activation::Identity).unwrap();
        assert!(Layer::<f64>::new(2, vec![0.0; 3], vec![0.0; 2], Activation::Identity).is_err());
        let cfg = RecurrenceConfig::new(2, 2, Sharing::ShareFOverK, vec![l.clone()], vec![l.clone(); 2], vec![vec![0.0; 2]; 3]);
        assert!(cfg.is_err());
        assert!(equivalence_report::<f64>(2, 2, 0, 0, 1.0).is_err());
    }

    #[test]
    fn sharing_maps_to_one_function() {
        let cfg = RecurrenceConfig::<f64>::random(5, 2, Sharing::ShareFOverK, 4).unwrap();
        for t in 0..4 {
            for k in t + 1..=5 {
                assert!(std::ptr::eq(cfg.feature(k, t), cfg.feature(5, t)));
            }
        }
        let cfg = RecurrenceConfig::<f64>::random(5, 2, Sharing::None, 4).unwrap();
        assert!(!std::ptr::eq(cfg.feature(3, 1), cfg.feature(4, 1)));
    }
}
