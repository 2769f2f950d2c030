use crate::error::{Error, Result};
use crate::tensor::DType;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub steps: Vec<usize>,
    pub decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub random_crop: bool,
    pub flip: bool,
    pub precision: DType,
}

impl Default for TrainConfig {
    /// Desk-scale schedule for the toy preset.
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            steps: vec![15, 25],
            decay: 0.1,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            random_crop: true,
            flip: true,
            precision: DType::F32,
        }
    }
}

impl TrainConfig {
    /// Defaults with the base learning rate recorded for a named architecture.
    /// Step positions stay at the desk-scale defaults.
    pub fn for_arch(name: &str) -> Self {
        let base_lr = match name {
            "dpn92" | "dpn131" => 0.1f64.sqrt(),
            "dpn98" => 0.4,
            _ => 0.1,
        };
        TrainConfig { base_lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| Err(Error::invalid("train_config", detail.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay factor must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }

    /// Piecewise-constant schedule: `base_lr · decay^(number of steps ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.steps.iter().filter(|&&s| epoch >= s).count();
        self.base_lr * self.decay.powi(drops as i32)
    }
}
