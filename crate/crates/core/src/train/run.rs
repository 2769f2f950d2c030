use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::data::{random_augment, Dataset};
use super::metrics::{Accuracy, EpochMetrics};
use super::sgd::{sgd_step, SgdState};
use crate::arch::{BlockForm, Mode, Network, Pooling};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::ops::StatsAccumulator;
use crate::tensor::{Real, Tensor};

/// Number of rows whose true label is among the `k` largest logits. Ties are
/// broken towards the lower class index.
pub fn topk_hits<T: Real>(logits: &Tensor<T>, labels: &[usize], k: usize) -> usize {
    let classes = logits.shape()[1];
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = &logits.data()[i * classes..][..classes];
            let target = row[y];
            let above = row.iter().enumerate().filter(|&(j, &v)| v > target || (v == target && j < y)).count();
            above < k
        })
        .count()
}

fn check_classes<T: Real>(net: &Network<T>, data: &Dataset<T>) -> Result<()> {
    let k = net.spec().classifier.classes;
    if data.classes != k {
        return Err(Error::Data(format!("dataset has {} classes, network predicts {k}", data.classes)));
    }
    Ok(())
}

/// SGD with momentum over `cfg.epochs` epochs. Reports per-epoch mean loss and
/// running top-1/top-5 of the training batches (train-mode forward).
pub fn train<T: Real>(
    net: &mut Network<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    check_classes(net, data)?;
    if data.is_empty() && cfg.epochs > 0 {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SgdState::new(net.params());
    let mut log = Vec::with_capacity(cfg.epochs);
    let top = 5.min(net.spec().classifier.classes);
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut hit1, mut hit5) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let aug: Vec<_> = chunk.iter().map(|_| random_augment(&mut rng, cfg.random_crop, cfg.flip)).collect();
            let (x, labels) = data.batch(chunk, Some(&aug))?;
            let mut tape = Tape::new();
            let mut s = net.session(&mut tape, Mode::Train);
            let input = s.tape.constant(x);
            let logits = net.forward(&mut s, input, BlockForm::Split, Pooling::Avg)?;
            let loss = s.tape.softmax_cross_entropy(logits, &labels)?;
            let params = s.params().to_vec();
            let stats = s.take_batch_stats();
            let value = tape.value(loss)?.data()[0].to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::NonFinite { what: "training loss".into(), step: state.step });
            }
            let out = tape.value(logits)?;
            hit1 += topk_hits(out, &labels, 1);
            hit5 += topk_hits(out, &labels, top);
            let mut grads = tape.backward(loss)?;
            let grads: Vec<_> = params.iter().map(|&p| grads.take(p)).collect();
            sgd_step(net.params_mut(), &grads, &mut state, lr, cfg.momentum, cfg.weight_decay)?;
            net.apply_batch_stats(&stats);
            loss_sum += value * chunk.len() as f64;
        }
        let n = data.len() as f64;
        let m = EpochMetrics { epoch: epoch + 1, lr, loss: loss_sum / n, top1: hit1 as f64 / n, top5: hit5 as f64 / n };
        on_epoch(&m);
        log.push(m);
    }
    Ok(log)
}

/// Eval-mode top-1/top-5 accuracy; batches run in parallel.
pub fn evaluate<T: Real>(net: &Network<T>, data: &Dataset<T>, pooling: Pooling, batch_size: usize) -> Result<Accuracy> {
    check_classes(net, data)?;
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let top = 5.min(net.spec().classifier.classes);
    let order: Vec<usize> = (0..data.len()).collect();
    let hits = order
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let (x, labels) = data.batch(chunk, None)?;
            let logits = net.infer(&x, pooling)?;
            Ok((topk_hits(&logits, &labels, 1), topk_hits(&logits, &labels, top)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len();
    let (h1, h5) = hits.iter().fold((0, 0), |(a, b), &(x, y)| (a + x, b + y));
    Ok(Accuracy { top1: h1 as f64 / n as f64, top5: h5 as f64 / n as f64, samples: n })
}

/// Replaces every BN layer's running statistics with the pooled batch
/// statistics of one pass over `data` (no augmentation). Weights are untouched.
pub fn refine_bn<T: Real>(net: &mut Network<T>, data: &Dataset<T>, batch_size: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("cannot refine batch norm on an empty dataset".into()));
    }
    let mut acc: Vec<StatsAccumulator> = net.running().iter().map(|r| StatsAccumulator::new(r.mean.len())).collect();
    let order: Vec<usize> = (0..data.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, _) = data.batch(chunk, None)?;
        let mut tape = Tape::new();
        let mut s = net.session(&mut tape, Mode::Train);
        let input = s.tape.constant(x);
        net.trunk(&mut s, input, BlockForm::Split).and_then(|state| net.head(&mut s, state, Pooling::Avg))?;
        for (a, stats) in acc.iter_mut().zip(s.batch_stats()) {
            if let Some(stats) = stats {
                a.push(stats);
            }
        }
    }
    for (running, a) in net.running_mut().iter_mut().zip(&acc) {
        if let Some(pooled) = a.finish() {
            *running = pooled;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_counts() {
        let logits = Tensor::new(vec![2, 3], vec![0.1, 0.9, 0.0, 0.5, 0.2, 0.3]).unwrap();
        assert_eq!(topk_hits(&logits, &[1, 2], 1), 1);
        assert_eq!(topk_hits(&logits, &[1, 2], 2), 2);
        assert_eq!(topk_hits(&logits, &[0, 1], 3), 2);
        let tied = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        assert_eq!(topk_hits(&tied, &[0], 1), 1);
        assert_eq!(topk_hits(&tied, &[1], 1), 0);
    }
}
