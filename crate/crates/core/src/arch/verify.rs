//! Numerical agreement between the split and dual block realizations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::{BlockForm, DualPathState, Init, Mode, Network};
use super::presets::preset;
use super::spec::Pooling;
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Real, Tensor};

/// Largest deviations between the two realizations, each measured as
/// `max|a − b| / max(1, max|a|)` per tensor: absolute for unit-scale values,
/// relative for large gradients whose ulp already exceeds the tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormComparison {
    pub forward: f64,
    pub gradient: f64,
}

impl FormComparison {
    pub fn max(self) -> f64 {
        self.forward.max(self.gradient)
    }

    fn merge(self, other: Self) -> Self {
        FormComparison { forward: self.forward.max(other.forward), gradient: self.gradient.max(other.gradient) }
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-1.0..1.0)))
}

fn diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let scale = a.data().iter().fold(1.0f64, |m, v| m.max(v.to_f64().unwrap_or(f64::INFINITY).abs()));
    a.max_abs_diff(b).to_f64().unwrap_or(f64::INFINITY) / scale
}

struct Run<T> {
    outputs: Vec<Tensor<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

/// Runs `body` in train mode under one form, projects its outputs onto fixed
/// random weights and differentiates.
fn run<T: Real>(
    net: &Network<T>,
    form: BlockForm,
    weights_seed: u64,
    body: &dyn Fn(&Network<T>, &mut super::network::Session<T>, BlockForm) -> Result<Vec<Var>>,
) -> Result<Run<T>> {
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Train);
    let outs = body(net, &mut s, form)?;
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let mut loss: Option<Var> = None;
    for &o in &outs {
        let shape = s.tape.value(o)?.shape().to_vec();
        let term = s.tape.weighted_sum(o, uniform(&mut rng, &shape))?;
        loss = Some(match loss {
            Some(l) => s.tape.add(l, term)?,
            None => term,
        });
    }
    let params = s.params().to_vec();
    let loss = loss.expect("at least one output");
    let grads = tape.backward(loss)?;
    Ok(Run {
        outputs: outs.iter().map(|&o| tape.value(o).cloned()).collect::<Result<_>>()?,
        grads: params.iter().map(|&p| grads.get(p).cloned()).collect(),
    })
}

fn compare_runs<T: Real>(a: &Run<T>, b: &Run<T>) -> FormComparison {
    let forward = a.outputs.iter().zip(&b.outputs).map(|(x, y)| diff(x, y)).fold(0.0, f64::max);
    let gradient = a
        .grads
        .iter()
        .zip(&b.grads)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => diff(x, y),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    FormComparison { forward, gradient }
}

/// Whole-network comparison on a random NCHW batch; logits and all parameter gradients.
pub fn compare_network_forms<T: Real>(net: &Network<T>, input: &Tensor<T>, seed: u64) -> Result<FormComparison> {
    let body = |net: &Network<T>, s: &mut super::network::Session<T>, form: BlockForm| -> Result<Vec<Var>> {
        let x = s.tape.constant(input.clone());
        Ok(vec![net.forward(s, x, form, Pooling::Avg)?])
    };
    let split = run(net, BlockForm::Split, seed, &body)?;
    let dual = run(net, BlockForm::Dual, seed, &body)?;
    Ok(compare_runs(&split, &dual))
}

/// Single micro-block comparison on a random input state of the widths the
/// block expects; compares `y'`, `x'` and every parameter gradient.
pub fn compare_block_forms<T: Real>(
    net: &Network<T>,
    stage: usize,
    block: usize,
    batch: usize,
    hw: usize,
    seed: u64,
) -> Result<FormComparison> {
    let mb = net.stages()[stage].blocks[block];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // An entry block receives the previous stage's joint state as a (y, x) pair.
    let (y_w, x_w) = if block == 0 {
        match stage.checked_sub(1).map(|p| &net.stages()[p]) {
            Some(prev) if prev.blocks[0].residual > 0 => {
                let last = prev.blocks.last().expect("non-empty stage");
                (last.residual, last.dense_out())
            }
            Some(_) => (0, mb.joint_in),
            None => (mb.joint_in, 0),
        }
    } else {
        (mb.residual, mb.dense_in)
    };
    let y = (y_w > 0).then(|| uniform::<T>(&mut rng, &[batch, y_w, hw, hw]));
    let x = (x_w > 0).then(|| uniform::<T>(&mut rng, &[batch, x_w, hw, hw]));
    let body = |net: &Network<T>, s: &mut super::network::Session<T>, form: BlockForm| -> Result<Vec<Var>> {
        let state = DualPathState { y: y.clone().map(|t| s.tape.constant(t)), x: x.clone().map(|t| s.tape.constant(t)) };
        let out = net.block_forward(s, stage, block, state, form)?;
        Ok([out.y, out.x].into_iter().flatten().collect())
    };
    let split = run(net, BlockForm::Split, seed ^ 0x5eed, &body)?;
    let dual = run(net, BlockForm::Dual, seed ^ 0x5eed, &body)?;
    Ok(compare_runs(&split, &dual))
}

/// Blocks of the 92-layer preset sampled for the equivalence check: every
/// stage entry plus one interior block per stage.
pub const DPN92_SAMPLES: [(usize, usize); 8] = [(0, 0), (0, 2), (1, 0), (1, 3), (2, 0), (2, 11), (3, 0), (3, 2)];

#[derive(Debug, Clone)]
pub struct FormReport {
    pub case: String,
    pub seed: u64,
    pub deviation: FormComparison,
}

/// Split vs dual agreement in 32-bit for the toy preset (whole network) and
/// sampled blocks of the 92-layer preset, one weight initialization per seed.
pub fn dual_vs_split_suite(seeds: &[u64]) -> Result<Vec<FormReport>> {
    let toy = preset("dpn-toy")?;
    let dpn92 = preset("dpn92")?;
    let mut out = Vec::new();
    for &seed in seeds {
        let net = Network::<f32>::new(&toy, Init::Random { seed })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let input = uniform::<f32>(&mut rng, &[4, 3, 32, 32]);
        out.push(FormReport { case: "dpn-toy".into(), seed, deviation: compare_network_forms(&net, &input, seed)? });

        let net = Network::<f32>::new(&dpn92, Init::Random { seed })?;
        let mut worst = FormComparison { forward: 0.0, gradient: 0.0 };
        for &(stage, block) in &DPN92_SAMPLES {
            worst = worst.merge(compare_block_forms(&net, stage, block, 2, 4, seed.wrapping_mul(31) + stage as u64 * 7 + block as u64)?);
        }
        out.push(FormReport { case: "dpn92-blocks".into(), seed, deviation: worst });
    }
    Ok(out)
}
