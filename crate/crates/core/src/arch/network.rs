//! Networks built from an [`ArchSpec`]: parameter store, BN running
//! statistics and the forward graph in both block realizations.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{ArchSpec, Family, Pooling, StageSpec, INPUT_CHANNELS};
use crate::autograd::{BnMode, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{BatchStats, Conv2dParams, Pool2dParams, RunningStats, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How a dual path micro-block is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockForm {
    /// One joint tensor, a single `conv_c`, then split into residual and dense parts.
    Split,
    /// Residual and dense paths kept as separate tensors; every layer touching
    /// both is computed as a sum of per-path pieces.
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Gaussian conv weights with standard deviation `sqrt(2 / fan_out)`.
    Random { seed: u64 },
    /// All weights zero. Cheap to allocate, meant for inspection and counting.
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the network's running statistics.
    pub stats: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub params: Conv2dParams,
}

/// BN → ReLU → conv.
#[derive(Debug, Clone, Copy)]
pub struct PreActConv {
    pub bn: BnLayer,
    pub conv: ConvLayer,
}

#[derive(Debug, Clone, Copy)]
pub enum Transition {
    /// 1×1 projection with the entry stride from the joint state to a fresh
    /// residual path of width `residual` and an initial dense path of width `dense`.
    Projection { unit: PreActConv, residual: usize, dense: usize },
    /// Dense family: 1×1 reduction, followed by 2×2 average pooling when strided.
    Reduce { unit: PreActConv, pool_stride: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct MicroBlock {
    pub family: Family,
    /// Width of the joint state handed to the block (before any stage-entry transition).
    pub joint_in: usize,
    /// Residual width `R`; zero for the dense family.
    pub residual: usize,
    /// Dense path width the block's increment is appended to.
    pub dense_in: usize,
    pub increment: usize,
    pub conv_a: PreActConv,
    pub conv_b: PreActConv,
    /// Absent for the dense family, whose 3×3 layer emits the increment directly.
    pub conv_c: Option<PreActConv>,
}

impl MicroBlock {
    pub fn dense_out(&self) -> usize {
        self.dense_in + self.increment
    }
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub spec: StageSpec,
    /// Present when the stage entry changes width or resolution.
    pub transition: Option<Transition>,
    /// Dense path width right after the stage entry.
    pub entry_dense: usize,
    pub blocks: Vec<MicroBlock>,
}

/// State carried between micro-blocks. The joint state is `concat(y, x)`.
#[derive(Debug, Clone, Copy)]
pub struct DualPathState {
    pub y: Option<Var>,
    pub x: Option<Var>,
}

impl DualPathState {
    pub fn joint<T: Real>(&self, tape: &mut Tape<T>) -> Result<Var> {
        match (self.y, self.x) {
            (Some(y), Some(x)) => tape.concat_channels(y, x),
            (Some(v), None) | (None, Some(v)) => Ok(v),
            (None, None) => Err(Error::invalid("micro_block_forward", "empty state")),
        }
    }

    fn widths<T: Real>(&self, tape: &Tape<T>) -> Result<(usize, usize)> {
        let width = |v: Option<Var>| -> Result<usize> {
            v.map_or(Ok(0), |v| Ok(tape.value(v)?.shape().get(1).copied().unwrap_or(0)))
        };
        Ok((width(self.y)?, width(self.x)?))
    }
}

/// One forward pass: parameters registered as tape leaves plus the batch
/// statistics observed by train-mode BN layers.
pub struct Session<'t, T> {
    pub tape: &'t mut Tape<T>,
    vars: Vec<Var>,
    mode: Mode,
    stats: Vec<Option<BatchStats<T>>>,
}

impl<T: Real> Session<'_, T> {
    pub fn param(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Tape variables of all parameters, in network order.
    pub fn params(&self) -> &[Var] {
        &self.vars
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_stats(&self) -> &[Option<BatchStats<T>>] {
        &self.stats
    }

    pub fn take_batch_stats(&mut self) -> Vec<Option<BatchStats<T>>> {
        let n = self.stats.len();
        std::mem::replace(&mut self.stats, vec![None; n])
    }

    fn record(&mut self, slot: usize, offset: usize, part: BatchStats<T>) {
        match &mut self.stats[slot] {
            Some(s) if offset > 0 && s.mean.len() == offset => {
                s.mean.extend(part.mean);
                s.var.extend(part.var);
            }
            entry => *entry = Some(part),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ArchSpec,
    params: Vec<Parameter<T>>,
    bn_names: Vec<String>,
    running: Vec<RunningStats<T>>,
    stem_conv: ConvLayer,
    stem_bn: BnLayer,
    stages: Vec<Stage>,
    head_bn: BnLayer,
    fc_weight: ParamId,
    fc_bias: ParamId,
    pub epsilon: T,
    pub momentum: T,
}

struct Builder<T> {
    params: Vec<Parameter<T>>,
    bn_names: Vec<String>,
    bn_channels: Vec<usize>,
    rng: Option<ChaCha8Rng>,
}

impl<T: Real> Builder<T> {
    fn push(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter { name, value });
        ParamId(self.params.len() - 1)
    }

    fn gaussian(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        match &mut self.rng {
            Some(rng) => {
                let normal = Normal::new(0.0, std).expect("positive std");
                Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
            }
            None => Tensor::zeros(shape),
        }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, groups: usize) -> ConvLayer {
        let fan_out = (cout * kernel * kernel) as f64;
        let w = self.gaussian(vec![cout, cin / groups, kernel, kernel], (2.0 / fan_out).sqrt());
        ConvLayer {
            weight: self.push(format!("{name}.weight"), w),
            in_channels: cin,
            out_channels: cout,
            kernel,
            params: Conv2dParams::new(stride, kernel / 2, groups),
        }
    }

    fn bn(&mut self, name: &str, channels: usize) -> BnLayer {
        let gamma = self.push(format!("{name}.gamma"), Tensor::full(vec![channels], T::one()));
        let beta = self.push(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        self.bn_names.push(name.to_string());
        self.bn_channels.push(channels);
        BnLayer { gamma, beta, stats: self.bn_names.len() - 1, channels }
    }

    fn preact(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, groups: usize) -> PreActConv {
        PreActConv { bn: self.bn(&format!("{name}.bn"), cin), conv: self.conv(&format!("{name}.conv"), cin, cout, kernel, stride, groups) }
    }
}

fn block_name(stage: usize, block: usize, part: &str) -> String {
    format!("stage{}.block{}.{part}", stage + 1, block + 1)
}

impl<T: Real> Network<T> {
    pub fn new(spec: &ArchSpec, init: Init) -> Result<Self> {
        spec.validate()?;
        let mut b = Builder::<T> {
            params: Vec::new(),
            bn_names: Vec::new(),
            bn_channels: Vec::new(),
            rng: match init {
                Init::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
                Init::Zeros => None,
            },
        };
        let c1 = spec.conv1;
        let stem_conv = b.conv("conv1", INPUT_CHANNELS, c1.out_channels, c1.kernel, c1.stride, 1);
        let stem_bn = b.bn("conv1.bn", c1.out_channels);

        let (mut y_w, mut x_w) = (c1.out_channels, 0usize);
        let mut stages = Vec::with_capacity(spec.stages.len());
        for (si, st) in spec.stages.iter().enumerate() {
            let joint = y_w + x_w;
            let r = st.residual_width;
            let k = st.dense_increment;
            let mut blocks = Vec::with_capacity(st.blocks);
            let (transition, entry_dense) = if st.family == Family::Dense {
                let reduce = st.stride != 1 || joint != r;
                let t = reduce.then(|| Transition::Reduce {
                    unit: b.preact(&format!("stage{}.transition", si + 1), joint, r, 1, 1, 1),
                    pool_stride: st.stride,
                });
                let base = if reduce { r } else { joint };
                let mut width = base;
                for j in 0..st.blocks {
                    let joint_in = if j == 0 { joint } else { width };
                    blocks.push(MicroBlock {
                        family: Family::Dense,
                        joint_in,
                        residual: 0,
                        dense_in: width,
                        increment: k,
                        conv_a: b.preact(&block_name(si, j, "a"), width, st.bottleneck, 1, 1, 1),
                        conv_b: b.preact(&block_name(si, j, "b"), st.bottleneck, k, 3, 1, st.groups),
                        conv_c: None,
                    });
                    width += k;
                }
                (y_w, x_w) = (0, width);
                (t, base)
            } else {
                let d0 = if st.family == Family::DualPath { spec.dense_init * k } else { 0 };
                let identity = st.stride == 1 && x_w == 0 && y_w == r && d0 == 0;
                let t = (!identity).then(|| Transition::Projection {
                    unit: b.preact(&format!("stage{}.proj", si + 1), joint, r + d0, 1, st.stride, 1),
                    residual: r,
                    dense: d0,
                });
                let mut width = d0;
                for j in 0..st.blocks {
                    let joint_in = if j == 0 { joint } else { r + width };
                    let stride = if j == 0 { st.stride } else { 1 };
                    blocks.push(MicroBlock {
                        family: st.family,
                        joint_in,
                        residual: r,
                        dense_in: width,
                        increment: k,
                        conv_a: b.preact(&block_name(si, j, "a"), joint_in, st.bottleneck, 1, 1, 1),
                        conv_b: b.preact(&block_name(si, j, "b"), st.bottleneck, st.bottleneck, 3, stride, st.groups),
                        conv_c: Some(b.preact(&block_name(si, j, "c"), st.bottleneck, r + k, 1, 1, 1)),
                    });
                    width += k;
                }
                (y_w, x_w) = (r, width);
                (t, d0)
            };
            stages.push(Stage { spec: *st, transition, entry_dense, blocks });
        }

        let head = y_w + x_w;
        let head_bn = b.bn("head.bn", head);
        let classes = spec.classifier.classes;
        let fc_w = b.gaussian(vec![classes, head], (1.0 / head as f64).sqrt());
        let fc_weight = b.push("fc.weight".into(), fc_w);
        let fc_bias = b.push("fc.bias".into(), Tensor::zeros(vec![classes]));

        let running = b.bn_channels.iter().map(|&c| RunningStats::new(c)).collect();
        Ok(Network {
            spec: spec.clone(),
            params: b.params,
            bn_names: b.bn_names,
            running,
            stem_conv,
            stem_bn,
            stages,
            head_bn,
            fc_weight,
            fc_bias,
            epsilon: T::lit(DEFAULT_EPSILON),
            momentum: T::lit(DEFAULT_MOMENTUM),
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    /// Total number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn running(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [RunningStats<T>] {
        &mut self.running
    }

    /// Final joint width seen by the classifier.
    pub fn feature_width(&self) -> usize {
        self.head_bn.channels
    }

    /// Folds the batch statistics of a train-mode pass into the running averages.
    pub fn apply_batch_stats(&mut self, stats: &[Option<BatchStats<T>>]) {
        for (running, batch) in self.running.iter_mut().zip(stats) {
            if let Some(batch) = batch {
                running.update(batch, self.momentum);
            }
        }
    }

    /// Registers every parameter on `tape` and starts a forward pass.
    pub fn session<'t>(&self, tape: &'t mut Tape<T>, mode: Mode) -> Session<'t, T> {
        let vars = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        Session { tape, vars, mode, stats: vec![None; self.running.len()] }
    }

    fn bn(&self, s: &mut Session<T>, layer: &BnLayer, x: Var, range: Range<usize>) -> Result<Var> {
        let full = range.start == 0 && range.end == layer.channels;
        let (mut gamma, mut beta) = (s.param(layer.gamma), s.param(layer.beta));
        if !full {
            gamma = s.tape.slice_axis(gamma, 0, range.start, range.end)?;
            beta = s.tape.slice_axis(beta, 0, range.start, range.end)?;
        }
        let running = &self.running[layer.stats];
        let mode = match s.mode {
            Mode::Train => BnMode::Train { epsilon: self.epsilon },
            Mode::Eval => BnMode::Eval {
                mean: &running.mean[range.clone()],
                var: &running.var[range.clone()],
                epsilon: self.epsilon,
            },
        };
        let (y, stats) = s.tape.batch_norm(x, gamma, beta, mode)?;
        if let Some(stats) = stats {
            s.record(layer.stats, range.start, stats);
        }
        Ok(y)
    }

    fn conv(&self, s: &mut Session<T>, layer: &ConvLayer, x: Var, out: Range<usize>, input: Range<usize>) -> Result<Var> {
        let mut w = s.param(layer.weight);
        if input.start != 0 || input.end != layer.in_channels {
            w = s.tape.slice_axis(w, 1, input.start, input.end)?;
        }
        if out.start != 0 || out.end != layer.out_channels {
            w = s.tape.slice_axis(w, 0, out.start, out.end)?;
        }
        s.tape.conv2d(x, w, layer.params)
    }

    fn bn_relu(&self, s: &mut Session<T>, layer: &BnLayer, x: Var, range: Range<usize>) -> Result<Var> {
        let h = self.bn(s, layer, x, range)?;
        s.tape.relu(h)
    }

    fn preact(&self, s: &mut Session<T>, unit: &PreActConv, x: Var) -> Result<Var> {
        let h = self.bn_relu(s, &unit.bn, x, 0..unit.bn.channels)?;
        self.conv(s, &unit.conv, h, 0..unit.conv.out_channels, 0..unit.conv.in_channels)
    }

    /// BN-ReLU applied piecewise to the parts of a joint state.
    fn bn_relu_parts(&self, s: &mut Session<T>, bn: &BnLayer, parts: &[(Var, Range<usize>)]) -> Result<Vec<(Var, Range<usize>)>> {
        parts.iter().map(|(v, r)| Ok((self.bn_relu(s, bn, *v, r.clone())?, r.clone()))).collect()
    }

    /// A conv over a joint state as the sum of convs over its parts.
    fn conv_parts(&self, s: &mut Session<T>, conv: &ConvLayer, parts: &[(Var, Range<usize>)], out: Range<usize>) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (h, r) in parts {
            let c = self.conv(s, conv, *h, out.clone(), r.clone())?;
            acc = Some(match acc {
                Some(a) => s.tape.add(a, c)?,
                None => c,
            });
        }
        acc.ok_or_else(|| Error::invalid("micro_block_forward", "empty state"))
    }

    pub fn stem_forward(&self, s: &mut Session<T>, input: Var) -> Result<DualPathState> {
        let shape = s.tape.value(input)?.shape().to_vec();
        let &[_, c, h, w] = shape.as_slice() else {
            return Err(Error::shape("build_network", format!("expected N×3×H×W input, got {shape:?}")));
        };
        if c != INPUT_CHANNELS {
            return Err(Error::shape("build_network", format!("expected {INPUT_CHANNELS} input channels, got {c}")));
        }
        self.spec.stage_extents(h)?;
        self.spec.stage_extents(w)?;
        let x = self.conv(s, &self.stem_conv, input, 0..self.stem_conv.out_channels, 0..INPUT_CHANNELS)?;
        let mut x = self.bn_relu(s, &self.stem_bn, x, 0..self.stem_bn.channels)?;
        if let Some(p) = self.spec.stem_pool {
            x = s.tape.max_pool2d(x, Pool2dParams { kernel: p.kernel, stride: p.stride, padding: p.kernel / 2 })?;
        }
        Ok(DualPathState { y: Some(x), x: None })
    }

    /// One micro-block, including the stage-entry transition for `block == 0`.
    pub fn block_forward(
        &self,
        s: &mut Session<T>,
        stage: usize,
        block: usize,
        state: DualPathState,
        form: BlockForm,
    ) -> Result<DualPathState> {
        let st = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::invalid("micro_block_forward", format!("no stage {stage}")))?;
        let mb = st
            .blocks
            .get(block)
            .ok_or_else(|| Error::invalid("micro_block_forward", format!("stage {stage} has no block {block}")))?;
        let (y_w, x_w) = state.widths(s.tape)?;
        let expected_ok = if block == 0 {
            y_w + x_w == mb.joint_in
        } else {
            y_w == mb.residual && x_w == mb.dense_in
        };
        if !expected_ok {
            return Err(Error::shape(
                "micro_block_forward",
                format!("state widths (y {y_w}, x {x_w}) do not match block joint {} (R {}, dense {})", mb.joint_in, mb.residual, mb.dense_in),
            ));
        }
        let entry = if block == 0 { st.transition.as_ref() } else { None };
        match (mb.family, form) {
            (Family::Dense, _) => self.dense_block(s, mb, entry, state),
            (_, BlockForm::Split) => self.split_block(s, mb, entry, state),
            (_, BlockForm::Dual) => self.dual_block(s, mb, entry, state),
        }
    }

    fn dense_block(&self, s: &mut Session<T>, mb: &MicroBlock, entry: Option<&Transition>, state: DualPathState) -> Result<DualPathState> {
        let mut joint = state.joint(s.tape)?;
        if let Some(Transition::Reduce { unit, pool_stride }) = entry {
            joint = self.preact(s, unit, joint)?;
            if *pool_stride > 1 {
                joint = s.tape.avg_pool2d(joint, Pool2dParams { kernel: 2, stride: *pool_stride, padding: 0 })?;
            }
        }
        let a = self.preact(s, &mb.conv_a, joint)?;
        let b = self.preact(s, &mb.conv_b, a)?;
        Ok(DualPathState { y: None, x: Some(s.tape.concat_channels(joint, b)?) })
    }

    fn update(&self, s: &mut Session<T>, mb: &MicroBlock, y0: Option<Var>, x0: Option<Var>, res: Var, inc: Option<Var>) -> Result<DualPathState> {
        let y0 = y0.ok_or_else(|| Error::invalid("micro_block_forward", "missing residual path"))?;
        let y = s.tape.add(y0, res)?;
        let x = match (x0, inc) {
            (Some(x), Some(i)) => Some(s.tape.concat_channels(x, i)?),
            (None, i) => i,
            (x, None) => x,
        };
        debug_assert!(mb.dense_out() == 0 || x.is_some());
        Ok(DualPathState { y: Some(y), x })
    }

    fn split_block(&self, s: &mut Session<T>, mb: &MicroBlock, entry: Option<&Transition>, state: DualPathState) -> Result<DualPathState> {
        let joint = state.joint(s.tape)?;
        let (r, k) = (mb.residual, mb.increment);
        let (y0, x0) = match entry {
            Some(Transition::Projection { unit, residual, dense }) => {
                let p = self.preact(s, unit, joint)?;
                if *dense > 0 {
                    (Some(s.tape.slice_channels(p, 0, *residual)?), Some(s.tape.slice_channels(p, *residual, residual + dense)?))
                } else {
                    (Some(p), None)
                }
            }
            _ => (state.y, state.x),
        };
        let a = self.preact(s, &mb.conv_a, joint)?;
        let b = self.preact(s, &mb.conv_b, a)?;
        let c = self.preact(s, mb.conv_c.as_ref().expect("dual path block has conv_c"), b)?;
        let (res, inc) = if k > 0 {
            (s.tape.slice_channels(c, 0, r)?, Some(s.tape.slice_channels(c, r, r + k)?))
        } else {
            (c, None)
        };
        self.update(s, mb, y0, x0, res, inc)
    }

    fn dual_block(&self, s: &mut Session<T>, mb: &MicroBlock, entry: Option<&Transition>, state: DualPathState) -> Result<DualPathState> {
        let (y_w, x_w) = state.widths(s.tape)?;
        let mut parts = Vec::with_capacity(2);
        if let Some(y) = state.y {
            parts.push((y, 0..y_w));
        }
        if let Some(x) = state.x {
            parts.push((x, y_w..y_w + x_w));
        }
        let (r, k) = (mb.residual, mb.increment);
        let (y0, x0) = match entry {
            Some(Transition::Projection { unit, residual, dense }) => {
                let h = self.bn_relu_parts(s, &unit.bn, &parts)?;
                let y0 = self.conv_parts(s, &unit.conv, &h, 0..*residual)?;
                let x0 = if *dense > 0 { Some(self.conv_parts(s, &unit.conv, &h, *residual..residual + dense)?) } else { None };
                (Some(y0), x0)
            }
            _ => (state.y, state.x),
        };
        let h = self.bn_relu_parts(s, &mb.conv_a.bn, &parts)?;
        let a = self.conv_parts(s, &mb.conv_a.conv, &h, 0..mb.conv_a.conv.out_channels)?;
        let b = self.preact(s, &mb.conv_b, a)?;
        let c = mb.conv_c.as_ref().expect("dual path block has conv_c");
        let hc = self.bn_relu(s, &c.bn, b, 0..c.bn.channels)?;
        let full_in = 0..c.conv.in_channels;
        let res = self.conv(s, &c.conv, hc, 0..r, full_in.clone())?;
        let inc = if k > 0 { Some(self.conv(s, &c.conv, hc, r..r + k, full_in)?) } else { None };
        self.update(s, mb, y0, x0, res, inc)
    }

    /// Stem and all stages; returns the final state before the head.
    pub fn trunk(&self, s: &mut Session<T>, input: Var, form: BlockForm) -> Result<DualPathState> {
        let mut state = self.stem_forward(s, input)?;
        for (si, st) in self.stages.iter().enumerate() {
            for bi in 0..st.blocks.len() {
                state = self.block_forward(s, si, bi, state, form)?;
            }
        }
        Ok(state)
    }

    /// Final BN-ReLU on the joint features, global pooling and the classifier.
    pub fn head(&self, s: &mut Session<T>, state: DualPathState, pooling: Pooling) -> Result<Var> {
        let joint = state.joint(s.tape)?;
        let h = self.bn_relu(s, &self.head_bn, joint, 0..self.head_bn.channels)?;
        let pooled = match pooling {
            Pooling::Avg => s.tape.global_avg_pool(h)?,
            Pooling::MeanMax => s.tape.mean_max_pool(h)?,
        };
        let (w, b) = (s.param(self.fc_weight), s.param(self.fc_bias));
        s.tape.linear(pooled, w, b)
    }

    /// Logits `N×classes` for an `N×3×H×W` input.
    pub fn forward(&self, s: &mut Session<T>, input: Var, form: BlockForm, pooling: Pooling) -> Result<Var> {
        let state = self.trunk(s, input, form)?;
        self.head(s, state, pooling)
    }

    /// Forward pass with fresh tape state, returning logits as a tensor.
    pub fn infer(&self, input: &Tensor<T>, pooling: Pooling) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut s = self.session(&mut tape, Mode::Eval);
        let x = s.tape.constant(input.clone());
        let logits = self.forward(&mut s, x, BlockForm::Split, pooling)?;
        Ok(tape.value(logits)?.clone())
    }

    /// Replaces parameter values and running statistics by name.
    pub fn load_named(&mut self, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let check = |name: &str, t: &Tensor<T>, shape: &[usize]| {
            if t.shape() == shape {
                Ok(())
            } else {
                Err(Error::Checkpoint(format!("`{name}` has shape {:?}, expected {:?}", t.shape(), shape)))
            }
        };
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let t = find(&p.name)?;
            check(&p.name, t, p.value.shape())?;
            params.push(t.clone());
        }
        let mut running = Vec::with_capacity(self.running.len());
        for (name, r) in self.bn_names.iter().zip(&self.running) {
            let (mn, vn) = (format!("{name}.running_mean"), format!("{name}.running_var"));
            let (m, v) = (find(&mn)?, find(&vn)?);
            check(&mn, m, &[r.mean.len()])?;
            check(&vn, v, &[r.var.len()])?;
            running.push(RunningStats { mean: m.data().to_vec(), var: v.data().to_vec() });
        }
        for (p, t) in self.params.iter_mut().zip(params) {
            p.value = t;
        }
        self.running = running;
        Ok(())
    }

    /// Parameters followed by running statistics, as `(name, tensor)` pairs.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<_> = self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for (name, r) in self.bn_names.iter().zip(&self.running) {
            out.push((format!("{name}.running_mean"), Tensor::new(vec![r.mean.len()], r.mean.clone()).expect("non-empty")));
            out.push((format!("{name}.running_var"), Tensor::new(vec![r.var.len()], r.var.clone()).expect("non-empty")));
        }
        out
    }
}
