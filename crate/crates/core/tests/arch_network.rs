use dpn_core::arch::{
    compare_block_forms, compare_network_forms, parse_spec, preset, BlockForm, DualPathState, Init, Mode, Network,
    Pooling, Transition, PRESET_NAMES,
};
use dpn_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random<T: dpn_core::Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-1.0..1.0)))
}

fn channels(tape: &Tape<f32>, v: Option<dpn_core::Var>) -> usize {
    v.map_or(0, |v| tape.value(v).unwrap().shape()[1])
}

#[test]
fn dpn92_logits_and_stage_extents() {
    let net = Network::<f32>::new(&preset("dpn92").unwrap(), Init::Random { seed: 1 }).unwrap();
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Eval);
    let x = s.tape.constant(random(&[1, 3, 224, 224], 2));
    let mut state = net.stem_forward(&mut s, x).unwrap();
    let mut extents = Vec::new();
    for (si, st) in net.stages().iter().enumerate() {
        for bi in 0..st.blocks.len() {
            state = net.block_forward(&mut s, si, bi, state, BlockForm::Split).unwrap();
        }
        extents.push(s.tape.value(state.y.unwrap()).unwrap().shape()[2]);
    }
    assert_eq!(extents, [56, 28, 14, 7]);
    // Hand count: the last stage starts its dense path at 2·128 and adds 3·128.
    assert_eq!(channels(s.tape, state.x), 2 * 128 + 3 * 128);
    assert_eq!(channels(s.tape, state.y), 2048);
    let logits = net.head(&mut s, state, Pooling::Avg).unwrap();
    assert_eq!(s.tape.value(logits).unwrap().shape(), [1, 1000]);
}

#[test]
fn toy_forward_and_backward() {
    let spec = parse_spec(
        "name small\nconv1 3 8 1\nstempool 3 2\nstage 1 4 2 8 2 1 dualpath\nstage 1 4 2 8 2 2 dualpath\nclassifier 5 avg\n",
    )
    .unwrap();
    let net = Network::<f32>::new(&spec, Init::Random { seed: 3 }).unwrap();
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Train);
    let x = s.tape.constant(random(&[1, 3, 32, 32], 4));
    let logits = net.forward(&mut s, x, BlockForm::Split, Pooling::Avg).unwrap();
    let loss = s.tape.softmax_cross_entropy(logits, &[2]).unwrap();
    let params = s.params().to_vec();
    let grads = tape.backward(loss).unwrap();
    assert!(params.iter().all(|&p| grads.get(p).is_some_and(|g| g.all_finite())));
}

#[test]
fn tiny_inputs_rejected() {
    let net = Network::<f32>::new(&preset("densenet161").unwrap(), Init::Zeros).unwrap();
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Eval);
    let x = s.tape.constant(Tensor::zeros(vec![1, 3, 8, 8]));
    assert!(net.forward(&mut s, x, BlockForm::Split, Pooling::Avg).is_err());
    let x = s.tape.constant(Tensor::zeros(vec![1, 1, 64, 64]));
    assert!(net.forward(&mut s, x, BlockForm::Split, Pooling::Avg).is_err());
}

#[test]
fn dense_width_arithmetic() {
    for name in PRESET_NAMES {
        let net = Network::<f32>::new(&preset(name).unwrap(), Init::Zeros).unwrap();
        for st in net.stages() {
            for (j, b) in st.blocks.iter().enumerate() {
                assert_eq!(b.dense_out(), st.entry_dense + (j + 1) * st.spec.dense_increment, "{name}");
            }
        }
    }
    // The same arithmetic on real tensors.
    let net = Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 5 }).unwrap();
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Train);
    let x = s.tape.constant(random(&[2, 3, 32, 32], 6));
    let mut state = net.stem_forward(&mut s, x).unwrap();
    for (si, st) in net.stages().iter().enumerate() {
        for bi in 0..st.blocks.len() {
            state = net.block_forward(&mut s, si, bi, state, BlockForm::Split).unwrap();
            assert_eq!(channels(s.tape, state.x), st.entry_dense + (bi + 1) * st.spec.dense_increment);
            let y = s.tape.value(state.y.unwrap()).unwrap().shape().to_vec();
            let xs = s.tape.value(state.x.unwrap()).unwrap().shape().to_vec();
            assert_eq!(y[2..], xs[2..]);
        }
    }
}

#[test]
fn width_mismatch_is_an_error() {
    let net = Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 5 }).unwrap();
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Train);
    let y = s.tape.constant(random(&[1, 16, 8, 8], 1));
    let x = s.tape.constant(random(&[1, 3, 8, 8], 2));
    let state = DualPathState { y: Some(y), x: Some(x) };
    assert!(net.block_forward(&mut s, 0, 1, state, BlockForm::Split).is_err());
}

fn zero_param(net: &mut Network<f64>, name: &str) {
    let p = net.params_mut().iter_mut().find(|p| p.name == name).unwrap();
    p.value = Tensor::zeros(p.value.shape().to_vec());
}

#[test]
fn zero_conv_c_keeps_residual_and_appends_zeros() {
    let mut net = Network::<f64>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 7 }).unwrap();
    zero_param(&mut net, "stage1.block2.c.conv.weight");
    for form in [BlockForm::Split, BlockForm::Dual] {
        let mut tape = Tape::new();
        let mut s = net.session(&mut tape, Mode::Train);
        let y = random::<f64>(&[2, 16, 8, 8], 8);
        let x = random::<f64>(&[2, 12, 8, 8], 9);
        let state = DualPathState { y: Some(s.tape.constant(y.clone())), x: Some(s.tape.constant(x.clone())) };
        let out = net.block_forward(&mut s, 0, 1, state, form).unwrap();
        assert_eq!(s.tape.value(out.y.unwrap()).unwrap(), &y);
        let xo = s.tape.value(out.x.unwrap()).unwrap();
        assert_eq!(&dpn_core::ops::slice_axis(xo, 1, 0, 12).unwrap(), &x);
        assert!(dpn_core::ops::slice_axis(xo, 1, 12, 16).unwrap().data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_increment_dualpath_is_the_residual_network() {
    let dual = parse_spec("name a\nconv1 3 8 1\nstage 2 8 2 16 0 1 dualpath\nstage 2 8 2 32 0 2 dualpath\nclassifier 3 avg\n").unwrap();
    let res = parse_spec("name a\nconv1 3 8 1\nstage 2 8 2 16 0 1 residual\nstage 2 8 2 32 0 2 residual\nclassifier 3 avg\n").unwrap();
    let a = Network::<f64>::new(&dual, Init::Random { seed: 11 }).unwrap();
    let b = Network::<f64>::new(&res, Init::Random { seed: 11 }).unwrap();
    assert_eq!(a.params().len(), b.params().len());
    for (p, q) in a.params().iter().zip(b.params()) {
        assert_eq!(p.name, q.name);
        assert_eq!(p.value, q.value);
    }
    let input = random::<f64>(&[2, 3, 12, 12], 12);
    let la = a.infer(&input, Pooling::Avg).unwrap();
    let lb = b.infer(&input, Pooling::Avg).unwrap();
    assert_eq!(la, lb);
    // Residual update only: y' = y + conv_c(...) and no dense path.
    let mut tape = Tape::new();
    let mut s = a.session(&mut tape, Mode::Train);
    let y = s.tape.constant(random(&[1, 16, 6, 6], 13));
    let out = a.block_forward(&mut s, 0, 1, DualPathState { y: Some(y), x: None }, BlockForm::Split).unwrap();
    assert!(out.x.is_none());
}

#[test]
fn dense_blocks_only_concatenate() {
    let net = Network::<f64>::new(&preset("densenet161").unwrap(), Init::Random { seed: 14 }).unwrap();
    let st = &net.stages()[1];
    assert!(matches!(st.transition, Some(Transition::Reduce { pool_stride: 2, .. })));
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Train);
    let input = random::<f64>(&[1, 240, 4, 4], 15);
    let x = s.tape.constant(input.clone());
    let out = net.block_forward(&mut s, 1, 1, DualPathState { y: None, x: Some(x) }, BlockForm::Dual).unwrap();
    assert!(out.y.is_none());
    let xo = s.tape.value(out.x.unwrap()).unwrap();
    assert_eq!(xo.shape()[1], 240 + 48);
    assert_eq!(dpn_core::ops::slice_axis(xo, 1, 0, 240).unwrap(), input);
}

#[test]
fn identity_projection_preserves_residual_path() {
    let spec = parse_spec(
        "name t\nconv1 3 8 1\ndense_init 0\nstage 1 4 2 8 2 1 dualpath\nstage 1 4 2 8 2 1 dualpath\nclassifier 3 avg\n",
    )
    .unwrap();
    let mut net = Network::<f64>::new(&spec, Init::Random { seed: 16 }).unwrap();
    assert!(net.stages()[0].transition.is_none());
    let Some(Transition::Projection { dense: 0, residual: 8, unit }) = net.stages()[1].transition else {
        panic!("expected a width-only projection");
    };
    let id = unit.conv.weight.index();
    net.params_mut()[id].value = Tensor::from_fn(vec![8, 10, 1, 1], |i| if i / 10 == i % 10 { 1.0 } else { 0.0 });
    zero_param(&mut net, "stage2.block1.c.conv.weight");
    for r in net.running_mut() {
        r.var.iter_mut().for_each(|v| *v = 1.0 - 1e-5);
    }
    let mut tape = Tape::new();
    let mut s = net.session(&mut tape, Mode::Eval);
    let y = random::<f64>(&[2, 8, 5, 5], 17).map(f64::abs);
    let x = random::<f64>(&[2, 2, 5, 5], 18);
    let state = DualPathState { y: Some(s.tape.constant(y.clone())), x: Some(s.tape.constant(x)) };
    let out = net.block_forward(&mut s, 1, 0, state, BlockForm::Split).unwrap();
    assert!(s.tape.value(out.y.unwrap()).unwrap().max_abs_diff(&y) <= 1e-12);
}

#[test]
fn split_and_dual_forms_agree() {
    let net = Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 19 }).unwrap();
    let input = random::<f32>(&[4, 3, 32, 32], 20);
    let d = compare_network_forms(&net, &input, 21).unwrap();
    println!("toy {d:?}");
    assert!(d.max() <= 1e-5, "{d:?}");
    let net = Network::<f32>::new(&preset("dpn92").unwrap(), Init::Random { seed: 22 }).unwrap();
    for (stage, block) in [(0, 0), (1, 1), (3, 0)] {
        let d = compare_block_forms(&net, stage, block, 2, 4, 23).unwrap();
        println!("dpn92 {stage}.{block} {d:?}");
        assert!(d.max() <= 1e-5, "{stage}.{block} {d:?}");
    }
}

#[test]
fn forward_is_pure() {
    let net = Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 24 }).unwrap();
    let input = random::<f32>(&[3, 3, 32, 32], 25);
    let first = net.infer(&input, Pooling::Avg).unwrap();
    for _ in 0..2 {
        assert_eq!(net.infer(&input, Pooling::Avg).unwrap().data(), first.data());
    }
    assert_eq!(Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 24 }).unwrap().infer(&input, Pooling::Avg).unwrap(), first);
}

#[test]
fn named_tensors_load_back() {
    let a = Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 26 }).unwrap();
    let mut b = Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Zeros).unwrap();
    b.load_named(&a.named_tensors()).unwrap();
    let input = random::<f32>(&[1, 3, 32, 32], 27);
    assert_eq!(a.infer(&input, Pooling::Avg).unwrap(), b.infer(&input, Pooling::Avg).unwrap());
    let mut named = a.named_tensors();
    named.pop();
    assert!(b.load_named(&named).is_err());
}
