use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use dpn_bench::fixture;
use dpn_core::arch::{preset, BlockForm, DualPathState, Init, Mode, Network};
use dpn_core::complexity::analyze;
use dpn_core::ops::{conv2d, Conv2dParams};
use dpn_core::Tape;

fn conv(c: &mut Criterion) {
    let x = fixture(&[8, 64, 28, 28], 1);
    let dense = fixture(&[64, 64, 3, 3], 2);
    let grouped = fixture(&[64, 2, 3, 3], 3);
    c.bench_function("conv3x3 64->64 28x28 n8", |b| b.iter(|| conv2d(black_box(&x), &dense, Conv2dParams::new(1, 1, 1)).unwrap()));
    c.bench_function("conv3x3 g32 64->64 28x28 n8", |b| {
        b.iter(|| conv2d(black_box(&x), &grouped, Conv2dParams::new(1, 1, 32)).unwrap())
    });
}

fn complexity(c: &mut Criterion) {
    let spec = preset("dpn131").unwrap();
    c.bench_function("analyze dpn131 224", |b| b.iter(|| analyze(black_box(&spec), 224).unwrap()));
}

fn micro_block(c: &mut Criterion) {
    let net = Network::<f32>::new(&preset("dpn92").unwrap(), Init::Random { seed: 0 }).unwrap();
    let mb = net.stages()[1].blocks[1];
    let y = fixture(&[4, mb.residual, 28, 28], 4);
    let x = fixture(&[4, mb.dense_in, 28, 28], 5);
    let mut group = c.benchmark_group("dpn92 stage2 block2 n4 28x28");
    for (label, form) in [("split", BlockForm::Split), ("dual", BlockForm::Dual)] {
        group.bench_function(label, |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let mut s = net.session(&mut tape, Mode::Train);
                let state = DualPathState { y: Some(s.tape.constant(y.clone())), x: Some(s.tape.constant(x.clone())) };
                black_box(net.block_forward(&mut s, 1, 1, state, form).unwrap());
            })
        });
    }
    group.finish();
}

fn toy_step(c: &mut Criterion) {
    let net = Network::<f32>::new(&preset("dpn-toy").unwrap(), Init::Random { seed: 0 }).unwrap();
    let input = fixture(&[64, 3, 32, 32], 6);
    let labels: Vec<usize> = (0..64).map(|i| i % 4).collect();
    c.bench_function("dpn-toy forward+backward n64 32x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let mut s = net.session(&mut tape, Mode::Train);
            let x = s.tape.constant(input.clone());
            let logits = net.forward(&mut s, x, BlockForm::Split, dpn_core::arch::Pooling::Avg).unwrap();
            let loss = s.tape.softmax_cross_entropy(logits, &labels).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

criterion_group!(benches, conv, complexity, micro_block, toy_step);
criterion_main!(benches);
