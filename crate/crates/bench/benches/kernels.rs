//! Criterion benchmarks for the pipeline's hot kernels: risk arithmetic,
//! NearMiss selection, the conv substrate, and one generator sample.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use invrisk_core::data::{nearmiss_undersample, DataItem, LabeledDataset, SplitTag};
use invrisk_core::generative::{build_generator, draw_latent, GeneratorHandle, TrainingProvenance};
use invrisk_core::imgproc::resize_bilinear;
use invrisk_core::nn::{Conv2d, Layer, WeightInit};
use invrisk_core::riskcore::{aggregate_trials, per_class_accuracy, wcal, RiskDimension, RiskWeights};
use ndarray::{Array3, ArrayD};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn bench_riskcore(c: &mut Criterion) {
    let weights = RiskWeights::equal();
    let scores: BTreeMap<RiskDimension, f64> = RiskDimension::ALL
        .iter()
        .map(|&d| (d, 0.61))
        .collect();
    c.bench_function("wcal", |b| {
        b.iter(|| wcal(black_box(&weights), black_box(&scores)).unwrap())
    });

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let truth: Vec<usize> = (0..1000).map(|i| i % 10).collect();
    let preds: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..10)).collect();
    let classes: Vec<usize> = (0..10).collect();
    c.bench_function("per_class_accuracy_1000", |b| {
        b.iter(|| per_class_accuracy(black_box(&preds), black_box(&truth), &classes).unwrap())
    });

    let values: Vec<f64> = (0..30).map(|i| 0.5 + (i as f64) * 0.003).collect();
    c.bench_function("aggregate_trials_30", |b| {
        b.iter(|| aggregate_trials(black_box(&values)).unwrap())
    });
}

fn bench_nearmiss(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut items = Vec::new();
    for (class, count) in [(0usize, 20usize), (1, 120)] {
        for i in 0..count {
            items.push(DataItem {
                image: Array3::from_shape_fn((16, 16, 3), |_| rng.gen_range(0.0..1.0)),
                label: class,
                digest: format!("{class}-{i}"),
                rel_path: format!("{class}/{i}"),
            });
        }
    }
    let dataset = LabeledDataset {
        name: "bench".into(),
        items,
        class_names: [(0, "a".to_string()), (1, "b".to_string())].into_iter().collect(),
        split_tag: SplitTag::TargetTrain,
    };
    c.bench_function("nearmiss_140_items", |b| {
        b.iter(|| nearmiss_undersample(black_box(&dataset), 1, 3, (8, 8)).unwrap())
    });
}

fn bench_imgproc(c: &mut Criterion) {
    let img = Array3::from_shape_fn((64, 64, 3), |(y, x, ch)| {
        ((y * 3 + x * 7 + ch) % 255) as f32 / 255.0
    });
    c.bench_function("resize_64_to_32", |b| {
        b.iter(|| resize_bilinear(black_box(&img.view()), 32, 32))
    });
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut conv = Conv2d::new(16, 32, 3, 1, 1, WeightInit::KaimingNormal, &mut rng);
    let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[8, 16, 32, 32]), |_| {
        rng.gen_range(-1.0f32..1.0)
    });
    c.bench_function("conv2d_forward_8x16x32x32", |b| {
        b.iter(|| conv.forward(black_box(x.clone()), true))
    });
    c.bench_function("conv2d_forward_backward", |b| {
        b.iter(|| {
            let y = conv.forward(black_box(x.clone()), true);
            conv.backward(y)
        })
    });
}

fn bench_generator(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = build_generator(32, (32, 32, 3), 4, &mut rng).unwrap();
    let mut generator = GeneratorHandle {
        latent_dim: 32,
        output_shape: (32, 32, 3),
        net,
        training_provenance: TrainingProvenance::default(),
    };
    let z = draw_latent(&mut rng, 32);
    c.bench_function("generator_sample_32x32", |b| {
        b.iter(|| generator.sample(black_box(&z)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_riskcore,
    bench_nearmiss,
    bench_imgproc,
    bench_conv,
    bench_generator
);
criterion_main!(benches);
