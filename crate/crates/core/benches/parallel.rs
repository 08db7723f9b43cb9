use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use raediff::bgd::make_bgd;
use raediff::dtppm::{grade, levels_from_steps};
use raediff::metrics::evaluate;
use raediff::pipeline::{image_seeds, protect_dataset, restore_dataset};
use raediff::toy::{cross_trigger, patterns};
use raediff::{Parallelism, SamplerConfig, ScheduleParams, Shape, TinyDenoiser};

const STRATEGIES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn bench_pipeline(c: &mut Criterion) {
    let size = 16;
    let images = patterns(64, size);
    let schedule = ScheduleParams::default().build().unwrap();
    let bgd = make_bgd(cross_trigger(size), 0.6).unwrap();
    let model = TinyDenoiser::new(Shape::new(size, size, 1), 128, 0).unwrap();
    let config = SamplerConfig {
        noise_steps: vec![1],
        ..SamplerConfig::default()
    };
    let levels = levels_from_steps(&[1, 2, 3], &schedule).unwrap();
    let seeds = image_seeds(0, images.len());
    let protected = protect_dataset(&images, &model, &schedule, &bgd, &config, 0, Parallelism::default())
        .unwrap()
        .remove(0)
        .protected;

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (name, par) in STRATEGIES {
        group.bench_with_input(BenchmarkId::new("protect", name), &par, |b, &par| {
            b.iter(|| protect_dataset(black_box(&images), &model, &schedule, &bgd, &config, 0, par).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("restore", name), &par, |b, &par| {
            b.iter(|| restore_dataset(black_box(&protected), 1, &seeds, &model, &schedule, &bgd, &config, par).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("grade", name), &par, |b, &par| {
            b.iter(|| grade(black_box(&images), &levels, &schedule, &bgd, 0, par).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("evaluate", name), &par, |b, &par| {
            b.iter(|| evaluate(black_box(&images), &protected, par).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
