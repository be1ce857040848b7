use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use derain_core::inversion::ddpm_invert;
use derain_core::schedule::{build_schedule, BetaSchedule};
use derain_core::{
    AttentionControl, Denoiser, DenoiserConfig, LatentVideo, TensorContainer, TextCondition,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> Denoiser {
    Denoiser::new(DenoiserConfig::default(), 0).unwrap()
}

fn predict_eps(c: &mut Criterion) {
    let m = model();
    let s = build_schedule(100, 1e-4, 0.02, BetaSchedule::Linear).unwrap();
    let x = LatentVideo::randn(m.config().video_shape(), &mut ChaCha8Rng::seed_from_u64(1));
    let cond = TextCondition::parse("scene light rain", m.config().text_len).unwrap();
    c.bench_function("predict_eps", |b| {
        b.iter(|| {
            m.predict_eps(
                black_box(&x),
                s.timestep(50),
                &cond,
                &mut AttentionControl::off(),
            )
            .unwrap()
        })
    });
    let mut control = AttentionControl::default_for(m.config().num_blocks);
    let null = TextCondition::null(m.config().text_len);
    c.bench_function("capture_then_switch", |b| {
        b.iter(|| {
            derain_core::attention_control::capture_then_switch(
                &m,
                black_box(&x),
                s.timestep(50),
                &null,
                &cond,
                &mut control,
            )
            .unwrap()
        })
    });
}

fn inversion(c: &mut Criterion) {
    let m = model();
    let s = build_schedule(20, 1e-3, 0.2, BetaSchedule::Linear).unwrap();
    let x = LatentVideo::randn(m.config().video_shape(), &mut ChaCha8Rng::seed_from_u64(2));
    let null = TextCondition::null(m.config().text_len);
    let mut g = c.benchmark_group("inversion");
    g.sample_size(10);
    g.bench_function("ddpm_invert_20_steps", |b| {
        b.iter(|| ddpm_invert(black_box(&x), &null, &m, &s, 0).unwrap())
    });
    g.finish();
}

fn container(c: &mut Criterion) {
    let bytes = model().to_container().unwrap().to_bytes();
    c.bench_function("container_read", |b| {
        b.iter(|| TensorContainer::from_bytes(black_box(&bytes)).unwrap())
    });
    let parsed = TensorContainer::from_bytes(&bytes).unwrap();
    c.bench_function("container_write", |b| {
        b.iter_batched(|| parsed.clone(), |p| p.to_bytes(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, predict_eps, inversion, container);
criterion_main!(benches);
