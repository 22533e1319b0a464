use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use match3gen::bot::{evaluate_level, play_once, BotConfig};
use match3gen::dataset::{annotate, generate_main_style, Split, Style};
use match3gen::model::{examples, Cvae, Example, ModelConfig};
use match3gen::neural::{conv2d, conv2d_backward, standard_normal, Tensor};
use match3gen::{CellKind, LevelGrid, LevelSize};

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = Tensor::<f32>::uniform(&[32, 11, 9], 1.0, &mut rng);
    let weight = Tensor::<f32>::uniform(&[64, 32, 3, 3], 0.1, &mut rng);
    let bias = Tensor::<f32>::zeros(&[64]);
    let grad = Tensor::<f32>::uniform(&[64, 11, 9], 1.0, &mut rng);
    c.bench_function("conv2d 32->64", |b| b.iter(|| conv2d(black_box(&input), &weight, &bias).unwrap()));
    c.bench_function("conv2d_backward 32->64", |b| {
        b.iter(|| conv2d_backward(black_box(&input), &weight, &grad).unwrap())
    });
}

fn bot(c: &mut Criterion) {
    let layout = LevelGrid::with_play_area(LevelSize::new(7, 9).unwrap(), CellKind::Playfield);
    c.bench_function("play_once 7x9", |b| b.iter(|| play_once(black_box(&layout), 3, 39)));
    c.bench_function("evaluate_level 30 runs", |b| {
        b.iter(|| evaluate_level(black_box(&layout), &BotConfig::default()))
    });
}

fn training_step(c: &mut Criterion) {
    let levels = generate_main_style(120, 7).unwrap();
    let config = BotConfig {
        run_count: 3,
        ..BotConfig::default()
    };
    let manifest = annotate(&levels, Style::Main, 7, &config).unwrap();
    let model_config = ModelConfig::avalon();
    let train = examples::<f32>(&manifest, model_config.variant, Split::Train).unwrap();
    let model = Cvae::<f32>::new(model_config.clone(), 0).unwrap();
    let batch: Vec<&Example<f32>> = train.iter().take(100).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noises: Vec<Tensor<f32>> = batch.iter().map(|_| standard_normal(model_config.latent_dim, &mut rng)).collect();
    c.bench_function("batch_gradients 100", |b| {
        b.iter(|| model.batch_gradients(black_box(&batch), noises.clone()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = conv, bot, training_step
}
criterion_main!(benches);
