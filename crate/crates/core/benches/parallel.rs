use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tma_core::model::{ModelConfig, TmaModel};
use tma_core::par::Execution;
use tma_core::pipeline::prepare_all;
use tma_core::synth::{generate_dataset, DatasetConfig};
use tma_core::train::{evaluate, TrainConfig, Trainer};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn small_model() -> ModelConfig {
    ModelConfig {
        feature_dim: 32,
        downsample: 4,
        iterations: 4,
        levels: 2,
        context_dim: 24,
        hidden_dim: 24,
        motion_dim: 24,
        encoder_width: 16,
        ..ModelConfig::default()
    }
}

fn bench_synthesis(c: &mut Criterion) {
    let cfg = DatasetConfig::new(1, 64, 64, 6.0);
    let mut group = c.benchmark_group("synthesize_16");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_dataset(16, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_training_step(c: &mut Criterion) {
    let model_cfg = small_model();
    let samples = generate_dataset(8, &DatasetConfig::new(2, 64, 64, 6.0), Execution::Parallel).unwrap();
    let data = prepare_all(&samples, model_cfg.segments, model_cfg.bins, Execution::Parallel).unwrap();
    let mut group = c.benchmark_group("train_step_batch4");
    group.sample_size(10);
    for (name, exec) in MODES {
        let tc = TrainConfig {
            batch_size: 4,
            peak_lr: 1e-3,
            execution: exec,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(TmaModel::new(model_cfg.clone(), 0).unwrap(), tc).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| trainer.train_step(&data).unwrap()));
    }
    group.finish();
}

fn bench_evaluation(c: &mut Criterion) {
    let model_cfg = small_model();
    let samples = generate_dataset(8, &DatasetConfig::new(3, 64, 64, 6.0), Execution::Parallel).unwrap();
    let data = prepare_all(&samples, model_cfg.segments, model_cfg.bins, Execution::Parallel).unwrap();
    let model = TmaModel::<f32>::new(model_cfg, 0).unwrap();
    let mut group = c.benchmark_group("evaluate_8");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| evaluate(&model, &data, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_synthesis, bench_training_step, bench_evaluation);
criterion_main!(benches);
