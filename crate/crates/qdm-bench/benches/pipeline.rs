use criterion::{black_box, criterion_group, criterion_main, Criterion};

use qdm_core::data::{generate_synthetic, windows_from_runs, ClassRegime, SyntheticSpec};
use qdm_core::loss::{quadruplet_loss, QuadrupletLossConfig, QuadrupletTuple};
use qdm_core::metrics::{evaluate, RunMeta};
use qdm_core::network::{forward_quadruplet, lstm_forward, ModelConfig, ModelParams};
use qdm_core::optim::{Optimizer, OptimizerKind};
use qdm_core::pairing::{sample_quadruplets, AnchorSampling, WindowedDataset};
use qdm_core::rng::{step_rng, Stream};
use qdm_core::train::{train_step, Method, TrainConfig};
use qdm_core::Tape;

use std::collections::BTreeSet;

fn dataset() -> WindowedDataset {
    let spec = SyntheticSpec {
        regimes: vec![
            ClassRegime { drift: 0.0, amplitude: 1.0, frequency: 2.0, phase: 0.0 },
            ClassRegime { drift: -0.6, amplitude: 1.0, frequency: 4.8, phase: 0.0 },
            ClassRegime { drift: -0.6, amplitude: 1.0, frequency: 5.2, phase: 0.0 },
            ClassRegime { drift: -0.6, amplitude: 1.0, frequency: 5.0, phase: 0.0 },
        ],
        sequences_per_class: 120,
        sequence_length: 12,
        features: 3,
        noise_sigma: 0.55,
        seed: 42,
    };
    let runs = generate_synthetic(&spec).unwrap();
    let mut ds = windows_from_runs(&runs, 12, 12).unwrap();
    ds.set_imbalance_set(BTreeSet::from([3])).unwrap();
    ds
}

fn model_config() -> ModelConfig {
    ModelConfig {
        input_size: 3,
        hidden_size: 10,
        layer_count: 1,
        embed_dim: 4,
        class_count: 4,
        dropout_rate: 0.0,
        literal_sigmoid_logits: false,
    }
}

fn train_config(method: Method) -> TrainConfig {
    TrainConfig {
        method,
        model: model_config(),
        loss: QuadrupletLossConfig::new(5.0, 10.0, 7.0, 7.0, 0.0005).unwrap(),
        optimizer: OptimizerKind::adam_default(),
        learning_rate: 0.01,
        epochs: 1,
        batch_size: 48,
        seed: 500,
        anchor_sampling: AnchorSampling::UniformOverSamples,
        patience: None,
    }
}

fn bench_lstm_forward(c: &mut Criterion) {
    let params = ModelParams::init(model_config(), 500).unwrap();
    let ds = dataset();
    let window = ds.window_tensor(0);
    c.bench_function("lstm_forward_t12_h10", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, false);
            let h = lstm_forward(&mut tape, &vars.lstm, black_box(&window), 0.0, false, None)
                .unwrap();
            black_box(tape.value(h).data()[0]);
        })
    });
}

fn bench_quadruplet_backward(c: &mut Criterion) {
    let params = ModelParams::init(model_config(), 500).unwrap();
    let cfg = train_config(Method::Qdm);
    let ds = dataset();
    let windows: Vec<_> = (0..4).map(|i| ds.window_tensor(i * 100)).collect();
    c.bench_function("quadruplet_forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let fwd = forward_quadruplet(
                &mut tape,
                &vars,
                &params.config,
                [&windows[0], &windows[1], &windows[2], &windows[3]],
                false,
                None,
            )
            .unwrap();
            let tuples = [QuadrupletTuple {
                anchor: fwd.anchor,
                positive: fwd.positive,
                negative: fwd.negative,
                minor: fwd.minor,
                gamma: true,
            }];
            let quad = quadruplet_loss(&mut tape, &tuples, &cfg.loss).unwrap();
            black_box(tape.backward(quad.loss).unwrap());
        })
    });
}

fn bench_sampler(c: &mut Criterion) {
    let ds = dataset();
    c.bench_function("sample_quadruplets_batch48", |b| {
        let mut step = 0u64;
        b.iter(|| {
            step += 1;
            let mut anchor_rng = step_rng(500, Stream::Batch, step);
            let mut pair_rng = step_rng(500, Stream::Pairs, step);
            black_box(
                sample_quadruplets(
                    &ds,
                    48,
                    AnchorSampling::UniformOverSamples,
                    &mut anchor_rng,
                    &mut pair_rng,
                )
                .unwrap(),
            )
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let ds = dataset();
    for method in [Method::Qdm, Method::Plain] {
        let cfg = train_config(method);
        let mut params = ModelParams::init(cfg.model.clone(), cfg.seed).unwrap();
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
        let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &sizes).unwrap();
        let name = format!("train_step_{method:?}_batch48").to_lowercase();
        let mut step = 0u64;
        c.bench_function(&name, |b| {
            b.iter(|| {
                step += 1;
                black_box(train_step(&mut params, &mut opt, &ds, &cfg, 0, step).unwrap())
            })
        });
    }
}

fn bench_evaluate(c: &mut Criterion) {
    let ds = dataset();
    let params = ModelParams::init(model_config(), 500).unwrap();
    c.bench_function("evaluate_480_windows", |b| {
        b.iter(|| black_box(evaluate(&params, &ds, RunMeta::default()).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_lstm_forward,
    bench_quadruplet_backward,
    bench_sampler,
    bench_train_step,
    bench_evaluate
);
criterion_main!(benches);
