use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use ndarray::Array2;
use pelm::encoder::build_embedding;
use pelm::readout::gram;
use pelm::{
    ChannelLayout, Detector, DetectorConfig, EmbeddingKind, EncoderConfig, Execution, GridLayout, OperatorSpec,
    OpticalPipeline, Saturation, TransferOperator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random())
}

/// MNIST-sized optics: 28 x 28 inputs on a 56 x 56 modulator, 400 channels.
fn mnist_like_pipeline() -> OpticalPipeline {
    let side = 56;
    let encoder = EncoderConfig::new(GridLayout::replicated(28, 28, 2).unwrap());
    let embedding = build_embedding(
        &EmbeddingKind::Noise {
            amplitude: std::f64::consts::PI,
            correlation_length: 1,
            seed: 1,
        },
        side,
    )
    .unwrap();
    let operator = TransferOperator::build(&OperatorSpec::Dft2 { padding: 1 }, side).unwrap();
    let config = DetectorConfig::new(ChannelLayout::centered(400, 1), Saturation::Fixed(1.0));
    let detector = Detector::new(&config, side, None).unwrap();
    OpticalPipeline::new(encoder, embedding, operator, detector).unwrap()
}

fn features(c: &mut Criterion) {
    let pipeline = mnist_like_pipeline();
    let samples = uniform(256, 784, 2);
    let mut group = c.benchmark_group("features");
    group
        .sample_size(10)
        .throughput(Throughput::Elements(samples.nrows() as u64));
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, samples.nrows()), &exec, |b, &exec| {
            b.iter(|| pipeline.build(samples.view(), 0, exec).unwrap())
        });
    }
    group.finish();
}

fn normal_equations(c: &mut Criterion) {
    let h = uniform(2000, 400, 3);
    let mut group = c.benchmark_group("gram");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::new(name, "2000x400"), &exec, |b, &exec| {
            b.iter(|| gram(h.view(), exec))
        });
    }
    group.finish();
}

criterion_group!(benches, features, normal_equations);
criterion_main!(benches);
