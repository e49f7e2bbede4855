use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::{DMatrix, DVector};

use skewnorm::discrim::{misclassification_mc, sweep_model, McOptions, SweepConfig};
use skewnorm::parallel::Execution;
use skewnorm::param::DpParams;
use skewnorm::sample::{rvs_sn_chunked, SeededStream};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn sampling(c: &mut Criterion) {
    let dp = DpParams::new(
        DVector::zeros(3),
        DMatrix::from_row_slice(3, 3, &[1.0, 0.4, 0.2, 0.4, 1.0, -0.1, 0.2, -0.1, 1.0]),
        DVector::from_vec(vec![3.0, -1.0, 2.0]),
    )
    .unwrap();
    let mut g = c.benchmark_group("rvs_sn_100k");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| rvs_sn_chunked(black_box(&dp), 100_000, SeededStream::new(1, 0), 32, exec).unwrap())
        });
    }
    g.finish();
}

fn misclassification(c: &mut Criterion) {
    let model = sweep_model(&SweepConfig::new(1), PI / 4.0).unwrap();
    let mut g = c.benchmark_group("misclassification_mc_20k");
    g.sample_size(20);
    for (name, exec) in modes() {
        let opts = McOptions { n_rep: 20_000, chunks: 32, exec };
        g.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, opts| {
            b.iter(|| misclassification_mc(black_box(&model), SeededStream::new(2, 0), opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sampling, misclassification);
criterion_main!(benches);
