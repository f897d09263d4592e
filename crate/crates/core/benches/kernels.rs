use std::hint::black_box;

use bsd_core::layers::{conv2d, BnMode, ConvGeometry};
use bsd_core::loss::reco;
use bsd_core::math::{matmul_nt, Rng, Tensor};
use bsd_core::models::{dual_pass, one_hot, Arch, DualPathNet};
use bsd_core::neuron::NeuronParams;
use bsd_core::optim::AdamWConfig;
use bsd_core::parallel::with_threads;
use bsd_core::train::{new_optimizer, train_step_classifier, DualStepConfig, TopLoss};
use bsd_core::loss::AlignLoss;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn thread_counts() -> Vec<usize> {
    let n = std::thread::available_parallelism().map_or(1, |n| n.get());
    if n > 1 { vec![1, n] } else { vec![1] }
}

fn desk_net() -> DualPathNet {
    DualPathNet::new(Arch::mnist_mlp_desk(), NeuronParams::lif(0.2), NeuronParams::lif(0.1), 4, 0).unwrap()
}

fn batch(b: usize) -> (Tensor, Vec<usize>) {
    let mut x = random(&[b, 784], 1);
    x.data_mut().iter_mut().for_each(|v| *v = v.abs() * 2.0);
    (x, (0..b).map(|i| i % 10).collect())
}

fn kernels(c: &mut Criterion) {
    let a = random(&[512, 784], 2);
    let w = random(&[256, 784], 3);
    let geom = ConvGeometry { in_channels: 32, out_channels: 32, height: 16, width: 16, kernel: 3, stride: 2, pad: 1 };
    let img = random(&[32, 32 * 16 * 16], 4);
    let kernel = random(&[32, 32, 3, 3], 5);
    let v = random(&[128, 256], 6);
    let vh = random(&[128, 256], 7);

    let mut g = c.benchmark_group("kernels");
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::new("gemm_512x784x256", t), &t, |bch, &t| {
            with_threads(t, || bch.iter(|| black_box(matmul_nt(&a, &w).unwrap())))
        });
        g.bench_with_input(BenchmarkId::new("conv3x3_s2_32ch", t), &t, |bch, &t| {
            with_threads(t, || bch.iter(|| black_box(conv2d(&geom, &kernel, &img).unwrap())))
        });
        g.bench_with_input(BenchmarkId::new("reco_b128_d256", t), &t, |bch, &t| {
            with_threads(t, || bch.iter(|| black_box(reco(&v, &vh, 0.6).unwrap())))
        });
    }
    g.finish();
}

fn training(c: &mut Criterion) {
    let (x, labels) = batch(128);
    let target = one_hot(&labels, 10).unwrap();
    let cfg = DualStepConfig {
        hidden: AlignLoss::Reco { lambda: 0.6 },
        top: TopLoss::CrossEntropy,
        lr_w: 1e-3,
        lr_theta: 1e-3,
        clip: Some(0.3),
    };
    let mut g = c.benchmark_group("desk_mlp_b128");
    g.sample_size(10);
    for t in thread_counts() {
        g.bench_with_input(BenchmarkId::new("dual_pass", t), &t, |bch, &t| {
            let net = desk_net();
            with_threads(t, || bch.iter(|| black_box(dual_pass(&net, &x, &target, BnMode::Train).unwrap())))
        });
        g.bench_with_input(BenchmarkId::new("train_step", t), &t, |bch, &t| {
            let mut net = desk_net();
            let mut opt = new_optimizer(&net, AdamWConfig::default());
            with_threads(t, || bch.iter(|| black_box(train_step_classifier(&mut net, &mut opt, &x, &labels, &cfg).unwrap())))
        });
    }
    g.finish();
}

criterion_group!(benches, kernels, training);
criterion_main!(benches);
