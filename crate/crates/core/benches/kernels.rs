//! Hot kernels on the default rayon pool versus a one-thread pool.
//!
//! Build with `--no-default-features` to time the purely sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lensless_core::autodiff::Tape;
use lensless_core::forward::{make_shutter_masks, ForwardModel, LinearMap, Psf, ShutterMode};
use lensless_core::par;
use lensless_core::rng::{self, streams};
use lensless_core::udn::{init_model, loss_and_gradients, UdnArchitecture};
use lensless_core::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = rng::seeded(seed, streams::SCENE);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng::uniform(&mut r, 0.0, 1.0) as f32).collect()).unwrap()
}

fn pools() -> Vec<(&'static str, usize)> {
    vec![("single", 1), ("pool", par::threads())]
}

fn forward_model(c: &mut Criterion) {
    let psf = Psf::from_raw(random(&[128, 128], 1)).unwrap();
    let fm = ForwardModel::new(psf, make_shutter_masks(128, 128, 8, ShutterMode::Dual).unwrap()).unwrap();
    let v = random(&[8, 128, 128], 2);
    let b = fm.apply(&v).unwrap();
    let mut g = c.benchmark_group("forward_128x128x8");
    for (name, n) in pools() {
        g.bench_function(BenchmarkId::new("apply", name), |bench| {
            par::with_threads(n, || bench.iter(|| fm.apply(&v).unwrap()))
        });
        g.bench_function(BenchmarkId::new("adjoint", name), |bench| {
            par::with_threads(n, || bench.iter(|| fm.adjoint(&b).unwrap()))
        });
    }
    g.finish();
}

fn convolution(c: &mut Criterion) {
    let x = random(&[32, 64, 64], 3);
    let w = random(&[32, 32, 3, 3], 4);
    let mut g = c.benchmark_group("conv3x3_32ch_64x64");
    for (name, n) in pools() {
        g.bench_function(name, |bench| {
            par::with_threads(n, || {
                bench.iter(|| {
                    let mut tape = Tape::new();
                    let xv = tape.input(x.clone());
                    let wv = tape.param(0, &w);
                    let out = tape.conv2d(xv, wv, None, 1).unwrap();
                    tape.value(out).sum()
                })
            })
        });
    }
    g.finish();
}

fn udn_iteration(c: &mut Criterion) {
    let arch = UdnArchitecture {
        depth: 4,
        channels: 32,
        ..UdnArchitecture::for_scene(1, 64, 64)
    };
    let model = init_model::<f32>(&arch, 0).unwrap();
    let psf = Psf::from_raw(random(&[64, 64], 5)).unwrap();
    let fm = ForwardModel::new(psf, lensless_core::MaskStack::unmasked(64, 64)).unwrap();
    let b = fm.apply(&random(&[1, 64, 64], 6)).unwrap();
    let mut g = c.benchmark_group("udn_loss_and_gradients_64x64");
    g.sample_size(20);
    for (name, n) in pools() {
        g.bench_function(name, |bench| {
            par::with_threads(n, || bench.iter(|| loss_and_gradients(&model, &fm, &b, None).unwrap().loss))
        });
    }
    g.finish();
}

criterion_group!(benches, forward_model, convolution, udn_iteration);
criterion_main!(benches);
