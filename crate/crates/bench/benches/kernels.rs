use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use insdepth_core::convnet::{build_variant, conv_forward, Network, Tensor, Variant};
use insdepth_core::earth::EarthModel;
use insdepth_core::experiment::ExperimentConfig;
use insdepth_core::imu::derive_ideal;
use insdepth_core::strapdown::{run, step, NavState};
use insdepth_core::trajectory::{generate, SegmentSpec};

fn strapdown(c: &mut Criterion) {
    let e = EarthModel::wgs84();
    let cfg = ExperimentConfig::default();
    let traj = generate(cfg.origin, cfg.initial_yaw, &[SegmentSpec::turn(60.0, 15.0, 3f64.to_radians())], 0.01, &e)
        .unwrap();
    let imu = derive_ideal(&traj, &e).unwrap();
    let init = NavState::from_reference(&traj.samples[0]);
    let (a, b) = (imu.samples[0], imu.samples[1]);
    c.bench_function("strapdown step", |bench| {
        bench.iter(|| step(black_box(&init), &a, &b, imu.dt, &e).unwrap())
    });
    c.bench_function("strapdown run 60 s at 100 Hz", |bench| {
        bench.iter(|| run(black_box(&imu), init, traj.origin, &e).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let window = 32;
    let x = Tensor::new(
        vec![window, 3],
        (0..window * 3).map(|i| (i as f64 * 0.37).sin()).collect(),
    )
    .unwrap();
    let k = Tensor::new(vec![64, 3, 32], (0..64 * 3 * 32).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
    let b = Tensor::zeros(vec![64]).unwrap();
    let h = Tensor::new(vec![window, 32], (0..window * 32).map(|i| (i as f64 * 0.05).sin()).collect()).unwrap();
    c.bench_function("conv 32x32 -> 64, kernel 3", |bench| {
        bench.iter(|| conv_forward(black_box(&h), &k, &b).unwrap())
    });
    let mut group = c.benchmark_group("forward window 32");
    group.sample_size(20);
    for v in Variant::ALL {
        let net = Network::init(build_variant(v, window).unwrap(), 1).unwrap();
        group.bench_function(v.name(), |bench| {
            bench.iter_batched(|| x.clone(), |x| net.forward(&x).unwrap(), BatchSize::SmallInput)
        });
    }
    group.finish();
}

criterion_group!(benches, strapdown, network);
criterion_main!(benches);
