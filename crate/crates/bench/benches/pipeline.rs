//! Criterion benchmarks for the pipeline hot paths: quaternion rotation,
//! the two feature transforms, and convolution forward/backward.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use har_core::features::{
    build_expansion_plan, expand_rows, freq_transform, och_transform, stack_channels,
};
use har_core::imu::{ImuWindow, NUM_CHANNELS};
use har_core::nn::{conv2d_backward, conv2d_forward, Activation, Conv2dSpec, Padding, Tensor};
use har_core::quat::{axis_angle_quat, qmul, rotate_vec, Vec3};

fn sample_window(t_len: usize) -> ImuWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut w = ImuWindow {
        id: 0,
        channels: (0..NUM_CHANNELS * t_len)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        t_len,
        subject: "s01".into(),
        label: "GT".into(),
        t0: 0,
    };
    for t in 0..t_len {
        let q = axis_angle_quat(&Vec3::X, t as f64 * 0.02).unwrap();
        w.set_orientation_at(t, q);
    }
    w
}

fn bench_quat(c: &mut Criterion) {
    let a = axis_angle_quat(&Vec3::Z, 0.3).unwrap();
    let b = axis_angle_quat(&Vec3::X, 1.1).unwrap();
    c.bench_function("qmul", |bench| {
        bench.iter(|| black_box(qmul(black_box(&a), black_box(&b))))
    });
    let v = Vec3::new(0.26726124191242440, 0.53452248382484879, 0.80178372573727319);
    c.bench_function("rotate_vec", |bench| {
        bench.iter(|| rotate_vec(black_box(&a), black_box(&v)).unwrap())
    });
}

fn bench_transforms(c: &mut Criterion) {
    let w = sample_window(64);
    let plan = build_expansion_plan(10, 0).unwrap();
    c.bench_function("freq_transform_50x64", |bench| {
        bench.iter(|| {
            let expanded = expand_rows(&stack_channels(black_box(&w)), &plan).unwrap();
            freq_transform(&expanded, 0).unwrap()
        })
    });
    c.bench_function("och_transform_64", |bench| {
        bench.iter(|| och_transform(black_box(&w), 64).unwrap())
    });
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = Tensor::from_vec(
        vec![50, 32, 1],
        (0..50 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let spec = Conv2dSpec {
        filters: 8,
        kernel_h: 5,
        kernel_w: 5,
        padding: Padding::Same,
        activation: Activation::Relu,
    };
    let weights = Tensor::from_vec(
        vec![5, 5, 1, 8],
        (0..5 * 5 * 8).map(|_| rng.gen_range(-0.2..0.2)).collect(),
    )
    .unwrap();
    let bias = vec![0.0; 8];
    c.bench_function("conv2d_fwd_50x32x1_k8", |bench| {
        bench.iter(|| conv2d_forward(black_box(&input), &weights, &bias, &spec).unwrap())
    });

    let output = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
    let d_out = vec![0.01; output.len()];
    c.bench_function("conv2d_bwd_50x32x1_k8", |bench| {
        bench.iter(|| {
            let mut dw = vec![0.0; weights.len()];
            let mut db = vec![0.0; bias.len()];
            conv2d_backward(
                black_box(&input),
                &weights,
                &output,
                &d_out,
                &spec,
                &mut dw,
                &mut db,
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, bench_quat, bench_transforms, bench_conv);
criterion_main!(benches);
