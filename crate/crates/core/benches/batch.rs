use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use posekit::datagen::{generate_samples, GenerateConfig};
use posekit::metrics::{add_s_with, evaluate, NearestMethod};
use posekit::model::ObjectModel;
use posekit::nalgebra::Vector3;
use posekit::parallel::{map_slice, Exec};
use posekit::{CameraIntrinsics, Pose, Rotation};

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn poses(n: usize) -> Vec<(Pose, Pose)> {
    (0..n)
        .map(|i| {
            let a = i as f64 * 0.37;
            let gt = Pose::new(
                Rotation::from_euler_xyz(a, 0.5 * a, 0.1),
                Vector3::new(0.01 * a.sin(), 0.0, 0.8),
            );
            let est = Pose::new(
                Rotation::from_euler_xyz(a + 0.05, 0.5 * a, 0.12),
                gt.translation + Vector3::new(0.004, -0.002, 0.01),
            );
            (gt, est)
        })
        .collect()
}

fn add_s_brute(c: &mut Criterion) {
    let model = ObjectModel::uv_sphere(0.05, 40, 60)
        .sample_eval_points(3000, 1)
        .unwrap();
    let (gt, est) = poses(1)[0];
    let mut g = c.benchmark_group("add_s_brute_3000");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                add_s_with(&gt, &est, model.points(), NearestMethod::BruteForce, exec).unwrap()
            })
        });
    }
    g.finish();
}

fn batch_evaluate(c: &mut Criterion) {
    let model = ObjectModel::cube(0.1).sample_eval_points(1000, 2).unwrap();
    let intr = CameraIntrinsics::linemod();
    let pairs = poses(200);
    let mut g = c.benchmark_group("evaluate_200");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                map_slice(exec, &pairs, |(gt, est)| {
                    evaluate(gt, est, &model, &intr).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn generation(c: &mut Criterion) {
    let models = vec![
        ("cube".to_string(), ObjectModel::cube(0.1)),
        ("sphere".to_string(), ObjectModel::uv_sphere(0.05, 12, 24)),
    ];
    let intr = CameraIntrinsics::linemod();
    let mut g = c.benchmark_group("generate");
    g.sample_size(10);
    for per_model in [8, 32] {
        let cfg = GenerateConfig {
            samples_per_model: per_model,
            seed: 3,
            ..Default::default()
        };
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, 2 * per_model), &cfg, |b, cfg| {
                b.iter(|| generate_samples(&models, &intr, black_box(cfg), exec).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, add_s_brute, batch_evaluate, generation);
criterion_main!(benches);
