use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use molsde::autodiff::{Array, Graph};
use molsde::geom3d::{build_local_frame, kabsch_rmsd, random_rotation, transform};
use molsde::moldata::to_dense_edge_tensor;
use molsde::objectives::{atom_onehot, total_loss, Batch, TrainConfig};
use molsde::pipeline::{sample_conformations, SampleConfig};
use molsde::scorenets::geom_to_topo::score_from_geometry;
use molsde::scorenets::topo_to_geom::score_2d_to_3d;
use molsde::scorenets::{init_params, ModelConfig, ATOM_ONEHOT};
use molsde::sde::NoiseSchedule;
use molsde::synthetic::generate_corpus;

fn tape(c: &mut Criterion) {
    let a = Array::matrix(64, 64, (0..64 * 64).map(|k| (k as f64 * 0.37).sin()).collect());
    c.bench_function("tape_matmul_tanh_backward_64", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let x = g.input("x", a.clone()).unwrap();
            let y = g.matmul(x, x).unwrap();
            let y = g.tanh(y).unwrap();
            let s = g.sum(y).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

fn geometry(c: &mut Criterion) {
    let mol = &generate_corpus(1, 3)[0].geom;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let moved = transform(&mol.coords, &random_rotation(&mut rng), [1.0, 2.0, 3.0]);
    c.bench_function("kabsch_rmsd", |bench| bench.iter(|| black_box(kabsch_rmsd(&mol.coords, &moved).unwrap())));
    c.bench_function("local_frame", |bench| {
        bench.iter(|| black_box(build_local_frame(black_box([1.0, 0.2, 0.0]), black_box([0.1, 1.3, 0.4])).unwrap()))
    });
}

fn networks(c: &mut Criterion) {
    let model = ModelConfig::default();
    let sched = NoiseSchedule::default();
    let params = init_params(&model, 1);
    let corpus = generate_corpus(16, 2);
    let pair = corpus.iter().max_by_key(|p| p.num_atoms()).unwrap();
    c.bench_function("score_2d_to_3d", |bench| {
        bench.iter(|| black_box(score_2d_to_3d(&pair.topo, &pair.geom.coords, 0.5, &params, &model, &sched).unwrap()))
    });
    let n = pair.num_atoms();
    let x_t = Array::matrix(n, ATOM_ONEHOT, atom_onehot(&pair.topo));
    let e_t = to_dense_edge_tensor(&pair.topo);
    c.bench_function("score_3d_to_2d", |bench| {
        bench.iter(|| black_box(score_from_geometry(&pair.geom, &x_t, &e_t, 0.5, &params, &model, &sched).unwrap()))
    });
    let batch = Batch::unmasked(corpus.iter().collect()).unwrap();
    let cfg = TrainConfig::default();
    c.bench_function("total_loss_batch16", |bench| {
        bench.iter(|| black_box(total_loss(&batch, &params, &model, &sched, &cfg.weights, cfg.t_eps, 7).unwrap()))
    });
}

fn sampler(c: &mut Criterion) {
    let model = ModelConfig::default();
    let sched = NoiseSchedule::default().with_steps(10);
    let params = init_params(&model, 1);
    let topos: Vec<_> = generate_corpus(8, 4).into_iter().map(|p| p.topo).collect();
    let mut group = c.benchmark_group("sampler");
    group.sample_size(10);
    group.bench_function("sample_conformations_8x10_steps", |bench| {
        bench.iter(|| black_box(sample_conformations(&topos, 1, &params, &model, &sched, &SampleConfig::default(), 5).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, tape, geometry, networks, sampler);
criterion_main!(benches);
