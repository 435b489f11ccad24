use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use semivfl_core::losses::{jpl_objective, LossWeights, NonBatch, OverlapBatch};
use semivfl_core::metrics::auc;
use semivfl_core::models::{ArchConfig, PartyInput, StudentModel, TeacherModel};
use semivfl_core::synth::{generate, SynthSpec};
use semivfl_core::{Graph, Tensor};

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_tensor(&mut rng, 256, 128);
    let b = random_tensor(&mut rng, 128, 64);
    c.bench_function("matmul_256x128x64_fwd_bwd", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let va = g.variable(a.clone());
            let vb = g.variable(b.clone());
            let m = g.matmul(va, vb).unwrap();
            let s = g.sum(m).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

fn jpl_step(c: &mut Criterion) {
    let spec = SynthSpec {
        n_overlap: 600,
        n_nonoverlap: 1200,
        n_test: 200,
        ..SynthSpec::default()
    };
    let (ds, _) = generate(&spec).unwrap();
    let arch = ArchConfig::default();
    let mut teacher = TeacherModel::new(&ds.a_fields, &ds.b_fields, &arch, 1);
    teacher.freeze();
    let student = StudentModel::new(&ds.a_fields, &arch, 2);
    let rows_o: Vec<usize> = (0..256).collect();
    let rows_n: Vec<usize> = (0..512).collect();
    let y_o = ds.fed.labels_f64(&rows_o);
    let y_n = ds.loc.labels_f64(&rows_n);
    let x_b = ds.fed.b.as_ref().unwrap();
    let w = LossWeights::default();
    c.bench_function("jpl_step_256_512", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let tp = teacher.bind(&mut g);
            let sp = student.bind(&mut g);
            let o = OverlapBatch {
                x_a: PartyInput::new(&ds.fed.a, &rows_o),
                x_b: PartyInput::new(x_b, &rows_o),
                labels: &y_o,
            };
            let n = NonBatch {
                x_a: PartyInput::new(&ds.loc.a, &rows_n),
                labels: &y_n,
            };
            let jg = jpl_objective(&mut g, &teacher, &tp, &student, &sp, &o, Some(&n), &w).unwrap();
            black_box(g.backward(jg.total).unwrap());
        })
    });
}

fn auc_10k(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scores: Vec<f64> = (0..10_000).map(|_| (rng.random_range(0..1000) as f64) / 1000.0).collect();
    let labels: Vec<u8> = (0..10_000).map(|_| u8::from(rng.random_bool(0.25))).collect();
    c.bench_function("auc_10k_with_ties", |bench| bench.iter(|| black_box(auc(&scores, &labels).unwrap())));
}

criterion_group!(benches, matmul, jpl_step, auc_10k);
criterion_main!(benches);
