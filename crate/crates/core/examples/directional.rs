//! Trains teacher, Local, FPD and JPL on the default synthetic dataset and
//! prints test AUCs. Usage: `cargo run --release --example directional -- 0,1,2`

use std::time::Instant;

use semivfl_core::synth::{generate, SynthSpec};
use semivfl_core::trainer::{
    local_test_auc, student_test_auc, teacher_test_auc, train_fpd, train_jpl, train_local,
    train_teacher, TrainConfig,
};

fn main() {
    let seeds: Vec<u64> = std::env::args()
        .nth(1)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0]);
    for seed in seeds {
        let spec = SynthSpec {
            seed,
            ..SynthSpec::default()
        };
        let t0 = Instant::now();
        let (ds, _) = generate(&spec).unwrap();
        println!("seed {seed}: data {:.1}s", t0.elapsed().as_secs_f64());
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let t = Instant::now();
        let teacher = train_teacher(&ds, &cfg).unwrap();
        println!(
            "  teacher test {:.4} val {:.4} epochs {} {:.1}s",
            teacher_test_auc(&teacher.teacher, &ds).unwrap(),
            teacher.best_val_auc,
            teacher.records.len(),
            t.elapsed().as_secs_f64()
        );
        let t = Instant::now();
        let local = train_local(&ds, &cfg).unwrap();
        println!(
            "  local test {:.4} val {:.4} epochs {} {:.1}s",
            local_test_auc(&local.model, &ds).unwrap(),
            local.best_val_auc,
            local.records.len(),
            t.elapsed().as_secs_f64()
        );
        let t = Instant::now();
        let fpd = train_fpd(&teacher.teacher, &ds, &cfg).unwrap();
        println!(
            "  fpd test {:.4} val {:.4} epochs {} {:.1}s",
            local_test_auc(&fpd.model, &ds).unwrap(),
            fpd.best_val_auc,
            fpd.records.len(),
            t.elapsed().as_secs_f64()
        );
        let t = Instant::now();
        let jpl = train_jpl(&teacher.teacher, &ds, &cfg).unwrap();
        println!(
            "  jpl test {:.4} val {:.4} epochs {} {:.1}s",
            student_test_auc(&jpl.student, &ds).unwrap(),
            jpl.best_val_auc,
            jpl.records.len(),
            t.elapsed().as_secs_f64()
        );
    }
}
