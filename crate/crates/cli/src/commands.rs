use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use semivfl_core::data::{
    load_table, overlap_split, PartitionManifest, PartitionedDataset, PartyViews, Schema, Side,
    SplitSizes,
};
use semivfl_core::fedsim::{train_teacher_federated, Transcript};
use semivfl_core::losses::CmeVariant;
use semivfl_core::metrics::{append_records, auc, MetricsRecord};
use semivfl_core::models::checkpoint::{manifest_path, CheckpointManifest};
use semivfl_core::models::{InferenceModel, LocalModel, StudentModel, TeacherModel};
use semivfl_core::synth::{write_dataset, SynthSpec};
use semivfl_core::trainer::{
    local_test_auc, run_grid, select_teacher, student_test_auc, teacher_test_auc, train_fpd,
    train_jpl, train_local, GridSpec, Method, TrainConfig,
};

use crate::manifest::{sha256_file, RunManifest, RunRecorder};
use crate::{
    Cli, Command, EvaluateArgs, ExportArgs, GridArgs, PartitionArgs, ReplayArgs, SynthArgs,
    TeacherTrainCmd, TrainArgs, TrainCmd,
};

pub fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, argv),
        Command::Partition(a) => partition(a, argv),
        Command::TrainTeacher(a) => train_teacher_cmd(a, argv),
        Command::TrainJpl(a) => train_with_teacher(Method::Jpl, a, argv),
        Command::TrainLocal(a) => train_local_cmd(a, argv),
        Command::TrainFpd(a) => train_with_teacher(Method::Fpd, a, argv),
        Command::Evaluate(a) => evaluate(a, argv),
        Command::Grid(a) => grid(a, argv),
        Command::Export(a) => export(a, argv),
        Command::Replay(a) => replay(a),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(a: SynthArgs, argv: Vec<String>) -> Result<()> {
    let mut spec: SynthSpec = match &a.config {
        Some(p) => read_toml(p)?,
        None => SynthSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.rho {
        spec.rho = v;
    }
    if let Some(v) = a.omega {
        spec.omega = v;
    }
    if let Some(v) = a.positive_rate {
        spec.positive_rate = v;
    }
    if let Some(v) = a.n_overlap {
        spec.n_overlap = v;
    }
    if let Some(v) = a.n_nonoverlap {
        spec.n_nonoverlap = v;
    }
    if let Some(v) = a.n_test {
        spec.n_test = v;
    }
    spec.validate()?;
    let mut rec = RunRecorder::new("synth", argv, &a.out_dir, spec.seed, serde_json::to_value(&spec)?);
    if let Some(p) = &a.config {
        rec.input("config", p);
    }
    let table = write_dataset(&spec, &a.out_dir)?;
    for f in ["data.csv", "schema.toml", "synth.toml"] {
        rec.output(&a.out_dir.join(f))?;
    }
    let positives = table.labels.iter().filter(|&&y| y == 1).count();
    println!(
        "wrote {} rows ({} positive) to {}",
        table.n_rows(),
        positives,
        a.out_dir.display()
    );
    rec.finish()?;
    Ok(())
}

/// Splits `n` rows 2:4:1 when no generator spec gives the sizes.
fn proportional_sizes(n: usize) -> SplitSizes {
    let n_overlap = n * 2 / 7;
    let n_nonoverlap = n * 4 / 7;
    SplitSizes {
        n_overlap,
        n_nonoverlap,
        n_test: n - n_overlap - n_nonoverlap,
    }
}

fn partition(a: PartitionArgs, argv: Vec<String>) -> Result<()> {
    let out_dir = a.out_dir.clone().unwrap_or_else(|| a.data_dir.clone());
    let schema_path = a.data_dir.join("schema.toml");
    let data_path = a.data_dir.join("data.csv");
    let mut schema = Schema::load(&schema_path)?;
    if let Some(side) = &a.active_side {
        schema.active_side = side.parse::<Side>().map_err(anyhow::Error::msg)?;
    }
    let synth_path = a.data_dir.join("synth.toml");
    let spec: Option<SynthSpec> = if synth_path.exists() { Some(read_toml(&synth_path)?) } else { None };
    let table = load_table(&data_path, &schema)?;
    let base = match &spec {
        Some(s) => s.sizes(),
        None => proportional_sizes(table.n_rows()),
    };
    let sizes = SplitSizes {
        n_overlap: a.n_overlap.unwrap_or(base.n_overlap),
        n_nonoverlap: a.n_nonoverlap.unwrap_or(base.n_nonoverlap),
        n_test: a.n_test.unwrap_or(base.n_test),
    };
    let seed = a.seed.or(spec.as_ref().map(|s| s.seed)).unwrap_or(0);
    let config = serde_json::json!({
        "sizes": sizes,
        "active_side": schema.active_side,
    });
    let mut rec = RunRecorder::new("partition", argv, &out_dir, seed, config);
    rec.input("schema", &schema_path);
    rec.input("data", &data_path);
    let views = PartyViews::from_schema(&schema)?;
    let (ds, manifest) = overlap_split(&table.encode(), &views, sizes, seed)?;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join("partition.json");
    manifest.save(&path)?;
    rec.output(&path)?;
    println!(
        "overlapped {} (+{} val), non-overlapped {} (+{} val), test {}",
        ds.fed.len(),
        ds.fed_val.len(),
        ds.loc.len(),
        ds.loc_val.len(),
        ds.test.len()
    );
    rec.finish()?;
    Ok(())
}

/// Loads the table and the partition written by `partition`.
fn load_dataset(data_dir: &Path, rec: &mut RunRecorder) -> Result<PartitionedDataset> {
    let schema_path = data_dir.join("schema.toml");
    let data_path = data_dir.join("data.csv");
    let part_path = data_dir.join("partition.json");
    ensure!(
        part_path.exists(),
        "{} not found; run `semivfl partition` first",
        part_path.display()
    );
    let manifest = PartitionManifest::load(&part_path)?;
    let schema = Schema::load(&schema_path)?;
    let table = load_table(&data_path, &schema)?;
    rec.input("schema", &schema_path);
    rec.input("data", &data_path);
    rec.input("partition", &part_path);
    Ok(PartitionedDataset::from_manifest(&table.encode(), &manifest)?)
}

fn resolve_config(t: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &t.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            TrainConfig::from_toml_str(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = t.seed {
        cfg.seed = v;
    }
    if let Some(v) = t.alpha {
        cfg.weights.alpha = v;
    }
    if let Some(v) = t.beta {
        cfg.weights.beta = v;
    }
    if let Some(v) = t.lambda {
        cfg.weights.lambda = v;
    }
    if let Some(v) = t.tau {
        cfg.weights.tau = v;
    }
    if let Some(v) = t.lr {
        cfg.lr = v;
    }
    if let Some(v) = t.batch_overlap {
        cfg.batch_overlap = v;
    }
    if let Some(v) = t.batch_non {
        cfg.batch_non = v;
    }
    if let Some(v) = t.patience {
        cfg.patience = v;
    }
    if let Some(v) = t.max_epochs {
        cfg.max_epochs = v;
    }
    if let Some(v) = &t.cme_variant {
        cfg.weights.cme = v.parse::<CmeVariant>().map_err(anyhow::Error::msg)?;
    }
    if let Some(v) = t.aux_ce {
        cfg.weights.aux_ce = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn recorder(command: &str, argv: Vec<String>, out_dir: &Path, cfg: &TrainConfig) -> Result<RunRecorder> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    Ok(RunRecorder::new(command, argv, out_dir, cfg.seed, serde_json::to_value(cfg)?))
}

/// Writes `records` to a fresh JSON-lines file.
fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    if path.exists() {
        std::fs::remove_file(path).with_context(|| format!("replacing {}", path.display()))?;
    }
    append_records(path, records).with_context(|| format!("writing {}", path.display()))
}

fn checkpoint_outputs(rec: &mut RunRecorder, path: &Path) -> Result<()> {
    rec.output(&manifest_path(path))?;
    rec.output(&path.with_extension("bin"))
}

fn final_record(stage: &str, cfg: &TrainConfig, val: f64, test: f64, overlap: Option<f64>) -> MetricsRecord {
    let mut r = MetricsRecord::new(stage, cfg.seed);
    r.val_auc = Some(val);
    r.test_auc = Some(test);
    r.test_auc_overlap = overlap;
    r
}

fn train_teacher_cmd(a: TrainCmd, argv: Vec<String>) -> Result<()> {
    let cfg = resolve_config(&a.train)?;
    let mut rec = recorder("train-teacher", argv, &a.out_dir, &cfg)?;
    if let Some(p) = &a.train.config {
        rec.input("config", p);
    }
    let ds = load_dataset(&a.data_dir, &mut rec)?;
    let transcript = Transcript::new();
    let run = train_teacher_federated(&ds, &cfg, &transcript)?;
    let test = teacher_test_auc(&run.teacher, &ds)?;
    let ckpt = a.out_dir.join("teacher");
    run.teacher.save(&ckpt, "teacher", &cfg.hash())?;
    checkpoint_outputs(&mut rec, &ckpt)?;
    let tpath = a.out_dir.join("teacher-transcript.jsonl");
    transcript.write_jsonl(&tpath).with_context(|| format!("writing {}", tpath.display()))?;
    rec.output(&tpath)?;
    let mut records = run.records.clone();
    records.push(final_record("teacher-final", &cfg, run.best_val_auc, test, Some(test)));
    let mpath = a.out_dir.join("teacher-metrics.jsonl");
    write_metrics(&mpath, &records)?;
    rec.timed_output(&mpath);
    println!("teacher: val_auc={:.6} test_auc_overlap={:.6}", run.best_val_auc, test);
    rec.finish()?;
    Ok(())
}

fn train_local_cmd(a: TrainCmd, argv: Vec<String>) -> Result<()> {
    let cfg = resolve_config(&a.train)?;
    let mut rec = recorder("train-local", argv, &a.out_dir, &cfg)?;
    if let Some(p) = &a.train.config {
        rec.input("config", p);
    }
    let ds = load_dataset(&a.data_dir, &mut rec)?;
    let run = train_local(&ds, &cfg)?;
    let test = local_test_auc(&run.model, &ds)?;
    let ckpt = a.out_dir.join("local");
    run.model.save(&ckpt, "local", &cfg.hash())?;
    checkpoint_outputs(&mut rec, &ckpt)?;
    let mut records = run.records.clone();
    records.push(final_record("local-final", &cfg, run.best_val_auc, test, None));
    let mpath = a.out_dir.join("local-metrics.jsonl");
    write_metrics(&mpath, &records)?;
    rec.timed_output(&mpath);
    println!("local: val_auc={:.6} test_auc={:.6}", run.best_val_auc, test);
    rec.finish()?;
    Ok(())
}

fn train_with_teacher(method: Method, a: TeacherTrainCmd, argv: Vec<String>) -> Result<()> {
    let Some(teacher_path) = a.teacher.clone() else {
        bail!("teacher required: pass --teacher <checkpoint> from train-teacher");
    };
    let cfg = resolve_config(&a.cmd.train)?;
    let command = format!("train-{method}");
    let mut rec = recorder(&command, argv, &a.cmd.out_dir, &cfg)?;
    if let Some(p) = &a.cmd.train.config {
        rec.input("config", p);
    }
    let teacher = TeacherModel::load(&teacher_path)
        .with_context(|| format!("loading teacher {}", teacher_path.display()))?;
    rec.input("teacher", &teacher_path);
    let ds = load_dataset(&a.cmd.data_dir, &mut rec)?;
    let name = method.to_string();
    let ckpt = a.cmd.out_dir.join(&name);
    let (val, test, mut records) = match method {
        Method::Jpl => {
            let run = train_jpl(&teacher, &ds, &cfg)?;
            let test = student_test_auc(&run.student, &ds)?;
            run.student.save(&ckpt, "jpl", &cfg.hash())?;
            (run.best_val_auc, test, run.records)
        }
        Method::Fpd => {
            let run = train_fpd(&teacher, &ds, &cfg)?;
            let test = local_test_auc(&run.model, &ds)?;
            run.model.save(&ckpt, "fpd", &cfg.hash())?;
            (run.best_val_auc, test, run.records)
        }
        Method::Local => unreachable!("local does not use a teacher"),
    };
    checkpoint_outputs(&mut rec, &ckpt)?;
    records.push(final_record(&format!("{name}-final"), &cfg, val, test, None));
    let mpath = a.cmd.out_dir.join(format!("{name}-metrics.jsonl"));
    write_metrics(&mpath, &records)?;
    rec.timed_output(&mpath);
    println!("{name}: val_auc={val:.6} test_auc={test:.6}");
    rec.finish()?;
    Ok(())
}

fn checkpoint_manifest(path: &Path) -> Result<CheckpointManifest> {
    let json = manifest_path(path);
    let text = std::fs::read_to_string(&json).with_context(|| format!("reading {}", json.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", json.display()))
}

fn evaluate(a: EvaluateArgs, argv: Vec<String>) -> Result<()> {
    let out_dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a
            .model
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    let seed = a.seed.unwrap_or(0);
    let meta = checkpoint_manifest(&a.model)?;
    let config = serde_json::json!({ "kind": meta.kind, "config_hash": meta.config_hash });
    let mut rec = RunRecorder::new("evaluate", argv, &out_dir, seed, config);
    rec.input("model", &a.model);
    let ds = load_dataset(&a.data_dir, &mut rec)?;
    let (test, overlap) = match meta.kind.as_str() {
        "teacher" => {
            let t = teacher_test_auc(&TeacherModel::load(&a.model)?, &ds)?;
            (t, Some(t))
        }
        "student" => (student_test_auc(&StudentModel::load(&a.model)?, &ds)?, None),
        "local" => (local_test_auc(&LocalModel::load(&a.model)?, &ds)?, None),
        "inference" => {
            let m = InferenceModel::load(&a.model)?;
            (auc(&m.predict(&ds.test.a)?, &ds.test.labels)?, None)
        }
        other => bail!("unknown checkpoint kind `{other}`"),
    };
    let mut r = MetricsRecord::new(&format!("evaluate-{}", meta.kind), seed);
    r.test_auc = Some(test);
    r.test_auc_overlap = overlap;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mpath = out_dir.join("eval-metrics.jsonl");
    append_records(&mpath, &[r]).with_context(|| format!("writing {}", mpath.display()))?;
    rec.timed_output(&mpath);
    println!("{} ({}): test_auc={test:.6}", a.model.display(), meta.kind);
    rec.finish()?;
    Ok(())
}

fn grid(a: GridArgs, argv: Vec<String>) -> Result<()> {
    let base = resolve_config(&a.cmd.train)?;
    let spec: GridSpec = match &a.grid {
        Some(p) => read_toml(p)?,
        None => GridSpec::default(),
    };
    spec.validate()?;
    let seeds = if a.seeds.is_empty() { vec![base.seed] } else { a.seeds.clone() };
    let config = serde_json::json!({ "base": base, "grid": spec, "seeds": seeds });
    std::fs::create_dir_all(&a.cmd.out_dir)?;
    let mut rec = RunRecorder::new("grid", argv, &a.cmd.out_dir, seeds[0], config);
    if let Some(p) = &a.grid {
        rec.input("grid", p);
    }
    if let Some(p) = &a.cmd.train.config {
        rec.input("config", p);
    }
    let ds = load_dataset(&a.cmd.data_dir, &mut rec)?;
    let teacher_base = TrainConfig { seed: seeds[0], ..base.clone() };
    let (teacher, tcfg) = select_teacher(&ds, &spec, &teacher_base)?;
    let ckpt = a.cmd.out_dir.join("grid-teacher");
    teacher.save(&ckpt, "teacher", &tcfg.hash())?;
    checkpoint_outputs(&mut rec, &ckpt)?;
    println!("teacher: lr={} lambda={}", tcfg.lr, tcfg.weights.lambda);
    let board = run_grid(&ds, &teacher, &spec, &base, &seeds)?;
    let path = a.cmd.out_dir.join("leaderboard.csv");
    board.write_csv(&path)?;
    rec.timed_output(&path);
    for m in &spec.methods {
        if let Some(r) = board.selected(*m) {
            println!(
                "{m}: val_auc={:.6} test_auc={:.6} lr={} lambda={} alpha={} beta={} tau={}",
                r.val_auc.unwrap_or(f64::NAN),
                r.test_auc.unwrap_or(f64::NAN),
                r.lr,
                r.lambda,
                r.alpha,
                r.beta,
                r.tau
            );
        }
    }
    rec.finish()?;
    Ok(())
}

fn export(a: ExportArgs, argv: Vec<String>) -> Result<()> {
    let meta = checkpoint_manifest(&a.student)?;
    ensure!(meta.kind == "student", "export needs a student checkpoint, found {}", meta.kind);
    let student = StudentModel::load(&a.student)?;
    let model = InferenceModel::from_student(&student)?;
    let config = serde_json::json!({ "config_hash": meta.config_hash });
    let mut rec = RunRecorder::new("export", argv, &a.out_dir, 0, config);
    rec.input("student", &a.student);
    let path = a.out_dir.join("model");
    model.save(&path, &meta.config_hash)?;
    checkpoint_outputs(&mut rec, &path)?;
    println!(
        "exported {} parameters to {}",
        model.store.param_count(),
        manifest_path(&path).display()
    );
    rec.finish()?;
    Ok(())
}

/// Recorded argv with its output directory pointed at `out_dir`.
fn redirect_out_dir(argv: &[String], out_dir: &Path) -> Vec<String> {
    let target = out_dir.display().to_string();
    let mut out = Vec::with_capacity(argv.len() + 2);
    let mut replaced = false;
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        if arg == "--out-dir" {
            it.next();
            out.extend(["--out-dir".to_string(), target.clone()]);
            replaced = true;
        } else if arg.starts_with("--out-dir=") {
            out.push(format!("--out-dir={target}"));
            replaced = true;
        } else {
            out.push(arg.clone());
        }
    }
    if !replaced {
        out.extend(["--out-dir".to_string(), target]);
    }
    out
}

fn replay(a: ReplayArgs) -> Result<()> {
    let old = RunManifest::load(&a.manifest)?;
    ensure!(old.command != "replay", "cannot replay a replay");
    std::fs::create_dir_all(&a.out_dir)?;
    let out_dir = a.out_dir.canonicalize()?;
    if !old.cwd.is_empty() {
        std::env::set_current_dir(&old.cwd).with_context(|| format!("entering {}", old.cwd))?;
    }
    let argv = redirect_out_dir(&old.argv, &out_dir);
    let cli = <Cli as clap::Parser>::try_parse_from(std::iter::once("semivfl".to_string()).chain(argv.clone()))
        .context("recorded arguments no longer parse")?;
    dispatch(cli.command, argv)?;
    let mut differ = Vec::new();
    for art in &old.outputs {
        let Some(want) = &art.sha256 else { continue };
        let name = Path::new(&art.path).file_name().context("output without a file name")?;
        let got = sha256_file(&out_dir.join(name))?;
        let same = &got == want;
        println!("{} {}", if same { "match " } else { "DIFFER" }, name.to_string_lossy());
        if !same {
            differ.push(name.to_string_lossy().into_owned());
        }
    }
    ensure!(differ.is_empty(), "replay differs in {}", differ.join(", "));
    Ok(())
}
