use std::time::Instant;

use super::{TrainConfig, TrainError};
use crate::autodiff::{Adam, AutodiffError, Graph};
use crate::data::{BatchStream, PartitionedDataset, RowStream, Split};
use crate::fedsim::{train_teacher_federated, TeacherRun, Transcript};
use crate::losses::{fpd_objective, jpl_objective, FpdBatch, LossReport, NonBatch, OverlapBatch, RegForm};
use crate::metrics::{auc, EarlyStopping, MetricsRecord};
use crate::models::{LocalModel, PartyInput, StudentModel, TeacherModel};

/// Stage two output.
#[derive(Clone, Debug)]
pub struct StudentRun {
    pub student: StudentModel,
    pub records: Vec<MetricsRecord>,
    pub best_val_auc: f64,
}

/// Output of the local and soft-label baselines.
#[derive(Clone, Debug)]
pub struct LocalRun {
    pub model: LocalModel,
    pub records: Vec<MetricsRecord>,
    pub best_val_auc: f64,
}

/// Stage one: the split-network teacher through the two-party protocol.
pub fn train_teacher(ds: &PartitionedDataset, cfg: &TrainConfig) -> Result<TeacherRun, TrainError> {
    cfg.validate()?;
    Ok(train_teacher_federated(ds, cfg, &Transcript::new())?)
}

#[derive(Default)]
struct ReportMean {
    sum: LossReport,
    n: usize,
}

impl ReportMean {
    fn add(&mut self, r: &LossReport) {
        let s = &mut self.sum;
        s.cme += r.cme;
        s.fhc_o += r.fhc_o;
        s.bhc_o += r.bhc_o;
        s.pom_o += r.pom_o;
        s.csi += r.csi;
        s.bhc_n += r.bhc_n;
        s.fhc_n += r.fhc_n;
        s.pom_n += r.pom_n;
        s.aux_ce += r.aux_ce;
        s.emb_reg += r.emb_reg;
        s.total += r.total;
        (s.alpha, s.beta, s.lambda, s.tau) = (r.alpha, r.beta, r.lambda, r.tau);
        self.n += 1;
    }

    fn mean(&self) -> LossReport {
        let k = self.n.max(1) as f64;
        let s = &self.sum;
        LossReport {
            cme: s.cme / k,
            fhc_o: s.fhc_o / k,
            bhc_o: s.bhc_o / k,
            pom_o: s.pom_o / k,
            csi: s.csi / k,
            bhc_n: s.bhc_n / k,
            fhc_n: s.fhc_n / k,
            pom_n: s.pom_n / k,
            aux_ce: s.aux_ce / k,
            emb_reg: s.emb_reg / k,
            total: s.total / k,
            ..s.clone()
        }
    }
}

fn require_frozen(teacher: &TeacherModel) -> Result<(), TrainError> {
    if teacher.is_frozen() {
        Ok(())
    } else {
        Err(TrainError::Config("teacher must be frozen".into()))
    }
}

fn non_finite(step: u64, last: &Option<LossReport>) -> TrainError {
    TrainError::NonFinite {
        step,
        last: Box::new(last.clone()),
    }
}

fn record(stage: &str, cfg: &TrainConfig, epoch: usize, step: u64, start: Instant) -> MetricsRecord {
    let mut r = MetricsRecord::new(stage, cfg.seed);
    r.epoch = epoch;
    r.step = step;
    r.wall_ms = start.elapsed().as_millis() as u64;
    r
}

/// Stage two: distills the frozen teacher into a party-A student, early
/// stopping on full-space validation AUC of the ensemble.
pub fn train_jpl(
    teacher: &TeacherModel,
    ds: &PartitionedDataset,
    cfg: &TrainConfig,
) -> Result<StudentRun, TrainError> {
    cfg.validate()?;
    require_frozen(teacher)?;
    let start = Instant::now();
    let fed_b = ds
        .fed
        .b
        .as_ref()
        .ok_or_else(|| TrainError::Config("overlapped split lacks party-B columns".into()))?;
    let val = ds.full_space_validation();
    let mut student = StudentModel::new(&ds.a_fields, &cfg.arch, cfg.seed ^ 0x5eed_0002);
    let mut adam = Adam::new(student.store.values(), cfg.adam);
    let mut stream = BatchStream::new(ds, cfg.batch_overlap, cfg.batch_non, cfg.seed ^ 0x5eed_0003)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = student.store.clone();
    let mut records = Vec::new();
    let mut last: Option<LossReport> = None;
    let mut step = 0u64;
    for epoch in 0..cfg.max_epochs {
        let mut mean = ReportMean::default();
        for pair in stream.next_epoch() {
            let y_o = ds.fed.labels_f64(&pair.overlap);
            let y_n = ds.loc.labels_f64(&pair.non);
            let o = OverlapBatch {
                x_a: PartyInput::new(&ds.fed.a, &pair.overlap),
                x_b: PartyInput::new(fed_b, &pair.overlap),
                labels: &y_o,
            };
            let n = NonBatch {
                x_a: PartyInput::new(&ds.loc.a, &pair.non),
                labels: &y_n,
            };
            let mut g = Graph::new();
            let tp = teacher.bind(&mut g);
            let sp = student.bind(&mut g);
            let jg = match jpl_objective(&mut g, teacher, &tp, &student, &sp, &o, Some(&n), &cfg.weights) {
                Ok(jg) => jg,
                Err(crate::losses::LossError::Autodiff(AutodiffError::NonFinite { .. })) => {
                    return Err(non_finite(step, &last))
                }
                Err(e) => return Err(e.into()),
            };
            let report = jg.report(&g);
            if !report.total.is_finite() {
                return Err(non_finite(step, &last));
            }
            let grads = g.backward(jg.total)?;
            adam.step(student.store.values_mut(), &sp.grads(&g, &grads), cfg.lr)?;
            mean.add(&report);
            last = Some(report);
            step += 1;
        }
        let val_auc = auc(&student.predict(&val)?, &val.labels)?;
        let mut r = record("jpl", cfg, epoch, step, start);
        let m = mean.mean();
        r.loss = m.total;
        r.losses = Some(m);
        r.val_auc = Some(val_auc);
        records.push(r);
        if stopper.observe(epoch, val_auc) {
            best = student.store.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    student.store = best;
    Ok(StudentRun {
        student,
        records,
        best_val_auc: stopper.best().unwrap_or(f64::NAN),
    })
}

fn local_loss(
    g: &mut Graph,
    model: &LocalModel,
    split: &Split,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<(crate::Var, crate::models::Bound), TrainError> {
    let p = model.bind(g, false);
    let z = model.forward(g, &p, PartyInput::new(&split.a, rows))?;
    let ce = g.bce_with_logits(z, &split.labels_f64(rows))?;
    let reg = match cfg.weights.reg {
        RegForm::Squared => model.l2_sq(g, &p)?,
        RegForm::Plain => model.l2(g, &p)?,
    };
    let reg = g.scale(reg, cfg.weights.lambda)?;
    Ok((g.add(ce, reg)?, p))
}

/// Party-A-only baseline over every row the active party holds.
pub fn train_local(ds: &PartitionedDataset, cfg: &TrainConfig) -> Result<LocalRun, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let train = ds.active_training_rows();
    let val = ds.full_space_validation();
    let mut model = LocalModel::new(&ds.a_fields, &cfg.arch, cfg.seed ^ 0x5eed_0002);
    let mut adam = Adam::new(model.store.values(), cfg.adam);
    let mut stream = RowStream::new(&train, cfg.batch_overlap + cfg.batch_non, cfg.seed ^ 0x5eed_0003)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.clone();
    let mut records = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.max_epochs {
        let mut total = 0.0;
        let batches = stream.next_epoch();
        for rows in &batches {
            let mut g = Graph::new();
            let (loss, p) = local_loss(&mut g, &model, &train, rows, cfg)?;
            total += g.item(loss);
            let grads = g.backward(loss)?;
            adam.step(model.store.values_mut(), &p.grads(&g, &grads), cfg.lr)?;
            step += 1;
        }
        let val_auc = auc(&model.predict(&val)?, &val.labels)?;
        let mut r = record("local", cfg, epoch, step, start);
        r.loss = total / batches.len().max(1) as f64;
        r.val_auc = Some(val_auc);
        records.push(r);
        if stopper.observe(epoch, val_auc) {
            best = model.store.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.store = best;
    Ok(LocalRun {
        model,
        records,
        best_val_auc: stopper.best().unwrap_or(f64::NAN),
    })
}

/// Soft-label distillation baseline on a local-architecture student.
pub fn train_fpd(
    teacher: &TeacherModel,
    ds: &PartitionedDataset,
    cfg: &TrainConfig,
) -> Result<LocalRun, TrainError> {
    cfg.validate()?;
    require_frozen(teacher)?;
    if !(0.0..=1.0).contains(&cfg.weights.alpha) {
        return Err(TrainError::Config(format!(
            "alpha must lie in [0, 1], got {}",
            cfg.weights.alpha
        )));
    }
    let start = Instant::now();
    let fed_b = ds
        .fed
        .b
        .as_ref()
        .ok_or_else(|| TrainError::Config("overlapped split lacks party-B columns".into()))?;
    let val = ds.full_space_validation();
    let mut model = LocalModel::new(&ds.a_fields, &cfg.arch, cfg.seed ^ 0x5eed_0002);
    let mut adam = Adam::new(model.store.values(), cfg.adam);
    let mut stream = BatchStream::new(ds, cfg.batch_overlap, cfg.batch_non, cfg.seed ^ 0x5eed_0003)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.clone();
    let mut records = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.max_epochs {
        let mut total = 0.0;
        let pairs = stream.next_epoch();
        for pair in &pairs {
            let y_o = ds.fed.labels_f64(&pair.overlap);
            let y_n = ds.loc.labels_f64(&pair.non);
            let mut g = Graph::new();
            let tp = teacher.bind(&mut g);
            let t = teacher.forward(
                &mut g,
                &tp,
                PartyInput::new(&ds.fed.a, &pair.overlap),
                Some(PartyInput::new(fed_b, &pair.overlap)),
            )?;
            let p = model.bind(&mut g, false);
            let b = FpdBatch {
                x_o: PartyInput::new(&ds.fed.a, &pair.overlap),
                y_o: &y_o,
                teacher_logits: t.logit,
                x_n: Some(PartyInput::new(&ds.loc.a, &pair.non)),
                y_n: &y_n,
            };
            let loss = fpd_objective(&mut g, &model, &p, &b, &cfg.weights)?;
            total += g.item(loss);
            let grads = g.backward(loss)?;
            adam.step(model.store.values_mut(), &p.grads(&g, &grads), cfg.lr)?;
            step += 1;
        }
        let val_auc = auc(&model.predict(&val)?, &val.labels)?;
        let mut r = record("fpd", cfg, epoch, step, start);
        r.loss = total / pairs.len().max(1) as f64;
        r.val_auc = Some(val_auc);
        records.push(r);
        if stopper.observe(epoch, val_auc) {
            best = model.store.clone();
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.store = best;
    Ok(LocalRun {
        model,
        records,
        best_val_auc: stopper.best().unwrap_or(f64::NAN),
    })
}

/// Test AUC of the ensemble over all test rows (party A only).
pub fn student_test_auc(student: &StudentModel, ds: &PartitionedDataset) -> Result<f64, TrainError> {
    Ok(auc(&student.predict(&ds.test)?, &ds.test.labels)?)
}

pub fn local_test_auc(model: &LocalModel, ds: &PartitionedDataset) -> Result<f64, TrainError> {
    Ok(auc(&model.predict(&ds.test)?, &ds.test.labels)?)
}

/// Teacher AUC on the test rows that carry party-B columns.
pub fn teacher_test_auc(teacher: &TeacherModel, ds: &PartitionedDataset) -> Result<f64, TrainError> {
    let t = ds.overlapped_test();
    Ok(auc(&teacher.predict(&t)?, &t.labels)?)
}
