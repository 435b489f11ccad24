use std::thread;
use std::time::{Duration, Instant};

use super::{mem_pair, ActiveParty, FedError, Link, PartyConfig, PassiveParty, Transcript};
use crate::autodiff::{Adam, Graph};
use crate::data::{PartitionedDataset, RowStream, Split};
use crate::losses::RegForm;
use crate::metrics::{auc, EarlyStopping, MetricsRecord};
use crate::models::{ActiveModel, PartyInput, PassiveModel, TeacherModel};
use crate::trainer::TrainConfig;

/// Runs one protocol round trip per batch, interleaving both parties on the
/// calling thread. Steps are numbered from `first_step`.
pub fn run_federated_steps<LA: Link, LP: Link>(
    active: &mut ActiveParty<LA>,
    passive: &mut PassiveParty<LP>,
    batches: &[Vec<usize>],
    first_step: u64,
) -> Result<Vec<f64>, FedError> {
    let mut losses = Vec::with_capacity(batches.len());
    for (k, rows) in batches.iter().enumerate() {
        let step = first_step + k as u64;
        let pending = passive.begin(step, rows)?;
        let loss = active.step(step, rows);
        let finished = passive.finish(pending);
        losses.push(loss?);
        finished?;
    }
    Ok(losses)
}

/// The same schedule with the passive party on its own thread and a
/// blocking rendezvous per step.
pub fn run_federated_threaded<LA, LP>(
    mut active: ActiveParty<LA>,
    mut passive: PassiveParty<LP>,
    batches: Vec<Vec<usize>>,
    first_step: u64,
) -> Result<(ActiveParty<LA>, PassiveParty<LP>, Vec<f64>), FedError>
where
    LA: Link,
    LP: Link + 'static,
{
    let schedule = batches.clone();
    let handle = thread::spawn(move || -> Result<PassiveParty<LP>, FedError> {
        for (k, rows) in schedule.iter().enumerate() {
            let pending = passive.begin(first_step + k as u64, rows)?;
            passive.finish(pending)?;
        }
        Ok(passive)
    });
    let mut losses = Vec::with_capacity(batches.len());
    let mut failure = None;
    for (k, rows) in batches.iter().enumerate() {
        match active.step(first_step + k as u64, rows) {
            Ok(l) => losses.push(l),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let passive_result = match failure {
        // Dropping our link end unblocks a passive party still waiting.
        Some(e) => {
            drop(active);
            let _ = handle.join();
            return Err(e);
        }
        None => handle
            .join()
            .map_err(|_| FedError::Protocol("passive thread panicked".into()))?,
    };
    Ok((active, passive_result?, losses))
}

/// Single-process reference: the whole teacher on one graph, with one
/// optimizer per party's parameter set.
pub struct MonolithicTeacher {
    pub teacher: TeacherModel,
    adam_a: Adam,
    adam_b: Adam,
    cfg: PartyConfig,
}

impl MonolithicTeacher {
    pub fn new(teacher: TeacherModel, cfg: PartyConfig) -> Self {
        let adam_a = Adam::new(teacher.active.store.values(), cfg.adam);
        let adam_b = Adam::new(teacher.passive.store.values(), cfg.adam);
        Self {
            teacher,
            adam_a,
            adam_b,
            cfg,
        }
    }

    pub fn step(&mut self, split: &Split, rows: &[usize]) -> Result<f64, FedError> {
        let b = split
            .b
            .as_ref()
            .ok_or_else(|| FedError::Protocol("overlapped rows need party-B columns".into()))?;
        let t = &self.teacher;
        let mut g = Graph::new();
        let p = t.bind(&mut g);
        let out = t.forward(
            &mut g,
            &p,
            PartyInput::new(&split.a, rows),
            Some(PartyInput::new(b, rows)),
        )?;
        let y = split.labels_f64(rows);
        let ce = g.bce_with_logits(out.logit, &y)?;
        let mut loss = ce;
        if self.cfg.lambda != 0.0 {
            for (emb, bound) in [(&t.active.emb, &p.active), (&t.passive.emb, &p.passive)] {
                let r = match self.cfg.reg {
                    RegForm::Squared => emb.l2_sq(&mut g, bound)?,
                    RegForm::Plain => emb.l2(&mut g, bound)?,
                };
                let r = g.scale(r, self.cfg.lambda)?;
                loss = g.add(loss, r)?;
            }
        }
        let grads = g.backward(loss)?;
        let ga = p.active.grads(&g, &grads);
        let gb = p.passive.grads(&g, &grads);
        self.adam_a
            .step(self.teacher.active.store.values_mut(), &ga, self.cfg.lr)?;
        self.adam_b
            .step(self.teacher.passive.store.values_mut(), &gb, self.cfg.lr)?;
        Ok(g.item(ce))
    }
}

/// Result of stage-one training.
#[derive(Clone, Debug)]
pub struct TeacherRun {
    pub teacher: TeacherModel,
    pub records: Vec<MetricsRecord>,
    pub best_val_auc: f64,
}

pub(crate) fn party_config(cfg: &TrainConfig) -> PartyConfig {
    PartyConfig {
        lr: cfg.lr,
        lambda: cfg.weights.lambda,
        reg: cfg.weights.reg,
        adam: cfg.adam,
    }
}

/// Trains the split-network teacher through the message protocol with
/// early stopping on overlapped-validation AUC, then merges both parties
/// into one frozen teacher.
pub fn train_teacher_federated(
    ds: &PartitionedDataset,
    cfg: &TrainConfig,
    transcript: &Transcript,
) -> Result<TeacherRun, FedError> {
    if ds.fed.is_empty() || !ds.fed.has_both_classes() {
        return Err(FedError::Protocol("overlapped split needs both classes".into()));
    }
    if !ds.fed_val.has_both_classes() {
        return Err(crate::metrics::MetricError::SingleClass.into());
    }
    let start = Instant::now();
    let pc = party_config(cfg);
    let init = TeacherModel::new(&ds.a_fields, &ds.b_fields, &cfg.arch, cfg.seed);
    let b = ds
        .fed
        .b
        .clone()
        .ok_or_else(|| FedError::Protocol("overlapped split lacks party-B columns".into()))?;
    let (link_a, link_p) = mem_pair(Duration::ZERO, transcript);
    let mut active = ActiveParty::new(
        init.active.clone(),
        ds.fed.a.clone(),
        &ds.fed.labels,
        ds.fed.row_ids.clone(),
        link_a,
        pc,
    );
    let mut passive = PassiveParty::new(init.passive.clone(), b, ds.fed.row_ids.clone(), link_p, pc);
    let mut stream = RowStream::new(&ds.fed, cfg.batch_overlap, cfg.seed ^ 0x7eac_4e12)?;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: (ActiveModel, PassiveModel) = (init.active.clone(), init.passive.clone());
    let mut records = Vec::new();
    let mut step = 0u64;
    for epoch in 0..cfg.max_epochs {
        let batches = stream.next_epoch();
        let losses = run_federated_steps(&mut active, &mut passive, &batches, step)?;
        step += batches.len() as u64;
        let merged = TeacherModel::from_parties(
            &cfg.arch,
            &ds.a_fields,
            &ds.b_fields,
            active.model.clone(),
            passive.model.clone(),
        );
        let val = auc(&merged.predict(&ds.fed_val)?, &ds.fed_val.labels)?;
        let mut rec = MetricsRecord::new("teacher", cfg.seed);
        rec.epoch = epoch;
        rec.step = step;
        rec.loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        rec.val_auc = Some(val);
        rec.wall_ms = start.elapsed().as_millis() as u64;
        records.push(rec);
        if stopper.observe(epoch, val) {
            best = (active.model.clone(), passive.model.clone());
        }
        if stopper.should_stop() {
            break;
        }
    }
    let mut teacher = TeacherModel::from_parties(&cfg.arch, &ds.a_fields, &ds.b_fields, best.0, best.1);
    teacher.freeze();
    Ok(TeacherRun {
        teacher,
        records,
        best_val_auc: stopper.best().unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FieldSpec, PartyMatrix, Side};
    use crate::fedsim::{FaultyLink, Message, PayloadKind};
    use crate::models::ArchConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fields(prefix: &str, n: usize) -> Vec<FieldSpec> {
        (0..n)
            .map(|i| FieldSpec::categorical(format!("{prefix}{i}"), 11, Side::Left).with_dim(3))
            .collect()
    }

    fn split(n: usize, seed: u64) -> Split {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<u32> = (0..n * 2).map(|_| rng.random_range(0..11)).collect();
        let b: Vec<u32> = (0..n * 3).map(|_| rng.random_range(0..11)).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 3 == 0) as u8).collect();
        Split {
            row_ids: (100..100 + n).collect(),
            a: PartyMatrix::new(n, 2, a),
            b: Some(PartyMatrix::new(n, 3, b)),
            labels,
        }
    }

    fn arch() -> ArchConfig {
        ArchConfig {
            bottom_a: vec![6, 4],
            bottom_b: vec![5, 4],
            top: vec![6],
        }
    }

    fn cfg() -> PartyConfig {
        PartyConfig {
            lr: 1e-2,
            lambda: 1e-3,
            reg: RegForm::Squared,
            adam: Default::default(),
        }
    }

    type Parties = (ActiveParty<crate::fedsim::MemLink>, PassiveParty<crate::fedsim::MemLink>);

    fn parties(t: &TeacherModel, s: &Split, tr: &Transcript, timeout: Duration) -> Parties {
        let (la, lp) = mem_pair(timeout, tr);
        (
            ActiveParty::new(t.active.clone(), s.a.clone(), &s.labels, s.row_ids.clone(), la, cfg()),
            PassiveParty::new(t.passive.clone(), s.b.clone().unwrap(), s.row_ids.clone(), lp, cfg()),
        )
    }

    fn schedule(n: usize, steps: usize) -> Vec<Vec<usize>> {
        (0..steps).map(|k| (0..6).map(|i| (k * 5 + i * 7) % n).collect()).collect()
    }

    #[test]
    fn matches_monolithic_and_threaded() {
        let s = split(40, 1);
        let t = TeacherModel::new(&fields("a", 2), &fields("b", 3), &arch(), 3);
        let batches = schedule(40, 12);
        let tr = Transcript::new();
        let (mut a, mut p) = parties(&t, &s, &tr, Duration::ZERO);
        let fed = run_federated_steps(&mut a, &mut p, &batches, 0).unwrap();
        let mut mono = MonolithicTeacher::new(t.clone(), cfg());
        let mono_losses: Vec<f64> = batches.iter().map(|r| mono.step(&s, r).unwrap()).collect();
        for (x, y) in fed.iter().zip(&mono_losses) {
            assert!((x - y).abs() < 1e-12);
        }
        let max_diff = |u: &crate::models::ParamStore, v: &crate::models::ParamStore| {
            u.values()
                .iter()
                .zip(v.values())
                .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()))
                .fold(0.0f64, f64::max)
        };
        assert!(max_diff(&a.model.store, &mono.teacher.active.store) < 1e-9);
        assert!(max_diff(&p.model.store, &mono.teacher.passive.store) < 1e-9);

        let recs = tr.records();
        assert_eq!(recs.len(), 24);
        assert!(recs.iter().all(|r| r.shape == vec![6, 4]));
        assert!(recs.iter().step_by(2).all(|r| r.payload == PayloadKind::HB));

        let tr2 = Transcript::new();
        let (a2, p2) = parties(&t, &s, &tr2, Duration::from_secs(10));
        let (a2, p2, l2) = run_federated_threaded(a2, p2, batches.clone(), 0).unwrap();
        assert_eq!(l2, fed);
        assert_eq!(a2.model, a.model);
        assert_eq!(p2.model, p.model);
        assert_eq!(tr2.records(), recs);
    }

    #[test]
    fn dropped_gradient_aborts_without_update() {
        let s = split(30, 2);
        let t = TeacherModel::new(&fields("a", 2), &fields("b", 3), &arch(), 4);
        let tr = Transcript::new();
        let (la, lp) = mem_pair(Duration::ZERO, &tr);
        let la = FaultyLink::new(la, |m| matches!(m, Message::Gradient(g) if g.step == 1));
        let mut a = ActiveParty::new(t.active.clone(), s.a.clone(), &s.labels, s.row_ids.clone(), la, cfg());
        let mut p = PassiveParty::new(t.passive.clone(), s.b.clone().unwrap(), s.row_ids.clone(), lp, cfg());
        let batches = schedule(30, 3);
        run_federated_steps(&mut a, &mut p, &batches[..1], 0).unwrap();
        let (ca, cp) = (a.model.store.checksum(), p.model.store.checksum());
        let err = run_federated_steps(&mut a, &mut p, &batches[1..2], 1).unwrap_err();
        assert!(matches!(err, FedError::Dropped { step: 1 }));
        assert_eq!(a.model.store.checksum(), ca);
        assert_eq!(p.model.store.checksum(), cp);
        assert_eq!((a.step_count(), p.step_count()), (1, 1));
    }

    #[test]
    fn step_mismatch_is_a_protocol_error() {
        let s = split(20, 3);
        let t = TeacherModel::new(&fields("a", 2), &fields("b", 3), &arch(), 5);
        let tr = Transcript::new();
        let (mut a, mut p) = parties(&t, &s, &tr, Duration::ZERO);
        let rows = vec![0, 1, 2, 3];
        let pending = p.begin(7, &rows).unwrap();
        let err = a.step(8, &rows).unwrap_err();
        assert!(matches!(err, FedError::StepMismatch { expected: 8, got: 7 }));
        assert!(matches!(p.finish(pending), Err(FedError::Missing { step: 7 })));
        assert_eq!((a.step_count(), p.step_count()), (0, 0));
        assert!(!format!("{p:?}").contains("label"));
    }
}
