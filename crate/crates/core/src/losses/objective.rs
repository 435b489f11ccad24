use super::terms::{
    bhc_non, bhc_overlap, cme_loss, cme_matrix, csi, fhc_non, fhc_overlap, fpd, pom_loss, NORM_EPS,
};
use super::{LossError, LossReport, LossWeights, RegForm};
use crate::autodiff::{Graph, Var};
use crate::models::{Bound, BoundTeacher, LocalModel, PartyInput, StudentModel, TeacherModel};

/// Overlapped rows: both parties' features and labels.
#[derive(Clone, Copy, Debug)]
pub struct OverlapBatch<'a> {
    pub x_a: PartyInput<'a>,
    pub x_b: PartyInput<'a>,
    pub labels: &'a [f64],
}

/// Non-overlapped rows: party-A features and labels.
#[derive(Clone, Copy, Debug)]
pub struct NonBatch<'a> {
    pub x_a: PartyInput<'a>,
    pub labels: &'a [f64],
}

/// Nodes of one assembled objective.
#[derive(Clone, Debug)]
pub struct JplGraph {
    pub total: Var,
    pub terms: Vec<(&'static str, Var)>,
    pub weights: LossWeights,
}

impl JplGraph {
    pub fn report(&self, g: &Graph) -> LossReport {
        let mut r = LossReport {
            total: g.item(self.total),
            alpha: self.weights.alpha,
            beta: self.weights.beta,
            lambda: self.weights.lambda,
            tau: self.weights.tau,
            ..LossReport::default()
        };
        for &(name, v) in &self.terms {
            let x = g.item(v);
            match name {
                "cme" => r.cme = x,
                "fhc_o" => r.fhc_o = x,
                "bhc_o" => r.bhc_o = x,
                "pom_o" => r.pom_o = x,
                "csi" => r.csi = x,
                "bhc_n" => r.bhc_n = x,
                "fhc_n" => r.fhc_n = x,
                "pom_n" => r.pom_n = x,
                "aux_ce" => r.aux_ce = x,
                "emb_reg" => r.emb_reg = x,
                _ => {}
            }
        }
        r
    }
}

fn add_weighted(g: &mut Graph, acc: &mut Option<Var>, v: Var, w: f64) -> Result<(), LossError> {
    let term = if w == 1.0 { v } else { g.scale(v, w)? };
    *acc = Some(match *acc {
        Some(a) => g.add(a, term)?,
        None => term,
    });
    Ok(())
}

/// Builds the full distillation objective for one batch pair on `g`.
///
/// The teacher must be bound frozen; the student binding decides which
/// nodes receive gradients.
#[allow(clippy::too_many_arguments)]
pub fn jpl_objective(
    g: &mut Graph,
    teacher: &TeacherModel,
    tp: &BoundTeacher,
    student: &StudentModel,
    sp: &Bound,
    o: &OverlapBatch,
    n: Option<&NonBatch>,
    w: &LossWeights,
) -> Result<JplGraph, LossError> {
    w.validate()?;
    if !teacher.is_frozen() {
        return Err(LossError::Invalid("teacher must be frozen before distillation".into()));
    }
    let on = &w.terms;
    let mut terms: Vec<(&'static str, Var)> = Vec::new();
    let mut a2b_o: Option<Var> = None;
    let mut non: Option<Var> = None;
    let mut total: Option<Var> = None;

    let t = teacher.forward(g, tp, o.x_a, Some(o.x_b))?;
    let h_t_a = g.stop_gradient(t.h_a);
    let h_t_b = g.stop_gradient(t.h_b);
    let s = student.forward(g, sp, o.x_a)?;

    if on.cme {
        let ps = student.project(g, sp, s.h_b)?;
        let ss = g.l2_normalize_rows(ps, NORM_EPS)?;
        let pt = student.project(g, sp, h_t_b)?;
        let tt = g.l2_normalize_rows(pt, NORM_EPS)?;
        let c = cme_matrix(g, ss, tt)?;
        let v = cme_loss(g, c, w.cme, o.labels)?;
        terms.push(("cme", v));
        add_weighted(g, &mut a2b_o, v, 1.0)?;
    }
    if on.bhc_o {
        let zt = student.g_b.forward(g, sp, h_t_b)?;
        let v = bhc_overlap(g, zt, s.z_b, o.labels)?;
        terms.push(("bhc_o", v));
        add_weighted(g, &mut a2b_o, v, 1.0)?;
    }
    if on.fhc_o {
        let mixed = teacher.top_logit(g, tp, h_t_a, s.h_b)?;
        let v = fhc_overlap(g, mixed, t.logit)?;
        terms.push(("fhc_o", v));
        add_weighted(g, &mut a2b_o, v, w.alpha)?;
    }
    if let Some(v) = a2b_o {
        add_weighted(g, &mut total, v, 1.0)?;
    }
    if on.pom_o {
        let v = pom_loss(g, s.z_a, s.z_fed, o.labels)?;
        terms.push(("pom_o", v));
        add_weighted(g, &mut total, v, 1.0)?;
    }

    if let Some(n) = n.filter(|n| !n.x_a.is_empty()) {
        let need_teacher = on.csi || on.fhc_n;
        let u_t_a = if need_teacher {
            let u = teacher.h_a(g, tp, n.x_a)?;
            Some(g.stop_gradient(u))
        } else {
            None
        };
        let u = student.forward(g, sp, n.x_a)?;
        if on.csi {
            let v = csi(g, u_t_a.expect("teacher features"), h_t_a, u.h_b, h_t_b, w.tau)?;
            terms.push(("csi", v));
            add_weighted(g, &mut non, v, 1.0)?;
        }
        if on.bhc_n {
            let v = bhc_non(g, u.z_b, n.labels)?;
            terms.push(("bhc_n", v));
            add_weighted(g, &mut non, v, 1.0)?;
        }
        if on.fhc_n {
            let mixed = teacher.top_logit(g, tp, u_t_a.expect("teacher features"), u.h_b)?;
            let v = fhc_non(g, mixed, u.z_fed, n.labels)?;
            terms.push(("fhc_n", v));
            add_weighted(g, &mut non, v, 1.0)?;
        }
        if on.pom_n {
            let v = pom_loss(g, u.z_fed, u.z_a, n.labels)?;
            terms.push(("pom_n", v));
            add_weighted(g, &mut non, v, 1.0)?;
        }
        if let Some(v) = non {
            add_weighted(g, &mut total, v, w.beta)?;
        }
    }

    if w.aux_ce {
        let a = g.bce_with_logits(s.z_a, o.labels)?;
        let f = g.bce_with_logits(s.z_fed, o.labels)?;
        let v = g.add(a, f)?;
        terms.push(("aux_ce", v));
        add_weighted(g, &mut total, v, 1.0)?;
    }

    let reg = match w.reg {
        RegForm::Squared => student.l2_sq(g, sp)?,
        RegForm::Plain => student.l2(g, sp)?,
    };
    terms.push(("emb_reg", reg));
    add_weighted(g, &mut total, reg, w.lambda)?;

    Ok(JplGraph {
        total: total.expect("regularizer is always present"),
        terms,
        weights: w.clone(),
    })
}

/// Overlapped rows with the teacher's logits for the same rows.
#[derive(Clone, Copy, Debug)]
pub struct FpdBatch<'a> {
    pub x_o: PartyInput<'a>,
    pub y_o: &'a [f64],
    pub teacher_logits: Var,
    pub x_n: Option<PartyInput<'a>>,
    pub y_n: &'a [f64],
}

/// Soft-label baseline objective plus the embedding regularizer.
pub fn fpd_objective(
    g: &mut Graph,
    model: &LocalModel,
    p: &Bound,
    b: &FpdBatch,
    w: &LossWeights,
) -> Result<Var, LossError> {
    let z_o = model.forward(g, p, b.x_o)?;
    let z_n = match b.x_n.filter(|x| !x.is_empty()) {
        Some(x) => Some(model.forward(g, p, x)?),
        None => None,
    };
    let loss = fpd(g, z_o, b.teacher_logits, b.y_o, z_n, b.y_n, w.alpha, w.beta)?;
    let reg = match w.reg {
        RegForm::Squared => model.l2_sq(g, p)?,
        RegForm::Plain => model.l2(g, p)?,
    };
    let reg = g.scale(reg, w.lambda)?;
    Ok(g.add(loss, reg)?)
}
