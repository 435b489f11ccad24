//! Loss terms over graph nodes. Inputs are already-computed features and
//! logits; model plumbing lives in `objective`.

use super::{CmeVariant, LossError};
use crate::autodiff::{Graph, Tensor, Var};

/// Guard used when projecting features onto the unit sphere.
pub const NORM_EPS: f64 = 1e-12;

fn invalid(msg: impl Into<String>) -> LossError {
    LossError::Invalid(msg.into())
}

/// Indices of positive and negative labels.
pub fn class_indices(labels: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        if y == 1.0 {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    (pos, neg)
}

fn require_both(labels: &[f64], what: &str) -> Result<(Vec<usize>, Vec<usize>), LossError> {
    let (pos, neg) = class_indices(labels);
    if pos.is_empty() || neg.is_empty() {
        return Err(LossError::SingleClass(what.to_string()));
    }
    Ok((pos, neg))
}

/// `C = S T^T - T T^T`.
pub fn cme_matrix(g: &mut Graph, s: Var, t: Var) -> Result<Var, LossError> {
    if g.value(s).shape() != g.value(t).shape() {
        return Err(invalid(format!(
            "student features {:?} vs teacher features {:?}",
            g.value(s).shape(),
            g.value(t).shape()
        )));
    }
    let tt = g.transpose(t)?;
    let st = g.matmul(s, tt)?;
    let tt2 = g.matmul(t, tt)?;
    Ok(g.sub(st, tt2)?)
}

/// One of the three correlation-matrix errors over an `N x N` matrix `c`.
pub fn cme_loss(
    g: &mut Graph,
    c: Var,
    variant: CmeVariant,
    labels: &[f64],
) -> Result<Var, LossError> {
    let n = g.value(c).rows();
    if g.value(c).shape() != [n, n] || n == 0 {
        return Err(invalid(format!("error matrix must be square, got {:?}", g.value(c).shape())));
    }
    if labels.len() != n {
        return Err(invalid(format!("{} labels for batch of {n}", labels.len())));
    }
    let nf = n as f64;
    match variant {
        CmeVariant::Cme => {
            let f = g.frobenius_sq(c)?;
            Ok(g.scale(f, 1.0 / (nf * nf))?)
        }
        CmeVariant::Bcme => {
            if n < 2 {
                return Err(invalid("bcme needs at least two rows"));
            }
            let eye = g.constant(identity(n));
            let diag = g.mul(c, eye)?;
            let d = g.frobenius_sq(diag)?;
            let d = g.scale(d, 1.0 / nf)?;
            let off = g.sub(c, eye)?;
            let o = g.frobenius_sq(off)?;
            let o = g.scale(o, 1.0 / (nf * (nf - 1.0)))?;
            Ok(g.add(d, o)?)
        }
        CmeVariant::Dcme => {
            let (pos, neg) = require_both(labels, "dcme")?;
            let mut w = vec![0.0; n * n];
            for set in [&pos, &neg] {
                let wi = 1.0 / set.len() as f64;
                for &i in set {
                    for j in 0..n {
                        w[i * n + j] = if i == j { wi } else { wi / (nf - 1.0) };
                    }
                }
            }
            let w = g.constant(Tensor::matrix(n, n, w)?);
            let sq = g.square(c)?;
            let weighted = g.mul(sq, w)?;
            Ok(g.sum(weighted)?)
        }
    }
}

fn identity(n: usize) -> Tensor {
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        d[i * n + i] = 1.0;
    }
    Tensor::matrix(n, n, d).expect("square shape")
}

/// KL between the mixed-input and pure teacher predictions; the pure side is
/// detached.
pub fn fhc_overlap(g: &mut Graph, mixed: Var, pure: Var) -> Result<Var, LossError> {
    let pure = g.stop_gradient(pure);
    Ok(g.kl_bernoulli(mixed, pure)?)
}

/// B-head consistency on overlapped rows. `z_teacher` is the B head applied
/// to detached teacher features, `z_student` to the imitation features.
pub fn bhc_overlap(
    g: &mut Graph,
    z_teacher: Var,
    z_student: Var,
    labels: &[f64],
) -> Result<Var, LossError> {
    let a = g.bce_with_logits(z_teacher, labels)?;
    let b = g.bce_with_logits(z_student, labels)?;
    let kl = g.kl_bernoulli(z_teacher, z_student)?;
    let ab = g.add(a, b)?;
    Ok(g.add(ab, kl)?)
}

/// Similarity-structure match between the teacher's A space and the
/// student's imitated B space. Only `u_s_b` should carry gradients.
pub fn csi(
    g: &mut Graph,
    u_t_a: Var,
    h_t_a: Var,
    u_s_b: Var,
    h_t_b: Var,
    tau: f64,
) -> Result<Var, LossError> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    let norm = |g: &mut Graph, v: Var, detach: bool| -> Result<Var, LossError> {
        let v = if detach { g.stop_gradient(v) } else { v };
        Ok(g.l2_normalize_rows(v, NORM_EPS)?)
    };
    let ua = norm(g, u_t_a, true)?;
    let ha = norm(g, h_t_a, true)?;
    let ub = norm(g, u_s_b, false)?;
    let hb = norm(g, h_t_b, true)?;
    let hat = g.transpose(ha)?;
    let sa = g.matmul(ua, hat)?;
    let hbt = g.transpose(hb)?;
    let sb = g.matmul(ub, hbt)?;
    let pa = g.softmax_rows(sa, tau)?;
    let pb = g.softmax_rows(sb, tau)?;
    let d = g.sub(pa, pb)?;
    Ok(g.frobenius_sq(d)?)
}

/// Blocks `R++`, `R+-`, `R--` of the partial order matrix of column logits.
pub struct PomBlocks {
    pub pp: Var,
    pub pn: Var,
    pub nn: Var,
}

pub fn pom_blocks(g: &mut Graph, z: Var, labels: &[f64]) -> Result<PomBlocks, LossError> {
    if g.value(z).shape() != [labels.len(), 1] {
        return Err(invalid(format!(
            "logits {:?} for {} labels",
            g.value(z).shape(),
            labels.len()
        )));
    }
    let (pos, neg) = require_both(labels, "pom")?;
    let zp = g.gather_rows(z, &pos)?;
    let zn = g.gather_rows(z, &neg)?;
    let mut block = |a: Var, b: Var| -> Result<Var, LossError> {
        let d = g.outer_diff(a, b)?;
        Ok(g.sigmoid(d)?)
    };
    let pp = block(zp, zp)?;
    let pn = block(zp, zn)?;
    let nn = block(zn, zn)?;
    Ok(PomBlocks { pp, pn, nn })
}

/// Full `N x N` matrix `sigma(z_i - z_j)`.
pub fn pom_matrix(g: &mut Graph, z: Var) -> Result<Var, LossError> {
    let d = g.outer_diff(z, z)?;
    Ok(g.sigmoid(d)?)
}

/// Ranking consistency from `src` towards the detached `tgt` head.
pub fn pom_loss(g: &mut Graph, src: Var, tgt: Var, labels: &[f64]) -> Result<Var, LossError> {
    let tgt = g.stop_gradient(tgt);
    let s = pom_blocks(g, src, labels)?;
    let t = pom_blocks(g, tgt, labels)?;
    let mut rel = |a: Var, b: Var| -> Result<Var, LossError> {
        let d = g.sub(a, b)?;
        let num = g.frobenius_norm(d)?;
        let den = g.frobenius_norm(b)?;
        Ok(g.div_scalar(num, den)?)
    };
    let pp = rel(s.pp, t.pp)?;
    let nn = rel(s.nn, t.nn)?;
    let sep = g.frobenius_norm(s.pn)?;
    let keep = g.add(pp, nn)?;
    Ok(g.sub(keep, sep)?)
}

/// `CE(y, g_B(u_B))` on non-overlapped rows.
pub fn bhc_non(g: &mut Graph, z_b: Var, labels: &[f64]) -> Result<Var, LossError> {
    Ok(g.bce_with_logits(z_b, labels)?)
}

/// CE through the teacher's top (with imitation features) plus CE through
/// the student's federated head.
pub fn fhc_non(
    g: &mut Graph,
    z_teacher_mixed: Var,
    z_student_fed: Var,
    labels: &[f64],
) -> Result<Var, LossError> {
    let a = g.bce_with_logits(z_teacher_mixed, labels)?;
    let b = g.bce_with_logits(z_student_fed, labels)?;
    Ok(g.add(a, b)?)
}

/// Soft-label distillation baseline. `z_n` may be `None` for an empty
/// non-overlapped stream.
#[allow(clippy::too_many_arguments)]
pub fn fpd(
    g: &mut Graph,
    z_o: Var,
    z_teacher: Var,
    y_o: &[f64],
    z_n: Option<Var>,
    y_n: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<Var, LossError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if beta < 0.0 {
        return Err(invalid(format!("beta must be non-negative, got {beta}")));
    }
    let t = g.stop_gradient(z_teacher);
    let ce_o = g.bce_with_logits(z_o, y_o)?;
    let kl = g.kl_bernoulli(z_o, t)?;
    let a = g.scale(ce_o, alpha)?;
    let k = g.scale(kl, 1.0 - alpha)?;
    let mut total = g.add(a, k)?;
    if let Some(z_n) = z_n {
        let ce_n = g.bce_with_logits(z_n, y_n)?;
        let b = g.scale(ce_n, beta)?;
        total = g.add(total, b)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(g: &mut Graph, rows: &[&[f64]]) -> Var {
        g.constant(Tensor::from_rows(rows))
    }

    fn col(g: &mut Graph, v: &[f64]) -> Var {
        g.variable(Tensor::column(v.to_vec()))
    }

    #[test]
    fn cme_hand_case() {
        let mut g = Graph::new();
        let s = c(&mut g, &[&[1.0], &[1.0]]);
        let t = c(&mut g, &[&[1.0], &[-1.0]]);
        let m = cme_matrix(&mut g, s, t).unwrap();
        assert_eq!(g.value(m).data(), &[0.0, 0.0, 2.0, -2.0]);
        let y = [1.0, 0.0];
        let v = cme_loss(&mut g, m, CmeVariant::Cme, &y).unwrap();
        assert_eq!(g.item(v), 2.0);
        let v = cme_loss(&mut g, m, CmeVariant::Dcme, &y).unwrap();
        assert_eq!(g.item(v), 8.0);
        let zero = cme_matrix(&mut g, t, t).unwrap();
        assert_eq!(g.value(zero).max_abs(), 0.0);
        let single = cme_loss(&mut g, m, CmeVariant::Dcme, &[1.0, 1.0]);
        assert!(matches!(single, Err(LossError::SingleClass(_))));
    }

    #[test]
    fn pom_examples() {
        let mut g = Graph::new();
        let z = col(&mut g, &[1.0, 0.0]);
        let b = pom_blocks(&mut g, z, &[1.0, 0.0]).unwrap();
        assert!((g.value(b.pn).data()[0] - 0.7310585786300049).abs() < 1e-15);
        let z = col(&mut g, &[0.4, 0.4]);
        let l = pom_loss(&mut g, z, z, &[0.0, 1.0]).unwrap();
        assert!((g.item(l) + 0.5).abs() < 1e-15);
        let eq = col(&mut g, &[0.3, 0.3, 0.3]);
        let m = pom_matrix(&mut g, eq).unwrap();
        assert!(g.value(m).data().iter().all(|&x| x == 0.5));
        assert!(pom_blocks(&mut g, eq, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn pom_target_gets_zero_gradient() {
        let mut g = Graph::new();
        let src = col(&mut g, &[0.2, -1.0, 0.5, 2.0]);
        let tgt = col(&mut g, &[1.0, 0.1, -0.3, 0.7]);
        let l = pom_loss(&mut g, src, tgt, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get_or_zeros(&g, tgt).max_abs(), 0.0);
        assert!(gr.get_or_zeros(&g, src).max_abs() > 0.0);
    }

    #[test]
    fn csi_degenerate_cases() {
        let mut g = Graph::new();
        let ua = c(&mut g, &[&[1.0, 2.0], &[0.5, -1.0]]);
        let ha = c(&mut g, &[&[0.3, 0.1]]);
        let ub = g.variable(Tensor::from_rows(&[&[2.0], &[-1.0]]));
        let hb = c(&mut g, &[&[1.0]]);
        let l = csi(&mut g, ua, ha, ub, hb, 0.2).unwrap();
        assert_eq!(g.item(l), 0.0);
        assert!(csi(&mut g, ua, ha, ub, hb, 0.0).is_err());
        let l = csi(&mut g, ua, ua, ua, ua, 0.5).unwrap();
        assert_eq!(g.item(l), 0.0);
    }

    #[test]
    fn head_consistency_examples() {
        let ln2 = std::f64::consts::LN_2;
        let mut g = Graph::new();
        let z0 = col(&mut g, &[0.0, 0.0]);
        let y = [1.0, 0.0];
        let b = bhc_overlap(&mut g, z0, z0, &y).unwrap();
        assert!((g.item(b) - 2.0 * ln2).abs() < 1e-15);
        let f = fhc_non(&mut g, z0, z0, &y).unwrap();
        assert!((g.item(f) - 2.0 * ln2).abs() < 1e-15);
        let zs = col(&mut g, &[0.3, -0.2]);
        let zt = col(&mut g, &[0.3, -0.2]);
        let k = fhc_overlap(&mut g, zs, zt).unwrap();
        assert_eq!(g.item(k), 0.0);
        let zs2 = col(&mut g, &[1.3, -0.2]);
        let k = fhc_overlap(&mut g, zs2, zt).unwrap();
        let gr = g.backward(k).unwrap();
        assert_eq!(gr.get_or_zeros(&g, zt).max_abs(), 0.0);
    }

    #[test]
    fn fpd_two_sample_hand_case() {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let ce = |y: f64, p: f64| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let kl = |p: f64, q: f64| p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
        let (zo, zt, zn) = ([0.5, -1.0], [1.0, -0.5], [2.0, 0.1]);
        let (yo, yn) = ([1.0, 0.0], [0.0, 1.0]);
        let mut hand_o = 0.0;
        let mut hand_kl = 0.0;
        let mut hand_n = 0.0;
        for i in 0..2 {
            hand_o += ce(yo[i], sig(zo[i])) / 2.0;
            hand_kl += kl(sig(zo[i]), sig(zt[i])) / 2.0;
            hand_n += ce(yn[i], sig(zn[i])) / 2.0;
        }
        let hand = hand_n + 0.5 * hand_o + 0.5 * hand_kl;
        let mut g = Graph::new();
        let (o, t, n) = (col(&mut g, &zo), col(&mut g, &zt), col(&mut g, &zn));
        let l = fpd(&mut g, o, t, &yo, Some(n), &yn, 0.5, 1.0).unwrap();
        assert!((g.item(l) - hand).abs() < 1e-12);
        let pure = fpd(&mut g, o, t, &yo, Some(n), &yn, 1.0, 0.0).unwrap();
        assert!((g.item(pure) - hand_o).abs() < 1e-12);
        assert!(fpd(&mut g, o, t, &yo, None, &yn, 1.5, 0.0).is_err());
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get_or_zeros(&g, t).max_abs(), 0.0);
    }
}
