//! Loop-based reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use semivfl_core::autodiff::{Graph, Tensor};
use semivfl_core::losses as terms;
use semivfl_core::losses::CmeVariant;

pub type Mat = Vec<Vec<f64>>;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn clamp(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

pub fn bce(z: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..z.len() {
        let p = clamp(sigmoid(z[i]));
        s += -(y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln());
    }
    s / z.len() as f64
}

pub fn kl(zp: &[f64], zq: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..zp.len() {
        let p = clamp(sigmoid(zp[i]));
        let q = clamp(sigmoid(zq[i]));
        s += p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    }
    s / zp.len() as f64
}

pub fn normalize(m: &Mat) -> Mat {
    m.iter()
        .map(|r| {
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            r.iter().map(|x| x / n).collect()
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cme(s: &Mat, t: &Mat, variant: CmeVariant, y: &[f64]) -> f64 {
    let n = s.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            c[i][j] = dot(&s[i], &t[j]) - dot(&t[i], &t[j]);
        }
    }
    let nf = n as f64;
    match variant {
        CmeVariant::Cme => {
            let mut acc = 0.0;
            for row in &c {
                for v in row {
                    acc += v * v;
                }
            }
            acc / (nf * nf)
        }
        CmeVariant::Bcme => {
            let mut diag = 0.0;
            let mut off = 0.0;
            for i in 0..n {
                diag += c[i][i] * c[i][i];
                for j in 0..n {
                    let e = if i == j { c[i][j] - 1.0 } else { c[i][j] };
                    off += e * e;
                }
            }
            diag / nf + off / (nf * (nf - 1.0))
        }
        CmeVariant::Dcme => {
            let mut total = 0.0;
            for class in [1.0, 0.0] {
                let idx: Vec<usize> = (0..n).filter(|&i| y[i] == class).collect();
                let mut part = 0.0;
                for &i in &idx {
                    let mut others = 0.0;
                    for j in 0..n {
                        if j != i {
                            others += c[i][j] * c[i][j];
                        }
                    }
                    part += c[i][i] * c[i][i] + others / (nf - 1.0);
                }
                total += part / idx.len() as f64;
            }
            total
        }
    }
}

fn softmax_rows(m: &Mat, tau: f64) -> Mat {
    m.iter()
        .map(|r| {
            let mx = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|x| ((x - mx) / tau).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        })
        .collect()
}

fn sims(u: &Mat, h: &Mat) -> Mat {
    let (u, h) = (normalize(u), normalize(h));
    u.iter().map(|a| h.iter().map(|b| dot(a, b)).collect()).collect()
}

pub fn csi(u_t_a: &Mat, h_t_a: &Mat, u_s_b: &Mat, h_t_b: &Mat, tau: f64) -> f64 {
    let pa = softmax_rows(&sims(u_t_a, h_t_a), tau);
    let pb = softmax_rows(&sims(u_s_b, h_t_b), tau);
    let mut acc = 0.0;
    for i in 0..pa.len() {
        for j in 0..pa[i].len() {
            acc += (pa[i][j] - pb[i][j]).powi(2);
        }
    }
    acc
}

pub fn pom_block(z: &[f64], rows: &[usize], cols: &[usize]) -> Mat {
    rows.iter()
        .map(|&i| cols.iter().map(|&j| sigmoid(z[i] - z[j])).collect())
        .collect()
}

fn fro(m: &Mat) -> f64 {
    m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

fn fro_diff(a: &Mat, b: &Mat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        for j in 0..a[i].len() {
            acc += (a[i][j] - b[i][j]).powi(2);
        }
    }
    acc.sqrt()
}

pub fn pom(src: &[f64], tgt: &[f64], y: &[f64]) -> f64 {
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1.0).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0.0).collect();
    let spp = pom_block(src, &pos, &pos);
    let tpp = pom_block(tgt, &pos, &pos);
    let snn = pom_block(src, &neg, &neg);
    let tnn = pom_block(tgt, &neg, &neg);
    let spn = pom_block(src, &pos, &neg);
    fro_diff(&spp, &tpp) / fro(&tpp) + fro_diff(&snn, &tnn) / fro(&tnn) - fro(&spn)
}

pub fn fpd(z_o: &[f64], z_t: &[f64], y_o: &[f64], z_n: &[f64], y_n: &[f64], alpha: f64, beta: f64) -> f64 {
    beta * bce(z_n, y_n) + alpha * bce(z_o, y_o) + (1.0 - alpha) * kl(z_o, z_t)
}

pub fn rand_mat(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Mat {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Binary labels with at least one of each class.
pub fn rand_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.4))).collect();
        if y.contains(&1.0) && y.contains(&0.0) {
            return y;
        }
    }
}

pub fn tensor(m: &Mat) -> Tensor {
    let rows: Vec<&[f64]> = m.iter().map(|r| r.as_slice()).collect();
    Tensor::from_rows(&rows)
}

pub fn column(v: &[f64]) -> Tensor {
    Tensor::column(v.to_vec())
}

/// Largest gap between graph losses and the loop oracles over `instances`
/// random draws of every loss family.
pub fn loss_oracle_gaps(rng: &mut ChaCha8Rng, instances: usize) -> Vec<(&'static str, f64)> {
    let mut worst = vec![
        ("cme", 0.0f64),
        ("bcme", 0.0),
        ("dcme", 0.0),
        ("csi", 0.0),
        ("pom", 0.0),
        ("fhc_o", 0.0),
        ("bhc_o", 0.0),
        ("fhc_n", 0.0),
        ("bhc_n", 0.0),
        ("fpd", 0.0),
    ];
    let mut bump = |name: &str, gap: f64| {
        let slot = worst.iter_mut().find(|(n, _)| *n == name).unwrap();
        slot.1 = slot.1.max(gap);
    };
    for _ in 0..instances {
        let n = rng.random_range(2..=8);
        let d = rng.random_range(1..=4);
        let y = rand_labels(rng, n);
        let s = normalize(&rand_mat(rng, n, d));
        let t = normalize(&rand_mat(rng, n, d));
        for (name, variant) in [
            ("cme", CmeVariant::Cme),
            ("bcme", CmeVariant::Bcme),
            ("dcme", CmeVariant::Dcme),
        ] {
            let mut g = Graph::new();
            let sv = g.constant(tensor(&s));
            let tv = g.constant(tensor(&t));
            let c = terms::cme_matrix(&mut g, sv, tv).unwrap();
            let v = terms::cme_loss(&mut g, c, variant, &y).unwrap();
            bump(name, (g.item(v) - cme(&s, &t, variant, &y)).abs());
        }

        let n_o = rng.random_range(1..=8);
        let tau = rng.random_range(0.05..1.0);
        let (uta, hta, usb, htb) = (
            rand_mat(rng, n, d),
            rand_mat(rng, n_o, d),
            rand_mat(rng, n, d),
            rand_mat(rng, n_o, d),
        );
        let mut g = Graph::new();
        let vars: Vec<_> = [&uta, &hta, &usb, &htb].iter().map(|m| g.constant(tensor(m))).collect();
        let v = terms::csi(&mut g, vars[0], vars[1], vars[2], vars[3], tau).unwrap();
        bump("csi", (g.item(v) - csi(&uta, &hta, &usb, &htb, tau)).abs());

        let (za, zb) = (rand_vec(rng, n, 4.0), rand_vec(rng, n, 4.0));
        let mut g = Graph::new();
        let a = g.constant(column(&za));
        let b = g.constant(column(&zb));
        let v = terms::pom_loss(&mut g, a, b, &y).unwrap();
        bump("pom", (g.item(v) - pom(&za, &zb, &y)).abs());

        let v = terms::fhc_overlap(&mut g, a, b).unwrap();
        bump("fhc_o", (g.item(v) - kl(&za, &zb)).abs());

        let v = terms::bhc_overlap(&mut g, a, b, &y).unwrap();
        let want = bce(&za, &y) + bce(&zb, &y) + kl(&za, &zb);
        bump("bhc_o", (g.item(v) - want).abs());

        let v = terms::fhc_non(&mut g, a, b, &y).unwrap();
        bump("fhc_n", (g.item(v) - (bce(&za, &y) + bce(&zb, &y))).abs());

        let v = terms::bhc_non(&mut g, a, &y).unwrap();
        bump("bhc_n", (g.item(v) - bce(&za, &y)).abs());

        let m = rng.random_range(1..=8);
        let zn = rand_vec(rng, m, 4.0);
        let yn: Vec<f64> = (0..m).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let alpha = rng.random_range(0.0..=1.0);
        let beta = rng.random_range(0.0..2.0);
        let nv = g.constant(column(&zn));
        let v = terms::fpd(&mut g, a, b, &y, Some(nv), &yn, alpha, beta).unwrap();
        bump("fpd", (g.item(v) - fpd(&za, &zb, &y, &zn, &yn, alpha, beta)).abs());
    }
    worst
}

/// `(2 * wins + ties) / (2 * P * N)` over every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut twice: u64 = 0;
    let mut pairs: u64 = 0;
    for i in 0..scores.len() {
        if labels[i] != 1 {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Random scores with frequent ties and at least one label of each class.
pub fn rand_auc_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    loop {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=n.max(2));
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 7.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        if labels.contains(&0) && labels.contains(&1) {
            return (scores, labels);
        }
    }
}
