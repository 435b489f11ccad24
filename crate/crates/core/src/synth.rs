//! Synthetic two-party tables with a tunable cross-party correlation `rho`
//! and label dependence on party B `omega`.
//!
//! Every row draws a latent `z ~ N(0, I_k)`. Party-A fields are noisy linear
//! views of `z`. Party-B field `j` is `rho * phi_j(z) + sqrt(1 - rho^2) * eps_j`
//! where `phi_j` is a product of two latent coordinates. The label logit is
//! `gamma * ((1 - omega) * a.z + omega * mean_j(c_j * x_B_j)) + bias`, with the
//! bias solved so the expected positive rate matches the spec.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::sigmoid_scalar;
use crate::data::{
    overlap_split, DataError, FieldSpec, PartitionManifest, PartitionedDataset, PartyViews,
    RawColumn, RawTable, Schema, Side, SplitSizes,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub m_a: usize,
    pub m_b: usize,
    pub latent: usize,
    pub rho: f64,
    pub omega: f64,
    pub positive_rate: f64,
    /// Overall logit scale.
    pub gamma: f64,
    /// Noise std on each party-A field.
    pub noise_a: f64,
    pub n_overlap: usize,
    pub n_nonoverlap: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            m_a: 8,
            m_b: 16,
            latent: 8,
            rho: 0.8,
            omega: 0.5,
            positive_rate: 0.25,
            gamma: 3.0,
            noise_a: 0.1,
            n_overlap: 20_000,
            n_nonoverlap: 40_000,
            n_test: 10_000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.omega) {
            return bad(format!("rho {} and omega {} must lie in [0, 1]", self.rho, self.omega));
        }
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad(format!("positive rate {} must lie in (0, 1)", self.positive_rate));
        }
        if self.m_a == 0 || self.m_b == 0 || self.latent < 2 {
            return bad("need at least one field per party and a latent dim of 2".into());
        }
        if !(self.gamma > 0.0) || !(self.noise_a >= 0.0) {
            return bad("gamma must be positive and noise_a non-negative".into());
        }
        if self.n_overlap + self.n_nonoverlap + self.n_test == 0 {
            return bad("no rows requested".into());
        }
        Ok(())
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            n_overlap: self.n_overlap,
            n_nonoverlap: self.n_nonoverlap,
            n_test: self.n_test,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_overlap + self.n_nonoverlap + self.n_test
    }

    pub fn schema(&self) -> Schema {
        let mut fields: Vec<FieldSpec> = (0..self.m_a)
            .map(|j| FieldSpec::numeric(format!("a{j}"), Side::Left))
            .collect();
        fields.extend((0..self.m_b).map(|j| FieldSpec::numeric(format!("b{j}"), Side::Right)));
        Schema {
            label: "label".into(),
            active_side: Side::Left,
            fields,
        }
    }
}

/// Fixed random structure shared by all rows of one dataset.
struct Structure {
    a_dirs: Vec<Vec<f64>>,
    b_pairs: Vec<(usize, usize)>,
    b_signs: Vec<f64>,
    label_dir: Vec<f64>,
}

fn unit(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / n).collect()
}

impl Structure {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5157_7e11);
        let k = spec.latent;
        let a_dirs = (0..spec.m_a).map(|_| unit(&mut rng, k)).collect();
        let mut pairs: Vec<(usize, usize)> = (0..k)
            .flat_map(|p| ((p + 1)..k).map(move |q| (p, q)))
            .collect();
        pairs.shuffle(&mut rng);
        let b_pairs = (0..spec.m_b).map(|j| pairs[j % pairs.len()]).collect();
        let b_signs = (0..spec.m_b)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let label_dir = unit(&mut rng, k);
        Self {
            a_dirs,
            b_pairs,
            b_signs,
            label_dir,
        }
    }
}

struct Row {
    a: Vec<f64>,
    b: Vec<f64>,
    score: f64,
}

fn draw_row(spec: &SynthSpec, st: &Structure, row: u64, stream: u64) -> (Row, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(row) * 1024);
    let z: Vec<f64> = (0..spec.latent).map(|_| StandardNormal.sample(&mut rng)).collect();
    let a = st
        .a_dirs
        .iter()
        .map(|d| {
            let e: f64 = StandardNormal.sample(&mut rng);
            d.iter().zip(&z).map(|(x, y)| x * y).sum::<f64>() + spec.noise_a * e
        })
        .collect();
    let keep = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
    let b: Vec<f64> = st
        .b_pairs
        .iter()
        .map(|&(p, q)| {
            let e: f64 = StandardNormal.sample(&mut rng);
            spec.rho * z[p] * z[q] + keep * e
        })
        .collect();
    let s_a: f64 = st.label_dir.iter().zip(&z).map(|(x, y)| x * y).sum();
    let s_b: f64 = b.iter().zip(&st.b_signs).map(|(x, c)| x * c).sum::<f64>()
        / (spec.m_b as f64).sqrt();
    let score = spec.gamma * ((1.0 - spec.omega) * s_a + spec.omega * s_b);
    let u: f64 = rng.random();
    (Row { a, b, score }, u)
}

/// Bias making the mean of `sigmoid(score + bias)` equal `rate`.
fn calibrate_bias(scores: &[f64], rate: f64) -> f64 {
    let mean = |b: f64| scores.iter().map(|&s| sigmoid_scalar(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Rows used to calibrate the bias; drawn from their own stream.
const CALIBRATION_ROWS: u64 = 20_000;

/// The raw table, deterministic under `spec.seed`.
pub fn generate_table(spec: &SynthSpec) -> Result<RawTable, SynthError> {
    spec.validate()?;
    let st = Structure::new(spec);
    let calib: Vec<f64> = (0..CALIBRATION_ROWS)
        .map(|r| draw_row(spec, &st, r, 1).0.score)
        .collect();
    let bias = calibrate_bias(&calib, spec.positive_rate);
    let n = spec.n_rows();
    let mut a_cols = vec![Vec::with_capacity(n); spec.m_a];
    let mut b_cols = vec![Vec::with_capacity(n); spec.m_b];
    let mut labels = Vec::with_capacity(n);
    for r in 0..n as u64 {
        let (row, u) = draw_row(spec, &st, r, 0);
        for (c, v) in a_cols.iter_mut().zip(row.a) {
            c.push(Some(v));
        }
        for (c, v) in b_cols.iter_mut().zip(row.b) {
            c.push(Some(v));
        }
        labels.push(u8::from(u < sigmoid_scalar(row.score + bias)));
    }
    let columns = a_cols
        .into_iter()
        .chain(b_cols)
        .map(RawColumn::Numeric)
        .collect();
    Ok(RawTable {
        schema: spec.schema(),
        columns,
        labels,
    })
}

/// Table, encoded and split into overlapped / non-overlapped / test rows.
pub fn generate(spec: &SynthSpec) -> Result<(PartitionedDataset, PartitionManifest), SynthError> {
    let table = generate_table(spec)?;
    let views = PartyViews::from_schema(&table.schema)?;
    Ok(overlap_split(&table.encode(), &views, spec.sizes(), spec.seed)?)
}

/// Writes `data.csv`, `schema.toml` and `synth.toml` into `dir`.
pub fn write_dataset(spec: &SynthSpec, dir: &Path) -> Result<RawTable, SynthError> {
    let table = generate_table(spec)?;
    let io = |path: &Path, source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    table.write_csv(&dir.join("data.csv"))?;
    table.schema.save(&dir.join("schema.toml"))?;
    let spec_path = dir.join("synth.toml");
    std::fs::write(&spec_path, toml::to_string(spec).expect("spec serializes"))
        .map_err(|e| io(&spec_path, e))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            n_overlap: 400,
            n_nonoverlap: 800,
            n_test: 200,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(generate_table(&small(3)).unwrap(), generate_table(&small(3)).unwrap());
        assert_ne!(generate_table(&small(3)).unwrap(), generate_table(&small(4)).unwrap());
    }

    #[test]
    fn positive_rate_close_to_spec() {
        let spec = SynthSpec {
            n_overlap: 50_000,
            n_nonoverlap: 0,
            n_test: 0,
            ..SynthSpec::default()
        };
        let t = generate_table(&spec).unwrap();
        let rate = t.labels.iter().map(|&y| f64::from(y)).sum::<f64>() / t.n_rows() as f64;
        assert!((rate - 0.25).abs() < 0.01, "{rate}");
    }

    #[test]
    fn invalid_specs_rejected() {
        for bad in [
            SynthSpec { rho: 1.5, ..small(0) },
            SynthSpec { omega: -0.1, ..small(0) },
            SynthSpec { positive_rate: 1.0, ..small(0) },
            SynthSpec { rho: 0.0, omega: 0.0, positive_rate: 0.0, ..small(0) },
        ] {
            assert!(generate_table(&bad).is_err());
        }
    }

    #[test]
    fn split_shapes() {
        let spec = small(1);
        let (ds, _) = generate(&spec).unwrap();
        assert_eq!(ds.fed.len() + ds.fed_val.len(), 400);
        assert_eq!(ds.loc.len() + ds.loc_val.len(), 800);
        assert_eq!(ds.test.len(), 200);
        assert_eq!(ds.a_fields.len(), spec.m_a);
        assert_eq!(ds.b_fields.len(), spec.m_b);
        assert!(ds.loc.b.is_none());
    }

    #[test]
    fn written_files_reload() {
        let dir = tempfile::tempdir().unwrap();
        let t = write_dataset(&small(2), dir.path()).unwrap();
        let schema = Schema::load(&dir.path().join("schema.toml")).unwrap();
        let back = crate::data::load_table(&dir.path().join("data.csv"), &schema).unwrap();
        assert_eq!(back, t);
    }
}
