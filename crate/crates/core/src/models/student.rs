use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{conform, read_checkpoint, write_checkpoint};
use super::layers::{EmbeddingSet, Linear, Mlp, PartyInput};
use super::params::{Bound, ParamStore};
use super::{chunked, ensemble_predict, ArchConfig, ModelError};
use crate::autodiff::{Graph, Var};
use crate::data::{FieldSpec, Split};

/// Graph nodes produced by one student forward pass.
#[derive(Clone, Copy, Debug)]
pub struct StudentOutputs {
    pub h_a: Var,
    pub h_b: Var,
    pub z_a: Var,
    pub z_b: Var,
    pub z_fed: Var,
}

/// Party-A-only student. One embedding table feeds two bottoms; the second
/// one imitates the passive party's representation.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel {
    pub arch: ArchConfig,
    pub fields: Vec<FieldSpec>,
    pub store: ParamStore,
    pub emb: EmbeddingSet,
    pub f_a: Mlp,
    pub f_b: Mlp,
    pub g_a: Mlp,
    pub g_b: Mlp,
    pub g_fed: Mlp,
    pub r: Linear,
}

#[derive(Serialize, Deserialize)]
struct StudentLayout {
    arch: ArchConfig,
    fields: Vec<FieldSpec>,
}

impl StudentModel {
    pub fn new(fields: &[FieldSpec], arch: &ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = EmbeddingSet::new(&mut store, "student.e_a", fields, &mut rng);
        let f_a = Mlp::bottom(&mut store, "student.f_a", emb.width(), &arch.bottom_a, &mut rng);
        let f_b = Mlp::bottom(&mut store, "student.f_b", emb.width(), &arch.bottom_b, &mut rng);
        let (da, db) = (arch.h_a_width(), arch.h_b_width());
        let g_a = Mlp::head(&mut store, "student.g_a", da, &arch.top, &mut rng);
        let g_b = Mlp::head(&mut store, "student.g_b", db, &arch.top, &mut rng);
        let g_fed = Mlp::head(&mut store, "student.g_fed", da + db, &arch.top, &mut rng);
        let r = Linear::new(&mut store, "student.r", db, db, &mut rng);
        Self {
            arch: arch.clone(),
            fields: fields.to_vec(),
            store,
            emb,
            f_a,
            f_b,
            g_a,
            g_b,
            g_fed,
            r,
        }
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.store.bind(g, false)
    }

    /// `(h_A, h_B)` from the shared embedding.
    pub fn hidden(&self, g: &mut Graph, p: &Bound, x: PartyInput) -> Result<(Var, Var), ModelError> {
        let e = self.emb.forward(g, p, x)?;
        let h_a = self.f_a.forward(g, p, e)?;
        let h_b = self.f_b.forward(g, p, e)?;
        Ok((h_a, h_b))
    }

    pub fn fed_logit(&self, g: &mut Graph, p: &Bound, h_a: Var, h_b: Var) -> Result<Var, ModelError> {
        let cut = g.concat_cols(&[h_a, h_b])?;
        self.g_fed.forward(g, p, cut)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: PartyInput) -> Result<StudentOutputs, ModelError> {
        let (h_a, h_b) = self.hidden(g, p, x)?;
        let z_a = self.g_a.forward(g, p, h_a)?;
        let z_b = self.g_b.forward(g, p, h_b)?;
        let z_fed = self.fed_logit(g, p, h_a, h_b)?;
        Ok(StudentOutputs {
            h_a,
            h_b,
            z_a,
            z_b,
            z_fed,
        })
    }

    /// Shared projection `r` used before the correlation losses.
    pub fn project(&self, g: &mut Graph, p: &Bound, h_b: Var) -> Result<Var, ModelError> {
        self.r.forward(g, p, h_b)
    }

    pub fn l2_sq(&self, g: &mut Graph, p: &Bound) -> Result<Var, ModelError> {
        self.emb.l2_sq(g, p)
    }

    pub fn l2(&self, g: &mut Graph, p: &Bound) -> Result<Var, ModelError> {
        self.emb.l2(g, p)
    }

    /// `(z_A, z_Fed)` for every row of a split, using party-A columns only.
    pub fn head_logits(&self, split: &Split) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut z_a = Vec::with_capacity(split.len());
        let both = chunked(split.len(), |rows| {
            let mut g = Graph::new();
            let p = self.bind(&mut g);
            let (h_a, h_b) = self.hidden(&mut g, &p, PartyInput::new(&split.a, rows))?;
            let za = self.g_a.forward(&mut g, &p, h_a)?;
            let zf = self.fed_logit(&mut g, &p, h_a, h_b)?;
            z_a.extend_from_slice(g.value(za).data());
            Ok(g.value(zf).data().to_vec())
        })?;
        Ok((z_a, both))
    }

    /// Ensemble probability `sigmoid((z_A + z_Fed) / 2)`.
    pub fn predict(&self, split: &Split) -> Result<Vec<f64>, ModelError> {
        let (z_a, z_fed) = self.head_logits(split)?;
        Ok(z_a.iter().zip(&z_fed).map(|(&a, &f)| ensemble_predict(a, f)).collect())
    }

    pub fn save(&self, path: &Path, stage: &str, config_hash: &str) -> Result<(), ModelError> {
        let layout = StudentLayout {
            arch: self.arch.clone(),
            fields: self.fields.clone(),
        };
        write_checkpoint(
            path,
            "student",
            stage,
            config_hash,
            serde_json::to_value(layout).expect("layout serializes"),
            &[("student", &self.store)],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (manifest, mut stores) = read_checkpoint(path, "student")?;
        let layout: StudentLayout = serde_json::from_value(manifest.layout)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        let store = stores
            .pop()
            .ok_or_else(|| ModelError::Format("student checkpoint has no store".into()))?;
        let mut model = Self::new(&layout.fields, &layout.arch, 0);
        model.store = conform(&model.store, store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{PartyMatrix, Side};

    fn fields() -> Vec<FieldSpec> {
        (0..3)
            .map(|i| FieldSpec::categorical(format!("f{i}"), 5, Side::Left).with_dim(4))
            .collect()
    }

    #[test]
    fn head_widths() {
        let s = StudentModel::new(&fields(), &ArchConfig::default(), 3);
        assert_eq!(s.f_a.input_width(), 12);
        assert_eq!(s.f_b.output_width(), 64);
        assert_eq!(s.g_fed.input_width(), 96);
        assert_eq!(s.g_b.input_width(), 64);
        assert_eq!((s.r.fan_in, s.r.fan_out), (64, 64));
        assert_eq!(s.g_a.output_width(), 1);
    }

    #[test]
    fn zero_weights_predict_half() {
        let mut s = StudentModel::new(&fields(), &ArchConfig::wide(), 3);
        for v in s.store.values_mut() {
            *v = Tensor::zeros(v.shape());
        }
        let split = Split {
            row_ids: vec![0, 1],
            a: PartyMatrix::new(2, 3, vec![0, 1, 2, 3, 4, 0]),
            b: None,
            labels: vec![0, 1],
        };
        assert_eq!(s.predict(&split).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn round_trip() {
        let s = StudentModel::new(&fields(), &ArchConfig::default(), 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student");
        s.save(&path, "jpl", "x").unwrap();
        assert_eq!(StudentModel::load(&path).unwrap(), s);
    }
}
