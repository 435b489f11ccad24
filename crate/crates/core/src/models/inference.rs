use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{conform, read_checkpoint, write_checkpoint};
use super::layers::{EmbeddingSet, Mlp, PartyInput};
use super::params::ParamStore;
use super::student::StudentModel;
use super::{chunked, ensemble_predict, ArchConfig, ModelError};
use crate::autodiff::Graph;
use crate::data::{FieldSpec, PartyMatrix};

/// Deployable subset of the student: `e_A`, `f_A`, `f_B`, `g_A` and `g_Fed`.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceModel {
    pub arch: ArchConfig,
    pub fields: Vec<FieldSpec>,
    pub store: ParamStore,
    emb: EmbeddingSet,
    f_a: Mlp,
    f_b: Mlp,
    g_a: Mlp,
    g_fed: Mlp,
}

#[derive(Serialize, Deserialize)]
struct InferenceLayout {
    arch: ArchConfig,
    fields: Vec<FieldSpec>,
}

impl InferenceModel {
    fn skeleton(fields: &[FieldSpec], arch: &ArchConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let emb = EmbeddingSet::new(&mut store, "student.e_a", fields, &mut rng);
        let f_a = Mlp::bottom(&mut store, "student.f_a", emb.width(), &arch.bottom_a, &mut rng);
        let f_b = Mlp::bottom(&mut store, "student.f_b", emb.width(), &arch.bottom_b, &mut rng);
        let (da, db) = (arch.h_a_width(), arch.h_b_width());
        let g_a = Mlp::head(&mut store, "student.g_a", da, &arch.top, &mut rng);
        let g_fed = Mlp::head(&mut store, "student.g_fed", da + db, &arch.top, &mut rng);
        Self {
            arch: arch.clone(),
            fields: fields.to_vec(),
            store,
            emb,
            f_a,
            f_b,
            g_a,
            g_fed,
        }
    }

    /// Copies the needed parameters out of a trained student.
    pub fn from_student(student: &StudentModel) -> Result<Self, ModelError> {
        let mut model = Self::skeleton(&student.fields, &student.arch);
        for i in 0..model.store.len() {
            let name = model.store.names()[i].clone();
            let id = student
                .store
                .find(&name)
                .ok_or_else(|| ModelError::Format(format!("student lacks {name}")))?;
            model.store.values_mut()[i] = student.store.get(id).clone();
        }
        Ok(model)
    }

    pub fn predict_rows(&self, x: &PartyMatrix, rows: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let e = self.emb.forward(&mut g, &p, PartyInput::new(x, rows))?;
        let h_a = self.f_a.forward(&mut g, &p, e)?;
        let h_b = self.f_b.forward(&mut g, &p, e)?;
        let z_a = self.g_a.forward(&mut g, &p, h_a)?;
        let cut = g.concat_cols(&[h_a, h_b])?;
        let z_fed = self.g_fed.forward(&mut g, &p, cut)?;
        Ok(g.value(z_a)
            .data()
            .iter()
            .zip(g.value(z_fed).data())
            .map(|(&a, &f)| ensemble_predict(a, f))
            .collect())
    }

    /// Ensemble probability for every row of `x`.
    pub fn predict(&self, x: &PartyMatrix) -> Result<Vec<f64>, ModelError> {
        chunked(x.n_rows(), |rows| self.predict_rows(x, rows))
    }

    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), ModelError> {
        let layout = InferenceLayout {
            arch: self.arch.clone(),
            fields: self.fields.clone(),
        };
        write_checkpoint(
            path,
            "inference",
            "export",
            config_hash,
            serde_json::to_value(layout).expect("layout serializes"),
            &[("inference", &self.store)],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (manifest, mut stores) = read_checkpoint(path, "inference")?;
        let layout: InferenceLayout = serde_json::from_value(manifest.layout)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        let store = stores
            .pop()
            .ok_or_else(|| ModelError::Format("inference checkpoint has no store".into()))?;
        let mut model = Self::skeleton(&layout.fields, &layout.arch);
        model.store = conform(&model.store, store)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Side, Split};

    #[test]
    fn export_matches_student_bitwise() {
        let fields: Vec<_> = (0..3)
            .map(|i| FieldSpec::categorical(format!("c{i}"), 7, Side::Right).with_dim(3))
            .collect();
        let s = StudentModel::new(&fields, &ArchConfig::default(), 11);
        let x = PartyMatrix::new(4, 3, vec![0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4]);
        let split = Split {
            row_ids: vec![0, 1, 2, 3],
            a: x.clone(),
            b: None,
            labels: vec![0, 1, 0, 1],
        };
        let m = InferenceModel::from_student(&s).unwrap();
        assert!(m.store.names().iter().all(|n| !n.contains("g_b") && !n.contains(".r.")));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model");
        m.save(&path, "h").unwrap();
        let back = InferenceModel::load(&path).unwrap();
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.predict(&x).unwrap()), bits(s.predict(&split).unwrap()));
    }
}
