use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{conform, read_checkpoint, write_checkpoint};
use super::layers::{EmbeddingSet, Mlp, PartyInput};
use super::params::{Bound, ParamStore};
use super::{chunked, ArchConfig, ModelError};
use crate::autodiff::{sigmoid_scalar, Graph, Var};
use crate::data::{FieldSpec, Split};

/// Label-owning side of the split network: `e_A`, `f_A` and the top model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveModel {
    #[serde(skip)]
    pub store: ParamStore,
    pub emb: EmbeddingSet,
    pub bottom: Mlp,
    pub top: Mlp,
}

impl ActiveModel {
    pub fn new(fields: &[FieldSpec], arch: &ArchConfig, h_b_width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = EmbeddingSet::new(&mut store, "teacher.e_a", fields, &mut rng);
        let bottom = Mlp::bottom(&mut store, "teacher.f_a", emb.width(), &arch.bottom_a, &mut rng);
        let top = Mlp::head(
            &mut store,
            "teacher.g_fed",
            bottom.output_width() + h_b_width,
            &arch.top,
            &mut rng,
        );
        Self {
            store,
            emb,
            bottom,
            top,
        }
    }

    pub fn hidden(&self, g: &mut Graph, p: &Bound, x_a: PartyInput) -> Result<Var, ModelError> {
        let e = self.emb.forward(g, p, x_a)?;
        self.bottom.forward(g, p, e)
    }

    /// Top model over the cut layer `[h_a, h_b]`.
    pub fn top_logit(&self, g: &mut Graph, p: &Bound, h_a: Var, h_b: Var) -> Result<Var, ModelError> {
        let cut = g.concat_cols(&[h_a, h_b])?;
        self.top.forward(g, p, cut)
    }
}

/// Feature-only side of the split network: `e_B` and `f_B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassiveModel {
    #[serde(skip)]
    pub store: ParamStore,
    pub emb: EmbeddingSet,
    pub bottom: Mlp,
}

impl PassiveModel {
    pub fn new(fields: &[FieldSpec], arch: &ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = EmbeddingSet::new(&mut store, "teacher.e_b", fields, &mut rng);
        let bottom = Mlp::bottom(&mut store, "teacher.f_b", emb.width(), &arch.bottom_b, &mut rng);
        Self { store, emb, bottom }
    }

    pub fn hidden(&self, g: &mut Graph, p: &Bound, x_b: PartyInput) -> Result<Var, ModelError> {
        let e = self.emb.forward(g, p, x_b)?;
        self.bottom.forward(g, p, e)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TeacherOutputs {
    pub h_a: Var,
    pub h_b: Var,
    pub logit: Var,
}

/// Both parties' parameters placed on one graph.
#[derive(Clone, Debug)]
pub struct BoundTeacher {
    pub active: Bound,
    pub passive: Bound,
}

/// Split-network teacher `g([f_A(e_A), f_B(e_B)])`. Once frozen it only ever
/// binds as stop-gradient constants.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub arch: ArchConfig,
    pub a_fields: Vec<FieldSpec>,
    pub b_fields: Vec<FieldSpec>,
    pub active: ActiveModel,
    pub passive: PassiveModel,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct TeacherLayout {
    arch: ArchConfig,
    a_fields: Vec<FieldSpec>,
    b_fields: Vec<FieldSpec>,
    frozen: bool,
}

impl TeacherModel {
    pub fn new(a_fields: &[FieldSpec], b_fields: &[FieldSpec], arch: &ArchConfig, seed: u64) -> Self {
        let passive = PassiveModel::new(b_fields, arch, seed.wrapping_mul(2).wrapping_add(1));
        let active = ActiveModel::new(a_fields, arch, arch.h_b_width(), seed.wrapping_mul(2));
        Self {
            arch: arch.clone(),
            a_fields: a_fields.to_vec(),
            b_fields: b_fields.to_vec(),
            active,
            passive,
            frozen: false,
        }
    }

    pub fn from_parties(
        arch: &ArchConfig,
        a_fields: &[FieldSpec],
        b_fields: &[FieldSpec],
        active: ActiveModel,
        passive: PassiveModel,
    ) -> Self {
        Self {
            arch: arch.clone(),
            a_fields: a_fields.to_vec(),
            b_fields: b_fields.to_vec(),
            active,
            passive,
            frozen: false,
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn bind(&self, g: &mut Graph) -> BoundTeacher {
        BoundTeacher {
            active: self.active.store.bind(g, self.frozen),
            passive: self.passive.store.bind(g, self.frozen),
        }
    }

    /// Checksum over both parties' parameters.
    pub fn checksum(&self) -> String {
        format!("{}:{}", self.active.store.checksum(), self.passive.store.checksum())
    }

    pub fn h_a(&self, g: &mut Graph, p: &BoundTeacher, x_a: PartyInput) -> Result<Var, ModelError> {
        self.active.hidden(g, &p.active, x_a)
    }

    pub fn h_b(&self, g: &mut Graph, p: &BoundTeacher, x_b: PartyInput) -> Result<Var, ModelError> {
        self.passive.hidden(g, &p.passive, x_b)
    }

    pub fn top_logit(&self, g: &mut Graph, p: &BoundTeacher, h_a: Var, h_b: Var) -> Result<Var, ModelError> {
        self.active.top_logit(g, &p.active, h_a, h_b)
    }

    /// Full federated forward. Rows without party-B features are rejected.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &BoundTeacher,
        x_a: PartyInput,
        x_b: Option<PartyInput>,
    ) -> Result<TeacherOutputs, ModelError> {
        let x_b = x_b.ok_or_else(|| {
            ModelError::Input("teacher needs party-B features; row is not overlapped".into())
        })?;
        if x_a.len() != x_b.len() {
            return Err(ModelError::Input(format!(
                "{} party-A rows but {} party-B rows",
                x_a.len(),
                x_b.len()
            )));
        }
        let h_a = self.h_a(g, p, x_a)?;
        let h_b = self.h_b(g, p, x_b)?;
        let logit = self.top_logit(g, p, h_a, h_b)?;
        Ok(TeacherOutputs { h_a, h_b, logit })
    }

    /// Raw logits for every row of a split that carries party-B columns.
    pub fn logits(&self, split: &Split) -> Result<Vec<f64>, ModelError> {
        let b = split
            .b
            .as_ref()
            .ok_or_else(|| ModelError::Input("teacher needs party-B features".into()))?;
        chunked(split.len(), |rows| {
            let mut g = Graph::new();
            let p = self.bind(&mut g);
            let out = self.forward(
                &mut g,
                &p,
                PartyInput::new(&split.a, rows),
                Some(PartyInput::new(b, rows)),
            )?;
            Ok(g.value(out.logit).data().to_vec())
        })
    }

    pub fn predict(&self, split: &Split) -> Result<Vec<f64>, ModelError> {
        Ok(self.logits(split)?.into_iter().map(sigmoid_scalar).collect())
    }

    pub fn save(&self, path: &Path, stage: &str, config_hash: &str) -> Result<(), ModelError> {
        let layout = TeacherLayout {
            arch: self.arch.clone(),
            a_fields: self.a_fields.clone(),
            b_fields: self.b_fields.clone(),
            frozen: self.frozen,
        };
        write_checkpoint(
            path,
            "teacher",
            stage,
            config_hash,
            serde_json::to_value(layout).expect("layout serializes"),
            &[("active", &self.active.store), ("passive", &self.passive.store)],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (manifest, mut stores) = read_checkpoint(path, "teacher")?;
        let layout: TeacherLayout = serde_json::from_value(manifest.layout)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        if stores.len() != 2 {
            return Err(ModelError::Format("teacher checkpoint needs two stores".into()));
        }
        let mut model = Self::new(&layout.a_fields, &layout.b_fields, &layout.arch, 0);
        let passive = stores.pop().expect("two stores");
        let active = stores.pop().expect("two stores");
        model.active.store = conform(&model.active.store, active)?;
        model.passive.store = conform(&model.passive.store, passive)?;
        model.frozen = layout.frozen;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::{PartyMatrix, Side};

    fn fields(prefix: &str, n: usize) -> Vec<FieldSpec> {
        (0..n)
            .map(|i| FieldSpec::categorical(format!("{prefix}{i}"), 6, Side::Left).with_dim(4))
            .collect()
    }

    #[test]
    fn zero_weights_give_half() {
        let mut t = TeacherModel::new(&fields("a", 2), &fields("b", 3), &ArchConfig::wide(), 1);
        for v in t.active.store.values_mut().iter_mut().chain(t.passive.store.values_mut()) {
            *v = Tensor::zeros(v.shape());
        }
        let xa = PartyMatrix::new(2, 2, vec![1, 2, 3, 4]);
        let xb = PartyMatrix::new(2, 3, vec![1, 2, 3, 4, 5, 0]);
        let split = Split {
            row_ids: vec![0, 1],
            a: xa,
            b: Some(xb),
            labels: vec![0, 1],
        };
        assert_eq!(t.predict(&split).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn cut_layer_width_and_missing_b() {
        let t = TeacherModel::new(&fields("a", 2), &fields("b", 3), &ArchConfig::wide(), 1);
        assert_eq!(t.active.top.input_width(), 64 + 64);
        let t2 = TeacherModel::new(&fields("a", 2), &fields("b", 3), &ArchConfig::default(), 1);
        assert_eq!(t2.active.top.input_width(), 32 + 64);
        let xa = PartyMatrix::new(1, 2, vec![1, 1]);
        let mut g = Graph::new();
        let p = t.bind(&mut g);
        let err = t.forward(&mut g, &p, PartyInput::new(&xa, &[0]), None);
        assert!(matches!(err, Err(ModelError::Input(_))));
    }

    #[test]
    fn pure_and_round_trip() {
        let mut t = TeacherModel::new(&fields("a", 2), &fields("b", 2), &ArchConfig::default(), 9);
        t.freeze();
        let split = Split {
            row_ids: vec![0, 1, 2],
            a: PartyMatrix::new(3, 2, vec![1, 2, 3, 4, 5, 0]),
            b: Some(PartyMatrix::new(3, 2, vec![2, 2, 1, 0, 5, 5])),
            labels: vec![0, 1, 1],
        };
        let p1 = t.predict(&split).unwrap();
        assert_eq!(p1, t.predict(&split).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher");
        t.save(&path, "federated", "abc").unwrap();
        let back = TeacherModel::load(&path).unwrap();
        assert_eq!(back, t);
        assert!(back.is_frozen());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.predict(&split).unwrap()), bits(&p1));
    }
}
