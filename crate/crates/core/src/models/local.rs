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

/// Plain party-A classifier `g_A(f_A(e_A(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalModel {
    pub arch: ArchConfig,
    pub fields: Vec<FieldSpec>,
    pub store: ParamStore,
    pub emb: EmbeddingSet,
    pub f_a: Mlp,
    pub g_a: Mlp,
}

#[derive(Serialize, Deserialize)]
struct LocalLayout {
    arch: ArchConfig,
    fields: Vec<FieldSpec>,
}

impl LocalModel {
    pub fn new(fields: &[FieldSpec], arch: &ArchConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = EmbeddingSet::new(&mut store, "local.e_a", fields, &mut rng);
        let f_a = Mlp::bottom(&mut store, "local.f_a", emb.width(), &arch.bottom_a, &mut rng);
        let g_a = Mlp::head(&mut store, "local.g_a", arch.h_a_width(), &arch.top, &mut rng);
        Self {
            arch: arch.clone(),
            fields: fields.to_vec(),
            store,
            emb,
            f_a,
            g_a,
        }
    }

    /// Binds the parameters; `frozen` is used when the model acts as a teacher.
    pub fn bind(&self, g: &mut Graph, frozen: bool) -> Bound {
        self.store.bind(g, frozen)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: PartyInput) -> Result<Var, ModelError> {
        let e = self.emb.forward(g, p, x)?;
        let h = self.f_a.forward(g, p, e)?;
        self.g_a.forward(g, p, h)
    }

    pub fn l2_sq(&self, g: &mut Graph, p: &Bound) -> Result<Var, ModelError> {
        self.emb.l2_sq(g, p)
    }

    pub fn l2(&self, g: &mut Graph, p: &Bound) -> Result<Var, ModelError> {
        self.emb.l2(g, p)
    }

    pub fn logits(&self, split: &Split) -> Result<Vec<f64>, ModelError> {
        chunked(split.len(), |rows| {
            let mut g = Graph::new();
            let p = self.bind(&mut g, false);
            let z = self.forward(&mut g, &p, PartyInput::new(&split.a, rows))?;
            Ok(g.value(z).data().to_vec())
        })
    }

    pub fn predict(&self, split: &Split) -> Result<Vec<f64>, ModelError> {
        Ok(self.logits(split)?.into_iter().map(sigmoid_scalar).collect())
    }

    pub fn save(&self, path: &Path, stage: &str, config_hash: &str) -> Result<(), ModelError> {
        let layout = LocalLayout {
            arch: self.arch.clone(),
            fields: self.fields.clone(),
        };
        write_checkpoint(
            path,
            "local",
            stage,
            config_hash,
            serde_json::to_value(layout).expect("layout serializes"),
            &[("local", &self.store)],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let (manifest, mut stores) = read_checkpoint(path, "local")?;
        let layout: LocalLayout = serde_json::from_value(manifest.layout)
            .map_err(|e| ModelError::Format(e.to_string()))?;
        let store = stores
            .pop()
            .ok_or_else(|| ModelError::Format("local checkpoint has no store".into()))?;
        let mut model = Self::new(&layout.fields, &layout.arch, 0);
        model.store = conform(&model.store, store)?;
        Ok(model)
    }
}
