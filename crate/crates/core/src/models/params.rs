use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors owned by one model (or one party).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate param {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn param_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Places every parameter on the graph as a leaf variable.
    ///
    /// With `frozen`, downstream computation sees a stop-gradient copy, so the
    /// leaves always receive exactly-zero gradients.
    pub fn bind(&self, g: &mut Graph, frozen: bool) -> Bound {
        let leaves: Vec<Var> = self.values.iter().map(|t| g.variable(t.clone())).collect();
        let used = if frozen {
            leaves.iter().map(|&v| g.stop_gradient(v)).collect()
        } else {
            leaves.clone()
        };
        Bound { leaves, used }
    }
}

/// A [`ParamStore`] placed on a graph.
#[derive(Clone, Debug)]
pub struct Bound {
    leaves: Vec<Var>,
    used: Vec<Var>,
}

impl Bound {
    /// Wraps caller-created leaves, one per store entry in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self {
            leaves: vars.clone(),
            used: vars,
        }
    }

    /// Node to use in forward computation.
    pub fn var(&self, id: ParamId) -> Var {
        self.used[id.0]
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    /// Gradients for every leaf, in store order (zeros where unreached).
    pub fn grads(&self, g: &Graph, grads: &Gradients) -> Vec<Tensor> {
        self.leaves.iter().map(|&v| grads.get_or_zeros(g, v)).collect()
    }
}

/// Truncated normal (cut at two standard deviations) with std `1/sqrt(fan_in)`.
pub(crate) fn init_affine(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let std = 1.0 / (fan_in as f64).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = (0..fan_in * fan_out)
        .map(|_| loop {
            let z: f64 = normal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("affine shape")
}

pub(crate) fn init_embedding(rng: &mut impl Rng, rows: usize, dim: usize) -> Tensor {
    let normal = Normal::new(0.0, 0.01).expect("embedding normal");
    let data = (0..rows * dim).map(|_| normal.sample(rng)).collect();
    Tensor::matrix(rows, dim, data).expect("embedding shape")
}
