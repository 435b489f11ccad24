//! Embedding tables, MLP blocks, the split-network teacher, the distilled
//! student with its three heads, the local baseline and the exported
//! inference model.

pub mod checkpoint;
mod inference;
mod layers;
mod local;
mod params;
mod student;
mod teacher;

pub use inference::InferenceModel;
pub use layers::{EmbeddingSet, Linear, Mlp, PartyInput};
pub use local::LocalModel;
pub use params::{Bound, ParamId, ParamStore};
pub use student::{StudentModel, StudentOutputs};
pub use teacher::{ActiveModel, BoundTeacher, PassiveModel, TeacherModel, TeacherOutputs};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{sigmoid_scalar, AutodiffError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    Format(String),
}

/// Hidden widths of every block. Defaults follow the public-dataset column
/// of the reference architecture table (bottom-A 32->32, bottom-B 128->64,
/// top 64->64).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub bottom_a: Vec<usize>,
    pub bottom_b: Vec<usize>,
    pub top: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            bottom_a: vec![32, 32],
            bottom_b: vec![128, 64],
            top: vec![64, 64],
        }
    }
}

impl ArchConfig {
    /// The advertising-dataset column: every block 64->64.
    pub fn wide() -> Self {
        Self {
            bottom_a: vec![64, 64],
            bottom_b: vec![64, 64],
            top: vec![64, 64],
        }
    }

    pub fn h_a_width(&self) -> usize {
        *self.bottom_a.last().expect("bottom_a has layers")
    }

    pub fn h_b_width(&self) -> usize {
        *self.bottom_b.last().expect("bottom_b has layers")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, w) in [("bottom_a", &self.bottom_a), ("bottom_b", &self.bottom_b)] {
            if w.is_empty() || w.contains(&0) {
                return Err(ModelError::Input(format!("{name} widths {w:?} invalid")));
            }
        }
        if self.top.contains(&0) {
            return Err(ModelError::Input(format!("top widths {:?} invalid", self.top)));
        }
        Ok(())
    }
}

/// Final prediction from the A head and the federated head: the logistic of
/// their averaged logits.
pub fn ensemble_predict(z_a: f64, z_fed: f64) -> f64 {
    sigmoid_scalar((z_a + z_fed) / 2.0)
}

/// Rows per forward pass during evaluation.
pub(crate) const EVAL_CHUNK: usize = 2048;

pub(crate) fn chunked<F>(n: usize, mut f: F) -> Result<Vec<f64>, ModelError>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>, ModelError>,
{
    let rows: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for chunk in rows.chunks(EVAL_CHUNK) {
        out.extend(f(chunk)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensemble_examples() {
        assert_eq!(ensemble_predict(0.0, 0.0), 0.5);
        let oracle = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((ensemble_predict(2.0, 0.0) - oracle).abs() < 1e-15);
        assert!((ensemble_predict(2.0, 0.0) - 0.7311).abs() < 1e-4);
        assert_eq!(ensemble_predict(0.3, -1.7), ensemble_predict(-1.7, 0.3));
        assert!(ensemble_predict(0.1, 0.0) > ensemble_predict(0.0, 0.0));
        assert!(ensemble_predict(0.0, 0.1) > ensemble_predict(0.0, 0.0));
    }
}
