use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{init_affine, init_embedding, Bound, ParamId, ParamStore};
use super::ModelError;
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{FieldSpec, PartyMatrix};

/// Rows of one party's feature matrix fed to a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PartyInput<'a> {
    pub matrix: &'a PartyMatrix,
    pub rows: &'a [usize],
}

impl<'a> PartyInput<'a> {
    pub fn new(matrix: &'a PartyMatrix, rows: &'a [usize]) -> Self {
        Self { matrix, rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One hash-embedding table per field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    tables: Vec<ParamId>,
    buckets: Vec<usize>,
    dims: Vec<usize>,
}

impl EmbeddingSet {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        fields: &[FieldSpec],
        rng: &mut impl Rng,
    ) -> Self {
        let tables = fields
            .iter()
            .map(|f| store.add(format!("{prefix}.{}", f.name), init_embedding(rng, f.buckets, f.dim)))
            .collect();
        Self {
            tables,
            buckets: fields.iter().map(|f| f.buckets).collect(),
            dims: fields.iter().map(|f| f.dim).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn tables(&self) -> &[ParamId] {
        &self.tables
    }

    /// Wide vector of all field embeddings in schema order.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: PartyInput) -> Result<Var, ModelError> {
        if x.matrix.n_fields() != self.tables.len() {
            return Err(ModelError::Input(format!(
                "{} fields supplied, embedding expects {}",
                x.matrix.n_fields(),
                self.tables.len()
            )));
        }
        let mut parts = Vec::with_capacity(self.tables.len());
        for (f, (&table, &b)) in self.tables.iter().zip(&self.buckets).enumerate() {
            let idx = x.matrix.field_indices(f, x.rows);
            if let Some(&bad) = idx.iter().find(|&&i| i >= b) {
                return Err(ModelError::Input(format!(
                    "bucket {bad} out of range for field {f} with {b} buckets"
                )));
            }
            parts.push(g.gather_rows(p.var(table), &idx)?);
        }
        Ok(g.concat_cols(&parts)?)
    }

    /// Squared L2 norm of every table.
    pub fn l2_sq(&self, g: &mut Graph, p: &Bound) -> Result<Var, ModelError> {
        let mut total: Option<Var> = None;
        for &t in &self.tables {
            let s = g.frobenius_sq(p.var(t))?;
            total = Some(match total {
                Some(acc) => g.add(acc, s)?,
                None => s,
            });
        }
        match total {
            Some(v) => Ok(v),
            None => Ok(g.constant(Tensor::scalar(0.0))),
        }
    }

    /// Sum of plain L2 norms of every table.
    pub fn l2(&self, g: &mut Graph, p: &Bound) -> Result<Var, ModelError> {
        let mut total = g.constant(Tensor::scalar(0.0));
        for &t in &self.tables {
            let s = g.frobenius_norm(p.var(t))?;
            total = g.add(total, s)?;
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init_affine(rng, fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[1, fan_out]));
        Self {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let xw = g.matmul(x, p.var(self.w))?;
        Ok(g.add_row(xw, p.var(self.b))?)
    }
}

/// Affine layers with ReLU between them. Bottoms apply ReLU after the last
/// layer too; classifier heads end in a single raw logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Linear>,
    relu_last: bool,
}

impl Mlp {
    /// Feature extractor: `input -> widths[0] -> ... -> widths[n-1]`, all ReLU.
    pub fn bottom(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        Self::build(store, name, input, widths, true, rng)
    }

    /// Classifier: hidden ReLU layers then one linear logit.
    pub fn head(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: &[usize],
        rng: &mut impl Rng,
    ) -> Self {
        let mut widths = hidden.to_vec();
        widths.push(1);
        Self::build(store, name, input, &widths, false, rng)
    }

    fn build(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        widths: &[usize],
        relu_last: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), fan_in, w, rng));
            fan_in = w;
        }
        Self { layers, relu_last }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.fan_in)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var, ModelError> {
        let width = g.value(x).cols();
        if width != self.input_width() {
            return Err(ModelError::Input(format!(
                "input width {width} does not match layer width {}",
                self.input_width()
            )));
        }
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, p, h)?;
            if i + 1 < n || self.relu_last {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}
