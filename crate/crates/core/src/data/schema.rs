use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

/// Default embedding width per field.
pub const DEFAULT_EMBED_DIM: usize = 8;
/// Default bucket count (quantile bins + reserved bucket) for numeric fields.
pub const DEFAULT_NUMERIC_BUCKETS: usize = 65;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Numeric,
}

/// Natural column group a field belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Which side plays the active (label-owning) party.
pub type ActiveSide = Side;

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

impl std::str::FromStr for Side {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(format!("expected left|right, got `{other}`")),
        }
    }
}

fn default_dim() -> usize {
    DEFAULT_EMBED_DIM
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    /// Embedding rows, including the reserved bucket 0.
    pub buckets: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub side: Side,
}

impl FieldSpec {
    pub fn categorical(name: impl Into<String>, buckets: usize, side: Side) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Categorical,
            buckets,
            dim: DEFAULT_EMBED_DIM,
            side,
        }
    }

    pub fn numeric(name: impl Into<String>, side: Side) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Numeric,
            buckets: DEFAULT_NUMERIC_BUCKETS,
            dim: DEFAULT_EMBED_DIM,
            side,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self
    }

    pub fn with_buckets(mut self, buckets: usize) -> Self {
        self.buckets = buckets;
        self
    }
}

/// Column layout of a labeled table plus the party assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label: String,
    pub active_side: Side,
    pub fields: Vec<FieldSpec>,
}

impl Schema {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = HashSet::new();
        for f in &self.fields {
            if f.name == self.label {
                return Err(DataError::Schema(format!(
                    "label `{}` listed as a feature field",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate field `{}`", f.name)));
            }
            if f.buckets < 2 {
                return Err(DataError::Schema(format!(
                    "field `{}` needs at least 2 buckets, has {}",
                    f.name, f.buckets
                )));
            }
            if f.dim == 0 {
                return Err(DataError::Schema(format!("field `{}` has zero dim", f.name)));
            }
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn side_fields(&self, side: Side) -> Vec<String> {
        self.fields
            .iter()
            .filter(|f| f.side == side)
            .map(|f| f.name.clone())
            .collect()
    }

    pub fn from_toml_str(s: &str) -> Result<Self, DataError> {
        let schema: Schema = toml::from_str(s).map_err(|e| DataError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes")
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_toml_string()).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let schema = Schema {
            label: "click".into(),
            active_side: Side::Left,
            fields: vec![
                FieldSpec::categorical("site", 100, Side::Left),
                FieldSpec::numeric("age", Side::Right).with_dim(4),
            ],
        };
        let text = schema.to_toml_string();
        assert_eq!(Schema::from_toml_str(&text).unwrap(), schema);
    }

    #[test]
    fn rejects_bad_schemas() {
        let mut s = Schema {
            label: "y".into(),
            active_side: Side::Left,
            fields: vec![FieldSpec::categorical("a", 1, Side::Left)],
        };
        assert!(s.validate().is_err());
        s.fields[0].buckets = 10;
        assert!(s.validate().is_ok());
        s.fields.push(FieldSpec::categorical("y", 10, Side::Right));
        assert!(s.validate().is_err());
    }
}
