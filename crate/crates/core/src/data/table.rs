use std::collections::HashMap;
use std::path::Path;

use super::{hash_field, DataError, FieldKind, Schema};

#[derive(Clone, Debug, PartialEq)]
pub enum RawColumn {
    Categorical(Vec<Option<String>>),
    Numeric(Vec<Option<f64>>),
}

impl RawColumn {
    pub fn len(&self) -> usize {
        match self {
            RawColumn::Categorical(v) => v.len(),
            RawColumn::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn render(&self, row: usize) -> String {
        match self {
            RawColumn::Categorical(v) => v[row].clone().unwrap_or_default(),
            RawColumn::Numeric(v) => v[row].map(|x| format!("{x}")).unwrap_or_default(),
        }
    }
}

/// Typed columns in schema field order, plus binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    pub columns: Vec<RawColumn>,
    pub labels: Vec<u8>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    /// Writes a comma-separated file with a header row: fields in schema order, label last.
    pub fn write_csv(&self, path: &Path) -> Result<(), DataError> {
        let io = |e: csv::Error| DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header: Vec<&str> = self.schema.fields.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.label);
        w.write_record(&header).map_err(io)?;
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = self.columns.iter().map(|c| c.render(r)).collect();
            rec.push(self.labels[r].to_string());
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Maps every field to embedding bucket indices.
    ///
    /// Categorical values are hashed; numeric values are assigned to quantile
    /// bins computed over this table. Missing values map to bucket 0 either way.
    pub fn encode(&self) -> EncodedTable {
        let columns = self
            .schema
            .fields
            .iter()
            .zip(&self.columns)
            .map(|(spec, col)| match col {
                RawColumn::Categorical(vals) => vals
                    .iter()
                    .map(|v| hash_field(&spec.name, v.as_deref(), spec.buckets))
                    .collect(),
                RawColumn::Numeric(vals) => quantile_bucketize(vals, spec.buckets - 1),
            })
            .collect();
        EncodedTable {
            schema: self.schema.clone(),
            columns,
            labels: self.labels.clone(),
        }
    }
}

fn quantile_bucketize(vals: &[Option<f64>], bins: usize) -> Vec<u32> {
    let mut sorted: Vec<f64> = vals.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let boundaries: Vec<f64> = if sorted.is_empty() {
        Vec::new()
    } else {
        (1..bins).map(|k| sorted[k * sorted.len() / bins]).collect()
    };
    vals.iter()
        .map(|v| match v {
            None => 0,
            Some(x) => 1 + boundaries.partition_point(|b| b <= x) as u32,
        })
        .collect()
}

/// Bucket indices per field (column-major) and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTable {
    pub schema: Schema,
    pub columns: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
}

impl EncodedTable {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.schema.fields.iter().position(|f| f.name == name)
    }
}

/// Reads a delimiter-separated file whose header names exactly the schema's
/// fields and label column. The delimiter is inferred from the header (comma,
/// tab or semicolon).
pub fn load_table(path: &Path, schema: &Schema) -> Result<RawTable, DataError> {
    schema.validate()?;
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_table(&text, schema)
}

fn parse_table(text: &str, schema: &Schema) -> Result<RawTable, DataError> {
    let first = text.lines().next().unwrap_or("");
    let delimiter = [b',', b'\t', b';']
        .into_iter()
        .max_by_key(|d| first.bytes().filter(|b| b == d).count())
        .unwrap_or(b',');
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();

    let mut position: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let h = h.trim();
        if h != schema.label && schema.field(h).is_none() {
            return Err(DataError::UnknownColumn(h.to_string()));
        }
        position.insert(h, i);
    }
    let label_pos = *position
        .get(schema.label.as_str())
        .ok_or_else(|| DataError::MissingColumn(schema.label.clone()))?;
    let field_pos: Vec<usize> = schema
        .fields
        .iter()
        .map(|f| {
            position
                .get(f.name.as_str())
                .copied()
                .ok_or_else(|| DataError::MissingColumn(f.name.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut columns: Vec<RawColumn> = schema
        .fields
        .iter()
        .map(|f| match f.kind {
            FieldKind::Categorical => RawColumn::Categorical(Vec::new()),
            FieldKind::Numeric => RawColumn::Numeric(Vec::new()),
        })
        .collect();
    let mut labels = Vec::new();

    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(DataError::Parse {
                line,
                msg: format!("expected {} columns, found {}", headers.len(), rec.len()),
            });
        }
        let raw_label = rec[label_pos].trim();
        let label = match raw_label {
            "0" | "0.0" => 0,
            "1" | "1.0" => 1,
            other => {
                return Err(DataError::Parse {
                    line,
                    msg: format!("label `{other}` is not 0 or 1"),
                })
            }
        };
        labels.push(label);
        for ((col, &pos), spec) in columns.iter_mut().zip(&field_pos).zip(&schema.fields) {
            let raw = rec[pos].trim();
            match col {
                RawColumn::Categorical(v) => {
                    v.push((!raw.is_empty()).then(|| raw.to_string()));
                }
                RawColumn::Numeric(v) => {
                    if raw.is_empty() {
                        v.push(None);
                    } else {
                        let x: f64 = raw.parse().map_err(|_| DataError::Parse {
                            line,
                            msg: format!("field `{}`: `{raw}` is not numeric", spec.name),
                        })?;
                        v.push(x.is_finite().then_some(x));
                    }
                }
            }
        }
    }
    Ok(RawTable {
        schema: schema.clone(),
        columns,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FieldSpec, Side};

    fn schema() -> Schema {
        Schema {
            label: "y".into(),
            active_side: Side::Left,
            fields: vec![
                FieldSpec::categorical("c", 16, Side::Left),
                FieldSpec::numeric("n", Side::Right).with_buckets(5),
            ],
        }
    }

    #[test]
    fn well_formed_file() {
        let t = parse_table("c,n,y\na,1.5,1\nb,2.5,0\n,3,1\n", &schema()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.labels, vec![1, 0, 1]);
        let enc = t.encode();
        assert_eq!(enc.columns[0][2], 0, "missing categorical -> reserved bucket");
        assert!(enc.columns[0][..2].iter().all(|&i| (1..16).contains(&i)));
    }

    #[test]
    fn extra_column_is_named() {
        let err = parse_table("c,n,z,y\na,1,2,1\n", &schema()).unwrap_err();
        assert!(matches!(err, DataError::UnknownColumn(ref c) if c == "z"), "{err}");
    }

    #[test]
    fn bad_row_reports_line() {
        let err = parse_table("c,n,y\na,1,1\nb,oops,0\n", &schema()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 3, .. }), "{err}");
        let err = parse_table("c,n,y\na,1,7\n", &schema()).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_label_column() {
        let err = parse_table("c,n\na,1\n", &schema()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "y"));
    }

    #[test]
    fn tab_delimited() {
        let t = parse_table("y\tn\tc\n1\t0.5\tq\n", &schema()).unwrap();
        assert_eq!(t.columns[0], RawColumn::Categorical(vec![Some("q".into())]));
        assert_eq!(t.columns[1], RawColumn::Numeric(vec![Some(0.5)]));
    }

    #[test]
    fn quantile_bins_are_ordered_and_cover_range() {
        let vals: Vec<Option<f64>> = (0..100).map(|i| Some(i as f64)).chain([None]).collect();
        let idx = quantile_bucketize(&vals, 4);
        assert_eq!(idx[100], 0);
        assert!(idx[..100].windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(idx[0], 1);
        assert_eq!(idx[99], 4);
        for b in 1..=4 {
            assert_eq!(idx.iter().filter(|&&i| i == b).count(), 25);
        }
    }
}
