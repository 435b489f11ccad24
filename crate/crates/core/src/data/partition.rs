use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, EncodedTable, FieldSpec, Schema, Side};

/// Share of each training split held out for early stopping.
pub const VALIDATION_FRACTION: usize = 20;

/// Field indices (into the schema) owned by each party.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyViews {
    pub active_side: Side,
    pub a_fields: Vec<usize>,
    pub b_fields: Vec<usize>,
}

impl PartyViews {
    /// Views implied by the schema's own side tags and active side.
    pub fn from_schema(schema: &Schema) -> Result<Self, DataError> {
        vertical_partition(
            schema,
            &schema.side_fields(Side::Left),
            &schema.side_fields(Side::Right),
            schema.active_side,
        )
    }
}

/// Splits the schema's fields into the active party A (the `active` side) and
/// the passive party B. The label always stays with A.
pub fn vertical_partition(
    schema: &Schema,
    left: &[String],
    right: &[String],
    active: Side,
) -> Result<PartyViews, DataError> {
    let lookup = |names: &[String]| -> Result<Vec<usize>, DataError> {
        names
            .iter()
            .map(|n| {
                if *n == schema.label {
                    return Err(DataError::Partition(format!(
                        "label `{n}` cannot be assigned to a party's feature list"
                    )));
                }
                schema
                    .fields
                    .iter()
                    .position(|f| f.name == *n)
                    .ok_or_else(|| DataError::UnknownColumn(n.clone()))
            })
            .collect()
    };
    let l = lookup(left)?;
    let r = lookup(right)?;
    let ls: HashSet<usize> = l.iter().copied().collect();
    if let Some(&dup) = r.iter().find(|i| ls.contains(i)) {
        return Err(DataError::Partition(format!(
            "field `{}` listed on both sides",
            schema.fields[dup].name
        )));
    }
    if ls.len() != l.len() || r.iter().collect::<HashSet<_>>().len() != r.len() {
        return Err(DataError::Partition("field listed twice on one side".into()));
    }
    if l.len() + r.len() != schema.fields.len() {
        let covered: HashSet<usize> = l.iter().chain(&r).copied().collect();
        let missing: Vec<&str> = (0..schema.fields.len())
            .filter(|i| !covered.contains(i))
            .map(|i| schema.fields[i].name.as_str())
            .collect();
        return Err(DataError::Partition(format!(
            "fields not assigned to any side: {missing:?}"
        )));
    }
    let (a_fields, b_fields) = match active {
        Side::Left => (l, r),
        Side::Right => (r, l),
    };
    Ok(PartyViews {
        active_side: active,
        a_fields,
        b_fields,
    })
}

/// Row-major bucket indices for one party's fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartyMatrix {
    n_rows: usize,
    n_fields: usize,
    idx: Vec<u32>,
}

impl PartyMatrix {
    pub fn new(n_rows: usize, n_fields: usize, idx: Vec<u32>) -> Self {
        assert_eq!(idx.len(), n_rows * n_fields);
        Self {
            n_rows,
            n_fields,
            idx,
        }
    }

    fn gather(table: &EncodedTable, fields: &[usize], rows: &[usize]) -> Self {
        let mut idx = Vec::with_capacity(rows.len() * fields.len());
        for &r in rows {
            idx.extend(fields.iter().map(|&f| table.columns[f][r]));
        }
        Self::new(rows.len(), fields.len(), idx)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_fields(&self) -> usize {
        self.n_fields
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.idx[r * self.n_fields..(r + 1) * self.n_fields]
    }

    /// Bucket indices of field `f` for the given rows.
    pub fn field_indices(&self, f: usize, rows: &[usize]) -> Vec<usize> {
        rows.iter()
            .map(|&r| self.idx[r * self.n_fields + f] as usize)
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let mut idx = Vec::with_capacity(rows.len() * self.n_fields);
        for &r in rows {
            idx.extend_from_slice(self.row(r));
        }
        Self::new(rows.len(), self.n_fields, idx)
    }

    fn concat(&self, other: &Self) -> Self {
        assert_eq!(self.n_fields, other.n_fields);
        let mut idx = self.idx.clone();
        idx.extend_from_slice(&other.idx);
        Self::new(self.n_rows + other.n_rows, self.n_fields, idx)
    }
}

/// A set of rows: source row ids, party-A features, optional party-B features, labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub row_ids: Vec<usize>,
    pub a: PartyMatrix,
    pub b: Option<PartyMatrix>,
    pub labels: Vec<u8>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.len()
    }

    pub fn labels_f64(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.labels[r] as f64).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Split {
        Split {
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            a: self.a.select(rows),
            b: self.b.as_ref().map(|b| b.select(rows)),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    /// Party-A view of the union of two splits; party-B columns are dropped.
    pub fn concat_a(&self, other: &Split) -> Split {
        let mut row_ids = self.row_ids.clone();
        row_ids.extend_from_slice(&other.row_ids);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Split {
            row_ids,
            a: self.a.concat(&other.a),
            b: None,
            labels,
        }
    }

    /// The same rows with party-B columns erased.
    pub fn without_b(&self) -> Split {
        Split {
            b: None,
            ..self.clone()
        }
    }

    fn build(table: &EncodedTable, views: &PartyViews, rows: &[usize], keep_b: bool) -> Split {
        Split {
            row_ids: rows.to_vec(),
            a: PartyMatrix::gather(table, &views.a_fields, rows),
            b: keep_b.then(|| PartyMatrix::gather(table, &views.b_fields, rows)),
            labels: rows.iter().map(|&r| table.labels[r]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub n_overlap: usize,
    pub n_nonoverlap: usize,
    pub n_test: usize,
}

/// Row-id membership of every split, for audit and exact reproduction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub seed: u64,
    pub views: PartyViews,
    pub fed: Vec<usize>,
    pub fed_val: Vec<usize>,
    pub loc: Vec<usize>,
    pub loc_val: Vec<usize>,
    pub test: Vec<usize>,
}

impl PartitionManifest {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DataError::Partition(e.to_string()))
    }
}

/// Overlapped (`fed`), non-overlapped (`loc`) and test rows, plus the
/// validation hold-outs carved from each training split.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedDataset {
    pub a_fields: Vec<FieldSpec>,
    pub b_fields: Vec<FieldSpec>,
    pub fed: Split,
    pub fed_val: Split,
    pub loc: Split,
    pub loc_val: Split,
    pub test: Split,
}

impl PartitionedDataset {
    pub fn from_manifest(
        table: &EncodedTable,
        manifest: &PartitionManifest,
    ) -> Result<Self, DataError> {
        let n = table.n_rows();
        let all = [
            &manifest.fed,
            &manifest.fed_val,
            &manifest.loc,
            &manifest.loc_val,
            &manifest.test,
        ];
        let mut seen = HashSet::new();
        for ids in all {
            for &r in ids {
                if r >= n {
                    return Err(DataError::Partition(format!(
                        "row {r} out of range for {n} rows"
                    )));
                }
                if !seen.insert(r) {
                    return Err(DataError::Partition(format!("row {r} appears in two splits")));
                }
            }
        }
        let views = &manifest.views;
        let specs = |fields: &[usize]| -> Vec<FieldSpec> {
            fields.iter().map(|&f| table.schema.fields[f].clone()).collect()
        };
        Ok(Self {
            a_fields: specs(&views.a_fields),
            b_fields: specs(&views.b_fields),
            fed: Split::build(table, views, &manifest.fed, true),
            fed_val: Split::build(table, views, &manifest.fed_val, true),
            loc: Split::build(table, views, &manifest.loc, false),
            loc_val: Split::build(table, views, &manifest.loc_val, false),
            test: Split::build(table, views, &manifest.test, true),
        })
    }

    /// Validation rows for single-party students: both hold-outs, party A only.
    pub fn full_space_validation(&self) -> Split {
        self.fed_val.concat_a(&self.loc_val)
    }

    /// All training rows the active party holds, party A only.
    pub fn active_training_rows(&self) -> Split {
        self.fed.concat_a(&self.loc)
    }

    /// Test rows that carry party-B columns.
    pub fn overlapped_test(&self) -> Split {
        match &self.test.b {
            Some(_) => self.test.clone(),
            None => self.test.select(&[]),
        }
    }
}

/// Shuffles rows under `seed` and assigns contiguous blocks to the overlapped,
/// non-overlapped and test splits. Party-B columns are erased from the
/// non-overlapped rows and the last 1/20 of each training block becomes its
/// validation split.
pub fn overlap_split(
    table: &EncodedTable,
    views: &PartyViews,
    sizes: SplitSizes,
    seed: u64,
) -> Result<(PartitionedDataset, PartitionManifest), DataError> {
    let SplitSizes {
        n_overlap,
        n_nonoverlap,
        n_test,
    } = sizes;
    let needed = n_overlap + n_nonoverlap + n_test;
    if needed > table.n_rows() {
        return Err(DataError::InsufficientRows {
            needed,
            available: table.n_rows(),
            n_overlap,
            n_nonoverlap,
            n_test,
        });
    }
    let mut order: Vec<usize> = (0..table.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (fed_all, rest) = order.split_at(n_overlap);
    let (loc_all, rest) = rest.split_at(n_nonoverlap);
    let test = &rest[..n_test];
    let hold_out = |block: &[usize]| {
        let n_val = block.len() / VALIDATION_FRACTION;
        let (train, val) = block.split_at(block.len() - n_val);
        (train.to_vec(), val.to_vec())
    };
    let (fed, fed_val) = hold_out(fed_all);
    let (loc, loc_val) = hold_out(loc_all);
    let manifest = PartitionManifest {
        seed,
        views: views.clone(),
        fed,
        fed_val,
        loc,
        loc_val,
        test: test.to_vec(),
    };
    let ds = PartitionedDataset::from_manifest(table, &manifest)?;
    Ok((ds, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{RawColumn, RawTable};

    fn table(n: usize) -> EncodedTable {
        let mut fields = Vec::new();
        let mut columns = Vec::new();
        for i in 0..39 {
            let side = if i < 19 { Side::Left } else { Side::Right };
            fields.push(FieldSpec::categorical(format!("f{i}"), 50, side));
            columns.push(RawColumn::Categorical(
                (0..n).map(|r| Some(format!("{}", (r * (i + 1)) % 13))).collect(),
            ));
        }
        RawTable {
            schema: Schema {
                label: "y".into(),
                active_side: Side::Left,
                fields,
            },
            columns,
            labels: (0..n).map(|r| (r % 3 == 0) as u8).collect(),
        }
        .encode()
    }

    #[test]
    fn criteo_style_split_both_orientations() {
        let t = table(10);
        let left = t.schema.side_fields(Side::Left);
        let right = t.schema.side_fields(Side::Right);
        let v = vertical_partition(&t.schema, &left, &right, Side::Left).unwrap();
        assert_eq!((v.a_fields.len(), v.b_fields.len()), (19, 20));
        let v = vertical_partition(&t.schema, &left, &right, Side::Right).unwrap();
        assert_eq!((v.a_fields.len(), v.b_fields.len()), (20, 19));
    }

    #[test]
    fn partition_rejections() {
        let t = table(10);
        let mut left = t.schema.side_fields(Side::Left);
        let right = t.schema.side_fields(Side::Right);
        let mut with_label = left.clone();
        with_label.push("y".into());
        assert!(vertical_partition(&t.schema, &with_label, &right, Side::Left).is_err());
        left.push(right[0].clone());
        assert!(vertical_partition(&t.schema, &left, &right, Side::Left).is_err());
        let short = &right[1..];
        let l = t.schema.side_fields(Side::Left);
        assert!(vertical_partition(&t.schema, &l, short, Side::Left).is_err());
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let t = table(100);
        let views = PartyViews::from_schema(&t.schema).unwrap();
        let sizes = SplitSizes {
            n_overlap: 40,
            n_nonoverlap: 40,
            n_test: 20,
        };
        let (ds, m) = overlap_split(&t, &views, sizes, 7).unwrap();
        assert_eq!(ds.fed.len() + ds.fed_val.len(), 40);
        assert_eq!(ds.fed_val.len(), 2);
        assert_eq!(ds.loc.len() + ds.loc_val.len(), 40);
        assert_eq!(ds.test.len(), 20);
        assert!(ds.loc.b.is_none() && ds.loc_val.b.is_none());
        assert!(ds.fed.b.is_some());
        let mut all: Vec<usize> = [&m.fed, &m.fed_val, &m.loc, &m.loc_val, &m.test]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);

        let (_, m2) = overlap_split(&t, &views, sizes, 7).unwrap();
        assert_eq!(m, m2);
        let (_, m3) = overlap_split(&t, &views, sizes, 8).unwrap();
        assert_ne!(m.fed, m3.fed);
    }

    #[test]
    fn insufficient_rows() {
        let t = table(100);
        let views = PartyViews::from_schema(&t.schema).unwrap();
        let sizes = SplitSizes {
            n_overlap: 60,
            n_nonoverlap: 60,
            n_test: 0,
        };
        let err = overlap_split(&t, &views, sizes, 1).unwrap_err();
        assert!(matches!(
            err,
            DataError::InsufficientRows {
                needed: 120,
                available: 100,
                ..
            }
        ));
    }

    #[test]
    fn manifest_round_trip_and_overlap_check() {
        let t = table(60);
        let views = PartyViews::from_schema(&t.schema).unwrap();
        let sizes = SplitSizes {
            n_overlap: 20,
            n_nonoverlap: 20,
            n_test: 20,
        };
        let (ds, m) = overlap_split(&t, &views, sizes, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("partition.json");
        m.save(&p).unwrap();
        let back = PartitionManifest::load(&p).unwrap();
        assert_eq!(PartitionedDataset::from_manifest(&t, &back).unwrap(), ds);
        let mut bad = back.clone();
        bad.test.push(bad.fed[0]);
        assert!(PartitionedDataset::from_manifest(&t, &bad).is_err());
    }
}
