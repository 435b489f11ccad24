use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, PartitionedDataset, Split};

/// Rows of one training step: indices into `fed` and into `loc`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPair {
    pub overlap: Vec<usize>,
    pub non: Vec<usize>,
    /// The non-overlapped rows were recycled and contain repeats.
    pub non_has_duplicates: bool,
}

fn usable(rows: &[usize], labels: &[u8]) -> bool {
    if rows.len() < 2 {
        return false;
    }
    let pos = rows.iter().filter(|&&r| labels[r] == 1).count();
    pos > 0 && pos < rows.len()
}

/// Per-epoch shuffled mini-batches over a single split. Chunks that lack
/// either label class are merged with the following chunk (the final one
/// with its predecessor).
#[derive(Clone, Debug)]
pub struct RowStream {
    labels: Vec<u8>,
    batch: usize,
    rng: ChaCha8Rng,
}

impl RowStream {
    pub fn new(split: &Split, batch: usize, seed: u64) -> Result<Self, DataError> {
        if batch < 2 {
            return Err(DataError::Batch(format!("batch size {batch} < 2")));
        }
        if !split.has_both_classes() {
            return Err(DataError::SingleClass {
                split: "training".into(),
            });
        }
        Ok(Self {
            labels: split.labels.clone(),
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.shuffle(&mut self.rng);
        let mut out: Vec<Vec<usize>> = Vec::new();
        let mut pending: Vec<usize> = Vec::new();
        for chunk in order.chunks(self.batch) {
            pending.extend_from_slice(chunk);
            if usable(&pending, &self.labels) {
                out.push(std::mem::take(&mut pending));
            }
        }
        if !pending.is_empty() {
            match out.last_mut() {
                Some(last) => last.extend(pending),
                None => out.push(pending),
            }
        }
        out
    }
}

/// Endless reshuffled draw over a split.
#[derive(Clone, Debug)]
struct CyclingStream {
    labels: Vec<u8>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl CyclingStream {
    fn new(labels: Vec<u8>, seed: u64) -> Self {
        let mut s = Self {
            order: (0..labels.len()).collect(),
            labels,
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn take(&mut self, n: usize, out: &mut Vec<usize>) {
        for _ in 0..n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
    }

    fn draw(&mut self, n: usize) -> (Vec<usize>, bool) {
        if self.order.is_empty() {
            return (Vec::new(), false);
        }
        let mut rows = Vec::with_capacity(n);
        self.take(n, &mut rows);
        while !usable(&rows, &self.labels) {
            self.take(n, &mut rows);
        }
        let mut sorted = rows.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let dup = sorted.len() != rows.len();
        (rows, dup)
    }
}

/// Paired overlapped / non-overlapped batches. One epoch exhausts the
/// overlapped split once; the non-overlapped stream recycles independently.
#[derive(Clone, Debug)]
pub struct BatchStream {
    overlap: RowStream,
    non: CyclingStream,
    non_batch: usize,
}

impl BatchStream {
    pub fn new(
        ds: &PartitionedDataset,
        n_overlap: usize,
        n_non: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if n_non < 2 {
            return Err(DataError::Batch(format!("non-overlapped batch size {n_non} < 2")));
        }
        let overlap = RowStream::new(&ds.fed, n_overlap, seed).map_err(|e| match e {
            DataError::SingleClass { .. } => DataError::SingleClass {
                split: "overlapped".into(),
            },
            other => other,
        })?;
        if !ds.loc.is_empty() && !ds.loc.has_both_classes() {
            return Err(DataError::SingleClass {
                split: "non-overlapped".into(),
            });
        }
        Ok(Self {
            overlap,
            non: CyclingStream::new(ds.loc.labels.clone(), seed ^ 0x9e37_79b9_7f4a_7c15),
            non_batch: n_non,
        })
    }

    pub fn next_epoch(&mut self) -> Vec<BatchPair> {
        self.overlap
            .next_epoch()
            .into_iter()
            .map(|overlap| {
                let (non, non_has_duplicates) = self.non.draw(self.non_batch);
                BatchPair {
                    overlap,
                    non,
                    non_has_duplicates,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PartyMatrix;

    fn split(labels: Vec<u8>, with_b: bool) -> Split {
        let n = labels.len();
        Split {
            row_ids: (0..n).collect(),
            a: PartyMatrix::new(n, 1, vec![1; n]),
            b: with_b.then(|| PartyMatrix::new(n, 1, vec![1; n])),
            labels,
        }
    }

    fn dataset(n_fed: usize, n_loc: usize) -> PartitionedDataset {
        let lab = |n: usize| (0..n).map(|i| (i % 2) as u8).collect::<Vec<_>>();
        PartitionedDataset {
            a_fields: vec![],
            b_fields: vec![],
            fed: split(lab(n_fed), true),
            fed_val: split(vec![0, 1], true),
            loc: split(lab(n_loc), false),
            loc_val: split(vec![0, 1], false),
            test: split(vec![0, 1], true),
        }
    }

    #[test]
    fn two_batches_per_epoch() {
        let ds = dataset(10, 20);
        let mut s = BatchStream::new(&ds, 5, 4, 1).unwrap();
        let epoch = s.next_epoch();
        assert_eq!(epoch.len(), 2);
        let mut seen: Vec<usize> = epoch.iter().flat_map(|b| b.overlap.clone()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        for b in &epoch {
            assert!(usable(&b.overlap, &ds.fed.labels));
            assert!(usable(&b.non, &ds.loc.labels));
        }
    }

    #[test]
    fn oversized_non_batch_recycles() {
        let ds = dataset(10, 6);
        let mut s = BatchStream::new(&ds, 10, 9, 3).unwrap();
        let epoch = s.next_epoch();
        assert_eq!(epoch.len(), 1);
        assert_eq!(epoch[0].non.len(), 9);
        assert!(epoch[0].non_has_duplicates);
    }

    #[test]
    fn deterministic_under_seed() {
        let ds = dataset(40, 40);
        let run = |seed| {
            let mut s = BatchStream::new(&ds, 8, 8, seed).unwrap();
            (0..3).flat_map(|_| s.next_epoch()).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn single_class_rejected() {
        let mut ds = dataset(10, 10);
        ds.fed.labels = vec![1; 10];
        assert!(matches!(
            BatchStream::new(&ds, 5, 5, 0),
            Err(DataError::SingleClass { .. })
        ));
        let mut ds = dataset(10, 10);
        ds.loc.labels = vec![0; 10];
        assert!(BatchStream::new(&ds, 5, 5, 0).is_err());
        assert!(BatchStream::new(&dataset(10, 10), 1, 5, 0).is_err());
    }

    #[test]
    fn one_class_chunks_get_merged() {
        // Sorted labels guarantee some shuffled chunks of 2 are single-class.
        let s = split(vec![0, 0, 0, 0, 0, 0, 0, 1], true);
        let mut rs = RowStream::new(&s, 2, 5).unwrap();
        for _ in 0..20 {
            let epoch = rs.next_epoch();
            let total: usize = epoch.iter().map(Vec::len).sum();
            assert_eq!(total, 8);
            // Only the batch holding the lone positive is usable; it absorbs the rest.
            for b in &epoch {
                assert!(usable(b, &s.labels), "{epoch:?}");
            }
        }
    }

    #[test]
    fn empty_non_overlapped_split_yields_empty_batches() {
        let ds = dataset(10, 0);
        let mut s = BatchStream::new(&ds, 5, 5, 0).unwrap();
        assert!(s.next_epoch().iter().all(|b| b.non.is_empty()));
    }
}
