//! Deterministic epoch iteration and training-set subsampling.

use super::augment::{augment, AugmentationPolicy};
use super::dataset::{IndexedDataset, UnlabeledView};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

const TAG_PERMUTATION: u64 = 0x9E;
const TAG_AUGMENT: u64 = 0xA6;
const TAG_SUBSAMPLE: u64 = 0x55;

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    /// Index targets: the dataset rows the features came from.
    pub targets: Vec<usize>,
}

/// Stream used to augment sample `index` in `epoch`. Independent of batch size
/// and of the sample's position in the epoch permutation.
pub fn sample_rng(seed: u64, epoch: u64, index: usize) -> Rng {
    Rng::derived(seed, &[TAG_AUGMENT, epoch, index as u64])
}

pub fn epoch_permutation(n: usize, epoch: u64, seed: u64) -> Vec<usize> {
    Rng::derived(seed, &[TAG_PERMUTATION, epoch]).permutation(n)
}

/// Iterator over the batches of one epoch.
pub struct EpochBatches<'a> {
    data: UnlabeledView<'a>,
    policy: Option<&'a AugmentationPolicy>,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl EpochBatches<'_> {
    pub fn n_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }
}

impl Iterator for EpochBatches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let targets = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(self.build(targets))
    }
}

impl EpochBatches<'_> {
    fn build(&self, targets: Vec<usize>) -> Result<Batch> {
        let d = self.data.dim();
        let mut features = Matrix::zeros(targets.len(), d);
        for (row, &n) in targets.iter().enumerate() {
            let (x, _) = self.data.sample(n);
            match self.policy {
                Some(policy) => {
                    let mut rng = sample_rng(self.seed, self.epoch, n);
                    let y = augment(x, policy, self.data.grid_side(), &mut rng)?;
                    features.row_mut(row).copy_from_slice(&y);
                }
                None => features.row_mut(row).copy_from_slice(x),
            }
        }
        Ok(Batch { features, targets })
    }
}

/// Batches of one epoch: a permutation of `0..N` fixed by `(seed, epoch)`,
/// cut into chunks of `batch_size` (the last one may be short). With a policy,
/// each sample is augmented from its own `(seed, epoch, index)` stream.
pub fn epoch_batches<'a>(
    data: UnlabeledView<'a>,
    policy: Option<&'a AugmentationPolicy>,
    batch_size: usize,
    epoch: u64,
    seed: u64,
) -> Result<EpochBatches<'a>> {
    if batch_size == 0 || batch_size > data.len() {
        return Err(Error::Spec(format!(
            "batch size {batch_size} outside [1, {}]",
            data.len()
        )));
    }
    Ok(EpochBatches {
        data,
        policy,
        order: epoch_permutation(data.len(), epoch, seed),
        batch_size,
        cursor: 0,
        epoch,
        seed,
    })
}

/// Keeps `m` rows chosen without replacement, in their original order.
/// Targets are renumbered `0..m`; labels travel along.
pub fn subsample(ds: &IndexedDataset, m: usize, seed: u64) -> Result<IndexedDataset> {
    if m == 0 || m > ds.len() {
        return Err(Error::Spec(format!(
            "subsample size {m} outside [1, {}]",
            ds.len()
        )));
    }
    let mut rows = Rng::derived(seed, &[TAG_SUBSAMPLE]).permutation(ds.len());
    rows.truncate(m);
    rows.sort_unstable();
    Ok(ds.select_rows(&rows, format!("{}-sub{m}", ds.name())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::augment::Layout;
    use crate::data::dataset::SyntheticSpec;

    fn data(n: usize) -> IndexedDataset {
        SyntheticSpec::gaussian(n, 4, 2, 0.3, 9).generate().unwrap()
    }

    #[test]
    fn epoch_is_a_partition() {
        let ds = data(37);
        let batches: Vec<Batch> = epoch_batches(ds.unlabeled(), None, 8, 3, 1)
            .unwrap()
            .map(Result::unwrap)
            .collect();
        assert_eq!(batches.len(), 5);
        assert_eq!(batches.last().unwrap().targets.len(), 5);
        let mut all: Vec<usize> = batches.iter().flat_map(|b| b.targets.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        for b in &batches {
            for (r, &n) in b.targets.iter().enumerate() {
                assert_eq!(b.features.row(r), ds.features().row(n));
            }
        }
    }

    #[test]
    fn reruns_are_bit_identical_and_epochs_differ() {
        let ds = data(20);
        let p = AugmentationPolicy::for_data(3, None, ds.feature_std()).unwrap();
        let run = |epoch| -> Vec<Batch> {
            epoch_batches(ds.unlabeled(), Some(&p), 6, epoch, 4)
                .unwrap()
                .map(Result::unwrap)
                .collect()
        };
        assert_eq!(run(2), run(2));
        assert_ne!(run(2)[0].targets, run(3)[0].targets);
    }

    #[test]
    fn full_batch_is_one_permutation() {
        let ds = data(16);
        let mut it = epoch_batches(ds.unlabeled(), None, 16, 0, 0).unwrap();
        assert_eq!(it.n_batches(), 1);
        let b = it.next().unwrap().unwrap();
        assert!(it.next().is_none());
        let mut t = b.targets.clone();
        t.sort_unstable();
        assert_eq!(t, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn augmentation_does_not_depend_on_batch_size() {
        let ds = SyntheticSpec::grids(24, 6, 3, 0.1, 2).generate().unwrap();
        let p = AugmentationPolicy::new(3, Layout::Grid).unwrap();
        let rows = |bs: usize| {
            let mut out = vec![Vec::new(); 24];
            for b in epoch_batches(ds.unlabeled(), Some(&p), bs, 5, 11).unwrap() {
                let b = b.unwrap();
                for (r, &n) in b.targets.iter().enumerate() {
                    out[n] = b.features.row(r).to_vec();
                }
            }
            out
        };
        assert_eq!(rows(1), rows(7));
        assert_eq!(rows(7), rows(24));
    }

    #[test]
    fn batch_size_bounds() {
        let ds = data(10);
        assert!(epoch_batches(ds.unlabeled(), None, 0, 0, 0).is_err());
        assert!(epoch_batches(ds.unlabeled(), None, 11, 0, 0).is_err());
    }

    #[test]
    fn subsample_edge_cases() {
        let ds = data(30);
        assert_eq!(subsample(&ds, 30, 5).unwrap(), ds);
        let one = subsample(&ds, 1, 5).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.sample(0).1, 0);
        assert!(subsample(&ds, 0, 5).is_err());
        assert!(subsample(&ds, 31, 5).is_err());
        assert_eq!(
            subsample(&ds, 12, 3).unwrap(),
            subsample(&ds, 12, 3).unwrap()
        );
    }

    #[test]
    fn subsample_keeps_rows_and_labels_together() {
        let ds = SyntheticSpec::gaussian(50, 3, 5, 0.0, 1)
            .generate()
            .unwrap();
        let sub = subsample(&ds, 20, 8).unwrap();
        let full_labels = ds.labels().to_vec();
        let sub_labels = sub.labels().to_vec();
        for (i, label) in sub_labels.iter().enumerate() {
            let row = sub.features().row(i);
            let src = (0..ds.len())
                .find(|&j| ds.features().row(j) == row)
                .unwrap();
            assert_eq!(full_labels[src], *label);
        }
    }

    #[test]
    fn half_subsample_stays_balanced_on_average() {
        let ds = SyntheticSpec::gaussian(1000, 2, 10, 0.1, 0)
            .generate()
            .unwrap();
        let mut totals = [0usize; 10];
        let seeds = 100;
        for seed in 0..seeds {
            let sub = subsample(&ds, 500, seed).unwrap();
            for &l in sub.labels() {
                totals[l as usize] += 1;
            }
        }
        for t in totals {
            let mean = t as f64 / seeds as f64;
            assert!((mean - 50.0).abs() <= 5.0, "{mean}");
        }
    }
}
