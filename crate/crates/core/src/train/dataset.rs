//! In-memory image/label sets and K-fold index splits.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::data::{decode_image, resize_bilinear, SampleRecord, SplitMix64, SynthDataset, Taxonomy};
use crate::error::{Error, Result};
use crate::par;

/// Decoded `3×S×S` images with per-task labels (`-1` = missing).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub taxonomy: Taxonomy,
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<Vec<i64>>,
}

impl Dataset {
    pub fn new(taxonomy: Taxonomy, images: Vec<Tensor<f32>>, labels: Vec<Vec<i64>>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::data(format!("{} images but {} label rows", images.len(), labels.len())));
        }
        if let Some(i) = labels.iter().position(|l| l.len() != taxonomy.num_tasks()) {
            return Err(Error::data(format!("record {i} has {} labels for {} tasks", labels[i].len(), taxonomy.num_tasks())));
        }
        Ok(Self { taxonomy, images, labels })
    }

    pub fn from_synth(d: &SynthDataset) -> Self {
        Self { taxonomy: d.taxonomy.clone(), images: d.images.clone(), labels: d.records.iter().map(|r| r.labels.clone()).collect() }
    }

    /// Decodes every record under `base` and resizes to `size×size`.
    pub fn load(records: &[SampleRecord], taxonomy: &Taxonomy, base: &Path, size: usize) -> Result<Self> {
        for r in records {
            r.validate(taxonomy)?;
        }
        let images = par::map_slice(records, |r| -> Result<Tensor<f32>> {
            let img = decode_image::<f32>(&r.resolve(base))?;
            resize_bilinear(&img, size, size)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Self::new(taxonomy.clone(), images, records.iter().map(|r| r.labels.clone()).collect())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Stacks the images at `ids` into a `B×3×S×S` batch.
    pub fn batch(&self, ids: &[usize]) -> Result<Tensor<f32>> {
        let first = self.images.get(*ids.first().ok_or_else(|| Error::data("empty batch"))?).ok_or_else(|| Error::Index("image id out of range".into()))?;
        let per = first.len();
        let mut data = Vec::with_capacity(per * ids.len());
        for &i in ids {
            let img = self.images.get(i).ok_or_else(|| Error::Index(format!("image id {i} out of range")))?;
            img.expect_shape(first.shape())?;
            data.extend_from_slice(img.data());
        }
        let mut shape = vec![ids.len()];
        shape.extend(first.shape());
        Tensor::new(&shape, data)
    }

    /// Labels of `task` at `ids`.
    pub fn task_labels(&self, task: usize, ids: &[usize]) -> Vec<i64> {
        ids.iter().map(|&i| self.labels[i][task]).collect()
    }

    pub fn subset(&self, ids: &[usize]) -> Self {
        Self {
            taxonomy: self.taxonomy.clone(),
            images: ids.iter().map(|&i| self.images[i].clone()).collect(),
            labels: ids.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }
}

/// A train/validation index pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// K folds over `0..n`: a SplitMix64 shuffle cut into `K` near-equal
/// contiguous runs; each run is one validation fold.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::config(format!("K-fold needs K >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::config(format!("cannot cut {n} samples into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::derive(seed, "kfold").shuffle(&mut order);
    Ok((0..k)
        .map(|f| {
            let (lo, hi) = (f * n / k, (f + 1) * n / k);
            let mut val = order[lo..hi].to_vec();
            let mut train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            val.sort_unstable();
            train.sort_unstable();
            Fold { train, val }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition() {
        let folds = kfold_indices(10, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.val.len() == 2 && f.train.len() == 8));
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.val.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(folds, kfold_indices(10, 5, 1).unwrap());
        assert_ne!(folds, kfold_indices(10, 5, 2).unwrap());
        let uneven = kfold_indices(11, 3, 0).unwrap();
        let sizes: Vec<usize> = uneven.iter().map(|f| f.val.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(matches!(kfold_indices(2, 3, 0), Err(Error::Config(_))));
        assert!(matches!(kfold_indices(5, 1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn batches_stack_in_order() {
        let imgs: Vec<Tensor<f32>> = (0..3).map(|i| Tensor::full(&[3, 2, 2], i as f32)).collect();
        let d = Dataset::new(Taxonomy::synthetic(), imgs, vec![vec![0, 0, 0], vec![1, 1, 1], vec![2, 2, 1]]).unwrap();
        let b = d.batch(&[2, 0]).unwrap();
        assert_eq!(b.shape(), &[2, 3, 2, 2]);
        assert_eq!(b.data()[0], 2.0);
        assert_eq!(b.data()[12], 0.0);
        assert_eq!(d.task_labels(1, &[2, 1]), [2, 1]);
        assert!(d.batch(&[5]).is_err());
    }
}
