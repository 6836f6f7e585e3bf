//! In-memory dataset type and the one-image-per-class sampling protocol.
//! File loading (IDX, CIFAR binary) lives in the companion crate.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    AttackEval,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::AttackEval => "attack-eval",
        }
    }
}

/// Images (N,C,H,W) in [0,1] with labels in [0, classes).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Dataset> {
        let s = images.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                detail: format!("images must be (N,C,H,W), got {s:?}"),
            });
        }
        if s[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                detail: format!("{} images vs {} labels", s[0], labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArg {
                op: "dataset",
                detail: format!("label {bad} out of range for {classes} classes"),
            });
        }
        if images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidArg {
                op: "dataset",
                detail: "pixel values must lie in [0,1]".into(),
            });
        }
        Ok(Dataset { images, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    /// Copy out the images/labels at `indices`, preserving order.
    pub fn subset(&self, indices: &[usize], split: Split) -> Result<Dataset> {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * per);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArg {
                    op: "dataset",
                    detail: format!("index {i} out of range for {} images", self.len()),
                });
            }
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(alloc::vec![indices.len(), s[1], s[2], s[3]], data)?;
        Dataset::new(images, labels, self.classes, split)
    }
}

/// Pick exactly one image per class, uniformly at random within each class,
/// deterministic given `seed`. Returns the chosen source indices alongside
/// the sampled dataset (classes in ascending order).
pub fn sample_one_per_class(ds: &Dataset, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if ds.is_empty() {
        return Err(Error::EmptyInput { what: "dataset" });
    }
    let mut per_class: Vec<Vec<usize>> = (0..ds.classes).map(|_| Vec::new()).collect();
    for (i, &l) in ds.labels.iter().enumerate() {
        per_class[l].push(i);
    }
    let missing: Vec<usize> =
        (0..ds.classes).filter(|&c| per_class[c].is_empty()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingClasses { classes: missing });
    }
    let mut chosen = Vec::with_capacity(ds.classes);
    for (c, pool) in per_class.iter().enumerate() {
        let mut rng = DetRng::derive(seed, c as u64);
        chosen.push(pool[rng.below(pool.len())]);
    }
    Ok((ds.subset(&chosen, Split::AttackEval)?, chosen))
}
