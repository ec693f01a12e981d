//! Datasets: the in-memory container, a synthetic compositional generator,
//! the on-disk manifest format, and negative sampling for training.

mod manifest;
mod synth;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::Rng;

use crate::embedspace::{Concept, ConceptSpace};
use crate::error::{shape_err, Result, TceError};

pub use manifest::{
    build_dataset, decode_sidecar, encode_sidecar, load_feature_dataset, parse_manifest, render_manifest,
    write_feature_dataset, Encoding, Manifest, ManifestRow,
};
pub use synth::{bayes_oracle_accuracy, generate_synthetic, synthetic_word_vectors, SynthSpec, SynthTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = TceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(TceError::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Number of feature rows read per split, separated by purpose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccessCounts {
    /// Rows handed out for gradient computation, indexed by [`Split`].
    pub gradient: [usize; 3],
    /// Rows handed out for scoring.
    pub eval: [usize; 3],
}

#[derive(Debug, Default)]
struct AccessLog {
    gradient: [AtomicUsize; 3],
    eval: [AtomicUsize; 3],
}

/// Labeled feature vectors of one concept space.
///
/// Feature reads go through [`Dataset::gradient_rows`] or
/// [`Dataset::eval_split`], which keep per-split counters.
#[derive(Debug)]
pub struct Dataset {
    space: ConceptSpace,
    features: Array2<f64>,
    labels: Vec<Concept>,
    splits: Vec<Split>,
    truth: Option<SynthTruth>,
    access: AccessLog,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Self {
            space: self.space.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            splits: self.splits.clone(),
            truth: self.truth.clone(),
            access: AccessLog::default(),
        }
    }
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space
            && self.features == other.features
            && self.labels == other.labels
            && self.splits == other.splits
    }
}

impl Dataset {
    /// Validates that every label belongs to the space and that training
    /// samples only carry seen concepts.
    pub fn new(space: ConceptSpace, features: Array2<f64>, labels: Vec<Concept>, splits: Vec<Split>) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n || splits.len() != n {
            return Err(shape_err!(
                "{n} feature rows, {} labels, {} split tags",
                labels.len(),
                splits.len()
            ));
        }
        if features.ncols() == 0 {
            return Err(TceError::Config("feature dimension must be positive".into()));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(TceError::Format(format!("non-finite feature value {v}")));
        }
        for (i, (&c, &s)) in labels.iter().zip(&splits).enumerate() {
            if c.attr >= space.num_attrs() || c.obj >= space.num_objs() {
                return Err(TceError::Validation(format!("sample {i}: label out of range")));
            }
            if s == Split::Train && !space.is_seen(c) {
                return Err(TceError::Validation(format!(
                    "sample {i}: train sample labeled with non-seen concept {}",
                    space.concept_name(c)
                )));
            }
            if !space.is_seen(c) && !space.is_unseen(c) {
                return Err(TceError::Validation(format!(
                    "sample {i}: concept {} is neither seen nor unseen",
                    space.concept_name(c)
                )));
            }
        }
        Ok(Self {
            space,
            features: features.as_standard_layout().into_owned(),
            labels,
            splits,
            truth: None,
            access: AccessLog::default(),
        })
    }

    pub(crate) fn with_truth(mut self, truth: SynthTruth) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn space(&self) -> &ConceptSpace {
        &self.space
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Concept] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn truth(&self) -> Option<&SynthTruth> {
        self.truth.as_ref()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    /// Every val/test split that has samples must contain both seen and
    /// unseen concepts.
    pub fn check_mixed_splits(&self) -> Result<()> {
        for split in [Split::Val, Split::Test] {
            let idx = self.split_indices(split);
            if idx.is_empty() {
                continue;
            }
            let seen = idx.iter().any(|&i| self.space.is_seen(self.labels[i]));
            let unseen = idx.iter().any(|&i| self.space.is_unseen(self.labels[i]));
            if !(seen && unseen) {
                return Err(TceError::Validation(format!(
                    "{split} split must contain both seen and unseen concepts"
                )));
            }
        }
        Ok(())
    }

    /// Feature rows for a training step. Only training samples are allowed.
    pub fn gradient_rows(&self, indices: &[usize]) -> Result<Array2<f64>> {
        for &i in indices {
            match self.splits.get(i) {
                Some(Split::Train) => {}
                Some(s) => {
                    return Err(TceError::Precondition(format!(
                        "sample {i} belongs to the {s} split and cannot feed gradients"
                    )))
                }
                None => return Err(TceError::Index(format!("sample {i} out of range"))),
            }
        }
        self.access.gradient[Split::Train.slot()].fetch_add(indices.len(), Ordering::Relaxed);
        Ok(self.features.select(ndarray::Axis(0), indices))
    }

    /// Features and labels of one split, for scoring.
    pub fn eval_split(&self, split: Split) -> (Array2<f64>, Vec<Concept>) {
        let idx = self.split_indices(split);
        self.access.eval[split.slot()].fetch_add(idx.len(), Ordering::Relaxed);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (self.features.select(ndarray::Axis(0), &idx), labels)
    }

    /// All features, bypassing access accounting. Meant for serialization.
    pub fn raw_features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn access_counts(&self) -> AccessCounts {
        let load = |a: &[AtomicUsize; 3]| [0, 1, 2].map(|k| a[k].load(Ordering::Relaxed));
        AccessCounts {
            gradient: load(&self.access.gradient),
            eval: load(&self.access.eval),
        }
    }

    pub fn reset_access(&self) {
        for a in self.access.gradient.iter().chain(&self.access.eval) {
            a.store(0, Ordering::Relaxed);
        }
    }
}

/// Draws a negative object `o' != o` and a negative seen concept `c' != c`
/// for every label, uniformly.
pub fn sample_negatives<R: Rng + ?Sized>(
    labels: &[Concept],
    space: &ConceptSpace,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<Concept>)> {
    let n = space.num_objs();
    let seen = space.seen();
    if n < 2 {
        return Err(TceError::Precondition(
            "negative objects need at least 2 objects".into(),
        ));
    }
    if seen.len() < 2 {
        return Err(TceError::Precondition(
            "negative concepts need at least 2 seen concepts".into(),
        ));
    }
    let mut objs = Vec::with_capacity(labels.len());
    let mut concepts = Vec::with_capacity(labels.len());
    for c in labels {
        if c.obj >= n {
            return Err(TceError::Index(format!("object {} out of range", c.obj)));
        }
        let mut o = rng.random_range(0..n - 1);
        if o >= c.obj {
            o += 1;
        }
        objs.push(o);
        let neg = match seen.binary_search(c) {
            Ok(pos) => {
                let mut k = rng.random_range(0..seen.len() - 1);
                if k >= pos {
                    k += 1;
                }
                seen[k]
            }
            Err(_) => seen[rng.random_range(0..seen.len())],
        };
        concepts.push(neg);
    }
    Ok((objs, concepts))
}
