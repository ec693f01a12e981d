use std::collections::HashMap;

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Split};
use crate::embedspace::{split_concepts, Concept, ConceptSpace, ParsedVectors};
use crate::error::{Result, TceError};
use crate::eval::{compute_metrics, distance_scores, MetricsReport, ScoreMatrix, SweepOptions};
use crate::rng::{stream, Stream};

/// Width of the latent attribute code feeding the interaction network.
const ATTR_CODE_DIM: usize = 8;
/// Hidden width of the interaction network producing the offsets.
const TRUTH_HIDDEN: usize = 32;
/// Standard deviation of the word-vector projection entries.
const WORD_SCALE: f64 = 0.3;
const WORD_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub num_attrs: usize,
    pub num_objs: usize,
    pub feature_dim: usize,
    pub seen_fraction: f64,
    /// Samples per concept in each split (train: seen concepts only).
    pub samples_per_concept: usize,
    pub noise_sigma: f64,
    /// Weight of the object-specific offset against the global attribute
    /// direction, in [0, 1].
    pub context_strength: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_attrs: 16,
            num_objs: 12,
            feature_dim: 64,
            seen_fraction: 0.6,
            samples_per_concept: 50,
            noise_sigma: 0.3,
            context_strength: 0.8,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TceError::Config(m));
        if self.num_attrs < 2 || self.num_objs < 2 {
            return bad(format!(
                "need at least 2 attributes and 2 objects, got {} and {}",
                self.num_attrs, self.num_objs
            ));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.samples_per_concept == 0 {
            return bad("samples_per_concept must be at least 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!(
                "noise_sigma must be a nonnegative number, got {}",
                self.noise_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.context_strength) {
            return bad(format!(
                "context_strength must lie in [0, 1], got {}",
                self.context_strength
            ));
        }
        if !(self.seen_fraction > 0.0 && self.seen_fraction < 1.0) {
            return bad(format!("seen_fraction must lie in (0, 1), got {}", self.seen_fraction));
        }
        Ok(())
    }

    pub fn attribute_names(&self) -> Vec<String> {
        (0..self.num_attrs).map(|i| format!("attr{i:02}")).collect()
    }

    pub fn object_names(&self) -> Vec<String> {
        (0..self.num_objs).map(|i| format!("obj{i:02}")).collect()
    }
}

/// Generative parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub context_strength: f64,
    /// Object centers, one row per object.
    pub obj_centers: Array2<f64>,
    /// Global attribute directions, one row per attribute.
    pub attr_dirs: Array2<f64>,
    /// Latent attribute codes feeding the interaction network.
    pub attr_codes: Array2<f64>,
    /// Object-specific attribute offsets, row `a * n + o`.
    pub offsets: Array2<f64>,
}

impl SynthTruth {
    pub fn num_objs(&self) -> usize {
        self.obj_centers.nrows()
    }

    pub fn offset(&self, c: Concept) -> ndarray::ArrayView1<'_, f64> {
        self.offsets.row(c.attr * self.num_objs() + c.obj)
    }

    /// Noise-free feature of a concept.
    pub fn concept_mean(&self, c: Concept) -> Vec<f64> {
        let k = self.context_strength;
        self.obj_centers
            .row(c.obj)
            .iter()
            .zip(self.attr_dirs.row(c.attr))
            .zip(self.offset(c))
            .map(|((mu, tau), delta)| mu + (1.0 - k) * tau + k * delta)
            .collect()
    }

    pub fn means(&self, concepts: &[Concept]) -> Array2<f64> {
        let f = self.obj_centers.ncols();
        let mut out = Array2::zeros((concepts.len(), f));
        for (mut row, &c) in out.rows_mut().into_iter().zip(concepts) {
            row.assign(&ndarray::ArrayView1::from(&self.concept_mean(c)));
        }
        out
    }
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn draw_truth(spec: &SynthSpec) -> SynthTruth {
    let (m, n, f) = (spec.num_attrs, spec.num_objs, spec.feature_dim);
    let mut rng = stream(spec.seed, Stream::Truth);
    let obj_centers = gaussian(n, f, 1.0, &mut rng);
    let attr_dirs = gaussian(m, f, 1.0, &mut rng);
    let attr_codes = gaussian(m, ATTR_CODE_DIM, 1.0, &mut rng);
    let w_obj = gaussian(TRUTH_HIDDEN, f, 1.0 / (f as f64).sqrt(), &mut rng);
    let w_attr = gaussian(
        TRUTH_HIDDEN,
        ATTR_CODE_DIM,
        1.0 / (ATTR_CODE_DIM as f64).sqrt(),
        &mut rng,
    );
    let b1 = gaussian(1, TRUTH_HIDDEN, 0.5, &mut rng);
    let w_out = gaussian(f, TRUTH_HIDDEN, 1.0, &mut rng);

    let pre_obj = obj_centers.dot(&w_obj.t());
    let pre_attr = attr_codes.dot(&w_attr.t());
    let mut hidden = Array2::zeros((m * n, TRUTH_HIDDEN));
    for a in 0..m {
        for o in 0..n {
            let mut h = hidden.row_mut(a * n + o);
            for j in 0..TRUTH_HIDDEN {
                h[j] = (pre_obj[[o, j]] + pre_attr[[a, j]] + b1[[0, j]]).max(0.0);
            }
        }
    }
    let mut offsets = hidden.dot(&w_out.t());
    let mean = offsets.mean_axis(Axis(0)).expect("nonempty");
    offsets -= &mean;
    let power = offsets.iter().map(|v| v * v).sum::<f64>() / (m * n) as f64;
    if power > 0.0 {
        offsets *= (f as f64 / power).sqrt();
    }
    SynthTruth {
        context_strength: spec.context_strength,
        obj_centers,
        attr_dirs,
        attr_codes,
        offsets,
    }
}

/// Draws a synthetic dataset whose features are
/// `mu_o + (1 - k) tau_a + k delta_ao + noise`, with `delta_ao` produced by a
/// random one-hidden-layer ReLU network of the object center and a latent
/// attribute code. Values are rounded to `f32` precision so that both
/// on-disk encodings reproduce them exactly.
///
/// Train holds `samples_per_concept` samples of every seen concept; val and
/// test hold as many of every concept.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let space = split_concepts(
        spec.attribute_names(),
        spec.object_names(),
        spec.seen_fraction,
        spec.seed,
    )?;
    if space.unseen().is_empty() {
        return Err(TceError::Config("seen fraction leaves no unseen concepts".into()));
    }
    let truth = draw_truth(spec);
    let all = space.all_concepts();
    let plan: [(Split, &[Concept]); 3] = [(Split::Train, space.seen()), (Split::Val, &all), (Split::Test, &all)];
    let total: usize = plan.iter().map(|(_, cs)| cs.len() * spec.samples_per_concept).sum();
    let f = spec.feature_dim;
    let mut features = Array2::zeros((total, f));
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let mut rng = stream(spec.seed, Stream::Data);
    let mut row = 0;
    for (split, concepts) in plan {
        for &c in concepts {
            let mean = truth.concept_mean(c);
            for _ in 0..spec.samples_per_concept {
                for (dst, mu) in features.row_mut(row).iter_mut().zip(&mean) {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *dst = (mu + spec.noise_sigma * eps) as f32 as f64;
                }
                labels.push(c);
                splits.push(split);
                row += 1;
            }
        }
    }
    let dataset = Dataset::new(space, features, labels, splits)?.with_truth(truth);
    dataset.check_mixed_splits()?;
    Ok(dataset)
}

/// Word vectors correlated with the generative parameters: each object's
/// vector is a random projection of its center, each attribute's a
/// projection of its direction and code, plus a little noise.
pub fn synthetic_word_vectors(
    space: &ConceptSpace,
    truth: &SynthTruth,
    dim: usize,
    seed: u64,
) -> Result<ParsedVectors> {
    if dim == 0 {
        return Err(TceError::Config("word dimension must be positive".into()));
    }
    let f = truth.obj_centers.ncols();
    let k = truth.attr_codes.ncols();
    let mut rng = stream(seed, Stream::Fallback);
    let proj_obj = gaussian(dim, f, WORD_SCALE / (f as f64).sqrt(), &mut rng);
    let proj_dir = gaussian(dim, f, WORD_SCALE / (2.0 * f as f64).sqrt(), &mut rng);
    let proj_code = gaussian(dim, k, WORD_SCALE / (2.0 * k as f64).sqrt(), &mut rng);
    let obj_vecs = truth.obj_centers.dot(&proj_obj.t()) + gaussian(space.num_objs(), dim, WORD_NOISE, &mut rng);
    let attr_vecs = truth.attr_dirs.dot(&proj_dir.t())
        + truth.attr_codes.dot(&proj_code.t())
        + gaussian(space.num_attrs(), dim, WORD_NOISE, &mut rng);
    let mut vectors = HashMap::new();
    for (name, row) in space.objects().iter().zip(obj_vecs.rows()) {
        vectors.insert(name.clone(), row.to_vec());
    }
    for (name, row) in space.attributes().iter().zip(attr_vecs.rows()) {
        vectors.insert(name.clone(), row.to_vec());
    }
    Ok(ParsedVectors {
        dim: Some(dim),
        vectors,
    })
}

/// Metrics of the nearest-true-mean classifier on one split.
pub fn bayes_oracle_accuracy(dataset: &Dataset, split: Split, options: &SweepOptions) -> Result<MetricsReport> {
    let truth = dataset
        .truth()
        .ok_or_else(|| TceError::Precondition("oracle accuracy needs a synthetic dataset with known truth".into()))?;
    let columns = ScoreMatrix::columns_for(dataset.space());
    let concepts: Vec<Concept> = columns.iter().map(|c| c.concept).collect();
    let means = truth.means(&concepts);
    let (features, labels) = dataset.eval_split(split);
    let scores = distance_scores(features.view(), means.view(), 1)?;
    compute_metrics(&ScoreMatrix::new(scores, columns)?, &labels, options)
}
