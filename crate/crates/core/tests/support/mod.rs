//! Helpers shared by the integration tests and the acceptance suite:
//! central finite differences and a brute-force metric reference.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use tce_core::embedspace::Concept;
use tce_core::eval::{ColumnMeta, ScoreMatrix, SmaxMode};
use tce_core::losses::{tce_batch_loss, LossWeights, Semantics, TceBatch};
use tce_core::model::{Model, TceDims, TceModel};
use tce_core::rng::{stream, Stream};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    rel_err_floor(a, b, FD_FLOOR)
}

pub fn rel_err_floor(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central differences of `loss` wrt every parameter of `model`, in
/// `tensors_mut` order.
pub fn numeric_grads(model: &Model, loss: impl Fn(&Model) -> f64) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = model.params().tensors().iter().map(|t| t.2.len()).collect();
    let mut work = model.clone();
    let mut out = Vec::new();
    for (t, &len) in sizes.iter().enumerate() {
        let mut g = vec![0.0; len];
        for (k, gk) in g.iter_mut().enumerate() {
            let orig = work.params_mut().tensors_mut()[t].1[k];
            work.params_mut().tensors_mut()[t].1[k] = orig + FD_STEP;
            let up = loss(&work);
            work.params_mut().tensors_mut()[t].1[k] = orig - FD_STEP;
            let down = loss(&work);
            work.params_mut().tensors_mut()[t].1[k] = orig;
            *gk = (up - down) / (2.0 * FD_STEP);
        }
        out.push(g);
    }
    out
}

/// Largest component-wise relative error between two gradient lists.
pub fn max_rel_err(analytic: &[&[f64]], numeric: &[Vec<f64>]) -> f64 {
    max_rel_err_floor(analytic, numeric, FD_FLOOR)
}

pub fn max_rel_err_floor(analytic: &[&[f64]], numeric: &[Vec<f64>], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "tensor count");
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.len(), n.len(), "tensor size");
            a.iter().zip(n).map(move |(x, y)| rel_err_floor(*x, *y, floor))
        })
        .fold(0.0, f64::max)
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// A small TCE problem: model with D=4, m=n=3 and a 2-sample batch.
pub fn tiny_tce_problem(seed: u64) -> (TceModel, TceBatch) {
    let mut rng = stream(seed, Stream::Init);
    let dims = TceDims {
        num_attrs: 3,
        num_objs: 3,
        feature_dim: 5,
        latent_dim: 4,
        word_dim: 3,
        hidden_dim: 4,
    };
    let attrs = gaussian_matrix(3, 3, &mut rng);
    let objs = gaussian_matrix(3, 3, &mut rng);
    let model = TceModel::new(dims, attrs, objs, &mut rng).unwrap();
    let c = Concept::new;
    let batch = TceBatch {
        features: gaussian_matrix(2, 5, &mut rng),
        labels: vec![c(0, 1), c(2, 0)],
        neg_objs: vec![2, 1],
        neg_concepts: vec![c(1, 2), c(0, 0)],
        rvc_pairs: vec![(c(0, 1), c(2, 0)), (c(1, 2), c(0, 0)), (c(2, 2), c(1, 1))],
    };
    (model, batch)
}

/// Every loss term switched on; the ratio variance margin is 0 so its hinge
/// is active.
pub fn all_terms_active() -> LossWeights {
    LossWeights {
        lambda_rvc: 0.7,
        margin_rvc: 0.0,
        ..LossWeights::default()
    }
}

/// Worst relative error of the analytic TCE gradient against central
/// differences for one seed.
pub fn tce_gradient_error(seed: u64, weights: &LossWeights) -> f64 {
    let (model, batch) = tiny_tce_problem(seed);
    let (_, grads) = tce_batch_loss(&model, &batch, weights, Semantics::Live).unwrap();
    let wrapped = Model::Tce(model);
    let numeric = numeric_grads(&wrapped, |m| match m {
        Model::Tce(t) => tce_batch_loss(t, &batch, weights, Semantics::Live).unwrap().0.total,
        _ => unreachable!(),
    });
    max_rel_err(&grads.tensors(), &numeric)
}

/// A random score matrix with integer-valued scores (to force ties) or
/// continuous ones, every concept of an `m x n` grid as a column, and labels
/// covering both seen and unseen columns when possible.
pub fn random_instance<R: Rng>(rng: &mut R, max_images: usize, max_concepts: usize) -> (ScoreMatrix, Vec<Concept>) {
    let integer = rng.random_bool(0.5);
    instance_with(rng, max_images, max_concepts, integer)
}

/// Like [`random_instance`] but always with continuous scores, so exact ties
/// between biased and unbiased scores have probability zero.
pub fn continuous_instance<R: Rng>(rng: &mut R, max_images: usize, max_concepts: usize) -> (ScoreMatrix, Vec<Concept>) {
    instance_with(rng, max_images, max_concepts, false)
}

fn instance_with<R: Rng>(
    rng: &mut R,
    max_images: usize,
    max_concepts: usize,
    integer: bool,
) -> (ScoreMatrix, Vec<Concept>) {
    let m = rng.random_range(1..=4usize);
    let n = rng.random_range(2..=4usize);
    let mut concepts: Vec<Concept> = (0..m).flat_map(|a| (0..n).map(move |o| Concept::new(a, o))).collect();
    concepts.truncate(max_concepts.max(2));
    let k = concepts.len();
    let n_seen = rng.random_range(1..k);
    let mut seen_flags = vec![false; k];
    let mut order: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for &j in &order[..n_seen] {
        seen_flags[j] = true;
    }
    let columns: Vec<ColumnMeta> = concepts
        .iter()
        .zip(&seen_flags)
        .map(|(&concept, &seen)| ColumnMeta { concept, seen })
        .collect();
    let rows = rng.random_range(1..=max_images);
    let scores = Array2::from_shape_fn((rows, k), |_| {
        if integer {
            rng.random_range(-3..=3) as f64
        } else {
            rng.random_range(-5.0..5.0)
        }
    });
    let labels = (0..rows).map(|_| concepts[rng.random_range(0..k)]).collect();
    (ScoreMatrix::new(scores, columns).unwrap(), labels)
}

/// Straightforward reference for the evaluation protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMetrics {
    pub closed_unseen: f64,
    pub open_unseen: f64,
    pub open_seen: f64,
    pub attr_acc: f64,
    pub obj_acc: f64,
    /// `None` unless both seen and unseen labels are present.
    pub auc: Option<f64>,
}

fn argmax_with_bias(row: &[f64], cols: &[ColumnMeta], allowed: impl Fn(usize) -> bool, bias: f64) -> usize {
    let mut best = usize::MAX;
    let mut best_v = f64::NEG_INFINITY;
    for (j, meta) in cols.iter().enumerate() {
        if !allowed(j) {
            continue;
        }
        let v = if meta.seen { row[j] } else { row[j] + bias };
        if best == usize::MAX || v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

fn pct(hit: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hit as f64 / n as f64
    }
}

pub fn brute_metrics(scores: &ScoreMatrix, labels: &[Concept], bins: usize, mode: SmaxMode) -> BruteMetrics {
    let cols = scores.columns();
    let s = scores.scores();
    let rows: Vec<Vec<f64>> = s.rows().into_iter().map(|r| r.to_vec()).collect();
    let label_col: Vec<usize> = labels
        .iter()
        .map(|l| cols.iter().position(|c| c.concept == *l).unwrap())
        .collect();
    let open = |bias: f64| {
        let (mut sh, mut sn, mut uh, mut un) = (0, 0, 0, 0);
        for (r, &lc) in rows.iter().zip(&label_col) {
            let hit = argmax_with_bias(r, cols, |_| true, bias) == lc;
            if cols[lc].seen {
                sn += 1;
                sh += hit as usize;
            } else {
                un += 1;
                uh += hit as usize;
            }
        }
        (pct(sh, sn), pct(uh, un))
    };
    let (open_seen, open_unseen) = open(0.0);
    let (mut ch, mut cn, mut ah, mut oh) = (0, 0, 0, 0);
    for (r, &lc) in rows.iter().zip(&label_col) {
        let p = argmax_with_bias(r, cols, |_| true, 0.0);
        ah += (cols[p].concept.attr == cols[lc].concept.attr) as usize;
        oh += (cols[p].concept.obj == cols[lc].concept.obj) as usize;
        if !cols[lc].seen {
            cn += 1;
            ch += (argmax_with_bias(r, cols, |j| !cols[j].seen, 0.0) == lc) as usize;
        }
    }
    let both = label_col.iter().any(|&c| cols[c].seen) && label_col.iter().any(|&c| !cols[c].seen);
    let auc = both.then(|| {
        let s_max = match mode {
            SmaxMode::Global => rows.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max),
            SmaxMode::PerImage => rows
                .iter()
                .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max).abs())
                .fold(0.0, f64::max),
        };
        let mut biases: Vec<f64> = if bins == 1 {
            vec![0.0]
        } else {
            (0..bins)
                .map(|k| -s_max + 2.0 * s_max * k as f64 / (bins - 1) as f64)
                .collect()
        };
        biases.push(0.0);
        // best open-unseen per distinct open-seen value, keyed by bit pattern
        // of the (nonnegative) x coordinate
        let mut best: BTreeMap<u64, f64> = BTreeMap::new();
        for b in biases {
            let (x, y) = open(b);
            let e = best.entry(x.to_bits()).or_insert(y);
            *e = e.max(y);
        }
        let pts: Vec<(f64, f64)> = best.into_iter().map(|(k, v)| (f64::from_bits(k), v)).collect();
        let mut area = pts[0].0 * pts[0].1;
        for w in pts.windows(2) {
            area += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
        }
        area / 100.0
    });
    BruteMetrics {
        closed_unseen: pct(ch, cn),
        open_unseen,
        open_seen,
        attr_acc: pct(ah, rows.len()),
        obj_acc: pct(oh, rows.len()),
        auc,
    }
}

/// Generated dataset plus word vectors derived from its ground truth.
pub fn synthetic_setup(
    spec: &tce_core::dataforge::SynthSpec,
    word_dim: usize,
) -> (tce_core::dataforge::Dataset, tce_core::embedspace::WordVecTable) {
    let data = tce_core::dataforge::generate_synthetic(spec).unwrap();
    let parsed =
        tce_core::dataforge::synthetic_word_vectors(data.space(), data.truth().unwrap(), word_dim, spec.seed).unwrap();
    let mut required = data.space().attributes().to_vec();
    required.extend(data.space().objects().iter().cloned());
    let words = tce_core::embedspace::WordVecTable::from_parsed(parsed, &required, word_dim, spec.seed).unwrap();
    (data, words)
}

/// Small networks and a short schedule for fast training tests.
pub fn small_config(model: tce_core::model::ModelKind, seed: u64) -> tce_core::config::TrainConfig {
    tce_core::config::TrainConfig {
        model,
        epochs: 3,
        batch_size: 16,
        lr_main: 1e-3,
        latent_dim: 8,
        hidden_dim: 8,
        visprod_hidden: 8,
        word_dim: 6,
        eval_every: 1,
        seed,
        ..Default::default()
    }
}
