//! Inference scoring and the generalized compositional zero-shot metrics.
//!
//! Scores are "higher is better". Columns of a [`ScoreMatrix`] follow
//! [`ConceptSpace::all_concepts`]. Accuracies are percentages.

use std::fmt::Write as _;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::embedspace::{Concept, ConceptSpace};
use crate::error::{shape_err, Result, TceError};
use crate::model::{product_scores, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMeta {
    pub concept: Concept,
    pub seen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    scores: Array2<f64>,
    columns: Vec<ColumnMeta>,
}

impl ScoreMatrix {
    pub fn new(scores: Array2<f64>, columns: Vec<ColumnMeta>) -> Result<Self> {
        if scores.ncols() != columns.len() {
            return Err(shape_err!(
                "{} score columns, {} column descriptors",
                scores.ncols(),
                columns.len()
            ));
        }
        if let Some(v) = scores.iter().find(|v| !v.is_finite()) {
            return Err(TceError::Numeric(format!("non-finite score {v}")));
        }
        Ok(Self { scores, columns })
    }

    /// Column descriptors for `space` in its canonical order.
    pub fn columns_for(space: &ConceptSpace) -> Vec<ColumnMeta> {
        space
            .all_concepts()
            .into_iter()
            .map(|c| ColumnMeta {
                concept: c,
                seen: space.is_seen(c),
            })
            .collect()
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn num_rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn column_of(&self, c: Concept) -> Option<usize> {
        self.columns.iter().position(|m| m.concept == c)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.scores.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            scores: &self.scores * factor,
            columns: self.columns.clone(),
        }
    }
}

/// `-||x_i - g_c||` for every image row and gallery row.
pub fn distance_scores(images: ArrayView2<f64>, gallery: ArrayView2<f64>, threads: usize) -> Result<Array2<f64>> {
    if images.ncols() != gallery.ncols() {
        return Err(shape_err!(
            "images have width {}, gallery {}",
            images.ncols(),
            gallery.ncols()
        ));
    }
    let row = |i: usize| -> Vec<f64> {
        let x = images.row(i);
        gallery
            .rows()
            .into_iter()
            .map(|g| {
                -x.iter()
                    .zip(g.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    };
    let rows: Vec<Vec<f64>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| TceError::Config(format!("cannot build thread pool: {e}")))?;
        pool.install(|| (0..images.nrows()).into_par_iter().map(row).collect())
    } else {
        (0..images.nrows()).map(row).collect()
    };
    let mut out = Array2::zeros((images.nrows(), gallery.nrows()));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(&ndarray::ArrayView1::from(&src));
    }
    Ok(out)
}

/// Scores every image against every concept of `space` with `model`.
/// `threads > 1` parallelizes the per-row scoring only; the result is
/// identical to the single-threaded one.
pub fn score_images(
    model: &Model,
    space: &ConceptSpace,
    features: ArrayView2<f64>,
    threads: usize,
) -> Result<ScoreMatrix> {
    let columns = ScoreMatrix::columns_for(space);
    let concepts: Vec<Concept> = columns.iter().map(|m| m.concept).collect();
    if model.num_attrs() != space.num_attrs() || model.num_objs() != space.num_objs() {
        return Err(TceError::Compat(format!(
            "model has {} attributes and {} objects, data has {} and {}",
            model.num_attrs(),
            model.num_objs(),
            space.num_attrs(),
            space.num_objs()
        )));
    }
    if model.feature_dim() != features.ncols() {
        return Err(TceError::Compat(format!(
            "model expects {}-dim features, data has {}",
            model.feature_dim(),
            features.ncols()
        )));
    }
    let scores = match model {
        Model::Tce(m) => {
            let images = m.image_embed(features)?;
            let gallery = m.concept_gallery(&concepts)?;
            distance_scores(images.view(), gallery.view(), threads)?
        }
        Model::LabelEmbed(m) => {
            let images = m.image_embed(features)?;
            let gallery = m.concept_gallery(&concepts)?;
            distance_scores(images.view(), gallery.view(), threads)?
        }
        Model::VisProd(m) => {
            let (pa, po) = m.probabilities(features)?;
            product_scores(&pa, &po, &concepts)
        }
    };
    ScoreMatrix::new(scores, columns)
}

/// Column index of the best candidate after adding `bias` to unseen
/// columns. Ties go to the lowest column index.
pub fn predict(scores: &ScoreMatrix, row: usize, candidates: &[usize], bias: f64) -> Result<usize> {
    if candidates.is_empty() {
        return Err(TceError::Precondition("empty candidate set".into()));
    }
    if row >= scores.num_rows() {
        return Err(TceError::Index(format!("row {row} out of {}", scores.num_rows())));
    }
    let r = scores.scores.row(row);
    let mut best: Option<(usize, f64)> = None;
    for &j in candidates {
        let meta = scores
            .columns
            .get(j)
            .ok_or_else(|| TceError::Index(format!("column {j} out of range")))?;
        let v = r[j] + if meta.seen { 0.0 } else { bias };
        best = match best {
            Some((bj, bv)) if bv > v || (bv == v && bj < j) => Some((bj, bv)),
            _ => Some((j, v)),
        };
    }
    Ok(best.expect("nonempty").0)
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricsReport {
    pub closed_unseen: f64,
    pub open_unseen: f64,
    pub open_seen: f64,
    pub unseen_hm: f64,
    pub all_hm: f64,
    pub auc: f64,
    pub attr_acc: f64,
    pub obj_acc: f64,
}

impl MetricsReport {
    pub const NAMES: [&'static str; 8] = [
        "closed_unseen",
        "open_unseen",
        "open_seen",
        "unseen_hm",
        "all_hm",
        "auc",
        "attr_acc",
        "obj_acc",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.closed_unseen,
            self.open_unseen,
            self.open_seen,
            self.unseen_hm,
            self.all_hm,
            self.auc,
            self.attr_acc,
            self.obj_acc,
        ]
    }

    /// `metric,value` CSV with two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (n, v) in Self::NAMES.iter().zip(self.values()) {
            writeln!(out, "{n},{v:.2}").expect("string write");
        }
        out
    }
}

/// How the sweep range `s_max` is derived from the score matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SmaxMode {
    /// Largest absolute score in the matrix.
    #[default]
    Global,
    /// Largest absolute value among the per-image maximum scores.
    PerImage,
}

impl FromStr for SmaxMode {
    type Err = TceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SmaxMode::Global),
            "per_image" | "per-image" => Ok(SmaxMode::PerImage),
            other => Err(TceError::Config(format!("unknown auc_smax_mode {other:?}"))),
        }
    }
}

impl SmaxMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SmaxMode::Global => "global",
            SmaxMode::PerImage => "per_image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub bins: usize,
    pub smax_mode: SmaxMode,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            bins: 100,
            smax_mode: SmaxMode::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub bias: f64,
    pub open_seen: f64,
    pub open_unseen: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasSweep {
    pub auc: f64,
    /// Points ordered by bias; includes the bias-0 point.
    pub curve: Vec<CurvePoint>,
}

impl BiasSweep {
    /// `bias,open_seen,open_unseen` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bias,open_seen,open_unseen\n");
        for p in &self.curve {
            writeln!(out, "{},{:.2},{:.2}", p.bias, p.open_seen, p.open_unseen).expect("string write");
        }
        out
    }
}

/// Per-row argmax summaries shared by every operating point.
struct RowBest {
    label_col: usize,
    label_seen: bool,
    /// Best seen column and score, if any seen column exists.
    seen: Option<(usize, f64)>,
    unseen: Option<(usize, f64)>,
}

fn best_of(row: ndarray::ArrayView1<f64>, cols: &[usize]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &j in cols {
        let v = row[j];
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((j, v));
        }
    }
    best
}

fn row_summaries(scores: &ScoreMatrix, labels: &[Concept]) -> Result<Vec<RowBest>> {
    if labels.len() != scores.num_rows() {
        return Err(shape_err!(
            "{} labels for {} score rows",
            labels.len(),
            scores.num_rows()
        ));
    }
    let seen_cols: Vec<usize> = (0..scores.columns.len()).filter(|&j| scores.columns[j].seen).collect();
    let unseen_cols: Vec<usize> = (0..scores.columns.len()).filter(|&j| !scores.columns[j].seen).collect();
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let label_col = scores
                .column_of(c)
                .ok_or_else(|| TceError::Index(format!("label ({}, {}) of row {i} has no column", c.attr, c.obj)))?;
            let r = scores.scores.row(i);
            Ok(RowBest {
                label_col,
                label_seen: scores.columns[label_col].seen,
                seen: best_of(r, &seen_cols),
                unseen: best_of(r, &unseen_cols),
            })
        })
        .collect()
}

impl RowBest {
    /// Full-candidate-set prediction with `bias` on unseen columns.
    fn pick(&self, bias: f64) -> usize {
        match (self.seen, self.unseen) {
            (Some((js, s)), Some((ju, u))) => {
                let u = u + bias;
                if u > s || (u == s && ju < js) {
                    ju
                } else {
                    js
                }
            }
            (Some((j, _)), None) | (None, Some((j, _))) => j,
            (None, None) => unreachable!("score matrix without columns"),
        }
    }
}

fn percent(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * hits as f64 / total as f64
    }
}

/// `(open_seen, open_unseen)` at one bias.
fn open_accuracies(rows: &[RowBest], bias: f64) -> (f64, f64) {
    let (mut seen_hit, mut seen_n, mut unseen_hit, mut unseen_n) = (0, 0, 0, 0);
    for r in rows {
        let ok = r.pick(bias) == r.label_col;
        if r.label_seen {
            seen_n += 1;
            seen_hit += ok as usize;
        } else {
            unseen_n += 1;
            unseen_hit += ok as usize;
        }
    }
    (percent(seen_hit, seen_n), percent(unseen_hit, unseen_n))
}

/// The full metric suite. Accuracy sets without images report 0; AUC is 0
/// unless both seen and unseen labels are present.
pub fn compute_metrics(scores: &ScoreMatrix, labels: &[Concept], options: &SweepOptions) -> Result<MetricsReport> {
    let rows = row_summaries(scores, labels)?;
    let (open_seen, open_unseen) = open_accuracies(&rows, 0.0);
    let (mut closed_hit, mut unseen_n, mut attr_hit, mut obj_hit) = (0, 0, 0, 0);
    for r in &rows {
        let pred = scores.columns[r.pick(0.0)].concept;
        let truth = scores.columns[r.label_col].concept;
        attr_hit += (pred.attr == truth.attr) as usize;
        obj_hit += (pred.obj == truth.obj) as usize;
        if !r.label_seen {
            unseen_n += 1;
            closed_hit += (r.unseen.map(|u| u.0) == Some(r.label_col)) as usize;
        }
    }
    let closed_unseen = percent(closed_hit, unseen_n);
    let has_both = rows.iter().any(|r| r.label_seen) && rows.iter().any(|r| !r.label_seen);
    let auc = if has_both {
        sweep_rows(scores, &rows, options)?.auc
    } else {
        0.0
    };
    Ok(MetricsReport {
        closed_unseen,
        open_unseen,
        open_seen,
        unseen_hm: harmonic_mean(closed_unseen, open_unseen),
        all_hm: harmonic_mean(open_unseen, open_seen),
        auc,
        attr_acc: percent(attr_hit, rows.len()),
        obj_acc: percent(obj_hit, rows.len()),
    })
}

/// Sweeps a bias added to unseen-concept scores over `bins` evenly spaced
/// values in `[-s_max, s_max]` (plus 0) and integrates open-unseen over
/// open-seen accuracy.
pub fn auc_bias_sweep(scores: &ScoreMatrix, labels: &[Concept], options: &SweepOptions) -> Result<BiasSweep> {
    let rows = row_summaries(scores, labels)?;
    if !rows.iter().any(|r| r.label_seen) || !rows.iter().any(|r| !r.label_seen) {
        return Err(TceError::Precondition(
            "bias sweep needs images of both seen and unseen concepts".into(),
        ));
    }
    sweep_rows(scores, &rows, options)
}

pub fn sweep_biases(s_max: f64, bins: usize) -> Vec<f64> {
    let mut out: Vec<f64> = match bins {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..bins)
            .map(|k| -s_max + 2.0 * s_max * k as f64 / (bins - 1) as f64)
            .collect(),
    };
    if !out.contains(&0.0) {
        out.push(0.0);
    }
    out.sort_by(f64::total_cmp);
    out
}

fn sweep_rows(scores: &ScoreMatrix, rows: &[RowBest], options: &SweepOptions) -> Result<BiasSweep> {
    if options.bins == 0 {
        return Err(TceError::Config("bins must be positive".into()));
    }
    let s_max = match options.smax_mode {
        SmaxMode::Global => scores.max_abs(),
        SmaxMode::PerImage => scores
            .scores
            .axis_iter(Axis(0))
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max).abs())
            .fold(0.0, f64::max),
    };
    let curve: Vec<CurvePoint> = sweep_biases(s_max, options.bins)
        .into_iter()
        .map(|bias| {
            let (open_seen, open_unseen) = open_accuracies(rows, bias);
            CurvePoint {
                bias,
                open_seen,
                open_unseen,
            }
        })
        .collect();
    let auc = curve_area(&curve);
    Ok(BiasSweep { auc, curve })
}

/// Trapezoidal area under open-unseen vs open-seen, divided by 100. Points
/// sharing an open-seen value collapse to their best open-unseen value and
/// the leftmost point extends flat to open-seen 0.
pub fn curve_area(curve: &[CurvePoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = curve.iter().map(|p| (p.open_seen, p.open_unseen)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for (x, y) in pts {
        match merged.last_mut() {
            Some(last) if last.0 == x => last.1 = last.1.max(y),
            _ => merged.push((x, y)),
        }
    }
    let Some(&(x0, y0)) = merged.first() else {
        return 0.0;
    };
    if x0 > 0.0 {
        merged.insert(0, (0.0, y0));
    }
    merged
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum::<f64>()
        / 100.0
}
