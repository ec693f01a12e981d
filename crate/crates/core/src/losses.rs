//! Training objectives.
//!
//! The per-term functions work on plain vectors and return gradients wrt
//! their inputs; [`tce_batch_loss`] assembles them over a mini-batch and
//! pushes the gradients back through every network of a [`TceModel`].
//! All per-sample terms are averaged over the batch.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;

use crate::diffcore::{distance, euclidean_distance, softmax_cross_entropy, variance, MlpGrads};
use crate::embedspace::Concept;
use crate::error::{shape_err, Result, TceError};
use crate::model::{LabelEmbedModel, TceGrads, TceModel, VisProdModel};

/// Semantic pairs closer than this are resampled.
pub const SEMANTIC_DISTANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub lambda_tri: f64,
    pub lambda_rec: f64,
    pub lambda_op: f64,
    pub lambda_rvc: f64,
    /// Margin of the object-prototype triplet term.
    pub margin_obj: f64,
    /// Margin of the concept triplet term.
    pub margin_concept: f64,
    /// Variance slack of the ratio variance constraint.
    pub margin_rvc: f64,
    pub rvc_pairs: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 1.0,
            lambda_tri: 1.0,
            lambda_rec: 1.0,
            lambda_op: 1.0,
            lambda_rvc: 0.01,
            margin_obj: 0.0,
            margin_concept: 0.5,
            margin_rvc: 5.0,
            rvc_pairs: 100,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_cls", self.lambda_cls),
            ("lambda_tri", self.lambda_tri),
            ("lambda_rec", self.lambda_rec),
            ("lambda_op", self.lambda_op),
            ("lambda_rvc", self.lambda_rvc),
            ("margin_obj", self.margin_obj),
            ("margin_concept", self.margin_concept),
            ("margin_rvc", self.margin_rvc),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TceError::Config(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        if self.lambda_rvc > 0.0 && self.rvc_pairs < 2 {
            return Err(TceError::Config("rvc_pairs must be at least 2".into()));
        }
        Ok(())
    }
}

/// Unweighted term values (batch means) and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub obj_cls: f64,
    pub obj_tri: f64,
    pub cls: f64,
    pub tri: f64,
    pub rec: f64,
    pub rvc: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const TERMS: [&'static str; 7] = ["obj_cls", "obj_tri", "cls", "tri", "rec", "rvc", "total"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.obj_cls,
            self.obj_tri,
            self.cls,
            self.tri,
            self.rec,
            self.rvc,
            self.total,
        ]
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        Self::TERMS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }
}

/// `max(0, d(anchor, pos) - d(anchor, neg) + margin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HingeGrads {
    pub anchor: Vec<f64>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
}

pub fn triplet_hinge(anchor: &[f64], pos: &[f64], neg: &[f64], margin: f64) -> Result<(f64, HingeGrads)> {
    let (dp, ga_p, gp) = euclidean_distance(anchor, pos)?;
    let (dn, ga_n, gn) = euclidean_distance(anchor, neg)?;
    let value = dp - dn + margin;
    if value <= 0.0 {
        let z = vec![0.0; anchor.len()];
        return Ok((
            0.0,
            HingeGrads {
                anchor: z.clone(),
                pos: z.clone(),
                neg: z,
            },
        ));
    }
    Ok((
        value,
        HingeGrads {
            anchor: ga_p.iter().zip(&ga_n).map(|(a, b)| a - b).collect(),
            pos: gp,
            neg: gn.iter().map(|g| -g).collect(),
        },
    ))
}

/// The two parts of the object-prototype loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjProtoTerms {
    pub cls: f64,
    pub tri: f64,
}

impl ObjProtoTerms {
    pub fn total(&self) -> f64 {
        self.cls + self.tri
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjProtoGrads {
    pub logits: Vec<f64>,
    pub image: Vec<f64>,
    pub prototype: Vec<f64>,
    pub neg_prototype: Vec<f64>,
}

/// Cross-entropy of the prototype classifier plus the prototype triplet term.
/// `proto_logits` are the classifier's logits for `prototype`.
pub fn object_prototype_loss(
    proto_logits: &[f64],
    obj_label: usize,
    image: &[f64],
    prototype: &[f64],
    neg_prototype: &[f64],
    margin: f64,
) -> Result<(ObjProtoTerms, ObjProtoGrads)> {
    let (cls, g_logits) = softmax_cross_entropy(proto_logits, obj_label)?;
    let (tri, g) = triplet_hinge(image, prototype, neg_prototype, margin)?;
    Ok((
        ObjProtoTerms { cls, tri },
        ObjProtoGrads {
            logits: g_logits,
            image: g.anchor,
            prototype: g.pos,
            neg_prototype: g.neg,
        },
    ))
}

/// Attribute plus object cross-entropy on a composed concept embedding's
/// classifier logits. Returns the gradients wrt both logit vectors.
pub fn concept_class_loss(
    attr_logits: &[f64],
    obj_logits: &[f64],
    attr_label: usize,
    obj_label: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (la, ga) = softmax_cross_entropy(attr_logits, attr_label)?;
    let (lo, go) = softmax_cross_entropy(obj_logits, obj_label)?;
    Ok((la + lo, ga, go))
}

pub fn concept_triplet_loss(
    image: &[f64],
    concept: &[f64],
    neg_concept: &[f64],
    margin: f64,
) -> Result<(f64, HingeGrads)> {
    triplet_hinge(image, concept, neg_concept, margin)
}

/// Plain (not squared) Euclidean distance between image and concept.
pub fn reconstruction_loss(image: &[f64], concept: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    euclidean_distance(image, concept)
}

pub fn concept_loss(weights: &LossWeights, cls: f64, tri: f64, rec: f64) -> f64 {
    weights.lambda_cls * cls + weights.lambda_tri * tri + weights.lambda_rec * rec
}

/// Combines term values into a breakdown with the weighted total.
pub fn total_loss(weights: &LossWeights, obj: ObjProtoTerms, cls: f64, tri: f64, rec: f64, rvc: f64) -> LossBreakdown {
    let total = concept_loss(weights, cls, tri, rec) + weights.lambda_op * obj.total() + weights.lambda_rvc * rvc;
    LossBreakdown {
        obj_cls: obj.cls,
        obj_tri: obj.tri,
        cls,
        tri,
        rec,
        rvc,
        total,
    }
}

/// One sampled concept pair for the ratio variance constraint: latent
/// embeddings and semantic embeddings of both concepts.
#[derive(Debug, Clone, Copy)]
pub struct RvcPair<'a> {
    pub latent_i: &'a [f64],
    pub latent_j: &'a [f64],
    pub semantic_i: &'a [f64],
    pub semantic_j: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvcPairGrads {
    pub latent_i: Vec<f64>,
    pub latent_j: Vec<f64>,
    pub semantic_i: Vec<f64>,
    pub semantic_j: Vec<f64>,
}

/// `max(0, var({d(x_i, x_j) / d(e_i, e_j)}) - margin)` over the given pairs.
pub fn rvc_loss(pairs: &[RvcPair<'_>], margin: f64) -> Result<(f64, Vec<RvcPairGrads>)> {
    if pairs.len() < 2 {
        return Err(TceError::Precondition(format!(
            "ratio variance needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut parts = Vec::with_capacity(pairs.len());
    for p in pairs {
        let (dx, gxi, gxj) = euclidean_distance(p.latent_i, p.latent_j)?;
        let (ds, gsi, gsj) = euclidean_distance(p.semantic_i, p.semantic_j)?;
        if ds < SEMANTIC_DISTANCE_FLOOR {
            return Err(TceError::Precondition(format!(
                "semantic distance {ds} below floor {SEMANTIC_DISTANCE_FLOOR}"
            )));
        }
        ratios.push(dx / ds);
        parts.push((dx, ds, gxi, gxj, gsi, gsj));
    }
    let (var, g_ratio) = variance(&ratios)?;
    let value = var - margin;
    if value <= 0.0 {
        let grads = pairs
            .iter()
            .map(|p| RvcPairGrads {
                latent_i: vec![0.0; p.latent_i.len()],
                latent_j: vec![0.0; p.latent_j.len()],
                semantic_i: vec![0.0; p.semantic_i.len()],
                semantic_j: vec![0.0; p.semantic_j.len()],
            })
            .collect();
        return Ok((0.0, grads));
    }
    let grads = parts
        .into_iter()
        .zip(g_ratio)
        .map(|((dx, ds, gxi, gxj, gsi, gsj), gr)| {
            let kx = gr / ds;
            let ks = -gr * dx / (ds * ds);
            RvcPairGrads {
                latent_i: gxi.iter().map(|g| kx * g).collect(),
                latent_j: gxj.iter().map(|g| kx * g).collect(),
                semantic_i: gsi.iter().map(|g| ks * g).collect(),
                semantic_j: gsj.iter().map(|g| ks * g).collect(),
            }
        })
        .collect();
    Ok((value, grads))
}

/// Samples `count` ordered pairs of distinct concepts uniformly from `pool`.
/// Pairs whose semantic embeddings (as given by `semantic`) are closer than
/// [`SEMANTIC_DISTANCE_FLOOR`] are redrawn.
pub fn sample_rvc_pairs<R: Rng + ?Sized, F>(
    pool: &[Concept],
    count: usize,
    semantic: F,
    rng: &mut R,
) -> Result<Vec<(Concept, Concept)>>
where
    F: Fn(Concept) -> Vec<f64>,
{
    if pool.len() < 2 {
        return Err(TceError::Precondition(format!(
            "need at least 2 concepts for ratio pairs, got {}",
            pool.len()
        )));
    }
    let budget = count.saturating_mul(100).max(1000);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0;
    while out.len() < count {
        draws += 1;
        if draws > budget {
            return Err(TceError::Numeric(
                "could not find concept pairs with distinct semantic embeddings".into(),
            ));
        }
        let i = rng.random_range(0..pool.len());
        let mut j = rng.random_range(0..pool.len() - 1);
        if j >= i {
            j += 1;
        }
        let (ci, cj) = (pool[i], pool[j]);
        if distance(&semantic(ci), &semantic(cj)) < SEMANTIC_DISTANCE_FLOOR {
            continue;
        }
        out.push((ci, cj));
    }
    Ok(out)
}

/// Everything one optimization step of the TCE model consumes.
#[derive(Debug, Clone)]
pub struct TceBatch {
    /// Image features, one row per sample.
    pub features: Array2<f64>,
    pub labels: Vec<Concept>,
    pub neg_objs: Vec<usize>,
    pub neg_concepts: Vec<Concept>,
    pub rvc_pairs: Vec<(Concept, Concept)>,
}

/// Semantic embedding source for the ratio variance constraint.
#[derive(Debug, Clone, Copy)]
pub enum Semantics<'a> {
    /// The model's current (trainable) tables; gradients flow into them.
    Live,
    /// Fixed `(attr, obj)` tables.
    Frozen(&'a Array2<f64>, &'a Array2<f64>),
}

impl TceBatch {
    fn validate(&self, model: &TceModel) -> Result<()> {
        let b = self.features.nrows();
        if b == 0 {
            return Err(TceError::Precondition("empty batch".into()));
        }
        if self.labels.len() != b || self.neg_objs.len() != b || self.neg_concepts.len() != b {
            return Err(shape_err!(
                "batch of {b} features with {} labels, {} negative objects, {} negative concepts",
                self.labels.len(),
                self.neg_objs.len(),
                self.neg_concepts.len()
            ));
        }
        let n = model.dims().num_objs;
        if let Some(o) = self.neg_objs.iter().find(|&&o| o >= n) {
            return Err(TceError::Index(format!("negative object {o} out of range")));
        }
        Ok(())
    }
}

fn row(a: &Array2<f64>, i: usize) -> &[f64] {
    a.row(i).to_slice().expect("standard layout")
}

fn add_row(dst: &mut Array2<f64>, i: usize, src: &[f64], scale: f64) {
    dst.row_mut(i).scaled_add(scale, &ArrayView1::from(src));
}

/// Mean batch loss of the full TCE objective and its gradient wrt every
/// model tensor. Terms whose weight is zero are skipped and reported as 0.
pub fn tce_batch_loss(
    model: &TceModel,
    batch: &TceBatch,
    weights: &LossWeights,
    semantics: Semantics<'_>,
) -> Result<(LossBreakdown, TceGrads)> {
    batch.validate(model)?;
    let dims = model.dims();
    let d = dims.latent_dim;
    let b = batch.features.nrows();
    let inv_b = 1.0 / b as f64;
    let use_op = weights.lambda_op > 0.0;
    let use_cls = weights.lambda_cls > 0.0;
    let use_tri = weights.lambda_tri > 0.0;
    let use_rec = weights.lambda_rec > 0.0;
    let use_rvc = weights.lambda_rvc > 0.0;

    let mut grads = model.zero_grads();

    let (images, tape_img) = model.image_mapper.forward_batch(batch.features.view())?;
    let (protos, tape_proto) = model.obj_proto.forward_batch(model.obj_table.view())?;

    // concepts whose embedding this step needs, each computed once
    let mut needed: BTreeMap<Concept, usize> = BTreeMap::new();
    if use_cls || use_tri || use_rec {
        needed.extend(batch.labels.iter().map(|&c| (c, 0)));
    }
    if use_tri {
        needed.extend(batch.neg_concepts.iter().map(|&c| (c, 0)));
    }
    if use_rvc {
        needed.extend(batch.rvc_pairs.iter().flat_map(|&(a, b)| [(a, 0), (b, 0)]));
    }
    let concepts: Vec<Concept> = needed.keys().copied().collect();
    for (k, v) in needed.values_mut().enumerate() {
        *v = k;
    }
    model.check_concepts(&concepts)?;
    let slot = |c: &Concept| needed[c];

    let mut g_images = Array2::<f64>::zeros(images.dim());
    let mut g_protos = Array2::<f64>::zeros(protos.dim());

    let mut obj_terms = ObjProtoTerms { cls: 0.0, tri: 0.0 };
    if use_op {
        let (logits, tape_head) = model.head_obj_proto.forward_batch(protos.view())?;
        let mut g_logits = Array2::<f64>::zeros(logits.dim());
        let scale = weights.lambda_op * inv_b;
        for i in 0..b {
            let o = batch.labels[i].obj;
            let o_neg = batch.neg_objs[i];
            let (t, g) = object_prototype_loss(
                row(&logits, o),
                o,
                row(&images, i),
                row(&protos, o),
                row(&protos, o_neg),
                weights.margin_obj,
            )?;
            obj_terms.cls += t.cls * inv_b;
            obj_terms.tri += t.tri * inv_b;
            add_row(&mut g_logits, o, &g.logits, scale);
            add_row(&mut g_images, i, &g.image, scale);
            add_row(&mut g_protos, o, &g.prototype, scale);
            add_row(&mut g_protos, o_neg, &g.neg_prototype, scale);
        }
        let (head_grads, g_in) = model.head_obj_proto.backward_batch(&tape_head, g_logits.view())?;
        grads.head_obj_proto = head_grads;
        g_protos += &g_in;
    }

    let (mut cls, mut tri, mut rec, mut rvc) = (0.0, 0.0, 0.0, 0.0);
    if !concepts.is_empty() {
        let input = model.translation_inputs(&protos, &concepts);
        let (mut gallery, tape_tr) = model.attr_translate.forward_batch(input.view())?;
        for (mut r, c) in gallery.rows_mut().into_iter().zip(&concepts) {
            r += &protos.row(c.obj);
        }
        let mut g_gallery = Array2::<f64>::zeros(gallery.dim());

        if use_cls {
            let (attr_logits, tape_a) = model.head_attr.forward_batch(gallery.view())?;
            let (obj_logits, tape_o) = model.head_obj.forward_batch(gallery.view())?;
            let mut ga = Array2::<f64>::zeros(attr_logits.dim());
            let mut go = Array2::<f64>::zeros(obj_logits.dim());
            let scale = weights.lambda_cls * inv_b;
            for c in &batch.labels {
                let k = slot(c);
                let (l, g_a, g_o) = concept_class_loss(row(&attr_logits, k), row(&obj_logits, k), c.attr, c.obj)?;
                cls += l * inv_b;
                add_row(&mut ga, k, &g_a, scale);
                add_row(&mut go, k, &g_o, scale);
            }
            let (hg_a, gin_a) = model.head_attr.backward_batch(&tape_a, ga.view())?;
            let (hg_o, gin_o) = model.head_obj.backward_batch(&tape_o, go.view())?;
            grads.head_attr = hg_a;
            grads.head_obj = hg_o;
            g_gallery += &gin_a;
            g_gallery += &gin_o;
        }

        if use_tri {
            let scale = weights.lambda_tri * inv_b;
            for i in 0..b {
                let (kp, kn) = (slot(&batch.labels[i]), slot(&batch.neg_concepts[i]));
                let (l, g) = concept_triplet_loss(
                    row(&images, i),
                    row(&gallery, kp),
                    row(&gallery, kn),
                    weights.margin_concept,
                )?;
                tri += l * inv_b;
                add_row(&mut g_images, i, &g.anchor, scale);
                add_row(&mut g_gallery, kp, &g.pos, scale);
                add_row(&mut g_gallery, kn, &g.neg, scale);
            }
        }

        if use_rec {
            let scale = weights.lambda_rec * inv_b;
            for i in 0..b {
                let k = slot(&batch.labels[i]);
                let (l, gi, gc) = reconstruction_loss(row(&images, i), row(&gallery, k))?;
                rec += l * inv_b;
                add_row(&mut g_images, i, &gi, scale);
                add_row(&mut g_gallery, k, &gc, scale);
            }
        }

        if use_rvc {
            let (attr_src, obj_src) = match semantics {
                Semantics::Live => (&model.attr_table, &model.obj_table),
                Semantics::Frozen(a, o) => (a, o),
            };
            if attr_src.dim() != model.attr_table.dim() || obj_src.dim() != model.obj_table.dim() {
                return Err(shape_err!("frozen semantic tables do not match the model"));
            }
            let sem = |c: Concept| -> Vec<f64> {
                attr_src
                    .row(c.attr)
                    .iter()
                    .zip(obj_src.row(c.obj))
                    .map(|(a, o)| a + o)
                    .collect()
            };
            let semantic: Vec<(Vec<f64>, Vec<f64>)> =
                batch.rvc_pairs.iter().map(|&(ci, cj)| (sem(ci), sem(cj))).collect();
            let pairs: Vec<RvcPair<'_>> = batch
                .rvc_pairs
                .iter()
                .zip(&semantic)
                .map(|((ci, cj), (si, sj))| RvcPair {
                    latent_i: row(&gallery, slot(ci)),
                    latent_j: row(&gallery, slot(cj)),
                    semantic_i: si,
                    semantic_j: sj,
                })
                .collect();
            let (l, pair_grads) = rvc_loss(&pairs, weights.margin_rvc)?;
            rvc = l;
            let scale = weights.lambda_rvc;
            for ((ci, cj), g) in batch.rvc_pairs.iter().zip(&pair_grads) {
                add_row(&mut g_gallery, slot(ci), &g.latent_i, scale);
                add_row(&mut g_gallery, slot(cj), &g.latent_j, scale);
                if matches!(semantics, Semantics::Live) {
                    for (c, gs) in [(ci, &g.semantic_i), (cj, &g.semantic_j)] {
                        add_row(&mut grads.attr_table, c.attr, gs, scale);
                        add_row(&mut grads.obj_table, c.obj, gs, scale);
                    }
                }
            }
        }

        // concept = prototype + translation
        for (g, c) in g_gallery.rows().into_iter().zip(&concepts) {
            g_protos.row_mut(c.obj).scaled_add(1.0, &g);
        }
        let (tr_grads, g_input) = model.attr_translate.backward_batch(&tape_tr, g_gallery.view())?;
        grads.attr_translate = tr_grads;
        for (g, c) in g_input.rows().into_iter().zip(&concepts) {
            g_protos.row_mut(c.obj).scaled_add(1.0, &g.slice(s![..d]));
            grads.attr_table.row_mut(c.attr).scaled_add(1.0, &g.slice(s![d..]));
        }
    }

    let (proto_grads, g_obj_table) = model.obj_proto.backward_batch(&tape_proto, g_protos.view())?;
    grads.obj_proto = proto_grads;
    grads.obj_table += &g_obj_table;
    let (img_grads, _) = model.image_mapper.backward_batch(&tape_img, g_images.view())?;
    grads.image_mapper = img_grads;

    let breakdown = total_loss(weights, obj_terms, cls, tri, rec, rvc);
    Ok((breakdown, grads))
}

/// Training batch for the baselines: features and concept labels, plus
/// negatives for the label-embedding triplet loss.
#[derive(Debug, Clone)]
pub struct BaselineBatch {
    pub features: Array2<f64>,
    pub labels: Vec<Concept>,
    pub neg_concepts: Vec<Concept>,
}

/// Mean attribute + object cross-entropy of the product-of-classifiers
/// baseline. The value is reported in the `cls` slot.
pub fn visprod_batch_loss(
    model: &VisProdModel,
    batch: &BaselineBatch,
) -> Result<(LossBreakdown, (MlpGrads, MlpGrads))> {
    let b = batch.features.nrows();
    if b == 0 || batch.labels.len() != b {
        return Err(shape_err!("batch of {b} features with {} labels", batch.labels.len()));
    }
    let inv_b = 1.0 / b as f64;
    let (attr_logits, tape_a) = model.attr_net.forward_batch(batch.features.view())?;
    let (obj_logits, tape_o) = model.obj_net.forward_batch(batch.features.view())?;
    let mut ga = Array2::<f64>::zeros(attr_logits.dim());
    let mut go = Array2::<f64>::zeros(obj_logits.dim());
    let mut cls = 0.0;
    for (i, c) in batch.labels.iter().enumerate() {
        let (l, g_a, g_o) = concept_class_loss(row(&attr_logits, i), row(&obj_logits, i), c.attr, c.obj)?;
        cls += l * inv_b;
        add_row(&mut ga, i, &g_a, inv_b);
        add_row(&mut go, i, &g_o, inv_b);
    }
    let (grad_a, _) = model.attr_net.backward_batch(&tape_a, ga.view())?;
    let (grad_o, _) = model.obj_net.backward_batch(&tape_o, go.view())?;
    let breakdown = LossBreakdown {
        cls,
        total: cls,
        ..Default::default()
    };
    Ok((breakdown, (grad_a, grad_o)))
}

/// Gradients of a [`LabelEmbedModel`], in its declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedGrads {
    pub image_mapper: MlpGrads,
    pub concept_net: MlpGrads,
    pub attr_table: Array2<f64>,
    pub obj_table: Array2<f64>,
}

impl LabelEmbedGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = self.image_mapper.tensors();
        out.extend(self.concept_net.tensors());
        out.push(self.attr_table.as_slice().expect("standard layout"));
        out.push(self.obj_table.as_slice().expect("standard layout"));
        out
    }
}

/// Mean triplet loss of the label-embedding baseline (reported in `tri`).
pub fn labelembed_batch_loss(
    model: &LabelEmbedModel,
    batch: &BaselineBatch,
    margin: f64,
) -> Result<(LossBreakdown, LabelEmbedGrads)> {
    let b = batch.features.nrows();
    if b == 0 || batch.labels.len() != b || batch.neg_concepts.len() != b {
        return Err(shape_err!("inconsistent baseline batch of {b} rows"));
    }
    let inv_b = 1.0 / b as f64;
    let w = model.word_dim();
    let (images, tape_img) = model.image_mapper.forward_batch(batch.features.view())?;
    let needed: BTreeMap<Concept, usize> = batch
        .labels
        .iter()
        .chain(&batch.neg_concepts)
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, c)| (c, k))
        .collect();
    let concepts: Vec<Concept> = needed.keys().copied().collect();
    let input = model.concept_inputs(&concepts)?;
    let (gallery, tape_c) = model.concept_net.forward_batch(input.view())?;
    let mut g_images = Array2::<f64>::zeros(images.dim());
    let mut g_gallery = Array2::<f64>::zeros(gallery.dim());
    let mut tri = 0.0;
    for i in 0..b {
        let (kp, kn) = (needed[&batch.labels[i]], needed[&batch.neg_concepts[i]]);
        let (l, g) = triplet_hinge(row(&images, i), row(&gallery, kp), row(&gallery, kn), margin)?;
        tri += l * inv_b;
        add_row(&mut g_images, i, &g.anchor, inv_b);
        add_row(&mut g_gallery, kp, &g.pos, inv_b);
        add_row(&mut g_gallery, kn, &g.neg, inv_b);
    }
    let (net_grads, g_input) = model.concept_net.backward_batch(&tape_c, g_gallery.view())?;
    let mut attr_table = Array2::<f64>::zeros(model.attr_table.dim());
    let mut obj_table = Array2::<f64>::zeros(model.obj_table.dim());
    for (g, c) in g_input.rows().into_iter().zip(&concepts) {
        attr_table.row_mut(c.attr).scaled_add(1.0, &g.slice(s![..w]));
        obj_table.row_mut(c.obj).scaled_add(1.0, &g.slice(s![w..]));
    }
    let (img_grads, _) = model.image_mapper.backward_batch(&tape_img, g_images.view())?;
    let breakdown = LossBreakdown {
        tri,
        total: tri,
        ..Default::default()
    };
    Ok((
        breakdown,
        LabelEmbedGrads {
            image_mapper: img_grads,
            concept_net: net_grads,
            attr_table,
            obj_table,
        },
    ))
}
