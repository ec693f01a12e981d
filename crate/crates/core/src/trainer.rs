//! Training loop, validation-based model selection and the loss ablation.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;

use crate::config::TrainConfig;
use crate::dataforge::{sample_negatives, Dataset, Split};
use crate::diffcore::{AdamConfig, AdamState, Param};
use crate::embedspace::{Concept, WordVecTable};
use crate::error::{Result, TceError};
use crate::eval::{auc_bias_sweep, compute_metrics, score_images, BiasSweep, MetricsReport, SweepOptions};
use crate::losses::{
    labelembed_batch_loss, sample_rvc_pairs, tce_batch_loss, visprod_batch_loss, BaselineBatch, LossBreakdown,
    LossWeights, Semantics, TceBatch,
};
use crate::model::{LabelEmbedModel, Model, ModelKind, ParamGroup, TceDims, TceModel, VisProdModel};
use crate::rng::{stream, substream, Stream};

/// Fresh model of the configured kind. Word-vector tables seed the embedding
/// tables of the models that have them.
pub fn init_model(dataset: &Dataset, words: &WordVecTable, config: &TrainConfig) -> Result<Model> {
    let space = dataset.space();
    let mut rng = stream(config.seed, Stream::Init);
    let f = dataset.feature_dim();
    Ok(match config.model {
        ModelKind::Tce => Model::Tce(TceModel::new(
            TceDims {
                num_attrs: space.num_attrs(),
                num_objs: space.num_objs(),
                feature_dim: f,
                latent_dim: config.latent_dim,
                word_dim: words.dim(),
                hidden_dim: config.hidden_dim,
            },
            words.matrix(space.attributes())?,
            words.matrix(space.objects())?,
            &mut rng,
        )?),
        ModelKind::VisProd => Model::VisProd(VisProdModel::new(
            f,
            config.visprod_hidden,
            space.num_attrs(),
            space.num_objs(),
            &mut rng,
        )?),
        ModelKind::LabelEmbed => Model::LabelEmbed(LabelEmbedModel::new(
            f,
            words.dim(),
            words.matrix(space.attributes())?,
            words.matrix(space.objects())?,
            &mut rng,
        )?),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub val: Option<MetricsReport>,
}

/// Everything needed to recompute one logged batch loss.
#[derive(Debug, Clone)]
pub struct BatchRecord {
    pub epoch: usize,
    pub indices: Vec<usize>,
    pub neg_objs: Vec<usize>,
    pub neg_concepts: Vec<Concept>,
    pub rvc_pairs: Vec<(Concept, Concept)>,
    /// Parameters the loss was evaluated at.
    pub model: Model,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub best_val: Option<MetricsReport>,
    /// Filled only when batch recording is requested.
    pub batches: Vec<BatchRecord>,
}

impl TrainLog {
    /// One row per epoch; validation columns are empty on epochs without
    /// validation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch");
        for t in LossBreakdown::TERMS {
            write!(out, ",{t}").expect("string write");
        }
        out.push_str(",val_open_seen,val_open_unseen,val_all_hm\n");
        for e in &self.epochs {
            write!(out, "{}", e.epoch).expect("string write");
            for v in e.loss.values() {
                write!(out, ",{v}").expect("string write");
            }
            match &e.val {
                Some(r) => writeln!(out, ",{:.2},{:.2},{:.2}", r.open_seen, r.open_unseen, r.all_hm),
                None => writeln!(out, ",,,"),
            }
            .expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation all-HM (the last ones when no
    /// validation ran).
    pub best: Model,
    pub last: Model,
    pub log: TrainLog,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Keep a [`BatchRecord`] (including a parameter snapshot) per batch.
    pub record_batches: bool,
}

/// Scores a split and computes its metrics.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    options: &SweepOptions,
    threads: usize,
) -> Result<MetricsReport> {
    let (features, labels) = dataset.eval_split(split);
    let scores = score_images(model, dataset.space(), features.view(), threads)?;
    compute_metrics(&scores, &labels, options)
}

/// Metrics plus the bias-sweep curve of a split.
pub fn evaluate_with_curve(
    model: &Model,
    dataset: &Dataset,
    split: Split,
    options: &SweepOptions,
    threads: usize,
) -> Result<(MetricsReport, BiasSweep)> {
    let (features, labels) = dataset.eval_split(split);
    let scores = score_images(model, dataset.space(), features.view(), threads)?;
    let report = compute_metrics(&scores, &labels, options)?;
    let sweep = auc_bias_sweep(&scores, &labels, options)?;
    Ok((report, sweep))
}

fn check_finite(loss: &LossBreakdown, epoch: usize, batch: usize) -> Result<()> {
    match loss.non_finite_term() {
        Some(term) => Err(TceError::Numeric(format!(
            "non-finite {term} loss at epoch {epoch}, batch {batch}"
        ))),
        None => Ok(()),
    }
}

fn adam_step(model: &mut Model, grads: &[&[f64]], adam: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(TceError::Numeric("non-finite gradient".into()));
    }
    let mut params: Vec<Param<'_>> = model
        .params_mut()
        .tensors_mut()
        .into_iter()
        .map(|(group, value)| Param {
            value,
            lr: match group {
                ParamGroup::Main => config.lr_main,
                ParamGroup::AttrTable => config.lr_attr_table,
            },
        })
        .collect();
    adam.step(&mut params, grads)
}

/// Loss of one batch and its gradient, one vector per parameter tensor.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    model: &Model,
    dataset: &Dataset,
    indices: &[usize],
    neg_objs: &[usize],
    neg_concepts: &[Concept],
    rvc_pairs: &[(Concept, Concept)],
    config: &TrainConfig,
    frozen: Option<&(Array2<f64>, Array2<f64>)>,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let features = dataset.gradient_rows(indices)?;
    let labels: Vec<Concept> = indices.iter().map(|&i| dataset.labels()[i]).collect();
    let owned = |ts: Vec<&[f64]>| ts.into_iter().map(<[f64]>::to_vec).collect::<Vec<_>>();
    match model {
        Model::Tce(m) => {
            let batch = TceBatch {
                features,
                labels,
                neg_objs: neg_objs.to_vec(),
                neg_concepts: neg_concepts.to_vec(),
                rvc_pairs: rvc_pairs.to_vec(),
            };
            let semantics = match frozen {
                Some((a, o)) => Semantics::Frozen(a, o),
                None => Semantics::Live,
            };
            let (loss, grads) = tce_batch_loss(m, &batch, &config.weights, semantics)?;
            Ok((loss, owned(grads.tensors())))
        }
        Model::VisProd(m) => {
            let batch = BaselineBatch {
                features,
                labels,
                neg_concepts: neg_concepts.to_vec(),
            };
            let (loss, (ga, go)) = visprod_batch_loss(m, &batch)?;
            let mut ts = owned(ga.tensors());
            ts.extend(owned(go.tensors()));
            Ok((loss, ts))
        }
        Model::LabelEmbed(m) => {
            let batch = BaselineBatch {
                features,
                labels,
                neg_concepts: neg_concepts.to_vec(),
            };
            let (loss, grads) = labelembed_batch_loss(m, &batch, config.labelembed_margin)?;
            Ok((loss, owned(grads.tensors())))
        }
    }
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let k = parts.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / k;
    LossBreakdown {
        obj_cls: sum(|b| b.obj_cls),
        obj_tri: sum(|b| b.obj_tri),
        cls: sum(|b| b.cls),
        tri: sum(|b| b.tri),
        rec: sum(|b| b.rec),
        rvc: sum(|b| b.rvc),
        total: sum(|b| b.total),
    }
}

fn semantic_of(model: &Model, frozen: Option<&(Array2<f64>, Array2<f64>)>, c: Concept) -> Vec<f64> {
    let (a, o) = match (frozen, model) {
        (Some((a, o)), _) => (a, o),
        (None, Model::Tce(m)) => (m.attr_table(), m.obj_table()),
        (None, _) => unreachable!("ratio pairs are only sampled for the TCE model"),
    };
    a.row(c.attr).iter().zip(o.row(c.obj)).map(|(x, y)| x + y).collect()
}

/// Trains a model from scratch. Deterministic given the configuration.
pub fn train(
    dataset: &Dataset,
    words: &WordVecTable,
    config: &TrainConfig,
    options: TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut model = init_model(dataset, words, config)?;
    let space = dataset.space();
    let train_idx = dataset.split_indices(Split::Train);
    if train_idx.is_empty() {
        return Err(TceError::Precondition("dataset has no training samples".into()));
    }
    let weight_decay = match config.model {
        ModelKind::Tce => 0.0,
        _ => config.baseline_weight_decay,
    };
    let mut adam = AdamState::new(AdamConfig {
        weight_decay,
        ..AdamConfig::default()
    });
    let use_rvc = config.model == ModelKind::Tce && config.weights.lambda_rvc > 0.0;
    let rvc_pool: Vec<Concept> = if config.rvc_include_unseen {
        space.all_concepts()
    } else {
        space.seen().to_vec()
    };
    let frozen = match (&model, config.rvc_frozen_semantics) {
        (Model::Tce(m), true) => Some((m.attr_table().clone(), m.obj_table().clone())),
        _ => None,
    };
    let has_val = dataset.split_len(Split::Val) > 0;
    let sweep = config.sweep_options();

    let mut log = TrainLog::default();
    let mut best: Option<(f64, Model)> = None;
    let mut order = train_idx;
    for epoch in 1..=config.epochs {
        let mut rng = substream(config.seed, Stream::Sampling, epoch as u64);
        order.shuffle(&mut rng);
        let labels: Vec<Concept> = order.iter().map(|&i| dataset.labels()[i]).collect();
        let (neg_objs, neg_concepts) = sample_negatives(&labels, space, &mut rng)?;
        let mut parts = Vec::new();
        for (b, start) in (0..order.len()).step_by(config.batch_size).enumerate() {
            let end = (start + config.batch_size).min(order.len());
            let idx = &order[start..end];
            let pairs = if use_rvc {
                sample_rvc_pairs(
                    &rvc_pool,
                    config.weights.rvc_pairs,
                    |c| semantic_of(&model, frozen.as_ref(), c),
                    &mut rng,
                )?
            } else {
                Vec::new()
            };
            let (loss, grads) = batch_loss(
                &model,
                dataset,
                idx,
                &neg_objs[start..end],
                &neg_concepts[start..end],
                &pairs,
                config,
                frozen.as_ref(),
            )?;
            check_finite(&loss, epoch, b)?;
            if options.record_batches {
                log.batches.push(BatchRecord {
                    epoch,
                    indices: idx.to_vec(),
                    neg_objs: neg_objs[start..end].to_vec(),
                    neg_concepts: neg_concepts[start..end].to_vec(),
                    rvc_pairs: pairs,
                    model: model.clone(),
                    loss,
                });
            }
            let views: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam_step(&mut model, &views, &mut adam, config)?;
            parts.push(loss);
        }
        let loss = mean_breakdown(&parts);
        let val = if has_val && (epoch % config.eval_every == 0 || epoch == config.epochs) {
            let r = evaluate(&model, dataset, Split::Val, &sweep, config.threads)?;
            log::info!(
                "epoch {epoch}: loss {:.4}, val open seen {:.2}, open unseen {:.2}, all hm {:.2}",
                loss.total,
                r.open_seen,
                r.open_unseen,
                r.all_hm
            );
            if best.as_ref().is_none_or(|(hm, _)| r.all_hm > *hm) {
                best = Some((r.all_hm, model.clone()));
                log.best_epoch = Some(epoch);
                log.best_val = Some(r);
            }
            Some(r)
        } else {
            log::debug!("epoch {epoch}: loss {:.4}", loss.total);
            None
        };
        log.epochs.push(EpochRecord { epoch, loss, val });
    }
    let best = match best {
        Some((_, m)) => m,
        None => {
            log.best_epoch = Some(config.epochs);
            model.clone()
        }
    };
    Ok(TrainOutcome { best, last: model, log })
}

/// Loss weights of the six loss-subset variants, in table order.
pub fn ablation_variants(base: &LossWeights) -> Vec<(&'static str, LossWeights)> {
    let only = |cls: bool, rec: bool, op: bool, rvc: bool| LossWeights {
        lambda_cls: if cls { base.lambda_cls } else { 0.0 },
        lambda_rec: if rec { base.lambda_rec } else { 0.0 },
        lambda_op: if op { base.lambda_op } else { 0.0 },
        lambda_rvc: if rvc { base.lambda_rvc } else { 0.0 },
        ..*base
    };
    vec![
        ("(1) tri", only(false, false, false, false)),
        ("(2) tri+cls", only(true, false, false, false)),
        ("(3) tri+cls+rec", only(true, true, false, false)),
        ("(4) tri+cls+rec+op", only(true, true, true, false)),
        ("(5) tri+rec+op+rvc", only(false, true, true, true)),
        ("(6) tri+cls+rec+op+rvc", only(true, true, true, true)),
    ]
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub weights: LossWeights,
    pub test: MetricsReport,
    pub last_loss: LossBreakdown,
}

/// Trains every loss-subset variant of the TCE model with `base`'s other
/// settings and reports test metrics of each selected model.
pub fn ablation_matrix(dataset: &Dataset, words: &WordVecTable, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (variant, weights) in ablation_variants(&base.weights) {
        let config = TrainConfig {
            model: ModelKind::Tce,
            weights,
            ..base.clone()
        };
        log::info!("ablation variant {variant}");
        let outcome = train(dataset, words, &config, TrainOptions::default())?;
        let test = evaluate(
            &outcome.best,
            dataset,
            Split::Test,
            &config.sweep_options(),
            config.threads,
        )?;
        let last_loss = outcome.log.epochs.last().map(|e| e.loss).unwrap_or_default();
        rows.push(AblationRow {
            variant,
            weights,
            test,
            last_loss,
        });
    }
    Ok(rows)
}

/// `variant,attr_acc,obj_acc,open_unseen,open_seen,all_hm` CSV.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,attr_acc,obj_acc,open_unseen,open_seen,all_hm\n");
    for r in rows {
        let t = &r.test;
        writeln!(
            out,
            "{},{:.2},{:.2},{:.2},{:.2},{:.2}",
            r.variant, t.attr_acc, t.obj_acc, t.open_unseen, t.open_seen, t.all_hm
        )
        .expect("string write");
    }
    out
}
