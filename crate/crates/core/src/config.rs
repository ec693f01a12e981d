//! Flat `key = value` configuration files and the training configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Result, TceError};
use crate::eval::{SmaxMode, SweepOptions};
use crate::losses::LossWeights;
use crate::model::ModelKind;

/// Parses `key = value` lines. `#` starts a comment line; blank lines are
/// skipped; keys may not repeat.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| TceError::Config(format!("line {}: expected `key = value`", k + 1)))?;
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(TceError::Config(format!("line {}: bad key {key:?}", k + 1)));
        }
        if out.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(TceError::Config(format!("line {}: duplicate key {key:?}", k + 1)));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| TceError::Config(format!("invalid value {value:?} for {key}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_main: f64,
    /// Learning rate of the TCE attribute embedding table.
    pub lr_attr_table: f64,
    /// L2 weight decay of the baselines (TCE trains without).
    pub baseline_weight_decay: f64,
    pub weights: LossWeights,
    /// Sample ratio-variance pairs from all concepts instead of seen ones.
    pub rvc_include_unseen: bool,
    /// Use the initial word vectors, not the trained tables, as semantic
    /// embeddings in the ratio variance term.
    pub rvc_frozen_semantics: bool,
    pub seed: u64,
    pub eval_every: usize,
    pub latent_dim: usize,
    /// Hidden width of the attribute translation network.
    pub hidden_dim: usize,
    pub visprod_hidden: usize,
    pub labelembed_margin: f64,
    /// Word-vector width when no vector file is supplied.
    pub word_dim: usize,
    pub bins: usize,
    pub auc_smax_mode: SmaxMode,
    /// Evaluation threads; training is always single-threaded.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Tce,
            epochs: 1200,
            batch_size: 512,
            lr_main: 1e-4,
            lr_attr_table: 1e-5,
            baseline_weight_decay: 5e-5,
            weights: LossWeights::default(),
            rvc_include_unseen: false,
            rvc_frozen_semantics: false,
            seed: 0,
            eval_every: 10,
            latent_dim: 256,
            hidden_dim: 256,
            visprod_hidden: 512,
            labelembed_margin: 0.5,
            word_dim: 300,
            bins: 100,
            auc_smax_mode: SmaxMode::Global,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 28] = [
        "model",
        "epochs",
        "batch_size",
        "lr_main",
        "lr_attr_table",
        "baseline_weight_decay",
        "lambda_cls",
        "lambda_tri",
        "lambda_rec",
        "lambda_op",
        "lambda_rvc",
        "margin_obj",
        "margin_concept",
        "margin_rvc",
        "rvc_pairs",
        "rvc_include_unseen",
        "rvc_frozen_semantics",
        "seed",
        "eval_every",
        "latent_dim",
        "hidden_dim",
        "visprod_hidden",
        "labelembed_margin",
        "word_dim",
        "bins",
        "auc_smax_mode",
        "threads",
        "variance",
    ];

    /// Sets one key. Unknown keys are configuration errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let w = &mut self.weights;
        match key {
            "model" => self.model = value.parse()?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr_main" => self.lr_main = parse_value(key, value)?,
            "lr_attr_table" => self.lr_attr_table = parse_value(key, value)?,
            "baseline_weight_decay" => self.baseline_weight_decay = parse_value(key, value)?,
            "lambda_cls" => w.lambda_cls = parse_value(key, value)?,
            "lambda_tri" => w.lambda_tri = parse_value(key, value)?,
            "lambda_rec" => w.lambda_rec = parse_value(key, value)?,
            "lambda_op" => w.lambda_op = parse_value(key, value)?,
            "lambda_rvc" => w.lambda_rvc = parse_value(key, value)?,
            "margin_obj" => w.margin_obj = parse_value(key, value)?,
            "margin_concept" => w.margin_concept = parse_value(key, value)?,
            "margin_rvc" => w.margin_rvc = parse_value(key, value)?,
            "rvc_pairs" => w.rvc_pairs = parse_value(key, value)?,
            "rvc_include_unseen" => self.rvc_include_unseen = parse_value(key, value)?,
            "rvc_frozen_semantics" => self.rvc_frozen_semantics = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "latent_dim" => self.latent_dim = parse_value(key, value)?,
            "hidden_dim" => self.hidden_dim = parse_value(key, value)?,
            "visprod_hidden" => self.visprod_hidden = parse_value(key, value)?,
            "labelembed_margin" => self.labelembed_margin = parse_value(key, value)?,
            "word_dim" => self.word_dim = parse_value(key, value)?,
            "bins" => self.bins = parse_value(key, value)?,
            "auc_smax_mode" => self.auc_smax_mode = value.parse()?,
            "threads" => self.threads = parse_value(key, value)?,
            "variance" => {
                if value != "population" {
                    return Err(TceError::Config(format!(
                        "only population variance is supported, got {value:?}"
                    )));
                }
            }
            other => return Err(TceError::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in entries {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply(&parse_config(text)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TceError::Config(m));
        for (k, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("visprod_hidden", self.visprod_hidden),
            ("word_dim", self.word_dim),
            ("bins", self.bins),
            ("threads", self.threads),
        ] {
            if v == 0 {
                return bad(format!("{k} must be positive"));
            }
        }
        for (k, v) in [
            ("lr_main", self.lr_main),
            ("lr_attr_table", self.lr_attr_table),
            ("baseline_weight_decay", self.baseline_weight_decay),
            ("labelembed_margin", self.labelembed_margin),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{k} must be a nonnegative number, got {v}"));
            }
        }
        self.weights.validate()
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            bins: self.bins,
            smax_mode: self.auc_smax_mode,
        }
    }

    /// Every key with its resolved value, in [`Self::KEYS`] order; parses back
    /// to an equal configuration.
    pub fn render(&self) -> String {
        let w = &self.weights;
        let values: [String; 28] = [
            self.model.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.lr_main.to_string(),
            self.lr_attr_table.to_string(),
            self.baseline_weight_decay.to_string(),
            w.lambda_cls.to_string(),
            w.lambda_tri.to_string(),
            w.lambda_rec.to_string(),
            w.lambda_op.to_string(),
            w.lambda_rvc.to_string(),
            w.margin_obj.to_string(),
            w.margin_concept.to_string(),
            w.margin_rvc.to_string(),
            w.rvc_pairs.to_string(),
            self.rvc_include_unseen.to_string(),
            self.rvc_frozen_semantics.to_string(),
            self.seed.to_string(),
            self.eval_every.to_string(),
            self.latent_dim.to_string(),
            self.hidden_dim.to_string(),
            self.visprod_hidden.to_string(),
            self.labelembed_margin.to_string(),
            self.word_dim.to_string(),
            self.bins.to_string(),
            self.auc_smax_mode.as_str().to_string(),
            self.threads.to_string(),
            "population".to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").expect("string write");
        }
        out
    }
}
