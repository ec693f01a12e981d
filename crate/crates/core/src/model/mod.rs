//! Model definitions: the translational concept embedding network and the two
//! reference baselines, plus their binary checkpoint format.

mod checkpoint;
mod labelembed;
mod tce;
mod visprod;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use labelembed::LabelEmbedModel;
pub use tce::{compose_concept, TceDims, TceGrads, TceModel};
pub use visprod::{product_scores, softmax_rows, VisProdModel};

use crate::error::TceError;

/// Optimizer group a tensor belongs to; the attribute embedding table of the
/// TCE model trains with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Main,
    AttrTable,
}

pub trait Parameterized {
    /// `(rows, cols, data)` for every tensor in declaration order. Bias
    /// vectors report `cols == 1`.
    fn tensors(&self) -> Vec<(usize, usize, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Tce,
    VisProd,
    LabelEmbed,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Tce => "tce",
            ModelKind::VisProd => "visprod",
            ModelKind::LabelEmbed => "labelembed",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = TceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tce" => Ok(ModelKind::Tce),
            "visprod" => Ok(ModelKind::VisProd),
            "labelembed" | "labelembed+" => Ok(ModelKind::LabelEmbed),
            other => Err(TceError::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Tce(TceModel),
    VisProd(VisProdModel),
    LabelEmbed(LabelEmbedModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Tce(_) => ModelKind::Tce,
            Model::VisProd(_) => ModelKind::VisProd,
            Model::LabelEmbed(_) => ModelKind::LabelEmbed,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Model::Tce(m) => m.dims().feature_dim,
            Model::VisProd(m) => m.feature_dim(),
            Model::LabelEmbed(m) => m.feature_dim(),
        }
    }

    pub fn num_attrs(&self) -> usize {
        match self {
            Model::Tce(m) => m.dims().num_attrs,
            Model::VisProd(m) => m.num_attrs(),
            Model::LabelEmbed(m) => m.num_attrs(),
        }
    }

    pub fn num_objs(&self) -> usize {
        match self {
            Model::Tce(m) => m.dims().num_objs,
            Model::VisProd(m) => m.num_objs(),
            Model::LabelEmbed(m) => m.num_objs(),
        }
    }

    pub fn params(&self) -> &dyn Parameterized {
        match self {
            Model::Tce(m) => m,
            Model::VisProd(m) => m,
            Model::LabelEmbed(m) => m,
        }
    }

    pub fn params_mut(&mut self) -> &mut dyn Parameterized {
        match self {
            Model::Tce(m) => m,
            Model::VisProd(m) => m,
            Model::LabelEmbed(m) => m,
        }
    }
}
