//! Concept embeddings from a single MLP over concatenated word vectors.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::diffcore::{Activation, Mlp};
use crate::embedspace::Concept;
use crate::error::{shape_err, Result, TceError};

use super::{ParamGroup, Parameterized};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedModel {
    pub(crate) image_mapper: Mlp,
    pub(crate) concept_net: Mlp,
    pub(crate) attr_table: Array2<f64>,
    pub(crate) obj_table: Array2<f64>,
}

impl LabelEmbedModel {
    /// `concat(e_a, e_o)` (2w) -> 2w hidden -> `embed_dim`; images are mapped
    /// to `embed_dim` by one affine layer.
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        embed_dim: usize,
        attr_vectors: Array2<f64>,
        obj_vectors: Array2<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let w = attr_vectors.ncols();
        if obj_vectors.ncols() != w {
            return Err(shape_err!(
                "attribute vectors have {w} dims, object vectors {}",
                obj_vectors.ncols()
            ));
        }
        if [feature_dim, embed_dim, w, attr_vectors.nrows(), obj_vectors.nrows()].contains(&0) {
            return Err(TceError::Config("zero dimension in LabelEmbed model".into()));
        }
        let id = Activation::Identity;
        Ok(Self {
            image_mapper: Mlp::glorot(&[feature_dim, embed_dim], id, id, rng)?,
            concept_net: Mlp::glorot(&[2 * w, 2 * w, embed_dim], Activation::Relu, id, rng)?,
            attr_table: attr_vectors.as_standard_layout().into_owned(),
            obj_table: obj_vectors.as_standard_layout().into_owned(),
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.image_mapper.in_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.image_mapper.out_dim()
    }

    pub fn word_dim(&self) -> usize {
        self.attr_table.ncols()
    }

    pub fn num_attrs(&self) -> usize {
        self.attr_table.nrows()
    }

    pub fn num_objs(&self) -> usize {
        self.obj_table.nrows()
    }

    pub fn concept_net(&self) -> &Mlp {
        &self.concept_net
    }

    pub fn image_embed(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.image_mapper.predict_batch(features)
    }

    pub(crate) fn concept_inputs(&self, concepts: &[Concept]) -> Result<Array2<f64>> {
        let w = self.word_dim();
        let mut input = Array2::zeros((concepts.len(), 2 * w));
        for (mut row, c) in input.rows_mut().into_iter().zip(concepts) {
            if c.attr >= self.num_attrs() || c.obj >= self.num_objs() {
                return Err(TceError::Index(format!("concept ({}, {}) out of range", c.attr, c.obj)));
            }
            row.slice_mut(s![..w]).assign(&self.attr_table.row(c.attr));
            row.slice_mut(s![w..]).assign(&self.obj_table.row(c.obj));
        }
        Ok(input)
    }

    /// Embedding of a single concept from explicit word vectors.
    pub fn embed_words(&self, e_a: &[f64], e_o: &[f64]) -> Result<Vec<f64>> {
        let input: Vec<f64> = e_a.iter().chain(e_o).copied().collect();
        Ok(self.concept_net.forward(&input)?.0)
    }

    pub fn concept_gallery(&self, concepts: &[Concept]) -> Result<Array2<f64>> {
        let input = self.concept_inputs(concepts)?;
        self.concept_net.predict_batch(input.view())
    }
}

impl Parameterized for LabelEmbedModel {
    fn tensors(&self) -> Vec<(usize, usize, &[f64])> {
        let mut out = self.image_mapper.tensors();
        out.extend(self.concept_net.tensors());
        for t in [&self.attr_table, &self.obj_table] {
            let (r, c) = t.dim();
            out.push((r, c, t.as_slice().expect("standard layout")));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<_> = self
            .image_mapper
            .tensors_mut()
            .into_iter()
            .chain(self.concept_net.tensors_mut())
            .map(|t| (ParamGroup::Main, t))
            .collect();
        out.push((
            ParamGroup::Main,
            self.attr_table.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            ParamGroup::Main,
            self.obj_table.as_slice_mut().expect("standard layout"),
        ));
        out
    }
}
