//! Independent attribute and object classifiers; a concept scores
//! `P(a) * P(o)`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::diffcore::{Activation, Mlp};
use crate::embedspace::Concept;
use crate::error::{Result, TceError};

use super::{ParamGroup, Parameterized};

#[derive(Debug, Clone, PartialEq)]
pub struct VisProdModel {
    pub(crate) attr_net: Mlp,
    pub(crate) obj_net: Mlp,
}

impl VisProdModel {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden_dim: usize,
        num_attrs: usize,
        num_objs: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if [feature_dim, hidden_dim, num_attrs, num_objs].contains(&0) {
            return Err(TceError::Config("zero dimension in VisProd model".into()));
        }
        let attr_net = Mlp::glorot(
            &[feature_dim, hidden_dim, num_attrs],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        let obj_net = Mlp::glorot(
            &[feature_dim, hidden_dim, num_objs],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        Ok(Self { attr_net, obj_net })
    }

    pub fn feature_dim(&self) -> usize {
        self.attr_net.in_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.attr_net.layers()[0].out_dim()
    }

    pub fn num_attrs(&self) -> usize {
        self.attr_net.out_dim()
    }

    pub fn num_objs(&self) -> usize {
        self.obj_net.out_dim()
    }

    pub fn attr_net(&self) -> &Mlp {
        &self.attr_net
    }

    pub fn obj_net(&self) -> &Mlp {
        &self.obj_net
    }

    /// Raw (attribute, object) logits, one row per image.
    pub fn forward(&self, features: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        Ok((
            self.attr_net.predict_batch(features)?,
            self.obj_net.predict_batch(features)?,
        ))
    }

    /// Softmax probabilities for attributes and objects.
    pub fn probabilities(&self, features: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (mut a, mut o) = self.forward(features)?;
        softmax_rows(&mut a);
        softmax_rows(&mut o);
        Ok((a, o))
    }
}

pub fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Concept scores `P(a) P(o)` for the given columns.
pub fn product_scores(attr_probs: &Array2<f64>, obj_probs: &Array2<f64>, concepts: &[Concept]) -> Array2<f64> {
    Array2::from_shape_fn((attr_probs.nrows(), concepts.len()), |(i, j)| {
        attr_probs[[i, concepts[j].attr]] * obj_probs[[i, concepts[j].obj]]
    })
}

impl Parameterized for VisProdModel {
    fn tensors(&self) -> Vec<(usize, usize, &[f64])> {
        let mut out = self.attr_net.tensors();
        out.extend(self.obj_net.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out: Vec<_> = self
            .attr_net
            .tensors_mut()
            .into_iter()
            .map(|t| (ParamGroup::Main, t))
            .collect();
        out.extend(self.obj_net.tensors_mut().into_iter().map(|t| (ParamGroup::Main, t)));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn uniform_probabilities_give_uniform_products() {
        let mut a = Array2::zeros((1, 4));
        let mut o = Array2::zeros((1, 5));
        softmax_rows(&mut a);
        softmax_rows(&mut o);
        let concepts: Vec<Concept> = (0..4).flat_map(|x| (0..5).map(move |y| Concept::new(x, y))).collect();
        let s = product_scores(&a, &o, &concepts);
        assert!(s.iter().all(|&v| (v - 1.0 / 20.0).abs() < 1e-15));
        assert!((s.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_probabilities_pick_that_concept() {
        let a = ndarray::array![[0.0, 1.0, 0.0]];
        let o = ndarray::array![[1.0, 0.0]];
        let concepts: Vec<Concept> = (0..3).flat_map(|x| (0..2).map(move |y| Concept::new(x, y))).collect();
        let s = product_scores(&a, &o, &concepts);
        let best = (0..concepts.len())
            .max_by(|&i, &j| s[[0, i]].total_cmp(&s[[0, j]]).then(j.cmp(&i)))
            .unwrap();
        assert_eq!(concepts[best], Concept::new(1, 0));
    }

    #[test]
    fn random_logits_match_enumeration() {
        let mut rng = stream(5, Stream::Init);
        let model = VisProdModel::new(4, 8, 3, 3, &mut rng).unwrap();
        let x = Array2::from_shape_fn((2, 4), |(i, j)| (i as f64 + 1.0) * (j as f64 - 1.5));
        let (al, ol) = model.forward(x.view()).unwrap();
        let (ap, op) = model.probabilities(x.view()).unwrap();
        let concepts: Vec<Concept> = (0..3).flat_map(|a| (0..3).map(move |o| Concept::new(a, o))).collect();
        let s = product_scores(&ap, &op, &concepts);
        for i in 0..2 {
            let za: f64 = (0..3).map(|k| al[[i, k]].exp()).sum();
            let zo: f64 = (0..3).map(|k| ol[[i, k]].exp()).sum();
            for (j, c) in concepts.iter().enumerate() {
                let brute = al[[i, c.attr]].exp() / za * (ol[[i, c.obj]].exp() / zo);
                assert!((s[[i, j]] - brute).abs() < 1e-12);
            }
            let row_sum: f64 = s.row(i).sum();
            assert!((row_sum - 1.0).abs() < 1e-12);
        }
    }
}
