//! The translational concept embedding network.
//!
//! An object's word vector is mapped to a prototype `p_o = g_o(e_o)`; an
//! attribute becomes an object-conditioned translation
//! `z_ao = g_a([p_o, e_a])`, and the concept embedding is `p_o + z_ao`.
//! Images are mapped into the same latent space by a single affine layer and
//! classified by nearest concept embedding.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::diffcore::{Activation, Mlp, MlpGrads};
use crate::embedspace::Concept;
use crate::error::{shape_err, Result, TceError};

use super::{ParamGroup, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TceDims {
    pub num_attrs: usize,
    pub num_objs: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub word_dim: usize,
    /// Hidden width of the translation network.
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TceModel {
    dims: TceDims,
    pub(crate) image_mapper: Mlp,
    pub(crate) obj_proto: Mlp,
    pub(crate) attr_translate: Mlp,
    pub(crate) head_obj_proto: Mlp,
    pub(crate) head_attr: Mlp,
    pub(crate) head_obj: Mlp,
    pub(crate) attr_table: Array2<f64>,
    pub(crate) obj_table: Array2<f64>,
}

/// Gradients for every tensor of a [`TceModel`], in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct TceGrads {
    pub image_mapper: MlpGrads,
    pub obj_proto: MlpGrads,
    pub attr_translate: MlpGrads,
    pub head_obj_proto: MlpGrads,
    pub head_attr: MlpGrads,
    pub head_obj: MlpGrads,
    pub attr_table: Array2<f64>,
    pub obj_table: Array2<f64>,
}

impl TceGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in [
            &self.image_mapper,
            &self.obj_proto,
            &self.attr_translate,
            &self.head_obj_proto,
            &self.head_attr,
            &self.head_obj,
        ] {
            out.extend(g.tensors());
        }
        out.push(self.attr_table.as_slice().expect("standard layout"));
        out.push(self.obj_table.as_slice().expect("standard layout"));
        out
    }

    pub fn add_scaled(&mut self, other: &TceGrads, scale: f64) {
        self.image_mapper.add_scaled(&other.image_mapper, scale);
        self.obj_proto.add_scaled(&other.obj_proto, scale);
        self.attr_translate.add_scaled(&other.attr_translate, scale);
        self.head_obj_proto.add_scaled(&other.head_obj_proto, scale);
        self.head_attr.add_scaled(&other.head_attr, scale);
        self.head_obj.add_scaled(&other.head_obj, scale);
        self.attr_table.scaled_add(scale, &other.attr_table);
        self.obj_table.scaled_add(scale, &other.obj_table);
    }
}

impl TceModel {
    /// Glorot-initialized networks; the embedding tables are copied from
    /// `attr_vectors` (m x w) and `obj_vectors` (n x w).
    pub fn new<R: Rng + ?Sized>(
        dims: TceDims,
        attr_vectors: Array2<f64>,
        obj_vectors: Array2<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let TceDims {
            num_attrs: m,
            num_objs: n,
            feature_dim: f,
            latent_dim: d,
            word_dim: w,
            hidden_dim: h,
        } = dims;
        if [m, n, f, d, w, h].contains(&0) {
            return Err(TceError::Config(format!("zero dimension in {dims:?}")));
        }
        if attr_vectors.dim() != (m, w) || obj_vectors.dim() != (n, w) {
            return Err(shape_err!(
                "embedding tables {:?}/{:?} do not match m={m} n={n} w={w}",
                attr_vectors.dim(),
                obj_vectors.dim()
            ));
        }
        let id = Activation::Identity;
        Ok(Self {
            dims,
            image_mapper: Mlp::glorot(&[f, d], id, id, rng)?,
            obj_proto: Mlp::glorot(&[w, d], id, id, rng)?,
            attr_translate: Mlp::glorot(&[d + w, h, d], Activation::Relu, id, rng)?,
            head_obj_proto: Mlp::glorot(&[d, n], id, id, rng)?,
            head_attr: Mlp::glorot(&[d, m], id, id, rng)?,
            head_obj: Mlp::glorot(&[d, n], id, id, rng)?,
            attr_table: attr_vectors.as_standard_layout().into_owned(),
            obj_table: obj_vectors.as_standard_layout().into_owned(),
        })
    }

    pub fn dims(&self) -> TceDims {
        self.dims
    }

    pub fn image_mapper(&self) -> &Mlp {
        &self.image_mapper
    }

    pub fn obj_proto_net(&self) -> &Mlp {
        &self.obj_proto
    }

    pub fn attr_translate_net(&self) -> &Mlp {
        &self.attr_translate
    }

    pub fn head_obj_proto(&self) -> &Mlp {
        &self.head_obj_proto
    }

    pub fn head_attr(&self) -> &Mlp {
        &self.head_attr
    }

    pub fn head_obj(&self) -> &Mlp {
        &self.head_obj
    }

    pub fn attr_table(&self) -> &Array2<f64> {
        &self.attr_table
    }

    pub fn obj_table(&self) -> &Array2<f64> {
        &self.obj_table
    }

    /// Maps image features (one per row) into the latent space.
    pub fn image_embed(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.image_mapper.predict_batch(features)
    }

    pub fn object_prototype(&self, e_o: &[f64]) -> Result<Vec<f64>> {
        Ok(self.obj_proto.forward(e_o)?.0)
    }

    pub fn attribute_translation(&self, prototype: &[f64], e_a: &[f64]) -> Result<Vec<f64>> {
        if prototype.len() != self.dims.latent_dim {
            return Err(shape_err!(
                "prototype has {} dims, latent space has {}",
                prototype.len(),
                self.dims.latent_dim
            ));
        }
        let input: Vec<f64> = prototype.iter().chain(e_a).copied().collect();
        Ok(self.attr_translate.forward(&input)?.0)
    }

    /// Prototypes of every object, one per row.
    pub fn all_prototypes(&self) -> Result<Array2<f64>> {
        self.obj_proto.predict_batch(self.obj_table.view())
    }

    /// Inputs of the translation network for `concepts`: `[p_o, e_a]` rows.
    pub(crate) fn translation_inputs(&self, prototypes: &Array2<f64>, concepts: &[Concept]) -> Array2<f64> {
        let d = self.dims.latent_dim;
        let mut input = Array2::zeros((concepts.len(), d + self.dims.word_dim));
        for (mut row, c) in input.rows_mut().into_iter().zip(concepts) {
            row.slice_mut(s![..d]).assign(&prototypes.row(c.obj));
            row.slice_mut(s![d..]).assign(&self.attr_table.row(c.attr));
        }
        input
    }

    pub(crate) fn check_concepts(&self, concepts: &[Concept]) -> Result<()> {
        for c in concepts {
            if c.attr >= self.dims.num_attrs || c.obj >= self.dims.num_objs {
                return Err(TceError::Index(format!(
                    "concept ({}, {}) outside {}x{} model",
                    c.attr, c.obj, self.dims.num_attrs, self.dims.num_objs
                )));
            }
        }
        Ok(())
    }

    /// Concept embeddings `p_o + g_a([p_o, e_a])`, one row per concept.
    pub fn concept_gallery(&self, concepts: &[Concept]) -> Result<Array2<f64>> {
        self.check_concepts(concepts)?;
        let prototypes = self.all_prototypes()?;
        let input = self.translation_inputs(&prototypes, concepts);
        let mut gallery = self.attr_translate.predict_batch(input.view())?;
        for (mut row, c) in gallery.rows_mut().into_iter().zip(concepts) {
            row += &prototypes.row(c.obj);
        }
        Ok(gallery)
    }

    pub fn zero_grads(&self) -> TceGrads {
        TceGrads {
            image_mapper: self.image_mapper.zero_grads(),
            obj_proto: self.obj_proto.zero_grads(),
            attr_translate: self.attr_translate.zero_grads(),
            head_obj_proto: self.head_obj_proto.zero_grads(),
            head_attr: self.head_attr.zero_grads(),
            head_obj: self.head_obj.zero_grads(),
            attr_table: Array2::zeros(self.attr_table.dim()),
            obj_table: Array2::zeros(self.obj_table.dim()),
        }
    }

    fn nets(&self) -> [&Mlp; 6] {
        [
            &self.image_mapper,
            &self.obj_proto,
            &self.attr_translate,
            &self.head_obj_proto,
            &self.head_attr,
            &self.head_obj,
        ]
    }
}

/// `p + z`, elementwise.
pub fn compose_concept(prototype: &[f64], translation: &[f64]) -> Result<Vec<f64>> {
    if prototype.len() != translation.len() {
        return Err(shape_err!(
            "prototype has {} dims, translation {}",
            prototype.len(),
            translation.len()
        ));
    }
    Ok(prototype.iter().zip(translation).map(|(p, z)| p + z).collect())
}

impl Parameterized for TceModel {
    fn tensors(&self) -> Vec<(usize, usize, &[f64])> {
        let mut out: Vec<_> = self.nets().iter().flat_map(|n| n.tensors()).collect();
        for t in [&self.attr_table, &self.obj_table] {
            let (r, c) = t.dim();
            out.push((r, c, t.as_slice().expect("standard layout")));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut [f64])> {
        let mut out = Vec::new();
        for net in [
            &mut self.image_mapper,
            &mut self.obj_proto,
            &mut self.attr_translate,
            &mut self.head_obj_proto,
            &mut self.head_attr,
            &mut self.head_obj,
        ] {
            out.extend(net.tensors_mut().into_iter().map(|t| (ParamGroup::Main, t)));
        }
        out.push((
            ParamGroup::AttrTable,
            self.attr_table.as_slice_mut().expect("standard layout"),
        ));
        out.push((
            ParamGroup::Main,
            self.obj_table.as_slice_mut().expect("standard layout"),
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::distance;
    use crate::rng::{stream, Stream};
    use ndarray::Array1;

    pub(crate) fn tiny(seed: u64) -> TceModel {
        let dims = TceDims {
            num_attrs: 3,
            num_objs: 3,
            feature_dim: 5,
            latent_dim: 4,
            word_dim: 3,
            hidden_dim: 6,
        };
        let mut rng = stream(seed, Stream::Init);
        let a = Array2::from_shape_fn((3, 3), |(i, j)| (i as f64 - j as f64) * 0.3 + 0.1);
        let o = Array2::from_shape_fn((3, 3), |(i, j)| (i * j) as f64 * 0.2 - 0.25);
        TceModel::new(dims, a, o, &mut rng).unwrap()
    }

    fn zero_net(net: &mut Mlp) {
        for t in net.tensors_mut() {
            t.fill(0.0);
        }
    }

    #[test]
    fn identity_image_mapper() {
        let mut m = tiny(0);
        m.dims.feature_dim = 4;
        m.image_mapper = Mlp::new(
            vec![crate::diffcore::DenseLayer::new(Array2::eye(4), Array1::zeros(4)).unwrap()],
            vec![Activation::Identity],
        )
        .unwrap();
        let f = Array2::from_shape_vec((1, 4), vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.image_embed(f.view()).unwrap(), f);
    }

    #[test]
    fn zero_feature_zero_bias_gives_zero() {
        let m = tiny(1);
        let f = Array2::zeros((2, 5));
        assert!(m.image_embed(f.view()).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn image_embed_hand_affine() {
        let m = tiny(2);
        let f = Array2::from_shape_fn((1, 5), |(_, j)| j as f64 * 0.7 - 1.0);
        let out = m.image_embed(f.view()).unwrap();
        let layer = &m.image_mapper.layers()[0];
        for i in 0..4 {
            let mut acc = layer.bias()[i];
            for j in 0..5 {
                acc += layer.weight()[[i, j]] * f[[0, j]];
            }
            assert!((out[[0, i]] - acc).abs() < 1e-12);
        }
        assert!(matches!(
            m.image_embed(Array2::zeros((1, 4)).view()),
            Err(TceError::Shape(_))
        ));
    }

    #[test]
    fn prototype_of_zero_net_is_bias() {
        let mut m = tiny(3);
        zero_net(&mut m.obj_proto);
        let p = m.object_prototype(m.obj_table.row(1).as_slice().unwrap()).unwrap();
        assert_eq!(p, vec![0.0; 4]);
    }

    #[test]
    fn prototypes_distinct_and_deterministic() {
        let m = tiny(4);
        let p0 = m.object_prototype(m.obj_table.row(0).as_slice().unwrap()).unwrap();
        let p1 = m.object_prototype(m.obj_table.row(1).as_slice().unwrap()).unwrap();
        assert!(distance(&p0, &p1) > 0.0);
        assert_eq!(p0, m.object_prototype(m.obj_table.row(0).as_slice().unwrap()).unwrap());
    }

    #[test]
    fn translation_zero_net_is_constant() {
        let mut m = tiny(5);
        zero_net(&mut m.attr_translate);
        let z1 = m
            .attribute_translation(&[1.0, 2.0, 3.0, 4.0], &[0.1, 0.2, 0.3])
            .unwrap();
        let z2 = m
            .attribute_translation(&[-1.0, 0.0, 3.0, 9.0], &[1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(z1, z2);
        assert!(m.attribute_translation(&[1.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn translation_depends_on_object() {
        let m = tiny(6);
        let e_a = m.attr_table.row(0).to_vec();
        let p0 = m.object_prototype(m.obj_table.row(0).as_slice().unwrap()).unwrap();
        let p1 = m.object_prototype(m.obj_table.row(2).as_slice().unwrap()).unwrap();
        let z0 = m.attribute_translation(&p0, &e_a).unwrap();
        let z1 = m.attribute_translation(&p1, &e_a).unwrap();
        assert!(distance(&z0, &z1) > 0.0);
    }

    #[test]
    fn concat_order_permutation() {
        // swapping the input blocks and the matching weight columns gives
        // the same output
        let m = tiny(7);
        let (d, w) = (4, 3);
        let first = &m.attr_translate.layers()[0];
        let mut swapped = Array2::zeros(first.weight().dim());
        swapped
            .slice_mut(s![.., ..w])
            .assign(&first.weight().slice(s![.., d..]));
        swapped
            .slice_mut(s![.., w..])
            .assign(&first.weight().slice(s![.., ..d]));
        let layers = vec![
            crate::diffcore::DenseLayer::new(swapped, first.bias().clone()).unwrap(),
            m.attr_translate.layers()[1].clone(),
        ];
        let net = Mlp::new(layers, m.attr_translate.activations().to_vec()).unwrap();
        let p = [0.3, -0.2, 1.0, 0.5];
        let e = [0.7, 0.1, -0.4];
        let a = m.attribute_translation(&p, &e).unwrap();
        let input: Vec<f64> = e.iter().chain(&p).copied().collect();
        let b = net.forward(&input).unwrap().0;
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_examples() {
        assert_eq!(compose_concept(&[1.0, 2.0], &[0.5, -1.0]).unwrap(), vec![1.5, 1.0]);
        assert_eq!(compose_concept(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert!(compose_concept(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn gallery_matches_per_concept_pipeline() {
        let m = tiny(8);
        let concepts: Vec<Concept> = (0..2).flat_map(|a| (0..2).map(move |o| Concept::new(a, o))).collect();
        let g = m.concept_gallery(&concepts).unwrap();
        assert_eq!(g.nrows(), 4);
        for (row, c) in g.rows().into_iter().zip(&concepts) {
            let p = m.object_prototype(m.obj_table.row(c.obj).as_slice().unwrap()).unwrap();
            let z = m
                .attribute_translation(&p, m.attr_table.row(c.attr).as_slice().unwrap())
                .unwrap();
            let x = compose_concept(&p, &z).unwrap();
            for (u, v) in row.iter().zip(&x) {
                assert!((u - v).abs() < 1e-12);
            }
            // residual identity
            for i in 0..4 {
                assert!((x[i] - p[i] - z[i]).abs() < 1e-15);
            }
        }
        let dup = m.concept_gallery(&[Concept::new(1, 2), Concept::new(1, 2)]).unwrap();
        assert_eq!(dup.row(0), dup.row(1));
        assert_eq!(m.concept_gallery(&concepts).unwrap(), g);
        assert!(matches!(
            m.concept_gallery(&[Concept::new(3, 0)]),
            Err(TceError::Index(_))
        ));
    }
}
