//! Dense layers and small feed-forward networks with an explicit tape.
//!
//! All forward passes operate on a batch matrix (one sample per row); the
//! vector entry points are one-row wrappers.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{shape_err, Result, TceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    /// Row-wise softmax. Only valid on the last layer.
    Softmax,
}

/// `y = W x + b` with `W` stored as `[out_dim, in_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl DenseLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(shape_err!(
                "bias has {} entries, weight has {} rows",
                bias.len(),
                weight.nrows()
            ));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(TceError::Numeric("non-finite layer parameter".into()));
        }
        Ok(Self {
            weight: weight.as_standard_layout().into_owned(),
            bias,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || dist.sample(rng));
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    fn affine(&self, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weight.t());
        out += &self.bias;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    activations: Vec<Activation>,
    // bumped on every mutable borrow of the parameters so that tapes taken
    // before an update are rejected by `backward`
    version: u64,
}

/// Everything `Mlp::backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    // input to every layer, then the final output
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Gradients mirroring an [`Mlp`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(self.weights.len() * 2);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, scale: f64) {
        for (w, ow) in self.weights.iter_mut().zip(&other.weights) {
            w.scaled_add(scale, ow);
        }
        for (b, ob) in self.biases.iter_mut().zip(&other.biases) {
            b.scaled_add(scale, ob);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(shape_err!("an MLP needs at least one layer"));
        }
        if layers.len() != activations.len() {
            return Err(shape_err!(
                "{} layers but {} activations",
                layers.len(),
                activations.len()
            ));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(shape_err!(
                    "layer {} emits {} values, layer {} expects {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                ));
            }
        }
        let last = activations.len() - 1;
        if activations[..last].contains(&Activation::Softmax) {
            return Err(TceError::Precondition(
                "softmax may only be the final activation".into(),
            ));
        }
        Ok(Self {
            layers,
            activations,
            version: 0,
        })
    }

    /// Glorot-initialized network through `dims` (`dims[0]` is the input width).
    /// Hidden layers use `hidden`, the last one `output`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(shape_err!("need at least input and output widths"));
        }
        let n = dims.len() - 1;
        let layers = dims.windows(2).map(|w| DenseLayer::glorot(w[0], w[1], rng)).collect();
        let mut acts = vec![hidden; n];
        acts[n - 1] = output;
        Self::new(layers, acts)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let view = ArrayView2::from_shape((1, input.len()), input).map_err(|e| shape_err!("{e}"))?;
        let (out, tape) = self.forward_batch(view)?;
        Ok((out.into_raw_vec_and_offset().0, tape))
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        if input.ncols() != self.in_dim() {
            return Err(shape_err!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.in_dim()
            ));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut z = layer.affine(&activations.last().expect("non-empty").view());
            apply_activation(*act, &mut z);
            activations.push(z);
        }
        Ok((
            activations.last().expect("non-empty").clone(),
            Tape {
                version: self.version,
                activations,
            },
        ))
    }

    /// Forward pass without keeping a tape.
    pub fn predict_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.in_dim() {
            return Err(shape_err!(
                "input has {} columns, network expects {}",
                input.ncols(),
                self.in_dim()
            ));
        }
        let mut cur = input.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            let mut z = layer.affine(&cur.view());
            apply_activation(*act, &mut z);
            cur = z;
        }
        Ok(cur)
    }

    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, upstream.len()), upstream).map_err(|e| shape_err!("{e}"))?;
        let (grads, input_grad) = self.backward_batch(tape, view)?;
        Ok((grads, input_grad.into_raw_vec_and_offset().0))
    }

    /// Reverse pass. Parameter gradients are summed over the batch rows.
    pub fn backward_batch(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<(MlpGrads, Array2<f64>)> {
        if tape.version != self.version || tape.activations.len() != self.layers.len() + 1 {
            return Err(TceError::Precondition(
                "tape does not belong to the current network parameters".into(),
            ));
        }
        let out = tape.activations.last().expect("non-empty");
        if upstream.dim() != out.dim() {
            return Err(shape_err!(
                "upstream gradient {:?} does not match output {:?}",
                upstream.dim(),
                out.dim()
            ));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut grad = upstream.to_owned();
        for k in (0..n).rev() {
            let output = &tape.activations[k + 1];
            activation_backward(self.activations[k], output, &mut grad);
            let input = &tape.activations[k];
            weights.push(grad.t().dot(input));
            biases.push(grad.sum_axis(Axis(0)));
            grad = grad.dot(&self.layers[k].weight);
        }
        weights.reverse();
        biases.reverse();
        Ok((MlpGrads { weights, biases }, grad))
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self.layers.iter().map(|l| Array2::zeros(l.weight.dim())).collect(),
            biases: self.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    /// Parameter tensors in declaration order (weight, bias per layer).
    pub fn tensors(&self) -> Vec<(usize, usize, &[f64])> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &self.layers {
            let (r, c) = l.weight.dim();
            out.push((r, c, l.weight.as_slice().expect("standard layout")));
            out.push((l.bias.len(), 1, l.bias.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

fn apply_activation(act: Activation, z: &mut Array2<f64>) {
    match act {
        Activation::Identity => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Softmax => {
            for mut row in z.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
        }
    }
}

// Turns the gradient wrt the activation output into the gradient wrt its input.
fn activation_backward(act: Activation, output: &Array2<f64>, grad: &mut Array2<f64>) {
    match act {
        Activation::Identity => {}
        Activation::Relu => {
            ndarray::Zip::from(grad).and(output).for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        Activation::Softmax => {
            for (mut g, y) in grad.rows_mut().into_iter().zip(output.rows()) {
                let dot: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                ndarray::Zip::from(&mut g)
                    .and(&y)
                    .for_each(|gi, &yi| *gi = yi * (*gi - dot));
            }
        }
    }
}
