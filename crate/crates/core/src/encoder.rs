//! Multilayer perceptron encoder with hand-derived backpropagation.
//!
//! Hidden layers use ReLU, the output layer is linear. Weights are stored
//! `out × in`, so a layer computes `h · Wᵀ + b` on a batch of row vectors.

use std::io::{Read, Write};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::numeric::{matmul, matmul_nt, matmul_tn, relu_backward, relu_forward, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpEncoder {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer inputs and ReLU masks from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    masks: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].rows()
    }

    /// 0/1 activity masks of the hidden ReLUs, one matrix per hidden layer.
    pub fn masks(&self) -> &[Matrix] {
        &self.masks
    }
}

/// Gradients laid out like the encoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl EncoderGrads {
    /// Slices in the same order as [`MlpEncoder::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }
}

impl MlpEncoder {
    /// He-normal weights (variance 2 / fan_in), zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Spec(format!(
                "layer dims {layer_dims:?} need at least two entries, all positive"
            )));
        }
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for (l, pair) in layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = Rng::derived(seed, &[0xE7, l as u64]);
            weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| std * rng.normal()));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Spec("need one bias per weight matrix".into()));
        }
        let mut dims = vec![weights[0].cols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *dims.last().unwrap() || b.len() != w.rows() {
                return Err(Error::dim(
                    "MlpEncoder::from_parts",
                    format!("layer {l} does not conform"),
                ));
            }
            dims.push(w.rows());
        }
        Ok(Self {
            layer_dims: dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    /// Zeroes the output layer, so every feature starts at exactly zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.weights.len() - 1;
        self.weights[last].data_mut().fill(0.0);
        self.biases[last].fill(0.0);
    }

    /// Parameter slices in optimizer order: W0, b0, W1, b1, ...
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(
                "encoder forward",
                format!(
                    "input has {} columns, encoder expects {}",
                    x.cols(),
                    self.input_dim()
                ),
            ));
        }
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut masks = Vec::with_capacity(last);
        let mut h = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = matmul_nt(&h, w)?;
            z.add_row_vector(b)?;
            inputs.push(h);
            if l < last {
                let (a, mask) = relu_forward(&z);
                masks.push(mask);
                h = a;
            } else {
                h = z;
            }
        }
        Ok((h, ForwardCache { inputs, masks }))
    }

    /// Features only.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(f, _)| f)
    }

    /// Exact gradients of a scalar whose gradient with respect to the features
    /// is `grad_features`. Batch averaging is whatever `grad_features` carries.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_features: &Matrix,
    ) -> Result<(EncoderGrads, Matrix)> {
        let b = cache.batch_size();
        if grad_features.shape() != (b, self.output_dim())
            || cache.inputs.len() != self.weights.len()
        {
            return Err(Error::dim(
                "encoder backward",
                format!(
                    "grad {:?} for batch {b} and output {}",
                    grad_features.shape(),
                    self.output_dim()
                ),
            ));
        }
        let n = self.weights.len();
        let mut gw = Vec::with_capacity(n);
        let mut gb = Vec::with_capacity(n);
        let mut g = grad_features.clone();
        for l in (0..n).rev() {
            gw.push(matmul_tn(&g, &cache.inputs[l])?);
            gb.push(g.col_sums());
            let grad_in = matmul(&g, &self.weights[l])?;
            g = if l > 0 {
                relu_backward(&grad_in, &cache.masks[l - 1])?
            } else {
                grad_in
            };
        }
        gw.reverse();
        gb.reverse();
        Ok((
            EncoderGrads {
                weights: gw,
                biases: gb,
            },
            g,
        ))
    }

    /// Segment layout: u64 layer count L+1, L+1 × u64 dims, then per layer
    /// the out×in weights and out biases as little-endian f64.
    pub fn write_segment<W: Write>(&self, w: &mut W) -> Result<()> {
        put_u64(w, self.layer_dims.len() as u64)?;
        for &d in &self.layer_dims {
            put_u64(w, d as u64)?;
        }
        for (wt, b) in self.weights.iter().zip(&self.biases) {
            for &v in wt.data() {
                put_f64(w, v)?;
            }
            for &v in b {
                put_f64(w, v)?;
            }
        }
        Ok(())
    }

    pub fn read_segment<R: Read>(r: &mut R) -> Result<Self> {
        let n = get_usize(r)?;
        if !(2..=64).contains(&n) {
            return Err(Error::Format(format!("encoder with {n} layer dims")));
        }
        let dims = (0..n).map(|_| get_usize(r)).collect::<Result<Vec<_>>>()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let data = get_f64_n(r, fan_in * fan_out)?;
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(get_f64_n(r, fan_out)?);
        }
        Self::from_parts(weights, biases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(b: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = Rng::new(seed);
        Matrix::from_fn(b, d, |_, _| rng.uniform(-1.0, 1.0))
    }

    /// Straight-line re-implementation of the forward pass, one sample and one
    /// unit at a time.
    fn reference_forward(enc: &MlpEncoder, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = enc.n_layers();
        for l in 0..n {
            let w = &enc.weights()[l];
            let mut out = vec![0.0; w.rows()];
            for (o, out_v) in out.iter_mut().enumerate() {
                let mut s = 0.0;
                for (i, hv) in h.iter().enumerate() {
                    s += w.get(o, i) * hv;
                }
                s += enc.biases()[l][o];
                *out_v = if l + 1 < n { s.max(0.0) } else { s };
            }
            h = out;
        }
        h
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = MlpEncoder::init(&[5, 7, 3], 9).unwrap();
        assert_eq!(a, MlpEncoder::init(&[5, 7, 3], 9).unwrap());
        assert_ne!(a, MlpEncoder::init(&[5, 7, 3], 10).unwrap());
        assert!(a.biases().iter().flatten().all(|&b| b == 0.0));
        assert!(MlpEncoder::init(&[5], 0).is_err());
        assert!(MlpEncoder::init(&[5, 0, 2], 0).is_err());
    }

    #[test]
    fn he_variance() {
        let enc = MlpEncoder::init(&[256, 256], 3).unwrap();
        let w = enc.weights()[0].data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let target = 2.0 / 256.0;
        assert!((var - target).abs() / target < 0.2, "{var}");
    }

    #[test]
    fn identity_like_layer_is_linear_on_nonnegative_input() {
        let w0 = Matrix::identity(3);
        let w1 = Matrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![0.5, 0.0, 3.0]]).unwrap();
        let enc =
            MlpEncoder::from_parts(vec![w0, w1.clone()], vec![vec![0.0; 3], vec![0.0; 2]]).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, 1.0, 2.0], vec![0.0, 3.0, 0.25]]).unwrap();
        let f = enc.encode(&x).unwrap();
        assert_eq!(f, matmul_nt(&x, &w1).unwrap());
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let enc = MlpEncoder::init(&[4, 8, 8, 3], 1).unwrap();
        let f = enc.encode(&Matrix::zeros(5, 4)).unwrap();
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_reference_implementation() {
        let enc = MlpEncoder::init(&[6, 9, 5, 4], 12).unwrap();
        let x = random_input(7, 6, 1);
        let f = enc.encode(&x).unwrap();
        for r in 0..7 {
            let want = reference_forward(&enc, x.row(r));
            for (a, b) in f.row(r).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let enc = MlpEncoder::init(&[4, 3], 0).unwrap();
        assert!(enc.forward(&Matrix::zeros(2, 5)).is_err());
        let (_, cache) = enc.forward(&Matrix::zeros(2, 4)).unwrap();
        assert!(enc.backward(&cache, &Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_grads() {
        let enc = MlpEncoder::init(&[4, 6, 3], 2).unwrap();
        let (_, cache) = enc.forward(&random_input(5, 4, 3)).unwrap();
        let (g, gin) = enc.backward(&cache, &Matrix::zeros(5, 3)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(gin.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_encoder_weight_grad_closed_form() {
        let enc = MlpEncoder::init(&[4, 3], 2).unwrap();
        let b = 6;
        let x = random_input(b, 4, 8);
        let (_, cache) = enc.forward(&x).unwrap();
        let upstream = random_input(b, 3, 9);
        let mean_grad = upstream.scale(1.0 / b as f64);
        let (g, _) = enc.backward(&cache, &mean_grad).unwrap();
        let want = matmul_tn(&upstream, &x).unwrap().scale(1.0 / b as f64);
        assert!(g.weights[0].max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn positive_homogeneity_without_biases() {
        let enc = MlpEncoder::init(&[5, 8, 8, 4], 4).unwrap();
        let x = random_input(3, 5, 2);
        let f = enc.encode(&x).unwrap();
        for c in [0.5, 2.0, 7.3] {
            let fc = enc.encode(&x.scale(c)).unwrap();
            assert!(fc.max_abs_diff(&f.scale(c)) < 1e-10);
        }
    }

    #[test]
    fn segment_round_trip() {
        let enc = MlpEncoder::init(&[3, 5, 2], 6).unwrap();
        let mut buf = Vec::new();
        enc.write_segment(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 3 * 8 + (15 + 5 + 10 + 2) * 8);
        assert_eq!(MlpEncoder::read_segment(&mut &buf[..]).unwrap(), enc);
    }
}
