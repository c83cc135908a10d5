//! Linear evaluation of frozen encoder features against the true labels.
//!
//! The probe is multinomial logistic regression trained by gradient descent
//! from a zero init. Features are standardized per dimension with training
//! statistics, and the step size is `lr / L` where `L` bounds the curvature of
//! the objective (half the top eigenvalue of the augmented feature Gram
//! matrix, found by power iteration, plus the L2 penalty). Any `lr` in
//! `(0, 1]` therefore decreases the full-batch loss monotonically.

use serde::{Deserialize, Serialize};

use crate::data::IndexedDataset;
use crate::encoder::MlpEncoder;
use crate::error::{Error, Result};
use crate::numeric::ops::softmax_in_place;
use crate::numeric::{matmul_nt, matmul_tn, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2_penalty: f64,
    /// Passes over the training features.
    pub epochs: usize,
    /// Step size as a fraction of the inverse curvature bound.
    pub lr: f64,
    /// 0 means full batch.
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2_penalty: 1e-4,
            epochs: 300,
            lr: 1.0,
            batch_size: 0,
        }
    }
}

impl ProbeConfig {
    /// Cheaper budget used for periodic probes during training.
    pub fn online() -> Self {
        Self {
            epochs: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l2_penalty.is_nan() || self.l2_penalty < 0.0 {
            return Err(Error::Config("probe l2_penalty must be >= 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("probe lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    /// C × K.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.mean.len() {
            return Err(Error::dim(
                "probe logits",
                format!(
                    "{} feature columns for a probe over {}",
                    features.cols(),
                    self.mean.len()
                ),
            ));
        }
        let xs = standardize(features, &self.mean, &self.inv_std);
        let mut z = matmul_nt(&xs, &self.weights)?;
        z.add_row_vector(&self.bias)?;
        Ok(z)
    }
}

/// Clean features of every sample; the encoder is only read.
pub fn extract_features(enc: &MlpEncoder, ds: &IndexedDataset) -> Result<Matrix> {
    enc.encode(ds.features())
}

pub fn fit_probe(
    features: &Matrix,
    labels: &[u32],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeModel> {
    fit_probe_traced(features, labels, n_classes, cfg).map(|(m, _)| m)
}

/// Like [`fit_probe`], also returning the training objective before every
/// step and after the last one.
pub fn fit_probe_traced(
    features: &Matrix,
    labels: &[u32],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(ProbeModel, Vec<f64>)> {
    cfg.validate()?;
    let (n, k) = features.shape();
    if labels.len() != n || n == 0 {
        return Err(Error::dim(
            "fit_probe",
            format!("{} labels for {n} samples", labels.len()),
        ));
    }
    if n_classes == 0 {
        return Err(Error::Spec("probe needs at least one class".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::Target {
            target: bad as usize,
            n_classes,
        });
    }
    let (mean, inv_std) = column_stats(features);
    let xs = standardize(features, &mean, &inv_std);
    let curvature = 0.5 * top_gram_eigenvalue(&xs) + cfg.l2_penalty;
    let step = cfg.lr / curvature.max(1e-12);

    let mut model = ProbeModel {
        weights: Matrix::zeros(n_classes, k),
        bias: vec![0.0; n_classes],
        mean,
        inv_std,
    };
    let batch = if cfg.batch_size == 0 {
        n
    } else {
        cfg.batch_size.min(n)
    };
    let mut history = Vec::new();
    for _ in 0..cfg.epochs {
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let xb = if batch == n {
                xs.clone()
            } else {
                xs.gather_rows(&rows)
            };
            let (loss, gw, gb) = objective(&model, &xb, &labels[start..end], cfg.l2_penalty)?;
            history.push(loss);
            for (w, g) in model.weights.data_mut().iter_mut().zip(gw.data()) {
                *w -= step * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= step * g;
            }
            start = end;
        }
    }
    let (final_loss, _, _) = objective(&model, &xs, labels, cfg.l2_penalty)?;
    history.push(final_loss);
    if !model.weights.is_finite() || model.bias.iter().any(|b| !b.is_finite()) {
        return Err(Error::NonFinite("fit_probe"));
    }
    Ok((model, history))
}

/// Fraction of rows whose arg-max logit equals the label; ties go to the
/// lowest class index.
pub fn top1_accuracy(model: &ProbeModel, features: &Matrix, labels: &[u32]) -> Result<f64> {
    let z = model.logits(features)?;
    accuracy_from_logits(&z, labels)
}

pub fn accuracy_from_logits(z: &Matrix, labels: &[u32]) -> Result<f64> {
    if labels.len() != z.rows() {
        return Err(Error::dim(
            "top1_accuracy",
            format!("{} labels for {} rows", labels.len(), z.rows()),
        ));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax(z.row(r)) == l as usize)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fits on `train` features and reports top-1 on `test`. Reads each split's
/// labels once.
pub fn probe_accuracy(
    enc: &MlpEncoder,
    train: &IndexedDataset,
    test: &IndexedDataset,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let f_train = extract_features(enc, train)?;
    let f_test = extract_features(enc, test)?;
    let c = train.n_classes().max(test.n_classes());
    let model = fit_probe(&f_train, train.labels(), c, cfg)?;
    top1_accuracy(&model, &f_test, test.labels())
}

/// Mean cross-entropy plus `l2/2·‖W‖²`, and its gradients.
fn objective(
    model: &ProbeModel,
    xs: &Matrix,
    labels: &[u32],
    l2: f64,
) -> Result<(f64, Matrix, Vec<f64>)> {
    let b = xs.rows() as f64;
    let mut p = matmul_nt(xs, &model.weights)?;
    p.add_row_vector(&model.bias)?;
    let mut loss = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        let row = p.row_mut(r);
        let z_l = row[l as usize];
        let lse = softmax_in_place(row);
        loss += lse - z_l;
        row[l as usize] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b);
    }
    loss /= b;
    let mut gw = matmul_tn(&p, xs)?;
    for (g, w) in gw.data_mut().iter_mut().zip(model.weights.data()) {
        *g += l2 * w;
    }
    loss += 0.5 * l2 * model.weights.data().iter().map(|w| w * w).sum::<f64>();
    Ok((loss, gw, p.col_sums()))
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for ((v, &xv), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *v += (xv - m) * (xv - m);
        }
    }
    let inv_std = var
        .into_iter()
        .map(|v| {
            let sd = (v / n).sqrt();
            if sd > 1e-12 {
                1.0 / sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, inv_std)
}

fn standardize(x: &Matrix, mean: &[f64], inv_std: &[f64]) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((v, m), s) in out.row_mut(r).iter_mut().zip(mean).zip(inv_std) {
            *v = (*v - m) * s;
        }
    }
    out
}

/// Largest eigenvalue of `[X 1]ᵀ[X 1] / N` by power iteration, inflated
/// slightly since power iteration approaches it from below.
fn top_gram_eigenvalue(xs: &Matrix) -> f64 {
    let (n, k) = xs.shape();
    let mut v = vec![1.0 / ((k + 1) as f64).sqrt(); k + 1];
    let mut lambda = 0.0;
    for _ in 0..100 {
        // u = X̃ v (length n), then w = X̃ᵀ u / n.
        let mut w = vec![0.0; k + 1];
        for r in 0..n {
            let row = xs.row(r);
            let u: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[k];
            for (wi, a) in w.iter_mut().zip(row) {
                *wi += a * u;
            }
            w[k] += u;
        }
        w.iter_mut().for_each(|x| *x /= n as f64);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|x| x / norm).collect();
    }
    lambda * 1.05
}
