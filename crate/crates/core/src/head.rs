//! The bias-free N-way linear head and its label-smoothed cross-entropy.
//!
//! `W` is stored class-major (N × K) so `logits = features · Wᵀ` and a subset
//! of classes is a contiguous gather of rows.
//!
//! With smoothing `α` the target distribution of a sample with index `n` is
//! `q_c = (1 − α)·[c = n] + α/N`: the smoothing mass is spread over all N
//! classes, the target included.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::numeric::matrix::check_finite;
use crate::numeric::{matmul, matmul_nt, matmul_tn, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct DietHead {
    weights: Matrix,
    alpha: f64,
}

impl DietHead {
    /// Entries uniform in `(−1/√K, 1/√K)`.
    pub fn init(n_classes: usize, feature_dim: usize, alpha: f64, seed: u64) -> Result<Self> {
        if n_classes == 0 || feature_dim == 0 {
            return Err(Error::Spec(format!(
                "head needs N, K >= 1 (got {n_classes}, {feature_dim})"
            )));
        }
        check_alpha(alpha)?;
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let mut rng = Rng::derived(seed, &[0x4E]);
        let weights = Matrix::from_fn(n_classes, feature_dim, |_, _| rng.uniform(-bound, bound));
        Ok(Self { weights, alpha })
    }

    pub fn from_weights(weights: Matrix, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::Spec("empty head".into()));
        }
        Ok(Self { weights, alpha })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn is_finite(&self) -> bool {
        self.weights.is_finite()
    }

    /// `features · Wᵀ`, one logit per class.
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        matmul_nt(features, &self.weights)
    }

    /// Returns `(grad_W, grad_features)` = `(gradᵀ · features, grad · W)`.
    pub fn backward(&self, features: &Matrix, grad_logits: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_features(features)?;
        if grad_logits.shape() != (features.rows(), self.n_classes()) {
            return Err(Error::dim(
                "head backward",
                format!(
                    "grad {:?} for {} samples x {} classes",
                    grad_logits.shape(),
                    features.rows(),
                    self.n_classes()
                ),
            ));
        }
        Ok((
            matmul_tn(grad_logits, features)?,
            matmul(grad_logits, &self.weights)?,
        ))
    }

    /// Loss and gradients restricted to `candidates`. Only the candidate rows
    /// of `W` are read; no N-wide row is ever formed.
    pub fn sampled_xent(
        &self,
        features: &Matrix,
        targets: &[usize],
        alpha: f64,
        candidates: &CandidateSet,
    ) -> Result<SampledStep> {
        self.check_features(features)?;
        if let Some(&bad) = candidates
            .classes()
            .iter()
            .find(|&&c| c >= self.n_classes())
        {
            return Err(Error::Target {
                target: bad,
                n_classes: self.n_classes(),
            });
        }
        let positions = targets
            .iter()
            .map(|&t| candidates.position(t).ok_or(Error::TargetNotCandidate(t)))
            .collect::<Result<Vec<_>>>()?;
        let w_cand = self.weights.gather_rows(candidates.classes());
        let logits = matmul_nt(features, &w_cand)?;
        let (loss, grad_logits) = xent_smoothed(&logits, &positions, alpha)?;
        let grad_rows = matmul_tn(&grad_logits, features)?;
        let grad_features = matmul(&grad_logits, &w_cand)?;
        Ok(SampledStep {
            loss,
            grad_logits,
            grad_rows,
            grad_features,
        })
    }

    /// Segment layout: u64 N, u64 K, f64 α, then N rows of K little-endian f64.
    pub fn write_segment<W: Write>(&self, w: &mut W) -> Result<()> {
        put_u64(w, self.n_classes() as u64)?;
        put_u64(w, self.feature_dim() as u64)?;
        put_f64(w, self.alpha)?;
        for &v in self.weights.data() {
            put_f64(w, v)?;
        }
        Ok(())
    }

    pub fn read_segment<R: Read>(r: &mut R) -> Result<Self> {
        let n = get_usize(r)?;
        let k = get_usize(r)?;
        let alpha = get_f64(r)?;
        let count = n
            .checked_mul(k)
            .ok_or_else(|| Error::Format("head size overflows".into()))?;
        let data = get_f64_n(r, count)?;
        Self::from_weights(Matrix::from_vec(n, k, data)?, alpha)
            .map_err(|e| Error::Format(format!("bad head segment: {e}")))
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.feature_dim() {
            return Err(Error::dim(
                "head",
                format!(
                    "features have {} columns, head expects {}",
                    features.cols(),
                    self.feature_dim()
                ),
            ));
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::Spec(format!(
            "label smoothing {alpha} not in [0, 1)"
        )))
    }
}

/// Output of [`DietHead::sampled_xent`]; gradient tensors are indexed by
/// candidate position, not class id.
#[derive(Clone, Debug)]
pub struct SampledStep {
    pub loss: f64,
    /// B × |candidates|.
    pub grad_logits: Matrix,
    /// |candidates| × K; row `i` is the gradient of `W[candidates[i]]`.
    pub grad_rows: Matrix,
    pub grad_features: Matrix,
}

/// Mean label-smoothed cross-entropy over the batch and its gradient with
/// respect to the logits, `(softmax(z) − q) / B`.
pub fn xent_smoothed(logits: &Matrix, targets: &[usize], alpha: f64) -> Result<(f64, Matrix)> {
    let (b, n) = logits.shape();
    if targets.len() != b {
        return Err(Error::dim(
            "xent_smoothed",
            format!("{} targets for {b} rows", targets.len()),
        ));
    }
    check_alpha(alpha)?;
    if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
        return Err(Error::Target {
            target: bad,
            n_classes: n,
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("xent_smoothed logits"));
    }
    let off = alpha / n as f64;
    let inv_b = 1.0 / b as f64;
    let mut grad = logits.clone();
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = grad.row_mut(r);
        let mut sum = 0.0;
        let mut sum_z = 0.0;
        for (e, &v) in g.iter_mut().zip(z) {
            *e = (v - max).exp();
            sum += *e;
            sum_z += v - max;
        }
        let log_sum = sum.ln();
        // −Σ q_c log p_c with log p_c = (z_c − max) − log_sum
        let log_p_target = (z[t] - max) - log_sum;
        let sum_log_p = sum_z - n as f64 * log_sum;
        total += -(1.0 - alpha) * log_p_target - off * sum_log_p;
        let inv_sum = 1.0 / sum;
        for v in g.iter_mut() {
            *v = (*v * inv_sum - off) * inv_b;
        }
        g[t] -= (1.0 - alpha) * inv_b;
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(Error::NonFinite("xent_smoothed loss"));
    }
    Ok((loss, check_finite(grad, "xent_smoothed gradient")?))
}

/// A sorted, duplicate-free set of class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    classes: Vec<usize>,
}

impl CandidateSet {
    pub fn new(mut classes: Vec<usize>) -> Self {
        classes.sort_unstable();
        classes.dedup();
        Self { classes }
    }

    pub fn all(n_classes: usize) -> Self {
        Self {
            classes: (0..n_classes).collect(),
        }
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn position(&self, class: usize) -> Option<usize> {
        self.classes.binary_search(&class).ok()
    }
}

/// Picks the classes a sampled step scores against.
pub trait CandidateSampler {
    fn sample(&self, targets: &[usize], n_classes: usize, rng: &mut Rng) -> CandidateSet;
}

/// The batch targets plus uniform negatives drawn without replacement, up to
/// `total` classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformNegatives {
    pub total: usize,
}

impl CandidateSampler for UniformNegatives {
    fn sample(&self, targets: &[usize], n_classes: usize, rng: &mut Rng) -> CandidateSet {
        if self.total >= n_classes {
            return CandidateSet::all(n_classes);
        }
        let mut chosen: HashSet<usize> = targets.iter().copied().collect();
        let mut classes: Vec<usize> = targets.to_vec();
        while chosen.len() < self.total {
            let c = rng.below(n_classes as u64) as usize;
            if chosen.insert(c) {
                classes.push(c);
            }
        }
        CandidateSet::new(classes)
    }
}
