//! Indexed datasets: every sample's training target is its own row index.
//!
//! True class labels travel with the data but are only reachable through
//! [`IndexedDataset::labels`], which is instrumented. The training path works
//! on an [`UnlabeledView`], which has no way to reach them at all.

use std::cell::Cell;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

pub const DATASET_MAGIC: &[u8; 7] = b"DIETDS1";

static FIREWALL_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static UNSUPERVISED_DEPTH: Cell<u32> = const { Cell::new(0) };
}

/// Marks the current thread as executing the unsupervised training path for
/// as long as the guard lives. Any label read on this thread meanwhile is
/// recorded as a firewall violation.
pub struct UnsupervisedScope(());

impl UnsupervisedScope {
    pub fn enter() -> Self {
        UNSUPERVISED_DEPTH.with(|d| d.set(d.get() + 1));
        UnsupervisedScope(())
    }
}

impl Drop for UnsupervisedScope {
    fn drop(&mut self) {
        UNSUPERVISED_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

/// Process-wide count of label reads made inside an [`UnsupervisedScope`].
pub fn firewall_violations() -> u64 {
    FIREWALL_VIOLATIONS.load(Ordering::SeqCst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    GaussianClusters,
    PatternedGrids,
}

impl DatasetKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::GaussianClusters => "gaussian-clusters",
            DatasetKind::PatternedGrids => "patterned-grids",
        }
    }
}

/// Recipe for a synthetic dataset.
///
/// `seed` fixes the task (cluster centers, base patterns); `sample_seed` fixes
/// the draw of samples from it, so a held-out split is the same spec with a
/// different `sample_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    /// Feature dimension for clusters; grid side for patterned grids.
    pub dim: usize,
    pub n_classes: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub sample_seed: u64,
}

impl SyntheticSpec {
    pub fn gaussian(
        n_samples: usize,
        dim: usize,
        n_classes: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            kind: DatasetKind::GaussianClusters,
            n_samples,
            dim,
            n_classes,
            noise_sigma,
            seed,
            sample_seed: 0,
        }
    }

    pub fn grids(
        n_samples: usize,
        side: usize,
        n_classes: usize,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            kind: DatasetKind::PatternedGrids,
            n_samples,
            dim: side,
            n_classes,
            noise_sigma,
            seed,
            sample_seed: 0,
        }
    }

    pub fn with_sample_seed(mut self, sample_seed: u64) -> Self {
        self.sample_seed = sample_seed;
        self
    }

    pub fn with_n_samples(mut self, n_samples: usize) -> Self {
        self.n_samples = n_samples;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Spec("n_classes must be at least 1".into()));
        }
        if self.n_samples < self.n_classes {
            return Err(Error::Spec(format!(
                "n_samples {} < n_classes {}",
                self.n_samples, self.n_classes
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Spec(format!(
                "noise_sigma {} must be >= 0",
                self.noise_sigma
            )));
        }
        match self.kind {
            DatasetKind::GaussianClusters if self.dim == 0 => {
                Err(Error::Spec("dimension must be at least 1".into()))
            }
            DatasetKind::PatternedGrids if self.dim < 4 => Err(Error::Spec(format!(
                "grid side {} must be at least 4",
                self.dim
            ))),
            _ => Ok(()),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self.kind {
            DatasetKind::GaussianClusters => self.dim,
            DatasetKind::PatternedGrids => self.dim * self.dim,
        }
    }

    pub fn generate(&self) -> Result<IndexedDataset> {
        match self.kind {
            DatasetKind::GaussianClusters => make_gaussian_clusters(self),
            DatasetKind::PatternedGrids => make_patterned_grids(self),
        }
    }
}

const TAG_CENTERS: u64 = 0xC0;
const TAG_SAMPLES: u64 = 0x5A;

#[derive(Debug)]
pub struct IndexedDataset {
    name: String,
    features: Matrix,
    labels: Vec<u32>,
    n_classes: usize,
    grid_side: Option<usize>,
    provenance: Option<SyntheticSpec>,
    label_reads: Arc<AtomicU64>,
}

impl Clone for IndexedDataset {
    /// Clones get their own label-read counter.
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            grid_side: self.grid_side,
            provenance: self.provenance.clone(),
            label_reads: Arc::new(AtomicU64::new(0)),
        }
    }
}

impl PartialEq for IndexedDataset {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.labels == other.labels
            && self.n_classes == other.n_classes
            && self.grid_side == other.grid_side
    }
}

impl IndexedDataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<u32>,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::dim(
                "IndexedDataset::new",
                format!("{} labels for {} samples", labels.len(), features.rows()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
            return Err(Error::Spec(format!("label {bad} outside [0, {n_classes})")));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            n_classes,
            grid_side: None,
            provenance: None,
            label_reads: Arc::new(AtomicU64::new(0)),
        })
    }

    pub fn with_grid_side(mut self, side: usize) -> Result<Self> {
        if side * side != self.features.cols() {
            return Err(Error::Spec(format!(
                "grid side {side} does not match dimension {}",
                self.features.cols()
            )));
        }
        self.grid_side = Some(side);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn grid_side(&self) -> Option<usize> {
        self.grid_side
    }

    pub fn provenance(&self) -> Option<&SyntheticSpec> {
        self.provenance.as_ref()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Sample `n` and its training target, which is `n` itself.
    pub fn sample(&self, n: usize) -> (&[f64], usize) {
        (self.features.row(n), n)
    }

    /// True class labels. Every call is counted.
    pub fn labels(&self) -> &[u32] {
        self.label_reads.fetch_add(1, Ordering::SeqCst);
        if UNSUPERVISED_DEPTH.with(Cell::get) > 0 {
            FIREWALL_VIOLATIONS.fetch_add(1, Ordering::SeqCst);
        }
        &self.labels
    }

    pub fn label_reads(&self) -> u64 {
        self.label_reads.load(Ordering::SeqCst)
    }

    /// Label-free view handed to the unsupervised training path.
    pub fn unlabeled(&self) -> UnlabeledView<'_> {
        UnlabeledView {
            features: &self.features,
            grid_side: self.grid_side,
        }
    }

    /// Standard deviation of all feature entries.
    pub fn feature_std(&self) -> f64 {
        let data = self.features.data();
        if data.is_empty() {
            return 0.0;
        }
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        (data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    }

    /// Keeps the listed rows (in the given order); targets become 0..m-1.
    pub(crate) fn select_rows(&self, rows: &[usize], name: String) -> IndexedDataset {
        IndexedDataset {
            name,
            features: self.features.gather_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_classes: self.n_classes,
            grid_side: self.grid_side,
            provenance: self.provenance.clone(),
            label_reads: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Writes the `DIETDS1` container: magic, u64 N, D, C (little endian),
    /// N×D f64 features, N u32 labels.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        for v in [self.len(), self.dim(), self.n_classes] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for v in self.features.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        for l in &self.labels {
            w.write_all(&l.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R, name: impl Into<String>) -> Result<Self> {
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = usize::try_from(u64::from_le_bytes(word))
                .map_err(|_| Error::Format("dataset header overflows".into()))?;
        }
        let [n, d, c] = header;
        let count = n
            .checked_mul(d)
            .ok_or_else(|| Error::Format("dataset size overflows".into()))?;
        let mut features = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word)?;
            features.push(f64::from_le_bytes(word));
        }
        let mut labels = Vec::with_capacity(n);
        let mut half = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut half)?;
            labels.push(u32::from_le_bytes(half));
        }
        IndexedDataset::new(name, Matrix::from_vec(n, d, features)?, labels, c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::read_from(std::io::BufReader::new(f), name)
    }
}

/// Features and index targets only.
#[derive(Clone, Copy, Debug)]
pub struct UnlabeledView<'a> {
    features: &'a Matrix,
    grid_side: Option<usize>,
}

impl<'a> UnlabeledView<'a> {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn grid_side(&self) -> Option<usize> {
        self.grid_side
    }

    pub fn features(&self) -> &'a Matrix {
        self.features
    }

    pub fn sample(&self, n: usize) -> (&'a [f64], usize) {
        (self.features.row(n), n)
    }
}

/// Class centers on the unit sphere; sample = center + N(0, σ²I).
pub fn make_gaussian_clusters(spec: &SyntheticSpec) -> Result<IndexedDataset> {
    if spec.kind != DatasetKind::GaussianClusters {
        return Err(Error::Spec("expected a gaussian-clusters spec".into()));
    }
    spec.validate()?;
    let d = spec.dim;
    let mut rng = Rng::derived(spec.seed, &[TAG_CENTERS]);
    let mut centers = Vec::with_capacity(spec.n_classes);
    while centers.len() < spec.n_classes {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            centers.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
        }
    }
    let mut rng = Rng::derived(spec.seed, &[TAG_SAMPLES, spec.sample_seed]);
    let mut features = Matrix::zeros(spec.n_samples, d);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let c = i % spec.n_classes;
        labels.push(c as u32);
        for (x, mu) in features.row_mut(i).iter_mut().zip(&centers[c]) {
            *x = mu + spec.noise_sigma * rng.normal();
        }
    }
    let mut ds = IndexedDataset::new(spec_name(spec), features, labels, spec.n_classes)?;
    ds.provenance = Some(spec.clone());
    Ok(ds)
}

/// Base pattern of class `c` on a `side`×`side` grid: oriented bars whose
/// angle and frequency depend on the class, with a checker overlay on odd ids.
pub fn grid_pattern(c: usize, n_classes: usize, side: usize) -> Vec<f64> {
    let angle = std::f64::consts::PI * c as f64 / n_classes as f64;
    let freq = 1.0 + (c % 3) as f64;
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut out = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            let (u, v) = (col as f64 + 0.5, row as f64 + 0.5);
            let phase = std::f64::consts::TAU * freq * (u * ca + v * sa) / side as f64;
            let mut p = 0.5 * phase.cos();
            if c % 2 == 1 {
                let checker = if (row / 2 + col / 2) % 2 == 0 {
                    0.25
                } else {
                    -0.25
                };
                p += checker;
            }
            out.push(p);
        }
    }
    out
}

pub fn make_patterned_grids(spec: &SyntheticSpec) -> Result<IndexedDataset> {
    if spec.kind != DatasetKind::PatternedGrids {
        return Err(Error::Spec("expected a patterned-grids spec".into()));
    }
    spec.validate()?;
    let side = spec.dim;
    let bases: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|c| grid_pattern(c, spec.n_classes, side))
        .collect();
    let mut rng = Rng::derived(spec.seed, &[TAG_SAMPLES, spec.sample_seed]);
    let mut features = Matrix::zeros(spec.n_samples, side * side);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let c = i % spec.n_classes;
        labels.push(c as u32);
        for (x, b) in features.row_mut(i).iter_mut().zip(&bases[c]) {
            *x = b + spec.noise_sigma * rng.normal();
        }
    }
    let mut ds = IndexedDataset::new(spec_name(spec), features, labels, spec.n_classes)?
        .with_grid_side(side)?;
    ds.provenance = Some(spec.clone());
    Ok(ds)
}

fn spec_name(spec: &SyntheticSpec) -> String {
    format!(
        "{}-n{}-d{}-c{}-s{}",
        spec.kind.as_str(),
        spec.n_samples,
        spec.dim,
        spec.n_classes,
        spec.sample_seed
    )
}
