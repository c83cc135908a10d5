//! Tiered data augmentation.
//!
//! Three nested strength tiers with two transforms each. Grid data (images
//! flattened row-major) gets image-style transforms; plain vectors get
//! analogues with the same slot probabilities.
//!
//! | tier | grid                              | vector                          | p    |
//! |------|-----------------------------------|---------------------------------|------|
//! | 1    | random crop + nearest resize      | additive noise (0.1 · std)      | 1.0  |
//! | 1    | horizontal flip                   | sign flip of a coordinate pair  | 0.5  |
//! | 2    | gain/offset jitter                | gain/offset jitter              | 0.3  |
//! | 2    | blend 50% toward the image mean   | blend 50% toward the mean       | 0.2  |
//! | 3    | 3×3 box blur                      | 3-tap moving average            | 0.2  |
//! | 3    | erase a rectangle (10-25% area)   | erase a coordinate run (10-25%) | 0.25 |
//!
//! Each slot draws its coin before anything else and only draws magnitudes
//! when it fires, in tier order. A strength-3 policy with tiers 2 and 3
//! switched off therefore consumes the tier-1 draws exactly like a strength-1
//! policy and yields the same output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Grid,
    Vector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transform {
    CropResize,
    HorizontalFlip,
    GaussianNoise,
    SignFlip,
    ColorJitter,
    Grayscale,
    BoxBlur,
    Erase,
}

impl Transform {
    /// Transform occupying `(tier, slot)` for a layout; tiers are 1-based.
    pub fn at(layout: Layout, tier: usize, slot: usize) -> Transform {
        use Transform::*;
        match (layout, tier, slot) {
            (Layout::Grid, 1, 0) => CropResize,
            (Layout::Grid, 1, 1) => HorizontalFlip,
            (Layout::Vector, 1, 0) => GaussianNoise,
            (Layout::Vector, 1, 1) => SignFlip,
            (_, 2, 0) => ColorJitter,
            (_, 2, 1) => Grayscale,
            (_, 3, 0) => BoxBlur,
            (_, 3, 1) => Erase,
            _ => panic!("no transform at tier {tier} slot {slot}"),
        }
    }
}

pub const DEFAULT_PROBS: [[f64; 2]; 3] = [[1.0, 0.5], [0.3, 0.2], [0.2, 0.25]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub strength: u8,
    pub layout: Layout,
    /// `probs[tier - 1][slot]`.
    pub probs: [[f64; 2]; 3],
    /// Area fraction kept by the crop.
    pub crop_scale: (f64, f64),
    pub gain: (f64, f64),
    pub offset: (f64, f64),
    pub erase_area: (f64, f64),
    /// Typical feature magnitude; noise and offsets on vector data scale with it.
    pub feature_scale: f64,
    pub noise_factor: f64,
}

impl AugmentationPolicy {
    pub fn new(strength: u8, layout: Layout) -> Result<Self> {
        if !(1..=3).contains(&strength) {
            return Err(Error::Policy(format!("strength {strength} not in 1..=3")));
        }
        Ok(Self {
            strength,
            layout,
            probs: DEFAULT_PROBS,
            crop_scale: (0.6, 1.0),
            gain: (0.6, 1.4),
            offset: (-0.2, 0.2),
            erase_area: (0.1, 0.25),
            feature_scale: 1.0,
            noise_factor: 0.1,
        })
    }

    /// Grid layout when the data has a grid side, vector layout otherwise.
    pub fn for_data(strength: u8, grid_side: Option<usize>, feature_std: f64) -> Result<Self> {
        let layout = if grid_side.is_some() {
            Layout::Grid
        } else {
            Layout::Vector
        };
        let mut p = Self::new(strength, layout)?;
        p.feature_scale = feature_std;
        Ok(p)
    }

    pub fn with_prob(mut self, tier: usize, slot: usize, p: f64) -> Self {
        self.probs[tier - 1][slot] = p;
        self
    }

    /// Forces every probability of this policy to `p`.
    pub fn with_all_probs(mut self, p: f64) -> Self {
        self.probs = [[p; 2]; 3];
        self
    }

    pub fn transforms(&self) -> Vec<(Transform, f64)> {
        let mut out = Vec::new();
        for tier in 1..=self.strength as usize {
            for slot in 0..2 {
                out.push((
                    Transform::at(self.layout, tier, slot),
                    self.probs[tier - 1][slot],
                ));
            }
        }
        out
    }

    fn validate(&self, len: usize, grid_side: Option<usize>) -> Result<Option<usize>> {
        if !(1..=3).contains(&self.strength) {
            return Err(Error::Policy(format!(
                "strength {} not in 1..=3",
                self.strength
            )));
        }
        if self
            .probs
            .iter()
            .flatten()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Policy("probabilities must lie in [0, 1]".into()));
        }
        match self.layout {
            Layout::Vector => Ok(None),
            Layout::Grid => {
                let side = grid_side
                    .ok_or_else(|| Error::Policy("grid transforms need a grid side".into()))?;
                if side * side != len {
                    return Err(Error::Policy(format!(
                        "grid side {side} does not match sample length {len}"
                    )));
                }
                Ok(Some(side))
            }
        }
    }
}

/// Which transforms fired on one call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentTrace {
    pub fired: Vec<Transform>,
}

pub fn augment(
    x: &[f64],
    policy: &AugmentationPolicy,
    grid_side: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    augment_traced(x, policy, grid_side, rng).map(|(v, _)| v)
}

pub fn augment_traced(
    x: &[f64],
    policy: &AugmentationPolicy,
    grid_side: Option<usize>,
    rng: &mut Rng,
) -> Result<(Vec<f64>, AugmentTrace)> {
    let side = policy.validate(x.len(), grid_side)?;
    let mut out = x.to_vec();
    let mut trace = AugmentTrace::default();
    for tier in 1..=policy.strength as usize {
        for slot in 0..2 {
            if !rng.bernoulli(policy.probs[tier - 1][slot]) {
                continue;
            }
            let t = Transform::at(policy.layout, tier, slot);
            apply(t, &mut out, side, policy, rng);
            trace.fired.push(t);
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("augment"));
    }
    Ok((out, trace))
}

fn apply(t: Transform, x: &mut [f64], side: Option<usize>, p: &AugmentationPolicy, rng: &mut Rng) {
    match (t, side) {
        (Transform::CropResize, Some(g)) => crop_resize(x, g, p.crop_scale, rng),
        (Transform::HorizontalFlip, Some(g)) => {
            for row in x.chunks_exact_mut(g) {
                row.reverse();
            }
        }
        (Transform::GaussianNoise, _) => {
            let s = p.noise_factor * p.feature_scale;
            for v in x.iter_mut() {
                *v += s * rng.normal();
            }
        }
        (Transform::SignFlip, _) => {
            let d = x.len();
            let i = rng.below(d as u64) as usize;
            x[i] = -x[i];
            if d > 1 {
                let mut j = rng.below(d as u64 - 1) as usize;
                if j >= i {
                    j += 1;
                }
                x[j] = -x[j];
            }
        }
        (Transform::ColorJitter, _) => {
            let gain = rng.uniform(p.gain.0, p.gain.1);
            let offset = rng.uniform(p.offset.0, p.offset.1);
            let offset = match side {
                Some(_) => offset,
                None => offset * p.feature_scale,
            };
            for v in x.iter_mut() {
                *v = gain * *v + offset;
            }
        }
        (Transform::Grayscale, _) => {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            for v in x.iter_mut() {
                *v = 0.5 * *v + 0.5 * mean;
            }
        }
        (Transform::BoxBlur, Some(g)) => box_blur(x, g),
        (Transform::BoxBlur, None) => moving_average(x),
        (Transform::Erase, Some(g)) => erase_rect(x, g, p.erase_area, rng),
        (Transform::Erase, None) => {
            let d = x.len();
            let frac = rng.uniform(p.erase_area.0, p.erase_area.1);
            let width = ((frac * d as f64).ceil() as usize).clamp(1, d);
            let start = rng.range_inclusive(0, d - width);
            x[start..start + width].iter_mut().for_each(|v| *v = 0.0);
        }
        (t, None) => unreachable!("{t:?} needs a grid layout"),
    }
}

fn crop_resize(x: &mut [f64], g: usize, scale: (f64, f64), rng: &mut Rng) {
    let s = rng.uniform(scale.0, scale.1);
    let side = ((g as f64 * s.sqrt()).round() as usize).clamp(1, g);
    let r0 = rng.range_inclusive(0, g - side);
    let c0 = rng.range_inclusive(0, g - side);
    let src = x.to_vec();
    for r in 0..g {
        let sr = r0 + (r * side) / g;
        for c in 0..g {
            let sc = c0 + (c * side) / g;
            x[r * g + c] = src[sr * g + sc];
        }
    }
}

fn box_blur(x: &mut [f64], g: usize) {
    let src = x.to_vec();
    let clamp = |v: isize| v.clamp(0, g as isize - 1) as usize;
    for r in 0..g {
        for c in 0..g {
            let mut s = 0.0;
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    s += src[clamp(r as isize + dr) * g + clamp(c as isize + dc)];
                }
            }
            x[r * g + c] = s / 9.0;
        }
    }
}

fn moving_average(x: &mut [f64]) {
    let src = x.to_vec();
    let d = src.len();
    for i in 0..d {
        let lo = src[i.saturating_sub(1)];
        let hi = src[(i + 1).min(d - 1)];
        x[i] = (lo + src[i] + hi) / 3.0;
    }
}

fn erase_rect(x: &mut [f64], g: usize, area: (f64, f64), rng: &mut Rng) {
    let a = rng.uniform(area.0, area.1) * (g * g) as f64;
    let aspect = rng.uniform(0.5, 2.0);
    let h = ((a * aspect).sqrt().round() as usize).clamp(1, g);
    let w = ((a / aspect).sqrt().round() as usize).clamp(1, g);
    let r0 = rng.range_inclusive(0, g - h);
    let c0 = rng.range_inclusive(0, g - w);
    for r in r0..r0 + h {
        x[r * g + c0..r * g + c0 + w]
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
}
