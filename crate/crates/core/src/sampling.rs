//! Seeded draws of viewpoints and lighting offsets for pseudo samples.
//!
//! Each draw owns a ChaCha stream keyed by `(base seed, stage, index, kind)`,
//! so a sample's value does not depend on how many samples are drawn or in
//! which order they are evaluated.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{ViewBounds, Viewpoint};
use crate::linalg;
use crate::shading::LightingOffset;

/// Diagonal pivots with magnitude below this are treated as zero variance.
const PSD_JITTER: f64 = 1e-9;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream kinds, so the viewpoint and lighting draws of one sample are
/// independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Viewpoint = 1,
    Lighting = 2,
    Noise = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedPolicy {
    pub base_seed: u64,
}

impl SeedPolicy {
    pub fn new(base_seed: u64) -> Self {
        SeedPolicy { base_seed }
    }

    pub fn stream_seed(&self, stage: usize, index: usize, stream: Stream) -> u64 {
        let mut h = splitmix64(self.base_seed);
        h = splitmix64(h ^ stage as u64);
        h = splitmix64(h ^ index as u64);
        splitmix64(h ^ stream as u64)
    }

    pub fn rng(&self, stage: usize, index: usize, stream: Stream) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.stream_seed(stage, index, stream))
    }
}

/// Multivariate normal over `(rx, ry, rz, tx, ty, tz)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewpointDistribution {
    pub mean: [f64; 6],
    pub covariance: [[f64; 6]; 6],
}

impl Default for ViewpointDistribution {
    /// Zero mean; standard deviations of 5°, 15°, 5° for the rotations and 0.02
    /// for each translation; independent components.
    fn default() -> Self {
        let std = [5f64.to_radians(), 15f64.to_radians(), 5f64.to_radians(), 0.02, 0.02, 0.02];
        ViewpointDistribution::diagonal([0.0; 6], std)
    }
}

impl ViewpointDistribution {
    pub fn diagonal(mean: [f64; 6], std: [f64; 6]) -> Self {
        let mut covariance = [[0.0; 6]; 6];
        for k in 0..6 {
            covariance[k][k] = std[k] * std[k];
        }
        ViewpointDistribution { mean, covariance }
    }

    /// Lower-triangular factor `L` with `L Lᵀ = covariance`. Zero-variance
    /// directions get a zero column.
    pub fn cholesky(&self) -> Result<[[f64; 6]; 6]> {
        let c = &self.covariance;
        for r in 0..6 {
            for s in 0..r {
                if (c[r][s] - c[s][r]).abs() > 1e-12 * (1.0 + c[r][s].abs()) {
                    return Err(Error::NonPsdCovariance(c[r][s] - c[s][r]));
                }
            }
        }
        let mut l = [[0.0; 6]; 6];
        for j in 0..6 {
            let mut pivot = c[j][j];
            for k in 0..j {
                pivot -= l[j][k] * l[j][k];
            }
            if pivot < -PSD_JITTER {
                return Err(Error::NonPsdCovariance(pivot));
            }
            if pivot <= PSD_JITTER {
                continue;
            }
            let ljj = linalg::sqrt(pivot);
            l[j][j] = ljj;
            for i in j + 1..6 {
                let mut v = c[i][j];
                for k in 0..j {
                    v -= l[i][k] * l[j][k];
                }
                l[i][j] = v / ljj;
            }
        }
        Ok(l)
    }
}

/// Uniform ranges for the lighting offsets; the ambient offset is `alpha`
/// times the diffuse offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightingDistribution {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub dmin: f64,
    pub dmax: f64,
    pub alpha: f64,
}

impl LightingDistribution {
    pub const BFM: LightingDistribution =
        LightingDistribution { xmin: -0.9, xmax: 0.9, ymin: -0.3, ymax: 0.8, dmin: -0.1, dmax: 0.7, alpha: -0.4 };
    pub const GENERIC: LightingDistribution =
        LightingDistribution { xmin: -1.0, xmax: 1.0, ymin: -0.2, ymax: 0.8, dmin: -0.1, dmax: 0.6, alpha: -0.6 };

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "bfm" => Some(Self::BFM),
            "generic" => Some(Self::GENERIC),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.xmin > self.xmax || self.ymin > self.ymax || self.dmin > self.dmax {
            return Err(Error::InvalidConfig("lighting distribution needs min <= max".into()));
        }
        Ok(())
    }
}

impl Default for LightingDistribution {
    fn default() -> Self {
        Self::GENERIC
    }
}

#[inline]
fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}

/// One viewpoint draw for sample `index` of `stage`, clamped into `bounds`.
pub fn sample_viewpoint(
    chol: &[[f64; 6]; 6],
    mean: &[f64; 6],
    seeds: &SeedPolicy,
    stage: usize,
    index: usize,
    bounds: &ViewBounds,
) -> Viewpoint {
    let mut rng = seeds.rng(stage, index, Stream::Viewpoint);
    let z: [f64; 6] = core::array::from_fn(|_| rng.sample(StandardNormal));
    let mut v = *mean;
    for r in 0..6 {
        for c in 0..=r {
            v[r] += chol[r][c] * z[c];
        }
    }
    Viewpoint::from_array(v).clamped(bounds)
}

pub fn sample_viewpoints(
    dist: &ViewpointDistribution,
    n: usize,
    seeds: &SeedPolicy,
    stage: usize,
    bounds: &ViewBounds,
) -> Result<Vec<Viewpoint>> {
    if n == 0 {
        return Err(Error::NoSamples);
    }
    let chol = dist.cholesky()?;
    Ok((0..n).map(|i| sample_viewpoint(&chol, &dist.mean, seeds, stage, i, bounds)).collect())
}

pub fn sample_lighting(dist: &LightingDistribution, seeds: &SeedPolicy, stage: usize, index: usize) -> LightingOffset {
    let mut rng = seeds.rng(stage, index, Stream::Lighting);
    let dlx = uniform(&mut rng, dist.xmin, dist.xmax);
    let dly = uniform(&mut rng, dist.ymin, dist.ymax);
    let dkd = uniform(&mut rng, dist.dmin, dist.dmax);
    LightingOffset { dlx, dly, dkd, dks: dist.alpha * dkd }
}

pub fn sample_lightings(
    dist: &LightingDistribution,
    n: usize,
    seeds: &SeedPolicy,
    stage: usize,
) -> Result<Vec<LightingOffset>> {
    if n == 0 {
        return Err(Error::NoSamples);
    }
    dist.validate()?;
    Ok((0..n).map(|i| sample_lighting(dist, seeds, stage, i)).collect())
}
