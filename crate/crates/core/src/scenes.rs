//! Built-in ground-truth scenes for the oracle projector.

use alloc::format;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Viewpoint};
use crate::grid::{Grid, Image, Mask};
use crate::linalg;
use crate::manifold::OracleScene;
use crate::renderer::{SharedScene, DEFAULT_BACKGROUND};
use crate::shading::Lighting;

pub const MIN_SCENE_SIZE: usize = 16;
pub const SCENE_NAMES: [&str; 3] = ["hemisphere", "bump2", "ridge"];

const FAR: f64 = 1.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub depth: DepthMap,
    pub albedo: Image,
    pub lighting: Lighting,
    pub mask: Mask,
}

impl Scene {
    /// The scene seen from the reference view.
    pub fn image(&self, k: &CameraIntrinsics) -> Result<Image> {
        Ok(SharedScene::new(self.depth.clone(), self.albedo.clone(), k)?
            .render(&Viewpoint::IDENTITY, &self.lighting, DEFAULT_BACKGROUND)?
            .image)
    }

    pub fn oracle(&self, k: &CameraIntrinsics, fit_budget: usize, noise_level: f64) -> OracleScene {
        OracleScene {
            depth: self.depth.clone(),
            albedo: self.albedo.clone(),
            lighting: self.lighting,
            k: *k,
            fit_budget,
            noise_level,
        }
    }
}

pub fn build_scene(name: &str, width: usize, height: usize) -> Result<Scene> {
    if width < MIN_SCENE_SIZE || height < MIN_SCENE_SIZE {
        return Err(Error::InvalidSize { width, height, min: MIN_SCENE_SIZE });
    }
    match name {
        "hemisphere" => Ok(hemisphere(width, height)),
        "bump2" => Ok(bump2(width, height)),
        "ridge" => Ok(ridge(width, height)),
        other => Err(Error::InvalidConfig(format!("unknown scene {other:?}; expected one of hemisphere, bump2, ridge"))),
    }
}

fn centre(width: usize, height: usize) -> (f64, f64) {
    ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0)
}

/// Smooth colour pattern, mirror symmetric in `j` about the image centre.
fn symmetric_albedo(width: usize, height: usize) -> Image {
    let (ci, cj) = centre(width, height);
    let tau = 2.0 * core::f64::consts::PI;
    Grid::from_fn(width, height, |i, j| {
        let x = (j as f64 - cj) / width as f64;
        let y = (i as f64 - ci) / height as f64;
        let a = linalg::cos(tau * 1.5 * x);
        let b = linalg::sin(tau * 1.2 * y);
        [0.55 + 0.2 * a, 0.5 + 0.2 * b, 0.45 + 0.15 * a * b]
    })
}

/// Pattern without mirror symmetry.
fn skewed_albedo(width: usize, height: usize) -> Image {
    let tau = 2.0 * core::f64::consts::PI;
    Grid::from_fn(width, height, |i, j| {
        let x = j as f64 / width as f64;
        let y = i as f64 / height as f64;
        [
            0.55 + 0.2 * linalg::sin(tau * (1.1 * x + 0.4 * y)),
            0.5 + 0.2 * linalg::cos(tau * (0.7 * x - 1.3 * y)),
            0.45 + 0.15 * linalg::sin(tau * (1.9 * x + 0.2)),
        ]
    })
}

/// Sphere cap of radius `0.4 · min(W, H)` pixels whose relief matches its
/// radius at unit depth, so the bump is round rather than flattened.
pub fn hemisphere(width: usize, height: usize) -> Scene {
    let (ci, cj) = centre(width, height);
    let r = 0.4 * width.min(height) as f64;
    let near = 0.95;
    let depth = Grid::from_fn(width, height, |i, j| {
        let q = ((i as f64 - ci) / r).powi(2) + ((j as f64 - cj) / r).powi(2);
        FAR - (FAR - near) * linalg::sqrt((1.0 - q).max(0.0))
    });
    let mask = Grid::from_fn(width, height, |i, j| ((i as f64 - ci) / r).powi(2) + ((j as f64 - cj) / r).powi(2) < 1.0);
    Scene {
        depth: DepthMap::new(depth).expect("depth inside range"),
        albedo: symmetric_albedo(width, height),
        lighting: Lighting::new(0.3, -0.2, 0.5, 0.5),
        mask,
    }
}

/// Two smooth bumps of different sizes, neither centred in `j`.
pub fn bump2(width: usize, height: usize) -> Scene {
    let (w, h) = (width as f64, height as f64);
    let bumps = [(0.45 * h, 0.36 * w, 0.16 * w, 0.06), (0.58 * h, 0.7 * w, 0.1 * w, 0.035)];
    let depth = Grid::from_fn(width, height, |i, j| {
        let mut d = FAR;
        for &(bi, bj, s, a) in &bumps {
            let q = ((i as f64 - bi).powi(2) + (j as f64 - bj).powi(2)) / (s * s);
            d -= a * linalg::exp(-q);
        }
        d
    });
    let mask = depth.map(|&d| d < FAR - 0.004);
    Scene {
        depth: DepthMap::new(depth).expect("depth inside range"),
        albedo: skewed_albedo(width, height),
        lighting: Lighting::new(-0.25, -0.15, 0.5, 0.5),
        mask,
    }
}

/// A horizontal ridge with a raised-cosine cross-section and tapered ends.
pub fn ridge(width: usize, height: usize) -> Scene {
    let (ci, cj) = centre(width, height);
    let half_w = 0.18 * height as f64;
    let half_l = 0.38 * width as f64;
    let pi = core::f64::consts::PI;
    let depth = Grid::from_fn(width, height, |i, j| {
        let u = (i as f64 - ci) / half_w;
        let v = (j as f64 - cj) / half_l;
        if u.abs() >= 1.0 || v.abs() >= 1.0 {
            return FAR;
        }
        let across = 0.5 * (1.0 + linalg::cos(pi * u));
        let along = 0.5 * (1.0 + linalg::cos(pi * v));
        FAR - 0.05 * across * linalg::sqrt(along)
    });
    let mask = depth.map(|&d| d < FAR - 0.002);
    Scene {
        depth: DepthMap::new(depth).expect("depth inside range"),
        albedo: symmetric_albedo(width, height),
        lighting: Lighting::new(0.0, -0.4, 0.45, 0.55),
        mask,
    }
}
