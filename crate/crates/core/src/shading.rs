//! Lambertian shading: `J = (ks + kd · max(0, ⟨l, n⟩)) · a`.

use crate::error::Result;
use crate::geometry::NormalMap;
use crate::grid::{Grid, Image, Rgb};
use crate::linalg::{self, Vec3};

/// Light direction parameters and ambient/diffuse weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lighting {
    pub lx: f64,
    pub ly: f64,
    pub ks: f64,
    pub kd: f64,
}

impl Lighting {
    /// Front light, ambient only. Renders the albedo unchanged.
    pub const CANONICAL: Lighting = Lighting { lx: 0.0, ly: 0.0, ks: 1.0, kd: 0.0 };

    pub fn new(lx: f64, ly: f64, ks: f64, kd: f64) -> Self {
        Lighting { lx, ly, ks: ks.clamp(0.0, 1.0), kd: kd.clamp(0.0, 1.0) }
    }

    pub fn direction(&self) -> Vec3 {
        light_direction(self.lx, self.ly)
    }

    /// Adds sampled offsets. The weights are clamped back into `[0, 1]`.
    pub fn with_offset(&self, o: &LightingOffset) -> Lighting {
        Lighting::new(self.lx + o.dlx, self.ly + o.dly, self.ks + o.dks, self.kd + o.dkd)
    }
}

/// Additive lighting perturbation drawn in pseudo-sample generation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LightingOffset {
    pub dlx: f64,
    pub dly: f64,
    pub dkd: f64,
    pub dks: f64,
}

impl LightingOffset {
    pub const ZERO: LightingOffset = LightingOffset { dlx: 0.0, dly: 0.0, dkd: 0.0, dks: 0.0 };
}

/// Unconstrained lighting parameters used by the optimizers. The weights map
/// through `0.5 · (1 + tanh(·))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LightingParams(pub [f64; 4]);

/// Weights are kept this far inside `[0, 1]` when converting to raw form so the
/// inverse map stays finite.
const WEIGHT_MARGIN: f64 = 1e-3;

impl LightingParams {
    pub fn from_lighting(l: &Lighting) -> Self {
        let raw = |w: f64| linalg::atanh(2.0 * w.clamp(WEIGHT_MARGIN, 1.0 - WEIGHT_MARGIN) - 1.0);
        LightingParams([l.lx, l.ly, raw(l.ks), raw(l.kd)])
    }

    pub fn lighting(&self) -> Lighting {
        let [lx, ly, s, d] = self.0;
        Lighting { lx, ly, ks: weight_from_raw(s), kd: weight_from_raw(d) }
    }

    /// Chain rule from a `(lx, ly, ks, kd)` gradient to the raw parameters.
    pub fn pullback(&self, g: [f64; 4]) -> [f64; 4] {
        let t = |r: f64| {
            let h = linalg::tanh(r);
            0.5 * (1.0 - h * h)
        };
        [g[0], g[1], g[2] * t(self.0[2]), g[3] * t(self.0[3])]
    }
}

#[inline]
fn weight_from_raw(r: f64) -> f64 {
    0.5 * (1.0 + linalg::tanh(r))
}

/// `(lx, ly, 1) / ‖(lx, ly, 1)‖`.
pub fn light_direction(lx: f64, ly: f64) -> Vec3 {
    let n = linalg::sqrt(lx * lx + ly * ly + 1.0);
    Vec3::new(lx / n, ly / n, 1.0 / n)
}

/// Shaded texture. Values are not clamped.
pub fn shade(albedo: &Image, normals: &NormalMap, light: &Lighting) -> Result<Image> {
    albedo.check_same_dims(normals)?;
    let l = light.direction();
    let out = albedo
        .as_slice()
        .iter()
        .zip(normals.as_slice())
        .map(|(a, n)| {
            let s = light.ks + light.kd * l.dot(n).max(0.0);
            [s * a[0], s * a[1], s * a[2]]
        })
        .collect();
    Grid::from_vec(albedo.width(), albedo.height(), out)
}

/// Cotangents of [`shade`] with respect to its inputs.
pub struct ShadeGrad {
    pub albedo: Image,
    pub normals: NormalMap,
    /// `(lx, ly, ks, kd)`
    pub light: [f64; 4],
}

pub fn shade_vjp(albedo: &Image, normals: &NormalMap, light: &Lighting, grad: &Image) -> ShadeGrad {
    let l = light.direction();
    let (lx, ly) = (light.lx, light.ly);
    let q = lx * lx + ly * ly + 1.0;
    let inv = 1.0 / linalg::sqrt(q);
    // ∂l/∂lx and ∂l/∂ly
    let dl_dlx = Vec3::new(inv - lx * lx * inv / q, -lx * ly * inv / q, -lx * inv / q);
    let dl_dly = Vec3::new(-lx * ly * inv / q, inv - ly * ly * inv / q, -ly * inv / q);

    let (w, h) = albedo.dims();
    let mut g_a = Grid::filled(w, h, [0.0; 3]);
    let mut g_n = Grid::filled(w, h, Vec3::ZERO);
    let mut g_l = [0.0; 4];
    for idx in 0..albedo.len() {
        let g: &Rgb = &grad.as_slice()[idx];
        let a = &albedo.as_slice()[idx];
        let n = &normals.as_slice()[idx];
        let dot = l.dot(n);
        let lit = dot.max(0.0);
        let s = light.ks + light.kd * lit;
        g_a.as_mut_slice()[idx] = [g[0] * s, g[1] * s, g[2] * s];
        let ga = g[0] * a[0] + g[1] * a[1] + g[2] * a[2];
        g_l[2] += ga;
        g_l[3] += ga * lit;
        if dot > 0.0 {
            let gd = ga * light.kd;
            g_n.as_mut_slice()[idx] = l.scale(gd);
            g_l[0] += gd * dl_dlx.dot(n);
            g_l[1] += gd * dl_dly.dot(n);
        }
    }
    ShadeGrad { albedo: g_a, normals: g_n, light: g_l }
}
