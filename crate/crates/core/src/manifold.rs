//! Projection of pseudo samples onto an image manifold.
//!
//! [`ManifoldProjector`] is the plug-in point. [`OracleProjector`] fits the
//! viewpoint and lighting of a known ground-truth scene to each pseudo sample
//! and returns the ground-truth render at the best fit, so every projected
//! sample lies exactly on the set of images that scene can produce.

use alloc::string::ToString;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, ViewBounds, Viewpoint};
use crate::grid::{Grid, Image, Rgb};
use crate::reconstruction::optim::Adam;
use crate::renderer::{SharedScene, DEFAULT_BACKGROUND};
use crate::sampling::{SeedPolicy, Stream};
use crate::shading::{Lighting, LightingOffset, LightingParams};

/// Identifies a projection call inside a pipeline run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleId {
    pub stage: usize,
    pub index: usize,
}

pub struct ProjectionRequest<'a> {
    pub id: SampleId,
    pub pseudo: &'a Image,
    pub hint_view: Viewpoint,
    pub hint_light: LightingOffset,
    /// Iteration budget for projectors that optimize.
    pub budget: usize,
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub image: Image,
    pub converged: bool,
    /// Mean L1 between the fitted (noise-free) projection and the pseudo sample.
    pub residual: f64,
    /// Fitted viewpoint and lighting, when the projector knows them.
    pub fitted: Option<(Viewpoint, Lighting)>,
}

pub trait ManifoldProjector: Send + Sync {
    fn project(&self, req: &ProjectionRequest<'_>) -> Result<Projection>;
}

/// Ground-truth scene that defines the oracle's manifold.
#[derive(Clone, Debug)]
pub struct OracleScene {
    pub depth: DepthMap,
    pub albedo: Image,
    pub lighting: Lighting,
    pub k: CameraIntrinsics,
    pub fit_budget: usize,
    pub noise_level: f64,
}

impl OracleScene {
    pub fn image(&self) -> Result<Image> {
        Ok(SharedScene::new(self.depth.clone(), self.albedo.clone(), &self.k)?
            .render(&Viewpoint::IDENTITY, &self.lighting, DEFAULT_BACKGROUND)?
            .image)
    }
}

pub struct OracleProjector {
    scene: SharedScene,
    pub base_lighting: Lighting,
    pub fit_budget: usize,
    pub noise_level: f64,
    pub seeds: SeedPolicy,
    pub bounds: ViewBounds,
    pub background: Rgb,
    pub view_lr: f64,
    pub light_lr: f64,
}

impl OracleProjector {
    pub fn new(scene: &OracleScene, seeds: SeedPolicy) -> Result<Self> {
        Ok(OracleProjector {
            scene: SharedScene::new(scene.depth.clone(), scene.albedo.clone(), &scene.k)?,
            base_lighting: scene.lighting,
            fit_budget: scene.fit_budget,
            noise_level: scene.noise_level,
            seeds,
            bounds: ViewBounds::default(),
            background: DEFAULT_BACKGROUND,
            view_lr: 2e-3,
            light_lr: 2e-2,
        })
    }

    pub fn render(&self, v: &Viewpoint, l: &Lighting) -> Result<Image> {
        Ok(self.scene.render(v, l, self.background)?.image)
    }

    /// Mean L1 over every pixel and channel, background included.
    fn distance_grad(a: &Image, b: &Image) -> (f64, Image) {
        let n = 3.0 * a.len() as f64;
        let mut loss = 0.0;
        let g = Grid::from_fn(a.width(), a.height(), |i, j| {
            let (p, q) = (a.get(i, j), b.get(i, j));
            core::array::from_fn(|c| {
                let d = p[c] - q[c];
                loss += d.abs() / n;
                if d > 0.0 {
                    1.0 / n
                } else if d < 0.0 {
                    -1.0 / n
                } else {
                    0.0
                }
            })
        });
        (loss, g)
    }

    /// Runs the fit with an explicit iteration budget.
    pub fn fit(&self, pseudo: &Image, hint_v: &Viewpoint, hint_l: &LightingOffset, budget: usize) -> Result<(Image, Viewpoint, Lighting, f64, f64)> {
        pseudo.check_same_dims(&Grid::filled(self.scene.k.width, self.scene.k.height, ()))?;
        let start_light = self.base_lighting.with_offset(hint_l);
        let start_view = hint_v.clamped(&self.bounds);
        let first = self.scene.render(&start_view, &start_light, self.background)?.image;
        let (init_res, _) = Self::distance_grad(&first, pseudo);
        let mut best = (first, start_view, start_light, init_res);

        let mut view = start_view.to_array();
        let mut light = LightingParams::from_lighting(&start_light);
        let mut opt_v = Adam::new(6, self.view_lr);
        let mut opt_l = Adam::new(4, self.light_lr);
        for it in 0..budget {
            let v = Viewpoint::from_array(view);
            let l = light.lighting();
            let (out, tape) = self.scene.render_taped(&v, &l, self.background)?;
            let (res, g_img) = Self::distance_grad(&out.image, pseudo);
            if it > 0 && res < best.3 {
                best = (out.image, v, l, res);
            }
            let vg = self.scene.backward(&tape, &g_img);
            opt_v.step(&mut view, &vg.view);
            let gl = light.pullback(vg.light);
            opt_l.step(&mut light.0, &gl);
            view = Viewpoint::from_array(view).clamped(&self.bounds).to_array();
        }
        if budget > 0 {
            let v = Viewpoint::from_array(view);
            let l = light.lighting();
            let img = self.scene.render(&v, &l, self.background)?.image;
            let (res, _) = Self::distance_grad(&img, pseudo);
            if res < best.3 {
                best = (img, v, l, res);
            }
        }
        Ok((best.0, best.1, best.2, best.3, init_res))
    }
}

impl ManifoldProjector for OracleProjector {
    fn project(&self, req: &ProjectionRequest<'_>) -> Result<Projection> {
        let (mut image, v, l, residual, init) = self.fit(req.pseudo, &req.hint_view, &req.hint_light, req.budget)?;
        if self.noise_level > 0.0 {
            let mut rng = self.seeds.rng(req.id.stage, req.id.index, Stream::Noise);
            for p in image.as_mut_slice() {
                for c in p.iter_mut() {
                    *c += self.noise_level * (2.0 * rng.random::<f64>() - 1.0);
                }
            }
        }
        Ok(Projection { image, converged: residual <= 0.99 * init, residual, fitted: Some((v, l)) })
    }
}

/// Fits the oracle scene to `pseudo` from the given hints using the scene's
/// own budget and noise level.
pub fn oracle_project(
    scene: &OracleScene,
    pseudo: &Image,
    hint_v: &Viewpoint,
    hint_l: &LightingOffset,
) -> Result<Projection> {
    let p = OracleProjector::new(scene, SeedPolicy::new(0))?;
    p.project(&ProjectionRequest {
        id: SampleId { stage: 0, index: 0 },
        pseudo,
        hint_view: *hint_v,
        hint_light: *hint_l,
        budget: scene.fit_budget,
    })
    .map_err(|e| match e {
        Error::ShapeMismatch { .. } => e,
        other => Error::Projector(other.to_string()),
    })
}
