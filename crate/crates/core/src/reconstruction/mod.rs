//! The iterative render-and-refine pipeline.
//!
//! Each stage runs three steps:
//! 1. fit the albedo to the input image under the current shape and lighting,
//! 2. render pseudo samples under random views and lights and project them
//!    onto the image manifold,
//! 3. jointly refine depth, albedo and per-sample views and lights against the
//!    projected samples and the input image.

pub mod loss;
pub mod multiscale;
pub mod optim;

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::geometry::{self, intrinsics_from_fov, CameraIntrinsics, DepthMap, NormalMap, ViewBounds, Viewpoint};
use crate::grid::{Grid, Image, Mask, Rgb};
use crate::linalg::Vec3;
use crate::manifold::{ManifoldProjector, ProjectionRequest, SampleId};
use crate::priors::{build_prior, PriorSpec};
use crate::renderer::{self, albedo_from_raw, raw_gradients, warp_mask, SharedScene, DEFAULT_BACKGROUND};
use crate::sampling::{sample_lighting, sample_viewpoint, LightingDistribution, SeedPolicy, ViewpointDistribution};
use crate::shading::{Lighting, LightingOffset, LightingParams};

use self::loss::{recon_loss_grad, smoothness_grad};
use self::multiscale::Upsampler;
use self::optim::Adam;

/// Adam step sizes per parameter group. Depth and albedo rates apply to the
/// raw (unconstrained) parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub depth: f64,
    pub albedo: f64,
    pub view: f64,
    pub light: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates { depth: 1e-2, albedo: 2e-2, view: 2e-3, light: 1e-2 }
    }
}

impl LearningRates {
    /// Rates for stage `stage` (1-based): the depth rate halves after each stage.
    pub fn decayed(self, stage: usize) -> Self {
        let f = libm::pow(0.5, stage.saturating_sub(1) as f64);
        LearningRates { depth: self.depth * f, ..self }
    }

    fn halved(&self) -> Self {
        LearningRates { depth: self.depth / 2.0, albedo: self.albedo / 2.0, view: self.view / 2.0, light: self.light / 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    /// Number of pseudo samples.
    pub m: usize,
    pub iters1: usize,
    /// Budget handed to the projector for each pseudo sample.
    pub iters2: usize,
    pub iters3: usize,
    pub lr: LearningRates,
    /// Projector regularization weight. The built-in projectors ignore it.
    pub lambda1: f64,
    pub lambda2: f64,
    pub pyramid_weight: f64,
    pub symmetric: bool,
    /// Number of coarse depth levels optimized in Step 3, with node spacings
    /// 2, 4, 8, ... pixels. Zero optimizes per-pixel depth only.
    pub depth_levels: usize,
    /// Leading Step-3 iterations that update only views and lights.
    pub warmup: usize,
    /// Whether Step 3 also fits the projected samples of earlier stages,
    /// starting from their refined views and lights.
    pub keep_samples: bool,
    /// Cosine decay of every Step-3 rate down to a tenth.
    pub anneal: bool,
    /// Holds the mean rotation of the sample viewpoints at the mean of their
    /// hints. A common rotation of all sample views can otherwise trade off
    /// against a tilt of the depth map.
    pub pin_mean_view: bool,
}

impl StageConfig {
    /// Default schedule for stage `stage` (1-based).
    pub fn default_for(stage: usize) -> Self {
        let first = stage <= 1;
        StageConfig {
            m: 32,
            iters1: if first { 350 } else { 100 },
            iters2: if first { 60 } else { 40 },
            iters3: if first { 300 } else { 200 },
            lr: LearningRates::default().decayed(stage),
            lambda1: 0.0,
            lambda2: 0.01,
            pyramid_weight: 0.5,
            symmetric: false,
            depth_levels: 4,
            warmup: 0,
            keep_samples: true,
            anneal: false,
            pin_mean_view: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        for (name, v) in [("lr.depth", lr.depth), ("lr.albedo", lr.albedo), ("lr.view", lr.view), ("lr.light", lr.light)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative number")));
            }
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::InvalidConfig("lambda2 must be ≥ 0".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::InvalidConfig("lambda1 must be ≥ 0".into()));
        }
        if !(self.pyramid_weight >= 0.0 && self.pyramid_weight.is_finite()) {
            return Err(Error::InvalidConfig("pyramid_weight must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// One entry per stage.
    pub stages: Vec<StageConfig>,
    pub prior: PriorSpec,
    pub viewpoints: ViewpointDistribution,
    pub lighting: LightingDistribution,
    pub seed: u64,
    pub bounds: ViewBounds,
    pub background: Rgb,
    /// Horizontal field of view in radians.
    pub fov: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig::with_stages(4)
    }
}

impl PipelineConfig {
    pub fn with_stages(n: usize) -> Self {
        PipelineConfig {
            stages: (1..=n).map(StageConfig::default_for).collect(),
            prior: PriorSpec::default(),
            viewpoints: ViewpointDistribution::default(),
            lighting: LightingDistribution::default(),
            seed: 0,
            bounds: ViewBounds::default(),
            background: DEFAULT_BACKGROUND,
            fov: 10f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("stages must be ≥ 1".into()));
        }
        for s in &self.stages {
            s.validate()?;
        }
        self.lighting.validate()?;
        self.viewpoints.cholesky()?;
        if !(self.fov > 0.0 && self.fov < core::f64::consts::PI) {
            return Err(Error::InvalidFov(self.fov));
        }
        Ok(())
    }
}

/// Everything being optimized for one input image.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceState {
    pub depth_raw: Grid<f64>,
    pub albedo_raw: Image,
    /// Per-sample viewpoints of the last Step 3; the input image is last.
    pub views: Vec<Viewpoint>,
    pub lights: Vec<Lighting>,
    /// Lighting of the input image.
    pub light: Lighting,
    pub stage: usize,
    pub symmetric: bool,
}

impl InstanceState {
    /// Starts from `prior` with mid-grey albedo under canonical lighting.
    pub fn new(prior: &DepthMap) -> Self {
        let (w, h) = prior.values.dims();
        InstanceState {
            depth_raw: prior.to_raw(),
            albedo_raw: Grid::filled(w, h, [0.0; 3]),
            views: Vec::new(),
            lights: Vec::new(),
            light: Lighting::CANONICAL,
            stage: 0,
            symmetric: false,
        }
    }

    pub fn depth(&self) -> DepthMap {
        DepthMap::from_raw(&self.depth_raw)
    }

    pub fn albedo(&self) -> Image {
        albedo_from_raw(&self.albedo_raw)
    }

    pub fn normals(&self, k: &CameraIntrinsics) -> Result<NormalMap> {
        geometry::compute_normals(&self.depth(), k)
    }

    pub fn scene(&self, k: &CameraIntrinsics) -> Result<SharedScene> {
        SharedScene::new(self.depth(), self.albedo(), k)
    }

    /// Replaces depth and albedo parameters by their mirror averages.
    pub fn symmetrize(&mut self) {
        self.depth_raw = mirror_combine(&self.depth_raw, |a, b| (a + b) / 2.0);
        self.albedo_raw = mirror_combine(&self.albedo_raw, |a, b| core::array::from_fn(|c| (a[c] + b[c]) / 2.0));
    }

    pub fn is_symmetric(&self) -> bool {
        let w = self.depth_raw.width();
        (0..self.depth_raw.height()).all(|i| {
            (0..w).all(|j| {
                self.depth_raw.get(i, j) == self.depth_raw.get(i, w - 1 - j)
                    && self.albedo_raw.get(i, j) == self.albedo_raw.get(i, w - 1 - j)
            })
        })
    }
}

/// `f(g(i, j), g(i, W-1-j))` at every pixel. With a commutative `f` the result
/// is bitwise mirror symmetric.
fn mirror_combine<T: Copy>(g: &Grid<T>, f: impl Fn(T, T) -> T) -> Grid<T> {
    let w = g.width();
    Grid::from_fn(w, g.height(), |i, j| f(*g.get(i, j), *g.get(i, w - 1 - j)))
}

fn add_rgb(a: Rgb, b: Rgb) -> Rgb {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// One entry of the Step-3 training set.
#[derive(Clone, Debug)]
pub struct ProjectedSample {
    pub image: Image,
    /// Region the loss may use, already moved into this sample's view.
    pub mask: Option<Mask>,
    pub hint_view: Viewpoint,
    pub hint_light: LightingOffset,
    /// Step-3 starting view and lighting when they differ from the hints, as
    /// for samples carried over from an earlier stage.
    pub start: Option<(Viewpoint, Lighting)>,
    /// View and lighting reported by the projector, if it knows them.
    pub fitted: Option<(Viewpoint, Lighting)>,
    pub converged: bool,
    pub residual: f64,
}

/// Fits the albedo to `image` under the state's depth, viewpoint zero and the
/// state's input lighting. Depth, views and lighting are untouched.
pub fn step1_fit_albedo(
    state: &mut InstanceState,
    image: &Image,
    mask: Option<&Mask>,
    k: &CameraIntrinsics,
    cfg: &StageConfig,
    background: Rgb,
) -> Result<()> {
    if cfg.iters1 == 0 {
        return Ok(());
    }
    image.check_same_dims(&state.albedo_raw)?;
    let depth = state.depth();
    let mut scene = SharedScene::new(depth, state.albedo(), k)?;
    let mut opt = Adam::new(3 * state.albedo_raw.len(), cfg.lr.albedo);
    for _ in 0..cfg.iters1 {
        scene.albedo = state.albedo();
        let (out, tape) = scene.render_taped(&Viewpoint::IDENTITY, &state.light, background)?;
        let (l, g_img) = recon_loss_grad(image, &out, mask, cfg.pyramid_weight)?;
        if !l.is_finite() {
            return Err(Error::Divergence);
        }
        let vg = scene.backward(&tape, &g_img);
        let (_, mut g_a) = raw_gradients(&state.depth_raw, &state.albedo_raw, &Grid::filled(1, 1, 0.0), &vg.albedo);
        if state.symmetric {
            g_a = mirror_combine(&g_a, add_rgb);
        }
        opt.step(state.albedo_raw.as_flat_mut(), g_a.as_flat());
    }
    Ok(())
}

/// Renders `cfg.m` pseudo samples from the current state, projects them, and
/// appends the input image as the last entry.
#[allow(clippy::too_many_arguments)]
pub fn step2_generate_and_project<E: Executor, P: ManifoldProjector + ?Sized>(
    state: &InstanceState,
    image: &Image,
    mask: Option<&Mask>,
    projector: &P,
    pipeline: &PipelineConfig,
    cfg: &StageConfig,
    k: &CameraIntrinsics,
    exec: &E,
) -> Result<Vec<ProjectedSample>> {
    let seeds = SeedPolicy::new(pipeline.seed);
    let chol = pipeline.viewpoints.cholesky()?;
    let scene = state.scene(k)?;
    let depth = state.depth();
    let stage = state.stage;
    let results = exec.map(cfg.m, |i| -> Result<ProjectedSample> {
        let v = sample_viewpoint(&chol, &pipeline.viewpoints.mean, &seeds, stage, i, &pipeline.bounds);
        let dl = sample_lighting(&pipeline.lighting, &seeds, stage, i);
        let pseudo = scene.render(&v, &state.light.with_offset(&dl), pipeline.background)?.image;
        let p = projector.project(&ProjectionRequest {
            id: SampleId { stage, index: i },
            pseudo: &pseudo,
            hint_view: v,
            hint_light: dl,
            budget: cfg.iters2,
        })?;
        p.image.check_same_dims(image)?;
        let m = match mask {
            Some(m) => Some(warp_mask(m, &depth, &v, k)?),
            None => None,
        };
        Ok(ProjectedSample {
            image: p.image,
            mask: m,
            hint_view: v,
            hint_light: dl,
            converged: p.converged,
            start: None,
            fitted: p.fitted,
            residual: p.residual,
        })
    });
    let mut out = results.into_iter().collect::<Result<Vec<_>>>()?;
    out.push(ProjectedSample {
        image: image.clone(),
        mask: mask.cloned(),
        hint_view: Viewpoint::IDENTITY,
        hint_light: LightingOffset::ZERO,
        converged: true,
        start: None,
        fitted: None,
        residual: 0.0,
    });
    Ok(out)
}

/// Loss trace of one Step 3 run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineReport {
    pub losses: Vec<f64>,
    /// Each sample's reconstruction loss at the last evaluated iterate.
    pub sample_losses: Vec<f64>,
    /// Number of divergence retries taken.
    pub retries: usize,
}

impl RefineReport {
    /// Indices `w` of windows `[w·len, (w+1)·len)` whose mean loss exceeds
    /// that of the previous window.
    pub fn window_violations(&self, len: usize) -> Vec<usize> {
        let means: Vec<f64> = self.losses.chunks_exact(len.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        (1..means.len()).filter(|&w| means[w] > means[w - 1]).collect()
    }
}

#[derive(Clone)]
struct Step3Params {
    /// Full-resolution raw depth.
    depth_raw: Grid<f64>,
    /// Coarse raw depth offsets, one per entry of `Step3Levels`.
    coarse: Vec<Grid<f64>>,
    albedo_raw: Image,
    views: Vec<[f64; 6]>,
    lights: Vec<LightingParams>,
}

struct Step3Levels(Vec<Upsampler>);

impl Step3Levels {
    fn new(width: usize, height: usize, levels: usize) -> Self {
        Step3Levels((1..=levels).map(|l| Upsampler::new(width, height, 1 << l)).collect())
    }

    /// Raw depth seen by the renderer.
    fn compose(&self, p: &Step3Params) -> Grid<f64> {
        let mut u = p.depth_raw.clone();
        for (up, c) in self.0.iter().zip(&p.coarse) {
            up.add_to(c, &mut u);
        }
        u
    }
}

/// Jointly refines shared depth and albedo plus per-sample views and lights.
/// The last sample is the input image; its viewpoint stays at the identity and
/// defines the reference frame.
pub fn step3_refine<E: Executor>(
    state: &mut InstanceState,
    samples: &[ProjectedSample],
    k: &CameraIntrinsics,
    cfg: &StageConfig,
    bounds: &ViewBounds,
    background: Rgb,
    exec: &E,
) -> Result<RefineReport> {
    if samples.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = samples.len();
    let last = n - 1;
    let (w, h) = state.depth_raw.dims();
    let levels = Step3Levels::new(w, h, cfg.depth_levels);
    let mut p = Step3Params {
        depth_raw: state.depth_raw.clone(),
        coarse: levels.0.iter().map(Upsampler::zeros).collect(),
        albedo_raw: state.albedo_raw.clone(),
        views: samples.iter().map(|s| s.start.map_or(s.hint_view, |x| x.0).clamped(bounds).to_array()).collect(),
        lights: samples
            .iter()
            .map(|s| LightingParams::from_lighting(&s.start.map_or_else(|| state.light.with_offset(&s.hint_light), |x| x.1)))
            .collect(),
    };
    p.views[last] = [0.0; 6];
    let anchor: Option<[f64; 3]> = (cfg.pin_mean_view && last > 0).then(|| {
        let hints: Vec<[f64; 6]> = samples[..last].iter().map(|s| s.hint_view.clamped(bounds).to_array()).collect();
        mean_rotation(&hints)
    });
    let mut report = RefineReport::default();
    let mut lr = cfg.lr;
    let mut opts = Step3Optims::new(&p, &lr);
    let mut last_good: Option<Step3Params> = None;

    let mut it = 0;
    while it < cfg.iters3 {
        let views = effective_views(&p.views, anchor.as_ref(), bounds);
        let step = evaluate(&p, &views, &levels, samples, k, cfg, state.symmetric, background, exec);
        let (total, mut grads) = match step {
            Ok((l, g)) if l.is_finite() && g.is_finite() => (l, g),
            Ok(_) | Err(Error::NonFiniteDepth(..)) | Err(Error::DegenerateSurface(..)) => {
                if report.retries > 0 {
                    return Err(Error::Divergence);
                }
                report.retries += 1;
                lr = lr.halved();
                if let Some(g) = last_good.take() {
                    p = g;
                }
                opts = Step3Optims::new(&p, &lr);
                continue;
            }
            Err(e) => return Err(e),
        };
        report.losses.push(total);
        report.sample_losses = grads.sample_losses.clone();
        last_good = Some(p.clone());
        opts.set_rates(&lr, if cfg.anneal { anneal(it, cfg.iters3) } else { 1.0 });
        if it >= cfg.warmup {
            opts.depth.step(p.depth_raw.as_mut_slice(), grads.depth.as_slice());
            for ((opt, c), g) in opts.coarse.iter_mut().zip(&mut p.coarse).zip(&grads.coarse) {
                opt.step(c.as_mut_slice(), g.as_slice());
            }
            opts.albedo.step(p.albedo_raw.as_flat_mut(), grads.albedo.as_flat());
        }
        if anchor.is_some() && last > 0 {
            center_rotations(&mut grads.views[..last]);
        }
        for i in 0..last {
            opts.views[i].step(&mut p.views[i], &grads.views[i]);
        }
        for v in &mut p.views[..last] {
            *v = Viewpoint::from_array(*v).clamped(bounds).to_array();
        }
        for i in 0..n {
            opts.lights[i].step(&mut p.lights[i].0, &grads.lights[i]);
        }
        it += 1;
    }

    // Keep the last iterate only if it is still usable.
    if DepthMap::new(DepthMap::from_raw(&levels.compose(&p)).values).is_err() {
        if let Some(g) = last_good.take() {
            p = g;
        }
    }
    state.depth_raw = levels.compose(&p);
    state.albedo_raw = p.albedo_raw;
    state.views = effective_views(&p.views, anchor.as_ref(), bounds).into_iter().map(Viewpoint::from_array).collect();
    state.lights = p.lights.iter().map(|l| l.lighting()).collect();
    state.light = state.lights[last];
    Ok(report)
}

fn mean_rotation(views: &[[f64; 6]]) -> [f64; 3] {
    core::array::from_fn(|c| views.iter().map(|v| v[c]).sum::<f64>() / views.len().max(1) as f64)
}

/// Removes the common rotation from the sample views (all but the last, which
/// is the input image) and replaces it with `anchor`.
fn effective_views(raw: &[[f64; 6]], anchor: Option<&[f64; 3]>, bounds: &ViewBounds) -> Vec<[f64; 6]> {
    let mut out = raw.to_vec();
    let last = out.len() - 1;
    if let Some(a) = anchor {
        let mean = mean_rotation(&raw[..last]);
        for v in &mut out[..last] {
            for c in 0..3 {
                v[c] += a[c] - mean[c];
            }
            *v = Viewpoint::from_array(*v).clamped(bounds).to_array();
        }
    }
    out
}

/// Adjoint of the mean removal in [`effective_views`].
fn center_rotations(grads: &mut [[f64; 6]]) {
    let mean = mean_rotation(grads);
    for g in grads {
        for c in 0..3 {
            g[c] -= mean[c];
        }
    }
}

/// Cosine decay from 1 to 0.1 over `total` iterations.
fn anneal(it: usize, total: usize) -> f64 {
    let t = it as f64 / total.max(1) as f64;
    0.1 + 0.45 * (1.0 + libm::cos(core::f64::consts::PI * t))
}

struct Step3Optims {
    depth: Adam,
    coarse: Vec<Adam>,
    albedo: Adam,
    views: Vec<Adam>,
    lights: Vec<Adam>,
}

impl Step3Optims {
    fn new(p: &Step3Params, lr: &LearningRates) -> Self {
        Step3Optims {
            depth: Adam::new(p.depth_raw.len(), lr.depth),
            coarse: p.coarse.iter().map(|c| Adam::new(c.len(), lr.depth)).collect(),
            albedo: Adam::new(3 * p.albedo_raw.len(), lr.albedo),
            views: p.views.iter().map(|_| Adam::new(6, lr.view)).collect(),
            lights: p.lights.iter().map(|_| Adam::new(4, lr.light)).collect(),
        }
    }

    fn set_rates(&mut self, lr: &LearningRates, f: f64) {
        self.depth.lr = lr.depth * f;
        self.coarse.iter_mut().for_each(|o| o.lr = lr.depth * f);
        self.albedo.lr = lr.albedo * f;
        self.views.iter_mut().for_each(|o| o.lr = lr.view * f);
        self.lights.iter_mut().for_each(|o| o.lr = lr.light * f);
    }
}

struct Step3Grads {
    sample_losses: Vec<f64>,
    depth: Grid<f64>,
    coarse: Vec<Grid<f64>>,
    albedo: Image,
    views: Vec<[f64; 6]>,
    lights: Vec<[f64; 4]>,
}

impl Step3Grads {
    fn is_finite(&self) -> bool {
        self.depth.as_slice().iter().all(|v| v.is_finite())
            && self.albedo.as_flat().iter().all(|v| v.is_finite())
            && self.views.iter().flatten().all(|v| v.is_finite())
            && self.lights.iter().flatten().all(|v| v.is_finite())
    }
}

/// Total Step-3 loss and its gradient with respect to every raw parameter.
#[allow(clippy::too_many_arguments)]
fn evaluate<E: Executor>(
    p: &Step3Params,
    views: &[[f64; 6]],
    levels: &Step3Levels,
    samples: &[ProjectedSample],
    k: &CameraIntrinsics,
    cfg: &StageConfig,
    symmetric: bool,
    background: Rgb,
    exec: &E,
) -> Result<(f64, Step3Grads)> {
    let n = samples.len();
    let u = levels.compose(p);
    let depth = DepthMap::new(DepthMap::from_raw(&u).values)?;
    let scene = SharedScene::new(depth, albedo_from_raw(&p.albedo_raw), k)?;
    let inv_n = 1.0 / n as f64;
    let per_sample = exec.map(n, |i| {
        let s = &samples[i];
        let v = Viewpoint::from_array(views[i]);
        let (out, tape) = scene.render_taped(&v, &p.lights[i].lighting(), background)?;
        let (l, mut g) = recon_loss_grad(&s.image, &out, s.mask.as_ref(), cfg.pyramid_weight)?;
        for px in g.as_mut_slice() {
            for c in px.iter_mut() {
                *c *= inv_n;
            }
        }
        Ok((l * inv_n, scene.backward(&tape, &g)))
    });

    let (w, h) = scene.depth.values.dims();
    let mut total = 0.0;
    let mut g_alb = Grid::filled(w, h, [0.0; 3]);
    let mut g_nrm: NormalMap = Grid::filled(w, h, Vec3::ZERO);
    let mut g_pts = alloc::vec![Vec3::ZERO; w * h];
    let mut views = Vec::with_capacity(n);
    let mut lights = Vec::with_capacity(n);
    let mut sample_losses = Vec::with_capacity(n);
    for (i, r) in per_sample.into_iter().enumerate() {
        let (l, vg) = r?;
        total += l;
        sample_losses.push(l * n as f64);
        for (a, b) in g_alb.as_mut_slice().iter_mut().zip(vg.albedo.as_slice()) {
            *a = add_rgb(*a, *b);
        }
        for (a, b) in g_nrm.as_mut_slice().iter_mut().zip(vg.normals.as_slice()) {
            *a += *b;
        }
        for (a, b) in g_pts.iter_mut().zip(&vg.points) {
            *a += *b;
        }
        views.push(vg.view);
        lights.push(p.lights[i].pullback(vg.light));
    }
    let (mut g_d, g_a) = scene.pullback_shared(g_alb, &g_nrm, &g_pts);
    if cfg.lambda2 > 0.0 {
        let (s, gs) = smoothness_grad(&scene.depth.values)?;
        total += cfg.lambda2 * s;
        for (a, b) in g_d.as_mut_slice().iter_mut().zip(gs.as_slice()) {
            *a += cfg.lambda2 * b;
        }
    }
    let (depth, mut albedo) = raw_gradients(&u, &p.albedo_raw, &g_d, &g_a);
    let mut coarse: Vec<Grid<f64>> = levels.0.iter().map(|up| up.adjoint(&depth)).collect();
    let mut depth = depth;
    if symmetric {
        depth = mirror_combine(&depth, |a, b| a + b);
        albedo = mirror_combine(&albedo, add_rgb);
        for c in &mut coarse {
            *c = mirror_combine(c, |a, b| a + b);
        }
    }
    Ok((total, Step3Grads { depth, coarse, albedo, views, lights, sample_losses }))
}

/// Per-stage snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSnapshot {
    pub stage: usize,
    pub depth: DepthMap,
    pub albedo: Image,
    pub normals: NormalMap,
    /// The input image re-rendered from the refined state.
    pub recon: Image,
    pub light: Lighting,
    pub losses: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Final per-sample Step-3 losses; the input image is last.
    pub sample_losses: Vec<f64>,
    pub symmetric: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub state: InstanceState,
    pub prior: DepthMap,
    pub snapshots: Vec<StageSnapshot>,
    pub k: CameraIntrinsics,
}

/// Runs every configured stage on `image`.
pub fn run_pipeline<E: Executor, P: ManifoldProjector + ?Sized>(
    image: &Image,
    mask: Option<&Mask>,
    config: &PipelineConfig,
    projector: &P,
    exec: &E,
) -> Result<PipelineOutput> {
    run_pipeline_with(image, mask, config, projector, exec, |_| {})
}

/// [`run_pipeline`] with a callback invoked after each stage.
pub fn run_pipeline_with<E: Executor, P: ManifoldProjector + ?Sized>(
    image: &Image,
    mask: Option<&Mask>,
    config: &PipelineConfig,
    projector: &P,
    exec: &E,
    mut on_stage: impl FnMut(&StageSnapshot),
) -> Result<PipelineOutput> {
    config.validate()?;
    let (w, h) = image.dims();
    let k = intrinsics_from_fov(w, h, config.fov)?;
    if let Some(m) = mask {
        m.check_same_dims(image)?;
    }
    let prior = build_prior(&config.prior, w, h, mask)?;
    let mut state = InstanceState::new(&prior);
    let mut snapshots = Vec::with_capacity(config.stages.len());
    let mut carried: Vec<ProjectedSample> = Vec::new();

    for (idx, cfg) in config.stages.iter().enumerate() {
        let s = idx + 1;
        state.stage = s;
        state.symmetric = cfg.symmetric;
        if cfg.symmetric {
            state.symmetrize();
        }
        step1_fit_albedo(&mut state, image, mask, &k, cfg, config.background).map_err(|e| e.at(s, "step 1"))?;
        let fresh = step2_generate_and_project(&state, image, mask, projector, config, cfg, &k, exec)
            .map_err(|e| e.at(s, "step 2"))?;
        let residuals: Vec<f64> = fresh.iter().map(|p| p.residual).collect();
        let mut samples = if cfg.keep_samples { core::mem::take(&mut carried) } else { Vec::new() };
        samples.extend(fresh);
        let report =
            step3_refine(&mut state, &samples, &k, cfg, &config.bounds, config.background, exec).map_err(|e| e.at(s, "step 3"))?;
        samples.pop();
        for (smp, (v, l)) in samples.iter_mut().zip(state.views.iter().zip(&state.lights)) {
            smp.start = Some((*v, *l));
        }
        carried = samples;

        let scene = state.scene(&k).map_err(|e| e.at(s, "snapshot"))?;
        let recon = scene.render(&Viewpoint::IDENTITY, &state.light, config.background).map_err(|e| e.at(s, "snapshot"))?.image;
        let snap = StageSnapshot {
            stage: s,
            depth: scene.depth,
            albedo: scene.albedo,
            normals: scene.normals,
            recon,
            light: state.light,
            losses: report.losses,
            residuals,
            sample_losses: report.sample_losses,
            symmetric: cfg.symmetric,
        };
        on_stage(&snap);
        snapshots.push(snap);
    }
    Ok(PipelineOutput { state, prior, snapshots, k })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Manipulation {
    /// Yaw angles in radians, rendered under the state's input lighting.
    Rotate(Vec<f64>),
    /// Light directions `(lx, ly)` with the weights of `base`.
    Relight { base: Lighting, directions: Vec<(f64, f64)> },
}

/// `n` yaw angles evenly spaced over ±20°.
pub fn default_yaw_sweep(n: usize) -> Vec<f64> {
    linspace(-20f64.to_radians(), 20f64.to_radians(), n)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => alloc::vec![(a + b) / 2.0],
        _ => (0..n).map(|t| a + (b - a) * t as f64 / (n - 1) as f64).collect(),
    }
}

/// Re-renders a refined state along a rotation or relighting trajectory.
pub fn manipulate(
    depth: &DepthMap,
    albedo: &Image,
    light: &Lighting,
    k: &CameraIntrinsics,
    mode: &Manipulation,
    background: Rgb,
) -> Result<Vec<Image>> {
    let scene = SharedScene::new(depth.clone(), albedo.clone(), k)?;
    let bounds = ViewBounds::default();
    match mode {
        Manipulation::Rotate(yaws) => yaws
            .iter()
            .map(|&y| {
                let v = Viewpoint::yaw(y);
                v.check(&bounds)?;
                Ok(scene.render(&v, light, background)?.image)
            })
            .collect(),
        Manipulation::Relight { base, directions } => directions
            .iter()
            .map(|&(lx, ly)| Ok(scene.render(&Viewpoint::IDENTITY, &Lighting { lx, ly, ..*base }, background)?.image))
            .collect(),
    }
}

/// Renders the state the way the input image is explained.
pub fn reconstruct(state: &InstanceState, k: &CameraIntrinsics, background: Rgb) -> Result<Image> {
    Ok(renderer::render(&state.depth(), &state.albedo(), &Viewpoint::IDENTITY, &state.light, k, background)?.image)
}

