//! The commands behind the command-line front end.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use photogeo_core::exec::Executor;
use photogeo_core::geometry::intrinsics_from_fov;
use photogeo_core::manifold::{ManifoldProjector, OracleProjector, OracleScene};
use photogeo_core::metrics::{self, EvalReport};
use photogeo_core::reconstruction::{manipulate, run_pipeline_with, Manipulation, StageSnapshot};
use photogeo_core::renderer::{SharedScene, DEFAULT_BACKGROUND};
use photogeo_core::sampling::SeedPolicy;
use photogeo_core::scenes::{build_scene, Scene};
use photogeo_core::{CameraIntrinsics, DepthMap, Image, Lighting, Mask, Rgb, Viewpoint};

use crate::config::{LightingValues, ProjectorKind, RunConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::replay::ReplayProjector;

pub const DEFAULT_FOV_DEG: f64 = 10.0;

/// Rendering context stored next to each snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateInfo {
    pub lighting: LightingValues,
    pub fov_deg: f64,
    pub background: [f64; 3],
}

/// Contents of a stage's `metrics.json`. `side` is in units of 10⁻².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub side: f64,
    pub mad: f64,
    pub pixels: usize,
    /// Reconstruction of the input image, over the mask when one is known.
    pub psnr: f64,
    pub loss: f64,
    pub mean_residual: f64,
    pub symmetric: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// SIDE of the initial prior, in units of 10⁻², when ground truth is known.
    pub prior_side: Option<f64>,
    pub stages: Vec<StageMetrics>,
}

/// Output of `eval`. `side` is in units of 10⁻²; `mad` is absent when
/// normals cannot be formed (maps smaller than 2×2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub side: f64,
    pub mad: Option<f64>,
    pub pixels: usize,
}

fn intrinsics(width: usize, height: usize, fov_deg: f64) -> Result<CameraIntrinsics> {
    Ok(intrinsics_from_fov(width, height, fov_deg.to_radians())?)
}

/// Writes `depth_gt.pfm`, `albedo_gt.png`, `image.png` and `mask.png`.
pub fn cmd_synth(name: &str, width: usize, height: usize, out: &Path) -> Result<Scene> {
    let scene = build_scene(name, width, height)?;
    let k = intrinsics(width, height, DEFAULT_FOV_DEG)?;
    io::write_depth(&out.join("depth_gt.pfm"), &scene.depth)?;
    io::write_png(&out.join("albedo_gt.png"), &scene.albedo)?;
    io::write_png(&out.join("image.png"), &scene.image(&k)?)?;
    io::write_mask(&out.join("mask.png"), &scene.mask)?;
    Ok(scene)
}

/// Ground truth named by the configuration.
fn load_scene(cfg: &RunConfig) -> Result<Option<Scene>> {
    let Some(s) = &cfg.scene else { return Ok(None) };
    if let Some(name) = &s.name {
        let (w, h) = cfg.scene_size();
        return Ok(Some(build_scene(name, w, h)?));
    }
    let (dp, ap) = (s.depth.as_ref().expect("checked"), s.albedo.as_ref().expect("checked"));
    let depth = io::read_depth(dp)?;
    let albedo = io::read_png(ap)?;
    if albedo.dims() != depth.values.dims() {
        return Err(Error::decode(ap, "albedo and depth sizes differ"));
    }
    if depth.values.as_slice().iter().any(|&d| !(d > 0.9 && d < 1.1)) {
        return Err(Error::decode(dp, "scene depth must lie inside (0.9, 1.1)"));
    }
    let mask = match &s.mask {
        Some(mp) => {
            let m = io::read_mask(mp)?;
            if m.dims() != depth.values.dims() {
                return Err(Error::decode(mp, "mask and depth sizes differ"));
            }
            m
        }
        None => Mask::filled(depth.width(), depth.height(), true),
    };
    Ok(Some(Scene { depth, albedo, lighting: s.lighting.expect("checked").into(), mask }))
}

fn load_input(cfg: &RunConfig, scene: Option<&Scene>, k_fov: f64) -> Result<(Image, Option<Mask>)> {
    if let Some(inp) = &cfg.input {
        let image = io::read_png(&inp.image)?;
        let mask = match &inp.mask {
            Some(p) => {
                let m = io::read_mask(p)?;
                if m.dims() != image.dims() {
                    return Err(Error::decode(p, "mask and input sizes differ"));
                }
                Some(m)
            }
            None => scene.filter(|s| s.mask.dims() == image.dims()).map(|s| s.mask.clone()),
        };
        return Ok((image, mask));
    }
    let s = scene.expect("checked: scene or input is present");
    let k = intrinsics(s.depth.width(), s.depth.height(), k_fov)?;
    let image = SharedScene::new(s.depth.clone(), s.albedo.clone(), &k)?
        .render(&Viewpoint::IDENTITY, &s.lighting, cfg.background)?
        .image;
    Ok((image, Some(s.mask.clone())))
}

fn write_snapshot(
    dir: &Path,
    snap: &StageSnapshot,
    info: &StateInfo,
    truth: Option<(&DepthMap, &CameraIntrinsics)>,
    input: (&Image, Option<&Mask>),
) -> Result<Option<StageMetrics>> {
    io::write_depth(&dir.join("depth.pfm"), &snap.depth)?;
    io::write_normals(&dir.join("normals.pfm"), &snap.normals)?;
    io::write_png(&dir.join("albedo.png"), &snap.albedo)?;
    io::write_image_pfm(&dir.join("albedo.pfm"), &snap.albedo)?;
    io::write_png(&dir.join("recon.png"), &snap.recon)?;
    io::write_json(&dir.join("state.json"), info)?;
    let Some((gt, k)) = truth else { return Ok(None) };
    let (image, mask) = input;
    let r: EvalReport = metrics::evaluate(&snap.depth, gt, k, mask)?;
    let m = StageMetrics {
        stage: snap.stage,
        side: r.side_e2(),
        mad: r.mad,
        pixels: r.pixels,
        psnr: metrics::psnr(&snap.recon, image, mask)?,
        loss: snap.losses.last().copied().unwrap_or(f64::NAN),
        mean_residual: snap.residuals.iter().sum::<f64>() / snap.residuals.len().max(1) as f64,
        symmetric: snap.symmetric,
    };
    io::write_json(&dir.join("metrics.json"), &m)?;
    Ok(Some(m))
}

/// Validates `cfg`, runs the pipeline and writes `stage_S/` snapshots under
/// `out`.
pub fn cmd_run<E: Executor>(cfg: &RunConfig, out: &Path, exec: &E) -> Result<RunSummary> {
    let pipeline = cfg.pipeline()?;
    let scene = load_scene(cfg)?;
    let (image, mask) = load_input(cfg, scene.as_ref(), cfg.fov_deg)?;
    let (w, h) = image.dims();
    let k = intrinsics(w, h, cfg.fov_deg)?;
    let truth = scene.as_ref().filter(|s| s.depth.values.dims() == (w, h));

    let projector: Box<dyn ManifoldProjector> = match cfg.projector {
        ProjectorKind::Oracle => {
            let s = scene.as_ref().expect("checked");
            if s.depth.values.dims() != (w, h) {
                return Err(Error::Config(format!(
                    "input: image is {w}x{h} but the scene is {}x{}",
                    s.depth.width(),
                    s.depth.height()
                )));
            }
            let os: OracleScene = s.oracle(&k, 0, cfg.oracle.noise_level);
            let mut p = OracleProjector::new(&os, SeedPolicy::new(pipeline.seed))?;
            p.bounds = pipeline.bounds;
            p.background = pipeline.background;
            Box::new(p)
        }
        ProjectorKind::Replay => {
            let rp = ReplayProjector::new(cfg.replay_dir.clone().expect("checked"), w, h);
            rp.check(&pipeline.stages.iter().map(|s| s.m).collect::<Vec<_>>())?;
            Box::new(rp)
        }
    };

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut summary = RunSummary::default();
    if let Some(s) = truth {
        let prior = photogeo_core::priors::build_prior(&pipeline.prior, w, h, mask.as_ref())?;
        summary.prior_side = Some(100.0 * metrics::side(&prior, &s.depth, mask.as_ref())?);
        io::write_depth(&out.join("prior.pfm"), &prior)?;
    }
    let mut failure: Option<Error> = None;
    let result = run_pipeline_with(&image, mask.as_ref(), &pipeline, projector.as_ref(), exec, |snap| {
        if failure.is_some() {
            return;
        }
        let info = StateInfo { lighting: snap.light.into(), fov_deg: cfg.fov_deg, background: pipeline.background };
        let dir = out.join(format!("stage_{}", snap.stage));
        match write_snapshot(&dir, snap, &info, truth.map(|s| (&s.depth, &k)), (&image, mask.as_ref())) {
            Ok(Some(m)) => summary.stages.push(m),
            Ok(None) => {}
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn cmd_eval(pred: &Path, gt: &Path, mask: Option<&Path>, fov_deg: f64) -> Result<EvalOutput> {
    let p = io::read_depth(pred)?;
    let g = io::read_depth(gt)?;
    if p.values.dims() != g.values.dims() {
        return Err(Error::decode(pred, format!("size {:?} differs from ground truth {:?}", p.values.dims(), g.values.dims())));
    }
    let m = match mask {
        Some(mp) => {
            let m = io::read_mask(mp)?;
            if m.dims() != p.values.dims() {
                return Err(Error::decode(mp, "mask size differs from the depth maps"));
            }
            Some(m)
        }
        None => None,
    };
    let side = metrics::side(&p, &g, m.as_ref())?;
    let mad = intrinsics(p.width(), p.height(), fov_deg).ok().and_then(|k| {
        let np = photogeo_core::geometry::compute_normals(&p, &k).ok()?;
        let ng = photogeo_core::geometry::compute_normals(&g, &k).ok()?;
        metrics::mad(&np, &ng, m.as_ref()).ok()
    });
    let pixels = m.as_ref().map_or(p.values.len(), |m| m.count());
    Ok(EvalOutput { side: 100.0 * side, mad, pixels })
}

/// A snapshot directory loaded for re-rendering.
#[derive(Clone, Debug)]
pub struct LoadedState {
    pub depth: DepthMap,
    pub albedo: Image,
    pub light: Lighting,
    pub k: CameraIntrinsics,
    pub background: Rgb,
}

/// Reads `depth.pfm`, the albedo (`albedo.pfm` if present, else `albedo.png`)
/// and `state.json` when present.
pub fn load_state(dir: &Path) -> Result<LoadedState> {
    let depth = io::read_depth(&dir.join("depth.pfm"))?;
    let exact = dir.join("albedo.pfm");
    let albedo = if exact.is_file() { io::read_image_pfm(&exact)? } else { io::read_png(&dir.join("albedo.png"))? };
    if albedo.dims() != depth.values.dims() {
        return Err(Error::decode(dir, "albedo and depth sizes differ"));
    }
    let info_path = dir.join("state.json");
    let info = if info_path.is_file() {
        let text = std::fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::decode(&info_path, e))?
    } else {
        StateInfo { lighting: Lighting::CANONICAL.into(), fov_deg: DEFAULT_FOV_DEG, background: DEFAULT_BACKGROUND }
    };
    let k = intrinsics(depth.width(), depth.height(), info.fov_deg)?;
    Ok(LoadedState { depth, albedo, light: info.lighting.into(), k, background: info.background })
}

/// Writes `frame_NNN.png` for each image and returns the paths.
pub fn write_frames(out: &Path, frames: &[Image]) -> Result<Vec<PathBuf>> {
    frames
        .iter()
        .enumerate()
        .map(|(n, f)| {
            let p = out.join(format!("frame_{n:03}.png"));
            io::write_png(&p, f)?;
            Ok(p)
        })
        .collect()
}

pub fn cmd_render(state: &Path, view: &Viewpoint, light: Option<Lighting>, out: &Path) -> Result<Vec<PathBuf>> {
    let s = load_state(state)?;
    let scene = SharedScene::new(s.depth, s.albedo, &s.k)?;
    let img = scene.render(view, &light.unwrap_or(s.light), s.background)?.image;
    write_frames(out, &[img])
}

/// Yaw angles in radians.
pub fn cmd_rotate(state: &Path, yaws: Vec<f64>, out: &Path) -> Result<Vec<PathBuf>> {
    let s = load_state(state)?;
    let frames = manipulate(&s.depth, &s.albedo, &s.light, &s.k, &Manipulation::Rotate(yaws), s.background)?;
    write_frames(out, &frames)
}

/// Light directions `(lx, ly)`; `None` for `ly` keeps the stored value.
pub fn cmd_relight(state: &Path, lx: Vec<f64>, ly: Option<f64>, out: &Path) -> Result<Vec<PathBuf>> {
    let s = load_state(state)?;
    let ly = ly.unwrap_or(s.light.ly);
    let mode = Manipulation::Relight { base: s.light, directions: lx.into_iter().map(|x| (x, ly)).collect() };
    let frames = manipulate(&s.depth, &s.albedo, &s.light, &s.k, &mode, s.background)?;
    write_frames(out, &frames)
}
