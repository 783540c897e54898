//! JSON run configuration.
//!
//! Every object rejects unknown keys. Relative paths are resolved against the
//! directory holding the configuration file. Angles are in degrees except
//! inside `viewpoints`, which uses radians for the rotation components.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use photogeo_core::priors::{PriorKind, PriorSpec};
use photogeo_core::reconstruction::{PipelineConfig, StageConfig};
use photogeo_core::sampling::{LightingDistribution, ViewpointDistribution};
use photogeo_core::scenes::SCENE_NAMES;
use photogeo_core::{Lighting, ViewBounds};

use crate::error::{Error, Result};

fn default_stages() -> usize {
    4
}
fn default_size() -> usize {
    64
}
fn default_fov() -> f64 {
    10.0
}
fn default_background() -> [f64; 3] {
    photogeo_core::renderer::DEFAULT_BACKGROUND
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorKind {
    #[default]
    Oracle,
    Replay,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_stages")]
    pub stages: usize,
    /// Overrides applied to every stage.
    #[serde(default)]
    pub stage: StageOverrides,
    /// Per-stage overrides, applied after `stage`; entry `s` is stage `s + 1`.
    #[serde(default)]
    pub schedule: Vec<StageOverrides>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub viewpoints: ViewpointConfig,
    #[serde(default)]
    pub lighting: LightingConfig,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default = "default_background")]
    pub background: [f64; 3],
    #[serde(default)]
    pub projector: ProjectorKind,
    /// Ground-truth scene. Required by the oracle; with replay it only
    /// enables metrics.
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Directory of `proj_NNN.png` files, optionally under `stage_S/`.
    #[serde(default)]
    pub replay_dir: Option<PathBuf>,
    /// Input image; defaults to the scene rendered from the reference view.
    #[serde(default)]
    pub input: Option<InputConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageOverrides {
    pub m: Option<usize>,
    pub iters1: Option<usize>,
    pub iters2: Option<usize>,
    pub iters3: Option<usize>,
    pub lr: Option<LrOverrides>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub pyramid_weight: Option<f64>,
    pub symmetric: Option<bool>,
    pub depth_levels: Option<usize>,
    pub warmup: Option<usize>,
    pub keep_samples: Option<bool>,
    pub anneal: Option<bool>,
    pub pin_mean_view: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrOverrides {
    pub depth: Option<f64>,
    pub albedo: Option<f64>,
    pub view: Option<f64>,
    pub light: Option<f64>,
}

impl StageOverrides {
    fn apply(&self, s: &mut StageConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { s.$f = v; } )* };
        }
        set!(m, iters1, iters2, iters3, lambda1, lambda2, pyramid_weight, symmetric, depth_levels, warmup, keep_samples, anneal, pin_mean_view);
        if let Some(lr) = &self.lr {
            if let Some(v) = lr.depth {
                s.lr.depth = v;
            }
            if let Some(v) = lr.albedo {
                s.lr.albedo = v;
            }
            if let Some(v) = lr.view {
                s.lr.view = v;
            }
            if let Some(v) = lr.light {
                s.lr.light = v;
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// ellipsoid, asymmetric, shifted, weak or flat.
    pub kind: Option<String>,
    /// `[row, column]` in pixels.
    pub center: Option<[f64; 2]>,
    pub radii: Option<[f64; 2]>,
    pub near: Option<f64>,
    pub far: Option<f64>,
    pub shift_fraction: Option<f64>,
}

pub fn prior_kind(name: &str) -> Option<PriorKind> {
    Some(match name {
        "ellipsoid" => PriorKind::Ellipsoid,
        "asymmetric" => PriorKind::Asymmetric,
        "shifted" => PriorKind::Shifted,
        "weak" => PriorKind::Weak,
        "flat" => PriorKind::Flat,
        _ => return None,
    })
}

impl PriorConfig {
    fn to_spec(&self) -> Result<PriorSpec> {
        let mut p = PriorSpec::default();
        if let Some(k) = &self.kind {
            p.kind = prior_kind(k).ok_or_else(|| {
                Error::Config(format!("prior.kind: unknown prior {k:?}; expected ellipsoid, asymmetric, shifted, weak or flat"))
            })?;
        }
        p.center = self.center.map(|[a, b]| (a, b));
        p.radii = self.radii.map(|[a, b]| (a, b));
        p.near = self.near.unwrap_or(p.near);
        p.far = self.far.unwrap_or(p.far);
        p.shift_fraction = self.shift_fraction.unwrap_or(p.shift_fraction);
        Ok(p)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewpointConfig {
    pub mean: Option<[f64; 6]>,
    /// Independent standard deviations; excludes `covariance`.
    pub std: Option<[f64; 6]>,
    pub covariance: Option<[[f64; 6]; 6]>,
}

impl ViewpointConfig {
    fn to_distribution(&self) -> Result<ViewpointDistribution> {
        let mut d = ViewpointDistribution::default();
        match (self.std, self.covariance) {
            (Some(_), Some(_)) => return Err(Error::Config("viewpoints: give either std or covariance, not both".into())),
            (Some(std), None) => d = ViewpointDistribution::diagonal([0.0; 6], std),
            (None, Some(c)) => d.covariance = c,
            (None, None) => {}
        }
        if let Some(m) = self.mean {
            d.mean = m;
        }
        Ok(d)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightingConfig {
    /// generic or bfm; individual ranges override it.
    pub preset: Option<String>,
    pub xmin: Option<f64>,
    pub xmax: Option<f64>,
    pub ymin: Option<f64>,
    pub ymax: Option<f64>,
    pub dmin: Option<f64>,
    pub dmax: Option<f64>,
    pub alpha: Option<f64>,
}

impl LightingConfig {
    fn to_distribution(&self) -> Result<LightingDistribution> {
        let mut d = match &self.preset {
            Some(p) => LightingDistribution::preset(p)
                .ok_or_else(|| Error::Config(format!("lighting.preset: unknown preset {p:?}; expected generic or bfm")))?,
            None => LightingDistribution::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { d.$f = v; } )* };
        }
        set!(xmin, xmax, ymin, ymax, dmin, dmax, alpha);
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub rotation_deg: f64,
    pub translation: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let b = ViewBounds::default();
        BoundsConfig { rotation_deg: b.rotation.to_degrees(), translation: b.translation }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightingValues {
    pub lx: f64,
    pub ly: f64,
    pub ks: f64,
    pub kd: f64,
}

impl From<LightingValues> for Lighting {
    fn from(l: LightingValues) -> Lighting {
        Lighting::new(l.lx, l.ly, l.ks, l.kd)
    }
}

impl From<Lighting> for LightingValues {
    fn from(l: Lighting) -> LightingValues {
        LightingValues { lx: l.lx, ly: l.ly, ks: l.ks, kd: l.kd }
    }
}

/// Either a built-in scene (`name`, `width`, `height`) or files
/// (`depth`, `albedo`, `lighting`, optional `mask`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: Option<String>,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub depth: Option<PathBuf>,
    pub albedo: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub lighting: Option<LightingValues>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub noise_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub image: PathBuf,
    #[serde(default)]
    pub mask: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.output {
            fix(p);
        }
        if let Some(p) = &mut self.replay_dir {
            fix(p);
        }
        if let Some(s) = &mut self.scene {
            for p in [&mut s.depth, &mut s.albedo, &mut s.mask].into_iter().flatten() {
                fix(p);
            }
        }
        if let Some(i) = &mut self.input {
            fix(&mut i.image);
            if let Some(m) = &mut i.mask {
                fix(m);
            }
        }
    }

    /// The pipeline configuration this file describes. Checks every
    /// hyperparameter but touches no files.
    pub fn pipeline(&self) -> Result<PipelineConfig> {
        if self.stages == 0 {
            return Err(Error::Config("stages must be ≥ 1".into()));
        }
        if self.schedule.len() > self.stages {
            return Err(Error::Config(format!(
                "schedule: {} entries given for {} stages",
                self.schedule.len(),
                self.stages
            )));
        }
        let mut p = PipelineConfig::with_stages(self.stages);
        for (s, st) in p.stages.iter_mut().enumerate() {
            self.stage.apply(st);
            if let Some(o) = self.schedule.get(s) {
                o.apply(st);
            }
        }
        for (s, st) in p.stages.iter().enumerate() {
            if st.m == 0 {
                return Err(Error::Config(format!("stage {}: m must be ≥ 1", s + 1)));
            }
            st.validate().map_err(|e| Error::Config(format!("stage {}: {}", s + 1, strip(&e))))?;
        }
        p.prior = self.prior.to_spec()?;
        p.viewpoints = self.viewpoints.to_distribution()?;
        p.viewpoints.cholesky().map_err(|e| Error::Config(format!("viewpoints: {e}")))?;
        p.lighting = self.lighting.to_distribution()?;
        p.lighting.validate().map_err(|e| Error::Config(format!("lighting: {}", strip(&e))))?;
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Config(format!("fov_deg: {} must lie in (0, 180)", self.fov_deg)));
        }
        p.fov = self.fov_deg.to_radians();
        if !(self.bounds.rotation_deg > 0.0 && self.bounds.translation > 0.0) {
            return Err(Error::Config("bounds: rotation_deg and translation must be positive".into()));
        }
        p.bounds = ViewBounds { rotation: self.bounds.rotation_deg.to_radians(), translation: self.bounds.translation };
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("background: channels must lie in [0, 1]".into()));
        }
        p.background = self.background;
        p.seed = self.seed;
        if !(self.oracle.noise_level >= 0.0 && self.oracle.noise_level.is_finite()) {
            return Err(Error::Config("oracle.noise_level must be ≥ 0".into()));
        }
        self.check_sources()?;
        Ok(p)
    }

    fn check_sources(&self) -> Result<()> {
        if let Some(s) = &self.scene {
            match (&s.name, &s.depth, &s.albedo) {
                (Some(n), None, None) => {
                    if !SCENE_NAMES.contains(&n.as_str()) {
                        return Err(Error::Config(format!(
                            "scene.name: unknown scene {n:?}; expected one of {}",
                            SCENE_NAMES.join(", ")
                        )));
                    }
                    if s.mask.is_some() || s.lighting.is_some() {
                        return Err(Error::Config("scene: mask and lighting apply only to file scenes".into()));
                    }
                }
                (None, Some(_), Some(_)) => {
                    if s.lighting.is_none() {
                        return Err(Error::Config("scene.lighting is required for a file scene".into()));
                    }
                    if s.width.is_some() || s.height.is_some() {
                        return Err(Error::Config("scene: width and height apply only to built-in scenes".into()));
                    }
                }
                _ => return Err(Error::Config("scene: give either name or both depth and albedo".into())),
            }
        }
        match self.projector {
            ProjectorKind::Oracle if self.scene.is_none() => {
                Err(Error::Config("scene is required by the oracle projector".into()))
            }
            ProjectorKind::Replay if self.replay_dir.is_none() => {
                Err(Error::Config("replay_dir is required by the replay projector".into()))
            }
            ProjectorKind::Replay if self.input.is_none() && self.scene.is_none() => {
                Err(Error::Config("input is required by the replay projector when no scene is given".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn scene_size(&self) -> (usize, usize) {
        let s = self.scene.as_ref();
        (s.and_then(|s| s.width).unwrap_or(default_size()), s.and_then(|s| s.height).unwrap_or(default_size()))
    }
}

/// Core configuration errors carry a prefix that repeats what the caller adds.
fn strip(e: &photogeo_core::Error) -> String {
    match e {
        photogeo_core::Error::InvalidConfig(m) => m.clone(),
        e => e.to_string(),
    }
}
