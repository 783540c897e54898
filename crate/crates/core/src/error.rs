use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid field of view {0} rad: must lie in (0, pi)")]
    InvalidFov(f64),
    #[error("invalid image size {width}x{height}: both sides must be at least {min}")]
    InvalidSize { width: usize, height: usize, min: usize },
    #[error("invalid focal length {0}")]
    InvalidFocal(f64),
    #[error("viewpoint component {component} = {value} exceeds bound {bound}")]
    OutOfBounds { component: &'static str, value: f64, bound: f64 },
    #[error("depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("depth map contains a non-finite value at ({0}, {1})")]
    NonFiniteDepth(usize, usize),
    #[error("degenerate surface at pixel ({0}, {1}): tangent cross product vanishes")]
    DegenerateSurface(usize, usize),
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("no mesh geometry is in front of the camera")]
    AllBehindCamera,
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("covariance is not positive semi-definite (pivot {0})")]
    NonPsdCovariance(f64),
    #[error("no covered pixel to compare")]
    EmptyCoverage,
    #[error("grid too small for second differences: {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("projected sample set is empty")]
    EmptySet,
    #[error("invalid prior: {0}")]
    InvalidPrior(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("optimization diverged (non-finite loss) after retry")]
    Divergence,
    #[error("projector failed: {0}")]
    Projector(String),
    #[error("stage {stage}, {step}: {source}")]
    Stage { stage: usize, step: &'static str, source: Box<Error> },
}

impl Error {
    pub(crate) fn at(self, stage: usize, step: &'static str) -> Error {
        Error::Stage { stage, step, source: Box::new(self) }
    }

    /// The innermost error, skipping stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
