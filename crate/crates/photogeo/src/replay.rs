//! Projector that returns images produced elsewhere, one PNG per sample.

use std::path::PathBuf;

use photogeo_core::manifold::{ManifoldProjector, Projection, ProjectionRequest};
use photogeo_core::Image;

use crate::error::{Error, Result};
use crate::io;

pub fn replay_file_name(index: usize) -> String {
    format!("proj_{index:03}.png")
}

#[derive(Clone, Debug)]
pub struct ReplayProjector {
    pub dir: PathBuf,
    pub width: usize,
    pub height: usize,
}

impl ReplayProjector {
    pub fn new(dir: impl Into<PathBuf>, width: usize, height: usize) -> Self {
        ReplayProjector { dir: dir.into(), width, height }
    }

    /// `stage_S/proj_NNN.png` when that directory exists, else `proj_NNN.png`.
    pub fn path(&self, stage: usize, index: usize) -> PathBuf {
        let staged = self.dir.join(format!("stage_{stage}"));
        let base = if staged.is_dir() { staged } else { self.dir.clone() };
        base.join(replay_file_name(index))
    }

    /// Decoded image for one sample, with dimensions validated.
    pub fn load(&self, stage: usize, index: usize) -> Result<Image> {
        let path = self.path(stage, index);
        let img = io::read_png(&path)?;
        if img.dims() != (self.width, self.height) {
            return Err(Error::decode(
                &path,
                format!("image is {}x{}, run is {}x{}", img.width(), img.height(), self.width, self.height),
            ));
        }
        Ok(img)
    }

    /// First missing file among `counts[s]` samples for each stage `s + 1`.
    pub fn check(&self, counts: &[usize]) -> Result<()> {
        for (s, &m) in counts.iter().enumerate() {
            for i in 0..m {
                let p = self.path(s + 1, i);
                if !p.is_file() {
                    return Err(Error::Missing(p));
                }
            }
        }
        Ok(())
    }
}

/// Decoded projected sample `index` of stage `stage`.
pub fn replay_project(rp: &ReplayProjector, stage: usize, index: usize) -> Result<Image> {
    rp.load(stage, index)
}

fn mean_l1(a: &Image, b: &Image) -> f64 {
    let n = 3 * a.len();
    a.as_flat().iter().zip(b.as_flat()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64
}

impl ManifoldProjector for ReplayProjector {
    fn project(&self, req: &ProjectionRequest<'_>) -> photogeo_core::Result<Projection> {
        let image = self.load(req.id.stage, req.id.index).map_err(|e| photogeo_core::Error::Projector(e.to_string()))?;
        req.pseudo.check_same_dims(&image)?;
        let residual = mean_l1(&image, req.pseudo);
        Ok(Projection { image, converged: true, residual, fitted: None })
    }
}
