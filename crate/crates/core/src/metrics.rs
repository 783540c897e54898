//! Scale-invariant depth error, mean angle deviation and PSNR.

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, NormalMap};
use crate::grid::{Image, Mask};
use crate::linalg;

/// Reported for identical images, where the PSNR is unbounded.
pub const PSNR_IDENTICAL: f64 = 99.0;

/// Summary of one evaluation. `side` is stored as a plain standard deviation;
/// [`EvalReport::side_e2`] gives the value in units of 10⁻².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub side: f64,
    pub mad: f64,
    pub psnr: Option<f64>,
    pub pixels: usize,
}

impl EvalReport {
    pub fn side_e2(&self) -> f64 {
        self.side * 100.0
    }
}

fn selected(mask: Option<&Mask>, idx: usize) -> bool {
    mask.map_or(true, |m| m.as_slice()[idx])
}

/// Standard deviation of `log d_pred − log d_gt` over the masked pixels.
pub fn side(pred: &DepthMap, gt: &DepthMap, mask: Option<&Mask>) -> Result<f64> {
    pred.values.check_same_dims(&gt.values)?;
    if let Some(m) = mask {
        m.check_same_dims(&pred.values)?;
    }
    // Shifted accumulation: a constant log ratio gives exactly zero.
    let (mut n, mut s, mut s2) = (0usize, 0.0, 0.0);
    let mut shift = None;
    for (idx, (&p, &g)) in pred.values.as_slice().iter().zip(gt.values.as_slice()).enumerate() {
        if !selected(mask, idx) {
            continue;
        }
        if !(p > 0.0) {
            return Err(Error::NonPositiveDepth(p));
        }
        if !(g > 0.0) {
            return Err(Error::NonPositiveDepth(g));
        }
        let delta = linalg::ln(p / g);
        let delta = delta - *shift.get_or_insert(delta);
        n += 1;
        s += delta;
        s2 += delta * delta;
    }
    if n < 2 {
        return Err(Error::EmptyMask);
    }
    let mean = s / n as f64;
    Ok(linalg::sqrt((s2 / n as f64 - mean * mean).max(0.0)))
}

/// Mean angle between normal maps, in degrees.
pub fn mad(pred: &NormalMap, gt: &NormalMap, mask: Option<&Mask>) -> Result<f64> {
    pred.check_same_dims(gt)?;
    if let Some(m) = mask {
        m.check_same_dims(pred)?;
    }
    let (mut n, mut sum) = (0usize, 0.0);
    for (idx, (a, b)) in pred.as_slice().iter().zip(gt.as_slice()).enumerate() {
        if selected(mask, idx) {
            sum += libm::atan2(a.cross(b).norm(), a.dot(b));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((sum / n as f64).to_degrees())
}

/// `10 · log10(1 / MSE)` over masked pixels and all channels, for images in
/// `[0, 1]`. Identical inputs report [`PSNR_IDENTICAL`].
pub fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    a.check_same_dims(b)?;
    if let Some(m) = mask {
        m.check_same_dims(a)?;
    }
    let (mut n, mut se) = (0usize, 0.0);
    for (idx, (p, q)) in a.as_slice().iter().zip(b.as_slice()).enumerate() {
        if selected(mask, idx) {
            for c in 0..3 {
                se += (p[c] - q[c]) * (p[c] - q[c]);
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok((10.0 * linalg::log10(1.0 / mse)).min(PSNR_IDENTICAL))
}

/// SIDE and MAD of a predicted depth map, with normals computed from both
/// depth maps under `k`.
pub fn evaluate(
    pred: &DepthMap,
    gt: &DepthMap,
    k: &crate::geometry::CameraIntrinsics,
    mask: Option<&Mask>,
) -> Result<EvalReport> {
    let s = side(pred, gt, mask)?;
    let np = crate::geometry::compute_normals(pred, k)?;
    let ng = crate::geometry::compute_normals(gt, k)?;
    let m = mad(&np, &ng, mask)?;
    let pixels = mask.map_or(pred.values.len(), |m| m.count());
    Ok(EvalReport { side: s, mad: m, psnr: None, pixels })
}
