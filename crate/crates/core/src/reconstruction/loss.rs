//! Photometric reconstruction loss and depth smoothness.

use alloc::vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};
use crate::renderer::RenderOutput;

/// Downsampling factors of the pyramid terms.
pub const PYRAMID_LEVELS: [usize; 2] = [2, 4];

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn validity(rendered: &RenderOutput, mask: Option<&Mask>) -> Result<Grid<bool>> {
    let (w, h) = rendered.image.dims();
    if let Some(m) = mask {
        m.check_same_dims(&rendered.image)?;
    }
    Ok(Grid::from_fn(w, h, |i, j| rendered.covered(i, j) && mask.map_or(true, |m| *m.get(i, j))))
}

/// Mean L1 over pixels that are covered and inside `mask`, plus
/// `pyramid_weight` times the mean L1 of each box-downsampled pair. A coarse
/// block counts only when all of its pixels are valid. Returns the loss and
/// its gradient with respect to the rendered image.
pub fn recon_loss_grad(
    target: &Image,
    rendered: &RenderOutput,
    mask: Option<&Mask>,
    pyramid_weight: f64,
) -> Result<(f64, Image)> {
    target.check_same_dims(&rendered.image)?;
    let valid = validity(rendered, mask)?;
    let (w, h) = target.dims();
    let n = valid.count();
    if n == 0 {
        return Err(Error::EmptyCoverage);
    }
    let img = &rendered.image;
    let mut grad = Grid::filled(w, h, [0.0; 3]);
    let mut loss = 0.0;
    let scale = 1.0 / (3.0 * n as f64);
    for idx in 0..w * h {
        if !valid.as_slice()[idx] {
            continue;
        }
        let (r, t) = (&img.as_slice()[idx], &target.as_slice()[idx]);
        let g = &mut grad.as_mut_slice()[idx];
        for c in 0..3 {
            let d = r[c] - t[c];
            loss += d.abs() * scale;
            g[c] = sign(d) * scale;
        }
    }
    if pyramid_weight != 0.0 {
        for s in PYRAMID_LEVELS {
            let (bw, bh) = (w / s, h / s);
            let mut blocks = vec![None; bw * bh];
            let mut nb = 0usize;
            for bi in 0..bh {
                for bj in 0..bw {
                    let mut all = true;
                    let (mut rs, mut ts) = ([0.0; 3], [0.0; 3]);
                    'block: for i in bi * s..(bi + 1) * s {
                        for j in bj * s..(bj + 1) * s {
                            if !*valid.get(i, j) {
                                all = false;
                                break 'block;
                            }
                            let (r, t) = (img.get(i, j), target.get(i, j));
                            for c in 0..3 {
                                rs[c] += r[c];
                                ts[c] += t[c];
                            }
                        }
                    }
                    if all {
                        nb += 1;
                        let inv = 1.0 / (s * s) as f64;
                        blocks[bi * bw + bj] = Some(core::array::from_fn::<f64, 3, _>(|c| (rs[c] - ts[c]) * inv));
                    }
                }
            }
            if nb == 0 {
                continue;
            }
            let scale = pyramid_weight / (3.0 * nb as f64);
            let per_pixel = scale / (s * s) as f64;
            for bi in 0..bh {
                for bj in 0..bw {
                    let Some(d) = blocks[bi * bw + bj] else { continue };
                    let gs: [f64; 3] = core::array::from_fn(|c| sign(d[c]) * per_pixel);
                    for c in 0..3 {
                        loss += d[c].abs() * scale;
                    }
                    for i in bi * s..(bi + 1) * s {
                        for j in bj * s..(bj + 1) * s {
                            let g = grad.get_mut(i, j);
                            for c in 0..3 {
                                g[c] += gs[c];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((loss, grad))
}

pub fn recon_loss(target: &Image, rendered: &RenderOutput, mask: Option<&Mask>, pyramid_weight: f64) -> Result<f64> {
    Ok(recon_loss_grad(target, rendered, mask, pyramid_weight)?.0)
}

/// Mean absolute second difference of depth along rows and columns, over
/// every position where the difference is defined.
pub fn smoothness_grad(d: &Grid<f64>) -> Result<(f64, Grid<f64>)> {
    let (w, h) = d.dims();
    let terms = h * w.saturating_sub(2) + w * h.saturating_sub(2);
    if terms == 0 {
        return Err(Error::TooSmall { width: w, height: h });
    }
    let scale = 1.0 / terms as f64;
    let mut grad = Grid::filled(w, h, 0.0);
    let mut loss = 0.0;
    for i in 0..h {
        for j in 1..w.saturating_sub(1) {
            let s2 = d.get(i, j - 1) - 2.0 * d.get(i, j) + d.get(i, j + 1);
            loss += s2.abs() * scale;
            let g = sign(s2) * scale;
            *grad.get_mut(i, j - 1) += g;
            *grad.get_mut(i, j) -= 2.0 * g;
            *grad.get_mut(i, j + 1) += g;
        }
    }
    for i in 1..h.saturating_sub(1) {
        for j in 0..w {
            let s2 = d.get(i - 1, j) - 2.0 * d.get(i, j) + d.get(i + 1, j);
            loss += s2.abs() * scale;
            let g = sign(s2) * scale;
            *grad.get_mut(i - 1, j) += g;
            *grad.get_mut(i, j) -= 2.0 * g;
            *grad.get_mut(i + 1, j) += g;
        }
    }
    Ok((loss, grad))
}

pub fn smoothness_loss(d: &Grid<f64>) -> Result<f64> {
    Ok(smoothness_grad(d)?.0)
}
