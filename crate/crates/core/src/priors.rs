//! Initial shapes: the hemi-ellipsoid prior and its ablation variants.

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, DEPTH_MAX, DEPTH_MIN};
use crate::grid::{Grid, Mask};
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    Ellipsoid,
    /// Ellipsoid profile on the left half, sphere on the right half.
    Asymmetric,
    /// Ellipsoid moved right by `shift_fraction · width`.
    Shifted,
    /// Ellipsoid with half the height.
    Weak,
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorSpec {
    pub kind: PriorKind,
    /// `(ci, cj)` in pixels; `None` centres the shape in the image.
    pub center: Option<(f64, f64)>,
    /// `(ri, rj)` in pixels; `None` uses `(0.35 · height, 0.3 · width)`.
    pub radii: Option<(f64, f64)>,
    pub near: f64,
    pub far: f64,
    pub shift_fraction: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            kind: PriorKind::Ellipsoid,
            center: None,
            radii: None,
            near: 0.91,
            far: 1.02,
            shift_fraction: 1.0 / 6.0,
        }
    }
}

impl PriorSpec {
    pub fn with_kind(kind: PriorKind) -> Self {
        PriorSpec { kind, ..Default::default() }
    }

    fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.near < self.far) {
            return Err(Error::InvalidPrior("near must be below far"));
        }
        if !(self.near > DEPTH_MIN && self.far < DEPTH_MAX) {
            return Err(Error::InvalidPrior("depth range must lie inside (0.9, 1.1)"));
        }
        if let Some((ri, rj)) = self.radii {
            if !(ri > 0.0 && rj > 0.0) {
                return Err(Error::InvalidPrior("radii must be positive"));
            }
        }
        if let Some((ci, cj)) = self.center {
            let inside = ci >= 0.0 && cj >= 0.0 && ci <= height as f64 - 1.0 && cj <= width as f64 - 1.0;
            if !inside && self.kind != PriorKind::Shifted {
                return Err(Error::InvalidPrior("center must lie inside the image"));
            }
        }
        Ok(())
    }
}

/// Builds the initial depth map. A mask, when given, fixes the centre at its
/// bounding-box centre and the radii at half the bounding-box extents.
pub fn build_prior(spec: &PriorSpec, width: usize, height: usize, mask: Option<&Mask>) -> Result<DepthMap> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidSize { width, height, min: 2 });
    }
    spec.validate(width, height)?;
    let (mut center, mut radii) = (
        spec.center.unwrap_or(((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0)),
        spec.radii.unwrap_or((0.35 * height as f64, 0.3 * width as f64)),
    );
    if let Some(m) = mask {
        m.check_same_dims(&Grid::filled(width, height, ()))?;
        let (i0, i1, j0, j1) = m.bounding_box().ok_or(Error::EmptyMask)?;
        center = ((i0 + i1) as f64 / 2.0, (j0 + j1) as f64 / 2.0);
        radii = ((i1 - i0 + 1) as f64 / 2.0, (j1 - j0 + 1) as f64 / 2.0);
    }
    let (near, far) = match spec.kind {
        PriorKind::Weak => (spec.far - (spec.far - spec.near) / 2.0, spec.far),
        _ => (spec.near, spec.far),
    };
    if spec.kind == PriorKind::Shifted {
        center.1 += spec.shift_fraction * width as f64;
    }
    let (ci, cj) = center;
    let profile = |i: usize, j: usize, ri: f64, rj: f64| {
        let (di, dj) = ((i as f64 - ci) / ri, (j as f64 - cj) / rj);
        far - (far - near) * linalg::sqrt((1.0 - dj * dj - di * di).max(0.0))
    };
    let values = Grid::from_fn(width, height, |i, j| match spec.kind {
        PriorKind::Flat => far,
        PriorKind::Asymmetric if (j as f64) >= cj => {
            let r = radii.0.min(radii.1);
            profile(i, j, r, r)
        }
        _ => profile(i, j, radii.0, radii.1),
    });
    Ok(DepthMap { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_normals, intrinsics_from_fov};
    use crate::linalg::Vec3;

    #[test]
    fn ellipsoid_centre_and_outside() {
        let d = build_prior(&PriorSpec::default(), 64, 64, None).unwrap();
        // Even sizes put the centre between pixels; use an odd size for an exact hit.
        let d_odd = build_prior(&PriorSpec::default(), 65, 65, None).unwrap();
        assert!((d_odd.get(32, 32) - 0.91).abs() < 1e-15);
        assert_eq!(d.get(0, 0), 1.02);
        assert_eq!(d.get(63, 5), 1.02);
        for v in d.values.as_slice() {
            assert!(*v >= 0.91 && *v <= 1.02);
        }
    }

    #[test]
    fn flat_prior_has_constant_normals() {
        let d = build_prior(&PriorSpec::with_kind(PriorKind::Flat), 16, 12, None).unwrap();
        assert!(d.values.as_slice().iter().all(|&v| v == 1.02));
        let n = compute_normals(&d, &intrinsics_from_fov(16, 12, 0.2).unwrap()).unwrap();
        assert!(n.as_slice().iter().all(|v| (*v - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12));
    }

    #[test]
    fn symmetric_spec_gives_mirror_symmetric_prior() {
        for kind in [PriorKind::Ellipsoid, PriorKind::Weak, PriorKind::Flat] {
            let d = build_prior(&PriorSpec::with_kind(kind), 64, 48, None).unwrap();
            assert_eq!(d.values, d.values.mirrored());
        }
        let d = build_prior(&PriorSpec::with_kind(PriorKind::Asymmetric), 64, 48, None).unwrap();
        assert_ne!(d.values, d.values.mirrored());
    }

    #[test]
    fn variants() {
        let base = build_prior(&PriorSpec::default(), 61, 61, None).unwrap();
        let weak = build_prior(&PriorSpec::with_kind(PriorKind::Weak), 61, 61, None).unwrap();
        assert!((weak.get(30, 30) - (1.02 - 0.055)).abs() < 1e-12);
        assert!((base.get(30, 30) - 0.91).abs() < 1e-12);

        let shifted = build_prior(&PriorSpec::with_kind(PriorKind::Shifted), 60, 61, None).unwrap();
        // centre column moves from 29.5 to 39.5
        let (col, _) = (0..60).map(|j| (j, shifted.get(30, j))).fold((0, 2.0), |a, b| if b.1 < a.1 { b } else { a });
        assert!(col == 39 || col == 40, "{col}");

        let asym = build_prior(&PriorSpec::with_kind(PriorKind::Asymmetric), 61, 61, None).unwrap();
        // Left half follows the ellipsoid, right half the sphere of radius min(ri, rj).
        assert_eq!(asym.get(30, 20), base.get(30, 20));
        let r = 0.3 * 61.0;
        let expect = 1.02 - 0.11 * (1.0 - (10.0 / r as f64).powi(2)).sqrt();
        assert!((asym.get(30, 40) - expect).abs() < 1e-12);
    }

    #[test]
    fn mask_alignment() {
        let mask = Grid::from_fn(40, 40, |i, j| (10..=19).contains(&i) && (20..=35).contains(&j));
        let d = build_prior(&PriorSpec::default(), 40, 40, Some(&mask)).unwrap();
        // centre (14.5, 27.5), radii (5, 8)
        assert!(d.get(14, 27) < 0.95);
        assert_eq!(d.get(14, 10), 1.02);
        assert_eq!(d.get(25, 27), 1.02);
        let empty = Grid::filled(40, 40, false);
        assert!(matches!(build_prior(&PriorSpec::default(), 40, 40, Some(&empty)), Err(Error::EmptyMask)));
    }

    #[test]
    fn invalid_specs() {
        let bad = PriorSpec { near: 1.05, far: 1.0, ..Default::default() };
        assert!(build_prior(&bad, 8, 8, None).is_err());
        let bad = PriorSpec { near: 0.85, ..Default::default() };
        assert!(build_prior(&bad, 8, 8, None).is_err());
        let bad = PriorSpec { radii: Some((0.0, 2.0)), ..Default::default() };
        assert!(build_prior(&bad, 8, 8, None).is_err());
    }
}
