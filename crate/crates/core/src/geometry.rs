//! Pinhole camera, viewpoints, unprojection, surface normals and the forward
//! pixel warp.
//!
//! Pixel coordinates are `(x, y)` with `x` along the image width (column `j`)
//! and `y` along the height (row `i`). Camera space has `x` right, `y` down and
//! `z` along the optical axis.

use core::f64::consts::FRAC_PI_3;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{self, Mat3, Vec3};

/// Depth of the point the viewpoint rotations pivot about, on the optical axis.
pub const ROTATION_PIVOT_DEPTH: f64 = 1.0;

/// Lower and upper limits of the depth box produced by [`DepthMap::from_raw`].
pub const DEPTH_MIN: f64 = 0.9;
pub const DEPTH_MAX: f64 = 1.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, f: f64, cx: f64, cy: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidSize { width, height, min: 2 });
        }
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidFocal(f));
        }
        Ok(CameraIntrinsics { width, height, f, cx, cy })
    }

    /// Unit-depth ray through pixel `(x, y)`, i.e. `K⁻¹ (x, y, 1)`.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.f, (y - self.cy) / self.f, 1.0)
    }

    /// Continuous pixel coordinates of a camera-space point with `z > 0`.
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64) {
        (self.f * p.x() / p.z() + self.cx, self.f * p.y() / p.z() + self.cy)
    }
}

/// Builds intrinsics from a horizontal field of view with the principal point
/// at the image centre.
pub fn intrinsics_from_fov(width: usize, height: usize, fov: f64) -> Result<CameraIntrinsics> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidSize { width, height, min: 2 });
    }
    if !(fov > 0.0 && fov < core::f64::consts::PI) {
        return Err(Error::InvalidFov(fov));
    }
    let f = (width as f64 - 1.0) / (2.0 * linalg::tan(fov / 2.0));
    CameraIntrinsics::new(width, height, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Limits on viewpoint magnitudes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewBounds {
    pub rotation: f64,
    pub translation: f64,
}

impl Default for ViewBounds {
    fn default() -> Self {
        ViewBounds { rotation: FRAC_PI_3, translation: 0.1 }
    }
}

/// Rotation angles (radians) about x, y, z and translations along x, y, z.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Viewpoint {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

const VIEW_NAMES: [&str; 6] = ["rx", "ry", "rz", "tx", "ty", "tz"];

impl Viewpoint {
    pub const IDENTITY: Viewpoint = Viewpoint { rx: 0.0, ry: 0.0, rz: 0.0, tx: 0.0, ty: 0.0, tz: 0.0 };

    pub fn from_array(a: [f64; 6]) -> Self {
        Viewpoint { rx: a[0], ry: a[1], rz: a[2], tx: a[3], ty: a[4], tz: a[5] }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.rx, self.ry, self.rz, self.tx, self.ty, self.tz]
    }

    /// Pure yaw (rotation about the vertical axis).
    pub fn yaw(angle: f64) -> Self {
        Viewpoint { ry: angle, ..Viewpoint::IDENTITY }
    }

    pub fn check(&self, bounds: &ViewBounds) -> Result<()> {
        for (k, v) in self.to_array().into_iter().enumerate() {
            let bound = if k < 3 { bounds.rotation } else { bounds.translation };
            if !(v.abs() <= bound) {
                return Err(Error::OutOfBounds { component: VIEW_NAMES[k], value: v, bound });
            }
        }
        Ok(())
    }

    pub fn clamped(&self, bounds: &ViewBounds) -> Self {
        let mut a = self.to_array();
        for (k, v) in a.iter_mut().enumerate() {
            let b = if k < 3 { bounds.rotation } else { bounds.translation };
            *v = v.clamp(-b, b);
        }
        Viewpoint::from_array(a)
    }
}

/// Rigid transform `P' = R P + T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub r: Mat3,
    pub t: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { r: Mat3::IDENTITY, t: Vec3::ZERO };

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.r.mul_vec(p) + self.t
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.r.transpose();
        Pose { r: rt, t: -rt.mul_vec(&self.t) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { r: self.r * other.r, t: self.r.mul_vec(&other.t) + self.t }
    }

    pub fn rotation_error(&self) -> f64 {
        let rtr = self.r.transpose() * self.r;
        rtr.max_abs_diff(&Mat3::IDENTITY).max((self.r.det() - 1.0).abs())
    }
}

/// `R = Rz(rz) · Ry(ry) · Rx(rx)`.
pub fn rotation_matrix(rx: f64, ry: f64, rz: f64) -> Mat3 {
    Mat3::rot_z(rz) * Mat3::rot_y(ry) * Mat3::rot_x(rx)
}

/// Partial derivatives of [`rotation_matrix`] with respect to `(rx, ry, rz)`.
pub fn rotation_jacobian(rx: f64, ry: f64, rz: f64) -> [Mat3; 3] {
    let (x, y, z) = (Mat3::rot_x(rx), Mat3::rot_y(ry), Mat3::rot_z(rz));
    [
        z * y * Mat3::d_rot_x(rx),
        z * Mat3::d_rot_y(ry) * x,
        Mat3::d_rot_z(rz) * y * x,
    ]
}

/// The rotation pivots about `(0, 0, ROTATION_PIVOT_DEPTH)` and the
/// translation is applied afterwards, so the returned `T` equals
/// `(tx, ty, tz)` only when the rotation is the identity.
pub fn viewpoint_to_pose(v: &Viewpoint, bounds: &ViewBounds) -> Result<Pose> {
    v.check(bounds)?;
    Ok(pose_unchecked(v))
}

pub(crate) fn pose_unchecked(v: &Viewpoint) -> Pose {
    let r = rotation_matrix(v.rx, v.ry, v.rz);
    let pivot = Vec3::new(0.0, 0.0, ROTATION_PIVOT_DEPTH);
    let t = Vec3::new(v.tx, v.ty, v.tz) + pivot - r.mul_vec(&pivot);
    Pose { r, t }
}

/// Camera-space point seen at pixel `(x, y)` with depth `d`.
pub fn unproject(x: f64, y: f64, d: f64, k: &CameraIntrinsics) -> Result<Vec3> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDepth(d));
    }
    Ok(k.ray(x, y).scale(d))
}

/// Projects pixel `(x, y)` at depth `d` into the view given by `pose`.
/// Returns the continuous pixel coordinates and the depth in the new view.
pub fn warp_forward(
    x: f64,
    y: f64,
    d: f64,
    k: &CameraIntrinsics,
    pose: &Pose,
) -> Result<(f64, f64, f64)> {
    let p = pose.apply(&unproject(x, y, d, k)?);
    if p.z() <= 0.0 {
        return Err(Error::BehindCamera(p.z()));
    }
    let (xp, yp) = k.project(&p);
    Ok((xp, yp, p.z()))
}

/// Per-pixel depth along the optical axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub values: Grid<f64>,
}

impl DepthMap {
    pub fn new(values: Grid<f64>) -> Result<Self> {
        for i in 0..values.height() {
            for j in 0..values.width() {
                let v = *values.get(i, j);
                if !v.is_finite() {
                    return Err(Error::NonFiniteDepth(i, j));
                }
                if v <= 0.0 {
                    return Err(Error::NonPositiveDepth(v));
                }
            }
        }
        Ok(DepthMap { values })
    }

    pub fn constant(width: usize, height: usize, d: f64) -> Self {
        DepthMap { values: Grid::filled(width, height, d) }
    }

    /// `d = 1 + 0.1 tanh(u)`, which keeps every value inside `(0.9, 1.1)`.
    pub fn from_raw(raw: &Grid<f64>) -> Self {
        DepthMap { values: raw.map(|&u| depth_from_raw(u)) }
    }

    /// Inverse of [`DepthMap::from_raw`]; values are pulled just inside the box.
    pub fn to_raw(&self) -> Grid<f64> {
        self.values.map(|&d| raw_from_depth(d))
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }
    pub fn height(&self) -> usize {
        self.values.height()
    }
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        *self.values.get(i, j)
    }
}

#[inline]
pub fn depth_from_raw(u: f64) -> f64 {
    1.0 + 0.1 * linalg::tanh(u)
}

#[inline]
pub fn raw_from_depth(d: f64) -> f64 {
    let t = ((d - 1.0) / 0.1).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
    linalg::atanh(t)
}

/// `∂d/∂u` for [`depth_from_raw`].
#[inline]
pub fn depth_raw_derivative(u: f64) -> f64 {
    let t = linalg::tanh(u);
    0.1 * (1.0 - t * t)
}

pub type NormalMap = Grid<Vec3>;

fn points(d: &DepthMap, k: &CameraIntrinsics) -> Grid<Vec3> {
    Grid::from_fn(d.width(), d.height(), |i, j| k.ray(j as f64, i as f64).scale(d.get(i, j)))
}

#[inline]
fn neighbours(n: usize, idx: usize) -> (usize, usize) {
    (idx.saturating_sub(1), (idx + 1).min(n - 1))
}

/// Tangent vectors along x and y at `(i, j)`: central differences inside,
/// one-sided at the border.
#[inline]
fn tangents(p: &Grid<Vec3>, i: usize, j: usize) -> (Vec3, Vec3, (usize, usize), (usize, usize)) {
    let (jl, jr) = neighbours(p.width(), j);
    let (iu, id) = neighbours(p.height(), i);
    (*p.get(i, jr) - *p.get(i, jl), *p.get(id, j) - *p.get(iu, j), (jl, jr), (iu, id))
}

/// Unit surface normals `normalize(t_x × t_y)` of the depth map. With `x`
/// right and `y` down a fronto-parallel surface gets `(0, 0, 1)`; the light
/// direction used in shading shares this orientation.
pub fn compute_normals(d: &DepthMap, k: &CameraIntrinsics) -> Result<NormalMap> {
    check_depth(d)?;
    let p = points(d, k);
    let mut out = Grid::filled(d.width(), d.height(), Vec3::ZERO);
    for i in 0..d.height() {
        for j in 0..d.width() {
            let (tx, ty, _, _) = tangents(&p, i, j);
            let m = tx.cross(&ty);
            let norm = m.norm();
            if !(norm >= 1e-12) {
                return Err(Error::DegenerateSurface(i, j));
            }
            out.set(i, j, m.scale(1.0 / norm));
        }
    }
    Ok(out)
}

fn check_depth(d: &DepthMap) -> Result<()> {
    if d.width() < 2 || d.height() < 2 {
        return Err(Error::InvalidSize { width: d.width(), height: d.height(), min: 2 });
    }
    for i in 0..d.height() {
        for j in 0..d.width() {
            let v = d.get(i, j);
            if !v.is_finite() {
                return Err(Error::NonFiniteDepth(i, j));
            }
            if v <= 0.0 {
                return Err(Error::NonPositiveDepth(v));
            }
        }
    }
    Ok(())
}

/// Pulls a cotangent on the normal map back to a cotangent on depth.
pub fn normals_vjp(d: &DepthMap, k: &CameraIntrinsics, grad_n: &NormalMap) -> Grid<f64> {
    let p = points(d, k);
    let mut grad_p = Grid::filled(d.width(), d.height(), Vec3::ZERO);
    for i in 0..d.height() {
        for j in 0..d.width() {
            let g_n = *grad_n.get(i, j);
            if g_n == Vec3::ZERO {
                continue;
            }
            let (tx, ty, (jl, jr), (iu, id)) = tangents(&p, i, j);
            let m = tx.cross(&ty);
            let norm = m.norm();
            if norm < 1e-12 {
                continue;
            }
            let n = m.scale(1.0 / norm);
            let g_m = (g_n - n.scale(n.dot(&g_n))).scale(1.0 / norm);
            let g_c = g_m;
            let g_tx = ty.cross(&g_c);
            let g_ty = g_c.cross(&tx);
            *grad_p.get_mut(i, jr) += g_tx;
            *grad_p.get_mut(i, jl) += -g_tx;
            *grad_p.get_mut(id, j) += g_ty;
            *grad_p.get_mut(iu, j) += -g_ty;
        }
    }
    Grid::from_fn(d.width(), d.height(), |i, j| grad_p.get(i, j).dot(&k.ray(j as f64, i as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};

    fn deg(a: f64) -> f64 {
        a * PI / 180.0
    }

    #[test]
    fn intrinsics_examples() {
        let k = intrinsics_from_fov(64, 64, deg(10.0)).unwrap();
        assert!((k.f - 360.041).abs() < 1e-2, "{}", k.f);
        assert!((k.f - 63.0 / (2.0 * (5f64).to_radians().tan())).abs() < 1e-9);
        assert_eq!((k.cx, k.cy), (31.5, 31.5));
        let k = intrinsics_from_fov(3, 3, deg(90.0)).unwrap();
        assert!((k.f - 1.0).abs() < 1e-12);
        assert_eq!((k.cx, k.cy), (1.0, 1.0));
        let k = intrinsics_from_fov(2, 2, deg(60.0)).unwrap();
        assert!((k.f - 0.866_025_403_784_438_6).abs() < 1e-12);
        assert_eq!((k.cx, k.cy), (0.5, 0.5));
    }

    #[test]
    fn intrinsics_errors() {
        assert!(matches!(intrinsics_from_fov(64, 64, 0.0), Err(Error::InvalidFov(_))));
        assert!(matches!(intrinsics_from_fov(64, 64, PI), Err(Error::InvalidFov(_))));
        assert!(matches!(intrinsics_from_fov(1, 64, 1.0), Err(Error::InvalidSize { .. })));
    }

    #[test]
    fn pose_examples() {
        let b = ViewBounds::default();
        let p = viewpoint_to_pose(&Viewpoint::IDENTITY, &b).unwrap();
        assert_eq!(p.r, Mat3::IDENTITY);
        assert_eq!(p.t, Vec3::ZERO);

        let p = viewpoint_to_pose(&Viewpoint::from_array([0.0, FRAC_PI_2, 0.0, 0.0, 0.0, 0.0]), &ViewBounds { rotation: FRAC_PI_2, translation: 0.1 }).unwrap();
        let z = p.r.mul_vec(&Vec3::new(0.0, 0.0, 1.0));
        assert!((z - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);

        let p = viewpoint_to_pose(&Viewpoint::from_array([0.0, 0.0, 0.0, 0.1, 0.0, 0.0]), &b).unwrap();
        assert_eq!(p.r, Mat3::IDENTITY);
        assert_eq!(p.t, Vec3::new(0.1, 0.0, 0.0));

        let bad = Viewpoint::from_array([0.0, 0.0, 0.0, 0.0, 0.0, 0.2]);
        assert!(matches!(viewpoint_to_pose(&bad, &b), Err(Error::OutOfBounds { component: "tz", .. })));
    }

    #[test]
    fn rotation_pivots_about_reference_depth() {
        let p = viewpoint_to_pose(&Viewpoint::yaw(0.3), &ViewBounds::default()).unwrap();
        let c = Vec3::new(0.0, 0.0, ROTATION_PIVOT_DEPTH);
        assert!((p.apply(&c) - c).norm() < 1e-15);
        assert!(p.rotation_error() < 1e-12);
    }

    #[test]
    fn unproject_examples() {
        let k = intrinsics_from_fov(64, 48, deg(10.0)).unwrap();
        assert_eq!(unproject(k.cx, k.cy, 1.0, &k).unwrap(), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(unproject(k.cx, k.cy, 0.9, &k).unwrap(), Vec3::new(0.0, 0.0, 0.9));
        let p = unproject(k.cx + k.f, k.cy, 1.0, &k).unwrap();
        assert!((p - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(matches!(unproject(0.0, 0.0, 0.0, &k), Err(Error::NonPositiveDepth(_))));
    }

    #[test]
    fn warp_examples() {
        let k = intrinsics_from_fov(64, 64, deg(10.0)).unwrap();
        let (x, y, d) = warp_forward(10.0, 20.0, 0.95, &k, &Pose::IDENTITY).unwrap();
        assert!((x - 10.0).abs() < 1e-12 && (y - 20.0).abs() < 1e-12 && (d - 0.95).abs() < 1e-15);

        let pose = Pose { r: Mat3::IDENTITY, t: Vec3::new(0.0, 0.0, 0.05) };
        let (x, y, d) = warp_forward(k.cx, k.cy, 1.0, &k, &pose).unwrap();
        assert_eq!((x, y), (k.cx, k.cy));
        assert!((d - 1.05).abs() < 1e-15);

        let pose = Pose { r: Mat3::IDENTITY, t: Vec3::new(-1.0, 0.0, 0.0) };
        let (x, y, d) = warp_forward(k.cx + k.f, k.cy, 1.0, &k, &pose).unwrap();
        assert!((x - k.cx).abs() < 1e-9 && (y - k.cy).abs() < 1e-12 && (d - 1.0).abs() < 1e-15);

        let pose = Pose { r: Mat3::IDENTITY, t: Vec3::new(0.0, 0.0, -2.0) };
        assert!(matches!(warp_forward(k.cx, k.cy, 1.0, &k, &pose), Err(Error::BehindCamera(_))));
    }

    #[test]
    fn flat_depth_faces_camera() {
        let k = intrinsics_from_fov(8, 6, deg(10.0)).unwrap();
        let n = compute_normals(&DepthMap::constant(8, 6, 1.0), &k).unwrap();
        for v in n.as_slice() {
            assert!((*v - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn tilted_plane_has_constant_normals() {
        // Camera-space plane Z = 1 + s X, sampled along each pixel ray.
        let k = intrinsics_from_fov(9, 7, deg(10.0)).unwrap();
        let s = 0.8;
        let d = DepthMap::new(Grid::from_fn(9, 7, |_, j| {
            let rx = (j as f64 - k.cx) / k.f;
            1.0 / (1.0 - s * rx)
        }))
        .unwrap();
        let n = compute_normals(&d, &k).unwrap();
        let first = *n.get(0, 0);
        assert!(first.y().abs() < 1e-12);
        for v in n.as_slice() {
            assert!((*v - first).norm() < 1e-9);
            assert!(v.y().abs() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
        // Depth grows to the right: the normal leans against the slope.
        assert!(first.x() < 0.0);
    }

    #[test]
    fn paraboloid_normals_tilt_outwards() {
        let k = intrinsics_from_fov(5, 5, deg(10.0)).unwrap();
        let d = DepthMap::new(Grid::from_fn(5, 5, |i, j| {
            let (di, dj) = (i as f64 - 2.0, j as f64 - 2.0);
            1.0 - 0.01 * (di * di + dj * dj)
        }))
        .unwrap();
        let n = compute_normals(&d, &k).unwrap();
        let c = *n.get(2, 2);
        assert!((c - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!(n.get(2, 3).x() > 0.0 && n.get(2, 1).x() < 0.0);
        assert!(n.get(3, 2).y() > 0.0 && n.get(1, 2).y() < 0.0);
        // Independent evaluation at (2,3) from the closed-form depth.
        let dd = |i: f64, j: f64| 1.0 - 0.01 * ((i - 2.0).powi(2) + (j - 2.0).powi(2));
        let pt = |i: f64, j: f64| k.ray(j, i).scale(dd(i, j));
        let c = (pt(2.0, 4.0) - pt(2.0, 2.0)).cross(&(pt(3.0, 3.0) - pt(1.0, 3.0)));
        let t = *n.get(2, 3);
        assert!((t - c.scale(1.0 / c.norm())).norm() < 1e-12);
        assert!(t.x() > 0.0 && t.z() > 0.0 && t.y().abs() < 1e-12);
    }

    #[test]
    fn non_finite_depth_is_rejected() {
        let k = intrinsics_from_fov(4, 4, deg(10.0)).unwrap();
        let mut bad = DepthMap { values: Grid::filled(4, 4, 1.0) };
        bad.values.set(1, 1, f64::NAN);
        assert!(matches!(compute_normals(&bad, &k), Err(Error::NonFiniteDepth(1, 1))));
    }

    #[test]
    fn depth_parameterisation_stays_in_box() {
        for u in [-50.0, -3.0, 0.0, 0.5, 50.0] {
            let d = depth_from_raw(u);
            assert!(d >= DEPTH_MIN && d <= DEPTH_MAX);
        }
        for d in [0.91, 1.0, 1.02, 1.09] {
            assert!((depth_from_raw(raw_from_depth(d)) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn normals_vjp_matches_finite_differences() {
        let k = intrinsics_from_fov(6, 5, deg(10.0)).unwrap();
        let d = DepthMap::new(Grid::from_fn(6, 5, |i, j| {
            1.0 + 0.01 * libm::sin(0.9 * i as f64 + 0.4 * j as f64) + 0.003 * (i * j) as f64
        }))
        .unwrap();
        let w = Grid::from_fn(6, 5, |i, j| {
            Vec3::new(libm::cos(i as f64 + 0.3 * j as f64), 0.5 - 0.1 * j as f64, 0.2 * i as f64)
        });
        let obj = |d: &DepthMap| -> f64 {
            let n = compute_normals(d, &k).unwrap();
            n.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a.dot(b)).sum()
        };
        let g = normals_vjp(&d, &k, &w);
        let h = 1e-7;
        for i in 0..5 {
            for j in 0..6 {
                let mut p = d.clone();
                p.values.set(i, j, d.get(i, j) + h);
                let mut m = d.clone();
                m.values.set(i, j, d.get(i, j) - h);
                let fd = (obj(&p) - obj(&m)) / (2.0 * h);
                let an = *g.get(i, j);
                assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "({i},{j}) fd {fd} an {an}");
            }
        }
    }
}
