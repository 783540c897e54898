//! Depth-map meshing, z-buffered rasterization and the render gradient.
//!
//! A depth map becomes a height-field mesh with one vertex per pixel, two
//! triangles per pixel quad and the source pixel as texture coordinate. A new
//! view is produced by rasterizing that mesh: every output pixel takes the
//! texture bilinearly sampled at the screen-space barycentric interpolation of
//! the nearest triangle's texture coordinates.
//!
//! Gradients follow the interior of triangles (through the barycentric
//! coordinates and the bilinear lookup). Coverage changes and occlusion
//! boundaries carry no gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{
    self, compute_normals, normals_vjp, CameraIntrinsics, DepthMap, NormalMap, Pose, ViewBounds, Viewpoint,
};
use crate::grid::{Grid, Image, Mask, Rgb};
use crate::linalg::{self, Vec3};
use crate::shading::{shade, shade_vjp, Lighting, LightingParams};

/// Colour of uncovered output pixels.
pub const DEFAULT_BACKGROUND: Rgb = [0.5, 0.5, 0.5];

/// Vertices closer than this to the camera plane are treated as behind it.
const NEAR_PLANE: f64 = 1e-6;
/// Slack on barycentric coordinates so pixel centres on shared edges hit.
const EDGE_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    /// Source pixel `(x, y)` of each vertex.
    pub uv: Vec<(f64, f64)>,
    pub triangles: Vec<[u32; 3]>,
}

/// Triangulates an `H × W` grid: quad `(i, j)` splits along its
/// `(i, j) → (i+1, j+1)` diagonal.
fn grid_triangles(width: usize, height: usize) -> Vec<[u32; 3]> {
    let mut tris = Vec::with_capacity(2 * (width - 1) * (height - 1));
    for i in 0..height - 1 {
        for j in 0..width - 1 {
            let a = (i * width + j) as u32;
            let b = a + 1;
            let c = a + width as u32;
            let d = c + 1;
            tris.push([a, b, d]);
            tris.push([a, d, c]);
        }
    }
    tris
}

pub fn depth_to_mesh(d: &DepthMap, k: &CameraIntrinsics) -> TriangleMesh {
    let (w, h) = (d.width(), d.height());
    let mut vertices = Vec::with_capacity(w * h);
    let mut uv = Vec::with_capacity(w * h);
    for i in 0..h {
        for j in 0..w {
            vertices.push(k.ray(j as f64, i as f64).scale(d.get(i, j)));
            uv.push((j as f64, i as f64));
        }
    }
    let triangles = if w >= 2 && h >= 2 { grid_triangles(w, h) } else { Vec::new() };
    TriangleMesh { vertices, uv, triangles }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub depth: Grid<f64>,
    pub coverage: Grid<f64>,
}

impl RenderOutput {
    pub fn covered(&self, i: usize, j: usize) -> bool {
        *self.coverage.get(i, j) > 0.0
    }
}

/// Which triangle an output pixel sees and where.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub triangle: u32,
    pub bary: [f64; 3],
    pub depth: f64,
}

#[inline]
fn cross2(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

/// Z-buffered visibility of `triangles` over `screen` vertex positions.
/// `z` holds each vertex's depth in the output camera.
fn rasterize_fragments(
    screen: &[(f64, f64)],
    z: &[f64],
    triangles: &[[u32; 3]],
    width: usize,
    height: usize,
) -> Result<Vec<Option<Fragment>>> {
    if triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut frags: Vec<Option<Fragment>> = vec![None; width * height];
    let mut any_visible = false;
    for (t, tri) in triangles.iter().enumerate() {
        let [i0, i1, i2] = tri.map(|v| v as usize);
        if z[i0] <= NEAR_PLANE || z[i1] <= NEAR_PLANE || z[i2] <= NEAR_PLANE {
            continue;
        }
        any_visible = true;
        let (s0, s1, s2) = (screen[i0], screen[i1], screen[i2]);
        let e1 = (s1.0 - s0.0, s1.1 - s0.1);
        let e2 = (s2.0 - s0.0, s2.1 - s0.1);
        let area = cross2(e1, e2);
        if area.abs() < 1e-14 {
            continue;
        }
        let min_x = s0.0.min(s1.0).min(s2.0);
        let max_x = s0.0.max(s1.0).max(s2.0);
        let min_y = s0.1.min(s1.1).min(s2.1);
        let max_y = s0.1.max(s1.1).max(s2.1);
        if max_x < -0.5 || max_y < -0.5 || min_x > width as f64 - 0.5 || min_y > height as f64 - 0.5 {
            continue;
        }
        let x_lo = linalg::ceil(min_x - 1e-7).max(0.0) as usize;
        let y_lo = linalg::ceil(min_y - 1e-7).max(0.0) as usize;
        let x_hi = (linalg::floor(max_x + 1e-7).min(width as f64 - 1.0)).max(-1.0);
        let y_hi = (linalg::floor(max_y + 1e-7).min(height as f64 - 1.0)).max(-1.0);
        if x_hi < 0.0 || y_hi < 0.0 {
            continue;
        }
        let (x_hi, y_hi) = (x_hi as usize, y_hi as usize);
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let q = (px as f64 - s0.0, py as f64 - s0.1);
                let b1 = cross2(q, e2) / area;
                let b2 = cross2(e1, q) / area;
                let b0 = 1.0 - b1 - b2;
                if b0 < -EDGE_EPS || b1 < -EDGE_EPS || b2 < -EDGE_EPS {
                    continue;
                }
                let depth = b0 * z[i0] + b1 * z[i1] + b2 * z[i2];
                let slot = &mut frags[py * width + px];
                let closer = match slot {
                    None => true,
                    Some(f) => depth < f.depth,
                };
                if closer {
                    *slot = Some(Fragment { triangle: t as u32, bary: [b0, b1, b2], depth });
                }
            }
        }
    }
    if !any_visible {
        return Err(Error::AllBehindCamera);
    }
    Ok(frags)
}

/// Bilinear lookup with edge clamping. Returns the value and its partial
/// derivatives along `u` (x) and `v` (y).
#[inline]
fn bilinear(tex: &Image, u: f64, v: f64) -> (Rgb, Rgb, Rgb, [(usize, f64); 4]) {
    let (w, h) = tex.dims();
    let (uc, vc) = (u.clamp(0.0, w as f64 - 1.0), v.clamp(0.0, h as f64 - 1.0));
    let x0 = (linalg::floor(uc) as usize).min(w - 2);
    let y0 = (linalg::floor(vc) as usize).min(h - 2);
    let (fx, fy) = (uc - x0 as f64, vc - y0 as f64);
    let i00 = y0 * w + x0;
    let idx = [i00, i00 + 1, i00 + w, i00 + w + 1];
    let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
    let t = tex.as_slice();
    let (t00, t10, t01, t11) = (&t[idx[0]], &t[idx[1]], &t[idx[2]], &t[idx[3]]);
    let mut val = [0.0; 3];
    let mut du = [0.0; 3];
    let mut dv = [0.0; 3];
    let u_in = u == uc;
    let v_in = v == vc;
    for c in 0..3 {
        val[c] = wts[0] * t00[c] + wts[1] * t10[c] + wts[2] * t01[c] + wts[3] * t11[c];
        if u_in {
            du[c] = (1.0 - fy) * (t10[c] - t00[c]) + fy * (t11[c] - t01[c]);
        }
        if v_in {
            dv[c] = (1.0 - fx) * (t01[c] - t00[c]) + fx * (t11[c] - t10[c]);
        }
    }
    (val, du, dv, [(idx[0], wts[0]), (idx[1], wts[1]), (idx[2], wts[2]), (idx[3], wts[3])])
}

#[inline]
fn fragment_uv(frag: &Fragment, tri: &[u32; 3], uv: &[(f64, f64)]) -> (f64, f64) {
    let [b0, b1, b2] = frag.bary;
    let (a, b, c) = (uv[tri[0] as usize], uv[tri[1] as usize], uv[tri[2] as usize]);
    (b0 * a.0 + b1 * b.0 + b2 * c.0, b0 * a.1 + b1 * b.1 + b2 * c.1)
}

fn project_vertices(vertices: &[Vec3], k: &CameraIntrinsics, pose: &Pose) -> (Vec<Vec3>, Vec<(f64, f64)>, Vec<f64>) {
    let moved: Vec<Vec3> = vertices.iter().map(|p| pose.apply(p)).collect();
    let screen = moved
        .iter()
        .map(|q| if q.z() > NEAR_PLANE { k.project(q) } else { (f64::NAN, f64::NAN) })
        .collect();
    let z = moved.iter().map(|q| q.z()).collect();
    (moved, screen, z)
}

fn compose_output(
    frags: &[Option<Fragment>],
    mesh_uv: &[(f64, f64)],
    triangles: &[[u32; 3]],
    texture: &Image,
    width: usize,
    height: usize,
    background: Rgb,
) -> RenderOutput {
    let mut image = Grid::filled(width, height, background);
    let mut depth = Grid::filled(width, height, 0.0);
    let mut coverage = Grid::filled(width, height, 0.0);
    for (p, frag) in frags.iter().enumerate() {
        if let Some(f) = frag {
            let (u, v) = fragment_uv(f, &triangles[f.triangle as usize], mesh_uv);
            image.as_mut_slice()[p] = bilinear(texture, u, v).0;
            depth.as_mut_slice()[p] = f.depth;
            coverage.as_mut_slice()[p] = 1.0;
        }
    }
    RenderOutput { image, depth, coverage }
}

/// Renders `texture`, draped over `mesh`, from the camera moved by `pose`.
/// The output has the intrinsics' size; the texture must cover the mesh's
/// texture-coordinate domain.
pub fn rasterize(
    mesh: &TriangleMesh,
    texture: &Image,
    k: &CameraIntrinsics,
    pose: &Pose,
    background: Rgb,
) -> Result<RenderOutput> {
    if mesh.triangles.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if texture.width() < 2 || texture.height() < 2 {
        return Err(Error::InvalidSize { width: texture.width(), height: texture.height(), min: 2 });
    }
    let (max_u, max_v) = mesh.uv.iter().fold((0.0f64, 0.0f64), |m, uv| (m.0.max(uv.0), m.1.max(uv.1)));
    if max_u > texture.width() as f64 - 1.0 || max_v > texture.height() as f64 - 1.0 {
        return Err(Error::ShapeMismatch {
            expected: (max_u as usize + 1, max_v as usize + 1),
            found: texture.dims(),
        });
    }
    let (_, screen, z) = project_vertices(&mesh.vertices, k, pose);
    let frags = rasterize_fragments(&screen, &z, &mesh.triangles, k.width, k.height)?;
    Ok(compose_output(&frags, &mesh.uv, &mesh.triangles, texture, k.width, k.height, background))
}

/// Full photo-geometric render: shade, then reproject into viewpoint `v`.
pub fn render(
    d: &DepthMap,
    albedo: &Image,
    v: &Viewpoint,
    light: &Lighting,
    k: &CameraIntrinsics,
    background: Rgb,
) -> Result<RenderOutput> {
    let pose = geometry::viewpoint_to_pose(v, &ViewBounds::default())?;
    let normals = compute_normals(d, k)?;
    let texture = shade(albedo, &normals, light)?;
    rasterize(&depth_to_mesh(d, k), &texture, k, &pose, background)
}

/// Warps an object mask into viewpoint `v` using the shape `d`.
pub fn warp_mask(mask: &Mask, d: &DepthMap, v: &Viewpoint, k: &CameraIntrinsics) -> Result<Mask> {
    mask.check_same_dims(&d.values)?;
    let pose = geometry::viewpoint_to_pose(v, &ViewBounds { rotation: f64::INFINITY, translation: f64::INFINITY })?;
    let tex = mask.map(|&m| if m { [1.0; 3] } else { [0.0; 3] });
    let out = rasterize(&depth_to_mesh(d, k), &tex, k, &pose, [0.0; 3])?;
    Ok(Grid::from_fn(k.width, k.height, |i, j| out.covered(i, j) && out.image.get(i, j)[0] >= 0.5))
}

/// Depth, albedo and everything derived from them alone. Shared by all
/// views and lightings rendered in one optimization step.
#[derive(Clone, Debug)]
pub struct SharedScene {
    pub k: CameraIntrinsics,
    pub depth: DepthMap,
    pub albedo: Image,
    pub normals: NormalMap,
    pub mesh: TriangleMesh,
}

impl SharedScene {
    pub fn new(depth: DepthMap, albedo: Image, k: &CameraIntrinsics) -> Result<Self> {
        depth.values.check_same_dims(&albedo)?;
        if depth.width() != k.width || depth.height() != k.height {
            return Err(Error::ShapeMismatch { expected: (k.width, k.height), found: depth.values.dims() });
        }
        let normals = compute_normals(&depth, k)?;
        let mesh = depth_to_mesh(&depth, k);
        Ok(SharedScene { k: *k, depth, albedo, normals, mesh })
    }

    /// Renders one view without keeping anything for the backward pass.
    pub fn render(&self, v: &Viewpoint, light: &Lighting, background: Rgb) -> Result<RenderOutput> {
        Ok(self.render_taped(v, light, background)?.0)
    }

    /// Renders one view and records what [`SharedScene::backward`] needs.
    /// The viewpoint is not bounds-checked here; optimizers clamp it.
    pub fn render_taped(&self, v: &Viewpoint, light: &Lighting, background: Rgb) -> Result<(RenderOutput, ViewTape)> {
        let pose = geometry::pose_unchecked(v);
        let texture = shade(&self.albedo, &self.normals, light)?;
        let (moved, screen, z) = project_vertices(&self.mesh.vertices, &self.k, &pose);
        let frags = rasterize_fragments(&screen, &z, &self.mesh.triangles, self.k.width, self.k.height)?;
        let out = compose_output(&frags, &self.mesh.uv, &self.mesh.triangles, &texture, self.k.width, self.k.height, background);
        Ok((out, ViewTape { view: *v, light: *light, texture, moved, frags }))
    }

    /// Pulls the image cotangent of one view back to shared and per-view
    /// inputs. Shared parts are returned un-reduced so several views can be
    /// summed before the (more expensive) normal pullback.
    pub fn backward(&self, tape: &ViewTape, grad_image: &Image) -> ViewGrad {
        let (w, h) = (self.k.width, self.k.height);
        let tex_w = self.albedo.width();
        let nv = self.mesh.vertices.len();
        let mut g_tex = Grid::filled(tex_w, self.albedo.height(), [0.0; 3]);
        let mut g_q = vec![Vec3::ZERO; nv];
        let f = self.k.f;
        for p in 0..w * h {
            let Some(frag) = &tape.frags[p] else { continue };
            let g = grad_image.as_slice()[p];
            if g == [0.0; 3] {
                continue;
            }
            let tri = self.mesh.triangles[frag.triangle as usize];
            let (u, v) = fragment_uv(frag, &tri, &self.mesh.uv);
            let (_, du, dv, taps) = bilinear(&tape.texture, u, v);
            for (idx, wt) in taps {
                let t = &mut g_tex.as_mut_slice()[idx];
                t[0] += wt * g[0];
                t[1] += wt * g[1];
                t[2] += wt * g[2];
            }
            let g_u = g[0] * du[0] + g[1] * du[1] + g[2] * du[2];
            let g_v = g[0] * dv[0] + g[1] * dv[1] + g[2] * dv[2];
            if g_u == 0.0 && g_v == 0.0 {
                continue;
            }
            let [i0, i1, i2] = tri.map(|x| x as usize);
            let (uv0, uv1, uv2) = (self.mesh.uv[i0], self.mesh.uv[i1], self.mesh.uv[i2]);
            let g_b1 = g_u * (uv1.0 - uv0.0) + g_v * (uv1.1 - uv0.1);
            let g_b2 = g_u * (uv2.0 - uv0.0) + g_v * (uv2.1 - uv0.1);

            let s = |q: &Vec3| (f * q.x() / q.z() + self.k.cx, f * q.y() / q.z() + self.k.cy);
            let (q0, q1, q2) = (tape.moved[i0], tape.moved[i1], tape.moved[i2]);
            let (s0, s1, s2) = (s(&q0), s(&q1), s(&q2));
            let e1 = (s1.0 - s0.0, s1.1 - s0.1);
            let e2 = (s2.0 - s0.0, s2.1 - s0.1);
            let px = (p % w) as f64;
            let py = (p / w) as f64;
            let q = (px - s0.0, py - s0.1);
            let area = cross2(e1, e2);
            let [_, b1, b2] = frag.bary;
            let g_n1 = g_b1 / area;
            let g_n2 = g_b2 / area;
            let g_area = -(g_b1 * b1 + g_b2 * b2) / area;
            // b1 = (q × e2)/A, b2 = (e1 × q)/A, A = e1 × e2
            let g_qv = (g_n1 * e2.1 - g_n2 * e1.1, -g_n1 * e2.0 + g_n2 * e1.0);
            let g_e2 = (-g_n1 * q.1 - g_area * e1.1, g_n1 * q.0 + g_area * e1.0);
            let g_e1 = (g_n2 * q.1 + g_area * e2.1, -g_n2 * q.0 - g_area * e2.0);
            let g_s1 = g_e1;
            let g_s2 = g_e2;
            let g_s0 = (-(g_e1.0 + g_e2.0 + g_qv.0), -(g_e1.1 + g_e2.1 + g_qv.1));
            for (vi, qv, gs) in [(i0, q0, g_s0), (i1, q1, g_s1), (i2, q2, g_s2)] {
                let iz = 1.0 / qv.z();
                g_q[vi] += Vec3::new(
                    f * gs.0 * iz,
                    f * gs.1 * iz,
                    -f * (gs.0 * qv.x() + gs.1 * qv.y()) * iz * iz,
                );
            }
        }

        let v = &tape.view;
        let pose = geometry::pose_unchecked(v);
        let jac = geometry::rotation_jacobian(v.rx, v.ry, v.rz);
        let pivot = Vec3::new(0.0, 0.0, geometry::ROTATION_PIVOT_DEPTH);
        let mut g_view = [0.0; 6];
        let mut g_points = vec![Vec3::ZERO; nv];
        for (vi, gq) in g_q.iter().enumerate() {
            if *gq == Vec3::ZERO {
                continue;
            }
            let rel = self.mesh.vertices[vi] - pivot;
            for a in 0..3 {
                g_view[a] += gq.dot(&jac[a].mul_vec(&rel));
            }
            g_view[3] += gq.x();
            g_view[4] += gq.y();
            g_view[5] += gq.z();
            g_points[vi] = pose.r.tmul_vec(gq);
        }

        let sg = shade_vjp(&self.albedo, &self.normals, &tape.light, &g_tex);
        ViewGrad { albedo: sg.albedo, normals: sg.normals, points: g_points, view: g_view, light: sg.light }
    }

    /// Reduces summed shared cotangents to gradients on depth and albedo values.
    pub fn pullback_shared(&self, albedo: Image, normals: &NormalMap, points: &[Vec3]) -> (Grid<f64>, Image) {
        let mut g_d = normals_vjp(&self.depth, &self.k, normals);
        let w = self.depth.width();
        for (idx, gp) in points.iter().enumerate() {
            let ray = self.k.ray((idx % w) as f64, (idx / w) as f64);
            g_d.as_mut_slice()[idx] += gp.dot(&ray);
        }
        (g_d, albedo)
    }
}

/// Forward intermediates of one rendered view.
#[derive(Clone, Debug)]
pub struct ViewTape {
    pub view: Viewpoint,
    pub light: Lighting,
    pub texture: Image,
    moved: Vec<Vec3>,
    frags: Vec<Option<Fragment>>,
}

impl ViewTape {
    pub fn fragment(&self, p: usize) -> Option<&Fragment> {
        self.frags[p].as_ref()
    }
}

/// Cotangents from one view. `albedo`, `normals` and `points` are shared
/// quantities; `view` and `light` belong to the view.
#[derive(Clone, Debug)]
pub struct ViewGrad {
    pub albedo: Image,
    pub normals: NormalMap,
    pub points: Vec<Vec3>,
    /// `(rx, ry, rz, tx, ty, tz)`
    pub view: [f64; 6],
    /// `(lx, ly, ks, kd)`
    pub light: [f64; 4],
}

/// Raw (unconstrained) render inputs as the optimizer sees them.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderParams {
    /// `d = 1 + 0.1 tanh(u)`
    pub depth_raw: Grid<f64>,
    /// `a = sigmoid(w)` per channel
    pub albedo_raw: Image,
    pub view: Viewpoint,
    pub light: LightingParams,
}

impl RenderParams {
    pub fn depth(&self) -> DepthMap {
        DepthMap::from_raw(&self.depth_raw)
    }

    pub fn albedo(&self) -> Image {
        albedo_from_raw(&self.albedo_raw)
    }

    pub fn shared(&self, k: &CameraIntrinsics) -> Result<SharedScene> {
        SharedScene::new(self.depth(), self.albedo(), k)
    }
}

pub fn albedo_from_raw(raw: &Image) -> Image {
    raw.map(|p| [linalg::sigmoid(p[0]), linalg::sigmoid(p[1]), linalg::sigmoid(p[2])])
}

pub fn albedo_to_raw(a: &Image) -> Image {
    a.map(|p| [linalg::logit(p[0]), linalg::logit(p[1]), linalg::logit(p[2])])
}

/// Gradients with respect to every continuous render input.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradients {
    pub depth_raw: Grid<f64>,
    pub albedo_raw: Image,
    pub view: [f64; 6],
    pub light: [f64; 4],
}

/// Chain rule from value-space gradients to raw depth/albedo parameters.
pub fn raw_gradients(params_depth_raw: &Grid<f64>, params_albedo_raw: &Image, g_d: &Grid<f64>, g_a: &Image) -> (Grid<f64>, Image) {
    let gd = Grid::from_fn(g_d.width(), g_d.height(), |i, j| {
        g_d.get(i, j) * geometry::depth_raw_derivative(*params_depth_raw.get(i, j))
    });
    let ga = Grid::from_fn(g_a.width(), g_a.height(), |i, j| {
        let w = params_albedo_raw.get(i, j);
        let g = g_a.get(i, j);
        let mut o = [0.0; 3];
        for c in 0..3 {
            let s = linalg::sigmoid(w[c]);
            o[c] = g[c] * s * (1.0 - s);
        }
        o
    });
    (gd, ga)
}

/// Renders `params` and returns the gradient of `⟨grad_image, image⟩`, i.e. the
/// vector-Jacobian product of the render with the loss cotangent.
pub fn gradient(
    params: &RenderParams,
    k: &CameraIntrinsics,
    background: Rgb,
    grad_image: &Image,
) -> Result<(RenderOutput, ParamGradients)> {
    let scene = params.shared(k)?;
    let light = params.light.lighting();
    let (out, tape) = scene.render_taped(&params.view, &light, background)?;
    let vg = scene.backward(&tape, grad_image);
    let (g_d, g_a) = scene.pullback_shared(vg.albedo, &vg.normals, &vg.points);
    let (depth_raw, albedo_raw) = raw_gradients(&params.depth_raw, &params.albedo_raw, &g_d, &g_a);
    Ok((out, ParamGradients { depth_raw, albedo_raw, view: vg.view, light: params.light.pullback(vg.light) }))
}
