//! Independent numerical checks of the renderer and its gradients, shared by
//! the core test suite and the acceptance target.

#![allow(dead_code)]

use photogeo_core::geometry::{depth_raw_derivative, intrinsics_from_fov, viewpoint_to_pose};
use photogeo_core::metrics::psnr;
use photogeo_core::reconstruction::loss::{recon_loss, recon_loss_grad, smoothness_grad, smoothness_loss};
use photogeo_core::renderer::{
    albedo_to_raw, depth_to_mesh, gradient, rasterize, render, RenderParams, DEFAULT_BACKGROUND,
};
use photogeo_core::scenes::hemisphere;
use photogeo_core::{CameraIntrinsics, DepthMap, Grid, Image, Lighting, LightingParams, Pose, ViewBounds, Viewpoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_EPS: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-2;
pub const LAMBDA2: f64 = 0.01;
pub const PYRAMID: f64 = 0.5;

pub fn k(w: usize, h: usize) -> CameraIntrinsics {
    intrinsics_from_fov(w, h, 10f64.to_radians()).unwrap()
}

/// Smooth random depth: a paraboloid with random curvature signs plus small
/// Gaussian bumps. Every second difference stays at least 5e-4 away from zero,
/// so the smoothness term is differentiable well beyond the step size.
pub fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
    let (ci, cj) = (h as f64 / 2.0 + rng.random_range(-1.5..1.5), w as f64 / 2.0 + rng.random_range(-1.5..1.5));
    let sign = |b: bool| if b { 1.0 } else { -1.0 };
    let a = sign(rng.random_bool(0.5)) * rng.random_range(4e-4..5e-4);
    let b = sign(rng.random_bool(0.5)) * rng.random_range(4e-4..5e-4);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(4.5..7.0),
                rng.random_range(-0.003..0.003),
            )
        })
        .collect();
    DepthMap::new(Grid::from_fn(w, h, |i, j| {
        let (y, x) = (i as f64 - ci, j as f64 - cj);
        let mut d = 1.0 + a * y * y + b * x * x;
        for &(bi, bj, s, amp) in &bumps {
            d += amp * (-((i as f64 - bi).powi(2) + (j as f64 - bj).powi(2)) / (s * s)).exp();
        }
        d
    }))
    .unwrap()
}

pub fn random_albedo(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    let ph: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..6.28));
    Grid::from_fn(w, h, |i, j| {
        let (x, y) = (j as f64 / w as f64, i as f64 / h as f64);
        [
            0.5 + 0.3 * (6.0 * x + ph[0]).sin() * (4.0 * y + ph[1]).cos(),
            0.5 + 0.3 * (5.0 * y + ph[2]).sin(),
            0.5 + 0.25 * (7.0 * (x + y) + ph[3]).cos() * (3.0 * x + ph[4]).sin() + 0.05 * ph[5].sin(),
        ]
    })
}

pub fn random_light(rng: &mut ChaCha8Rng) -> Lighting {
    Lighting::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.3..0.7), rng.random_range(0.3..0.7))
}

pub fn random_view(rng: &mut ChaCha8Rng, max_deg: f64, max_t: f64) -> Viewpoint {
    let r = max_deg.to_radians();
    Viewpoint::from_array([
        rng.random_range(-r..r),
        rng.random_range(-r..r),
        rng.random_range(-r..r),
        rng.random_range(-max_t..max_t),
        rng.random_range(-max_t..max_t),
        rng.random_range(-max_t..max_t),
    ])
}

/// Step-3 objective for a single view: image reconstruction plus depth
/// smoothness.
pub fn step3_loss(p: &RenderParams, target: &Image, k: &CameraIntrinsics) -> f64 {
    let out = render(&p.depth(), &p.albedo(), &p.view, &p.light.lighting(), k, DEFAULT_BACKGROUND).unwrap();
    recon_loss(target, &out, None, PYRAMID).unwrap() + LAMBDA2 * smoothness_loss(&p.depth().values).unwrap()
}

pub struct Step3Grad {
    pub depth_raw: Grid<f64>,
    pub albedo_raw: Image,
    pub view: [f64; 6],
    pub light: [f64; 4],
}

pub fn step3_grad(p: &RenderParams, target: &Image, k: &CameraIntrinsics) -> Step3Grad {
    let out = render(&p.depth(), &p.albedo(), &p.view, &p.light.lighting(), k, DEFAULT_BACKGROUND).unwrap();
    let (_, g_img) = recon_loss_grad(target, &out, None, PYRAMID).unwrap();
    let (_, g) = gradient(p, k, DEFAULT_BACKGROUND, &g_img).unwrap();
    let (_, gs) = smoothness_grad(&p.depth().values).unwrap();
    let depth_raw = Grid::from_fn(gs.width(), gs.height(), |i, j| {
        g.depth_raw.get(i, j) + LAMBDA2 * gs.get(i, j) * depth_raw_derivative(*p.depth_raw.get(i, j))
    });
    Step3Grad { depth_raw, albedo_raw: g.albedo_raw, view: g.view, light: g.light }
}

fn rel_ok(analytic: f64, fd: f64) -> bool {
    let scale = analytic.abs().max(fd.abs());
    scale < 1e-10 || (analytic - fd).abs() / scale < REL_TOL
}

fn central(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(FD_EPS) - f(-FD_EPS)) / (2.0 * FD_EPS)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Tally {
    pub passed: usize,
    pub total: usize,
}

impl Tally {
    pub fn add(&mut self, ok: bool) {
        self.total += 1;
        self.passed += ok as usize;
    }
    pub fn fraction(&self) -> f64 {
        self.passed as f64 / self.total.max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GradientReport {
    pub depth: Tally,
    pub albedo: Tally,
    pub view: Tally,
    pub light: Tally,
}

impl GradientReport {
    pub fn worst(&self) -> f64 {
        [self.depth, self.albedo, self.view, self.light].iter().map(Tally::fraction).fold(1.0, f64::min)
    }
}

/// Interior pixels whose 3×3 neighbourhood varies in depth by less than 0.01.
pub fn smooth_interior(d: &DepthMap) -> Vec<(usize, usize)> {
    let (w, h) = d.values.dims();
    let mut out = Vec::new();
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for a in i - 1..=i + 1 {
                for b in j - 1..=j + 1 {
                    lo = lo.min(d.get(a, b));
                    hi = hi.max(d.get(a, b));
                }
            }
            if hi - lo < 0.01 {
                out.push((i, j));
            }
        }
    }
    out
}

/// Compares analytic Step-3 gradients with central differences on `scenes`
/// random `n × n` scenes. Depth and albedo are probed per pixel against the
/// full loss; view and lighting against each pixel's own photometric term.
pub fn gradient_suite(scenes: usize, n: usize, seed: u64) -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kk = k(n, n);
    let mut rep = GradientReport::default();
    for _ in 0..scenes {
        let depth = random_depth(&mut rng, n, n);
        let p = RenderParams {
            depth_raw: depth.to_raw(),
            albedo_raw: albedo_to_raw(&random_albedo(&mut rng, n, n)),
            view: random_view(&mut rng, 3.0, 0.01),
            light: LightingParams::from_lighting(&random_light(&mut rng)),
        };
        let target_view = random_view(&mut rng, 3.0, 0.01);
        let target =
            render(&depth, &random_albedo(&mut rng, n, n), &target_view, &random_light(&mut rng), &kk, DEFAULT_BACKGROUND)
                .unwrap()
                .image;
        let g = step3_grad(&p, &target, &kk);
        for (i, j) in smooth_interior(&p.depth()) {
            let fd = central(|e| {
                let mut q = p.clone();
                *q.depth_raw.get_mut(i, j) += e;
                step3_loss(&q, &target, &kk)
            });
            rep.depth.add(rel_ok(*g.depth_raw.get(i, j), fd));
            for c in 0..3 {
                let fd = central(|e| {
                    let mut q = p.clone();
                    q.albedo_raw.get_mut(i, j)[c] += e;
                    step3_loss(&q, &target, &kk)
                });
                rep.albedo.add(rel_ok(g.albedo_raw.get(i, j)[c], fd));
            }
        }
        let pixels = smooth_interior(&p.depth());
        let out = render(&p.depth(), &p.albedo(), &p.view, &p.light.lighting(), &kk, DEFAULT_BACKGROUND).unwrap();
        let pixel_term = |img: &Image, i: usize, j: usize| -> f64 {
            (0..3).map(|c| (img.get(i, j)[c] - target.get(i, j)[c]).abs()).sum()
        };
        let shifted = |c: usize, e: f64| -> Image {
            let mut q = p.clone();
            if c < 6 {
                let mut a = q.view.to_array();
                a[c] += e;
                q.view = Viewpoint::from_array(a);
            } else {
                q.light.0[c - 6] += e;
            }
            render(&q.depth(), &q.albedo(), &q.view, &q.light.lighting(), &kk, DEFAULT_BACKGROUND).unwrap().image
        };
        let plus: Vec<Image> = (0..10).map(|c| shifted(c, FD_EPS)).collect();
        let minus: Vec<Image> = (0..10).map(|c| shifted(c, -FD_EPS)).collect();
        for &(i, j) in &pixels {
            let mut cot = Grid::filled(n, n, [0.0; 3]);
            *cot.get_mut(i, j) = std::array::from_fn(|c| (out.image.get(i, j)[c] - target.get(i, j)[c]).signum());
            let (_, g) = gradient(&p, &kk, DEFAULT_BACKGROUND, &cot).unwrap();
            for c in 0..10 {
                let fd = (pixel_term(&plus[c], i, j) - pixel_term(&minus[c], i, j)) / (2.0 * FD_EPS);
                if c < 6 {
                    rep.view.add(rel_ok(g.view[c], fd));
                } else {
                    rep.light.add(rel_ok(g.light[c - 6], fd));
                }
            }
        }
    }
    rep
}

/// Largest deviation from the albedo over covered pixels when rendering with
/// v = 0 and ambient-only light.
pub fn identity_render_error(w: usize, h: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = random_depth(&mut rng, w, h);
    let a = random_albedo(&mut rng, w, h);
    let out = render(&d, &a, &Viewpoint::IDENTITY, &Lighting::new(0.0, 0.0, 1.0, 0.0), &k(w, h), DEFAULT_BACKGROUND).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..h {
        for j in 0..w {
            if out.covered(i, j) {
                for c in 0..3 {
                    worst = worst.max((out.image.get(i, j)[c] - a.get(i, j)[c]).abs());
                }
            }
        }
    }
    worst
}

/// Nearest-triangle depth per pixel by testing every triangle against every
/// pixel centre, with barycentrics from Cramer's rule.
pub fn brute_force_depth(d: &DepthMap, kk: &CameraIntrinsics, pose: &Pose) -> Grid<Option<f64>> {
    let mesh = depth_to_mesh(d, kk);
    let pts: Vec<(f64, f64, f64)> = mesh
        .vertices
        .iter()
        .map(|v| {
            let q = pose.apply(v);
            let (x, y) = kk.project(&q);
            (x, y, q.z())
        })
        .collect();
    Grid::from_fn(kk.width, kk.height, |py, px| {
        let (x, y) = (px as f64, py as f64);
        let mut best: Option<f64> = None;
        for tri in &mesh.triangles {
            let [a, b, c] = tri.map(|t| pts[t as usize]);
            let m = [[b.0 - a.0, c.0 - a.0], [b.1 - a.1, c.1 - a.1]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-14 {
                continue;
            }
            let (rx, ry) = (x - a.0, y - a.1);
            let l1 = (rx * m[1][1] - ry * m[0][1]) / det;
            let l2 = (m[0][0] * ry - m[1][0] * rx) / det;
            let l0 = 1.0 - l1 - l2;
            if l0 < -1e-9 || l1 < -1e-9 || l2 < -1e-9 {
                continue;
            }
            let z = l0 * a.2 + l1 * b.2 + l2 * c.2;
            if best.is_none_or(|bz| z < bz) {
                best = Some(z);
            }
        }
        best
    })
}

/// Pixels where the rasterizer disagrees with [`brute_force_depth`], and the
/// number of pixels compared, over every mesh size from 2×2 to 8×8.
pub fn zbuffer_exhaustive(trials: usize, seed: u64) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut bad, mut total) = (0, 0);
    for w in 2..=8 {
        for h in 2..=8 {
            let kk = k(w, h);
            for _ in 0..trials {
                let d = DepthMap::new(Grid::from_fn(w, h, |_, _| rng.random_range(0.92..1.08))).unwrap();
                let v = random_view(&mut rng, 8.0, 0.03);
                let pose = viewpoint_to_pose(&v, &ViewBounds::default()).unwrap();
                let tex = Grid::filled(w, h, [0.5; 3]);
                let out = rasterize(&depth_to_mesh(&d, &kk), &tex, &kk, &pose, DEFAULT_BACKGROUND).unwrap();
                let oracle = brute_force_depth(&d, &kk, &pose);
                for i in 0..h {
                    for j in 0..w {
                        total += 1;
                        let got = out.covered(i, j).then(|| *out.depth.get(i, j));
                        let ok = match (got, *oracle.get(i, j)) {
                            (None, None) => true,
                            (Some(a), Some(b)) => (a - b).abs() < 1e-9,
                            _ => false,
                        };
                        bad += !ok as usize;
                    }
                }
            }
        }
    }
    (bad, total)
}

/// Renders the hemisphere scene at `yaw`, re-renders that image draped over
/// its own rendered depth under the inverse pose, and scores the result
/// against the direct render on pixels seen from both views.
pub fn round_trip_psnr(yaw_deg: f64, n: usize) -> f64 {
    let s = hemisphere(n, n);
    let kk = k(n, n);
    let v = Viewpoint::yaw(yaw_deg.to_radians());
    let base = render(&s.depth, &s.albedo, &Viewpoint::IDENTITY, &s.lighting, &kk, DEFAULT_BACKGROUND).unwrap();
    let moved = render(&s.depth, &s.albedo, &v, &s.lighting, &kk, DEFAULT_BACKGROUND).unwrap();
    let seen = moved.depth.map(|&z| if z > 0.0 { z } else { 1.1 });
    let coverage = moved.coverage.map(|&c| [c; 3]);
    let mesh = depth_to_mesh(&DepthMap::new(seen).unwrap(), &kk);
    let pose = viewpoint_to_pose(&v, &ViewBounds::default()).unwrap().inverse();
    let back = rasterize(&mesh, &moved.image, &kk, &pose, DEFAULT_BACKGROUND).unwrap();
    let vis = rasterize(&mesh, &coverage, &kk, &pose, DEFAULT_BACKGROUND).unwrap();
    let mask = Grid::from_fn(n, n, |i, j| {
        base.covered(i, j) && vis.covered(i, j) && vis.image.get(i, j)[0] > 1.0 - 1e-9 && *s.mask.get(i, j)
    });
    psnr(&back.image, &base.image, Some(&mask)).unwrap()
}

pub struct MetricChecks {
    /// `side(c·d, d)` for c = 0.5, 1, 2 on a random depth map.
    pub scaled_side: [f64; 3],
    pub orthogonal_mad: f64,
    pub two_pixel_side: f64,
}

pub fn metric_checks(seed: u64) -> MetricChecks {
    use photogeo_core::linalg::Vec3;
    use photogeo_core::metrics::{mad, side};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = DepthMap::new(Grid::from_fn(32, 24, |_, _| rng.random_range(0.91..1.09))).unwrap();
    let scaled_side = [0.5, 1.0, 2.0].map(|c| side(&DepthMap::new(d.values.map(|v| c * v)).unwrap(), &d, None).unwrap());
    let z = Grid::filled(3, 3, Vec3::new(0.0, 0.0, 1.0));
    let x = Grid::from_fn(3, 3, |i, j| {
        let a = (i * 3 + j) as f64;
        Vec3::new(a.cos(), a.sin(), 0.0)
    });
    let two = |a: f64, b: f64| DepthMap::new(Grid::from_vec(2, 1, vec![a, b]).unwrap()).unwrap();
    MetricChecks {
        scaled_side,
        orthogonal_mad: mad(&x, &z, None).unwrap(),
        two_pixel_side: side(&two(1.0, 1.0), &two(1.0, std::f64::consts::E), None).unwrap(),
    }
}
