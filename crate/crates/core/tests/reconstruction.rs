use photogeo_core::exec::Sequential;
use photogeo_core::geometry::{compute_normals, intrinsics_from_fov};
use photogeo_core::manifold::OracleProjector;
use photogeo_core::metrics::side;
use photogeo_core::priors::{build_prior, PriorKind, PriorSpec};
use photogeo_core::reconstruction::loss::{smoothness_grad, smoothness_loss};
use photogeo_core::reconstruction::optim::Adam;
use photogeo_core::reconstruction::{
    manipulate, reconstruct, run_pipeline, step1_fit_albedo, step2_generate_and_project, step3_refine, InstanceState,
    Manipulation, PipelineConfig, PipelineOutput, ProjectedSample, RefineReport, StageConfig,
};
use photogeo_core::renderer::{render, DEFAULT_BACKGROUND};
use photogeo_core::sampling::SeedPolicy;
use photogeo_core::scenes::{build_scene, Scene};
use photogeo_core::{CameraIntrinsics, DepthMap, Grid, Image, Lighting, LightingOffset, ViewBounds, Viewpoint};

fn k(n: usize) -> CameraIntrinsics {
    intrinsics_from_fov(n, n, 10f64.to_radians()).unwrap()
}

fn quick_stage(stage: usize, m: usize, iters: usize) -> StageConfig {
    StageConfig { m, iters1: iters, iters2: iters / 2, iters3: iters, ..StageConfig::default_for(stage) }
}

fn quick_pipeline(stages: usize, m: usize, iters: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::with_stages(stages);
    cfg.stages = (1..=stages).map(|s| quick_stage(s, m, iters)).collect();
    cfg
}

fn run(scene: &Scene, cfg: &PipelineConfig) -> PipelineOutput {
    let n = scene.depth.width();
    let oracle = OracleProjector::new(&scene.oracle(&k(n), 0, 0.0), SeedPolicy::new(cfg.seed)).unwrap();
    let image = scene.image(&k(n)).unwrap();
    run_pipeline(&image, Some(&scene.mask), cfg, &oracle, &Sequential).unwrap()
}

fn assert_mirror_exact(d: &DepthMap) {
    let w = d.width();
    for i in 0..d.height() {
        for j in 0..w {
            assert_eq!(d.get(i, j), d.get(i, w - 1 - j), "({i}, {j})");
        }
    }
}

#[test]
fn albedo_fit_converges_on_a_constant_image() {
    let n = 24;
    let mut state = InstanceState::new(&build_prior(&PriorSpec::with_kind(PriorKind::Flat), n, n, None).unwrap());
    let image = Grid::filled(n, n, [0.5; 3]);
    let cfg = StageConfig { iters1: 200, ..StageConfig::default_for(1) };
    step1_fit_albedo(&mut state, &image, None, &k(n), &cfg, DEFAULT_BACKGROUND).unwrap();
    for p in state.albedo().as_slice() {
        for c in p {
            assert!((c - 0.5).abs() < 1e-2, "{c}");
        }
    }

    let prior = build_prior(&PriorSpec::default(), n, n, None).unwrap();
    let mut state = InstanceState::new(&prior);
    state.albedo_raw = Grid::filled(n, n, [0.3, -0.2, 0.1]);
    let before = state.clone();
    let image = Grid::filled(n, n, [0.9, 0.1, 0.4]);
    let cfg = StageConfig { iters1: 0, ..StageConfig::default_for(1) };
    step1_fit_albedo(&mut state, &image, None, &k(n), &cfg, DEFAULT_BACKGROUND).unwrap();
    assert_eq!(state, before);
}

#[test]
fn albedo_outside_the_mask_stays_at_its_start() {
    let n = 24;
    let mut state = InstanceState::new(&build_prior(&PriorSpec::with_kind(PriorKind::Flat), n, n, None).unwrap());
    let mask = Grid::from_fn(n, n, |i, j| i < 12 && j > 4);
    let image = Grid::from_fn(n, n, |i, j| [0.2 + 0.02 * i as f64, 0.7, 0.1 + 0.03 * j as f64]);
    let cfg = StageConfig { iters1: 50, ..StageConfig::default_for(1) };
    step1_fit_albedo(&mut state, &image, Some(&mask), &k(n), &cfg, DEFAULT_BACKGROUND).unwrap();
    for i in 0..n {
        for j in 0..n {
            let a = state.albedo_raw.get(i, j);
            if *mask.get(i, j) {
                assert_ne!(a, &[0.0; 3]);
            } else {
                assert_eq!(a, &[0.0; 3], "({i}, {j})");
            }
        }
    }
}

fn step2(scene: &Scene, state: &InstanceState, m: usize, seed: u64, noise: f64) -> Vec<ProjectedSample> {
    let n = scene.depth.width();
    let mut pipeline = PipelineConfig::with_stages(1);
    pipeline.seed = seed;
    let cfg = quick_stage(1, m, 10);
    let oracle = OracleProjector::new(&scene.oracle(&k(n), cfg.iters2, noise), SeedPolicy::new(seed)).unwrap();
    let image = scene.image(&k(n)).unwrap();
    step2_generate_and_project(state, &image, Some(&scene.mask), &oracle, &pipeline, &cfg, &k(n), &Sequential).unwrap()
}

#[test]
fn step2_with_no_samples_returns_only_the_input() {
    let scene = build_scene("bump2", 20, 20).unwrap();
    let state = InstanceState::new(&build_prior(&PriorSpec::default(), 20, 20, None).unwrap());
    let out = step2(&scene, &state, 0, 0, 0.0);
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].image, scene.image(&k(20)).unwrap());
    assert_eq!(out[0].hint_view, Viewpoint::IDENTITY);
}

#[test]
fn step2_is_a_fixed_point_on_the_manifold_and_deterministic() {
    let n = 20;
    let scene = build_scene("hemisphere", n, n).unwrap();
    let mut state = InstanceState::new(&scene.depth);
    state.depth_raw = scene.depth.to_raw();
    state.albedo_raw = photogeo_core::renderer::albedo_to_raw(&scene.albedo);
    state.light = scene.lighting;
    let exact = DepthMap::from_raw(&state.depth_raw);
    let a = step2(&scene, &state, 6, 4, 0.0);
    for s in &a[..6] {
        let pseudo = render(&exact, &state.albedo(), &s.hint_view, &state.light.with_offset(&s.hint_light), &k(n), DEFAULT_BACKGROUND)
            .unwrap()
            .image;
        let diff = s.image.as_flat().iter().zip(pseudo.as_flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    let fresh = InstanceState::new(&build_prior(&PriorSpec::default(), n, n, None).unwrap());
    let x = step2(&scene, &fresh, 32, 9, 0.01);
    let y = step2(&scene, &fresh, 32, 9, 0.01);
    assert_eq!(x.len(), 33);
    for (p, q) in x.iter().zip(&y) {
        assert_eq!(p.image, q.image);
        assert_eq!(p.hint_view, q.hint_view);
        assert_eq!(p.residual, q.residual);
    }
}

#[test]
fn step3_is_stationary_at_the_truth() {
    let n = 20;
    let scene = build_scene("bump2", n, n).unwrap();
    let mut state = InstanceState::new(&scene.depth);
    state.albedo_raw = photogeo_core::renderer::albedo_to_raw(&scene.albedo);
    state.light = scene.lighting;
    let image = reconstruct(&state, &k(n), DEFAULT_BACKGROUND).unwrap();
    let sample = ProjectedSample {
        image,
        mask: None,
        hint_view: Viewpoint::IDENTITY,
        hint_light: LightingOffset::ZERO,
        start: None,
        fitted: None,
        converged: true,
        residual: 0.0,
    };
    let mut cfg = StageConfig { iters3: 20, depth_levels: 0, ..StageConfig::default_for(1) };
    cfg.lr.depth = 0.0;
    let before = state.clone();
    let rep = step3_refine(&mut state, &[sample], &k(n), &cfg, &ViewBounds::default(), DEFAULT_BACKGROUND, &Sequential).unwrap();
    let drift = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(drift(state.albedo_raw.as_flat(), before.albedo_raw.as_flat()) <= 20.0 * 1e-6);
    assert!(drift(state.depth_raw.as_slice(), before.depth_raw.as_slice()) <= 20.0 * 1e-6);
    let l = state.light;
    assert!(drift(&[l.lx, l.ly, l.ks, l.kd], &[before.light.lx, before.light.ly, before.light.ks, before.light.kd]) <= 20.0 * 1e-6);
    let recon_part = rep.sample_losses[0];
    assert!(recon_part < 1e-9, "{recon_part}");
}

#[test]
fn smoothness_descent_flattens_a_bump() {
    let w = 32;
    let mut d = Grid::from_fn(w, 1, |_, j| 1.0 - 0.05 * (-((j as f64 - 15.5) / 4.0).powi(2)).exp());
    let mut opt = Adam::new(w, 1e-3);
    let start = smoothness_loss(&d).unwrap();
    for _ in 0..100 {
        let (_, g) = smoothness_grad(&d).unwrap();
        opt.step(d.as_mut_slice(), g.as_slice());
    }
    let end = smoothness_loss(&d).unwrap();
    assert!(end < 0.5 * start, "{start} -> {end}");
}

#[test]
fn one_stage_beats_the_prior_with_descending_loss() {
    let n = 32;
    let scene = build_scene("hemisphere", n, n).unwrap();
    let mut cfg = quick_pipeline(1, 32, 400);
    cfg.stages[0].iters1 = 200;
    cfg.stages[0].iters2 = 40;
    let out = run(&scene, &cfg);
    let s_prior = side(&out.prior, &scene.depth, Some(&scene.mask)).unwrap();
    let s_final = side(&out.snapshots[0].depth, &scene.depth, Some(&scene.mask)).unwrap();
    assert!(s_final < s_prior, "{s_final} vs prior {s_prior}");
    let rep = RefineReport { losses: out.snapshots[0].losses.clone(), ..Default::default() };
    assert_eq!(rep.losses.len(), 400);
    assert!(rep.window_violations(50).is_empty(), "{:?}", rep.window_violations(50));
}

#[test]
fn symmetric_stages_stay_mirror_exact() {
    let n = 20;
    let scene = build_scene("bump2", n, n).unwrap();
    let mut cfg = quick_pipeline(3, 4, 12);
    cfg.stages[0].symmetric = true;
    cfg.stages[1].symmetric = true;
    let out = run(&scene, &cfg);
    assert_mirror_exact(&out.snapshots[0].depth);
    assert_mirror_exact(&out.snapshots[1].depth);
    for s in &out.snapshots[..2] {
        let w = n;
        for i in 0..n {
            for j in 0..w {
                assert_eq!(s.albedo.get(i, j), s.albedo.get(i, w - 1 - j));
            }
        }
    }
    let d = &out.snapshots[2].depth;
    assert!((0..n).any(|i| (0..n).any(|j| d.get(i, j) != d.get(i, n - 1 - j))));
}

#[test]
fn no_op_pipeline_returns_the_prior() {
    let n = 20;
    let scene = build_scene("hemisphere", n, n).unwrap();
    let cfg = quick_pipeline(1, 0, 0);
    let out = run(&scene, &cfg);
    let d = &out.snapshots[0].depth;
    for (a, b) in d.values.as_slice().iter().zip(out.prior.values.as_slice()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(out.snapshots[0].albedo.as_flat().iter().all(|&a| a == 0.5));
}

#[test]
fn pipeline_is_deterministic() {
    let n = 20;
    let scene = build_scene("bump2", n, n).unwrap();
    let mut cfg = quick_pipeline(2, 4, 10);
    cfg.seed = 17;
    let a = run(&scene, &cfg);
    let b = run(&scene, &cfg);
    assert_eq!(a.snapshots, b.snapshots);
    cfg.seed = 18;
    assert_ne!(run(&scene, &cfg).snapshots[0].depth, a.snapshots[0].depth);
}

#[test]
fn manipulation_trajectories() {
    let n = 20;
    let scene = build_scene("bump2", n, n).unwrap();
    let kk = k(n);
    assert!(manipulate(&scene.depth, &scene.albedo, &scene.lighting, &kk, &Manipulation::Rotate(vec![]), DEFAULT_BACKGROUND)
        .unwrap()
        .is_empty());
    let frames = manipulate(&scene.depth, &scene.albedo, &scene.lighting, &kk, &Manipulation::Rotate(vec![0.0]), DEFAULT_BACKGROUND).unwrap();
    assert_eq!(frames, vec![scene.image(&kk).unwrap()]);

    let flat = DepthMap::constant(n, n, 1.02);
    let base = Lighting::new(0.0, 0.0, 0.4, 0.6);
    let dirs = vec![(-0.9, 0.0), (-0.3, 0.1), (0.5, -0.2), (0.9, 0.0)];
    let mode = Manipulation::Relight { base, directions: dirs.clone() };
    let frames = manipulate(&flat, &scene.albedo, &base, &kk, &mode, DEFAULT_BACKGROUND).unwrap();
    let nrm = compute_normals(&flat, &kk).unwrap();
    let n0 = nrm.get(0, 0);
    for (f, (lx, ly)) in frames.iter().zip(dirs) {
        let l = Lighting { lx, ly, ..base };
        let scale = l.ks + l.kd * l.direction().dot(n0).max(0.0);
        let expected: Image = scene.albedo.map(|a| a.map(|c| scale * c));
        let diff = f.as_flat().iter().zip(expected.as_flat()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }
}
