use std::f64::consts::PI;

use nemo_core::inference::{
    optimize_pose, robust_log_likelihood, robust_log_likelihood_rendered, RobustConfig,
};
use nemo_core::mesh::{box_corners, generate_cuboid_mesh};
use nemo_core::neural_mesh::render_feature_map;
use nemo_core::raster::{rasterize, visible_vertices};
use nemo_core::training::{
    contrastive_background_loss, contrastive_feature_loss, correspondence, mle_loss_with,
    update_vertex_features,
};
use nemo_core::{
    BackgroundModel, CameraIntrinsics, CameraPose, FeatureMap, NeuralMesh, TriangleMesh, Vec3,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn unit_map(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> FeatureMap {
    FeatureMap::from_vec(h, w, d, (0..h * w).flat_map(|_| unit(rng, d)).collect()).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    CameraPose::new(
        rng.random_range(0.0..2.0 * PI),
        rng.random_range(-1.2..1.2),
        rng.random_range(-PI..PI),
        rng.random_range(4.0..6.0),
    )
    .unwrap()
}

fn random_mesh(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let nv = rng.random_range(3..=12);
    let verts: Vec<Vec3> = (0..nv)
        .map(|_| {
            Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect();
    let nf = rng.random_range(1..=16);
    let faces = (0..nf)
        .map(|_| loop {
            let f = [
                rng.random_range(0..nv),
                rng.random_range(0..nv),
                rng.random_range(0..nv),
            ];
            if f[0] != f[1] && f[1] != f[2] && f[0] != f[2] {
                break f;
            }
        })
        .collect();
    TriangleMesh::new(verts, faces).unwrap()
}

fn cuboid(rng: &mut ChaCha8Rng, target: usize) -> TriangleMesh {
    let h: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.4..1.0));
    let corners = box_corners(Vec3::new(-h[0], -h[1], -h[2]), Vec3::new(h[0], h[1], h[2]));
    generate_cuboid_mesh(&[corners], target).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, mesh: TriangleMesh, d: usize) -> NeuralMesh {
    let theta = (0..mesh.vertex_count())
        .flat_map(|_| unit(rng, d))
        .collect();
    NeuralMesh::new(mesh, theta, d, "prop", true).unwrap()
}

/// Nearest face hit by the ray through each pixel centre, in camera space.
fn oracle_faces(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Vec<Option<usize>> {
    let cam: Vec<Vec3> = mesh
        .vertices()
        .iter()
        .map(|&v| pose.world_to_camera(v))
        .collect();
    let mut out = vec![None; intr.width * intr.height];
    for y in 0..intr.height {
        for x in 0..intr.width {
            let dir = Vec3::new(
                (x as f64 + 0.5 - intr.cx) / intr.focal,
                (y as f64 + 0.5 - intr.cy) / intr.focal,
                1.0,
            );
            let mut best: Option<(f64, usize)> = None;
            for (fi, f) in mesh.faces().iter().enumerate() {
                let (a, b, c) = (cam[f[0]], cam[f[1]], cam[f[2]]);
                let (e1, e2) = (b - a, c - a);
                let p = dir.cross(e2);
                let det = e1.dot(p);
                if det == 0.0 {
                    continue;
                }
                let s = Vec3::new(-a.x, -a.y, -a.z);
                let u = s.dot(p) / det;
                let q = s.cross(e1);
                let v = dir.dot(q) / det;
                if u < 0.0 || v < 0.0 || u + v > 1.0 {
                    continue;
                }
                let t = e2.dot(q) / det;
                if best.is_none_or(|(bt, _)| t < bt * (1.0 - 1e-9)) {
                    best = Some((t, fi));
                }
            }
            out[y * intr.width + x] = best.map(|(_, f)| f);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn pose_rotation_is_orthonormal(
        az in -10.0f64..10.0,
        el in -10.0f64..10.0,
        th in -10.0f64..10.0,
        dist in 0.5f64..20.0,
    ) {
        let m = CameraPose::new(az, el, th, dist).unwrap().rotation().matrix();
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[i][k] * m[j][k]).sum();
                prop_assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        prop_assert!((det - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rasterizer_matches_ray_casting(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::centered(30.0, 24, 24).unwrap();
        let mesh = random_mesh(&mut rng);
        let pose = random_pose(&mut rng);
        let buf = rasterize(&mesh, &pose, &intr, 24, 24).unwrap();
        let oracle = oracle_faces(&mesh, &pose, &intr);
        for (i, (f, o)) in buf.fragments().iter().zip(&oracle).enumerate() {
            prop_assert_eq!(f.map(|f| f.face), *o, "pixel {}", i);
        }
    }

    #[test]
    fn visible_vertices_lie_in_front_on_covered_pixels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::centered(30.0, 24, 24).unwrap();
        let mesh = cuboid(&mut rng, 60);
        let pose = random_pose(&mut rng);
        let buf = rasterize(&mesh, &pose, &intr, 24, 24).unwrap();
        let proj = nemo_core::project_vertices(mesh.vertices(), &pose, &intr).unwrap();
        let vis = visible_vertices(&mesh, &pose, &intr, 24, 24).unwrap();
        prop_assert!(!vis.is_empty());
        for v in &vis {
            let p = &proj[v.vertex];
            prop_assert!(p.depth > 0.0);
            prop_assert!(buf.fragments()[v.pixel].is_some());
            prop_assert_eq!(v.pixel, p.v.floor() as usize * 24 + p.u.floor() as usize);
        }
    }

    #[test]
    fn mle_loss_is_non_negative_and_zero_only_when_exact(seed in any::<u64>(), d in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::centered(20.0, 16, 16).unwrap();
        let mesh = cuboid(&mut rng, 40);
        let pose = random_pose(&mut rng);
        let corr = correspondence(&mesh, &pose, &intr).unwrap();
        let model = random_model(&mut rng, mesh.clone(), d);
        let bg = BackgroundModel::new(unit(&mut rng, d), 1.0, true).unwrap();
        let f = unit_map(&mut rng, 16, 16, d);
        prop_assert!(mle_loss_with(&f, &model, &bg, &corr, 1.0).unwrap() >= 0.0);

        // Constant model, clutter and features: exact fit.
        let t = unit(&mut rng, d);
        let flat = NeuralMesh::new(mesh, t.repeat(model.mesh().vertex_count()), d, "flat", false).unwrap();
        let bg = BackgroundModel::new(t.clone(), 1.0, false).unwrap();
        let mut exact = FeatureMap::from_vec(16, 16, d, t.repeat(256)).unwrap();
        prop_assert_eq!(mle_loss_with(&exact, &flat, &bg, &corr, 1.0).unwrap(), 0.0);
        let i = rng.random_range(0..256);
        exact.pixel_mut(i)[0] += 0.5;
        let touched = corr.bg_pixels.contains(&i) || corr.fg_pairs.iter().any(|p| p.pixel == i);
        let loss = mle_loss_with(&exact, &flat, &bg, &corr, 1.0).unwrap();
        prop_assert_eq!(loss > 0.0, touched);
    }

    #[test]
    fn normalized_contrastive_terms_lie_in_range(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = CameraIntrinsics::centered(20.0, 16, 16).unwrap();
        let mesh = cuboid(&mut rng, 40);
        let corr = correspondence(&mesh, &random_pose(&mut rng), &intr).unwrap();
        let f = unit_map(&mut rng, 16, 16, d);
        for v in [contrastive_feature_loss(&f, &corr.fg_pairs), contrastive_background_loss(&f, &corr.fg_pairs, &corr.bg_pixels)] {
            prop_assert!((-4.0 - 1e-12..=1e-12).contains(&v), "{}", v);
        }

        // A single pair reduces to the negative squared distance.
        let a = unit(&mut rng, d);
        let b = unit(&mut rng, d);
        let two = FeatureMap::from_vec(1, 2, d, [a.clone(), b.clone()].concat()).unwrap();
        let pair = [nemo_core::raster::VisibleVertex { vertex: 0, pixel: 0 }];
        let sq: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        prop_assert!((contrastive_background_loss(&two, &pair, &[1]) + sq).abs() < 1e-12);
        prop_assert!(-sq >= -4.0 - 1e-12);
    }

    #[test]
    fn vertex_feature_update_preserves_model_invariants(seed in any::<u64>(), m in 0.0f64..0.999) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let intr = CameraIntrinsics::centered(20.0, 16, 16).unwrap();
        let mesh = cuboid(&mut rng, 40);
        let corr = correspondence(&mesh, &random_pose(&mut rng), &intr).unwrap();
        let mut model = random_model(&mut rng, mesh, d);
        let mut bg = BackgroundModel::new(unit(&mut rng, d), 1.0, true).unwrap();
        let before = model.clone();
        let f = unit_map(&mut rng, 16, 16, d);
        update_vertex_features(&mut model, &mut bg, &f, &corr, m).unwrap();
        prop_assert_eq!(model.dim(), d);
        prop_assert_eq!(model.mesh(), before.mesh());
        let seen: std::collections::HashSet<usize> = corr.fg_pairs.iter().map(|p| p.vertex).collect();
        for r in 0..model.mesh().vertex_count() {
            let n: f64 = model.theta(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
            if !seen.contains(&r) {
                prop_assert_eq!(model.theta(r), before.theta(r));
            }
        }
        let nb: f64 = bg.beta().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((nb - 1.0).abs() < 1e-9);
    }

    #[test]
    fn robust_likelihood_bounds_the_plain_one(seed in any::<u64>(), prior in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let intr = CameraIntrinsics::centered(20.0, 16, 16).unwrap();
        let mesh = cuboid(&mut rng, 40);
        let model = random_model(&mut rng, mesh, d);
        let bg = BackgroundModel::new(unit(&mut rng, d), 1.0, true).unwrap();
        let pose = random_pose(&mut rng);
        let f = unit_map(&mut rng, 16, 16, d);
        let render = render_feature_map(&model, &pose, &intr, 16, 16).unwrap();
        let robust = RobustConfig { prior_visible: prior, ..Default::default() };
        let plain = RobustConfig { robust: false, ..robust };
        let (r, _) = robust_log_likelihood_rendered(&f, &model, &render, &bg, &robust).unwrap();
        let (p, _) = robust_log_likelihood_rendered(&f, &model, &render, &bg, &plain).unwrap();
        let fg = render.foreground_count() as f64;
        prop_assert!(r >= p + fg * prior.ln() - 1e-9, "{} < {} + {}", r, p, fg * prior.ln());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pose_descent_never_worsens_its_start(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let intr = CameraIntrinsics::centered(20.0, 16, 16).unwrap();
        let mesh = cuboid(&mut rng, 40);
        let model = random_model(&mut rng, mesh, d);
        let bg = BackgroundModel::new(unit(&mut rng, d), 1.0, true).unwrap();
        let truth = random_pose(&mut rng);
        let mut f = render_feature_map(&model, &truth, &intr, 16, 16).unwrap().rendered;
        f.normalize();
        let init = random_pose(&mut rng);
        let cfg = RobustConfig { max_iterations: 8, ..Default::default() };
        let (ll, _) = robust_log_likelihood(&f, &model, &init, &bg, &intr, &cfg).unwrap();
        let est = optimize_pose(&f, &model, &bg, &intr, &init, &cfg).unwrap();
        prop_assert!(est.loss <= -ll + 1e-9);
        let (check, _) = robust_log_likelihood(&f, &model, &est.pose, &bg, &intr, &cfg).unwrap();
        prop_assert!((est.loss + check).abs() < 1e-9);
    }
}
