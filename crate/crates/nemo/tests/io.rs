use nemo::experiment::generate_scenes;
use nemo::io::{
    decode_nmt, decode_pgm, encode_nmt, encode_pgm, read_extractor, read_feature_map, read_mask,
    read_mesh, read_model_set, read_scene_set, write_extractor, write_feature_map, write_mask,
    write_mesh, write_model_set, write_scene_set, SceneManifest, Tensor,
};
use nemo::scene::{OcclusionLevel, SceneConfig};
use nemo::world::{World, WorldConfig};
use nemo_core::training::LinearPatchExtractor;
use nemo_core::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Values as stored at single precision.
fn single(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x as f32 as f64).collect()
}

fn small_world() -> World {
    World::build(
        &WorldConfig {
            feature_dim: 8,
            vertex_target: 120,
            map_size: 16,
            focal: 20.0,
            ..Default::default()
        },
        3,
    )
    .unwrap()
}

#[test]
fn scene_set_round_trips() {
    let world = small_world();
    let cfg = SceneConfig {
        image_mode: true,
        ..Default::default()
    };
    let scenes = generate_scenes(
        &world,
        &[OcclusionLevel::L0, OcclusionLevel::L1],
        3,
        &cfg,
        9,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene_set(dir.path(), 9, &scenes).unwrap();
    let back = read_scene_set(dir.path()).unwrap();
    assert_eq!(back.len(), scenes.len());
    for (a, b) in back.iter().zip(&scenes) {
        assert_eq!(
            (&a.id, a.level, a.subtype, a.seed, a.index),
            (&b.id, b.level, b.subtype, b.seed, b.index)
        );
        assert_eq!(
            (&a.occluder_mask, &a.fg_mask),
            (&b.occluder_mask, &b.fg_mask)
        );
        assert!((a.pose.angles().iter().zip(b.pose.angles())).all(|(x, y)| (x - y).abs() < 1e-12));
        assert_eq!(a.features.as_slice(), single(b.features.as_slice()));
        assert_eq!(
            a.image.as_ref().unwrap().as_slice(),
            single(b.image.as_ref().unwrap().as_slice())
        );
    }

    // Stored values are already at file precision, so a second pass is exact.
    let again = tempfile::tempdir().unwrap();
    write_scene_set(again.path(), 9, &back).unwrap();
    assert_eq!(read_scene_set(again.path()).unwrap(), back);
    let manifest: SceneManifest = nemo::io::read_json(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.scenes.len(), 6);
    assert!(manifest.levels.iter().all(|l| l.count == 3));
}

#[test]
fn model_set_round_trips_with_extractor() {
    let world = small_world();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ex = LinearPatchExtractor::random(2, 4, 8, true, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_model_set(
        dir.path(),
        &world.models,
        &world.background,
        &world.intrinsics,
        Some(&ex),
    )
    .unwrap();
    let set = read_model_set(dir.path()).unwrap();
    assert_eq!(set.models.len(), world.models.len());
    for (a, b) in set.models.iter().zip(&world.models) {
        assert_eq!(a.mesh(), b.mesh());
        assert_eq!(
            (a.dim(), a.class_label(), a.is_normalized()),
            (b.dim(), b.class_label(), b.is_normalized())
        );
        assert!(a
            .features()
            .iter()
            .zip(b.features())
            .all(|(x, y)| (x - y).abs() < 1e-6));
    }
    assert!(set
        .background
        .beta()
        .iter()
        .zip(world.background.beta())
        .all(|(x, y)| (x - y).abs() < 1e-6));
    assert_eq!(set.intrinsics, world.intrinsics);
    assert_eq!(
        set.extractor.as_ref().unwrap().weights(),
        single(ex.weights())
    );

    let other = tempfile::tempdir().unwrap();
    let p = write_extractor(other.path(), set.extractor.as_ref().unwrap()).unwrap();
    assert_eq!(read_extractor(&p).unwrap(), set.extractor.unwrap());
}

#[test]
fn feature_maps_round_trip_at_single_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut data: Vec<f64> = (0..5 * 7 * 3)
        .map(|_| rng.random_range(-1e3..1e3))
        .collect();
    data[0] = f32::MIN_POSITIVE as f64;
    data[1] = -0.0;
    let f = FeatureMap::from_vec(5, 7, 3, data.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.nmt");
    write_feature_map(&path, &f).unwrap();
    let back = read_feature_map(&path).unwrap();
    assert!(back
        .as_slice()
        .iter()
        .zip(single(&data))
        .all(|(a, b)| a.to_bits() == b.to_bits()));

    let t = Tensor::from_f64([2, 3, 4], &data[..24]);
    assert_eq!(decode_nmt(&encode_nmt(&t)).unwrap(), t);
    let bytes = encode_nmt(&t);
    assert!(decode_nmt(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn masks_and_graymaps_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (11, 6);
    let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.4)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.pgm");
    write_mask(&path, w, h, &mask).unwrap();
    assert_eq!(read_mask(&path).unwrap(), (w, h, mask));

    let px: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
    assert_eq!(decode_pgm(&encode_pgm(w, h, &px)).unwrap(), (w, h, px));
    assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
}

#[test]
fn meshes_round_trip() {
    let world = small_world();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mesh.json");
    let mesh = world.models[1].mesh();
    write_mesh(&path, mesh).unwrap();
    assert_eq!(&read_mesh(&path).unwrap(), mesh);
}
