use std::collections::BTreeSet;

use mfdepth::geometry::{warp_image, Intrinsics, RigidTransform};
use mfdepth::synthdata::*;
use mfdepth::Error;

fn tex(seed: u64) -> Texture {
    Texture { seed, wavelength: 0.8, octaves: 4, contrast: 0.4, base: [0.5, 0.4, 0.6] }
}

fn scene(surfaces: Vec<Surface>) -> Scene {
    Scene { intrinsics: Intrinsics::new(40.0, 40.0, 15.5, 11.5).unwrap(), width: 32, height: 24, surfaces }
}

#[test]
fn same_seed_same_scene_and_sample() {
    for layout in [Layout::Fronto, Layout::Slanted, Layout::HeightField] {
        let spec = SceneSpec::desk(42, layout);
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        let a = generate_sample(&spec, "a").unwrap();
        let b = generate_sample(&spec, "a").unwrap();
        assert_eq!(a.target.data(), b.target.data());
        assert_eq!(a.prev.data(), b.prev.data());
        assert_eq!(a.depth.data(), b.depth.data());
        assert_eq!(a.pose_next, b.pose_next);
    }
    let other = generate_sample(&SceneSpec::desk(43, Layout::Fronto), "a").unwrap();
    assert_ne!(other.target.data(), generate_sample(&SceneSpec::desk(42, Layout::Fronto), "a").unwrap().target.data());
}

#[test]
fn single_plane_depth_is_constant() {
    let (_, depth) = render(&scene(vec![Surface::fronto(5.0, None, tex(1))]), &RigidTransform::identity()).unwrap();
    assert!(depth.data().iter().all(|&d| (d - 5.0).abs() < 1e-12));
}

#[test]
fn two_half_planes_give_two_depths() {
    let left = Region { u0: -1.0, u1: 15.0, v0: -1.0, v1: 24.0 };
    let right = Region { u0: 15.5, u1: 33.0, v0: -1.0, v1: 24.0 };
    let s = scene(vec![Surface::fronto(3.0, Some(left), tex(1)), Surface::fronto(9.0, Some(right), tex(2))]);
    let (_, depth) = render(&s, &RigidTransform::identity()).unwrap();
    let values: BTreeSet<u64> = depth.data().iter().map(|d| (d * 1e9).round() as u64).collect();
    assert_eq!(values.len(), 2);
    assert!(depth.data()[0] == 3.0 && depth.data()[31] == 9.0);
}

#[test]
fn x_translation_shifts_the_image() {
    // shift fx·tx/d = 40·0.25/5 = 2 px
    let s = scene(vec![Surface::fronto(5.0, None, tex(3))]);
    let pose = RigidTransform::translation(0.25, 0.0, 0.0);
    let (target, depth) = render(&s, &RigidTransform::identity()).unwrap();
    let (context, _) = render(&s, &pose).unwrap();
    let (h, w) = (24, 32);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w - 2 {
                let i = (c * h + y) * w + x;
                assert!((context.data()[i + 2] - target.data()[i]).abs() < 1e-9);
            }
        }
    }
    let (recon, seen) = warp_image(&context, &depth, &s.intrinsics, &pose).unwrap();
    for i in 0..h * w {
        if seen[i] {
            for c in 0..3 {
                assert!((recon.data()[c * h * w + i] - target.data()[c * h * w + i]).abs() < 1e-9);
            }
        }
    }
    assert_eq!(seen.iter().filter(|&&v| v).count(), h * (w - 2));
}

#[test]
fn near_plane_occludes_the_far_one() {
    let box_ = Region { u0: 8.0, u1: 20.0, v0: 4.0, v1: 16.0 };
    let s = scene(vec![Surface::fronto(9.0, None, tex(1)), Surface::fronto(3.0, Some(box_), tex(2))]);
    let (_, depth) = render(&s, &RigidTransform::identity()).unwrap();
    for y in 0..24 {
        for x in 0..32 {
            let inside = (8..=20).contains(&x) && (4..=16).contains(&y);
            assert!((depth.data()[y * 32 + x] - if inside { 3.0 } else { 9.0 }).abs() < 1e-12);
        }
    }
    // pixels of the far plane next to the box are hidden from a camera moved sideways
    let pose = RigidTransform::translation(0.3, 0.0, 0.0);
    let vis = visibility(&s, &depth, &pose);
    assert!(!vis[10 * 32 + 21]);
    assert!(vis[10 * 32 + 12]);
}

#[test]
fn depth_stays_inside_the_spec_range() {
    for (seed, layout) in [(1, Layout::Fronto), (2, Layout::Slanted), (3, Layout::HeightField), (4, Layout::Slanted)] {
        let spec = SceneSpec::desk(seed, layout);
        let s = generate_sample(&spec, "x").unwrap();
        let (lo, hi) = spec.depth_range;
        let q = DEPTH_SCALE;
        assert!(s.depth.data().iter().all(|&d| d >= lo - q && d <= hi + q), "{layout:?}");
        for p in [s.pose_prev, s.pose_next] {
            let r = p.r;
            assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }
}

fn same(a: &FrameSample, b: &FrameSample) {
    assert_eq!(a.name, b.name);
    for (x, y) in [(&a.target, &b.target), (&a.prev, &b.prev), (&a.next, &b.next), (&a.depth, &b.depth)] {
        assert_eq!(x.shape(), y.shape());
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(a.intrinsics, b.intrinsics);
    assert_eq!((a.pose_prev, a.pose_next), (b.pose_prev, b.pose_next));
    assert_eq!((&a.visible_prev, &a.visible_next), (&b.visible_prev, &b.visible_next));
}

#[test]
fn dataset_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&SceneSpec::desk(0, Layout::Fronto), &[Layout::Fronto, Layout::Slanted, Layout::HeightField], 3, 9).unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in data.iter().zip(&back) {
        same(a, b);
    }
}

#[test]
fn re_rendering_reproduces_stored_contexts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec::desk(21, Layout::Slanted);
    write_dataset(&[generate_sample(&spec, "s").unwrap()], dir.path()).unwrap();
    let s = read_sample(dir.path(), "s").unwrap();
    let sc = generate_scene(&spec).unwrap();
    for (pose, stored) in [(&s.pose_prev, &s.prev), (&s.pose_next, &s.next)] {
        let (img, _) = render(&sc, pose).unwrap();
        assert_eq!(quantize_image(&img).unwrap().data(), stored.data());
    }
}

#[test]
fn truncated_manifest_names_the_missing_section() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&SceneSpec::desk(0, Layout::Fronto), &[Layout::Fronto], 2, 1).unwrap();
    write_dataset(&data, dir.path()).unwrap();
    let path = dir.path().join("manifest.txt");
    let text = std::fs::read_to_string(&path).unwrap();
    let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    std::fs::write(&path, &cut).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
    assert!(err.to_string().contains("missing section: sample list"), "{err}");
    std::fs::write(&path, text.lines().next().unwrap()).unwrap();
    assert!(read_manifest(dir.path()).unwrap_err().to_string().contains("missing section: sample count"));
}

#[test]
fn other_versions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("manifest.txt"), format!("mfdepth-dataset {}\nsamples 0\n", DATASET_VERSION + 1)).unwrap();
    let err = read_manifest(dir.path()).unwrap_err();
    assert!(matches!(err, Error::UnsupportedVersion { .. }), "{err}");
}

#[test]
fn invalid_specs_are_rejected() {
    let base = SceneSpec::desk(0, Layout::Fronto);
    assert!(generate_scene(&SceneSpec { depth_range: (0.0, 5.0), ..base.clone() }).is_err());
    assert!(generate_scene(&SceneSpec { width: 60, ..base.clone() }).is_err());
    let behind = scene(vec![Surface::fronto(5.0, None, tex(1))]);
    assert!(render(&behind, &RigidTransform::translation(0.0, 0.0, -10.0)).is_err());
}
