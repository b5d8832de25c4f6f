use diffcore::{finite_diff_check_with, GradCheckOptions, Tensor};
use mfdepth::geometry::*;
use mfdepth::synthdata::{generate_sample, Layout, SceneSpec};
use nalgebra::Vector3;
use proptest::prelude::*;

fn k100() -> Intrinsics {
    Intrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap()
}

#[test]
fn bins_hit_hand_values() {
    let b = sid_bins(1.0, 100.0, 3).unwrap();
    assert_eq!(b.values[0], 1.0);
    assert!((b.values[1] - 10.0).abs() < 1e-12);
    assert_eq!(b.values[2], 100.0);
    let b = sid_bins(2.0, 8.0, 3).unwrap();
    assert!((b.values[1] - 4.0).abs() < 1e-12);
    assert!(sid_bins(3.0, 3.0, 8).is_err());
    assert!(sid_bins(1.0, 2.0, 1).is_err());
    assert!(sid_bins(-1.0, 2.0, 4).is_err());
}

#[test]
fn x_translation_shifts_by_focal_baseline_over_depth() {
    let s = project_epipolar(64.0, 64.0, 10.0, &k100(), &RigidTransform::translation(0.5, 0.0, 0.0), 128, 128);
    assert!((s.u - 69.0).abs() < 1e-12);
    assert!((s.v - 64.0).abs() < 1e-12);
    assert!((s.z - 10.0).abs() < 1e-12);
    assert!(s.valid);
}

#[test]
fn behind_camera_is_invalid() {
    let s = project_epipolar(64.0, 64.0, 3.0, &k100(), &RigidTransform::translation(0.0, 0.0, -6.0), 128, 128);
    assert!(s.z < 0.0);
    assert!(!s.valid);
}

#[test]
fn identity_pose_projects_in_place() {
    for (u, v, d) in [(0.0, 0.0, 0.5), (13.0, 7.5, 3.0), (127.0, 127.0, 80.0)] {
        let s = project_epipolar(u, v, d, &k100(), &RigidTransform::identity(), 128, 128);
        assert_eq!((s.u, s.v, s.z, s.valid), (u, v, d, true));
    }
}

fn ramp(c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[c, h, w], |i| (i as f64 * 0.37).sin() + 0.1 * i as f64)
}

#[test]
fn identity_candidates_repeat_the_pixel() {
    let f = ramp(3, 6, 5);
    let bins = sid_bins(1.0, 20.0, 7).unwrap();
    let k = Intrinsics::new(4.0, 4.0, 2.0, 2.5).unwrap();
    let (rows, valid) = sample_candidates(&f, 3, 2, &bins, &k, &RigidTransform::identity()).unwrap();
    assert!(valid.iter().all(|&v| v));
    for row in rows {
        for (ch, x) in row.iter().enumerate() {
            assert_eq!(*x, f.data()[ch * 30 + 2 * 5 + 3]);
        }
    }
}

#[test]
fn bilinear_midpoint_of_four_values() {
    let f = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let c = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
    assert_eq!(f.grid_sample(&c).unwrap().data(), &[1.5]);
    let c = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
    assert_eq!(f.grid_sample(&c).unwrap().data(), &[1.0]);
}

#[test]
fn identity_warp_reproduces_the_context() {
    let img = ramp(3, 8, 9);
    let depth = Tensor::full(&[8, 9], 4.0);
    let k = Intrinsics::new(9.0, 9.0, 4.0, 3.5).unwrap();
    let (out, mask) = warp_image(&img, &depth, &k, &RigidTransform::identity()).unwrap();
    assert!(mask.iter().all(|&m| m));
    assert_eq!(out.data(), img.data());
}

#[test]
fn fronto_plane_warp_is_a_uniform_shift() {
    // shift fx·tx/d = 10·0.4/2 = 2 px
    let (h, w) = (6, 12);
    let img = Tensor::from_fn(&[1, h, w], |i| ((i % w) as f64).powi(2) + (i / w) as f64);
    let k = Intrinsics::new(10.0, 10.0, 5.5, 2.5).unwrap();
    let (out, mask) = warp_image(&img, &Tensor::full(&[h, w], 2.0), &k, &RigidTransform::translation(0.4, 0.0, 0.0)).unwrap();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            assert_eq!(mask[i], x + 2 < w);
            if mask[i] {
                assert!((out.data()[i] - img.data()[i + 2]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn ground_truth_warp_reconstructs_a_rendered_pair() {
    for (seed, layout) in [(3, Layout::Fronto), (4, Layout::Slanted), (5, Layout::HeightField)] {
        let s = generate_sample(&SceneSpec::desk(seed, layout), "pair").unwrap();
        let (recon, mask) = warp_image(&s.prev, &s.depth, &s.intrinsics, &s.pose_prev).unwrap();
        let (mut err, mut n) = (0.0, 0usize);
        let hw = s.depth.len();
        for i in 0..hw {
            if mask[i] && s.visible_prev[i] {
                for c in 0..3 {
                    err += (recon.data()[c * hw + i] - s.target.data()[c * hw + i]).abs();
                }
                n += 3;
            }
        }
        let mean = err / n as f64;
        assert!(mean < 0.01, "{layout:?}: mean residual {mean}");
    }
}

#[test]
fn warp_gradient_matches_finite_differences() {
    let (h, w) = (6, 7);
    let img = Tensor::from_fn(&[2, h, w], |i| (i as f64 * 0.91).sin());
    let k = Intrinsics::new(6.0, 6.0, 3.0, 2.5).unwrap();
    let pose = RigidTransform::from_axis_angle(Vector3::new(0.01, -0.02, 0.005), Vector3::new(0.23, 0.05, 0.1));
    let depth = Tensor::from_fn(&[h, w], |i| 3.0 + 0.37 * ((i * 7) % 5) as f64);
    let f = |d: &Tensor| warp_image(&img, d, &k, &pose)?.0.mul(&img)?.sum().map_err(Into::into);
    let f = |d: &Tensor| f(d).map_err(|e: mfdepth::Error| diffcore::DiffError::Oracle(e.to_string()));
    let report = finite_diff_check_with(f, &depth, &GradCheckOptions { step: 1e-6, tolerance: 1e-3, ..Default::default() }).unwrap();
    assert!(report.checked() > h * w / 2, "too many kinks: {:?}", report.excluded());
    assert!(report.all_passed(), "{report:?}");
}

fn arb_pose() -> impl Strategy<Value = RigidTransform> {
    (prop::array::uniform3(-0.1f64..0.1), prop::array::uniform3(-1.0f64..1.0))
        .prop_filter("non-trivial baseline", |(_, t)| t.iter().map(|x| x * x).sum::<f64>() > 1e-2)
        .prop_map(|(w, t)| RigidTransform::from_axis_angle(Vector3::from(w), Vector3::from(t)))
}

proptest! {
    #[test]
    fn bins_ascend_with_uniform_log_steps(lo in 0.01f64..10.0, ratio in 1.01f64..100.0, n in 2usize..200) {
        let b = sid_bins(lo, lo * ratio, n).unwrap();
        prop_assert_eq!(b.values[0], lo);
        prop_assert_eq!(b.values[n - 1], lo * ratio);
        let step = (b.values[1] / b.values[0]).ln();
        for pair in b.values.windows(2) {
            prop_assert!(pair[1] > pair[0]);
            prop_assert!(((pair[1] / pair[0]).ln() - step).abs() < 1e-12);
        }
    }

    #[test]
    fn candidates_lie_on_one_line(pose in arb_pose(), u in 0.0f64..64.0, v in 0.0f64..48.0, f in 30.0f64..120.0) {
        let k = Intrinsics::new(f, f * 1.1, 32.0, 24.0).unwrap();
        let bins = sid_bins(0.5, 50.0, 32).unwrap();
        let pts: Vec<(f64, f64)> = bins
            .values
            .iter()
            .map(|&d| project_epipolar(u, v, d, &k, &pose, 64, 48))
            .filter(|s| s.valid)
            .map(|s| (s.u, s.v))
            .collect();
        prop_assume!(pts.len() >= 3);
        let (mx, my) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (mx / pts.len() as f64, my / pts.len() as f64);
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for p in &pts {
            let (dx, dy) = (p.0 - mx, p.1 - my);
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
        // principal direction of the scatter
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        let (nx, ny) = (-theta.sin(), theta.cos());
        let spread = (sxx + syy).sqrt();
        prop_assume!(spread > 1e-3);
        for p in &pts {
            prop_assert!(((p.0 - mx) * nx + (p.1 - my) * ny).abs() < 1e-6);
        }
    }

    #[test]
    fn context_depth_is_monotone_in_bin_depth(tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in prop::sample::select(vec![-0.7, -0.2, 0.3, 0.9])) {
        let bins = sid_bins(1.0, 40.0, 24).unwrap();
        let pose = RigidTransform::translation(tx, ty, tz);
        let z: Vec<f64> = bins.values.iter().map(|&d| project_epipolar(20.0, 11.0, d, &k100(), &pose, 128, 128).z).collect();
        for pair in z.windows(2) {
            prop_assert!(pair[1] > pair[0]);
        }
    }
}
