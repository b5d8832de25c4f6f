use diffcore::Tensor;
use mfdepth::geometry::{Intrinsics, RigidTransform};
use mfdepth::loss::*;
use mfdepth::model::{Model, ModelConfig};
use mfdepth::synthdata::{generate_sample, Layout, SceneSpec};
use mfdepth::train::sample_loss;
use proptest::prelude::*;

fn pattern(c: usize, h: usize, w: usize, k: f64) -> Tensor {
    Tensor::from_fn(&[c, h, w], |i| 0.5 + 0.4 * (i as f64 * k).sin())
}

#[test]
fn ssim_of_a_patch_matches_the_closed_form() {
    let a = [0.1, 0.4, 0.2, 0.9, 0.5, 0.3, 0.7, 0.6, 0.8];
    let b = [0.2, 0.3, 0.3, 0.8, 0.4, 0.5, 0.6, 0.9, 0.7];
    let x = Tensor::new(vec![1, 3, 3], a.to_vec()).unwrap();
    let y = Tensor::new(vec![1, 3, 3], b.to_vec()).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / 9.0;
    let (mx, my) = (mean(&a), mean(&b));
    let vx = a.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / 9.0;
    let vy = b.iter().map(|v| (v - my).powi(2)).sum::<f64>() / 9.0;
    let cxy = a.iter().zip(&b).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / 9.0;
    let (c1, c2) = (1e-4, 9e-4);
    let want = (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    let got = ssim_map(&x, &y).unwrap().data()[4];
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn ssim_self_similarity_and_constant_offset() {
    let x = pattern(3, 7, 6, 0.77);
    assert!(ssim_map(&x, &x).unwrap().data().iter().all(|&s| (s - 1.0).abs() < 1e-12));
    let a = Tensor::full(&[1, 4, 4], 0.1);
    let b = Tensor::full(&[1, 4, 4], 0.9);
    for &s in ssim_map(&a, &b).unwrap().data() {
        assert!(s.is_finite() && s < 1.0 && s > 0.0);
    }
    assert!(ssim_map(&a, &Tensor::full(&[1, 4, 5], 0.1)).is_err());
}

#[test]
fn photometric_endpoints() {
    let x = pattern(3, 5, 5, 0.3);
    let y = pattern(3, 5, 5, 0.41);
    let mask = vec![true; 25];
    let (_, same) = photometric_loss(&x, &x, &mask, 0.85).unwrap();
    assert_eq!(same.item().unwrap(), 0.0);
    let (_, l1) = photometric_loss(&x, &y, &mask, 0.0).unwrap();
    let mae = x.sub(&y).unwrap().abs().unwrap().mean().unwrap().item().unwrap();
    assert!((l1.item().unwrap() - mae).abs() < 1e-12);
    assert!(photometric_loss(&x, &y, &[false; 25], 0.85).is_err());
}

#[test]
fn photometric_with_half_ssim_is_a_quarter() {
    // a 1-pixel image has no variance: SSIM reduces to its luminance term
    // 2·a·b + C1 over a² + b² + C1, with C2 cancelling
    let a: f64 = 0.8;
    let c1 = 1e-4;
    // solve 2ab + C1 = 0.5·(a² + b² + C1) for the smaller root b
    let (qa, qb, qc) = (0.5, -2.0 * a, 0.5 * (a * a + c1) - c1);
    let b = (-qb - (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
    let x = Tensor::full(&[1, 1, 1], a);
    let y = Tensor::full(&[1, 1, 1], b);
    assert!((ssim_map(&x, &y).unwrap().item().unwrap() - 0.5).abs() < 1e-12);
    let (_, l) = photometric_loss(&x, &y, &[true], 1.0).unwrap();
    assert!((l.item().unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn smoothness_of_constant_depth_is_zero() {
    let img = pattern(3, 6, 6, 0.9);
    let l = smoothness_loss(&Tensor::full(&[6, 6], 3.7), &img, None).unwrap();
    assert_eq!(l.item().unwrap(), 0.0);
}

fn step_depth(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |i| if i % n < n / 2 { 1.0 } else { 2.0 })
}

#[test]
fn smoothness_of_a_unit_step_on_a_uniform_image() {
    // normalized step 1/1.5 crosses each of the 4 rows once, over 16 pixels
    let n = 4;
    let l = smoothness_loss(&step_depth(n), &Tensor::full(&[3, n, n], 0.5), None).unwrap().item().unwrap();
    let want = (n as f64 / (n * n) as f64) * (1.0 / 1.5);
    assert!((l - want).abs() < 1e-12, "{l} vs {want}");
}

#[test]
fn an_aligned_image_edge_shrinks_the_penalty() {
    let n = 4;
    let edge = Tensor::from_fn(&[3, n, n], |i| if i % n < n / 2 { 0.1 } else { 0.9 });
    let flat = smoothness_loss(&step_depth(n), &Tensor::full(&[3, n, n], 0.5), None).unwrap().item().unwrap();
    let aware = smoothness_loss(&step_depth(n), &edge, None).unwrap().item().unwrap();
    assert!(aware < flat);
    assert!((aware - flat * (-0.8f64).exp()).abs() < 1e-12);
}

#[test]
fn perfect_high_response_depth_costs_nothing() {
    // context is the target shifted by fx·tx/d = 10·0.4/2 = 2 px
    let (h, w) = (8, 16);
    let f = |c: usize, y: usize, x: f64| 0.5 + 0.3 * (0.9 * x + c as f64).sin() * (0.7 * y as f64).cos();
    let target = Tensor::from_fn(&[3, h, w], |i| f(i / (h * w), (i / w) % h, (i % w) as f64 + 2.0));
    let context = Tensor::from_fn(&[3, h, w], |i| f(i / (h * w), (i / w) % h, (i % w) as f64));
    let k = Intrinsics::new(10.0, 10.0, 7.5, 3.5).unwrap();
    let pose = RigidTransform::translation(0.4, 0.0, 0.0);
    // keep every SSIM window clear of the unseen right border
    let mask: Vec<bool> = (0..h * w).map(|i| i % w + 4 < w).collect();
    let pred = Predictions { high_response: Some((Tensor::full(&[h, w], 2.0), mask)), context_adjusted: None, multi_scale: vec![] };
    let weights = LossWeights { alpha_photo: 0.85, lambda_s: 0.0, lambda_h: 1.0, lambda_c: 0.0 };
    let report = total_loss(&pred, &target, &[ContextView { image: &context, pose: &pose }], &k, &weights).unwrap();
    assert!(report.total.item().unwrap() < 1e-6, "{}", report.total.item().unwrap());
    assert!(report.hr_pixels > 0);
}

fn small_sample() -> (ModelConfig, mfdepth::synthdata::FrameSample) {
    let spec = SceneSpec { width: 32, height: 32, fx: 28.8, ..SceneSpec::desk(11, Layout::Slanted) };
    let cfg = ModelConfig { width: 32, height: 32, bins: 8, channels: 8, heads: 2, layers: 1, scales: 2, ..ModelConfig::desk() };
    (cfg, generate_sample(&spec, "s").unwrap())
}

#[test]
fn single_scale_without_map_weights_is_half_the_finest_loss() {
    let (_, s) = small_sample();
    let contexts = [ContextView { image: &s.prev, pose: &s.pose_prev }, ContextView { image: &s.next, pose: &s.pose_next }];
    let depth = Tensor::from_fn(&[8, 8], |i| 3.0 + (i % 5) as f64 * 0.4);
    let pred = Predictions { high_response: None, context_adjusted: None, multi_scale: vec![depth] };
    let weights = LossWeights { lambda_h: 0.0, lambda_c: 0.0, ..LossWeights::default() };
    let r = total_loss(&pred, &s.target, &contexts, &s.intrinsics, &weights).unwrap();
    assert_eq!(r.l_m.len(), 1);
    assert!((r.total.item().unwrap() - 0.5 * r.l_m[0]).abs() < 1e-12);
}

#[test]
fn total_is_the_weighted_sum_of_its_components() {
    let (cfg, s) = small_sample();
    let model = Model::init(&cfg, 5).unwrap();
    let r = sample_loss(&model, &cfg, &LossWeights::default(), &s, (&s.pose_prev, &s.pose_next)).unwrap();
    assert_eq!(r.l_m.len(), cfg.scales);
    assert!((r.total.item().unwrap() - r.recombined()).abs() < 1e-12);
    let doubled = LossReport {
        l_h: 2.0 * r.l_h,
        l_c: 2.0 * r.l_c,
        l_m: r.l_m.iter().map(|l| 2.0 * l).collect(),
        ..r.clone()
    };
    assert!((doubled.recombined() - 2.0 * r.recombined()).abs() < 1e-12);
}

#[test]
fn missing_contexts_are_rejected() {
    let (_, s) = small_sample();
    let pred = Predictions { high_response: None, context_adjusted: None, multi_scale: vec![Tensor::full(&[8, 8], 4.0)] };
    assert!(total_loss(&pred, &s.target, &[], &s.intrinsics, &LossWeights::default()).is_err());
}

proptest! {
    #[test]
    fn photometric_is_non_negative(seed in 0u64..1000, alpha in 0.0f64..1.0) {
        let x = Tensor::from_fn(&[3, 5, 6], |i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 1000.0);
        let y = Tensor::from_fn(&[3, 5, 6], |i| ((i as u64 * 40503 + seed * 7) % 997) as f64 / 997.0);
        let map = photometric_map(&x, &y, alpha).unwrap();
        prop_assert!(map.data().iter().all(|&v| v >= -1e-15));
    }

    #[test]
    fn minimum_never_exceeds_a_single_context(seed in 0u64..1000) {
        let t = Tensor::from_fn(&[3, 6, 6], |i| ((i as u64 * 7919 + seed) % 101) as f64 / 101.0);
        let a = Tensor::from_fn(&[3, 6, 6], |i| ((i as u64 * 104729 + seed * 3) % 103) as f64 / 103.0);
        let b = Tensor::from_fn(&[3, 6, 6], |i| ((i as u64 * 1299709 + seed * 5) % 107) as f64 / 107.0);
        let seen_a: Vec<bool> = (0..36).map(|i| (i as u64 + seed) % 4 != 0).collect();
        let seen_b: Vec<bool> = (0..36).map(|i| (i as u64 + seed) % 3 != 0).collect();
        let ma = photometric_map(&t, &a, 0.85).unwrap();
        let mb = photometric_map(&t, &b, 0.85).unwrap();
        let (best, any) = min_over_contexts(&[(ma.clone(), seen_a.clone()), (mb.clone(), seen_b.clone())]).unwrap();
        for i in 0..36 {
            prop_assert_eq!(any[i], seen_a[i] || seen_b[i]);
            if seen_a[i] {
                prop_assert!(best.data()[i] <= ma.data()[i]);
            }
            if seen_b[i] {
                prop_assert!(best.data()[i] <= mb.data()[i]);
            }
        }
    }
}
