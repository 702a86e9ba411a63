use proptest::prelude::*;
use zoomnet_core::ops::{resize_bilinear, spatial_softmax};
use zoomnet_core::sampler::{
    compute_grid_bruteforce, compute_grid_conv, foldover_stats, grid_sample, transport_residual, upsample_grid,
    KernelSpec, SaliencyMap, SamplingGrid,
};
use zoomnet_core::{Mode, Model, PipelineConfig, Tensor};

fn logits(n: usize) -> impl Strategy<Value = Tensor> {
    (prop::collection::vec(-1.0f64..1.0, n * n), 0.1f64..6.0)
        .prop_map(move |(z, scale)| Tensor::new(&[n, n], z.into_iter().map(|v| v * scale).collect()).unwrap())
}

fn map(n: usize) -> impl Strategy<Value = SaliencyMap> {
    logits(n).prop_map(|z| SaliencyMap::from_logits(&z, 1.0).unwrap())
}

fn sized_map() -> impl Strategy<Value = SaliencyMap> {
    prop_oneof![map(5), map(9), map(16)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn softmax_is_a_distribution(z in logits(7), t in 0.2f64..5.0) {
        let p = spatial_softmax(&z.clone().reshape(&[1, 7, 7]).unwrap(), t).unwrap();
        prop_assert!(p.data().iter().all(|&v| v >= 0.0));
        prop_assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ignores_constant_shifts(z in logits(5), c in -50.0f64..50.0) {
        let a = SaliencyMap::from_logits(&z, 1.0).unwrap();
        let b = SaliencyMap::from_logits(&z.map(|v| v + c), 1.0).unwrap();
        prop_assert!(a.weights().max_abs_diff(b.weights()) < 1e-12);
    }

    #[test]
    fn both_routes_agree(s in sized_map()) {
        let spec = KernelSpec::for_map_width(s.cols());
        let a = compute_grid_conv(&s, &spec).unwrap();
        let b = compute_grid_bruteforce(&s, &spec).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn grid_stays_in_the_unit_square(s in sized_map()) {
        let g = compute_grid_conv(&s, &KernelSpec::for_map_width(s.cols())).unwrap();
        prop_assert!(g.u.min() >= 0.0 && g.u.max() <= 1.0);
        prop_assert!(g.v.min() >= 0.0 && g.v.max() <= 1.0);
    }

    #[test]
    fn flips_and_transpose_commute_with_the_grid(s in sized_map()) {
        let spec = KernelSpec::for_map_width(s.cols());
        let g = compute_grid_conv(&s, &spec).unwrap();
        let n = s.cols();
        let lr = compute_grid_conv(&s.flip_horizontal(), &spec).unwrap();
        let tb = compute_grid_conv(&s.flip_vertical(), &spec).unwrap();
        let tr = compute_grid_conv(&s.transpose(), &spec).unwrap();
        for i in 0..n {
            for j in 0..n {
                let at = |t: &Tensor, r: usize, c: usize| t.data()[r * n + c];
                prop_assert!((at(&lr.u, i, j) - (1.0 - at(&g.u, i, n - 1 - j))).abs() < 1e-9);
                prop_assert!((at(&lr.v, i, j) - at(&g.v, i, n - 1 - j)).abs() < 1e-9);
                prop_assert!((at(&tb.v, i, j) - (1.0 - at(&g.v, n - 1 - i, j))).abs() < 1e-9);
                prop_assert!((at(&tb.u, i, j) - at(&g.u, n - 1 - i, j)).abs() < 1e-9);
                prop_assert!((at(&tr.u, i, j) - at(&g.v, j, i)).abs() < 1e-9);
                prop_assert!((at(&tr.v, i, j) - at(&g.u, j, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn saliency_scale_does_not_move_the_grid(s in map(9), c in 0.01f64..100.0) {
        let spec = KernelSpec::for_map_width(9);
        let scaled = SaliencyMap::from_raw(s.weights().map(|v| v * c)).unwrap();
        let a = compute_grid_conv(&s, &spec).unwrap();
        let b = compute_grid_conv(&scaled, &spec).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-10);
    }

    #[test]
    fn smooth_maps_do_not_fold(s in map(16)) {
        let g = compute_grid_conv(&s, &KernelSpec::for_map_width(16)).unwrap();
        prop_assert_eq!(foldover_stats(&g).inversions, 0);
    }

    #[test]
    fn identity_sampling_is_bilinear_resizing(px in prop::collection::vec(0.0f64..1.0, 24 * 20), m in 2usize..12, n in 2usize..12) {
        let image = Tensor::new(&[1, 24, 20], px).unwrap();
        let a = grid_sample(&image, &SamplingGrid::identity(m, n)).unwrap();
        let b = resize_bilinear(&image, m, n).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn grid_upsampling_keeps_the_identity(m in 2usize..9, n in 2usize..9, dr in 0usize..12, dc in 0usize..12) {
        let (rows, cols) = (m + dr, n + dc);
        let up = upsample_grid(&SamplingGrid::identity(m, n), rows, cols).unwrap();
        prop_assert!(up.max_abs_diff(&SamplingGrid::identity(rows, cols)) < 1e-12);
    }
}

#[test]
fn uniform_saliency_is_the_identity() {
    for n in [5, 9, 31] {
        let s = SaliencyMap::uniform(n, n);
        let g = compute_grid_conv(&s, &KernelSpec::for_map_width(n)).unwrap();
        let err = g.max_abs_diff(&SamplingGrid::identity(n, n));
        assert!(err < 1e-9, "{n}x{n}: {err}");
        assert!(transport_residual(&s, &g).unwrap() < 1e-9);
    }
}

#[test]
fn fresh_sampler_model_sees_the_baseline_image() {
    let cfg = PipelineConfig::default();
    let image = zoomnet_core::data::generate_sample(&Default::default(), 3).unwrap().image;
    let with = Model::new(cfg.clone(), 4, true).unwrap().forward(&image, Mode::Eval).unwrap();
    let without = Model::new(cfg, 4, false).unwrap().forward(&image, Mode::Eval).unwrap();
    assert!(with.sampled.max_abs_diff(&without.sampled) < 1e-9);
    assert!(with.logits().max_abs_diff(without.logits()) < 1e-9);
}
