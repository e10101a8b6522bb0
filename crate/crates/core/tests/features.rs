mod common;

use common::*;
use common::oracles::*;
use pixgcn::correspondence::{CorrespondenceSet, Pixel};
use pixgcn::features::{
    assemble_vertex_features, backbone_forward, bilinear_sample, bilinear_weights, global_only_features,
    init_backbone, BackboneConfig, FeatureLayout, FeaturePyramid,
};
use pixgcn::tensor::{ParamSet, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn bilinear_matches_scalar_reference() {
    let mut r = rng(1);
    let (s, n) = (8, 32);
    let map: Vec<f64> = (0..2 * s * s).map(|_| r.gen_range(-1.0..1.0)).collect();
    let t = Tensor::new(&[2, s, s], map.clone()).unwrap();
    for _ in 0..50 {
        let p = (r.gen_range(-0.5..n as f64 - 0.5), r.gen_range(-0.5..n as f64 - 0.5));
        let got = bilinear_sample(&t, p, (n, n)).unwrap();
        for c in 0..2 {
            let want = reference_sample(&map[c * s * s..(c + 1) * s * s], s, n, p);
            assert!((got.data()[c] - want).abs() <= 1e-12);
        }
    }
}

#[test]
fn texel_centers_and_midpoints() {
    // 16x16 input onto a 4x4 map: texel i is centered at pixel 4i + 1.5
    let mut map = vec![0.0; 16];
    map[1 * 4 + 1] = 2.0;
    let t = Tensor::new(&[1, 4, 4], map).unwrap();
    assert!((bilinear_sample(&t, (5.5, 5.5), (16, 16)).unwrap().item() - 2.0).abs() < 1e-15);
    assert!((bilinear_sample(&t, (5.5, 3.5), (16, 16)).unwrap().item() - 1.0).abs() < 1e-15);
}

#[test]
fn out_of_bounds_points_are_rejected() {
    let t = Tensor::zeros(&[1, 4, 4]);
    assert!(bilinear_sample(&t, (-0.6, 2.0), (16, 16)).is_err());
    assert!(bilinear_sample(&t, (3.0, 15.6), (16, 16)).is_err());
}

proptest! {
    #[test]
    fn affine_fields_are_reproduced(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
                                   gy in 0.0f64..7.0, gx in 0.0f64..7.0) {
        // points whose map coordinates stay inside the texel grid
        let (s, n) = (8usize, 32usize);
        let map: Vec<f64> = (0..s * s).map(|k| a + b * (k / s) as f64 + c * (k % s) as f64).collect();
        let t = Tensor::new(&[1, s, s], map).unwrap();
        let to_pixel = |g: f64| (g + 0.5) * n as f64 / s as f64 - 0.5;
        let v = bilinear_sample(&t, (to_pixel(gy), to_pixel(gx)), (n, n)).unwrap().item();
        prop_assert!((v - (a + b * gy + c * gx)).abs() <= 1e-10);
    }

    #[test]
    fn weights_form_a_partition_of_unity(py in -0.5f64..23.5, px in -0.5f64..23.5, s in 1usize..9) {
        let w = bilinear_weights((py, px), (s, s), (24, 24)).unwrap();
        prop_assert!((w.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|e| e.1 >= 0.0 && e.0 < s * s));
    }
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        in_channels: 3,
        input_size: 16,
        channels: [3, 4, 5, 6, 7],
    }
}

#[test]
fn one_pixel_only_reaches_its_stage_one_receptive_field() {
    let cfg = tiny_backbone();
    let mut params = ParamSet::new();
    init_backbone(&cfg, 3, &mut params);
    // positive biases keep units active so changes are visible
    params.insert("backbone.stage1.conv.bias", Tensor::parameter(&[3], vec![0.5; 3]).unwrap());
    let mut r = rng(2);
    let img: Vec<f64> = (0..3 * 256).map(|_| r.gen_range(0.0..1.0)).collect();
    let base = backbone_forward(&Tensor::new(&[3, 16, 16], img.clone()).unwrap(), &params, &cfg).unwrap();
    for &(pr, pc) in &[(0usize, 0usize), (7, 9), (15, 4), (10, 10)] {
        let mut moved = img.clone();
        moved[256 + pr * 16 + pc] += 1.0;
        let out = backbone_forward(&Tensor::new(&[3, 16, 16], moved).unwrap(), &params, &cfg).unwrap();
        let (a, b) = (base.stages[0].data(), out.stages[0].data());
        let mut any = false;
        for c in 0..3 {
            for i in 0..8usize {
                for j in 0..8usize {
                    let idx = c * 64 + i * 8 + j;
                    let covers = (2 * i).abs_diff(pr) <= 1 && (2 * j).abs_diff(pc) <= 1;
                    if a[idx] != b[idx] {
                        any = true;
                        assert!(covers, "pixel ({pr},{pc}) changed stage-1 texel ({i},{j})");
                    }
                }
            }
        }
        assert!(any);
    }
}

#[test]
fn zero_image_with_zero_biases_gives_zero_pyramid() {
    let cfg = tiny_backbone();
    let mut params = ParamSet::new();
    init_backbone(&cfg, 0, &mut params);
    let pyr = backbone_forward(&Tensor::zeros(&[3, 16, 16]), &params, &cfg).unwrap();
    assert!(pyr.stages.iter().all(|s| s.data().iter().all(|&x| x == 0.0)));
    assert!(pyr.global.data().iter().all(|&x| x == 0.0));
    assert!(backbone_forward(&Tensor::zeros(&[3, 17, 17]), &params, &cfg).is_err());
}

fn random_pyramid(channels: [usize; 5], sizes: [usize; 4], input: usize, seed: u64) -> FeaturePyramid {
    let mut r = rng(seed);
    let stages = (0..4)
        .map(|l| {
            let n = channels[l] * sizes[l] * sizes[l];
            Tensor::new(&[channels[l], sizes[l], sizes[l]], (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    let global = Tensor::vector((0..channels[4]).map(|_| r.gen_range(-1.0..1.0)).collect());
    FeaturePyramid::new(stages, global, (input, input)).unwrap()
}

#[test]
fn global_features_ignore_spatial_content() {
    let t = small_template();
    let a = random_pyramid([2, 3, 4, 5, 6], [8, 4, 2, 1], 16, 1);
    let mut b = random_pyramid([2, 3, 4, 5, 6], [8, 4, 2, 1], 16, 2);
    b.global = a.global.clone();
    let fa = global_only_features(&a, &t).unwrap();
    let fb = global_only_features(&b, &t).unwrap();
    assert_eq!(fa.data.data(), fb.data.data());
}

#[test]
fn row_width_is_d_plus_five() {
    let t = small_template();
    let n = t.num_vertices();
    // full-size dimensions: D = 3904
    let full = BackboneConfig::full_size();
    assert_eq!(full.layout().d(), 3904);
    assert_eq!(full.layout().width(), 3909);
    let pyr = random_pyramid(full.channels, [112, 56, 28, 14], 224, 3);
    let mut corr = CorrespondenceSet::all_absent(n);
    corr.pixel[0] = Some(Pixel::from_zero_based(100, 50));
    let fm = assemble_vertex_features(&pyr, &corr, &t).unwrap();
    assert_eq!(fm.data.shape(), [n, 3909]);
    for channels in [[8, 16, 32, 64, 128], [3, 4, 5, 6, 7], [1, 1, 1, 1, 1]] {
        assert_eq!(FeatureLayout::new(channels).width(), channels.iter().sum::<usize>() + 5);
    }
}
