mod common;

use common::*;
use common::oracles::*;
use pixgcn::losses::{
    combined_loss, loss_edge, loss_joint, loss_normal, loss_vertex, mpjpe, pa_mpjpe, procrustes_align,
    LOSS_WEIGHTS,
};
use pixgcn::mesh::Mesh;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn losses_match_scalar_loop_oracles() {
    let t = small_template();
    let mut r = rng(1);
    for _ in 0..50 {
        let p = jitter(&t, 0.2, &mut r);
        let g = jitter(&t, 0.2, &mut r);
        let pt = p.to_tensor();
        assert!((loss_vertex(&pt, &g).unwrap().item() - oracle_vertex(&p, &g)).abs() <= 1e-12 * oracle_vertex(&p, &g).max(1.0));
        let oj = oracle_joint(&t, &p, &g);
        assert!((loss_joint(&pt, &g, t.regressor()).unwrap().item() - oj).abs() <= 1e-12 * oj.max(1.0));
        let oe = oracle_edge(&t, &p, &g);
        assert!((loss_edge(&pt, &g, &t).unwrap().item() - oe).abs() <= 1e-12 * oe.max(1.0));
        let on = oracle_normal(&t, &p, &g);
        assert!((loss_normal(&pt, &g, &t).unwrap().item() - on).abs() <= 1e-10 * on.max(1.0));
    }
}

#[test]
fn combined_total_uses_fixed_weights() {
    let t = small_template();
    let mut r = rng(2);
    let p = jitter(&t, 0.1, &mut r);
    let g = jitter(&t, 0.1, &mut r);
    let c = combined_loss(&p.to_tensor(), &g, &t).unwrap();
    let rep = c.report;
    assert_eq!(LOSS_WEIGHTS, [1.0, 1.0, 0.1, 0.1]);
    let expect = rep.l_vertex + rep.l_joint + 0.1 * rep.l_normal + 0.1 * rep.l_edge;
    assert!((rep.l_total - expect).abs() <= 1e-12 * expect);
}

#[test]
fn edge_and_normal_losses_are_translation_invariant() {
    let t = small_template();
    let mut r = rng(3);
    let p = jitter(&t, 0.1, &mut r);
    let g = jitter(&t, 0.1, &mut r);
    let shift = Mesh::new(p.vertices.iter().map(|v| [v[0] + 0.7, v[1] - 0.3, v[2] + 2.0]).collect());
    let scaled = Mesh::new(p.vertices.iter().map(|v| v.map(|c| 2.5 * c)).collect());
    let e0 = loss_edge(&p.to_tensor(), &g, &t).unwrap().item();
    let n0 = loss_normal(&p.to_tensor(), &g, &t).unwrap().item();
    assert!((loss_edge(&shift.to_tensor(), &g, &t).unwrap().item() - e0).abs() < 1e-9);
    assert!((loss_normal(&shift.to_tensor(), &g, &t).unwrap().item() - n0).abs() < 1e-9);
    assert!((loss_normal(&scaled.to_tensor(), &g, &t).unwrap().item() - n0).abs() < 1e-9);
}

#[test]
fn losses_vanish_at_ground_truth_and_grow_under_perturbation() {
    let t = small_template();
    let mut r = rng(4);
    let g = jitter(&t, 0.05, &mut r);
    let same = combined_loss(&g.to_tensor(), &g, &t).unwrap().report;
    assert_eq!([same.l_vertex, same.l_joint, same.l_edge], [0.0; 3]);
    assert!(same.l_normal < 1e-12);
    let p = jitter(&t, 0.1, &mut r);
    let rep = combined_loss(&p.to_tensor(), &g, &t).unwrap().report;
    assert!(rep.l_vertex > 0.0 && rep.l_joint > 0.0 && rep.l_edge > 0.0 && rep.l_normal > 0.0);
}

#[test]
fn mpjpe_matches_oracle() {
    let mut r = rng(5);
    for _ in 0..50 {
        let p = random_points(12, &mut r);
        let g = random_points(12, &mut r);
        let root = r.gen_range(0..12);
        assert!((mpjpe(&p, &g, root).unwrap() - oracle_mpjpe(&p, &g, root)).abs() < 1e-12);
    }
}

#[test]
fn procrustes_recovers_exact_similarities() {
    let mut r = rng(6);
    for _ in 0..50 {
        let p = random_points(12, &mut r);
        let rot = random_rotation(&mut r);
        let s = r.gen_range(0.2..3.0);
        let tr = [0; 3].map(|_| r.gen_range(-2.0..2.0));
        let g = similarity(&p, s, &rot, tr);
        assert!(pa_mpjpe(&p, &g).unwrap() < 1e-9);
        let fit = procrustes_align(&p, &g).unwrap();
        assert!((fit.scale - s).abs() < 1e-9);
        for i in 0..3 {
            assert!((fit.translation[i] - tr[i]).abs() < 1e-9);
            for j in 0..3 {
                assert!((fit.rotation[i][j] - rot[i][j]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn procrustes_beats_random_transforms() {
    let mut r = rng(7);
    for trial in 0..20 {
        let p = random_points(12, &mut r);
        let rot = random_rotation(&mut r);
        let g: Vec<[f64; 3]> = similarity(&p, 1.3, &rot, [0.1, 0.2, -0.3])
            .into_iter()
            .map(|v| v.map(|c| c + r.gen_range(-0.1..0.1)))
            .collect();
        let fit = procrustes_align(&p, &g).unwrap();
        let best = fit.residual(&p, &g);
        for _ in 0..1000 {
            let rr = random_rotation(&mut r);
            let s = r.gen_range(0.1..3.0);
            let t = [0; 3].map(|_| r.gen_range(-1.0..1.0));
            assert!(best <= residual(&similarity(&p, s, &rr, t), &g) + 1e-12, "trial {trial}");
        }
    }
}

#[test]
fn procrustes_is_below_a_grid_search() {
    let mut r = rng(8);
    let p = random_points(8, &mut r);
    let g: Vec<[f64; 3]> = similarity(&p, 0.8, &rotation([0.0, 0.0, 1.0], 0.4), [0.0; 3])
        .into_iter()
        .map(|v| v.map(|c| c + r.gen_range(-0.05..0.05)))
        .collect();
    let best = procrustes_align(&p, &g).unwrap().residual(&p, &g);
    // grid over rotation about z and scale; translation solved exactly as the centroid difference
    let mut grid_min = f64::INFINITY;
    for ai in 0..=72 {
        let rot = rotation([0.0, 0.0, 1.0], -std::f64::consts::PI + ai as f64 * std::f64::consts::TAU / 72.0);
        for si in 0..=40 {
            let s = 0.4 + si as f64 * 0.02;
            let moved = similarity(&p, s, &rot, [0.0; 3]);
            let n = p.len() as f64;
            let mut t = [0.0; 3];
            for (a, b) in moved.iter().zip(&g) {
                for c in 0..3 {
                    t[c] += (b[c] - a[c]) / n;
                }
            }
            grid_min = grid_min.min(residual(&similarity(&p, s, &rot, t), &g));
        }
    }
    assert!(best <= grid_min + 1e-12);
}

#[test]
fn degenerate_joint_sets_are_rejected() {
    let line: Vec<[f64; 3]> = (0..5).map(|i| [i as f64, 0.0, 0.0]).collect();
    assert!(procrustes_align(&line, &line).is_err());
}

proptest! {
    #[test]
    fn pa_mpjpe_never_exceeds_mpjpe(seed in 0u64..1000) {
        let mut r = rng(seed);
        let p = random_points(10, &mut r);
        let g = random_points(10, &mut r);
        let root = (seed % 10) as usize;
        prop_assert!(pa_mpjpe(&p, &g).unwrap() <= mpjpe(&p, &g, root).unwrap() + 1e-9);
    }

    #[test]
    fn metrics_are_invariant_to_moving_both_sets(seed in 0u64..200) {
        let mut r = rng(seed);
        let p = random_points(10, &mut r);
        let g = random_points(10, &mut r);
        let rot = random_rotation(&mut r);
        let t = [0.3, -1.0, 2.0];
        let (p2, g2) = (similarity(&p, 1.7, &rot, t), similarity(&g, 1.7, &rot, t));
        let (tp, tg) = (similarity(&p, 1.0, &rotation([0.0, 0.0, 1.0], 0.0), t), similarity(&g, 1.0, &rotation([0.0, 0.0, 1.0], 0.0), t));
        prop_assert!((mpjpe(&tp, &tg, 0).unwrap() - mpjpe(&p, &g, 0).unwrap()).abs() < 1e-9);
        prop_assert!((pa_mpjpe(&p2, &g2).unwrap() - 1.7 * pa_mpjpe(&p, &g).unwrap()).abs() < 1e-9);
        let q = similarity(&p, 0.6, &random_rotation(&mut r), [1.0, 2.0, 3.0]);
        prop_assert!((pa_mpjpe(&q, &g).unwrap() - pa_mpjpe(&p, &g).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn pa_mpjpe_stays_defined_for_collapsed_predictions() {
    let mut r = rng(41);
    let gt = random_points(9, &mut r);
    let centroid = [0, 1, 2].map(|c| gt.iter().map(|p| p[c]).sum::<f64>() / 9.0);
    let spread = gt.iter().map(|&g| norm(sub(g, centroid))).sum::<f64>() / 9.0;
    let point = vec![[0.3, -0.2, 0.5]; 9];
    assert!((pa_mpjpe(&point, &gt).unwrap() - spread).abs() < 1e-12);
    // a collinear source has no unique rotation but a well-defined error
    let line: Vec<[f64; 3]> = (0..9).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
    let e = pa_mpjpe(&line, &gt).unwrap();
    assert!(e.is_finite() && e <= mpjpe(&line, &gt, 0).unwrap() + 1e-9);
    assert!(procrustes_align(&line, &gt).is_err());
}
