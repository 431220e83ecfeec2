//! Randomized invariant checks over the public API: angle wrapping, rotation
//! algebra, softmax geometry, information-theoretic bounds, metric ranges,
//! and configuration round-trips.

use proptest::prelude::*;
use rotadapt_core::config::RunConfig;
use rotadapt_core::data::normalize_points;
use rotadapt_core::eval::{accuracy_and_precision, consistency_metric, mmd2};
use rotadapt_core::loss::tempered_softmax;
use rotadapt_core::net::{forward, PointNet};
use rotadapt_core::so3::{compose_euler, det3, ortho_defect, wrap_angle, Euler};
use rotadapt_core::theory::{entropy, kl_divergence};

const PI: f64 = std::f64::consts::PI;

fn angle() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

/// Strictly positive probability vector (full support, so KL is defined).
fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01..1.0f64, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn wrap_lands_in_half_open_interval(t in angle()) {
        let w = wrap_angle(t);
        prop_assert!((-PI..PI).contains(&w), "wrap({t}) = {w}");
        prop_assert_eq!(wrap_angle(w), w, "wrapping is idempotent");
        // The wrapped angle differs from the input by a whole number of turns.
        let turns = (t - w) / (2.0 * PI);
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn rotations_are_orthonormal_and_preserve_norms(
        (x, y, z) in (angle(), angle(), angle()),
        p in point(),
    ) {
        let m = compose_euler(Euler::new(x, y, z));
        prop_assert!(ortho_defect(&m) < 1e-12);
        prop_assert!((det3(&m) - 1.0).abs() < 1e-12);
        let q = rotadapt_core::so3::mat_vec(&m, &p);
        let before = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let after = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt();
        prop_assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn wrapped_angles_compose_to_the_same_rotation(
        (x, y, z) in (angle(), angle(), angle()),
    ) {
        let e = Euler::new(x, y, z);
        let a = compose_euler(e);
        let b = compose_euler(e.wrap());
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((a[i][j] - b[i][j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_is_a_simplex_point_and_shift_invariant(
        logits in proptest::collection::vec(-20.0..20.0f64, 2..8),
        tau in 0.05..5.0f64,
        shift in -10.0..10.0f64,
    ) {
        let p = tempered_softmax(&logits, tau).unwrap();
        prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let shifted: Vec<f64> = logits.iter().map(|&l| l + shift).collect();
        let q = tempered_softmax(&shifted, tau).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-9, "softmax must ignore logit shifts");
        }
    }

    #[test]
    fn entropy_bounded_and_kl_non_negative(
        p in simplex(5),
        q in simplex(5),
    ) {
        let h = entropy(&p).unwrap();
        prop_assert!(h >= 0.0 && h <= 5.0f64.ln() + 1e-12);
        let d = kl_divergence(&p, &q).unwrap();
        prop_assert!(d >= -1e-12, "KL({p:?}‖{q:?}) = {d}");
    }

    #[test]
    fn accuracy_and_precision_stay_in_unit_interval(
        pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
    ) {
        let truth: Vec<usize> = pairs.iter().map(|&(t, _)| t).collect();
        let pred: Vec<usize> = pairs.iter().map(|&(_, p)| p).collect();
        let (acc, avg) = accuracy_and_precision(&truth, &pred, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!((0.0..=1.0).contains(&avg));
        if truth == pred {
            prop_assert_eq!(acc, 1.0);
        }
    }

    #[test]
    fn consistency_is_non_negative_and_zero_for_identical_rows(
        row in simplex(4),
        n in 2usize..10,
    ) {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| row.clone()).collect();
        let c = consistency_metric(&rows).unwrap();
        prop_assert!(c.abs() < 1e-12, "identical rows must have zero divergence, got {c}");
    }

    #[test]
    fn mmd_is_symmetric_and_zero_on_identical_sets(
        a in proptest::collection::vec(proptest::collection::vec(-2.0..2.0f64, 3), 3..12),
        b in proptest::collection::vec(proptest::collection::vec(-2.0..2.0f64, 3), 3..12),
    ) {
        let ab = mmd2(&a, &b, Some(1.0)).unwrap();
        let ba = mmd2(&b, &a, Some(1.0)).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let aa = mmd2(&a, &a, Some(1.0)).unwrap();
        prop_assert!(aa <= 1e-12, "identical samples should give MMD² ≈ 0, got {aa}");
    }

    #[test]
    fn normalization_centers_and_scales(
        pts in proptest::collection::vec(point(), 4..40),
    ) {
        // Skip degenerate all-identical draws, which normalization rejects.
        let spread = pts.iter().any(|p| {
            (0..3).any(|a| (p[a] - pts[0][a]).abs() > 1e-6)
        });
        prop_assume!(spread);
        let mut pts = pts;
        normalize_points(&mut pts).unwrap();
        let n = pts.len() as f64;
        for axis in 0..3 {
            let mean: f64 = pts.iter().map(|p| p[axis]).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
        }
        let max_norm = pts
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
            .fold(0.0f64, f64::max);
        prop_assert!((max_norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn forward_is_finite_and_pool_indices_in_range(
        pts in proptest::collection::vec(point(), 4..24),
        seed in 0u64..50,
    ) {
        let net = PointNet::<f64>::init(seed, 4).unwrap();
        let cache = forward(&net, &pts).unwrap();
        prop_assert!(cache.logits().iter().all(|l| l.is_finite()));
        prop_assert!(cache.features().iter().all(|f| f.is_finite()));
    }

    #[test]
    fn config_keys_round_trip(
        epochs in 1usize..500,
        batch in 2usize..128,
        v in 1usize..8,
        tau in 0.01..2.0f64,
    ) {
        let mut cfg = RunConfig::default();
        cfg.set_key("epochs", &epochs.to_string()).unwrap();
        cfg.set_key("batch_size", &batch.to_string()).unwrap();
        cfg.set_key("v", &v.to_string()).unwrap();
        cfg.set_key("at", "16").unwrap();
        cfg.set_key("tau_s", &format!("{tau:.17}")).unwrap();
        prop_assert!(cfg.problems().is_empty());
        let tc = cfg.train_config();
        prop_assert_eq!(tc.epochs, epochs);
        prop_assert_eq!(tc.batch_size, batch);
        prop_assert_eq!(tc.v, v);
        prop_assert!((tc.weights.tau_s - tau).abs() < 1e-15);
    }
}
