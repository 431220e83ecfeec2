//! Cross-module integration: benchmark generation feeding training, feature
//! shift between domains, refresh scheduling, and artifact round-trips
//! through the file formats.

use rotadapt_core::checkpoint::{read_checkpoint, write_checkpoint};
use rotadapt_core::data::{build_benchmark, load_dataset, save_dataset, BenchmarkSpec, Dataset, DomainProfile, Split};
use rotadapt_core::eval::{evaluate, feature_matrix, mmd2};
use rotadapt_core::loss::LossWeights;
use rotadapt_core::mining::MiningConfig;
use rotadapt_core::trainer::{train, train_aligned, run_ablation_matrix, OcTarget, TrainConfig, ABLATION_VARIANTS};

fn shifted_target() -> DomainProfile {
    DomainProfile {
        name: "target".to_string(),
        jitter_sigma: 0.02,
        density_bias: 1.0,
        occlusion_fraction: 0.2,
        aniso_scale: (0.7, 1.3),
    }
}

fn tiny_benchmark(classes: usize, per_class: usize, points: usize) -> (Dataset<f64>, Dataset<f64>) {
    let spec = BenchmarkSpec {
        classes,
        per_class,
        points,
        source: DomainProfile::neutral("source"),
        target: shifted_target(),
    };
    build_benchmark(&spec, 11).unwrap()
}

fn tiny_config(classes: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        k: classes,
        seed: 3,
        lr0: 1e-3,
        gamma: 10.0,
        beta: 0.75,
        ema_momentum: 0.99,
        mining: MiningConfig {
            at: 2,
            steps: 1,
            step_size: 0.1,
            period: 3,
        },
        weights: LossWeights::default(),
        v: 1,
        oc_target: OcTarget::TeacherOnIntricate,
        workers: 1,
    }
}

#[test]
fn classification_loss_decreases_over_training() {
    let (source, _) = tiny_benchmark(4, 10, 32);
    let cfg = tiny_config(4, 6);
    let out = train(&cfg, &source).unwrap();
    let first = out.log.epochs.first().unwrap().l_cls;
    let last = out.log.epochs.last().unwrap().l_cls;
    assert!(
        last < first,
        "cross-entropy should fall over six epochs: first {first}, last {last}"
    );
    for e in &out.log.epochs {
        assert!(e.l_final.is_finite() && e.lr > 0.0);
    }
}

#[test]
fn ablation_matrix_enumerates_all_variants_in_order() {
    let (source, target) = tiny_benchmark(2, 10, 32);
    let mut cfg = tiny_config(2, 2);
    cfg.mining.period = 2;
    let rows = run_ablation_matrix(&cfg, &source, &target, &[9]).unwrap();
    assert_eq!(rows.len(), ABLATION_VARIANTS.len());
    for (row, want) in rows.iter().zip(ABLATION_VARIANTS) {
        assert_eq!(row.variant, *want);
        assert_eq!(row.seed, 9);
        assert!((0.0..=1.0).contains(&row.acc_mean), "{}: acc {}", row.variant, row.acc_mean);
        assert!((0.0..=1.0).contains(&row.avg_mean));
        assert!(row.cst.is_finite() && row.cst >= 0.0);
    }
}

/// A model trained only on aligned source clouds embeds the two domains at a
/// measurably larger distance than two random halves of the same domain.
#[test]
fn cross_domain_feature_shift_exceeds_within_domain_noise() {
    let (source, target) = tiny_benchmark(4, 50, 64);
    for seed in [0u64, 1, 2] {
        let mut cfg = tiny_config(4, 8);
        cfg.seed = seed;
        let net = train_aligned(&cfg, &source).unwrap();

        let src_test = source.clouds(None, Split::Test);
        let tgt_test = target.clouds(None, Split::Test);
        let fs = feature_matrix(&net, &src_test).unwrap();
        let ft = feature_matrix(&net, &tgt_test).unwrap();
        let cross = mmd2(&fs, &ft, None).unwrap();

        let (even, odd): (Vec<_>, Vec<_>) = fs
            .iter()
            .cloned()
            .enumerate()
            .partition(|(i, _)| i % 2 == 0);
        let even: Vec<Vec<f64>> = even.into_iter().map(|(_, f)| f).collect();
        let odd: Vec<Vec<f64>> = odd.into_iter().map(|(_, f)| f).collect();
        let within = mmd2(&even, &odd, None).unwrap();

        assert!(
            cross > within,
            "seed {seed}: cross-domain MMD² {cross} should exceed within-domain {within}"
        );
    }
}

#[test]
fn refresh_markers_follow_the_period() {
    let (source, _) = tiny_benchmark(2, 10, 32);
    let mut cfg = tiny_config(2, 5);
    cfg.mining.period = 2;
    let out = train(&cfg, &source).unwrap();
    let markers: Vec<bool> = out.log.epochs.iter().map(|e| e.refreshed).collect();
    assert_eq!(markers, vec![true, false, true, false, true]);
}

#[test]
fn checkpoint_preserves_the_trained_model_exactly() {
    let (source, target) = tiny_benchmark(4, 10, 32);
    let cfg = tiny_config(4, 2);
    let out = train(&cfg, &source).unwrap();

    let path = std::env::temp_dir().join("rotadapt-pipeline-ckpt.ckpt");
    write_checkpoint(&out.student, &path).unwrap();
    let loaded = read_checkpoint::<f64>(&path).unwrap();
    assert_eq!(out.student.max_abs_diff(&loaded), 0.0);

    let clouds = target.clouds(None, Split::Test);
    let a = evaluate(&out.student, &clouds, cfg.k).unwrap();
    let b = evaluate(&loaded, &clouds, cfg.k).unwrap();
    assert_eq!(a.acc_mean, b.acc_mean);
    assert_eq!(a.cst, b.cst);
    std::fs::remove_file(&path).ok();
}

/// Quantization through the on-disk dataset format does not perturb training:
/// a run on the saved-and-reloaded benchmark reproduces the in-memory run
/// bit for bit.
#[test]
fn saved_dataset_trains_identically_to_the_in_memory_one() {
    let (source, _) = tiny_benchmark(4, 10, 32);
    let dir = std::env::temp_dir().join("rotadapt-pipeline-dataset");
    std::fs::remove_dir_all(&dir).ok();
    save_dataset(&source, &dir).unwrap();
    let reloaded: Dataset<f64> = load_dataset(&dir).unwrap();

    let cfg = tiny_config(4, 2);
    let a = train(&cfg, &source).unwrap();
    let b = train(&cfg, &reloaded).unwrap();
    assert_eq!(a.student.max_abs_diff(&b.student), 0.0);
    assert_eq!(a.log.epochs, b.log.epochs);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_log_file_has_one_row_per_epoch() {
    let (source, _) = tiny_benchmark(2, 10, 32);
    let cfg = tiny_config(2, 3);
    let out = train(&cfg, &source).unwrap();
    let path = std::env::temp_dir().join("rotadapt-pipeline-log.csv");
    out.log.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,l_cls,l_oc,l_ms,l_final,lr,refreshed");
    assert_eq!(lines.len(), 1 + cfg.epochs);
    for line in &lines[1..] {
        assert_eq!(line.split(',').count(), 7);
    }
    std::fs::remove_file(&path).ok();
}
