//! Orientation-robust evaluation: the 64-rotation test series, micro/macro
//! accuracy with cross-series dispersion, the KL-to-mean consistency metric,
//! per-class probability/entropy maps, and the MMD two-sample statistic for
//! measuring feature-distribution shift.

use crate::error::{Error, Result};
use crate::net::{forward_logits, PointNet};
use crate::real::Real;
use crate::so3::{compose_euler, rotate_points, wrap_angle, Euler, PointCloud};
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// The four test angles per axis. The full turn wraps to 0, so the series
/// contains the identity.
pub const SERIES_ANGLES: [f64; 4] = [
    std::f64::consts::FRAC_PI_2,
    std::f64::consts::PI,
    3.0 * std::f64::consts::FRAC_PI_2,
    std::f64::consts::TAU,
];

/// The 64 evaluation rotations: the Cartesian product of [`SERIES_ANGLES`]
/// over the three axes in lexicographic order (x outermost), each coordinate
/// wrapped into `[−π, π)`. The last entry is the identity.
pub fn test_rotation_series() -> Vec<Euler<f64>> {
    let mut series = Vec::with_capacity(64);
    for &tx in &SERIES_ANGLES {
        for &ty in &SERIES_ANGLES {
            for &tz in &SERIES_ANGLES {
                series.push(Euler::new(wrap_angle(tx), wrap_angle(ty), wrap_angle(tz)));
            }
        }
    }
    series
}

/// Micro accuracy and macro precision (mean over all K classes of
/// TP/(TP+FP), counting never-predicted classes as precision 0).
pub fn accuracy_and_precision(truth: &[usize], pred: &[usize], k: usize) -> Result<(f64, f64)> {
    if truth.is_empty() || truth.len() != pred.len() {
        return Err(Error::invalid_argument(format!(
            "need matching non-empty label lists, got {} truths and {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    if let Some(&bad) = truth.iter().chain(pred).find(|&&c| c >= k) {
        return Err(Error::invalid_argument(format!(
            "class {bad} out of range for K={k}"
        )));
    }
    let mut tp = vec![0usize; k];
    let mut predicted = vec![0usize; k];
    let mut correct = 0usize;
    for (&t, &p) in truth.iter().zip(pred) {
        predicted[p] += 1;
        if t == p {
            tp[p] += 1;
            correct += 1;
        }
    }
    let acc = correct as f64 / truth.len() as f64;
    let avg = (0..k)
        .map(|c| {
            if predicted[c] == 0 {
                0.0
            } else {
                tp[c] as f64 / predicted[c] as f64
            }
        })
        .sum::<f64>()
        / k as f64;
    Ok((acc, avg))
}

fn check_prob_rows(rows: &[Vec<f64>]) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::invalid_argument("no probability rows"));
    }
    let k = rows[0].len();
    for (ix, row) in rows.iter().enumerate() {
        if row.len() != k || k == 0 {
            return Err(Error::invalid_argument(format!(
                "probability row {ix} has {} entries, expected {k}",
                row.len()
            )));
        }
        if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::invalid_argument(format!(
                "probability row {ix} has negative or non-finite entries"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_argument(format!(
                "probability row {ix} sums to {sum}, not 1"
            )));
        }
    }
    Ok(k)
}

/// `KL(p ‖ q)` where `q` dominates `p` by construction (callers pass the
/// row mean as `q`, which is ≥ p/A wherever p > 0).
fn kl_to(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

/// Mean KL divergence of one sample's predicted distributions from their
/// arithmetic mean. Zero exactly when every row is identical; the smaller,
/// the more rotation-consistent the predictions.
pub fn consistency_metric(rows: &[Vec<f64>]) -> Result<f64> {
    let k = check_prob_rows(rows)?;
    let a = rows.len() as f64;
    let mut mean = vec![0.0; k];
    for row in rows {
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p / a;
        }
    }
    Ok(rows.iter().map(|row| kl_to(row, &mean)).sum::<f64>() / a)
}

/// Per-class mean probability and per-class mean `p·ln p` over the series
/// (the latter is non-positive; each entry is one class' contribution to the
/// negated entropy, not a total entropy).
pub fn entropy_map(rows: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = check_prob_rows(rows)?;
    let a = rows.len() as f64;
    let mut p_m = vec![0.0; k];
    let mut ent_m = vec![0.0; k];
    for row in rows {
        for (c, &p) in row.iter().enumerate() {
            p_m[c] += p / a;
            if p > 0.0 {
                ent_m[c] += p * p.ln() / a;
            }
        }
    }
    Ok((p_m, ent_m))
}

/// One row of the evaluation report: a series rotation and its metrics.
#[derive(Clone, Debug, Serialize)]
pub struct SeriesRow {
    pub theta: [f64; 3],
    pub acc: f64,
    pub avg: f64,
}

/// The full orientation-robust evaluation: per-series accuracy/precision,
/// their mean ± population std over the 64 series, the consistency metric,
/// the confusion matrix at the identity rotation, and per-sample probability
/// and entropy maps.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub acc_mean: f64,
    pub acc_std: f64,
    pub avg_mean: f64,
    pub avg_std: f64,
    pub cst: f64,
    pub series: Vec<SeriesRow>,
    /// `confusion[true][predicted]` on the identity series.
    pub confusion: Vec<Vec<usize>>,
    /// Per-sample P_m rows (class-mean probabilities over the series).
    #[serde(skip)]
    pub p_m: Vec<Vec<f64>>,
    /// Per-sample Ent_m rows (class-mean `p·ln p` over the series).
    #[serde(skip)]
    pub ent_m: Vec<Vec<f64>>,
}

fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in out.iter_mut() {
        *p /= z;
    }
    out
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// Rotates every cloud by each of the 64 series rotations and scores the
/// model. Probability arithmetic runs in f64 regardless of the model's
/// scalar type; argmax ties resolve to the lowest class index.
pub fn evaluate<S: Real>(
    net: &PointNet<S>,
    clouds: &[&PointCloud<S>],
    k: usize,
) -> Result<EvalReport> {
    if clouds.is_empty() {
        return Err(Error::invalid_argument("cannot evaluate an empty dataset"));
    }
    if net.k() != k {
        return Err(Error::invalid_argument(format!(
            "model has {} classes, evaluation expects {k}",
            net.k()
        )));
    }
    let truth: Vec<usize> = clouds.iter().map(|c| c.label).collect();
    if let Some(&bad) = truth.iter().find(|&&y| y >= k) {
        return Err(Error::invalid_argument(format!(
            "label {bad} out of range for K={k}"
        )));
    }

    let series = test_rotation_series();
    let per_series: Vec<(SeriesRow, Vec<usize>, Vec<Vec<f64>>)> = series
        .par_iter()
        .map(|&theta| {
            let m = compose_euler(Euler::new(
                S::of(theta.x),
                S::of(theta.y),
                S::of(theta.z),
            ));
            let mut preds = Vec::with_capacity(clouds.len());
            let mut probs = Vec::with_capacity(clouds.len());
            for cloud in clouds {
                let rotated = rotate_points(&m, &cloud.points);
                let (_, logits) = forward_logits(net, &rotated)?;
                let row = softmax_f64(&logits.iter().map(|&l| l.as_f64()).collect::<Vec<_>>());
                preds.push(argmax(&row));
                probs.push(row);
            }
            let (acc, avg) = accuracy_and_precision(&truth, &preds, k)?;
            Ok((
                SeriesRow {
                    theta: theta.as_array(),
                    acc,
                    avg,
                },
                preds,
                probs,
            ))
        })
        .collect::<Result<_>>()?;

    let (acc_mean, acc_std) = mean_std(per_series.iter().map(|(r, _, _)| r.acc));
    let (avg_mean, avg_std) = mean_std(per_series.iter().map(|(r, _, _)| r.avg));

    // Per-sample 64×K probability blocks drive Cst and the maps.
    let mut cst = 0.0;
    let mut p_m = Vec::with_capacity(clouds.len());
    let mut ent_m = Vec::with_capacity(clouds.len());
    for i in 0..clouds.len() {
        let rows: Vec<Vec<f64>> = per_series.iter().map(|(_, _, p)| p[i].clone()).collect();
        cst += consistency_metric(&rows)? / clouds.len() as f64;
        let (pm, em) = entropy_map(&rows)?;
        p_m.push(pm);
        ent_m.push(em);
    }

    let identity_ix = series
        .iter()
        .position(|t| t.x == 0.0 && t.y == 0.0 && t.z == 0.0)
        .expect("the full-turn entry wraps to the identity");
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(&per_series[identity_ix].1) {
        confusion[t][p] += 1;
    }

    Ok(EvalReport {
        acc_mean,
        acc_std,
        avg_mean,
        avg_std,
        cst,
        series: per_series.into_iter().map(|(r, _, _)| r).collect(),
        confusion,
        p_m,
        ent_m,
    })
}

/// Pooled 128-d feature rows for a set of clouds, in f64 for the two-sample
/// statistics.
pub fn feature_matrix<S: Real>(net: &PointNet<S>, clouds: &[&PointCloud<S>]) -> Result<Vec<Vec<f64>>> {
    clouds
        .par_iter()
        .map(|cloud| {
            let (features, _) = forward_logits(net, &cloud.points)?;
            Ok(features.iter().map(|&f| f.as_f64()).collect())
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Unbiased MMD² U-statistic with a Gaussian RBF kernel. The bandwidth
/// defaults to the median pairwise distance over the pooled set; a zero
/// median (all points identical) makes every kernel value 1. The estimate
/// may be slightly negative by construction.
pub fn mmd2(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: Option<f64>) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid_argument(format!(
            "mmd2 needs at least 2 rows per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let f = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != f) {
        return Err(Error::invalid_argument("mmd2: ragged feature rows"));
    }
    let h = match bandwidth {
        Some(h) if h.is_finite() && h > 0.0 => h,
        Some(h) => {
            return Err(Error::invalid_argument(format!(
                "mmd2 bandwidth must be positive and finite, got {h}"
            )))
        }
        None => {
            let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
            let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
            for i in 0..pooled.len() {
                for j in (i + 1)..pooled.len() {
                    dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
                }
            }
            dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
            dists[dists.len() / 2]
        }
    };
    let kernel = |x: &[f64], y: &[f64]| {
        if h == 0.0 {
            1.0
        } else {
            (-sq_dist(x, y) / (2.0 * h * h)).exp()
        }
    };

    let m = a.len() as f64;
    let n = b.len() as f64;
    let mut within_a = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                within_a += kernel(&a[i], &a[j]);
            }
        }
    }
    let mut within_b = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            if i != j {
                within_b += kernel(&b[i], &b[j]);
            }
        }
    }
    let mut cross = 0.0;
    for ai in a {
        for bj in b {
            cross += kernel(ai, bj);
        }
    }
    Ok(within_a / (m * (m - 1.0)) + within_b / (n * (n - 1.0)) - 2.0 * cross / (m * n))
}

pub fn write_metrics_json(report: &EvalReport, path: &Path) -> Result<()> {
    let displayed = path.display().to_string();
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::invalid_state(format!("metrics serialization failed: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(displayed, e))
}

pub fn write_series_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let displayed = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(displayed.clone(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(displayed.clone(), e);
    writeln!(out, "theta_x,theta_y,theta_z,acc,avg").map_err(io_err)?;
    for row in &report.series {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            row.theta[0], row.theta[1], row.theta[2], row.acc, row.avg
        )
        .map_err(io_err)?;
    }
    Ok(())
}
