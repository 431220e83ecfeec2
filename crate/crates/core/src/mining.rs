//! Intricate orientation mining: per-sample projected gradient ascent over
//! Euler angles against the current model's cross-entropy, and the
//! periodically refreshed per-sample orientation set.

use crate::error::{Error, Result};
use crate::loss::classification_loss;
use crate::net::{backward_points, forward, PointNet};
use crate::real::Real;
use crate::so3::{compose_euler, grad_euler, rotate_points, wrap_angle, Euler, PointCloud};
use crate::stream::stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Mining hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiningConfig {
    /// Mined orientations kept per sample (the set size).
    pub at: usize,
    /// Gradient-ascent iterations per mining run; 0 degenerates to uniform
    /// random rotation augmentation.
    pub steps: usize,
    /// Ascent step length in radians (after ∞-norm normalization).
    pub step_size: f64,
    /// Refresh period in epochs.
    pub period: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            at: 10,
            steps: 20,
            step_size: 0.1,
            period: 20,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.at < 1 {
            return Err(Error::invalid_argument("mining set size must be at least 1"));
        }
        if self.step_size <= 0.0 {
            return Err(Error::invalid_argument("mining step size must be positive"));
        }
        if self.period < 1 {
            return Err(Error::invalid_argument("mining refresh period must be at least 1"));
        }
        Ok(())
    }
}

/// The per-sample collection of mined orientations, refreshed every
/// [`MiningConfig::period`] epochs.
#[derive(Clone, Debug)]
pub struct IntricateSet<S> {
    /// Epoch at which this set was (re)built.
    pub epoch_stamp: usize,
    /// Sample id → exactly `at` mined angle triples, all in `[−π, π)`.
    pub entries: BTreeMap<u64, Vec<Euler<S>>>,
}

/// Cross-entropy of the model on one cloud rotated by `theta`, plus the
/// gradient of that loss with respect to the three angles.
fn loss_and_grad<S: Real>(
    net: &PointNet<S>,
    points: &[[S; 3]],
    label: usize,
    theta: Euler<S>,
) -> Result<(S, [S; 3])> {
    let rotated = rotate_points(&compose_euler(theta), points);
    let cache = forward(net, &rotated)?;
    let (loss, dlogits) = classification_loss(&[cache.logits().to_vec()], &[label])?;
    let dpoints = backward_points(net, &cache, &dlogits[0])?;
    let g = grad_euler(theta, points, &dpoints)?;
    Ok((loss, g))
}

/// Cross-entropy at a fixed orientation (no gradient).
pub fn loss_at<S: Real>(
    net: &PointNet<S>,
    points: &[[S; 3]],
    label: usize,
    theta: Euler<S>,
) -> Result<S> {
    let rotated = rotate_points(&compose_euler(theta), points);
    let cache = forward(net, &rotated)?;
    let (loss, _) = classification_loss(&[cache.logits().to_vec()], &[label])?;
    Ok(loss)
}

/// Projected gradient **ascent** on the cross-entropy over Euler angles.
///
/// Each iteration takes a step of `step_size` radians along the ∞-norm
/// normalized gradient, wraps every coordinate into `[−π, π)`, and evaluates
/// the new iterate; the iterate with the highest observed loss is returned
/// (best-iterate retention, so the result never scores below `init`). A
/// non-finite loss aborts the run and returns the best finite iterate seen —
/// `init` if there was none. With `steps = 0` the initialization is returned
/// untouched (and nothing is evaluated): mining degenerates to random
/// rotation augmentation.
pub fn mine_orientation<S: Real>(
    net: &PointNet<S>,
    points: &[[S; 3]],
    label: usize,
    init: Euler<S>,
    cfg: &MiningConfig,
) -> Euler<S> {
    let init = init.wrap();
    if cfg.steps == 0 {
        return init;
    }
    let step = S::of(cfg.step_size);
    let mut best = init;
    let mut best_loss = S::neg_infinity();
    let mut theta = init;

    for iter in 0..=cfg.steps {
        let (loss, g) = match loss_and_grad(net, points, label, theta) {
            Ok(lg) => lg,
            Err(_) => break,
        };
        if !loss.is_finite() {
            break;
        }
        if loss > best_loss {
            best_loss = loss;
            best = theta;
        }
        if iter == cfg.steps {
            break;
        }
        let ginf = g.iter().fold(S::zero(), |a, &x| a.max(x.abs()));
        if ginf <= S::zero() || !ginf.is_finite() {
            // Flat (or broken) loss surface: nowhere to ascend.
            break;
        }
        theta = Euler::new(
            wrap_angle(theta.x + step * g[0] / ginf),
            wrap_angle(theta.y + step * g[1] / ginf),
            wrap_angle(theta.z + step * g[2] / ginf),
        );
    }
    best
}

fn random_euler<S: Real>(rng: &mut ChaCha8Rng) -> Euler<S> {
    let mut draw = || {
        let u: f64 = rng.gen();
        S::of(-std::f64::consts::PI + 2.0 * std::f64::consts::PI * u)
    };
    Euler::new(draw(), draw(), draw())
}

/// Mines `at` orientations for every sample, each from an independent uniform
/// random initialization in `[−π, π)³`.
///
/// Per-sample work fans out to the current rayon pool; every `(sample,
/// repetition)` pair draws from its own stream keyed by
/// `(seed, "mine", refresh_index, id, rep)`, so the result is byte-identical
/// for any worker count. `refresh_index` distinguishes successive refreshes —
/// without it every refresh would restart from the same initializations.
pub fn build_intricate_set<S: Real>(
    net: &PointNet<S>,
    samples: &[&PointCloud<S>],
    cfg: &MiningConfig,
    seed: u64,
    refresh_index: u64,
    epoch_stamp: usize,
) -> Result<IntricateSet<S>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid_argument("cannot mine over an empty dataset"));
    }
    let mined: Vec<(u64, Vec<Euler<S>>)> = samples
        .par_iter()
        .map(|cloud| {
            let triples = (0..cfg.at)
                .map(|rep| {
                    let mut rng = stream(seed, "mine", &[refresh_index, cloud.id, rep as u64]);
                    let init = random_euler(&mut rng);
                    mine_orientation(net, &cloud.points, cloud.label, init, cfg)
                })
                .collect();
            (cloud.id, triples)
        })
        .collect();
    Ok(IntricateSet {
        epoch_stamp,
        entries: mined.into_iter().collect(),
    })
}

/// Draws `v` distinct orientations (uniformly, without replacement) from a
/// sample's stored set.
pub fn sample_intricate<S: Real>(
    set: &IntricateSet<S>,
    id: u64,
    v: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Euler<S>>> {
    let entries = set
        .entries
        .get(&id)
        .ok_or_else(|| Error::not_found(format!("sample id {id} has no mined orientations")))?;
    if v < 1 || v > entries.len() {
        return Err(Error::invalid_argument(format!(
            "cannot draw {v} orientations from a set of {}",
            entries.len()
        )));
    }
    let mut indices: Vec<usize> = (0..entries.len()).collect();
    let (chosen, _) = indices.partial_shuffle(rng, v);
    Ok(chosen.iter().map(|&i| entries[i]).collect())
}

/// Writes a set as CSV: `id, rep, theta_x, theta_y, theta_z`.
pub fn save_intricate<S: Real>(set: &IntricateSet<S>, path: &str) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let write = |out: &mut dyn Write| -> std::io::Result<()> {
        writeln!(out, "id,rep,theta_x,theta_y,theta_z")?;
        for (id, triples) in &set.entries {
            for (rep, t) in triples.iter().enumerate() {
                writeln!(
                    out,
                    "{id},{rep},{:.16e},{:.16e},{:.16e}",
                    t.x.as_f64(),
                    t.y.as_f64(),
                    t.z.as_f64()
                )?;
            }
        }
        Ok(())
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Reads a CSV written by [`save_intricate`].
pub fn load_intricate<S: Real>(path: &str) -> Result<IntricateSet<S>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut entries: BTreeMap<u64, Vec<Euler<S>>> = BTreeMap::new();
    for (ix, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if ix == 0 {
            if line.trim() != "id,rep,theta_x,theta_y,theta_z" {
                return Err(Error::parse(path, 1, "unexpected header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(path, ix + 1, "expected 5 comma-separated fields"));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, ix + 1, "bad sample id"))?;
        let mut angles = [0f64; 3];
        for (a, f) in angles.iter_mut().zip(&fields[2..]) {
            *a = f
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, ix + 1, "bad angle"))?;
        }
        entries
            .entry(id)
            .or_default()
            .push(Euler::new(S::of(angles[0]), S::of(angles[1]), S::of(angles[2])));
    }
    if entries.is_empty() {
        return Err(Error::parse(path, 1, "no orientation rows"));
    }
    Ok(IntricateSet {
        epoch_stamp: 0,
        entries,
    })
}
