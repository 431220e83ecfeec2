//! Flat `key = value` run configuration: one file drives benchmark
//! generation, mining, training, and evaluation. Every key has a documented
//! default (the published hyperparameter wherever one exists), unknown keys
//! are rejected, and validation reports every violated constraint at once.

use crate::data::{BenchmarkSpec, DomainProfile};
use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::mining::MiningConfig;
use crate::trainer::{OcTarget, TrainConfig};

/// The full run configuration. Field groups: reproducibility (`seed`,
/// `workers`), benchmark shape (`classes`, `per_class`, `points`, the two
/// domain profiles), mining (`at`, `mine_steps`, `mine_step_size`,
/// `refresh_period`), objective (`lambda_*`, `tau_*`, `oc_target`, `v`), and
/// optimization (`epochs`, `batch_size`, `lr0`, `gamma`, `beta`,
/// `ema_momentum`, `checkpoint_every`).
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,

    pub classes: usize,
    pub per_class: usize,
    pub points: usize,
    pub source_jitter_sigma: f64,
    pub source_density_bias: f64,
    pub source_occlusion_fraction: f64,
    pub source_aniso_lo: f64,
    pub source_aniso_hi: f64,
    pub target_jitter_sigma: f64,
    pub target_density_bias: f64,
    pub target_occlusion_fraction: f64,
    pub target_aniso_lo: f64,
    pub target_aniso_hi: f64,

    pub at: usize,
    pub mine_steps: usize,
    pub mine_step_size: f64,
    pub refresh_period: usize,

    pub v: usize,
    pub lambda_oc: f64,
    pub lambda_ms: f64,
    pub tau_s: f64,
    pub tau_t: f64,
    pub tau_prime: f64,
    pub oc_target: OcTarget,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub gamma: f64,
    pub beta: f64,
    pub ema_momentum: f64,
    /// Write a checkpoint every this many epochs; 0 disables periodic
    /// checkpoints (the final one is always written).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 0,

            classes: 4,
            per_class: 200,
            points: 256,
            source_jitter_sigma: 0.0,
            source_density_bias: 0.0,
            source_occlusion_fraction: 0.0,
            source_aniso_lo: 1.0,
            source_aniso_hi: 1.0,
            target_jitter_sigma: 0.02,
            target_density_bias: 1.0,
            target_occlusion_fraction: 0.2,
            target_aniso_lo: 0.7,
            target_aniso_hi: 1.3,

            at: 10,
            mine_steps: 20,
            mine_step_size: 0.1,
            refresh_period: 20,

            v: 5,
            lambda_oc: 0.01,
            lambda_ms: 0.01,
            tau_s: 0.5,
            tau_t: 0.5,
            tau_prime: 0.07,
            oc_target: OcTarget::TeacherOnIntricate,

            epochs: 200,
            batch_size: 32,
            lr0: 1e-3,
            gamma: 10.0,
            beta: 0.75,
            ema_momentum: 0.99,
            checkpoint_every: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("{key} must be {kind}, got '{value}'"))
}

impl RunConfig {
    /// Sets one key from its textual value. Returns a message naming the key
    /// and the constraint on failure.
    pub fn set_key(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let uint = "an unsigned integer";
        let num = "a number";
        match key {
            "seed" => self.seed = parse_num(key, value, uint)?,
            "workers" => self.workers = parse_num(key, value, uint)?,
            "classes" => self.classes = parse_num(key, value, uint)?,
            "per_class" => self.per_class = parse_num(key, value, uint)?,
            "points" => self.points = parse_num(key, value, uint)?,
            "source_jitter_sigma" => self.source_jitter_sigma = parse_num(key, value, num)?,
            "source_density_bias" => self.source_density_bias = parse_num(key, value, num)?,
            "source_occlusion_fraction" => {
                self.source_occlusion_fraction = parse_num(key, value, num)?
            }
            "source_aniso_lo" => self.source_aniso_lo = parse_num(key, value, num)?,
            "source_aniso_hi" => self.source_aniso_hi = parse_num(key, value, num)?,
            "target_jitter_sigma" => self.target_jitter_sigma = parse_num(key, value, num)?,
            "target_density_bias" => self.target_density_bias = parse_num(key, value, num)?,
            "target_occlusion_fraction" => {
                self.target_occlusion_fraction = parse_num(key, value, num)?
            }
            "target_aniso_lo" => self.target_aniso_lo = parse_num(key, value, num)?,
            "target_aniso_hi" => self.target_aniso_hi = parse_num(key, value, num)?,
            "at" => self.at = parse_num(key, value, uint)?,
            "mine_steps" => self.mine_steps = parse_num(key, value, uint)?,
            "mine_step_size" => self.mine_step_size = parse_num(key, value, num)?,
            "refresh_period" => self.refresh_period = parse_num(key, value, uint)?,
            "v" => self.v = parse_num(key, value, uint)?,
            "lambda_oc" => self.lambda_oc = parse_num(key, value, num)?,
            "lambda_ms" => self.lambda_ms = parse_num(key, value, num)?,
            "tau_s" => self.tau_s = parse_num(key, value, num)?,
            "tau_t" => self.tau_t = parse_num(key, value, num)?,
            "tau_prime" => self.tau_prime = parse_num(key, value, num)?,
            "oc_target" => self.oc_target = OcTarget::parse(value).map_err(|e| e.to_string())?,
            "epochs" => self.epochs = parse_num(key, value, uint)?,
            "batch_size" => self.batch_size = parse_num(key, value, uint)?,
            "lr0" => self.lr0 = parse_num(key, value, num)?,
            "gamma" => self.gamma = parse_num(key, value, num)?,
            "beta" => self.beta = parse_num(key, value, num)?,
            "ema_momentum" => self.ema_momentum = parse_num(key, value, num)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value, uint)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Every violated constraint, empty when the configuration is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if let Err(Error::Config(inner)) = self.train_config().validate() {
            problems.extend(inner);
        }
        if let Err(e) = self.benchmark_spec().validate() {
            match e {
                Error::Config(inner) => problems.extend(inner),
                other => problems.push(other.to_string()),
            }
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn mining_config(&self) -> MiningConfig {
        MiningConfig {
            at: self.at,
            steps: self.mine_steps,
            step_size: self.mine_step_size,
            period: self.refresh_period,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_oc: self.lambda_oc,
            lambda_ms: self.lambda_ms,
            tau_s: self.tau_s,
            tau_t: self.tau_t,
            tau_prime: self.tau_prime,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            k: self.classes,
            seed: self.seed,
            lr0: self.lr0,
            gamma: self.gamma,
            beta: self.beta,
            ema_momentum: self.ema_momentum,
            mining: self.mining_config(),
            weights: self.loss_weights(),
            v: self.v,
            oc_target: self.oc_target,
            workers: self.workers,
        }
    }

    pub fn benchmark_spec(&self) -> BenchmarkSpec {
        BenchmarkSpec {
            classes: self.classes,
            per_class: self.per_class,
            points: self.points,
            source: DomainProfile {
                name: "source".to_string(),
                jitter_sigma: self.source_jitter_sigma,
                density_bias: self.source_density_bias,
                occlusion_fraction: self.source_occlusion_fraction,
                aniso_scale: (self.source_aniso_lo, self.source_aniso_hi),
            },
            target: DomainProfile {
                name: "target".to_string(),
                jitter_sigma: self.target_jitter_sigma,
                density_bias: self.target_density_bias,
                occlusion_fraction: self.target_occlusion_fraction,
                aniso_scale: (self.target_aniso_lo, self.target_aniso_hi),
            },
        }
    }
}

/// Applies a flat `key = value` text (`#` comments, blank lines allowed;
/// later assignments win) onto an existing configuration, returning the
/// parse problems without validating — callers layer further overrides
/// before checking constraints.
pub fn apply_config_text(cfg: &mut RunConfig, text: &str) -> Vec<String> {
    let mut problems = Vec::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {}: expected 'key = value', got '{line}'", ix + 1));
            continue;
        };
        if let Err(msg) = cfg.set_key(key.trim(), value.trim()) {
            problems.push(format!("line {}: {msg}", ix + 1));
        }
    }
    problems
}

/// Parses and validates a flat `key = value` file, reporting every problem —
/// parse failures, unknown keys, and constraint violations — in one error.
/// An empty file yields all defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut problems = apply_config_text(&mut cfg, text);
    problems.extend(cfg.problems());
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems))
    }
}
