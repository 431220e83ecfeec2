//! The alternating optimization loop: periodic refresh of the mined
//! orientation set with the frozen student, per-batch construction of
//! intricate variants, one Adam step per batch on the weighted objective,
//! and an EMA teacher update after every step.
//!
//! Determinism contract: every random draw comes from a purpose-keyed stream
//! (model init, per-epoch shuffle, per-member orientation draws, mining), and
//! all parallel reductions run in a fixed order — so results are
//! bit-identical across runs and across worker counts.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::loss::{
    classification_loss, margin_separation_loss, orientation_consistency_loss, total_loss,
    LossWeights,
};
use crate::mining::{build_intricate_set, sample_intricate, IntricateSet, MiningConfig};
use crate::net::{
    adam_update, backward_into, ema_update, forward, forward_logits, lr_schedule, AdamState,
    ForwardCache, PointNet, FEATURE_DIM, WEIGHT_DECAY,
};
use crate::real::Real;
use crate::so3::{compose_euler, rotate_points, Euler, PointCloud};
use crate::stream::stream;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::io::Write as _;
use std::path::Path;

/// Which view the teacher consumes in the consistency loss; the student's
/// side is always the opposite view. The prose pairing is ambiguous, so both
/// readings are available.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OcTarget {
    /// Teacher sees the mined variant, student side is the original cloud.
    TeacherOnIntricate,
    /// Teacher sees the original cloud, student side is the mined variant.
    TeacherOnOriginal,
}

impl OcTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            OcTarget::TeacherOnIntricate => "teacher_on_intricate",
            OcTarget::TeacherOnOriginal => "teacher_on_original",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "teacher_on_intricate" => Ok(OcTarget::TeacherOnIntricate),
            "teacher_on_original" => Ok(OcTarget::TeacherOnOriginal),
            other => Err(Error::invalid_argument(format!(
                "oc_target must be teacher_on_intricate or teacher_on_original, got '{other}'"
            ))),
        }
    }
}

/// Everything the training loop needs. Defaults are the published settings.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Number of classes.
    pub k: usize,
    pub seed: u64,
    /// Base learning rate of the decaying schedule.
    pub lr0: f64,
    /// Schedule shape parameters: lr = lr0·(1 + γ·ep/ep_max)^(−β).
    pub gamma: f64,
    pub beta: f64,
    /// EMA teacher momentum.
    pub ema_momentum: f64,
    pub mining: MiningConfig,
    pub weights: LossWeights,
    /// Mined triples drawn per member for the contrastive losses.
    pub v: usize,
    pub oc_target: OcTarget,
    /// Worker-thread bound; 0 means all available cores.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            k: 4,
            seed: 0,
            lr0: 1e-3,
            gamma: 10.0,
            beta: 0.75,
            ema_momentum: 0.99,
            mining: MiningConfig::default(),
            weights: LossWeights::default(),
            v: 5,
            oc_target: OcTarget::TeacherOnIntricate,
            workers: 0,
        }
    }
}

impl TrainConfig {
    /// Collects every violated constraint rather than stopping at the first.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs < 1 {
            problems.push(format!("epochs must be at least 1, got {}", self.epochs));
        }
        if self.batch_size < 2 {
            problems.push(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.k < 2 {
            problems.push(format!("classes must be at least 2, got {}", self.k));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            problems.push(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            problems.push(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            problems.push(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            problems.push(format!(
                "ema_momentum must lie in [0, 1], got {}",
                self.ema_momentum
            ));
        }
        if self.v < 1 {
            problems.push(format!("V must be at least 1, got {}", self.v));
        }
        if self.v > self.mining.at {
            problems.push(format!(
                "V must be ≤ AT ({} > {})",
                self.v, self.mining.at
            ));
        }
        if self.weights.lambda_oc < 0.0 || self.weights.lambda_ms < 0.0 {
            problems.push("loss weights must be non-negative".to_string());
        }
        for (name, tau) in [
            ("tau_s", self.weights.tau_s),
            ("tau_t", self.weights.tau_t),
            ("tau_prime", self.weights.tau_prime),
        ] {
            if !(tau > 0.0 && tau.is_finite()) {
                problems.push(format!("{name} must be positive, got {tau}"));
            }
        }
        if let Err(e) = self.mining.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_cls: f64,
    pub l_oc: f64,
    pub l_ms: f64,
    pub l_final: f64,
    pub lr: f64,
    /// Whether the intricate set was rebuilt at the start of this epoch.
    pub refreshed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let displayed = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|e| Error::io(displayed.clone(), e))?;
        let mut out = std::io::BufWriter::new(file);
        let io_err = |e| Error::io(displayed.clone(), e);
        writeln!(out, "epoch,l_cls,l_oc,l_ms,l_final,lr,refreshed").map_err(io_err)?;
        for r in &self.epochs {
            writeln!(
                out,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.epoch,
                r.l_cls,
                r.l_oc,
                r.l_ms,
                r.l_final,
                r.lr,
                r.refreshed as u8
            )
            .map_err(io_err)?;
        }
        Ok(())
    }
}

pub struct TrainOutput<S> {
    pub student: PointNet<S>,
    pub teacher: PointNet<S>,
    pub log: TrainLog,
}

fn check_train_set<S: Real>(cfg: &TrainConfig, clouds: &[&PointCloud<S>]) -> Result<()> {
    if clouds.len() < cfg.batch_size {
        return Err(Error::invalid_argument(format!(
            "training split has {} samples, fewer than one batch of {}",
            clouds.len(),
            cfg.batch_size
        )));
    }
    let mut counts = vec![0usize; cfg.k];
    for c in clouds {
        if c.label >= cfg.k {
            return Err(Error::invalid_argument(format!(
                "label {} out of range for {} classes",
                c.label, cfg.k
            )));
        }
        counts[c.label] += 1;
    }
    for (class, &count) in counts.iter().enumerate() {
        if count == 0 {
            log::warn!("class {class} has no training samples; proceeding without it");
        }
    }
    Ok(())
}

/// Trains on the dataset's train split. See [`train_with_hook`] for the
/// per-epoch callback variant.
pub fn train<S: Real>(cfg: &TrainConfig, dataset: &Dataset<S>) -> Result<TrainOutput<S>> {
    train_with_hook(cfg, dataset, |_, _, _| Ok(()))
}

/// [`train`], invoking `hook(epoch, student, teacher)` after every completed
/// epoch (checkpoint sinks plug in here).
pub fn train_with_hook<S, F>(cfg: &TrainConfig, dataset: &Dataset<S>, hook: F) -> Result<TrainOutput<S>>
where
    S: Real,
    F: FnMut(usize, &PointNet<S>, &PointNet<S>) -> Result<()> + Send,
{
    cfg.validate()?;
    let clouds = dataset.clouds(None, Split::Train);
    check_train_set(cfg, &clouds)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid_state(format!("worker pool: {e}")))?;
    pool.install(|| train_inner(cfg, &clouds, hook))
}

fn train_inner<S, F>(cfg: &TrainConfig, clouds: &[&PointCloud<S>], mut hook: F) -> Result<TrainOutput<S>>
where
    S: Real,
    F: FnMut(usize, &PointNet<S>, &PointNet<S>) -> Result<()>,
{
    let mut student = PointNet::<S>::init(cfg.seed, cfg.k)?;
    let mut teacher = student.clone();
    let mut adam = AdamState::new(&student);
    let mut intricate: Option<IntricateSet<S>> = None;
    let mut refresh_index = 0u64;
    let mut log = TrainLog::default();

    for ep in 0..cfg.epochs {
        let refreshed = ep % cfg.mining.period == 0;
        if refreshed {
            intricate = Some(build_intricate_set(
                &student,
                clouds,
                &cfg.mining,
                cfg.seed,
                refresh_index,
                ep,
            )?);
            refresh_index += 1;
        }
        let set = intricate.as_ref().expect("intricate set built at epoch 0");
        let lr = lr_schedule(ep, cfg.epochs, cfg.lr0, cfg.gamma, cfg.beta)?;

        let mut order: Vec<usize> = (0..clouds.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", &[ep as u64]));

        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < cfg.batch_size {
                break; // contrastive class statistics are unstable on remainders
            }
            let members: Vec<&PointCloud<S>> = chunk.iter().map(|&i| clouds[i]).collect();
            let losses = train_batch(cfg, ep, bi, &members, set, &mut student, &mut teacher, &mut adam, lr)?;
            for (s, l) in sums.iter_mut().zip(losses) {
                *s += l;
            }
            batches += 1;
        }
        let b = batches as f64;
        log.epochs.push(EpochRecord {
            epoch: ep,
            l_cls: sums[0] / b,
            l_oc: sums[1] / b,
            l_ms: sums[2] / b,
            l_final: sums[3] / b,
            lr,
            refreshed,
        });
        hook(ep, &student, &teacher)?;
    }
    Ok(TrainOutput {
        student,
        teacher,
        log,
    })
}

struct MemberDraw<S> {
    primary: Euler<S>,
    variants: Vec<Euler<S>>,
}

#[allow(clippy::too_many_arguments)]
fn train_batch<S: Real>(
    cfg: &TrainConfig,
    ep: usize,
    bi: usize,
    members: &[&PointCloud<S>],
    set: &IntricateSet<S>,
    student: &mut PointNet<S>,
    teacher: &mut PointNet<S>,
    adam: &mut AdamState<S>,
    lr: f64,
) -> Result<[f64; 4]> {
    let n = members.len();
    let v = cfg.v;
    let labels: Vec<usize> = members.iter().map(|c| c.label).collect();
    let oc_on = cfg.weights.lambda_oc > 0.0;
    let ms_on = cfg.weights.lambda_ms > 0.0;
    // The student forwards the original cloud only when the consistency loss
    // differentiates through it.
    let need_original = oc_on && cfg.oc_target == OcTarget::TeacherOnIntricate;

    // Orientation draws, one keyed stream per member.
    let draws: Vec<MemberDraw<S>> = members
        .iter()
        .map(|m| {
            let mut rng = stream(cfg.seed, "draw", &[ep as u64, bi as u64, m.id]);
            let primary = sample_intricate(set, m.id, 1, &mut rng)?[0];
            let variants = sample_intricate(set, m.id, v, &mut rng)?;
            Ok(MemberDraw { primary, variants })
        })
        .collect::<Result<_>>()?;

    // Parallel forwards. Per member the pass order is fixed:
    // [mined pair variant, V contrastive variants..., original?].
    let student_ref: &PointNet<S> = student;
    let caches: Vec<Vec<ForwardCache<S>>> = members
        .par_iter()
        .zip(&draws)
        .map(|(m, d)| {
            let mut passes = Vec::with_capacity(1 + v + usize::from(need_original));
            let rotated = rotate_points(&compose_euler(d.primary), &m.points);
            passes.push(forward(student_ref, &rotated)?);
            for &t in &d.variants {
                let rotated = rotate_points(&compose_euler(t), &m.points);
                passes.push(forward(student_ref, &rotated)?);
            }
            if need_original {
                passes.push(forward(student_ref, &m.points)?);
            }
            Ok(passes)
        })
        .collect::<Result<_>>()?;

    let teacher_logits: Option<Vec<Vec<S>>> = if oc_on {
        let teacher_ref: &PointNet<S> = teacher;
        Some(
            members
                .par_iter()
                .zip(&draws)
                .map(|(m, d)| {
                    let points = match cfg.oc_target {
                        OcTarget::TeacherOnIntricate => {
                            rotate_points(&compose_euler(d.primary), &m.points)
                        }
                        OcTarget::TeacherOnOriginal => m.points.clone(),
                    };
                    let (_, logits) = forward_logits(teacher_ref, &points)?;
                    Ok(logits)
                })
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    // Losses. Classification covers the mined pair variant plus the V
    // contrastive variants of every member; originals are excluded.
    let mut cls_rows = Vec::with_capacity(n * (v + 1));
    let mut cls_labels = Vec::with_capacity(n * (v + 1));
    for (passes, &label) in caches.iter().zip(&labels) {
        for cache in &passes[..v + 1] {
            cls_rows.push(cache.logits().to_vec());
            cls_labels.push(label);
        }
    }
    let (l_cls, dcls) = classification_loss(&cls_rows, &cls_labels)?;

    let oc = if let Some(t_logits) = &teacher_logits {
        let student_rows: Vec<Vec<S>> = caches
            .iter()
            .map(|passes| match cfg.oc_target {
                OcTarget::TeacherOnIntricate => {
                    passes.last().expect("original pass present").logits().to_vec()
                }
                OcTarget::TeacherOnOriginal => passes[0].logits().to_vec(),
            })
            .collect();
        Some(orientation_consistency_loss(
            &student_rows,
            t_logits,
            S::of(cfg.weights.tau_s),
            S::of(cfg.weights.tau_t),
        )?)
    } else {
        None
    };
    let l_oc = oc.as_ref().map_or(S::zero(), |(value, _)| *value);

    let ms = if ms_on {
        let variant_features: Vec<Vec<Vec<S>>> = caches
            .iter()
            .map(|passes| {
                passes[1..v + 1]
                    .iter()
                    .map(|cache| cache.features().to_vec())
                    .collect()
            })
            .collect();
        Some(margin_separation_loss(
            &labels,
            &variant_features,
            S::of(cfg.weights.tau_prime),
        )?)
    } else {
        None
    };
    let l_ms = ms.as_ref().map_or(S::zero(), |(value, _)| *value);

    let l_final = total_loss(l_cls, l_oc, l_ms, &cfg.weights);
    if !l_final.is_finite() {
        return Err(Error::invalid_state(format!(
            "non-finite loss at epoch {ep}, batch {bi} \
             (l_cls={l_cls}, l_oc={l_oc}, l_ms={l_ms})"
        )));
    }

    // Upstream gradients per pass, then one backward sweep per member with a
    // fixed internal pass order — reduction over members is index-ordered, so
    // the result is identical for any worker count.
    let lambda_oc = S::of(cfg.weights.lambda_oc);
    let lambda_ms = S::of(cfg.weights.lambda_ms);
    let zero_feat = vec![S::zero(); FEATURE_DIM];
    let upstreams: Vec<Vec<(Vec<S>, Vec<S>)>> = (0..n)
        .map(|mi| {
            let mut member = Vec::with_capacity(caches[mi].len());
            let mut primary_dlogits = dcls[mi * (v + 1)].clone();
            if let (Some((_, doc)), OcTarget::TeacherOnOriginal) = (&oc, cfg.oc_target) {
                for (g, &u) in primary_dlogits.iter_mut().zip(&doc[mi]) {
                    *g += lambda_oc * u;
                }
            }
            member.push((primary_dlogits, zero_feat.clone()));
            for vi in 0..v {
                let dlogits = dcls[mi * (v + 1) + 1 + vi].clone();
                let dfeatures = match &ms {
                    Some((_, dms)) => dms[mi][vi].iter().map(|&g| lambda_ms * g).collect(),
                    None => zero_feat.clone(),
                };
                member.push((dlogits, dfeatures));
            }
            if need_original {
                let doc = &oc.as_ref().expect("oc active").1[mi];
                let dlogits = doc.iter().map(|&g| lambda_oc * g).collect();
                member.push((dlogits, zero_feat.clone()));
            }
            member
        })
        .collect();

    let member_grads: Vec<PointNet<S>> = caches
        .par_iter()
        .zip(&upstreams)
        .map(|(passes, ups)| {
            let mut grads = student_ref.zeros_like();
            for (cache, (dlogits, dfeatures)) in passes.iter().zip(ups) {
                backward_into(student_ref, cache, dlogits, dfeatures, &mut grads)?;
            }
            Ok(grads)
        })
        .collect::<Result<_>>()?;

    let mut grads = student.zeros_like();
    for g in &member_grads {
        grads.add_assign(g);
    }
    adam_update(student, &grads, adam, S::of(lr), S::of(WEIGHT_DECAY))
        .map_err(|e| Error::invalid_state(format!("epoch {ep}, batch {bi}: {e}")))?;
    ema_update(teacher, student, S::of(cfg.ema_momentum))?;

    Ok([
        l_cls.as_f64(),
        l_oc.as_f64(),
        l_ms.as_f64(),
        l_final.as_f64(),
    ])
}

/// Plain cross-entropy training on the unrotated originals — the
/// orientation-aligned reference model used by the shift-analysis probes.
/// Same schedule, optimizer, and determinism contract as [`train`].
pub fn train_aligned<S: Real>(cfg: &TrainConfig, dataset: &Dataset<S>) -> Result<PointNet<S>> {
    cfg.validate()?;
    let clouds = dataset.clouds(None, Split::Train);
    check_train_set(cfg, &clouds)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid_state(format!("worker pool: {e}")))?;
    pool.install(|| {
        let mut net = PointNet::<S>::init(cfg.seed, cfg.k)?;
        let mut adam = AdamState::new(&net);
        for ep in 0..cfg.epochs {
            let lr = lr_schedule(ep, cfg.epochs, cfg.lr0, cfg.gamma, cfg.beta)?;
            let mut order: Vec<usize> = (0..clouds.len()).collect();
            order.shuffle(&mut stream(cfg.seed, "shuffle", &[ep as u64]));
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                if chunk.len() < cfg.batch_size {
                    break;
                }
                let net_ref: &PointNet<S> = &net;
                let caches: Vec<ForwardCache<S>> = chunk
                    .par_iter()
                    .map(|&i| forward(net_ref, &clouds[i].points))
                    .collect::<Result<_>>()?;
                let rows: Vec<Vec<S>> = caches.iter().map(|c| c.logits().to_vec()).collect();
                let labels: Vec<usize> = chunk.iter().map(|&i| clouds[i].label).collect();
                let (l_cls, dcls) = classification_loss(&rows, &labels)?;
                if !l_cls.is_finite() {
                    return Err(Error::invalid_state(format!(
                        "non-finite loss at epoch {ep}, batch {bi}"
                    )));
                }
                let zero_feat = vec![S::zero(); FEATURE_DIM];
                let member_grads: Vec<PointNet<S>> = caches
                    .par_iter()
                    .zip(&dcls)
                    .map(|(cache, dlogits)| {
                        let mut grads = net_ref.zeros_like();
                        backward_into(net_ref, cache, dlogits, &zero_feat, &mut grads)?;
                        Ok(grads)
                    })
                    .collect::<Result<_>>()?;
                let mut grads = net.zeros_like();
                for g in &member_grads {
                    grads.add_assign(g);
                }
                adam_update(&mut net, &grads, &mut adam, S::of(lr), S::of(WEIGHT_DECAY))
                    .map_err(|e| Error::invalid_state(format!("epoch {ep}, batch {bi}: {e}")))?;
            }
        }
        Ok(net)
    })
}

/// The six ablation variants, in reporting order.
pub const ABLATION_VARIANTS: [&str; 6] = ["baseline", "v1", "v2", "v3", "v4", "full"];

/// Maps a variant name onto the base configuration. `baseline` and `v4`
/// replace mining with uniform random rotations (zero ascent steps);
/// `baseline`/`v1` drop both auxiliary losses, `v2` keeps only the
/// consistency loss, `v3` only the margin loss, and `full` keeps everything.
pub fn variant_config(base: &TrainConfig, variant: &str) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    let (mine, oc, ms) = match variant {
        "baseline" => (false, false, false),
        "v1" => (true, false, false),
        "v2" => (true, true, false),
        "v3" => (true, false, true),
        "v4" => (false, true, true),
        "full" => (true, true, true),
        other => {
            return Err(Error::invalid_argument(format!(
                "unknown ablation variant '{other}'"
            )))
        }
    };
    if !mine {
        cfg.mining.steps = 0;
    }
    if !oc {
        cfg.weights.lambda_oc = 0.0;
    }
    if !ms {
        cfg.weights.lambda_ms = 0.0;
    }
    Ok(cfg)
}

/// One evaluated training run of the ablation matrix.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub avg_mean: f64,
    pub avg_std: f64,
    pub cst: f64,
}

/// Trains every ablation variant for every seed on the source train split
/// and scores the student on the target test split. Rows come back
/// seed-major in [`ABLATION_VARIANTS`] order.
pub fn run_ablation_matrix<S: Real>(
    base: &TrainConfig,
    source: &Dataset<S>,
    target: &Dataset<S>,
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid_argument("ablation needs at least one seed"));
    }
    let target_test = target.clouds(None, Split::Test);
    if target_test.is_empty() {
        return Err(Error::invalid_argument("target dataset has no test split"));
    }
    let mut rows = Vec::with_capacity(seeds.len() * ABLATION_VARIANTS.len());
    for &seed in seeds {
        for variant in ABLATION_VARIANTS {
            let mut cfg = variant_config(base, variant)?;
            cfg.seed = seed;
            log::info!("ablation: training variant {variant} with seed {seed}");
            let out = train(&cfg, source)?;
            let report: EvalReport = evaluate(&out.student, &target_test, cfg.k)?;
            rows.push(AblationRow {
                variant: variant.to_string(),
                seed,
                acc_mean: report.acc_mean,
                acc_std: report.acc_std,
                avg_mean: report.avg_mean,
                avg_std: report.avg_std,
                cst: report.cst,
            });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<()> {
    let displayed = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(displayed.clone(), e))?;
    let mut out = std::io::BufWriter::new(file);
    let io_err = |e| Error::io(displayed.clone(), e);
    writeln!(out, "variant,seed,acc_mean,acc_std,avg_mean,avg_std,cst").map_err(io_err)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.variant, r.seed, r.acc_mean, r.acc_std, r.avg_mean, r.avg_std, r.cst
        )
        .map_err(io_err)?;
    }
    Ok(())
}
