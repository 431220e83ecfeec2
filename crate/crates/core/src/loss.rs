//! Training objectives: tempered softmax, teacher–student consistency,
//! cosine contrastive separation, cross-entropy, and the weighted total —
//! values together with exact gradients.

use crate::error::{Error, Result};
use crate::real::Real;
use std::collections::BTreeMap;

/// Loss weights and temperatures. Defaults are the published settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the consistency loss.
    pub lambda_oc: f64,
    /// Weight of the margin separation loss.
    pub lambda_ms: f64,
    /// Student softmax temperature in the consistency loss.
    pub tau_s: f64,
    /// Teacher softmax temperature in the consistency loss.
    pub tau_t: f64,
    /// Cosine-similarity temperature in the contrastive losses.
    pub tau_prime: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_oc: 0.01,
            lambda_ms: 0.01,
            tau_s: 0.5,
            tau_t: 0.5,
            tau_prime: 0.07,
        }
    }
}

fn check_finite<S: Real>(logits: &[S]) -> Result<()> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid_argument("logits must be finite"));
    }
    Ok(())
}

/// `σ(p/τ)` with max-shift stabilization; probabilities sum to 1.
pub fn tempered_softmax<S: Real>(logits: &[S], tau: S) -> Result<Vec<S>> {
    if tau <= S::zero() {
        return Err(Error::invalid_argument(format!(
            "softmax temperature must be positive, got {tau}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid_argument("softmax over an empty logit vector"));
    }
    check_finite(logits)?;
    let m = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = logits.iter().map(|&l| ((l - m) / tau).exp()).collect();
    let z: S = out.iter().cloned().sum();
    for p in out.iter_mut() {
        *p /= z;
    }
    Ok(out)
}

/// `log σ(p/τ)` — the stable companion of [`tempered_softmax`] used wherever
/// a probability is immediately passed through a logarithm.
fn log_tempered_softmax<S: Real>(logits: &[S], tau: S) -> Vec<S> {
    let m = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let lse: S = logits
        .iter()
        .map(|&l| ((l - m) / tau).exp())
        .sum::<S>()
        .ln();
    logits.iter().map(|&l| (l - m) / tau - lse).collect()
}

fn check_rows<S: Real>(rows: &[Vec<S>], what: &str) -> Result<usize> {
    if rows.is_empty() {
        return Err(Error::invalid_argument(format!("{what}: empty batch")));
    }
    let k = rows[0].len();
    for r in rows {
        if r.len() != k {
            return Err(Error::invalid_argument(format!("{what}: ragged rows")));
        }
        check_finite(r)?;
    }
    Ok(k)
}

/// Consistency loss: mean cross-entropy of the student's tempered softmax
/// against the teacher's tempered softmax. The teacher side is a constant —
/// the returned gradient is with respect to the student logits only:
/// `(σ(p/τ_s) − σ(p̂/τ_t)) / (N·τ_s)` per row.
pub fn orientation_consistency_loss<S: Real>(
    student_logits: &[Vec<S>],
    teacher_logits: &[Vec<S>],
    tau_s: S,
    tau_t: S,
) -> Result<(S, Vec<Vec<S>>)> {
    if tau_s <= S::zero() || tau_t <= S::zero() {
        return Err(Error::invalid_argument("softmax temperatures must be positive"));
    }
    let k = check_rows(student_logits, "consistency loss student logits")?;
    let kt = check_rows(teacher_logits, "consistency loss teacher logits")?;
    if student_logits.len() != teacher_logits.len() || k != kt {
        return Err(Error::invalid_argument(format!(
            "consistency loss shape mismatch: student {}x{k}, teacher {}x{kt}",
            student_logits.len(),
            teacher_logits.len()
        )));
    }
    let n = S::of(student_logits.len() as f64);
    let mut value = S::zero();
    let mut grads = Vec::with_capacity(student_logits.len());
    for (srow, trow) in student_logits.iter().zip(teacher_logits) {
        let target = tempered_softmax(trow, tau_t)?;
        let log_s = log_tempered_softmax(srow, tau_s);
        let s = tempered_softmax(srow, tau_s)?;
        let mut row_loss = S::zero();
        for (&t, &ls) in target.iter().zip(&log_s) {
            row_loss -= t * ls;
        }
        value += row_loss / n;
        grads.push(
            s.iter()
                .zip(&target)
                .map(|(&si, &ti)| (si - ti) / (n * tau_s))
                .collect(),
        );
    }
    Ok((value, grads))
}

/// Mean cross-entropy with plain softmax (τ = 1). Gradient per row:
/// `(σ(p) − onehot(y)) / N`.
pub fn classification_loss<S: Real>(
    logits: &[Vec<S>],
    labels: &[usize],
) -> Result<(S, Vec<Vec<S>>)> {
    let k = check_rows(logits, "classification loss logits")?;
    if logits.len() != labels.len() {
        return Err(Error::invalid_argument(format!(
            "classification loss: {} logit rows but {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid_argument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let one = S::one();
    let n = S::of(logits.len() as f64);
    let mut value = S::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (row, &y) in logits.iter().zip(labels) {
        let log_p = log_tempered_softmax(row, one);
        value -= log_p[y] / n;
        let mut g = tempered_softmax(row, one)?;
        g[y] -= one;
        for gi in g.iter_mut() {
            *gi /= n;
        }
        grads.push(g);
    }
    Ok((value, grads))
}

struct UnitVec<S> {
    unit: Vec<S>,
    norm: S,
}

fn unit_vec<S: Real>(v: &[S], what: &str) -> Result<UnitVec<S>> {
    check_finite(v)?;
    let norm = v.iter().map(|&x| x * x).sum::<S>().sqrt();
    if norm <= S::zero() {
        return Err(Error::invalid_argument(format!(
            "{what}: zero-norm feature vector (cosine undefined)"
        )));
    }
    Ok(UnitVec {
        unit: v.iter().map(|&x| x / norm).collect(),
        norm,
    })
}

fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Adds `f · ∂cos(a,b)/∂a` into `out`, given both unit vectors and `‖a‖`.
fn add_cos_grad<S: Real>(out: &mut [S], a: &UnitVec<S>, b: &UnitVec<S>, cos: S, f: S) {
    for ((o, &ua), &ub) in out.iter_mut().zip(&a.unit).zip(&b.unit) {
        *o += f * (ub - cos * ua) / a.norm;
    }
}

fn group_by_class(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (m, &y) in labels.iter().enumerate() {
        groups.entry(y).or_default().push(m);
    }
    groups
}

fn zero_grads_like<S: Real>(variants: &[Vec<Vec<S>>]) -> Vec<Vec<Vec<S>>> {
    variants
        .iter()
        .map(|vs| vs.iter().map(|v| vec![S::zero(); v.len()]).collect())
        .collect()
}

fn check_variants<S: Real>(variants: &[Vec<Vec<S>>], labels: &[usize]) -> Result<(usize, usize)> {
    if variants.len() != labels.len() {
        return Err(Error::invalid_argument(format!(
            "{} feature groups but {} labels",
            variants.len(),
            labels.len()
        )));
    }
    if variants.is_empty() {
        return Err(Error::invalid_argument("contrastive loss: empty batch"));
    }
    let v = variants[0].len();
    let d = variants[0].first().map_or(0, Vec::len);
    if v == 0 || d == 0 {
        return Err(Error::invalid_argument("contrastive loss: empty feature set"));
    }
    for group in variants {
        if group.len() != v || group.iter().any(|f| f.len() != d) {
            return Err(Error::invalid_argument(
                "contrastive loss: inconsistent variant counts or feature dimensions",
            ));
        }
    }
    Ok((v, d))
}

/// Attraction term. For every class with at least two members, all ordered
/// member pairs `(i, j)`, `i ≠ j`, contribute `cos(z_{i,v}, z_{j,1})/τ'` for
/// each of member i's V variants, where `z_{j,1}` is member j's first
/// variant. Class sums are normalized by the ordered-pair count
/// `V·N_k·(N_k−1)` (which reproduces the documented worked examples), the
/// class mean is taken over the K' classes with ≥2 members, and the sign is
/// negative: identical features minimize the loss.
pub fn positive_pair_loss<S: Real>(
    labels: &[usize],
    variants: &[Vec<Vec<S>>],
    tau_prime: S,
) -> Result<(S, Vec<Vec<Vec<S>>>)> {
    if tau_prime <= S::zero() {
        return Err(Error::invalid_argument("tau_prime must be positive"));
    }
    let (v_count, _) = check_variants(variants, labels)?;
    let units: Vec<Vec<UnitVec<S>>> = variants
        .iter()
        .map(|vs| {
            vs.iter()
                .map(|f| unit_vec(f, "positive pair loss"))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let groups = group_by_class(labels);
    let eligible: Vec<&Vec<usize>> = groups.values().filter(|g| g.len() >= 2).collect();
    let mut grads = zero_grads_like(variants);
    if eligible.is_empty() {
        return Ok((S::zero(), grads));
    }

    let k_prime = S::of(eligible.len() as f64);
    let mut value = S::zero();
    for members in eligible {
        let n_k = members.len();
        let coeff =
            S::one() / (S::of(v_count as f64) * S::of(n_k as f64) * S::of((n_k - 1) as f64));
        // Overall factor on each cosine: −coeff / (K'·τ').
        let f = -coeff / (k_prime * tau_prime);
        let mut class_sum = S::zero();
        for &i in members {
            for &j in members {
                if i == j {
                    continue;
                }
                let b = &units[j][0];
                for v in 0..v_count {
                    let a = &units[i][v];
                    let cos = dot(&a.unit, &b.unit);
                    class_sum += cos;
                    add_cos_grad(&mut grads[i][v], a, b, cos, f);
                    add_cos_grad(&mut grads[j][0], b, a, cos, f);
                }
            }
        }
        value -= coeff * class_sum / (k_prime * tau_prime);
    }
    Ok((value, grads))
}

/// Repulsion term over first-variant embeddings (one per member). For each
/// class present, every cross-class ordered pair `(i ∈ k, j ∉ k)` contributes
/// `+cos(z_i, z_j)/τ'`, normalized by `N_k·N_¬k`; the mean is over the
/// classes present. Batches with a single class return 0.
pub fn negative_pair_loss<S: Real>(
    labels: &[usize],
    features: &[Vec<S>],
    tau_prime: S,
) -> Result<(S, Vec<Vec<S>>)> {
    if tau_prime <= S::zero() {
        return Err(Error::invalid_argument("tau_prime must be positive"));
    }
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::invalid_argument(format!(
            "negative pair loss: {} features for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::invalid_argument("negative pair loss: ragged feature rows"));
    }
    let mut grads: Vec<Vec<S>> = features.iter().map(|f| vec![S::zero(); f.len()]).collect();
    let groups = group_by_class(labels);
    if groups.len() < 2 {
        return Ok((S::zero(), grads));
    }
    let units: Vec<UnitVec<S>> = features
        .iter()
        .map(|f| unit_vec(f, "negative pair loss"))
        .collect::<Result<_>>()?;

    let n = labels.len();
    let k_present = S::of(groups.len() as f64);
    let mut value = S::zero();
    for members in groups.values() {
        let n_k = members.len();
        let n_other = n - n_k;
        let coeff = S::one() / (S::of(n_k as f64) * S::of(n_other as f64));
        let f = coeff / (k_present * tau_prime);
        let mut class_sum = S::zero();
        for &i in members {
            for (j, &yj) in labels.iter().enumerate() {
                if yj == labels[i] {
                    continue;
                }
                let (a, b) = (&units[i], &units[j]);
                let cos = dot(&a.unit, &b.unit);
                class_sum += cos;
                add_cos_grad(&mut grads[i], a, b, cos, f);
                add_cos_grad(&mut grads[j], b, a, cos, f);
            }
        }
        value += coeff * class_sum / (k_present * tau_prime);
    }
    Ok((value, grads))
}

/// `L_ms = L_pos + L_neg`. The repulsion term reads each member's first
/// variant; its gradients are folded into that slot.
pub fn margin_separation_loss<S: Real>(
    labels: &[usize],
    variants: &[Vec<Vec<S>>],
    tau_prime: S,
) -> Result<(S, Vec<Vec<Vec<S>>>)> {
    let (pos, mut grads) = positive_pair_loss(labels, variants, tau_prime)?;
    let firsts: Vec<Vec<S>> = variants.iter().map(|vs| vs[0].clone()).collect();
    let (neg, neg_grads) = negative_pair_loss(labels, &firsts, tau_prime)?;
    for (g, ng) in grads.iter_mut().zip(neg_grads) {
        for (a, b) in g[0].iter_mut().zip(ng) {
            *a += b;
        }
    }
    Ok((pos + neg, grads))
}

/// `L_final = L_cls + λ_oc·L_oc + λ_ms·L_ms`.
pub fn total_loss<S: Real>(l_cls: S, l_oc: S, l_ms: S, w: &LossWeights) -> S {
    l_cls + S::of(w.lambda_oc) * l_oc + S::of(w.lambda_ms) * l_ms
}
