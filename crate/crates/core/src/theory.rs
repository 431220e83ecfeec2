//! Discrete-distribution instruments for the entropy/mutual-information
//! decomposition behind rotation augmentation: replacing the orientation
//! marginal of a joint (U, V) with the uniform distribution never lowers the
//! joint entropy, and the gain is exactly `[ln|U| − H(U)] + I(U;V)`. Finite
//! alphabets stand in for the continuous orientation space — the uniform
//! measure's `ln m(D_U)` becomes `ln|U|`. All logarithms are natural.

use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

/// Distributions are accepted when their mass is this close to 1.
const MASS_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid_argument("empty distribution"));
    }
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::invalid_argument(
            "distribution entries must be finite and non-negative",
        ));
    }
    let mass: f64 = p.iter().sum();
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::invalid_argument(format!(
            "distribution mass is {mass}, not 1"
        )));
    }
    Ok(())
}

/// Shannon entropy `−Σ p ln p` in nats, with `0·ln 0 := 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    Ok(p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum())
}

/// `KL(p ‖ q) = Σ p ln(p/q)` in nats. Requires `q > 0` wherever `p > 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_distribution(p)?;
    check_distribution(q)?;
    if p.len() != q.len() {
        return Err(Error::invalid_argument(format!(
            "KL divergence over mismatched alphabets ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::invalid_argument(
                    "KL divergence undefined: q has zero mass where p does not",
                ));
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total)
}

/// A joint distribution of an orientation variable U (rows) and an
/// orientation-independent variable V (columns).
#[derive(Clone, Debug)]
pub struct DiscreteJoint {
    p: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    /// Validates a |U|×|V| matrix: rectangular, non-negative, total mass 1
    /// within 1e-12.
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        if p.is_empty() || p[0].is_empty() {
            return Err(Error::invalid_argument("joint distribution must be non-empty"));
        }
        let nv = p[0].len();
        if p.iter().any(|row| row.len() != nv) {
            return Err(Error::invalid_argument("joint distribution must be rectangular"));
        }
        if p.iter().flatten().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::invalid_argument(
                "joint entries must be finite and non-negative",
            ));
        }
        let mass: f64 = p.iter().flatten().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::invalid_argument(format!(
                "joint mass is {mass}, not 1"
            )));
        }
        Ok(DiscreteJoint { p })
    }

    pub fn nu(&self) -> usize {
        self.p.len()
    }

    pub fn nv(&self) -> usize {
        self.p[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn marginal_u(&self) -> Vec<f64> {
        self.p.iter().map(|row| row.iter().sum()).collect()
    }

    pub fn marginal_v(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.nv()];
        for row in &self.p {
            for (acc, &x) in m.iter_mut().zip(row) {
                *acc += x;
            }
        }
        m
    }

    fn flat(&self) -> Vec<f64> {
        self.p.iter().flatten().copied().collect()
    }

    fn joint_entropy(&self) -> f64 {
        self.flat()
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -x * x.ln())
            .sum()
    }
}

/// `I(U;V) = H(U) + H(V) − H(U,V)` — the decomposition form.
pub fn mutual_information(j: &DiscreteJoint) -> Result<f64> {
    let hu = entropy(&j.marginal_u())?;
    let hv = entropy(&j.marginal_v())?;
    Ok(hu + hv - j.joint_entropy())
}

/// `I(U;V) = Σ p(u,v)·ln(p(u,v)/(p(u)p(v)))` — the direct form, kept as an
/// independent cross-check of [`mutual_information`].
pub fn mutual_information_direct(j: &DiscreteJoint) -> Result<f64> {
    let pu = j.marginal_u();
    let pv = j.marginal_v();
    let mut total = 0.0;
    for (u, row) in j.rows().iter().enumerate() {
        for (v, &x) in row.iter().enumerate() {
            if x > 0.0 {
                total += x * (x / (pu[u] * pv[v])).ln();
            }
        }
    }
    Ok(total)
}

/// Entropy gained by replacing the orientation marginal with the uniform
/// distribution while keeping V's marginal: builds
/// `X_a = uniform(U) ⊗ marginal_V` and returns `H(X_a) − H(X_s)`, which
/// equals `[ln|U| − H(U)] + I(U;V)`. Non-negative always; strictly positive
/// unless U is already uniform and independent of V.
pub fn aug_entropy_gain(j: &DiscreteJoint) -> Result<f64> {
    let nu = j.nu() as f64;
    let pv = j.marginal_v();
    let augmented: Vec<Vec<f64>> = (0..j.nu()).map(|_| pv.iter().map(|&x| x / nu).collect()).collect();
    let aug = DiscreteJoint::new(augmented)?;
    Ok(aug.joint_entropy() - j.joint_entropy())
}

/// A Dirichlet(1, …, 1) joint: independent Exp(1) draws, normalized —
/// uniform over the simplex of |U|×|V| joints.
pub fn random_dirichlet_joint(nu: usize, nv: usize, rng: &mut ChaCha8Rng) -> Result<DiscreteJoint> {
    if nu < 1 || nv < 1 {
        return Err(Error::invalid_argument("joint dimensions must be at least 1"));
    }
    let mut p: Vec<Vec<f64>> = (0..nu)
        .map(|_| (0..nv).map(|_| Exp1.sample(rng)).collect())
        .collect();
    let mass: f64 = p.iter().flatten().sum();
    for row in p.iter_mut() {
        for x in row.iter_mut() {
            *x /= mass;
        }
    }
    DiscreteJoint::new(p)
}

/// One line of the randomized verification table.
#[derive(Clone, Debug, Serialize)]
pub struct TheoryCheck {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// The extreme value observed: largest identity error, or smallest value
    /// for the non-negativity checks.
    pub worst: f64,
    pub pass: bool,
}

/// Runs the randomized verification suite over Dirichlet joints with
/// alphabet sizes 2–8: the entropy decomposition as an identity, mutual
/// information and augmentation-gain non-negativity, the two-path gain
/// computation, and strict positivity of the gain whenever the orientation
/// marginal is detectably non-uniform or dependent.
pub fn run_theory_trials(trials: usize, seed: u64) -> Result<Vec<TheoryCheck>> {
    if trials == 0 {
        return Err(Error::invalid_argument("need at least one trial"));
    }
    let mut rng = crate::stream::stream(seed, "theory", &[]);
    use rand::Rng;

    let mut decomposition_worst = 0.0f64;
    let mut decomposition_failures = 0;
    let mut mi_min = f64::INFINITY;
    let mut mi_failures = 0;
    let mut gain_min = f64::INFINITY;
    let mut gain_failures = 0;
    let mut twopath_worst = 0.0f64;
    let mut twopath_failures = 0;
    let mut strict_min = f64::INFINITY;
    let mut strict_failures = 0;
    let mut strict_trials = 0;

    for _ in 0..trials {
        let nu = rng.gen_range(2..=8);
        let nv = rng.gen_range(2..=8);
        let j = random_dirichlet_joint(nu, nv, &mut rng)?;

        let mi = mutual_information(&j)?;
        let mi_direct = mutual_information_direct(&j)?;
        let diff = (mi - mi_direct).abs();
        decomposition_worst = decomposition_worst.max(diff);
        if diff > 1e-10 {
            decomposition_failures += 1;
        }

        mi_min = mi_min.min(mi);
        if mi < -1e-12 {
            mi_failures += 1;
        }

        let gain = aug_entropy_gain(&j)?;
        gain_min = gain_min.min(gain);
        if gain < -1e-12 {
            gain_failures += 1;
        }

        let pu = j.marginal_u();
        let hu = entropy(&pu)?;
        let explicit = ((nu as f64).ln() - hu) + mi;
        let diff = (gain - explicit).abs();
        twopath_worst = twopath_worst.max(diff);
        if diff > 1e-10 {
            twopath_failures += 1;
        }

        let uniform_l1: f64 = pu.iter().map(|&x| (x - 1.0 / nu as f64).abs()).sum();
        if mi > 1e-3 || uniform_l1 > 1e-3 {
            strict_trials += 1;
            strict_min = strict_min.min(gain);
            if gain <= 1e-6 {
                strict_failures += 1;
            }
        }
    }

    let check = |name: &str, trials: usize, failures: usize, worst: f64| TheoryCheck {
        name: name.to_string(),
        trials,
        failures,
        worst,
        pass: failures == 0,
    };
    Ok(vec![
        check("mutual-information-two-forms-agree", trials, decomposition_failures, decomposition_worst),
        check("mutual-information-non-negative", trials, mi_failures, mi_min),
        check("aug-entropy-gain-non-negative", trials, gain_failures, gain_min),
        check("aug-entropy-gain-two-path-identity", trials, twopath_failures, twopath_worst),
        check("aug-entropy-gain-strict-when-shifted", strict_trials, strict_failures, strict_min),
    ])
}

/// Writes the verification results as pretty-printed JSON.
pub fn write_theory_json(checks: &[TheoryCheck], path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(checks)
        .map_err(|e| Error::invalid_state(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}
