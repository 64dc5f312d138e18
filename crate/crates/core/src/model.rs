//! Preference environment: BTL link, latent rewards, label sampling and the
//! suboptimality-gap metric.
//!
//! An [`Instance`] holds a finite context set, a per-context action set and a
//! feature map `phi(x, a) in R^d`. The latent reward is `r(x, a) = phi(x, a)^T theta*`
//! and a duel `(x, a, a')` is won by `a` with probability `sigmoid(z^T theta*)`,
//! where `z = phi(x, a) - phi(x, a')`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Tolerance used when validating norm budgets and the zero-sum constraint.
pub const INVARIANT_TOL: f64 = 1e-12;

/// Logistic function, evaluated on the branch that never exponentiates a
/// positive number.
#[inline]
pub fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`sigmoid`]. Written as `sigma(w) * sigma(-w)` so that the
/// tails keep full relative precision.
#[inline]
pub fn sigmoid_dot(w: f64) -> f64 {
    sigmoid(w) * sigmoid(-w)
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log sigmoid(w)`.
#[inline]
pub fn log_sigmoid(w: f64) -> f64 {
    -softplus(-w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub context: usize,
    pub a: usize,
    pub a_prime: usize,
}

impl Triplet {
    pub fn new(context: usize, a: usize, a_prime: usize) -> Self {
        Self {
            context,
            a,
            a_prime,
        }
    }

    pub fn swapped(self) -> Self {
        Self {
            context: self.context,
            a: self.a_prime,
            a_prime: self.a,
        }
    }
}

/// One labelled duel. `y = true` means `a` was preferred over `a'`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSample {
    pub triplet: Triplet,
    pub y: bool,
    pub z: Vector,
}

impl PreferenceSample {
    pub fn new(inst: &Instance, triplet: Triplet, y: bool) -> Result<Self> {
        let z = inst.feature_diff(triplet)?;
        Ok(Self { triplet, y, z })
    }

    #[inline]
    pub fn label(&self) -> f64 {
        if self.y {
            1.0
        } else {
            0.0
        }
    }
}

/// A policy over contexts. Set-valued policies are produced by elimination
/// learners and are evaluated against their worst surviving action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Policy {
    Deterministic(Vec<usize>),
    SetValued(Vec<Vec<usize>>),
}

impl Policy {
    pub fn n_contexts(&self) -> usize {
        match self {
            Policy::Deterministic(a) => a.len(),
            Policy::SetValued(s) => s.len(),
        }
    }

    /// Actions the policy may play at `x`.
    pub fn support(&self, x: usize) -> &[usize] {
        match self {
            Policy::Deterministic(a) => std::slice::from_ref(&a[x]),
            Policy::SetValued(s) => &s[x],
        }
    }

    pub fn validate(&self, n_contexts: usize, n_actions: usize) -> Result<()> {
        if self.n_contexts() != n_contexts {
            return Err(Error::InvalidPolicy(format!(
                "policy covers {} contexts, instance has {}",
                self.n_contexts(),
                n_contexts
            )));
        }
        for x in 0..n_contexts {
            let support = self.support(x);
            if support.is_empty() {
                return Err(Error::InvalidPolicy(format!("empty action set at context {x}")));
            }
            if let Some(&bad) = support.iter().find(|&&a| a >= n_actions) {
                return Err(Error::InvalidPolicy(format!(
                    "action {bad} at context {x} out of range ({n_actions} actions)"
                )));
            }
        }
        Ok(())
    }
}

/// A contextual preference environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    features: Vec<Vec<Vector>>,
    theta_star: Vector,
    s: f64,
    l: f64,
    zero_sum: bool,
}

impl Instance {
    /// Builds an instance and checks every invariant: rectangular feature
    /// table, matching dimensions, `||phi|| <= L`, `||theta*|| <= S` and the
    /// zero-sum constraint when requested.
    pub fn new(
        features: Vec<Vec<Vector>>,
        theta_star: Vector,
        s: f64,
        l: f64,
        zero_sum: bool,
    ) -> Result<Self> {
        let d = theta_star.len();
        if d == 0 {
            return Err(Error::InvalidInstance("dimension must be positive".into()));
        }
        if features.is_empty() {
            return Err(Error::InvalidInstance("no contexts".into()));
        }
        let n_actions = features[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidInstance("no actions".into()));
        }
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::InvalidInstance(format!("S must be finite and >= 0, got {s}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidInstance(format!("L must be finite and > 0, got {l}")));
        }
        for (x, row) in features.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidInstance(format!(
                    "context {x} has {} actions, expected {n_actions}",
                    row.len()
                )));
            }
            for (a, phi) in row.iter().enumerate() {
                if phi.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: phi.len(),
                    });
                }
                if phi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInstance(format!("non-finite feature at ({x}, {a})")));
                }
                let norm = phi.norm();
                if norm > l + INVARIANT_TOL {
                    return Err(Error::InvalidInstance(format!(
                        "feature ({x}, {a}) has norm {norm} > L = {l}"
                    )));
                }
            }
        }
        if theta_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite theta*".into()));
        }
        let tnorm = theta_star.norm();
        if tnorm > s + INVARIANT_TOL * s.max(1.0) {
            return Err(Error::InvalidInstance(format!("||theta*|| = {tnorm} exceeds S = {s}")));
        }
        if zero_sum {
            let sum = theta_star.sum();
            if sum.abs() > INVARIANT_TOL {
                return Err(Error::InvalidInstance(format!(
                    "theta* coordinates sum to {sum}, zero-sum constraint requested"
                )));
            }
        }
        Ok(Self {
            features,
            theta_star,
            s,
            l,
            zero_sum,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn n_contexts(&self) -> usize {
        self.features.len()
    }

    pub fn n_actions(&self) -> usize {
        self.features[0].len()
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn zero_sum(&self) -> bool {
        self.zero_sum
    }

    pub fn theta_star(&self) -> &Vector {
        &self.theta_star
    }

    pub fn feature(&self, x: usize, a: usize) -> Result<&Vector> {
        self.check_index(x, a)?;
        Ok(&self.features[x][a])
    }

    fn check_index(&self, x: usize, a: usize) -> Result<()> {
        if x >= self.n_contexts() {
            return Err(Error::IndexOutOfRange {
                what: "context",
                index: x,
                limit: self.n_contexts(),
            });
        }
        if a >= self.n_actions() {
            return Err(Error::IndexOutOfRange {
                what: "action",
                index: a,
                limit: self.n_actions(),
            });
        }
        Ok(())
    }

    pub fn check_triplet(&self, t: Triplet) -> Result<()> {
        let invalid = |reason: String| Error::InvalidTriplet { triplet: t, reason };
        if t.context >= self.n_contexts() {
            return Err(invalid(format!("context out of range ({})", self.n_contexts())));
        }
        if t.a >= self.n_actions() || t.a_prime >= self.n_actions() {
            return Err(invalid(format!("action out of range ({})", self.n_actions())));
        }
        if t.a == t.a_prime {
            return Err(invalid("a and a' must differ".into()));
        }
        Ok(())
    }

    /// `phi(x, a) - phi(x, a')`.
    pub fn feature_diff(&self, t: Triplet) -> Result<Vector> {
        self.check_triplet(t)?;
        Ok(self.feature_diff_unchecked(t))
    }

    #[inline]
    pub(crate) fn feature_diff_unchecked(&self, t: Triplet) -> Vector {
        &self.features[t.context][t.a] - &self.features[t.context][t.a_prime]
    }

    /// Largest `||phi(x, a) - phi(x, a')||` over the instance.
    pub fn max_diff_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for row in &self.features {
            for (a, pa) in row.iter().enumerate() {
                for pb in row.iter().skip(a + 1) {
                    best = best.max((pa - pb).norm());
                }
            }
        }
        best
    }

    /// All unordered pairs `(x, a, a')` with `a < a'`, in lexicographic order.
    pub fn candidate_triplets(&self) -> Vec<Triplet> {
        let k = self.n_actions();
        let mut out = Vec::with_capacity(self.n_contexts() * k * k.saturating_sub(1) / 2);
        for x in 0..self.n_contexts() {
            for a in 0..k {
                for b in (a + 1)..k {
                    out.push(Triplet::new(x, a, b));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&InstanceDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// On-disk form of an [`Instance`]; `features` is contexts x actions x d.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub d: usize,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub zero_sum: bool,
    pub theta_star: Vec<f64>,
    pub features: Vec<Vec<Vec<f64>>>,
}

impl From<&Instance> for InstanceDoc {
    fn from(inst: &Instance) -> Self {
        Self {
            d: inst.dim(),
            s: inst.s,
            l: inst.l,
            zero_sum: inst.zero_sum,
            theta_star: inst.theta_star.iter().copied().collect(),
            features: inst
                .features
                .iter()
                .map(|row| row.iter().map(|phi| phi.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl TryFrom<InstanceDoc> for Instance {
    type Error = Error;

    fn try_from(doc: InstanceDoc) -> Result<Self> {
        if doc.theta_star.len() != doc.d {
            return Err(Error::DimensionMismatch {
                expected: doc.d,
                got: doc.theta_star.len(),
            });
        }
        let features = doc
            .features
            .into_iter()
            .map(|row| row.into_iter().map(Vector::from_vec).collect())
            .collect();
        Instance::new(
            features,
            Vector::from_vec(doc.theta_star),
            doc.s,
            doc.l,
            doc.zero_sum,
        )
    }
}

/// `P[y = 1 | x, a, a'] = sigmoid(z^T theta*)`.
pub fn pref_prob(inst: &Instance, t: Triplet) -> Result<f64> {
    let z = inst.feature_diff(t)?;
    Ok(sigmoid(z.dot(&inst.theta_star)))
}

/// Draws a Bernoulli label for the duel `t`.
pub fn sample_preference<R: Rng + ?Sized>(inst: &Instance, t: Triplet, rng: &mut R) -> Result<bool> {
    let p = pref_prob(inst, t)?;
    Ok(rng.random::<f64>() < p)
}

pub fn latent_reward(inst: &Instance, x: usize, a: usize) -> Result<f64> {
    Ok(inst.feature(x, a)?.dot(&inst.theta_star))
}

/// Worst-case (over contexts) latent-reward shortfall of `pol` relative to
/// the optimal action. Set-valued policies are charged for their worst
/// surviving action.
pub fn suboptimality_gap(inst: &Instance, pol: &Policy) -> Result<f64> {
    pol.validate(inst.n_contexts(), inst.n_actions())?;
    let mut worst = 0.0f64;
    for x in 0..inst.n_contexts() {
        let rewards: Vec<f64> = inst.features[x]
            .iter()
            .map(|phi| phi.dot(&inst.theta_star))
            .collect();
        let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let played = pol
            .support(x)
            .iter()
            .map(|&a| rewards[a])
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best - played);
    }
    Ok(worst)
}

/// Shortfall of `pol` at a single context (worst surviving action for
/// set-valued policies).
pub fn context_gap(inst: &Instance, pol: &Policy, x: usize) -> Result<f64> {
    pol.validate(inst.n_contexts(), inst.n_actions())?;
    if x >= inst.n_contexts() {
        return Err(Error::IndexOutOfRange {
            what: "context",
            index: x,
            limit: inst.n_contexts(),
        });
    }
    let rewards: Vec<f64> = inst.features[x].iter().map(|phi| phi.dot(&inst.theta_star)).collect();
    let best = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let played = pol.support(x).iter().map(|&a| rewards[a]).fold(f64::INFINITY, f64::min);
    Ok(best - played)
}

/// Per-context argmax of `phi(x, a)^T theta`; ties go to the lowest index.
pub fn greedy_policy(inst: &Instance, theta: &Vector) -> Result<Policy> {
    if theta.len() != inst.dim() {
        return Err(Error::DimensionMismatch {
            expected: inst.dim(),
            got: theta.len(),
        });
    }
    let actions = inst
        .features
        .iter()
        .map(|row| {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (a, phi) in row.iter().enumerate() {
                let v = phi.dot(theta);
                if v > best_val {
                    best = a;
                    best_val = v;
                }
            }
            best
        })
        .collect();
    Ok(Policy::Deterministic(actions))
}

/// Projection onto `{theta : <1, theta> = 0}` when `zero_sum`, identity otherwise.
pub(crate) fn project_subspace(v: &Vector, zero_sum: bool) -> Vector {
    if zero_sum {
        let mean = v.mean();
        v.map(|c| c - mean)
    } else {
        v.clone()
    }
}

/// Worst-case inverse link slope over the parameter set:
/// `max_{x, a != a'} 1 / sigmoid_dot(S * ||P z||)`.
///
/// `sigmoid_dot` is even and decreasing in `|w|`, and the supremum of
/// `|z^T theta|` over `Theta` is `S * ||P z||`, so no search over `theta` is needed.
pub fn compute_kappa(inst: &Instance) -> f64 {
    let mut max_proj = 0.0f64;
    for row in &inst.features {
        for (a, phi_a) in row.iter().enumerate() {
            for phi_b in row.iter().skip(a + 1) {
                let z = phi_a - phi_b;
                max_proj = max_proj.max(project_subspace(&z, inst.zero_sum).norm());
            }
        }
    }
    1.0 / sigmoid_dot(inst.s * max_proj)
}
