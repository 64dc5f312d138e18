//! Active preference optimization over a finite class of general preference
//! functions: least-squares fits, confidence sets, pairwise diameters as
//! bonuses, Condorcet-style action elimination and context retirement.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, Instance, Triplet, Vector};

const COMPLEMENT_TOL: f64 = 1e-12;

/// A finite set of preference tables `f[x][a][a']`, with the index of the
/// member that generates the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionClass {
    n_contexts: usize,
    n_actions: usize,
    values: Vec<Vec<Vec<Vec<f64>>>>,
    truth_index: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionClassDoc {
    n_contexts: usize,
    n_actions: usize,
    values: Vec<Vec<Vec<Vec<f64>>>>,
    truth_index: usize,
}

impl FunctionClass {
    pub fn new(n_contexts: usize, n_actions: usize, values: Vec<Vec<Vec<Vec<f64>>>>, truth_index: usize) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidFunctionClass(msg));
        if values.is_empty() {
            return bad("function class is empty".into());
        }
        if n_contexts == 0 || n_actions == 0 {
            return bad("need at least one context and one action".into());
        }
        if truth_index >= values.len() {
            return bad(format!("truth_index {truth_index} out of range for {} members", values.len()));
        }
        for (i, f) in values.iter().enumerate() {
            if f.len() != n_contexts || f.iter().any(|fx| fx.len() != n_actions || fx.iter().any(|r| r.len() != n_actions)) {
                return bad(format!("member {i} is not a {n_contexts} x {n_actions} x {n_actions} table"));
            }
            for (x, fx) in f.iter().enumerate() {
                #[allow(clippy::needless_range_loop)]
                for a in 0..n_actions {
                    for b in 0..n_actions {
                        let v = fx[a][b];
                        if !(0.0..=1.0).contains(&v) {
                            return bad(format!("member {i}: f({x},{a},{b}) = {v} outside [0, 1]"));
                        }
                        if (v + fx[b][a] - 1.0).abs() > COMPLEMENT_TOL {
                            return bad(format!("member {i}: f({x},{a},{b}) + f({x},{b},{a}) != 1"));
                        }
                    }
                }
                if condorcet_winners(fx).is_empty() {
                    return bad(format!("member {i} has no Condorcet winner at context {x}"));
                }
            }
        }
        Ok(Self {
            n_contexts,
            n_actions,
            values,
            truth_index,
        })
    }

    /// BTL class over the features of `inst`: one member per point of the
    /// grid `{-g, 0, g}^d`, `f(x,a,a') = sigmoid((phi(x,a) - phi(x,a'))^T theta)`.
    pub fn btl_grid(inst: &Instance, g: f64, truth: &Vector) -> Result<Self> {
        let d = inst.dim();
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::InvalidFunctionClass(format!("grid step must be finite and > 0, got {g}")));
        }
        if d > 8 {
            return Err(Error::InvalidFunctionClass(format!("grid class over d = {d} has 3^{d} members")));
        }
        if truth.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: truth.len(),
            });
        }
        let points = grid_points(d, g);
        let truth_index = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - truth).norm()))
            .fold((0, f64::INFINITY), |best, (i, dist)| if dist < best.1 { (i, dist) } else { best })
            .0;
        let values = points.iter().map(|theta| btl_table(inst, theta)).collect();
        Self::new(inst.n_contexts(), inst.n_actions(), values, truth_index)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn truth_index(&self) -> usize {
        self.truth_index
    }

    pub fn value(&self, f: usize, t: Triplet) -> f64 {
        self.values[f][t.context][t.a][t.a_prime]
    }

    pub fn truth(&self, t: Triplet) -> f64 {
        self.value(self.truth_index, t)
    }

    /// Condorcet winners of the true member at `x`.
    pub fn truth_winners(&self, x: usize) -> Vec<usize> {
        condorcet_winners(&self.values[self.truth_index][x])
    }

    pub fn check_triplet(&self, t: Triplet) -> Result<()> {
        if t.context >= self.n_contexts || t.a >= self.n_actions || t.a_prime >= self.n_actions || t.a == t.a_prime {
            return Err(Error::InvalidTriplet {
                triplet: t,
                reason: format!("class has {} contexts and {} actions", self.n_contexts, self.n_actions),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&FunctionClassDoc {
            n_contexts: self.n_contexts,
            n_actions: self.n_actions,
            values: self.values.clone(),
            truth_index: self.truth_index,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: FunctionClassDoc = serde_json::from_str(s)?;
        Self::new(doc.n_contexts, doc.n_actions, doc.values, doc.truth_index)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn grid_points(d: usize, g: f64) -> Vec<Vector> {
    let n = 3usize.pow(d as u32);
    (0..n)
        .map(|mut k| {
            Vector::from_fn(d, |_, _| {
                let c = (k % 3) as f64 - 1.0;
                k /= 3;
                c * g
            })
        })
        .collect()
}

fn btl_table(inst: &Instance, theta: &Vector) -> Vec<Vec<Vec<f64>>> {
    (0..inst.n_contexts())
        .map(|x| {
            let r: Vec<f64> = (0..inst.n_actions())
                .map(|a| inst.feature(x, a).expect("indices in range").dot(theta))
                .collect();
            (0..r.len())
                .map(|a| {
                    (0..r.len())
                        .map(|b| {
                            // lower triangle as the complement of the upper
                            if a > b {
                                1.0 - sigmoid(r[b] - r[a])
                            } else {
                                sigmoid(r[a] - r[b])
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn condorcet_winners(fx: &[Vec<f64>]) -> Vec<usize> {
    (0..fx.len()).filter(|&a| fx[a].iter().all(|&v| v >= 0.5)).collect()
}

/// Labels aggregated per queried ordered triplet: `(count of y = 1, count)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenData {
    counts: BTreeMap<Triplet, (u64, u64)>,
    n: usize,
}

impl GenData {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Triplet, y: bool) {
        let e = self.counts.entry(t).or_insert((0, 0));
        e.0 += y as u64;
        e.1 += 1;
        self.n += 1;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

/// Member minimising the cumulative squared prediction error; ties go to the
/// lowest index.
pub fn least_squares_fit(class: &FunctionClass, data: &GenData) -> usize {
    let mut best = (0, f64::INFINITY);
    for f in 0..class.len() {
        let loss: f64 = data
            .counts
            .iter()
            .map(|(&t, &(ones, n))| {
                let v = class.value(f, t);
                ones as f64 * (1.0 - v).powi(2) + (n - ones) as f64 * v * v
            })
            .sum();
        if loss < best.1 {
            best = (f, loss);
        }
    }
    best.0
}

/// `2 log(2N/delta) + 2 sqrt(log(4t(t+1)/delta)) + 4`.
pub fn beta_gen(t: usize, class_size: usize, delta: f64) -> f64 {
    let t = t as f64;
    2.0 * (2.0 * class_size as f64 / delta).ln() + 2.0 * (4.0 * t * (t + 1.0) / delta).ln().sqrt() + 4.0
}

/// Members within squared distance `beta` of the fit on the sampled triplets.
pub fn confidence_set(class: &FunctionClass, data: &GenData, fit: usize, beta: f64) -> Vec<usize> {
    (0..class.len())
        .filter(|&f| {
            f == fit
                || data
                    .counts
                    .iter()
                    .map(|(&t, &(_, n))| n as f64 * (class.value(f, t) - class.value(fit, t)).powi(2))
                    .sum::<f64>()
                    <= beta
        })
        .collect()
}

/// Diameter of the confidence set at a triplet.
pub fn gen_bonus(class: &FunctionClass, conf: &[usize], t: Triplet) -> f64 {
    let (lo, hi) = conf.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| {
        let v = class.value(f, t);
        (lo.min(v), hi.max(v))
    });
    if conf.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Keeps the actions of `prev` that could still beat every other survivor
/// under an optimistic estimate. Falls back to the most optimistic action if
/// nothing survives.
pub fn eliminate_actions(class: &FunctionClass, fit: usize, conf: &[usize], x: usize, prev: &[usize]) -> Vec<usize> {
    let optimism = |a: usize| {
        prev.iter()
            .filter(|&&b| b != a)
            .map(|&b| {
                let t = Triplet::new(x, a, b);
                class.value(fit, t) + gen_bonus(class, conf, t)
            })
            .fold(f64::INFINITY, f64::min)
    };
    let scores: Vec<f64> = prev.iter().map(|&a| optimism(a)).collect();
    let kept: Vec<usize> = prev.iter().zip(&scores).filter(|(_, &s)| s >= 0.5).map(|(&a, _)| a).collect();
    if !kept.is_empty() {
        return kept;
    }
    let mut best = 0;
    for i in 1..prev.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    vec![prev[best]]
}

/// Pessimistic preference gap `max_x max_{a in pol(x)} f*(x, a*(x), a) - 1/2`.
pub fn gen_suboptimality(class: &FunctionClass, pol: &[Vec<usize>]) -> Result<f64> {
    if pol.len() != class.n_contexts() {
        return Err(Error::InvalidPolicy(format!(
            "policy covers {} contexts, class has {}",
            pol.len(),
            class.n_contexts()
        )));
    }
    let mut gap = 0.0f64;
    for (x, set) in pol.iter().enumerate() {
        if set.is_empty() || set.iter().any(|&a| a >= class.n_actions()) {
            return Err(Error::InvalidPolicy(format!("bad action set at context {x}")));
        }
        let star = class.truth_winners(x)[0];
        for &a in set {
            let v = if a == star {
                0.5
            } else {
                class.truth(Triplet::new(x, star, a))
            };
            gap = gap.max(v - 0.5);
        }
    }
    debug_assert!(gap >= 0.0);
    Ok(gap)
}

/// How queries are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenQuery {
    /// Largest confidence-set diameter among active contexts and pairs.
    Active,
    /// Uniform context and uniform unordered pair from the full action set.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenConfig {
    pub horizon: usize,
    pub delta: f64,
    pub query: GenQuery,
}

/// One round of an APO-Gen trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRecord {
    pub t: usize,
    pub fit_index: usize,
    pub conf_size: usize,
    pub truth_in_conf: bool,
    /// Every Condorcet winner of the true member is still active in its context.
    pub winners_retained: bool,
    pub max_bonus: f64,
    pub gap: f64,
    pub selected: Triplet,
}

#[derive(Debug, Clone)]
pub struct GenOutput {
    /// Active action sets after the last round.
    pub policy: Vec<Vec<usize>>,
    pub records: Vec<GenRecord>,
    pub active_contexts: Vec<usize>,
}

impl GenOutput {
    pub fn truth_always_covered(&self) -> bool {
        self.records.iter().all(|r| r.truth_in_conf)
    }

    pub fn winners_always_retained(&self) -> bool {
        self.records.iter().all(|r| r.winners_retained)
    }
}

fn sample_pair<R: Rng + ?Sized>(n_actions: usize, rng: &mut R) -> (usize, usize) {
    let a = rng.random_range(0..n_actions);
    let mut b = rng.random_range(0..n_actions - 1);
    if b >= a {
        b += 1;
    }
    (a.min(b), a.max(b))
}

/// Runs APO-Gen (or the uniform-query baseline) for up to `horizon` rounds.
/// Each round refits, rebuilds the confidence set with `delta / T`,
/// eliminates actions in every active context, retires settled contexts and
/// queries one duel. The run stops early once every context is retired.
pub fn apo_gen_run<R: Rng + ?Sized>(class: &FunctionClass, cfg: &GenConfig, rng: &mut R) -> Result<GenOutput> {
    if cfg.horizon == 0 {
        return Err(Error::config("T", "must be >= 1"));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::config("delta", "must lie in (0, 1)"));
    }
    if class.n_actions() < 2 {
        return Err(Error::InvalidFunctionClass("need at least two actions".into()));
    }
    let nc = class.n_contexts();
    let mut active_actions: Vec<Vec<usize>> = vec![(0..class.n_actions()).collect(); nc];
    let mut active_contexts: Vec<usize> = (0..nc).collect();
    let mut data = GenData::new();
    let mut records = Vec::with_capacity(cfg.horizon);
    let delta_t = cfg.delta / cfg.horizon as f64;

    for t in 1..=cfg.horizon {
        let fit = least_squares_fit(class, &data);
        let conf = confidence_set(class, &data, fit, beta_gen(t, class.len(), delta_t));
        for &x in &active_contexts {
            active_actions[x] = eliminate_actions(class, fit, &conf, x, &active_actions[x]);
        }
        active_contexts.retain(|&x| active_actions[x].len() > 1);
        if active_contexts.is_empty() {
            break;
        }

        let (selected, max_bonus) = match cfg.query {
            GenQuery::Active => {
                let mut best = (Triplet::new(active_contexts[0], 0, 1), f64::NEG_INFINITY);
                for &x in &active_contexts {
                    let acts = &active_actions[x];
                    for (i, &a) in acts.iter().enumerate() {
                        for &b in &acts[i + 1..] {
                            let tr = Triplet::new(x, a, b);
                            let bonus = gen_bonus(class, &conf, tr);
                            if bonus > best.1 {
                                best = (tr, bonus);
                            }
                        }
                    }
                }
                best
            }
            GenQuery::Uniform => {
                let x = rng.random_range(0..nc);
                let (a, b) = sample_pair(class.n_actions(), rng);
                let tr = Triplet::new(x, a, b);
                (tr, gen_bonus(class, &conf, tr))
            }
        };
        let y = rng.random::<f64>() < class.truth(selected);
        data.push(selected, y);

        records.push(GenRecord {
            t,
            fit_index: fit,
            conf_size: conf.len(),
            truth_in_conf: conf.contains(&class.truth_index()),
            winners_retained: (0..nc).all(|x| class.truth_winners(x).iter().all(|w| active_actions[x].contains(w))),
            max_bonus,
            gap: gen_suboptimality(class, &active_actions)?,
            selected,
        });
    }

    Ok(GenOutput {
        policy: active_actions,
        records,
        active_contexts,
    })
}
