//! Learners for the BTL model: active preference optimization (online and
//! batched) and the uniform-sampling baseline.
//!
//! Every learner returns a final [`Policy`] together with a per-round
//! [`RunRecord`] trace. A trace row at round `t` describes the policy the
//! learner would return if it stopped after `t` labels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{build_h, h_dominance_margin, DesignMatrices, InverseNorm};
use crate::error::{Error, Result};
use crate::estimation::{project_theta, solve_mle, GroupedSamples, MleConfig, StepRule};
use crate::model::{
    compute_kappa, greedy_policy, sample_preference, suboptimality_gap, Instance, Policy, PreferenceSample,
    Triplet, Vector,
};

/// Metric under which exploration bonuses are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusMetric {
    /// `H_t(theta_hat_t)`, the curvature-weighted design matrix.
    H,
    /// `V_t`, the plain covariance of feature differences.
    V,
}

/// Ridge for `H` that the APO guarantee is stated with:
/// `1 / (4 S^2 (2 + 2S)^2)`. Falls back to 1 when `S = 0`.
pub fn default_lambda_h(s: f64) -> f64 {
    if s > 0.0 {
        1.0 / (4.0 * s * s * (2.0 + 2.0 * s).powi(2))
    } else {
        1.0
    }
}

/// Default trace cadence: every round up to 2000 rounds, every 10th beyond.
/// The final round is always recorded.
pub fn default_record_every(horizon: usize) -> usize {
    if horizon <= 2000 {
        1
    } else {
        10
    }
}

fn is_recorded(t: usize, horizon: usize, every: usize) -> bool {
    t == horizon || t.is_multiple_of(every.max(1))
}

/// One row of a learner trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub t: usize,
    pub gap: f64,
    pub est_error: f64,
    pub max_bonus: f64,
    pub potential_sum: f64,
    pub selected: Triplet,
}

/// `lambda_min(kappa H_t(theta_hat_t) - V_t)` at an audited round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominanceAudit {
    pub t: usize,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub policy: Policy,
    pub records: Vec<RunRecord>,
    /// Parameter estimates in round order (for APO: `theta_hat_1 .. theta_hat_{T+1}`).
    pub theta_hats: Vec<Vector>,
    pub samples: Vec<PreferenceSample>,
    pub audits: Vec<DominanceAudit>,
    pub kappa: f64,
    pub lambda_h: f64,
    pub lambda_v: f64,
}

impl RunOutput {
    pub fn history(&self) -> Vec<Vector> {
        self.samples.iter().map(|s| s.z.clone()).collect()
    }

    pub fn final_gap(&self, inst: &Instance) -> Result<f64> {
        suboptimality_gap(inst, &self.policy)
    }
}

fn check_learnable(inst: &Instance, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::config("T", "must be >= 1"));
    }
    if inst.n_actions() < 2 {
        return Err(Error::InvalidInstance("learners need at least two actions per context".into()));
    }
    Ok(())
}

/// `||v||_M` for SPD `M`.
fn m_norm(m: &crate::model::Matrix, v: &Vector) -> f64 {
    v.dot(&(m * v)).max(0.0).sqrt()
}

/// Precomputed `(triplet, z)` pairs for every candidate duel.
#[derive(Debug, Clone)]
struct CandidatePool {
    entries: Vec<(Triplet, Vector)>,
}

impl CandidatePool {
    fn new(inst: &Instance) -> Self {
        let entries = inst
            .candidate_triplets()
            .into_iter()
            .map(|t| (t, inst.feature_diff_unchecked(t)))
            .collect();
        Self { entries }
    }

    /// Lexicographically first maximiser of `score`.
    fn argmax(&self, score: impl Fn(&Vector) -> f64) -> (Triplet, f64) {
        let mut best = (self.entries[0].0, f64::NEG_INFINITY);
        for (t, z) in &self.entries {
            let b = score(z);
            if b > best.1 {
                best = (*t, b);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApoConfig {
    pub horizon: usize,
    pub delta: f64,
    /// Ridge for `H`; defaults to [`default_lambda_h`].
    pub lambda_h: Option<f64>,
    /// Ridge for `V`; defaults to `kappa * lambda_h`.
    pub lambda_v: Option<f64>,
    pub metric: BonusMetric,
    /// Average `theta_hat_2 .. theta_hat_{T+1}` instead of `theta_hat_1 .. theta_hat_T`.
    pub average_shifted: bool,
    pub mle: MleConfig,
    /// Trace cadence; `None` uses [`default_record_every`].
    pub record_every: Option<usize>,
    /// Run the `H >= V / kappa` audit every this many rounds.
    pub audit_every: Option<usize>,
}

impl Default for ApoConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            delta: 0.1,
            lambda_h: None,
            lambda_v: None,
            metric: BonusMetric::H,
            average_shifted: false,
            mle: MleConfig::default(),
            record_every: None,
            audit_every: None,
        }
    }
}

/// Online learner state: data so far, the estimate sequence and the design
/// matrices for the current round.
#[derive(Debug, Clone)]
pub struct ApoState {
    pub samples: Vec<PreferenceSample>,
    pub theta_hats: Vec<Vector>,
    pub design: DesignMatrices,
    pub round: usize,
    grouped: GroupedSamples,
    pool: CandidatePool,
    metric: BonusMetric,
}

impl ApoState {
    pub fn new(inst: &Instance, lambda_h: f64, lambda_v: f64, metric: BonusMetric) -> Result<Self> {
        let d = inst.dim();
        Ok(Self {
            samples: Vec::new(),
            theta_hats: vec![Vector::zeros(d)],
            design: DesignMatrices::new(d, lambda_h, lambda_v)?,
            round: 1,
            grouped: GroupedSamples::new(),
            pool: CandidatePool::new(inst),
            metric,
        })
    }

    pub fn theta_hat(&self) -> &Vector {
        self.theta_hats.last().expect("theta_hat_1 is always present")
    }

    /// Picks the duel with the largest bonus: per context the best unordered
    /// pair, then the best context. Ties go to the lexicographically smallest
    /// `(x, a, a')`, which is what a single global scan in that order yields.
    pub fn select(&self) -> Result<(Triplet, f64)> {
        match self.metric {
            BonusMetric::H => {
                let norm = InverseNorm::new(self.design.h())?;
                Ok(self.pool.argmax(|z| norm.norm(z)))
            }
            BonusMetric::V => Ok(self.pool.argmax(|z| self.design.v_norm(z))),
        }
    }

    /// Records the labelled duel, refits the estimate and rebuilds `H`.
    fn observe(&mut self, inst: &Instance, sample: PreferenceSample, mle: &MleConfig) -> Result<()> {
        self.design.update_v(&sample.z)?;
        self.grouped.push(&sample)?;
        self.samples.push(sample);
        let est = solve_mle(
            &self.grouped,
            inst.s(),
            inst.zero_sum(),
            &mle.warm_started(self.theta_hat().clone()),
        )
        .map_err(|e| e.at_round(self.round))?;
        self.design.rebuild_h(&est.theta)?;
        self.theta_hats.push(est.theta);
        self.round += 1;
        Ok(())
    }
}

/// Exploration-bonus argmax for the current round.
pub fn apo_select(state: &ApoState) -> Result<Triplet> {
    state.select().map(|(t, _)| t)
}

/// Running mean of a window of the estimate sequence.
fn averaged(theta_hats: &[Vector]) -> Vector {
    let mut sum = Vector::zeros(theta_hats[0].len());
    for th in theta_hats {
        sum += th;
    }
    sum / theta_hats.len() as f64
}

/// Active preference optimization. Each round selects the most uncertain
/// duel, observes a label, refits the constrained MLE and rebuilds `H`. The
/// final policy is greedy for the average of the estimates.
pub fn apo_run<R: Rng + ?Sized>(inst: &Instance, cfg: &ApoConfig, rng: &mut R) -> Result<RunOutput> {
    check_learnable(inst, cfg.horizon)?;
    cfg.mle.validate()?;
    let kappa = compute_kappa(inst);
    let lambda_h = cfg.lambda_h.unwrap_or_else(|| default_lambda_h(inst.s()));
    let lambda_v = cfg.lambda_v.unwrap_or(kappa * lambda_h);
    let every = cfg.record_every.unwrap_or_else(|| default_record_every(cfg.horizon));
    let horizon = cfg.horizon;

    let mut state = ApoState::new(inst, lambda_h, lambda_v, cfg.metric)?;
    let mut records = Vec::new();
    let mut audits = Vec::new();
    let mut potential = 0.0;

    for t in 1..=horizon {
        let (triplet, max_bonus) = state.select()?;
        let est_error = m_norm(state.design.h(), &(state.theta_hat() - inst.theta_star()));
        if let Some(k) = cfg.audit_every {
            if k > 0 && t % k == 0 {
                let history: Vec<Vector> = state.design.history().to_vec();
                let margin = h_dominance_margin(&history, state.theta_hat(), lambda_h, kappa)?;
                audits.push(DominanceAudit { t, margin });
            }
        }
        let sample = PreferenceSample::new(inst, triplet, sample_preference(inst, triplet, rng)?)?;
        let q = state.design.v_norm(&sample.z);
        potential += q * q;
        state.observe(inst, sample, &cfg.mle)?;

        if is_recorded(t, horizon, every) {
            let window = if cfg.average_shifted {
                &state.theta_hats[1..=t]
            } else {
                &state.theta_hats[..t]
            };
            let pol = greedy_policy(inst, &averaged(window))?;
            records.push(RunRecord {
                t,
                gap: suboptimality_gap(inst, &pol)?,
                est_error,
                max_bonus,
                potential_sum: potential,
                selected: triplet,
            });
        }
    }

    let window = if cfg.average_shifted {
        &state.theta_hats[1..=horizon]
    } else {
        &state.theta_hats[..horizon]
    };
    let policy = greedy_policy(inst, &averaged(window))?;
    Ok(RunOutput {
        policy,
        records,
        theta_hats: state.theta_hats,
        samples: state.samples,
        audits,
        kappa,
        lambda_h,
        lambda_v,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformConfig {
    pub horizon: usize,
    pub lambda_h: Option<f64>,
    pub lambda_v: Option<f64>,
    pub mle: MleConfig,
    pub record_every: Option<usize>,
}

impl Default for UniformConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            lambda_h: None,
            lambda_v: None,
            mle: MleConfig::default(),
            record_every: None,
        }
    }
}

/// Maps `k in 0..K(K-1)/2` to the `k`-th pair `(a, b)`, `a < b`, in
/// lexicographic order.
fn unordered_pair(mut k: usize, n_actions: usize) -> (usize, usize) {
    for a in 0..n_actions {
        let row = n_actions - a - 1;
        if k < row {
            return (a, a + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair index out of range")
}

/// The uniform learner: contexts i.i.d. uniform, an unordered action pair
/// uniform per context, one MLE fit on all labels, greedy final policy.
///
/// Trace rows refit on the prefix seen so far; they do not influence the
/// sampling, which is fixed in advance.
pub fn uniform_run<R: Rng + ?Sized>(inst: &Instance, cfg: &UniformConfig, rng: &mut R) -> Result<RunOutput> {
    check_learnable(inst, cfg.horizon)?;
    cfg.mle.validate()?;
    let kappa = compute_kappa(inst);
    let lambda_h = cfg.lambda_h.unwrap_or_else(|| default_lambda_h(inst.s()));
    let lambda_v = cfg.lambda_v.unwrap_or(kappa * lambda_h);
    let every = cfg.record_every.unwrap_or_else(|| default_record_every(cfg.horizon));
    let horizon = cfg.horizon;
    let k = inst.n_actions();
    let n_pairs = k * (k - 1) / 2;
    let pool = CandidatePool::new(inst);

    let mut design = DesignMatrices::new(inst.dim(), lambda_h, lambda_v)?;
    let mut grouped = GroupedSamples::new();
    let mut samples = Vec::with_capacity(horizon);
    let mut records = Vec::new();
    let mut potential = 0.0;
    let mut warm = Vector::zeros(inst.dim());
    let mut final_theta = None;

    for t in 1..=horizon {
        let x = rng.random_range(0..inst.n_contexts());
        let (a, b) = unordered_pair(rng.random_range(0..n_pairs), k);
        let triplet = Triplet::new(x, a, b);
        let sample = PreferenceSample::new(inst, triplet, sample_preference(inst, triplet, rng)?)?;
        let q = design.v_norm(&sample.z);
        potential += q * q;
        design.update_v(&sample.z)?;
        grouped.push(&sample)?;
        samples.push(sample);

        if is_recorded(t, horizon, every) {
            let mle = if t == horizon {
                MleConfig {
                    init: Some(Vector::zeros(inst.dim())),
                    ..cfg.mle.clone()
                }
            } else {
                cfg.mle.warm_started(warm.clone())
            };
            let theta = solve_mle(&grouped, inst.s(), inst.zero_sum(), &mle)
                .map_err(|e| e.at_round(t))?
                .theta;
            let h = build_h(design.history(), &theta, lambda_h)?;
            let norm = InverseNorm::new(&h)?;
            let pol = greedy_policy(inst, &theta)?;
            records.push(RunRecord {
                t,
                gap: suboptimality_gap(inst, &pol)?,
                est_error: m_norm(&h, &(&theta - inst.theta_star())),
                max_bonus: pool.argmax(|z| norm.norm(z)).1,
                potential_sum: potential,
                selected: triplet,
            });
            if t == horizon {
                final_theta = Some(theta.clone());
            }
            warm = theta;
        }
    }

    let theta = final_theta.expect("the last round is always recorded");
    Ok(RunOutput {
        policy: greedy_policy(inst, &theta)?,
        records,
        theta_hats: vec![theta],
        samples,
        audits: Vec::new(),
        kappa,
        lambda_h,
        lambda_v,
    })
}

/// Parameter update applied to the whole buffer at the end of each batch.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerUpdate {
    /// `n_steps` projected full-gradient steps of size `eta`.
    GradientSteps { eta: f64, n_steps: usize },
    /// Solve the constrained MLE on the buffer, warm-started.
    Solve(MleConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchApoConfig {
    pub horizon: usize,
    pub batch_size: usize,
    pub inner: InnerUpdate,
    /// Ridge for `V`; defaults to `kappa * lambda_h`.
    pub lambda_v: Option<f64>,
    /// Ridge for the `H` used in trace diagnostics.
    pub lambda_h: Option<f64>,
    /// Cap on candidates scored per batch; a uniform subset is drawn when the
    /// pool is larger.
    pub max_candidates: Option<usize>,
    pub record_every: Option<usize>,
}

impl Default for BatchApoConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            batch_size: 10,
            inner: InnerUpdate::GradientSteps { eta: 0.1, n_steps: 10 },
            lambda_v: None,
            lambda_h: None,
            max_candidates: None,
            record_every: None,
        }
    }
}

/// Batched APO with `V`-norm bonuses: each batch labels the top-`B`
/// candidates of a frozen score, then updates the parameter on the whole
/// buffer and folds the batch into `V`. The final policy is greedy for the
/// last parameter.
pub fn batch_apo_run<R: Rng + ?Sized>(inst: &Instance, cfg: &BatchApoConfig, rng: &mut R) -> Result<RunOutput> {
    check_learnable(inst, cfg.horizon)?;
    if cfg.batch_size == 0 {
        return Err(Error::config("B", "must be >= 1"));
    }
    match &cfg.inner {
        InnerUpdate::GradientSteps { eta, .. } if !(*eta > 0.0) => {
            return Err(Error::config("eta", "must be > 0"));
        }
        InnerUpdate::Solve(mle) => mle.validate()?,
        _ => {}
    }
    let kappa = compute_kappa(inst);
    let lambda_h = cfg.lambda_h.unwrap_or_else(|| default_lambda_h(inst.s()));
    let lambda_v = cfg.lambda_v.unwrap_or(kappa * lambda_h);
    let every = cfg.record_every.unwrap_or_else(|| default_record_every(cfg.horizon));
    let horizon = cfg.horizon;
    let pool = CandidatePool::new(inst);

    let mut v = DesignMatrices::new(inst.dim(), lambda_h, lambda_v)?;
    // Per-sample V for the potential sum.
    let mut potential_v = DesignMatrices::new(inst.dim(), lambda_h, lambda_v)?;
    let mut potential = 0.0;
    let mut grouped = GroupedSamples::new();
    let mut samples: Vec<PreferenceSample> = Vec::with_capacity(horizon);
    let mut theta = Vector::zeros(inst.dim());
    let mut theta_hats = vec![theta.clone()];
    let mut records = Vec::new();
    let mut t = 0;

    while t < horizon {
        let b = cfg.batch_size.min(horizon - t);
        let mut idx: Vec<usize> = (0..pool.entries.len()).collect();
        if let Some(cap) = cfg.max_candidates {
            if cap < idx.len() {
                idx = rand::seq::index::sample(rng, pool.entries.len(), cap.max(1)).into_vec();
                idx.sort_unstable();
            }
        }
        let mut scored: Vec<(usize, f64)> = idx.into_iter().map(|i| (i, v.v_norm(&pool.entries[i].1))).collect();
        // Stable sort keeps lexicographic order among equal scores.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));

        let mut picked = Vec::with_capacity(b);
        for &(i, score) in scored.iter().take(b) {
            let (triplet, z) = &pool.entries[i];
            let y = sample_preference(inst, *triplet, rng)?;
            let sample = PreferenceSample {
                triplet: *triplet,
                y,
                z: z.clone(),
            };
            let q = potential_v.v_norm(z);
            potential += q * q;
            potential_v.update_v(z)?;
            grouped.push(&sample)?;
            samples.push(sample);
            t += 1;
            picked.push((t, *triplet, score, potential));
        }
        if picked.len() < b {
            // Pool exhausted within the batch: the budget cannot be spent.
            return Err(Error::config(
                "B",
                format!("batch of {b} exceeds the {} available candidates", picked.len()),
            ));
        }

        theta = match &cfg.inner {
            InnerUpdate::GradientSteps { eta, n_steps } => {
                let mle = MleConfig {
                    max_iters: (*n_steps).max(1),
                    tol: f64::MIN_POSITIVE,
                    step: StepRule::Fixed(*eta),
                    init: Some(theta.clone()),
                };
                if *n_steps == 0 {
                    theta.clone()
                } else {
                    solve_mle(&grouped, inst.s(), inst.zero_sum(), &mle)
                        .map_err(|e| e.at_round(t))?
                        .theta
                }
            }
            InnerUpdate::Solve(mle) => {
                solve_mle(&grouped, inst.s(), inst.zero_sum(), &mle.warm_started(theta.clone()))
                    .map_err(|e| e.at_round(t))?
                    .theta
            }
        };
        theta = project_theta(&theta, inst.s(), inst.zero_sum());
        theta_hats.push(theta.clone());
        for s in &samples[samples.len() - b..] {
            v.update_v(&s.z)?;
        }

        if picked.iter().any(|p| is_recorded(p.0, horizon, every)) {
            let pol = greedy_policy(inst, &theta)?;
            let gap = suboptimality_gap(inst, &pol)?;
            let h = build_h(v.history(), &theta, lambda_h)?;
            let est_error = m_norm(&h, &(&theta - inst.theta_star()));
            for (round, triplet, score, pot) in picked {
                if is_recorded(round, horizon, every) {
                    records.push(RunRecord {
                        t: round,
                        gap,
                        est_error,
                        max_bonus: score,
                        potential_sum: pot,
                        selected: triplet,
                    });
                }
            }
        }
    }

    Ok(RunOutput {
        policy: greedy_policy(inst, &theta)?,
        records,
        theta_hats,
        samples,
        audits: Vec::new(),
        kappa,
        lambda_h,
        lambda_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{lower_bound_bad_context, make_lower_bound_instance, make_random_instance};
    use crate::model::{context_gap, Instance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_row_slice(xs)
    }

    fn small_instance() -> Instance {
        Instance::new(
            vec![
                vec![v(&[0.9, 0.1]), v(&[-0.2, 0.7]), v(&[0.1, -0.8])],
                vec![v(&[0.5, 0.5]), v(&[-0.6, 0.0]), v(&[0.3, -0.3])],
            ],
            v(&[0.7, -0.7]),
            1.0,
            1.0,
            true,
        )
        .unwrap()
    }

    #[test]
    fn pair_enumeration() {
        let pairs: Vec<_> = (0..6).map(|k| unordered_pair(k, 4)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn first_selection_maximises_norm() {
        let inst = small_instance();
        let state = ApoState::new(&inst, 0.5, 0.5, BonusMetric::H).unwrap();
        let (t, b) = state.select().unwrap();
        let best = inst
            .candidate_triplets()
            .into_iter()
            .map(|c| inst.feature_diff(c).unwrap().norm())
            .fold(0.0, f64::max);
        assert!((inst.feature_diff(t).unwrap().norm() - best).abs() < 1e-15);
        assert!((b - best / 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_instance_ties_to_first_triplet() {
        let phi = v(&[0.3, 0.1]);
        let inst = Instance::new(
            vec![vec![phi.clone(), phi.clone(), phi.clone()], vec![phi.clone(), phi.clone(), phi]],
            v(&[0.0, 0.0]),
            1.0,
            1.0,
            false,
        )
        .unwrap();
        let state = ApoState::new(&inst, 1.0, 1.0, BonusMetric::H).unwrap();
        assert_eq!(state.select().unwrap(), (Triplet::new(0, 0, 1), 0.0));
    }

    #[test]
    fn apo_queries_unexplored_bad_context() {
        let n = 50;
        let inst = make_lower_bound_instance(n).unwrap();
        let lambda_h = default_lambda_h(inst.s());
        let mut state = ApoState::new(&inst, lambda_h, lambda_h, BonusMetric::H).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let good = Triplet::new(0, 0, 1);
        for _ in 0..5 {
            let s = PreferenceSample::new(&inst, good, sample_preference(&inst, good, &mut rng).unwrap()).unwrap();
            state.observe(&inst, s, &MleConfig::default()).unwrap();
        }
        let bad = lower_bound_bad_context(n);
        let (t, b) = state.select().unwrap();
        assert_eq!(t.context, bad);
        let norm = InverseNorm::new(state.design.h()).unwrap();
        let good_bonus = norm.norm(&inst.feature_diff(good).unwrap());
        assert!(b > good_bonus);
    }

    #[test]
    fn apo_single_round_uses_zero_estimate() {
        let inst = small_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ApoConfig {
            horizon: 1,
            ..ApoConfig::default()
        };
        let out = apo_run(&inst, &cfg, &mut rng).unwrap();
        assert_eq!(out.policy, Policy::Deterministic(vec![0, 0]));
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.theta_hats.len(), 2);
    }

    #[test]
    fn apo_trace_invariants() {
        let inst = make_random_instance(6, 4, 3, 1.5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = ApoConfig {
            horizon: 120,
            audit_every: Some(20),
            ..ApoConfig::default()
        };
        let out = apo_run(&inst, &cfg, &mut rng).unwrap();
        assert_eq!(out.records.len(), 120);
        for th in &out.theta_hats {
            assert!(th.norm() <= inst.s() + 1e-10 && th.sum().abs() < 1e-10);
        }
        for w in out.records.windows(2) {
            assert!(w[1].potential_sum >= w[0].potential_sum);
        }
        assert!(out.records.iter().all(|r| r.gap >= 0.0));
        assert_eq!(out.audits.len(), 6);
        assert!(out.audits.iter().all(|a| a.margin >= -1e-8));

        // The recorded max bonus is the exhaustive maximum at selection time.
        let mut replay = ApoState::new(&inst, out.lambda_h, out.lambda_v, BonusMetric::H).unwrap();
        for (rec, sample) in out.records.iter().zip(&out.samples).take(40) {
            let brute = inst
                .candidate_triplets()
                .into_iter()
                .map(|c| crate::design::weighted_inv_norm(replay.design.h(), &inst.feature_diff(c).unwrap()).unwrap())
                .fold(0.0, f64::max);
            assert!((brute - rec.max_bonus).abs() < 1e-9 * brute.max(1.0));
            replay.observe(&inst, sample.clone(), &MleConfig::default()).unwrap();
        }
    }

    #[test]
    fn average_shift_flag() {
        let inst = small_instance();
        let cfg = ApoConfig {
            horizon: 1,
            average_shifted: true,
            ..ApoConfig::default()
        };
        let out = apo_run(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(out.policy, greedy_policy(&inst, &out.theta_hats[1]).unwrap());
    }

    #[test]
    fn uniform_seed_determinism_and_final_fit() {
        let inst = make_lower_bound_instance(100).unwrap();
        let cfg = UniformConfig {
            horizon: 30,
            ..UniformConfig::default()
        };
        let a = uniform_run(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = uniform_run(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let ctx = |o: &RunOutput| o.samples.iter().map(|s| s.triplet).collect::<Vec<_>>();
        assert_eq!(ctx(&a), ctx(&b));
        assert_eq!(a.records.last().unwrap().t, 30);
        let bad = lower_bound_bad_context(100);
        if a.samples.iter().all(|s| s.triplet.context != bad && s.y) {
            let g = context_gap(&inst, &a.policy, bad).unwrap();
            assert!((g - inst.s() / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_single_context_consistency() {
        let inst = Instance::new(
            vec![vec![v(&[0.8, 0.0]), v(&[0.0, 0.8]), v(&[-0.5, -0.5])]],
            v(&[0.6, -0.6]),
            1.0,
            1.0,
            true,
        )
        .unwrap();
        let cfg = UniformConfig {
            horizon: 10_000,
            ..UniformConfig::default()
        };
        let out = uniform_run(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(out.final_gap(&inst).unwrap(), 0.0);
    }

    #[test]
    fn batch_exhausts_pool_and_orders_picks() {
        let inst = small_instance();
        let n = inst.candidate_triplets().len();
        let cfg = BatchApoConfig {
            horizon: n,
            batch_size: n,
            ..BatchApoConfig::default()
        };
        let out = batch_apo_run(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut seen: Vec<_> = out.samples.iter().map(|s| s.triplet).collect();
        seen.sort();
        assert_eq!(seen, inst.candidate_triplets());
        for w in out.records.windows(2) {
            assert!(w[1].max_bonus <= w[0].max_bonus);
        }
    }

    #[test]
    fn batch_never_repeats_within_a_batch() {
        let inst = make_random_instance(5, 4, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let cfg = BatchApoConfig {
            horizon: 100,
            batch_size: 8,
            max_candidates: Some(20),
            ..BatchApoConfig::default()
        };
        let out = batch_apo_run(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out.samples.len(), 100);
        for chunk in out.samples.chunks(8) {
            let mut ts: Vec<_> = chunk.iter().map(|s| s.triplet).collect();
            ts.sort();
            ts.dedup();
            assert_eq!(ts.len(), chunk.len());
        }
        for th in &out.theta_hats {
            assert!(th.norm() <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn zero_horizon_rejected() {
        let inst = small_instance();
        let cfg = ApoConfig {
            horizon: 0,
            ..ApoConfig::default()
        };
        assert!(apo_run(&inst, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
