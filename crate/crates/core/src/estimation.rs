//! Constrained maximum-likelihood estimation of the reward parameter.
//!
//! The negative log-likelihood of BTL preference data is minimised over
//! `Theta = {theta : ||theta|| <= S}` (optionally intersected with the
//! zero-sum hyperplane) by projected gradient descent with an Armijo
//! backtracking line search seeded by Barzilai-Borwein steps.

use std::collections::HashMap;
use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::model::{sigmoid, softplus, PreferenceSample, Triplet, Vector};

/// Step-size rule for [`solve_mle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    Backtracking { factor: f64, sufficient_decrease: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            factor: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleConfig {
    pub max_iters: usize,
    /// Threshold on the norm of the gradient mapping.
    pub tol: f64,
    pub step: StepRule,
    /// Starting point; `None` means the zero vector.
    pub init: Option<Vector>,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-8,
            step: StepRule::default(),
            init: None,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::config("mle.max_iters", "must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("mle.tol", "must be > 0"));
        }
        match self.step {
            StepRule::Fixed(s) if !(s > 0.0) => Err(Error::config("mle.step", "fixed step must be > 0")),
            StepRule::Backtracking { factor, sufficient_decrease }
                if !(factor > 0.0 && factor < 1.0 && sufficient_decrease > 0.0 && sufficient_decrease < 1.0) =>
            {
                Err(Error::config("mle.step", "backtracking factor and decrease must lie in (0, 1)"))
            }
            _ => Ok(()),
        }
    }

    pub fn warm_started(&self, init: Vector) -> Self {
        Self {
            init: Some(init),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub theta: Vector,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Anything that can be summarised as a multiset of feature differences with
/// win / loss counts.
pub trait LossData {
    /// Calls `f(z, wins, losses)` for every stored direction.
    fn visit(&self, f: &mut dyn FnMut(&Vector, f64, f64));

    /// Dimension of the stored vectors, `None` when empty.
    fn data_dim(&self) -> Option<usize>;
}

impl LossData for [PreferenceSample] {
    fn visit(&self, f: &mut dyn FnMut(&Vector, f64, f64)) {
        for s in self {
            if s.y {
                f(&s.z, 1.0, 0.0)
            } else {
                f(&s.z, 0.0, 1.0)
            }
        }
    }

    fn data_dim(&self) -> Option<usize> {
        self.first().map(|s| s.z.len())
    }
}

impl LossData for Vec<PreferenceSample> {
    fn visit(&self, f: &mut dyn FnMut(&Vector, f64, f64)) {
        self.as_slice().visit(f)
    }

    fn data_dim(&self) -> Option<usize> {
        self.as_slice().data_dim()
    }
}

/// Samples aggregated per queried triplet. Learners query from a finite pool,
/// so this keeps refits at O(distinct triplets) per gradient evaluation.
#[derive(Debug, Clone, Default)]
pub struct GroupedSamples {
    index: HashMap<Triplet, usize>,
    groups: Vec<(Vector, f64, f64)>,
    total: usize,
}

impl GroupedSamples {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sample: &PreferenceSample) -> Result<()> {
        if let Some(d) = self.data_dim() {
            if sample.z.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: sample.z.len(),
                });
            }
        }
        let slot = match self.index.get(&sample.triplet) {
            Some(&i) => i,
            None => {
                self.groups.push((sample.z.clone(), 0.0, 0.0));
                self.index.insert(sample.triplet, self.groups.len() - 1);
                self.groups.len() - 1
            }
        };
        if sample.y {
            self.groups[slot].1 += 1.0;
        } else {
            self.groups[slot].2 += 1.0;
        }
        self.total += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn distinct(&self) -> usize {
        self.groups.len()
    }
}

impl LossData for GroupedSamples {
    fn visit(&self, f: &mut dyn FnMut(&Vector, f64, f64)) {
        for (z, wins, losses) in &self.groups {
            f(z, *wins, *losses)
        }
    }

    fn data_dim(&self) -> Option<usize> {
        self.groups.first().map(|g| g.0.len())
    }
}

fn check_dim<D: LossData + ?Sized>(data: &D, theta: &Vector) -> Result<()> {
    match data.data_dim() {
        Some(d) if d != theta.len() => Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: d,
        }),
        _ => Ok(()),
    }
}

fn loss_unchecked<D: LossData + ?Sized>(data: &D, theta: &Vector) -> f64 {
    let mut loss = 0.0;
    data.visit(&mut |z, wins, losses| {
        let w = z.dot(theta);
        if wins > 0.0 {
            loss += wins * softplus(-w);
        }
        if losses > 0.0 {
            loss += losses * softplus(w);
        }
    });
    loss
}

fn loss_grad_unchecked<D: LossData + ?Sized>(data: &D, theta: &Vector) -> (f64, Vector) {
    let mut loss = 0.0;
    let mut grad = Vector::zeros(theta.len());
    data.visit(&mut |z, wins, losses| {
        let w = z.dot(theta);
        if wins > 0.0 {
            loss += wins * softplus(-w);
        }
        if losses > 0.0 {
            loss += losses * softplus(w);
        }
        // (sigma(w) - y) summed over the group
        let coef = (wins + losses) * sigmoid(w) - wins;
        grad.axpy(coef, z, 1.0);
    });
    (loss, grad)
}

/// Binary cross-entropy of the labels under `sigmoid(z^T theta)`.
pub fn log_loss<D: LossData + ?Sized>(samples: &D, theta: &Vector) -> Result<f64> {
    check_dim(samples, theta)?;
    Ok(loss_unchecked(samples, theta))
}

/// `sum_s (sigmoid(z_s^T theta) - y_s) z_s`.
pub fn log_loss_grad<D: LossData + ?Sized>(samples: &D, theta: &Vector) -> Result<Vector> {
    check_dim(samples, theta)?;
    Ok(loss_grad_unchecked(samples, theta).1)
}

/// Euclidean projection onto `Theta`. The zero-sum hyperplane passes through
/// the origin, so centring then radially shrinking is the exact projection
/// onto the intersection.
pub fn project_theta(v: &Vector, s: f64, zero_sum: bool) -> Vector {
    let mut out = if zero_sum {
        let mean = v.mean();
        v.map(|c| c - mean)
    } else {
        v.clone()
    };
    let norm = out.norm();
    if norm > s {
        if s <= 0.0 {
            out.fill(0.0);
        } else {
            out *= s / norm;
        }
    }
    out
}

/// Projected gradient descent on the log-loss over `Theta`.
pub fn solve_mle<D: LossData + ?Sized>(
    samples: &D,
    s: f64,
    zero_sum: bool,
    config: &MleConfig,
) -> Result<ThetaEstimate> {
    config.validate()?;
    let d = match (&config.init, samples.data_dim()) {
        (Some(init), _) => init.len(),
        (None, Some(d)) => d,
        (None, None) => {
            return Err(Error::config("mle.init", "empty data needs an explicit init dimension"));
        }
    };
    let init = config.init.clone().unwrap_or_else(|| Vector::zeros(d));
    check_dim(samples, &init)?;

    let mut theta = project_theta(&init, s, zero_sum);
    let (mut loss, mut grad) = loss_grad_unchecked(samples, &theta);
    let fail = |iteration: usize, theta: &Vector| Error::NumericalFailure {
        iteration,
        round: None,
        iterate: theta.iter().copied().collect(),
    };
    if !loss.is_finite() {
        return Err(fail(0, &theta));
    }

    // Global Lipschitz constant of the gradient: sigmoid_dot <= 1/4.
    let mut lipschitz = 0.0;
    samples.visit(&mut |z, wins, losses| lipschitz += 0.25 * (wins + losses) * z.norm_squared());
    let mut step = match config.step {
        StepRule::Fixed(step) => step,
        StepRule::Backtracking { .. } => 1.0 / lipschitz.max(1e-12),
    };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        let trial = project_theta(&(&theta - &grad * step), s, zero_sum);
        let mapping = (&theta - &trial).norm() / step;
        if mapping < config.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (next, next_loss, next_grad) = match config.step {
            StepRule::Fixed(_) => {
                let (l, g) = loss_grad_unchecked(samples, &trial);
                (trial, l, g)
            }
            StepRule::Backtracking {
                factor,
                sufficient_decrease,
            } => {
                let mut candidate = trial;
                let mut tries = 0;
                loop {
                    let cand_loss = loss_unchecked(samples, &candidate);
                    let decrease = grad.dot(&(&candidate - &theta));
                    if cand_loss.is_finite() && cand_loss <= loss + sufficient_decrease * decrease {
                        let (l, g) = loss_grad_unchecked(samples, &candidate);
                        break (candidate, l, g);
                    }
                    tries += 1;
                    step *= factor;
                    if tries > 200 || step < 1e-300 {
                        if !cand_loss.is_finite() {
                            return Err(fail(iterations, &candidate));
                        }
                        // Line search stalled at machine precision: the
                        // current point is as good as this arithmetic allows.
                        return Ok(ThetaEstimate {
                            theta,
                            final_loss: loss,
                            iterations,
                            converged: false,
                        });
                    }
                    candidate = project_theta(&(&theta - &grad * step), s, zero_sum);
                }
            }
        };
        if !next_loss.is_finite() {
            return Err(fail(iterations, &next));
        }

        if let StepRule::Backtracking { .. } = config.step {
            let ds = &next - &theta;
            let dg = &next_grad - &grad;
            let curvature = ds.dot(&dg);
            if curvature > 0.0 {
                step = (ds.norm_squared() / curvature).clamp(1e-12, 1e12);
            }
        }
        theta = next;
        loss = next_loss;
        grad = next_grad;
    }

    Ok(ThetaEstimate {
        theta,
        final_loss: loss,
        iterations,
        converged,
    })
}

/// Estimation-error radius `C S^{3/2} sqrt(d log(S t / d) + log(t / delta))`,
/// with both log arguments clamped below at `e`.
pub fn gamma_radius(t: usize, d: usize, s: f64, delta: f64, c: f64) -> f64 {
    let t = t as f64;
    let d = d as f64;
    let a = (s * t / d).max(E).ln();
    let b = (t / delta).max(E).ln();
    c * s.powf(1.5) * (d * a + b).sqrt()
}

/// Likelihood-ratio confidence radius
/// `sqrt(10 d log(S t / (4 d) + e) + 2 (e - 2 + S) log(1 / delta))`.
pub fn beta_mle_radius(t: usize, d: usize, s: f64, delta: f64) -> f64 {
    let t = t as f64;
    let d = d as f64;
    (10.0 * d * (s * t / (4.0 * d) + E).ln() + 2.0 * (E - 2.0 + s) * (1.0 / delta).ln()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Triplet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(z: &[f64], y: bool, ctx: usize) -> PreferenceSample {
        PreferenceSample {
            triplet: Triplet::new(ctx, 0, 1),
            y,
            z: Vector::from_row_slice(z),
        }
    }

    fn random_samples(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<PreferenceSample> {
        (0..n)
            .map(|i| {
                let z: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
                sample(&z, rng.random_bool(0.5), i)
            })
            .collect()
    }

    #[test]
    fn loss_hand_values() {
        let empty: Vec<PreferenceSample> = vec![];
        assert_eq!(log_loss(&empty, &Vector::zeros(2)).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = random_samples(&mut rng, 7, 3);
        let l0 = log_loss(&data, &Vector::zeros(3)).unwrap();
        assert!((l0 - 7.0 * 2f64.ln()).abs() < 1e-12);
        let one = vec![sample(&[1.0, 0.0], true, 0)];
        let l = log_loss(&one, &Vector::from_row_slice(&[2.0, 0.0])).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);
        assert!(log_loss(&one, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn gradient_simple_cases() {
        let empty: Vec<PreferenceSample> = vec![];
        assert_eq!(log_loss_grad(&empty, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
        let one = vec![sample(&[0.4, -1.0], true, 0)];
        let g = log_loss_grad(&one, &Vector::zeros(2)).unwrap();
        assert!((g - Vector::from_row_slice(&[-0.2, 0.5])).norm() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let d = rng.random_range(1..6);
            let n = rng.random_range(1..40);
            let data = random_samples(&mut rng, n, d);
            let theta = Vector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
            let g = log_loss_grad(&data, &theta).unwrap();
            let h = 1e-6;
            let fd = Vector::from_fn(d, |i, _| {
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[i] += h;
                m[i] -= h;
                (log_loss(&data, &p).unwrap() - log_loss(&data, &m).unwrap()) / (2.0 * h)
            });
            let rel = (&g - &fd).norm() / g.norm().max(1e-8);
            assert!(rel <= 1e-5, "relative error {rel}");
        }
    }

    #[test]
    fn grouped_matches_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_samples(&mut rng, 6, 3);
        let mut flat = Vec::new();
        let mut grouped = GroupedSamples::new();
        for _ in 0..20 {
            let mut s = base[rng.random_range(0..6)].clone();
            s.y = rng.random_bool(0.3);
            grouped.push(&s).unwrap();
            flat.push(s);
        }
        assert_eq!(grouped.len(), 20);
        assert!(grouped.distinct() <= 6);
        let theta = Vector::from_row_slice(&[0.3, -0.7, 1.1]);
        assert!((log_loss(&flat, &theta).unwrap() - log_loss(&grouped, &theta).unwrap()).abs() < 1e-12);
        let diff = log_loss_grad(&flat, &theta).unwrap() - log_loss_grad(&grouped, &theta).unwrap();
        assert!(diff.norm() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let v = Vector::from_row_slice(&[0.2, -0.2]);
        assert_eq!(project_theta(&v, 1.0, true), v);
        let ones = Vector::from_element(4, 3.0);
        assert!(project_theta(&ones, 1.0, true).norm() < 1e-15);
        let p = project_theta(&Vector::from_row_slice(&[3.0, 4.0]), 1.0, false);
        assert!((p - Vector::from_row_slice(&[0.6, 0.8])).norm() < 1e-15);
        assert_eq!(project_theta(&Vector::from_row_slice(&[3.0, 4.0]), 0.0, false).norm(), 0.0);
    }

    #[test]
    fn mle_saturated_boundary_solution() {
        let alpha = 2.0 * 999f64.ln();
        let data: Vec<_> = (0..50).map(|_| sample(&[1.0, 0.0], true, 0)).collect();
        let est = solve_mle(&data, alpha, false, &MleConfig::default()).unwrap();
        assert!((est.theta[0] - alpha).abs() < 1e-4, "{}", est.theta);
        assert!(est.theta[1].abs() < 1e-4);
    }

    #[test]
    fn mle_empty_and_warm_start() {
        let empty: Vec<PreferenceSample> = vec![];
        let est = solve_mle(&empty, 1.0, true, &MleConfig::default().warm_started(Vector::zeros(3))).unwrap();
        assert_eq!(est.theta, Vector::zeros(3));
        assert!(est.converged);
        let far = Vector::from_row_slice(&[5.0, 1.0, 0.0]);
        let est = solve_mle(&empty, 1.0, true, &MleConfig::default().warm_started(far)).unwrap();
        assert!(est.theta.norm() <= 1.0 + 1e-12 && est.theta.sum().abs() < 1e-12);
    }

    #[test]
    fn mle_beats_random_points_in_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let data = random_samples(&mut rng, 30, 3);
            let est = solve_mle(&data, 1.0, true, &MleConfig::default()).unwrap();
            assert!(est.converged);
            assert!(est.theta.sum().abs() < 1e-10 && est.theta.norm() <= 1.0 + 1e-10);
            assert!(est.final_loss <= 30.0 * 2f64.ln() + 1e-12);
            for _ in 0..100 {
                let raw = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                let p = project_theta(&raw, 1.0, true);
                assert!(est.final_loss <= log_loss(&data, &p).unwrap() + 1e-8);
            }
        }
    }

    #[test]
    fn fixed_step_also_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_samples(&mut rng, 20, 2);
        let cfg = MleConfig {
            step: StepRule::Fixed(0.05),
            ..MleConfig::default()
        };
        let est = solve_mle(&data, 2.0, false, &cfg).unwrap();
        assert!(est.final_loss <= log_loss(&data, &Vector::zeros(2)).unwrap());
    }

    #[test]
    fn radii_formulas() {
        let direct = 1.0 * (2.0 * (100.0f64 / 2.0).ln() + (100.0f64 / 0.1).ln()).sqrt();
        assert!((gamma_radius(100, 2, 1.0, 0.1, 1.0) - direct).abs() < 1e-12);
        assert!((gamma_radius(100, 2, 1.0, 0.1, 2.0) - 2.0 * direct).abs() < 1e-12);
        let mut prev = 0.0;
        for t in 2..500 {
            let g = gamma_radius(t, 2, 1.0, 0.1, 1.0);
            assert!(g >= prev);
            prev = g;
        }
        let b1 = beta_mle_radius(50, 2, 1.0, 1.0);
        assert!((b1 - (20.0 * (50.0f64 / 8.0 + E).ln()).sqrt()).abs() < 1e-12);
        let direct = (20.0 * (50.0 / 8.0 + E).ln() + 2.0 * (E - 1.0) * (20.0f64).ln()).sqrt();
        assert!((beta_mle_radius(50, 2, 1.0, 0.05) - direct).abs() < 1e-12);
        assert!(beta_mle_radius(50, 2, 2.0, 0.05) > beta_mle_radius(50, 2, 1.0, 0.05));
    }

    proptest! {
        #[test]
        fn loss_is_convex(seed in 0u64..10_000, lambda in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_samples(&mut rng, 15, 3);
            let a = project_theta(&Vector::from_fn(3, |_, _| rng.random_range(-3.0..3.0)), 2.0, true);
            let b = project_theta(&Vector::from_fn(3, |_, _| rng.random_range(-3.0..3.0)), 2.0, true);
            let mid = &a * lambda + &b * (1.0 - lambda);
            let lhs = log_loss(&data, &mid).unwrap();
            let rhs = lambda * log_loss(&data, &a).unwrap() + (1.0 - lambda) * log_loss(&data, &b).unwrap();
            prop_assert!(lhs <= rhs + 1e-10);
        }

        #[test]
        fn projection_idempotent_nonexpansive(
            u in proptest::collection::vec(-5.0f64..5.0, 4),
            v in proptest::collection::vec(-5.0f64..5.0, 4),
            s in 0.0f64..3.0,
            zero_sum in any::<bool>(),
        ) {
            let u = Vector::from_vec(u);
            let v = Vector::from_vec(v);
            let pu = project_theta(&u, s, zero_sum);
            let pv = project_theta(&v, s, zero_sum);
            prop_assert!((project_theta(&pu, s, zero_sum) - &pu).norm() < 1e-12);
            prop_assert!((&pu - &pv).norm() <= (&u - &v).norm() + 1e-12);
        }
    }
}
