//! Numeric checks of the analysis inequalities and closed-form bound curves.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_sigmoid, sigmoid, sigmoid_dot};

/// Tolerance applied by the self-concordance check.
pub const SELF_CONCORDANCE_TOL: f64 = 1e-9;
/// Tolerance applied by the KL and Bretagnolle–Huber checks.
pub const KL_TOL: f64 = 1e-12;
pub const QUADRATURE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub points_checked: u64,
    /// Largest amount by which the inequality fails (negative when it holds
    /// everywhere with room to spare).
    pub max_violation: f64,
    pub ok: bool,
}

impl BoundReport {
    fn new(name: &str, points_checked: u64, max_violation: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            points_checked,
            max_violation,
            ok: max_violation <= tol,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64, m: f64, fm: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(&f, a, fa, b, fb, m, fm, whole, tol, 48)
}

/// `int_0^1 (1 - v) sigmoid'(z + v (z' - z)) dv`.
pub fn tilde_alpha(z: f64, z_prime: f64) -> f64 {
    adaptive_simpson(|v| (1.0 - v) * sigmoid_dot(z + v * (z_prime - z)), 0.0, 1.0, QUADRATURE_TOL)
}

/// The same integral after substituting `v -> 1 - v`.
pub fn tilde_alpha_substituted(z: f64, z_prime: f64) -> f64 {
    adaptive_simpson(|v| v * sigmoid_dot(z_prime + v * (z - z_prime)), 0.0, 1.0, QUADRATURE_TOL)
}

/// Checks `tilde_alpha(z, z') >= sigmoid'(z') / (c (2 + |z - z'|)^2)` on a
/// square grid.
pub fn check_self_concordance_bound(grid_min: f64, grid_max: f64, step: f64, c: f64) -> BoundReport {
    let pts = grid(grid_min, grid_max, step);
    let mut worst = f64::NEG_INFINITY;
    for &z in &pts {
        for &zp in &pts {
            let rhs = sigmoid_dot(zp) / (c * (2.0 + (z - zp).abs()).powi(2));
            worst = worst.max(rhs - tilde_alpha(z, zp));
        }
    }
    BoundReport::new("self_concordance", (pts.len() * pts.len()) as u64, worst, SELF_CONCORDANCE_TOL)
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + i as f64 * step).collect()
}

/// `KL(Ber(sigmoid(p)) || Ber(sigmoid(q)))`.
pub fn kl_ber_logistic(p: f64, q: f64) -> f64 {
    let kl = (1.0 - sigmoid(p)) * (q - p) + log_sigmoid(p) - log_sigmoid(q);
    kl.max(0.0)
}

/// Checks `KL <= (p - q)^2 / 8` on a square logit grid.
pub fn check_kl_bound(grid_min: f64, grid_max: f64, step: f64) -> BoundReport {
    let pts = grid(grid_min, grid_max, step);
    let mut worst = f64::NEG_INFINITY;
    for &p in &pts {
        for &q in &pts {
            worst = worst.max(kl_ber_logistic(p, q) - (p - q).powi(2) / 8.0);
        }
    }
    BoundReport::new("kl_quadratic", (pts.len() * pts.len()) as u64, worst, KL_TOL)
}

/// KL divergence between finite distributions with a shared support.
pub fn kl_finite(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum::<f64>().max(0.0))
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::SupportMismatch(format!("supports of size {} and {}", p.len(), q.len())));
    }
    for (name, dist) in [("P", p), ("Q", q)] {
        if dist.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::SupportMismatch(format!("{name} must be strictly positive")));
        }
        let total: f64 = dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::SupportMismatch(format!("{name} sums to {total}")));
        }
    }
    Ok(())
}

/// Checks `P(A) + Q(A^c) >= exp(-KL(P, Q)) / 2` for one event, or for every
/// event when `event` is `None` (supports of at most 16 points).
pub fn check_bretagnolle_huber(p: &[f64], q: &[f64], event: Option<&[bool]>) -> Result<BoundReport> {
    let kl = kl_finite(p, q)?;
    let rhs = 0.5 * (-kl).exp();
    let lhs = |mask: &dyn Fn(usize) -> bool| -> f64 {
        (0..p.len()).map(|i| if mask(i) { p[i] } else { q[i] }).sum()
    };
    match event {
        Some(ev) => {
            if ev.len() != p.len() {
                return Err(Error::SupportMismatch(format!("event mask has {} entries, support has {}", ev.len(), p.len())));
            }
            let v = rhs - lhs(&|i| ev[i]);
            Ok(BoundReport::new("bretagnolle_huber", 1, v, KL_TOL))
        }
        None => {
            if p.len() > 16 {
                return Err(Error::SupportMismatch(format!(
                    "exhaustive events need a support of at most 16 points, got {}",
                    p.len()
                )));
            }
            let n_events = 1u64 << p.len();
            let worst = (0..n_events)
                .map(|m| rhs - lhs(&|i| m >> i & 1 == 1))
                .fold(f64::NEG_INFINITY, f64::max);
            Ok(BoundReport::new("bretagnolle_huber", n_events, worst, KL_TOL))
        }
    }
}

fn random_simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Bretagnolle–Huber over `pairs` random distribution pairs on `n` points,
/// every event of each pair.
pub fn check_bretagnolle_huber_random(pairs: usize, n: usize, seed: u64) -> Result<BoundReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for _ in 0..pairs {
        let p = random_simplex(n, &mut rng);
        let q = random_simplex(n, &mut rng);
        let r = check_bretagnolle_huber(&p, &q, None)?;
        worst = worst.max(r.max_violation);
        checked += r.points_checked;
    }
    Ok(BoundReport::new("bretagnolle_huber_random", checked, worst, KL_TOL))
}

/// Suboptimality-gap bound curve for APO (shape overlay, `c = 1` by default).
pub fn apo_gap_bound(t: f64, d: f64, s: f64, kappa: f64, lambda_h: f64, delta: f64, c: f64) -> f64 {
    let conf = d * (s * t / d).ln() + (t / delta).ln();
    let potential = (1.0 + t / (lambda_h * kappa * d)).ln();
    c * s.powf(1.5) * (conf * potential * kappa * d / t).sqrt()
}

/// Gap bound curve for APO-Gen: `sqrt(log(N T / delta) d_E / T)`.
pub fn gen_gap_bound(t: f64, class_size: f64, d_e: f64, delta: f64) -> f64 {
    ((class_size * t / delta).ln() * d_e / t).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryCheckConfig {
    pub self_concordance_step: f64,
    pub kl_step: f64,
    pub c: f64,
    pub bh_pairs: usize,
    pub bh_points: usize,
    pub seed: u64,
}

impl Default for TheoryCheckConfig {
    fn default() -> Self {
        Self {
            self_concordance_step: 0.1,
            kl_step: 0.05,
            c: 1.01,
            bh_pairs: 100,
            bh_points: 8,
            seed: 0,
        }
    }
}

pub fn run_all_checks(cfg: &TheoryCheckConfig) -> Result<Vec<BoundReport>> {
    Ok(vec![
        check_self_concordance_bound(-10.0, 10.0, cfg.self_concordance_step, cfg.c),
        check_kl_bound(-10.0, 10.0, cfg.kl_step),
        check_bretagnolle_huber(&[0.1, 0.9], &[0.9, 0.1], None)?,
        check_bretagnolle_huber_random(cfg.bh_pairs, cfg.bh_points, cfg.seed)?,
    ])
}
