//! Design matrices and exploration bonuses.
//!
//! `H(theta) = sum_s sigmoid_dot(z_s^T theta) z_s z_s^T + lambda_H I` is the
//! curvature of the regularised log-loss and is rebuilt whenever the estimate
//! moves. `V = sum_s z_s z_s^T + lambda_V I` is label-free and keeps a cached
//! inverse under rank-one updates.

use nalgebra::linalg::{Cholesky, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{sigmoid_dot, Instance, Matrix, Triplet, Vector};

/// Number of rank-one inverse updates between full re-inversions of `V`.
pub const V_REFRESH_INTERVAL: usize = 256;

#[derive(Debug, Clone)]
pub struct DesignMatrices {
    h: Matrix,
    v: Matrix,
    v_inv: Matrix,
    lambda_h: f64,
    lambda_v: f64,
    history: Vec<Vector>,
    since_refresh: usize,
}

impl DesignMatrices {
    pub fn new(d: usize, lambda_h: f64, lambda_v: f64) -> Result<Self> {
        if !(lambda_h > 0.0) {
            return Err(Error::config("lambda_h", "must be > 0"));
        }
        if !(lambda_v > 0.0) {
            return Err(Error::config("lambda_v", "must be > 0"));
        }
        Ok(Self {
            h: Matrix::identity(d, d) * lambda_h,
            v: Matrix::identity(d, d) * lambda_v,
            v_inv: Matrix::identity(d, d) / lambda_v,
            lambda_h,
            lambda_v,
            history: Vec::new(),
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn v_inv(&self) -> &Matrix {
        &self.v_inv
    }

    pub fn lambda_h(&self) -> f64 {
        self.lambda_h
    }

    pub fn lambda_v(&self) -> f64 {
        self.lambda_v
    }

    pub fn history(&self) -> &[Vector] {
        &self.history
    }

    /// Adds `z z^T` to `V`, records `z`, and updates the cached inverse.
    pub fn update_v(&mut self, z: &Vector) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            });
        }
        self.v.ger(1.0, z, z, 1.0);
        self.history.push(z.clone());
        self.since_refresh += 1;
        if self.since_refresh >= V_REFRESH_INTERVAL {
            self.v_inv = spd_inverse(&self.v)?;
            self.since_refresh = 0;
        } else {
            let vz = &self.v_inv * z;
            let denom = 1.0 + z.dot(&vz);
            self.v_inv.ger(-1.0 / denom, &vz, &vz, 1.0);
        }
        Ok(())
    }

    /// Replaces `H` with `H(theta)` built from the stored history.
    pub fn rebuild_h(&mut self, theta: &Vector) -> Result<()> {
        self.h = build_h(&self.history, theta, self.lambda_h)?;
        Ok(())
    }

    /// `||z||_{V^{-1}}` from the cached inverse.
    pub fn v_norm(&self, z: &Vector) -> f64 {
        z.dot(&(&self.v_inv * z)).max(0.0).sqrt()
    }
}

/// `sum_s sigmoid_dot(z_s^T theta) z_s z_s^T + lambda_H I`.
pub fn build_h(history: &[Vector], theta: &Vector, lambda_h: f64) -> Result<Matrix> {
    let d = theta.len();
    let mut h = Matrix::identity(d, d) * lambda_h;
    for z in history {
        if z.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: z.len(),
            });
        }
        h.ger(sigmoid_dot(z.dot(theta)), z, z, 1.0);
    }
    Ok(h)
}

fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or(Error::MatrixConditioning)
}

/// `sqrt(z^T M^{-1} z)` through a Cholesky solve.
pub fn weighted_inv_norm(m: &Matrix, z: &Vector) -> Result<f64> {
    if m.nrows() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: z.len(),
        });
    }
    let chol = Cholesky::new(m.clone()).ok_or(Error::MatrixConditioning)?;
    Ok(z.dot(&chol.solve(z)).max(0.0).sqrt())
}

/// Reusable inverse-norm evaluator for scanning many directions against one
/// frozen SPD matrix: `||z||_{M^{-1}} = ||L^{-1} z||` with `M = L L^T`.
#[derive(Debug, Clone)]
pub struct InverseNorm {
    l: Matrix,
}

impl InverseNorm {
    pub fn new(m: &Matrix) -> Result<Self> {
        let chol = Cholesky::new(m.clone()).ok_or(Error::MatrixConditioning)?;
        Ok(Self { l: chol.l() })
    }

    pub fn norm(&self, z: &Vector) -> f64 {
        self.l
            .solve_lower_triangular(z)
            .map(|w| w.norm())
            .unwrap_or(f64::INFINITY)
    }
}

/// Exploration bonus `||phi(x, a) - phi(x, a')||` in the inverse `H` norm
/// (`use_h`) or the inverse `V` norm.
pub fn bonus(design: &DesignMatrices, inst: &Instance, t: Triplet, use_h: bool) -> Result<f64> {
    let z = inst.feature_diff(t)?;
    if use_h {
        weighted_inv_norm(&design.h, &z)
    } else {
        weighted_inv_norm(&design.v, &z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialAudit {
    pub sum: f64,
    pub bound: f64,
    pub ok: bool,
}

/// Compares `sum_s ||z_s||^2_{V_s^{-1}}` (with `V_s` built from the first
/// `s - 1` vectors plus `lambda_V I`) against `2 d log(1 + T L^2 / (lambda_V d))`.
pub fn elliptic_potential_audit(history: &[Vector], lambda_v: f64, d: usize, l: f64) -> Result<PotentialAudit> {
    let mut design = DesignMatrices::new(d, lambda_v, lambda_v)?;
    let mut sum = 0.0;
    for z in history {
        let q = design.v_norm(z);
        sum += q * q;
        design.update_v(z)?;
    }
    let bound = elliptic_potential_bound(history.len(), d, l, lambda_v);
    Ok(PotentialAudit {
        sum,
        bound,
        ok: sum <= bound + 1e-9,
    })
}

pub fn elliptic_potential_bound(t: usize, d: usize, l: f64, lambda_v: f64) -> f64 {
    let d = d as f64;
    2.0 * d * (1.0 + t as f64 * l * l / (lambda_v * d)).ln()
}

/// Smallest eigenvalue of `kappa H(theta) - V`, where `H` carries ridge
/// `lambda_base` and `V` carries ridge `kappa * lambda_base`.
pub fn h_dominance_margin(history: &[Vector], theta: &Vector, lambda_base: f64, kappa: f64) -> Result<f64> {
    let d = theta.len();
    let h = build_h(history, theta, lambda_base)?;
    let mut v = Matrix::identity(d, d) * (kappa * lambda_base);
    for z in history {
        v.ger(1.0, z, z, 1.0);
    }
    let diff = h * kappa - v;
    Ok(SymmetricEigen::new(diff).eigenvalues.min())
}

/// `H(theta) >= V / kappa` in the Loewner order, up to `1e-8`.
pub fn h_dominates_v_check(history: &[Vector], theta: &Vector, lambda_base: f64, kappa: f64) -> Result<bool> {
    Ok(h_dominance_margin(history, theta, lambda_base, kappa)? >= -1e-8)
}
