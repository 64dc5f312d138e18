//! Instance constructors: the uniform-sampling lower-bound instance, the
//! hypercube instance and random benchmark instances.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Instance, Vector};

/// Largest hypercube dimension accepted (the action set has `2^d` corners).
pub const MAX_HYPERCUBE_DIM: usize = 12;

/// Serializable description of an instance, as accepted by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    LowerBound {
        #[serde(rename = "N")]
        n: usize,
    },
    Hypercube {
        d: usize,
        #[serde(rename = "T_ref")]
        t_ref: usize,
        #[serde(default)]
        seed: u64,
    },
    Random {
        n_contexts: usize,
        n_actions: usize,
        d: usize,
        #[serde(rename = "S")]
        s: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl InstanceSpec {
    pub fn label(&self) -> String {
        match self {
            InstanceSpec::LowerBound { n } => format!("lower_bound_N{n}"),
            InstanceSpec::Hypercube { d, t_ref, seed } => format!("hypercube_d{d}_T{t_ref}_s{seed}"),
            InstanceSpec::Random {
                n_contexts,
                n_actions,
                d,
                s,
                seed,
            } => format!("random_{n_contexts}x{n_actions}_d{d}_S{s}_s{seed}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InstanceSpec::LowerBound { n } if n < 3 => Err(Error::config("instance.N", "must be >= 3")),
            InstanceSpec::Hypercube { d, t_ref, .. } => {
                if d == 0 || d > MAX_HYPERCUBE_DIM {
                    Err(Error::config("instance.d", format!("must lie in 1..={MAX_HYPERCUBE_DIM}")))
                } else if t_ref == 0 {
                    Err(Error::config("instance.T_ref", "must be >= 1"))
                } else {
                    Ok(())
                }
            }
            InstanceSpec::Random {
                n_contexts,
                n_actions,
                d,
                s,
                ..
            } => {
                if n_contexts == 0 {
                    Err(Error::config("instance.n_contexts", "must be >= 1"))
                } else if n_actions < 2 {
                    Err(Error::config("instance.n_actions", "must be >= 2"))
                } else if d < 2 {
                    Err(Error::config("instance.d", "must be >= 2 for the zero-sum subspace"))
                } else if !(s.is_finite() && s > 0.0) {
                    Err(Error::config("instance.S", "must be finite and > 0"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Instance> {
        self.validate()?;
        match *self {
            InstanceSpec::LowerBound { n } => make_lower_bound_instance(n),
            InstanceSpec::Hypercube { d, t_ref, seed } => {
                make_hypercube_instance(d, t_ref, &mut ChaCha8Rng::seed_from_u64(seed))
            }
            InstanceSpec::Random {
                n_contexts,
                n_actions,
                d,
                s,
                seed,
            } => make_random_instance(n_contexts, n_actions, d, s, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

/// `alpha = 2 log(N - 1)`, chosen so that `sigmoid(alpha / 2) = 1 - 1/N`.
pub fn lower_bound_alpha(n: usize) -> f64 {
    2.0 * ((n - 1) as f64).ln()
}

/// Index of the single "bad" context in [`make_lower_bound_instance`].
pub fn lower_bound_bad_context(n: usize) -> usize {
    n - 1
}

/// `N` two-action contexts in `R^2`. Good contexts have feature difference
/// `z_g = [1, 0]`, the bad context (the last one) has `z_b = [-1/2, sqrt(3)/2]`,
/// and `theta* = alpha [1/2, sqrt(3)/2]` so that action 0 wins every duel with
/// probability `1 - 1/N`. Features are realised as `+-z/2`.
pub fn make_lower_bound_instance(n: usize) -> Result<Instance> {
    if n < 3 {
        return Err(Error::InvalidInstance(format!("lower-bound instance needs N >= 3, got {n}")));
    }
    let alpha = lower_bound_alpha(n);
    let half_sqrt3 = 3f64.sqrt() / 2.0;
    let z_good = Vector::from_row_slice(&[1.0, 0.0]);
    let z_bad = Vector::from_row_slice(&[-0.5, half_sqrt3]);
    let features = (0..n)
        .map(|x| {
            let z = if x == lower_bound_bad_context(n) { &z_bad } else { &z_good };
            vec![z * 0.5, z * -0.5]
        })
        .collect();
    let theta_star = Vector::from_row_slice(&[0.5, half_sqrt3]) * alpha;
    Instance::new(features, theta_star, alpha, 1.0, false)
}

/// Single context whose actions are the corners of `{-1/2, 1/2}^d`, with
/// `theta*` drawn uniformly from `{+-1/sqrt(T_ref)}^d`. Action `i` has bit `j`
/// set when coordinate `j` is `+1/2`.
pub fn make_hypercube_instance<R: Rng + ?Sized>(d: usize, t_ref: usize, rng: &mut R) -> Result<Instance> {
    if d == 0 || d > MAX_HYPERCUBE_DIM {
        return Err(Error::InvalidInstance(format!(
            "hypercube dimension must lie in 1..={MAX_HYPERCUBE_DIM}, got {d}"
        )));
    }
    if t_ref == 0 {
        return Err(Error::InvalidInstance("T_ref must be >= 1".into()));
    }
    let scale = 1.0 / (t_ref as f64).sqrt();
    let actions = (0..1usize << d)
        .map(|mask| Vector::from_fn(d, |j, _| if mask >> j & 1 == 1 { 0.5 } else { -0.5 }))
        .collect();
    let theta_star = Vector::from_fn(d, |_, _| if rng.random_bool(0.5) { scale } else { -scale });
    let s = (d as f64 / t_ref as f64).sqrt();
    let l = (d as f64).sqrt() / 2.0;
    Instance::new(vec![actions], theta_star, s, l, false)
}

fn unit_gaussian<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Features uniform on the unit sphere, `theta*` uniform on the radius-`S`
/// sphere inside the zero-sum hyperplane.
pub fn make_random_instance<R: Rng + ?Sized>(
    n_contexts: usize,
    n_actions: usize,
    d: usize,
    s: f64,
    rng: &mut R,
) -> Result<Instance> {
    if n_contexts == 0 || n_actions == 0 {
        return Err(Error::InvalidInstance("need at least one context and one action".into()));
    }
    if d < 2 {
        return Err(Error::InvalidInstance("zero-sum subspace is trivial for d < 2".into()));
    }
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::InvalidInstance(format!("S must be finite and > 0, got {s}")));
    }
    let features = (0..n_contexts)
        .map(|_| (0..n_actions).map(|_| unit_gaussian(d, rng)).collect())
        .collect();
    let theta_star = loop {
        let g = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mean = g.mean();
        let centred = g.map(|c| c - mean);
        let n = centred.norm();
        if n > 1e-12 {
            let mut t = centred * (s / n);
            // re-centre to kill rounding in the sum
            let mean = t.mean();
            t.apply(|c| *c -= mean);
            break t;
        }
    };
    Instance::new(features, theta_star, s, 1.0, true)
}
