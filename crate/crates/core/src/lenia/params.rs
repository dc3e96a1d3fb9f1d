use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{CppnGenome, LeniaDynamics};

/// One point of the parameter space: initial-state genome plus dynamics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub genome: CppnGenome,
    pub dynamics: LeniaDynamics,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        self.genome.validate()?;
        self.dynamics.validate()
    }
}

/// Sampling box for the dynamics. Defaults span the full valid ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub r: (u32, u32),
    pub t: (f64, f64),
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
    pub beta: (f64, f64),
}

impl Default for ParamSpace {
    fn default() -> Self {
        Self {
            r: LeniaDynamics::R_RANGE,
            t: LeniaDynamics::T_RANGE,
            mu: (0.001, 0.999),
            sigma: LeniaDynamics::SIGMA_RANGE,
            beta: (0.001, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MutationConfig {
    /// Gaussian step on each dynamics field, as a fraction of its range.
    pub dynamics_sigma_frac: f64,
    pub add_node_prob: f64,
    pub add_connection_prob: f64,
    pub weight_sigma: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            dynamics_sigma_frac: 0.1,
            add_node_prob: 0.1,
            add_connection_prob: 0.15,
            weight_sigma: 0.3,
        }
    }
}

impl MutationConfig {
    pub fn none() -> Self {
        Self {
            dynamics_sigma_frac: 0.0,
            add_node_prob: 0.0,
            add_connection_prob: 0.0,
            weight_sigma: 0.0,
        }
    }
}

pub fn sample_random_params<R: Rng + ?Sized>(space: &ParamSpace, rng: &mut R) -> SystemParams {
    let genome = CppnGenome::random(rng);
    let n_rings = rng.random_range(1..=LeniaDynamics::MAX_RINGS);
    let r = rng.random_range(space.r.0..=space.r.1);
    let t = rng.random_range(space.t.0..=space.t.1);
    let (mu, sigma) = sample_growth(space, rng);
    let dynamics = LeniaDynamics {
        r,
        t,
        mu,
        sigma,
        beta: (0..n_rings)
            .map(|_| rng.random_range(space.beta.0..=space.beta.1))
            .collect(),
    };
    SystemParams { genome, dynamics }
}

/// Uniform over the part of the `(mu, sigma)` box where `G(0) < 0`, by
/// rejection; falls back to lifting `mu` when the box barely intersects it.
fn sample_growth<R: Rng + ?Sized>(space: &ParamSpace, rng: &mut R) -> (f64, f64) {
    let mut last = (0.0, 0.0);
    for _ in 0..64 {
        let mu = rng.random_range(space.mu.0..=space.mu.1);
        let sigma = rng.random_range(space.sigma.0..=space.sigma.1);
        if mu > LeniaDynamics::min_mu(sigma) {
            return (mu, sigma);
        }
        last = (mu, sigma);
    }
    (lift_mu(last.0, last.1), last.1)
}

fn lift_mu(mu: f64, sigma: f64) -> f64 {
    let floor = LeniaDynamics::min_mu(sigma);
    if mu > floor {
        mu
    } else {
        (floor * (1.0 + 1e-9) + 1e-12).min(0.999_999)
    }
}

pub fn mutate_params<R: Rng + ?Sized>(
    theta: &SystemParams,
    space: &ParamSpace,
    cfg: &MutationConfig,
    rng: &mut R,
) -> SystemParams {
    let d = &theta.dynamics;
    let f = cfg.dynamics_sigma_frac;
    let mut perturb = |x: f64, lo: f64, hi: f64| -> f64 {
        if f <= 0.0 {
            return x;
        }
        let step = Normal::new(0.0, f * (hi - lo)).expect("finite sigma").sample(rng);
        (x + step).clamp(lo, hi)
    };
    let r = perturb(d.r as f64, space.r.0 as f64, space.r.1 as f64).round() as u32;
    let t = perturb(d.t, space.t.0, space.t.1);
    let mu = perturb(d.mu, space.mu.0, space.mu.1);
    let sigma = perturb(d.sigma, space.sigma.0, space.sigma.1);
    let mu = lift_mu(mu, sigma);
    let mut beta: Vec<f64> = d
        .beta
        .iter()
        .map(|&b| perturb(b, space.beta.0, space.beta.1))
        .collect();
    if beta.iter().all(|&b| b == 0.0) {
        beta[0] = space.beta.1;
    }
    let genome = theta.genome.mutate(
        cfg.add_node_prob,
        cfg.add_connection_prob,
        cfg.weight_sigma,
        rng,
    );
    SystemParams {
        genome,
        dynamics: LeniaDynamics {
            r,
            t,
            mu,
            sigma,
            beta,
        },
    }
}
