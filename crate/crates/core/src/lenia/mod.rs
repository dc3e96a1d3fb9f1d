//! The explored system: Lenia rollouts from CPPN-painted initial states.

mod cppn;
mod dynamics;
mod params;
mod pattern;

pub use cppn::{
    render_cppn, squash, Activation, Connection, CppnGenome, CppnInput, CppnNode, NodeRole,
    DEFAULT_INIT_RADIUS, OUTPUT_ID,
};
pub use dynamics::{
    build_kernel, kernel_core, kernel_shell, step, ConvolutionPath, Convolver, Kernel,
    LeniaDynamics,
};
pub use params::{mutate_params, sample_random_params, MutationConfig, ParamSpace, SystemParams};
pub use pattern::{Observation, PatternState};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeniaConfig {
    pub grid_size: usize,
    pub steps: usize,
    pub init_radius: f64,
    #[serde(default)]
    pub convolution: ConvolutionPath,
}

impl Default for LeniaConfig {
    fn default() -> Self {
        Self {
            grid_size: 256,
            steps: 200,
            init_radius: DEFAULT_INIT_RADIUS,
            convolution: ConvolutionPath::Fft,
        }
    }
}

/// Final frames of `n` independent parameter draws, e.g. a held-out test set.
pub fn random_rollouts(space: &ParamSpace, config: &LeniaConfig, n: usize, seed: u64) -> Result<Vec<Observation>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rollout(&sample_random_params(space, &mut rng), config))
        .collect()
}

/// Runs the world from the genome's initial state and returns the last frame.
pub fn rollout(theta: &SystemParams, config: &LeniaConfig) -> Result<Observation> {
    Ok(rollout_state(theta, config)?.to_observation())
}

pub fn rollout_state(theta: &SystemParams, config: &LeniaConfig) -> Result<PatternState> {
    if config.steps == 0 {
        return Err(Error::InvalidArgument("rollout needs at least one step".into()));
    }
    theta.dynamics.validate()?;
    let mut state = render_cppn(&theta.genome, config.grid_size, config.init_radius)?;
    let convolver = Convolver::new(
        build_kernel(&theta.dynamics)?,
        config.grid_size,
        config.convolution,
    );
    for _ in 0..config.steps {
        dynamics::step_in_place(&mut state, &theta.dynamics, &convolver);
    }
    if state.cells().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lenia rollout"));
    }
    Ok(state)
}
