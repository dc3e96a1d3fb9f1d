use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::PatternState;

/// Update-rule parameters of a single-channel Lenia world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeniaDynamics {
    /// Kernel radius in cells.
    pub r: u32,
    /// Updates per unit time; each step integrates `1 / t` of the growth.
    pub t: f64,
    pub mu: f64,
    pub sigma: f64,
    /// Peak heights of the concentric kernel rings, innermost first.
    pub beta: Vec<f64>,
}

impl LeniaDynamics {
    pub const R_RANGE: (u32, u32) = (2, 20);
    pub const T_RANGE: (f64, f64) = (1.0, 20.0);
    pub const SIGMA_RANGE: (f64, f64) = (0.001, 0.3);
    pub const MAX_RINGS: usize = 3;

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(Self::R_RANGE.0..=Self::R_RANGE.1).contains(&self.r) {
            return bad(format!("R = {} outside [2, 20]", self.r));
        }
        if !(Self::T_RANGE.0..=Self::T_RANGE.1).contains(&self.t) {
            return bad(format!("T = {} outside [1, 20]", self.t));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu = {} outside (0, 1)", self.mu));
        }
        if !(Self::SIGMA_RANGE.0..=Self::SIGMA_RANGE.1).contains(&self.sigma) {
            return bad(format!("sigma = {} outside [0.001, 0.3]", self.sigma));
        }
        if self.beta.is_empty() || self.beta.len() > Self::MAX_RINGS {
            return bad(format!("{} kernel rings, expected 1-3", self.beta.len()));
        }
        if self.beta.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return bad(format!("beta {:?} outside [0, 1]", self.beta));
        }
        if self.beta.iter().all(|&b| b == 0.0) {
            return bad("all kernel rings have zero height".into());
        }
        if self.mu <= Self::min_mu(self.sigma) {
            return bad(format!(
                "mu = {} must exceed {:.6} for sigma = {} so that empty space stays empty",
                self.mu,
                Self::min_mu(self.sigma),
                self.sigma
            ));
        }
        Ok(())
    }

    /// Smallest growth centre (exclusive) for which `G(0) < 0`.
    pub fn min_mu(sigma: f64) -> f64 {
        sigma * (2.0 * std::f64::consts::LN_2).sqrt()
    }

    pub fn growth(&self, u: f64) -> f64 {
        let d = u - self.mu;
        2.0 * (-d * d / (2.0 * self.sigma * self.sigma)).exp() - 1.0
    }
}

/// Exponential bump on `(0, 1)`, peak 1 at 0.5.
pub fn kernel_core(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        (4.0 - 1.0 / (x * (1.0 - x))).exp()
    }
}

/// Unnormalized shell value at normalized radius `r` (distance / R).
pub fn kernel_shell(r: f64, beta: &[f64]) -> f64 {
    if r >= 1.0 {
        return 0.0;
    }
    let br = r * beta.len() as f64;
    let ring = br.floor() as usize;
    beta[ring.min(beta.len() - 1)] * kernel_core(br - ring as f64)
}

/// `(2R + 1)^2` kernel, non-negative and summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    radius: usize,
    values: Vec<f64>,
}

impl Kernel {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn width(&self) -> usize {
        2 * self.radius + 1
    }

    /// Row-major `width x width`; the centre cell is at `(radius, radius)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        self.values[((dy + r) * self.width() as isize + dx + r) as usize]
    }
}

pub fn build_kernel(dynamics: &LeniaDynamics) -> Result<Kernel> {
    dynamics.validate()?;
    let radius = dynamics.r as usize;
    let w = 2 * radius + 1;
    let mut values = Vec::with_capacity(w * w);
    for y in 0..w {
        for x in 0..w {
            let dy = y as f64 - radius as f64;
            let dx = x as f64 - radius as f64;
            let r = (dx * dx + dy * dy).sqrt() / dynamics.r as f64;
            values.push(kernel_shell(r, &dynamics.beta));
        }
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "kernel with R = {} and beta {:?} is empty",
            dynamics.r, dynamics.beta
        )));
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(Kernel { radius, values })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionPath {
    #[default]
    Fft,
    Direct,
}

/// Toroidal convolution of a fixed kernel over `size x size` grids.
pub struct Convolver {
    size: usize,
    kernel: Kernel,
    path: ConvolutionPath,
    kernel_fft: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Convolver {
    pub fn new(kernel: Kernel, size: usize, path: ConvolutionPath) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut this = Self {
            size,
            kernel,
            path,
            kernel_fft: Vec::new(),
            forward,
            inverse,
        };
        if path == ConvolutionPath::Fft {
            let mut grid = vec![Complex64::new(0.0, 0.0); size * size];
            let r = this.kernel.radius as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let y = dy.rem_euclid(size as isize) as usize;
                    let x = dx.rem_euclid(size as isize) as usize;
                    grid[y * size + x].re += this.kernel.at(dy, dx);
                }
            }
            this.fft2(&mut grid, false);
            this.kernel_fft = grid;
        }
        this
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// `U(y, x) = sum_d K(d) A((y, x) - d)` with wrap-around.
    pub fn convolve(&self, cells: &[f64]) -> Vec<f64> {
        assert_eq!(cells.len(), self.size * self.size, "grid size");
        match self.path {
            ConvolutionPath::Direct => self.convolve_direct(cells),
            ConvolutionPath::Fft => self.convolve_fft(cells),
        }
    }

    fn convolve_direct(&self, cells: &[f64]) -> Vec<f64> {
        let n = self.size as isize;
        let r = self.kernel.radius as isize;
        let mut out = vec![0.0; cells.len()];
        for y in 0..n {
            for x in 0..n {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let sy = (y - dy).rem_euclid(n);
                    for dx in -r..=r {
                        let k = self.kernel.at(dy, dx);
                        if k != 0.0 {
                            acc += k * cells[(sy * n + (x - dx).rem_euclid(n)) as usize];
                        }
                    }
                }
                out[(y * n + x) as usize] = acc;
            }
        }
        out
    }

    fn convolve_fft(&self, cells: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = cells.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(&self.kernel_fft) {
            *b *= k;
        }
        self.fft2(&mut buf, true);
        let scale = 1.0 / (self.size * self.size) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        fft.process(buf);
        transpose(buf, self.size);
        fft.process(buf);
        transpose(buf, self.size);
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for y in 0..n {
        for x in y + 1..n {
            buf.swap(y * n + x, x * n + y);
        }
    }
}

/// One Lenia update: `A' = clip(A + G(K * A) / T, 0, 1)`.
pub fn step(state: &PatternState, dynamics: &LeniaDynamics, convolver: &Convolver) -> PatternState {
    let mut next = state.clone();
    step_in_place(&mut next, dynamics, convolver);
    next
}

pub(crate) fn step_in_place(
    state: &mut PatternState,
    dynamics: &LeniaDynamics,
    convolver: &Convolver,
) {
    let potential = convolver.convolve(state.cells());
    let dt = 1.0 / dynamics.t;
    for (a, u) in state.cells_mut().iter_mut().zip(potential) {
        *a = (*a + dt * dynamics.growth(u)).clamp(0.0, 1.0);
    }
}
