use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{CategorizerConfig, PatternCategory};
use crate::error::{Error, IoContext, Result};
use crate::holmes::{HolmesConfig, SvmConfig};
use crate::lenia::{LeniaConfig, MutationConfig, ParamSpace};
use crate::ndiff::AdamConfig;
use crate::vae::Architecture;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One high-capacity module that never splits.
    Monolithic,
    Holmes,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monolithic" => Ok(Self::Monolithic),
            "holmes" => Ok(Self::Holmes),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Monolithic => "monolithic",
            Self::Holmes => "holmes",
        })
    }
}

/// How the target goal space is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Guidance {
    Uniform,
    /// Leaves scored by how many entries of this category they hold.
    Scored(PatternCategory),
    /// Leaves scored by a person at every split.
    Interactive,
}

impl FromStr for Guidance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "interactive" => Ok(Self::Interactive),
            _ => match s.strip_prefix("scored:") {
                Some(cat) => Ok(Self::Scored(cat.parse()?)),
                None => Err(Error::InvalidArgument(format!("unknown guidance {s:?}"))),
            },
        }
    }
}

impl fmt::Display for Guidance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Interactive => f.write_str("interactive"),
            Self::Scored(c) => write!(f, "scored:{}", c.as_str()),
        }
    }
}

impl TryFrom<String> for Guidance {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Guidance> for String {
    fn from(g: Guidance) -> String {
        g.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Total rollouts.
    pub n_total: usize,
    /// Leading rollouts with uniformly random parameters.
    pub n_init: usize,
    /// Train every this many rollouts.
    pub train_period: usize,
    pub epochs: usize,
    pub n_max: usize,
    pub variant: Variant,
    pub guidance: Guidance,
    pub seed: u64,
    pub lenia: LeniaConfig,
    pub param_space: ParamSpace,
    pub mutation: MutationConfig,
    /// Goal box padding as a fraction of each axis' reached range.
    pub goal_box_expansion: f64,
    /// Softmax temperature for scored goal-space selection.
    pub temperature: f64,
    pub batch_size: usize,
    pub new_entry_mass: f64,
    pub adam: AdamConfig,
    pub svm: SvmConfig,
    pub categorizer: CategorizerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_total: 5000,
            n_init: 1000,
            train_period: 400,
            epochs: 400,
            n_max: 500,
            variant: Variant::Holmes,
            guidance: Guidance::Uniform,
            seed: 0,
            lenia: LeniaConfig::default(),
            param_space: ParamSpace::default(),
            mutation: MutationConfig::default(),
            goal_box_expansion: 0.1,
            temperature: 1.0,
            batch_size: 128,
            new_entry_mass: 0.5,
            adam: AdamConfig::default(),
            svm: SvmConfig::default(),
            categorizer: CategorizerConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reduced profile that runs on a laptop CPU: 600 rollouts on 64x64.
    pub fn desk() -> Self {
        Self {
            n_total: 600,
            n_init: 120,
            train_period: 60,
            epochs: 40,
            n_max: 100,
            lenia: LeniaConfig {
                grid_size: 64,
                ..LeniaConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path).at(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_total == 0 || self.train_period == 0 || self.batch_size == 0 {
            return bad("n_total, train_period and batch_size must be positive");
        }
        if self.n_init > self.n_total {
            return bad("n_init exceeds n_total");
        }
        if self.n_max < 2 {
            return bad("n_max must be at least 2");
        }
        if !(self.temperature > 0.0) || !(self.goal_box_expansion >= 0.0) {
            return bad("temperature must be positive and goal_box_expansion non-negative");
        }
        if !(0.0..1.0).contains(&self.new_entry_mass) {
            return bad("new_entry_mass must lie in [0, 1)");
        }
        self.architecture().validate()
    }

    pub fn architecture(&self) -> Architecture {
        match self.variant {
            Variant::Monolithic => Architecture::monolithic(self.lenia.grid_size),
            Variant::Holmes => Architecture::core(self.lenia.grid_size),
        }
    }

    pub fn holmes_config(&self) -> HolmesConfig {
        HolmesConfig {
            arch: self.architecture(),
            n_max: self.n_max,
            batch_size: self.batch_size,
            new_entry_mass: self.new_entry_mass,
            adam: self.adam,
            svm: self.svm,
        }
    }
}
