//! Run configuration, presets and TOML round-tripping.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptationSchedule;
use crate::error::{Error, Result};
use crate::kernel::BlockLayout;
use crate::target::{
    generate_section42_data, make_section42_target, GaussianMixtureTarget, MixturePosteriorTarget,
    TargetModel,
};
use crate::tempering::TemperingMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    #[serde(default)]
    pub tempering: TemperingMode,
    /// Contiguous block sizes overriding the target's default layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_sizes: Option<Vec<usize>>,
    #[serde(flatten)]
    pub spec: TargetSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TargetSpec {
    GaussianMixture {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    },
    /// Six-component normal mixture posterior. Data are either given
    /// explicitly or simulated from `data_seed`.
    MixturePosterior {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_seed: Option<u64>,
        /// True value the component-mean estimators are scored against.
        #[serde(default = "default_truth")]
        truth: f64,
    },
}

fn default_truth() -> f64 {
    2.5
}

/// A built target behind a trait object, plus what the harness needs to score it.
pub enum BuiltTarget {
    Mixture(GaussianMixtureTarget),
    Posterior(MixturePosteriorTarget),
}

impl BuiltTarget {
    pub fn model(&self) -> &dyn TargetModel {
        match self {
            BuiltTarget::Mixture(t) => t,
            BuiltTarget::Posterior(t) => t,
        }
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<BuiltTarget> {
        match self {
            TargetSpec::GaussianMixture {
                weights,
                means,
                variances,
            } => Ok(BuiltTarget::Mixture(GaussianMixtureTarget::new(
                weights.clone(),
                means.clone(),
                variances.clone(),
            )?)),
            TargetSpec::MixturePosterior {
                data, data_seed, ..
            } => {
                let y = match (data, data_seed) {
                    (Some(_), Some(_)) => {
                        return Err(Error::Config(
                            "give either data or data_seed, not both".into(),
                        ))
                    }
                    (Some(y), None) => y.clone(),
                    (None, Some(seed)) => {
                        generate_section42_data(&mut ChaCha8Rng::seed_from_u64(*seed))
                    }
                    (None, None) => {
                        return Err(Error::Config(
                            "mixture posterior needs data or data_seed".into(),
                        ))
                    }
                };
                Ok(BuiltTarget::Posterior(make_section42_target(y)?))
            }
        }
    }

    /// Coordinates averaged for the RMSE and the scalar truth they are scored
    /// against; `None` for targets without a defined estimand.
    pub fn estimand(&self, built: &BuiltTarget) -> Option<(Vec<usize>, f64)> {
        match (self, built) {
            (TargetSpec::MixturePosterior { truth, .. }, BuiltTarget::Posterior(t)) => {
                Some((t.mean_indices().collect(), *truth))
            }
            _ => None,
        }
    }
}

/// Initial proposal variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GammaInit {
    /// Same value for every replica and coordinate.
    Constant { value: f64 },
    /// One uniform draw per replica, sorted ascending along the ladder and
    /// shared by all coordinates of that replica.
    SortedUniform { low: f64, high: f64 },
    /// Per replica, per coordinate.
    Explicit { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub initial_len: usize,
    /// Explicit inverse temperatures, first entry 1. Defaults to equal spacing
    /// `(1, (L-1)/L, ..., 1/L)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperatures: Option<Vec<f64>>,
    /// Explicit log inverse temperatures, first entry 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_temperatures: Option<Vec<f64>>,
    pub gamma: GammaInit,
}

impl LadderConfig {
    /// Initial log inverse temperatures.
    pub fn zetas(&self) -> Result<Vec<f64>> {
        let l = self.initial_len;
        let zetas = match (&self.temperatures, &self.log_temperatures) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "give temperatures or log_temperatures, not both".into(),
                ))
            }
            (Some(t), None) => {
                if t.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                    return Err(Error::Config("temperatures must lie in (0, 1]".into()));
                }
                t.iter().map(|v| v.ln()).collect()
            }
            (None, Some(z)) => z.clone(),
            (None, None) => (0..l)
                .map(|i| ((l - i) as f64 / l as f64).ln())
                .collect::<Vec<_>>(),
        };
        if zetas.len() != l {
            return Err(Error::Config(format!(
                "ladder has {} temperatures but initial_len = {l}",
                zetas.len()
            )));
        }
        if zetas[0] != 0.0 {
            return Err(Error::Config(
                "the first inverse temperature must be exactly 1".into(),
            ));
        }
        if zetas.windows(2).any(|w| !(w[1] < w[0])) || zetas.iter().any(|z| !z.is_finite()) {
            return Err(Error::Config(
                "inverse temperatures must be strictly decreasing".into(),
            ));
        }
        Ok(zetas)
    }
}

/// Which adaptation rules are active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptToggles {
    pub temperatures: bool,
    pub proposals: bool,
    pub truncation: bool,
    /// Number of leading (coldest) replicas whose parameters stay fixed.
    pub frozen_prefix: usize,
}

impl Default for AdaptToggles {
    fn default() -> Self {
        Self {
            temperatures: true,
            proposals: true,
            truncation: true,
            frozen_prefix: 0,
        }
    }
}

impl AdaptToggles {
    pub fn none() -> Self {
        Self {
            temperatures: false,
            proposals: false,
            truncation: false,
            frozen_prefix: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub iterations: u64,
    pub burn_in_frac: f64,
    pub thin: u64,
    pub seed: u64,
    /// Iterations between ladder trace snapshots; 0 disables tracing.
    pub trace_stride: u64,
    pub threads: usize,
    /// Iteration counts at which the temperature-increment probe opens a window.
    pub probe_points: Vec<u64>,
    pub probe_window: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            iterations: 300_000,
            burn_in_frac: 0.5,
            thin: 50,
            seed: 0,
            trace_stride: 1_000,
            threads: 1,
            probe_points: vec![1_000, 10_000, 100_000],
            probe_window: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub target: TargetConfig,
    pub ladder: LadderConfig,
    #[serde(default)]
    pub schedule: AdaptationSchedule,
    #[serde(default)]
    pub adapt: AdaptToggles,
    #[serde(default)]
    pub run: RunParams,
}

impl RunConfig {
    /// 2-D four-Gaussian mixture, 25 equally spaced replicas, gamma = 300,
    /// 3e5 iterations, power tempering.
    pub fn section41() -> Self {
        Self {
            target: TargetConfig {
                tempering: TemperingMode::PowerOfTarget,
                block_sizes: None,
                spec: TargetSpec::GaussianMixture {
                    weights: vec![0.25; 4],
                    means: crate::target::section41_default_means(),
                    variances: vec![
                        vec![1.0, 49.0],
                        vec![49.0, 1.0],
                        vec![1.0, 49.0],
                        vec![49.0, 1.0],
                    ],
                },
            },
            ladder: LadderConfig {
                initial_len: 25,
                temperatures: None,
                log_temperatures: None,
                gamma: GammaInit::Constant { value: 300.0 },
            },
            schedule: AdaptationSchedule::default(),
            adapt: AdaptToggles::default(),
            run: RunParams {
                iterations: 300_000,
                ..RunParams::default()
            },
        }
    }

    /// Six-component mixture posterior on 150 simulated points, likelihood
    /// tempering, blocks (5, 4, 4, 4), sorted U[1e-4, 800] initial variances,
    /// 1e6 iterations.
    pub fn section42() -> Self {
        Self {
            target: TargetConfig {
                tempering: TemperingMode::LikelihoodTempered,
                block_sizes: None,
                spec: TargetSpec::MixturePosterior {
                    data: None,
                    data_seed: Some(150),
                    truth: 2.5,
                },
            },
            ladder: LadderConfig {
                initial_len: 25,
                temperatures: None,
                log_temperatures: None,
                gamma: GammaInit::SortedUniform {
                    low: 1e-4,
                    high: 800.0,
                },
            },
            schedule: AdaptationSchedule::default(),
            adapt: AdaptToggles::default(),
            run: RunParams {
                iterations: 1_000_000,
                ..RunParams::default()
            },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "section41" => Ok(Self::section41()),
            "section42" => Ok(Self::section42()),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected section41 or section42)"
            ))),
        }
    }

    pub fn burn_in(&self) -> u64 {
        (self.run.iterations as f64 * self.run.burn_in_frac).floor() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        if self.run.thin == 0 {
            return Err(Error::Config("thinning stride must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.run.burn_in_frac) {
            return Err(Error::Config("burn_in_frac must lie in [0, 1)".into()));
        }
        if self.run.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must be below 2^63".into()));
        }
        if self.ladder.initial_len == 0 {
            return Err(Error::Config("ladder needs at least one replica".into()));
        }
        self.schedule.validate()?;
        self.ladder.zetas()?;
        let in_bounds = |g: f64| g >= self.schedule.gamma_min && g <= self.schedule.gamma_max;
        match &self.ladder.gamma {
            GammaInit::Constant { value } if !in_bounds(*value) => {
                return Err(Error::Config(format!(
                    "initial gamma {value} outside [gamma_min, gamma_max]"
                )))
            }
            GammaInit::SortedUniform { low, high }
                if !(in_bounds(*low) && in_bounds(*high) && low < high) =>
            {
                return Err(Error::Config("sorted-uniform gamma bounds invalid".into()))
            }
            GammaInit::Explicit { values } => {
                if values.len() != self.ladder.initial_len {
                    return Err(Error::Config(
                        "explicit gamma needs one row per replica".into(),
                    ));
                }
                if values.iter().flatten().any(|&g| !in_bounds(g)) {
                    return Err(Error::Config(
                        "explicit gamma outside [gamma_min, gamma_max]".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Block layout for the given model, honouring `block_sizes`.
    pub fn layout<M: TargetModel + ?Sized>(&self, model: &M) -> Result<BlockLayout> {
        match &self.target.block_sizes {
            Some(sizes) => {
                if sizes.iter().sum::<usize>() != model.dimension() {
                    return Err(Error::Config(
                        "block sizes do not add up to the dimension".into(),
                    ));
                }
                BlockLayout::contiguous(sizes)
            }
            None => Ok(model.block_layout()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
