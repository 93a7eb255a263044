//! Blockwise random-walk Metropolis transition for a single replica.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::target::TargetModel;
use crate::tempering::{TemperedParts, TemperingMode};

/// Ordered partition of the coordinate indices into update blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    blocks: Vec<Vec<usize>>,
}

impl BlockLayout {
    pub fn new(blocks: Vec<Vec<usize>>, dimension: usize) -> Result<Self> {
        let mut seen = vec![false; dimension];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::Config("empty block in layout".into()));
            }
            for &j in block {
                if j >= dimension || seen[j] {
                    return Err(Error::Config(format!(
                        "block layout is not a partition of 0..{dimension} (index {j})"
                    )));
                }
                seen[j] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config(
                "block layout does not cover every coordinate".into(),
            ));
        }
        Ok(Self { blocks })
    }

    pub fn single(dimension: usize) -> Self {
        Self {
            blocks: vec![(0..dimension).collect()],
        }
    }

    /// Consecutive blocks with the given sizes.
    pub fn contiguous(sizes: &[usize]) -> Result<Self> {
        let mut start = 0;
        let blocks = sizes
            .iter()
            .map(|&s| {
                let b: Vec<usize> = (start..start + s).collect();
                start += s;
                b
            })
            .collect();
        Self::new(blocks, start)
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Layout a target uses when none is configured.
pub fn default_block_layout<M: TargetModel + ?Sized>(target: &M) -> BlockLayout {
    target.block_layout()
}

/// Per-coordinate proposal variances and the running means used to learn them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    pub variances: Vec<f64>,
    pub means: Vec<f64>,
}

impl ProposalParams {
    pub fn new(variances: Vec<f64>, means: Vec<f64>) -> Self {
        debug_assert_eq!(variances.len(), means.len());
        Self { variances, means }
    }

    pub fn variance_sum(&self) -> f64 {
        self.variances.iter().sum()
    }
}

/// Source of the additive proposal increments.
pub trait NoiseSource: Sync {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, variance: f64) -> f64;
}

/// Zero-mean normal increments.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianNoise;

impl NoiseSource for GaussianNoise {
    #[inline]
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, variance: f64) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        variance.sqrt() * z
    }
}

/// Always proposes the current state.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw<R: Rng + ?Sized>(&self, _: &mut R, _: f64) -> f64 {
        0.0
    }
}

/// Normal increments rounded to the integer lattice; keeps a chain that starts
/// on integers on the integers. The rounded normal is symmetric, so the
/// Metropolis ratio is unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct LatticeNoise;

impl NoiseSource for LatticeNoise {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R, variance: f64) -> f64 {
        GaussianNoise.draw(rng, variance).round()
    }
}

/// Result of one sweep over all blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    /// One flag per block, in layout order.
    pub accepted: Vec<bool>,
}

impl StepOutcome {
    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }
}

/// One Metropolis sweep at inverse temperature `t`.
///
/// Blocks are visited in layout order. Each block proposal adds independent
/// noise with the per-coordinate variances in `proposal`; proposals outside
/// the support are rejected. `x` and `parts` are updated in place and
/// `parts` always holds the decomposition of the returned `x`.
#[allow(clippy::too_many_arguments)]
pub fn metropolis_step<M, N, R>(
    model: &M,
    mode: TemperingMode,
    t: f64,
    x: &mut [f64],
    parts: &mut TemperedParts,
    proposal: &ProposalParams,
    layout: &BlockLayout,
    noise: &N,
    rng: &mut R,
) -> StepOutcome
where
    M: TargetModel + ?Sized,
    N: NoiseSource,
    R: Rng + ?Sized,
{
    let mut candidate = x.to_vec();
    let mut accepted = Vec::with_capacity(layout.len());
    for block in layout.blocks() {
        for &j in block {
            candidate[j] = x[j] + noise.draw(rng, proposal.variances[j]);
        }
        let ok = match mode.parts(model, &candidate) {
            Ok(new_parts) => {
                let delta = new_parts.at(t) - parts.at(t);
                let accept = if delta >= 0.0 {
                    true
                } else if delta.is_nan() {
                    false
                } else {
                    let u: f64 = rng.random();
                    u.ln() <= delta
                };
                if accept {
                    *parts = new_parts;
                }
                accept
            }
            Err(_) => false,
        };
        for &j in block {
            if ok {
                x[j] = candidate[j];
            } else {
                candidate[j] = x[j];
            }
        }
        accepted.push(ok);
    }
    StepOutcome { accepted }
}
