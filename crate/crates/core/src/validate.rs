//! Fast self-checks of the kernel, the exchange move and the learning rules
//! against exact answers on small problems.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::adaptation::{project_order, temperature_step, AdaptationSchedule};
use crate::error::OutsideSupport;
use crate::kernel::{metropolis_step, BlockLayout, LatticeNoise, ProposalParams};
use crate::target::{make_section41_target, GaussianMixtureTarget, TargetModel};
use crate::tempering::{exchange_log_ratio, TemperingMode};

/// Distribution on the integers `0..probs.len()`.
#[derive(Debug, Clone)]
pub struct LatticeTarget {
    log_probs: Vec<f64>,
}

impl LatticeTarget {
    /// `probs` must be positive; they are normalized here.
    pub fn new(probs: &[f64]) -> Self {
        let total: f64 = probs.iter().sum();
        Self {
            log_probs: probs.iter().map(|p| (p / total).ln()).collect(),
        }
    }

    pub fn states(&self) -> usize {
        self.log_probs.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    fn index(&self, x: &[f64]) -> Option<usize> {
        let v = x[0];
        (v.fract() == 0.0 && v >= 0.0 && v < self.states() as f64).then_some(v as usize)
    }

    /// Exact transition matrix of the lattice Metropolis kernel with rounded
    /// normal increments of variance `variance`.
    pub fn transition_matrix(&self, variance: f64) -> Vec<Vec<f64>> {
        let sd = variance.sqrt();
        let phi = Normal::new(0.0, 1.0).expect("standard normal");
        // P(round(sd * Z) = k)
        let step = |k: i64| phi.cdf((k as f64 + 0.5) / sd) - phi.cdf((k as f64 - 0.5) / sd);
        let s = self.states();
        let p = self.probabilities();
        let mut m = vec![vec![0.0; s]; s];
        for i in 0..s {
            let mut moved = 0.0;
            for j in 0..s {
                if i != j {
                    let q = step(j as i64 - i as i64) * (p[j] / p[i]).min(1.0);
                    m[i][j] = q;
                    moved += q;
                }
            }
            m[i][i] = 1.0 - moved;
        }
        m
    }
}

impl TargetModel for LatticeTarget {
    fn dimension(&self) -> usize {
        1
    }

    fn in_support(&self, x: &[f64]) -> bool {
        self.index(x).is_some()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64, OutsideSupport> {
        self.index(x)
            .map(|i| self.log_probs[i])
            .ok_or(OutsideSupport)
    }

    fn initial_position(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![(self.states() / 2) as f64]
    }
}

/// The discrete toy used by the checks.
pub fn toy_lattice() -> LatticeTarget {
    LatticeTarget::new(&[0.1, 0.2, 0.4, 0.25, 0.05])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Visit frequencies of a long lattice chain, with batch-means standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyCheck {
    pub exact: Vec<f64>,
    pub empirical: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub max_abs_z: f64,
    /// Empirical one-step transition frequencies.
    pub transitions: Vec<Vec<f64>>,
    pub max_transition_z: f64,
}

/// Runs `steps` lattice Metropolis steps (`batches` equal batches for the
/// standard errors) and compares against the exact stationary law and
/// transition matrix.
pub fn lattice_frequencies(
    target: &LatticeTarget,
    variance: f64,
    steps: u64,
    batches: u64,
    seed: u64,
) -> FrequencyCheck {
    let s = target.states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = BlockLayout::single(1);
    let proposal = ProposalParams::new(vec![variance], vec![0.0]);
    let mode = TemperingMode::PowerOfTarget;
    let mut x = target.initial_position(&mut rng);
    let mut parts = mode.parts(target, &x).expect("start inside support");

    let batch_len = steps / batches;
    let mut batch_freq = vec![vec![0.0; s]; batches as usize];
    let mut counts = vec![vec![0u64; s]; s];
    let mut totals = vec![0u64; s];
    for b in 0..batches as usize {
        let mut local = vec![0u64; s];
        for _ in 0..batch_len {
            let from = x[0] as usize;
            metropolis_step(
                target,
                mode,
                1.0,
                &mut x,
                &mut parts,
                &proposal,
                &layout,
                &LatticeNoise,
                &mut rng,
            );
            let to = x[0] as usize;
            counts[from][to] += 1;
            totals[from] += 1;
            local[to] += 1;
        }
        for k in 0..s {
            batch_freq[b][k] = local[k] as f64 / batch_len as f64;
        }
    }

    let exact = target.probabilities();
    let nb = batches as f64;
    let mut empirical = vec![0.0; s];
    let mut standard_errors = vec![0.0; s];
    let mut max_abs_z: f64 = 0.0;
    for k in 0..s {
        let mean = batch_freq.iter().map(|b| b[k]).sum::<f64>() / nb;
        let var = batch_freq
            .iter()
            .map(|b| (b[k] - mean).powi(2))
            .sum::<f64>()
            / (nb - 1.0);
        let se = (var / nb).sqrt();
        empirical[k] = mean;
        standard_errors[k] = se;
        max_abs_z = max_abs_z.max((mean - exact[k]).abs() / se);
    }

    let matrix = target.transition_matrix(variance);
    let mut transitions = vec![vec![0.0; s]; s];
    let mut max_transition_z: f64 = 0.0;
    for i in 0..s {
        for j in 0..s {
            let n = totals[i] as f64;
            let p_hat = counts[i][j] as f64 / n;
            transitions[i][j] = p_hat;
            let p = matrix[i][j];
            if p > 0.0 && p < 1.0 {
                max_transition_z =
                    max_transition_z.max((p_hat - p).abs() / (p * (1.0 - p) / n).sqrt());
            }
        }
    }
    FrequencyCheck {
        exact,
        empirical,
        standard_errors,
        max_abs_z,
        transitions,
        max_transition_z,
    }
}

/// Largest `|p_i P_ij - p_j P_ji|` of the exact kernel.
pub fn detailed_balance_residual(target: &LatticeTarget, variance: f64) -> f64 {
    let m = target.transition_matrix(variance);
    let p = target.probabilities();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            worst = worst.max((p[i] * m[i][j] - p[j] * m[j][i]).abs());
        }
    }
    worst
}

/// Chi-square test that one exchange move preserves the product of two
/// tempered lattice laws. Returns (statistic, p-value).
pub fn exchange_chi_square(
    target: &LatticeTarget,
    t_low: f64,
    t_high: f64,
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let s = target.states();
    let mode = TemperingMode::PowerOfTarget;
    let tempered = |t: f64| -> Vec<f64> {
        let w: Vec<f64> = target.log_probs.iter().map(|l| (t * l).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    };
    let (low, high) = (tempered(t_low), tempered(t_high));
    let mut joint = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..s {
            joint[i * s + j] = low[i] * high[j];
        }
    }
    let mut cumulative = joint.clone();
    for k in 1..cumulative.len() {
        cumulative[k] += cumulative[k - 1];
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observed = vec![0u64; s * s];
    for _ in 0..draws {
        let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
        let cell = cumulative.partition_point(|&c| c <= u).min(s * s - 1);
        let (i, j) = (cell / s, cell % s);
        let a = mode.parts(target, &[i as f64]).expect("lattice state");
        let b = mode.parts(target, &[j as f64]).expect("lattice state");
        let log_acc = exchange_log_ratio(t_low, t_high, &a, &b).min(0.0);
        let v: f64 = rng.random();
        let swapped = v.ln() <= log_acc;
        let (ni, nj) = if swapped { (j, i) } else { (i, j) };
        observed[ni * s + nj] += 1;
    }
    let n = draws as f64;
    let stat: f64 = observed
        .iter()
        .zip(&joint)
        .map(|(&o, &p)| (o as f64 - n * p).powi(2) / (n * p))
        .sum();
    let dof = (s * s - 1) as f64;
    let p_value = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat);
    (stat, p_value)
}

/// Signature of a log-temperature update `(zeta, gain, exchanged, alpha) -> zeta`.
pub type TemperatureUpdate = fn(f64, f64, bool, f64) -> f64;

/// The update with its sign reversed; used to confirm the fixed-point check
/// can fail.
pub fn sign_flipped_update(zeta: f64, gain: f64, exchanged: bool, alpha: f64) -> f64 {
    zeta + gain * (f64::from(u8::from(exchanged)) - alpha)
}

/// Drives the log temperature of the hotter of two replicas on a standard
/// normal with exact independent draws, then estimates the exchange rate at
/// the final temperature. Returns (final zeta, exchange rate).
pub fn temperature_fixed_point(
    update: TemperatureUpdate,
    iterations: u64,
    seed: u64,
) -> (f64, f64) {
    let schedule = AdaptationSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_normal = |x: f64| -0.5 * x * x;
    let swap = |zeta: f64, rng: &mut ChaCha8Rng| -> bool {
        let t = zeta.exp();
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let (x_low, x_high) = (z1, z2 / t.sqrt());
        let log_acc = ((1.0 - t) * (log_normal(x_high) - log_normal(x_low))).min(0.0);
        let u: f64 = rng.random();
        u.ln() <= log_acc
    };
    let mut zeta = 0.5f64.ln();
    for n in 0..iterations {
        let exchanged = swap(zeta, &mut rng);
        let gain = schedule.temperature_gain(2, n, zeta);
        let next = update(zeta, gain, exchanged, schedule.alpha);
        // keep the hot replica strictly below t = 1 and above a floor
        zeta = project_order(next, Some(0.0), Some(-50.0), schedule.order_margin);
    }
    let trials = 200_000;
    let hits = (0..trials).filter(|_| swap(zeta, &mut rng)).count();
    (zeta, hits as f64 / trials as f64)
}

/// Options for [`run_checks`].
#[derive(Debug, Clone, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Replace the temperature update with its sign-flipped version.
    pub inject_sign_flip: bool,
}

/// Runs the full self-check suite.
pub fn run_checks(options: &CheckOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let lattice = toy_lattice();
    let variance = 2.0;

    let residual = detailed_balance_residual(&lattice, variance);
    let freq = lattice_frequencies(&lattice, variance, 1_000_000, 100, options.seed);
    out.push(CheckResult::new(
        "lattice detailed balance",
        residual < 1e-15 && freq.max_transition_z < 4.5,
        format!(
            "exact residual {residual:.2e}; max transition z-score {:.2}",
            freq.max_transition_z
        ),
    ));
    out.push(CheckResult::new(
        "lattice stationary frequencies",
        freq.max_abs_z <= 3.0,
        format!(
            "max |z| {:.2} over {} states",
            freq.max_abs_z,
            lattice.states()
        ),
    ));

    let (stat, p) = exchange_chi_square(&lattice, 1.0, 0.3, 200_000, options.seed ^ 0x5eed);
    out.push(CheckResult::new(
        "exchange preserves joint",
        p > 0.001,
        format!("chi-square {stat:.2} on 24 dof, p = {p:.4}"),
    ));

    let unit = GaussianMixtureTarget::new(vec![1.0], vec![vec![0.0, 0.0]], vec![vec![1.0, 1.0]])
        .expect("valid");
    let at_mean = unit.log_density(&[0.0, 0.0]).unwrap_or(f64::NAN);
    let mixture = make_section41_target(None).expect("valid");
    let x = [3.0, -7.5];
    let direct: f64 = (0..4)
        .map(|k| {
            let (m, v) = (&mixture.means()[k], &mixture.variances()[k]);
            let q: f64 = (0..2).map(|j| (x[j] - m[j]).powi(2) / v[j]).sum();
            0.25 * (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * (v[0] * v[1]).sqrt())
        })
        .sum::<f64>()
        .ln();
    let got = mixture.log_density(&x).unwrap_or(f64::NAN);
    let oracle_ok = (at_mean + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12
        && (got - direct).abs() < 1e-10 * direct.abs();
    out.push(CheckResult::new(
        "oracle target densities",
        oracle_ok,
        format!("unit normal at mean {at_mean:.12}; mixture {got:.12} vs direct {direct:.12}"),
    ));

    let schedule = AdaptationSchedule::default();
    let points = [1_000u64, 10_000, 100_000, 1_000_000];
    let a: Vec<f64> = points
        .iter()
        .map(|&n| schedule.temperature_gain(5, n, -3.0))
        .collect();
    let b: Vec<f64> = points.iter().map(|&n| schedule.proposal_gain(n)).collect();
    let decays = a.windows(2).all(|w| w[1] < w[0])
        && b.windows(2).all(|w| w[1] < w[0])
        && a[3] < 1e-3
        && b[3] < 1e-4;
    out.push(CheckResult::new(
        "schedule decay",
        decays,
        format!("temperature gain {a:?}; proposal gain {b:?}"),
    ));

    let update: TemperatureUpdate = if options.inject_sign_flip {
        sign_flipped_update
    } else {
        temperature_step
    };
    let (zeta, rate) = temperature_fixed_point(update, 200_000, options.seed.wrapping_add(1));
    out.push(CheckResult::new(
        "temperature fixed point",
        (rate - 0.5).abs() < 0.02,
        format!(
            "final t = {:.4}, exchange rate {rate:.4} (target 0.5)",
            zeta.exp()
        ),
    ));
    out
}
