//! Stochastic-approximation rules for the ladder: log inverse temperatures,
//! proposal means/variances, and the decision to drop the hottest replicas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ProposalParams;

/// Gain sequences and constants of the adaptation.
///
/// Temperature gain for replica `l` (1-based) at iteration `n`:
/// `a = 1 / (1 + n / (a_offset + a_slope * l)) * ln(exp(-zeta) + 1)`.
/// Proposal gain: `b = 1 / (b_offset + b_slope * n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationSchedule {
    /// Target exchange ratio.
    pub alpha: f64,
    /// Probability of a parallel step (otherwise an exchange step).
    pub alpha_r: f64,
    pub a_offset: f64,
    pub a_slope: f64,
    pub b_offset: f64,
    pub b_slope: f64,
    /// Iterations between truncation checks (`m`).
    pub check_period: u64,
    /// Consecutive successful checks needed to truncate (`d`).
    pub success_threshold: u32,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Minimum gap kept between neighbouring log inverse temperatures.
    pub order_margin: f64,
}

impl Default for AdaptationSchedule {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            alpha_r: 0.5,
            a_offset: 20.0,
            a_slope: 10.0,
            b_offset: 5.0,
            b_slope: 0.1,
            check_period: 10_000,
            success_threshold: 3,
            gamma_min: 1e-8,
            gamma_max: 1e8,
            order_margin: 1e-6,
        }
    }
}

impl AdaptationSchedule {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha_r) {
            return Err(Error::Config(format!(
                "alpha_r must lie in [0,1], got {}",
                self.alpha_r
            )));
        }
        if !(self.a_offset + self.a_slope > 0.0) || self.a_slope < 0.0 {
            return Err(Error::Config(
                "temperature gain constants must be positive".into(),
            ));
        }
        if !(self.b_offset >= 1.0) || !(self.b_slope > 0.0) {
            return Err(Error::Config(
                "proposal gain needs b_offset >= 1 and b_slope > 0 so that b_n lies in (0,1]"
                    .into(),
            ));
        }
        if self.check_period == 0 || self.success_threshold == 0 {
            return Err(Error::Config(
                "check_period and success_threshold must be positive".into(),
            ));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min < self.gamma_max && self.gamma_max.is_finite())
        {
            return Err(Error::Config("need 0 < gamma_min < gamma_max < inf".into()));
        }
        if !(self.order_margin > 0.0) {
            return Err(Error::Config("order_margin must be positive".into()));
        }
        Ok(())
    }

    /// `a(l, n, zeta)` for the 1-based ladder index `l`.
    pub fn temperature_gain(&self, l: usize, n: u64, zeta: f64) -> f64 {
        let decay = 1.0 / (1.0 + n as f64 / (self.a_offset + self.a_slope * l as f64));
        decay * softplus(-zeta)
    }

    /// `b(n)`.
    pub fn proposal_gain(&self, n: u64) -> f64 {
        1.0 / (self.b_offset + self.b_slope * n as f64)
    }

    pub fn clamp_gamma(&self, g: f64) -> f64 {
        g.clamp(self.gamma_min, self.gamma_max)
    }
}

/// `ln(exp(v) + 1)` without overflow.
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Both gains `(a(l, n, zeta), b(n))`.
pub fn gains(schedule: &AdaptationSchedule, l: usize, n: u64, zeta: f64) -> (f64, f64) {
    (
        schedule.temperature_gain(l, n, zeta),
        schedule.proposal_gain(n),
    )
}

/// Raw Robbins-Monro step on a log inverse temperature: `zeta - gain * (ER - alpha)`.
pub fn temperature_step(zeta: f64, gain: f64, exchanged: bool, alpha: f64) -> f64 {
    zeta - gain * (f64::from(u8::from(exchanged)) - alpha)
}

/// Keeps `zeta` strictly between its neighbours: at most `colder - margin`
/// and at least `hotter + margin`.
pub fn project_order(zeta: f64, colder: Option<f64>, hotter: Option<f64>, margin: f64) -> f64 {
    let mut z = zeta;
    if let Some(c) = colder {
        z = z.min(c - margin);
    }
    if let Some(h) = hotter {
        z = z.max(h + margin);
    }
    z
}

/// Temperature update followed by the ordering projection.
pub fn update_temperature(
    zeta: f64,
    gain: f64,
    exchanged: bool,
    alpha: f64,
    colder: Option<f64>,
    hotter: Option<f64>,
    margin: f64,
) -> f64 {
    project_order(
        temperature_step(zeta, gain, exchanged, alpha),
        colder,
        hotter,
        margin,
    )
}

/// Proposal learning for one replica:
/// `mu' = mu + b (x - mu)`, `gamma' = gamma + b ((x - mu')^2 - gamma)`,
/// with `gamma'` clamped to `[gamma_min, gamma_max]`.
pub fn update_proposal(
    params: &mut ProposalParams,
    x: &[f64],
    b: f64,
    gamma_min: f64,
    gamma_max: f64,
) {
    for ((mu, gamma), &xj) in params
        .means
        .iter_mut()
        .zip(params.variances.iter_mut())
        .zip(x)
    {
        *mu += b * (xj - *mu);
        let dev = xj - *mu;
        *gamma = (*gamma + b * (dev * dev - *gamma)).clamp(gamma_min, gamma_max);
    }
}

/// After an accepted exchange the auxiliary mean jumps to the new state.
pub fn mean_jump_on_exchange(params: &mut ProposalParams, x: &[f64]) {
    params.means.copy_from_slice(x);
}

/// Per-coordinate running mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMoments {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMoments {
    pub fn new(dimension: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dimension],
            m2: vec![0.0; dimension],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance of coordinate `j`; `None` before two observations.
    pub fn variance(&self, j: usize) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2[j] / (self.count - 1) as f64).max(0.0))
    }

    /// `sum_j ln V_j`, or `None` when any variance is unavailable or zero.
    pub fn log_variance_product(&self) -> Option<f64> {
        let mut total = 0.0;
        for j in 0..self.mean.len() {
            let v = self.variance(j)?;
            if v <= 0.0 {
                return None;
            }
            total += v.ln();
        }
        Some(total)
    }
}

/// `prod_j gamma_j >= prod_j V_j`, compared as sums of logs.
pub fn flatness_criterion(gamma: &[f64], moments: &RunningMoments) -> bool {
    match moments.log_variance_product() {
        Some(log_v) => gamma.iter().map(|g| g.ln()).sum::<f64>() >= log_v,
        None => false,
    }
}

/// One truncation check over the active replicas.
///
/// Each counter is bumped when its replica passes the flatness criterion and
/// reset otherwise (successes must be consecutive); counters saturate at
/// `threshold`. Returns the new active length, i.e. the smallest 1-based
/// index whose counter reached `threshold`, or `None` if no replica did.
pub fn truncation_check<'a, I>(replicas: I, counters: &mut [u32], threshold: u32) -> Option<usize>
where
    I: IntoIterator<Item = (&'a [f64], &'a RunningMoments)>,
{
    for ((gamma, moments), c) in replicas.into_iter().zip(counters.iter_mut()) {
        if flatness_criterion(gamma, moments) {
            *c = (*c + 1).min(threshold);
        } else {
            *c = 0;
        }
    }
    counters.iter().position(|&c| c >= threshold).map(|i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn temperature_step_substitution() {
        assert!((temperature_step(-1.0, 0.1, true, 0.5) - (-1.05)).abs() < 1e-12);
        assert!((temperature_step(-1.0, 0.1, false, 0.5) - (-0.95)).abs() < 1e-12);
    }

    #[test]
    fn projection_keeps_order() {
        let z = update_temperature(-0.1, 5.0, false, 0.5, Some(0.0), Some(-2.0), 1e-6);
        assert!((z - (-1e-6)).abs() < 1e-15);
        let z = update_temperature(-1.9, 5.0, true, 0.5, Some(-1.0), Some(-2.0), 1e-6);
        assert!((z - (-2.0 + 1e-6)).abs() < 1e-12);
        let z = update_temperature(-1.0, 0.1, true, 0.5, Some(0.0), None, 1e-6);
        assert!((z - (-1.05)).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_alpha_has_zero_drift() {
        // E[ER - alpha] = alpha (1 - alpha) - (1 - alpha) alpha = 0
        let alpha = 0.5;
        let up = temperature_step(0.0, 1.0, true, alpha);
        let down = temperature_step(0.0, 1.0, false, alpha);
        assert!((alpha * up + (1.0 - alpha) * down).abs() < 1e-12);
    }

    #[test]
    fn proposal_update_zero_deviation() {
        let mut p = ProposalParams::new(vec![2.0, 3.0], vec![1.0, -1.0]);
        update_proposal(&mut p, &[1.0, -1.0], 0.25, 1e-8, 1e8);
        assert_eq!(p.means, vec![1.0, -1.0]);
        assert!((p.variances[0] - 0.75 * 2.0).abs() < 1e-12);
        assert!((p.variances[1] - 0.75 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn proposal_update_substitution() {
        let mut p = ProposalParams::new(vec![1.0], vec![0.0]);
        update_proposal(&mut p, &[1.0], 0.1, 1e-8, 1e8);
        assert!((p.means[0] - 0.1).abs() < 1e-12);
        assert!((p.variances[0] - 0.981).abs() < 1e-12);
    }

    #[test]
    fn proposal_update_clamps() {
        let mut p = ProposalParams::new(vec![1e-8], vec![0.0]);
        update_proposal(&mut p, &[0.0], 1.0, 1e-8, 1e8);
        assert_eq!(p.variances[0], 1e-8);
        let mut p = ProposalParams::new(vec![1.0], vec![0.0]);
        update_proposal(&mut p, &[1e6], 0.5, 1e-8, 10.0);
        assert_eq!(p.variances[0], 10.0);
    }

    /// Standalone scalar rerun of the recursion on the same input stream.
    fn scalar_recursion(stream: &[f64]) -> f64 {
        let (mut mu, mut g) = (0.0f64, 1.0f64);
        for (n, &x) in stream.iter().enumerate() {
            let b = 1.0 / (5.0 + 0.1 * n as f64);
            let mu_new = mu + b * (x - mu);
            g = g + b * ((x - mu_new).powi(2) - g);
            mu = mu_new;
        }
        g
    }

    #[test]
    fn variance_tracking_on_iid_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let dist = Normal::new(0.0, 2.0).unwrap();
        let stream: Vec<f64> = (0..100_000).map(|_| dist.sample(&mut rng)).collect();
        let schedule = AdaptationSchedule::default();
        let mut p = ProposalParams::new(vec![1.0], vec![0.0]);
        for (n, &x) in stream.iter().enumerate() {
            update_proposal(&mut p, &[x], schedule.proposal_gain(n as u64), 1e-8, 1e8);
        }
        let oracle = scalar_recursion(&stream);
        assert!((p.variances[0] - oracle).abs() <= 0.1 * oracle);
        // and both sit near the true variance 4
        assert!((p.variances[0] - 4.0).abs() < 0.4, "{}", p.variances[0]);
    }

    #[test]
    fn mean_jump_assigns() {
        let mut p = ProposalParams::new(vec![5.0, 6.0], vec![1.0, 2.0]);
        mean_jump_on_exchange(&mut p, &[9.0, -9.0]);
        assert_eq!(p.means, vec![9.0, -9.0]);
        assert_eq!(p.variances, vec![5.0, 6.0]);
    }

    #[test]
    fn gain_values() {
        let s = AdaptationSchedule::default();
        assert!((s.temperature_gain(2, 0, 0.0) - 2f64.ln()).abs() < 1e-12);
        assert!((s.proposal_gain(0) - 0.2).abs() < 1e-12);
        assert!((s.proposal_gain(950) - 0.01).abs() < 1e-12);
        let (a, b) = gains(&s, 2, 0, 0.0);
        assert!((a - std::f64::consts::LN_2).abs() < 1e-12 && (b - 0.2).abs() < 1e-12);
        assert!(s.temperature_gain(3, 0, -800.0).is_finite());
    }

    #[test]
    fn gains_decrease_past_one_thousand() {
        let s = AdaptationSchedule::default();
        let mut prev_b = f64::INFINITY;
        let mut prev_a = [f64::INFINITY; 25];
        for n in (1_000..1_000_000u64).step_by(997) {
            let b = s.proposal_gain(n);
            assert!(b < prev_b);
            prev_b = b;
            for l in 1..=25 {
                let a = s.temperature_gain(l, n, -1.0);
                assert!(a < prev_a[l - 1]);
                prev_a[l - 1] = a;
            }
        }
        assert!(s.temperature_gain(25, 100_000_000, -5.0) < 1e-3);
        assert!(s.proposal_gain(100_000_000) < 1e-6);
    }

    #[test]
    fn running_moments() {
        let mut m = RunningMoments::new(2);
        assert_eq!(m.variance(0), None);
        for x in [[1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]] {
            let before = m.count();
            m.push(&x);
            assert_eq!(m.count(), before + 1);
        }
        assert!((m.variance(0).unwrap() - 5.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.variance(1), Some(0.0));
        assert_eq!(m.log_variance_product(), None);
    }

    fn moments_with_variance(v: f64) -> RunningMoments {
        let mut m = RunningMoments::new(1);
        let s = (v / 2.0).sqrt();
        // unbiased variance of (-s, s, -s, s, ...) with 2k points is 2k s^2 / (2k-1)
        for i in 0..1000 {
            m.push(&[if i % 2 == 0 { -s } else { s }]);
        }
        m
    }

    #[test]
    fn truncation_all_fail() {
        let moments: Vec<RunningMoments> = (0..4).map(|_| moments_with_variance(100.0)).collect();
        let gammas = vec![vec![1.0]; 4];
        let mut counters = vec![2, 1, 0, 2];
        let out = truncation_check(
            gammas.iter().map(|g| g.as_slice()).zip(moments.iter()),
            &mut counters,
            3,
        );
        assert_eq!(out, None);
        assert_eq!(counters, vec![0, 0, 0, 0]);
    }

    #[test]
    fn truncation_picks_smallest_passing_index() {
        let moments: Vec<RunningMoments> = (0..8).map(|_| moments_with_variance(100.0)).collect();
        // replicas 5 and 7 (1-based) are flat enough
        let mut gammas = vec![vec![1.0]; 8];
        gammas[4] = vec![1000.0];
        gammas[6] = vec![1000.0];
        let mut counters = vec![0; 8];
        for check in 1..=3 {
            let out = truncation_check(
                gammas.iter().map(|g| g.as_slice()).zip(moments.iter()),
                &mut counters,
                3,
            );
            if check < 3 {
                assert_eq!(out, None);
            } else {
                assert_eq!(out, Some(5));
            }
        }
        assert!(counters.iter().all(|&c| c <= 3));
    }

    #[test]
    fn interrupted_success_resets() {
        let flat = moments_with_variance(1.0);
        let mut counters = vec![0];
        let big = [10.0];
        let small = [0.01];
        truncation_check([(&big[..], &flat)], &mut counters, 3);
        truncation_check([(&big[..], &flat)], &mut counters, 3);
        truncation_check([(&small[..], &flat)], &mut counters, 3);
        assert_eq!(counters, vec![0]);
        assert_eq!(
            truncation_check([(&big[..], &flat)], &mut counters, 3),
            None
        );
    }

    #[test]
    fn schedule_validation() {
        assert!(AdaptationSchedule::default().validate().is_ok());
        let bad = AdaptationSchedule {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AdaptationSchedule {
            gamma_min: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn temperature_increment_bounded_by_gain(zeta in -10.0f64..-0.01, n in 0u64..10_000_000,
                                                 l in 2usize..30, exchanged: bool) {
            let s = AdaptationSchedule::default();
            let a = s.temperature_gain(l, n, zeta);
            let z = update_temperature(zeta, a, exchanged, s.alpha, Some(0.0), Some(-20.0), s.order_margin);
            prop_assert!((z - zeta).abs() <= a + 1e-15);
            prop_assert!(z < 0.0 && z > -20.0);
        }

        #[test]
        fn gamma_increment_bounded(g in 1e-3f64..1e3, mu in -50.0f64..50.0, x in -50.0f64..50.0, n in 0u64..1_000_000) {
            let s = AdaptationSchedule::default();
            let b = s.proposal_gain(n);
            let mut p = ProposalParams::new(vec![g], vec![mu]);
            update_proposal(&mut p, &[x], b, s.gamma_min, s.gamma_max);
            let dev = (x - p.means[0]).powi(2);
            prop_assert!((p.variances[0] - g).abs() <= b * dev.max(s.gamma_max) + 1e-12);
        }

        #[test]
        fn moments_variance_nonnegative(xs in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            let mut m = RunningMoments::new(1);
            for x in &xs { m.push(&[*x]); }
            prop_assert!(m.variance(0).unwrap() >= 0.0);
            prop_assert_eq!(m.count(), xs.len() as u64);
        }
    }

    #[test]
    fn moments_match_direct_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..500).map(|_| rng.random_range(-3.0..7.0)).collect();
        let mut m = RunningMoments::new(1);
        for &x in &xs {
            m.push(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / 500.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 499.0;
        assert!((m.variance(0).unwrap() - var).abs() < 1e-10);
    }
}
