//! Tempered densities and the replica-exchange acceptance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, OutsideSupport, Result};
use crate::target::{LogSplit, TargetModel};

/// How the inverse temperature enters the replica densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemperingMode {
    /// pi_t(x) ∝ pi(x)^t
    #[default]
    PowerOfTarget,
    /// pi_t(x) ∝ likelihood(x)^t * base(x)
    LikelihoodTempered,
}

/// Density of one state split into the tempered part `a` and the untempered
/// part `b`, so that `log pi_t(x) = t * a + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperedParts {
    pub tempered: f64,
    pub base: f64,
}

impl TemperedParts {
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        t * self.tempered + self.base
    }

    /// Untempered log density, `log pi(x)`.
    pub fn full(&self) -> f64 {
        self.tempered + self.base
    }
}

impl TemperingMode {
    /// Fails when the mode needs a likelihood/base split the model lacks.
    pub fn check<M: TargetModel + ?Sized>(&self, model: &M) -> Result<()> {
        match self {
            TemperingMode::LikelihoodTempered if !model.has_split() => Err(Error::MissingSplit),
            _ => Ok(()),
        }
    }

    /// Evaluates the tempered/untempered decomposition at `x`.
    ///
    /// # Panics
    /// In `LikelihoodTempered` mode when the model has no split; call
    /// [`TemperingMode::check`] first.
    pub fn parts<M: TargetModel + ?Sized>(
        &self,
        model: &M,
        x: &[f64],
    ) -> Result<TemperedParts, OutsideSupport> {
        match self {
            TemperingMode::PowerOfTarget => Ok(TemperedParts {
                tempered: model.log_density(x)?,
                base: 0.0,
            }),
            TemperingMode::LikelihoodTempered => {
                let LogSplit {
                    log_likelihood,
                    log_base,
                } = model
                    .log_split(x)
                    .expect("likelihood tempering needs a split target")?;
                Ok(TemperedParts {
                    tempered: log_likelihood,
                    base: log_base,
                })
            }
        }
    }
}

/// Unnormalized tempered log density `log pi_t(x)`.
pub fn log_tempered<M: TargetModel + ?Sized>(
    model: &M,
    mode: TemperingMode,
    t: f64,
    x: &[f64],
) -> Result<f64, OutsideSupport> {
    debug_assert!(
        t > 0.0 && t <= 1.0,
        "inverse temperature {t} outside (0, 1]"
    );
    Ok(mode.parts(model, x)?.at(t))
}

/// Unclipped log acceptance ratio for swapping the states of the replicas at
/// inverse temperatures `t_low` (colder) and `t_high` (hotter), built from the
/// four tempered densities.
pub fn exchange_log_ratio(
    t_low: f64,
    t_high: f64,
    low: &TemperedParts,
    high: &TemperedParts,
) -> f64 {
    (high.at(t_low) + low.at(t_high)) - (low.at(t_low) + high.at(t_high))
}

/// Same quantity through the simplified form `(t_low - t_high) * (a_high - a_low)`.
pub fn exchange_log_ratio_simplified(
    t_low: f64,
    t_high: f64,
    low: &TemperedParts,
    high: &TemperedParts,
) -> f64 {
    (t_low - t_high) * (high.tempered - low.tempered)
}

/// `min(0, log ratio)` for exchanging the states of two adjacent replicas.
pub fn exchange_log_acceptance<M: TargetModel + ?Sized>(
    model: &M,
    mode: TemperingMode,
    t_low: f64,
    t_high: f64,
    x_low: &[f64],
    x_high: &[f64],
) -> Result<f64, OutsideSupport> {
    let low = mode.parts(model, x_low)?;
    let high = mode.parts(model, x_high)?;
    Ok(exchange_log_ratio(t_low, t_high, &low, &high).min(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{make_section42_target, GaussianMixtureTarget};
    use proptest::prelude::*;
    use rand::RngCore;

    /// Target with a fixed log density, used to pin arithmetic.
    struct Constant {
        log_likelihood: f64,
        log_base: f64,
    }

    impl TargetModel for Constant {
        fn dimension(&self) -> usize {
            1
        }
        fn in_support(&self, x: &[f64]) -> bool {
            x[0] >= 0.0
        }
        fn log_density(&self, x: &[f64]) -> Result<f64, OutsideSupport> {
            if !self.in_support(x) {
                return Err(OutsideSupport);
            }
            Ok(self.log_likelihood + self.log_base)
        }
        fn log_split(&self, x: &[f64]) -> Option<Result<LogSplit, OutsideSupport>> {
            Some(self.log_density(x).map(|_| LogSplit {
                log_likelihood: self.log_likelihood,
                log_base: self.log_base,
            }))
        }
        fn has_split(&self) -> bool {
            true
        }
        fn initial_position(&self, _: &mut dyn RngCore) -> Vec<f64> {
            vec![0.0]
        }
    }

    fn unit_normal() -> GaussianMixtureTarget {
        GaussianMixtureTarget::new(vec![1.0], vec![vec![0.0]], vec![vec![1.0]]).unwrap()
    }

    #[test]
    fn identity_at_t_one() {
        let m = make_section42_target(vec![-2.0, 0.0, 1.0, 5.0]).unwrap();
        let mut x = vec![-2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        x.extend([1.0; 6]);
        x.extend([1.0 / 6.0; 5]);
        let full = m.log_density(&x).unwrap();
        for mode in [
            TemperingMode::PowerOfTarget,
            TemperingMode::LikelihoodTempered,
        ] {
            assert_eq!(log_tempered(&m, mode, 1.0, &x).unwrap(), full);
        }
    }

    #[test]
    fn power_substitution() {
        let m = Constant {
            log_likelihood: -2.0,
            log_base: 0.0,
        };
        let v = log_tempered(&m, TemperingMode::PowerOfTarget, 0.5, &[1.0]).unwrap();
        assert!((v - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn likelihood_mode_tends_to_base() {
        let m = Constant {
            log_likelihood: -50.0,
            log_base: -3.0,
        };
        let v = log_tempered(&m, TemperingMode::LikelihoodTempered, 1e-12, &[1.0]).unwrap();
        assert!((v - (-3.0)).abs() < 1e-9);
    }

    #[test]
    fn outside_support_propagates() {
        let m = Constant {
            log_likelihood: -1.0,
            log_base: 0.0,
        };
        assert_eq!(
            log_tempered(&m, TemperingMode::PowerOfTarget, 0.5, &[-1.0]),
            Err(OutsideSupport)
        );
    }

    #[test]
    fn missing_split_detected() {
        assert!(matches!(
            TemperingMode::LikelihoodTempered.check(&unit_normal()),
            Err(Error::MissingSplit)
        ));
        assert!(TemperingMode::PowerOfTarget.check(&unit_normal()).is_ok());
    }

    #[test]
    fn exchange_identical_states() {
        let m = unit_normal();
        let v = exchange_log_acceptance(&m, TemperingMode::PowerOfTarget, 1.0, 0.3, &[0.7], &[0.7])
            .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn exchange_substitution() {
        let low = TemperedParts {
            tempered: -1.0,
            base: 0.0,
        };
        let high = TemperedParts {
            tempered: -3.0,
            base: 0.0,
        };
        let v = exchange_log_ratio(1.0, 0.5, &low, &high).min(0.0);
        assert!((v - (-1.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn general_form_equals_shortcut(t_low in 0.01f64..1.0, frac in 0.01f64..0.99,
                                        a in -500.0f64..0.0, b in -500.0f64..0.0,
                                        ba in -50.0f64..0.0, bb in -50.0f64..0.0) {
            let t_high = t_low * frac;
            for (base_a, base_b) in [(0.0, 0.0), (ba, bb)] {
                let low = TemperedParts { tempered: a, base: base_a };
                let high = TemperedParts { tempered: b, base: base_b };
                let general = exchange_log_ratio(t_low, t_high, &low, &high);
                let short = exchange_log_ratio_simplified(t_low, t_high, &low, &high);
                prop_assert!((general - short).abs() < 1e-9);
            }
        }

        #[test]
        fn swap_antisymmetry(t_low in 0.01f64..1.0, frac in 0.01f64..0.99,
                             a in -500.0f64..0.0, b in -500.0f64..0.0) {
            let t_high = t_low * frac;
            let pa = TemperedParts { tempered: a, base: 0.3 };
            let pb = TemperedParts { tempered: b, base: -1.1 };
            let fwd = exchange_log_ratio(t_low, t_high, &pa, &pb);
            let back = exchange_log_ratio(t_low, t_high, &pb, &pa);
            prop_assert!((fwd + back).abs() < 1e-9);
        }

        #[test]
        fn power_mode_monotone_in_t(x in -5.0f64..5.0, t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
            // log density of N(0, 0.01) is positive near 0 and negative in the tails
            let m = GaussianMixtureTarget::new(vec![1.0], vec![vec![0.0]], vec![vec![0.01]]).unwrap();
            let ld = m.log_density(&[x]).unwrap();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let v_lo = log_tempered(&m, TemperingMode::PowerOfTarget, lo, &[x]).unwrap();
            let v_hi = log_tempered(&m, TemperingMode::PowerOfTarget, hi, &[x]).unwrap();
            if ld >= 0.0 {
                prop_assert!(v_hi >= v_lo);
            } else {
                prop_assert!(v_hi <= v_lo);
            }
        }
    }
}
