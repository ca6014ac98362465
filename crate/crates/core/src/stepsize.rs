//! Power-law relaxation schedules `α_k = α₀ / (k + k₀)^γ` and a closed-form
//! decision procedure for the three stepsize conditions.

use std::fmt;

use crate::error::{Error, Result};
use crate::validation::ValidationReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeSchedule {
    alpha0: f64,
    gamma: f64,
    offset: u64,
}

impl StepsizeSchedule {
    /// `alpha0 ∈ (0, 1]`, `gamma ≥ 0`, `offset ≥ 1`. These guarantee
    /// `α_k ∈ (0, 1]` and monotonicity for every `k`.
    pub fn power_law(alpha0: f64, gamma: f64, offset: u64) -> Result<Self> {
        if !(alpha0 > 0.0 && alpha0 <= 1.0) {
            return Err(Error::invalid(format!("alpha0 must lie in (0, 1], got {alpha0}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be nonnegative, got {gamma}")));
        }
        if offset == 0 {
            return Err(Error::invalid("offset k0 must be at least 1"));
        }
        Ok(StepsizeSchedule {
            alpha0,
            gamma,
            offset,
        })
    }

    /// `1/(k+1)^γ`
    pub fn standard(gamma: f64) -> Result<Self> {
        Self::power_law(1.0, gamma, 1)
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn alpha(&self, k: u64) -> f64 {
        self.alpha0 / ((k + self.offset) as f64).powf(self.gamma)
    }

    /// `α_{⌊k/2⌋}`
    pub fn alpha_half(&self, k: u64) -> f64 {
        self.alpha(k / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepsizeCondition {
    /// `α_k ∈ (0, 1]`
    UnitInterval,
    /// `Σ α_k = ∞`
    DivergentSum,
    /// `Σ α_k α_{⌊k/2⌋} < ∞`
    SummableCoupledProducts,
}

impl fmt::Display for StepsizeCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepsizeCondition::UnitInterval => "α_k ∈ (0, 1]",
            StepsizeCondition::DivergentSum => "Σ α_k = ∞",
            StepsizeCondition::SummableCoupledProducts => "Σ α_k α_⌊k/2⌋ < ∞",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepsizeReport {
    pub verdicts: Vec<(StepsizeCondition, bool)>,
}

impl StepsizeReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|(_, ok)| *ok)
    }

    pub fn failed(&self) -> Vec<StepsizeCondition> {
        self.verdicts.iter().filter(|(_, ok)| !ok).map(|(c, _)| *c).collect()
    }

    pub fn to_report(&self) -> ValidationReport {
        let mut report = ValidationReport::new("stepsize conditions");
        for (cond, ok) in &self.verdicts {
            if *ok {
                report.note(format!("holds: {cond}"));
            } else {
                report.fail(format!("violated: {cond}"));
            }
        }
        report
    }
}

/// Decides the three conditions analytically for the power-law family.
///
/// The coupled term behaves like `k^{-2γ}`, so it is summable iff `γ > 1/2`;
/// the plain sum diverges iff `γ ≤ 1`.
pub fn check_stepsize_conditions(s: &StepsizeSchedule) -> StepsizeReport {
    let unit = s.alpha0 > 0.0 && s.alpha0 <= (s.offset as f64).powf(s.gamma);
    StepsizeReport {
        verdicts: vec![
            (StepsizeCondition::UnitInterval, unit && s.alpha0 <= 1.0),
            (StepsizeCondition::DivergentSum, s.gamma <= 1.0),
            (StepsizeCondition::SummableCoupledProducts, s.gamma > 0.5),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        let s = StepsizeSchedule::power_law(1.0, 0.7, 1).unwrap();
        assert_eq!(s.alpha(0), 1.0);
        assert!((s.alpha(1) - 0.615_572_206_672_458).abs() < 1e-12);
        let c = StepsizeSchedule::power_law(1.0, 0.0, 1).unwrap();
        assert!((0..50).all(|k| c.alpha(k) == 1.0));
        let h = StepsizeSchedule::power_law(0.5, 1.0, 1).unwrap();
        assert!((h.alpha(9) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn alpha_half_examples() {
        let s = StepsizeSchedule::power_law(1.0, 0.7, 1).unwrap();
        assert_eq!(s.alpha_half(0), s.alpha(0));
        assert_eq!(s.alpha_half(1), s.alpha(0));
        assert_eq!(s.alpha_half(5), s.alpha(2));
        assert_eq!(s.alpha_half(7), 1.0 / 4f64.powf(0.7));
    }

    #[test]
    fn condition_verdicts() {
        let check = |g: f64| check_stepsize_conditions(&StepsizeSchedule::standard(g).unwrap());
        assert!(check(0.7).passed());
        assert!(check(1.0).passed());
        assert_eq!(check(0.4).failed(), vec![StepsizeCondition::SummableCoupledProducts]);
        assert_eq!(check(1.1).failed(), vec![StepsizeCondition::DivergentSum]);
        assert_eq!(check(0.5).failed(), vec![StepsizeCondition::SummableCoupledProducts]);
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(StepsizeSchedule::power_law(0.0, 0.7, 1).is_err());
        assert!(StepsizeSchedule::power_law(1.5, 0.7, 1).is_err());
        assert!(StepsizeSchedule::power_law(1.0, -0.1, 1).is_err());
        assert!(StepsizeSchedule::power_law(1.0, 0.7, 0).is_err());
    }

    #[test]
    fn monotone_and_in_unit_interval() {
        for (a0, g, k0) in [(1.0, 0.7, 1), (0.3, 0.55, 4), (1.0, 1.0, 2), (0.9, 0.0, 1)] {
            let s = StepsizeSchedule::power_law(a0, g, k0).unwrap();
            let mut prev = s.alpha(0);
            assert!(prev > 0.0 && prev <= 1.0);
            for k in 1..=1_000_000u64 {
                let a = s.alpha(k);
                assert!(a > 0.0 && a <= prev, "k = {k}");
                prev = a;
            }
        }
    }
}
