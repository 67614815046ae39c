//! α-investing: the test level spent on candidate `j` is `a_j / (1 + j − f)`
//! where `f` is the step of the last rejection. A rejection earns the payout,
//! a non-rejection costs `α_j / (1 − α_j)`.

use serde::{Deserialize, Serialize};

pub const DEFAULT_INITIAL_WEALTH: f64 = 0.50;
pub const DEFAULT_PAYOUT: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaInvesting {
    pub wealth: f64,
    pub payout: f64,
    pub last_rejection: usize,
    pub step: usize,
}

impl Default for AlphaInvesting {
    fn default() -> Self {
        Self::new(DEFAULT_INITIAL_WEALTH, DEFAULT_PAYOUT)
    }
}

impl AlphaInvesting {
    pub fn new(initial_wealth: f64, payout: f64) -> Self {
        Self {
            wealth: initial_wealth,
            payout,
            last_rejection: 0,
            step: 1,
        }
    }

    /// Once wealth reaches zero no further test can reject.
    pub fn is_exhausted(&self) -> bool {
        !(self.wealth > 0.0)
    }

    /// Level for the current step.
    pub fn alpha(&self) -> f64 {
        if self.is_exhausted() {
            0.0
        } else {
            self.wealth / (1 + self.step - self.last_rejection) as f64
        }
    }

    /// Advances one step and returns the level that was used.
    pub fn advance(&mut self, rejected: bool) -> f64 {
        let alpha = self.alpha();
        if !self.is_exhausted() {
            if rejected {
                self.wealth += self.payout;
                self.last_rejection = self.step;
            } else {
                self.wealth -= alpha / (1.0 - alpha);
                if !self.wealth.is_finite() {
                    self.wealth = f64::NEG_INFINITY;
                }
            }
        }
        self.step += 1;
        alpha
    }
}

/// Functional form of [`AlphaInvesting::advance`].
pub fn alpha_step(investing: AlphaInvesting, rejected: bool) -> (AlphaInvesting, f64) {
    let mut next = investing;
    let alpha = next.advance(rejected);
    (next, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_level_is_half_the_wealth() {
        assert_abs_diff_eq!(AlphaInvesting::default().alpha(), 0.25);
    }

    #[test]
    fn rejection_pays_out() {
        let (next, alpha) = alpha_step(AlphaInvesting::default(), true);
        assert_abs_diff_eq!(alpha, 0.25);
        assert_abs_diff_eq!(next.wealth, 0.55, epsilon = 1e-15);
        assert_eq!(next.last_rejection, 1);
        assert_eq!(next.step, 2);
        // immediately after a rejection the denominator is back to 2
        assert_abs_diff_eq!(next.alpha(), 0.275, epsilon = 1e-15);
    }

    #[test]
    fn non_rejection_charges() {
        let (next, _) = alpha_step(AlphaInvesting::default(), false);
        // 0.50 − 0.25/0.75
        assert_abs_diff_eq!(next.wealth, 1.0 / 6.0, epsilon = 1e-15);
        assert_eq!(next.last_rejection, 0);
        assert_abs_diff_eq!(next.alpha(), (1.0 / 6.0) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn wealth_stays_positive_below_one() {
        let mut inv = AlphaInvesting::default();
        for j in 0..10_000 {
            inv.advance(j % 37 == 0);
            assert!(inv.wealth > 0.0);
        }
    }

    #[test]
    fn exhausted_investor_never_rejects() {
        // wealth above one right after a rejection can overdraw
        let mut inv = AlphaInvesting::new(1.2, 0.05);
        inv.advance(true);
        inv.advance(false);
        assert!(inv.is_exhausted());
        assert_eq!(inv.alpha(), 0.0);
        let before = inv.wealth;
        inv.advance(false);
        assert_eq!(inv.wealth, before);
    }
}
