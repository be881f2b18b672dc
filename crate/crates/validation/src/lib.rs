//! Helpers for the acceptance suite in `tests/acceptance.rs`.

use std::fmt;
use std::time::Duration;

use statrs::distribution::{Binomial, DiscreteCDF};

/// Central region `[lo, hi]` of `Binomial(trials, p)` holding at least
/// `level` of the mass, with at most `(1 - level) / 2` in each tail.
pub fn binomial_region(trials: u64, p: f64, level: f64) -> (u64, u64) {
    let dist = Binomial::new(p, trials).expect("valid binomial");
    let tail = (1.0 - level) / 2.0;
    // smallest lo with P(X < lo) <= tail
    let lo = (0..=trials)
        .take_while(|&k| k == 0 || dist.cdf(k - 1) <= tail)
        .last()
        .unwrap_or(0);
    // smallest hi with P(X > hi) <= tail
    let hi = (0..=trials).find(|&k| 1.0 - dist.cdf(k) <= tail).unwrap_or(trials);
    (lo, hi)
}

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct Verdict {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} criterion {}: {} | {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_for_two_thousand_draws_at_five_percent() {
        let (lo, hi) = binomial_region(2000, 0.05, 0.99);
        assert_eq!((lo, hi), (76, 126));
    }

    #[test]
    fn region_tails_respect_the_level() {
        let dist = Binomial::new(0.1, 500).unwrap();
        let (lo, hi) = binomial_region(500, 0.1, 0.99);
        assert!(dist.cdf(lo - 1) <= 0.005 && dist.cdf(lo) > 0.005);
        assert!(1.0 - dist.cdf(hi) <= 0.005 && 1.0 - dist.cdf(hi - 1) > 0.005);
    }
}
