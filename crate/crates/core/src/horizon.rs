use crate::error::{Error, Result};

/// Prediction horizon that shrinks by one each step and is restored every
/// `cycle_length` steps: `N(k) = N̂ − (k mod M)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CyclicHorizon {
    max_horizon: usize,
    cycle_length: usize,
}

impl CyclicHorizon {
    pub fn new(max_horizon: usize, cycle_length: usize) -> Result<Self> {
        if cycle_length == 0 {
            return Err(Error::InvalidArgument(
                "cycle length must be at least 1".into(),
            ));
        }
        if max_horizon < cycle_length {
            return Err(Error::InvalidArgument(format!(
                "maximum horizon {max_horizon} is shorter than the cycle length {cycle_length}"
            )));
        }
        Ok(Self {
            max_horizon,
            cycle_length,
        })
    }

    pub fn max_horizon(&self) -> usize {
        self.max_horizon
    }

    pub fn cycle_length(&self) -> usize {
        self.cycle_length
    }

    pub fn min_horizon(&self) -> usize {
        self.max_horizon - self.cycle_length + 1
    }

    pub fn length(&self, k: u64) -> usize {
        self.max_horizon - (k % self.cycle_length as u64) as usize
    }

    /// True at `k = jM − 1`, the last step of a cycle.
    pub fn is_cycle_end(&self, k: u64) -> bool {
        (k + 1).is_multiple_of(self.cycle_length as u64)
    }
}

pub fn horizon_length(h: &CyclicHorizon, k: u64) -> usize {
    h.length(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_three_schedule() {
        let h = CyclicHorizon::new(5, 3).unwrap();
        let seq: Vec<_> = (0..6).map(|k| h.length(k)).collect();
        assert_eq!(seq, vec![5, 4, 3, 5, 4, 3]);
        assert_eq!(h.min_horizon(), 3);
        assert!(h.is_cycle_end(2));
        assert!(!h.is_cycle_end(3));
    }

    #[test]
    fn unit_cycle_is_constant() {
        let h = CyclicHorizon::new(7, 1).unwrap();
        assert!((0..50).all(|k| h.length(k) == 7));
    }

    #[test]
    fn rejects_short_horizon() {
        assert!(CyclicHorizon::new(2, 3).is_err());
        assert!(CyclicHorizon::new(2, 0).is_err());
    }

    proptest! {
        #[test]
        fn period_and_minimum(m in 1usize..8, extra in 0usize..8, k in 0u64..10_000) {
            let h = CyclicHorizon::new(m + extra, m).unwrap();
            prop_assert_eq!(h.length(k), h.length(k + m as u64));
            prop_assert!(h.length(k) >= h.min_horizon());
            prop_assert!(h.length(k) <= h.max_horizon());
            prop_assert_eq!(h.length(k) == h.max_horizon(), k % m as u64 == 0);
            let window_min = (k..k + m as u64).map(|j| h.length(j)).min().unwrap();
            prop_assert_eq!(window_min, h.min_horizon());
        }
    }
}
