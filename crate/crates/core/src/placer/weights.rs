//! Timing-criticality weight of a parent-to-child qubit route.

use serde::{Deserialize, Serialize};

/// `min(m_max, 1 / (slack_child + level_gap - 1))`, kept exact until a
/// numeric value is asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetWeight {
    /// Denominator <= 0: the route has no room at all.
    Saturated,
    /// `1 / d`, `d >= 1`.
    Reciprocal(u64),
}

impl NetWeight {
    /// `child_slack` is `ALAP - ASAP` of the child; `gap` is `SL_child - SL_parent`.
    pub fn new(child_slack: usize, gap: i64) -> Self {
        let d = child_slack as i64 + gap - 1;
        if d <= 0 {
            Self::Saturated
        } else {
            Self::Reciprocal(d as u64)
        }
    }

    /// Weight of the route between a qubit's origin or exit and an instruction
    /// one level away.
    pub fn terminal(slack: usize) -> Self {
        Self::new(slack, 1)
    }

    pub fn value(self, m_max: f64) -> f64 {
        match self {
            Self::Saturated => m_max,
            Self::Reciprocal(d) => m_max.min(1.0 / d as f64),
        }
    }

    /// Exact value as a (numerator, denominator) pair, with `m_max` given as a ratio.
    pub fn as_ratio(self, m_max: (u64, u64)) -> (u64, u64) {
        match self {
            Self::Saturated => m_max,
            // 1/d vs m_max = a/b: 1/d <= a/b  <=>  b <= a*d
            Self::Reciprocal(d) if m_max.1 <= m_max.0 * d => (1, d),
            Self::Reciprocal(_) => m_max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturates_without_room() {
        assert_eq!(NetWeight::new(0, 1), NetWeight::Saturated);
        assert_eq!(NetWeight::new(0, 1).value(100.0), 100.0);
        assert_eq!(NetWeight::new(0, 0), NetWeight::Saturated);
    }

    #[test]
    fn half_for_two_units_of_room() {
        assert_eq!(NetWeight::new(2, 1), NetWeight::Reciprocal(2));
        assert_eq!(NetWeight::new(2, 1).as_ratio((100, 1)), (1, 2));
        assert_eq!(NetWeight::new(1, 2).as_ratio((100, 1)), (1, 2));
        assert_eq!(NetWeight::new(2, 1).value(100.0), 0.5);
    }

    #[test]
    fn small_m_max_clamps() {
        assert_eq!(NetWeight::new(2, 1).as_ratio((1, 4)), (1, 4));
        assert_eq!(NetWeight::new(2, 1).value(0.25), 0.25);
    }
}
