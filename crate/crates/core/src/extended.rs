//! Extended reals `ℝ ∪ {+∞}` for convex functionals with hard domains.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Mul};

/// A real number or the `+∞` sentinel. Arithmetic never produces NaN:
/// `+∞` absorbs every finite addend and nonnegative scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::PosInf => None,
        }
    }

    /// Lossy view as `f64`, mapping the sentinel to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::PosInf
        } else {
            ExtReal::Finite(v)
        }
    }
}

impl Add for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::PosInf,
        }
    }
}

impl Add<f64> for ExtReal {
    type Output = ExtReal;
    fn add(self, rhs: f64) -> ExtReal {
        self + ExtReal::Finite(rhs)
    }
}

/// Scaling by a nonnegative weight. `0 · ∞` is taken as `∞` so that an
/// infeasible cell is never hidden by a zero quadrature weight.
impl Mul<f64> for ExtReal {
    type Output = ExtReal;
    fn mul(self, w: f64) -> ExtReal {
        debug_assert!(w >= 0.0, "ExtReal scaling requires a nonnegative weight");
        match self {
            ExtReal::Finite(a) => ExtReal::Finite(a * w),
            ExtReal::PosInf => ExtReal::PosInf,
        }
    }
}

impl Sum for ExtReal {
    fn sum<I: Iterator<Item = ExtReal>>(iter: I) -> ExtReal {
        iter.fold(ExtReal::ZERO, |acc, v| acc + v)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &ExtReal) -> Option<Ordering> {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => a.partial_cmp(b),
            (ExtReal::Finite(_), ExtReal::PosInf) => Some(Ordering::Less),
            (ExtReal::PosInf, ExtReal::Finite(_)) => Some(Ordering::Greater),
            (ExtReal::PosInf, ExtReal::PosInf) => Some(Ordering::Equal),
        }
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v:?}"),
            ExtReal::PosInf => write!(f, "inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_absorbs_without_nan() {
        let inf = ExtReal::PosInf;
        assert_eq!(inf + ExtReal::Finite(-1e300), ExtReal::PosInf);
        assert_eq!(inf * 0.0, ExtReal::PosInf);
        assert_eq!(inf + inf, ExtReal::PosInf);
        let s: ExtReal = vec![ExtReal::Finite(1.0), inf, ExtReal::Finite(2.0)].into_iter().sum();
        assert_eq!(s, ExtReal::PosInf);
        assert!(!inf.to_f64().is_nan());
    }

    #[test]
    fn ordering_puts_infinity_last() {
        assert!(ExtReal::Finite(1e308) < ExtReal::PosInf);
        assert!(ExtReal::PosInf > ExtReal::Finite(-5.0));
        assert_eq!(ExtReal::from(f64::INFINITY), ExtReal::PosInf);
    }
}
