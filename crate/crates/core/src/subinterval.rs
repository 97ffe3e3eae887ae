//! Output-voltage subintervals S1..S5.
//!
//! The converter's useful output range, 12 V to 57 V, is divided into five
//! bands. Each band has its own small-signal model pair and PI tuning; the
//! fuzzy scheduler blends between neighbouring bands.

use std::fmt;
use std::str::FromStr;

use crate::scalar::Scalar;

/// One of the five output-voltage bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subinterval {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl Subinterval {
    pub const ALL: [Subinterval; 5] = [
        Subinterval::S1,
        Subinterval::S2,
        Subinterval::S3,
        Subinterval::S4,
        Subinterval::S5,
    ];

    /// Zero-based position in [`Subinterval::ALL`].
    pub fn index(self) -> usize {
        match self {
            Subinterval::S1 => 0,
            Subinterval::S2 => 1,
            Subinterval::S3 => 2,
            Subinterval::S4 => 3,
            Subinterval::S5 => 4,
        }
    }

    /// Output-voltage band in volts.
    pub fn range<S: Scalar>(self) -> (S, S) {
        let (lo, hi) = match self {
            Subinterval::S1 => (12.0, 18.0),
            Subinterval::S2 => (18.0, 24.0),
            Subinterval::S3 => (24.0, 31.0),
            Subinterval::S4 => (31.0, 40.0),
            Subinterval::S5 => (40.0, 57.0),
        };
        (S::lit(lo), S::lit(hi))
    }

    /// Band midpoint in volts; the nominal operating point for the band.
    pub fn midpoint<S: Scalar>(self) -> S {
        let (lo, hi) = self.range::<S>();
        (lo + hi) / S::lit(2.0)
    }
}

impl fmt::Display for Subinterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index() + 1)
    }
}

impl FromStr for Subinterval {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Ok(Subinterval::S1),
            "S2" => Ok(Subinterval::S2),
            "S3" => Ok(Subinterval::S3),
            "S4" => Ok(Subinterval::S4),
            "S5" => Ok(Subinterval::S5),
            other => Err(format!("unknown subinterval `{other}` (expected S1..S5)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_tile_the_output_range() {
        let mut prev_hi = 12.0f64;
        for sub in Subinterval::ALL {
            let (lo, hi) = sub.range::<f64>();
            assert_eq!(lo, prev_hi);
            assert!(hi > lo);
            prev_hi = hi;
        }
        assert_eq!(prev_hi, 57.0);
    }

    #[test]
    fn midpoints() {
        assert_eq!(Subinterval::S1.midpoint::<f64>(), 15.0);
        assert_eq!(Subinterval::S3.midpoint::<f64>(), 27.5);
        assert_eq!(Subinterval::S5.midpoint::<f64>(), 48.5);
    }

    #[test]
    fn parse_round_trip() {
        for sub in Subinterval::ALL {
            assert_eq!(sub.to_string().parse::<Subinterval>().unwrap(), sub);
        }
        assert!("S6".parse::<Subinterval>().is_err());
    }
}
