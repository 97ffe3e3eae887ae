//! Piecewise-constant input schedules.

use crate::scalar::Scalar;

/// A piecewise-constant signal: a sorted list of (time, value) breakpoints.
/// The value at time t is the value of the last breakpoint at or before t.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<S> {
    points: Vec<(S, S)>,
}

impl<S: Scalar> Schedule<S> {
    /// A signal that holds one value forever.
    pub fn constant(value: S) -> Self {
        Schedule {
            points: vec![(S::zero(), value)],
        }
    }

    /// Builds a schedule from breakpoints. The first breakpoint must be at
    /// t = 0 and times must be strictly increasing.
    pub fn from_points(points: Vec<(S, S)>) -> Result<Self, String> {
        if points.is_empty() {
            return Err("schedule needs at least one breakpoint".into());
        }
        if points[0].0 != S::zero() {
            return Err(format!(
                "first schedule breakpoint must be at t = 0, got t = {}",
                points[0].0
            ));
        }
        for pair in points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(format!(
                    "schedule breakpoints must be strictly increasing in time ({} then {})",
                    pair[0].0, pair[1].0
                ));
            }
        }
        Ok(Schedule { points })
    }

    pub fn value_at(&self, t: S) -> S {
        let mut value = self.points[0].1;
        for &(time, v) in &self.points {
            if time <= t {
                value = v;
            } else {
                break;
            }
        }
        value
    }

    /// Breakpoint times after t = 0; these are the events a step-response
    /// analysis windows on.
    pub fn change_times(&self) -> impl Iterator<Item = S> + '_ {
        self.points.iter().skip(1).map(|&(t, _)| t)
    }

    pub fn points(&self) -> &[(S, S)] {
        &self.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_left_closed() {
        let s = Schedule::from_points(vec![(0.0, 11.0), (0.12, 13.0), (0.25, 11.0)]).unwrap();
        assert_eq!(s.value_at(0.0), 11.0);
        assert_eq!(s.value_at(0.1199), 11.0);
        assert_eq!(s.value_at(0.12), 13.0);
        assert_eq!(s.value_at(0.3), 11.0);
    }

    #[test]
    fn rejects_unsorted_and_late_start() {
        assert!(Schedule::from_points(vec![(0.1, 1.0)]).is_err());
        assert!(Schedule::from_points(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(Schedule::<f64>::from_points(vec![]).is_err());
    }
}
