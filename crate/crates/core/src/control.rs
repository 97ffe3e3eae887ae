//! PI regulation and the fuzzy gain scheduler.
//!
//! The controller is C(s) = kp*(1 + ki/s), discretized by forward-Euler
//! integration of the error. Anti-windup is conditional by default: the
//! integrator freezes whenever the unclamped output has already passed a
//! limit and the error keeps pushing it further out.
//!
//! Gain scheduling blends five per-band PI tunings with trapezoidal
//! memberships over the output range. Only the transition strips around the
//! band boundaries have two active rules; everywhere else exactly one rule
//! fires with weight one, so inside a band the scheduler degenerates to the
//! fixed PI bit for bit.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::scalar::Scalar;
use crate::subinterval::Subinterval;

/// Proportional gain and integral rate of C(s) = kp*(1 + ki/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains<S> {
    pub kp: S,
    pub ki: S,
}

impl<S: Scalar> PiGains<S> {
    pub fn new(kp: S, ki: S) -> Result<Self, ControlError> {
        if !(kp > S::zero()) || !kp.is_finite() || !(ki > S::zero()) || !ki.is_finite() {
            return Err(ControlError::InvalidGains(format!(
                "kp and ki must be positive and finite, got kp = {kp:e}, ki = {ki:e}"
            )));
        }
        Ok(PiGains { kp, ki })
    }

    /// Effective gain on the integrated error, kp*ki. This is the quantity
    /// that multiplies the integrator state, and what the bumpless transfer
    /// in [`tsf_pi_step`] keeps continuous.
    pub fn integral_gain(&self) -> S {
        self.kp * self.ki
    }
}

/// Controller memory carried between update instants.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PiState<S> {
    /// Integrated error, volt-seconds.
    pub integrator: S,
    /// kp*ki in effect when the integrator was last updated. Used by
    /// [`tsf_pi_step`] to rescale the state when the blend moves; `None`
    /// until the first update.
    prev_integral_gain: Option<S>,
}

impl<S: Scalar> PiState<S> {
    pub fn new() -> Self {
        PiState {
            integrator: S::zero(),
            prev_integral_gain: None,
        }
    }

    /// Starts from a preloaded integrator, e.g. so that the loop opens at an
    /// equilibrium duty instead of slewing up from zero.
    pub fn with_integrator(integrator: S) -> Self {
        PiState {
            integrator,
            prev_integral_gain: None,
        }
    }
}

/// Actuator range the duty command is clamped to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DutyLimits<S> {
    pub min: S,
    pub max: S,
}

impl<S: Scalar> DutyLimits<S> {
    pub fn new(min: S, max: S) -> Result<Self, ControlError> {
        if !min.is_finite() || !max.is_finite() || !(min < max) {
            return Err(ControlError::InvalidLimits(format!(
                "need finite min < max, got [{min}, {max}]"
            )));
        }
        Ok(DutyLimits { min, max })
    }
}

impl<S: Scalar> Default for DutyLimits<S> {
    fn default() -> Self {
        DutyLimits {
            min: S::zero(),
            max: S::lit(0.9),
        }
    }
}

/// Anti-windup policy for the PI integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AntiWindup {
    /// Freeze the integrator while the output is saturated and the error
    /// pushes further into the limit.
    #[default]
    Conditional,
    /// Integrate unconditionally; only the output is clamped. Winds up.
    ClampOnly,
}

/// One PI update: integrate the error over `dt`, form the command, clamp it.
///
/// The integrator trial value is accepted unless the unclamped command has
/// passed a limit with the error still pushing outward, in which case the
/// integrator holds and the command is recomputed from the held state.
pub fn pi_step<S: Scalar>(
    gains: &PiGains<S>,
    state: PiState<S>,
    error: S,
    dt: S,
    limits: &DutyLimits<S>,
) -> (S, PiState<S>) {
    let ig = gains.integral_gain();
    let i_trial = state.integrator + error * dt;
    let u_trial = gains.kp * error + ig * i_trial;
    let freeze = (u_trial > limits.max && error > S::zero())
        || (u_trial < limits.min && error < S::zero());
    let integrator = if freeze { state.integrator } else { i_trial };
    let u = gains.kp * error + ig * integrator;
    let duty = u.max(limits.min).min(limits.max);
    (
        duty,
        PiState {
            integrator,
            prev_integral_gain: state.prev_integral_gain,
        },
    )
}

/// PI update without conditional freezing: the integrator always
/// accumulates and only the output is clamped. Kept as the comparison
/// baseline; it overshoots after deep saturation.
pub fn pi_step_clamp_only<S: Scalar>(
    gains: &PiGains<S>,
    state: PiState<S>,
    error: S,
    dt: S,
    limits: &DutyLimits<S>,
) -> (S, PiState<S>) {
    let integrator = state.integrator + error * dt;
    let u = gains.kp * error + gains.integral_gain() * integrator;
    let duty = u.max(limits.min).min(limits.max);
    (
        duty,
        PiState {
            integrator,
            prev_integral_gain: state.prev_integral_gain,
        },
    )
}

/// Dispatches on the anti-windup policy.
pub fn pi_step_with<S: Scalar>(
    mode: AntiWindup,
    gains: &PiGains<S>,
    state: PiState<S>,
    error: S,
    dt: S,
    limits: &DutyLimits<S>,
) -> (S, PiState<S>) {
    match mode {
        AntiWindup::Conditional => pi_step(gains, state, error, dt, limits),
        AntiWindup::ClampOnly => pi_step_clamp_only(gains, state, error, dt, limits),
    }
}

/// Trapezoidal membership partition of the scheduling range into five bands.
///
/// Adjacent memberships cross linearly inside `[b - halfwidth, b + halfwidth]`
/// around each boundary `b` and are constant 0/1 elsewhere, so the weights
/// sum to one everywhere and at most two are nonzero at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzyPartition<S> {
    universe: (S, S),
    boundaries: [S; 4],
    halfwidth: S,
}

impl<S: Scalar> FuzzyPartition<S> {
    pub fn new(universe: (S, S), boundaries: [S; 4], halfwidth: S) -> Result<Self, ControlError> {
        let (lo, hi) = universe;
        if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
            return Err(ControlError::InvalidPartition(format!(
                "universe must be a finite nonempty interval, got [{lo}, {hi}]"
            )));
        }
        if !(halfwidth > S::zero()) || !halfwidth.is_finite() {
            return Err(ControlError::InvalidPartition(format!(
                "transition halfwidth must be positive, got {halfwidth}"
            )));
        }
        let mut prev = lo;
        for &b in &boundaries {
            if !(b - halfwidth > prev) {
                return Err(ControlError::InvalidPartition(format!(
                    "transition around {b} (halfwidth {halfwidth}) overlaps the previous band"
                )));
            }
            prev = b + halfwidth;
        }
        if !(prev < hi) {
            return Err(ControlError::InvalidPartition(format!(
                "last transition (ending {prev}) must end inside the universe (max {hi})"
            )));
        }
        Ok(FuzzyPartition {
            universe,
            boundaries,
            halfwidth,
        })
    }

    /// The partition used throughout: output bands split at 18/24/31/40 V
    /// over a 12..57 V universe, 1 V transition halfwidth.
    pub fn reference() -> Self {
        let lo = Subinterval::S1.range::<S>().0;
        let hi = Subinterval::S5.range::<S>().1;
        let boundaries = [
            Subinterval::S1.range::<S>().1,
            Subinterval::S2.range::<S>().1,
            Subinterval::S3.range::<S>().1,
            Subinterval::S4.range::<S>().1,
        ];
        FuzzyPartition::new((lo, hi), boundaries, S::one())
            .expect("reference partition is valid")
    }

    pub fn universe(&self) -> (S, S) {
        self.universe
    }

    pub fn boundaries(&self) -> [S; 4] {
        self.boundaries
    }

    pub fn halfwidth(&self) -> S {
        self.halfwidth
    }

    /// Membership weights of the five bands at `x`. Values outside the
    /// universe are clamped to its ends. The weights are nonnegative, at
    /// most two are nonzero, and they sum to one up to rounding.
    pub fn membership_weights(&self, x: S) -> [S; 5] {
        let x = x.max(self.universe.0).min(self.universe.1);
        // t[i] ramps 0 -> 1 across the i-th boundary strip.
        let mut t = [S::zero(); 4];
        for (i, &b) in self.boundaries.iter().enumerate() {
            t[i] = if x <= b - self.halfwidth {
                S::zero()
            } else if x >= b + self.halfwidth {
                S::one()
            } else {
                (x - (b - self.halfwidth)) / (self.halfwidth + self.halfwidth)
            };
        }
        [
            S::one() - t[0],
            t[0] - t[1],
            t[1] - t[2],
            t[2] - t[3],
            t[3],
        ]
    }
}

/// Per-band PI tunings, indexed by [`Subinterval`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainTable<S> {
    entries: [PiGains<S>; 5],
}

impl<S: Scalar> GainTable<S> {
    pub fn new(entries: [PiGains<S>; 5]) -> Self {
        GainTable { entries }
    }

    /// The reference tuning set. Proportional gains fall roughly 20x from
    /// the lowest band to the highest; the duty channel's DC gain rises the
    /// same way, so every band ends up with a similar crossover.
    pub fn reference() -> Self {
        let g = |kp: f64, ki: f64| PiGains {
            kp: S::lit(kp),
            ki: S::lit(ki),
        };
        GainTable {
            entries: [
                g(5.24e-6, 1.42e6),
                g(2.93e-6, 1.72e6),
                g(1.64e-6, 1.21e6),
                g(7.34e-7, 1.38e6),
                g(2.60e-7, 1.18e6),
            ],
        }
    }

    pub fn gains_for(&self, sub: Subinterval) -> PiGains<S> {
        self.entries[sub.index()]
    }

    pub fn entries(&self) -> &[PiGains<S>; 5] {
        &self.entries
    }
}

/// Weighted blend of the table entries at scheduling value `x`. Zero-weight
/// rules contribute nothing, so a weight-one band returns its table entry
/// exactly.
pub fn blended_gains<S: Scalar>(
    table: &GainTable<S>,
    partition: &FuzzyPartition<S>,
    x: S,
) -> PiGains<S> {
    let w = partition.membership_weights(x);
    let mut kp = S::zero();
    let mut ki = S::zero();
    for (wi, g) in w.iter().zip(table.entries.iter()) {
        if *wi != S::zero() {
            kp += *wi * g.kp;
            ki += *wi * g.ki;
        }
    }
    PiGains { kp, ki }
}

/// What the gain scheduler reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedulingVariable {
    /// Schedule on the reference voltage. Jumps bands at setpoint changes,
    /// so the new tuning is in effect for the whole transient.
    #[default]
    Reference,
    /// Schedule on the measured (cycle-averaged) output voltage.
    MeasuredOutput,
}

impl fmt::Display for SchedulingVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulingVariable::Reference => write!(f, "reference"),
            SchedulingVariable::MeasuredOutput => write!(f, "output"),
        }
    }
}

impl FromStr for SchedulingVariable {
    type Err = ControlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "reference" => Ok(SchedulingVariable::Reference),
            "output" => Ok(SchedulingVariable::MeasuredOutput),
            other => Err(ControlError::InvalidConfig(format!(
                "unknown scheduling variable `{other}` (expected `reference` or `output`)"
            ))),
        }
    }
}

/// One gain-scheduled PI update: blend the table at the scheduling value,
/// rescale the integrator so the integral contribution kp*ki*I is continuous
/// across the gain change, then run the ordinary PI step.
///
/// Without the rescale, a band transition multiplies the integral term by
/// the ratio of the old and new kp*ki (up to 3.7x between adjacent bands
/// in the reference table) and the loop spends tens of milliseconds
/// unwinding the jump. With it, switching tunings at an equilibrium is
/// transparent: the command before and after the switch is identical when
/// the error is zero.
///
/// Returns the duty command, the updated state, and the gains that were in
/// effect for logging.
pub fn tsf_pi_step<S: Scalar>(
    table: &GainTable<S>,
    partition: &FuzzyPartition<S>,
    scheduling_value: S,
    state: PiState<S>,
    error: S,
    dt: S,
    limits: &DutyLimits<S>,
) -> (S, PiState<S>, PiGains<S>) {
    let gains = blended_gains(table, partition, scheduling_value);
    let ig = gains.integral_gain();
    let mut state = state;
    if let Some(prev) = state.prev_integral_gain {
        if prev != ig {
            state.integrator *= prev / ig;
        }
    }
    let (duty, mut next) = pi_step(&gains, state, error, dt, limits);
    next.prev_integral_gain = Some(ig);
    (duty, next, gains)
}

#[derive(Debug, Clone, Error)]
pub enum ControlError {
    #[error("invalid PI gains: {0}")]
    InvalidGains(String),
    #[error("invalid duty limits: {0}")]
    InvalidLimits(String),
    #[error("invalid fuzzy partition: {0}")]
    InvalidPartition(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pi1() -> PiGains<f64> {
        GainTable::reference().gains_for(Subinterval::S1)
    }

    const DT: f64 = 31.25e-6; // one switching period

    #[test]
    fn pi_step_unsaturated_update() {
        let limits = DutyLimits::default();
        let (duty, state) = pi_step(&pi1(), PiState::new(), 1.0, DT, &limits);
        assert_eq!(state.integrator, 3.125e-5);
        // kp*e + kp*ki*I = 5.24e-6 + 7.4408*3.125e-5
        assert_relative_eq!(duty, 2.37765e-4, max_relative = 1e-9);
    }

    #[test]
    fn integrator_freezes_at_upper_limit() {
        let limits = DutyLimits::default();
        let gains = pi1();
        // kp*ki*0.13 ~ 0.967, already past the limit on its own.
        let mut state = PiState::with_integrator(0.13);
        let before = state.integrator;
        let (duty, next) = pi_step(&gains, state, 50.0, DT, &limits);
        assert_eq!(duty, 0.9);
        assert_eq!(next.integrator, before, "integrator must hold while pushing out");

        // Error pointing back in: integration resumes even though the
        // output is still clamped.
        state = next;
        let (duty, next) = pi_step(&gains, state, -20.0, DT, &limits);
        assert!(next.integrator < state.integrator);
        assert!(duty <= 0.9);
    }

    #[test]
    fn integrator_freezes_at_lower_limit() {
        let limits = DutyLimits::default();
        let (duty, next) = pi_step(&pi1(), PiState::new(), -100.0, DT, &limits);
        assert_eq!(duty, 0.0);
        assert_eq!(next.integrator, 0.0);
    }

    #[test]
    fn clamp_only_winds_up_conditional_does_not() {
        let limits = DutyLimits::default();
        let gains = pi1();
        let mut cond = PiState::new();
        let mut wind = PiState::new();
        for _ in 0..10_000 {
            cond = pi_step(&gains, cond, 100.0, DT, &limits).1;
            wind = pi_step_clamp_only(&gains, wind, 100.0, DT, &limits).1;
        }
        // Conditional: integrator stops as soon as kp*ki*I reaches the
        // limit, so kp*ki*I stays within one step's growth of max.
        let ig = gains.integral_gain();
        assert!(ig * cond.integrator <= 0.9 + ig * 100.0 * DT);
        assert!(
            wind.integrator > 10.0 * cond.integrator,
            "clamp-only should keep accumulating: {} vs {}",
            wind.integrator,
            cond.integrator
        );
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(PiGains::new(0.0, 1.0).is_err());
        assert!(PiGains::new(1.0e-6, -2.0).is_err());
        assert!(PiGains::new(f64::NAN, 1.0).is_err());
        assert!(PiGains::new(5.24e-6, 1.42e6).is_ok());
    }

    #[test]
    fn membership_examples() {
        let part = FuzzyPartition::<f64>::reference();
        assert_eq!(part.membership_weights(15.0), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(part.membership_weights(18.0), [0.5, 0.5, 0.0, 0.0, 0.0]);
        assert_eq!(part.membership_weights(23.5), [0.0, 0.75, 0.25, 0.0, 0.0]);
        // Clamped to the universe end.
        assert_eq!(part.membership_weights(60.0), [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(part.membership_weights(5.0), [1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn partition_rejects_bad_geometry() {
        // Halfwidth so large the 18 and 24 strips collide.
        assert!(FuzzyPartition::new((12.0, 57.0), [18.0, 24.0, 31.0, 40.0], 3.5).is_err());
        // Boundary outside the universe.
        assert!(FuzzyPartition::new((12.0, 39.0), [18.0, 24.0, 31.0, 40.0], 1.0).is_err());
        // Out of order.
        assert!(FuzzyPartition::new((12.0, 57.0), [24.0, 18.0, 31.0, 40.0], 1.0).is_err());
        assert!(FuzzyPartition::new((12.0, 57.0), [18.0, 24.0, 31.0, 40.0], 0.0).is_err());
    }

    #[test]
    fn blend_matches_hand_value_at_boundary() {
        let table = GainTable::<f64>::reference();
        let part = FuzzyPartition::reference();
        let g = blended_gains(&table, &part, 18.0);
        assert_relative_eq!(g.kp, 4.085e-6, max_relative = 1e-12);
        assert_relative_eq!(g.ki, 1.57e6, max_relative = 1e-12);
    }

    #[test]
    fn blend_in_band_interior_is_exact_table_entry() {
        let table = GainTable::<f64>::reference();
        let part = FuzzyPartition::reference();
        for (sub, x) in [
            (Subinterval::S1, 15.0),
            (Subinterval::S2, 21.0),
            (Subinterval::S3, 27.0),
            (Subinterval::S4, 35.0),
            (Subinterval::S5, 50.0),
        ] {
            let g = blended_gains(&table, &part, x);
            assert_eq!(g, table.gains_for(sub), "band {sub} at {x}");
        }
    }

    #[test]
    fn tsf_in_one_band_is_bit_identical_to_fixed_pi() {
        let table = GainTable::<f64>::reference();
        let part = FuzzyPartition::reference();
        let gains = table.gains_for(Subinterval::S2);
        let limits = DutyLimits::default();

        let mut fixed = PiState::new();
        let mut tsf = PiState::new();
        // Errors of varying sign, including saturating ones.
        let errors = [0.5, 2.0, -1.0, 40.0, -40.0, 0.01, -0.3, 7.0];
        for (k, &e) in errors.iter().cycle().take(400).enumerate() {
            let (d_fixed, f2) = pi_step(&gains, fixed, e, DT, &limits);
            // Scheduling value wanders inside S2 but never reaches a strip.
            let x = 19.5 + 3.0 * ((k % 10) as f64) / 10.0;
            let (d_tsf, t2, g) = tsf_pi_step(&table, &part, x, tsf, e, DT, &limits);
            assert_eq!(d_fixed.to_bits(), d_tsf.to_bits(), "step {k}");
            assert_eq!(f2.integrator.to_bits(), t2.integrator.to_bits());
            assert_eq!(g, gains);
            fixed = f2;
            tsf = t2;
        }
    }

    #[test]
    fn gain_change_keeps_integral_contribution_continuous() {
        let table = GainTable::<f64>::reference();
        let part = FuzzyPartition::reference();
        let limits = DutyLimits::default();

        // Establish state in S1, then step with the scheduling value deep in
        // S2 and zero error: the command must equal the old integral
        // contribution exactly (no proportional part, no new integration).
        let (_, state, g1) = tsf_pi_step(&table, &part, 15.0, PiState::new(), 2.0, DT, &limits);
        let contribution = g1.integral_gain() * state.integrator;
        let (duty, _, g2) = tsf_pi_step(&table, &part, 21.0, state, 0.0, DT, &limits);
        assert!(g2 != g1);
        assert_relative_eq!(duty, contribution, max_relative = 1e-12);
    }

    #[test]
    fn scheduling_variable_parses() {
        assert_eq!(
            "reference".parse::<SchedulingVariable>().unwrap(),
            SchedulingVariable::Reference
        );
        assert_eq!(
            "output".parse::<SchedulingVariable>().unwrap(),
            SchedulingVariable::MeasuredOutput
        );
        assert!("midpoint".parse::<SchedulingVariable>().is_err());
    }

    #[test]
    fn duty_limits_validated() {
        assert!(DutyLimits::new(0.0, 0.9).is_ok());
        assert!(DutyLimits::new(0.9, 0.9).is_err());
        assert!(DutyLimits::new(0.5, 0.1).is_err());
        assert!(DutyLimits::new(f64::NEG_INFINITY, 0.9).is_err());
    }
}
