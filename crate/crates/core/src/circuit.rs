//! Switched-mode model of the three-level boost converter.
//!
//! Power stage: source v_in feeds the inductor L (series resistance r); two
//! cascaded switch cells (M1/D1 and M2/D2) route the inductor current either
//! back to the source rail or into the series output capacitors C1/C2, which
//! feed the load R. The output voltage is v_o = v_c1 + v_c2.
//!
//! The two PWM carriers are sawtooths offset by half a period, so the cells
//! interleave and the output ripple sits at twice the switching frequency.
//! Diodes are ideal; discontinuous conduction is approximated by clamping the
//! inductor current at zero.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::schedule::Schedule;

/// Power-stage and integration parameters.
///
/// `Default` gives the reference design: 12 V input, 500 uH / 8 mohm inductor,
/// two 100 uF output capacitors, 24.7 ohm load, 32 kHz switching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConverterParams<S> {
    /// Nominal source voltage, volts.
    pub v_in: S,
    /// Inductance, henries.
    pub l: S,
    /// Inductor series resistance, ohms.
    pub r: S,
    /// Upper output capacitor, farads.
    pub c1: S,
    /// Lower output capacitor, farads.
    pub c2: S,
    /// Load resistance, ohms.
    pub r_load: S,
    /// Switching frequency, hertz.
    pub f_s: S,
    /// Integration step ceiling, seconds. The solver uses the largest step at
    /// or below this that divides the switching period exactly, so cycle
    /// averages and the controller stay aligned to the carrier. Must satisfy
    /// dt <= 1/(64*f_s).
    pub dt: S,
    /// Upper duty-cycle limit for normal operation.
    pub d_max: S,
}

impl<S: Scalar> Default for ConverterParams<S> {
    fn default() -> Self {
        let f_s = S::lit(32.0e3);
        ConverterParams {
            v_in: S::lit(12.0),
            l: S::lit(500.0e-6),
            r: S::lit(8.0e-3),
            c1: S::lit(100.0e-6),
            c2: S::lit(100.0e-6),
            r_load: S::lit(24.7),
            f_s,
            dt: S::one() / (f_s * S::lit(256.0)),
            d_max: S::lit(0.9),
        }
    }
}

impl<S: Scalar> ConverterParams<S> {
    pub fn validate(&self) -> Result<(), CircuitError> {
        let pos = [
            (self.v_in, "v_in"),
            (self.l, "l"),
            (self.r, "r"),
            (self.c1, "c1"),
            (self.c2, "c2"),
            (self.r_load, "r_load"),
            (self.f_s, "f_s"),
            (self.dt, "dt"),
        ];
        for (value, name) in pos {
            if !(value > S::zero()) || !value.is_finite() {
                return Err(CircuitError::InvalidParams(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        if !(self.d_max > S::zero() && self.d_max < S::one()) {
            return Err(CircuitError::InvalidParams(format!(
                "d_max must lie in (0, 1), got {}",
                self.d_max
            )));
        }
        // At least 64 integration steps per switching period.
        if self.dt > S::one() / (self.f_s * S::lit(64.0)) {
            return Err(CircuitError::InvalidParams(format!(
                "dt = {} too coarse: must be <= 1/(64*f_s) = {}",
                self.dt,
                S::one() / (self.f_s * S::lit(64.0))
            )));
        }
        Ok(())
    }

    /// Switching period, seconds.
    pub fn period(&self) -> S {
        S::one() / self.f_s
    }

    /// Ripple-free prediction of the steady cycle-averaged output at duty d:
    /// v_o = v_in*(1-d) / ((1-d)^2 + r/R). Exact for the averaged model in
    /// continuous conduction; the switched simulation lands within ripple and
    /// averaging error of it.
    pub fn ideal_steady_output(&self, duty: S, v_in: S) -> S {
        let x = S::one() - duty;
        v_in * x / (x * x + self.r / self.r_load)
    }

    /// Duty that makes [`Self::ideal_steady_output`] hit `target`, when one
    /// exists on the efficient (left) side of the characteristic's peak.
    pub(crate) fn duty_for_target(&self, target: S, v_in: S) -> Result<S, CircuitError> {
        // target*x^2 - v_in*x + target*r/R = 0 with x = 1 - d; larger root is
        // the low-duty branch.
        let a = self.r / self.r_load;
        let disc = v_in * v_in - S::lit(4.0) * target * target * a;
        if disc < S::zero() || target <= S::zero() {
            return Err(CircuitError::UnreachableTarget {
                target_v: target.as_f64(),
                v_in: v_in.as_f64(),
            });
        }
        let x = (v_in + disc.sqrt()) / (S::lit(2.0) * target);
        Ok((S::one() - x).max(S::zero()))
    }
}

/// Instantaneous circuit state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConverterState<S> {
    /// Inductor current, amperes. Held at >= 0 (ideal diodes block reverse
    /// conduction).
    pub i_l: S,
    /// Upper capacitor voltage, volts.
    pub v_c1: S,
    /// Lower capacitor voltage, volts.
    pub v_c2: S,
}

impl<S: Scalar> ConverterState<S> {
    pub fn new(i_l: S, v_c1: S, v_c2: S) -> Self {
        ConverterState { i_l, v_c1, v_c2 }
    }

    /// Output voltage v_c1 + v_c2.
    pub fn v_o(&self) -> S {
        self.v_c1 + self.v_c2
    }

    pub fn is_finite(&self) -> bool {
        self.i_l.is_finite() && self.v_c1.is_finite() && self.v_c2.is_finite()
    }

    fn mul_add(&self, k: &Self, h: S) -> Self {
        ConverterState {
            i_l: self.i_l + h * k.i_l,
            v_c1: self.v_c1 + h * k.v_c1,
            v_c2: self.v_c2 + h * k.v_c2,
        }
    }
}

/// Gate commands for the two switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwitchState {
    pub m1_on: bool,
    pub m2_on: bool,
}

/// Gate states at time `t` for duty command `d`.
///
/// Trailing-edge sawtooth carriers: M1 conducts while frac(t*f_s) < d, M2
/// while frac(t*f_s + 1/2) < d. Duty outside [0, d_max] is clamped.
pub fn pwm_gates<S: Scalar>(t: S, duty: S, params: &ConverterParams<S>) -> SwitchState {
    let d = clamp_duty(duty, params.d_max);
    let phase = frac(t * params.f_s);
    gates_at_phase(phase, d)
}

fn clamp_duty<S: Scalar>(duty: S, d_max: S) -> S {
    duty.max(S::zero()).min(d_max)
}

fn frac<S: Scalar>(x: S) -> S {
    x - x.floor()
}

fn gates_at_phase<S: Scalar>(phase: S, d: S) -> SwitchState {
    SwitchState {
        m1_on: phase < d,
        m2_on: frac(phase + S::lit(0.5)) < d,
    }
}

/// State derivative for a fixed switch configuration.
///
/// When a switch is off, its diode routes the inductor current into the
/// corresponding capacitor; with both off the current feeds both capacitors in
/// series. The load always discharges both capacitors.
pub fn derivative<S: Scalar>(
    state: &ConverterState<S>,
    switches: SwitchState,
    v_in: S,
    params: &ConverterParams<S>,
) -> ConverterState<S> {
    let v_o = state.v_o();
    let i_l = state.i_l;
    let load_c1 = v_o / (params.r_load * params.c1);
    let load_c2 = v_o / (params.r_load * params.c2);
    let drop = v_in - params.r * i_l;

    match (switches.m1_on, switches.m2_on) {
        (true, true) => ConverterState {
            i_l: drop / params.l,
            v_c1: -load_c1,
            v_c2: -load_c2,
        },
        (false, true) => ConverterState {
            i_l: (drop - state.v_c1) / params.l,
            v_c1: i_l / params.c1 - load_c1,
            v_c2: -load_c2,
        },
        (true, false) => ConverterState {
            i_l: (drop - state.v_c2) / params.l,
            v_c1: -load_c1,
            v_c2: i_l / params.c2 - load_c2,
        },
        (false, false) => ConverterState {
            i_l: (drop - v_o) / params.l,
            v_c1: i_l / params.c1 - load_c1,
            v_c2: i_l / params.c2 - load_c2,
        },
    }
}

fn rk4_step<S: Scalar>(
    state: &ConverterState<S>,
    switches: SwitchState,
    v_in: S,
    h: S,
    params: &ConverterParams<S>,
) -> ConverterState<S> {
    let half = h / S::lit(2.0);
    let k1 = derivative(state, switches, v_in, params);
    let k2 = derivative(&state.mul_add(&k1, half), switches, v_in, params);
    let k3 = derivative(&state.mul_add(&k2, half), switches, v_in, params);
    let k4 = derivative(&state.mul_add(&k3, h), switches, v_in, params);
    let sixth = h / S::lit(6.0);
    let two = S::lit(2.0);
    ConverterState {
        i_l: state.i_l + sixth * (k1.i_l + two * k2.i_l + two * k3.i_l + k4.i_l),
        v_c1: state.v_c1 + sixth * (k1.v_c1 + two * k2.v_c1 + two * k3.v_c1 + k4.v_c1),
        v_c2: state.v_c2 + sixth * (k1.v_c2 + two * k2.v_c2 + two * k3.v_c2 + k4.v_c2),
    }
}

/// Running integrals of the state over a stretch of time; divides out to
/// cycle averages.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CycleAccum<S> {
    pub int_i_l: S,
    pub int_v_c1: S,
    pub int_v_c2: S,
}

impl<S: Scalar> CycleAccum<S> {
    pub fn reset(&mut self) {
        *self = CycleAccum {
            int_i_l: S::zero(),
            int_v_c1: S::zero(),
            int_v_c2: S::zero(),
        };
    }

    fn add_trapezoid(&mut self, a: &ConverterState<S>, b: &ConverterState<S>, h: S) {
        let w = h / S::lit(2.0);
        self.int_i_l += w * (a.i_l + b.i_l);
        self.int_v_c1 += w * (a.v_c1 + b.v_c1);
        self.int_v_c2 += w * (a.v_c2 + b.v_c2);
    }

    pub fn avg_v_o(&self, span: S) -> S {
        (self.int_v_c1 + self.int_v_c2) / span
    }
}

/// Fixed-step integrator that walks the circuit one macro step (dt) at a
/// time, splitting any step that contains a gate edge so the realized duty is
/// exact rather than quantized to the step grid.
pub(crate) struct Engine<'a, S> {
    pub params: &'a ConverterParams<S>,
    /// Integration steps per switching period.
    pub spp: u32,
    /// Effective step, = period/spp, <= params.dt.
    pub dt: S,
    clamp_duty: bool,
    warned_clamp: bool,
}

impl<'a, S: Scalar> Engine<'a, S> {
    pub fn new(params: &'a ConverterParams<S>, clamp_duty: bool) -> Result<Self, CircuitError> {
        params.validate()?;
        let raw = (params.f_s * params.dt).recip().as_f64();
        let spp = raw.ceil() as u32;
        let dt = S::one() / (params.f_s * S::from_count(spp as usize));
        Ok(Engine {
            params,
            spp,
            dt,
            clamp_duty,
            warned_clamp: false,
        })
    }

    /// Applies the duty limits, warning once per engine on the first clamp.
    pub fn effective_duty(&mut self, requested: S) -> S {
        if !self.clamp_duty {
            return requested;
        }
        let d = clamp_duty(requested, self.params.d_max);
        if d != requested && !self.warned_clamp {
            log::warn!(
                "duty command {} outside [0, {}], clamping (further clamps not reported)",
                requested,
                self.params.d_max
            );
            self.warned_clamp = true;
        }
        d
    }

    /// Advances the state across macro step `step_index` (global count since
    /// t = 0). Duty and source voltage are held for the step; gate edges
    /// inside the step split it into exact sub-segments.
    pub fn macro_step(
        &self,
        state: &mut ConverterState<S>,
        step_index: u64,
        duty: S,
        v_in: S,
        accum: &mut CycleAccum<S>,
    ) {
        let spp = S::from_count(self.spp as usize);
        let k = S::from_count((step_index % self.spp as u64) as usize);
        let phase0 = k / spp;
        let phase1 = (k + S::one()) / spp;
        let eps = S::epsilon() * S::lit(8.0);

        let half = S::lit(0.5);
        let mut wrapped = half + duty;
        if wrapped >= S::one() {
            wrapped -= S::one();
        }
        // Candidate gate edges; at most two can fall inside one macro step.
        let mut cuts = [S::zero(); 3];
        let mut n_cuts = 0;
        for c in [duty, half, wrapped] {
            if c > phase0 + eps && c < phase1 - eps {
                cuts[n_cuts] = c;
                n_cuts += 1;
            }
        }
        cuts[..n_cuts].sort_by(|a, b| a.partial_cmp(b).expect("phases are finite"));

        let mut seg_start = phase0;
        for i in 0..=n_cuts {
            let seg_end = if i < n_cuts { cuts[i] } else { phase1 };
            if seg_end - seg_start <= eps {
                seg_start = seg_end;
                continue;
            }
            let gates = gates_at_phase(seg_start, duty);
            let h = (seg_end - seg_start) * self.params.period();
            let before = *state;
            let mut next = rk4_step(&before, gates, v_in, h, self.params);
            if next.i_l < S::zero() {
                // Ideal diodes: reverse inductor current cannot flow.
                next.i_l = S::zero();
            }
            accum.add_trapezoid(&before, &next, h);
            *state = next;
            seg_start = seg_end;
        }
    }
}

/// Recorded open-loop trajectory, sampled on the integration grid.
#[derive(Debug, Clone, Default)]
pub struct SimTrace<S> {
    /// Sample times, seconds.
    pub t: Vec<S>,
    pub i_l: Vec<S>,
    pub v_c1: Vec<S>,
    pub v_c2: Vec<S>,
}

impl<S: Scalar> SimTrace<S> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn v_o(&self, idx: usize) -> S {
        self.v_c1[idx] + self.v_c2[idx]
    }

    pub fn v_o_series(&self) -> Vec<S> {
        self.v_c1
            .iter()
            .zip(&self.v_c2)
            .map(|(&a, &b)| a + b)
            .collect()
    }

    fn push(&mut self, t: S, state: &ConverterState<S>) {
        self.t.push(t);
        self.i_l.push(state.i_l);
        self.v_c1.push(state.v_c1);
        self.v_c2.push(state.v_c2);
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions<S> {
    /// Record every n-th integration step.
    pub decimation: usize,
    /// Starting state.
    pub initial_state: ConverterState<S>,
}

impl<S: Scalar> Default for SimOptions<S> {
    fn default() -> Self {
        SimOptions {
            decimation: 8,
            initial_state: ConverterState::default(),
        }
    }
}

/// Integrates the switched circuit under the given source-voltage and duty
/// schedules. Schedule changes take effect at the next integration step
/// boundary (within dt, i.e. well under a microsecond at the defaults).
pub fn simulate<S: Scalar>(
    params: &ConverterParams<S>,
    v_in: &Schedule<S>,
    duty: &Schedule<S>,
    t_end: S,
    options: &SimOptions<S>,
) -> Result<SimTrace<S>, CircuitError> {
    if !(t_end > S::zero()) || !t_end.is_finite() {
        return Err(CircuitError::InvalidConfig(format!(
            "t_end must be positive and finite, got {t_end}"
        )));
    }
    if options.decimation == 0 {
        return Err(CircuitError::InvalidConfig(
            "decimation must be at least 1".into(),
        ));
    }
    let mut engine = Engine::new(params, true)?;
    let n_steps = (t_end / engine.dt).ceil().as_f64() as u64;

    let mut state = options.initial_state;
    let mut accum = CycleAccum::default();
    let mut trace = SimTrace::default();
    for k in 0..n_steps {
        let t = S::from_count(k as usize) * engine.dt;
        if k % options.decimation as u64 == 0 {
            trace.push(t, &state);
        }
        let d = engine.effective_duty(duty.value_at(t));
        engine.macro_step(&mut state, k, d, v_in.value_at(t), &mut accum);
        if !state.is_finite() {
            return Err(CircuitError::Diverged {
                t_s: (t + engine.dt).as_f64(),
            });
        }
    }
    trace.push(S::from_count(n_steps as usize) * engine.dt, &state);
    Ok(trace)
}

/// Convergence policy for steady-state detection.
#[derive(Debug, Clone)]
pub struct SteadyStateOptions<S> {
    /// Give up after this much simulated time.
    pub horizon_s: S,
    /// Declare steady when the cycle average moves less than this relative
    /// amount across the window.
    pub rel_tol: S,
    /// Number of consecutive periods the average must hold still.
    pub window: usize,
}

impl<S: Scalar> Default for SteadyStateOptions<S> {
    fn default() -> Self {
        SteadyStateOptions {
            horizon_s: S::lit(0.5),
            rel_tol: S::lit(1.0e-4),
            window: 10,
        }
    }
}

/// Steady cycle-averaged output voltage at a fixed duty command.
///
/// Runs the switched simulation from an analytic near-steady seed until the
/// cycle average of v_o holds still, then returns that average.
pub fn steady_state_output<S: Scalar>(
    params: &ConverterParams<S>,
    duty: S,
    v_in: S,
) -> Result<S, CircuitError> {
    steady_state_output_with(params, duty, v_in, &SteadyStateOptions::default())
}

pub fn steady_state_output_with<S: Scalar>(
    params: &ConverterParams<S>,
    duty: S,
    v_in: S,
    options: &SteadyStateOptions<S>,
) -> Result<S, CircuitError> {
    if !(duty >= S::zero() && duty <= params.d_max) {
        return Err(CircuitError::InvalidDuty {
            duty: duty.as_f64(),
            limit: params.d_max.as_f64(),
        });
    }
    settle(params, duty, v_in, options).map(|(_, avg)| avg)
}

/// Runs to steady state and returns both the end-of-period state and the
/// converged cycle average of v_o. Used for initial conditions and as the
/// baseline step for identification experiments.
pub(crate) fn settle<S: Scalar>(
    params: &ConverterParams<S>,
    duty: S,
    v_in: S,
    options: &SteadyStateOptions<S>,
) -> Result<(ConverterState<S>, S), CircuitError> {
    let engine = Engine::new(params, false)?;
    let predicted = params.ideal_steady_output(duty, v_in);
    let half = predicted / S::lit(2.0);
    // Averaged-model equilibrium; close enough that convergence takes tens of
    // periods instead of thousands.
    let mut state = ConverterState::new(
        predicted / (params.r_load * (S::one() - duty)),
        half,
        half,
    );

    let max_periods = (options.horizon_s * params.f_s).ceil().as_f64() as u64;
    let mut averages: Vec<S> = Vec::with_capacity(options.window + 1);
    let mut accum = CycleAccum::default();
    let mut last_avg = S::nan();
    for p in 0..max_periods {
        accum.reset();
        for k in 0..engine.spp as u64 {
            engine.macro_step(
                &mut state,
                p * engine.spp as u64 + k,
                duty,
                v_in,
                &mut accum,
            );
        }
        if !state.is_finite() {
            return Err(CircuitError::Diverged {
                t_s: ((p + 1) as f64) / params.f_s.as_f64(),
            });
        }
        let avg = accum.avg_v_o(params.period());
        last_avg = avg;
        if averages.len() > options.window {
            averages.remove(0);
        }
        averages.push(avg);
        if averages.len() == options.window + 1 {
            let lo = averages.iter().cloned().fold(S::infinity(), S::min);
            let hi = averages.iter().cloned().fold(S::neg_infinity(), S::max);
            if hi - lo <= options.rel_tol * avg.abs().max(S::epsilon()) {
                return Ok((state, avg));
            }
        }
    }
    Err(CircuitError::NoSteadyState {
        duty: duty.as_f64(),
        last_average_v: last_avg.as_f64(),
    })
}

/// One grid point of the duty-to-voltage characteristic.
#[derive(Debug, Clone)]
pub struct CharacteristicPoint<S> {
    pub duty: S,
    pub output: Result<S, CircuitError>,
}

/// Sweeps steady-state output over a duty grid. Unlike
/// [`steady_state_output`], points above d_max are simulated as commanded;
/// this sweep exists to expose the gain roll-off near d = 1. Failures are
/// reported per point, the sweep continues.
pub fn operating_characteristic<S: Scalar>(
    params: &ConverterParams<S>,
    duties: &[S],
) -> Vec<CharacteristicPoint<S>> {
    let options = SteadyStateOptions::default();
    duties
        .iter()
        .map(|&d| {
            let output = if d >= S::zero() && d < S::one() {
                settle(params, d, params.v_in, &options).map(|(_, avg)| avg)
            } else {
                Err(CircuitError::InvalidDuty {
                    duty: d.as_f64(),
                    limit: 1.0,
                })
            };
            CharacteristicPoint { duty: d, output }
        })
        .collect()
}

#[derive(Debug, Clone, Error)]
pub enum CircuitError {
    #[error("invalid converter parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("duty {duty} outside [0, {limit}]")]
    InvalidDuty { duty: f64, limit: f64 },
    #[error("state diverged (non-finite) at t = {t_s} s")]
    Diverged { t_s: f64 },
    #[error("no steady state at duty {duty} within the horizon (last cycle average {last_average_v} V)")]
    NoSteadyState { duty: f64, last_average_v: f64 },
    #[error("no duty reaches {target_v} V from v_in = {v_in} V on this power stage")]
    UnreachableTarget { target_v: f64, v_in: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ConverterParams<f64> {
        ConverterParams::default()
    }

    #[test]
    fn default_parameters() {
        let p = params();
        assert_eq!(p.v_in, 12.0);
        assert_eq!(p.l, 500.0e-6);
        assert_eq!(p.r, 8.0e-3);
        assert_eq!(p.c1, 100.0e-6);
        assert_eq!(p.c2, 100.0e-6);
        assert_eq!(p.r_load, 24.7);
        assert_eq!(p.f_s, 32.0e3);
        assert_relative_eq!(p.dt, 1.0 / (32.0e3 * 256.0));
        assert_eq!(p.d_max, 0.9);
        p.validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut p = params();
        p.l = 0.0;
        assert!(matches!(p.validate(), Err(CircuitError::InvalidParams(_))));

        let mut p = params();
        p.dt = 1.0 / (32.0e3 * 32.0); // only 32 steps per period
        assert!(matches!(p.validate(), Err(CircuitError::InvalidParams(_))));

        let mut p = params();
        p.d_max = 1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn pwm_gate_edges() {
        let p = params();
        let t_half = 0.5 / p.f_s;

        let g = pwm_gates(0.0, 0.2, &p);
        assert_eq!((g.m1_on, g.m2_on), (true, false));

        let g = pwm_gates(t_half, 0.2, &p);
        assert_eq!((g.m1_on, g.m2_on), (false, true));

        let g = pwm_gates(0.55 / p.f_s, 0.6, &p);
        assert_eq!((g.m1_on, g.m2_on), (true, true));

        // Zero duty never turns a switch on.
        for k in 0..97 {
            let t = k as f64 / (97.0 * p.f_s);
            let g = pwm_gates(t, 0.0, &p);
            assert!(!g.m1_on && !g.m2_on);
        }
    }

    #[test]
    fn pwm_clamps_out_of_range_duty() {
        let p = params();
        for k in 0..53 {
            let t = k as f64 / (53.0 * p.f_s);
            assert_eq!(pwm_gates(t, 1.3, &p), pwm_gates(t, p.d_max, &p));
            assert_eq!(pwm_gates(t, -0.2, &p), pwm_gates(t, 0.0, &p));
        }
    }

    #[test]
    fn gate_on_fraction_matches_duty() {
        let p = params();
        let d = 0.37;
        let n = 20_000;
        let mut on1 = 0usize;
        let mut on2 = 0usize;
        for k in 0..n {
            let t = k as f64 / (n as f64 * p.f_s);
            let g = pwm_gates(t, d, &p);
            on1 += g.m1_on as usize;
            on2 += g.m2_on as usize;
        }
        assert_relative_eq!(on1 as f64 / n as f64, d, epsilon = 1e-3);
        assert_relative_eq!(on2 as f64 / n as f64, d, epsilon = 1e-3);
    }

    #[test]
    fn derivative_both_on_from_rest() {
        let p = params();
        let d = derivative(
            &ConverterState::default(),
            SwitchState {
                m1_on: true,
                m2_on: true,
            },
            12.0,
            &p,
        );
        assert_relative_eq!(d.i_l, 24_000.0); // 12 V across 500 uH
        assert_eq!(d.v_c1, 0.0);
        assert_eq!(d.v_c2, 0.0);
    }

    #[test]
    fn derivative_both_off_balanced() {
        let p = params();
        let d = derivative(
            &ConverterState::new(0.0, 6.0, 6.0),
            SwitchState {
                m1_on: false,
                m2_on: false,
            },
            12.0,
            &p,
        );
        // Source exactly cancels the output: no inductor slew; each capacitor
        // discharges into the load at v_o/(R*C).
        assert_relative_eq!(d.i_l, 0.0);
        assert_relative_eq!(d.v_c1, -4858.299595141701, max_relative = 1e-12);
        assert_relative_eq!(d.v_c2, -4858.299595141701, max_relative = 1e-12);
    }

    #[test]
    fn derivative_single_cell_charges_its_capacitor() {
        let p = params();
        let s = ConverterState::new(2.0, 7.0, 8.0);
        let d = derivative(
            &s,
            SwitchState {
                m1_on: false,
                m2_on: true,
            },
            12.0,
            &p,
        );
        assert_relative_eq!(d.i_l, (12.0 - 0.008 * 2.0 - 7.0) / 500.0e-6);
        assert_relative_eq!(d.v_c1, 2.0 / 100.0e-6 - 15.0 / (24.7 * 100.0e-6));
        assert_relative_eq!(d.v_c2, -15.0 / (24.7 * 100.0e-6));
    }

    #[test]
    fn zero_duty_settles_to_source_through_divider() {
        // v_o -> v_in * R/(R+r) = 11.9961... V once the inrush rings out.
        let p = params();
        let avg = steady_state_output(&p, 0.0, 12.0).unwrap();
        assert_relative_eq!(avg, 11.9961, epsilon = 2.0e-3);
    }

    #[test]
    fn startup_inrush_is_bounded() {
        // From a dead start at zero duty the L-C pair rings; ideal diodes let
        // v_o overshoot the source before conduction stops, but never past the
        // lossless doubling bound, and the tail settles below v_in.
        let p = params();
        let trace = simulate(
            &p,
            &Schedule::constant(12.0),
            &Schedule::constant(0.0),
            0.05,
            &SimOptions::default(),
        )
        .unwrap();
        let peak = trace
            .v_o_series()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(peak <= 2.0 * 12.0, "inrush peak {peak} above 2*v_in");
        assert!(peak > 12.0, "expected underdamped startup, peak {peak}");
        let end = trace.v_o(trace.len() - 1);
        assert!(end < 12.0, "settled output {end} should sit below v_in");
        for &i in trace.i_l.iter() {
            assert!(i >= 0.0, "inductor current clamped at zero");
        }
    }

    #[test]
    fn boost_operating_points() {
        let p = params();
        let v02 = steady_state_output(&p, 0.2, 12.0).unwrap();
        assert_relative_eq!(v02, 14.9924, epsilon = 0.05);
        let v05 = steady_state_output(&p, 0.5, 12.0).unwrap();
        assert_relative_eq!(v05, 23.9694, epsilon = 0.08);
    }

    #[test]
    fn steady_output_scales_linearly_with_source() {
        let p = params();
        let a = steady_state_output(&p, 0.3, 12.0).unwrap();
        let b = steady_state_output(&p, 0.3, 13.0).unwrap();
        assert_relative_eq!(b / a, 13.0 / 12.0, epsilon = 1e-3);
    }

    #[test]
    fn steady_state_rejects_duty_above_limit() {
        let p = params();
        assert!(matches!(
            steady_state_output(&p, 0.95, 12.0),
            Err(CircuitError::InvalidDuty { .. })
        ));
    }

    #[test]
    fn steady_state_reports_non_convergence() {
        let p = params();
        let opts = SteadyStateOptions {
            horizon_s: 5.0 / p.f_s, // too short to even fill the window
            ..SteadyStateOptions::default()
        };
        assert!(matches!(
            steady_state_output_with(&p, 0.2, 12.0, &opts),
            Err(CircuitError::NoSteadyState { .. })
        ));
    }

    #[test]
    fn characteristic_rises_then_rolls_off() {
        let p = params();
        let grid = [0.0, 0.3, 0.6, 0.9, 0.97, 0.99, 1.0];
        let points = operating_characteristic(&p, &grid);
        assert_eq!(points.len(), grid.len());
        let v: Vec<f64> = points[..6]
            .iter()
            .map(|pt| *pt.output.as_ref().unwrap())
            .collect();
        assert!(v[0] < v[1] && v[1] < v[2] && v[2] < v[3] && v[3] < v[4]);
        assert!(
            v[5] < v[4],
            "expected roll-off past the peak: {} then {}",
            v[4],
            v[5]
        );
        assert!(matches!(
            points[6].output,
            Err(CircuitError::InvalidDuty { .. })
        ));
    }

    #[test]
    fn non_dividing_dt_rounds_down_to_period_grid() {
        let mut p = params();
        p.dt = 1.0e-7; // period/312.5
        let engine = Engine::new(&p, true).unwrap();
        assert_eq!(engine.spp, 313);
        assert!(engine.dt <= p.dt);
        let trace = simulate(
            &p,
            &Schedule::constant(12.0),
            &Schedule::constant(0.2),
            1.0e-3,
            &SimOptions::default(),
        )
        .unwrap();
        assert!(trace.len() > 100);
    }

    #[test]
    fn simulate_validates_config() {
        let p = params();
        assert!(simulate(
            &p,
            &Schedule::constant(12.0),
            &Schedule::constant(0.2),
            0.0,
            &SimOptions::default(),
        )
        .is_err());
        assert!(simulate(
            &p,
            &Schedule::constant(12.0),
            &Schedule::constant(0.2),
            1.0e-3,
            &SimOptions {
                decimation: 0,
                ..SimOptions::default()
            },
        )
        .is_err());
    }

    #[test]
    fn duty_for_target_inverts_characteristic() {
        let p = params();
        for target in [15.0, 24.0, 31.0, 48.5] {
            let d = p.duty_for_target(target, 12.0).unwrap();
            assert_relative_eq!(p.ideal_steady_output(d, 12.0), target, epsilon = 1e-9);
        }
        // Beyond the ESR-limited peak there is no solution.
        assert!(p.duty_for_target(400.0, 12.0).is_err());
    }
}
