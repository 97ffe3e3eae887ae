//! Closed-loop runs on the switched converter, named built-in experiments,
//! and step-response metrics.
//!
//! The control loop is sampled at the switching rate: once per period the
//! controller reads the previous period's cycle-averaged output, computes a
//! duty command, and holds it for the whole period. Recorded rows are one
//! per period with cycle-averaged state columns stamped at the period start.

use std::io::Write;

use thiserror::Error;

use crate::circuit::{
    settle, CircuitError, ConverterParams, ConverterState, CycleAccum, Engine,
    SteadyStateOptions,
};
use crate::control::{
    pi_step_with, tsf_pi_step, AntiWindup, ControlError, DutyLimits, FuzzyPartition, GainTable,
    PiGains, PiState, SchedulingVariable,
};
use crate::scalar::Scalar;
use crate::schedule::Schedule;
use crate::subinterval::Subinterval;

/// What drives the duty command.
#[derive(Debug, Clone)]
pub enum ControllerSpec<S> {
    /// Duty follows a schedule; no feedback.
    OpenLoop { duty: Schedule<S> },
    /// One PI tuning for the whole run.
    FixedPi {
        gains: PiGains<S>,
        anti_windup: AntiWindup,
    },
    /// Fuzzy-blended per-band PI tunings.
    TsfPi {
        table: GainTable<S>,
        partition: FuzzyPartition<S>,
        scheduling: SchedulingVariable,
    },
}

/// Where the run starts from.
#[derive(Debug, Clone, Copy, Default)]
pub enum InitialCondition<S> {
    /// Settle the converter at the t = 0 operating point first and preload
    /// the integrator so the loop opens at equilibrium.
    #[default]
    SteadyAtStart,
    /// All states zero, integrator zero: a cold start.
    Zero,
    /// Explicit converter state, integrator zero.
    State(ConverterState<S>),
}

/// A complete closed-loop (or open-loop) experiment definition.
#[derive(Debug, Clone)]
pub struct Scenario<S> {
    pub name: String,
    pub params: ConverterParams<S>,
    pub v_in: Schedule<S>,
    pub v_ref: Schedule<S>,
    pub controller: ControllerSpec<S>,
    pub t_end: S,
    pub initial: InitialCondition<S>,
}

impl<S: Scalar> Scenario<S> {
    pub fn run(&self) -> Result<TimeSeries<S>, ScenarioError> {
        run(self)
    }
}

/// One row per switching period. State columns are cycle averages over the
/// period starting at `t`; `duty`, `v_in`, `v_ref` are the values held for
/// that period; `kp`/`ki` are the gains the controller applied (zero for
/// open loop).
#[derive(Debug, Clone, Default)]
pub struct TimeSeries<S> {
    pub t: Vec<S>,
    pub v_in: Vec<S>,
    pub v_ref: Vec<S>,
    pub duty: Vec<S>,
    pub i_l: Vec<S>,
    pub v_c1: Vec<S>,
    pub v_c2: Vec<S>,
    pub v_o: Vec<S>,
    pub kp: Vec<S>,
    pub ki: Vec<S>,
    /// Set when the run was cut short by a non-finite or absurd state; holds
    /// the time of the first bad period.
    pub diverged_at: Option<S>,
}

impl<S: Scalar> TimeSeries<S> {
    pub fn rows(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn push_row(&mut self, row: Row<S>) {
        self.t.push(row.t);
        self.v_in.push(row.v_in);
        self.v_ref.push(row.v_ref);
        self.duty.push(row.duty);
        self.i_l.push(row.i_l);
        self.v_c1.push(row.v_c1);
        self.v_c2.push(row.v_c2);
        self.v_o.push(row.v_o);
        self.kp.push(row.kp);
        self.ki.push(row.ki);
    }

    /// Index of the last row with t <= at. Rows are uniformly spaced.
    pub fn row_at(&self, at: S) -> Option<usize> {
        if self.t.is_empty() || at < self.t[0] {
            return None;
        }
        match self
            .t
            .binary_search_by(|probe| probe.partial_cmp(&at).expect("times are finite"))
        {
            Ok(i) => Some(i),
            Err(i) => Some(i - 1),
        }
    }

    /// Writes the canonical CSV form.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_s,v_in,v_ref,duty,i_l,v_c1,v_c2,v_o,kp_active,ki_active")?;
        for k in 0..self.rows() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                self.t[k],
                self.v_in[k],
                self.v_ref[k],
                self.duty[k],
                self.i_l[k],
                self.v_c1[k],
                self.v_c2[k],
                self.v_o[k],
                self.kp[k],
                self.ki[k],
            )?;
        }
        Ok(())
    }
}

struct Row<S> {
    t: S,
    v_in: S,
    v_ref: S,
    duty: S,
    i_l: S,
    v_c1: S,
    v_c2: S,
    v_o: S,
    kp: S,
    ki: S,
}

/// Anything the per-period controller needs to carry across periods.
enum ControllerState<S> {
    OpenLoop,
    FixedPi(PiState<S>),
    TsfPi(PiState<S>),
}

/// Runs the scenario to completion. Divergence does not error: the
/// truncated series is returned with `diverged_at` set, so the record up to
/// the blowup can still be inspected.
pub fn run<S: Scalar>(scenario: &Scenario<S>) -> Result<TimeSeries<S>, ScenarioError> {
    let params = &scenario.params;
    let mut engine = Engine::new(params, true)?;
    let period = params.period();
    if !(scenario.t_end > period) || !scenario.t_end.is_finite() {
        return Err(ScenarioError::InvalidConfig(format!(
            "t_end must cover at least one switching period, got {}",
            scenario.t_end
        )));
    }
    let n_periods = (scenario.t_end * params.f_s).ceil().as_f64() as u64;
    let limits = DutyLimits::new(S::zero(), params.d_max)?;

    // Initial conditions: converter state plus the measurement the
    // controller sees on its first update.
    let v_in0 = scenario.v_in.value_at(S::zero());
    let v_ref0 = scenario.v_ref.value_at(S::zero());
    let (mut state, mut measured) = match scenario.initial {
        InitialCondition::SteadyAtStart => {
            let duty0 = match &scenario.controller {
                ControllerSpec::OpenLoop { duty } => duty.value_at(S::zero()),
                _ => params.duty_for_target(v_ref0, v_in0)?,
            };
            let (s, avg) = settle(params, duty0, v_in0, &SteadyStateOptions::default())?;
            (s, avg)
        }
        InitialCondition::Zero => {
            let s = ConverterState::new(S::zero(), S::zero(), S::zero());
            (s, S::zero())
        }
        InitialCondition::State(s) => (s, s.v_o()),
    };

    // Preload the integrator so a steady start opens at the equilibrium duty
    // instead of slewing up from zero.
    let mut controller = match &scenario.controller {
        ControllerSpec::OpenLoop { .. } => ControllerState::OpenLoop,
        ControllerSpec::FixedPi { gains, .. } => {
            let pi = match scenario.initial {
                InitialCondition::SteadyAtStart => {
                    let duty0 = params.duty_for_target(v_ref0, v_in0)?;
                    PiState::with_integrator(duty0 / gains.integral_gain())
                }
                _ => PiState::new(),
            };
            ControllerState::FixedPi(pi)
        }
        ControllerSpec::TsfPi {
            table,
            partition,
            scheduling,
        } => {
            let pi = match scenario.initial {
                InitialCondition::SteadyAtStart => {
                    let duty0 = params.duty_for_target(v_ref0, v_in0)?;
                    let x0 = match scheduling {
                        SchedulingVariable::Reference => v_ref0,
                        SchedulingVariable::MeasuredOutput => measured,
                    };
                    let gains = crate::control::blended_gains(table, partition, x0);
                    PiState::with_integrator(duty0 / gains.integral_gain())
                }
                _ => PiState::new(),
            };
            ControllerState::TsfPi(pi)
        }
    };

    let blowup = S::lit(1.0e7);
    let mut series = TimeSeries::default();
    let mut accum = CycleAccum::default();
    let mut step_index: u64 = 0;

    for k in 0..n_periods {
        let t = S::from_count(k as usize) * period;
        let v_in = scenario.v_in.value_at(t);
        let v_ref = scenario.v_ref.value_at(t);
        let error = v_ref - measured;

        let (requested, kp, ki) = match (&scenario.controller, &mut controller) {
            (ControllerSpec::OpenLoop { duty }, ControllerState::OpenLoop) => {
                (duty.value_at(t), S::zero(), S::zero())
            }
            (
                ControllerSpec::FixedPi { gains, anti_windup },
                ControllerState::FixedPi(pi),
            ) => {
                let (d, next) = pi_step_with(*anti_windup, gains, *pi, error, period, &limits);
                *pi = next;
                (d, gains.kp, gains.ki)
            }
            (
                ControllerSpec::TsfPi {
                    table,
                    partition,
                    scheduling,
                },
                ControllerState::TsfPi(pi),
            ) => {
                let x = match scheduling {
                    SchedulingVariable::Reference => v_ref,
                    SchedulingVariable::MeasuredOutput => measured,
                };
                let (d, next, gains) =
                    tsf_pi_step(table, partition, x, *pi, error, period, &limits);
                *pi = next;
                (d, gains.kp, gains.ki)
            }
            _ => unreachable!("controller state always matches the configured kind"),
        };
        let duty = engine.effective_duty(requested);

        accum.reset();
        for _ in 0..engine.spp {
            engine.macro_step(&mut state, step_index, duty, v_in, &mut accum);
            step_index += 1;
        }
        let v_o = accum.avg_v_o(period);
        series.push_row(Row {
            t,
            v_in,
            v_ref,
            duty,
            i_l: accum.int_i_l / period,
            v_c1: accum.int_v_c1 / period,
            v_c2: accum.int_v_c2 / period,
            v_o,
            kp,
            ki,
        });

        if !state.is_finite() || v_o.abs() > blowup {
            series.diverged_at = Some(t);
            break;
        }
        measured = v_o;
    }
    Ok(series)
}

/// Figures of merit for one step event inside a recorded run.
#[derive(Debug, Clone, Copy)]
pub struct StepMetrics<S> {
    /// When the step was applied.
    pub t_event: S,
    /// Output just before the event.
    pub initial: S,
    /// Mean of the trailing 10% of the window.
    pub final_value: S,
    /// Time from the event until the output enters and stays inside
    /// +/-2% of the final value. `None` when it never stays in.
    pub settling_time: Option<S>,
    /// Peak excursion past the final value in the step direction, as a
    /// percentage of the step size (of the final value when the step is
    /// degenerate).
    pub overshoot_percent: S,
    /// |final - reference| at the window end.
    pub steady_state_error: S,
    /// The reference the window ends on.
    pub reference: S,
}

impl<S: Scalar> StepMetrics<S> {
    /// Whether the output entered the +/-2% band and stayed there.
    pub fn settled(&self) -> bool {
        self.settling_time.is_some()
    }

    /// Steady-state error as a percentage of the reference.
    pub fn sse_percent(&self) -> S {
        if self.reference == S::zero() {
            return S::infinity();
        }
        S::lit(100.0) * self.steady_state_error / self.reference.abs()
    }
}

/// Fraction of the final value used for the settling band.
const SETTLE_BAND: f64 = 0.02;
/// Minimum rows a metrics window must span.
const MIN_WINDOW_ROWS: usize = 20;

/// Step metrics over the window [t_event, window_end). The initial value is
/// read from the last row before the event; settling and overshoot are
/// relative to the trailing-mean final value.
pub fn step_metrics<S: Scalar>(
    ts: &TimeSeries<S>,
    t_event: S,
    window_end: S,
) -> Result<StepMetrics<S>, ScenarioError> {
    if ts.is_empty() {
        return Err(ScenarioError::EmptySeries);
    }
    let start = ts
        .t
        .iter()
        .position(|&t| t >= t_event)
        .ok_or(ScenarioError::EventOutsideSeries {
            t_event: t_event.as_f64(),
        })?;
    let end = ts.t.iter().take_while(|&&t| t < window_end).count();
    if end <= start + MIN_WINDOW_ROWS {
        return Err(ScenarioError::WindowTooShort {
            rows: end.saturating_sub(start),
            min: MIN_WINDOW_ROWS + 1,
        });
    }
    let window = &ts.v_o[start..end];
    let initial = if start == 0 {
        ts.v_o[0]
    } else {
        ts.v_o[start - 1]
    };
    let take = (window.len() / 10).max(1);
    let final_value =
        window[window.len() - take..].iter().copied().sum::<S>() / S::from_count(take);

    let band = S::lit(SETTLE_BAND) * final_value.abs();
    let mut settled_from: Option<usize> = None;
    for (i, &v) in window.iter().enumerate().rev() {
        if (v - final_value).abs() > band {
            break;
        }
        settled_from = Some(i);
    }
    let settling_time = match settled_from {
        // Settled by construction at the tail only does not count: the last
        // sample must itself be inside, which the loop guarantees.
        Some(i) => Some(ts.t[start + i] - t_event),
        None => None,
    };

    // Source-disturbance events barely move the regulated output: the
    // step direction is then sign noise and a percentage of the vanishing
    // step would explode. Degenerate steps report the absolute peak
    // excursion as a fraction of the final value instead.
    let step = final_value - initial;
    let degenerate = step.abs() <= S::lit(SETTLE_BAND) * final_value.abs();
    let direction = if step >= S::zero() { S::one() } else { -S::one() };
    let mut peak = S::zero();
    for &v in window {
        let excursion = if degenerate {
            (v - final_value).abs()
        } else {
            direction * (v - final_value)
        };
        peak = peak.max(excursion);
    }
    let denom = if degenerate {
        final_value.abs()
    } else {
        step.abs()
    };
    let overshoot_percent = if denom > S::zero() {
        S::lit(100.0) * peak / denom
    } else {
        S::zero()
    };

    let reference = ts.v_ref[end - 1];
    Ok(StepMetrics {
        t_event,
        initial,
        final_value,
        settling_time,
        overshoot_percent,
        steady_state_error: (final_value - reference).abs(),
        reference,
    })
}

/// Event times worth analyzing in a scenario: every reference or source
/// change strictly inside (0, t_end), deduplicated and sorted.
pub fn event_times<S: Scalar>(scenario: &Scenario<S>) -> Vec<S> {
    let mut events: Vec<S> = scenario
        .v_ref
        .change_times()
        .into_iter()
        .chain(scenario.v_in.change_times())
        .filter(|&t| t > S::zero() && t < scenario.t_end)
        .collect();
    events.sort_by(|a, b| a.partial_cmp(b).expect("times are finite"));
    events.dedup();
    events
}

/// Metrics for every event in the scenario, each window running to the next
/// event (or the end of the run).
pub fn step_metrics_all<S: Scalar>(
    scenario: &Scenario<S>,
    ts: &TimeSeries<S>,
) -> Vec<(S, Result<StepMetrics<S>, ScenarioError>)> {
    let events = event_times(scenario);
    let mut out = Vec::with_capacity(events.len());
    for (i, &t0) in events.iter().enumerate() {
        let t1 = events.get(i + 1).copied().unwrap_or(scenario.t_end);
        out.push((t0, step_metrics(ts, t0, t1)));
    }
    out
}

/// Names of the built-in scenarios, in presentation order.
pub const BUILTIN_NAMES: [&str; 9] = [
    "fig7_s1", "fig7_s2", "fig7_s3", "fig7_s4", "fig7_s5", "fig8a", "fig8b", "fig11", "fig12",
];

/// The named reference experiments.
///
/// The `fig7_*` family holds one band's fixed PI against a source-voltage
/// wiggle and a late reference step. `fig8a`/`fig8b` sweep the reference
/// across all five bands under a single fixed tuning (the lowest band's and
/// the fourth band's respectively). `fig11` holds a low reference under a
/// staircase source wobble with the scheduled controller; `fig12` repeats
/// the fig8 sweep with the scheduled controller.
pub fn builtin_scenarios<S: Scalar>() -> Vec<Scenario<S>> {
    BUILTIN_NAMES
        .iter()
        .map(|name| builtin(name).expect("all built-in names resolve"))
        .collect()
}

/// Looks up one built-in scenario by name.
pub fn builtin<S: Scalar>(name: &str) -> Option<Scenario<S>> {
    let params = ConverterParams::default();
    let table = GainTable::reference();
    let pts = |v: &[(f64, f64)]| -> Schedule<S> {
        Schedule::from_points(v.iter().map(|&(t, x)| (S::lit(t), S::lit(x))).collect())
            .expect("built-in schedules are valid")
    };
    let fig7 = |sub: Subinterval| -> Scenario<S> {
        let mid = sub.midpoint::<S>();
        Scenario {
            name: format!("fig7_{}", sub.to_string().to_lowercase()),
            params,
            v_in: pts(&[(0.0, 11.0), (0.12, 13.0), (0.25, 11.0)]),
            v_ref: Schedule::from_points(vec![
                (S::zero(), mid),
                (S::lit(0.36), mid + S::lit(2.0)),
            ])
            .expect("built-in schedules are valid"),
            controller: ControllerSpec::FixedPi {
                gains: table.gains_for(sub),
                anti_windup: AntiWindup::Conditional,
            },
            t_end: S::lit(0.5),
            initial: InitialCondition::SteadyAtStart,
        }
    };
    let sweep_refs = [(0.0, 15.0), (0.2, 25.0), (0.4, 42.0), (0.6, 33.0), (0.8, 50.0)];

    match name {
        "fig7_s1" => Some(fig7(Subinterval::S1)),
        "fig7_s2" => Some(fig7(Subinterval::S2)),
        "fig7_s3" => Some(fig7(Subinterval::S3)),
        "fig7_s4" => Some(fig7(Subinterval::S4)),
        "fig7_s5" => Some(fig7(Subinterval::S5)),
        "fig8a" | "fig8b" => {
            let sub = if name == "fig8a" {
                Subinterval::S1
            } else {
                Subinterval::S4
            };
            Some(Scenario {
                name: name.to_string(),
                params,
                v_in: Schedule::constant(S::lit(12.0)),
                v_ref: pts(&sweep_refs),
                controller: ControllerSpec::FixedPi {
                    gains: table.gains_for(sub),
                    anti_windup: AntiWindup::Conditional,
                },
                t_end: S::one(),
                initial: InitialCondition::SteadyAtStart,
            })
        }
        "fig11" => Some(Scenario {
            name: name.to_string(),
            params,
            v_in: pts(&[
                (0.0, 11.0),
                (0.2, 12.0),
                (0.4, 13.0),
                (0.6, 12.0),
                (0.8, 11.0),
            ]),
            v_ref: Schedule::constant(S::lit(17.0)),
            controller: ControllerSpec::TsfPi {
                table,
                partition: FuzzyPartition::reference(),
                scheduling: SchedulingVariable::Reference,
            },
            t_end: S::one(),
            initial: InitialCondition::SteadyAtStart,
        }),
        "fig12" => Some(Scenario {
            name: name.to_string(),
            params,
            v_in: Schedule::constant(S::lit(12.0)),
            v_ref: pts(&sweep_refs),
            controller: ControllerSpec::TsfPi {
                table,
                partition: FuzzyPartition::reference(),
                scheduling: SchedulingVariable::Reference,
            },
            t_end: S::one(),
            initial: InitialCondition::SteadyAtStart,
        }),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("time series is empty")]
    EmptySeries,
    #[error("event at {t_event} s lies outside the recorded series")]
    EventOutsideSeries { t_event: f64 },
    #[error("metrics window has {rows} rows, need at least {min}")]
    WindowTooShort { rows: usize, min: usize },
}
