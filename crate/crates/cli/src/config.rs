//! Scenario files and command-line parameter overrides.
//!
//! A scenario file is a flat TOML document: top-level `name`, `t_end`,
//! optional `initial`, then `[converter]`, `[controller]`, `[schedules]`
//! sections. Unknown keys are rejected so a typo fails loudly instead of
//! silently running the default.

use serde::Deserialize;
use tlbc_core::control::{AntiWindup, SchedulingVariable};
use tlbc_core::scenario::{ControllerSpec, InitialCondition};
use tlbc_core::{ConverterParams, FuzzyPartition, GainTable, PiGains, Scenario, Schedule};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    /// Simulated horizon, seconds.
    pub t_end: f64,
    /// "steady" (default) settles the rig at the t = 0 operating point
    /// before the run; "zero" is a cold start.
    pub initial: Option<String>,
    pub converter: Option<ConverterSection>,
    pub controller: ControllerSection,
    #[serde(default)]
    pub schedules: SchedulesSection,
}

/// Every field optional: absent means the stock rig value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterSection {
    pub v_in: Option<f64>,
    pub l: Option<f64>,
    pub r: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub r_load: Option<f64>,
    pub f_s: Option<f64>,
    pub dt: Option<f64>,
    pub d_max: Option<f64>,
}

/// `kind` picks the controller; the other fields belong to exactly one kind
/// and are rejected elsewhere. A tagged enum would read nicer but serde
/// cannot deny unknown keys inside internally tagged variants, and silent
/// typos are worse than one match block.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    /// "open_loop", "fixed_pi", or "tsf_pi".
    pub kind: String,
    /// open_loop: duty as a scalar or [[t, value], ...].
    pub duty: Option<ScheduleSpec>,
    /// fixed_pi: proportional gain.
    pub kp: Option<f64>,
    /// fixed_pi: integral-time gain.
    pub ki: Option<f64>,
    /// fixed_pi: "conditional" (default) or "clamp_only".
    pub anti_windup: Option<String>,
    /// tsf_pi: "reference" (default) or "output".
    pub scheduling: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulesSection {
    /// Source voltage: scalar or [[t, value], ...]. Absent means the
    /// converter's v_in, held constant.
    pub v_in: Option<ScheduleSpec>,
    /// Reference voltage; required unless the controller is open loop.
    pub v_ref: Option<ScheduleSpec>,
}

/// A constant or a piecewise-constant breakpoint list.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Constant(f64),
    Points(Vec<(f64, f64)>),
}

impl ScheduleSpec {
    fn build(&self, what: &str) -> Result<Schedule, CliError> {
        match self {
            ScheduleSpec::Constant(v) => Ok(Schedule::constant(*v)),
            ScheduleSpec::Points(pts) => Schedule::from_points(pts.clone())
                .map_err(|e| CliError::Config(format!("{what}: {e}"))),
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("scenario file: {e}")))
    }

    /// Builds the runnable scenario. `fallback_name` is used when the file
    /// has no `name`; `overrides` are `--set` pairs applied on top of the
    /// `[converter]` section.
    pub fn into_scenario(
        self,
        fallback_name: &str,
        overrides: &[(String, f64)],
    ) -> Result<Scenario, CliError> {
        let mut params = ConverterParams::default();
        let section = self.converter.unwrap_or_default();
        apply_section(&mut params, &section);
        apply_overrides(&mut params, overrides)?;
        params
            .validate()
            .map_err(|e| CliError::Config(format!("converter: {e}")))?;

        let controller = self.controller.build()?;

        let v_in = match &self.schedules.v_in {
            Some(spec) => spec.build("v_in schedule")?,
            None => Schedule::constant(params.v_in),
        };
        let v_ref = match (&self.schedules.v_ref, &controller) {
            (Some(spec), _) => spec.build("v_ref schedule")?,
            (None, ControllerSpec::OpenLoop { .. }) => Schedule::constant(0.0),
            (None, _) => {
                return Err(CliError::Config(
                    "closed-loop scenarios need a v_ref schedule".into(),
                ))
            }
        };

        if !(self.t_end > 0.0) {
            return Err(CliError::Config(format!(
                "t_end must be positive, got {}",
                self.t_end
            )));
        }
        let initial = match self.initial.as_deref() {
            None | Some("steady") => InitialCondition::SteadyAtStart,
            Some("zero") => InitialCondition::Zero,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "initial must be \"steady\" or \"zero\", got \"{other}\""
                )))
            }
        };

        Ok(Scenario {
            name: self.name.unwrap_or_else(|| fallback_name.to_string()),
            params,
            v_in,
            v_ref,
            controller,
            t_end: self.t_end,
            initial,
        })
    }
}

impl ControllerSection {
    fn build(&self) -> Result<ControllerSpec<f64>, CliError> {
        let reject = |field: &str, set: bool| {
            if set {
                Err(CliError::Config(format!(
                    "\"{field}\" does not apply to controller kind \"{}\"",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        match self.kind.as_str() {
            "open_loop" => {
                reject("kp", self.kp.is_some())?;
                reject("ki", self.ki.is_some())?;
                reject("anti_windup", self.anti_windup.is_some())?;
                reject("scheduling", self.scheduling.is_some())?;
                let duty = self
                    .duty
                    .as_ref()
                    .ok_or_else(|| CliError::Config("open_loop needs a duty".into()))?;
                Ok(ControllerSpec::OpenLoop {
                    duty: duty.build("duty schedule")?,
                })
            }
            "fixed_pi" => {
                reject("duty", self.duty.is_some())?;
                reject("scheduling", self.scheduling.is_some())?;
                let (kp, ki) = match (self.kp, self.ki) {
                    (Some(kp), Some(ki)) => (kp, ki),
                    _ => {
                        return Err(CliError::Config(
                            "fixed_pi needs both kp and ki".into(),
                        ))
                    }
                };
                Ok(ControllerSpec::FixedPi {
                    gains: PiGains::new(kp, ki)
                        .map_err(|e| CliError::Config(format!("controller: {e}")))?,
                    anti_windup: parse_anti_windup(self.anti_windup.as_deref())?,
                })
            }
            "tsf_pi" => {
                reject("duty", self.duty.is_some())?;
                reject("kp", self.kp.is_some())?;
                reject("ki", self.ki.is_some())?;
                reject("anti_windup", self.anti_windup.is_some())?;
                Ok(ControllerSpec::TsfPi {
                    table: GainTable::reference(),
                    partition: FuzzyPartition::reference(),
                    scheduling: parse_scheduling(self.scheduling.as_deref())?,
                })
            }
            other => Err(CliError::Config(format!(
                "controller kind must be open_loop, fixed_pi, or tsf_pi, got \"{other}\""
            ))),
        }
    }
}

fn parse_anti_windup(s: Option<&str>) -> Result<AntiWindup, CliError> {
    match s {
        None | Some("conditional") => Ok(AntiWindup::Conditional),
        Some("clamp_only") => Ok(AntiWindup::ClampOnly),
        Some(other) => Err(CliError::Config(format!(
            "anti_windup must be \"conditional\" or \"clamp_only\", got \"{other}\""
        ))),
    }
}

fn parse_scheduling(s: Option<&str>) -> Result<SchedulingVariable, CliError> {
    match s {
        None => Ok(SchedulingVariable::Reference),
        Some(text) => text
            .parse()
            .map_err(|e| CliError::Config(format!("scheduling: {e}"))),
    }
}

fn apply_section(params: &mut ConverterParams, s: &ConverterSection) {
    if let Some(v) = s.v_in {
        params.v_in = v;
    }
    if let Some(v) = s.l {
        params.l = v;
    }
    if let Some(v) = s.r {
        params.r = v;
    }
    if let Some(v) = s.c1 {
        params.c1 = v;
    }
    if let Some(v) = s.c2 {
        params.c2 = v;
    }
    if let Some(v) = s.r_load {
        params.r_load = v;
    }
    if let Some(v) = s.f_s {
        params.f_s = v;
        // Keep the solver aligned to the new carrier unless dt is pinned
        // explicitly.
        if s.dt.is_none() {
            params.dt = 1.0 / (v * 256.0);
        }
    }
    if let Some(v) = s.dt {
        params.dt = v;
    }
    if let Some(v) = s.d_max {
        params.d_max = v;
    }
}

/// Parses one `--set key=value` pair.
pub fn parse_override(text: &str) -> Result<(String, f64), CliError> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got \"{text}\"")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("--set {key}: \"{value}\" is not a number")))?;
    Ok((key.trim().to_string(), value))
}

/// Applies `--set` pairs to the rig parameters; unknown keys are an error.
pub fn apply_overrides(
    params: &mut ConverterParams,
    overrides: &[(String, f64)],
) -> Result<(), CliError> {
    for (key, value) in overrides {
        match key.as_str() {
            "v_in" => params.v_in = *value,
            "l" => params.l = *value,
            "r" => params.r = *value,
            "c1" => params.c1 = *value,
            "c2" => params.c2 = *value,
            "r_load" => params.r_load = *value,
            "f_s" => {
                params.f_s = *value;
                params.dt = 1.0 / (value * 256.0);
            }
            "dt" => params.dt = *value,
            "d_max" => params.d_max = *value,
            other => {
                return Err(CliError::Config(format!(
                    "unknown converter parameter \"{other}\" \
                     (expected one of v_in, l, r, c1, c2, r_load, f_s, dt, d_max)"
                )))
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file_round_trips() {
        let text = r#"
            name = "demo"
            t_end = 0.01

            [converter]
            v_in = 10.0

            [controller]
            kind = "fixed_pi"
            kp = 5.24e-6
            ki = 1.42e6

            [schedules]
            v_in = 10.0
            v_ref = [[0.0, 15.0], [0.005, 17.0]]
        "#;
        let s = ScenarioFile::parse(text)
            .unwrap()
            .into_scenario("fallback", &[])
            .unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.params.v_in, 10.0);
        assert_eq!(s.v_ref.value_at(0.006), 17.0);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = r#"
            t_end = 0.01
            [controller]
            kind = "tsf_pi"
            [schedules]
            v_in = 12.0
            v_ref = 15.0
            [converter]
            indutance = 1e-3
        "#;
        let err = ScenarioFile::parse(text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("indutance"), "message was: {msg}");
    }

    #[test]
    fn schedules_section_is_optional_for_open_loop() {
        let text = r#"
            t_end = 0.01
            initial = "zero"
            [converter]
            v_in = 10.0
            [controller]
            kind = "open_loop"
            duty = 0.3
        "#;
        let s = ScenarioFile::parse(text)
            .unwrap()
            .into_scenario("x", &[])
            .unwrap();
        assert_eq!(s.v_in.value_at(0.0), 10.0);
    }

    #[test]
    fn closed_loop_requires_reference() {
        let text = r#"
            t_end = 0.01
            [controller]
            kind = "tsf_pi"
            [schedules]
            v_in = 12.0
        "#;
        let err = ScenarioFile::parse(text)
            .unwrap()
            .into_scenario("x", &[])
            .unwrap_err();
        assert!(format!("{err}").contains("v_ref"));
    }

    #[test]
    fn cross_kind_setting_is_rejected() {
        let text = r#"
            t_end = 0.01
            [controller]
            kind = "fixed_pi"
            kp = 1e-6
            ki = 1e6
            scheduling = "output"
            [schedules]
            v_in = 12.0
            v_ref = 15.0
        "#;
        let err = ScenarioFile::parse(text)
            .unwrap()
            .into_scenario("x", &[])
            .unwrap_err();
        assert!(format!("{err}").contains("scheduling"));
    }

    #[test]
    fn override_parsing() {
        assert_eq!(parse_override("r_load=12.5").unwrap(), ("r_load".into(), 12.5));
        assert!(parse_override("r_load").is_err());
        assert!(parse_override("r_load=abc").is_err());

        let mut params = ConverterParams::default();
        apply_overrides(&mut params, &[("f_s".into(), 64.0e3)]).unwrap();
        assert_eq!(params.f_s, 64.0e3);
        assert_eq!(params.dt, 1.0 / (64.0e3 * 256.0));
        let err = apply_overrides(&mut params, &[("bogus".into(), 1.0)]).unwrap_err();
        assert!(format!("{err}").contains("bogus"));
    }
}
