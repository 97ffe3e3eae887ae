//! `tlbc`: workbench CLI for the three-level boost converter library.
//!
//! Four commands: `characteristic` sweeps the steady-state gain curve,
//! `identify` fits small-signal models from step experiments, `run` executes
//! a builtin or TOML-defined scenario, and `reproduce-all` batches the whole
//! artifact set into one output directory with a summary table.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod config;
mod report;
mod svg;

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;
use tlbc_core::lti::InputChannel;
use tlbc_core::scenario::{builtin, ControllerSpec, ScenarioError, BUILTIN_NAMES};
use tlbc_core::subinterval::Subinterval;
use tlbc_core::sysid::{
    fit_tf, generate_experiment, structure_scan, ExperimentOptions, FitOptions, SysidError,
};
use tlbc_core::{circuit, ConverterParams, OperatingPoint, Scenario};

use config::{apply_overrides, parse_override, ScenarioFile};

#[derive(Parser)]
#[command(name = "tlbc", version, about = "Three-level boost converter workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep steady-state output voltage over a duty-cycle grid
    Characteristic(CharacteristicArgs),
    /// Fit small-signal models from switched step experiments
    Identify(IdentifyArgs),
    /// Run one scenario: a builtin name or a TOML file
    Run(RunArgs),
    /// Run the whole artifact batch and write a summary
    ReproduceAll(ReproduceAllArgs),
}

#[derive(Args)]
struct CharacteristicArgs {
    /// Grid start duty
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    /// Grid end duty (inclusive)
    #[arg(long, default_value_t = 0.9)]
    to: f64,
    /// Number of grid points
    #[arg(long, default_value_t = 37)]
    steps: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Operating band: S1..S5
    #[arg(long, conflicts_with = "all")]
    subinterval: Option<String>,
    /// Fit all five bands, both channels, at the stock structures
    #[arg(long)]
    all: bool,
    /// Fit every zero count 0..=3 at 3 poles instead of one structure
    #[arg(long, requires = "subinterval")]
    scan_zeros: bool,
    /// Perturbed input: "duty" or "input"
    #[arg(long)]
    channel: Option<String>,
    /// Pole count for a single fit
    #[arg(long, default_value_t = 3)]
    poles: usize,
    /// Zero count for a single fit
    #[arg(long)]
    zeros: Option<usize>,
    /// Optimizer restart seed
    #[arg(long, default_value_t = 0xC0FFEE)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Builtin scenario name or path to a TOML file
    scenario: String,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ReproduceAllArgs {
    /// Worker threads for the scenario fan-out
    #[arg(long, default_value_t = 4)]
    jobs: usize,
    /// Optimizer restart seed
    #[arg(long, default_value_t = 0xC0FFEE)]
    seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also emit SVG charts
    #[arg(long)]
    svg: bool,
    /// Override a converter parameter, e.g. --set r_load=12.35 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn overrides(&self) -> Result<Vec<(String, f64)>, CliError> {
        self.set.iter().map(|s| parse_override(s)).collect()
    }

    fn ensure_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Config(format!("output directory {:?}: {e}", self.out)))
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    /// Bad arguments, files, or parameters: exit 2.
    #[error("{0}")]
    Config(String),
    /// The computation itself failed: exit 3.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Failed(_) => 3,
        }
    }
}

impl From<SysidError> for CliError {
    fn from(e: SysidError) -> Self {
        match e {
            SysidError::InvalidConfig(_) | SysidError::NotStrictlyProper { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::InvalidConfig(_) | ScenarioError::Circuit(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Characteristic(args) => cmd_characteristic(&args),
        Command::Identify(args) => cmd_identify(&args),
        Command::Run(args) => cmd_run(&args),
        Command::ReproduceAll(args) => cmd_reproduce_all(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}

fn base_params(common: &CommonArgs) -> Result<ConverterParams, CliError> {
    let mut params = ConverterParams::default();
    apply_overrides(&mut params, &common.overrides()?)?;
    params
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(params)
}

fn cmd_characteristic(args: &CharacteristicArgs) -> Result<(), CliError> {
    let params = base_params(&args.common)?;
    args.common.ensure_out()?;
    let csv_path = args.common.out.join("characteristic.csv");
    let (points, failures) = run_characteristic(&params, args.from, args.to, args.steps)?;
    write_characteristic_csv(&points, &csv_path)
        .map_err(|e| CliError::Failed(format!("{csv_path:?}: {e}")))?;
    if args.common.svg {
        characteristic_svg(&points, &args.common.out.join("characteristic.svg"))?;
    }
    println!(
        "characteristic: {} points ({} failed) -> {}",
        points.len(),
        failures,
        csv_path.display()
    );
    Ok(())
}

/// (duty, steady v_o or None) across the grid, plus the failure count.
/// Failed points are kept in the output so the grid stays rectangular.
fn run_characteristic(
    params: &ConverterParams,
    from: f64,
    to: f64,
    steps: usize,
) -> Result<(Vec<(f64, Option<f64>)>, usize), CliError> {
    if steps < 2 || !(from < to) {
        return Err(CliError::Config(format!(
            "need an increasing grid with at least 2 steps, got [{from}, {to}] x {steps}"
        )));
    }
    let duties: Vec<f64> = (0..steps)
        .map(|i| from + (to - from) * i as f64 / (steps - 1) as f64)
        .collect();
    let swept = circuit::operating_characteristic(params, &duties);
    let mut failures = 0;
    let points = swept
        .into_iter()
        .map(|p| {
            let v = match p.output {
                Ok(v) => Some(v),
                Err(e) => {
                    failures += 1;
                    log::warn!("characteristic point d = {:.4} failed: {e}", p.duty);
                    None
                }
            };
            (p.duty, v)
        })
        .collect();
    Ok((points, failures))
}

fn write_characteristic_csv(
    points: &[(f64, Option<f64>)],
    path: &Path,
) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "d,v_o")?;
    for (d, v) in points {
        match v {
            Some(v) => writeln!(f, "{d:.6},{v:.6}")?,
            None => writeln!(f, "{d:.6},")?,
        }
    }
    Ok(())
}

fn characteristic_svg(points: &[(f64, Option<f64>)], path: &Path) -> Result<(), CliError> {
    let ok: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|(d, v)| v.map(|v| (*d, v)))
        .collect();
    let x: Vec<f64> = ok.iter().map(|p| p.0).collect();
    let y: Vec<f64> = ok.iter().map(|p| p.1).collect();
    svg::line_chart(
        "steady-state output vs duty",
        "duty",
        "v_o (V)",
        &[svg::Series {
            label: "v_o",
            x: &x,
            y: &y,
        }],
        path,
    )
    .map_err(|e| CliError::Failed(format!("{path:?}: {e}")))
}

fn parse_subinterval(text: &str) -> Result<Subinterval, CliError> {
    text.parse::<Subinterval>()
        .map_err(|e| CliError::Config(e))
}

fn parse_channel(text: &str) -> Result<InputChannel, CliError> {
    match text {
        "duty" => Ok(InputChannel::Duty),
        "input" => Ok(InputChannel::InputVoltage),
        other => Err(CliError::Config(format!(
            "channel must be \"duty\" or \"input\", got \"{other}\""
        ))),
    }
}

/// Stock step sizes: 1 V on the source, 0.01 duty. Small enough to stay in
/// the linear neighborhood, large enough to clear the switching ripple.
fn step_amplitude(channel: InputChannel) -> f64 {
    match channel {
        InputChannel::InputVoltage => 1.0,
        InputChannel::Duty => 0.01,
    }
}

fn channel_name(channel: InputChannel) -> &'static str {
    match channel {
        InputChannel::InputVoltage => "input",
        InputChannel::Duty => "duty",
    }
}

fn make_experiment(
    params: &ConverterParams,
    sub: Subinterval,
    channel: InputChannel,
) -> Result<tlbc_core::Experiment, CliError> {
    let op = OperatingPoint::for_subinterval(params, sub).map_err(CliError::from)?;
    generate_experiment(
        params,
        &op,
        channel,
        step_amplitude(channel),
        &ExperimentOptions::default(),
    )
    .map_err(CliError::from)
}

fn cmd_identify(args: &IdentifyArgs) -> Result<(), CliError> {
    let params = base_params(&args.common)?;
    let options = FitOptions {
        seed: args.seed,
        ..FitOptions::default()
    };

    let text = if args.all {
        identify_all(&params, &options)?
    } else {
        let sub = parse_subinterval(args.subinterval.as_deref().ok_or_else(|| {
            CliError::Config("pass --subinterval S1..S5 or --all".into())
        })?)?;
        if args.scan_zeros {
            identify_scan(&params, sub, &options)?
        } else {
            let channel = parse_channel(args.channel.as_deref().ok_or_else(|| {
                CliError::Config("a single fit needs --channel duty|input".into())
            })?)?;
            let zeros = args.zeros.ok_or_else(|| {
                CliError::Config("a single fit needs --zeros (or use --scan-zeros)".into())
            })?;
            identify_single(&params, sub, channel, args.poles, zeros, &options)?
        }
    };

    print!("{text}");
    args.common.ensure_out()?;
    let path = args.common.out.join("identify.txt");
    fs::write(&path, &text).map_err(|e| CliError::Failed(format!("{path:?}: {e}")))?;
    Ok(())
}

fn identify_scan(
    params: &ConverterParams,
    sub: Subinterval,
    options: &FitOptions,
) -> Result<String, CliError> {
    let mut out = format!("subinterval {sub}\n");
    for channel in [InputChannel::Duty, InputChannel::InputVoltage] {
        let exp = make_experiment(params, sub, channel)?;
        let entries = structure_scan(&exp, 3, 3, options);
        out.push_str(&report::scan_table(channel_name(channel), &entries));
    }
    Ok(out)
}

fn identify_single(
    params: &ConverterParams,
    sub: Subinterval,
    channel: InputChannel,
    poles: usize,
    zeros: usize,
    options: &FitOptions,
) -> Result<String, CliError> {
    let exp = make_experiment(params, sub, channel)?;
    let fit = fit_tf(&exp, poles, zeros, options).map_err(CliError::from)?;
    Ok(format!(
        "subinterval {sub}, channel {}, {poles} poles {zeros} zeros\n\
         fit {:.2}% in {} iterations\n{}\n",
        channel_name(channel),
        fit.fit_percent,
        fit.iterations,
        fit.tf
    ))
}

/// The stock catalog structures: 3 poles with 1 zero on the duty channel,
/// 3 poles without zeros on the source channel.
fn identify_all(params: &ConverterParams, options: &FitOptions) -> Result<String, CliError> {
    let mut out = String::new();
    for sub in Subinterval::ALL {
        for (channel, zeros) in [(InputChannel::InputVoltage, 0), (InputChannel::Duty, 1)] {
            let exp = make_experiment(params, sub, channel)?;
            let fit = fit_tf(&exp, 3, zeros, options).map_err(CliError::from)?;
            out.push_str(&format!(
                "{sub} {:<5}  fit {:>6.2}%  {}\n",
                channel_name(channel),
                fit.fit_percent,
                fit.tf
            ));
        }
    }
    Ok(out)
}

fn load_scenario(reference: &str, overrides: &[(String, f64)]) -> Result<Scenario, CliError> {
    let path = Path::new(reference);
    if reference.ends_with(".toml") || path.exists() {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{reference}: {e}")))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("scenario");
        return ScenarioFile::parse(&text)?.into_scenario(stem, overrides);
    }
    match builtin(reference) {
        Some(mut scenario) => {
            apply_overrides(&mut scenario.params, overrides)?;
            scenario
                .params
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(scenario)
        }
        None => Err(CliError::Config(format!(
            "unknown scenario \"{reference}\"; builtins: {}",
            BUILTIN_NAMES.join(", ")
        ))),
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let scenario = load_scenario(&args.scenario, &args.common.overrides()?)?;
    args.common.ensure_out()?;
    let report = execute_scenario(&scenario, &args.common.out, args.common.svg)?;
    print!("{report}");
    Ok(())
}

/// Runs one scenario and writes its CSV, metrics file, and optional chart.
/// Divergence is a reported outcome, not a failure.
fn execute_scenario(scenario: &Scenario, out: &Path, with_svg: bool) -> Result<String, CliError> {
    let ts = scenario.run().map_err(CliError::from)?;
    let csv_path = out.join(format!("{}.csv", scenario.name));
    let file = fs::File::create(&csv_path)
        .map_err(|e| CliError::Failed(format!("{csv_path:?}: {e}")))?;
    ts.write_csv(std::io::BufWriter::new(file))
        .map_err(|e| CliError::Failed(format!("{csv_path:?}: {e}")))?;

    let report = report::metrics_report(scenario, &ts);
    let metrics_path = out.join(format!("{}_metrics.txt", scenario.name));
    fs::write(&metrics_path, &report)
        .map_err(|e| CliError::Failed(format!("{metrics_path:?}: {e}")))?;

    if with_svg {
        let svg_path = out.join(format!("{}.svg", scenario.name));
        let mut series = vec![svg::Series {
            label: "v_o",
            x: &ts.t,
            y: &ts.v_o,
        }];
        if !matches!(scenario.controller, ControllerSpec::OpenLoop { .. }) {
            series.push(svg::Series {
                label: "v_ref",
                x: &ts.t,
                y: &ts.v_ref,
            });
        }
        svg::line_chart(&scenario.name, "t (s)", "V", &series, &svg_path)
            .map_err(|e| CliError::Failed(format!("{svg_path:?}: {e}")))?;
    }
    Ok(report)
}

/// One reproduce-all job outcome, in job-list order.
struct JobResult {
    index: usize,
    name: String,
    wall_s: f64,
    /// Ok carries the summary note; Err the failure text.
    outcome: Result<String, String>,
}

fn cmd_reproduce_all(args: &ReproduceAllArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let params = base_params(&args.common)?;
    args.common.ensure_out()?;
    let out = args.common.out.clone();
    let with_svg = args.common.svg;
    let options = FitOptions {
        seed: args.seed,
        ..FitOptions::default()
    };

    type Job<'a> = Box<dyn FnOnce() -> Result<String, String> + Send + 'a>;
    let mut jobs: Vec<(String, Job)> = Vec::new();

    {
        let params = params;
        let out = out.clone();
        jobs.push((
            "characteristic".into(),
            Box::new(move || {
                let (points, failures) = run_characteristic(&params, 0.0, 0.9, 37)
                    .map_err(|e| e.to_string())?;
                write_characteristic_csv(&points, &out.join("characteristic.csv"))
                    .map_err(|e| e.to_string())?;
                if with_svg {
                    characteristic_svg(&points, &out.join("characteristic.svg"))
                        .map_err(|e| e.to_string())?;
                }
                Ok(format!("{} grid points, {} failed", points.len(), failures))
            }),
        ));
    }
    {
        let params = params;
        let out = out.clone();
        let options = options.clone();
        jobs.push((
            "identify_all".into(),
            Box::new(move || {
                let text = identify_all(&params, &options).map_err(|e| e.to_string())?;
                fs::write(out.join("models.txt"), &text).map_err(|e| e.to_string())?;
                Ok("ten models fitted -> models.txt".into())
            }),
        ));
    }
    for name in BUILTIN_NAMES {
        let mut scenario = builtin(name).expect("builtin names are exhaustive");
        scenario.params = params;
        let out = out.clone();
        jobs.push((
            name.to_string(),
            Box::new(move || {
                execute_scenario(&scenario, &out, with_svg)
                    .map(|report| summarize_run(&report))
                    .map_err(|e| e.to_string())
            }),
        ));
    }

    let results = run_jobs(jobs, args.jobs.max(1));

    let mut rows = Vec::new();
    let mut failed = 0;
    for r in &results {
        let (status, note) = match &r.outcome {
            Ok(note) => ("ok", note.clone()),
            Err(e) => {
                failed += 1;
                ("error", e.clone())
            }
        };
        rows.push((r.name.clone(), status.to_string(), r.wall_s, note));
    }
    let mut summary = report::summary_table(&rows);

    // Catalog models with corrected coefficients are worth a visible flag:
    // downstream users comparing against other transcriptions will see a
    // tenfold difference in one constant term.
    for models in tlbc_core::lti::subinterval_models::<f64>() {
        for tf in [&models.f_i, &models.f_d] {
            if tf.corrected {
                summary.push_str(&format!(
                    "note: catalog {} {} model uses a corrected denominator constant \
                     (9.261e11); the commonly transcribed 9.261e12 fails dc-gain and \
                     pole-frequency cross-checks.\n",
                    models.subinterval,
                    channel_name(tf.input.expect("catalog models carry a channel")),
                ));
            }
        }
    }
    summary.push_str(&format!(
        "total wall time {:.1} s\n",
        started.elapsed().as_secs_f64()
    ));

    let summary_path = out.join("summary.txt");
    fs::write(&summary_path, &summary)
        .map_err(|e| CliError::Failed(format!("{summary_path:?}: {e}")))?;
    print!("{summary}");

    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} jobs failed; see summary above",
            results.len()
        )));
    }
    Ok(())
}

/// Distills a scenario's metrics report to one summary line.
fn summarize_run(report: &str) -> String {
    let diverged = report.contains("DIVERGED");
    let events = report.matches("event t =").count();
    let unsettled = report.matches("NOT SETTLED").count();
    let mut note = format!("{events} events, {} settled", events - unsettled);
    if diverged {
        note.push_str(", diverged (see metrics)");
    }
    note
}

/// Runs jobs on a bounded worker pool; results come back in job order so
/// the summary is deterministic regardless of scheduling.
fn run_jobs(jobs: Vec<(String, Box<dyn FnOnce() -> Result<String, String> + Send + '_>)>, workers: usize) -> Vec<JobResult> {
    let queue = Mutex::new(
        jobs.into_iter()
            .enumerate()
            .collect::<std::collections::VecDeque<_>>(),
    );
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let Some((index, (name, job))) = queue.lock().unwrap().pop_front() else {
                    break;
                };
                log::info!("reproduce-all: running {name}");
                let t = Instant::now();
                let outcome = job();
                results.lock().unwrap().push(JobResult {
                    index,
                    name,
                    wall_s: t.elapsed().as_secs_f64(),
                    outcome,
                });
            });
        }
    });
    let mut results = results.into_inner().unwrap();
    results.sort_by_key(|r| r.index);
    results
}
