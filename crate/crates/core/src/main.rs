use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use nearmiss::campaign::{self, Strategy, StrategyConfig};
use nearmiss::clipper::{self, ClippedScenario};
use nearmiss::forecaster::{self, ForecastConfig, PerturbationConfig, ProximityThresholds};
use nearmiss::library;
use nearmiss::mutator::{self, MutationOp};
use nearmiss::scenario::SteeringMode;
use nearmiss::{Error, Outcome, Result, Scenario, Trace};

#[derive(Parser, Debug)]
#[command(name = "nearmiss", version, about = "Near-miss guided scenario fuzzing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file or built-in scenario and record its trace.
    Run {
        /// Scenario file or built-in name such as crossing-ahead/0.
        scenario: String,
        /// Trace CSV path; defaults to <out-dir>/<scenario>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Rank risky points of a failure-free trace.
    Forecast {
        trace: PathBuf,
        #[command(flatten)]
        forecast: ForecastArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cut a runnable clip around a frame of a recorded run.
    Clip {
        scenario: String,
        trace: PathBuf,
        /// Center frame of the clip.
        #[arg(long, conflicts_with = "rank", required_unless_present = "rank")]
        frame: Option<usize>,
        /// Use the frame of the risky point with this rank instead.
        #[arg(long)]
        rank: Option<usize>,
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        forecast: ForecastArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Mutate a clip and run its children.
    Fuzz {
        clip: PathBuf,
        #[arg(long, default_value_t = 10)]
        children: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Add steering perturbations to the scripted steering instead of replacing it.
        #[arg(long)]
        steering_offset: bool,
    },
    /// Run one or more strategies over a seed suite.
    Campaign {
        /// Directory of scenario files, a single scenario file, or "builtin".
        suite: String,
        /// Comma-separated: foresee, random, exhaustive, proximity.
        #[arg(long, default_value = "foresee", value_delimiter = ',')]
        strategy: Vec<String>,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, default_value_t = 4)]
        n_rp: usize,
        #[arg(long, default_value_t = 10)]
        children: usize,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        forecast: ForecastArgs,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "campaign")]
        out_dir: PathBuf,
        /// x-axis of curve.svg: sim (simulated seconds) or wall (wall clock).
        #[arg(long, default_value = "sim")]
        time_axis: String,
        /// Add steering perturbations to the scripted steering instead of replacing it.
        #[arg(long)]
        steering_offset: bool,
    },
    /// Built-in scenario templates.
    Library {
        #[command(subcommand)]
        action: LibraryAction,
    },
    /// Draw cumulative-failure curves of saved campaign reports.
    Render {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "curve.svg")]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum LibraryAction {
    List,
    /// Write built-in scenarios (a name, a family, or "all") as files.
    Emit {
        #[arg(default_value = "all")]
        name: String,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct WindowArgs {
    /// Seconds before the risky point.
    #[arg(long = "o-b", default_value_t = 5.0)]
    o_b: f64,
    /// Seconds after the risky point.
    #[arg(long = "o-a", default_value_t = 5.0)]
    o_a: f64,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    #[arg(long, default_value_t = 10.0)]
    th_vehicle: f64,
    #[arg(long, default_value_t = 50.0)]
    th_pedestrian: f64,
    #[arg(long, default_value_t = 2.0)]
    critical_distance: f64,
    #[arg(long, default_value_t = 20)]
    n_perturbations: usize,
    #[arg(long, default_value_t = 0.5)]
    speed_error: f64,
    #[arg(long, default_value_t = 0.02)]
    yaw_rate_error: f64,
}

impl ForecastArgs {
    fn config(&self, seed: u64) -> Result<ForecastConfig> {
        for (name, v) in [("--th-vehicle", self.th_vehicle), ("--th-pedestrian", self.th_pedestrian)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        let cfg = ForecastConfig {
            thresholds: ProximityThresholds {
                vehicle: self.th_vehicle,
                pedestrian: self.th_pedestrian,
            },
            perturbation: PerturbationConfig {
                n_perturbations: self.n_perturbations,
                speed_error_bound: self.speed_error,
                yaw_rate_error_bound: self.yaw_rate_error,
                critical_distance: self.critical_distance,
                seed,
                ..PerturbationConfig::default()
            },
        };
        cfg.perturbation.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    outcome: Outcome,
    frames: usize,
    duration: f64,
    trace: &'a Path,
}

#[derive(Serialize)]
struct ChildResult<'a> {
    id: &'a str,
    op: &'a MutationOp,
    outcome: Outcome,
    sim_seconds: f64,
}

fn main() -> ExitCode {
    // Die quietly when stdout is a closed pipe (`nearmiss library list | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEARMISS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("Usage", e.to_string().trim_end().to_string());
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(e.kind(), e.to_string());
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

fn report_error(kind: &str, message: String) {
    let record = ErrorRecord { error: kind, message };
    eprintln!("{}", serde_json::to_string(&record).unwrap_or_default());
}

/// `--steering-offset` switches every NPC to offset mode; otherwise the
/// scenario's own modes are kept.
fn steering(s: Scenario, offset: bool) -> Scenario {
    if offset {
        s.with_steering_mode(SteeringMode::Offset)
    } else {
        s
    }
}

/// File-system-safe form of a scenario id.
fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.@".contains(c) { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize + ?Sized>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut json = serde_json::to_string_pretty(value)?;
    json.push('\n');
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, json)?;
        }
        None => print!("{json}"),
    }
    Ok(())
}

/// A scenario file path, or else a built-in name.
fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        Scenario::load(path)
    } else {
        library::lookup(arg)
    }
}

fn load_suite(arg: &str) -> Result<Vec<Scenario>> {
    if arg == "builtin" {
        return library::planted_suite();
    }
    let path = Path::new(arg);
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "json"));
        files.sort();
        if files.is_empty() {
            return Err(Error::InvalidConfig(format!("no scenario files in {arg}")));
        }
        files.iter().map(Scenario::load).collect()
    } else {
        Ok(vec![load_scenario(arg)?])
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { scenario, out, out_dir } => {
            let scenario = load_scenario(&scenario)?;
            let trace = nearmiss::run(&scenario)?;
            let path = out.unwrap_or_else(|| out_dir.join(format!("{}.csv", file_stem(&scenario.id))));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            trace.save(&path)?;
            write_json(
                &RunSummary {
                    scenario: &scenario.id,
                    outcome: trace.outcome,
                    frames: trace.frames.len(),
                    duration: trace.duration(),
                    trace: &path,
                },
                None,
            )
        }
        Command::Forecast { trace, forecast, seed, out } => {
            let cfg = forecast.config(seed)?;
            let trace = Trace::load(trace)?;
            let fc = forecaster::forecast(&trace, &cfg)?;
            write_json(&fc.risky_points, out.as_deref())
        }
        Command::Clip {
            scenario,
            trace,
            frame,
            rank,
            window,
            forecast,
            seed,
            out,
            out_dir,
        } => {
            let cfg = forecast.config(seed)?;
            let scenario = load_scenario(&scenario)?;
            let trace = Trace::load(trace)?;
            let frame = match (frame, rank) {
                (Some(f), _) => f,
                (None, Some(k)) => {
                    let fc = forecaster::forecast(&trace, &cfg)?;
                    fc.risky_points
                        .get(k)
                        .map(|rp| rp.frame)
                        .ok_or_else(|| Error::InvalidConfig(format!("no risky point with rank {k}")))?
                }
                (None, None) => unreachable!("clap requires --frame or --rank"),
            };
            let clipped = clipper::clip(&scenario, &trace, frame, window.o_b, window.o_a)?;
            let path = out.unwrap_or_else(|| out_dir.join(format!("{}.json", file_stem(&clipped.scenario.id))));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            clipped.scenario.save(&path)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::Fuzz {
            clip,
            children,
            seed,
            jobs,
            out_dir,
            steering_offset,
        } => {
            let pool = campaign::thread_pool(jobs)?;
            let clipped = ClippedScenario::from_scenario(steering(Scenario::load(clip)?, steering_offset))?;
            let batch = mutator::generate_children(&clipped, children, seed)?;
            let traces: Vec<Result<Trace>> =
                pool.install(|| batch.children.par_iter().map(|c| nearmiss::run(&c.scenario)).collect());
            let children_dir = out_dir.join("children");
            fs::create_dir_all(&children_dir)?;
            let mut results = Vec::with_capacity(batch.children.len());
            for (child, trace) in batch.children.iter().zip(traces) {
                let trace = trace?;
                child
                    .scenario
                    .save(children_dir.join(format!("{}.json", file_stem(&child.scenario.id))))?;
                results.push(ChildResult {
                    id: &child.scenario.id,
                    op: &child.op,
                    outcome: trace.outcome,
                    sim_seconds: trace.duration(),
                });
            }
            write_json(&results, Some(&out_dir.join("outcomes.json")))?;
            let failures = results.iter().filter(|r| r.outcome.is_failure()).count();
            println!("{} children, {failures} collisions", results.len());
            Ok(())
        }
        Command::Campaign {
            suite,
            strategy,
            window,
            n_rp,
            children,
            repetitions,
            seed,
            forecast,
            jobs,
            out_dir,
            time_axis,
            steering_offset,
        } => {
            let axis: campaign::TimeAxis = time_axis.parse()?;
            let strategies = strategy
                .iter()
                .map(|s| s.parse::<Strategy>())
                .collect::<Result<Vec<_>>>()?;
            let fc = forecast.config(0)?;
            let configs: Vec<StrategyConfig> = strategies
                .iter()
                .map(|&strategy| StrategyConfig {
                    strategy,
                    o_b: window.o_b,
                    o_a: window.o_a,
                    n_rp,
                    c: children,
                    repetitions,
                    seed,
                    forecast: fc,
                })
                .collect();
            for c in &configs {
                c.validate()?;
            }
            let scenarios: Vec<Scenario> = load_suite(&suite)?
                .into_iter()
                .map(|s| steering(s, steering_offset))
                .collect();
            let pool = campaign::thread_pool(jobs)?;
            let reports = pool.install(|| {
                let seeds = campaign::record_seeds(&scenarios);
                configs
                    .iter()
                    .map(|c| campaign::run_campaign_on(c, &seeds))
                    .collect::<Result<Vec<_>>>()
            })?;
            for r in &reports {
                campaign::write_report_on(r, &out_dir.join(r.config.strategy.name()), axis)?;
                let a = &r.aggregate;
                println!(
                    "{:<10} risky_points={:.2} executions={:.2} failures={:.2} rate={:.3} failures_per_s={:.5} auc={:.1}",
                    r.config.strategy.name(),
                    a.risky_points,
                    a.executions,
                    a.failures,
                    a.failure_rate,
                    a.failures_per_second(),
                    r.auc
                );
            }
            let refs: Vec<_> = reports.iter().collect();
            fs::write(out_dir.join("curve.svg"), campaign::render_svg_on(&refs, axis))?;
            Ok(())
        }
        Command::Library { action } => match action {
            LibraryAction::List => {
                for family in library::Family::ALL {
                    println!("{:<20} {}", family.name(), family.description());
                }
                for name in library::names() {
                    println!("{name}");
                }
                Ok(())
            }
            LibraryAction::Emit { name, out_dir } => {
                let scenarios = if name == "all" {
                    library::planted_suite()?
                } else if let Ok(family) = name.parse::<library::Family>() {
                    let t = library::ScenarioTemplate::new(family);
                    (0..t.variant_count())
                        .map(|v| library::instantiate(&t, v))
                        .collect::<Result<_>>()?
                } else {
                    vec![library::lookup(&name)?]
                };
                fs::create_dir_all(&out_dir)?;
                for s in &scenarios {
                    let path = out_dir.join(format!("{}.json", file_stem(&s.id)));
                    s.save(&path)?;
                    println!("{}", path.display());
                }
                Ok(())
            }
        },
        Command::Render { reports, out } => {
            let reports = reports
                .iter()
                .map(|p| -> Result<campaign::CampaignReport> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = reports.iter().collect();
            fs::write(out, campaign::render_svg(&refs))?;
            Ok(())
        }
    }
}
