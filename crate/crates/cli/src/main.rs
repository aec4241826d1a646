use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evasion::eval::batch::reports_to_json;
use evasion::eval::io::{
    read_clouds, read_detections_csv, read_step_log_csv, write_clouds, write_detections_csv, write_results_jsonl,
    write_step_log_csv, write_summary_csv, StepRow,
};
use evasion::eval::{run_batch, simulate_with, BatchReport, Pipeline, Variant};
use evasion::lidar_percept::LidarTracker;
use evasion::simworld::{spawn_scenario, ScenarioConfig};
use evasion::{Error, Result, RobotState, Vec3};

#[derive(Parser)]
#[command(name = "evasion", version, about = "Threat-aware evasion simulator and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial.
    Run {
        #[command(flatten)]
        common: Common,
        /// Feed recorded 2D detections (CSV) instead of the synthetic detector.
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Also write the LiDAR scans and detections of the trial for replay.
        #[arg(long)]
        record: bool,
    },
    /// Run seeds `seed .. seed + trials` for one or more variants.
    Batch {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Run every variant.
        #[arg(long, conflicts_with_all = ["variant", "no_prediction", "no_reorient", "no_threat"])]
        all_variants: bool,
    },
    /// Push recorded point clouds through the LiDAR tracker and print the tracks.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Point-cloud replay file.
        #[arg(long)]
        clouds: PathBuf,
        /// Step log of the recorded run, used for the robot pose; without it
        /// the spawn pose is assumed throughout.
        #[arg(long)]
        steps: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// full, no_prediction, no_reorient, no_threat, raycast_baseline or lidar_only.
    #[arg(long)]
    variant: Option<Variant>,
    /// TOML scenario file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["variant", "no_reorient", "no_threat"])]
    no_prediction: bool,
    #[arg(long, conflicts_with_all = ["variant", "no_prediction", "no_threat"])]
    no_reorient: bool,
    #[arg(long, conflicts_with_all = ["variant", "no_prediction", "no_reorient"])]
    no_threat: bool,
    /// Override a configuration value, e.g. `--set threat.alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        for o in &self.overrides {
            cfg = cfg.with_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn variant(&self) -> Variant {
        if self.no_prediction {
            Variant::NoPrediction
        } else if self.no_reorient {
            Variant::NoReorient
        } else if self.no_threat {
            Variant::NoThreat
        } else {
            self.variant.unwrap_or(Variant::Full)
        }
    }

    fn out_dir(&self) -> Result<Option<&Path>> {
        if let Some(dir) = &self.out_dir {
            fs::create_dir_all(dir)?;
        }
        Ok(self.out_dir.as_deref())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn run(common: &Common, detections: Option<&Path>, record: bool) -> Result<()> {
    let cfg = common.config()?;
    let variant = common.variant();
    let mut pipeline = Pipeline::new(&cfg, variant);
    if let Some(path) = detections {
        pipeline = pipeline.with_external_detections(read_detections_csv(File::open(path)?)?);
    }
    if record {
        pipeline = pipeline.recording();
    }
    let result = simulate_with(&cfg, &mut pipeline, spawn_scenario(&cfg)?)?;
    match common.out_dir()? {
        Some(dir) => {
            write_results_jsonl(create(dir, "result.jsonl")?, std::slice::from_ref(&result))?;
            write_step_log_csv(create(dir, "steps.csv")?, &result.log)?;
            if record {
                write_clouds(create(dir, "clouds.bin")?, &pipeline.recorded_clouds)?;
                write_detections_csv(create(dir, "detections.csv")?, &pipeline.recorded_detections)?;
            }
        }
        None => write_results_jsonl(io::stdout().lock(), std::slice::from_ref(&result))?,
    }
    eprintln!(
        "seed {} {}: {} (d_min {:.3} m, quadrant {})",
        result.seed,
        variant,
        if result.success {
            "avoided"
        } else if result.collided {
            "collision"
        } else {
            "no recovery"
        },
        result.d_min,
        result.quadrant.as_str(),
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn batch(common: &Common, trials: usize, all: bool) -> Result<()> {
    if trials == 0 {
        return Err(Error::Config("--trials must be at least 1".into()));
    }
    let cfg = common.config()?;
    let variants = if all { Variant::ALL.to_vec() } else { vec![common.variant()] };
    let mut reports: Vec<BatchReport> = Vec::new();
    let mut all_results = Vec::new();
    for v in variants {
        let (report, results) = run_batch(&cfg, v, trials)?;
        eprintln!(
            "{:<17} ASR {:.3} [{:.3}, {:.3}]  d_min {}  TNL {}  E {}",
            v.as_str(),
            report.asr,
            report.asr_ci.0,
            report.asr_ci.1,
            fmt_opt(report.d_min.mean),
            fmt_opt(report.tnl.mean),
            fmt_opt(report.energy.mean),
        );
        reports.push(report);
        all_results.extend(results);
    }
    match common.out_dir()? {
        Some(dir) => {
            let mut w = create(dir, "results.jsonl")?;
            write_results_jsonl(&mut w, &all_results)?;
            w.flush()?;
            write_summary_csv(create(dir, "summary.csv")?, &reports)?;
            let mut w = create(dir, "report.json")?;
            writeln!(w, "{}", reports_to_json(&reports)?)?;
        }
        None => write_results_jsonl(io::stdout().lock(), &all_results)?,
    }
    Ok(())
}

/// Robot pose at time `t`, from the step row with the nearest timestamp.
fn pose_at(rows: &[StepRow], t: f64, fallback: RobotState) -> RobotState {
    let nearest = rows.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()));
    match nearest {
        Some(r) => {
            RobotState { velocity: Vec3::new(r.vx, r.vy, 0.0), ..RobotState::at(Vec3::new(r.px, r.py, r.pz), r.yaw) }
        }
        None => fallback,
    }
}

fn replay(common: &Common, clouds: &Path, steps: Option<&Path>) -> Result<()> {
    let cfg = common.config()?;
    let world = spawn_scenario(&cfg)?;
    let clouds = read_clouds(BufReader::new(File::open(clouds)?))?;
    let rows = match steps {
        Some(path) => read_step_log_csv(File::open(path)?)?,
        None => Vec::new(),
    };
    let mut tracker = LidarTracker::new(cfg.lidar_tracking.clone());
    let mut out: Box<dyn Write> = match common.out_dir()? {
        Some(dir) => Box::new(create(dir, "tracks.csv")?),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(out, "t,id,px,py,pz,vx,vy,vz,radius,confirmed,motion")?;
    for (k, cloud) in clouds.iter().enumerate() {
        let robot = pose_at(&rows, cloud.timestamp, world.robot);
        let tracks = tracker.process(cloud, &robot).map_err(|e| e.at_frame(k))?;
        for t in tracks {
            let (p, v) = (t.position(), t.velocity());
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:?}",
                cloud.timestamp, t.id, p.x, p.y, p.z, v.x, v.y, v.z, t.radius, t.confirmed, t.motion
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Run { common, detections, record } => run(common, detections.as_deref(), *record),
        Command::Batch { common, trials, all_variants } => batch(common, *trials, *all_variants),
        Command::Replay { common, clouds, steps } => replay(common, clouds, steps.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
