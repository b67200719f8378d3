//! `nfseg`: simulate recordings, run the segmentation engine, score and plot
//! the results.

mod plot;
mod raster;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nfseg::data::{load_recording, save_recording, simulate, Recording, SceneSpec};
use nfseg::eval::{evaluate, EvalReport};
use nfseg::pipeline::{run_recording, RunOutput};
use nfseg::Config;

#[derive(Parser)]
#[command(name = "nfseg", version, about = "Normal-flow motion segmentation and egomotion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene description into a recording with ground truth.
    Simulate {
        /// Scene description (TOML).
        scene: PathBuf,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Recording to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment every slice of a recording.
    Run {
        recording: PathBuf,
        /// Configuration file (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `pipeline.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Run outputs to write (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score run outputs against the recording's ground truth.
    Eval {
        /// Run outputs written by `run`.
        outputs: PathBuf,
        recording: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Report to write (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw object motion comparisons and, given a recording and its run
    /// outputs, per-frame segmentation overlays.
    Plot {
        report: PathBuf,
        /// Directory for the PNG files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "outputs")]
        recording: Option<PathBuf>,
        #[arg(long, requires = "recording")]
        outputs: Option<PathBuf>,
    },
    /// Summarize a recording.
    Inspect { recording: PathBuf },
}

fn read_recording(path: &Path) -> Result<Recording> {
    load_recording(path).with_context(|| format!("reading recording {}", path.display()))
}

fn read_outputs(path: &Path) -> Result<RunOutput> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunOutput::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn inspect(rec: &Recording) -> String {
    let k = &rec.intrinsics;
    let mut s = format!(
        "sensor: {}x{}  fx {} fy {} cx {} cy {}\n",
        rec.width, rec.height, k.fx, k.fy, k.cx, k.cy
    );
    s += &format!("slices: {}  events: {}\n", rec.slices.len(), rec.event_count());
    if let (Some(first), Some(last)) = (rec.slices.first(), rec.slices.last()) {
        s += &format!("time: {:.6} .. {:.6} s\n", first.t_start, last.t_end);
        let sizes: Vec<usize> = rec.slices.iter().map(|s| s.len()).collect();
        s += &format!(
            "events per slice: min {} max {}\n",
            sizes.iter().min().unwrap_or(&0),
            sizes.iter().max().unwrap_or(&0)
        );
    }
    s += &format!("labels: {}\n", if rec.has_labels() { "yes" } else { "no" });
    match &rec.poses {
        Some(p) => s += &format!("poses: camera + {} object(s)\n", p.objects.len()),
        None => s += "poses: none\n",
    }
    s
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scene, steps, seed, out } => {
            let text = fs::read_to_string(&scene).with_context(|| format!("reading {}", scene.display()))?;
            let spec = SceneSpec::from_toml(&text).with_context(|| format!("parsing {}", scene.display()))?;
            let rec = simulate(&spec, steps, seed)?;
            save_recording(&rec, &out).with_context(|| format!("writing {}", out.display()))?;
            info!("wrote {} slices, {} events", rec.slices.len(), rec.event_count());
        }
        Command::Run { recording, config, seed, out } => {
            let mut cfg = match &config {
                Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
                None => Config::default(),
            };
            if let Some(s) = seed {
                cfg.pipeline.seed = s;
            }
            let rec = read_recording(&recording)?;
            let run = run_recording(&rec, &cfg)?;
            let failed = run.steps.iter().filter(|s| s.error.is_some()).count();
            if failed > 0 {
                log::warn!("{failed} step(s) failed; see the error fields in the outputs");
            }
            write(&out, &run.to_json())?;
        }
        Command::Eval { outputs, recording, format, out } => {
            let run = read_outputs(&outputs)?;
            let rec = read_recording(&recording)?;
            let report = evaluate(&rec, &run)?;
            match format {
                Format::Text => print!("{}", report.to_text()),
                Format::Csv => print!("{}", report.to_csv()),
            }
            if let Some(p) = out {
                write(&p, &report.to_json())?;
            }
        }
        Command::Plot { report, out, recording, outputs } => {
            let text = fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let report = EvalReport::from_json(&text).with_context(|| format!("parsing {}", report.display()))?;
            if report.is_empty() {
                bail!("report has no frames; nothing to plot");
            }
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut written = plot::motion_charts(&report, &out)?;
            if let (Some(r), Some(o)) = (recording, outputs) {
                written += plot::overlays(&read_recording(&r)?, &read_outputs(&o)?, &out)?;
            }
            info!("wrote {written} image(s) to {}", out.display());
        }
        Command::Inspect { recording } => print!("{}", inspect(&read_recording(&recording)?)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
