mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use animaxkit::camera::CANONICAL_AZIMUTHS_DEG;
use animaxkit::pipeline::ReconstructSettings;
use animaxkit::posemap::DEFAULT_COLOR_THRESHOLD;
use animaxkit::reconstruct::DEFAULT_LAMBDA_BONE;
use animaxkit::{Error, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use report::RunReport;

#[derive(Debug, Parser)]
#[command(name = "animaxkit", version, about = "Pose-map rendering, reconstruction and toy joint video-pose diffusion")]
struct Cli {
    /// Seed for every random choice a command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (defaults to the available cores).
    #[arg(long, global = true, env = "ANIMAXKIT_THREADS")]
    threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct RigArgs {
    /// Number of horizon views, taken from 0,90,180,270 (evenly spaced beyond 4).
    #[arg(long, default_value_t = 4)]
    views: usize,
    /// Explicit camera azimuths in degrees; overrides --views.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    azimuths: Option<Vec<f64>>,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 512)]
    resolution: u32,
}

impl RigArgs {
    pub fn azimuths(&self) -> Result<Vec<f64>> {
        if let Some(a) = &self.azimuths {
            if a.is_empty() || a.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("--azimuths", "need one or more finite angles"));
            }
            return Ok(a.clone());
        }
        match self.views {
            0 => Err(Error::invalid("--views", "must be >= 1")),
            n if n <= CANONICAL_AZIMUTHS_DEG.len() => Ok(CANONICAL_AZIMUTHS_DEG[..n].to_vec()),
            n => Ok((0..n).map(|i| 360.0 * i as f64 / n as f64).collect()),
        }
    }
}

#[derive(Debug, Args, Clone)]
pub struct SolveArgs {
    /// Weight of the bone-length term in triangulation.
    #[arg(long, default_value_t = DEFAULT_LAMBDA_BONE, allow_negative_numbers = true)]
    lambda_bone: f64,
    /// Maximum RGB distance for a pixel to count toward a joint color.
    #[arg(long, default_value_t = DEFAULT_COLOR_THRESHOLD, allow_negative_numbers = true)]
    color_threshold: f64,
    /// Weight every decoded joint equally regardless of marker occlusion.
    #[arg(long)]
    no_occlusion_weighting: bool,
}

impl SolveArgs {
    pub fn settings(&self) -> Result<ReconstructSettings> {
        if !(self.lambda_bone >= 0.0 && self.lambda_bone.is_finite()) {
            return Err(Error::invalid("--lambda-bone", format!("{} must be finite and >= 0", self.lambda_bone)));
        }
        if !(self.color_threshold > 0.0) {
            return Err(Error::invalid("--color-threshold", "must be positive"));
        }
        Ok(ReconstructSettings {
            lambda_bone: self.lambda_bone,
            color_threshold: self.color_threshold,
            occlusion_weighting: !self.no_occlusion_weighting,
        })
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render colored pose maps of a clip for each view.
    Render {
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        /// Camera JSON; without it a horizon rig is fitted to the clip.
        #[arg(long)]
        cameras: Option<PathBuf>,
        #[command(flatten)]
        rig: RigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Decode pose maps, triangulate and solve IK into a clip.
    Reconstruct {
        /// Directory with view{v}/frame{NNN}.png.
        #[arg(long)]
        posemaps: PathBuf,
        /// Defaults to cameras.json inside the pose-map directory.
        #[arg(long)]
        cameras: Option<PathBuf>,
        /// Defaults to palette.json inside the pose-map directory.
        #[arg(long)]
        palette: Option<PathBuf>,
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        out_clip: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[command(flatten)]
        solve: SolveArgs,
    },
    /// Render, decode, triangulate, solve IK and score against the input clip.
    Roundtrip {
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[command(flatten)]
        rig: RigArgs,
        #[command(flatten)]
        solve: SolveArgs,
        /// Skip rasterization and add Gaussian noise of this many pixels to exact projections.
        #[arg(long, allow_negative_numbers = true)]
        noise_px: Option<f64>,
        #[arg(long)]
        out_clip: Option<PathBuf>,
    },
    /// Train the toy denoiser on synthetic clips.
    ToyTrain {
        /// Toy setup JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of synthetic training clips.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        train_steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Probability of dropping the rgb condition during training.
        #[arg(long, default_value_t = 0.2)]
        cond_drop: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sample pose latents from a trained toy model for one training condition.
    ToySample {
        /// Directory written by toy-train.
        #[arg(long)]
        model_dir: PathBuf,
        /// Training clip whose conditions are used.
        #[arg(long, default_value_t = 0)]
        clip_index: usize,
        /// Motion label; defaults to the clip's own.
        #[arg(long)]
        label: Option<usize>,
        #[arg(long, default_value_t = 3.0)]
        guidance: f64,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Apply the frame-count and motion filters to a manifest.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = animaxkit::datakit::DEFAULT_MIN_FRAMES)]
        min_frames: usize,
        #[arg(long, default_value_t = animaxkit::datakit::DEFAULT_MIN_MOTION)]
        min_motion: f64,
        /// Write the accepted records as a new manifest.
        #[arg(long)]
        out_manifest: Option<PathBuf>,
    },
    /// Emit a horizon camera rig.
    Rig {
        #[command(flatten)]
        rig: RigArgs,
        /// Camera distance; defaults to framing a unit sphere.
        #[arg(long, conflicts_with_all = ["skeleton", "clip"])]
        distance: Option<f64>,
        /// Fit the distance to this skeleton's clip instead.
        #[arg(long, requires = "clip")]
        skeleton: Option<PathBuf>,
        #[arg(long, requires = "skeleton")]
        clip: Option<PathBuf>,
        #[arg(long)]
        out_cameras: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with a manifest.
    Synth {
        #[arg(long, default_value_t = 25)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        #[arg(long, default_value_t = 2)]
        min_joints: usize,
        #[arg(long, default_value_t = 20)]
        max_joints: usize,
        /// Also render pose maps for every clip.
        #[arg(long)]
        render: bool,
        #[command(flatten)]
        rig: RigArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Render { .. } => "render",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Roundtrip { .. } => "roundtrip",
            Command::ToyTrain { .. } => "toy-train",
            Command::ToySample { .. } => "toy-sample",
            Command::Filter { .. } => "filter",
            Command::Rig { .. } => "rig",
            Command::Synth { .. } => "synth",
        }
    }
}

fn run(cmd: Command, seed: u64, report: &mut RunReport) -> Result<()> {
    match cmd {
        Command::Render { skeleton, clip, cameras, rig, out_dir } => {
            commands::render(report, &skeleton, &clip, cameras.as_deref(), &rig, &out_dir, seed)
        }
        Command::Reconstruct { posemaps, cameras, palette, skeleton, out_clip, fps, solve } => {
            let cameras = cameras.unwrap_or_else(|| posemaps.join("cameras.json"));
            let palette = palette.unwrap_or_else(|| posemaps.join("palette.json"));
            commands::reconstruct(report, &posemaps, &cameras, &palette, &skeleton, &out_clip, fps, &solve.settings()?)
        }
        Command::Roundtrip { skeleton, clip, rig, solve, noise_px, out_clip } => commands::roundtrip(
            report,
            &skeleton,
            &clip,
            &rig,
            &solve.settings()?,
            noise_px,
            out_clip.as_deref(),
            seed,
        ),
        Command::ToyTrain { config, count, train_steps, batch, lr, cond_drop, out_dir } => {
            let overrides = commands::ToyOverrides { count, train_steps, batch, lr, cond_drop };
            commands::toy_train(report, config.as_deref(), &overrides, &out_dir, seed)
        }
        Command::ToySample { model_dir, clip_index, label, guidance, steps, out_dir } => {
            commands::toy_sample(report, &model_dir, clip_index, label, guidance, steps, &out_dir, seed)
        }
        Command::Filter { manifest, min_frames, min_motion, out_manifest } => {
            commands::filter(report, &manifest, min_frames, min_motion, out_manifest.as_deref())
        }
        Command::Rig { rig, distance, skeleton, clip, out_cameras } => {
            let fit = skeleton.zip(clip);
            commands::rig(report, &rig, distance, fit.as_ref().map(|(s, c)| (s.as_path(), c.as_path())), out_cameras.as_deref())
        }
        Command::Synth { count, frames, min_joints, max_joints, render, rig, out_dir } => {
            let params = animaxkit::datakit::SynthParams { frames, min_joints, max_joints, ..Default::default() };
            commands::synth(report, count, &params, render.then_some(&rig), &out_dir, seed)
        }
    }
}

/// Report for arguments the parser rejected, with the subcommand, seed and
/// report path recovered from the raw arguments where possible.
fn rejected(args: &[String], err: &clap::Error) -> (RunReport, Option<PathBuf>) {
    let cmd = Cli::command();
    let command = args
        .iter()
        .skip(1)
        .find_map(|a| cmd.get_subcommands().map(|s| s.get_name()).find(|n| n == a))
        .unwrap_or("unknown");
    let value = |flag: &str| {
        let prefix = format!("{flag}=");
        args.windows(2)
            .find(|w| w[0] == flag)
            .map(|w| w[1].clone())
            .or_else(|| args.iter().find_map(|a| a.strip_prefix(&prefix).map(str::to_string)))
    };
    let seed = value("--seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut report = RunReport::new(command, seed, 1);
    let message = err.to_string();
    let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
    report.fail(&Error::invalid("arguments", first.to_string()));
    (report, value("--out").map(PathBuf::from))
}

fn emit(report: &RunReport, out: Option<&std::path::Path>) -> ExitCode {
    let json = report.to_json();
    match out {
        Some(path) => {
            if let Err(e) = animaxkit::io::write_atomic(path, json.as_bytes()) {
                eprintln!("error: {e}");
                if report.exit_code == 0 {
                    return ExitCode::from(report::exit_code(e.class()) as u8);
                }
            }
        }
        None => print!("{json}"),
    }
    ExitCode::from(report.exit_code as u8)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let (report, out) = rejected(&args, &e);
            return emit(&report, out.as_deref());
        }
    };
    let threads = cli
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let mut report = RunReport::new(cli.command.name(), cli.seed, threads);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let result = match pool {
        Ok(()) => run(cli.command, cli.seed, &mut report),
        Err(e) => Err(Error::invalid("--threads", e.to_string())),
    };
    report.end_stage();
    if let Err(e) = &result {
        report.fail(e);
        eprintln!("error: {e}");
    }
    emit(&report, cli.out.as_deref())
}
