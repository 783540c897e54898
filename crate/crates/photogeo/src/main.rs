use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use photogeo::app;
use photogeo::config::RunConfig;
use photogeo::error::{Error, EXIT_CONFIG};
use photogeo::exec::RayonExecutor;
use photogeo_core::reconstruction::{default_yaw_sweep, linspace};
use photogeo_core::{Lighting, Viewpoint};

#[derive(Parser)]
#[command(name = "photogeo", version, about = "Single-image shape refinement from pseudo samples")]
struct Cli {
    /// Worker threads; 0 picks one per core.
    #[arg(long, global = true, env = "PHOTOGEO_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a built-in ground-truth scene.
    Synth {
        /// hemisphere, bump2 or ridge.
        name: String,
        #[arg(default_value_t = 64)]
        width: usize,
        #[arg(default_value_t = 64)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the refinement pipeline.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a predicted depth map with ground truth; prints JSON.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = app::DEFAULT_FOV_DEG)]
        fov_deg: f64,
    },
    /// Render a snapshot from one viewpoint.
    Render {
        state: PathBuf,
        /// rx,ry,rz in degrees then tx,ty,tz.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        view: Option<Vec<f64>>,
        /// lx,ly,ks,kd; defaults to the stored lighting.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        light: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a yaw sweep of a snapshot.
    Rotate {
        state: PathBuf,
        #[arg(long, default_value_t = 20)]
        frames: usize,
        #[arg(long, allow_negative_numbers = true)]
        from_deg: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        to_deg: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a snapshot under a horizontal sweep of light directions.
    Relight {
        state: PathBuf,
        #[arg(long, default_value_t = 7)]
        frames: usize,
        #[arg(long, default_value_t = -0.9, allow_negative_numbers = true)]
        lx_min: f64,
        #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
        lx_max: f64,
        #[arg(long, allow_negative_numbers = true)]
        ly: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn executor(threads: Option<usize>) -> Result<RayonExecutor, Error> {
    RayonExecutor::new(threads.unwrap_or(0)).map_err(|e| Error::Config(format!("threads: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth { name, width, height, out } => {
            app::cmd_synth(&name, width, height, &out)?;
        }
        Command::Run { config, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out
                .or_else(|| cfg.output.clone())
                .ok_or_else(|| Error::Config("output: no output directory; set \"output\" or pass --out".into()))?;
            let exec = executor(cli.threads)?;
            let summary = app::cmd_run(&cfg, &out, &exec)?;
            for s in &summary.stages {
                eprintln!("stage {}: side {:.4}e-2 mad {:.2} psnr {:.2}", s.stage, s.side, s.mad, s.psnr);
            }
        }
        Command::Eval { pred, gt, mask, fov_deg } => {
            let r = app::cmd_eval(&pred, &gt, mask.as_deref(), fov_deg)?;
            println!("{}", serde_json::to_string(&r).expect("plain struct"));
        }
        Command::Render { state, view, light, out } => {
            if view.as_ref().is_some_and(|v| v.len() != 6) {
                return Err(Error::Config("--view: expected rx,ry,rz,tx,ty,tz".into()));
            }
            if light.as_ref().is_some_and(|l| l.len() != 4) {
                return Err(Error::Config("--light: expected lx,ly,ks,kd".into()));
            }
            let v = view.map_or(Viewpoint::IDENTITY, |v| {
                Viewpoint::from_array([v[0].to_radians(), v[1].to_radians(), v[2].to_radians(), v[3], v[4], v[5]])
            });
            let l = light.map(|l| Lighting::new(l[0], l[1], l[2], l[3]));
            let out = out.unwrap_or_else(|| state.join("render"));
            app::cmd_render(&state, &v, l, &out)?;
        }
        Command::Rotate { state, frames, from_deg, to_deg, out } => {
            let yaws = match (from_deg, to_deg) {
                (None, None) => default_yaw_sweep(frames),
                (a, b) => linspace(a.unwrap_or(-20.0).to_radians(), b.unwrap_or(20.0).to_radians(), frames),
            };
            let out = out.unwrap_or_else(|| state.join("rotate"));
            app::cmd_rotate(&state, yaws, &out)?;
        }
        Command::Relight { state, frames, lx_min, lx_max, ly, out } => {
            let out = out.unwrap_or_else(|| state.join("relight"));
            app::cmd_relight(&state, linspace(lx_min, lx_max, frames), ly, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(EXIT_CONFIG as u8))
        }
    }
}
