use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stein_scanmatch::fusion::{NoiseMode, PropagationMode};
use stein_scanmatch::stein::SolverMode;
use stein_scanmatch::Error;

mod commands;
mod config;
mod output;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "stein-scanmatch", version, about = "Particle-based scan matching, fusion and consistency benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    mode: Option<SolverMode>,
    #[arg(long, global = true)]
    particles: Option<usize>,
    #[arg(long, global = true)]
    noise: Option<NoiseMode>,
    #[arg(long, global = true)]
    propagation: Option<PropagationMode>,
    /// Worker threads; 1 runs serially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align a source cloud to a target cloud.
    Align {
        source: Option<PathBuf>,
        target: Option<PathBuf>,
    },
    /// Run LiDAR-inertial fusion over a scan stream.
    Fuse {
        /// Directory of timestamped scans.
        scans: Option<PathBuf>,
        #[arg(long)]
        imu: Option<PathBuf>,
    },
    /// Score the estimated covariance against a Monte-Carlo reference.
    Oracle,
    /// Sweep particle counts, modes and seeds.
    Ablation,
    /// Write a synthetic cloud pair and its ground truth.
    GenScene,
}

impl Cli {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.solver.mode = m;
        }
        if let Some(k) = self.particles {
            cfg.solver.particle_count = k;
        }
        if let Some(n) = self.noise {
            cfg.filter.noise = n;
        }
        if let Some(p) = self.propagation {
            cfg.filter.propagation = p;
        }
        if let Some(o) = &self.out {
            cfg.io.out = Some(o.clone());
        }
        match &self.command {
            Command::Align { source, target } => {
                if source.is_some() {
                    cfg.io.source = source.clone();
                }
                if target.is_some() {
                    cfg.io.target = target.clone();
                }
            }
            Command::Fuse { scans, imu } => {
                if scans.is_some() {
                    cfg.io.scans = scans.clone();
                }
                if imu.is_some() {
                    cfg.io.imu = imu.clone();
                }
            }
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::InvalidConfig(_) | Error::EmptyCloud => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STEIN_SCANMATCH_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = cli.resolve().and_then(|cfg| match &cli.command {
        Command::Align { .. } => commands::align(&cfg),
        Command::Fuse { .. } => commands::fuse(&cfg),
        Command::Oracle => commands::oracle(&cfg),
        Command::Ablation => commands::ablation(&cfg),
        Command::GenScene => commands::gen_scene(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
