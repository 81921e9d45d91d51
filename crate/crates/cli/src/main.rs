use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use riseg_core::action::find_action;
use riseg_core::io;
use riseg_core::metrics::format_report;
use riseg_core::runner::{
    evaluate_dirs, run_episode, segment_episode, simulate_episode, EpisodeConfig, FlowSource,
    Settings,
};
use riseg_core::simulator::Scene;

/// Interactive segmentation of unknown objects by pushing and watching them move.
#[derive(Parser)]
#[command(name = "riseg", version)]
struct Cli {
    #[command(flatten)]
    settings: SettingsArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SettingsArgs {
    /// key = value settings file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one setting; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a push episode to disk without segmenting it.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment every frame pair of a recorded episode.
    Segment {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = FlowArg::Gt)]
        flow: FlowArg,
        /// Gaussian flow noise (px) added before segmenting.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Print the next push for a mask and depth frame, or `none`.
    Act {
        /// 16-bit PGM label mask.
        #[arg(long)]
        mask: PathBuf,
        /// PFM depth frame.
        #[arg(long)]
        frame: PathBuf,
        /// Intrinsics file; defaults to intrinsics.txt next to the frame.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
    },
    /// Run the full push, observe and segment loop and print the report.
    Run {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        interactions: Option<usize>,
    },
    /// Score mask_%04d.pgm files against gtmask_%04d.pgm files.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowArg {
    External,
    Gt,
}

impl SettingsArgs {
    fn load(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got {kv:?}");
            };
            s.set(k.trim(), v.trim())?;
        }
        s.validate()?;
        Ok(s)
    }
}

fn load_scene(path: &Path) -> Result<Scene> {
    Scene::load(path).with_context(|| format!("loading scene {}", path.display()))
}

fn scene_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut settings = cli.settings.load()?;
    match cli.command {
        Command::Simulate { scene, out, seed } => {
            if let Some(seed) = seed {
                settings.seed = seed;
            }
            let frames = simulate_episode(&load_scene(&scene)?, &settings, &out)?;
            println!("{frames} frames written to {}", out.display());
        }
        Command::Segment {
            episode,
            out,
            flow,
            noise,
        } => {
            if let Some(noise) = noise {
                settings.flow_noise = noise;
                settings.validate()?;
            }
            let source = match flow {
                FlowArg::External => FlowSource::External,
                FlowArg::Gt => FlowSource::GroundTruth,
            };
            let mask = segment_episode(&episode, &out, source, &settings)?;
            println!(
                "{} objects, {} px labeled",
                mask.ids().len(),
                mask.labeled_count()
            );
        }
        Command::Act {
            mask,
            frame,
            intrinsics,
        } => {
            let l = io::read_pgm16(&mask)?;
            let depth = io::read_pfm(&frame)?;
            let beside = frame.with_file_name("intrinsics.txt");
            let k = match intrinsics {
                Some(path) => io::read_intrinsics(&path)?,
                None if beside.exists() => io::read_intrinsics(&beside)?,
                None => settings.intrinsics,
            };
            match find_action(&l, &depth, &k, &settings.action)? {
                Some(a) => println!("{}", a.to_record()),
                None => println!("none"),
            }
        }
        Command::Run {
            scene,
            out,
            seed,
            interactions,
        } => {
            if let Some(seed) = seed {
                settings.seed = seed;
            }
            if let Some(n) = interactions {
                settings.max_interactions = n;
                settings.validate()?;
            }
            let mut cfg = EpisodeConfig::new(load_scene(&scene)?, settings);
            cfg.scene_name = scene_name(&scene);
            cfg.out_dir = Some(out.clone());
            let result = run_episode(&cfg)?;
            print!("{}", format_report(&result.report));
        }
        Command::Eval { pred, gt } => {
            let rows = evaluate_dirs(&pred, &gt)?;
            if rows.is_empty() {
                bail!("no mask_%04d.pgm / gtmask_%04d.pgm pairs found");
            }
            let report = format_report(&rows);
            fs::write(pred.join("eval.txt"), &report)?;
            print!("{report}");
        }
    }
    Ok(())
}
