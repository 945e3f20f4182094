//! `crr` argument parsing and dispatch.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crr_core::synthesis::{foreground_mask, Synthesizer};
use crr_model::backbone::prepare_geometry;
use crr_model::CrrConfig;

use crate::config::resolve;
use crate::error::{file_err, Error, Result};
use crate::imageio::{is_image_file, load_image, save_image, save_mask};
use crate::pipeline;
use crate::toytree::{write_toy_tree, ToyCounts};

#[derive(Debug, Parser)]
#[command(name = "crr", version, about = "Collaborative reconstruction and repair anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config file; defaults to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset used when no file is given (toy, reference).
    #[arg(long, default_value = "toy")]
    preset: String,
    /// Override a config value, e.g. `--set trainer.stage1.iterations=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<CrrConfig> {
        resolve(self.config.as_deref(), &self.preset, &self.sets)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write pseudo-anomalous images and masks synthesised from normal images.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// A normal image or a directory of them.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Samples per input image.
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Class name used to pick the foreground method.
        #[arg(long, default_value = "")]
        class: String,
    },
    /// Train the repair network; creates the run directory.
    TrainStage1 {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        run: PathBuf,
    },
    /// Train the segmentation head from a run's stage-1 checkpoint.
    TrainStage2 {
        #[arg(long)]
        run: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Score the test split; writes score sidecars and index.json.
    Infer {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write input/heat/overlay panels.
        #[arg(long)]
        heatmaps: bool,
    },
    /// Compute metrics from a score directory.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        fpr_limit: Option<f64>,
    },
    /// Print a metrics report as a table.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write the procedural toy corpus as a dataset tree plus config.
    MakeToy {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 40)]
        test_normal: usize,
        #[arg(long, default_value_t = 40)]
        test_anomalous: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn synth_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| file_err(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(Error::Dataset(format!("no images under {}", input.display())));
    }
    Ok(v)
}

fn synth(config: &CrrConfig, input: &Path, out: &Path, count: usize, seed: u64, class: &str) -> Result<usize> {
    let synth = Synthesizer::new(config.synthesis.clone())?;
    let textures = pipeline::texture_bank(config)?;
    let method = config.synthesis.foreground_for(class);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut written = 0;
    for path in synth_inputs(input)? {
        let img = prepare_geometry(&load_image(&path)?, &config.backbone);
        let fg = foreground_mask(&img, method);
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        for k in 0..count {
            let s = synth.synthesize(&img, &fg, &textures, &mut rng)?;
            save_image(&s.anomalous, &out.join(format!("{stem}_{k:03}.png")))?;
            save_mask(&s.mask, &out.join(format!("{stem}_{k:03}_mask.png")))?;
            written += 1;
        }
    }
    Ok(written)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            config,
            input,
            out,
            count,
            seed,
            class,
        } => {
            let n = synth(&config.resolve()?, &input, &out, count, seed, &class)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::TrainStage1 { config, run } => {
            let m = pipeline::run_stage1(&config.resolve()?, &run)?;
            println!("stage 1 done: {}", run.join(pipeline::STAGE1_FILE).display());
            println!("dataset hash {}", m.dataset_hash);
        }
        Command::TrainStage2 { run, sets } => {
            pipeline::run_stage2(&run, &sets)?;
            println!("stage 2 done: {}", run.join(pipeline::STAGE2_FILE).display());
        }
        Command::Infer { run, out, heatmaps } => {
            let idx = pipeline::run_infer(&run, &out, heatmaps)?;
            println!("scored {} images into {}", idx.entries.len(), out.display());
        }
        Command::Eval { scores, out, fpr_limit } => {
            let report = pipeline::run_eval(&scores, fpr_limit)?;
            pipeline::save_report(&report, &out)?;
            print!("{}", report.to_table());
        }
        Command::Report { input, json } => {
            let report = pipeline::load_report(&input)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(|e| file_err(&input, e))?);
            } else {
                print!("{}", report.to_table());
            }
        }
        Command::MakeToy {
            config,
            out,
            train,
            test_normal,
            test_anomalous,
            seed,
        } => {
            let counts = ToyCounts {
                train,
                test_normal,
                test_anomalous,
            };
            write_toy_tree(&config.resolve()?, counts, seed, &out)?;
            println!("toy corpus and config written to {}", out.display());
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
