use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use beamtrack::encoders::InputMode;
use beamtrack::pipeline::{self, GenerateOptions, LabelMeta};
use beamtrack::tracker::{EvalOptions, LabelMode};

#[derive(Parser)]
#[command(name = "beamtrack", version, about = "mmWave beam tracking simulator, dataset generator and trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate episodes and write them as JSON lines.
    Generate {
        /// `t001`, `t002` or a scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        receivers: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode every receiver scene as a LIDAR voxel grid or GNSS matrix.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "lidar")]
        mode: InputMode,
        /// Encoder configuration file (grids, LIDAR, gradient length).
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every receiver scene with its best beam.
    Label {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 64)]
        beams: usize,
        /// Label transmit/receive pairs with this many receive beams.
        #[arg(long)]
        pair_rx: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the tracker and the selection-only model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-K evaluation on the held-out episodes of a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        topk: Vec<usize>,
        /// Also report the tracker fed with its own predictions.
        #[arg(long)]
        closed_loop: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate {
            scenario,
            episodes,
            scenes,
            receivers,
            seed,
            out,
        } => {
            let opts = GenerateOptions {
                scenario,
                episodes,
                scenes,
                receivers,
                seed,
            };
            pipeline::generate(&opts, &out).with_context(|| format!("generating into {}", out.display()))?;
        }
        Command::Encode { input, mode, grid, out } => {
            pipeline::encode(&input, mode, grid.as_deref(), &out)
                .with_context(|| format!("encoding {}", input.display()))?;
        }
        Command::Label {
            input,
            beams,
            pair_rx,
            out,
        } => {
            let mode = match pair_rx {
                Some(rx_beams) => LabelMode::Pair { rx_beams },
                None => LabelMode::BsOnly,
            };
            let s = pipeline::label(&input, LabelMeta { n_beams: beams, mode }, &out)
                .with_context(|| format!("labelling {}", input.display()))?;
            println!(
                "labelled {} scenes, {} outages, continuity {:.4}",
                s.labelled, s.outages, s.continuity
            );
        }
        Command::Train { data, config, out } => {
            let cfg = pipeline::read_config(config.as_deref()).context("reading tracker configuration")?;
            pipeline::train(&data, &cfg, &out).with_context(|| format!("training on {}", data.display()))?;
        }
        Command::Eval {
            data,
            ckpt,
            topk,
            closed_loop,
            out,
        } => {
            let report = pipeline::eval(&data, &ckpt, &EvalOptions { ks: topk, closed_loop }, &out)
                .with_context(|| format!("evaluating {}", ckpt.display()))?;
            for model in report.models() {
                let line: Vec<String> = report
                    .rows
                    .iter()
                    .filter(|r| r.model == model)
                    .map(|r| format!("top-{} {:.4}", r.k, r.accuracy))
                    .collect();
                println!("{model}: {}", line.join(", "));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
