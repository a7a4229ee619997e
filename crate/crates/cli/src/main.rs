mod eval;
mod io;
mod manifest;
mod oneshot;
mod pipeline;
mod render;
mod setup;
mod synth;
mod unsupervised;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "contourflow", version, about = "Active contours driven by deep features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evolve a contour on one image without supervision.
    Unsupervised(unsupervised::UnsupervisedArgs),
    /// Fit a support signature from an image and its mask.
    Fit(oneshot::FitArgs),
    /// Evolve a contour on a query patch toward a signature and score it.
    Predict(oneshot::PredictArgs),
    /// Candidate extraction, prediction and acceptance on an overview.
    Pipeline(pipeline::PipelineArgs),
    /// Detection and segmentation scores of predictions against ground truth.
    Eval(eval::EvalArgs),
    /// Synthetic test images and weights.
    Synth(synth::SynthArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Unsupervised(_) => "unsupervised",
            Command::Fit(_) => "fit",
            Command::Predict(_) => "predict",
            Command::Pipeline(_) => "pipeline",
            Command::Eval(_) => "eval",
            Command::Synth(_) => "synth",
        }
    }

    fn manifest_path(&self) -> PathBuf {
        use manifest::default_path;
        match self {
            Command::Unsupervised(a) => a.manifest.clone().unwrap_or_else(|| default_path(&a.out_contour)),
            Command::Fit(a) => a.manifest.clone().unwrap_or_else(|| default_path(&a.out_signature)),
            Command::Predict(a) => a.manifest.clone().unwrap_or_else(|| default_path(&a.out_contour)),
            Command::Pipeline(a) => a.out.join("manifest.json"),
            Command::Eval(a) => a.manifest.clone().unwrap_or_else(|| default_path(&a.out)),
            Command::Synth(a) => a.manifest.clone().unwrap_or_else(|| default_path(&a.out)),
        }
    }

    fn run(&self, m: &mut RunManifest) -> Result<()> {
        if !matches!(self, Command::Pipeline(_)) {
            setup::init_threads(1)?;
        }
        match self {
            Command::Unsupervised(a) => unsupervised::run(a, m),
            Command::Fit(a) => oneshot::fit(a, m),
            Command::Predict(a) => oneshot::predict(a, m),
            Command::Pipeline(a) => pipeline::run(a, m),
            Command::Eval(a) => eval::run(a, m),
            Command::Synth(a) => synth::run(a, m),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { setup::EXIT_USAGE as u8 } else { 0 });
        }
    };
    let mut m = RunManifest::new(cli.command.name());
    let result = cli.command.run(&mut m);
    if let Err(e) = &result {
        m.exit_code = setup::exit_code(e);
        m.detail("error", format!("{e:#}"));
        eprintln!("error: {e:#}");
    }
    let path = cli.command.manifest_path();
    if let Err(e) = m.write(&path) {
        eprintln!("error: writing manifest {}: {e:#}", path.display());
        if m.exit_code == 0 {
            m.exit_code = setup::EXIT_USAGE;
        }
    }
    ExitCode::from(m.exit_code as u8)
}
