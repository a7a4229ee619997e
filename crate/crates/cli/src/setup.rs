use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use contourflow::evolution::EvolutionConfig;
use contourflow::features::{read_container, ConvExtractor, FeatureExtractor, IdentityExtractor};

use crate::manifest::RunManifest;

/// Data the run could not work with (empty mask, collapsed contour, ...).
#[derive(Debug)]
pub struct Degenerate(pub String);

impl std::fmt::Display for Degenerate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Degenerate {}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    use contourflow::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<Degenerate>().is_some() {
            return EXIT_DEGENERATE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::EmptyContour
                | E::ContourCollapsed
                | E::ZeroPerimeter
                | E::EmptyRegion
                | E::EmptyMask
                | E::InsufficientTissue(_) => EXIT_DEGENERATE,
                _ => EXIT_USAGE,
            };
        }
    }
    EXIT_USAGE
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Parameter preset: histology, real_life or one_shot.
    #[arg(long)]
    pub preset: Option<String>,
    /// JSON object overriding preset fields (names as in EvolutionConfig).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn load(&self, default_preset: &str, manifest: &mut RunManifest) -> Result<EvolutionConfig> {
        let base = EvolutionConfig::preset(self.preset.as_deref().unwrap_or(default_preset))?;
        let mut cfg = match &self.config {
            None => base,
            Some(path) => {
                manifest.input(path)?;
                merge(base, path)?
            }
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: EvolutionConfig, path: &Path) -> Result<EvolutionConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let patch: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let serde_json::Value::Object(fields) = patch else {
        bail!("config {} is not a JSON object", path.display());
    };
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("config is an object");
    for (k, v) in fields {
        obj.insert(k, v);
    }
    serde_json::from_value(value).with_context(|| format!("config {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractorKind {
    Identity,
    Conv,
}

#[derive(Debug, Args)]
pub struct ExtractorArgs {
    #[arg(long, value_enum, default_value = "identity")]
    pub extractor: ExtractorKind,
    /// Weight container for the conv extractor.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

impl ExtractorArgs {
    pub fn build(&self, manifest: &mut RunManifest) -> Result<Box<dyn FeatureExtractor>> {
        manifest.detail("extractor", format!("{:?}", self.extractor).to_lowercase());
        match self.extractor {
            ExtractorKind::Identity => Ok(Box::new(IdentityExtractor)),
            ExtractorKind::Conv => {
                let Some(path) = &self.weights else {
                    bail!("the conv extractor needs --weights");
                };
                manifest.input(path)?;
                let store = read_container(path).with_context(|| format!("loading weights {}", path.display()))?;
                Ok(Box::new(ConvExtractor::new(&store)?))
            }
        }
    }
}

/// Worker count: `DCF_THREADS`, then the flag, then all logical cores.
pub fn thread_count(flag: Option<usize>) -> Result<usize> {
    if let Ok(v) = std::env::var("DCF_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("DCF_THREADS={v:?}"))?;
        if n == 0 {
            bail!("DCF_THREADS must be positive");
        }
        return Ok(n);
    }
    match flag {
        Some(0) => bail!("--threads must be positive"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn init_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("starting the worker pool")
}
