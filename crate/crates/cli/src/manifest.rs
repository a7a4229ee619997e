use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use contourflow::evolution::EvolutionConfig;
use serde::Serialize;

use crate::io;

/// Record of one command run, written once at the end.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument list; rerunning it reproduces the outputs.
    pub argv: Vec<String>,
    pub version: &'static str,
    pub config: Option<EvolutionConfig>,
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
    /// sha256 of every input file, by path.
    pub inputs: BTreeMap<String, String>,
    /// Seconds per stage, in the order the stages ran.
    pub timings: Vec<(String, f64)>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
    pub details: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            config: None,
            config_hash: None,
            seed: None,
            inputs: BTreeMap::new(),
            timings: Vec::new(),
            outputs: Vec::new(),
            exit_code: 0,
            details: serde_json::Map::new(),
        }
    }

    pub fn set_config(&mut self, cfg: &EvolutionConfig) {
        self.config_hash = Some(cfg.hash());
        self.seed = Some(cfg.seed);
        self.config = Some(cfg.clone());
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), io::sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.details.insert(key.into(), v);
    }

    /// Runs `f`, recording its wall time under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.push((stage.into(), t.elapsed().as_secs_f64()));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// `<path>.manifest.json` next to the main output.
pub fn default_path(main_output: &Path) -> PathBuf {
    let mut s = main_output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
