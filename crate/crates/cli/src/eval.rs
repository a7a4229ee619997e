use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use contourflow::pipeline::{match_instances, pooled_scores, InstanceMatch, Scores};
use contourflow::region_stats::BinaryMask;
use serde::Serialize;

use crate::io;
use crate::manifest::RunManifest;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions: contour JSON (one contour or an array) or mask PNG per image.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth mask PNGs; instances are connected components.
    #[arg(long)]
    pub gt: PathBuf,
    /// Metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct FileResult {
    name: String,
    n_pred: usize,
    n_gt: usize,
    matches: InstanceMatch,
}

#[derive(Debug, Serialize)]
struct Report {
    #[serde(flatten)]
    scores: Scores,
    files: Vec<FileResult>,
    /// Ground truth without a prediction, counted as all missed.
    missing_pred: Vec<String>,
    /// Predictions without ground truth, ignored.
    unmatched_pred: Vec<String>,
}

fn pred_instances(path: &Path, h: usize, w: usize) -> Result<Vec<BinaryMask>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        return Ok(io::read_contours(path)?
            .iter()
            .map(|c| io::rasterize(c, h, w))
            .collect());
    }
    let mask = io::read_mask(path)?;
    if mask.dim() != (h, w) {
        bail!(
            "{} is {:?}, ground truth is {:?}",
            path.display(),
            mask.dim(),
            (h, w)
        );
    }
    Ok(io::instances(&mask))
}

pub fn run(a: &EvalArgs, m: &mut RunManifest) -> Result<()> {
    let mut preds: BTreeMap<String, PathBuf> = BTreeMap::new();
    for p in io::list_files(&a.pred, &["json", "png"])? {
        if p.to_string_lossy().ends_with(".manifest.json") {
            continue;
        }
        if let Some(prev) = preds.insert(io::stem(&p), p.clone()) {
            bail!("{} and {} share a name", prev.display(), p.display());
        }
    }
    let gts = io::list_files(&a.gt, &["png"])?;
    let mut files = Vec::new();
    let mut missing_pred = Vec::new();
    for g in &gts {
        m.input(g)?;
        let name = io::stem(g);
        let gt_mask = io::read_mask(g)?;
        let (h, w) = gt_mask.dim();
        let gt = io::instances(&gt_mask);
        let pred = match preds.remove(&name) {
            Some(p) => {
                m.input(&p)?;
                pred_instances(&p, h, w)?
            }
            None => {
                log::warn!("no prediction for {name}");
                missing_pred.push(name.clone());
                Vec::new()
            }
        };
        files.push(FileResult {
            name,
            n_pred: pred.len(),
            n_gt: gt.len(),
            matches: match_instances(&pred, &gt)?,
        });
    }
    let unmatched_pred: Vec<String> = preds.into_keys().collect();
    for name in &unmatched_pred {
        log::warn!("no ground truth for {name}");
    }
    let report = Report {
        scores: pooled_scores(files.iter().map(|f| &f.matches)),
        files,
        missing_pred,
        unmatched_pred,
    };
    m.detail("scores", report.scores);
    io::write_json(&a.out, &report)?;
    m.output(&a.out);
    println!("{}", serde_json::to_string(&report.scores)?);
    Ok(())
}
