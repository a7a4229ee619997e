use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use contourflow::evolution::{predict_query_pyramid, EvolutionConfig, StopReason, SupportSignature};
use contourflow::features::{FeatureExtractor, Image};
use contourflow::pipeline::{
    choose_threshold, extract_candidates, macenko_normalize, match_instances, pooled_scores, Candidate,
    CandidateConfig, Scores, StainReference,
};
use contourflow::region_stats::BinaryMask;
use contourflow::{Contour, Error};
use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::Serialize;

use crate::io;
use crate::manifest::RunManifest;
use crate::oneshot::{check_signature, to_frame};
use crate::setup::{thread_count, ConfigArgs, ExtractorArgs};

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["patches", "self_extract"])))]
#[command(group(clap::ArgGroup::new("decision").required(true).args(["score_threshold", "labels"])))]
pub struct PipelineArgs {
    #[arg(long)]
    pub overview: PathBuf,
    /// Directory with one patch per candidate, named `<cc_id>.png`.
    #[arg(long)]
    pub patches: Option<PathBuf>,
    /// Crop each candidate patch from the overview.
    #[arg(long)]
    pub self_extract: bool,
    #[arg(long)]
    pub signature: PathBuf,
    /// Accept candidates scoring strictly above this value.
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// JSON object `{"<cc_id>": true|false}`; the threshold maximizing F1 on
    /// the labelled candidates is used.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Instance ground truth for the overview (components of a gray PNG).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Worker threads; DCF_THREADS takes precedence.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Stain-normalize the overview and patches first.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long, default_value_t = CandidateConfig::default().percentile)]
    pub percentile: f64,
    #[arg(long, default_value_t = CandidateConfig::default().margin_frac)]
    pub margin_frac: f64,
    #[arg(long, default_value_t = CandidateConfig::default().min_cc_px)]
    pub min_cc_px: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Serialize)]
struct CandidateOut<'a> {
    cc_id: usize,
    bbox: [usize; 4],
    contour: &'a Contour,
}

#[derive(Debug, Clone, Serialize)]
struct PredictionOut {
    cc_id: usize,
    bbox: [usize; 4],
    /// Final contour in the patch frame.
    contour: Contour,
    score: f64,
    rejected: bool,
    stop: StopReason,
    epochs: usize,
}

#[derive(Debug, Serialize)]
struct Failure {
    cc_id: usize,
    error: String,
}

#[derive(Debug, Serialize)]
struct Decision {
    threshold: Option<f64>,
    /// `flag` or `labels`.
    source: &'static str,
    /// F1 on the labelled candidates at `threshold`.
    label_f1: Option<f64>,
    accepted: Vec<usize>,
    rejected: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct Metrics {
    #[serde(flatten)]
    scores: Scores,
    matches: contourflow::pipeline::InstanceMatch,
    n_pred: usize,
    n_gt: usize,
}

fn maybe_normalize(image: Image, on: bool, what: &str) -> Result<Image> {
    if !on {
        return Ok(image);
    }
    match macenko_normalize(&image, &StainReference::default()) {
        Ok(img) => Ok(img),
        Err(Error::InsufficientTissue(msg)) => {
            log::warn!("{what}: stain normalization skipped, {msg}");
            Ok(image)
        }
        Err(e) => Err(e.into()),
    }
}

fn patch_for(a: &PipelineArgs, c: &Candidate, overview: &Image) -> Result<Image> {
    match &a.patches {
        Some(dir) => {
            let img = io::read_rgb(&dir.join(format!("{}.png", c.cc_id)))?;
            maybe_normalize(img, a.normalize, &format!("patch {}", c.cc_id))
        }
        None => Ok(c.crop(overview)),
    }
}

fn run_one(
    a: &PipelineArgs,
    c: &Candidate,
    overview: &Image,
    sig: &SupportSignature,
    ext: &dyn FeatureExtractor,
    cfg: &EvolutionConfig,
) -> Result<PredictionOut> {
    let patch = patch_for(a, c, overview)?;
    let pyramid = ext.extract(&patch)?;
    let p = predict_query_pyramid(sig, &pyramid, &c.contour, cfg)?;
    Ok(PredictionOut {
        cc_id: c.cc_id,
        bbox: c.bbox,
        epochs: p.trace.len(),
        stop: p.trace.stop,
        contour: p.contour,
        score: p.score,
        rejected: p.rejected,
    })
}

fn read_labels(path: &Path) -> Result<BTreeMap<usize, bool>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading labels {}", path.display()))?;
    let raw: BTreeMap<String, bool> =
        serde_json::from_str(&text).with_context(|| format!("parsing labels {}", path.display()))?;
    raw.into_iter()
        .map(|(k, v)| Ok((k.parse().with_context(|| format!("label key {k:?} is not a cc_id"))?, v)))
        .collect()
}

/// Accepted contour rasterized on its box and pasted into the overview frame.
fn overview_mask(p: &PredictionOut, h: usize, w: usize) -> BinaryMask {
    let [r0, c0, r1, c1] = p.bbox;
    let mut full = Array2::from_elem((h, w), false);
    full.slice_mut(s![r0..r1, c0..c1])
        .assign(&io::rasterize(&p.contour, r1 - r0, c1 - c0));
    full
}

pub fn run(a: &PipelineArgs, m: &mut RunManifest) -> Result<()> {
    let threads = thread_count(a.threads)?;
    m.detail("threads", threads);
    let cfg = a.config.load("one_shot", m)?;
    m.set_config(&cfg);
    let ext = a.extractor.build(m)?;
    m.input(&a.signature)?;
    let sig = SupportSignature::load(&a.signature)
        .with_context(|| format!("loading signature {}", a.signature.display()))?;
    check_signature(&sig, &cfg)?;
    let labels = match &a.labels {
        Some(p) => {
            m.input(p)?;
            Some(read_labels(p)?)
        }
        None => None,
    };
    m.input(&a.overview)?;
    let overview = maybe_normalize(io::read_rgb(&a.overview)?, a.normalize, "overview")?;
    let (h, w) = (overview.height(), overview.width());

    let cand_cfg = CandidateConfig {
        percentile: a.percentile,
        margin_frac: a.margin_frac,
        min_cc_px: a.min_cc_px,
        n_nodes: cfg.n_nodes,
    };
    let candidates = m.timed("candidates", || extract_candidates(&overview, &cand_cfg))?;
    m.detail("candidates", candidates.len());
    let listed: Vec<_> = candidates
        .iter()
        .map(|c| CandidateOut {
            cc_id: c.cc_id,
            bbox: c.bbox,
            contour: &c.contour,
        })
        .collect();
    let path = a.out.join("candidates.json");
    io::write_json(&path, &listed)?;
    m.output(&path);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting the worker pool")?;
    let results: Vec<Result<PredictionOut>> = m.timed("predict", || {
        pool.install(|| {
            candidates
                .par_iter()
                .map(|c| run_one(a, c, &overview, &sig, ext.as_ref(), &cfg))
                .collect()
        })
    });
    let mut preds = Vec::new();
    let mut failures = Vec::new();
    for (c, r) in candidates.iter().zip(results) {
        match r {
            Ok(p) => preds.push(p),
            Err(e) => {
                log::warn!("candidate {}: {e:#}", c.cc_id);
                failures.push(Failure {
                    cc_id: c.cc_id,
                    error: format!("{e:#}"),
                });
            }
        }
    }
    m.detail("failures", failures.len());
    let path = a.out.join("predictions.json");
    io::write_json(&path, &preds)?;
    m.output(&path);
    let path = a.out.join("failures.json");
    io::write_json(&path, &failures)?;
    m.output(&path);

    let (threshold, source, label_f1) = match (a.score_threshold, &labels) {
        (Some(t), _) => (Some(t), "flag", None),
        (None, Some(labels)) => {
            let (scores, truth): (Vec<f64>, Vec<bool>) = preds
                .iter()
                .filter_map(|p| labels.get(&p.cc_id).map(|&l| (p.score, l)))
                .unzip();
            if scores.is_empty() {
                log::warn!("no labelled candidate; everything is rejected");
                (None, "labels", None)
            } else {
                let choice = choose_threshold(&scores, &truth)?;
                (Some(choice.threshold), "labels", Some(choice.f1))
            }
        }
        (None, None) => unreachable!("clap requires a decision source"),
    };
    let (acc, rej): (Vec<&PredictionOut>, Vec<&PredictionOut>) = preds
        .iter()
        .partition(|p| !p.rejected && threshold.is_some_and(|t| p.score > t));
    let decision = Decision {
        threshold,
        source,
        label_f1,
        accepted: acc.iter().map(|p| p.cc_id).collect(),
        rejected: rej.iter().map(|p| p.cc_id).collect(),
    };
    m.detail("accepted", decision.accepted.len());
    let path = a.out.join("decision.json");
    io::write_json(&path, &decision)?;
    m.output(&path);

    let in_overview = acc
        .iter()
        .map(|p| {
            let c = Candidate {
                bbox: p.bbox,
                margin: [0, 0],
                contour: p.contour.clone(),
                cc_id: p.cc_id,
            };
            to_frame(&c, h as f64, w as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = a.out.join("accepted_contours.json");
    io::write_json(&path, &in_overview)?;
    m.output(&path);

    if let Some(gt_path) = &a.gt {
        m.input(gt_path)?;
        let gt_mask = io::read_mask(gt_path)?;
        if gt_mask.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: vec![h, w],
                found: vec![gt_mask.dim().0, gt_mask.dim().1],
            }
            .into());
        }
        let gt = io::instances(&gt_mask);
        let pred: Vec<_> = acc.iter().map(|p| overview_mask(p, h, w)).collect();
        let matches = match_instances(&pred, &gt)?;
        let metrics = Metrics {
            scores: pooled_scores([&matches]),
            n_pred: pred.len(),
            n_gt: gt.len(),
            matches,
        };
        let path = a.out.join("metrics.json");
        io::write_json(&path, &metrics)?;
        m.output(&path);
    }
    Ok(())
}
