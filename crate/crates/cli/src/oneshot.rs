use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use contourflow::evolution::{fit_support, predict_query_pyramid, EvolutionConfig, SupportSignature};
use contourflow::features::Image;
use contourflow::pipeline::{extract_candidates, Candidate, CandidateConfig};
use contourflow::{Contour, Error};

use crate::io;
use crate::manifest::RunManifest;
use crate::render::overlay;
use crate::setup::{ConfigArgs, Degenerate, ExtractorArgs};

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// 8-bit mask of the support object, foreground at 128 and above.
    #[arg(long)]
    pub mask: PathBuf,
    /// Signature container; metadata goes to the same path with a json extension.
    #[arg(long)]
    pub out_signature: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn fit(a: &FitArgs, m: &mut RunManifest) -> Result<()> {
    let cfg = a.config.load("one_shot", m)?;
    m.set_config(&cfg);
    let ext = a.extractor.build(m)?;
    m.input(&a.image)?;
    m.input(&a.mask)?;
    let image = io::read_rgb(&a.image)?;
    let mask = io::read_mask(&a.mask)?;
    let sig = m.timed("fit", || fit_support(&image, &mask, ext.as_ref(), &cfg))?;
    io::ensure_parent(&a.out_signature)?;
    sig.save(&a.out_signature)
        .with_context(|| format!("writing {}", a.out_signature.display()))?;
    m.output(&a.out_signature);
    m.output(&a.out_signature.with_extension("json"));
    Ok(())
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("init").required(true).args(["init_contour", "auto_init"])))]
pub struct PredictArgs {
    #[arg(long)]
    pub signature: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub init_contour: Option<PathBuf>,
    /// Start from the candidate found in the patch nearest its center.
    #[arg(long)]
    pub auto_init: bool,
    #[arg(long)]
    pub out_contour: PathBuf,
    #[arg(long)]
    pub out_score: PathBuf,
    #[arg(long)]
    pub out_overlay: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Fails unless the signature was fitted with the same isolines.
pub fn check_signature(sig: &SupportSignature, cfg: &EvolutionConfig) -> Result<()> {
    if sig.centers != cfg.isoline_centers || sig.weights != cfg.isoline_weights {
        return Err(Error::IndexMismatch(format!(
            "signature has isolines {:?} with weights {:?}, config has {:?} with {:?}",
            sig.centers, sig.weights, cfg.isoline_centers, cfg.isoline_weights
        ))
        .into());
    }
    if sig.config_hash != cfg.hash() {
        log::info!("signature was fitted under a different config");
    }
    Ok(())
}

/// Candidate contour nearest the patch center, in the patch frame.
pub fn auto_init(image: &Image, n_nodes: usize) -> Result<Contour> {
    let cfg = CandidateConfig {
        n_nodes,
        ..CandidateConfig::default()
    };
    let (h, w) = (image.height() as f64, image.width() as f64);
    let center_dist = |c: &Candidate| {
        let [r0, c0, r1, c1] = c.bbox;
        let (y, x) = ((r0 + r1) as f64 / 2.0 / h, (c0 + c1) as f64 / 2.0 / w);
        (x - 0.5).hypot(y - 0.5)
    };
    let best = extract_candidates(image, &cfg)?
        .into_iter()
        .min_by(|a, b| center_dist(a).total_cmp(&center_dist(b)))
        .ok_or_else(|| Degenerate("no candidate found in the patch".into()))?;
    to_frame(&best, h, w)
}

/// Maps a candidate contour from its box frame to the frame of an `h x w` image.
pub fn to_frame(c: &Candidate, h: f64, w: f64) -> Result<Contour> {
    let [r0, c0, r1, c1] = c.bbox;
    let nodes = c
        .contour
        .nodes
        .iter()
        .map(|p| {
            [
                (c0 as f64 + p[0] * (c1 - c0) as f64) / w,
                (r0 as f64 + p[1] * (r1 - r0) as f64) / h,
            ]
        })
        .collect();
    Ok(Contour::new(nodes)?)
}

pub fn predict(a: &PredictArgs, m: &mut RunManifest) -> Result<()> {
    let cfg = a.config.load("one_shot", m)?;
    m.set_config(&cfg);
    let ext = a.extractor.build(m)?;
    m.input(&a.signature)?;
    let sig = SupportSignature::load(&a.signature)
        .with_context(|| format!("loading signature {}", a.signature.display()))?;
    check_signature(&sig, &cfg)?;
    m.input(&a.image)?;
    let image = io::read_rgb(&a.image)?;
    let init = match &a.init_contour {
        Some(p) => {
            m.input(p)?;
            io::read_contour(p)?
        }
        None => auto_init(&image, cfg.n_nodes)?,
    };
    let pyramid = m.timed("features", || ext.extract(&image))?;
    let p = m.timed("predict", || predict_query_pyramid(&sig, &pyramid, &init, &cfg))?;
    m.detail("rejected", p.rejected);
    m.detail("stop", p.trace.stop);
    m.detail("epochs", p.trace.len());
    m.detail("score", p.score);
    io::write_atomic(&a.out_contour, p.contour.to_json().as_bytes())?;
    m.output(&a.out_contour);
    io::write_atomic(&a.out_score, io::format_score(p.score).as_bytes())?;
    m.output(&a.out_score);
    if let Some(o) = &a.out_overlay {
        io::write_rgb(o, &overlay(&image, &p.contour))?;
        m.output(o);
    }
    Ok(())
}
