use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use contourflow::evolution::{evolve_unsupervised_pyramid, StopReason};
use contourflow::Contour;

use crate::io;
use crate::manifest::RunManifest;
use crate::render::overlay;
use crate::setup::{ConfigArgs, Degenerate, ExtractorArgs};

/// Radius of the default initial circle, in normalized units.
pub const DEFAULT_INIT_RADIUS: f64 = 0.3;

#[derive(Debug, Args)]
pub struct UnsupervisedArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Initial contour JSON; a centered circle when omitted.
    #[arg(long)]
    pub init_contour: Option<PathBuf>,
    #[arg(long)]
    pub out_contour: PathBuf,
    /// Image with the final contour drawn on it.
    #[arg(long)]
    pub out_overlay: Option<PathBuf>,
    /// Directory for frame_%05d.png overlays of the evolution.
    #[arg(long)]
    pub out_frames: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub frame_every: usize,
    /// Per-epoch loss and gradient norms.
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(a: &UnsupervisedArgs, m: &mut RunManifest) -> Result<()> {
    let mut cfg = a.config.load("real_life", m)?;
    if a.out_frames.is_some() {
        cfg.snapshot_stride = a.frame_every.max(1);
    }
    m.set_config(&cfg);
    let ext = a.extractor.build(m)?;
    m.input(&a.image)?;
    let image = io::read_rgb(&a.image)?;
    let init = match &a.init_contour {
        Some(p) => {
            m.input(p)?;
            io::read_contour(p)?
        }
        None => Contour::circle([0.5, 0.5], DEFAULT_INIT_RADIUS, cfg.n_nodes),
    };
    let pyramid = m.timed("features", || ext.extract(&image))?;
    let (contour, trace) = m.timed("evolve", || evolve_unsupervised_pyramid(&pyramid, &init, &cfg))?;
    m.detail("stop", trace.stop);
    m.detail("epochs", trace.len());
    m.detail("final_loss", trace.epochs.last().map(|r| r.loss));

    io::write_atomic(&a.out_contour, contour.to_json().as_bytes())?;
    m.output(&a.out_contour);
    if let Some(p) = &a.out_overlay {
        io::write_rgb(p, &overlay(&image, &contour))?;
        m.output(p);
    }
    if let Some(dir) = &a.out_frames {
        m.timed("frames", || -> Result<()> {
            for (epoch, c) in &trace.snapshots {
                io::write_rgb(&dir.join(format!("frame_{epoch:05}.png")), &overlay(&image, c))?;
            }
            io::write_rgb(&dir.join(format!("frame_{:05}.png", trace.len())), &overlay(&image, &contour))
        })?;
        m.output(dir);
    }
    if let Some(p) = &a.out_trace {
        io::write_json(p, &trace.epochs)?;
        m.output(p);
    }
    match trace.stop {
        StopReason::Collapsed | StopReason::Degenerate => {
            Err(Degenerate(format!("evolution stopped early: {:?}", trace.stop)).into())
        }
        _ => Ok(()),
    }
}
