//! The two optimization loops: unsupervised inside/outside separation and
//! one-shot isoline matching.

mod augment;
mod config;
mod oneshot;
mod unsupervised;

pub use augment::{random_augmentation, DihedralTransform};
pub use config::{EvolutionConfig, StepScale, UNSUPERVISED_SHARPNESS};
pub use oneshot::{
    fit_support, fit_support_with, loss_oneshot, oneshot_objective, predict_query,
    predict_query_pyramid, similarity_score, Prediction, SupportSignature,
};
pub use unsupervised::{
    evolve_unsupervised, evolve_unsupervised_pyramid, loss_unsupervised, unsupervised_objective,
};

use serde::{Deserialize, Serialize};

use crate::contour_ops::{blur_gradient, clean, clip_gradient, resample_equidistant};
use crate::error::{Error, Result};
use crate::geometry::{Contour, ContourGradient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Gradient norm fell to the threshold.
    Converged,
    MaxEpochs,
    /// Every loop left by the loop-removal step was negligible.
    Collapsed,
    /// A region lost all its weight, or the contour enclosed no pixel.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Norm compared with the stopping threshold (after step scaling).
    pub grad_norm: f64,
    /// Global L2 norm of the raw loss gradient.
    pub raw_grad_norm: f64,
    /// Learning rate used for the update of this epoch.
    pub step: f64,
    pub area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub epochs: Vec<EpochRecord>,
    /// `(epoch, contour before that epoch's update)`.
    pub snapshots: Vec<(usize, Contour)>,
    pub stop: StopReason,
}

impl EvolutionTrace {
    fn new() -> Self {
        Self {
            epochs: Vec::new(),
            snapshots: Vec::new(),
            stop: StopReason::MaxEpochs,
        }
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

/// Smallest epoch-0 mean node gradient that [`StepScale::FirstEpoch`] will
/// normalize by.
pub const MIN_REFERENCE_NORM: f64 = 1e-12;

/// Loss and gradient of one epoch.
pub(crate) type Objective<'a> = dyn FnMut(&Contour) -> Result<(f64, ContourGradient)> + 'a;

/// Shared descent loop: evaluate, test the stopping rule, step, remove
/// loops, clamp to the image and resample.
pub(crate) fn descend(
    init: &Contour,
    cfg: &EvolutionConfig,
    image_dims: (usize, usize),
    objective: &mut Objective<'_>,
) -> Result<(Contour, EvolutionTrace)> {
    cfg.validate()?;
    let mut contour = if init.len() == cfg.n_nodes {
        init.to_ccw()
    } else {
        resample_equidistant(init, cfg.n_nodes)?
    };
    let mut trace = EvolutionTrace::new();
    let max_disp = cfg.max_displacement(image_dims.0, image_dims.1);
    let mut scale: Option<f64> = None;
    for epoch in 0..cfg.n_epochs {
        let lr = cfg.l_r * cfg.e_d.powi(epoch as i32);
        let (loss, grad) = match objective(&contour) {
            Ok(v) => v,
            Err(Error::EmptyRegion | Error::EmptyContour) => {
                trace.stop = StopReason::Degenerate;
                return Ok((contour, trace));
            }
            Err(e) => return Err(e),
        };
        let raw_grad_norm = grad.norm();
        let mut g = grad;
        if cfg.step_scale == StepScale::FirstEpoch {
            let s = *scale.get_or_insert_with(|| mean_node_norm(&g));
            // below this the first gradient is rounding noise, e.g. a flat image
            if s > MIN_REFERENCE_NORM {
                g.scale(1.0 / s);
            }
        }
        let grad_norm = g.norm();
        if cfg.snapshot_stride > 0 && epoch % cfg.snapshot_stride == 0 {
            trace.snapshots.push((epoch, contour.clone()));
        }
        trace.epochs.push(EpochRecord {
            epoch,
            loss,
            grad_norm,
            raw_grad_norm,
            step: lr,
            area: contour.signed_area().abs(),
        });
        log::debug!("epoch {epoch}: loss {loss:.6e} |grad| {grad_norm:.3e}");
        if grad_norm <= cfg.t {
            trace.stop = StopReason::Converged;
            return Ok((contour, trace));
        }
        if cfg.blur_sigma > 0.0 {
            g = blur_gradient(&g, cfg.blur_sigma);
        }
        if cfg.clip {
            g = clip_gradient(&g, max_disp / lr);
        }
        let moved: Vec<_> = contour
            .nodes
            .iter()
            .zip(&g.0)
            .map(|(p, d)| [p[0] - lr * d[0], p[1] - lr * d[1]])
            .collect();
        let mut next = Contour::new(moved)?;
        next.clamp_unit();
        contour = match clean(&next).and_then(|c| resample_equidistant(&c, cfg.n_nodes)) {
            Ok(c) => c,
            Err(Error::ContourCollapsed | Error::ZeroPerimeter) => {
                trace.stop = StopReason::Collapsed;
                return Ok((contour, trace));
            }
            Err(e) => return Err(e),
        };
    }
    trace.stop = StopReason::MaxEpochs;
    Ok((contour, trace))
}

fn mean_node_norm(g: &ContourGradient) -> f64 {
    g.0.iter().map(|p| p[0].hypot(p[1])).sum::<f64>() / g.len().max(1) as f64
}
