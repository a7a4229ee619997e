use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::DEFAULT_SHARPNESS;

/// How the raw gradient is turned into a node displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepScale {
    /// `C <- C - l_r * grad`.
    Raw,
    /// The gradient is divided by the mean node norm of the first epoch's
    /// gradient, so `l_r` is a displacement in normalized image units. The
    /// stopping threshold applies to the scaled gradient.
    FirstEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub n_nodes: usize,
    /// Sharpness of the oriented-angle tanh.
    pub k: f64,
    pub l_r: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub e_d: f64,
    /// Stop once the global L2 norm of the step-scaled gradient is at most `t`.
    pub t: f64,
    pub n_epochs: usize,
    pub lambda_area: f64,
    /// Per-node displacement cap in normalized units; `None` means one pixel
    /// (`1 / min(H, W)`).
    pub clip_max_norm: Option<f64>,
    pub clip: bool,
    /// Gaussian smoothing of the gradient along the node index; 0 disables.
    pub blur_sigma: f64,
    pub isoline_centers: Vec<f64>,
    pub isoline_weights: Vec<f64>,
    pub n_aug: usize,
    pub mesh_scale: usize,
    pub seed: u64,
    pub step_scale: StepScale,
    /// Keep a contour snapshot every `snapshot_stride` epochs; 0 keeps none.
    pub snapshot_stride: usize,
}

impl EvolutionConfig {
    pub fn histology() -> Self {
        Self {
            n_nodes: 100,
            k: UNSUPERVISED_SHARPNESS,
            l_r: 1e-2,
            e_d: 0.999,
            t: 1e-2,
            n_epochs: 110,
            lambda_area: 5.0,
            clip_max_norm: None,
            clip: true,
            blur_sigma: 0.0,
            isoline_centers: vec![0.0, 1.0],
            isoline_weights: vec![0.1, 0.9],
            n_aug: 100,
            mesh_scale: 1,
            seed: 0,
            step_scale: StepScale::FirstEpoch,
            snapshot_stride: 0,
        }
    }

    pub fn real_life() -> Self {
        Self {
            n_epochs: 70,
            lambda_area: 0.0,
            ..Self::histology()
        }
    }

    pub fn one_shot() -> Self {
        Self {
            n_nodes: 100,
            k: DEFAULT_SHARPNESS,
            l_r: 5e-2,
            e_d: 0.999,
            t: 1e-2,
            n_epochs: 300,
            lambda_area: 0.0,
            clip_max_norm: None,
            clip: true,
            blur_sigma: crate::contour_ops::DEFAULT_BLUR_SIGMA,
            isoline_centers: vec![0.0, 1.0],
            isoline_weights: vec![0.1, 0.9],
            n_aug: 100,
            mesh_scale: 1,
            seed: 0,
            step_scale: StepScale::FirstEpoch,
            snapshot_stride: 0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "histology" => Ok(Self::histology()),
            "real_life" | "real-life" => Ok(Self::real_life()),
            "one_shot" | "one-shot" => Ok(Self::one_shot()),
            other => Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_nodes < 3 {
            return bad(format!("n_nodes must be at least 3, got {}", self.n_nodes));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return bad(format!("k must be positive, got {}", self.k));
        }
        if !(self.l_r > 0.0 && self.l_r.is_finite()) {
            return bad(format!("l_r must be positive, got {}", self.l_r));
        }
        if !(self.e_d > 0.0 && self.e_d <= 1.0) {
            return bad(format!("e_d must lie in (0, 1], got {}", self.e_d));
        }
        if !(self.t >= 0.0) {
            return bad(format!("t must be non-negative, got {}", self.t));
        }
        if self.n_epochs == 0 {
            return bad("n_epochs must be at least 1".into());
        }
        if !self.lambda_area.is_finite() {
            return bad("lambda_area must be finite".into());
        }
        if let Some(c) = self.clip_max_norm {
            if !(c > 0.0) {
                return bad(format!("clip_max_norm must be positive, got {c}"));
            }
        }
        if !(self.blur_sigma >= 0.0) {
            return bad(format!("blur_sigma must be non-negative, got {}", self.blur_sigma));
        }
        if self.isoline_centers.is_empty() {
            return bad("at least one isoline center is required".into());
        }
        if self.isoline_centers.len() != self.isoline_weights.len() {
            return bad(format!(
                "{} isoline centers but {} weights",
                self.isoline_centers.len(),
                self.isoline_weights.len()
            ));
        }
        if self.isoline_centers.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("isoline centers must lie in [0, 1]".into());
        }
        if self.n_aug == 0 {
            return bad("n_aug must be at least 1".into());
        }
        if self.mesh_scale >= crate::grid::NUM_SCALES {
            return bad(format!("mesh_scale must be below {}", crate::grid::NUM_SCALES));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Per-node displacement cap for an `h x w` image.
    pub fn max_displacement(&self, h: usize, w: usize) -> f64 {
        self.clip_max_norm
            .unwrap_or_else(|| 1.0 / h.min(w).max(1) as f64)
    }
}

/// Default sharpness of the unsupervised presets.
pub const UNSUPERVISED_SHARPNESS: f64 = 1e4;
