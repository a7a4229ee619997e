//! Weighted feature averages over soft regions, and the isoline machinery
//! built on normalized distance maps.

use ndarray::{Array2, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{Error, Result};
use crate::features::FeaturePyramid;
use crate::grid::{self, NUM_SCALES};

/// Total weight below which a region counts as empty.
pub const EPS_WEIGHT: f64 = 1e-8;

pub type BinaryMask = Array2<bool>;

/// Per-channel weighted spatial mean `sum w f / sum w`.
pub fn masked_mean(weight: ArrayView2<f64>, features: ArrayView3<f64>) -> Result<Vec<f64>> {
    let (_, h, w) = features.dim();
    if weight.dim() != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: vec![h, w],
            found: vec![weight.nrows(), weight.ncols()],
        });
    }
    let total = weight.sum();
    if total <= EPS_WEIGHT {
        return Err(Error::EmptyRegion);
    }
    Ok(features
        .outer_iter()
        .map(|plane| {
            Zip::from(&plane)
                .and(&weight)
                .fold(0.0, |acc, &f, &w| acc + f * w)
                / total
        })
        .collect())
}

/// Gradient of `<cot, masked_mean(weight, features)>` with respect to the weight.
pub fn masked_mean_vjp(
    weight: ArrayView2<f64>,
    features: ArrayView3<f64>,
    mean: &[f64],
    cot: &[f64],
) -> Array2<f64> {
    let total = weight.sum();
    let offset: f64 = cot.iter().zip(mean).map(|(c, m)| c * m).sum();
    let mut out = Array2::from_elem(weight.dim(), -offset / total);
    for (plane, &c) in features.outer_iter().zip(cot) {
        if c == 0.0 {
            continue;
        }
        out.scaled_add(c / total, &plane);
    }
    out
}

/// Inside and outside means per scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub inside: Vec<Vec<f64>>,
    pub outside: Vec<Vec<f64>>,
}

/// Means over `M_s` and `1 - M_s` where `masks[s]` already matches scale `s`.
pub fn region_features_multiscale(
    masks: &[Array2<f64>],
    pyramid: &FeaturePyramid,
) -> Result<RegionFeatures> {
    let mut inside = Vec::with_capacity(NUM_SCALES);
    let mut outside = Vec::with_capacity(NUM_SCALES);
    for (m, f) in masks.iter().zip(&pyramid.levels) {
        inside.push(masked_mean(m.view(), f.view())?);
        let comp = m.mapv(|v| 1.0 - v);
        outside.push(masked_mean(comp.view(), f.view())?);
    }
    Ok(RegionFeatures { inside, outside })
}

/// Same as [`region_features_multiscale`] starting from a scale-0 mask.
pub fn region_features(mask: ArrayView2<f64>, pyramid: &FeaturePyramid) -> Result<RegionFeatures> {
    let masks: Vec<_> = (0..NUM_SCALES)
        .map(|s| {
            let (h, w) = pyramid.dims(s);
            grid::resize(mask, h, w)
        })
        .collect();
    region_features_multiscale(&masks, pyramid)
}

/// Pulls cotangents on the inside/outside means back to each scale's mask.
pub fn region_features_vjp(
    masks: &[Array2<f64>],
    pyramid: &FeaturePyramid,
    feats: &RegionFeatures,
    d_inside: &[Vec<f64>],
    d_outside: &[Vec<f64>],
) -> Vec<Array2<f64>> {
    masks
        .iter()
        .enumerate()
        .map(|(s, m)| {
            let f = pyramid.levels[s].view();
            let comp = m.mapv(|v| 1.0 - v);
            let din = masked_mean_vjp(m.view(), f, &feats.inside[s], &d_inside[s]);
            let dout = masked_mean_vjp(comp.view(), f, &feats.outside[s], &d_outside[s]);
            din - dout
        })
        .collect()
}

/// One-dimensional lower envelope of parabolas over squared distances.
/// `f[0]` must be finite; infinite samples (foreground) are skipped.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            let p = v[k];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                v[0] = q;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
            }
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from each pixel to the nearest background
/// pixel. Pixels outside the image count as background.
pub fn squared_distance_to_background(mask: &BinaryMask) -> Array2<f64> {
    let (h, w) = mask.dim();
    let (ph, pw) = (h + 2, w + 2);
    let mut g = Array2::from_elem((ph, pw), 0.0);
    for ((i, j), &m) in mask.indexed_iter() {
        if m {
            g[[i + 1, j + 1]] = f64::INFINITY;
        }
    }
    let n = ph.max(pw);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let mut buf = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..pw {
        for i in 0..ph {
            col[i] = g[[i, j]];
        }
        edt_1d(&col[..ph], &mut buf[..ph], &mut v, &mut z);
        for i in 0..ph {
            g[[i, j]] = buf[i];
        }
    }
    let mut row = vec![0.0; n];
    for i in 0..ph {
        for j in 0..pw {
            row[j] = g[[i, j]];
        }
        edt_1d(&row[..pw], &mut buf[..pw], &mut v, &mut z);
        for j in 0..pw {
            g[[i, j]] = buf[j];
        }
    }
    g.slice(ndarray::s![1..h + 1, 1..w + 1]).to_owned()
}

/// Exact Euclidean distance of interior pixels to the background, divided by
/// its maximum. Zero outside the mask.
pub fn mask_to_distance_map(mask: &BinaryMask) -> Result<Array2<f64>> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let d = squared_distance_to_background(mask).mapv(f64::sqrt);
    let max = d.iter().cloned().fold(0.0, f64::max);
    Ok(d / max)
}

/// Width `sigma_i` of each isoline so that neighbouring isolines each weigh
/// 1/4 at their midpoint: `exp(-(gap/2)^2 / sigma) = 1/4`. Interior centers
/// use the smaller of their two gaps; a lone center uses a gap of 1.
pub fn isoline_sigma(centers: &[f64]) -> Result<Vec<f64>> {
    if centers.is_empty() {
        return Err(Error::InvalidConfig("no isoline centers".into()));
    }
    for pair in centers.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::DuplicateCenters);
        }
        if pair[0] > pair[1] {
            return Err(Error::InvalidConfig("isoline centers must be sorted".into()));
        }
    }
    let ln4 = 4.0f64.ln();
    let n = centers.len();
    Ok((0..n)
        .map(|i| {
            let left = (i > 0).then(|| centers[i] - centers[i - 1]);
            let right = (i + 1 < n).then(|| centers[i + 1] - centers[i]);
            let gap = match (left, right) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => 1.0,
            };
            gap * gap / (4.0 * ln4)
        })
        .collect())
}

/// `G(x, i, sigma) = exp(-(x - i)^2 / sigma)`.
#[inline]
pub fn isoline_kernel(x: f64, center: f64, sigma: f64) -> f64 {
    (-(x - center).powi(2) / sigma).exp()
}

#[derive(Debug, Clone)]
pub struct IsolineSet {
    pub centers: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub weights: Vec<Array2<f64>>,
}

pub fn isoline_weights(distance: ArrayView2<f64>, centers: &[f64]) -> Result<IsolineSet> {
    let sigmas = isoline_sigma(centers)?;
    let weights = centers
        .iter()
        .zip(&sigmas)
        .map(|(&c, &s)| distance.mapv(|d| isoline_kernel(d, c, s)))
        .collect();
    Ok(IsolineSet {
        centers: centers.to_vec(),
        sigmas,
        weights,
    })
}

/// Features `f_{i,s}`, indexed `values[i][s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolineFeatures {
    pub centers: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

/// Isoline fields computed on the scale-0 distance map and downsampled to
/// each scale before averaging.
pub fn isoline_features(
    distance: ArrayView2<f64>,
    pyramid: &FeaturePyramid,
    centers: &[f64],
) -> Result<IsolineFeatures> {
    let set = isoline_weights(distance, centers)?;
    let mut values = Vec::with_capacity(centers.len());
    for iso in &set.weights {
        let mut per_scale = Vec::with_capacity(NUM_SCALES);
        for (s, f) in pyramid.levels.iter().enumerate() {
            let (h, w) = pyramid.dims(s);
            let down = grid::resize(iso.view(), h, w);
            per_scale.push(masked_mean(down.view(), f.view())?);
        }
        values.push(per_scale);
    }
    Ok(IsolineFeatures {
        centers: centers.to_vec(),
        values,
    })
}

/// Isoline features on per-scale distance maps, kept for the adjoint.
///
/// This is the form used while a contour evolves: the distance map comes out
/// of the geometry kernel already resampled to every scale, and the isoline
/// kernel is applied per scale.
#[derive(Debug, Clone)]
pub struct IsolineEval {
    pub sigmas: Vec<f64>,
    pub features: IsolineFeatures,
    weights: Vec<Vec<Array2<f64>>>,
}

impl IsolineEval {
    pub fn new(distances: &[Array2<f64>], pyramid: &FeaturePyramid, centers: &[f64]) -> Result<Self> {
        let sigmas = isoline_sigma(centers)?;
        let mut weights = Vec::with_capacity(centers.len());
        let mut values = Vec::with_capacity(centers.len());
        for (&c, &sigma) in centers.iter().zip(&sigmas) {
            let mut ws = Vec::with_capacity(NUM_SCALES);
            let mut vs = Vec::with_capacity(NUM_SCALES);
            for (d, f) in distances.iter().zip(&pyramid.levels) {
                let w = d.mapv(|x| isoline_kernel(x, c, sigma));
                vs.push(masked_mean(w.view(), f.view())?);
                ws.push(w);
            }
            weights.push(ws);
            values.push(vs);
        }
        Ok(Self {
            sigmas,
            features: IsolineFeatures {
                centers: centers.to_vec(),
                values,
            },
            weights,
        })
    }

    /// Cotangent on each scale's distance map given `cot[i][s]`.
    pub fn vjp(
        &self,
        distances: &[Array2<f64>],
        pyramid: &FeaturePyramid,
        cot: &[Vec<Vec<f64>>],
    ) -> Vec<Array2<f64>> {
        let mut out: Vec<Array2<f64>> = distances.iter().map(|d| Array2::zeros(d.dim())).collect();
        for (i, (&c, &sigma)) in self.features.centers.iter().zip(&self.sigmas).enumerate() {
            for (s, d) in distances.iter().enumerate() {
                let w = &self.weights[i][s];
                let dw = masked_mean_vjp(
                    w.view(),
                    pyramid.levels[s].view(),
                    &self.features.values[i][s],
                    &cot[i][s],
                );
                Zip::from(&mut out[s])
                    .and(&dw)
                    .and(w)
                    .and(d)
                    .for_each(|o, &g, &wv, &x| *o += g * wv * (-2.0 * (x - c) / sigma));
            }
        }
        out
    }
}

/// Hard mask as a `{0, 1}` field.
pub fn mask_to_field(mask: &BinaryMask) -> Array2<f64> {
    mask.mapv(|m| if m { 1.0 } else { 0.0 })
}

/// Counts the channels of a feature level; used for shape checks.
pub fn channel_count(features: ArrayView3<f64>) -> usize {
    features.len_of(Axis(0))
}
