use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{descend, DihedralTransform, EvolutionConfig, EvolutionTrace, StopReason};
use crate::error::{Error, Result};
use crate::features::{read_container, write_container, FeatureExtractor, FeaturePyramid, Image, Tensor, WeightStore};
use crate::geometry::{Contour, ContourGradient, MapKind, MultiscaleMaps};
use crate::grid::{self, NUM_SCALES};
use crate::region_stats::{
    isoline_features, mask_to_distance_map, mask_to_field, masked_mean, BinaryMask, IsolineEval,
    IsolineFeatures,
};

/// Fitted one-shot descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSignature {
    pub centers: Vec<f64>,
    pub weights: Vec<f64>,
    /// Isoline features averaged over augmentations, `iso[i][s]`.
    pub iso: Vec<Vec<Vec<f64>>>,
    /// Per-scale mean feature inside the (unaugmented) support mask.
    pub inmean: Vec<Vec<f64>>,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    centers: Vec<f64>,
    weights: Vec<f64>,
    config_hash: String,
}

impl SupportSignature {
    pub fn features(&self) -> IsolineFeatures {
        IsolineFeatures {
            centers: self.centers.clone(),
            values: self.iso.clone(),
        }
    }

    /// Writes the tensors to `path` and the metadata to `path` with a `json`
    /// extension. Values are stored as `f32`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut store = WeightStore::default();
        for (i, per_scale) in self.iso.iter().enumerate() {
            for (s, v) in per_scale.iter().enumerate() {
                store.insert(format!("iso.{i}.{s}"), to_tensor(v));
            }
        }
        for (s, v) in self.inmean.iter().enumerate() {
            store.insert(format!("inmean.{s}"), to_tensor(v));
        }
        write_container(path, &store)?;
        let side = Sidecar {
            centers: self.centers.clone(),
            weights: self.weights.clone(),
            config_hash: self.config_hash.clone(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let store = read_container(path)?;
        let fetch = |name: String| -> Result<Vec<f64>> {
            let t = store.get(&name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            Ok(t.data.iter().map(|&v| v as f64).collect())
        };
        let iso = (0..side.centers.len())
            .map(|i| (0..NUM_SCALES).map(|s| fetch(format!("iso.{i}.{s}"))).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let inmean = (0..NUM_SCALES)
            .map(|s| fetch(format!("inmean.{s}")))
            .collect::<Result<Vec<_>>>()?;
        if side.weights.len() != side.centers.len() {
            return Err(Error::IndexMismatch("weights and centers differ in length".into()));
        }
        Ok(Self {
            centers: side.centers,
            weights: side.weights,
            iso,
            inmean,
            config_hash: side.config_hash,
        })
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

fn to_tensor(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.iter().map(|&x| x as f32).collect())
}

/// Distance map of `mask`, zero-padded to the pyramid's frame.
fn padded_distance(mask: &BinaryMask, pyramid: &FeaturePyramid) -> Result<Array2<f64>> {
    let d = mask_to_distance_map(mask)?;
    let (h, w) = pyramid.dims(0);
    Ok(grid::pad_const(d.view(), h, w, 0.0))
}

fn check_support(image: &Image, mask: &BinaryMask) -> Result<()> {
    if mask.dim() != (image.height(), image.width()) {
        return Err(Error::ShapeMismatch {
            expected: vec![image.height(), image.width()],
            found: vec![mask.nrows(), mask.ncols()],
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Per-scale means of `pyramid` inside a hard mask on the unpadded frame.
fn hard_inside_means(mask: &BinaryMask, pyramid: &FeaturePyramid) -> Result<Vec<Vec<f64>>> {
    let (h, w) = pyramid.dims(0);
    let field = grid::pad_const(mask_to_field(mask).view(), h, w, 0.0);
    (0..NUM_SCALES)
        .map(|s| {
            let (hs, ws) = pyramid.dims(s);
            let m = grid::resize(field.view(), hs, ws);
            masked_mean(m.view(), pyramid.levels[s].view())
        })
        .collect()
}

/// Fits the support signature over `cfg.n_aug` seeded augmentations.
pub fn fit_support(
    image: &Image,
    mask: &BinaryMask,
    extractor: &dyn FeatureExtractor,
    cfg: &EvolutionConfig,
) -> Result<SupportSignature> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let transforms: Vec<_> = (0..cfg.n_aug).map(|_| DihedralTransform::sample(&mut rng)).collect();
    fit_support_with(image, mask, extractor, cfg, &transforms)
}

/// Fits the support signature over an explicit list of augmentations.
pub fn fit_support_with(
    image: &Image,
    mask: &BinaryMask,
    extractor: &dyn FeatureExtractor,
    cfg: &EvolutionConfig,
    transforms: &[DihedralTransform],
) -> Result<SupportSignature> {
    cfg.validate()?;
    check_support(image, mask)?;
    // at most eight distinct transforms; each is evaluated once
    let mut counts: Vec<(DihedralTransform, usize)> = Vec::new();
    let mut slot: HashMap<DihedralTransform, usize> = HashMap::new();
    for t in transforms {
        let k = *slot.entry(*t).or_insert_with(|| {
            counts.push((*t, 0));
            counts.len() - 1
        });
        counts[k].1 += 1;
    }
    let evaluated: Vec<Result<Option<IsolineFeatures>>> = counts
        .par_iter()
        .map(|(t, _)| {
            let img = t.apply_image(image);
            let m = t.apply_plane(mask.view());
            let pyr = extractor.extract(&img)?;
            let d = padded_distance(&m, &pyr)?;
            match isoline_features(d.view(), &pyr, &cfg.isoline_centers) {
                Ok(f) => Ok(Some(f)),
                Err(Error::EmptyRegion) => {
                    log::warn!("augmentation {t:?} left an isoline without weight; skipped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut sum: Option<Vec<Vec<Vec<f64>>>> = None;
    let mut used = 0usize;
    for ((_, count), feats) in counts.iter().zip(evaluated) {
        let Some(f) = feats? else { continue };
        used += count;
        let acc = sum.get_or_insert_with(|| {
            f.values.iter().map(|per| per.iter().map(|v| vec![0.0; v.len()]).collect()).collect()
        });
        for (a_i, f_i) in acc.iter_mut().zip(&f.values) {
            for (a, v) in a_i.iter_mut().zip(f_i) {
                for (x, y) in a.iter_mut().zip(v) {
                    *x += *count as f64 * y;
                }
            }
        }
    }
    let mut iso = sum.ok_or(Error::EmptyRegion)?;
    for v in iso.iter_mut().flatten().flatten() {
        *v /= used as f64;
    }
    let pyr = extractor.extract(image)?;
    let inmean = hard_inside_means(mask, &pyr)?;
    Ok(SupportSignature {
        centers: cfg.isoline_centers.clone(),
        weights: cfg.isoline_weights.clone(),
        iso,
        inmean,
        config_hash: cfg.hash(),
    })
}

fn check_indices(sig: &SupportSignature, query: &IsolineFeatures) -> Result<()> {
    if sig.centers != query.centers {
        return Err(Error::IndexMismatch(format!(
            "support centers {:?}, query centers {:?}",
            sig.centers, query.centers
        )));
    }
    if sig.weights.len() != sig.centers.len() {
        return Err(Error::IndexMismatch("weights and centers differ in length".into()));
    }
    for (a, b) in sig.iso.iter().zip(&query.values) {
        if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
            return Err(Error::IndexMismatch("scale or channel counts differ".into()));
        }
    }
    if sig.iso.len() != query.values.len() {
        return Err(Error::IndexMismatch("isoline counts differ".into()));
    }
    Ok(())
}

fn oneshot_terms(sig: &SupportSignature, query: &IsolineFeatures) -> Result<Vec<Vec<(f64, f64)>>> {
    check_indices(sig, query)?;
    let n_scales = sig.iso.first().map_or(0, |v| v.len());
    let norm = (n_scales * sig.centers.len()) as f64;
    Ok(sig
        .iso
        .iter()
        .zip(&query.values)
        .zip(&sig.weights)
        .map(|((sup_i, qu_i), w)| {
            sup_i
                .iter()
                .zip(qu_i)
                .enumerate()
                .map(|(s, (a, b))| {
                    let coef = w / (1u32 << s) as f64 / a.len() as f64 / norm;
                    let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    (coef, d)
                })
                .collect()
        })
        .collect())
}

/// Weighted distance between support and query isoline features.
pub fn loss_oneshot(sig: &SupportSignature, query: &IsolineFeatures) -> Result<f64> {
    Ok(oneshot_terms(sig, query)?.iter().flatten().map(|(c, d)| c * d).sum())
}

/// Loss and node gradient of the one-shot objective.
pub fn oneshot_objective(
    contour: &Contour,
    pyramid: &FeaturePyramid,
    sig: &SupportSignature,
    cfg: &EvolutionConfig,
) -> Result<(f64, ContourGradient)> {
    let maps = MultiscaleMaps::new(contour, &pyramid.grid(), cfg.k, cfg.mesh_scale, MapKind::Distance)?;
    let eval = IsolineEval::new(&maps.maps, pyramid, &sig.centers)?;
    let terms = oneshot_terms(sig, &eval.features)?;
    let loss = terms.iter().flatten().map(|(c, d)| c * d).sum();
    let cot: Vec<Vec<Vec<f64>>> = terms
        .iter()
        .enumerate()
        .map(|(i, per)| {
            per.iter()
                .enumerate()
                .map(|(s, &(c, d))| {
                    let sup = &sig.iso[i][s];
                    let qu = &eval.features.values[i][s];
                    if d > 0.0 {
                        sup.iter().zip(qu).map(|(a, b)| -c * (a - b) / d).collect()
                    } else {
                        vec![0.0; sup.len()]
                    }
                })
                .collect()
        })
        .collect();
    let dist_cot = eval.vjp(&maps.maps, pyramid, &cot);
    Ok((loss, maps.vjp(contour, &dist_cot)))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// `sum_s 2^-s cos(support in-mean, query in-mean)`; at most 31/16.
///
/// `masks[s]` is the query's final soft mask at scale `s`.
pub fn similarity_score(
    sig: &SupportSignature,
    pyramid: &FeaturePyramid,
    masks: &[Array2<f64>],
) -> Result<f64> {
    let mut score = 0.0;
    for (s, (sup, m)) in sig.inmean.iter().zip(masks).enumerate() {
        let qu = masked_mean(m.view(), pyramid.levels[s].view())?;
        if qu.len() != sup.len() {
            return Err(Error::ChannelMismatch {
                expected: sup.len(),
                found: qu.len(),
            });
        }
        score += cosine(sup, &qu) / (1u32 << s) as f64;
    }
    Ok(score)
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub contour: Contour,
    pub score: f64,
    pub trace: EvolutionTrace,
    /// Set when the contour collapsed or lost its interior; the score is 0.
    pub rejected: bool,
}

pub fn predict_query_pyramid(
    sig: &SupportSignature,
    pyramid: &FeaturePyramid,
    init: &Contour,
    cfg: &EvolutionConfig,
) -> Result<Prediction> {
    let dims = (pyramid.image_height, pyramid.image_width);
    let (contour, trace) = descend(init, cfg, dims, &mut |c: &Contour| {
        oneshot_objective(c, pyramid, sig, cfg)
    })?;
    let rejected_out = |contour: Contour, trace: EvolutionTrace| Prediction {
        contour,
        score: 0.0,
        trace,
        rejected: true,
    };
    if matches!(trace.stop, StopReason::Collapsed | StopReason::Degenerate) {
        return Ok(rejected_out(contour, trace));
    }
    let masks = MultiscaleMaps::new(&contour, &pyramid.grid(), cfg.k, cfg.mesh_scale, MapKind::Mask)?;
    match similarity_score(sig, pyramid, &masks.maps) {
        Ok(score) => Ok(Prediction {
            contour,
            score,
            trace,
            rejected: false,
        }),
        Err(Error::EmptyRegion) => Ok(rejected_out(contour, trace)),
        Err(e) => Err(e),
    }
}

pub fn predict_query(
    sig: &SupportSignature,
    image: &Image,
    extractor: &dyn FeatureExtractor,
    init: &Contour,
    cfg: &EvolutionConfig,
) -> Result<Prediction> {
    cfg.validate()?;
    let pyramid = extractor.extract(image)?;
    predict_query_pyramid(sig, &pyramid, init, cfg)
}
