use ndarray::Array2;

use super::{descend, EvolutionConfig, EvolutionTrace};
use crate::error::Result;
use crate::features::{FeatureExtractor, FeaturePyramid, Image};
use crate::geometry::{polygon_area, polygon_area_grad, Contour, ContourGradient, MapKind, MultiscaleMaps};
use crate::region_stats::{region_features_multiscale, region_features_vjp, RegionFeatures};

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `-sum_s 2^-s |in_s - out_s| / |f_s| - lambda_area * area`.
pub fn loss_unsupervised(feats: &RegionFeatures, norms: &[f64], area: f64, lambda_area: f64) -> f64 {
    let contrast: f64 = feats
        .inside
        .iter()
        .zip(&feats.outside)
        .zip(norms)
        .enumerate()
        .map(|(s, ((fin, fout), n))| {
            if *n > 0.0 {
                l2_diff(fin, fout) / n / (1u32 << s) as f64
            } else {
                0.0
            }
        })
        .sum();
    -contrast - lambda_area * area
}

/// Loss and node gradient of the unsupervised objective.
pub fn unsupervised_objective(
    contour: &Contour,
    pyramid: &FeaturePyramid,
    cfg: &EvolutionConfig,
) -> Result<(f64, ContourGradient)> {
    let maps = MultiscaleMaps::new(contour, &pyramid.grid(), cfg.k, cfg.mesh_scale, MapKind::Mask)?;
    let feats = region_features_multiscale(&maps.maps, pyramid)?;
    let area = polygon_area(contour);
    let loss = loss_unsupervised(&feats, &pyramid.norms, area, cfg.lambda_area);

    let mut d_in = Vec::with_capacity(feats.inside.len());
    let mut d_out = Vec::with_capacity(feats.inside.len());
    for (s, (fin, fout)) in feats.inside.iter().zip(&feats.outside).enumerate() {
        let diff = l2_diff(fin, fout);
        let n = pyramid.norms[s];
        let c = if diff > 0.0 && n > 0.0 {
            -1.0 / ((1u32 << s) as f64 * n * diff)
        } else {
            0.0
        };
        let g: Vec<f64> = fin.iter().zip(fout).map(|(a, b)| c * (a - b)).collect();
        d_out.push(g.iter().map(|v| -v).collect());
        d_in.push(g);
    }
    let cots: Vec<Array2<f64>> = region_features_vjp(&maps.maps, pyramid, &feats, &d_in, &d_out);
    let mut grad = maps.vjp(contour, &cots);
    if cfg.lambda_area != 0.0 {
        let mut ag = polygon_area_grad(contour);
        ag.scale(-cfg.lambda_area);
        grad.add_assign(&ag);
    }
    Ok((loss, grad))
}

/// Unsupervised evolution on a precomputed pyramid.
pub fn evolve_unsupervised_pyramid(
    pyramid: &FeaturePyramid,
    init: &Contour,
    cfg: &EvolutionConfig,
) -> Result<(Contour, EvolutionTrace)> {
    let dims = (pyramid.image_height, pyramid.image_width);
    descend(init, cfg, dims, &mut |c: &Contour| unsupervised_objective(c, pyramid, cfg))
}

pub fn evolve_unsupervised(
    image: &Image,
    extractor: &dyn FeatureExtractor,
    init: &Contour,
    cfg: &EvolutionConfig,
) -> Result<(Contour, EvolutionTrace)> {
    cfg.validate()?;
    let pyramid = extractor.extract(image)?;
    evolve_unsupervised_pyramid(&pyramid, init, cfg)
}
