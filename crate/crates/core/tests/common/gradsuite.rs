//! Finite-difference checks of every adjoint, shared by the gradient tests
//! and the acceptance run. All use 16-node contours, 32x32 grids, k = 1e3.

use contourflow::evolution::{fit_support_with, oneshot_objective, unsupervised_objective, DihedralTransform, EvolutionConfig};
use contourflow::features::{extract_pyramid_identity, FeaturePyramid, IdentityExtractor, Image};
use contourflow::geometry::{
    contour_to_distance_map, contour_to_distance_map_vjp, contour_to_mask, contour_to_mask_vjp, polygon_area,
    polygon_area_grad, Contour, DistanceMapEval, MapKind, MultiscaleMaps,
};
use contourflow::region_stats::{region_features_multiscale, region_features_vjp, IsolineEval};
use contourflow::synthetic::disk_image;
use contourflow::PixelGrid;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fd::{check, never, FdReport};

pub const K: f64 = 1e3;
pub const SIZE: usize = 32;
pub const GEOMETRY_TOL: f64 = 1e-3;
pub const DISTANCE_TOL: f64 = 1e-3;
pub const END_TO_END_TOL: f64 = 1e-2;
/// Coordinates whose derivative is below this fraction of the largest one
/// are judged against that fraction instead of their own magnitude.
pub const FLOOR: f64 = 1e-3;

pub fn contour16(seed: u64) -> Contour {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = Contour::circle([0.5, 0.5], 0.4, 16);
    Contour::new(
        c.nodes
            .iter()
            .map(|p| [p[0] + rng.gen_range(-0.02..0.02), p[1] + rng.gen_range(-0.02..0.02)])
            .collect(),
    )
    .unwrap()
}

pub fn field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |_| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

pub fn grid() -> PixelGrid {
    PixelGrid::new(SIZE, SIZE)
}

/// Smooth non-constant test image with a disk.
pub fn image() -> Image {
    let (disk, _) = disk_image(SIZE, [0.45, 0.55], 0.28, 0.8, 0.2);
    Image::from_fn(SIZE, SIZE, |i, j| {
        let v = disk.pixel(i, j)[0];
        [v, 0.5 * v + 0.02 * j as f64, 1.0 - v + 0.01 * i as f64]
    })
}

pub fn pyramid() -> FeaturePyramid {
    extract_pyramid_identity(&image())
}

fn distance_switch(mesh: PixelGrid) -> impl Fn(&Contour, &Contour) -> bool {
    move |a, b| {
        let ea = DistanceMapEval::new(a, &mesh, K).unwrap();
        let eb = DistanceMapEval::new(b, &mesh, K).unwrap();
        ea.argmax != eb.argmax || ea.nearest != eb.nearest
    }
}

pub fn mask_vjp(seed: u64) -> FdReport {
    let c = contour16(seed);
    let g = grid();
    let w = field(SIZE, SIZE, &mut ChaCha8Rng::seed_from_u64(seed + 100));
    let grad = contour_to_mask_vjp(&c, &g, K, w.view());
    check(&c, &grad, |c| dot(&contour_to_mask(c, &g, K).values, &w), GEOMETRY_TOL, FLOOR, never)
}

pub fn distance_vjp(seed: u64) -> FdReport {
    let c = contour16(seed);
    let g = grid();
    let w = field(SIZE, SIZE, &mut ChaCha8Rng::seed_from_u64(seed + 200));
    let grad = contour_to_distance_map_vjp(&c, &g, K, w.view()).unwrap();
    check(
        &c,
        &grad,
        |c| dot(&contour_to_distance_map(c, &g, K).unwrap().values, &w),
        DISTANCE_TOL,
        FLOOR,
        distance_switch(g),
    )
}

pub fn area_grad(seed: u64) -> FdReport {
    let c = contour16(seed);
    check(&c, &polygon_area_grad(&c), polygon_area, GEOMETRY_TOL, FLOOR, never)
}

pub fn multiscale_vjp(seed: u64, kind: MapKind, mesh_scale: usize) -> FdReport {
    let c = contour16(seed);
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 300);
    let base = MultiscaleMaps::new(&c, &g, K, mesh_scale, kind).unwrap();
    let cots: Vec<Array2<f64>> = base.maps.iter().map(|m| field(m.dim().0, m.dim().1, &mut rng)).collect();
    let grad = base.vjp(&c, &cots);
    let f = |c: &Contour| {
        let m = MultiscaleMaps::new(c, &g, K, mesh_scale, kind).unwrap();
        m.maps.iter().zip(&cots).map(|(a, b)| dot(a, b)).sum()
    };
    match kind {
        MapKind::Mask => check(&c, &grad, f, GEOMETRY_TOL, FLOOR, never),
        MapKind::Distance => check(&c, &grad, f, DISTANCE_TOL, FLOOR, distance_switch(g.coarsen(mesh_scale))),
    }
}

/// Region means through the soft mask, against random cotangents.
pub fn region_chain(seed: u64) -> FdReport {
    let c = contour16(seed);
    let pyr = pyramid();
    let g = pyr.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 400);
    let maps = MultiscaleMaps::new(&c, &g, K, 0, MapKind::Mask).unwrap();
    let feats = region_features_multiscale(&maps.maps, &pyr).unwrap();
    let d_in: Vec<Vec<f64>> = feats.inside.iter().map(|v| v.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let d_out: Vec<Vec<f64>> = feats.outside.iter().map(|v| v.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let cots = region_features_vjp(&maps.maps, &pyr, &feats, &d_in, &d_out);
    let grad = maps.vjp(&c, &cots);
    let f = |c: &Contour| {
        let m = MultiscaleMaps::new(c, &g, K, 0, MapKind::Mask).unwrap();
        let r = region_features_multiscale(&m.maps, &pyr).unwrap();
        let pair = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> f64 {
            a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| x * y).sum()
        };
        pair(&r.inside, &d_in) + pair(&r.outside, &d_out)
    };
    check(&c, &grad, f, GEOMETRY_TOL, FLOOR, never)
}

/// Isoline features `f_{i,s}` through the soft distance map.
pub fn isoline_chain(seed: u64) -> FdReport {
    let c = contour16(seed);
    let pyr = pyramid();
    let g = pyr.grid();
    let centers = [0.0, 0.5, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
    let maps = MultiscaleMaps::new(&c, &g, K, 0, MapKind::Distance).unwrap();
    let eval = IsolineEval::new(&maps.maps, &pyr, &centers).unwrap();
    let cot: Vec<Vec<Vec<f64>>> = eval
        .features
        .values
        .iter()
        .map(|per| per.iter().map(|v| v.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        .collect();
    let grad = maps.vjp(&c, &eval.vjp(&maps.maps, &pyr, &cot));
    let f = |c: &Contour| {
        let m = MultiscaleMaps::new(c, &g, K, 0, MapKind::Distance).unwrap();
        let e = IsolineEval::new(&m.maps, &pyr, &centers).unwrap();
        e.features.values.iter().flatten().flatten().zip(cot.iter().flatten().flatten()).map(|(a, b)| a * b).sum()
    };
    check(&c, &grad, f, GEOMETRY_TOL, FLOOR, distance_switch(g))
}

pub fn gradient_config() -> EvolutionConfig {
    let mut cfg = EvolutionConfig::histology();
    cfg.k = K;
    cfg.mesh_scale = 0;
    cfg.n_nodes = 16;
    cfg
}

pub fn loss_unsupervised_e2e(seed: u64, lambda_area: f64) -> FdReport {
    let c = contour16(seed);
    let pyr = pyramid();
    let mut cfg = gradient_config();
    cfg.lambda_area = lambda_area;
    let (_, grad) = unsupervised_objective(&c, &pyr, &cfg).unwrap();
    check(&c, &grad, |c| unsupervised_objective(c, &pyr, &cfg).unwrap().0, END_TO_END_TOL, FLOOR, never)
}

pub fn loss_oneshot_e2e(seed: u64) -> FdReport {
    let c = contour16(seed);
    let pyr = pyramid();
    let mut cfg = gradient_config();
    cfg.isoline_centers = vec![0.0, 1.0];
    cfg.isoline_weights = vec![0.1, 0.9];
    let (support, mask) = disk_image(SIZE, [0.5, 0.5], 0.4, 0.7, 0.3);
    let sig = fit_support_with(&support, &mask, &IdentityExtractor, &cfg, &[DihedralTransform::default()]).unwrap();
    let (_, grad) = oneshot_objective(&c, &pyr, &sig, &cfg).unwrap();
    check(
        &c,
        &grad,
        |c| oneshot_objective(c, &pyr, &sig, &cfg).unwrap().0,
        END_TO_END_TOL,
        FLOOR,
        distance_switch(pyr.grid()),
    )
}

/// Every check, by name, with the tolerance it was held to.
pub fn all(seed: u64) -> Vec<(&'static str, f64, FdReport)> {
    vec![
        ("mask vjp", GEOMETRY_TOL, mask_vjp(seed)),
        ("distance map vjp", DISTANCE_TOL, distance_vjp(seed)),
        ("area gradient", GEOMETRY_TOL, area_grad(seed)),
        ("multiscale mask mesh 0", GEOMETRY_TOL, multiscale_vjp(seed, MapKind::Mask, 0)),
        ("multiscale mask mesh 1", GEOMETRY_TOL, multiscale_vjp(seed, MapKind::Mask, 1)),
        ("multiscale distance mesh 0", DISTANCE_TOL, multiscale_vjp(seed, MapKind::Distance, 0)),
        ("multiscale distance mesh 1", DISTANCE_TOL, multiscale_vjp(seed, MapKind::Distance, 1)),
        ("region features", GEOMETRY_TOL, region_chain(seed)),
        ("isoline features", GEOMETRY_TOL, isoline_chain(seed)),
        ("unsupervised loss", END_TO_END_TOL, loss_unsupervised_e2e(seed, 0.0)),
        ("unsupervised loss with area", END_TO_END_TOL, loss_unsupervised_e2e(seed, 5.0)),
        ("one-shot loss", END_TO_END_TOL, loss_oneshot_e2e(seed)),
    ]
}
