//! Patch-level plumbing: stain normalization, candidate extraction from an
//! overview raster, score thresholding and evaluation metrics.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Matrix3x2, SymmetricEigen, Vector3};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::contour_ops::resample_equidistant;
use crate::error::{Error, Result};
use crate::features::Image;
use crate::geometry::Contour;
use crate::region_stats::BinaryMask;

/// Optical-density norm below which a pixel counts as background.
pub const OD_THRESHOLD: f64 = 0.15;
pub const MIN_TISSUE_PIXELS: usize = 100;

/// Target stain matrix (hematoxylin, eosin as unit OD vectors) and the 99th
/// percentile concentrations to map onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StainReference {
    pub stains: [[f64; 3]; 2],
    pub max_concentrations: [f64; 2],
}

impl Default for StainReference {
    fn default() -> Self {
        Self {
            stains: [[0.5626, 0.7201, 0.4062], [0.2159, 0.8012, 0.5581]],
            max_concentrations: [1.9705, 1.0308],
        }
    }
}

impl StainReference {
    fn matrix(&self) -> Matrix3x2<f64> {
        let [h, e] = self.stains;
        Matrix3x2::new(h[0], e[0], h[1], e[1], h[2], e[2])
    }
}

/// Linear-interpolated percentile of an ascending slice, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty set");
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn optical_density(image: &Image) -> Vec<Vector3<f64>> {
    let (h, w) = (image.height(), image.width());
    let mut od = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let p = image.pixel(i, j);
            od.push(Vector3::from_fn(|c, _| -p[c].max(1e-6).log10()));
        }
    }
    od
}

/// Estimated stain matrix of an image: columns are hematoxylin and eosin.
pub fn estimate_stains(image: &Image) -> Result<Matrix3x2<f64>> {
    let od = optical_density(image);
    let tissue: Vec<&Vector3<f64>> = od.iter().filter(|v| v.norm() > OD_THRESHOLD).collect();
    if tissue.len() < MIN_TISSUE_PIXELS {
        return Err(Error::InsufficientTissue(tissue.len()));
    }
    let n = tissue.len() as f64;
    let mean = tissue.iter().fold(Vector3::zeros(), |a, v| a + *v) / n;
    let cov = tissue
        .iter()
        .fold(Matrix3::zeros(), |a, v| a + (*v - mean) * (*v - mean).transpose())
        / (n - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let mut e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    if e1.sum() < 0.0 {
        e1 = -e1;
    }
    if e2.sum() < 0.0 {
        e2 = -e2;
    }
    let angles = sorted(tissue.iter().map(|v| v.dot(&e2).atan2(v.dot(&e1))).collect());
    let lo = percentile(&angles, 1.0);
    let hi = percentile(&angles, 99.0);
    let v_lo = e1 * lo.cos() + e2 * lo.sin();
    let v_hi = e1 * hi.cos() + e2 * hi.sin();
    // hematoxylin has the larger red optical density
    let (hem, eos) = if v_lo[0] > v_hi[0] { (v_lo, v_hi) } else { (v_hi, v_lo) };
    Ok(Matrix3x2::from_columns(&[hem, eos]))
}

/// Macenko normalization onto `reference`. Output is clipped to `[0, 1]`.
pub fn macenko_normalize(image: &Image, reference: &StainReference) -> Result<Image> {
    let stains = estimate_stains(image)?;
    let pinv = stains
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidConfig(format!("degenerate stain matrix: {e}")))?;
    let od = optical_density(image);
    let conc: Vec<[f64; 2]> = od
        .iter()
        .map(|v| {
            let c = pinv * v;
            [c[0], c[1]]
        })
        .collect();
    let mut scale = [0.0; 2];
    for s in 0..2 {
        let p99 = percentile(&sorted(conc.iter().map(|c| c[s]).collect()), 99.0);
        scale[s] = if p99 > 0.0 { reference.max_concentrations[s] / p99 } else { 1.0 };
    }
    let target = reference.matrix();
    let (h, w) = (image.height(), image.width());
    Ok(Image::from_fn(h, w, |i, j| {
        let c = conc[i * w + j];
        let v = target * nalgebra::Vector2::new(c[0] * scale[0], c[1] * scale[1]);
        [0, 1, 2].map(|k| 10f64.powf(-v[k]).clamp(0.0, 1.0))
    }))
}

fn saturation(p: [f64; 3]) -> f64 {
    let mx = p[0].max(p[1]).max(p[2]);
    let mn = p[0].min(p[1]).min(p[2]);
    if mx > 0.0 {
        (mx - mn) / mx
    } else {
        0.0
    }
}

/// 3x3 box filter over the in-bounds neighbourhood; `all` selects erosion.
fn box3(mask: &BinaryMask, all: bool) -> BinaryMask {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut it = (i.saturating_sub(1)..(i + 2).min(h))
            .flat_map(|a| (j.saturating_sub(1)..(j + 2).min(w)).map(move |b| (a, b)));
        if all {
            it.all(|p| mask[p])
        } else {
            it.any(|p| mask[p])
        }
    })
}

/// Tissue iff saturation > 0.05 or gray < 0.85, followed by a 3x3 closing.
/// Out-of-bounds neighbours are ignored by both dilation and erosion.
pub fn tissue_mask(image: &Image) -> BinaryMask {
    let raw = Array2::from_shape_fn((image.height(), image.width()), |(i, j)| {
        saturation(image.pixel(i, j)) > 0.05 || image.gray(i, j) < 0.85
    });
    box3(&box3(&raw, false), true)
}

fn neighbours4(i: usize, j: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
        .into_iter()
        .filter_map(move |(di, dj)| {
            let a = i as i64 + di;
            let b = j as i64 + dj;
            (a >= 0 && b >= 0 && a < h as i64 && b < w as i64).then_some((a as usize, b as usize))
        })
}

/// `mask` plus every background pixel not 4-connected to the border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dim();
    let mut outside = Array2::from_elem((h, w), false);
    let mut queue = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if (i == 0 || j == 0 || i + 1 == h || j + 1 == w) && !mask[[i, j]] {
                outside[[i, j]] = true;
                queue.push_back((i, j));
            }
        }
    }
    while let Some((i, j)) = queue.pop_front() {
        for p in neighbours4(i, j, h, w) {
            if !mask[p] && !outside[p] {
                outside[p] = true;
                queue.push_back(p);
            }
        }
    }
    outside.mapv(|o| !o)
}

/// 4-connected component labels (`0` = background, components numbered from
/// 1 in raster order of their first pixel) and the component count.
pub fn label_components(mask: &BinaryMask) -> (Array2<usize>, usize) {
    let (h, w) = mask.dim();
    let mut labels = Array2::zeros((h, w));
    let mut next = 0;
    let mut queue = VecDeque::new();
    for i in 0..h {
        for j in 0..w {
            if !mask[[i, j]] || labels[[i, j]] != 0 {
                continue;
            }
            next += 1;
            labels[[i, j]] = next;
            queue.push_back((i, j));
            while let Some((a, b)) = queue.pop_front() {
                for p in neighbours4(a, b, h, w) {
                    if mask[p] && labels[p] == 0 {
                        labels[p] = next;
                        queue.push_back(p);
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Square tracing of the region `inside` starting from its first pixel in
/// raster order. Returns boundary pixels `(row, col)` in visiting order.
pub fn square_trace(inside: impl Fn(i64, i64) -> bool, start: (usize, usize)) -> Vec<(usize, usize)> {
    // up, right, down, left
    const DIRS: [(i64, i64); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];
    let s = (start.0 as i64, start.1 as i64);
    let mut out = vec![start];
    // entered the start pixel moving right, from the empty pixel on its left
    let first_dir = 1usize;
    let mut dir = (first_dir + 3) % 4;
    let mut pos = (s.0 + DIRS[dir].0, s.1 + DIRS[dir].1);
    let mut guard = 0usize;
    loop {
        if inside(pos.0, pos.1) {
            if pos == s && dir == first_dir {
                break;
            }
            let p = (pos.0 as usize, pos.1 as usize);
            if out.last() != Some(&p) {
                out.push(p);
            }
            dir = (dir + 3) % 4;
        } else {
            dir = (dir + 1) % 4;
        }
        pos = (pos.0 + DIRS[dir].0, pos.1 + DIRS[dir].1);
        guard += 1;
        if guard > 1 << 26 {
            break;
        }
    }
    if out.len() > 1 && out.last() == Some(&start) {
        out.pop();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateConfig {
    pub percentile: f64,
    pub margin_frac: f64,
    pub min_cc_px: usize,
    pub n_nodes: usize,
}

impl Default for CandidateConfig {
    fn default() -> Self {
        Self {
            percentile: 90.0,
            margin_frac: 0.25,
            min_cc_px: 20,
            n_nodes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// `(row0, col0, row1, col1)` in overview pixels, end exclusive.
    pub bbox: [usize; 4],
    /// Margin added above/below and left/right before clamping.
    pub margin: [usize; 2],
    /// Initial contour normalized to the box frame.
    pub contour: Contour,
    pub cc_id: usize,
}

impl Candidate {
    pub fn crop(&self, overview: &Image) -> Image {
        let [r0, c0, r1, c1] = self.bbox;
        overview.crop(r0, c0, r1, c1)
    }
}

/// Bright connected components inside (hole-filled) tissue, each turned into
/// a box with margin and a traced initial contour. Sorted by `(row0, col0)`.
pub fn extract_candidates(overview: &Image, cfg: &CandidateConfig) -> Result<Vec<Candidate>> {
    if cfg.n_nodes < 3 {
        return Err(Error::InvalidConfig("n_nodes must be >= 3".into()));
    }
    let (h, w) = (overview.height(), overview.width());
    let tissue = tissue_mask(overview);
    let grays: Vec<f64> = tissue
        .indexed_iter()
        .filter(|(_, &t)| t)
        .map(|((i, j), _)| overview.gray(i, j))
        .collect();
    if grays.is_empty() {
        return Ok(Vec::new());
    }
    let threshold = percentile(&sorted(grays), cfg.percentile);
    let region = fill_holes(&tissue);
    let bright = Array2::from_shape_fn((h, w), |(i, j)| region[[i, j]] && overview.gray(i, j) > threshold);
    let (labels, n) = label_components(&bright);

    let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize, 0usize, (0, 0)); n + 1];
    for ((i, j), &l) in labels.indexed_iter() {
        if l == 0 {
            continue;
        }
        let b = &mut boxes[l];
        if b.4 == 0 {
            b.5 = (i, j);
        }
        b.0 = b.0.min(i);
        b.1 = b.1.min(j);
        b.2 = b.2.max(i + 1);
        b.3 = b.3.max(j + 1);
        b.4 += 1;
    }

    let mut out = Vec::new();
    for (id, &(r0, c0, r1, c1, area, start)) in boxes.iter().enumerate().skip(1) {
        if area < cfg.min_cc_px {
            continue;
        }
        let mr = (cfg.margin_frac * (r1 - r0) as f64).round() as usize;
        let mc = (cfg.margin_frac * (c1 - c0) as f64).round() as usize;
        let bbox = [r0.saturating_sub(mr), c0.saturating_sub(mc), (r1 + mr).min(h), (c1 + mc).min(w)];
        let inside = |a: i64, b: i64| {
            a >= 0 && b >= 0 && a < h as i64 && b < w as i64 && labels[[a as usize, b as usize]] == id
        };
        let trace = square_trace(inside, start);
        let (bh, bw) = ((bbox[2] - bbox[0]) as f64, (bbox[3] - bbox[1]) as f64);
        let nodes: Vec<[f64; 2]> = trace
            .iter()
            .map(|&(i, j)| {
                [
                    (j as f64 + 0.5 - bbox[1] as f64) / bw,
                    (i as f64 + 0.5 - bbox[0] as f64) / bh,
                ]
            })
            .collect();
        if nodes.len() < 3 {
            log::debug!("component {id}: boundary of {} pixels, skipped", nodes.len());
            continue;
        }
        let contour = match resample_equidistant(&Contour::new(nodes)?, cfg.n_nodes) {
            Ok(c) => c,
            Err(e) => {
                log::debug!("component {id}: {e}");
                continue;
            }
        };
        out.push(Candidate {
            bbox,
            margin: [mr, mc],
            contour,
            cc_id: id,
        });
    }
    out.sort_by_key(|c| (c.bbox[0], c.bbox[1], c.cc_id));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: f64,
    pub f1: f64,
}

/// `2 tp / (2 tp + fp + fn)` with a score counted positive iff `> threshold`.
pub fn f1_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fnn) as f64
}

/// F1-maximizing threshold among the midpoints of consecutive distinct
/// scores, plus one value below the lowest score (everything positive).
/// Ties go to the lowest threshold.
pub fn choose_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdChoice> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![scores.len()],
            found: vec![labels.len()],
        });
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::InvalidConfig("threshold sweep needs a positive label".into()));
    }
    let mut uniq = sorted(scores.to_vec());
    uniq.dedup();
    let mut cands = vec![uniq[0] - 1.0];
    cands.extend(uniq.windows(2).map(|p| 0.5 * (p[0] + p[1])));
    let mut best = ThresholdChoice {
        threshold: cands[0],
        f1: f1_at(scores, labels, cands[0]),
    };
    for &t in &cands[1..] {
        let f1 = f1_at(scores, labels, t);
        if f1 > best.f1 {
            best = ThresholdChoice { threshold: t, f1 };
        }
    }
    Ok(best)
}

fn check_shape(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.dim().0, a.dim().1],
            found: vec![b.dim().0, b.dim().1],
        });
    }
    Ok(())
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut na = 0;
    let mut nb = 0;
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    (inter, na, nb)
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_shape(a, b)?;
    let (i, na, nb) = overlap(a, b);
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * i as f64 / (na + nb) as f64)
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_shape(a, b)?;
    let (i, na, nb) = overlap(a, b);
    let u = na + nb - i;
    if u == 0 {
        return Ok(1.0);
    }
    Ok(i as f64 / u as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub pairs: Vec<MatchPair>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Pairs with IoU > 0.5. At most one such partner exists per instance when
/// instances within each set are disjoint, so no assignment step is needed;
/// with overlapping instances the first qualifying partner wins.
pub fn match_instances(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<InstanceMatch> {
    let mut m = InstanceMatch::default();
    let mut gt_used = vec![false; gt.len()];
    for (p, pm) in pred.iter().enumerate() {
        let mut hit = None;
        for (g, gm) in gt.iter().enumerate() {
            if gt_used[g] {
                continue;
            }
            let v = iou(pm, gm)?;
            if v > 0.5 {
                hit = Some((g, v));
                break;
            }
        }
        match hit {
            Some((g, v)) => {
                gt_used[g] = true;
                m.pairs.push(MatchPair {
                    pred: p,
                    gt: g,
                    iou: v,
                    dice: dice(pm, &gt[g])?,
                });
            }
            None => m.unmatched_pred.push(p),
        }
    }
    m.unmatched_gt = (0..gt.len()).filter(|&g| !gt_used[g]).collect();
    Ok(m)
}

/// Detection and segmentation scores. `dice_mean` averages over matched
/// pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub dice_mean: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pq: f64,
}

/// Scores pooled over several frames. With no instance on either side every
/// score is 1; otherwise a 0/0 ratio is reported as 0.
pub fn pooled_scores<'a>(matches: impl IntoIterator<Item = &'a InstanceMatch>) -> Scores {
    let (mut tp, mut fp, mut fnn, mut iou_sum, mut dice_sum) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for m in matches {
        tp += m.pairs.len() as f64;
        fp += m.unmatched_pred.len() as f64;
        fnn += m.unmatched_gt.len() as f64;
        iou_sum += m.pairs.iter().map(|p| p.iou).sum::<f64>();
        dice_sum += m.pairs.iter().map(|p| p.dice).sum::<f64>();
    }
    if tp + fp + fnn == 0.0 {
        return Scores {
            dice_mean: 1.0,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            pq: 1.0,
        };
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Scores {
        dice_mean: ratio(dice_sum, tp),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fnn),
        f1: ratio(2.0 * tp, 2.0 * tp + fp + fnn),
        pq: ratio(iou_sum, tp + 0.5 * fp + 0.5 * fnn),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice_mean: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pq: f64,
    pub matches: InstanceMatch,
}

/// Panoptic quality and detection scores of one frame, see [`pooled_scores`].
pub fn panoptic_quality(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<MetricsReport> {
    let matches = match_instances(pred, gt)?;
    let s = pooled_scores([&matches]);
    Ok(MetricsReport {
        dice_mean: s.dice_mean,
        precision: s.precision,
        recall: s.recall,
        f1: s.f1,
        pq: s.pq,
        matches,
    })
}
