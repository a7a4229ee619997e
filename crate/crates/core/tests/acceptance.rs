//! Acceptance run: one PASS/FAIL line per criterion, then a non-zero exit if
//! any failed. Built with `harness = false` so criteria run one at a time and
//! their timings are not shared with other tests.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use contourflow::contour_ops::{clean, find_self_intersections};
use contourflow::evolution::*;
use contourflow::features::{
    extract_pyramid_conv, extract_pyramid_identity, random_vgg16, ConvExtractor, FeaturePyramid, IdentityExtractor, Image,
};
use contourflow::geometry::{contour_to_mask, polygon_area, MapKind, MultiscaleMaps};
use contourflow::grid::{self, NUM_SCALES};
use contourflow::pipeline::{choose_threshold, dice, f1_at, panoptic_quality};
use contourflow::region_stats::{isoline_kernel, isoline_sigma, mask_to_field, squared_distance_to_background, BinaryMask};
use contourflow::synthetic::{blob_image, disk_image, disk_mask, tubule_image};
use contourflow::{Contour, PixelGrid};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn hard(contour: &Contour, h: usize, w: usize) -> BinaryMask {
    contour_to_mask(contour, &PixelGrid::new(h, w), 1e5).values.mapv(|v| v > 0.5)
}

// 1. soft mask against the rasterized disk
fn mask_error(n_nodes: usize, k: f64) -> f64 {
    let size = 128;
    let (center, r) = ([0.5, 0.5], 0.3);
    let c = Contour::circle(center, r, n_nodes);
    let soft = contour_to_mask(&c, &PixelGrid::new(size, size), k).values;
    let disk = disk_mask(size, size, center, r);
    soft.iter().zip(&disk).map(|(s, &d)| (s - d as u8 as f64).abs()).sum::<f64>() / (size * size) as f64
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

fn mask_fidelity() -> Outcome {
    let t = Instant::now();
    let err = mask_error(100, 1e5);
    let secs = t.elapsed().as_secs_f64();
    let by_k: Vec<f64> = [1e1, 1e2, 1e3, 1e4, 1e5].iter().map(|&k| mask_error(100, k)).collect();
    let by_n: Vec<f64> = [10, 25, 50, 100].iter().map(|&n| mask_error(n, 1e5)).collect();
    let mono = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        err < 0.01 && mono(&by_k) && mono(&by_n) && secs < 1.0,
        format!("L1 {err:.2e} in {secs:.3} s; by k {}; by n {}", sci(&by_k), sci(&by_n)),
    )
}

// 2. every adjoint against central differences
fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let (mut checked, mut skipped) = (0, 0);
    let mut failures = Vec::new();
    for seed in 0..3 {
        for (name, tol, r) in common::gradsuite::all(seed) {
            checked += r.checked;
            skipped += r.skipped;
            if !r.ok() {
                failures.push(format!("{name} seed {seed}: {} off, worst {:.1e} (tol {tol:.0e})", r.failed.len(), r.worst));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < 30.0,
        format!("{checked} coordinates checked, {skipped} switch skipped, {} failing checks in {secs:.1} s {failures:?}", failures.len()),
    )
}

// 3. sweep line against all pairs, clean
fn sweep_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut crossings, mut bad) = (0, Vec::new());
    for trial in 0..1000 {
        let c = common::random_polygon(&mut rng, 50);
        match common::compare_with_oracle(&c) {
            Ok(k) => crossings += k,
            Err(e) => bad.push(format!("sweep {trial}: {e}")),
        }
        match clean(&c) {
            Ok(once) => {
                if !find_self_intersections(&once).is_empty() {
                    bad.push(format!("clean {trial}: not simple"));
                }
                if clean(&once).ok().as_ref() != Some(&once) {
                    bad.push(format!("clean {trial}: not idempotent"));
                }
            }
            Err(e) => bad.push(format!("clean {trial}: {e}")),
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs < 30.0,
        format!("1000 polygons, {crossings} crossings, {} mismatches in {secs:.2} s {:?}", bad.len(), bad.first()),
    )
}

// 4. distance transform against brute force
fn brute_sq_edt(mask: &BinaryMask) -> Array2<f64> {
    let (h, w) = mask.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        if !mask[[i, j]] {
            return 0.0;
        }
        // nearest background pixel, the frame around the image included
        let mut best = i64::MAX;
        for a in -1..=h as i64 {
            for b in -1..=w as i64 {
                let outside = a < 0 || b < 0 || a >= h as i64 || b >= w as i64;
                if outside || !mask[[a as usize, b as usize]] {
                    best = best.min((a - i as i64).pow(2) + (b - j as i64).pow(2));
                }
            }
        }
        best as f64
    })
}

fn edt_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..200 {
        let p = rng.gen_range(0.3..0.97);
        let mask = Array2::from_shape_fn((32, 32), |_| rng.gen_bool(p));
        bad += (squared_distance_to_background(&mask) != brute_sq_edt(&mask)) as usize;
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(bad == 0 && secs < 10.0, format!("{bad}/200 masks differ, {secs:.2} s"))
}

// 5. unsupervised run on the flat disk from three starts
fn chan_vese() -> Outcome {
    let t = Instant::now();
    let (img, gt) = disk_image(128, [0.5, 0.5], 0.25, 0.9, 0.2);
    let cfg = EvolutionConfig::real_life();
    let pyr = extract_pyramid_identity(&img);
    let inits = [
        ("inside", Contour::circle([0.5, 0.5], 0.12, cfg.n_nodes)),
        ("partial", Contour::circle([0.65, 0.55], 0.22, cfg.n_nodes)),
        ("enclosing", Contour::circle([0.5, 0.5], 0.42, cfg.n_nodes)),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, init) in inits {
        let (out, trace) = evolve_unsupervised_pyramid(&pyr, &init, &cfg).unwrap();
        let d = dice(&hard(&out, 128, 128), &gt).unwrap();
        ok &= d > 0.95 && trace.len() <= 70;
        parts.push(format!("{name} Dice {d:.4} ({} epochs)", trace.len()));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(ok && secs < 60.0, format!("{} in {secs:.1} s", parts.join(", ")))
}

// 6. area term on a constant image
fn area_force() -> Outcome {
    let t = Instant::now();
    let img = Image::filled(64, 64, [0.5; 3]);
    let mut cfg = EvolutionConfig::histology();
    cfg.lambda_area = 5.0;
    cfg.snapshot_stride = 1;
    let init = Contour::circle([0.5, 0.5], 0.1, cfg.n_nodes);
    let (out, trace) = evolve_unsupervised(&img, &IdentityExtractor, &init, &cfg).unwrap();
    let clamped = |c: &Contour| c.nodes.iter().flatten().any(|&v| v <= 0.0 || v >= 1.0);
    // epochs until a node first reaches the border
    let free = trace.snapshots.iter().position(|(_, c)| clamped(c)).unwrap_or(trace.snapshots.len());
    let mut areas: Vec<f64> = trace.snapshots.iter().map(|(_, c)| polygon_area(c)).collect();
    areas.push(polygon_area(&out));
    let upto = if free < trace.snapshots.len() { free } else { areas.len() - 1 };
    let strict = areas[..=upto].windows(2).all(|w| w[1] > w[0]);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        strict && secs < 10.0,
        format!(
            "area {:.4} -> {:.4}, strictly growing over the {upto} epochs before clamping ({} run), {secs:.1} s",
            areas[0],
            areas[upto],
            trace.len()
        ),
    )
}

// 7. isoline widths
fn sigma_rule() -> Outcome {
    let mut worst = 0.0f64;
    for centers in [vec![0.0, 1.0], vec![0.0, 0.5, 1.0]] {
        let sig = isoline_sigma(&centers).unwrap();
        for i in 0..centers.len() - 1 {
            let m = 0.5 * (centers[i] + centers[i + 1]);
            let sum = isoline_kernel(m, centers[i], sig[i]) + isoline_kernel(m, centers[i + 1], sig[i + 1]);
            worst = worst.max((sum - 0.5).abs());
        }
    }
    outcome(worst <= 1e-12, format!("worst |sum - 1/2| = {worst:.1e}"))
}

// 8. one-shot on synthetic tubules
fn one_shot_proxy() -> Outcome {
    let t = Instant::now();
    let size = 64;
    let ext = ConvExtractor::new(&random_vgg16(7)).unwrap();
    let mut cfg = EvolutionConfig::one_shot();
    cfg.n_aug = 20;
    cfg.n_epochs = 150;
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let (simg, smask, _) = tubule_image(&mut rng, size);
    let sig = fit_support(&simg, &smask, &ext, &cfg).unwrap();
    let init = Contour::circle([0.5, 0.5], 0.2, cfg.n_nodes);
    let (mut scores, mut labels, mut dices) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..20 {
        let (img, gt, _) = tubule_image(&mut rng, size);
        let p = predict_query(&sig, &img, &ext, &init, &cfg).unwrap();
        dices.push(dice(&hard(&p.contour, size, size), &gt).unwrap());
        scores.push(p.score);
        labels.push(true);
    }
    for _ in 0..20 {
        let img = blob_image(&mut rng, size);
        scores.push(predict_query(&sig, &img, &ext, &init, &cfg).unwrap().score);
        labels.push(false);
    }
    let mean_dice = dices.iter().sum::<f64>() / dices.len() as f64;
    let choice = choose_threshold(&scores, &labels).unwrap();
    let correct = scores.iter().zip(&labels).filter(|(&s, &l)| (s > choice.threshold) == l).count();
    let accuracy = correct as f64 / scores.len() as f64;
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mean_dice > 0.8 && accuracy > 0.8 && secs < 300.0,
        format!(
            "mean Dice {mean_dice:.3} (min {:.3}), accuracy {accuracy:.3} at threshold {:.4} (F1 {:.3}), {secs:.0} s",
            dices.iter().cloned().fold(1.0, f64::min),
            choice.threshold,
            choice.f1
        ),
    )
}

// 9. cosine score bound
fn similarity_bound() -> Outcome {
    let (img, mask, _) = tubule_image(&mut ChaCha8Rng::seed_from_u64(12), 64);
    let cfg = EvolutionConfig::one_shot();
    let sig = fit_support_with(&img, &mask, &IdentityExtractor, &cfg, &[DihedralTransform::default()]).unwrap();
    let pyr = extract_pyramid_identity(&img);
    let field = mask_to_field(&mask);
    let same: Vec<Array2<f64>> = (0..NUM_SCALES)
        .map(|s| {
            let (h, w) = pyr.dims(s);
            grid::resize(field.view(), h, w)
        })
        .collect();
    let identical = similarity_score(&sig, &pyr, &same).unwrap();
    let bound = 31.0 / 16.0;
    // random signed features and random contours
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..200 {
        let levels = (0..NUM_SCALES)
            .map(|s| {
                let (h, w) = pyr.dims(s);
                Array3::from_shape_fn((3, h, w), |_| rng.gen_range(-1.0..1.0))
            })
            .collect();
        let q = FeaturePyramid::new(levels, 64, 64);
        let c = Contour::circle([rng.gen_range(0.4..0.6), rng.gen_range(0.4..0.6)], rng.gen_range(0.2..0.4), 40);
        let masks = MultiscaleMaps::new(&c, &q.grid(), 1e5, 0, MapKind::Mask).unwrap().maps;
        worst = worst.max(similarity_score(&sig, &q, &masks).unwrap());
    }
    outcome(
        (identical - bound).abs() <= 1e-6 && worst <= bound + 1e-6,
        format!("identical {identical:.9} vs {bound}, highest of 200 random queries {worst:.4}"),
    )
}

// 10. coarse mesh for the geometry kernel
fn mesh_speedup() -> Outcome {
    let g = PixelGrid::new(256, 256);
    let c = Contour::circle([0.5, 0.5], 0.3, 100);
    let time = |mesh: usize| {
        let mut times: Vec<f64> = (0..5)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(MultiscaleMaps::new(&c, &g, 1e5, mesh, MapKind::Mask).unwrap());
                t.elapsed().as_secs_f64()
            })
            .collect();
        times.sort_by(f64::total_cmp);
        times[2]
    };
    let fine = MultiscaleMaps::new(&c, &g, 1e5, 0, MapKind::Mask).unwrap();
    let coarse = MultiscaleMaps::new(&c, &g, 1e5, 2, MapKind::Mask).unwrap();
    let diff = &fine.maps[0] - &coarse.maps[0];
    let mean = diff.mapv(f64::abs).mean().unwrap();
    let max = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (t0, t2) = (time(0), time(2));
    let speedup = t0 / t2;
    outcome(
        mean < 0.05 && speedup >= 4.0,
        format!("mean deviation {mean:.4} (max {max:.3}), {:.1} ms vs {:.1} ms = {speedup:.1}x", t0 * 1e3, t2 * 1e3),
    )
}

// 11. conv trunk against a direct f64 forward pass
fn naive_forward(image: &Image, store: &contourflow::features::WeightStore, ext: &ConvExtractor) -> Vec<Array3<f64>> {
    let (h, w) = (image.height(), image.width());
    let mut x = Array3::from_shape_fn((3, h, w), |(c, i, j)| {
        (image.data[[c, i, j]] as f32 as f64 - ext.mean[c] as f64) / ext.std[c] as f64
    });
    let mut levels = Vec::new();
    let mut c_in = 3;
    for (b, &(n_conv, width)) in contourflow::features::VGG16_BLOCKS.iter().enumerate() {
        for k in 0..n_conv {
            let wt = store.get(&format!("block{}.conv{}.weight", b + 1, k + 1)).unwrap();
            let bias = store.get(&format!("block{}.conv{}.bias", b + 1, k + 1)).unwrap();
            let (_, hh, ww) = x.dim();
            let mut y = Array3::<f64>::zeros((width, hh, ww));
            for o in 0..width {
                for i in 0..hh {
                    for j in 0..ww {
                        let mut acc = bias.data[o] as f64;
                        for c in 0..c_in {
                            for di in 0..3 {
                                for dj in 0..3 {
                                    let (ii, jj) = (i as i64 + di as i64 - 1, j as i64 + dj as i64 - 1);
                                    if ii < 0 || jj < 0 || ii >= hh as i64 || jj >= ww as i64 {
                                        continue;
                                    }
                                    let wv = wt.data[((o * c_in + c) * 3 + di) * 3 + dj] as f64;
                                    acc += wv * x[[c, ii as usize, jj as usize]];
                                }
                            }
                        }
                        y[[o, i, j]] = acc.max(0.0);
                    }
                }
            }
            x = y;
            c_in = width;
        }
        levels.push(x.clone());
        let (c, hh, ww) = x.dim();
        x = Array3::from_shape_fn((c, hh / 2, ww / 2), |(ch, i, j)| {
            let v = [x[[ch, 2 * i, 2 * j]], x[[ch, 2 * i + 1, 2 * j]], x[[ch, 2 * i, 2 * j + 1]], x[[ch, 2 * i + 1, 2 * j + 1]]];
            v.into_iter().fold(f64::NEG_INFINITY, f64::max)
        });
    }
    levels
}

fn conv_oracle() -> Outcome {
    let t = Instant::now();
    let store = random_vgg16(3);
    let ext = ConvExtractor::new(&store).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = Image::new(Array3::from_shape_fn((3, 32, 32), |_| rng.gen()));
    let fast = extract_pyramid_conv(&img, &ext).unwrap();
    let slow = naive_forward(&img, &store, &ext);
    let mut worst = 0.0f64;
    let mut shapes_ok = true;
    for (a, b) in fast.levels.iter().zip(&slow) {
        shapes_ok &= a.dim() == b.dim();
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        worst = worst.max(diff / scale);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        shapes_ok && worst <= 1e-4 && secs < 30.0,
        format!("worst per-level deviation {worst:.1e} of the level maximum, {secs:.1} s"),
    )
}

// 12. metrics
fn exhaustive_best_f1(scores: &[f64], labels: &[bool]) -> f64 {
    let mut best = 0.0f64;
    for &c in scores.iter().chain([f64::NEG_INFINITY].iter()) {
        let (mut tp, mut fp, mut fnn) = (0, 0, 0);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= c, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        if tp > 0 {
            best = best.max(2.0 * tp as f64 / (2 * tp + fp + fnn) as f64);
        }
    }
    best
}

fn row_mask(row: &str) -> BinaryMask {
    Array2::from_shape_fn((1, row.len()), |(_, j)| row.as_bytes()[j] == b'#')
}

fn metrics() -> Outcome {
    let mut bad = Vec::new();
    let g1 = row_mask("#####.....");
    let g2 = row_mask("......####");
    let p = row_mask("####......");
    let pq = panoptic_quality(&[p], &[g1.clone(), g2]).unwrap().pq;
    let expect = (4.0 / 5.0) / (1.0 + 0.0 / 2.0 + 1.0 / 2.0);
    if pq != expect {
        bad.push(format!("PQ {pq} vs {expect}"));
    }
    let empty = row_mask("..........");
    let conventions = [
        (dice(&empty, &empty).unwrap(), 1.0),
        (dice(&g1, &g1).unwrap(), 1.0),
        (dice(&g1, &empty).unwrap(), 0.0),
        (dice(&g1, &row_mask("...##.....")).unwrap(), 2.0 * 2.0 / 7.0),
        (panoptic_quality(&[], &[]).unwrap().pq, 1.0),
        (panoptic_quality(&[], &[g1.clone()]).unwrap().pq, 0.0),
    ];
    for (i, (got, want)) in conventions.iter().enumerate() {
        if got != want {
            bad.push(format!("convention {i}: {got} vs {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut sweeps = 0;
    while sweeps < 1000 {
        let n = rng.gen_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..15) as f64 / 10.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        if !labels.contains(&true) {
            continue;
        }
        sweeps += 1;
        let c = choose_threshold(&scores, &labels).unwrap();
        let want = exhaustive_best_f1(&scores, &labels);
        if c.f1 != want || f1_at(&scores, &labels, c.threshold) != want {
            bad.push(format!("sweep {sweeps}: {} vs {want}", c.f1));
        }
    }
    outcome(bad.is_empty(), format!("PQ {pq:.4}, 6 conventions, 1000 threshold sweeps; {} mismatches {:?}", bad.len(), bad.first()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("mask fidelity", mask_fidelity),
        ("gradient suite", gradient_suite),
        ("sweep-line oracle", sweep_oracle),
        ("distance transform oracle", edt_oracle),
        ("unsupervised disk from three starts", chan_vese),
        ("area force", area_force),
        ("isoline sigma rule", sigma_rule),
        ("one-shot tubule proxy", one_shot_proxy),
        ("similarity bound", similarity_bound),
        ("mesh-scale speedup", mesh_speedup),
        ("conv extractor oracle", conv_oracle),
        ("metrics arithmetic", metrics),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let o = run();
        failed += !o.pass as usize;
        println!("{} {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
