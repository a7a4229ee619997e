//! Synthetic scenes with known ground truth: a flat disk, and tubule-like
//! objects (white lumen ringed by dark nuclei) on a pink texture.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::features::Image;
use crate::region_stats::BinaryMask;

/// Disk of value `fg` on a `bg` background. `center` and `radius` are in
/// normalized units; a pixel belongs to the disk when its center does.
pub fn disk_image(size: usize, center: [f64; 2], radius: f64, fg: f64, bg: f64) -> (Image, BinaryMask) {
    let mask = disk_mask(size, size, center, radius);
    let image = Image::from_fn(size, size, |i, j| {
        let v = if mask[[i, j]] { fg } else { bg };
        [v, v, v]
    });
    (image, mask)
}

pub fn disk_mask(h: usize, w: usize, center: [f64; 2], radius: f64) -> BinaryMask {
    Array2::from_shape_fn((h, w), |(i, j)| {
        let x = (j as f64 + 0.5) / w as f64;
        let y = (i as f64 + 0.5) / h as f64;
        (x - center[0]).hypot(y - center[1]) <= radius
    })
}

const PINK: [f64; 3] = [0.92, 0.68, 0.80];
const CYTOPLASM: [f64; 3] = [0.80, 0.50, 0.68];
const LUMEN: [f64; 3] = [0.97, 0.96, 0.98];
const NUCLEUS: [f64; 3] = [0.30, 0.16, 0.45];

fn pink_texture(rng: &mut ChaCha8Rng, size: usize) -> Image {
    // smooth random field: sum of a few random planar waves plus pixel noise
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let f = rng.gen_range(4.0..14.0);
            (a.cos() * f, a.sin() * f, rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.01..0.03))
        })
        .collect();
    let noise: Vec<f64> = (0..size * size).map(|_| rng.gen_range(-0.02..0.02)).collect();
    Image::from_fn(size, size, |i, j| {
        let x = j as f64 / size as f64;
        let y = i as f64 / size as f64;
        let t: f64 = waves
            .iter()
            .map(|(fx, fy, ph, amp)| amp * (std::f64::consts::TAU * (fx * x + fy * y) + ph).sin())
            .sum::<f64>()
            + noise[i * size + j];
        [PINK[0] + t, PINK[1] + t, PINK[2] + t]
    })
}

fn paint_disk(img: &mut Image, center: [f64; 2], radius: f64, rgb: [f64; 3]) {
    let (h, w) = (img.height(), img.width());
    for i in 0..h {
        for j in 0..w {
            let x = (j as f64 + 0.5) / w as f64;
            let y = (i as f64 + 0.5) / h as f64;
            if (x - center[0]).hypot(y - center[1]) <= radius {
                img.set_pixel(i, j, rgb);
            }
        }
    }
}

/// Geometry of one generated tubule, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Tubule {
    pub center: [f64; 2],
    pub outer_radius: f64,
    pub lumen_radius: f64,
}

/// Tubule centered in a `size x size` patch: a white lumen, a cytoplasm
/// ring and a ring of dark nuclei on pink texture. The mask is the outer
/// disk.
pub fn tubule_image(rng: &mut ChaCha8Rng, size: usize) -> (Image, BinaryMask, Tubule) {
    let mut img = pink_texture(rng, size);
    let center = [0.5 + rng.gen_range(-0.03..0.03), 0.5 + rng.gen_range(-0.03..0.03)];
    let outer = rng.gen_range(0.27..0.33);
    let lumen = outer * rng.gen_range(0.6..0.7);
    paint_disk(&mut img, center, outer, CYTOPLASM);
    let n = rng.gen_range(14..19);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let ring = 0.5 * (lumen + outer);
    let blob = 0.4 * (outer - lumen);
    for k in 0..n {
        let a = phase + std::f64::consts::TAU * k as f64 / n as f64 + rng.gen_range(-0.1..0.1);
        let r = ring + rng.gen_range(-0.02..0.02) * outer;
        let c = [center[0] + r * a.cos(), center[1] + r * a.sin()];
        paint_disk(&mut img, c, blob * rng.gen_range(0.85..1.15), NUCLEUS);
    }
    paint_disk(&mut img, center, lumen, LUMEN);
    let mask = disk_mask(size, size, center, outer);
    (
        img,
        mask,
        Tubule {
            center,
            outer_radius: outer,
            lumen_radius: lumen,
        },
    )
}

/// Scattered nuclei on pink texture, without lumen or tubule structure.
pub fn blob_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let mut img = pink_texture(rng, size);
    let n = rng.gen_range(8..16);
    for _ in 0..n {
        let c = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
        paint_disk(&mut img, c, rng.gen_range(0.03..0.06), NUCLEUS);
    }
    img
}

/// A white disk on pink texture: a lumen without the nuclear ring.
pub fn bare_lumen_image(rng: &mut ChaCha8Rng, size: usize) -> (Image, BinaryMask) {
    let mut img = pink_texture(rng, size);
    let center = [0.5 + rng.gen_range(-0.03..0.03), 0.5 + rng.gen_range(-0.03..0.03)];
    let r = rng.gen_range(0.17..0.22);
    paint_disk(&mut img, center, r, LUMEN);
    (img, disk_mask(size, size, center, r))
}

/// Tiles of `tile x tile` pixels laid out row by row on a square grid: a
/// tubule for each `true` in `kinds`, a bare lumen for each `false`, plain
/// texture in the leftover cells. Returns the image and the outer mask of
/// every tubule in the overview frame.
pub fn overview_image(rng: &mut ChaCha8Rng, tile: usize, kinds: &[bool]) -> (Image, Vec<BinaryMask>) {
    let per_row = (kinds.len() as f64).sqrt().ceil().max(1.0) as usize;
    let rows = kinds.len().div_ceil(per_row).max(1);
    let (h, w) = (rows * tile, per_row * tile);
    let mut img = Image::filled(h, w, PINK);
    let mut masks = Vec::new();
    for cell in 0..rows * per_row {
        let (r0, c0) = ((cell / per_row) * tile, (cell % per_row) * tile);
        let (patch, mask) = match kinds.get(cell) {
            Some(true) => {
                let (p, m, _) = tubule_image(rng, tile);
                (p, Some(m))
            }
            Some(false) => (bare_lumen_image(rng, tile).0, None),
            None => (pink_texture(rng, tile), None),
        };
        for i in 0..tile {
            for j in 0..tile {
                img.set_pixel(r0 + i, c0 + j, patch.pixel(i, j));
            }
        }
        if let Some(m) = mask {
            let mut full = Array2::from_elem((h, w), false);
            full.slice_mut(ndarray::s![r0..r0 + tile, c0..c0 + tile]).assign(&m);
            masks.push(full);
        }
    }
    (img, masks)
}
