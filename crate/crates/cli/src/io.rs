use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use contourflow::features::Image;
use contourflow::pipeline::label_components;
use contourflow::region_stats::BinaryMask;
use contourflow::geometry::contour_to_mask;
use contourflow::{Contour, PixelGrid};
use image::{GrayImage, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn read_rgb(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .with_context(|| format!("reading image {}", path.display()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::new(Array3::from_shape_fn((3, h as usize, w as usize), |(c, i, j)| {
        img.get_pixel(j as u32, i as u32)[c] as f64 / 255.0
    })))
}

pub fn to_rgb8(image: &Image) -> RgbImage {
    RgbImage::from_fn(image.width() as u32, image.height() as u32, |x, y| {
        let p = image.pixel(y as usize, x as usize);
        Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

pub fn write_rgb(path: &Path, image: &Image) -> Result<()> {
    ensure_parent(path)?;
    to_rgb8(image)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// 8-bit gray mask, foreground where the value is at least 128.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path)
        .with_context(|| format!("reading mask {}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32)[0] >= 128
    }))
}

pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    ensure_parent(path)?;
    let (h, w) = mask.dim();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }])
    })
    .save(path)
    .with_context(|| format!("writing {}", path.display()))
}

/// One instance per 4-connected component.
pub fn instances(mask: &BinaryMask) -> Vec<BinaryMask> {
    let (labels, n) = label_components(mask);
    (1..=n).map(|l| labels.mapv(|v| v == l)).collect()
}

/// Sharpness used to turn a contour into a hard mask.
pub const RASTER_K: f64 = 1e5;

/// Pixels of an `h x w` frame whose soft mask exceeds one half.
pub fn rasterize(contour: &Contour, h: usize, w: usize) -> BinaryMask {
    contour_to_mask(contour, &PixelGrid::new(h, w), RASTER_K).values.mapv(|v| v > 0.5)
}

pub fn read_contour(path: &Path) -> Result<Contour> {
    let s = fs::read_to_string(path).with_context(|| format!("reading contour {}", path.display()))?;
    Contour::from_json(&s).with_context(|| format!("parsing contour {}", path.display()))
}

/// A single contour object or an array of them.
pub fn read_contours(path: &Path) -> Result<Vec<Contour>> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&s).with_context(|| format!("parsing {}", path.display()))?;
    let items = match v {
        serde_json::Value::Array(items) => items,
        one => vec![one],
    };
    items
        .into_iter()
        .map(|item| {
            let c: Contour = serde_json::from_value(item)?;
            Ok(Contour::new(c.nodes)?)
        })
        .collect()
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Files of `dir` with one of `exts`, sorted by name.
pub fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Score with nine significant digits.
pub fn format_score(score: f64) -> String {
    format!("{score:.8e}\n")
}
