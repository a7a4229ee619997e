use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use contourflow::features::{random_vgg16, write_container};
use contourflow::synthetic::{bare_lumen_image, blob_image, disk_image, overview_image, tubule_image};
use ndarray::Array2;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::io;
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Bright disk on a dark background.
    Disk,
    /// Lumen ringed by nuclei on pink texture.
    Tubule,
    /// Dark blob on pink texture; its mask is empty.
    Blob,
    /// Lumen without nuclei.
    BareLumen,
    /// Grid of tubule and bare-lumen tiles; the mask holds the tubules.
    Overview,
    /// Random conv extractor weights.
    Weights,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth mask PNG.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Disk radius, normalized.
    #[arg(long, default_value_t = 0.25)]
    pub radius: f64,
    /// Overview tile size in pixels.
    #[arg(long, default_value_t = 96)]
    pub tile: usize,
    #[arg(long, default_value_t = 3)]
    pub tubules: usize,
    #[arg(long, default_value_t = 2)]
    pub lumens: usize,
    /// Overview tile layout JSON.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Tile {
    row0: usize,
    col0: usize,
    size: usize,
    tubule: bool,
}

pub fn run(a: &SynthArgs, m: &mut RunManifest) -> Result<()> {
    m.seed = Some(a.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    if a.kind == SynthKind::Weights {
        io::ensure_parent(&a.out)?;
        write_container(&a.out, &random_vgg16(a.seed))?;
        m.output(&a.out);
        return Ok(());
    }
    if a.layout.is_some() && a.kind != SynthKind::Overview {
        bail!("--layout only applies to overview");
    }
    let (image, mask) = match a.kind {
        SynthKind::Disk => disk_image(a.size, [0.5, 0.5], a.radius, 0.9, 0.2),
        SynthKind::Tubule => {
            let (img, mask, _) = tubule_image(&mut rng, a.size);
            (img, mask)
        }
        SynthKind::Blob => (blob_image(&mut rng, a.size), Array2::from_elem((a.size, a.size), false)),
        SynthKind::BareLumen => bare_lumen_image(&mut rng, a.size),
        SynthKind::Overview => {
            let kinds: Vec<bool> = (0..a.tubules + a.lumens).map(|i| i < a.tubules).collect();
            let (img, masks) = overview_image(&mut rng, a.tile, &kinds);
            let mut union = Array2::from_elem((img.height(), img.width()), false);
            for mk in &masks {
                union.zip_mut_with(mk, |u, &v| *u |= v);
            }
            if let Some(path) = &a.layout {
                let per_row = img.width() / a.tile;
                let tiles: Vec<Tile> = kinds
                    .iter()
                    .enumerate()
                    .map(|(cell, &tubule)| Tile {
                        row0: cell / per_row * a.tile,
                        col0: cell % per_row * a.tile,
                        size: a.tile,
                        tubule,
                    })
                    .collect();
                io::write_json(path, &tiles)?;
                m.output(path);
            }
            (img, union)
        }
        SynthKind::Weights => unreachable!(),
    };
    io::write_rgb(&a.out, &image)?;
    m.output(&a.out);
    if let Some(p) = &a.mask {
        io::write_mask(p, &mask)?;
        m.output(p);
    }
    Ok(())
}
