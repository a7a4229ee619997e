//! Multi-scale feature pyramids.
//!
//! Features are extracted once per image and held fixed while the contour
//! moves; no gradient ever flows into an extractor. Inputs are padded by edge
//! replication to a multiple of 16 so every scale halves exactly.

mod container;
mod conv;

pub use container::{read_container, write_container, Tensor, WeightStore};
pub use conv::{
    conv_forward, extract_pyramid_conv, maxpool2, random_vgg16, relu_inplace, vgg16_layout,
    ConvExtractor, FeatureMap, IMAGENET_MEAN, IMAGENET_STD, VGG16_BLOCKS,
};

use ndarray::{s, Array3, Axis};

use crate::error::Result;
use crate::grid::{self, PixelGrid, NUM_SCALES};

/// RGB image with values in `[0, 1]`, stored planar as `(3, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Self {
        assert_eq!(data.len_of(Axis(0)), 3, "image must have 3 channels");
        Self { data }
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        Self::new(Array3::from_shape_fn((3, height, width), |(c, _, _)| rgb[c]))
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Array3::zeros((3, height, width));
        for i in 0..height {
            for j in 0..width {
                let v = f(i, j);
                for c in 0..3 {
                    data[[c, i, j]] = v[c];
                }
            }
        }
        Self::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn width(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        [
            self.data[[0, row, col]],
            self.data[[1, row, col]],
            self.data[[2, row, col]],
        ]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[[c, row, col]] = v;
        }
    }

    /// Luma-weighted grayscale.
    pub fn gray(&self, row: usize, col: usize) -> f64 {
        let [r, g, b] = self.pixel(row, col);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    /// Edge-replicating pad so both dimensions are multiples of 16.
    pub fn padded16(&self) -> Image {
        let (h, w) = (self.height(), self.width());
        let (ph, pw) = (grid::pad16(h), grid::pad16(w));
        if (ph, pw) == (h, w) {
            return self.clone();
        }
        Image::new(Array3::from_shape_fn((3, ph, pw), |(c, i, j)| {
            self.data[[c, i.min(h - 1), j.min(w - 1)]]
        }))
    }

    /// Crop of rows `r0..r1`, columns `c0..c1`.
    pub fn crop(&self, r0: usize, c0: usize, r1: usize, c1: usize) -> Image {
        Image::new(self.data.slice(s![.., r0..r1, c0..c1]).to_owned())
    }
}

/// Five feature maps `f_s` of shape `(c_s, H/2^s, W/2^s)` on the padded frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Array3<f64>>,
    /// Frobenius norm of each level.
    pub norms: Vec<f64>,
    /// Size of the unpadded source image.
    pub image_height: usize,
    pub image_width: usize,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Array3<f64>>, image_height: usize, image_width: usize) -> Self {
        assert_eq!(levels.len(), NUM_SCALES);
        let norms = levels
            .iter()
            .map(|l| l.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Self {
            levels,
            norms,
            image_height,
            image_width,
        }
    }

    pub fn channels(&self, scale: usize) -> usize {
        self.levels[scale].len_of(Axis(0))
    }

    pub fn dims(&self, scale: usize) -> (usize, usize) {
        let l = &self.levels[scale];
        (l.len_of(Axis(1)), l.len_of(Axis(2)))
    }

    /// Scale-0 grid over the padded frame, in coordinates normalized by the
    /// unpadded image size.
    pub fn grid(&self) -> PixelGrid {
        let (h, w) = self.dims(0);
        PixelGrid::with_steps(
            h,
            w,
            1.0 / self.image_width as f64,
            1.0 / self.image_height as f64,
        )
    }
}

pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &Image) -> Result<FeaturePyramid>;
}

/// RGB at every scale, bilinearly downsampled. Reduces the method to a
/// multi-channel Chan-Vese.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

pub fn extract_pyramid_identity(image: &Image) -> FeaturePyramid {
    let padded = image.padded16();
    let (h, w) = (padded.height(), padded.width());
    let levels = (0..NUM_SCALES)
        .map(|s| {
            let (hs, ws) = grid::scale_dims(h, w, s);
            grid::resize_channels(padded.data.view(), hs, ws)
        })
        .collect();
    FeaturePyramid::new(levels, image.height(), image.width())
}

impl FeatureExtractor for IdentityExtractor {
    fn extract(&self, image: &Image) -> Result<FeaturePyramid> {
        Ok(extract_pyramid_identity(image))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_of_constant_image_is_constant() {
        let img = Image::filled(20, 36, [0.2, 0.4, 0.6]);
        let p = extract_pyramid_identity(&img);
        assert_eq!(p.dims(0), (32, 48));
        for (s, l) in p.levels.iter().enumerate() {
            assert_eq!(p.dims(s), (32 >> s, 48 >> s));
            for c in 0..3 {
                let expect = [0.2, 0.4, 0.6][c];
                assert!(l.index_axis(Axis(0), c).iter().all(|v| (v - expect).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn identity_level_zero_is_bitwise_input() {
        let img = Image::from_fn(32, 16, |i, j| [i as f64 / 32.0, j as f64 / 16.0, 0.3]);
        let p = extract_pyramid_identity(&img);
        assert_eq!(p.levels[0], img.data);
    }

    #[test]
    fn checkerboard_halves_to_gray() {
        let img = Image::from_fn(32, 32, |i, j| {
            let v = ((i + j) % 2) as f64;
            [v, v, v]
        });
        let p = extract_pyramid_identity(&img);
        assert!(p.levels[1].iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn padding_replicates_edges() {
        let img = Image::from_fn(17, 3, |i, j| [i as f64, j as f64, 0.0]);
        let p = img.padded16();
        assert_eq!((p.height(), p.width()), (32, 16));
        assert_eq!(p.pixel(31, 15), [16.0, 2.0, 0.0]);
    }
}
