//! Forward-only VGG16 convolutional trunk.

use ndarray::{Array1, Array3, Array4, ArrayView1, ArrayView3, ArrayView4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{FeatureExtractor, FeaturePyramid, Image, Tensor, WeightStore};
use crate::error::{Error, Result};

/// `(channels, height, width)` activations.
pub type FeatureMap = Array3<f32>;

/// Convolutions per block and their width. Feature `f_s` is the output of
/// block `s + 1`, taken before its max pooling.
pub const VGG16_BLOCKS: [(usize, usize); 5] = [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)];

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// 3x3 cross-correlation, stride 1, zero padding 1. `weight` is
/// `(c_out, c_in, 3, 3)`.
pub fn conv_forward(
    input: ArrayView3<f32>,
    weight: ArrayView4<f32>,
    bias: ArrayView1<f32>,
) -> Result<FeatureMap> {
    let (c_in, h, w) = input.dim();
    let (c_out, wc_in, kh, kw) = weight.dim();
    if wc_in != c_in {
        return Err(Error::ChannelMismatch {
            expected: wc_in,
            found: c_in,
        });
    }
    if (kh, kw) != (3, 3) {
        return Err(Error::ShapeMismatch {
            expected: vec![c_out, c_in, 3, 3],
            found: vec![c_out, wc_in, kh, kw],
        });
    }
    if bias.len() != c_out {
        return Err(Error::ChannelMismatch {
            expected: c_out,
            found: bias.len(),
        });
    }
    let input = input.as_standard_layout();
    let src = input.as_slice().expect("standard layout");
    let weight = weight.as_standard_layout();
    let wts = weight.as_slice().expect("standard layout");
    let plane = h * w;
    let mut out = vec![0.0f32; c_out * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(o, dst)| {
        dst.fill(bias[o]);
        for i in 0..c_in {
            let s = &src[i * plane..(i + 1) * plane];
            let k = &wts[(o * c_in + i) * 9..(o * c_in + i + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let coef = k[ky * 3 + kx];
                    if coef == 0.0 {
                        continue;
                    }
                    // output column x reads input column x + kx - 1
                    let x0 = usize::from(kx == 0);
                    let x1 = if kx == 2 { w - 1 } else { w };
                    for y in 0..h {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let srow = &s[(sy - 1) * w..sy * w];
                        let drow = &mut dst[y * w..(y + 1) * w];
                        for x in x0..x1 {
                            drow[x] += coef * srow[x + kx - 1];
                        }
                    }
                }
            }
        }
    });
    Ok(Array3::from_shape_vec((c_out, h, w), out).expect("shape"))
}

pub fn relu_inplace(map: &mut FeatureMap) {
    map.mapv_inplace(|v| v.max(0.0));
}

/// 2x2 max pooling, stride 2.
pub fn maxpool2(input: ArrayView3<f32>) -> Result<FeatureMap> {
    let (c, h, w) = input.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimensions(h, w));
    }
    Ok(Array3::from_shape_fn((c, h / 2, w / 2), |(ch, i, j)| {
        let (y, x) = (2 * i, 2 * j);
        input[[ch, y, x]]
            .max(input[[ch, y, x + 1]])
            .max(input[[ch, y + 1, x]])
            .max(input[[ch, y + 1, x + 1]])
    }))
}

fn tensor_names(block: usize, conv: usize) -> (String, String) {
    (
        format!("block{}.conv{}.weight", block + 1, conv + 1),
        format!("block{}.conv{}.bias", block + 1, conv + 1),
    )
}

/// Weight and bias shapes of every convolution, in execution order.
pub fn vgg16_layout() -> Vec<(String, Vec<usize>, String, Vec<usize>)> {
    let mut c_in = 3;
    let mut out = Vec::new();
    for (b, &(n_conv, width)) in VGG16_BLOCKS.iter().enumerate() {
        for c in 0..n_conv {
            let (wn, bn) = tensor_names(b, c);
            out.push((wn, vec![width, c_in, 3, 3], bn, vec![width]));
            c_in = width;
        }
    }
    out
}

/// Random VGG16-shaped weights (He-scaled uniform), for tests
/// and demos that have no pretrained checkpoint.
pub fn random_vgg16(seed: u64) -> WeightStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::default();
    for (wn, wd, bn, bd) in vgg16_layout() {
        let fan_in = (wd[1] * 9) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let n: usize = wd.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        store.insert(wn, Tensor::new(wd, data));
        let b = (0..bd[0]).map(|_| rng.gen_range(-0.05f32..0.05)).collect();
        store.insert(bn, Tensor::new(bd, b));
    }
    store
}

struct ConvLayer {
    weight: Array4<f32>,
    bias: Array1<f32>,
}

/// VGG16 conv trunk with weights from a [`WeightStore`].
pub struct ConvExtractor {
    blocks: Vec<Vec<ConvLayer>>,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ConvExtractor {
    /// Validates that every tensor of the topology is present with its exact shape.
    pub fn new(store: &WeightStore) -> Result<Self> {
        let mut blocks = Vec::new();
        let mut layout = vgg16_layout().into_iter();
        for &(n_conv, _) in VGG16_BLOCKS.iter() {
            let mut layers = Vec::new();
            for _ in 0..n_conv {
                let (wn, wd, bn, bd) = layout.next().expect("layout");
                let w = store.require(&wn, &wd)?;
                let b = store.require(&bn, &bd)?;
                layers.push(ConvLayer {
                    weight: Array4::from_shape_vec((wd[0], wd[1], 3, 3), w.data.clone())
                        .expect("validated shape"),
                    bias: Array1::from(b.data.clone()),
                });
            }
            blocks.push(layers);
        }
        Ok(Self {
            blocks,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        })
    }

    pub fn with_normalization(mut self, mean: [f32; 3], std: [f32; 3]) -> Self {
        self.mean = mean;
        self.std = std;
        self
    }
}

pub fn extract_pyramid_conv(image: &Image, extractor: &ConvExtractor) -> Result<FeaturePyramid> {
    let padded = image.padded16();
    let mut x: FeatureMap = Array3::from_shape_fn(padded.data.dim(), |(c, i, j)| {
        (padded.data[[c, i, j]] as f32 - extractor.mean[c]) / extractor.std[c]
    });
    let mut levels = Vec::with_capacity(extractor.blocks.len());
    for (b, block) in extractor.blocks.iter().enumerate() {
        for layer in block {
            x = conv_forward(x.view(), layer.weight.view(), layer.bias.view())?;
            relu_inplace(&mut x);
        }
        levels.push(x.mapv(f64::from));
        if b + 1 < extractor.blocks.len() {
            x = maxpool2(x.view())?;
        }
    }
    debug_assert_eq!(levels[0].len_of(Axis(0)), VGG16_BLOCKS[0].1);
    Ok(FeaturePyramid::new(levels, image.height(), image.width()))
}

impl FeatureExtractor for ConvExtractor {
    fn extract(&self, image: &Image) -> Result<FeaturePyramid> {
        extract_pyramid_conv(image, self)
    }
}
