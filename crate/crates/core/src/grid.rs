//! Pixel grids and bilinear resampling between pyramid scales.
//!
//! Resampling uses half-pixel-center alignment in both directions: output
//! pixel `o` samples the input at `(o + 0.5) * n_in / n_out - 0.5`, clamped
//! to the valid range. The operator is linear and separable, so its adjoint
//! is the transpose and is computed with the same tap tables.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

/// Number of pyramid scales used throughout (`s = 0..=4`).
pub const NUM_SCALES: usize = 5;

/// A regular grid of pixel centers in normalized image coordinates.
///
/// Pixel `(row i, col j)` has center `((j + 0.5) * step_x, (i + 0.5) * step_y)`.
/// For a plain `H x W` image the steps are `1/W` and `1/H`; grids that extend
/// past the image (padding) or that are coarser (mesh) keep the steps of the
/// original frame scaled accordingly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelGrid {
    pub height: usize,
    pub width: usize,
    pub step_x: f64,
    pub step_y: f64,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "grid must be non-empty");
        Self {
            height,
            width,
            step_x: 1.0 / width as f64,
            step_y: 1.0 / height as f64,
        }
    }

    pub fn with_steps(height: usize, width: usize, step_x: f64, step_y: f64) -> Self {
        assert!(height >= 1 && width >= 1, "grid must be non-empty");
        Self {
            height,
            width,
            step_x,
            step_y,
        }
    }

    #[inline]
    pub fn center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            (col as f64 + 0.5) * self.step_x,
            (row as f64 + 0.5) * self.step_y,
        ]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Grid coarsened by `2^scale`. Dimensions must divide exactly.
    pub fn coarsen(&self, scale: usize) -> Self {
        let f = 1usize << scale;
        assert!(
            self.height % f == 0 && self.width % f == 0,
            "grid {}x{} not divisible by {}",
            self.height,
            self.width,
            f
        );
        Self {
            height: self.height / f,
            width: self.width / f,
            step_x: self.step_x * f as f64,
            step_y: self.step_y * f as f64,
        }
    }
}

/// Sparse 1-D resampling weights: output `o` reads `idx[start[o]..start[o+1]]`.
#[derive(Debug, Clone)]
struct Taps {
    start: Vec<usize>,
    idx: Vec<usize>,
    w: Vec<f64>,
}

impl Taps {
    /// Half-pixel-center linear interpolation, clamped at the border. When
    /// shrinking this reads the two input cells nearest each output center
    /// (no antialiasing), which averages 2x2 blocks for a factor of 2.
    fn new(n_in: usize, n_out: usize) -> Self {
        let scale = n_in as f64 / n_out as f64;
        let mut t = Self {
            start: Vec::with_capacity(n_out + 1),
            idx: Vec::new(),
            w: Vec::new(),
        };
        t.start.push(0);
        for o in 0..n_out {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let b = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            t.idx.push(i0);
            t.w.push(1.0 - b);
            if b > 0.0 {
                t.idx.push(i1);
                t.w.push(b);
            }
            t.start.push(t.idx.len());
        }
        t
    }

    fn taps(&self, o: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.start[o]..self.start[o + 1];
        self.idx[r.clone()].iter().copied().zip(self.w[r].iter().copied())
    }
}

/// Bilinear resize of a scalar field to `(out_h, out_w)`.
pub fn resize(field: ArrayView2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = field.dim();
    if (h, w) == (out_h, out_w) {
        return field.to_owned();
    }
    let ty = Taps::new(h, out_h);
    let tx = Taps::new(w, out_w);
    // rows first, then columns
    let mut tmp = Array2::<f64>::zeros((out_h, w));
    for o in 0..out_h {
        let mut dst = tmp.row_mut(o);
        for (i, wt) in ty.taps(o) {
            dst.scaled_add(wt, &field.row(i));
        }
    }
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for i in 0..out_h {
        let src = tmp.row(i);
        let mut dst = out.row_mut(i);
        for o in 0..out_w {
            dst[o] = tx.taps(o).map(|(j, wt)| wt * src[j]).sum();
        }
    }
    out
}

/// Transpose of [`resize`]: maps a cotangent on the output grid back to the
/// input grid of shape `(in_h, in_w)`.
pub fn resize_adjoint(cot: ArrayView2<f64>, in_h: usize, in_w: usize) -> Array2<f64> {
    let (out_h, out_w) = cot.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return cot.to_owned();
    }
    let ty = Taps::new(in_h, out_h);
    let tx = Taps::new(in_w, out_w);
    let mut tmp = Array2::<f64>::zeros((out_h, in_w));
    for i in 0..out_h {
        let src = cot.row(i);
        let mut dst = tmp.row_mut(i);
        for o in 0..out_w {
            for (j, wt) in tx.taps(o) {
                dst[j] += wt * src[o];
            }
        }
    }
    let mut out = Array2::<f64>::zeros((in_h, in_w));
    for o in 0..out_h {
        let src = tmp.row(o);
        for (i, wt) in ty.taps(o) {
            out.row_mut(i).scaled_add(wt, &src);
        }
    }
    out
}

/// Resize of a `(channels, h, w)` stack, channel by channel.
pub fn resize_channels(maps: ArrayView3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let c = maps.len_of(Axis(0));
    let mut out = Array3::<f64>::zeros((c, out_h, out_w));
    for (ch, mut dst) in out.outer_iter_mut().enumerate() {
        dst.assign(&resize(maps.index_axis(Axis(0), ch), out_h, out_w));
    }
    out
}

/// Spatial size at `scale` of a grid whose scale-0 size is `(h, w)`.
pub fn scale_dims(h: usize, w: usize, scale: usize) -> (usize, usize) {
    ((h >> scale).max(1), (w >> scale).max(1))
}

/// Smallest multiple of 16 that is `>= n`.
pub fn pad16(n: usize) -> usize {
    n.div_ceil(16) * 16
}

/// Pads a scalar field to `(h, w)` with `fill` outside the original extent.
pub fn pad_const(field: ArrayView2<f64>, h: usize, w: usize, fill: f64) -> Array2<f64> {
    let (fh, fw) = field.dim();
    let mut out = Array2::from_elem((h, w), fill);
    out.slice_mut(ndarray::s![..fh, ..fw]).assign(&field);
    out
}
