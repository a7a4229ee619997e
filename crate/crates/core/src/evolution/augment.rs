use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::features::Image;
use crate::region_stats::BinaryMask;

/// Element of the dihedral group of the square, applied as `rot90^rot`
/// (counter-clockwise), then a horizontal flip, then a vertical flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DihedralTransform {
    pub rot: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl DihedralTransform {
    /// Draws rotate?(p=0.5) -> k in {0,1,2,3}, then hflip (p=0.5), then vflip (p=0.5).
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let rot = if rng.gen_bool(0.5) { rng.gen_range(0..4u8) } else { 0 };
        let hflip = rng.gen_bool(0.5);
        let vflip = rng.gen_bool(0.5);
        Self { rot, hflip, vflip }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn apply_plane<T: Clone>(&self, plane: ArrayView2<T>) -> Array2<T> {
        let mut v = plane;
        for _ in 0..self.rot {
            // counter-clockwise quarter turn: transpose, then flip rows
            v.swap_axes(0, 1);
            v.invert_axis(Axis(0));
        }
        if self.hflip {
            v.invert_axis(Axis(1));
        }
        if self.vflip {
            v.invert_axis(Axis(0));
        }
        v.to_owned()
    }

    pub fn apply_image(&self, image: &Image) -> Image {
        let planes: Vec<Array2<f64>> = (0..3)
            .map(|c| self.apply_plane(image.data.slice(s![c, .., ..])))
            .collect();
        let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
        Image::new(ndarray::stack(Axis(0), &views).expect("planes share a shape"))
    }
}

/// Applies the same random dihedral transform to an image and its mask.
pub fn random_augmentation<R: Rng + ?Sized>(
    image: &Image,
    mask: &BinaryMask,
    rng: &mut R,
) -> (Image, BinaryMask) {
    let t = DihedralTransform::sample(rng);
    (t.apply_image(image), t.apply_plane(mask.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let a = array![[1, 2], [3, 4]];
        let t = DihedralTransform { rot: 1, ..Default::default() };
        assert_eq!(t.apply_plane(a.view()), array![[2, 4], [1, 3]]);
        let full = DihedralTransform { rot: 4, ..Default::default() };
        assert_eq!(full.apply_plane(a.view()), a);
    }

    #[test]
    fn flips() {
        let a = array![[1, 2, 3], [4, 5, 6]];
        let h = DihedralTransform { hflip: true, ..Default::default() };
        assert_eq!(h.apply_plane(a.view()), array![[3, 2, 1], [6, 5, 4]]);
        assert_eq!(h.apply_plane(h.apply_plane(a.view()).view()), a);
        let v = DihedralTransform { vflip: true, ..Default::default() };
        assert_eq!(v.apply_plane(a.view()), array![[4, 5, 6], [1, 2, 3]]);
    }

    #[test]
    fn rotation_swaps_shape_of_both() {
        let img = Image::from_fn(4, 6, |i, j| [i as f64, j as f64, 0.0]);
        let mask = Array2::from_shape_fn((4, 6), |(i, j)| i == 0 && j == 5);
        let t = DihedralTransform { rot: 1, ..Default::default() };
        let (ri, rm) = (t.apply_image(&img), t.apply_plane(mask.view()));
        assert_eq!((ri.height(), ri.width()), (6, 4));
        assert_eq!(rm.dim(), (6, 4));
        // the marked corner follows the pixel it labels
        let (r, c) = rm.indexed_iter().find(|(_, &m)| m).unwrap().0;
        assert_eq!(ri.pixel(r, c), [0.0, 5.0, 0.0]);
    }
}
