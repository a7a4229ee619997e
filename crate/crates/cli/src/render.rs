use contourflow::features::Image;
use contourflow::Contour;

pub const CONTOUR_RGB: [f64; 3] = [1.0, 0.1, 0.1];

/// Copy of `image` with `contour` drawn as a closed line about 2 px wide.
pub fn overlay(image: &Image, contour: &Contour) -> Image {
    let mut out = image.clone();
    let (h, w) = (image.height() as f64, image.width() as f64);
    for (a, b) in contour.edges() {
        let (ax, ay) = (a[0] * w, a[1] * h);
        let (bx, by) = (b[0] * w, b[1] * h);
        let steps = ((bx - ax).hypot(by - ay) * 4.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            stamp(&mut out, ax + t * (bx - ax), ay + t * (by - ay));
        }
    }
    out
}

/// Paints every pixel whose center lies within one pixel of `(x, y)`.
fn stamp(img: &mut Image, x: f64, y: f64) {
    let (h, w) = (img.height() as i64, img.width() as i64);
    let (ci, cj) = (y.floor() as i64, x.floor() as i64);
    for i in ci - 1..=ci + 1 {
        for j in cj - 1..=cj + 1 {
            if i < 0 || j < 0 || i >= h || j >= w {
                continue;
            }
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            if (px - x).hypot(py - y) <= 1.0 {
                img.set_pixel(i as usize, j as usize, CONTOUR_RGB);
            }
        }
    }
}
