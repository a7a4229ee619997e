#![allow(dead_code)]

use contourflow::Contour;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// All-pairs proper crossings between non-adjacent edges, as `(i, j, x, y)`.
pub fn brute_force_crossings(c: &Contour) -> Vec<(usize, usize, f64, f64)> {
    let n = c.len();
    let p = &c.nodes;
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (a, b) = (p[i], p[(i + 1) % n]);
            let (q, r) = (p[j], p[(j + 1) % n]);
            // solve a + t (b - a) = q + u (r - q) by Cramer's rule
            let e = [b[0] - a[0], b[1] - a[1]];
            let f = [r[0] - q[0], r[1] - q[1]];
            let g = [q[0] - a[0], q[1] - a[1]];
            let det = e[0] * f[1] - e[1] * f[0];
            if det == 0.0 {
                continue;
            }
            let t = (g[0] * f[1] - g[1] * f[0]) / det;
            let u = (g[0] * e[1] - g[1] * e[0]) / det;
            if t > 0.0 && t < 1.0 && u > 0.0 && u < 1.0 {
                out.push((i, j, a[0] + t * e[0], a[1] + t * e[1]));
            }
        }
    }
    out
}

pub fn random_polygon(rng: &mut ChaCha8Rng, n: usize) -> Contour {
    Contour::new((0..n).map(|_| [rng.gen::<f64>(), rng.gen::<f64>()]).collect()).unwrap()
}

/// Star-shaped polygon with random radii; simple by construction.
pub fn random_star(rng: &mut ChaCha8Rng, n: usize, jitter: f64) -> Contour {
    Contour::new(
        (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                let r = 0.3 * (1.0 + jitter * (rng.gen::<f64>() - 0.5));
                [0.5 + r * a.cos(), 0.5 + r * a.sin()]
            })
            .collect(),
    )
    .unwrap()
}

/// Compares the sweep result with the oracle; returns a description on mismatch.
pub fn compare_with_oracle(c: &Contour) -> Result<usize, String> {
    let mut got: Vec<_> = contourflow::contour_ops::find_self_intersections(c)
        .into_iter()
        .map(|e| (e.i, e.j, e.point[0], e.point[1]))
        .collect();
    let mut want = brute_force_crossings(c);
    got.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    want.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    if got.len() != want.len() {
        return Err(format!("{} events vs {} expected", got.len(), want.len()));
    }
    for (g, w) in got.iter().zip(&want) {
        if (g.0, g.1) != (w.0, w.1) || (g.2 - w.2).abs() > 1e-9 || (g.3 - w.3).abs() > 1e-9 {
            return Err(format!("{g:?} vs {w:?}"));
        }
    }
    Ok(want.len())
}

pub mod fd;
pub mod gradsuite;
