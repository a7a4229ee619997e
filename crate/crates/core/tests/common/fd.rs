use contourflow::geometry::{Contour, ContourGradient};

pub const H: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub failed: Vec<(usize, usize, f64, f64)>,
    pub worst: f64,
}

impl FdReport {
    pub fn ok(&self) -> bool {
        self.failed.is_empty() && self.checked > 0
    }
}

pub fn perturbed(c: &Contour, node: usize, axis: usize, delta: f64) -> Contour {
    let mut out = c.clone();
    out.nodes[node][axis] += delta;
    out
}

/// Central differences of `f` against `grad`, coordinate by coordinate.
/// The error is measured relative to `max(|fd|, floor * max|grad|)` so that
/// coordinates with a near-zero derivative are judged on the gradient's
/// scale. `switches(minus, plus)` marks coordinates whose perturbation
/// crosses a nondifferentiable point; those are skipped.
pub fn check(
    c: &Contour,
    grad: &ContourGradient,
    f: impl Fn(&Contour) -> f64,
    tol: f64,
    floor: f64,
    switches: impl Fn(&Contour, &Contour) -> bool,
) -> FdReport {
    let scale = grad.0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut r = FdReport::default();
    for node in 0..c.len() {
        for axis in 0..2 {
            let plus = perturbed(c, node, axis, H);
            let minus = perturbed(c, node, axis, -H);
            if switches(&minus, &plus) {
                r.skipped += 1;
                continue;
            }
            let num = (f(&plus) - f(&minus)) / (2.0 * H);
            let ana = grad.0[node][axis];
            let rel = (num - ana).abs() / num.abs().max(floor * scale).max(1e-300);
            r.worst = r.worst.max(rel);
            r.checked += 1;
            if rel > tol {
                r.failed.push((node, axis, ana, num));
            }
        }
    }
    r
}

pub fn never(_: &Contour, _: &Contour) -> bool {
    false
}
