//! Differentiable maps from a closed polygon to dense fields.
//!
//! The soft mask sums, at every pixel center, the oriented angle subtended by
//! each polygon edge: a full turn inside the polygon and nothing outside. The
//! orientation of each angle is a `tanh`-smoothed sign of the cross product,
//! which makes the map differentiable in the node positions. The soft distance
//! map multiplies the mask by the distance to the nearest node and normalizes
//! by the maximum over the grid.
//!
//! Every forward map has a hand-written vector-Jacobian product so the
//! optimization loops can pull a cotangent field back onto the nodes.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, PixelGrid, NUM_SCALES};

/// Points closer than this to a node contribute nothing to the mask.
pub const EPS_POINT: f64 = 1e-12;
/// Clamp applied to the `arccos` argument.
pub const EPS_ACOS: f64 = 1e-7;
/// Minimum value of `max(F_cm * d_2)` for a distance map to exist.
pub const EPS_MAX: f64 = 1e-12;
/// Default sharpness used for forward evaluation.
pub const DEFAULT_SHARPNESS: f64 = 1e5;

pub type Point = [f64; 2];

/// Closed polygon in normalized image coordinates (`x` = column fraction,
/// `y` = row fraction). The closing edge from the last node back to the first
/// is implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub nodes: Vec<Point>,
}

impl Contour {
    pub fn new(nodes: Vec<Point>) -> Result<Self> {
        if nodes.len() < 3 {
            return Err(Error::InvalidContour(format!(
                "need at least 3 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidContour("non-finite coordinate".into()));
        }
        Ok(Self { nodes })
    }

    /// Regular polygon approximating a circle, counter-clockwise, node 0 at angle 0.
    pub fn circle(center: Point, radius: f64, n_nodes: usize) -> Self {
        Self::ellipse(center, [radius, radius], n_nodes)
    }

    pub fn ellipse(center: Point, radii: [f64; 2], n_nodes: usize) -> Self {
        assert!(n_nodes >= 3);
        let nodes = (0..n_nodes)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n_nodes as f64;
                [center[0] + radii[0] * t.cos(), center[1] + radii[1] * t.sin()]
            })
            .collect();
        Self { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Edges `(C_i, C_{i+1})` including the closing edge.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.nodes.len();
        (0..n).map(move |i| (self.nodes[i], self.nodes[(i + 1) % n]))
    }

    /// Signed shoelace area; positive for counter-clockwise order.
    pub fn signed_area(&self) -> f64 {
        0.5 * self
            .edges()
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum::<f64>()
    }

    pub fn is_ccw(&self) -> bool {
        self.signed_area() >= 0.0
    }

    pub fn perimeter(&self) -> f64 {
        self.edges().map(|(a, b)| dist(a, b)).sum()
    }

    /// Reverses orientation while keeping node 0 first.
    pub fn reversed(&self) -> Self {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        nodes.push(self.nodes[0]);
        nodes.extend(self.nodes[1..].iter().rev().copied());
        Self { nodes }
    }

    pub fn to_ccw(&self) -> Self {
        if self.is_ccw() {
            self.clone()
        } else {
            self.reversed()
        }
    }

    pub fn clamp_unit(&mut self) {
        for p in &mut self.nodes {
            p[0] = p[0].clamp(0.0, 1.0);
            p[1] = p[1].clamp(0.0, 1.0);
        }
    }

    pub fn translated(&self, d: Point) -> Self {
        Self {
            nodes: self.nodes.iter().map(|p| [p[0] + d[0], p[1] + d[1]]).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("contour serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Contour = serde_json::from_str(s)?;
        Contour::new(c.nodes)
    }
}

/// Per-node gradient with respect to the contour coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourGradient(pub Vec<Point>);

impl ContourGradient {
    pub fn zeros(n: usize) -> Self {
        Self(vec![[0.0; 2]; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// L2 norm of the flattened gradient.
    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|g| g[0] * g[0] + g[1] * g[1])
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_assign(&mut self, other: &ContourGradient) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            g[0] *= s;
            g[1] *= s;
        }
    }

    pub fn dot(&self, other: &ContourGradient) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a[0] * b[0] + a[1] * b[1])
            .sum()
    }
}

/// Soft interior indicator on a pixel grid.
#[derive(Debug, Clone)]
pub struct SoftMask {
    pub values: Array2<f64>,
    pub k: f64,
}

/// Max-normalized soft interior distance on a pixel grid.
#[derive(Debug, Clone)]
pub struct SoftDistanceMap {
    pub values: Array2<f64>,
}

#[inline]
fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
fn dist(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

#[inline]
fn norm2(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// `tanh(z)` and its derivative, skipping the exponential once saturated.
#[inline]
fn tanh_and_slope(z: f64) -> (f64, f64) {
    if z.abs() > 20.0 {
        (z.signum(), 0.0)
    } else {
        let u = z.tanh();
        (u, 1.0 - u * u)
    }
}

#[inline]
fn edge_term(p: Point, q: Point, k: f64) -> f64 {
    let np = norm2(p);
    let nq = norm2(q);
    if np < EPS_POINT || nq < EPS_POINT {
        return 0.0;
    }
    let cross = p[0] * q[1] - p[1] * q[0];
    let r = ((p[0] * q[0] + p[1] * q[1]) / (np * nq)).clamp(-1.0 + EPS_ACOS, 1.0 - EPS_ACOS);
    tanh_and_slope(k * cross).0 * r.acos()
}

/// Gradient of [`edge_term`] with respect to `p = a - x` and `q = b - x`.
#[inline]
fn edge_term_grad(p: Point, q: Point, k: f64) -> (Point, Point) {
    let np = norm2(p);
    let nq = norm2(q);
    if np < EPS_POINT || nq < EPS_POINT {
        return ([0.0; 2], [0.0; 2]);
    }
    let cross = p[0] * q[1] - p[1] * q[0];
    let (u, slope) = tanh_and_slope(k * cross);
    let du = k * slope;
    let inv = 1.0 / (np * nq);
    let r_raw = (p[0] * q[0] + p[1] * q[1]) * inv;
    let r = r_raw.clamp(-1.0 + EPS_ACOS, 1.0 - EPS_ACOS);
    let theta = r.acos();
    let dtheta = if r_raw == r {
        -1.0 / (1.0 - r * r).sqrt()
    } else {
        0.0
    };
    let b = u * dtheta;
    let (ip, iq) = (r / (np * np), r / (nq * nq));
    let drdp = [q[0] * inv - ip * p[0], q[1] * inv - ip * p[1]];
    let drdq = [p[0] * inv - iq * q[0], p[1] * inv - iq * q[1]];
    let a = theta * du;
    (
        [a * q[1] + b * drdp[0], -a * q[0] + b * drdp[1]],
        [-a * p[1] + b * drdq[0], a * p[0] + b * drdq[1]],
    )
}

/// Oriented angle subtended at `x` by the segment `(a, b)`: `tanh(k (a-x)^(b-x))`
/// times the unsigned angle. Zero if `x` coincides with `a` or `b`.
pub fn oriented_angle(a: Point, b: Point, x: Point, k: f64) -> f64 {
    edge_term(sub(a, x), sub(b, x), k)
}

#[inline]
fn mask_at(nodes: &[Point], x: Point, k: f64) -> f64 {
    let first = sub(nodes[0], x);
    let mut p = first;
    let mut sum = 0.0;
    for node in &nodes[1..] {
        let q = sub(*node, x);
        sum += edge_term(p, q, k);
        p = q;
    }
    sum += edge_term(p, first, k);
    sum / (2.0 * PI)
}

fn mask_field(contour: &Contour, grid: &PixelGrid, k: f64) -> Array2<f64> {
    let (h, w) = grid.shape();
    let nodes = &contour.nodes;
    let data: Vec<f64> = (0..h * w)
        .into_par_iter()
        .map(|idx| mask_at(nodes, grid.center(idx / w, idx % w), k))
        .collect();
    Array2::from_shape_vec((h, w), data).expect("shape")
}

/// Soft mask `M(x) = (1/2pi) sum_i u(C_i, C_{i+1}, x) theta(C_i, C_{i+1}, x)`.
pub fn contour_to_mask(contour: &Contour, grid: &PixelGrid, k: f64) -> SoftMask {
    SoftMask {
        values: mask_field(contour, grid, k),
        k,
    }
}

/// Pulls a cotangent field on the grid back onto the contour nodes through
/// [`contour_to_mask`].
pub fn contour_to_mask_vjp(
    contour: &Contour,
    grid: &PixelGrid,
    k: f64,
    cotangent: ArrayView2<f64>,
) -> ContourGradient {
    assert_eq!(cotangent.dim(), grid.shape(), "cotangent shape");
    let n = contour.len();
    let (h, w) = grid.shape();
    let nodes = &contour.nodes;
    let scale = 1.0 / (2.0 * PI);
    let grads = (0..h)
        .into_par_iter()
        .fold(
            || vec![[0.0f64; 2]; n],
            |mut acc, row| {
                for col in 0..w {
                    let c = cotangent[[row, col]];
                    if c == 0.0 {
                        continue;
                    }
                    let x = grid.center(row, col);
                    let cw = c * scale;
                    let mut p = sub(nodes[0], x);
                    for i in 0..n {
                        let j = if i + 1 == n { 0 } else { i + 1 };
                        let q = sub(nodes[j], x);
                        let (gp, gq) = edge_term_grad(p, q, k);
                        acc[i][0] += cw * gp[0];
                        acc[i][1] += cw * gp[1];
                        acc[j][0] += cw * gq[0];
                        acc[j][1] += cw * gq[1];
                        p = q;
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![[0.0f64; 2]; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    x[0] += y[0];
                    x[1] += y[1];
                }
                a
            },
        );
    ContourGradient(grads)
}

/// Distance from `x` to the nearest node, with the lowest index on ties.
pub fn min_node_distance(x: Point, contour: &Contour) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0usize);
    for (i, &c) in contour.nodes.iter().enumerate() {
        let d = dist(x, c);
        if d < best.0 {
            best = (d, i);
        }
    }
    best
}

/// Forward state of the soft distance map, kept for the adjoint.
#[derive(Debug, Clone)]
pub struct DistanceMapEval {
    pub grid: PixelGrid,
    pub k: f64,
    pub mask: Array2<f64>,
    pub node_dist: Array2<f64>,
    pub nearest: Array2<usize>,
    /// Flat index of the (first) maximizing pixel.
    pub argmax: usize,
    pub max: f64,
    pub values: Array2<f64>,
}

impl DistanceMapEval {
    pub fn new(contour: &Contour, grid: &PixelGrid, k: f64) -> Result<Self> {
        let mask = mask_field(contour, grid, k);
        let (h, w) = grid.shape();
        let pairs: Vec<(f64, usize)> = (0..h * w)
            .into_par_iter()
            .map(|idx| min_node_distance(grid.center(idx / w, idx % w), contour))
            .collect();
        let node_dist = Array2::from_shape_fn((h, w), |(i, j)| pairs[i * w + j].0);
        let nearest = Array2::from_shape_fn((h, w), |(i, j)| pairs[i * w + j].1);
        let product = &mask * &node_dist;
        let (mut argmax, mut max) = (0usize, f64::NEG_INFINITY);
        for (idx, &v) in product.iter().enumerate() {
            if v > max {
                max = v;
                argmax = idx;
            }
        }
        if max <= EPS_MAX {
            return Err(Error::EmptyContour);
        }
        let values = product / max;
        Ok(Self {
            grid: *grid,
            k,
            mask,
            node_dist,
            nearest,
            argmax,
            max,
            values,
        })
    }

    pub fn vjp(&self, contour: &Contour, cotangent: ArrayView2<f64>) -> ContourGradient {
        let (h, w) = self.grid.shape();
        assert_eq!(cotangent.dim(), (h, w), "cotangent shape");
        // D = P / max(P): dP = w / max, plus the normalizer term at argmax.
        let inv = 1.0 / self.max;
        let mut d_product = cotangent.mapv(|c| c * inv);
        let weighted: f64 = Zip::from(&cotangent)
            .and(&self.values)
            .fold(0.0, |acc, &c, &v| acc + c * v);
        let (ai, aj) = (self.argmax / w, self.argmax % w);
        d_product[[ai, aj]] -= weighted * inv;

        let d_mask = &d_product * &self.node_dist;
        let mut grad = contour_to_mask_vjp(contour, &self.grid, self.k, d_mask.view());
        for i in 0..h {
            for j in 0..w {
                let g = d_product[[i, j]] * self.mask[[i, j]];
                let d = self.node_dist[[i, j]];
                if g == 0.0 || d < EPS_POINT {
                    continue;
                }
                let node = self.nearest[[i, j]];
                let x = self.grid.center(i, j);
                let c = contour.nodes[node];
                grad.0[node][0] += g * (c[0] - x[0]) / d;
                grad.0[node][1] += g * (c[1] - x[1]) / d;
            }
        }
        grad
    }
}

/// `F_cd(x) = F_cm(x) d_2(x) / max_grid(F_cm d_2)`.
pub fn contour_to_distance_map(
    contour: &Contour,
    grid: &PixelGrid,
    k: f64,
) -> Result<SoftDistanceMap> {
    Ok(SoftDistanceMap {
        values: DistanceMapEval::new(contour, grid, k)?.values,
    })
}

pub fn contour_to_distance_map_vjp(
    contour: &Contour,
    grid: &PixelGrid,
    k: f64,
    cotangent: ArrayView2<f64>,
) -> Result<ContourGradient> {
    Ok(DistanceMapEval::new(contour, grid, k)?.vjp(contour, cotangent))
}

/// Unsigned shoelace area.
pub fn polygon_area(contour: &Contour) -> f64 {
    contour.signed_area().abs()
}

/// Gradient of [`polygon_area`] with respect to the nodes.
pub fn polygon_area_grad(contour: &Contour) -> ContourGradient {
    let n = contour.len();
    let sign = if contour.signed_area() >= 0.0 { 1.0 } else { -1.0 };
    let nodes = &contour.nodes;
    ContourGradient(
        (0..n)
            .map(|i| {
                let prev = nodes[(i + n - 1) % n];
                let next = nodes[(i + 1) % n];
                [
                    0.5 * sign * (next[1] - prev[1]),
                    0.5 * sign * (prev[0] - next[0]),
                ]
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Mask,
    Distance,
}

#[derive(Debug, Clone)]
enum Kernel {
    Mask,
    Distance(Box<DistanceMapEval>),
}

/// A mask or distance map computed once on a mesh at `mesh_scale` and
/// resampled to every pyramid scale.
#[derive(Debug, Clone)]
pub struct MultiscaleMaps {
    pub kind: MapKind,
    pub mesh_scale: usize,
    pub mesh: PixelGrid,
    pub k: f64,
    /// Kernel output on the mesh.
    pub mesh_values: Array2<f64>,
    /// One map per scale `0..NUM_SCALES`, scale `s` of size `(H/2^s, W/2^s)`.
    pub maps: Vec<Array2<f64>>,
    kernel: Kernel,
}

impl MultiscaleMaps {
    /// `grid` is the scale-0 grid; its dimensions must be multiples of 16.
    pub fn new(
        contour: &Contour,
        grid: &PixelGrid,
        k: f64,
        mesh_scale: usize,
        kind: MapKind,
    ) -> Result<Self> {
        if mesh_scale >= NUM_SCALES {
            return Err(Error::InvalidConfig(format!(
                "mesh_scale {mesh_scale} out of range 0..{NUM_SCALES}"
            )));
        }
        let mesh = grid.coarsen(mesh_scale);
        let (mesh_values, kernel) = match kind {
            MapKind::Mask => (mask_field(contour, &mesh, k), Kernel::Mask),
            MapKind::Distance => {
                let eval = DistanceMapEval::new(contour, &mesh, k)?;
                (eval.values.clone(), Kernel::Distance(Box::new(eval)))
            }
        };
        let maps = (0..NUM_SCALES)
            .map(|s| {
                let (h, w) = grid::scale_dims(grid.height, grid.width, s);
                grid::resize(mesh_values.view(), h, w)
            })
            .collect();
        Ok(Self {
            kind,
            mesh_scale,
            mesh,
            k,
            mesh_values,
            maps,
            kernel,
        })
    }

    /// Adjoint through resampling and the kernel. `cotangents[s]` matches `maps[s]`.
    pub fn vjp(&self, contour: &Contour, cotangents: &[Array2<f64>]) -> ContourGradient {
        assert_eq!(cotangents.len(), self.maps.len());
        let mut mesh_cot = Array2::<f64>::zeros(self.mesh.shape());
        for (cot, map) in cotangents.iter().zip(&self.maps) {
            assert_eq!(cot.dim(), map.dim(), "cotangent shape");
            mesh_cot += &grid::resize_adjoint(cot.view(), self.mesh.height, self.mesh.width);
        }
        match &self.kernel {
            Kernel::Mask => contour_to_mask_vjp(contour, &self.mesh, self.k, mesh_cot.view()),
            Kernel::Distance(eval) => eval.vjp(contour, mesh_cot.view()),
        }
    }
}

/// Convenience wrapper returning only the per-scale maps.
pub fn multiscale_maps(
    contour: &Contour,
    grid: &PixelGrid,
    k: f64,
    mesh_scale: usize,
    kind: MapKind,
) -> Result<Vec<Array2<f64>>> {
    Ok(MultiscaleMaps::new(contour, grid, k, mesh_scale, kind)?.maps)
}
