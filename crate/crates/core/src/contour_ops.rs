//! Per-iteration contour adjustments: loop removal, gradient clipping and
//! smoothing, equidistant resampling.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use crate::error::{Error, Result};
use crate::geometry::{Contour, ContourGradient, Point};

/// Loops with less absolute area than this are dropped by [`clean`].
pub const MIN_LOOP_AREA: f64 = 1e-8;
/// Default standard deviation (in nodes) of the gradient blur.
pub const DEFAULT_BLUR_SIGMA: f64 = 2.0;

const EPS_ORDER: f64 = 1e-12;

/// Proper crossing of edges `i` and `j` (`i < j`, non-adjacent). Edge `i`
/// runs from node `i` to node `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionEvent {
    pub i: usize,
    pub j: usize,
    pub point: Point,
    pub t_i: f64,
    pub t_j: f64,
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Transversal crossing of segments `p` and `q`, with parameters along each.
/// Touching and collinear configurations are not crossings.
fn segment_crossing(p: (Point, Point), q: (Point, Point)) -> Option<(Point, f64, f64)> {
    let d1 = orient(q.0, q.1, p.0);
    let d2 = orient(q.0, q.1, p.1);
    let d3 = orient(p.0, p.1, q.0);
    let d4 = orient(p.0, p.1, q.1);
    if !(d1 * d2 < 0.0 && d3 * d4 < 0.0) {
        return None;
    }
    let t = d1 / (d1 - d2);
    let u = d3 / (d3 - d4);
    if !(t > 0.0 && t < 1.0 && u > 0.0 && u < 1.0) {
        return None;
    }
    let point = [p.0[0] + t * (p.1[0] - p.0[0]), p.0[1] + t * (p.1[1] - p.0[1])];
    Some((point, t, u))
}

fn lex_cmp(a: Point, b: Point) -> Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    End = 0,
    Cross = 1,
    Start = 2,
}

#[derive(Debug, Clone, Copy)]
struct SweepEvent {
    at: Point,
    kind: EventKind,
    a: usize,
    b: usize,
}

impl SweepEvent {
    fn cmp_key(&self, other: &Self) -> Ordering {
        lex_cmp(self.at, other.at)
            .then(self.kind.cmp(&other.kind))
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

impl PartialEq for SweepEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}
impl Eq for SweepEvent {}
impl PartialOrd for SweepEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for SweepEvent {
    // reversed so the max-heap pops the leftmost event first
    fn cmp(&self, other: &Self) -> Ordering {
        other.cmp_key(self)
    }
}

struct Sweep<'a> {
    segs: Vec<(Point, Point)>,
    n: usize,
    contour: &'a Contour,
    status: Vec<usize>,
    queue: BinaryHeap<SweepEvent>,
    seen: HashSet<(usize, usize)>,
    found: Vec<IntersectionEvent>,
}

impl Sweep<'_> {
    fn adjacent(&self, a: usize, b: usize) -> bool {
        let d = a.abs_diff(b);
        d == 1 || d == self.n - 1
    }

    /// Is segment `s` (inserted at its left endpoint) below segment `t`?
    fn below(&self, s: usize, t: usize) -> bool {
        let (p, q) = self.segs[s];
        let (a, b) = self.segs[t];
        let o = orient(a, b, p);
        let scale = (b[0] - a[0]).abs() + (b[1] - a[1]).abs();
        if o.abs() > EPS_ORDER * scale.max(1.0) {
            return o < 0.0;
        }
        let c = orient([0.0, 0.0], [b[0] - a[0], b[1] - a[1]], [q[0] - p[0], q[1] - p[1]]);
        if c != 0.0 {
            return c < 0.0;
        }
        s < t
    }

    fn check(&mut self, lo: usize, hi: usize, now: Point) {
        if self.adjacent(lo, hi) {
            return;
        }
        let key = (lo.min(hi), lo.max(hi));
        if self.seen.contains(&key) {
            return;
        }
        if let Some((point, _, _)) = segment_crossing(self.segs[lo], self.segs[hi]) {
            self.seen.insert(key);
            let (i, j) = key;
            let n = self.n;
            let c = &self.contour.nodes;
            let (point, t_i, t_j) = segment_crossing((c[i], c[(i + 1) % n]), (c[j], c[(j + 1) % n]))
                .unwrap_or_else(|| {
                    // the left-to-right orientation disagreed in the last bit
                    let t_i = param_on(c[i], c[(i + 1) % n], point);
                    let t_j = param_on(c[j], c[(j + 1) % n], point);
                    (point, t_i, t_j)
                });
            self.found.push(IntersectionEvent { i, j, point, t_i, t_j });
            let at = if lex_cmp(point, now) == Ordering::Less { now } else { point };
            self.queue.push(SweepEvent { at, kind: EventKind::Cross, a: lo, b: hi });
        }
    }

    fn position(&self, s: usize) -> Option<usize> {
        self.status.iter().position(|&t| t == s)
    }

    fn run(&mut self) {
        while let Some(ev) = self.queue.pop() {
            match ev.kind {
                EventKind::Start => {
                    let s = ev.a;
                    let pos = self.status.partition_point(|&t| !self.below(s, t));
                    self.status.insert(pos, s);
                    if pos > 0 {
                        self.check(self.status[pos - 1], s, ev.at);
                    }
                    if pos + 1 < self.status.len() {
                        self.check(s, self.status[pos + 1], ev.at);
                    }
                }
                EventKind::End => {
                    let Some(pos) = self.position(ev.a) else { continue };
                    self.status.remove(pos);
                    if pos > 0 && pos < self.status.len() {
                        self.check(self.status[pos - 1], self.status[pos], ev.at);
                    }
                }
                EventKind::Cross => {
                    let (Some(pa), Some(pb)) = (self.position(ev.a), self.position(ev.b)) else {
                        continue;
                    };
                    if pa > pb {
                        continue;
                    }
                    self.status.swap(pa, pb);
                    let (lo, hi) = (pa, pb);
                    if lo > 0 {
                        self.check(self.status[lo - 1], self.status[lo], ev.at);
                    }
                    if hi + 1 < self.status.len() {
                        self.check(self.status[hi], self.status[hi + 1], ev.at);
                    }
                    if hi > lo + 1 {
                        self.check(self.status[lo], self.status[lo + 1], ev.at);
                        self.check(self.status[hi - 1], self.status[hi], ev.at);
                    }
                }
            }
        }
    }
}

fn param_on(a: Point, b: Point, p: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let l2 = d[0] * d[0] + d[1] * d[1];
    (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / l2).clamp(0.0, 1.0)
}

/// All proper crossings between non-adjacent edges, sorted by `(i, t_i)`.
///
/// Bentley-Ottmann sweep from left to right. Shared endpoints of adjacent
/// edges and collinear overlaps are not reported.
pub fn find_self_intersections(contour: &Contour) -> Vec<IntersectionEvent> {
    let n = contour.len();
    if n < 4 {
        return Vec::new();
    }
    let segs: Vec<(Point, Point)> = contour
        .edges()
        .map(|(a, b)| if lex_cmp(a, b) == Ordering::Greater { (b, a) } else { (a, b) })
        .collect();
    let mut queue = BinaryHeap::with_capacity(2 * n);
    for (s, &(l, r)) in segs.iter().enumerate() {
        // a zero-length edge cannot cross anything properly
        if l == r {
            continue;
        }
        queue.push(SweepEvent { at: l, kind: EventKind::Start, a: s, b: s });
        queue.push(SweepEvent { at: r, kind: EventKind::End, a: s, b: s });
    }
    let mut sweep = Sweep {
        segs,
        n,
        contour,
        status: Vec::new(),
        queue,
        seen: HashSet::new(),
        found: Vec::new(),
    };
    sweep.run();
    let mut found = sweep.found;
    found.sort_by(|a, b| a.i.cmp(&b.i).then(a.t_i.total_cmp(&b.t_i)));
    found
}

struct Loop {
    nodes: Vec<Point>,
    /// Original node index per entry; `None` for inserted crossing points.
    origin: Vec<Option<usize>>,
}

impl Loop {
    fn min_origin(&self) -> usize {
        self.origin.iter().flatten().copied().min().unwrap_or(usize::MAX)
    }
}

fn split_loops(lp: Loop, out: &mut Vec<(Contour, usize)>) {
    if lp.nodes.len() < 3 {
        return;
    }
    let contour = Contour { nodes: lp.nodes.clone() }.to_ccw();
    let events = find_self_intersections(&contour);
    let Some(ev) = events.first() else {
        if contour.signed_area().abs() >= MIN_LOOP_AREA {
            out.push((contour, lp.min_origin()));
        }
        return;
    };
    // indices refer to the oriented copy
    let origin: Vec<Option<usize>> = if lp.nodes[..] == contour.nodes[..] {
        lp.origin
    } else {
        let mut o = Vec::with_capacity(lp.origin.len());
        o.push(lp.origin[0]);
        o.extend(lp.origin[1..].iter().rev().copied());
        o
    };
    let n = contour.len();
    let (i, j, p) = (ev.i, ev.j, ev.point);
    let mut a = Loop { nodes: vec![p], origin: vec![None] };
    for k in i + 1..=j {
        a.nodes.push(contour.nodes[k]);
        a.origin.push(origin[k]);
    }
    let mut b = Loop { nodes: vec![p], origin: vec![None] };
    let mut k = (j + 1) % n;
    loop {
        b.nodes.push(contour.nodes[k]);
        b.origin.push(origin[k]);
        if k == i {
            break;
        }
        k = (k + 1) % n;
    }
    split_loops(a, out);
    split_loops(b, out);
}

/// Removes loops. A simple contour is returned unchanged; otherwise the
/// polygon is split at its crossings into simple loops and the loop of
/// largest absolute area is returned counter-clockwise (ties go to the loop
/// holding the lowest original node index).
pub fn clean(contour: &Contour) -> Result<Contour> {
    if find_self_intersections(contour).is_empty() {
        return Ok(contour.clone());
    }
    let mut loops = Vec::new();
    split_loops(
        Loop {
            nodes: contour.nodes.clone(),
            origin: (0..contour.len()).map(Some).collect(),
        },
        &mut loops,
    );
    loops
        .into_iter()
        .max_by(|(a, oa), (b, ob)| {
            a.signed_area()
                .abs()
                .total_cmp(&b.signed_area().abs())
                .then(ob.cmp(oa))
        })
        .map(|(c, _)| c)
        .ok_or(Error::ContourCollapsed)
}

/// Per-node clipping: any node displacement longer than `max_norm` is scaled
/// down to exactly `max_norm`.
pub fn clip_gradient(grad: &ContourGradient, max_norm: f64) -> ContourGradient {
    assert!(max_norm > 0.0, "max_norm must be positive");
    ContourGradient(
        grad.0
            .iter()
            .map(|g| {
                let n = g[0].hypot(g[1]);
                if n > max_norm {
                    let s = max_norm / n;
                    [g[0] * s, g[1] * s]
                } else {
                    *g
                }
            })
            .collect(),
    )
}

/// Periodic Gaussian smoothing along the node index, truncated at 3 sigma.
pub fn blur_gradient(grad: &ContourGradient, sigma_nodes: f64) -> ContourGradient {
    assert!(sigma_nodes >= 0.0, "sigma must be non-negative");
    let n = grad.len();
    let radius = (3.0 * sigma_nodes).floor() as usize;
    if sigma_nodes == 0.0 || radius == 0 || n == 0 {
        return grad.clone();
    }
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|k| {
            let d = k as f64 - radius as f64;
            (-0.5 * d * d / (sigma_nodes * sigma_nodes)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    let out = (0..n)
        .map(|i| {
            let mut acc = [0.0; 2];
            for (k, w) in kernel.iter().enumerate() {
                let idx = (i + n * (radius / n + 1) + k - radius) % n;
                acc[0] += w * grad.0[idx][0];
                acc[1] += w * grad.0[idx][1];
            }
            [acc[0] / total, acc[1] / total]
        })
        .collect();
    ContourGradient(out)
}

/// `n_nodes` points at uniform arc length along the closed polyline, starting
/// at node 0 and running counter-clockwise.
pub fn resample_equidistant(contour: &Contour, n_nodes: usize) -> Result<Contour> {
    if n_nodes < 3 {
        return Err(Error::InvalidContour(format!("need at least 3 nodes, got {n_nodes}")));
    }
    let c = contour.to_ccw();
    let n = c.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for (a, b) in c.edges() {
        let l = (b[0] - a[0]).hypot(b[1] - a[1]);
        cum.push(cum.last().unwrap() + l);
    }
    let total = cum[n];
    if !(total > 0.0) {
        return Err(Error::ZeroPerimeter);
    }
    let mut out = Vec::with_capacity(n_nodes);
    let mut e = 0;
    for k in 0..n_nodes {
        let s = total * k as f64 / n_nodes as f64;
        while e + 1 < n && cum[e + 1] <= s {
            e += 1;
        }
        let len = cum[e + 1] - cum[e];
        let t = if len > 0.0 { ((s - cum[e]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let a = c.nodes[e];
        let b = c.nodes[(e + 1) % n];
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    Contour::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowtie() -> Contour {
        Contour::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]).unwrap()
    }

    fn square() -> Contour {
        Contour::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap()
    }

    #[test]
    fn bowtie_crossing() {
        let ev = find_self_intersections(&bowtie());
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].i, ev[0].j), (0, 2));
        assert!((ev[0].point[0] - 0.5).abs() < 1e-12 && (ev[0].point[1] - 0.5).abs() < 1e-12);
        assert!((ev[0].t_i - 0.5).abs() < 1e-12 && (ev[0].t_j - 0.5).abs() < 1e-12);
    }

    #[test]
    fn square_has_no_crossing() {
        assert!(find_self_intersections(&square()).is_empty());
        assert_eq!(clean(&square()).unwrap(), square());
    }

    #[test]
    fn bowtie_clean_keeps_loop_with_node_zero() {
        let c = clean(&bowtie()).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.is_ccw());
        assert!((c.signed_area() - 0.25).abs() < 1e-12);
        assert!(c.nodes.contains(&[0.0, 0.0]));
        assert!(c.nodes.contains(&[0.0, 1.0]));
    }

    #[test]
    fn unequal_loops_keep_the_larger() {
        // figure eight with a big right lobe
        let c = Contour::new(vec![[0.0, 0.0], [3.0, 2.0], [3.0, 0.0], [0.0, 1.0]]).unwrap();
        let out = clean(&c).unwrap();
        assert!(out.nodes.contains(&[3.0, 2.0]));
        assert!(out.is_ccw());
    }

    #[test]
    fn collapsed_loops_error() {
        let tiny = Contour::new(vec![[0.0, 0.0], [1e-5, 1e-5], [1e-5, 0.0], [0.0, 1e-5]]).unwrap();
        assert!(matches!(clean(&tiny), Err(Error::ContourCollapsed)));
    }

    #[test]
    fn clip_examples() {
        let g = ContourGradient(vec![[0.3, 0.4], [0.1, 0.0], [0.0, 0.0]]);
        let c = clip_gradient(&g, 0.25);
        assert!((c.0[0][0] - 0.15).abs() < 1e-15 && (c.0[0][1] - 0.20).abs() < 1e-15);
        assert_eq!(c.0[1], [0.1, 0.0]);
        assert_eq!(c.0[2], [0.0, 0.0]);
    }

    #[test]
    fn blur_constant_and_identity() {
        let g = ContourGradient(vec![[0.7, -0.2]; 17]);
        for (a, b) in blur_gradient(&g, 2.0).0.iter().zip(&g.0) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        let h = ContourGradient((0..9).map(|i| [i as f64, -(i as f64)]).collect());
        assert_eq!(blur_gradient(&h, 0.0), h);
    }

    #[test]
    fn blur_impulse_matches_direct_sum() {
        let n = 100;
        let mut g = ContourGradient::zeros(n);
        g.0[0] = [1.0, 0.0];
        let out = blur_gradient(&g, 2.0);
        let w = |d: i64| (-(d * d) as f64 / 8.0).exp();
        let total: f64 = (-6..=6).map(w).sum();
        for i in 0..n as i64 {
            let d = if i > 50 { i - 100 } else { i };
            let expect = if d.abs() <= 6 { w(d) / total } else { 0.0 };
            assert!((out.0[i as usize][0] - expect).abs() < 1e-9);
            assert_eq!(out.0[i as usize][1], 0.0);
        }
    }

    #[test]
    fn blur_wider_than_contour_wraps() {
        let g = ContourGradient(vec![[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);
        let out = blur_gradient(&g, 5.0);
        let s: f64 = out.0.iter().map(|p| p[0]).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resample_square_to_eight() {
        let out = resample_equidistant(&square(), 8).unwrap();
        let expect = [
            [0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [1.0, 0.5],
            [1.0, 1.0], [0.5, 1.0], [0.0, 1.0], [0.0, 0.5],
        ];
        for (a, b) in out.nodes.iter().zip(&expect) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn resample_fixed_point_and_area() {
        let c = Contour::circle([0.5, 0.5], 0.3, 64);
        let r = resample_equidistant(&c, 64).unwrap();
        for (a, b) in r.nodes.iter().zip(&c.nodes) {
            assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
        let c = Contour::circle([0.5, 0.5], 0.3, 100);
        let r = resample_equidistant(&c, 50).unwrap();
        assert!((r.signed_area() / c.signed_area() - 1.0).abs() < 0.01);
    }

    #[test]
    fn resample_orients_ccw_and_rejects_zero_perimeter() {
        let cw = square().reversed();
        let r = resample_equidistant(&cw, 12).unwrap();
        assert!(r.is_ccw());
        assert_eq!(r.nodes[0], [0.0, 0.0]);
        let dot = Contour::new(vec![[0.2, 0.2]; 4]).unwrap();
        assert!(matches!(resample_equidistant(&dot, 8), Err(Error::ZeroPerimeter)));
    }
}
