//! Triangulation of the extended domain.
//!
//! The observation domain (a convex polygon) is enclosed in its bounding box
//! grown by `extension_factor × r_min` on every side. That rectangle is covered
//! by a criss-cross grid and refined by conforming longest-edge bisection
//! (Rivara's LEPP algorithm) until every triangle meets its edge bound:
//! a fifth of the local range at the centroid for domain triangles, a fifth of
//! `r_min` for extension triangles. Longest-edge bisection keeps the mesh
//! conforming and the angles bounded away from zero.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::Matrix2;
use serde::Serialize;

use crate::deformation::{DeformParams, LocalAnisotropy, TauSpec};
use crate::error::{Error, Result};
use crate::Point;

const NONE: usize = usize::MAX;
const MAX_TRIANGLES: usize = 4_000_000;
/// Samples per axis when searching the range field for its extremes.
const RANGE_SAMPLES: usize = 41;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

impl ConvexPolygon {
    /// Accepts either orientation; stored counter-clockwise.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid("a polygon needs at least 3 vertices"));
        }
        let area2: f64 = (0..vertices.len())
            .map(|i| {
                let (a, b) = (vertices[i], vertices[(i + 1) % vertices.len()]);
                a.x * b.y - b.x * a.y
            })
            .sum();
        if !(area2.abs() > 0.0) {
            return Err(Error::invalid("degenerate polygon"));
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        for i in 0..n {
            if cross(&vertices[i], &vertices[(i + 1) % n], &vertices[(i + 2) % n]) < 0.0 {
                return Err(Error::invalid("polygon is not convex"));
            }
        }
        Ok(ConvexPolygon { vertices })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Minimum signed distance-like margin of `p` to the edge lines (positive inside).
    fn margin(&self, p: &Point) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (&self.vertices[i], &self.vertices[(i + 1) % n]);
                cross(a, b, p) / (b - a).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.margin(p) >= 0.0
    }

    pub fn contains_open(&self, p: &Point) -> bool {
        self.margin(p) > 0.0
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
        )
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let s = self
            .vertices
            .iter()
            .fold(nalgebra::Vector2::zeros(), |acc, p| acc + p.coords);
        Point::from(s / n)
    }
}

/// Parameters forced onto extension triangles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Barrier {
    pub nu: f64,
    pub r_min: f64,
}

impl Barrier {
    /// `κ = 8ν/r_min²` and `H = κ I`, so that `J = (√(8ν)/r_min) I`.
    pub fn anisotropy(&self, tau: f64) -> LocalAnisotropy {
        let kappa = 8.0 * self.nu / (self.r_min * self.r_min);
        LocalAnisotropy {
            h_tilde: Matrix2::identity() / kappa,
            kappa,
            h: Matrix2::identity() * kappa,
            tau,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    pub nodes: Vec<Point>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub is_extension: Vec<bool>,
    pub domain: ConvexPolygon,
    /// Smallest local range over the domain, used for the buffer width.
    pub r_min: f64,
    pub barrier: Option<Barrier>,
    boundary: Vec<bool>,
    locator: Locator,
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshSummary {
    pub n_nodes: usize,
    pub n_triangles: usize,
    pub n_extension: usize,
    pub n_boundary_nodes: usize,
    pub r_min: f64,
    pub min_edge: f64,
    pub max_edge: f64,
    pub max_interior_edge: f64,
    /// `(lower, upper, count)` bins of unique edge lengths.
    pub edge_histogram: Vec<(f64, f64, usize)>,
}

/// Bucket grid over the mesh bounding box for point location.
#[derive(Clone, Debug)]
struct Locator {
    x0: f64,
    y0: f64,
    dx: f64,
    dy: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn build(nodes: &[Point], triangles: &[[usize; 3]]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in nodes {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let side = ((triangles.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let (nx, ny) = (side, side);
        let dx = ((x1 - x0) / nx as f64).max(f64::MIN_POSITIVE);
        let dy = ((y1 - y0) / ny as f64).max(f64::MIN_POSITIVE);
        let mut buckets = vec![Vec::new(); nx * ny];
        let cell = |v: f64, o: f64, d: f64, n: usize| (((v - o) / d).floor().max(0.0) as usize).min(n - 1);
        for (t, tri) in triangles.iter().enumerate() {
            let ps = tri.map(|i| nodes[i]);
            let (lx, hx) = (ps.iter().map(|p| p.x).fold(f64::INFINITY, f64::min), ps.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max));
            let (ly, hy) = (ps.iter().map(|p| p.y).fold(f64::INFINITY, f64::min), ps.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max));
            for iy in cell(ly, y0, dy, ny)..=cell(hy, y0, dy, ny) {
                for ix in cell(lx, x0, dx, nx)..=cell(hx, x0, dx, nx) {
                    buckets[iy * nx + ix].push(t);
                }
            }
        }
        Locator {
            x0,
            y0,
            dx,
            dy,
            nx,
            ny,
            buckets,
        }
    }

    fn candidates(&self, p: &Point) -> &[usize] {
        let fx = (p.x - self.x0) / self.dx;
        let fy = (p.y - self.y0) / self.dy;
        if !(fx >= -1e-9 && fy >= -1e-9 && fx <= self.nx as f64 + 1e-9 && fy <= self.ny as f64 + 1e-9) {
            return &[];
        }
        let ix = (fx.max(0.0) as usize).min(self.nx - 1);
        let iy = (fy.max(0.0) as usize).min(self.ny - 1);
        &self.buckets[iy * self.nx + ix]
    }
}

/// Barycentric coordinates of `p` in the triangle `(a, b, c)`.
pub fn barycentric(a: &Point, b: &Point, c: &Point, p: &Point) -> [f64; 3] {
    let det = cross(a, b, c);
    let l1 = cross(p, b, c) / det;
    let l2 = cross(a, p, c) / det;
    [l1, l2, 1.0 - l1 - l2]
}

impl TriMesh {
    /// Assembles a mesh from explicit nodes and triangles (reoriented to
    /// counter-clockwise); extension flags follow the domain polygon.
    pub fn from_parts(
        nodes: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        domain: ConvexPolygon,
        r_min: f64,
    ) -> Result<Self> {
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&i| i >= nodes.len()) {
                return Err(Error::invalid(format!("triangle {t} references a missing node")));
            }
            let a = cross(&nodes[tri[0]], &nodes[tri[1]], &nodes[tri[2]]);
            if a == 0.0 {
                return Err(Error::invalid(format!("triangle {t} is degenerate")));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }
        let is_extension = triangles
            .iter()
            .map(|tri| {
                let ps = tri.map(|i| nodes[i]);
                let c = Point::from((ps[0].coords + ps[1].coords + ps[2].coords) / 3.0);
                !domain.contains_open(&c) && ps.iter().all(|p| !domain.contains_open(p))
            })
            .collect();
        let mut edge_use: HashMap<(usize, usize), u32> = HashMap::new();
        for tri in &triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                *edge_use.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut boundary = vec![false; nodes.len()];
        for (&(a, b), &n) in &edge_use {
            if n == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        let locator = Locator::build(&nodes, &triangles);
        Ok(TriMesh {
            nodes,
            triangles,
            is_extension,
            domain,
            r_min,
            barrier: None,
            boundary,
            locator,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        self.boundary[i]
    }

    /// Nodes off the outer boundary, in increasing order (the free unknowns).
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.boundary[i]).collect()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * cross(&self.nodes[a], &self.nodes[b], &self.nodes[c])
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t];
        Point::from((self.nodes[a].coords + self.nodes[b].coords + self.nodes[c].coords) / 3.0)
    }

    pub fn longest_edge(&self, t: usize) -> f64 {
        let tri = self.triangles[t];
        (0..3)
            .map(|e| (self.nodes[tri[e]] - self.nodes[tri[(e + 1) % 3]]).norm())
            .fold(0.0, f64::max)
    }

    /// Unique undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|tri| (0..3).map(move |k| (tri[k].min(tri[(k + 1) % 3]), tri[k].max(tri[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Number of triangles using each edge.
    pub fn edge_multiplicities(&self) -> HashMap<(usize, usize), usize> {
        let mut m = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Triangle containing `p` with barycentric weights.
    pub fn locate(&self, p: &Point) -> Result<(usize, [f64; 3])> {
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in self.locator.candidates(p) {
            let [a, b, c] = self.triangles[t];
            let w = barycentric(&self.nodes[a], &self.nodes[b], &self.nodes[c], p);
            let worst = w[0].min(w[1]).min(w[2]);
            if worst >= 0.0 {
                return Ok((t, w));
            }
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((t, w, worst));
            }
        }
        match best {
            Some((t, w, worst)) if worst > -1e-10 => {
                let w = w.map(|v| v.max(0.0));
                let s = w[0] + w[1] + w[2];
                Ok((t, w.map(|v| v / s)))
            }
            _ => Err(Error::OutsideMesh { x: p.x, y: p.y }),
        }
    }

    /// Node nearest to `p` (lowest index on ties).
    pub fn nearest_node(&self, p: &Point) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, q) in self.nodes.iter().enumerate() {
            let d = (q - p).norm_squared();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Adjacency lists of the node graph, neighbours sorted by index.
    pub fn node_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (a, b) in self.edges() {
            adj[a].push(b);
            adj[b].push(a);
        }
        for l in &mut adj {
            l.sort_unstable();
        }
        adj
    }

    /// Piecewise-constant model fields per triangle, evaluated at centroids,
    /// with the barrier override on extension triangles.
    pub fn triangle_params(&self, params: &DeformParams) -> Result<Vec<LocalAnisotropy>> {
        let mut out = Vec::with_capacity(self.triangles.len());
        for t in 0..self.triangles.len() {
            let c = self.centroid(t);
            let mut la = params.eval_anisotropy(&c);
            if let (Some(b), true) = (self.barrier, self.is_extension[t]) {
                let tau = match params.tau {
                    TauSpec::UnitVariance => {
                        crate::deformation::unit_variance_tau(params.alpha, 8.0 * b.nu / (b.r_min * b.r_min))
                    }
                    _ => la.tau,
                };
                la = b.anisotropy(tau);
            }
            let finite = la.kappa.is_finite()
                && la.kappa > 0.0
                && la.tau.is_finite()
                && la.tau > 0.0
                && la.h.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite {
                    triangle: t,
                    what: format!("kappa = {}, tau = {}", la.kappa, la.tau),
                });
            }
            out.push(la);
        }
        Ok(out)
    }

    pub fn summary(&self, bins: usize) -> MeshSummary {
        let mut lens: Vec<f64> = self
            .edges()
            .iter()
            .map(|&(a, b)| (self.nodes[a] - self.nodes[b]).norm())
            .collect();
        lens.sort_by(f64::total_cmp);
        let (lo, hi) = (lens.first().copied().unwrap_or(0.0), lens.last().copied().unwrap_or(0.0));
        let bins = bins.max(1);
        let width = (hi - lo) / bins as f64;
        let mut hist: Vec<(f64, f64, usize)> = (0..bins)
            .map(|i| (lo + i as f64 * width, lo + (i + 1) as f64 * width, 0))
            .collect();
        for &l in &lens {
            let i = if width > 0.0 {
                (((l - lo) / width) as usize).min(bins - 1)
            } else {
                0
            };
            hist[i].2 += 1;
        }
        let max_interior_edge = (0..self.triangles.len())
            .filter(|&t| !self.is_extension[t])
            .map(|t| self.longest_edge(t))
            .fold(0.0, f64::max);
        MeshSummary {
            n_nodes: self.nodes.len(),
            n_triangles: self.triangles.len(),
            n_extension: self.is_extension.iter().filter(|&&e| e).count(),
            n_boundary_nodes: self.boundary.iter().filter(|&&b| b).count(),
            r_min: self.r_min,
            min_edge: lo,
            max_edge: hi,
            max_interior_edge,
            edge_histogram: hist,
        }
    }

    /// `id,x,y,boundary` rows.
    pub fn nodes_csv(&self) -> String {
        let mut s = String::from("id,x,y,boundary\n");
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(s, "{i},{},{},{}", p.x, p.y, self.boundary[i] as u8).unwrap();
        }
        s
    }

    /// `id,a,b,c,extension` rows.
    pub fn triangles_csv(&self) -> String {
        let mut s = String::from("id,a,b,c,extension\n");
        for (t, tri) in self.triangles.iter().enumerate() {
            writeln!(s, "{t},{},{},{},{}", tri[0], tri[1], tri[2], self.is_extension[t] as u8).unwrap();
        }
        s
    }
}

/// Records the barrier override for extension triangles. Applying it twice
/// gives the same mesh.
pub fn apply_barrier(mesh: &TriMesh, nu: f64, r_min: f64) -> Result<TriMesh> {
    if !(r_min > 0.0) {
        return Err(Error::invalid(format!("barrier range must be positive, got {r_min}")));
    }
    if !(nu > 0.0) {
        return Err(Error::invalid(format!("barrier smoothness must be positive, got {nu}")));
    }
    let mut m = mesh.clone();
    m.barrier = Some(Barrier { nu, r_min });
    Ok(m)
}

/// Smallest and largest value of `range` over a sample of the domain.
fn range_extremes(domain: &ConvexPolygon, range: &dyn Fn(&Point) -> f64) -> Result<(f64, f64)> {
    let (x0, y0, x1, y1) = domain.bounds();
    let mut pts: Vec<Point> = domain.vertices().to_vec();
    let m = RANGE_SAMPLES - 1;
    for i in 0..=m {
        for j in 0..=m {
            let p = Point::new(
                x0 + (x1 - x0) * i as f64 / m as f64,
                y0 + (y1 - y0) * j as f64 / m as f64,
            );
            if domain.contains(&p) {
                pts.push(p);
            }
        }
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for p in &pts {
        let r = range(p);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!(
                "range field is {r} at ({}, {}); it must be positive",
                p.x, p.y
            )));
        }
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

struct Refiner<'a> {
    nodes: Vec<Point>,
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    edge_tris: HashMap<(usize, usize), [usize; 2]>,
    domain: &'a ConvexPolygon,
    range: &'a dyn Fn(&Point) -> f64,
    r_min: f64,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl Refiner<'_> {
    fn edge_rank(&self, a: usize, b: usize) -> (f64, usize, usize) {
        ((self.nodes[a] - self.nodes[b]).norm_squared(), a.min(b), a.max(b))
    }

    /// Local index `e` of the longest edge `(v_e, v_{e+1})` under the strict order.
    fn longest(&self, t: usize) -> usize {
        let tri = self.tris[t];
        let mut best = 0;
        let mut rank = self.edge_rank(tri[0], tri[1]);
        for e in 1..3 {
            let r = self.edge_rank(tri[e], tri[(e + 1) % 3]);
            if r.0 > rank.0 || (r.0 == rank.0 && (r.1, r.2) > (rank.1, rank.2)) {
                best = e;
                rank = r;
            }
        }
        best
    }

    fn add_tri(&mut self, tri: [usize; 3]) -> usize {
        let t = self.tris.len();
        self.tris.push(tri);
        self.alive.push(true);
        for e in 0..3 {
            let slot = self.edge_tris.entry(key(tri[e], tri[(e + 1) % 3])).or_insert([NONE, NONE]);
            if slot[0] == NONE {
                slot[0] = t;
            } else {
                slot[1] = t;
            }
        }
        t
    }

    fn remove_tri(&mut self, t: usize) {
        self.alive[t] = false;
        let tri = self.tris[t];
        for e in 0..3 {
            let slot = self.edge_tris.get_mut(&key(tri[e], tri[(e + 1) % 3])).unwrap();
            if slot[0] == t {
                slot[0] = slot[1];
            }
            slot[1] = NONE;
            if slot[0] == NONE {
                self.edge_tris.remove(&key(tri[e], tri[(e + 1) % 3]));
            }
        }
    }

    fn neighbor(&self, t: usize, a: usize, b: usize) -> usize {
        let slot = self.edge_tris[&key(a, b)];
        if slot[0] == t {
            slot[1]
        } else {
            slot[0]
        }
    }

    fn bound(&self, t: usize) -> Result<f64> {
        let tri = self.tris[t];
        let ps = tri.map(|i| self.nodes[i]);
        let c = Point::from((ps[0].coords + ps[1].coords + ps[2].coords) / 3.0);
        let ext = !self.domain.contains_open(&c) && ps.iter().all(|p| !self.domain.contains_open(p));
        if ext {
            return Ok(self.r_min / 5.0);
        }
        let r = (self.range)(&c);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("range field is {r} at ({}, {})", c.x, c.y)));
        }
        Ok(r / 5.0)
    }

    fn needs_split(&self, t: usize) -> Result<bool> {
        let tri = self.tris[t];
        let e = self.longest(t);
        let len = (self.nodes[tri[e]] - self.nodes[tri[(e + 1) % 3]]).norm();
        Ok(len > self.bound(t)?)
    }

    /// Splits every triangle sharing the edge `(a, b)` at its midpoint.
    fn bisect_edge(&mut self, a: usize, b: usize, queue: &mut Vec<usize>) {
        let m = self.nodes.len();
        self.nodes.push(Point::from((self.nodes[a].coords + self.nodes[b].coords) * 0.5));
        let slot = self.edge_tris[&key(a, b)];
        for t in slot.into_iter().filter(|&t| t != NONE) {
            let tri = self.tris[t];
            let e = (0..3)
                .find(|&e| key(tri[e], tri[(e + 1) % 3]) == key(a, b))
                .expect("edge belongs to triangle");
            let (vi, vj, vk) = (tri[e], tri[(e + 1) % 3], tri[(e + 2) % 3]);
            self.remove_tri(t);
            queue.push(self.add_tri([vi, m, vk]));
            queue.push(self.add_tri([m, vj, vk]));
        }
    }

    /// Refines until triangle `t` has been split.
    fn refine(&mut self, t: usize, queue: &mut Vec<usize>) -> Result<()> {
        while self.alive[t] {
            if self.tris.len() > MAX_TRIANGLES {
                return Err(Error::invalid(
                    "mesh refinement exceeded the triangle limit; the range field is too small",
                ));
            }
            let mut cur = t;
            loop {
                let tri = self.tris[cur];
                let e = self.longest(cur);
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let nb = self.neighbor(cur, a, b);
                if nb == NONE {
                    self.bisect_edge(a, b, queue);
                    break;
                }
                let ntri = self.tris[nb];
                let ne = self.longest(nb);
                if key(ntri[ne], ntri[(ne + 1) % 3]) == key(a, b) {
                    self.bisect_edge(a, b, queue);
                    break;
                }
                cur = nb;
            }
        }
        Ok(())
    }
}

/// Meshes the domain plus a buffer of width `extension_factor × r_min`.
pub fn build_mesh(
    domain: &ConvexPolygon,
    range_field: &dyn Fn(&Point) -> f64,
    extension_factor: f64,
) -> Result<TriMesh> {
    if !(extension_factor >= 0.0) {
        return Err(Error::invalid("extension factor must be non-negative"));
    }
    let (r_min, r_max) = range_extremes(domain, range_field)?;
    let w = extension_factor * r_min;
    let (x0, y0, x1, y1) = domain.bounds();
    let (x0, y0, x1, y1) = (x0 - w, y0 - w, x1 + w, y1 + w);
    let cell = r_max / 5.0;
    let nx = (((x1 - x0) / cell).ceil() as usize).max(1);
    let ny = (((y1 - y0) / cell).ceil() as usize).max(1);
    if (nx + 1) * (ny + 1) > MAX_TRIANGLES {
        return Err(Error::invalid("initial grid too large for the range field"));
    }
    let dx = (x1 - x0) / nx as f64;
    let dy = (y1 - y0) / ny as f64;

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
    for j in 0..=ny {
        for i in 0..=nx {
            let x = if i == nx { x1 } else { x0 + i as f64 * dx };
            let y = if j == ny { y1 } else { y0 + j as f64 * dy };
            nodes.push(Point::new(x, y));
        }
    }
    let corner = |i: usize, j: usize| j * (nx + 1) + i;
    let mut init = Vec::with_capacity(4 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = nodes.len();
            nodes.push(Point::new(x0 + (i as f64 + 0.5) * dx, y0 + (j as f64 + 0.5) * dy));
            let (a, b, cc, d) = (corner(i, j), corner(i + 1, j), corner(i + 1, j + 1), corner(i, j + 1));
            init.push([a, b, c]);
            init.push([b, cc, c]);
            init.push([cc, d, c]);
            init.push([d, a, c]);
        }
    }

    let mut r = Refiner {
        nodes,
        tris: Vec::new(),
        alive: Vec::new(),
        edge_tris: HashMap::new(),
        domain,
        range: range_field,
        r_min,
    };
    for tri in init {
        r.add_tri(tri);
    }
    let mut queue: Vec<usize> = (0..r.tris.len()).rev().collect();
    while let Some(t) = queue.pop() {
        if r.alive[t] && r.needs_split(t)? {
            let mut fresh = Vec::new();
            r.refine(t, &mut fresh)?;
            // newest first so that refinement stays local
            fresh.reverse();
            queue.extend(fresh);
        }
    }
    let tris: Vec<[usize; 3]> = r
        .tris
        .iter()
        .zip(&r.alive)
        .filter(|(_, &a)| a)
        .map(|(t, _)| *t)
        .collect();
    TriMesh::from_parts(r.nodes, tris, domain.clone(), r_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformation::BBox;
    use proptest::prelude::*;

    fn unit_square() -> ConvexPolygon {
        ConvexPolygon::rectangle(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    fn assert_conforming(m: &TriMesh) {
        for t in 0..m.n_triangles() {
            assert!(m.signed_area(t) > 0.0, "triangle {t} not CCW");
        }
        let (x0, y0, x1, y1) = m.nodes.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), p| (a.min(p.x), b.min(p.y), c.max(p.x), d.max(p.y)),
        );
        let on_hull = |p: &Point| {
            let tol = 1e-9 * (1.0 + (x1 - x0).abs());
            (p.x - x0).abs() < tol || (p.x - x1).abs() < tol || (p.y - y0).abs() < tol || (p.y - y1).abs() < tol
        };
        for (&(a, b), &n) in &m.edge_multiplicities() {
            let outer = on_hull(&m.nodes[a]) && on_hull(&m.nodes[b]) && on_hull(&Point::from((m.nodes[a].coords + m.nodes[b].coords) / 2.0));
            assert_eq!(n, if outer { 1 } else { 2 }, "edge ({a}, {b})");
        }
        let area: f64 = (0..m.n_triangles()).map(|t| m.signed_area(t)).sum();
        assert!((area - (x1 - x0) * (y1 - y0)).abs() < 1e-9 * area);
    }

    #[test]
    fn unit_square_constant_range() {
        let m = build_mesh(&unit_square(), &|_| 1.0, 2.0).unwrap();
        let s = m.summary(10);
        assert!((m.nodes.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) + 2.0).abs() < 1e-12);
        assert!((m.nodes.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) - 3.0).abs() < 1e-12);
        assert!(s.max_interior_edge <= 0.2 * (1.0 + 1e-12));
        assert!(s.n_extension > 0);
        assert_conforming(&m);
    }

    #[test]
    fn zero_factor_has_no_extension() {
        let m = build_mesh(&unit_square(), &|_| 1.0, 0.0).unwrap();
        assert_eq!(m.summary(4).n_extension, 0);
    }

    #[test]
    fn buffer_uses_min_range() {
        let range = |p: &Point| 0.5 + p.x;
        let m = build_mesh(&unit_square(), &range, 2.0).unwrap();
        assert!((m.r_min - 0.5).abs() < 1e-12);
        let minx = m.nodes.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        assert!((minx + 1.0).abs() < 1e-12);
        for t in 0..m.n_triangles() {
            let bound = if m.is_extension[t] { 0.1 } else { range(&m.centroid(t)) / 5.0 };
            assert!(m.longest_edge(t) <= bound * (1.0 + 1e-12));
        }
        assert_conforming(&m);
    }

    #[test]
    fn bad_inputs() {
        assert!(ConvexPolygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
        let nonconvex = vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 0.3),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        assert!(ConvexPolygon::new(nonconvex).is_err());
        assert!(build_mesh(&unit_square(), &|p: &Point| p.x - 0.5, 1.0).is_err());
    }

    #[test]
    fn barrier_examples() {
        let b = Barrier { nu: 1.0, r_min: 8f64.sqrt() }.anisotropy(1.0);
        assert!((b.kappa - 1.0).abs() < 1e-15);
        assert!((b.h - Matrix2::identity()).abs().max() < 1e-15);
        let b = Barrier { nu: 2.0, r_min: 4.0 }.anisotropy(1.0);
        assert_eq!(b.kappa, 1.0);
        assert_eq!(b.h, Matrix2::identity());
        // J = kappa H^{-1/2} = sqrt(8 nu)/r_min I
        let b = Barrier { nu: 1.0, r_min: 0.5 }.anisotropy(1.0);
        let j = b.kappa / b.h[(0, 0)].sqrt();
        assert!((j - 8f64.sqrt() / 0.5).abs() < 1e-12);
    }

    #[test]
    fn barrier_only_touches_extension() {
        let m = build_mesh(&unit_square(), &|_| 0.5, 1.0).unwrap();
        let mut p = DeformParams::identity(1, BBox::new(0.0, 0.0, 1.0, 1.0), 2, -1.0, TauSpec::UnitVariance);
        p.beta[0][1] = 0.3;
        let plain = m.triangle_params(&p).unwrap();
        let mb = apply_barrier(&m, 1.0, 0.5).unwrap();
        let with = mb.triangle_params(&p).unwrap();
        let twice = apply_barrier(&mb, 1.0, 0.5).unwrap().triangle_params(&p).unwrap();
        for t in 0..m.n_triangles() {
            if m.is_extension[t] {
                assert!((with[t].kappa - 32.0).abs() < 1e-12);
            } else {
                assert_eq!(with[t], plain[t]);
            }
            assert_eq!(with[t], twice[t]);
        }
        assert!(apply_barrier(&m, 1.0, 0.0).is_err());
    }

    #[test]
    fn locate_points() {
        let m = build_mesh(&unit_square(), &|_| 1.0, 0.5).unwrap();
        let (_, w) = m.locate(&m.nodes[7]).unwrap();
        assert!(w.iter().filter(|&&v| (v - 1.0).abs() < 1e-12).count() == 1);
        let c = m.centroid(11);
        let (t, w) = m.locate(&c).unwrap();
        assert_eq!(t, 11);
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(matches!(m.locate(&Point::new(10.0, 0.0)), Err(Error::OutsideMesh { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn edge_bound_holds(a in 0.3f64..1.0, b in -0.2f64..0.2, c in -0.2f64..0.2, f in 0.0f64..2.0) {
            let range = move |p: &Point| a + b * p.x + c * (3.0 * p.y).sin();
            let dom = ConvexPolygon::new(vec![
                Point::new(0.0, 0.0), Point::new(1.5, 0.1), Point::new(1.2, 1.0), Point::new(-0.1, 0.8),
            ]).unwrap();
            let m = build_mesh(&dom, &range, f).unwrap();
            for t in 0..m.n_triangles() {
                let bound = if m.is_extension[t] { m.r_min / 5.0 } else { range(&m.centroid(t)) / 5.0 };
                prop_assert!(m.longest_edge(t) <= bound * (1.0 + 1e-12));
            }
            assert_conforming(&m);
        }
    }
}
