//! Reconstruction of the deformed-space coordinates of mesh nodes.
//!
//! The inverse deformation has the symmetric positive definite Jacobian
//! `J = κ·H^{-1/2}`. Node coordinates follow by integrating `J` along mesh
//! edges outward from a base node.

use std::collections::VecDeque;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::Serialize;

use crate::deformation::DeformParams;
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::Point;

/// Neighbour visiting order of the breadth-first traversal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub enum NeighbourOrder {
    #[default]
    Ascending,
    Descending,
}

#[derive(Clone, Debug, Serialize)]
pub struct DspaceMap {
    pub node_coords: Vec<Point>,
    pub base_node: usize,
    /// First traversal edge from the base node, used for rigid alignment.
    pub first_edge: Option<(usize, usize)>,
    /// Signed area of every mapped triangle.
    pub mapped_area: Vec<f64>,
    pub fold_triangles: Vec<usize>,
    /// Nodes the traversal could not reach (coordinates are NaN).
    pub unreached: Vec<usize>,
    /// Closed-loop displacement norm of each triangle divided by its
    /// perimeter times the mean `‖J‖₂` at its vertices.
    pub loop_defects: Vec<f64>,
    /// Sum of the absolute closed-loop displacements over all triangles.
    pub total_loop_defect: f64,
}

/// `κ·H^{-1/2}` by eigendecomposition.
pub fn jacobian_from_h(h: &Matrix2<f64>, kappa: f64) -> Result<Matrix2<f64>> {
    if (h[(0, 1)] - h[(1, 0)]).abs() > 1e-12 * h.norm() || !(kappa > 0.0) {
        return Err(Error::invalid("H must be symmetric and kappa positive"));
    }
    let eig = SymmetricEigen::new(*h);
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("H is not positive definite"));
    }
    let d = Matrix2::from_diagonal(&eig.eigenvalues.map(|l| kappa / l.sqrt()));
    Ok(eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Jacobian field of the model parameters.
pub fn params_jacobian(params: &DeformParams) -> impl Fn(&Point) -> Matrix2<f64> + '_ {
    move |p| {
        let a = params.eval_anisotropy(p);
        jacobian_from_h(&a.h, a.kappa).unwrap_or_else(|_| Matrix2::from_element(f64::NAN))
    }
}

/// Node nearest the centroid of the mesh domain.
pub fn default_base_node(mesh: &TriMesh) -> usize {
    mesh.nearest_node(&mesh.domain.centroid())
}

/// `∫ J ds` along the straight edge `a → b` by Simpson's rule.
pub fn edge_integral(j: &dyn Fn(&Point) -> Matrix2<f64>, a: &Point, b: &Point) -> Vector2<f64> {
    let m = Point::from((a.coords + b.coords) / 2.0);
    (j(a) + 4.0 * j(&m) + j(b)) / 6.0 * (b - a)
}

fn signed_area(p: &[Point; 3]) -> f64 {
    0.5 * ((p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y))
}

/// Triangles whose mapped orientation is reversed.
pub fn detect_folds(node_coords: &[Point], mesh: &TriMesh) -> Vec<usize> {
    (0..mesh.n_triangles())
        .filter(|&t| signed_area(&mesh.triangles[t].map(|i| node_coords[i])) < 0.0)
        .collect()
}

/// Integrates `j` breadth-first from `base_node`.
pub fn reconstruct_with(
    mesh: &TriMesh,
    j: &dyn Fn(&Point) -> Matrix2<f64>,
    base_node: usize,
    order: NeighbourOrder,
) -> Result<DspaceMap> {
    let n = mesh.n_nodes();
    if base_node >= n {
        return Err(Error::invalid(format!("base node {base_node} out of range")));
    }
    let mut adj = mesh.node_neighbors();
    if order == NeighbourOrder::Descending {
        adj.iter_mut().for_each(|l| l.reverse());
    }
    let mut coords = vec![Point::new(f64::NAN, f64::NAN); n];
    coords[base_node] = Point::origin();
    let mut first_edge = None;
    let mut queue = VecDeque::from([base_node]);
    while let Some(a) = queue.pop_front() {
        for &b in &adj[a] {
            if coords[b].x.is_nan() {
                let d = edge_integral(j, &mesh.nodes[a], &mesh.nodes[b]);
                if !d.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite {
                        triangle: usize::MAX,
                        what: format!("Jacobian along edge {a}-{b}"),
                    });
                }
                coords[b] = coords[a] + d;
                first_edge.get_or_insert((a, b));
                queue.push_back(b);
            }
        }
    }
    let unreached: Vec<usize> = (0..n).filter(|&i| coords[i].x.is_nan()).collect();
    let mut loop_defects = Vec::with_capacity(mesh.n_triangles());
    let mut total_loop_defect = 0.0;
    for tri in &mesh.triangles {
        let p = tri.map(|i| mesh.nodes[i]);
        let mut disp = Vector2::zeros();
        let mut perim = 0.0;
        for e in 0..3 {
            disp += edge_integral(j, &p[e], &p[(e + 1) % 3]);
            perim += (p[(e + 1) % 3] - p[e]).norm();
        }
        let jn = p.iter().map(|q| j(q).norm().max(0.0)).sum::<f64>() / 3.0;
        total_loop_defect += disp.norm();
        loop_defects.push(disp.norm() / (perim * jn));
    }
    let mapped_area = mesh
        .triangles
        .iter()
        .map(|tri| signed_area(&tri.map(|i| coords[i])))
        .collect();
    let fold_triangles = detect_folds(&coords, mesh);
    Ok(DspaceMap {
        node_coords: coords,
        base_node,
        first_edge,
        mapped_area,
        fold_triangles,
        unreached,
        loop_defects,
        total_loop_defect,
    })
}

/// Reconstruction from fitted parameters.
pub fn reconstruct_dspace(mesh: &TriMesh, params: &DeformParams, base_node: usize) -> Result<DspaceMap> {
    params.validate()?;
    reconstruct_with(mesh, &params_jacobian(params), base_node, NeighbourOrder::Ascending)
}

impl DspaceMap {
    /// Coordinates rotated so the first traversal edge points along `+x`.
    pub fn aligned_coords(&self) -> Vec<Point> {
        let Some((a, b)) = self.first_edge else {
            return self.node_coords.clone();
        };
        let d = self.node_coords[b] - self.node_coords[a];
        let (c, s) = (d.x / d.norm(), d.y / d.norm());
        self.node_coords
            .iter()
            .map(|p| Point::new(c * p.x + s * p.y, -s * p.x + c * p.y))
            .collect()
    }

    pub fn max_loop_defect(&self) -> f64 {
        self.loop_defects.iter().copied().fold(0.0, f64::max)
    }

    /// CSV of `node, gx, gy, dx, dy`.
    pub fn nodes_csv(&self, mesh: &TriMesh) -> String {
        let mut out = String::from("node,gx,gy,dx,dy\n");
        for (i, (g, d)) in mesh.nodes.iter().zip(&self.node_coords).enumerate() {
            out.push_str(&format!("{i},{},{},{},{}\n", g.x, g.y, d.x, d.y));
        }
        out
    }
}

/// Relative differences of mapped edge lengths between two reconstructions.
pub fn edge_length_errors(mesh: &TriMesh, estimate: &[Point], truth: &[Point]) -> Vec<f64> {
    mesh.edges()
        .into_iter()
        .map(|(a, b)| {
            let lt = (truth[b] - truth[a]).norm();
            ((estimate[b] - estimate[a]).norm() - lt).abs() / lt
        })
        .collect()
}
