//! Finite element discretisation of the deformed SPDE and the resulting GMRF.
//!
//! With piecewise-linear hat functions `φ_i`, triangle-constant `κ`, `τ`, `H`
//! and smoothness `α`, one application of the operator is
//!
//! ```text
//! K = τ^{2/α} (κ^{2/α} C̃ + κ^{2/α−2} G_H),
//! ```
//!
//! where `C̃` is the lumped mass and `G_H` the `H`-weighted stiffness, so that
//! `α` applications carry `τ²` and `κ^{2−α}(κ² − ∇·H∇)^{α/2}` overall. At
//! `α = 2` this is `B + G` with `B_ij = ⟨κτφ_j, φ_i⟩`,
//! `G_ij = ⟨H∇(τφ_j), ∇(κ⁻¹φ_i)⟩`. The precision follows the recursion
//! `Q¹ = K`, `Q² = K C⁻¹ K`, `Q^α = K C⁻¹ Q^{α−2} C⁻¹ K`.
//!
//! Nodes on the outer boundary of the mesh are eliminated (zero Dirichlet
//! condition); the remaining nodes are the degrees of freedom.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data_ingest::{GridDataset, GridShape};
use crate::deformation::{DeformParams, LocalAnisotropy};
use crate::error::{Error, Result};
use crate::mesh::{apply_barrier, build_mesh, ConvexPolygon, TriMesh};
use crate::sparse::{CholeskyFactor, CsrMatrix, SymbolicCache};
use crate::Point;

const NONE: usize = usize::MAX;

/// Area and unweighted element stiffness `A ∇φ_iᵀ H ∇φ_j` of a triangle.
pub fn element_stiffness(p: [Point; 3], h: &nalgebra::Matrix2<f64>) -> (f64, [[f64; 3]; 3]) {
    let area2 = (p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[1].y - p[0].y) * (p[2].x - p[0].x);
    let area = 0.5 * area2;
    // ∇φ_i = rot90(p_{i+2} − p_{i+1}) / (2A)
    let grads: [nalgebra::Vector2<f64>; 3] = std::array::from_fn(|i| {
        let e = p[(i + 2) % 3] - p[(i + 1) % 3];
        nalgebra::Vector2::new(-e.y, e.x) / area2
    });
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = area * grads[i].dot(&(h * grads[j]));
            s[i][j] = v;
            s[j][i] = v;
        }
    }
    (area, s)
}

/// FEM matrices restricted to the degrees of freedom.
#[derive(Clone, Debug)]
pub struct Assembled {
    /// Degree of freedom → mesh node.
    pub dofs: Vec<usize>,
    /// Mesh node → degree of freedom (`usize::MAX` on the boundary).
    pub node_dof: Vec<usize>,
    /// `C_ii = ⟨1, φ_i⟩`.
    pub c_diag: Vec<f64>,
    /// Diagonal of the lumped weighted mass term.
    pub b_diag: Vec<f64>,
    pub g: CsrMatrix,
    pub k: CsrMatrix,
}

struct Element {
    nodes: [usize; 3],
    mass: f64,
    mass_weighted: f64,
    stiff: [[f64; 3]; 3],
}

/// Assembles `C`, `B`, `G` and `K` from per-triangle parameters.
pub fn assemble_from(mesh: &TriMesh, tri: &[LocalAnisotropy], alpha: u32) -> Result<Assembled> {
    if alpha < 1 {
        return Err(Error::invalid("alpha must be a positive integer"));
    }
    if tri.len() != mesh.n_triangles() {
        return Err(Error::invalid("one parameter set per triangle is required"));
    }
    let a = alpha as f64;
    let elements: Vec<Element> = (0..mesh.n_triangles())
        .into_par_iter()
        .map(|t| {
            let la = &tri[t];
            let ok = la.kappa > 0.0
                && la.kappa.is_finite()
                && la.tau > 0.0
                && la.tau.is_finite()
                && la.h.iter().all(|v| v.is_finite());
            if !ok {
                return Err(Error::NonFinite {
                    triangle: t,
                    what: format!("kappa = {}, tau = {}", la.kappa, la.tau),
                });
            }
            let nodes = mesh.triangles[t];
            let (area, s) = element_stiffness(nodes.map(|i| mesh.nodes[i]), &la.h);
            let tau_w = la.tau.powf(2.0 / a);
            let mw = tau_w * la.kappa.powf(2.0 / a);
            let sw = tau_w * la.kappa.powf(2.0 / a - 2.0);
            let stiff = s.map(|row| row.map(|v| v * sw));
            if !(mw.is_finite() && stiff.iter().flatten().all(|v| v.is_finite())) {
                return Err(Error::NonFinite {
                    triangle: t,
                    what: "element matrix overflow".into(),
                });
            }
            Ok(Element {
                nodes,
                mass: area / 3.0,
                mass_weighted: mw * area / 3.0,
                stiff,
            })
        })
        .collect::<Result<_>>()?;

    let n_nodes = mesh.n_nodes();
    let dofs = mesh.interior_nodes();
    let mut node_dof = vec![NONE; n_nodes];
    for (d, &i) in dofs.iter().enumerate() {
        node_dof[i] = d;
    }
    let n = dofs.len();
    let mut c_diag = vec![0.0; n];
    let mut b_diag = vec![0.0; n];
    let mut trip = Vec::with_capacity(elements.len() * 9);
    for el in &elements {
        let d = el.nodes.map(|i| node_dof[i]);
        for i in 0..3 {
            if d[i] == NONE {
                continue;
            }
            c_diag[d[i]] += el.mass;
            b_diag[d[i]] += el.mass_weighted;
            for j in 0..3 {
                if d[j] != NONE {
                    trip.push((d[i], d[j], el.stiff[i][j]));
                }
            }
        }
    }
    let g = CsrMatrix::from_triplets(n, n, &trip);
    let k = g.add_scaled(1.0, &CsrMatrix::from_diagonal(&b_diag), 1.0);
    Ok(Assembled {
        dofs,
        node_dof,
        c_diag,
        b_diag,
        g,
        k,
    })
}

/// Assembles with centroid-evaluated parameters (barrier applied).
pub fn assemble(mesh: &TriMesh, params: &DeformParams) -> Result<Assembled> {
    let tri = mesh.triangle_params(params)?;
    assemble_from(mesh, &tri, params.alpha)
}

/// `Q^(α)` by the recursion; the result is exactly symmetric.
pub fn precision(c_diag: &[f64], k: &CsrMatrix, alpha: u32) -> Result<CsrMatrix> {
    if alpha < 1 {
        return Err(Error::invalid("alpha must be a positive integer"));
    }
    if c_diag.iter().any(|&c| !(c > 0.0)) {
        return Err(Error::invalid("lumped mass must be positive"));
    }
    let c_inv: Vec<f64> = c_diag.iter().map(|c| 1.0 / c).collect();
    let mut q = if alpha % 2 == 1 {
        k.clone()
    } else {
        k.mul_diag(Some(&c_inv), k)
    };
    for _ in 0..(alpha - 1) / 2 {
        let left = k.mul_diag(Some(&c_inv), &q);
        q = left.mul_diag(Some(&c_inv), k);
    }
    q.symmetrize_from_upper();
    Ok(q)
}

/// Sparse `J × N` matrix of barycentric weights, `A_ji = φ_i(s_j)`.
pub fn observation_matrix(mesh: &TriMesh, locations: &[Point]) -> Result<CsrMatrix> {
    let mut trip = Vec::with_capacity(3 * locations.len());
    for (j, p) in locations.iter().enumerate() {
        let (t, w) = mesh.locate(p)?;
        for (k, &node) in mesh.triangles[t].iter().enumerate() {
            if w[k] != 0.0 {
                trip.push((j, node, w[k]));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(locations.len(), mesh.n_nodes(), &trip))
}

/// Restricts an observation matrix to the degrees of freedom.
pub fn restrict_to_dofs(a: &CsrMatrix, dofs: &[usize]) -> CsrMatrix {
    let rows: Vec<usize> = (0..a.nrows()).collect();
    a.submatrix(&rows, dofs)
}

#[derive(Clone, Debug)]
pub struct PrecisionModel {
    pub alpha: u32,
    pub assembled: Assembled,
    pub q: CsrMatrix,
    factor: CholeskyFactor,
    n_nodes: usize,
}

impl PrecisionModel {
    pub fn build(mesh: &TriMesh, params: &DeformParams) -> Result<Self> {
        Self::build_cached(mesh, params, &SymbolicCache::new())
    }

    pub fn build_cached(mesh: &TriMesh, params: &DeformParams, cache: &SymbolicCache) -> Result<Self> {
        let assembled = assemble(mesh, params)?;
        Self::from_assembled(assembled, params.alpha, mesh.n_nodes(), cache)
    }

    pub fn from_assembled(
        assembled: Assembled,
        alpha: u32,
        n_nodes: usize,
        cache: &SymbolicCache,
    ) -> Result<Self> {
        let q = precision(&assembled.c_diag, &assembled.k, alpha)?;
        let factor = cache.factor(&q)?;
        Ok(PrecisionModel {
            alpha,
            assembled,
            q,
            factor,
            n_nodes,
        })
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    pub fn n_dofs(&self) -> usize {
        self.assembled.dofs.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    fn scatter(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_nodes];
        for (d, &node) in self.assembled.dofs.iter().enumerate() {
            out[node] = x[d];
        }
        out
    }

    fn gather(&self, v: &[f64]) -> Vec<f64> {
        self.assembled.dofs.iter().map(|&node| v[node]).collect()
    }

    /// `n` independent draws over all mesh nodes (zero on the boundary).
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.n_dofs();
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                self.scatter(&self.factor.sample_from_standard(&z))
            })
            .collect()
    }

    /// `n` draws of `A x + ε` with `ε ~ N(0, nugget_sd² I)` for a
    /// node-indexed observation matrix `A`. Draw `i` uses stream `i` of the
    /// seeded generator, so the result does not depend on the thread count.
    pub fn simulate_at(&self, a: &CsrMatrix, nugget_sd: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let m = self.n_dofs();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let z: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let x = self.scatter(&self.factor.sample_from_standard(&z));
                a.matvec(&x)
                    .into_iter()
                    .map(|v| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        v + nugget_sd * e
                    })
                    .collect()
            })
            .collect()
    }

    /// Field variance at each row of a node-indexed observation matrix.
    pub fn variances_at(&self, a: &CsrMatrix) -> Vec<f64> {
        (0..a.nrows())
            .into_par_iter()
            .map(|r| {
                let mut w = vec![0.0; self.n_nodes];
                for (c, v) in a.row(r) {
                    w[c] = v;
                }
                self.variance_of(&w)
            })
            .collect()
    }

    /// Like [`simulate_at`](Self::simulate_at) with the same marginal
    /// variances but independent rows.
    pub fn simulate_independent_at(&self, a: &CsrMatrix, nugget_sd: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let sd: Vec<f64> = self
            .variances_at(a)
            .into_iter()
            .map(|v| (v + nugget_sd * nugget_sd).sqrt())
            .collect();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                sd.iter()
                    .map(|s| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        s * z
                    })
                    .collect()
            })
            .collect()
    }

    /// Dense covariance `A Q⁻¹ Aᵀ` of the field at the rows of a
    /// node-indexed observation matrix.
    pub fn covariance_at(&self, a: &CsrMatrix) -> nalgebra::DMatrix<f64> {
        let m = a.nrows();
        let cols: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|r| {
                let mut w = vec![0.0; self.n_nodes];
                for (c, v) in a.row(r) {
                    w[c] = v;
                }
                a.matvec(&self.covariance_with(&w))
            })
            .collect();
        let mut cov = nalgebra::DMatrix::from_fn(m, m, |i, j| cols[j][i]);
        // exact symmetry for downstream Cholesky
        for i in 0..m {
            for j in 0..i {
                let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        cov
    }

    /// `Q⁻¹ w` for a node-indexed weight vector (boundary weights ignored).
    pub fn covariance_with(&self, w: &[f64]) -> Vec<f64> {
        self.scatter(&self.factor.solve(&self.gather(w)))
    }

    /// Column `node` of the covariance, `Q⁻¹ e_node`, over all mesh nodes.
    pub fn covariance_column(&self, node: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.n_nodes];
        e[node] = 1.0;
        self.covariance_with(&e)
    }

    /// `Var(Σ_i w_i x_i)` for a node-indexed weight vector.
    pub fn variance_of(&self, w: &[f64]) -> f64 {
        self.factor.inverse_quadratic_form(&self.gather(w))
    }

    pub fn marginal_variance(&self, node: usize) -> f64 {
        if self.assembled.node_dof[node] == NONE {
            return 0.0;
        }
        let mut e = vec![0.0; self.n_nodes];
        e[node] = 1.0;
        self.variance_of(&e)
    }

    /// Correlations of every node with `node`; requires variances at all nodes,
    /// so only use on moderate meshes. All zero for a boundary node.
    pub fn correlation_column(&self, node: usize) -> Vec<f64> {
        let col = self.covariance_column(node);
        let v0 = col[node];
        if !(v0 > 0.0) {
            return vec![0.0; self.n_nodes];
        }
        let vars: Vec<f64> = (0..self.n_nodes)
            .into_par_iter()
            .map(|i| self.marginal_variance(i))
            .collect();
        col.iter()
            .zip(&vars)
            .map(|(c, v)| if *v > 0.0 { c / (v * v0).sqrt() } else { 0.0 })
            .collect()
    }
}

/// Dataset of `n` replicates of `H_s = exp(X)` on the ocean cells of `grid`,
/// where `X` is the model field plus the nugget. Returns the dataset and the
/// mesh used for simulation.
pub fn synthesize_dataset(
    params: &DeformParams,
    grid: GridShape,
    land_mask: Vec<bool>,
    n: usize,
    seed: u64,
    extension_factor: f64,
) -> Result<(GridDataset, TriMesh)> {
    params.validate()?;
    let (x0, y0, x1, y1) = grid.bounds();
    let dom = ConvexPolygon::rectangle(x0, y0, x1, y1)?;
    let range = |p: &Point| params.practical_range(p);
    let m = build_mesh(&dom, &range, extension_factor)?;
    let mesh = apply_barrier(&m, params.nu().max(0.5), m.r_min)?;
    let model = PrecisionModel::build(&mesh, params)?;
    let empty = GridDataset::new(grid, land_mask, Vec::new(), None)?;
    let a = observation_matrix(&mesh, &empty.locations)?;
    let reps = model
        .simulate_at(&a, params.sigma_eps(), n, seed)
        .into_iter()
        .map(|r| r.into_iter().map(f64::exp).collect())
        .collect();
    let data = GridDataset::new(empty.grid, empty.land_mask, reps, None)?;
    Ok((data, mesh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deformation::{BBox, TauSpec};
    use crate::mesh::{build_mesh, ConvexPolygon};
    use nalgebra::Matrix2;

    fn la(kappa: f64, tau: f64, h: Matrix2<f64>) -> LocalAnisotropy {
        LocalAnisotropy {
            h_tilde: h / (kappa * kappa),
            kappa,
            h,
            tau,
        }
    }

    #[test]
    fn reference_element() {
        let p = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        let (area, s) = element_stiffness(p, &Matrix2::identity());
        assert_eq!(area, 0.5);
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((s[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    fn small_mesh() -> TriMesh {
        build_mesh(&ConvexPolygon::rectangle(0.0, 0.0, 1.0, 1.0).unwrap(), &|_| 1.5, 0.5).unwrap()
    }

    #[test]
    fn kappa_scaling() {
        let m = small_mesh();
        let h = Matrix2::new(1.3, 0.2, 0.2, 0.8);
        let a1 = assemble_from(&m, &vec![la(1.0, 1.0, h); m.n_triangles()], 2).unwrap();
        let a2 = assemble_from(&m, &vec![la(2.0, 1.0, h); m.n_triangles()], 2).unwrap();
        for (x, y) in a1.b_diag.iter().zip(&a2.b_diag) {
            assert!((2.0 * x - y).abs() < 1e-14 * y.abs());
        }
        for (x, y) in a1.g.data().iter().zip(a2.g.data()) {
            assert!((0.5 * x - y).abs() <= 1e-14 * x.abs());
        }
        for (c, b) in a1.c_diag.iter().zip(&a1.b_diag) {
            assert!(*c > 0.0 && (c - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_tau_is_rejected() {
        let m = small_mesh();
        let mut tri = vec![la(1.0, 1.0, Matrix2::identity()); m.n_triangles()];
        tri[3].tau = 0.0;
        assert!(matches!(assemble_from(&m, &tri, 2), Err(Error::NonFinite { triangle: 3, .. })));
    }

    #[test]
    fn recursion_scalars() {
        let id = CsrMatrix::identity(4);
        let q2 = precision(&[1.0; 4], &id, 2).unwrap();
        assert_eq!(q2.to_dense(), nalgebra::DMatrix::identity(4, 4));
        let q3 = precision(&[2.0; 4], &id, 3).unwrap();
        assert_eq!(q3.to_dense(), nalgebra::DMatrix::identity(4, 4) * 0.25);
    }

    #[test]
    fn precision_symmetry_and_fill() {
        let m = small_mesh();
        let mut p = DeformParams::identity(1, BBox::new(0.0, 0.0, 1.0, 1.0), 2, -1.0, TauSpec::UnitVariance);
        p.beta[0][1] = 0.4;
        p.beta[2][3] = -0.7;
        let a = assemble(&m, &p).unwrap();
        let nnz: Vec<usize> = (1..=3)
            .map(|alpha| {
                let q = precision(&a.c_diag, &a.k, alpha).unwrap();
                assert!(q.is_exactly_symmetric());
                q.nnz()
            })
            .collect();
        assert!(nnz[0] < nnz[1] && nnz[1] < nnz[2]);
        let q2 = precision(&a.c_diag, &a.k, 2).unwrap();
        let kd = a.k.to_dense();
        let cinv = nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            a.c_diag.len(),
            a.c_diag.iter().map(|c| 1.0 / c),
        ));
        let dense = kd.transpose() * cinv * kd;
        assert!((q2.to_dense() - dense).abs().max() < 1e-12 * q2.to_dense().abs().max());
    }

    #[test]
    fn observation_rows() {
        let m = small_mesh();
        let pts = [m.nodes[5], m.centroid(9), {
            let [a, b, _] = m.triangles[4];
            Point::from((m.nodes[a].coords + m.nodes[b].coords) / 2.0)
        }];
        let a = observation_matrix(&m, &pts).unwrap();
        for r in 0..3 {
            let s: f64 = a.row(r).map(|(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.row(0).filter(|&(_, v)| v > 1e-12).count(), 1);
        assert!((a.get(0, 5) - 1.0).abs() < 1e-12);
        assert!(a.row(1).all(|(_, v)| (v - 1.0 / 3.0).abs() < 1e-12));
        let halves: Vec<f64> = a.row(2).map(|(_, v)| v).filter(|v| *v > 1e-12).collect();
        assert_eq!(halves.len(), 2);
        assert!(halves.iter().all(|v| (v - 0.5).abs() < 1e-12));
        assert!(observation_matrix(&m, &[Point::new(50.0, 0.0)]).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = small_mesh();
        let p = DeformParams::identity(0, BBox::new(0.0, 0.0, 1.0, 1.0), 2, -1.0, TauSpec::UnitVariance);
        let model = PrecisionModel::build(&m, &p).unwrap();
        assert_eq!(model.sample(3, 7), model.sample(3, 7));
        assert_ne!(model.sample(1, 7), model.sample(1, 8));
        assert!(model.sample(0, 1).is_empty());
        let b = m.nodes.iter().position(|_| true).filter(|&i| m.is_boundary_node(i));
        if let Some(b) = b {
            assert_eq!(model.sample(1, 3)[0][b], 0.0);
        }
    }

    #[test]
    fn covariance_column_is_solve() {
        let m = small_mesh();
        let p = DeformParams::identity(0, BBox::new(0.0, 0.0, 1.0, 1.0), 2, -1.0, TauSpec::UnitVariance);
        let model = PrecisionModel::build(&m, &p).unwrap();
        let node = model.assembled.dofs[model.n_dofs() / 2];
        let col = model.covariance_column(node);
        let d = model.assembled.node_dof[node];
        let qd = model.q.to_dense();
        let inv = qd.try_inverse().unwrap();
        for (dd, &nd) in model.assembled.dofs.iter().enumerate() {
            assert!((col[nd] - inv[(dd, d)]).abs() < 1e-10 * inv[(d, d)]);
        }
        assert!((model.marginal_variance(node) - inv[(d, d)]).abs() < 1e-10 * inv[(d, d)]);
        let corr = model.correlation_column(node);
        assert!((corr[node] - 1.0).abs() < 1e-12);
    }
    fn small_model() -> (TriMesh, PrecisionModel) {
        let bbox = BBox::new(0.0, 0.0, 4.0, 4.0);
        let p = DeformParams::identity(0, bbox, 2, -1.0, TauSpec::UnitVariance);
        let dom = ConvexPolygon::rectangle(0.0, 0.0, 4.0, 4.0).unwrap();
        let range = |s: &Point| p.practical_range(s);
        let mesh = apply_barrier(&build_mesh(&dom, &range, 1.0).unwrap(), 1.0, 1.0).unwrap();
        let model = PrecisionModel::build(&mesh, &p).unwrap();
        (mesh, model)
    }

    #[test]
    fn simulation_ignores_thread_count() {
        let (mesh, model) = small_model();
        let pts = [Point::new(1.0, 1.0), Point::new(2.5, 3.0)];
        let a = observation_matrix(&mesh, &pts).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    (
                        model.simulate_at(&a, 0.1, 7, 3),
                        model.simulate_independent_at(&a, 0.1, 7, 3),
                    )
                })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn independent_draws_match_marginal_variance() {
        let (mesh, model) = small_model();
        let a = observation_matrix(&mesh, &[Point::new(2.0, 2.0)]).unwrap();
        let v = model.variances_at(&a)[0] + 0.25;
        let draws = model.simulate_independent_at(&a, 0.5, 20000, 1);
        let m = draws.iter().map(|d| d[0] * d[0]).sum::<f64>() / 20000.0;
        assert!((m / v - 1.0).abs() < 0.05, "{m} vs {v}");
    }

    #[test]
    fn synthesize_zero_replicates() {
        let grid = GridShape::regular(3, 2, 0.0, 0.0, 1.0, 1.0);
        let p = DeformParams::identity(0, BBox::new(0.0, 0.0, 2.0, 1.0), 2, -1.0, TauSpec::UnitVariance);
        let (data, _) = synthesize_dataset(&p, grid, vec![false; 6], 0, 1, 1.0).unwrap();
        assert_eq!(data.n_replicates(), 0);
        assert_eq!(data.n_locations(), 6);
    }
}

