//! Replicate log-likelihood through sparse precision matrices.
//!
//! For `Y_k = A U_k + ε_k`, `U_k ~ N(0, Q⁻¹)`, `ε_k ~ N(0, σ²I)`:
//!
//! ```text
//! l = K/2 (log|Q| − J log σ² − log|Q_post| − J log 2π)
//!     + 1/(2σ²) Σ_k y_kᵀ (σ⁻² A Q_post⁻¹ Aᵀ − I) y_k,
//! Q_post = Q + σ⁻² AᵀA.
//! ```
//!
//! The replicate sum only needs `S = Σ_k y_k y_kᵀ = R Rᵀ`, so the cost per
//! evaluation is two factorisations plus `min(K, J)` triangular solves.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::data_ingest::GridDataset;
use crate::deformation::DeformParams;
use crate::error::{Error, Result};
use crate::fem_gmrf::{assemble, observation_matrix, precision, restrict_to_dofs};
use crate::mesh::TriMesh;
use crate::sparse::{CsrMatrix, SymbolicCache};

/// Data, mesh and cached symbolic factorisations for repeated evaluation.
#[derive(Debug)]
pub struct LikelihoodProblem {
    mesh: TriMesh,
    /// `J × n_dof` observation matrix.
    a: CsrMatrix,
    /// `AᵀA`, exactly symmetric.
    ata: CsrMatrix,
    /// Columns `Aᵀ R_r` of the factorised second moment.
    atr: Vec<Vec<f64>>,
    trace_s: f64,
    n_rep: usize,
    n_obs: usize,
    q_cache: SymbolicCache,
    post_cache: SymbolicCache,
}

impl LikelihoodProblem {
    /// `data` must already be centred (zero-mean model).
    pub fn new(mesh: &TriMesh, data: &GridDataset) -> Result<Self> {
        Self::from_replicates(mesh, &data.locations, &data.replicates)
    }

    pub fn from_replicates(mesh: &TriMesh, locations: &[crate::Point], replicates: &[Vec<f64>]) -> Result<Self> {
        let j = locations.len();
        if j == 0 || replicates.is_empty() {
            return Err(Error::invalid("the likelihood needs observations and replicates"));
        }
        if replicates.iter().any(|r| r.len() != j) {
            return Err(Error::invalid("replicate length differs from the location count"));
        }
        let dofs = mesh.interior_nodes();
        let a = restrict_to_dofs(&observation_matrix(mesh, locations)?, &dofs);
        let at = a.transpose();
        let mut ata = at.mul_diag(None, &a);
        ata.symmetrize_from_upper();

        let k = replicates.len();
        let r_cols: Vec<Vec<f64>> = if k <= j {
            replicates.to_vec()
        } else {
            let mut s = DMatrix::<f64>::zeros(j, j);
            for y in replicates {
                let v = nalgebra::DVector::from_column_slice(y);
                s.syger(1.0, &v, &v, 1.0);
            }
            s.fill_upper_triangle_with_lower_triangle();
            let eig = SymmetricEigen::new(s);
            (0..j)
                .filter(|&c| eig.eigenvalues[c] > 0.0)
                .map(|c| {
                    let w = eig.eigenvalues[c].sqrt();
                    eig.eigenvectors.column(c).iter().map(|v| v * w).collect()
                })
                .collect()
        };
        let trace_s = replicates.iter().flatten().map(|v| v * v).sum();
        let atr = r_cols.iter().map(|r| at.matvec(r)).collect();
        Ok(LikelihoodProblem {
            mesh: mesh.clone(),
            a,
            ata,
            atr,
            trace_s,
            n_rep: k,
            n_obs: j,
            q_cache: SymbolicCache::new(),
            post_cache: SymbolicCache::new(),
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn n_replicates(&self) -> usize {
        self.n_rep
    }

    pub fn n_observations(&self) -> usize {
        self.n_obs
    }

    /// Observation matrix restricted to the degrees of freedom.
    pub fn observation_matrix(&self) -> &CsrMatrix {
        &self.a
    }

    /// `Q_U` for the given parameters.
    pub fn prior_precision(&self, params: &DeformParams) -> Result<CsrMatrix> {
        let asm = assemble(&self.mesh, params)?;
        precision(&asm.c_diag, &asm.k, params.alpha)
    }

    /// Log-likelihood of all replicates.
    pub fn log_likelihood(&self, params: &DeformParams) -> Result<f64> {
        let sigma2 = (2.0 * params.log_sigma_eps).exp();
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::invalid("the nugget variance must be positive and finite"));
        }
        let q = self.prior_precision(params)?;
        let fq = self.q_cache.factor(&q)?;
        let post = q.add_scaled(1.0, &self.ata, 1.0 / sigma2);
        let fpost = self.post_cache.factor(&post)?;

        // summed in order so the value does not depend on the thread count
        let quad: f64 = self
            .atr
            .par_iter()
            .map(|v| fpost.inverse_quadratic_form(v))
            .collect::<Vec<_>>()
            .iter()
            .sum();
        let (k, j) = (self.n_rep as f64, self.n_obs as f64);
        let det_part = 0.5 * k * (fq.log_det() - j * sigma2.ln() - fpost.log_det() - j * (2.0 * PI).ln());
        let l = det_part + (quad / sigma2 - self.trace_s) / (2.0 * sigma2);
        if l.is_finite() {
            Ok(l)
        } else {
            Err(Error::NonFinite {
                triangle: usize::MAX,
                what: "log-likelihood".into(),
            })
        }
    }
}

/// Log-likelihood through `f(y) = f(u*) f(y|u*) / f(u*|y)` at an arbitrary
/// conditioning point `u*` (over the degrees of freedom), one replicate at a time.
pub fn log_likelihood_conditional(
    problem: &LikelihoodProblem,
    params: &DeformParams,
    replicates: &[Vec<f64>],
    u_star: &[f64],
) -> Result<f64> {
    let sigma2 = (2.0 * params.log_sigma_eps).exp();
    let q = problem.prior_precision(params)?;
    let fq = crate::sparse::CholeskyFactor::new(&q)?;
    let post = q.add_scaled(1.0, &problem.ata, 1.0 / sigma2);
    let fpost = crate::sparse::CholeskyFactor::new(&post)?;
    let n = q.nrows() as f64;
    let j = problem.n_obs as f64;
    let log2pi = (2.0 * PI).ln();
    let qu = q.matvec(u_star);
    let log_prior = 0.5 * fq.log_det() - 0.5 * n * log2pi - 0.5 * dot(u_star, &qu);
    let au = problem.a.matvec(u_star);
    let at = problem.a.transpose();
    let mut total = 0.0;
    for y in replicates {
        let resid: f64 = y.iter().zip(&au).map(|(a, b)| (a - b) * (a - b)).sum();
        let log_obs = -0.5 * j * (log2pi + sigma2.ln()) - 0.5 * resid / sigma2;
        let b: Vec<f64> = at.matvec(y).iter().map(|v| v / sigma2).collect();
        let m = fpost.solve(&b);
        let d: Vec<f64> = u_star.iter().zip(&m).map(|(a, b)| a - b).collect();
        let log_post = 0.5 * fpost.log_det() - 0.5 * n * log2pi - 0.5 * dot(&d, &post.matvec(&d));
        total += log_prior + log_obs - log_post;
    }
    Ok(total)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
