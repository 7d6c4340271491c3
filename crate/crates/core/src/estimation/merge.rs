//! Least-squares merge of local estimates into cosine-basis coefficients.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::deformation::{eval_basis, h_from_h_tilde, BBox, DeformParams, TauSpec};
use crate::error::{Error, Result};
use crate::estimation::local::{median, LocalEstimate};

#[derive(Clone, Debug, Serialize)]
pub struct MergeResult {
    pub params: DeformParams,
    /// Residual norm of the least-squares fit of `h₁`, `h₂`, `h₃`.
    pub residual_norms: [f64; 3],
    pub n_neighbourhoods: usize,
}

/// `α = round(median ν̂ + d/2)` with `d = 2`, at least 2.
pub fn select_alpha(locals: &[LocalEstimate]) -> Option<u32> {
    median(locals.iter().map(|e| e.nu).collect()).map(|m| ((m + 1.0).round() as u32).max(2))
}

/// Fits `β^i` to the targets `h_i(center)` recovered from each local `H̃`.
/// The nugget starts at the median local nugget share; `τ` uses the
/// unit-variance convention.
pub fn merge_local(locals: &[LocalEstimate], k: usize, bbox: BBox, alpha: u32) -> Result<MergeResult> {
    let nb = (k + 1) * (k + 1);
    let rows = locals.len();
    let design = DMatrix::from_fn(rows, nb, |r, c| eval_basis(&locals[r].center, k, &bbox)[c]);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax.max(1e-300)).count();
    if rows < nb || rank < nb {
        return Err(Error::RankDeficient { rows, cols: nb, rank });
    }
    let targets: Vec<[f64; 3]> = locals
        .iter()
        .map(|e| h_from_h_tilde(&e.h_tilde))
        .collect::<Result<_>>()?;
    let mut beta: [Vec<f64>; 3] = Default::default();
    let mut residual_norms = [0.0; 3];
    for i in 0..3 {
        let y = DVector::from_iterator(rows, targets.iter().map(|t| t[i]));
        let b = svd
            .solve(&y, 1e-10 * smax)
            .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
        residual_norms[i] = (&design * &b - &y).norm();
        beta[i] = b.iter().copied().collect();
    }
    let eta = median(locals.iter().map(|e| e.eta).collect()).unwrap_or(0.1);
    let params = DeformParams {
        k,
        bbox,
        beta,
        alpha,
        log_sigma_eps: 0.5 * eta.max(1e-4).ln(),
        tau: TauSpec::UnitVariance,
    };
    Ok(MergeResult {
        params,
        residual_norms,
        n_neighbourhoods: rows,
    })
}
