//! Local estimates on non-overlapping 3×3 pixel neighbourhoods.
//!
//! Each neighbourhood is standardised with its own sample means and
//! variances, then a stationary model with correlation
//! `(1−η)·C_ν(√(dᵀH̃⁻¹d)) + η·1{d=0}` is fitted by maximum likelihood over
//! `(H̃, ν, η)`. The nugget share `η` absorbs white noise so that `H̃` tracks the
//! smooth part of the field.

use nalgebra::{DMatrix, Matrix2, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::data_ingest::{marginal_stats, GridDataset};
use crate::deformation::{anisotropy_from_h, min_eigenvalue};
use crate::error::{Error, Result};
use crate::estimation::optimize::{minimize, LbfgsConfig};
use crate::special::matern_correlation;
use crate::Point;

const NU_MIN: f64 = 0.2;
const NU_SPAN: f64 = 5.8;
const ETA_MAX: f64 = 0.9;

#[derive(Clone, Debug, Serialize)]
pub struct LocalEstimate {
    pub center: Point,
    pub h_tilde: Matrix2<f64>,
    pub nu: f64,
    /// Mean of the local sample variances.
    pub sigma2: f64,
    /// Mean of the local sample means.
    pub mu: f64,
    /// Nugget share of the standardised variance.
    pub eta: f64,
    /// Shortest practical range `√(8ν)·√λ_min(H̃)`.
    pub range_min: f64,
    /// True when the range is below the grid spacing (no spatial signal).
    pub collapsed: bool,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalEstimates {
    pub estimates: Vec<LocalEstimate>,
    /// Neighbourhood centres skipped because they contain land.
    pub skipped: Vec<Point>,
    pub grid_spacing: f64,
}

impl LocalEstimates {
    /// Histogram of `ν̂` with unit-width bins `[i, i+1)`.
    pub fn nu_histogram(&self) -> Vec<(f64, usize)> {
        let mut bins = vec![0usize; (NU_MIN + NU_SPAN).ceil() as usize];
        let last = bins.len() - 1;
        for e in &self.estimates {
            bins[(e.nu.floor() as usize).min(last)] += 1;
        }
        bins.into_iter().enumerate().map(|(i, c)| (i as f64, c)).collect()
    }

    pub fn median_nu(&self) -> Option<f64> {
        median(self.estimates.iter().map(|e| e.nu).collect())
    }

    pub fn n_collapsed(&self) -> usize {
        self.estimates.iter().filter(|e| e.collapsed).count()
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps the unconstrained vector `[h1, h2, h3, t_ν, t_η]` to `(H̃, ν, η)`.
fn unpack(theta: &[f64]) -> (Matrix2<f64>, f64, f64) {
    let (ht, _) = anisotropy_from_h([theta[0], theta[1], theta[2]]);
    (ht, NU_MIN + NU_SPAN * sigmoid(theta[3]), ETA_MAX * sigmoid(theta[4]))
}

/// Negative log-likelihood (up to a constant) of standardised neighbourhood data.
struct Neighbourhood {
    offsets: Vec<Vector2<f64>>,
    /// `S = Σ_k y_k y_kᵀ`.
    scatter: DMatrix<f64>,
    k: usize,
}

impl Neighbourhood {
    fn nll(&self, theta: &[f64]) -> f64 {
        let (ht, nu, eta) = unpack(theta);
        let Some(hinv) = ht.try_inverse() else {
            return f64::INFINITY;
        };
        let n = self.offsets.len();
        let mut sigma = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            for j in 0..i {
                let d = self.offsets[i] - self.offsets[j];
                let q = d.dot(&(hinv * d));
                if !(q >= 0.0 && q.is_finite()) {
                    return f64::INFINITY;
                }
                let c = (1.0 - eta) * matern_correlation(q.sqrt(), nu);
                sigma[(i, j)] = c;
                sigma[(j, i)] = c;
            }
        }
        let Some(chol) = sigma.cholesky() else {
            return f64::INFINITY;
        };
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv_s = chol.solve(&self.scatter);
        let v = 0.5 * (self.k as f64 * logdet + inv_s.trace());
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

fn fit_neighbourhood(data: &GridDataset, cells: &[usize; 9], spacing: f64) -> Result<LocalEstimate> {
    let map = data.location_of_cell();
    let locs: Vec<usize> = cells.iter().map(|&c| map[c].expect("ocean cell")).collect();
    let series: Vec<Vec<f64>> = data
        .replicates
        .iter()
        .map(|r| locs.iter().map(|&j| r[j]).collect())
        .collect();
    let stats = marginal_stats(&series, 9)?;
    let k = series.len();
    let mut scatter = DMatrix::<f64>::zeros(9, 9);
    for row in &series {
        let y = nalgebra::DVector::from_iterator(9, (0..9).map(|j| (row[j] - stats.mean[j]) / stats.sd[j]));
        scatter.syger(1.0, &y, &y, 1.0);
    }
    scatter.fill_upper_triangle_with_lower_triangle();
    let pts: Vec<Point> = locs.iter().map(|&j| data.locations[j]).collect();
    let center = pts[4];
    let offsets = pts.iter().map(|p| p - center).collect();
    let nb = Neighbourhood { offsets, scatter, k };

    // coarse grid for the starting point
    let mut best = (f64::INFINITY, vec![0.0; 5]);
    for range in [1.0, 2.0, 4.0, 8.0, 16.0] {
        for nu in [0.5, 1.0, 2.0, 3.0] {
            for eta in [0.02, 0.2] {
                let h = 2.0 * (range * spacing / (8.0f64 * nu).sqrt()).ln();
                let theta = vec![h, h, 0.0, logit((nu - NU_MIN) / NU_SPAN), logit(eta / ETA_MAX)];
                let v = nb.nll(&theta);
                if v < best.0 {
                    best = (v, theta);
                }
            }
        }
    }
    let cfg = LbfgsConfig {
        max_iterations: 200,
        grad_tol: 1e-5 * k as f64,
        parallel: false,
        ..Default::default()
    };
    let res = minimize(&|t: &[f64]| nb.nll(t), &best.1, &cfg);
    let (h_tilde, nu, eta) = unpack(&res.x);
    let range_min = (8.0 * nu).sqrt() * min_eigenvalue(&h_tilde).max(0.0).sqrt();
    Ok(LocalEstimate {
        center,
        h_tilde,
        nu,
        sigma2: stats.sd.iter().map(|s| s * s).sum::<f64>() / 9.0,
        mu: stats.mean.iter().sum::<f64>() / 9.0,
        eta,
        range_min,
        collapsed: range_min < spacing,
        log_likelihood: -res.f - 0.5 * (k * 9) as f64 * (2.0 * std::f64::consts::PI).ln(),
    })
}

/// Fits every all-ocean 3×3 block (stride 3) of the grid.
pub fn local_estimates(data: &GridDataset) -> Result<LocalEstimates> {
    let g = &data.grid;
    if g.nx < 3 || g.ny < 3 {
        return Err(Error::invalid("local estimation needs at least a 3x3 grid"));
    }
    if data.n_replicates() < 2 {
        return Err(Error::invalid("local estimation needs at least two replicates"));
    }
    let spacing = g.min_spacing();
    let mut blocks = Vec::new();
    let mut skipped = Vec::new();
    for by in 0..g.ny / 3 {
        for bx in 0..g.nx / 3 {
            let cells: [usize; 9] = std::array::from_fn(|i| (3 * by + i / 3) * g.nx + 3 * bx + i % 3);
            if cells.iter().any(|&c| data.land_mask[c]) {
                skipped.push(g.cell_point(cells[4]));
            } else {
                blocks.push(cells);
            }
        }
    }
    let estimates = blocks
        .par_iter()
        .map(|cells| fit_neighbourhood(data, cells, spacing))
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalEstimates {
        estimates,
        skipped,
        grid_spacing: spacing,
    })
}
