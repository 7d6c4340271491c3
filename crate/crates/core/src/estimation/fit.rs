//! Global maximum-likelihood fit.

use serde::{Deserialize, Serialize};

use crate::data_ingest::GridDataset;
use crate::deformation::{BBox, DeformParams, TauSpec};
use crate::error::{Error, Result};
use crate::estimation::likelihood::LikelihoodProblem;
use crate::estimation::local::{local_estimates, LocalEstimates};
use crate::estimation::merge::{merge_local, select_alpha};
use crate::estimation::optimize::{minimize, LbfgsConfig};
use crate::mesh::{apply_barrier, build_mesh, ConvexPolygon, TriMesh};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    Fixed(u32),
    /// Take α from the initial parameters (set from the local ν̂ median).
    FromLocal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub alpha_policy: AlphaPolicy,
    pub max_iterations: usize,
    /// Tolerance on `‖∇l‖_∞`.
    pub grad_tol: f64,
    /// Starting nugget standard deviation; `None` keeps the initial value.
    pub nugget_init: Option<f64>,
    /// Only the constant basis term of each `h_i` (and `log τ`) is free.
    pub stationary_only: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            k: 4,
            alpha_policy: AlphaPolicy::FromLocal,
            max_iterations: 200,
            grad_tol: 1e-2,
            nugget_init: None,
            stationary_only: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FitResult {
    pub params: DeformParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters in the model count: basis coefficients, nugget and smoothness.
    pub n_params: usize,
    /// Parameters actually optimised (the smoothness is held fixed).
    pub n_free: usize,
    /// Log-likelihood after each accepted step.
    pub trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub local_estimates: Option<LocalEstimates>,
}

/// Positions of the free parameters in the packed vector layout
/// `[β¹, β², β³, log τ coefficients, log σ_ε]`.
struct Layout {
    nb: usize,
    n_tau: usize,
    free: Vec<usize>,
}

impl Layout {
    fn new(p: &DeformParams, stationary_only: bool) -> Self {
        let nb = p.n_basis();
        let n_tau = match &p.tau {
            TauSpec::LogBasis { coefficients } => coefficients.len(),
            _ => 0,
        };
        let total = 3 * nb + n_tau + 1;
        let free = if stationary_only {
            let mut f = vec![0, nb, 2 * nb];
            if n_tau > 0 {
                f.push(3 * nb);
            }
            f.push(total - 1);
            f
        } else {
            (0..total).collect()
        };
        Layout { nb, n_tau, free }
    }

    fn pack(&self, p: &DeformParams) -> Vec<f64> {
        let mut all: Vec<f64> = p.beta.iter().flatten().copied().collect();
        if let TauSpec::LogBasis { coefficients } = &p.tau {
            all.extend(coefficients);
        }
        all.push(p.log_sigma_eps);
        self.free.iter().map(|&i| all[i]).collect()
    }

    fn unpack(&self, base: &DeformParams, theta: &[f64]) -> DeformParams {
        let mut all: Vec<f64> = base.beta.iter().flatten().copied().collect();
        if let TauSpec::LogBasis { coefficients } = &base.tau {
            all.extend(coefficients);
        }
        all.push(base.log_sigma_eps);
        for (&i, &v) in self.free.iter().zip(theta) {
            all[i] = v;
        }
        let mut p = base.clone();
        for i in 0..3 {
            p.beta[i].copy_from_slice(&all[i * self.nb..(i + 1) * self.nb]);
        }
        if let TauSpec::LogBasis { coefficients } = &mut p.tau {
            coefficients.copy_from_slice(&all[3 * self.nb..3 * self.nb + self.n_tau]);
        }
        p.log_sigma_eps = *all.last().unwrap();
        p
    }
}

/// Model parameter count: the free basis coefficients, the nugget and the
/// (fixed) smoothness.
pub fn n_model_params(params: &DeformParams, stationary_only: bool) -> usize {
    Layout::new(params, stationary_only).free.len() + 1
}

/// Maximises the log-likelihood of centred data starting from `init`.
///
/// The barrier is (re)applied with the smoothness of the fit so that
/// extension triangles always carry the fixed short-range parameters.
pub fn fit(data: &GridDataset, mesh: &TriMesh, config: &FitConfig, init: &DeformParams) -> Result<FitResult> {
    let mut base = init.clone();
    if let AlphaPolicy::Fixed(a) = config.alpha_policy {
        base.alpha = a;
    }
    if let Some(s) = config.nugget_init {
        if !(s > 0.0) {
            return Err(Error::invalid("the nugget must be positive"));
        }
        base.log_sigma_eps = s.ln();
    }
    if config.stationary_only {
        for b in &mut base.beta {
            b[1..].iter_mut().for_each(|v| *v = 0.0);
        }
        if let TauSpec::LogBasis { coefficients } = &mut base.tau {
            coefficients[1..].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    base.validate()?;
    let mesh = apply_barrier(mesh, base.nu().max(0.5), mesh.r_min)?;
    let problem = LikelihoodProblem::new(&mesh, data)?;
    let layout = Layout::new(&base, config.stationary_only);
    let theta0 = layout.pack(&base);
    let objective = |theta: &[f64]| match problem.log_likelihood(&layout.unpack(&base, theta)) {
        Ok(l) => -l,
        Err(_) => f64::INFINITY,
    };
    let l0 = -objective(&theta0);
    if !l0.is_finite() {
        return Err(Error::NonFinite {
            triangle: usize::MAX,
            what: "log-likelihood at the initial parameters".into(),
        });
    }
    let cfg = LbfgsConfig {
        max_iterations: config.max_iterations,
        grad_tol: config.grad_tol,
        f_tol: 1e-12,
        ..Default::default()
    };
    let res = minimize(&objective, &theta0, &cfg);
    let n_free = layout.free.len();
    Ok(FitResult {
        params: layout.unpack(&base, &res.x),
        log_likelihood: -res.f,
        initial_log_likelihood: l0,
        iterations: res.iterations,
        converged: res.converged,
        n_params: n_model_params(&base, config.stationary_only),
        n_free,
        trace: res.trace.iter().map(|v| -v).collect(),
        local_estimates: None,
    })
}

/// Local estimates, α selection and the merged starting parameters.
pub fn initialize(data: &GridDataset, config: &FitConfig) -> Result<(DeformParams, LocalEstimates)> {
    let locals = local_estimates(data)?;
    let alpha = match config.alpha_policy {
        AlphaPolicy::Fixed(a) => a,
        AlphaPolicy::FromLocal => select_alpha(&locals.estimates)
            .ok_or_else(|| Error::invalid("no ocean neighbourhood for local estimation"))?,
    };
    let bbox = BBox::of_points(&data.locations)?;
    let k = if config.stationary_only { 0 } else { config.k };
    let merged = merge_local(&locals.estimates, k, bbox, alpha)?;
    let mut params = merged.params;
    if config.stationary_only && config.k > 0 {
        // keep the requested basis order with only the constant term set
        let nb = (config.k + 1) * (config.k + 1);
        for b in &mut params.beta {
            let c = b[0];
            *b = vec![0.0; nb];
            b[0] = c;
        }
        params.k = config.k;
    }
    Ok((params, locals))
}

/// Mesh of the data bounding box driven by the practical range of `params`.
pub fn mesh_for(data: &GridDataset, params: &DeformParams, extension_factor: f64) -> Result<TriMesh> {
    let (x0, y0, x1, y1) = data.grid.bounds();
    let dom = ConvexPolygon::rectangle(x0, y0, x1, y1)?;
    let range = |p: &crate::Point| params.practical_range(p);
    build_mesh(&dom, &range, extension_factor)
}
