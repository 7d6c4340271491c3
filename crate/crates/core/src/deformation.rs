//! Spatially varying model fields.
//!
//! `h_i(s) = Σ_{n,p} β^i_{np} cos(nπ(s₁−x₀)/T) cos(pπ(s₂−y₀)/S)` for
//! `i = 1, 2, 3`, from which
//!
//! ```text
//! H̃₁₁ = e^{h₁},  H̃₂₂ = e^{h₂},  H̃₁₂ = (2σ(h₃) − 1) e^{(h₁+h₂)/2},
//! κ = det(H̃)^{-1/2},  H = κ² H̃.
//! ```
//!
//! Coefficient grids are stored row-major with `n` (the x frequency) outer.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::gamma;
use crate::Point;

/// Bound on `|h_i|` applied before exponentiation.
pub const H_CLAMP: f64 = 50.0;

/// Origin and extent of the observation bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    /// Width `T`.
    pub width: f64,
    /// Height `S`.
    pub height: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, width: f64, height: f64) -> Self {
        BBox {
            x0,
            y0,
            width,
            height,
        }
    }

    pub fn of_points(points: &[Point]) -> Result<Self> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let b = BBox::new(x0, y0, x1 - x0, y1 - y0);
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width > 0.0 && self.height > 0.0 && self.x0.is_finite() && self.y0.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "bounding box needs positive width and height, got {} x {}",
                self.width, self.height
            )))
        }
    }

    pub fn center(&self) -> Point {
        Point::new(self.x0 + 0.5 * self.width, self.y0 + 0.5 * self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TauSpec {
    Constant { value: f64 },
    /// `log τ(s) = coefficients · basis(s)`.
    LogBasis { coefficients: Vec<f64> },
    /// τ chosen pointwise so that the stationary marginal variance is 1.
    UnitVariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformParams {
    pub k: usize,
    pub bbox: BBox,
    /// `beta[i]` holds the `(k+1)²` coefficients of `h_{i+1}`.
    pub beta: [Vec<f64>; 3],
    pub alpha: u32,
    pub log_sigma_eps: f64,
    pub tau: TauSpec,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalAnisotropy {
    pub h_tilde: Matrix2<f64>,
    pub kappa: f64,
    pub h: Matrix2<f64>,
    pub tau: f64,
}

/// `cos(nπ(s₁−x₀)/T)·cos(pπ(s₂−y₀)/S)` for `n, p = 0..=k`, `n` outer.
pub fn eval_basis(s: &Point, k: usize, bbox: &BBox) -> Vec<f64> {
    let u = (s.x - bbox.x0) / bbox.width;
    let v = (s.y - bbox.y0) / bbox.height;
    let cx: Vec<f64> = (0..=k).map(|n| (n as f64 * PI * u).cos()).collect();
    let cy: Vec<f64> = (0..=k).map(|p| (p as f64 * PI * v).cos()).collect();
    let mut out = Vec::with_capacity((k + 1) * (k + 1));
    for a in &cx {
        for b in &cy {
            out.push(a * b);
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(H̃, κ)` from `(h₁, h₂, h₃)`, after clamping each to `±H_CLAMP`.
pub fn anisotropy_from_h(h: [f64; 3]) -> (Matrix2<f64>, f64) {
    let [h1, h2, h3] = h.map(|v| v.clamp(-H_CLAMP, H_CLAMP));
    let rho = 2.0 / (1.0 + (-h3).exp()) - 1.0;
    // 1 − ρ² = (1 − ρ)(1 + ρ) without cancellation
    let one_minus_rho2 = (2.0 / (1.0 + h3.exp())) * (2.0 / (1.0 + (-h3).exp()));
    let off = rho * (0.5 * (h1 + h2)).exp();
    let h_tilde = Matrix2::new(h1.exp(), off, off, h2.exp());
    let kappa = (-0.5 * (h1 + h2)).exp() / one_minus_rho2.sqrt();
    (h_tilde, kappa)
}

/// Inverse of the `H̃` construction: `(ln H̃₁₁, ln H̃₂₂, logit((ρ+1)/2))`.
pub fn h_from_h_tilde(h_tilde: &Matrix2<f64>) -> Result<[f64; 3]> {
    let (a, b, c) = (h_tilde[(0, 0)], h_tilde[(1, 1)], h_tilde[(0, 1)]);
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid("H~ needs a positive diagonal"));
    }
    let rho = c / (a * b).sqrt();
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid("H~ is not positive definite"));
    }
    let q = 0.5 * (rho + 1.0);
    Ok([a.ln(), b.ln(), (q / (1.0 - q)).ln()])
}

/// τ giving unit marginal variance for smoothness `alpha` at local `κ`.
pub fn unit_variance_tau(alpha: u32, kappa: f64) -> f64 {
    let a = alpha as f64;
    (gamma(a - 1.0) / (gamma(a) * 4.0 * PI)).sqrt() / kappa.sqrt()
}

impl DeformParams {
    /// Identity deformation (`h ≡ 0`) with the given basis order.
    pub fn identity(k: usize, bbox: BBox, alpha: u32, log_sigma_eps: f64, tau: TauSpec) -> Self {
        let nb = (k + 1) * (k + 1);
        DeformParams {
            k,
            bbox,
            beta: [vec![0.0; nb], vec![0.0; nb], vec![0.0; nb]],
            alpha,
            log_sigma_eps,
            tau,
        }
    }

    pub fn n_basis(&self) -> usize {
        (self.k + 1) * (self.k + 1)
    }

    /// Smoothness `ν = α − d/2` with `d = 2`.
    pub fn nu(&self) -> f64 {
        self.alpha as f64 - 1.0
    }

    pub fn sigma_eps(&self) -> f64 {
        self.log_sigma_eps.exp()
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox.validate()?;
        if self.alpha < 1 {
            return Err(Error::invalid("alpha must be a positive integer"));
        }
        let nb = self.n_basis();
        if self.beta.iter().any(|b| b.len() != nb) {
            return Err(Error::invalid(format!(
                "each coefficient grid needs {nb} entries for k = {}",
                self.k
            )));
        }
        match &self.tau {
            TauSpec::Constant { value } if !(*value > 0.0 && value.is_finite()) => {
                return Err(Error::invalid("constant tau must be positive"))
            }
            TauSpec::LogBasis { coefficients } if coefficients.len() != nb => {
                return Err(Error::invalid("log-tau grid has the wrong size"))
            }
            TauSpec::UnitVariance if self.alpha < 2 => {
                return Err(Error::invalid("the unit-variance tau needs alpha >= 2"))
            }
            _ => {}
        }
        if self.beta.iter().flatten().any(|v| !v.is_finite()) || !self.log_sigma_eps.is_finite() {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(())
    }

    pub fn basis(&self, s: &Point) -> Vec<f64> {
        eval_basis(s, self.k, &self.bbox)
    }

    pub fn eval_h(&self, s: &Point) -> [f64; 3] {
        let b = self.basis(s);
        [0, 1, 2].map(|i| dot(&self.beta[i], &b))
    }

    fn tau_with(&self, basis: &[f64], kappa: f64) -> f64 {
        match &self.tau {
            TauSpec::Constant { value } => *value,
            TauSpec::LogBasis { coefficients } => dot(coefficients, basis).exp(),
            TauSpec::UnitVariance => unit_variance_tau(self.alpha, kappa),
        }
    }

    pub fn eval_anisotropy(&self, s: &Point) -> LocalAnisotropy {
        let b = self.basis(s);
        let h = [0, 1, 2].map(|i| dot(&self.beta[i], &b));
        let (h_tilde, kappa) = anisotropy_from_h(h);
        LocalAnisotropy {
            h_tilde,
            kappa,
            h: h_tilde * (kappa * kappa),
            tau: self.tau_with(&b, kappa),
        }
    }

    pub fn eval_tau(&self, s: &Point) -> f64 {
        self.eval_anisotropy(s).tau
    }

    /// Shortest practical correlation range at `s`: `√(8ν)·√λ_min(H̃)`, with ν
    /// floored at 1/2.
    pub fn practical_range(&self, s: &Point) -> f64 {
        let la = self.eval_anisotropy(s);
        let nu = self.nu().max(0.5);
        (8.0 * nu).sqrt() * min_eigenvalue(&la.h_tilde).sqrt()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: DeformParams = serde_json::from_str(&text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameters serialise")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Eigenvalues `(λ_min, λ_max)` of a symmetric 2×2 matrix.
pub fn sym_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let hi = mean + r;
    // product form for the small root keeps relative accuracy
    let det = a * c - b * b;
    let lo = if hi > 0.0 { det / hi } else { mean - r };
    (lo, hi)
}

pub fn min_eigenvalue(m: &Matrix2<f64>) -> f64 {
    sym_eigenvalues(m).0
}
