//! Inlet/outlet data: normal mass flux on both end planes, inlet swirl `κ`
//! and inlet Bernoulli function `B₀`.
//!
//! Plane arrays are indexed like plane nodes of the grid (`j·N3 + k`).
//! Families with a closed form also keep an analytic [`BoundaryProfile`]
//! so that tangential derivatives and off-node values are exact.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gas::{GasError, GasModel};
use crate::grid::{fold_unit, Grid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundaryError {
    #[error("inlet flux must be negative, got {value} at plane node {node}")]
    InletSign { node: usize, value: f64 },
    #[error("outlet flux must be positive, got {value} at plane node {node}")]
    OutletSign { node: usize, value: f64 },
    #[error("net boundary flux {net} exceeds tolerance {tol}")]
    Incompatible { net: f64, tol: f64 },
    #[error("edge condition violated: {0}")]
    EdgeCondition(String),
    #[error("invalid boundary parameters: {0}")]
    InvalidParameters(String),
    #[error("plane array has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gas(#[from] GasError),
}

pub type Result<T> = std::result::Result<T, BoundaryError>;

/// Closed-form boundary data on the unit square `(x2, x3)`.
pub trait BoundaryProfile: Send + Sync + fmt::Debug {
    fn flux_minus(&self, x2: f64, x3: f64) -> f64;
    fn flux_plus(&self, x2: f64, x3: f64) -> f64;
    fn flux_minus_grad(&self, x2: f64, x3: f64) -> [f64; 2];
    fn flux_plus_grad(&self, x2: f64, x3: f64) -> [f64; 2];
    fn kappa(&self, x2: f64, x3: f64) -> f64;
    fn b0(&self, x2: f64, x3: f64) -> f64;
    fn b0_grad(&self, x2: f64, x3: f64) -> [f64; 2];
}

/// Boundary data families selectable from the run config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BoundaryFamily {
    /// `f = ∓θ̄(1 + a2·cos πx2 + a3·cos πx3)`, `κ = ε_κ sin πx2 sin πx3`,
    /// `B₀ = B̄ + ε_B sin²πx2 sin²πx3`.
    Cosine {
        base_flux: f64,
        a2: f64,
        a3: f64,
        eps_kappa: f64,
        eps_b: f64,
    },
    /// Data of the parallel shear flow `u = (U(x2,x3), 0, 0)` with
    /// `U = q(1 + δ sin²πx2 sin²πx3)` and constant density. This flow is an
    /// exact steady Euler solution, so it checks the whole rotational
    /// pipeline against a known answer.
    ParallelShear { speed: f64, delta: f64 },
}

impl Default for BoundaryFamily {
    fn default() -> Self {
        BoundaryFamily::Cosine {
            base_flux: 1.0,
            a2: 0.0,
            a3: 0.0,
            eps_kappa: 0.0,
            eps_b: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CosineProfile {
    base_flux: f64,
    a2: f64,
    a3: f64,
    eps_kappa: f64,
    eps_b: f64,
    bernoulli: f64,
}

use std::f64::consts::PI;

fn bump(x2: f64, x3: f64) -> f64 {
    ((PI * x2).sin() * (PI * x3).sin()).powi(2)
}

fn bump_grad(x2: f64, x3: f64) -> [f64; 2] {
    let (s2, s3) = ((PI * x2).sin(), (PI * x3).sin());
    [
        PI * (2.0 * PI * x2).sin() * s3 * s3,
        PI * (2.0 * PI * x3).sin() * s2 * s2,
    ]
}

impl CosineProfile {
    fn shape(&self, x2: f64, x3: f64) -> f64 {
        self.base_flux * (1.0 + self.a2 * (PI * x2).cos() + self.a3 * (PI * x3).cos())
    }

    fn shape_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        [
            -self.base_flux * self.a2 * PI * (PI * x2).sin(),
            -self.base_flux * self.a3 * PI * (PI * x3).sin(),
        ]
    }
}

impl BoundaryProfile for CosineProfile {
    fn flux_minus(&self, x2: f64, x3: f64) -> f64 {
        -self.shape(x2, x3)
    }
    fn flux_plus(&self, x2: f64, x3: f64) -> f64 {
        self.shape(x2, x3)
    }
    fn flux_minus_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        self.shape_grad(x2, x3).map(|g| -g)
    }
    fn flux_plus_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        self.shape_grad(x2, x3)
    }
    fn kappa(&self, x2: f64, x3: f64) -> f64 {
        self.eps_kappa * (PI * x2).sin() * (PI * x3).sin()
    }
    fn b0(&self, x2: f64, x3: f64) -> f64 {
        self.bernoulli + self.eps_b * bump(x2, x3)
    }
    fn b0_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        bump_grad(x2, x3).map(|g| self.eps_b * g)
    }
}

#[derive(Debug, Clone, Copy)]
struct ShearProfile {
    speed: f64,
    delta: f64,
    rho: f64,
    bernoulli: f64,
}

impl ShearProfile {
    fn u(&self, x2: f64, x3: f64) -> f64 {
        self.speed * (1.0 + self.delta * bump(x2, x3))
    }
    fn u_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        bump_grad(x2, x3).map(|g| self.speed * self.delta * g)
    }
}

impl BoundaryProfile for ShearProfile {
    fn flux_minus(&self, x2: f64, x3: f64) -> f64 {
        -self.rho * self.u(x2, x3)
    }
    fn flux_plus(&self, x2: f64, x3: f64) -> f64 {
        self.rho * self.u(x2, x3)
    }
    fn flux_minus_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        self.u_grad(x2, x3).map(|g| -self.rho * g)
    }
    fn flux_plus_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        self.u_grad(x2, x3).map(|g| self.rho * g)
    }
    fn kappa(&self, _x2: f64, _x3: f64) -> f64 {
        0.0
    }
    fn b0(&self, x2: f64, x3: f64) -> f64 {
        let u = self.u(x2, x3);
        self.bernoulli + 0.5 * (u * u - self.speed * self.speed)
    }
    fn b0_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        let u = self.u(x2, x3);
        self.u_grad(x2, x3).map(|g| u * g)
    }
}

impl BoundaryFamily {
    pub fn uniform() -> Self {
        Self::default()
    }

    pub fn cosine(a2: f64, a3: f64, eps_kappa: f64, eps_b: f64) -> Self {
        BoundaryFamily::Cosine {
            base_flux: 1.0,
            a2,
            a3,
            eps_kappa,
            eps_b,
        }
    }

    /// Same family with the flux amplitude replaced. Has no effect on the
    /// shear family, whose flux is fixed by its velocity profile.
    pub fn with_base_flux(self, flux: f64) -> Self {
        match self {
            BoundaryFamily::Cosine {
                a2, a3, eps_kappa, eps_b, ..
            } => BoundaryFamily::Cosine {
                base_flux: flux,
                a2,
                a3,
                eps_kappa,
                eps_b,
            },
            shear => shear,
        }
    }

    /// Family of the data seen through the mirror `x2 ↦ 1 − x2`. The swirl
    /// is the normal component of an axial vector and changes sign.
    pub fn mirrored_x2(&self) -> Self {
        match *self {
            BoundaryFamily::Cosine {
                base_flux,
                a2,
                a3,
                eps_kappa,
                eps_b,
            } => BoundaryFamily::Cosine {
                base_flux,
                a2: -a2,
                a3,
                eps_kappa: -eps_kappa,
                eps_b,
            },
            shear => shear,
        }
    }

    fn profile(&self, gas: &GasModel) -> Result<Arc<dyn BoundaryProfile>> {
        match *self {
            BoundaryFamily::Cosine {
                base_flux,
                a2,
                a3,
                eps_kappa,
                eps_b,
            } => {
                if !(base_flux > 0.0) {
                    return Err(BoundaryError::InvalidParameters(format!(
                        "base_flux must be positive, got {base_flux}"
                    )));
                }
                if a2.abs() + a3.abs() >= 1.0 {
                    return Err(BoundaryError::InvalidParameters(format!(
                        "|a2| + |a3| = {} lets the flux change sign",
                        a2.abs() + a3.abs()
                    )));
                }
                Ok(Arc::new(CosineProfile {
                    base_flux,
                    a2,
                    a3,
                    eps_kappa,
                    eps_b,
                    bernoulli: gas.bernoulli_const,
                }))
            }
            BoundaryFamily::ParallelShear { speed, delta } => {
                if !(speed > 0.0) || !(delta > -1.0) {
                    return Err(BoundaryError::InvalidParameters(format!(
                        "parallel shear needs speed > 0 and delta > -1, got {speed}, {delta}"
                    )));
                }
                let rho = gas.density_from_speed(speed * speed, gas.bernoulli_const)?;
                Ok(Arc::new(ShearProfile {
                    speed,
                    delta,
                    rho,
                    bernoulli: gas.bernoulli_const,
                }))
            }
        }
    }

    /// Sample the family on the end planes of `grid`, mean-correct the
    /// outlet flux and validate.
    pub fn build(&self, grid: &Grid, gas: &GasModel) -> Result<BoundaryData> {
        let profile = self.profile(gas)?;
        let n = grid.plane_len();
        let pts: Vec<[f64; 2]> = (0..n).map(|p| grid.plane_point(p)).collect();
        let mut data = BoundaryData {
            grid: *grid,
            f_minus: pts.iter().map(|x| profile.flux_minus(x[0], x[1])).collect(),
            f_plus: pts.iter().map(|x| profile.flux_plus(x[0], x[1])).collect(),
            kappa: pts.iter().map(|x| profile.kappa(x[0], x[1])).collect(),
            b0: pts.iter().map(|x| profile.b0(x[0], x[1])).collect(),
            bernoulli: gas.bernoulli_const,
            profile: Some(profile),
        };
        data.correct_mean();
        data.validate(DEFAULT_COMPAT_TOL)?;
        Ok(data)
    }
}

pub const DEFAULT_COMPAT_TOL: f64 = 1e-12;

#[derive(Clone)]
pub struct BoundaryData {
    pub grid: Grid,
    pub f_minus: Vec<f64>,
    pub f_plus: Vec<f64>,
    pub kappa: Vec<f64>,
    pub b0: Vec<f64>,
    /// Background Bernoulli constant `B̄`.
    pub bernoulli: f64,
    pub profile: Option<Arc<dyn BoundaryProfile>>,
}

impl fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BoundaryData")
            .field("grid", &self.grid)
            .field("bernoulli", &self.bernoulli)
            .field("analytic", &self.profile.is_some())
            .finish_non_exhaustive()
    }
}

impl BoundaryData {
    /// Data given as raw plane arrays, without closed form.
    pub fn from_planes(
        grid: &Grid,
        f_minus: Vec<f64>,
        f_plus: Vec<f64>,
        kappa: Vec<f64>,
        b0: Vec<f64>,
        bernoulli: f64,
    ) -> Result<Self> {
        let n = grid.plane_len();
        for v in [&f_minus, &f_plus, &kappa, &b0] {
            if v.len() != n {
                return Err(BoundaryError::ShapeMismatch {
                    expected: n,
                    got: v.len(),
                });
            }
        }
        let mut data = Self {
            grid: *grid,
            f_minus,
            f_plus,
            kappa,
            b0,
            bernoulli,
            profile: None,
        };
        data.correct_mean();
        data.validate(DEFAULT_COMPAT_TOL)?;
        Ok(data)
    }

    /// Rescale the outlet flux so that the discrete net flux vanishes.
    pub fn correct_mean(&mut self) {
        let w = self.grid.plane_weights();
        let inflow: f64 = w.iter().zip(&self.f_minus).map(|(w, f)| w * f).sum();
        let outflow: f64 = w.iter().zip(&self.f_plus).map(|(w, f)| w * f).sum();
        if outflow != 0.0 {
            let s = -inflow / outflow;
            if s != 1.0 {
                for f in &mut self.f_plus {
                    *f *= s;
                }
            }
        }
    }

    /// Net discrete flux `∮ f dS` (trapezoid rule on both end planes).
    pub fn net_flux(&self) -> f64 {
        let w = self.grid.plane_weights();
        w.iter()
            .zip(self.f_minus.iter().zip(&self.f_plus))
            .map(|(w, (a, b))| w * (a + b))
            .sum()
    }

    pub fn flux_scale(&self) -> f64 {
        let w = self.grid.plane_weights();
        w.iter()
            .zip(self.f_minus.iter().zip(&self.f_plus))
            .map(|(w, (a, b))| w * (a.abs() + b.abs()))
            .sum()
    }

    pub fn validate(&self, compat_tol: f64) -> Result<()> {
        for (p, &v) in self.f_minus.iter().enumerate() {
            if !(v < 0.0) {
                return Err(BoundaryError::InletSign { node: p, value: v });
            }
        }
        for (p, &v) in self.f_plus.iter().enumerate() {
            if !(v > 0.0) {
                return Err(BoundaryError::OutletSign { node: p, value: v });
            }
        }
        let net = self.net_flux();
        let tol = compat_tol * self.flux_scale();
        if net.abs() > tol {
            return Err(BoundaryError::Incompatible { net, tol });
        }
        self.check_edges()
    }

    fn check_edges(&self) -> Result<()> {
        let g = &self.grid;
        let (n2, n3) = (g.n[1], g.n[2]);
        let fscale = self.f_minus.iter().chain(&self.f_plus).fold(0.0f64, |m, v| m.max(v.abs()));
        let bscale = self.bernoulli.abs().max(1.0);
        let tol = 1e-10;
        for p in 0..g.plane_len() {
            let (j, k) = (p / n3, p % n3);
            let on2 = j == 0 || j + 1 == n2;
            let on3 = k == 0 || k + 1 == n3;
            if !(on2 || on3) {
                continue;
            }
            let x = g.plane_point(p);
            if (self.b0[p] - self.bernoulli).abs() > tol * bscale {
                return Err(BoundaryError::EdgeCondition(format!(
                    "B0 = {} differs from the Bernoulli constant at ({}, {})",
                    self.b0[p], x[0], x[1]
                )));
            }
            if self.kappa[p].abs() > tol * bscale {
                return Err(BoundaryError::EdgeCondition(format!(
                    "kappa = {} is nonzero at ({}, {})",
                    self.kappa[p], x[0], x[1]
                )));
            }
            let normal_derivs = |grad: [f64; 2]| {
                let mut d: f64 = 0.0;
                if on2 {
                    d = d.max(grad[0].abs());
                }
                if on3 {
                    d = d.max(grad[1].abs());
                }
                d
            };
            let (df, db) = match &self.profile {
                Some(pr) => (
                    normal_derivs(pr.flux_minus_grad(x[0], x[1]))
                        .max(normal_derivs(pr.flux_plus_grad(x[0], x[1]))),
                    normal_derivs(pr.b0_grad(x[0], x[1])),
                ),
                None => {
                    // one-sided differences carry an O(h²) error for smooth data
                    let h = g.h[1].max(g.h[2]);
                    let slack = 10.0 * h * h;
                    (
                        (normal_derivs(self.plane_normal_derivative(&self.f_minus, j, k))
                            .max(normal_derivs(self.plane_normal_derivative(&self.f_plus, j, k)))
                            - slack * fscale)
                            .max(0.0),
                        (normal_derivs(self.plane_normal_derivative(&self.b0, j, k)) - slack * bscale).max(0.0),
                    )
                }
            };
            if df > tol * fscale.max(1.0) {
                return Err(BoundaryError::EdgeCondition(format!(
                    "normal derivative of f is {df} at ({}, {})",
                    x[0], x[1]
                )));
            }
            if db > tol * bscale {
                return Err(BoundaryError::EdgeCondition(format!(
                    "normal derivative of B0 is {db} at ({}, {})",
                    x[0], x[1]
                )));
            }
        }
        Ok(())
    }

    /// One-sided second-order derivatives `(∂₂, ∂₃)` on a plane edge node.
    fn plane_normal_derivative(&self, v: &[f64], j: usize, k: usize) -> [f64; 2] {
        let g = &self.grid;
        let n3 = g.n[2];
        let at = |jj: usize, kk: usize| v[jj * n3 + kk];
        let one_sided = |f0: f64, f1: f64, f2: f64, h: f64| (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * h);
        let d2 = if j == 0 {
            one_sided(at(0, k), at(1, k), at(2, k), g.h[1])
        } else if j + 1 == g.n[1] {
            -one_sided(at(j, k), at(j - 1, k), at(j - 2, k), g.h[1])
        } else {
            0.0
        };
        let d3 = if k == 0 {
            one_sided(at(j, 0), at(j, 1), at(j, 2), g.h[2])
        } else if k + 1 == n3 {
            -one_sided(at(j, k), at(j, k - 1), at(j, k - 2), g.h[2])
        } else {
            0.0
        };
        [d2, d3]
    }

    /// Copy with both fluxes multiplied by `s`.
    pub fn scaled_flux(&self, s: f64) -> Self {
        let mut out = self.clone();
        for f in out.f_minus.iter_mut().chain(out.f_plus.iter_mut()) {
            *f *= s;
        }
        if let Some(p) = &self.profile {
            out.profile = Some(Arc::new(ScaledFlux {
                inner: p.clone(),
                s,
            }));
        }
        out
    }

    fn plane_sample(&self, v: &[f64], x2: f64, x3: f64) -> f64 {
        let g = &self.grid;
        let (y2, _) = fold_unit(x2);
        let (y3, _) = fold_unit(x3);
        let s2 = y2 / g.h[1];
        let s3 = y3 / g.h[2];
        let j = (s2.floor() as usize).min(g.n[1] - 2);
        let k = (s3.floor() as usize).min(g.n[2] - 2);
        let (t2, t3) = (s2 - j as f64, s3 - k as f64);
        let n3 = g.n[2];
        let at = |jj: usize, kk: usize| v[jj * n3 + kk];
        (1.0 - t2) * ((1.0 - t3) * at(j, k) + t3 * at(j, k + 1))
            + t2 * ((1.0 - t3) * at(j + 1, k) + t3 * at(j + 1, k + 1))
    }

    /// Inlet Bernoulli function at an arbitrary point of the inlet plane.
    pub fn b0_at(&self, x2: f64, x3: f64) -> f64 {
        match &self.profile {
            Some(p) => p.b0(x2, x3),
            None => self.plane_sample(&self.b0, x2, x3),
        }
    }

    pub fn kappa_at(&self, x2: f64, x3: f64) -> f64 {
        match &self.profile {
            Some(p) => p.kappa(x2, x3),
            None => self.plane_sample(&self.kappa, x2, x3),
        }
    }

    /// `(∂₂B₀, ∂₃B₀)`, exact for analytic families and from fourth-order
    /// plane differences interpolated bilinearly otherwise.
    pub fn b0_grad_at(&self, x2: f64, x3: f64) -> [f64; 2] {
        match &self.profile {
            Some(p) => p.b0_grad(x2, x3),
            None => {
                let (d2, d3) = self.b0_plane_derivatives();
                [self.plane_sample(&d2, x2, x3), self.plane_sample(&d3, x2, x3)]
            }
        }
    }

    fn b0_plane_derivatives(&self) -> (Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let (n2, n3) = (g.n[1], g.n[2]);
        // B₀ is even across the edges, so reflected samples give ghosts
        let at = |j: i64, k: i64| {
            let (jj, _) = crate::grid::reflect_index(j, n2, crate::grid::Parity::Even);
            let (kk, _) = crate::grid::reflect_index(k, n3, crate::grid::Parity::Even);
            self.b0[jj * n3 + kk]
        };
        let d4 = |m2: f64, m1: f64, p1: f64, p2: f64, h: f64| (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
        let mut d2 = vec![0.0; n2 * n3];
        let mut d3 = vec![0.0; n2 * n3];
        for j in 0..n2 as i64 {
            for k in 0..n3 as i64 {
                let p = j as usize * n3 + k as usize;
                d2[p] = d4(at(j - 2, k), at(j - 1, k), at(j + 1, k), at(j + 2, k), g.h[1]);
                d3[p] = d4(at(j, k - 2), at(j, k - 1), at(j, k + 1), at(j, k + 2), g.h[2]);
            }
        }
        (d2, d3)
    }

    /// True when there is no swirl and `B₀ ≡ B̄` on the inlet nodes.
    pub fn is_irrotational(&self) -> bool {
        self.kappa.iter().all(|&k| k == 0.0) && self.b0.iter().all(|&b| b == self.bernoulli)
    }
}

#[derive(Debug)]
struct ScaledFlux {
    inner: Arc<dyn BoundaryProfile>,
    s: f64,
}

impl BoundaryProfile for ScaledFlux {
    fn flux_minus(&self, x2: f64, x3: f64) -> f64 {
        self.s * self.inner.flux_minus(x2, x3)
    }
    fn flux_plus(&self, x2: f64, x3: f64) -> f64 {
        self.s * self.inner.flux_plus(x2, x3)
    }
    fn flux_minus_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        self.inner.flux_minus_grad(x2, x3).map(|g| self.s * g)
    }
    fn flux_plus_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        self.inner.flux_plus_grad(x2, x3).map(|g| self.s * g)
    }
    fn kappa(&self, x2: f64, x3: f64) -> f64 {
        self.inner.kappa(x2, x3)
    }
    fn b0(&self, x2: f64, x3: f64) -> f64 {
        self.inner.b0(x2, x3)
    }
    fn b0_grad(&self, x2: f64, x3: f64) -> [f64; 2] {
        self.inner.b0_grad(x2, x3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(1.0, 9, 17, 17).unwrap()
    }

    #[test]
    fn uniform_family() {
        let d = BoundaryFamily::uniform().build(&grid(), &GasModel::default()).unwrap();
        assert!(d.f_minus.iter().all(|&f| f == -1.0));
        assert!(d.f_plus.iter().all(|&f| f == 1.0));
        assert!(d.is_irrotational());
        assert_eq!(d.net_flux(), 0.0);
    }

    #[test]
    fn cosine_amplitude() {
        let d = BoundaryFamily::cosine(0.2, 0.0, 0.0, 0.0)
            .build(&grid(), &GasModel::default())
            .unwrap();
        let min = d.f_minus.iter().copied().fold(f64::INFINITY, f64::min);
        let max = d.f_minus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(min, -1.2, epsilon = 1e-14);
        assert_relative_eq!(max, -0.8, epsilon = 1e-14);
        assert!(d.net_flux().abs() < 1e-14);
    }

    #[test]
    fn bernoulli_bump() {
        let g = grid();
        let d = BoundaryFamily::cosine(0.0, 0.0, 0.0, 0.01)
            .build(&g, &GasModel::default())
            .unwrap();
        let dev = d.b0.iter().fold(0.0f64, |m, b| m.max((b - 1.5).abs()));
        assert_relative_eq!(dev, 0.01, epsilon = 1e-14);
        assert_relative_eq!(d.b0[8 * 17 + 8], 1.51, epsilon = 1e-14);
        assert_eq!(d.b0[0], 1.5);
        let [a, b] = d.b0_grad_at(0.3, 0.6);
        let fd2 = (d.b0_at(0.3 + 1e-6, 0.6) - d.b0_at(0.3 - 1e-6, 0.6)) / 2e-6;
        let fd3 = (d.b0_at(0.3, 0.6 + 1e-6) - d.b0_at(0.3, 0.6 - 1e-6)) / 2e-6;
        assert_relative_eq!(a, fd2, epsilon = 1e-8);
        assert_relative_eq!(b, fd3, epsilon = 1e-8);
    }

    #[test]
    fn sign_violation_rejected() {
        let r = BoundaryFamily::cosine(0.6, 0.5, 0.0, 0.0).build(&grid(), &GasModel::default());
        assert!(matches!(r, Err(BoundaryError::InvalidParameters(_))));
        let g = grid();
        let n = g.plane_len();
        let mut fm = vec![-1.0; n];
        fm[40] = 0.1;
        let r = BoundaryData::from_planes(&g, fm, vec![1.0; n], vec![0.0; n], vec![1.5; n], 1.5);
        assert!(matches!(r, Err(BoundaryError::InletSign { node: 40, .. })));
    }

    #[test]
    fn edge_violation_rejected() {
        let g = grid();
        let n = g.plane_len();
        let mut kappa = vec![0.0; n];
        kappa[3] = 0.1;
        let r = BoundaryData::from_planes(&g, vec![-1.0; n], vec![1.0; n], kappa, vec![1.5; n], 1.5);
        assert!(matches!(r, Err(BoundaryError::EdgeCondition(_))));
        // flux with a nonzero normal derivative at the x2 walls
        let fm: Vec<f64> = (0..n).map(|p| -(1.0 + 0.3 * g.plane_point(p)[0])).collect();
        let fp: Vec<f64> = fm.iter().map(|f| -f).collect();
        let r = BoundaryData::from_planes(&g, fm, fp, vec![0.0; n], vec![1.5; n], 1.5);
        assert!(matches!(r, Err(BoundaryError::EdgeCondition(_))));
    }

    #[test]
    fn mean_correction_restores_compatibility() {
        let g = grid();
        let n = g.plane_len();
        let r = BoundaryData::from_planes(&g, vec![-1.0; n], vec![1.3; n], vec![0.0; n], vec![1.5; n], 1.5).unwrap();
        assert!(r.f_plus.iter().all(|&f| (f - 1.0).abs() < 1e-14));
    }

    #[test]
    fn parallel_shear_is_consistent() {
        let gas = GasModel::default();
        let d = BoundaryFamily::ParallelShear { speed: 0.4, delta: 0.1 }
            .build(&grid(), &gas)
            .unwrap();
        let pr = d.profile.as_ref().unwrap();
        let (x2, x3) = (0.3, 0.7);
        // B₀ − U²/2 equals B̄ − q²/2 everywhere
        let u = -pr.flux_minus(x2, x3) / gas.density_from_speed(0.16, 1.5).unwrap();
        assert_relative_eq!(pr.b0(x2, x3) - 0.5 * u * u, 1.5 - 0.08, epsilon = 1e-14);
    }

    #[test]
    fn scaled_flux() {
        let d = BoundaryFamily::cosine(0.2, 0.1, 0.0, 0.0)
            .build(&grid(), &GasModel::default())
            .unwrap();
        let s = d.scaled_flux(2.0);
        assert_eq!(s.f_minus[5], 2.0 * d.f_minus[5]);
        let pr = s.profile.unwrap();
        assert_relative_eq!(pr.flux_minus(0.2, 0.4), 2.0 * d.profile.unwrap().flux_minus(0.2, 0.4));
    }

    #[test]
    fn plane_fallback_gradient() {
        let g = Grid::new(1.0, 5, 33, 33).unwrap();
        let analytic = BoundaryFamily::cosine(0.0, 0.0, 0.0, 0.02)
            .build(&g, &GasModel::default())
            .unwrap();
        let n = g.plane_len();
        let raw = BoundaryData::from_planes(
            &g,
            vec![-1.0; n],
            vec![1.0; n],
            vec![0.0; n],
            analytic.b0.clone(),
            1.5,
        )
        .unwrap();
        let p = g.plane_point(9 * 33 + 20);
        let a = analytic.b0_grad_at(p[0], p[1]);
        let b = raw.b0_grad_at(p[0], p[1]);
        assert!((a[0] - b[0]).abs() < 1e-5 && (a[1] - b[1]).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn cosine_family_always_valid(a2 in -0.45f64..0.45, a3 in -0.45f64..0.45, ek in -0.1f64..0.1, eb in -0.1f64..0.1) {
            let d = BoundaryFamily::cosine(a2, a3, ek, eb).build(&Grid::new(1.0, 5, 9, 11).unwrap(), &GasModel::default());
            prop_assert!(d.is_ok());
            let d = d.unwrap();
            prop_assert!(d.net_flux().abs() <= 1e-12 * d.flux_scale());
        }
    }
}
