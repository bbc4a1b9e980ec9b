//! Weighted div-curl systems
//!
//! ```text
//! ∇·(λu) = ∇·v,   ∇×u = w   in Ω,      λu·n = v·n   on ∂Ω,
//! ```
//!
//! solved by the splitting `u = ∇φ̂ + λ⁻¹∇×q`. The scalar potential solves a
//! conormal problem; the vector potential solves
//!
//! ```text
//! −Δq = λw + (∇λ/λ) × (∇×q)
//! ```
//!
//! by Picard iteration on the coupling term, one scalar Poisson problem per
//! component. Component `q_c` satisfies a Neumann condition on the faces
//! normal to axis `c` and vanishes on the others (`n×q = 0`, `∇·q = 0`).
//! These conditions coincide with the reflection parities of an axial
//! vector, and they make `λu·n` and `∇·(∇×q)` vanish exactly on the grid.

use serde::Serialize;
use thiserror::Error;

use crate::elliptic::{self, Bc, ConormalProblem, EllipticError, SolverOptions, Source};
use crate::grid::{ScalarField, Symmetry, VectorField};
use crate::transport::wall_tangential;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DivCurlError {
    #[error("weight must be positive, got {value} at node {node}")]
    NonPositiveWeight { node: usize, value: f64 },
    #[error("tangential part of w on the walls is {0:e}")]
    WallVorticity(f64),
    #[error("normal part of v on the walls is {0:e}")]
    WallFlux(f64),
    #[error("vector potential iteration did not converge after {iterations} steps (last update {last_update:e})")]
    NotConverged {
        iterations: usize,
        last_update: f64,
        history: Vec<f64>,
    },
    #[error("{stage}: {source}")]
    Linear {
        stage: &'static str,
        source: EllipticError,
    },
}

pub type Result<T> = std::result::Result<T, DivCurlError>;

#[derive(Debug, Clone)]
pub struct DivCurlProblem {
    pub lambda: ScalarField,
    pub w: VectorField,
    pub v: Option<VectorField>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivCurlOptions {
    /// Picard stops once `‖q^{k+1} − q^k‖∞ ≤ tol·‖q^{k+1}‖∞`.
    pub tol: f64,
    pub relax: f64,
    pub max_picard: usize,
    pub linear_tol: f64,
    /// Tolerance of the wall checks on `w` and `v`, relative to their size.
    pub wall_tol: f64,
}

impl Default for DivCurlOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            relax: 0.8,
            max_picard: 200,
            linear_tol: 1e-12,
            wall_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DivCurlSolution {
    pub u: VectorField,
    pub phi_hat: ScalarField,
    pub q: VectorField,
    pub residual_div: f64,
    pub residual_curl: f64,
    pub residual_flux: f64,
    pub picard_iters: usize,
    pub history: Vec<f64>,
}

fn component_bc(c: usize) -> [Bc; 3] {
    let mut bc = [Bc::Dirichlet; 3];
    bc[c] = Bc::Neumann;
    bc
}

fn validate(problem: &DivCurlProblem, opts: &DivCurlOptions) -> Result<()> {
    if let Some(p) = problem.lambda.values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(DivCurlError::NonPositiveWeight {
            node: p,
            value: problem.lambda.values[p],
        });
    }
    let wt = wall_tangential(&problem.w);
    if wt > opts.wall_tol * problem.w.max_abs().max(1.0) {
        return Err(DivCurlError::WallVorticity(wt));
    }
    if let Some(v) = &problem.v {
        let g = v.grid();
        let mut m: f64 = 0.0;
        for p in 0..g.len() {
            let [_, j, k] = g.ijk(p);
            if j == 0 || j + 1 == g.n[1] {
                m = m.max(v.c[1].values[p].abs());
            }
            if k == 0 || k + 1 == g.n[2] {
                m = m.max(v.c[2].values[p].abs());
            }
        }
        if m > opts.wall_tol * v.max_abs().max(1.0) {
            return Err(DivCurlError::WallFlux(m));
        }
    }
    Ok(())
}

/// `λ⁻¹ ∇×q`.
fn weighted_curl(q: &VectorField, inv_lambda: &ScalarField) -> VectorField {
    let c = q.curl();
    VectorField::new([0, 1, 2].map(|a| {
        let mut f = c.c[a].zip(inv_lambda, |x, y| x * y);
        f.symmetry = c.c[a].symmetry;
        f
    }))
}

pub fn solve_div_curl(problem: &DivCurlProblem, opts: &DivCurlOptions) -> Result<DivCurlSolution> {
    solve_div_curl_from(problem, opts, None)
}

/// Same as [`solve_div_curl`] with an initial guess for the vector
/// potential.
pub fn solve_div_curl_from(
    problem: &DivCurlProblem,
    opts: &DivCurlOptions,
    q_guess: Option<&VectorField>,
) -> Result<DivCurlSolution> {
    validate(problem, opts)?;
    let g = problem.lambda.grid;
    let lin = SolverOptions {
        tol: opts.linear_tol,
        max_iter: None,
    };
    let lambda = problem.lambda.clone().with_symmetry(Symmetry::EVEN);

    let phi_hat = match &problem.v {
        Some(v) if v.max_abs() > 0.0 => {
            let mut p = ConormalProblem::neumann(lambda.clone());
            p.source = Source::Nodal(v.clone());
            elliptic::solve_conormal(&p, &lin)
                .map_err(|source| DivCurlError::Linear {
                    stage: "scalar potential",
                    source,
                })?
                .phi
        }
        _ => ScalarField::zeros(g, Symmetry::EVEN),
    };

    let inv_lambda = lambda.map(|l| 1.0 / l);
    let grad_log: [ScalarField; 3] = {
        let ln = lambda.map(f64::ln);
        [ln.derivative(0), ln.derivative(1), ln.derivative(2)]
    };
    let constant_weight = grad_log.iter().all(|c| c.max_abs() == 0.0);
    let lw = problem.w.mul_scalar(&lambda);
    let axial = Symmetry::axial();

    let mut q = match q_guess {
        Some(q) if q.grid() == g => q.clone(),
        _ => VectorField::zeros_axial(g),
    };
    let mut history = Vec::new();
    let mut converged = false;
    if problem.w.max_abs() == 0.0 {
        q = VectorField::zeros_axial(g);
        converged = true;
    }
    let mut iters = 0;
    while !converged && iters < opts.max_picard {
        iters += 1;
        let cq = q.curl();
        let mut next = Vec::with_capacity(3);
        for c in 0..3 {
            let (a, b) = ((c + 1) % 3, (c + 2) % 3);
            // ((∇λ/λ) × (∇×q))_c
            let coupling = (0..g.len()).map(|p| {
                grad_log[a].values[p] * cq.c[b].values[p] - grad_log[b].values[p] * cq.c[a].values[p]
            });
            let rhs: Vec<f64> = lw.c[c].values.iter().zip(coupling).map(|(x, y)| -(x + y)).collect();
            let mut prob = ConormalProblem::neumann(ScalarField::constant(g, 1.0, Symmetry::EVEN));
            prob.bc = component_bc(c);
            prob.symmetry = axial[c];
            prob.volume = Some(ScalarField {
                grid: g,
                values: rhs,
                symmetry: axial[c],
            });
            let sol = elliptic::solve_conormal_from(&prob, &lin, Some(&q.c[c])).map_err(|source| DivCurlError::Linear {
                stage: "vector potential",
                source,
            })?;
            next.push(sol.phi);
        }
        let next = VectorField::new([next[0].clone(), next[1].clone(), next[2].clone()]);
        let diff = next.max_abs_diff(&q);
        let scale = next.max_abs();
        let update = if scale > 0.0 { diff / scale } else { diff };
        history.push(update);
        if constant_weight || update <= opts.tol {
            q = next;
            converged = true;
            break;
        }
        if !update.is_finite() {
            break;
        }
        q = VectorField::new([0, 1, 2].map(|c| {
            let mut f = q.c[c].zip(&next.c[c], |a, b| a + opts.relax * (b - a));
            f.symmetry = axial[c];
            f
        }));
    }
    if !converged {
        return Err(DivCurlError::NotConverged {
            iterations: history.len(),
            last_update: history.last().copied().unwrap_or(f64::NAN),
            history,
        });
    }

    let u = phi_hat.gradient().add(&weighted_curl(&q, &inv_lambda));
    let (residual_div, residual_curl, residual_flux) = residuals(problem, &u);
    Ok(DivCurlSolution {
        u,
        phi_hat,
        q,
        residual_div,
        residual_curl,
        residual_flux,
        picard_iters: history.len(),
        history,
    })
}

/// Max-norm defects of the three equations: `∇·(λu − v)`, `∇×u − w` and
/// `(λu − v)·n` over all boundary nodes.
pub fn residuals(problem: &DivCurlProblem, u: &VectorField) -> (f64, f64, f64) {
    let g = u.grid();
    let mut flux = u.mul_scalar(&problem.lambda.clone().with_symmetry(Symmetry::EVEN));
    if let Some(v) = &problem.v {
        flux = flux.sub(v);
    }
    let div = flux.divergence().max_abs();
    let curl = u.curl().sub(&problem.w).max_abs();
    let mut bflux: f64 = 0.0;
    for p in 0..g.len() {
        let ijk = g.ijk(p);
        for a in 0..3 {
            if ijk[a] == 0 || ijk[a] + 1 == g.n[a] {
                bflux = bflux.max(flux.c[a].values[p].abs());
            }
        }
    }
    (div, curl, bflux)
}

/// Vortical velocity `W`: `∇·(ρW) = 0`, `∇×W = ω`, `ρW·n = 0`.
pub fn solve_vortical_w(rho: &ScalarField, omega: &VectorField, opts: &DivCurlOptions) -> Result<DivCurlSolution> {
    let problem = DivCurlProblem {
        lambda: rho.clone(),
        w: omega.clone(),
        v: None,
    };
    solve_div_curl(&problem, opts)
}

/// `Σ w ∇φ̂ · (∇×q)`, the discrete inner product of the two parts of the
/// splitting, and the product of their norms.
pub fn splitting_inner_product(sol: &DivCurlSolution) -> (f64, f64) {
    let g = sol.u.grid();
    let w = g.volume_weights();
    let a = sol.phi_hat.gradient();
    let b = sol.q.curl();
    let mut ip = 0.0;
    let (mut na, mut nb) = (0.0, 0.0);
    for p in 0..g.len() {
        let (x, y) = (a.at(p), b.at(p));
        ip += w[p] * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]);
        na += w[p] * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        nb += w[p] * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
    }
    (ip, (na * nb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    pub(crate) fn manufactured(g: Grid) -> (VectorField, VectorField) {
        let l = g.length;
        let k = PI * PI * (1.0 / (l * l) + 1.0);
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| {
            [
                PI * (PI * x[0] / l).sin() * (PI * x[1]).cos(),
                -(PI / l) * (PI * x[0] / l).cos() * (PI * x[1]).sin(),
                0.0,
            ]
        });
        let w = VectorField::from_fn(g, Symmetry::axial(), |x| [0.0, 0.0, k * (PI * x[0] / l).sin() * (PI * x[1]).sin()]);
        (u, w)
    }

    #[test]
    fn potential_flow_only() {
        let g = Grid::new(2.0, 7, 7, 7).unwrap();
        let problem = DivCurlProblem {
            lambda: ScalarField::constant(g, 1.0, Symmetry::EVEN),
            w: VectorField::zeros_axial(g),
            v: Some(VectorField::from_fn(g, Symmetry::polar(), |_| [1.0, 0.0, 0.0])),
        };
        let s = solve_div_curl(&problem, &DivCurlOptions::default()).unwrap();
        assert_eq!(s.q.max_abs(), 0.0);
        let exact = ScalarField::from_fn(g, Symmetry::EVEN, |x| x[0] - 1.0);
        assert!(s.phi_hat.max_abs_diff(&exact) < 1e-10);
        for p in 0..g.len() {
            assert!((s.u.c[0].values[p] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_vorticity_gives_zero() {
        let g = Grid::cube(1.0, 5).unwrap();
        let rho = ScalarField::from_fn(g, Symmetry::EVEN, |x| 1.0 + 0.1 * x[0]);
        let s = solve_vortical_w(&rho, &VectorField::zeros_axial(g), &DivCurlOptions::default()).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
    }

    fn mms_error(n: usize) -> f64 {
        let g = Grid::new(1.5, n, n, n).unwrap();
        let (u, w) = manufactured(g);
        let rho = ScalarField::constant(g, 1.0, Symmetry::EVEN);
        let s = solve_vortical_w(&rho, &w, &DivCurlOptions::default()).unwrap();
        assert!(s.residual_flux < 1e-12);
        s.u.max_abs_diff(&u)
    }

    #[test]
    fn manufactured_vector_potential_converges() {
        let (a, b) = (mms_error(9), mms_error(17));
        let order = (a / b).log2();
        assert!(order >= 1.8, "order {order} ({a}, {b})");
    }

    #[test]
    fn variable_weight_residuals() {
        let g = Grid::new(1.0, 9, 9, 9).unwrap();
        let (_, w) = manufactured(g);
        let lambda = ScalarField::from_fn(g, Symmetry::EVEN, |x| {
            1.0 + 0.1 * (PI * x[0]).cos() * (PI * x[1]).cos() * (PI * x[2]).cos()
        });
        let s = solve_vortical_w(&lambda, &w, &DivCurlOptions::default()).unwrap();
        assert!(s.picard_iters > 1);
        assert!(s.residual_div < 1e-9, "{}", s.residual_div);
        assert!(s.residual_flux < 1e-12);
        assert!(s.residual_curl < 0.1 * w.max_abs(), "{}", s.residual_curl);
    }

    #[test]
    fn wall_vorticity_rejected() {
        let g = Grid::cube(1.0, 5).unwrap();
        let w = VectorField::from_fn(g, Symmetry::axial(), |_| [1.0, 0.0, 0.0]);
        let rho = ScalarField::constant(g, 1.0, Symmetry::EVEN);
        assert!(matches!(
            solve_vortical_w(&rho, &w, &DivCurlOptions::default()),
            Err(DivCurlError::WallVorticity(_))
        ));
        let bad = ScalarField::constant(g, -1.0, Symmetry::EVEN);
        assert!(matches!(
            solve_vortical_w(&bad, &VectorField::zeros_axial(g), &DivCurlOptions::default()),
            Err(DivCurlError::NonPositiveWeight { .. })
        ));
    }
}
