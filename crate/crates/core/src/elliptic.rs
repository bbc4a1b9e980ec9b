//! Variable-coefficient conormal problems
//!
//! ```text
//! ∇·(λ∇φ − F) = s   in Ω,
//! (λ∇φ − F)·n = g   on the x1 faces,  0 on the walls,
//! ```
//!
//! discretized with a vertex-centered finite-volume scheme on dual cells
//! (half cells on the boundary) and solved with Jacobi-preconditioned
//! conjugate gradients. Faces may alternatively carry homogeneous Dirichlet
//! conditions, which is what the vector-potential components need.
//!
//! The assembled operator is symmetric. With Neumann conditions everywhere
//! its kernel is the constants; the right-hand side is checked for
//! compatibility and the returned solution has zero mean.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Grid, ScalarField, Symmetry, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EllipticError {
    #[error("coefficient must be positive, got {value} at node {node}")]
    NonPositiveCoefficient { node: usize, value: f64 },
    #[error("data violate the Neumann compatibility condition: net source {net}, scale {scale}")]
    Incompatible { net: f64, scale: f64 },
    #[error("conjugate gradients stalled after {iterations} iterations, relative residual {residual:e}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("{0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, EllipticError>;

/// Boundary condition on both faces normal to one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bc {
    Neumann,
    /// Homogeneous Dirichlet.
    Dirichlet,
}

/// Values on grid edges. `values[a][p]` lives on the edge from node `p` to
/// its upper neighbor along axis `a`; entries of nodes without an upper
/// neighbor are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    pub grid: Grid,
    pub values: [Vec<f64>; 3],
}

impl FaceField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Edge differences `(φ_{p+e_a} − φ_p)/h_a`: the face gradient used by
    /// the finite-volume operator.
    pub fn gradient(phi: &ScalarField) -> Self {
        let g = phi.grid;
        let mut out = Self::zeros(g);
        for a in 0..3 {
            let s = g.stride(a);
            for p in 0..g.len() {
                if g.ijk(p)[a] + 1 < g.n[a] {
                    out.values[a][p] = (phi.values[p + s] - phi.values[p]) / g.h[a];
                }
            }
        }
        out
    }

    /// Arithmetic average of the nodal component `F_a` onto the edges.
    pub fn from_nodal(f: &VectorField) -> Self {
        let g = f.grid();
        let mut out = Self::zeros(g);
        for a in 0..3 {
            let s = g.stride(a);
            let v = &f.c[a].values;
            for p in 0..g.len() {
                if g.ijk(p)[a] + 1 < g.n[a] {
                    out.values[a][p] = 0.5 * (v[p] + v[p + s]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    None,
    Nodal(VectorField),
    Face(FaceField),
}

#[derive(Debug, Clone)]
pub struct ConormalProblem {
    pub lambda: ScalarField,
    /// Flux source `F`.
    pub source: Source,
    /// Volume source `s`.
    pub volume: Option<ScalarField>,
    /// Boundary flux data on the inlet and outlet planes.
    pub g_minus: Vec<f64>,
    pub g_plus: Vec<f64>,
    pub bc: [Bc; 3],
    /// Symmetry assigned to the solution field.
    pub symmetry: Symmetry,
}

impl ConormalProblem {
    /// Pure Neumann problem with the given coefficient and no data.
    pub fn neumann(lambda: ScalarField) -> Self {
        let n = lambda.grid.plane_len();
        Self {
            lambda,
            source: Source::None,
            volume: None,
            g_minus: vec![0.0; n],
            g_plus: vec![0.0; n],
            bc: [Bc::Neumann; 3],
            symmetry: Symmetry::EVEN,
        }
    }

    pub fn grid(&self) -> Grid {
        self.lambda.grid
    }

    fn is_singular(&self) -> bool {
        self.bc.iter().all(|&b| b == Bc::Neumann)
    }

    fn validate(&self) -> Result<()> {
        let g = self.grid();
        if let Some(p) = self.lambda.values.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(EllipticError::NonPositiveCoefficient {
                node: p,
                value: self.lambda.values[p],
            });
        }
        if self.g_minus.len() != g.plane_len() || self.g_plus.len() != g.plane_len() {
            return Err(EllipticError::Shape("boundary data do not match the grid planes".into()));
        }
        let same = match &self.source {
            Source::None => true,
            Source::Nodal(f) => f.grid() == g,
            Source::Face(f) => f.grid == g,
        };
        if !same || self.volume.as_ref().is_some_and(|v| v.grid != g) {
            return Err(EllipticError::Shape("source lives on a different grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub tol: f64,
    /// Defaults to `20·N^(1/3)·100` for `N` nodes.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub phi: ScalarField,
    pub iterations: usize,
    /// Relative residual `‖r‖∞/‖b‖∞` after each iteration.
    pub history: Vec<f64>,
}

/// Defect of a candidate solution, split into the equation at nodes off
/// the x1 faces (per unit volume) and the flux condition on the x1 faces
/// (per unit area).
#[derive(Debug, Clone)]
pub struct Residual {
    pub interior: ScalarField,
    pub flux_minus: Vec<f64>,
    pub flux_plus: Vec<f64>,
}

impl Residual {
    pub fn max_abs(&self) -> f64 {
        self.flux_minus
            .iter()
            .chain(&self.flux_plus)
            .fold(self.interior.max_abs(), |m, v| m.max(v.abs()))
    }
}

/// Assembled finite-volume operator.
#[derive(Debug, Clone)]
pub struct Operator {
    grid: Grid,
    /// `λ_e·A_e/h_a` per edge.
    coef: [Vec<f64>; 3],
    diag: Vec<f64>,
    /// Unknown (true) or fixed at zero by a Dirichlet condition.
    free: Vec<bool>,
    /// Dual-cell volumes.
    volume: Vec<f64>,
    /// Dual-cell face area normal to x1.
    area1: Vec<f64>,
}

fn dual_widths(g: &Grid, axis: usize) -> Vec<f64> {
    let n = g.n[axis];
    let mut w = vec![g.h[axis]; n];
    w[0] *= 0.5;
    w[n - 1] *= 0.5;
    w
}

impl Operator {
    pub fn new(lambda: &ScalarField, bc: [Bc; 3]) -> Self {
        let g = lambda.grid;
        let w = [dual_widths(&g, 0), dual_widths(&g, 1), dual_widths(&g, 2)];
        let n = g.len();
        let mut coef = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut volume = vec![0.0; n];
        let mut area1 = vec![0.0; n];
        let mut free = vec![true; n];
        for p in 0..n {
            let ijk = g.ijk(p);
            let dw = [w[0][ijk[0]], w[1][ijk[1]], w[2][ijk[2]]];
            volume[p] = dw[0] * dw[1] * dw[2];
            area1[p] = dw[1] * dw[2];
            for a in 0..3 {
                if bc[a] == Bc::Dirichlet && (ijk[a] == 0 || ijk[a] + 1 == g.n[a]) {
                    free[p] = false;
                }
                if ijk[a] + 1 < g.n[a] {
                    let q = p + g.stride(a);
                    let lam = 0.5 * (lambda.values[p] + lambda.values[q]);
                    coef[a][p] = lam * volume[p] / dw[a] / g.h[a];
                }
            }
        }
        let mut diag = vec![0.0; n];
        for p in 0..n {
            let ijk = g.ijk(p);
            let mut d = 0.0;
            for a in 0..3 {
                if ijk[a] + 1 < g.n[a] {
                    d += coef[a][p];
                }
                if ijk[a] > 0 {
                    d += coef[a][p - g.stride(a)];
                }
            }
            diag[p] = if free[p] { d } else { 1.0 };
        }
        Self {
            grid: g,
            coef,
            diag,
            free,
            volume,
            area1,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// `Aφ` on free nodes; fixed nodes read as zero and map to zero.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let g = self.grid;
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            if !self.free[p] {
                *o = 0.0;
                return;
            }
            let ijk = g.ijk(p);
            let xp = x[p];
            let val = |q: usize| if self.free[q] { x[q] } else { 0.0 };
            let mut acc = 0.0;
            for a in 0..3 {
                let s = g.stride(a);
                if ijk[a] + 1 < g.n[a] {
                    acc += self.coef[a][p] * (xp - val(p + s));
                }
                if ijk[a] > 0 {
                    acc += self.coef[a][p - s] * (xp - val(p - s));
                }
            }
            *o = acc;
        });
    }

    pub fn volume(&self) -> &[f64] {
        &self.volume
    }

    pub fn is_free(&self, p: usize) -> bool {
        self.free[p]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // sequential so that results do not depend on the worker count
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Right-hand side of the discrete system, before any compatibility
/// projection.
fn assemble_rhs(problem: &ConormalProblem, op: &Operator) -> Vec<f64> {
    let g = problem.grid();
    let n = g.len();
    let mut b = vec![0.0; n];
    let faces = match &problem.source {
        Source::None => None,
        Source::Nodal(f) => Some(FaceField::from_nodal(f)),
        Source::Face(f) => Some(f.clone()),
    };
    if let Some(ff) = faces {
        let w = [dual_widths(&g, 0), dual_widths(&g, 1), dual_widths(&g, 2)];
        for p in 0..n {
            let ijk = g.ijk(p);
            for a in 0..3 {
                if ijk[a] + 1 < g.n[a] {
                    let q = p + g.stride(a);
                    let area = op.volume[p] / w[a][ijk[a]];
                    let flux = ff.values[a][p] * area;
                    // outward normal +e_a for p, −e_a for q
                    b[p] -= flux;
                    b[q] += flux;
                }
            }
        }
    }
    if problem.bc[0] == Bc::Neumann {
        let np = g.plane_len();
        let last = (g.n[0] - 1) * np;
        for p in 0..np {
            b[p] += problem.g_minus[p] * op.area1[p];
            b[last + p] += problem.g_plus[p] * op.area1[last + p];
        }
    }
    if let Some(s) = &problem.volume {
        for p in 0..n {
            b[p] -= op.volume[p] * s.values[p];
        }
    }
    for p in 0..n {
        if !op.free[p] {
            b[p] = 0.0;
        }
    }
    b
}

pub fn default_max_iter(grid: &Grid) -> usize {
    (20.0 * (grid.len() as f64).cbrt() * 100.0) as usize
}

/// Solve the conormal problem starting from zero.
pub fn solve_conormal(problem: &ConormalProblem, opts: &SolverOptions) -> Result<Solution> {
    solve_conormal_from(problem, opts, None)
}

/// Solve the conormal problem starting from `guess`.
pub fn solve_conormal_from(
    problem: &ConormalProblem,
    opts: &SolverOptions,
    guess: Option<&ScalarField>,
) -> Result<Solution> {
    problem.validate()?;
    let op = Operator::new(&problem.lambda, problem.bc);
    let g = problem.grid();
    let n = g.len();
    let mut b = assemble_rhs(problem, &op);
    if problem.is_singular() {
        let net: f64 = b.iter().sum();
        let scale: f64 = b.iter().map(|v| v.abs()).sum();
        if net.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(EllipticError::Incompatible { net, scale });
        }
        let vol: f64 = op.volume.iter().sum();
        for p in 0..n {
            b[p] -= op.volume[p] * net / vol;
        }
    }
    let bnorm = max_abs(&b);
    let max_iter = opts.max_iter.unwrap_or_else(|| default_max_iter(&g));
    let finish = |mut values: Vec<f64>, iterations, history| {
        for p in 0..n {
            if !op.free[p] {
                values[p] = 0.0;
            }
        }
        let mut phi = ScalarField {
            grid: g,
            values,
            symmetry: problem.symmetry,
        };
        if problem.is_singular() {
            phi.remove_mean();
        }
        Solution {
            phi,
            iterations,
            history,
        }
    };
    if bnorm == 0.0 {
        return Ok(finish(vec![0.0; n], 0, Vec::new()));
    }

    let mut x = match guess {
        Some(f) if f.grid == g => f.values.clone(),
        _ => vec![0.0; n],
    };
    let mut ax = vec![0.0; n];
    op.apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut history = Vec::new();
    let mut rel = max_abs(&r) / bnorm;
    if rel <= opts.tol {
        return Ok(finish(x, 0, history));
    }
    let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(r, d)| r / d).collect();
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut ad = vec![0.0; n];
    for it in 1..=max_iter {
        op.apply(&d, &mut ad);
        let dad = dot(&d, &ad);
        if !(dad > 0.0) {
            break;
        }
        let alpha = rz / dad;
        x.par_iter_mut().zip(&d).for_each(|(x, d)| *x += alpha * d);
        r.par_iter_mut().zip(&ad).for_each(|(r, a)| *r -= alpha * a);
        rel = max_abs(&r) / bnorm;
        history.push(rel);
        if rel <= opts.tol {
            return Ok(finish(x, it, history));
        }
        z.par_iter_mut()
            .zip(&r)
            .zip(&op.diag)
            .for_each(|((z, r), d)| *z = r / d);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        d.par_iter_mut().zip(&z).for_each(|(d, z)| *d = z + beta * *d);
    }
    Err(EllipticError::NotConverged {
        iterations: history.len(),
        residual: rel,
        history,
    })
}

/// Exact discrete defect `b − Aφ` of a candidate solution.
pub fn residual(problem: &ConormalProblem, phi: &ScalarField) -> Residual {
    let op = Operator::new(&problem.lambda, problem.bc);
    let g = problem.grid();
    let b = assemble_rhs(problem, &op);
    let mut ax = vec![0.0; g.len()];
    op.apply(&phi.values, &mut ax);
    let np = g.plane_len();
    let last = (g.n[0] - 1) * np;
    let mut interior = vec![0.0; g.len()];
    let mut flux_minus = vec![0.0; np];
    let mut flux_plus = vec![0.0; np];
    for p in 0..g.len() {
        let d = b[p] - ax[p];
        let i = p / np;
        if i == 0 && problem.bc[0] == Bc::Neumann {
            flux_minus[p] = d / op.area1[p];
        } else if i + 1 == g.n[0] && problem.bc[0] == Bc::Neumann {
            flux_plus[p - last] = d / op.area1[p];
        } else {
            interior[p] = d / op.volume[p];
        }
    }
    Residual {
        interior: ScalarField {
            grid: g,
            values: interior,
            symmetry: problem.symmetry,
        },
        flux_minus,
        flux_plus,
    }
}

/// Boundary flux `(λ∇φ − F)·n` implied on the x1 faces by the discrete
/// balance of the boundary dual cells, together with the face areas.
/// Summed against the areas it is the discrete net mass flux through each
/// end plane.
pub fn implied_boundary_flux(problem: &ConormalProblem, phi: &ScalarField) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let op = Operator::new(&problem.lambda, problem.bc);
    let g = problem.grid();
    let mut stripped = problem.clone();
    stripped.g_minus.iter_mut().for_each(|v| *v = 0.0);
    stripped.g_plus.iter_mut().for_each(|v| *v = 0.0);
    let b0 = assemble_rhs(&stripped, &op);
    let mut ax = vec![0.0; g.len()];
    op.apply(&phi.values, &mut ax);
    let np = g.plane_len();
    let last = (g.n[0] - 1) * np;
    let minus = (0..np).map(|p| (ax[p] - b0[p]) / op.area1[p]).collect();
    let plus = (0..np).map(|p| (ax[last + p] - b0[last + p]) / op.area1[last + p]).collect();
    (minus, plus, op.area1[..np].to_vec())
}
