//! Transport of the Bernoulli function and the vorticity along streamlines.
//!
//! The Bernoulli function is constant on streamlines, so `B(x) = B₀(γ(x))`.
//! The vorticity obeys the linear system
//!
//! ```text
//! dΛ/ds = −V Λ,   V = (div u · I − ∇u)/u1,   (∇u)_ij = ∂_j u_i,
//! ```
//!
//! along each streamline, started from the inlet value `Λ₀` determined by
//! the swirl `κ` and the momentum identity `∇B = u × ω` on the inlet plane.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boundary::BoundaryData;
use crate::grid::{GridError, ScalarField, Symmetry, VectorField};
use crate::streamline::{StreamlineTrace, TraceField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("u1 = {u1} on the inlet at ({x2}, {x3}) is below the floor")]
    Degenerate { u1: f64, x2: f64, x3: f64 },
    #[error("foot point ({0}, {1}) lies outside the inlet plane")]
    FootPoint(f64, f64),
    #[error("vorticity integration from {seed:?} failed its accuracy check (estimate {estimate:e})")]
    Accuracy { seed: [f64; 3], estimate: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub type Result<T> = std::result::Result<T, TransportError>;

/// `B(x) = B₀(γ₂(x), γ₃(x))`.
pub fn bernoulli_field(bdata: &BoundaryData, traces: &TraceField) -> Result<ScalarField> {
    let g = traces.gamma2.grid;
    let tol = 1e-12;
    let mut values = Vec::with_capacity(g.len());
    for p in 0..g.len() {
        let (a, b) = (traces.gamma2.values[p], traces.gamma3.values[p]);
        if !(-tol..=1.0 + tol).contains(&a) || !(-tol..=1.0 + tol).contains(&b) {
            return Err(TransportError::FootPoint(a, b));
        }
        values.push(bdata.b0_at(a, b));
    }
    Ok(ScalarField {
        grid: g,
        values,
        symmetry: Symmetry::EVEN,
    })
}

/// Inlet vorticity `Λ₀` from swirl and Bernoulli data:
///
/// ```text
/// Λ₀ = (−κ, (∂₃B₀ − κu₂)/u₁, −(∂₂B₀ + κu₃)/u₁).
/// ```
///
/// The first component is the normal vorticity (outward normal `−e₁`), the
/// others solve the tangential part of `∇B = u × ω` on the inlet plane.
#[derive(Debug, Clone)]
pub struct InletVorticity<'a> {
    pub bdata: &'a BoundaryData,
    pub u: &'a VectorField,
    pub u1_floor: f64,
}

impl InletVorticity<'_> {
    pub fn at(&self, x2: f64, x3: f64) -> Result<[f64; 3]> {
        let kappa = self.bdata.kappa_at(x2, x3);
        let [d2, d3] = self.bdata.b0_grad_at(x2, x3);
        if kappa == 0.0 && d2 == 0.0 && d3 == 0.0 {
            return Ok([0.0; 3]);
        }
        let u = self.u.sample_cubic([0.0, x2, x3])?;
        if !(u[0] > self.u1_floor) {
            return Err(TransportError::Degenerate { u1: u[0], x2, x3 });
        }
        Ok([-kappa, (d3 - kappa * u[1]) / u[0], -(d2 + kappa * u[2]) / u[0]])
    }

    /// `Λ₀` at every inlet node, indexed like plane nodes.
    pub fn plane(&self) -> Result<Vec<[f64; 3]>> {
        let g = self.u.grid();
        (0..g.plane_len())
            .map(|p| {
                let x = g.plane_point(p);
                self.at(x[0], x[1])
            })
            .collect()
    }
}

pub fn vorticity_initial<'a>(bdata: &'a BoundaryData, u: &'a VectorField, u1_floor: f64) -> InletVorticity<'a> {
    InletVorticity { bdata, u, u1_floor }
}

/// The nine entries of `V`, stored row-major, each with the reflection
/// parity inherited from `∂_j u_i`.
#[derive(Debug, Clone)]
pub struct TransportMatrix {
    pub v: Vec<ScalarField>,
}

impl TransportMatrix {
    pub fn assemble(u: &VectorField) -> Self {
        let g = u.grid();
        let grads: Vec<Vec<ScalarField>> = (0..3).map(|i| (0..3).map(|j| u.c[i].derivative(j)).collect()).collect();
        let div: Vec<f64> = (0..g.len())
            .map(|p| grads[0][0].values[p] + grads[1][1].values[p] + grads[2][2].values[p])
            .collect();
        let mut v = Vec::with_capacity(9);
        for (i, row) in grads.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                let values = (0..g.len())
                    .map(|p| {
                        let diag = if i == j { div[p] } else { 0.0 };
                        (diag - d.values[p]) / u.c[0].values[p]
                    })
                    .collect();
                v.push(ScalarField {
                    grid: g,
                    values,
                    symmetry: d.symmetry,
                });
            }
        }
        Self { v }
    }

    pub fn at(&self, x: [f64; 3]) -> Result<[[f64; 3]; 3]> {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = self.v[3 * i + j].sample_cubic(x)?;
            }
        }
        Ok(m)
    }
}

fn matvec(m: &[[f64; 3]; 3], x: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| -(m[i][0] * x[0] + m[i][1] * x[1] + m[i][2] * x[2]))
}

fn axpy(y: [f64; 3], a: f64, x: [f64; 3]) -> [f64; 3] {
    [y[0] + a * x[0], y[1] + a * x[1], y[2] + a * x[2]]
}

/// RK4 for `dΛ/ds = −V(s)Λ`, where `vm(i)` returns `V` at partition point
/// `i` and `vmid(i)` at the midpoint of `[s_i, s_{i+stride}]`.
fn integrate(
    s: &[f64],
    stride: usize,
    lambda0: [f64; 3],
    vm: &impl Fn(usize) -> [[f64; 3]; 3],
    vmid: &impl Fn(usize) -> [[f64; 3]; 3],
) -> [f64; 3] {
    let mut y = lambda0;
    let mut i = 0;
    while i + stride < s.len() {
        let h = s[i + stride] - s[i];
        let (a, m, b) = (vm(i), vmid(i), vm(i + stride));
        let k1 = matvec(&a, y);
        let k2 = matvec(&m, axpy(y, 0.5 * h, k1));
        let k3 = matvec(&m, axpy(y, 0.5 * h, k2));
        let k4 = matvec(&b, axpy(y, h, k3));
        for c in 0..3 {
            y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        i += stride;
    }
    y
}

/// Integrate the vorticity system along one streamline from its foot
/// point to the seed. Also returns the difference to the same integration
/// on every other partition point.
pub fn transport_along(trace: &StreamlineTrace, vmat: &TransportMatrix, lambda0: [f64; 3]) -> Result<([f64; 3], f64)> {
    if lambda0 == [0.0; 3] || trace.s.len() == 1 {
        return Ok((lambda0, 0.0));
    }
    let n = trace.s.len();
    let pts: Vec<[[f64; 3]; 3]> = (0..n)
        .map(|i| vmat.at([trace.s[i], trace.path[i][0], trace.path[i][1]]))
        .collect::<std::result::Result<_, _>>()?;
    let mids: Vec<[[f64; 3]; 3]> = (0..n - 1)
        .map(|i| {
            let s = 0.5 * (trace.s[i] + trace.s[i + 1]);
            let y = trace.position(s);
            vmat.at([s, y[0], y[1]])
        })
        .collect::<std::result::Result<_, _>>()?;
    let fine = integrate(&trace.s, 1, lambda0, &|i| pts[i], &|i| mids[i]);
    let estimate = if (n - 1) % 2 == 0 {
        let coarse = integrate(&trace.s, 2, lambda0, &|i| pts[i], &|i| pts[i + 1]);
        (0..3).fold(0.0f64, |m, c| m.max((fine[c] - coarse[c]).abs())) / 15.0
    } else {
        0.0
    };
    Ok((fine, estimate))
}

#[derive(Debug, Clone)]
pub struct VorticityState {
    pub omega: VectorField,
    /// `Λ₀` at each node's foot point.
    pub lambda0: Vec<[f64; 3]>,
    pub matrix: TransportMatrix,
    /// Largest Richardson error estimate over all streamlines.
    pub ode_error: f64,
}

/// Transport `Λ₀` along every traced streamline.
pub fn transport_vorticity(
    u: &VectorField,
    inlet: &InletVorticity,
    traces: &TraceField,
    ode_tol: f64,
) -> Result<VorticityState> {
    let g = u.grid();
    let matrix = TransportMatrix::assemble(u);
    let lambda0: Vec<[f64; 3]> = traces
        .traces
        .par_iter()
        .map(|t| inlet.at(t.gamma[0], t.gamma[1]))
        .collect::<Result<_>>()?;
    let zero = VectorField::zeros_axial(g);
    if lambda0.iter().all(|l| *l == [0.0; 3]) {
        return Ok(VorticityState {
            omega: zero,
            lambda0,
            matrix,
            ode_error: 0.0,
        });
    }
    let out: Vec<([f64; 3], f64)> = traces
        .traces
        .par_iter()
        .zip(&lambda0)
        .map(|(t, l0)| transport_along(t, &matrix, *l0))
        .collect::<Result<_>>()?;
    let mut ode_error: f64 = 0.0;
    for (p, (w, est)) in out.iter().enumerate() {
        let scale = w.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if *est > 100.0 * ode_tol * scale {
            return Err(TransportError::Accuracy {
                seed: g.point(p),
                estimate: *est,
            });
        }
        ode_error = ode_error.max(*est);
    }
    let mut omega = zero;
    for (p, (w, _)) in out.iter().enumerate() {
        for c in 0..3 {
            omega.c[c].values[p] = w[c];
        }
    }
    Ok(VorticityState {
        omega,
        lambda0,
        matrix,
        ode_error,
    })
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct VorticityDiagnostics {
    pub div_max: f64,
    pub wall_tangential_max: f64,
    pub transport_residual_max: f64,
}

/// Largest tangential vorticity on the walls (`ω × n` on `x2, x3 ∈ {0,1}`).
pub fn wall_tangential(omega: &VectorField) -> f64 {
    let g = omega.grid();
    let mut m: f64 = 0.0;
    for p in 0..g.len() {
        let [_, j, k] = g.ijk(p);
        let w = omega.at(p);
        if j == 0 || j + 1 == g.n[1] {
            m = m.max(w[0].abs()).max(w[2].abs());
        }
        if k == 0 || k + 1 == g.n[2] {
            m = m.max(w[0].abs()).max(w[1].abs());
        }
    }
    m
}

/// `(u·∇)ω + ω ∇·u − (ω·∇)u`, nodewise.
pub fn transport_residual(omega: &VectorField, u: &VectorField) -> VectorField {
    let g = u.grid();
    let du: Vec<Vec<ScalarField>> = (0..3).map(|i| (0..3).map(|j| u.c[i].derivative(j)).collect()).collect();
    let dw: Vec<Vec<ScalarField>> = (0..3).map(|i| (0..3).map(|j| omega.c[i].derivative(j)).collect()).collect();
    let mut out = VectorField::zeros(g, [Symmetry::FREE; 3]);
    for p in 0..g.len() {
        let uu = u.at(p);
        let ww = omega.at(p);
        let div = du[0][0].values[p] + du[1][1].values[p] + du[2][2].values[p];
        for i in 0..3 {
            let mut r = ww[i] * div;
            for j in 0..3 {
                r += uu[j] * dw[i][j].values[p] - ww[j] * du[i][j].values[p];
            }
            out.c[i].values[p] = r;
        }
    }
    out
}

pub fn check_vorticity_constraints(state: &VorticityState, u: &VectorField) -> VorticityDiagnostics {
    VorticityDiagnostics {
        div_max: state.omega.divergence().max_abs(),
        wall_tangential_max: wall_tangential(&state.omega),
        transport_residual_max: transport_residual(&state.omega, u).max_abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryFamily;
    use crate::gas::GasModel;
    use crate::grid::Grid;
    use crate::streamline::{trace_field, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn uniform(g: Grid, q: f64) -> VectorField {
        VectorField::from_fn(g, Symmetry::polar(), move |_| [q, 0.0, 0.0])
    }

    #[test]
    fn irrotational_data_give_exact_zero() {
        let g = Grid::new(1.0, 7, 9, 9).unwrap();
        let gas = GasModel::default();
        let b = BoundaryFamily::cosine(0.1, 0.0, 0.0, 0.0).build(&g, &gas).unwrap();
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| [0.4 + 0.05 * x[0], 0.01 * (PI * x[1]).sin(), 0.0]);
        let tf = trace_field(&u, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let bern = bernoulli_field(&b, &tf).unwrap();
        assert!(bern.values.iter().all(|&v| v == 1.5));
        let st = transport_vorticity(&u, &vorticity_initial(&b, &u, DEFAULT_U1_FLOOR), &tf, 1e-8).unwrap();
        assert!(st.omega.c.iter().all(|c| c.values.iter().all(|&v| v == 0.0)));
        let d = check_vorticity_constraints(&st, &u);
        assert_eq!(d.div_max, 0.0);
        assert_eq!(d.transport_residual_max, 0.0);
    }

    #[test]
    fn bernoulli_pullback_under_uniform_flow() {
        let g = Grid::new(1.0, 5, 9, 9).unwrap();
        let gas = GasModel::default();
        let b = BoundaryFamily::cosine(0.0, 0.0, 0.0, 0.01).build(&g, &gas).unwrap();
        let u = uniform(g, 0.5);
        let tf = trace_field(&u, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let bern = bernoulli_field(&b, &tf).unwrap();
        for p in 0..g.len() {
            let x = g.point(p);
            assert_relative_eq!(bern.values[p], b.b0_at(x[1], x[2]), epsilon = 1e-15);
            assert!((bern.values[p] - 1.5).abs() <= 0.01 + 1e-15);
        }
    }

    #[test]
    fn inlet_vorticity_examples() {
        let g = Grid::new(1.0, 5, 9, 9).unwrap();
        let gas = GasModel::default();
        let eps = 0.01;
        let q = 0.5;
        let b = BoundaryFamily::cosine(0.0, 0.0, 0.0, eps).build(&g, &gas).unwrap();
        let u = uniform(g, q);
        let iv = vorticity_initial(&b, &u, DEFAULT_U1_FLOOR);
        let (x2, x3) = (0.3, 0.6);
        let l = iv.at(x2, x3).unwrap();
        let s2 = (PI * x2).sin().powi(2);
        let s3 = (PI * x3).sin().powi(2);
        let d2 = eps * PI * (2.0 * PI * x2).sin() * s3;
        let d3 = eps * PI * (2.0 * PI * x3).sin() * s2;
        assert_eq!(l[0], 0.0);
        assert_relative_eq!(l[1], d3 / q, epsilon = 1e-15);
        assert_relative_eq!(l[2], -d2 / q, epsilon = 1e-15);

        let bk = BoundaryFamily::cosine(0.0, 0.0, 0.02, eps).build(&g, &gas).unwrap();
        let l = vorticity_initial(&bk, &u, DEFAULT_U1_FLOOR).at(x2, x3).unwrap();
        assert_relative_eq!(l[0], -0.02 * (PI * x2).sin() * (PI * x3).sin(), epsilon = 1e-15);
        assert_relative_eq!(l[1], d3 / q, epsilon = 1e-15);
    }

    #[test]
    fn inlet_vorticity_satisfies_momentum_identity() {
        let g = Grid::new(1.0, 5, 9, 9).unwrap();
        let gas = GasModel::default();
        let b = BoundaryFamily::cosine(0.0, 0.0, 0.03, 0.02).build(&g, &gas).unwrap();
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| {
            [0.5, 0.05 * (PI * x[1]).sin(), 0.03 * (PI * x[2]).sin()]
        });
        let iv = vorticity_initial(&b, &u, DEFAULT_U1_FLOOR);
        for (x2, x3) in [(0.25, 0.5), (0.5, 0.5), (0.125, 0.75)] {
            let w = iv.at(x2, x3).unwrap();
            let v = u.sample([0.0, x2, x3]).unwrap();
            let cross = [v[1] * w[2] - v[2] * w[1], v[2] * w[0] - v[0] * w[2], v[0] * w[1] - v[1] * w[0]];
            let grad = b.b0_grad_at(x2, x3);
            assert_relative_eq!(cross[1], grad[0], epsilon = 1e-14);
            assert_relative_eq!(cross[2], grad[1], epsilon = 1e-14);
        }
    }

    #[test]
    fn scalar_surrogate_exponential() {
        // V = v·I along a straight path: Λ(s) = Λ₀ e^{−v s}
        let g = Grid::new(1.0, 9, 5, 5).unwrap();
        let v = 0.8;
        let mut m = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                m.push(ScalarField::constant(g, if i == j { v } else { 0.0 }, Symmetry::FREE));
            }
        }
        let vmat = TransportMatrix { v: m };
        let err = |steps: usize| {
            let s: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
            let trace = StreamlineTrace {
                seed: [1.0, 0.5, 0.5],
                path: vec![[0.5, 0.5]; steps + 1],
                slope: vec![[0.0, 0.0]; steps + 1],
                s,
                gamma: [0.5, 0.5],
                steps_rejected: 0,
            };
            let (w, _) = transport_along(&trace, &vmat, [1.0, -2.0, 0.5]).unwrap();
            (w[1] + 2.0 * (-v).exp()).abs()
        };
        let (e1, e2) = (err(4), err(8));
        assert!(e1 < 1e-4);
        let order = (e1 / e2).log2();
        assert!((3.7..4.3).contains(&order), "order {order}");
    }

    #[test]
    fn uniform_velocity_carries_inlet_value() {
        let g = Grid::new(1.0, 5, 9, 9).unwrap();
        let gas = GasModel::default();
        let b = BoundaryFamily::cosine(0.0, 0.0, 0.02, 0.01).build(&g, &gas).unwrap();
        let u = uniform(g, 0.4);
        let tf = trace_field(&u, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let iv = vorticity_initial(&b, &u, DEFAULT_U1_FLOOR);
        let st = transport_vorticity(&u, &iv, &tf, 1e-8).unwrap();
        for p in 0..g.len() {
            let x = g.point(p);
            let l = iv.at(x[1], x[2]).unwrap();
            for c in 0..3 {
                assert_relative_eq!(st.omega.c[c].values[p], l[c], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn linearity_in_initial_data() {
        let g = Grid::new(1.0, 7, 9, 9).unwrap();
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| {
            [0.5 + 0.1 * x[0] * (PI * x[1]).cos(), 0.02 * (PI * x[1]).sin(), 0.01 * (PI * x[2]).sin()]
        });
        let tf = trace_field(&u, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let vmat = TransportMatrix::assemble(&u);
        let (a, b) = ([0.3, -0.1, 0.2], [0.0, 0.4, -0.7]);
        for t in tf.traces.iter().step_by(17) {
            let ra = transport_along(t, &vmat, a).unwrap().0;
            let rb = transport_along(t, &vmat, b).unwrap().0;
            let rc = transport_along(t, &vmat, [0, 1, 2].map(|c| 2.0 * a[c] - 3.0 * b[c])).unwrap().0;
            for c in 0..3 {
                assert!((rc[c] - (2.0 * ra[c] - 3.0 * rb[c])).abs() < 1e-10);
            }
        }
    }
}
