//! Steady rotational subsonic flow by fixed-point iteration.
//!
//! One application of the map `T` to a velocity `uₙ`:
//!
//! 1. trace the streamlines of `uₙ` and carry `B₀` into the domain,
//! 2. transport the inlet vorticity `Λ₀` along the same streamlines,
//! 3. record the divergence of the transported vorticity,
//! 4. build the vortical part `W` with `∇·(ρW) = 0`, `∇×W = ω`,
//!    `ρW·n = 0`, where `ρ = H(B − |uₙ|²/2)`,
//! 5. solve `∇·(H(B − ½|∇φ + W|²)∇φ) = 0` with the prescribed boundary
//!    mass flux,
//!
//! and return `∇φ + W`. The iteration starts from the irrotational
//! background flow and stays inside a max-norm ball around it.

use serde::Serialize;
use thiserror::Error;

use crate::boundary::BoundaryData;
use crate::divcurl::{self, DivCurlError, DivCurlOptions, DivCurlProblem};
use crate::elliptic::{self, ConormalProblem, SolverOptions};
use crate::gas::{GasError, GasModel};
use crate::grid::{ScalarField, Symmetry, VectorField};
use crate::potential::{self, PotentialError, PotentialOptions, PotentialSolution};
use crate::streamline::{self, StreamlineError, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR};
use crate::transport::{self, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EulerError {
    #[error("background potential flow: {0}")]
    Background(PotentialError),
    #[error("iterate left the admissible set: ‖u − ū‖∞ = {distance:e} (radius {radius:e}), min u1 = {min_u1:e}")]
    Guard { distance: f64, radius: f64, min_u1: f64 },
    #[error("streamline tracing: {0}")]
    Trace(#[from] StreamlineError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("vortical part: {0}")]
    Vortical(#[from] DivCurlError),
    #[error("density: {0}")]
    Density(#[from] GasError),
    #[error("nonlinear potential: {0}")]
    Potential(PotentialError),
    #[error("fixed-point iteration did not converge after {} steps", history.len())]
    NotConverged { history: Vec<OuterStep> },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, EulerError>;

#[derive(Debug, Clone, Serialize)]
pub struct EulerConfig {
    /// Radius of the admissible ball as a fraction of `σ₀ = min ū₁`.
    pub sigma_fraction: f64,
    pub fp_tol: f64,
    pub max_outer: usize,
    /// Blending factor `α` of `u ← (1 − α)u + αTu`.
    pub underrelax: f64,
    /// Smallest `α` tried before a guard violation is reported.
    pub min_underrelax: f64,
    pub rk_tol: f64,
    pub u1_floor: f64,
    pub ode_tol: f64,
    pub potential: PotentialOptions,
    pub divcurl: DivCurlOptions,
}

impl Default for EulerConfig {
    fn default() -> Self {
        Self {
            sigma_fraction: 0.5,
            fp_tol: 1e-8,
            max_outer: 30,
            underrelax: 1.0,
            min_underrelax: 1.0 / 64.0,
            rk_tol: DEFAULT_RK_TOL,
            u1_floor: DEFAULT_U1_FLOOR,
            ode_tol: DEFAULT_RK_TOL,
            potential: PotentialOptions::default(),
            divcurl: DivCurlOptions::default(),
        }
    }
}

impl EulerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(EulerError::Invalid(what.to_string()));
        if !(self.sigma_fraction > 0.0 && self.sigma_fraction < 1.0) {
            return bad("sigma fraction must lie in (0, 1)");
        }
        if !(self.fp_tol > 0.0) || self.max_outer == 0 {
            return bad("fixed-point tolerance and iteration cap must be positive");
        }
        if !(self.underrelax > 0.0 && self.underrelax <= 1.0) || !(self.min_underrelax > 0.0) {
            return bad("under-relaxation must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Everything the map needs besides the iterate.
#[derive(Debug, Clone)]
pub struct EulerContext<'a> {
    pub bdata: &'a BoundaryData,
    pub gas: GasModel,
    pub cfg: EulerConfig,
    pub background: PotentialSolution,
    /// `σ₀ = min ū₁`.
    pub sigma0: f64,
}

impl<'a> EulerContext<'a> {
    pub fn new(bdata: &'a BoundaryData, gas: &GasModel, cfg: &EulerConfig) -> Result<Self> {
        cfg.validate()?;
        let background = potential::solve_potential(gas, bdata, 1.0, None, &cfg.potential, None).map_err(EulerError::Background)?;
        let sigma0 = background.u.c[0].min();
        if !(sigma0 > 0.0) {
            return Err(EulerError::Invalid(format!("background flow has min u1 = {sigma0:e}")));
        }
        Ok(Self {
            bdata,
            gas: *gas,
            cfg: cfg.clone(),
            background,
            sigma0,
        })
    }

    pub fn radius(&self) -> f64 {
        self.cfg.sigma_fraction * self.sigma0
    }

    /// Admissible-set membership: `‖u − ū‖∞ ≤ σ` and `min u1 > σ₀/2`.
    pub fn check_guard(&self, u: &VectorField) -> Result<()> {
        let distance = u.max_abs_diff(&self.background.u);
        let min_u1 = u.c[0].min();
        if !(distance <= self.radius()) || !(min_u1 > 0.5 * self.sigma0) {
            return Err(EulerError::Guard {
                distance,
                radius: self.radius(),
                min_u1,
            });
        }
        Ok(())
    }
}

/// Intermediate fields of one application of the map.
#[derive(Debug, Clone)]
pub struct MapOutput {
    pub v: VectorField,
    pub b: ScalarField,
    pub omega: VectorField,
    pub w: VectorField,
    /// Vector potential of `W`, reused as the next initial guess.
    pub q: VectorField,
    pub phi: ScalarField,
    pub omega_div: f64,
    pub potential_iters: usize,
}

/// Warm starts carried between applications of the map.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub phi: Option<ScalarField>,
    pub q: Option<VectorField>,
}

/// `ρ = H(B − |u|²/2)` nodewise.
pub fn density_from_bernoulli(gas: &GasModel, b: &ScalarField, u: &VectorField) -> std::result::Result<ScalarField, GasError> {
    let q2 = u.norm_sq();
    let values = q2
        .values
        .iter()
        .zip(&b.values)
        .map(|(&s, &bb)| gas.density_from_speed(s, bb))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ScalarField {
        grid: b.grid,
        values,
        symmetry: Symmetry::EVEN,
    })
}

#[derive(Debug, Clone)]
pub struct NonlinearPotential {
    pub phi: ScalarField,
    pub rho: ScalarField,
    pub picard_iters: usize,
    pub history: Vec<f64>,
    /// Max-norm of the discrete residual relative to `‖f‖∞`.
    pub residual: f64,
}

fn flux_problem(lambda: ScalarField, bdata: &BoundaryData) -> ConormalProblem {
    let mut p = ConormalProblem::neumann(lambda);
    p.g_minus = bdata.f_minus.clone();
    p.g_plus = bdata.f_plus.clone();
    p
}

/// Solve `∇·(H(B − ½|∇φ + W|²)∇φ) = 0` with `H(…)∂φ/∂n = f` on the end
/// planes, by Picard iteration on the coefficient.
pub fn solve_nonlinear_potential(
    b: &ScalarField,
    w: &VectorField,
    bdata: &BoundaryData,
    gas: &GasModel,
    opts: &PotentialOptions,
    guess: Option<&ScalarField>,
) -> std::result::Result<NonlinearPotential, PotentialError> {
    let grid = bdata.grid;
    let lin = SolverOptions {
        tol: opts.linear_tol,
        max_iter: None,
    };
    let mut phi = match guess {
        Some(g) if g.grid == grid => g.clone(),
        _ => ScalarField::zeros(grid, Symmetry::EVEN),
    };
    let mut history = Vec::new();
    let mut converged = false;
    for it in 1..=opts.max_picard {
        let u = phi.gradient().add(w);
        let lambda =
            density_from_bernoulli(gas, b, &u).map_err(|source| PotentialError::Density { iteration: it, source })?;
        let problem = flux_problem(lambda, bdata);
        let next = elliptic::solve_conormal_from(&problem, &lin, Some(&phi))
            .map_err(|source| PotentialError::Linear { iteration: it, source })?
            .phi;
        let diff = next.max_abs_diff(&phi);
        let scale = next.max_abs();
        let update = if scale > 0.0 { diff / scale } else { diff };
        history.push(update);
        if !update.is_finite() {
            break;
        }
        if update <= opts.tol {
            phi = next;
            converged = true;
            break;
        }
        phi = phi.zip(&next, |a, b| a + opts.relax * (b - a));
        phi.symmetry = Symmetry::EVEN;
    }
    if !converged {
        return Err(PotentialError::NotConverged {
            iterations: history.len(),
            last_update: history.last().copied().unwrap_or(f64::NAN),
            history,
        });
    }
    let rho = density_from_bernoulli(gas, b, &phi.gradient().add(w))?;
    let problem = flux_problem(rho.clone(), bdata);
    let res = elliptic::residual(&problem, &phi).max_abs();
    let fscale = bdata.flux_scale();
    Ok(NonlinearPotential {
        picard_iters: history.len(),
        phi,
        rho,
        history,
        residual: if fscale > 0.0 { res / fscale } else { res },
    })
}

/// One application of `T`.
pub fn fixed_point_map(u_n: &VectorField, ctx: &EulerContext, warm: &WarmStart) -> Result<MapOutput> {
    ctx.check_guard(u_n)?;
    let cfg = &ctx.cfg;
    let traces = streamline::trace_field(u_n, cfg.rk_tol, cfg.u1_floor)?;
    let b = transport::bernoulli_field(ctx.bdata, &traces)?;
    let inlet = transport::vorticity_initial(ctx.bdata, u_n, cfg.u1_floor);
    let state = transport::transport_vorticity(u_n, &inlet, &traces, cfg.ode_tol)?;
    let omega = state.omega;
    let omega_div = omega.divergence().max_abs();

    let rho_n = density_from_bernoulli(&ctx.gas, &b, u_n)?;
    let (w, q) = if omega.max_abs() == 0.0 {
        (VectorField::zeros_polar(u_n.grid()), VectorField::zeros_axial(u_n.grid()))
    } else {
        let problem = DivCurlProblem {
            lambda: rho_n,
            w: omega.clone(),
            v: None,
        };
        let sol = divcurl::solve_div_curl_from(&problem, &cfg.divcurl, warm.q.as_ref())?;
        (sol.u, sol.q)
    };

    let guess = warm.phi.as_ref().unwrap_or(&ctx.background.phi);
    let pot = solve_nonlinear_potential(&b, &w, ctx.bdata, &ctx.gas, &cfg.potential, Some(guess))
        .map_err(EulerError::Potential)?;
    let v = pot.phi.gradient().add(&w);
    Ok(MapOutput {
        v,
        b,
        omega,
        w,
        q,
        phi: pot.phi,
        omega_div,
        potential_iters: pot.picard_iters,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterStep {
    /// `‖uⁿ − uⁿ⁻¹‖∞`.
    pub update: f64,
    /// Ratio to the previous update, when there is one.
    pub ratio: Option<f64>,
    pub alpha: f64,
    pub omega_div: f64,
    pub potential_iters: usize,
}

#[derive(Debug, Clone)]
pub struct EulerSolution {
    pub u: VectorField,
    pub rho: ScalarField,
    pub b: ScalarField,
    pub omega: VectorField,
    pub w: VectorField,
    pub phi: ScalarField,
    pub history: Vec<OuterStep>,
    pub converged: bool,
    pub sigma0: f64,
    pub residuals: EulerResiduals,
}

impl EulerSolution {
    /// Largest ratio of consecutive updates after the first step, ignoring
    /// updates already at the level of the inner solver tolerances.
    pub fn worst_ratio(&self, floor: f64) -> Option<f64> {
        self.history
            .iter()
            .filter(|s| s.update > floor)
            .filter_map(|s| s.ratio)
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))))
    }
}

pub fn run_euler(bdata: &BoundaryData, gas: &GasModel, cfg: &EulerConfig) -> Result<EulerSolution> {
    let ctx = EulerContext::new(bdata, gas, cfg)?;
    run_euler_from(&ctx, None)
}

/// Iterate `T` from `u0`, or from the background flow.
pub fn run_euler_from(ctx: &EulerContext, u0: Option<&VectorField>) -> Result<EulerSolution> {
    let cfg = &ctx.cfg;
    let mut u = u0.cloned().unwrap_or_else(|| ctx.background.u.clone());
    let mut warm = WarmStart::default();
    let mut history: Vec<OuterStep> = Vec::new();
    let mut alpha = cfg.underrelax;
    let mut last: Option<MapOutput> = None;
    let mut converged = false;
    while history.len() < cfg.max_outer {
        let out = fixed_point_map(&u, ctx, &warm)?;
        let next = loop {
            let cand = if alpha >= 1.0 { out.v.clone() } else { u.blend(&out.v, alpha) };
            match ctx.check_guard(&cand) {
                Ok(()) => break cand,
                Err(e) if alpha * 0.5 < cfg.min_underrelax => return Err(e),
                Err(_) => alpha *= 0.5,
            }
        };
        let update = next.max_abs_diff(&u);
        let ratio = history.last().and_then(|s| (s.update > 0.0).then(|| update / s.update));
        history.push(OuterStep {
            update,
            ratio,
            alpha,
            omega_div: out.omega_div,
            potential_iters: out.potential_iters,
        });
        warm = WarmStart {
            phi: Some(out.phi.clone()),
            q: Some(out.q.clone()),
        };
        u = next;
        last = Some(out);
        if update <= cfg.fp_tol {
            converged = true;
            break;
        }
        if !update.is_finite() {
            break;
        }
    }
    if !converged {
        return Err(EulerError::NotConverged { history });
    }
    let out = last.expect("at least one outer step");
    let rho = density_from_bernoulli(&ctx.gas, &out.b, &u)?;
    let mut sol = EulerSolution {
        u,
        rho,
        b: out.b,
        omega: out.omega,
        w: out.w,
        phi: out.phi,
        history,
        converged,
        sigma0: ctx.sigma0,
        residuals: EulerResiduals::default(),
    };
    sol.residuals = verify_euler_residuals(&sol, ctx.bdata);
    Ok(sol)
}

/// Max-norm residuals of the steady Euler system in its several
/// equivalent forms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EulerResiduals {
    /// `∇·(ρu)`.
    pub mass: f64,
    /// `u·∇B`.
    pub bernoulli: f64,
    /// `(u·∇)ω + ω∇·u − (ω·∇)u` for the transported `ω`.
    pub vorticity: f64,
    /// `u × (∇×u) − ∇B`.
    pub momentum: f64,
    /// `(u × ω − ∇B)·τ` on the inlet plane.
    pub inlet: f64,
    /// `ρu·n − f` on the end planes.
    pub flux: f64,
    /// `∇×u − ω`.
    pub curl: f64,
}

impl EulerResiduals {
    pub const NAMES: [&'static str; 7] = ["mass", "bernoulli", "vorticity", "momentum", "inlet", "flux", "curl"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.mass,
            self.bernoulli,
            self.vorticity,
            self.momentum,
            self.inlet,
            self.flux,
            self.curl,
        ]
    }
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn verify_euler_residuals(sol: &EulerSolution, bdata: &BoundaryData) -> EulerResiduals {
    let u = &sol.u;
    let g = u.grid();
    let rho = sol.rho.clone().with_symmetry(Symmetry::EVEN);
    let mass = u.mul_scalar(&rho).divergence().max_abs();
    let gb = sol.b.gradient();
    let curl_u = u.curl();
    let mut bernoulli: f64 = 0.0;
    let mut momentum: f64 = 0.0;
    let mut inlet: f64 = 0.0;
    let mut flux: f64 = 0.0;
    let last = g.n[0] - 1;
    for p in 0..g.len() {
        let uu = u.at(p);
        let db = gb.at(p);
        bernoulli = bernoulli.max((uu[0] * db[0] + uu[1] * db[1] + uu[2] * db[2]).abs());
        let m = cross(uu, curl_u.at(p));
        for c in 0..3 {
            momentum = momentum.max((m[c] - db[c]).abs());
        }
        let [i, _, _] = g.ijk(p);
        let pp = p % g.plane_len();
        if i == 0 {
            let m = cross(uu, sol.omega.at(p));
            inlet = inlet.max((m[1] - db[1]).abs()).max((m[2] - db[2]).abs());
            flux = flux.max((-rho.values[p] * uu[0] - bdata.f_minus[pp]).abs());
        } else if i == last {
            flux = flux.max((rho.values[p] * uu[0] - bdata.f_plus[pp]).abs());
        }
    }
    EulerResiduals {
        mass,
        bernoulli,
        vorticity: transport::transport_residual(&sol.omega, u).max_abs(),
        momentum,
        inlet,
        flux,
        curl: curl_u.sub(&sol.omega).max_abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryFamily;
    use crate::grid::Grid;

    fn cfg() -> EulerConfig {
        EulerConfig::default()
    }

    #[test]
    fn irrotational_data_are_a_fixed_point() {
        let g = Grid::new(1.0, 7, 7, 7).unwrap();
        let gas = GasModel::default();
        let b = BoundaryFamily::cosine(0.1, 0.05, 0.0, 0.0).with_base_flux(0.5).build(&g, &gas).unwrap();
        let sol = run_euler(&b, &gas, &cfg()).unwrap();
        assert!(sol.history.len() <= 2, "{:?}", sol.history);
        assert_eq!(sol.omega.max_abs(), 0.0);
        assert_eq!(sol.w.max_abs(), 0.0);
        assert!(sol.residuals.bernoulli < 1e-12);
        assert!(sol.residuals.curl < 1e-12);
    }

    #[test]
    fn density_closure_is_consistent() {
        let g = Grid::new(1.0, 7, 7, 7).unwrap();
        let gas = GasModel::default();
        let b = BoundaryFamily::cosine(0.0, 0.0, 0.01, 0.01).with_base_flux(0.5).build(&g, &gas).unwrap();
        let sol = run_euler(&b, &gas, &cfg()).unwrap();
        let rho = density_from_bernoulli(&gas, &sol.b, &sol.u).unwrap();
        assert!(rho.max_abs_diff(&sol.rho) <= 1e-12);
        assert!(sol.omega.max_abs() > 1e-3);
        assert!(sol.worst_ratio(1e-9).unwrap() < 0.9);
    }

    #[test]
    fn uniform_bernoulli_shift_matches_shifted_gas() {
        let g = Grid::new(1.0, 7, 7, 7).unwrap();
        let gas = GasModel::default();
        let shift = 0.05;
        let bdata = BoundaryFamily::uniform().build(&g, &gas).unwrap();
        let bfield = ScalarField::constant(g, gas.bernoulli_const + shift, Symmetry::EVEN);
        let opts = PotentialOptions::default();
        let a = solve_nonlinear_potential(&bfield, &VectorField::zeros_polar(g), &bdata, &gas, &opts, None).unwrap();
        let shifted = gas.with_bernoulli(gas.bernoulli_const + shift);
        let b = potential::solve_potential(&shifted, &bdata, 1.0, None, &opts, None).unwrap();
        assert!(a.phi.max_abs_diff(&b.phi) < 1e-9);
    }

    #[test]
    fn guard_rejects_far_iterate() {
        let g = Grid::new(1.0, 5, 5, 5).unwrap();
        let gas = GasModel::default();
        let b = BoundaryFamily::uniform().with_base_flux(0.5).build(&g, &gas).unwrap();
        let ctx = EulerContext::new(&b, &gas, &cfg()).unwrap();
        let far = ctx.background.u.scale(2.0);
        assert!(matches!(
            fixed_point_map(&far, &ctx, &WarmStart::default()),
            Err(EulerError::Guard { .. })
        ));
    }
}
