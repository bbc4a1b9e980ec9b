//! Irrotational subsonic flow with prescribed normal mass flux:
//!
//! ```text
//! ∇·(ρ_m(|∇φ|²)∇φ) = 0,   ρ_m(|∇φ|²)∂φ/∂n = θf on the end planes,
//! ```
//!
//! with zero flux on the walls. The nonlinearity is handled by Picard
//! iteration with the density frozen at the previous iterate, so every step
//! is a symmetric conormal solve.

use serde::Serialize;
use thiserror::Error;

use crate::boundary::BoundaryData;
use crate::elliptic::{self, ConormalProblem, EllipticError, SolverOptions};
use crate::gas::{DensityLaw, GasError, GasModel, PressureLaw, Truncation};
use crate::grid::{ScalarField, Symmetry, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("Picard iteration did not converge after {iterations} steps (last relative update {last_update:e})")]
    NotConverged {
        iterations: usize,
        last_update: f64,
        history: Vec<f64>,
    },
    #[error("density evaluation failed at Picard step {iteration}: {source}")]
    Density { iteration: usize, source: GasError },
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error("linear solve failed at Picard step {iteration}: {source}")]
    Linear {
        iteration: usize,
        source: EllipticError,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PotentialError>;

#[derive(Debug, Clone, Serialize)]
pub struct PotentialOptions {
    /// Picard stops once `‖φ^{k+1} − φ^k‖∞ ≤ tol·‖φ^{k+1}‖∞`.
    pub tol: f64,
    pub max_picard: usize,
    /// Under-relaxation of the Picard update.
    pub relax: f64,
    /// Relative tolerance of each linear solve.
    pub linear_tol: f64,
}

impl Default for PotentialOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_picard: 3000,
            relax: 0.7,
            linear_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PotentialSolution {
    pub phi: ScalarField,
    pub u: VectorField,
    pub rho: ScalarField,
    pub theta: f64,
    pub m: Option<u32>,
    /// `M_m(θ) = max |∇φ|²`.
    pub max_speed_sq: f64,
    pub mach_max: f64,
    pub picard_iters: usize,
    pub history: Vec<f64>,
    /// Max-norm of the discrete nonlinear residual, relative to `θ‖f‖∞`.
    pub residual: f64,
}

/// Nodal density `ρ(|v|²)` for the given law.
pub fn density_field(law: &DensityLaw, v: &VectorField) -> std::result::Result<ScalarField, GasError> {
    let q2 = v.norm_sq();
    let values = q2
        .values
        .iter()
        .map(|&s| law.density(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(ScalarField {
        grid: q2.grid,
        values,
        symmetry: Symmetry::EVEN,
    })
}

fn flux_problem(lambda: ScalarField, bdata: &BoundaryData, theta: f64) -> ConormalProblem {
    let mut p = ConormalProblem::neumann(lambda);
    p.g_minus = bdata.f_minus.iter().map(|f| theta * f).collect();
    p.g_plus = bdata.f_plus.iter().map(|f| theta * f).collect();
    p
}

/// Maximum over nodes of `|u|/c(ρ)`, with the density taken without
/// truncation where the state is admissible.
pub fn mach_field(law: &DensityLaw, u: &VectorField) -> ScalarField {
    let q2 = u.norm_sq();
    let values = q2
        .values
        .iter()
        .map(|&s| {
            let rho = law
                .physical_density(s)
                .or_else(|_| law.density(s))
                .unwrap_or(f64::NAN);
            s.sqrt() / law.gas.sound_speed(rho).unwrap_or(f64::NAN)
        })
        .collect();
    ScalarField {
        grid: q2.grid,
        values,
        symmetry: Symmetry::EVEN,
    }
}

/// Solve the (optionally truncated) potential problem at flux multiplier
/// `theta`, starting from `guess` or from rest.
pub fn solve_potential(
    gas: &GasModel,
    bdata: &BoundaryData,
    theta: f64,
    trunc: Option<Truncation>,
    opts: &PotentialOptions,
    guess: Option<&ScalarField>,
) -> Result<PotentialSolution> {
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(PotentialError::Invalid(format!("theta must be non-negative, got {theta}")));
    }
    let law = DensityLaw::new(*gas, trunc)?;
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
        let u = phi.gradient();
        let lambda = density_field(&law, &u).map_err(|source| PotentialError::Density { iteration: it, source })?;
        let problem = flux_problem(lambda, bdata, theta);
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
    finish(&law, bdata, theta, phi, history)
}

fn finish(
    law: &DensityLaw,
    bdata: &BoundaryData,
    theta: f64,
    phi: ScalarField,
    history: Vec<f64>,
) -> Result<PotentialSolution> {
    let u = phi.gradient();
    let rho = density_field(law, &u)?;
    let max_speed_sq = u.norm_sq().max();
    let mach_max = mach_field(law, &u).max();
    let problem = flux_problem(rho.clone(), bdata, theta);
    let res = elliptic::residual(&problem, &phi).max_abs();
    let fscale = theta * bdata.f_minus.iter().chain(&bdata.f_plus).fold(0.0f64, |m, f| m.max(f.abs()));
    Ok(PotentialSolution {
        picard_iters: history.len(),
        phi,
        u,
        rho,
        theta,
        m: law.trunc.map(|t| t.m),
        max_speed_sq,
        mach_max,
        history,
        residual: if fscale > 0.0 { res / fscale } else { res },
    })
}

/// `max |u|/c` of a solution.
pub fn max_mach(sol: &PotentialSolution) -> f64 {
    sol.mach_max
}

/// Smallest `u1` and the point where it is attained.
pub fn check_positivity_u1(sol: &PotentialSolution) -> (f64, [f64; 3]) {
    let (p, v) = sol.u.c[0].argmin();
    (v, sol.u.grid().point(p))
}

/// Net discrete mass flux `Σ_{Γ₋} ρu·n dS + Σ_{Γ₊} ρu·n dS`, with the
/// boundary fluxes implied by the conservative finite-volume balance.
pub fn mass_balance(sol: &PotentialSolution, bdata: &BoundaryData) -> f64 {
    let problem = flux_problem(sol.rho.clone(), bdata, sol.theta);
    let (minus, plus, area) = elliptic::implied_boundary_flux(&problem, &sol.phi);
    (0..area.len()).map(|p| area[p] * (minus[p] + plus[p])).sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalOptions {
    pub bis_tol: f64,
    /// First upper end of the bracket; doubled until the predicate fails.
    pub theta_start: f64,
    pub theta_max: f64,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        Self {
            bis_tol: 1e-3,
            theta_start: 0.25,
            theta_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MachSample {
    pub theta: f64,
    pub converged: bool,
    pub max_speed_sq: f64,
    pub mach_max: f64,
    pub picard_iters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalThetaResult {
    pub m: u32,
    /// Midpoint of the final bracket.
    pub theta_star: f64,
    pub bracket: (f64, f64),
    /// Set when the predicate still held at `theta_max`.
    pub open: bool,
    /// Every evaluated sample, sorted by θ.
    pub mach_trace: Vec<MachSample>,
}

impl CriticalThetaResult {
    /// Samples at which the truncated solution was still subsonic in the
    /// sense `M_m ≤ 1 − 1/m`.
    pub fn subsonic_trace(&self) -> Vec<&MachSample> {
        let limit = 1.0 - 1.0 / self.m as f64;
        self.mach_trace
            .iter()
            .filter(|s| s.converged && s.max_speed_sq <= limit)
            .collect()
    }
}

/// Locate `θ_m = sup{θ : M_m(θ) ≤ 1 − 1/m}` by doubling and bisection.
/// A failed solve counts as a failed predicate.
pub fn find_critical_theta(
    gas: &GasModel,
    bdata: &BoundaryData,
    m: u32,
    copts: &CriticalOptions,
    popts: &PotentialOptions,
) -> Result<CriticalThetaResult> {
    let trunc = Truncation::new(m)?;
    let limit = trunc.inactive_below();
    let mut trace = Vec::new();
    let mut warm: Option<ScalarField> = None;
    let eval = |theta: f64, warm: &Option<ScalarField>, trace: &mut Vec<MachSample>| {
        match solve_potential(gas, bdata, theta, Some(trunc), popts, warm.as_ref()) {
            Ok(sol) => {
                trace.push(MachSample {
                    theta,
                    converged: true,
                    max_speed_sq: sol.max_speed_sq,
                    mach_max: sol.mach_max,
                    picard_iters: sol.picard_iters,
                });
                let ok = sol.max_speed_sq <= limit;
                (ok, Some(sol.phi))
            }
            Err(_) => {
                trace.push(MachSample {
                    theta,
                    converged: false,
                    max_speed_sq: f64::NAN,
                    mach_max: f64::NAN,
                    picard_iters: popts.max_picard,
                });
                (false, None)
            }
        }
    };
    let mut lo = 0.0;
    let mut hi = copts.theta_start.min(copts.theta_max);
    let mut open = false;
    loop {
        let (ok, phi) = eval(hi, &warm, &mut trace);
        if !ok {
            break;
        }
        lo = hi;
        warm = phi;
        if hi >= copts.theta_max {
            open = true;
            break;
        }
        hi = (2.0 * hi).min(copts.theta_max);
    }
    if !open {
        while hi - lo > copts.bis_tol {
            let mid = 0.5 * (lo + hi);
            let (ok, phi) = eval(mid, &warm, &mut trace);
            if ok {
                lo = mid;
                warm = phi;
            } else {
                hi = mid;
            }
        }
    }
    trace.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(CriticalThetaResult {
        m,
        theta_star: if open { lo } else { 0.5 * (lo + hi) },
        bracket: (lo, if open { f64::INFINITY } else { hi }),
        open,
        mach_trace: trace,
    })
}

/// Flux multiplier at which uniform flow reaches `|u|² = s` on the
/// background Bernoulli surface: `θ = ρ(s)·√s`. For uniform unit-flux data
/// this is the exact critical multiplier of truncation index `m` when
/// `s = c*²(1 − 1/m)`.
pub fn uniform_critical_theta(gas: &GasModel, m: u32) -> Result<f64> {
    let c2 = gas.critical_speed_sq()?;
    let s = c2 * (1.0 - 1.0 / m as f64);
    Ok(gas.mass_flux(s.sqrt(), gas.bernoulli_const)?)
}

/// Speed of the uniform flow carrying flux density `theta`.
pub fn uniform_speed(gas: &GasModel, theta: f64) -> Result<f64> {
    Ok(gas.subsonic_speed_from_flux(theta, gas.bernoulli_const)?)
}

/// Sound speed of the uniform state with speed `q`.
pub fn uniform_mach(gas: &GasModel, q: f64) -> Result<f64> {
    let rho = gas.density_from_speed(q * q, gas.bernoulli_const)?;
    Ok(q / gas.pressure_derivative(rho).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::BoundaryFamily;
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    fn setup(n: usize, family: BoundaryFamily) -> (GasModel, BoundaryData) {
        let gas = GasModel::default();
        let grid = Grid::new(1.0, n, n, n).unwrap();
        let b = family.build(&grid, &gas).unwrap();
        (gas, b)
    }

    #[test]
    fn rest_state() {
        let (gas, b) = setup(7, BoundaryFamily::uniform());
        let s = solve_potential(&gas, &b, 0.0, None, &PotentialOptions::default(), None).unwrap();
        assert_eq!(s.phi.max_abs(), 0.0);
        assert!(s.rho.values.iter().all(|&r| r == 1.5));
        assert_eq!(max_mach(&s), 0.0);
        assert_eq!(check_positivity_u1(&s).0, 0.0);
    }

    #[test]
    fn uniform_flow_oracle() {
        let (gas, b) = setup(9, BoundaryFamily::uniform());
        let s = solve_potential(&gas, &b, 0.5, None, &PotentialOptions::default(), None).unwrap();
        let q = 0.3472963553338607;
        for p in 0..s.u.grid().len() {
            assert!((s.u.c[0].values[p] - q).abs() < 1e-8);
            assert!(s.u.c[1].values[p].abs() < 1e-8 && s.u.c[2].values[p].abs() < 1e-8);
            assert!((s.rho.values[p] - 1.4396926207859084).abs() < 1e-8);
        }
        assert!((s.mach_max - 0.28944452318737035).abs() < 1e-8);
        assert!((check_positivity_u1(&s).0 - q).abs() < 1e-8);
        assert!(s.phi.is_mean_free());
        assert!(mass_balance(&s, &b).abs() < 1e-8 * 0.5);
    }

    #[test]
    fn uniform_oracles_from_gas() {
        let gas = GasModel::default();
        assert_relative_eq!(uniform_speed(&gas, 0.5).unwrap(), 0.3472963553338607, epsilon = 1e-13);
        assert_relative_eq!(
            uniform_mach(&gas, 0.3472963553338607).unwrap(),
            0.28944452318737035,
            epsilon = 1e-12
        );
        assert_relative_eq!(uniform_critical_theta(&gas, 16).unwrap(), 0.9985035189440997, epsilon = 1e-13);
        assert_relative_eq!(uniform_critical_theta(&gas, 20).unwrap(), 0.9990464203429187, epsilon = 1e-13);
    }

    #[test]
    fn truncation_inactive_below_threshold() {
        let (gas, b) = setup(9, BoundaryFamily::cosine(0.2, 0.1, 0.0, 0.0));
        let opts = PotentialOptions::default();
        let a = solve_potential(&gas, &b, 0.4, Some(Truncation::new(4).unwrap()), &opts, None).unwrap();
        assert!(a.max_speed_sq <= 0.75);
        let c = solve_potential(&gas, &b, 0.4, Some(Truncation::new(8).unwrap()), &opts, None).unwrap();
        assert!(a.phi.max_abs_diff(&c.phi) < 1e-8);
    }

    #[test]
    fn uniqueness_probe() {
        let (gas, b) = setup(9, BoundaryFamily::cosine(0.2, 0.0, 0.0, 0.0));
        let opts = PotentialOptions::default();
        let a = solve_potential(&gas, &b, 0.5, None, &opts, None).unwrap();
        let ramp = ScalarField::from_fn(b.grid, Symmetry::EVEN, |x| 0.8 * (x[0] - 0.5));
        let c = solve_potential(&gas, &b, 0.5, None, &opts, Some(&ramp)).unwrap();
        assert!(a.phi.max_abs_diff(&c.phi) <= 1e-8, "{}", a.phi.max_abs_diff(&c.phi));
        let (min_u1, _) = check_positivity_u1(&a);
        assert!(min_u1 > 0.0);
    }

    #[test]
    fn supercritical_untruncated_fails() {
        let (gas, b) = setup(5, BoundaryFamily::uniform());
        let opts = PotentialOptions {
            max_picard: 200,
            ..Default::default()
        };
        assert!(solve_potential(&gas, &b, 1.2, None, &opts, None).is_err());
        assert!(solve_potential(&gas, &b, -1.0, None, &opts, None).is_err());
    }

    #[test]
    fn critical_theta_uniform_small_grid() {
        let (gas, b) = setup(5, BoundaryFamily::uniform());
        let r = find_critical_theta(&gas, &b, 4, &CriticalOptions::default(), &PotentialOptions::default()).unwrap();
        let oracle = uniform_critical_theta(&gas, 4).unwrap();
        assert!(!r.open);
        assert!(r.bracket.0 <= oracle && oracle <= r.bracket.1, "{:?} vs {oracle}", r.bracket);
        let sub = r.subsonic_trace();
        for w in sub.windows(2) {
            assert!(w[1].mach_max >= w[0].mach_max);
        }
    }
}
