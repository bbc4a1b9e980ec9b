//! Backward streamline tracing.
//!
//! Streamlines are parameterized by `s = x1`, which is legitimate as long as
//! `u1 > 0`: `dX_i/ds = U_i(s, X) = u_i/u1`, `X(x1) = (x2, x3)`. The slopes are
//! extended across the walls by reflection (`U2` odd in x2, `U3` odd in x3)
//! so the integrator never sees a boundary; the foot point is folded back
//! into the unit square at the end.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{fold_unit, GridError, Parity, ScalarField, Symmetry, VectorField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamlineError {
    #[error("u1 = {min_u1} at node {node} is below the floor {floor}")]
    Degenerate { min_u1: f64, node: usize, floor: f64 },
    #[error("step halving changed the foot point of the trace from {seed:?} by {disagreement:e}")]
    Accuracy { seed: [f64; 3], disagreement: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{failures} traces failed; worst at {seed:?}: {first}")]
    Field {
        failures: usize,
        seed: [f64; 3],
        first: Box<StreamlineError>,
    },
}

pub type Result<T> = std::result::Result<T, StreamlineError>;

pub const DEFAULT_U1_FLOOR: f64 = 1e-8;
pub const DEFAULT_RK_TOL: f64 = 1e-6;

/// Reflected slope fields `U2 = u2/u1`, `U3 = u3/u1`.
#[derive(Debug, Clone)]
pub struct VelocityRatio {
    pub u2: ScalarField,
    pub u3: ScalarField,
}

impl VelocityRatio {
    pub fn eval(&self, s: f64, y: [f64; 2]) -> Result<[f64; 2]> {
        Ok([self.u2.sample_cubic([s, y[0], y[1]])?, self.u3.sample_cubic([s, y[0], y[1]])?])
    }

    pub fn grid(&self) -> crate::grid::Grid {
        self.u2.grid
    }
}

pub fn extend_velocity_ratio(u: &VectorField, u1_floor: f64) -> Result<VelocityRatio> {
    let (node, min_u1) = u.c[0].argmin();
    if !(min_u1 > u1_floor) {
        return Err(StreamlineError::Degenerate {
            min_u1,
            node,
            floor: u1_floor,
        });
    }
    let ratio = |c: &ScalarField, sym: Symmetry| ScalarField {
        grid: c.grid,
        values: c.values.iter().zip(&u.c[0].values).map(|(a, b)| a / b).collect(),
        symmetry: sym,
    };
    Ok(VelocityRatio {
        u2: ratio(&u.c[1], Symmetry::new(Parity::Odd, Parity::Even)),
        u3: ratio(&u.c[2], Symmetry::new(Parity::Even, Parity::Odd)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamlineTrace {
    pub seed: [f64; 3],
    /// Increasing partition of `[0, x1]`.
    pub s: Vec<f64>,
    /// Unfolded path `(X2, X3)` at the partition points.
    pub path: Vec<[f64; 2]>,
    /// `dX/ds` at the partition points.
    pub slope: Vec<[f64; 2]>,
    /// Foot point folded into `[0,1]²`.
    pub gamma: [f64; 2],
    pub steps_rejected: usize,
}

impl StreamlineTrace {
    /// Path point at arbitrary `s` by cubic Hermite interpolation between
    /// partition points.
    pub fn position(&self, s: f64) -> [f64; 2] {
        let n = self.s.len();
        if n == 1 {
            return self.path[0];
        }
        let i = match self.s.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(i) => return self.path[i],
            Err(i) => i.clamp(1, n - 1) - 1,
        };
        let h = self.s[i + 1] - self.s[i];
        let t = (s - self.s[i]) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
            t * (1.0 - t) * (1.0 - t),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        [0, 1].map(|a| {
            h00 * self.path[i][a] + h10 * h * self.slope[i][a] + h01 * self.path[i + 1][a] + h11 * h * self.slope[i + 1][a]
        })
    }
}

/// Integrate `dY/ds = U(s, Y)` from `(s0, y0)` to `s1` with `n` RK4 steps,
/// recording every step. Returned in the order of integration.
fn rk4_path(ratio: &VelocityRatio, s0: f64, y0: [f64; 2], s1: f64, n: usize) -> Result<Vec<(f64, [f64; 2], [f64; 2])>> {
    let h = (s1 - s0) / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut y = y0;
    let mut k1 = ratio.eval(s0, y)?;
    out.push((s0, y, k1));
    for step in 0..n {
        let s = s0 + step as f64 * h;
        let add = |y: [f64; 2], k: [f64; 2], c: f64| [y[0] + c * k[0], y[1] + c * k[1]];
        let k2 = ratio.eval(s + 0.5 * h, add(y, k1, 0.5 * h))?;
        let k3 = ratio.eval(s + 0.5 * h, add(y, k2, 0.5 * h))?;
        let s_next = if step + 1 == n { s1 } else { s0 + (step + 1) as f64 * h };
        let k4 = ratio.eval(s_next, add(y, k3, h))?;
        for a in 0..2 {
            y[a] += h / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        k1 = ratio.eval(s_next, y)?;
        out.push((s_next, y, k1));
    }
    Ok(out)
}

fn step_count(ratio: &VelocityRatio, span: f64, rk_tol: f64) -> usize {
    let hmax = ratio.grid().h[0].min(rk_tol.powf(0.25));
    // even, so that the transport stage can run a half-resolution check
    let n = (span / hmax * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    n + n % 2
}

/// Trace from `x` back to the parameter value `t ≤ x1`; returns the
/// unfolded `(X2, X3)` at `t`.
pub fn trace_between(ratio: &VelocityRatio, x: [f64; 3], t: f64, rk_tol: f64) -> Result<[f64; 2]> {
    if t >= x[0] {
        return Ok([x[1], x[2]]);
    }
    let n = step_count(ratio, x[0] - t, rk_tol);
    let path = rk4_path(ratio, x[0], [x[1], x[2]], t, n)?;
    Ok(path.last().unwrap().1)
}

/// Trace the streamline through `x` back to the inlet.
pub fn trace_to_inlet(ratio: &VelocityRatio, x: [f64; 3], rk_tol: f64) -> Result<StreamlineTrace> {
    let y0 = [x[1], x[2]];
    if x[0] <= 0.0 {
        let slope = ratio.eval(0.0, y0)?;
        let (g2, _) = fold_unit(y0[0]);
        let (g3, _) = fold_unit(y0[1]);
        return Ok(StreamlineTrace {
            seed: x,
            s: vec![0.0],
            path: vec![y0],
            slope: vec![slope],
            gamma: [g2, g3],
            steps_rejected: 0,
        });
    }
    let n = step_count(ratio, x[0], rk_tol);
    let coarse = rk4_path(ratio, x[0], y0, 0.0, n)?;
    let fine = rk4_path(ratio, x[0], y0, 0.0, 2 * n)?;
    let a = coarse.last().unwrap().1;
    let b = fine.last().unwrap().1;
    let disagreement = (a[0] - b[0]).abs().max((a[1] - b[1]).abs());
    if disagreement > 100.0 * rk_tol {
        return Err(StreamlineError::Accuracy { seed: x, disagreement });
    }
    let mut samples = coarse;
    samples.reverse();
    let (g2, _) = fold_unit(a[0]);
    let (g3, _) = fold_unit(a[1]);
    Ok(StreamlineTrace {
        seed: x,
        s: samples.iter().map(|v| v.0).collect(),
        path: samples.iter().map(|v| v.1).collect(),
        slope: samples.iter().map(|v| v.2).collect(),
        gamma: [g2, g3],
        steps_rejected: usize::from(disagreement > rk_tol),
    })
}

/// Foot points of all nodes.
#[derive(Debug, Clone)]
pub struct TraceField {
    pub gamma2: ScalarField,
    pub gamma3: ScalarField,
    pub traces: Vec<StreamlineTrace>,
}

impl TraceField {
    pub fn steps_rejected(&self) -> usize {
        self.traces.iter().map(|t| t.steps_rejected).sum()
    }
}

pub fn trace_field(u: &VectorField, rk_tol: f64, u1_floor: f64) -> Result<TraceField> {
    let ratio = extend_velocity_ratio(u, u1_floor)?;
    let g = u.grid();
    let results: Vec<Result<StreamlineTrace>> = (0..g.len())
        .into_par_iter()
        .map(|p| trace_to_inlet(&ratio, g.point(p), rk_tol))
        .collect();
    let failures = results.iter().filter(|r| r.is_err()).count();
    if failures > 0 {
        let mut worst: Option<StreamlineError> = None;
        let mut worst_seed = [0.0; 3];
        let mut worst_dis = f64::NEG_INFINITY;
        for (p, r) in results.iter().enumerate() {
            if let Err(e) = r {
                let d = match e {
                    StreamlineError::Accuracy { disagreement, .. } => *disagreement,
                    _ => f64::INFINITY,
                };
                if worst.is_none() || d > worst_dis {
                    worst_dis = d;
                    worst_seed = g.point(p);
                    worst = Some(e.clone());
                }
            }
        }
        return Err(StreamlineError::Field {
            failures,
            seed: worst_seed,
            first: Box::new(worst.unwrap()),
        });
    }
    let traces: Vec<StreamlineTrace> = results.into_iter().map(|r| r.unwrap()).collect();
    let field = |a: usize| ScalarField {
        grid: g,
        values: traces.iter().map(|t| t.gamma[a]).collect(),
        symmetry: Symmetry::FREE,
    };
    Ok(TraceField {
        gamma2: field(0),
        gamma3: field(1),
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    fn grid() -> Grid {
        Grid::new(1.0, 9, 17, 17).unwrap()
    }

    fn polar(g: Grid, f: impl Fn([f64; 3]) -> [f64; 3] + Sync) -> VectorField {
        VectorField::from_fn(g, Symmetry::polar(), f)
    }

    #[test]
    fn uniform_flow_traces_are_straight() {
        let g = grid();
        let u = polar(g, |_| [1.0, 0.0, 0.0]);
        let tf = trace_field(&u, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        for p in 0..g.len() {
            let x = g.point(p);
            assert_eq!(tf.gamma2.values[p], x[1]);
            assert_eq!(tf.gamma3.values[p], x[2]);
        }
    }

    #[test]
    fn degenerate_u1_rejected() {
        let g = grid();
        let u = polar(g, |x| [x[0] - 0.5, 0.0, 0.0]);
        assert!(matches!(
            extend_velocity_ratio(&u, DEFAULT_U1_FLOOR),
            Err(StreamlineError::Degenerate { .. })
        ));
    }

    #[test]
    fn odd_extension_of_ratio() {
        let g = grid();
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| [1.0, x[1] * (1.0 - x[1]), 0.0]);
        let r = extend_velocity_ratio(&u, DEFAULT_U1_FLOOR).unwrap();
        let v = r.eval(0.5, [-0.25, 0.5]).unwrap();
        assert_relative_eq!(v[0], -0.1875, epsilon = 1e-14);
        let s = VectorField::from_fn(g, Symmetry::polar(), |x| [1.0, (std::f64::consts::PI * x[1]).sin(), 0.0]);
        let r = extend_velocity_ratio(&s, DEFAULT_U1_FLOOR).unwrap();
        let a = r.eval(0.5, [1e-9, 0.3]).unwrap()[0];
        let b = r.eval(0.5, [-1e-9, 0.3]).unwrap()[0];
        assert!((a + b).abs() < 1e-12 && a.abs() < 1e-7);
    }

    #[test]
    fn constant_slope_is_exact() {
        // the free-axis field keeps the linear path unfolded
        let g = grid();
        let alpha = 0.2;
        let r = VelocityRatio {
            u2: ScalarField::constant(g, alpha, Symmetry::FREE),
            u3: ScalarField::constant(g, 0.0, Symmetry::FREE),
        };
        let t = trace_to_inlet(&r, [0.75, 0.5, 0.4], DEFAULT_RK_TOL).unwrap();
        assert_relative_eq!(t.gamma[0], 0.5 - alpha * 0.75, epsilon = 1e-14);
        assert_eq!(t.s[0], 0.0);
        assert_eq!(*t.s.last().unwrap(), 0.75);
        assert_eq!(*t.path.last().unwrap(), [0.5, 0.4]);
    }

    #[test]
    fn exponential_path() {
        // U2 = x2 − 1/2 is linear, so trilinear interpolation is exact
        let g = grid();
        let r = VelocityRatio {
            u2: ScalarField::from_fn(g, Symmetry::FREE, |x| x[1] - 0.5),
            u3: ScalarField::constant(g, 0.0, Symmetry::FREE),
        };
        let x = [0.9, 0.7, 0.3];
        let t = trace_to_inlet(&r, x, 1e-8).unwrap();
        let exact = 0.5 + 0.2 * (-0.9f64).exp();
        assert!((t.gamma[0] - exact).abs() < 1e-9, "{}", t.gamma[0] - exact);
        let mid = t.position(0.4);
        assert!((mid[0] - (0.5 + 0.2 * (0.4f64 - 0.9).exp())).abs() < 1e-8);
    }

    #[test]
    fn wall_seeds_stay_on_wall() {
        let g = grid();
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| {
            let phi_x2 = (std::f64::consts::PI * x[1]).sin();
            [1.0 + 0.1 * x[2], 0.1 * phi_x2 * (1.0 + x[0]), 0.05 * (std::f64::consts::PI * x[2]).sin()]
        });
        let tf = trace_field(&u, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        for p in 0..g.len() {
            let [_, j, _] = g.ijk(p);
            if j == 0 || j + 1 == g.n[1] {
                assert_eq!(tf.gamma2.values[p], g.point(p)[1]);
            }
        }
    }

    #[test]
    fn semigroup() {
        let g = grid();
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| {
            [1.0, 0.1 * (std::f64::consts::PI * x[1]).sin(), 0.1 * (std::f64::consts::PI * x[2]).sin() * x[0]]
        });
        let r = extend_velocity_ratio(&u, DEFAULT_U1_FLOOR).unwrap();
        let x = [0.8, 0.3, 0.6];
        let tol = 1e-8;
        let mid = trace_between(&r, x, 0.375, tol).unwrap();
        let a = trace_between(&r, [0.375, mid[0], mid[1]], 0.0, tol).unwrap();
        let b = trace_between(&r, x, 0.0, tol).unwrap();
        assert!((a[0] - b[0]).abs() < 10.0 * tol && (a[1] - b[1]).abs() < 10.0 * tol);
    }

    #[test]
    fn mirrored_velocity_mirrors_foot_points() {
        let g = grid();
        let u = VectorField::from_fn(g, Symmetry::polar(), |x| {
            [1.0 + 0.2 * x[1], 0.1 * (std::f64::consts::PI * x[1]).sin() * x[0], 0.0]
        });
        let a = trace_field(&u, DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let b = trace_field(&u.mirror_x2_polar(), DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let am = a.gamma2.map(|v| 1.0 - v).mirror_x2(1.0);
        assert!(am.max_abs_diff(&b.gamma2) < 1e-12);
    }

    #[test]
    fn stability_in_velocity() {
        let g = grid();
        let base = |d: f64| {
            VectorField::from_fn(g, Symmetry::polar(), move |x| {
                [1.0 + d * x[2], (0.1 + d) * (std::f64::consts::PI * x[1]).sin(), 0.0]
            })
        };
        let a = trace_field(&base(0.0), DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let b = trace_field(&base(1e-3), DEFAULT_RK_TOL, DEFAULT_U1_FLOOR).unwrap();
        let diff = a.gamma2.max_abs_diff(&b.gamma2).max(a.gamma3.max_abs_diff(&b.gamma3));
        // frozen regression bound on the Lipschitz constant
        assert!(diff <= 2.0 * 1e-3, "{diff}");
    }
}
