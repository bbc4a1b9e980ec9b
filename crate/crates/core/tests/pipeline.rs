use nozzle_core::euler::{run_euler, verify_euler_residuals, EulerConfig};
use nozzle_core::potential::{self, PotentialOptions};
use nozzle_core::{BoundaryFamily, GasModel, Grid};

// u = (U(x2,x3), 0, 0) with constant density solves the Euler system exactly,
// so the discrete solution converges to it at second order.
fn shear_error(n: usize) -> f64 {
    let gas = GasModel::default();
    let g = Grid::cube(1.0, n).unwrap();
    let b = BoundaryFamily::ParallelShear { speed: 0.4, delta: 0.1 }
        .build(&g, &gas)
        .unwrap();
    let sol = run_euler(&b, &gas, &EulerConfig::default()).unwrap();
    assert!(sol.converged);
    let pr = b.profile.as_ref().unwrap();
    let rho = gas.density_from_speed(0.16, gas.bernoulli_const).unwrap();
    let mut err: f64 = 0.0;
    for p in 0..g.len() {
        let x = g.point(p);
        let u = sol.u.at(p);
        let exact = -pr.flux_minus(x[1], x[2]) / rho;
        err = err.max((u[0] - exact).abs()).max(u[1].abs()).max(u[2].abs());
    }
    let r = verify_euler_residuals(&sol, &b);
    assert!(r.values().iter().all(|v| v.is_finite()), "{r:?}");
    err
}

#[test]
fn parallel_shear_is_reproduced() {
    let (e9, e17) = (shear_error(9), shear_error(17));
    let order = (e9 / e17).log2();
    assert!(e17 < e9 && order > 1.7, "{e9} {e17} {order}");
}

#[test]
fn mirrored_data_give_mirrored_potential_flow() {
    let gas = GasModel::default();
    let g = Grid::cube(1.0, 9).unwrap();
    let fam = BoundaryFamily::cosine(0.2, -0.1, 0.0, 0.0);
    let opts = PotentialOptions::default();
    let a = potential::solve_potential(&gas, &fam.build(&g, &gas).unwrap(), 0.5, None, &opts, None).unwrap();
    let b = potential::solve_potential(&gas, &fam.mirrored_x2().build(&g, &gas).unwrap(), 0.5, None, &opts, None)
        .unwrap();
    let diff = a.u.mirror_x2_polar().max_abs_diff(&b.u);
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn potential_flux_scales_monotonically() {
    let gas = GasModel::default();
    let g = Grid::cube(1.0, 9).unwrap();
    let b = BoundaryFamily::cosine(0.1, 0.1, 0.0, 0.0).build(&g, &gas).unwrap();
    let opts = PotentialOptions::default();
    let speeds: Vec<f64> = [0.2, 0.4, 0.6]
        .iter()
        .map(|&t| potential::solve_potential(&gas, &b, t, None, &opts, None).unwrap().u.c[0].max())
        .collect();
    assert!(speeds.windows(2).all(|w| w[1] > w[0]), "{speeds:?}");
}
