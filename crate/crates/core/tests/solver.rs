use ndarray::Array2;
use swlab::grid::{Mode, Params, RadialGrid};
use swlab::solver::{
    assemble_mode_operator, energies, extract_traces, gronwall_fit, solve_ivp, EquationSpec,
    SolveOptions, Trajectory,
};

fn gaussian(g: &RadialGrid) -> Vec<f64> {
    g.nodes.iter().map(|r| (-(r - 0.5f64).powi(2) / 0.02).exp()).collect()
}

fn run(n: usize, kappa: f64, n_r: usize, spec: &EquationSpec, t_end: f64) -> Trajectory {
    let p = Params::new(n, kappa, 1.0).unwrap();
    let g = RadialGrid::build(n_r, 2.0, n).unwrap();
    let op = assemble_mode_operator(Mode::new(n, 0).unwrap(), spec, &p, &g).unwrap();
    let h0 = gaussian(&g);
    let opts = SolveOptions { snapshot_dt: Some(0.05), ..Default::default() };
    solve_ivp(&op, spec, &h0, &vec![0.0; n_r], 0.0, t_end, &opts).unwrap()
}

#[test]
fn eigenvalue_matches_spherical_harmonics_in_3d() {
    for ell in 0..6u32 {
        let m = Mode::new(3, ell).unwrap();
        assert_eq!(m.eigenvalue, (ell * (ell + 1)) as f64);
    }
}

// Nested grids: with n_r + 1 = 100 · 2^k the coarse nodes are shared.
#[test]
fn final_state_self_converges() {
    let spec = EquationSpec::free();
    let levels = [99usize, 199, 399, 799];
    let finals: Vec<Vec<f64>> = levels.iter().map(|&nr| run(1, -0.25, nr, &spec, 1.0).final_state().0).collect();
    let diff = |k: usize| -> f64 {
        let stride = (levels[k] + 1) / 100;
        let fine_stride = (levels[k + 1] + 1) / 100;
        (1..100)
            .map(|i| (finals[k][i * stride - 1] - finals[k + 1][i * fine_stride - 1]).abs())
            .fold(0.0, f64::max)
    };
    let (d0, d1, d2) = (diff(0), diff(1), diff(2));
    assert!(finals.iter().flatten().all(|v| v.is_finite()));
    let order = ((d0 / d1).log2() + (d1 / d2).log2()) / 2.0;
    assert!(order >= 1.8, "differences {d0:e} {d1:e} {d2:e}, order {order}");
}

#[test]
fn forward_then_backward_returns_initial_data() {
    let spec = EquationSpec::free();
    let p = Params::new(3, -0.4, 1.0).unwrap();
    let g = RadialGrid::build(100, 2.0, 3).unwrap();
    let op = assemble_mode_operator(Mode::new(3, 0).unwrap(), &spec, &p, &g).unwrap();
    let h0 = gaussian(&g);
    let opts = SolveOptions { snapshot_dt: Some(0.1), ..Default::default() };
    let fwd = solve_ivp(&op, &spec, &h0, &vec![0.0; 100], 0.0, 1.0, &opts).unwrap();
    let (hf, vf) = fwd.final_state();
    let back = solve_ivp(&op, &spec, &hf, &vf, 1.0, 0.0, &opts).unwrap();
    let err = back.final_state().0.iter().zip(&h0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= fwd.dt * fwd.dt, "{err:e} vs dt^2 = {:e}", fwd.dt * fwd.dt);
}

#[test]
fn conserved_energy_sits_below_e1() {
    let tr = run(4, -0.1, 100, &EquationSpec::free(), 1.0);
    let e = energies(&tr).unwrap();
    assert!(e.e1.iter().zip(&e.e_conserved).all(|(a, b)| a >= b));
    assert!(e.e2.iter().all(|v| v.is_finite() && *v > 0.0));
}

#[test]
fn free_growth_rate_is_near_zero() {
    let tr = run(1, -0.25, 400, &EquationSpec::free(), 1.0);
    let e = energies(&tr).unwrap();
    let m = gronwall_fit(&e.times, &e.e_conserved).unwrap();
    assert!(m <= 1e-2, "{m}");
}

#[test]
fn demo_growth_rate_is_finite() {
    let tr = run(3, -0.25, 100, &EquationSpec::demo(), 1.0);
    let e = energies(&tr).unwrap();
    assert!(gronwall_fit(&e.times, &e.e1).unwrap().is_finite());
}

#[test]
fn neumann_trace_of_unit_h() {
    for kappa in [-0.1, -0.25, -0.4] {
        let mut tr = run(1, kappa, 50, &EquationSpec::free(), 0.1);
        let (ns, nr) = tr.h.dim();
        tr.h = Array2::ones((ns, nr));
        let traces = extract_traces(&tr);
        for v in &traces.neumann {
            assert!((v + (1.0 - 2.0 * kappa)).abs() < 1e-12);
        }
        assert!(traces.dirichlet.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn interior_data_has_no_trace_before_arrival() {
    // support in (0.3, 0.7); unit speed keeps it off r = 1 until t = 0.3
    let spec = EquationSpec::free();
    let p = Params::new(3, -0.25, 1.0).unwrap();
    let g = RadialGrid::build(200, 2.0, 3).unwrap();
    let op = assemble_mode_operator(Mode::new(3, 0).unwrap(), &spec, &p, &g).unwrap();
    let h0: Vec<f64> = g.nodes.iter().map(|r| (1.0 - ((r - 0.5) / 0.2).powi(2)).max(0.0).powi(4)).collect();
    let opts = SolveOptions { snapshot_dt: Some(0.05), ..Default::default() };
    let tr = solve_ivp(&op, &spec, &h0, &vec![0.0; 200], 0.0, 0.2, &opts).unwrap();
    let traces = extract_traces(&tr);
    assert!(traces.neumann.iter().all(|v| v.abs() < 1e-12), "{:?}", traces.neumann);
}

#[test]
fn backward_and_forward_runs_join() {
    let spec = EquationSpec::demo();
    let p = Params::new(1, -0.25, 1.0).unwrap();
    let g = RadialGrid::build(64, 2.0, 1).unwrap();
    let op = assemble_mode_operator(Mode::new(1, 0).unwrap(), &spec, &p, &g).unwrap();
    let h0 = gaussian(&g);
    let opts = SolveOptions { snapshot_dt: Some(0.1), ..Default::default() };
    let z = vec![0.0; 64];
    let fwd = solve_ivp(&op, &spec, &h0, &z, 0.0, 0.5, &opts).unwrap();
    let bwd = solve_ivp(&op, &spec, &h0, &z, 0.0, -0.5, &opts).unwrap();
    let joined = Trajectory::join(&bwd, &fwd).unwrap();
    assert!(joined.times.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(joined.times.first().copied(), Some(-0.5));
    assert_eq!(joined.times.last().copied(), Some(0.5));
    assert_eq!(joined.len(), fwd.len() + bwd.len() - 1);
}
