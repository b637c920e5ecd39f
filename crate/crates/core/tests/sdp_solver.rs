use ebse_core::linalg::{self, Mat};
use ebse_core::lmi::{AffineBlockMatrix, LinExpr, Objective, SdpProgram};
use ebse_core::sdp::{self, SolveStatus, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stable(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Mat {
    let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let rho = linalg::spectral_radius(&a);
    a * (radius / rho)
}

/// `Σ_k (Aᵀ)^k Q A^k`, truncated once terms fall below machine precision.
fn lyapunov_series(a: &Mat, q: &Mat) -> Mat {
    let mut sum = q.clone();
    let mut term = q.clone();
    for _ in 0..10_000 {
        term = a.transpose() * term * a;
        sum += &term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    sum
}

#[test]
fn lyapunov_trace_matches_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [2, 3, 5] {
        let a = random_stable(&mut rng, n, 0.8);
        let g = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = &g * g.transpose() + Mat::identity(n, n);
        let mut prog = SdpProgram::new();
        let p = prog.symmetric("P", n);
        let e = LinExpr::var(p).sub(&LinExpr::product(&a.transpose(), p, &a)).add_constant(&-&q);
        prog.add_psd("lyap", AffineBlockMatrix::single(e).unwrap(), 0.0).unwrap();
        prog.set_objective(Objective::minimize_trace(p));
        let sol = sdp::solve(&prog, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        let exact = lyapunov_series(&a, &q);
        let rel = (sol.values[p.id].clone() - &exact).norm() / exact.norm();
        assert!(rel < 1e-6, "n={n}: relative error {rel}");
        assert!(sdp::verify(&prog, &sol.values, 1e-7).passed);
    }
}

#[test]
fn tighter_margin_never_improves_objective() {
    let a = Mat::from_row_slice(2, 2, &[0.5, 0.3, -0.2, 0.7]);
    let mut last = f64::NEG_INFINITY;
    for margin in [0.0, 0.01, 0.1, 0.5] {
        let mut prog = SdpProgram::new();
        let p = prog.symmetric("P", 2);
        let e = LinExpr::var(p).sub(&LinExpr::product(&a.transpose(), p, &a)).add_constant(&-Mat::identity(2, 2));
        prog.add_psd("lyap", AffineBlockMatrix::single(e).unwrap(), margin).unwrap();
        prog.set_objective(Objective::minimize_trace(p));
        let sol = sdp::solve(&prog, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective >= last - 1e-7);
        last = sol.objective;
    }
}

#[test]
fn unstable_lyapunov_is_infeasible() {
    let a = Mat::from_row_slice(2, 2, &[1.2, 0.0, 0.0, 0.5]);
    let mut prog = SdpProgram::new();
    let p = prog.symmetric("P", 2);
    let e = LinExpr::var(p).sub(&LinExpr::product(&a.transpose(), p, &a));
    prog.add_psd("lyap", AffineBlockMatrix::single(e).unwrap(), 1e-3).unwrap();
    prog.add_psd("P>=I", AffineBlockMatrix::single(LinExpr::var(p).add_constant(&-Mat::identity(2, 2))).unwrap(), 0.0)
        .unwrap();
    let sol = sdp::solve(&prog, &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Infeasible);
}

#[test]
fn full_variable_least_squares_shape() {
    // min t s.t. [[t, (K - K0)ᵀ-ish]] via Schur: [[I, K - K0], [·, tI]] with K full 2x3
    let k0 = Mat::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
    let mut prog = SdpProgram::new();
    let k = prog.full("K", 2, 3);
    let t = prog.scalar("t");
    let m = AffineBlockMatrix::new(vec![2, 3])
        .with(0, 0, LinExpr::identity(2))
        .unwrap()
        .with(0, 1, LinExpr::var(k).add_constant(&-&k0))
        .unwrap()
        .with(1, 1, ebse_core::lmi::gamma_identity(t, 3))
        .unwrap();
    prog.add_psd("schur", m, 0.0).unwrap();
    prog.set_objective(Objective::minimize_trace(t));
    let sol = sdp::solve(&prog, &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!(sol.objective.abs() < 1e-7);
    assert!((&sol.values[k.id] - &k0).norm() < 1e-5);
}
