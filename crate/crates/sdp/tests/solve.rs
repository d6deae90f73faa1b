use ltn_sdp::{
    min_eigenvalue, solve_with, Backend, LinearForm, MatExpr, ResidualReport, SdpProblem,
    SolveStatus, SolverSettings,
};
use nalgebra::DMatrix;

fn solve(p: &SdpProblem) -> ltn_sdp::SdpSolution {
    solve_with(p, &SolverSettings::default(), Backend::InteriorPoint).unwrap()
}

fn scalar_expr(var: &ltn_sdp::Variable) -> MatExpr {
    MatExpr::of_var(var)
}

#[test]
fn two_by_two_bound_gives_gamma_one() {
    let mut p = SdpProblem::new();
    let g = p.add_variable("gamma", 1, 1, false);
    let one = MatExpr::identity(1);
    p.add_psd("box", MatExpr::symmetric_blocks(&one, &scalar_expr(&g), &one));
    p.set_objective(LinearForm::single(g.offset, 1.0), 0.0);
    let sol = solve(&p);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let gamma = sol.value(&g).unwrap()[(0, 0)];
    assert!((gamma - 1.0).abs() < 1e-6, "gamma = {gamma}");
    assert!((sol.objective.unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn psd_variable_fixed_to_minus_one_is_infeasible() {
    let mut p = SdpProblem::new();
    let x = p.add_variable("X", 1, 1, true);
    p.add_psd("X psd", MatExpr::of_var(&x));
    p.add_equality("X = -I", MatExpr::of_var(&x).add_constant(&DMatrix::identity(1, 1)));
    let sol = solve(&p);
    assert_eq!(sol.status, SolveStatus::Infeasible);
    assert!(sol.scalars.is_none());
}

#[test]
fn empty_problem_is_optimal_with_zero_objective() {
    let p = SdpProblem::new();
    let sol = solve(&p);
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert_eq!(sol.objective, Some(0.0));
}

#[test]
fn largest_shift_equals_min_eigenvalue() {
    // maximize t s.t. A - t I >= 0  =>  t = lambda_min(A)
    let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0]);
    let mut p = SdpProblem::new();
    let t = p.add_variable("t", 1, 1, false);
    let mut e = MatExpr::constant(a.clone());
    let shift = {
        let mut forms = vec![LinearForm::zero(); 9];
        for i in 0..3 {
            forms[i * 3 + i] = LinearForm::single(t.offset, -1.0);
        }
        MatExpr::from_parts(DMatrix::zeros(3, 3), forms)
    };
    e = e.add(&shift);
    p.add_psd("A - tI", e);
    p.set_objective(LinearForm::single(t.offset, 1.0), 0.0);
    let sol = solve(&p);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let expect = min_eigenvalue(&a);
    assert!((sol.objective.unwrap() - expect).abs() < 1e-6);
}

#[test]
fn lyapunov_feasibility_with_bounded_matrix() {
    // find P with 0 < P <= I and P - A P A' >= gamma I, maximize gamma
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.3, -0.1, 0.7]);
    let mut p = SdpProblem::new();
    let pv = p.add_variable("P", 2, 2, true);
    let g = p.add_variable("gamma", 1, 1, false);
    let pe = MatExpr::of_var(&pv);
    let mut gi_forms = vec![LinearForm::zero(); 4];
    gi_forms[0] = LinearForm::single(g.offset, 1.0);
    gi_forms[3] = LinearForm::single(g.offset, 1.0);
    let gi = MatExpr::from_parts(DMatrix::zeros(2, 2), gi_forms);
    let lyap = pe.sub(&pe.left_mul(&a).right_mul(&a.transpose())).sub(&gi);
    p.add_psd("lyap", lyap);
    p.add_psd("P <= I", MatExpr::identity(2).sub(&pe));
    p.add_psd("P >= 0", pe.clone());
    p.set_objective(LinearForm::single(g.offset, 1.0), 0.0);
    let sol = solve(&p);
    assert!(sol.status.has_values(), "{:?}", sol.stats);
    let y = sol.scalars.as_ref().unwrap();
    let report = ResidualReport::evaluate(&p, y);
    assert!(report.within(1e-7));
    assert!(sol.objective.unwrap() > 0.1);
}

#[test]
fn equality_constraints_are_respected() {
    // maximize x11 + x22 subject to X <= 2I, x12 = 0.5
    let mut p = SdpProblem::new();
    let x = p.add_variable("X", 2, 2, true);
    let xe = MatExpr::of_var(&x);
    p.add_psd("X <= 2I", MatExpr::constant(DMatrix::identity(2, 2) * 2.0).sub(&xe));
    let off = xe.view(1, 0, 1, 1).add_constant(&DMatrix::from_element(1, 1, -0.5));
    p.add_equality("x21", off);
    let mut obj = LinearForm::zero();
    obj.push(x.scalar_index(0, 0), 1.0);
    obj.push(x.scalar_index(1, 1), 1.0);
    p.set_objective(obj, 0.0);
    let sol = solve(&p);
    assert_eq!(sol.status, SolveStatus::Optimal);
    let xv = sol.value(&x).unwrap();
    assert!((xv[(1, 0)] - 0.5).abs() < 1e-7);
    // 2I - X >= 0 with x21 fixed: x11 = x22 = 1.5
    assert!((sol.objective.unwrap() - 3.0).abs() < 1e-5, "{:?}", sol.objective);
}

#[test]
fn unknown_backend_is_rejected() {
    assert!(Backend::from_name("mosek").is_err());
    assert_eq!(Backend::from_name("ipm").unwrap(), Backend::InteriorPoint);
}
