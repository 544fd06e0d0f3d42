//! Interior-point route through Clarabel. Used as an independent check on
//! the simplex and active-set solvers and for the full-window oracle, where
//! the programs are too large for dense tableaus.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::lp::LpProblem;
use super::SolveStatus;

#[derive(Clone, Debug, PartialEq)]
pub struct InteriorSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Includes the problem offset.
    pub objective: f64,
    pub iterations: u32,
    pub detail: String,
}

/// Minimizes `sum quad_j x_j^2 + cost'x + offset` (or the LP when `quad` is
/// `None`) subject to the bounds and rows of `p`.
pub fn solve_interior(p: &LpProblem, quad: Option<&[f64]>) -> InteriorSolution {
    let n = p.num_cols();
    // Constraint rows in the form a'x + s = b, equalities first.
    let mut eq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut ineq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut push = |coefs: &[(usize, f64)], lo: f64, hi: f64| {
        if lo == hi {
            eq.push((coefs.to_vec(), hi));
            return;
        }
        if hi.is_finite() {
            ineq.push((coefs.to_vec(), hi));
        }
        if lo.is_finite() {
            ineq.push((coefs.iter().map(|&(j, a)| (j, -a)).collect(), -lo));
        }
    };
    for j in 0..n {
        push(&[(j, 1.0)], p.col_lo[j], p.col_hi[j]);
    }
    for (i, row) in p.rows.iter().enumerate() {
        push(row, p.row_lo[i], p.row_hi[i]);
    }
    let (n_eq, n_ineq) = (eq.len(), ineq.len());
    let (mut ri, mut ci, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (r, (coefs, rhs)) in eq.into_iter().chain(ineq).enumerate() {
        for (j, a) in coefs {
            if a != 0.0 {
                ri.push(r);
                ci.push(j);
                vals.push(a);
            }
        }
        b.push(rhs);
    }
    let a = CscMatrix::new_from_triplets(b.len(), n, ri, ci, vals);
    let pmat = match quad {
        Some(q) => {
            let idx: Vec<usize> = (0..n).collect();
            CscMatrix::new_from_triplets(n, n, idx.clone(), idx, q.iter().map(|v| 2.0 * v).collect())
        }
        None => CscMatrix::zeros((n, n)),
    };
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if n_ineq > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_ineq));
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .max_iter(400)
        .build()
        .expect("static settings are valid");
    let mut solver = match DefaultSolver::new(&pmat, &p.cost, &a, &b, &cones, settings) {
        Ok(s) => s,
        Err(e) => {
            return InteriorSolution {
                status: SolveStatus::NumericalFailure,
                x: vec![0.0; n],
                objective: f64::NAN,
                iterations: 0,
                detail: format!("{e:?}"),
            }
        }
    };
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    let x = sol.x.clone();
    let objective = match quad {
        Some(q) => p.objective(&x) + q.iter().zip(&x).map(|(h, v)| h * v * v).sum::<f64>(),
        None => p.objective(&x),
    };
    InteriorSolution {
        status,
        x,
        objective,
        iterations: sol.iterations,
        detail: format!("{:?}", sol.status),
    }
}
