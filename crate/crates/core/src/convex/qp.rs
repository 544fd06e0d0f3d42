//! Goldfarb–Idnani dual active-set method for strictly convex QPs with a
//! diagonal Hessian.
//!
//! Minimizes `sum_j quad_j x_j^2 + cost'x + offset` over the same row and
//! column bounds as [`LpProblem`]. Every finite bound becomes one inequality
//! `n'x >= b`; rows with equal bounds become equalities and are added first.
//! The factors are kept as `J = L^-T Q` and the upper-triangular `R`, both
//! updated with Givens rotations as constraints enter and leave.

use super::lp::LpProblem;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QpProblem {
    /// Diagonal quadratic coefficients, all strictly positive.
    pub quad: Vec<f64>,
    /// Linear part, bounds and rows.
    pub lp: LpProblem,
}

impl QpProblem {
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.lp.objective(x) + self.quad.iter().zip(x).map(|(q, v)| q * v * v).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub max_primal_residual: f64,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpOptions {
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            max_iter: 0,
        }
    }
}

struct Constraint {
    normal: Vec<(usize, f64)>,
    b: f64,
    equality: bool,
}

fn constraints_of(p: &LpProblem) -> Vec<Constraint> {
    let mut out = Vec::new();
    let mut push = |normal: Vec<(usize, f64)>, lo: f64, hi: f64| {
        if lo == hi {
            out.push(Constraint { normal, b: lo, equality: true });
            return;
        }
        if lo.is_finite() {
            out.push(Constraint { normal: normal.clone(), b: lo, equality: false });
        }
        if hi.is_finite() {
            let neg = normal.iter().map(|&(j, a)| (j, -a)).collect();
            out.push(Constraint { normal: neg, b: -hi, equality: false });
        }
    };
    for j in 0..p.num_cols() {
        push(vec![(j, 1.0)], p.col_lo[j], p.col_hi[j]);
    }
    for (i, row) in p.rows.iter().enumerate() {
        push(row.clone(), p.row_lo[i], p.row_hi[i]);
    }
    // Equalities go first so they enter the active set before anything else.
    out.sort_by_key(|c| !c.equality);
    out
}

fn dot_sparse(normal: &[(usize, f64)], x: &[f64]) -> f64 {
    normal.iter().map(|&(j, a)| a * x[j]).sum()
}

/// Givens rotation zeroing `b` against `a`; returns `(c, s, r)`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / r, b / r, r)
    }
}

struct Factors {
    n: usize,
    /// Column-major `n x n`.
    j: Vec<f64>,
    /// Column-major upper triangle, `n x n`.
    r: Vec<f64>,
    q: usize,
}

impl Factors {
    fn jcol(&self, c: usize) -> &[f64] {
        &self.j[c * self.n..(c + 1) * self.n]
    }

    fn rotate_j(&mut self, c1: usize, c2: usize, c: f64, s: f64) {
        let n = self.n;
        for i in 0..n {
            let a = self.j[c1 * n + i];
            let b = self.j[c2 * n + i];
            self.j[c1 * n + i] = c * a + s * b;
            self.j[c2 * n + i] = -s * a + c * b;
        }
    }

    /// d = J' n_p
    fn project(&self, normal: &[(usize, f64)]) -> Vec<f64> {
        (0..self.n).map(|c| dot_sparse(normal, self.jcol(c))).collect()
    }

    /// Primal step z = J2 d2 and dual step r = R^-1 d1.
    fn steps(&self, d: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut z = vec![0.0; n];
        for c in self.q..n {
            let dc = d[c];
            if dc != 0.0 {
                for (zi, ji) in z.iter_mut().zip(self.jcol(c)) {
                    *zi += dc * ji;
                }
            }
        }
        let q = self.q;
        let mut r = vec![0.0; q];
        for i in (0..q).rev() {
            let mut s = d[i];
            for k in i + 1..q {
                s -= self.r[k * n + i] * r[k];
            }
            r[i] = s / self.r[i * n + i];
        }
        (z, r)
    }

    /// Appends a constraint whose projection is `d`. Returns false when the
    /// normal is dependent on the active set.
    fn add(&mut self, mut d: Vec<f64>) -> bool {
        let n = self.n;
        let q = self.q;
        for k in (q + 1..n).rev() {
            if d[k] == 0.0 {
                continue;
            }
            let (c, s, h) = givens(d[k - 1], d[k]);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        if d[q].abs() <= 1e-14 {
            return false;
        }
        for i in 0..=q {
            self.r[q * n + i] = d[i];
        }
        self.q += 1;
        true
    }

    /// Removes active position `k`, restoring the triangular shape of R.
    fn drop(&mut self, k: usize) {
        let n = self.n;
        let q = self.q;
        for c in k..q - 1 {
            for i in 0..n {
                self.r[c * n + i] = self.r[(c + 1) * n + i];
            }
        }
        for i in 0..n {
            self.r[(q - 1) * n + i] = 0.0;
        }
        for i in k..q - 1 {
            let a = self.r[i * n + i];
            let b = self.r[i * n + i + 1];
            let (c, s, h) = givens(a, b);
            self.r[i * n + i] = h;
            self.r[i * n + i + 1] = 0.0;
            for col in i + 1..q - 1 {
                let x = self.r[col * n + i];
                let y = self.r[col * n + i + 1];
                self.r[col * n + i] = c * x + s * y;
                self.r[col * n + i + 1] = -s * x + c * y;
            }
            self.rotate_j(i, i + 1, c, s);
        }
        self.q -= 1;
    }
}

pub fn solve_qp(p: &QpProblem, opts: &QpOptions) -> QpSolution {
    let n = p.lp.num_cols();
    let fail = |status: QpStatus, iterations: usize, detail: String| QpSolution {
        status,
        x: vec![0.0; n],
        objective: f64::NAN,
        iterations,
        max_primal_residual: f64::NAN,
        detail,
    };
    if p.quad.len() != n || p.quad.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return fail(QpStatus::NumericalFailure, 0, "Hessian diagonal must be positive".into());
    }
    for j in 0..n {
        if p.lp.col_lo[j] > p.lp.col_hi[j] {
            return fail(QpStatus::Infeasible, 0, format!("column {j} has empty bounds"));
        }
    }
    for i in 0..p.lp.num_rows() {
        if p.lp.row_lo[i] > p.lp.row_hi[i] {
            return fail(QpStatus::Infeasible, 0, format!("row {i} has empty bounds"));
        }
    }
    let cons = constraints_of(&p.lp);
    let g: Vec<f64> = p.quad.iter().map(|h| 2.0 * h).collect();
    let mut x: Vec<f64> = (0..n).map(|j| -p.lp.cost[j] / g[j]).collect();
    let mut f = Factors {
        n,
        j: vec![0.0; n * n],
        r: vec![0.0; n * n],
        q: 0,
    };
    for c in 0..n {
        f.j[c * n + c] = 1.0 / g[c].sqrt();
    }
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut is_active = vec![false; cons.len()];
    // Sign applied to each equality normal so that its violation reads as a
    // shortfall.
    let mut eq_sign = vec![1.0; cons.len()];
    // Satisfied equalities that depend on the active set.
    let mut redundant = vec![false; cons.len()];
    let max_iter = if opts.max_iter == 0 { 20 * (n + cons.len()) + 100 } else { opts.max_iter };
    let mut iter = 0usize;

    let slack = |c: &Constraint, sign: f64, x: &[f64]| sign * (dot_sparse(&c.normal, x) - c.b);

    loop {
        // Next constraint: first inactive equality, else most violated
        // inequality.
        let mut pick: Option<(usize, f64)> = None;
        for (i, c) in cons.iter().enumerate() {
            if is_active[i] || redundant[i] {
                continue;
            }
            if c.equality {
                let s = dot_sparse(&c.normal, &x) - c.b;
                eq_sign[i] = if s > 0.0 { -1.0 } else { 1.0 };
                pick = Some((i, -s.abs()));
                break;
            }
            let s = slack(c, 1.0, &x);
            if s < -opts.feas_tol && pick.map_or(true, |(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((pi, _)) = pick else { break };
        let pc = &cons[pi];
        let sign = if pc.equality { eq_sign[pi] } else { 1.0 };
        let normal: Vec<(usize, f64)> = pc.normal.iter().map(|&(j, a)| (j, sign * a)).collect();
        let mut up = 0.0;
        loop {
            iter += 1;
            if iter > max_iter {
                return fail(QpStatus::NumericalFailure, iter, "iteration cap reached".into());
            }
            let d = f.project(&normal);
            let (z, r) = f.steps(&d);
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 && !cons[active[k]].equality {
                    let t = mult[k] / rk;
                    if t < t1 || (t == t1 && drop_k.map_or(false, |dk| active[k] < active[dk])) {
                        t1 = t;
                        drop_k = Some(k);
                    }
                }
            }
            let zn = dot_sparse(&normal, &z);
            let s = sign * (dot_sparse(&pc.normal, &x) - pc.b);
            let zz: f64 = z.iter().map(|v| v * v).sum();
            let t2 = if zz > 1e-24 && zn > 0.0 { -s / zn } else { f64::INFINITY };
            if t1.is_infinite() && t2.is_infinite() {
                if pc.equality && zz <= 1e-24 && s.abs() <= opts.feas_tol {
                    redundant[pi] = true;
                    break;
                }
                return fail(QpStatus::Infeasible, iter, format!("constraint {pi} cannot be satisfied"));
            }
            if t2.is_infinite() {
                for (m, rk) in mult.iter_mut().zip(&r) {
                    *m -= t1 * rk;
                }
                up += t1;
                let k = drop_k.unwrap();
                is_active[active[k]] = false;
                active.remove(k);
                mult.remove(k);
                f.drop(k);
                continue;
            }
            let t = t1.min(t2);
            for (xi, zi) in x.iter_mut().zip(&z) {
                *xi += t * zi;
            }
            for (m, rk) in mult.iter_mut().zip(&r) {
                *m -= t * rk;
            }
            up += t;
            if t2 <= t1 {
                if !f.add(d) {
                    return fail(QpStatus::NumericalFailure, iter, "dependent constraint".into());
                }
                active.push(pi);
                mult.push(up);
                is_active[pi] = true;
                break;
            }
            let k = drop_k.unwrap();
            is_active[active[k]] = false;
            active.remove(k);
            mult.remove(k);
            f.drop(k);
        }
    }

    // Snap onto active bounds that are single-variable so the result sits
    // exactly on them.
    for &ci in &active {
        let c = &cons[ci];
        if c.normal.len() == 1 {
            let (j, a) = c.normal[0];
            x[j] = c.b / a;
        }
    }
    let max_primal_residual = p.lp.max_violation(&x).max(0.0);
    QpSolution {
        status: QpStatus::Optimal,
        objective: p.objective(&x),
        x,
        iterations: iter,
        max_primal_residual,
        detail: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn unconstrained_minimum() {
        let mut p = QpProblem::default();
        p.lp.add_col(-4.0, -INF, INF);
        p.quad.push(2.0);
        let s = solve_qp(&p, &QpOptions::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.objective + 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_onto_box_and_row() {
        // min (x-3)^2 + (y-3)^2, x + y <= 2, 0 <= x <= 0.5
        let mut p = QpProblem::default();
        p.lp.add_col(-6.0, 0.0, 0.5);
        p.lp.add_col(-6.0, -INF, INF);
        p.lp.offset = 18.0;
        p.quad = vec![1.0, 1.0];
        p.lp.add_row(vec![(0, 1.0), (1, 1.0)], -INF, 2.0);
        let s = solve_qp(&p, &QpOptions::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-12);
        assert!((s.x[1] - 1.5).abs() < 1e-12);
        assert!((s.objective - (6.25 + 2.25)).abs() < 1e-12);
    }

    #[test]
    fn equality_and_infeasible() {
        let mut p = QpProblem::default();
        p.lp.add_col(0.0, -INF, INF);
        p.lp.add_col(0.0, -INF, INF);
        p.quad = vec![1.0, 1.0];
        p.lp.add_row(vec![(0, 1.0), (1, 1.0)], 2.0, 2.0);
        let s = solve_qp(&p, &QpOptions::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);

        p.lp.add_row(vec![(0, 1.0)], 5.0, INF);
        p.lp.add_row(vec![(1, 1.0)], 5.0, INF);
        assert_eq!(solve_qp(&p, &QpOptions::default()).status, QpStatus::Infeasible);
    }

    #[test]
    fn satisfied_dependent_equality_is_skipped() {
        // both columns fixed at zero, then a row fixing their sum to zero
        let mut p = QpProblem::default();
        p.lp.add_col(-2.0, 0.0, 0.0);
        p.lp.add_col(4.0, 0.0, 0.0);
        p.quad = vec![1.0, 1.0];
        p.lp.add_row(vec![(0, 1.0), (1, 1.0)], 0.0, 0.0);
        let s = solve_qp(&p, &QpOptions::default());
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.x, vec![0.0, 0.0]);

        // the same row asking for a different sum cannot hold
        p.lp.row_lo[0] = 1.0;
        p.lp.row_hi[0] = 1.0;
        assert_eq!(solve_qp(&p, &QpOptions::default()).status, QpStatus::Infeasible);
    }

    /// Checks the KKT conditions with a non-negative least-squares fit of the
    /// multipliers over the active constraints.
    fn kkt_gap(p: &QpProblem, x: &[f64]) -> f64 {
        let n = x.len();
        let grad: Vec<f64> = (0..n).map(|j| 2.0 * p.quad[j] * x[j] + p.lp.cost[j]).collect();
        let cons = constraints_of(&p.lp);
        let act: Vec<&Constraint> = cons
            .iter()
            .filter(|c| (dot_sparse(&c.normal, x) - c.b).abs() < 1e-7)
            .collect();
        // projected gradient descent on the multipliers
        let mut lam = vec![0.0; act.len()];
        for _ in 0..20000 {
            let mut res = grad.clone();
            for (l, c) in lam.iter().zip(&act) {
                for &(j, a) in &c.normal {
                    res[j] -= l * a;
                }
            }
            for (k, c) in act.iter().enumerate() {
                let g: f64 = c.normal.iter().map(|&(j, a)| -a * res[j]).sum();
                lam[k] -= 0.05 * g;
                if !c.equality {
                    lam[k] = lam[k].max(0.0);
                }
            }
        }
        let mut res = grad;
        for (l, c) in lam.iter().zip(&act) {
            for &(j, a) in &c.normal {
                res[j] -= l * a;
            }
        }
        res.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..6);
            let mut p = QpProblem::default();
            for _ in 0..n {
                let lo = rng.gen_range(-3.0..0.0);
                p.lp.add_col(rng.gen_range(-4.0..4.0), lo, lo + rng.gen_range(0.5..5.0));
                p.quad.push(rng.gen_range(0.2..3.0));
            }
            for _ in 0..rng.gen_range(0..4) {
                let row: Vec<(usize, f64)> = (0..n).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
                // keep the origin-ish box center feasible
                p.lp.add_row(row, -1.0, 1.0);
            }
            let s = solve_qp(&p, &QpOptions::default());
            if s.status == QpStatus::Infeasible {
                continue;
            }
            assert_eq!(s.status, QpStatus::Optimal);
            assert!(s.max_primal_residual < 1e-9);
            assert!(kkt_gap(&p, &s.x) < 1e-6, "kkt gap {}", kkt_gap(&p, &s.x));
        }
    }
}
