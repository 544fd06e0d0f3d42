//! Bounded dual simplex on a dense tableau.
//!
//! Solves `min c'x + offset` subject to `row_lo <= A x <= row_hi` and
//! `col_lo <= x <= col_hi`. Every row gets a logical variable `s = A x`
//! carrying the row bounds, so the initial basis is all logicals and the
//! tableau starts as `[-A | I]`. Nonbasic structurals start at the bound that
//! makes their cost dual feasible; a missing bound on that side is replaced by
//! a large artificial one, and finishing at an artificial bound means the LP is
//! unbounded.
//!
//! Leaving rows are picked by exact dual steepest edge (the logical block of
//! the tableau is `-B^-1`, so the weights come for free). The ratio test flips
//! boxed variables past their breakpoints while the primal infeasibility
//! still decreases. Everything is deterministic: ties go to the larger pivot
//! magnitude, then the lower index.

use super::lu::Lu;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpProblem {
    pub cost: Vec<f64>,
    pub col_lo: Vec<f64>,
    pub col_hi: Vec<f64>,
    /// Sparse rows as `(column, coefficient)` pairs.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub row_lo: Vec<f64>,
    pub row_hi: Vec<f64>,
    pub offset: f64,
}

impl LpProblem {
    pub fn num_cols(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_col(&mut self, cost: f64, lo: f64, hi: f64) -> usize {
        self.cost.push(cost);
        self.col_lo.push(lo);
        self.col_hi.push(hi);
        self.cost.len() - 1
    }

    pub fn add_row(&mut self, coefs: Vec<(usize, f64)>, lo: f64, hi: f64) -> usize {
        self.rows.push(coefs);
        self.row_lo.push(lo);
        self.row_hi.push(hi);
        self.rows.len() - 1
    }

    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, a)| a * x[j]).sum())
            .collect()
    }

    /// Largest bound violation of `x` over rows and columns.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            v = v.max(self.col_lo[j] - xj).max(xj - self.col_hi[j]);
        }
        for (i, a) in self.row_activity(x).into_iter().enumerate() {
            v = v.max(self.row_lo[i] - a).max(a - self.row_hi[i]);
        }
        v
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.offset + self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub max_primal_residual: f64,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpOptions {
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub pivot_tol: f64,
    pub refactor_every: usize,
    pub artificial_bound: f64,
    /// Iteration cap; 0 picks a size-based default.
    pub max_iter: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            primal_tol: 1e-9,
            dual_tol: 1e-10,
            pivot_tol: 1e-9,
            refactor_every: 100,
            artificial_bound: 1e7,
            max_iter: 0,
        }
    }
}

/// Tableau error above which a refresh falls back to a full refactorization.
const DRIFT_TOL: f64 = 1e-11;

struct Tableau {
    m: usize,
    n: usize,
    nt: usize,
    /// Row-major `m x nt`, equal to `B^-1 [A | -I]`.
    t: Vec<f64>,
    a_dense: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    artificial_lo: Vec<bool>,
    artificial_hi: Vec<bool>,
    cost: Vec<f64>,
    d: Vec<f64>,
    value: Vec<f64>,
    head: Vec<usize>,
    row_of: Vec<Option<usize>>,
}

impl Tableau {
    fn new(p: &LpProblem, opts: &LpOptions) -> Self {
        let m = p.num_rows();
        let n = p.num_cols();
        let nt = n + m;
        let mut a_dense = vec![0.0; m * n];
        for (i, row) in p.rows.iter().enumerate() {
            for &(j, a) in row {
                a_dense[i * n + j] += a;
            }
        }
        let mut cols = vec![Vec::new(); n];
        for (i, row) in p.rows.iter().enumerate() {
            for &(j, a) in row {
                cols[j].push((i, a));
            }
        }
        let mut t = vec![0.0; m * nt];
        for i in 0..m {
            for j in 0..n {
                t[i * nt + j] = -a_dense[i * n + j];
            }
            t[i * nt + n + i] = 1.0;
        }
        let mut lo: Vec<f64> = p.col_lo.iter().chain(&p.row_lo).copied().collect();
        let mut hi: Vec<f64> = p.col_hi.iter().chain(&p.row_hi).copied().collect();
        let mut artificial_lo = vec![false; nt];
        let mut artificial_hi = vec![false; nt];
        let mut cost = p.cost.clone();
        cost.resize(nt, 0.0);
        let mut value = vec![0.0; nt];
        for j in 0..n {
            let c = cost[j];
            let use_hi = c < 0.0 || (c == 0.0 && lo[j] == f64::NEG_INFINITY);
            if use_hi {
                if hi[j] == f64::INFINITY {
                    hi[j] = lo[j].max(0.0) + opts.artificial_bound;
                    artificial_hi[j] = true;
                }
                value[j] = hi[j];
            } else {
                if lo[j] == f64::NEG_INFINITY {
                    lo[j] = hi[j].min(0.0) - opts.artificial_bound;
                    artificial_lo[j] = true;
                }
                value[j] = lo[j];
            }
        }
        for i in 0..m {
            value[n + i] = p.rows[i].iter().map(|&(j, a)| a * value[j]).sum();
        }
        let d = cost.clone();
        let head: Vec<usize> = (n..nt).collect();
        let mut row_of = vec![None; nt];
        for (i, &h) in head.iter().enumerate() {
            row_of[h] = Some(i);
        }
        Self {
            m,
            n,
            nt,
            t,
            a_dense,
            rows: p.rows.clone(),
            cols,
            lo,
            hi,
            artificial_lo,
            artificial_hi,
            cost,
            d,
            value,
            head,
            row_of,
        }
    }

    fn refresh(&mut self, pivot_tol: f64) -> bool {
        if self.drift() <= DRIFT_TOL {
            self.recompute_values();
            self.recompute_duals();
            return true;
        }
        self.refactor(pivot_tol)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.t[i * self.nt..(i + 1) * self.nt]
    }

    /// Rebuilds the tableau, basic values and reduced costs from the basis.
    fn refactor(&mut self, pivot_tol: f64) -> bool {
        let (m, n, nt) = (self.m, self.n, self.nt);
        let mut b = vec![0.0; m * m];
        for (k, &h) in self.head.iter().enumerate() {
            if h < n {
                for i in 0..m {
                    b[i * m + k] = self.a_dense[i * n + h];
                }
            } else {
                b[(h - n) * m + k] = -1.0;
            }
        }
        let Some(lu) = Lu::factor(m, b, pivot_tol * 1e-3) else {
            return false;
        };
        let binv = lu.inverse();
        for i in 0..m {
            let bi = &binv[i * m..(i + 1) * m];
            let ti = &mut self.t[i * nt..(i + 1) * nt];
            ti[..n].iter_mut().for_each(|v| *v = 0.0);
            for (k, &bik) in bi.iter().enumerate() {
                if bik == 0.0 {
                    continue;
                }
                for &(j, a) in &self.rows[k] {
                    ti[j] += bik * a;
                }
            }
            for k in 0..m {
                ti[n + k] = -bi[k];
            }
        }
        for (i, &h) in self.head.iter().enumerate() {
            // Basic columns are exact unit vectors by construction.
            for k in 0..m {
                self.t[k * nt + h] = if k == i { 1.0 } else { 0.0 };
            }
        }
        self.recompute_values();
        self.recompute_duals();
        true
    }

    /// Relative error of the tableau against `B^-1 [A | -I]`, measured on two
    /// fixed probe vectors. Much cheaper than a refactorization.
    fn drift(&self) -> f64 {
        let (m, n, nt) = (self.m, self.n, self.nt);
        let mut worst: f64 = 0.0;
        for seed in [1usize, 2] {
            let v: Vec<f64> = (0..nt).map(|j| ((j * 7919 + seed * 104729) % 17) as f64 / 8.0 - 1.0).collect();
            // w = [A | -I] v
            let w: Vec<f64> = (0..m)
                .map(|i| self.rows[i].iter().map(|&(j, a)| a * v[j]).sum::<f64>() - v[n + i])
                .collect();
            let mut scale: f64 = 1.0;
            let mut err: f64 = 0.0;
            for i in 0..m {
                let ti = &self.t[i * nt..(i + 1) * nt];
                let tv: f64 = ti.iter().zip(&v).map(|(a, b)| a * b).sum();
                // T = -L [A | -I] with L the logical block
                let lw: f64 = ti[n..].iter().zip(&w).map(|(a, b)| a * b).sum();
                scale = scale.max(tv.abs());
                err = err.max((tv + lw).abs());
            }
            worst = worst.max(err / scale);
            // B (-L z) = z
            let z = &v[n..];
            let u: Vec<f64> = (0..m)
                .map(|i| -self.t[i * nt + n..(i + 1) * nt].iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            let mut bu = vec![0.0; m];
            for (k, &h) in self.head.iter().enumerate() {
                if h < n {
                    for &(i, a) in &self.cols[h] {
                        bu[i] += a * u[k];
                    }
                } else {
                    bu[h - n] -= u[k];
                }
            }
            let bscale = u.iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
            for i in 0..m {
                worst = worst.max((bu[i] - z[i]).abs() / bscale);
            }
        }
        worst
    }

    fn recompute_values(&mut self) {
        let nt = self.nt;
        for i in 0..self.m {
            let row = &self.t[i * nt..(i + 1) * nt];
            let mut s = 0.0;
            for j in 0..nt {
                if self.row_of[j].is_none() && row[j] != 0.0 {
                    s -= row[j] * self.value[j];
                }
            }
            self.value[self.head[i]] = s;
        }
    }

    fn recompute_duals(&mut self) {
        let nt = self.nt;
        for j in 0..nt {
            self.d[j] = self.cost[j];
        }
        for i in 0..self.m {
            let cb = self.cost[self.head[i]];
            if cb == 0.0 {
                continue;
            }
            let row = &self.t[i * nt..(i + 1) * nt];
            for j in 0..nt {
                self.d[j] -= cb * row[j];
            }
        }
        for &h in &self.head {
            self.d[h] = 0.0;
        }
    }

    fn infeasibility(&self, i: usize) -> f64 {
        let h = self.head[i];
        let v = self.value[h];
        (self.lo[h] - v).max(v - self.hi[h]).max(0.0)
    }

    /// Dual steepest-edge pricing over the infeasible rows.
    fn choose_leaving(&self, tol: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.m {
            let inf = self.infeasibility(i);
            if inf <= tol {
                continue;
            }
            let row = self.row(i);
            let w: f64 = row[self.n..].iter().map(|v| v * v).sum::<f64>().max(1e-12);
            let score = inf * inf / w;
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((i, score));
            }
        }
        best.map(|(i, _)| i)
    }

    fn at_lower(&self, j: usize) -> bool {
        self.value[j] == self.lo[j]
    }

    /// Shifts nonbasic `j` by `delta` and updates the basic values.
    fn shift_nonbasic(&mut self, j: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        self.value[j] += delta;
        let nt = self.nt;
        for i in 0..self.m {
            let a = self.t[i * nt + j];
            if a != 0.0 {
                self.value[self.head[i]] -= a * delta;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nt = self.nt;
        let piv = self.t[r * nt + q];
        let inv = 1.0 / piv;
        let mut nz: Vec<usize> = Vec::with_capacity(nt);
        for j in 0..nt {
            let v = self.t[r * nt + j];
            if v != 0.0 {
                self.t[r * nt + j] = v * inv;
                nz.push(j);
            }
        }
        self.t[r * nt + q] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * nt);
        let (prow, after) = rest.split_at_mut(nt);
        let update = |row: &mut [f64]| {
            let f = row[q];
            if f != 0.0 {
                for &j in &nz {
                    row[j] -= f * prow[j];
                }
                row[q] = 0.0;
            }
        };
        for row in before.chunks_exact_mut(nt) {
            update(row);
        }
        for row in after.chunks_exact_mut(nt) {
            update(row);
        }
        let leaving = self.head[r];
        self.row_of[leaving] = None;
        self.row_of[q] = Some(r);
        self.head[r] = q;
    }
}

struct Candidate {
    j: usize,
    ratio: f64,
    alpha: f64,
}

pub fn solve_lp(p: &LpProblem, opts: &LpOptions) -> LpSolution {
    let n = p.num_cols();
    let m = p.num_rows();
    let fail = |status: LpStatus, iterations: usize, detail: String| LpSolution {
        status,
        x: vec![0.0; n],
        objective: f64::NAN,
        iterations,
        max_primal_residual: f64::NAN,
        detail,
    };
    for j in 0..n {
        if p.col_lo[j] > p.col_hi[j] {
            return fail(LpStatus::Infeasible, 0, format!("column {j} has empty bounds"));
        }
    }
    for i in 0..m {
        if p.row_lo[i] > p.row_hi[i] {
            return fail(LpStatus::Infeasible, 0, format!("row {i} has empty bounds"));
        }
    }
    let mut tab = Tableau::new(p, opts);
    let max_iter = if opts.max_iter == 0 { 50 * (m + n) + 1000 } else { opts.max_iter };
    let mut iter = 0usize;
    let mut since_refactor = 0usize;
    let mut cleanup_rounds = 0usize;
    loop {
        if iter >= max_iter {
            return fail(LpStatus::NumericalFailure, iter, "iteration cap reached".into());
        }
        if since_refactor >= opts.refactor_every {
            if !tab.refresh(opts.pivot_tol) {
                return fail(LpStatus::NumericalFailure, iter, "singular basis".into());
            }
            since_refactor = 0;
        }
        let Some(r) = tab.choose_leaving(opts.primal_tol) else {
            // Candidate optimum: refresh values and duals, refactoring only if
            // the tableau has drifted, and re-check.
            if since_refactor > 0 && !tab.refresh(opts.pivot_tol) {
                return fail(LpStatus::NumericalFailure, iter, "singular basis".into());
            }
            since_refactor = 0;
            if tab.choose_leaving(opts.primal_tol).is_some() {
                continue;
            }
            let mut flipped = false;
            let mut worst_dual: f64 = 0.0;
            for j in 0..tab.nt {
                if tab.row_of[j].is_some() || tab.lo[j] == tab.hi[j] {
                    continue;
                }
                let wrong = if tab.at_lower(j) { -tab.d[j] } else { tab.d[j] };
                if wrong > opts.dual_tol {
                    let boxed = tab.lo[j].is_finite() && tab.hi[j].is_finite();
                    if boxed && !(tab.artificial_lo[j] || tab.artificial_hi[j]) {
                        let target = if tab.at_lower(j) { tab.hi[j] } else { tab.lo[j] };
                        let delta = target - tab.value[j];
                        tab.shift_nonbasic(j, delta);
                        tab.value[j] = target;
                        flipped = true;
                    } else {
                        worst_dual = worst_dual.max(wrong);
                    }
                }
            }
            if flipped {
                cleanup_rounds += 1;
                if cleanup_rounds > 20 {
                    return fail(LpStatus::NumericalFailure, iter, "dual cleanup did not settle".into());
                }
                continue;
            }
            if worst_dual > 1e-7 {
                return fail(
                    LpStatus::NumericalFailure,
                    iter,
                    format!("dual infeasibility {worst_dual:e} on an unbounded column"),
                );
            }
            break;
        };
        iter += 1;
        since_refactor += 1;

        let h = tab.head[r];
        let v = tab.value[h];
        let (sigma, target, mut slope) = if v < tab.lo[h] {
            (1.0, tab.lo[h], tab.lo[h] - v)
        } else {
            (-1.0, tab.hi[h], v - tab.hi[h])
        };

        let mut cands: Vec<Candidate> = Vec::new();
        {
            let row = tab.row(r);
            for (j, &alpha) in row.iter().enumerate() {
                if alpha.abs() <= opts.pivot_tol || tab.row_of[j].is_some() || tab.lo[j] == tab.hi[j] {
                    continue;
                }
                let eligible = if tab.at_lower(j) { sigma * alpha < 0.0 } else { sigma * alpha > 0.0 };
                if eligible {
                    cands.push(Candidate {
                        j,
                        ratio: tab.d[j].abs() / alpha.abs(),
                        alpha,
                    });
                }
            }
        }
        if cands.is_empty() {
            return fail(LpStatus::Infeasible, iter, format!("row {r} cannot be made feasible"));
        }
        cands.sort_by(|a, b| {
            a.ratio
                .partial_cmp(&b.ratio)
                .unwrap()
                .then(b.alpha.abs().partial_cmp(&a.alpha.abs()).unwrap())
                .then(a.j.cmp(&b.j))
        });

        // Bound-flipping pass.
        let mut stop = None;
        for (k, c) in cands.iter().enumerate() {
            let width = tab.hi[c.j] - tab.lo[c.j];
            let after = slope - c.alpha.abs() * width;
            if width.is_finite() && after > opts.primal_tol {
                slope = after;
            } else {
                stop = Some(k);
                break;
            }
        }
        let Some(k) = stop else {
            return fail(LpStatus::Infeasible, iter, format!("row {r} cannot be made feasible"));
        };
        // Among ties at the stopping breakpoint prefer the largest pivot.
        let ratio_k = cands[k].ratio;
        let mut q_idx = k;
        for (kk, c) in cands.iter().enumerate().skip(k + 1) {
            if c.ratio > ratio_k + 1e-12 {
                break;
            }
            if c.alpha.abs() > cands[q_idx].alpha.abs() {
                q_idx = kk;
            }
        }
        let q = cands[q_idx].j;
        let alpha_q = cands[q_idx].alpha;

        for c in &cands[..k] {
            let j = c.j;
            let target_j = if tab.at_lower(j) { tab.hi[j] } else { tab.lo[j] };
            let delta = target_j - tab.value[j];
            tab.shift_nonbasic(j, delta);
            tab.value[j] = target_j;
        }

        let theta = tab.d[q] / alpha_q;
        let xr = tab.value[h];
        let dq = (xr - target) / alpha_q;
        tab.shift_nonbasic(q, dq);
        tab.value[h] = target;

        {
            let nt = tab.nt;
            let row = &tab.t[r * nt..(r + 1) * nt];
            for j in 0..nt {
                let a = row[j];
                if a != 0.0 {
                    tab.d[j] -= theta * a;
                }
            }
        }
        tab.d[q] = 0.0;
        tab.pivot(r, q);
    }

    let x: Vec<f64> = tab.value[..n].to_vec();
    for j in 0..n {
        let at_art = (tab.artificial_hi[j] && x[j] >= tab.hi[j] - 1e-6 * opts.artificial_bound)
            || (tab.artificial_lo[j] && x[j] <= tab.lo[j] + 1e-6 * opts.artificial_bound);
        if at_art {
            return LpSolution {
                status: LpStatus::Unbounded,
                x,
                objective: f64::NEG_INFINITY,
                iterations: iter,
                max_primal_residual: f64::NAN,
                detail: format!("column {j} reached its artificial bound"),
            };
        }
    }
    let max_primal_residual = p.max_violation(&x).max(0.0);
    LpSolution {
        status: LpStatus::Optimal,
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
    fn epigraph_floor() {
        // min m s.t. m >= x, m >= 3, 0 <= x <= 10
        let mut p = LpProblem::default();
        let x = p.add_col(0.0, 0.0, 10.0);
        let m = p.add_col(1.0, 3.0, INF);
        p.add_row(vec![(m, 1.0), (x, -1.0)], 0.0, INF);
        let s = solve_lp(&p, &LpOptions::default());
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn abs_split() {
        // min (p + n) + (p - n), p - n in [-2, 2]
        let mut lp = LpProblem::default();
        let p = lp.add_col(2.0, 0.0, INF);
        let n = lp.add_col(0.0, 0.0, INF);
        lp.add_row(vec![(p, 1.0), (n, -1.0)], -2.0, 2.0);
        let s = solve_lp(&lp, &LpOptions::default());
        assert_eq!(s.status, LpStatus::Optimal);
        assert!(s.objective.abs() < 1e-12);
        assert_eq!(s.x[p], 0.0);
    }

    #[test]
    fn empty_feasible_set() {
        let mut p = LpProblem::default();
        let x = p.add_col(1.0, 0.0, 1.0);
        let y = p.add_col(1.0, 0.0, 1.0);
        p.add_row(vec![(x, 1.0), (y, 1.0)], 3.0, INF);
        assert_eq!(solve_lp(&p, &LpOptions::default()).status, LpStatus::Infeasible);

        let mut p = LpProblem::default();
        let x = p.add_col(1.0, 0.0, INF);
        p.add_row(vec![(x, 1.0)], 1.0, 2.0);
        p.add_row(vec![(x, 1.0)], 3.0, 4.0);
        assert_eq!(solve_lp(&p, &LpOptions::default()).status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut p = LpProblem::default();
        let x = p.add_col(-1.0, 0.0, INF);
        let y = p.add_col(0.0, 0.0, 1.0);
        p.add_row(vec![(x, 1.0), (y, -1.0)], 0.0, INF);
        assert_eq!(solve_lp(&p, &LpOptions::default()).status, LpStatus::Unbounded);
    }

    #[test]
    fn classic_two_variable() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
        let mut p = LpProblem::default();
        let x = p.add_col(-3.0, 0.0, INF);
        let y = p.add_col(-5.0, 0.0, INF);
        p.add_row(vec![(x, 1.0)], -INF, 4.0);
        p.add_row(vec![(y, 2.0)], -INF, 12.0);
        p.add_row(vec![(x, 3.0), (y, 2.0)], -INF, 18.0);
        let s = solve_lp(&p, &LpOptions::default());
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((s.x[x] - 2.0).abs() < 1e-9 && (s.x[y] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equality_rows() {
        // min x + 2y s.t. x + y = 1, x - y = 0.5
        let mut p = LpProblem::default();
        let x = p.add_col(1.0, -INF, INF);
        let y = p.add_col(2.0, -INF, INF);
        p.add_row(vec![(x, 1.0), (y, 1.0)], 1.0, 1.0);
        p.add_row(vec![(x, 1.0), (y, -1.0)], 0.5, 0.5);
        let s = solve_lp(&p, &LpOptions::default());
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[x] - 0.75).abs() < 1e-9);
        assert!((s.x[y] - 0.25).abs() < 1e-9);
    }

    /// Brute-force vertex enumeration over 2-variable LPs.
    fn brute_force_2d(p: &LpProblem) -> Option<f64> {
        let mut lines: Vec<([f64; 2], f64)> = Vec::new();
        for j in 0..2 {
            let mut a = [0.0; 2];
            a[j] = 1.0;
            for b in [p.col_lo[j], p.col_hi[j]] {
                if b.is_finite() {
                    lines.push((a, b));
                }
            }
        }
        for (i, r) in p.rows.iter().enumerate() {
            let mut a = [0.0; 2];
            for &(j, v) in r {
                a[j] += v;
            }
            for b in [p.row_lo[i], p.row_hi[i]] {
                if b.is_finite() {
                    lines.push((a, b));
                }
            }
        }
        let mut best: Option<f64> = None;
        for i in 0..lines.len() {
            for k in i + 1..lines.len() {
                let (a, b) = lines[i];
                let (c, d) = lines[k];
                let det = a[0] * c[1] - a[1] * c[0];
                if det.abs() < 1e-12 {
                    continue;
                }
                let x = [(b * c[1] - a[1] * d) / det, (a[0] * d - b * c[0]) / det];
                if p.max_violation(&x) <= 1e-9 {
                    let v = p.objective(&x);
                    best = Some(best.map_or(v, |bv: f64| bv.min(v)));
                }
            }
        }
        best
    }

    #[test]
    fn random_bounded_2d_against_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let mut p = LpProblem::default();
            for _ in 0..2 {
                let lo = rng.gen_range(-5.0..0.0);
                p.add_col(rng.gen_range(-3.0..3.0), lo, lo + rng.gen_range(0.5..8.0));
            }
            for _ in 0..rng.gen_range(1..5) {
                let a = vec![(0, rng.gen_range(-2.0..2.0)), (1, rng.gen_range(-2.0..2.0))];
                let lo = rng.gen_range(-6.0..2.0);
                p.add_row(a, lo, lo + rng.gen_range(0.0..6.0));
            }
            let s = solve_lp(&p, &LpOptions::default());
            match brute_force_2d(&p) {
                Some(best) => {
                    assert_eq!(s.status, LpStatus::Optimal, "{p:?}");
                    assert!((s.objective - best).abs() < 1e-7 * (1.0 + best.abs()), "{} vs {best}", s.objective);
                    assert!(s.max_primal_residual <= 1e-8);
                }
                None => assert_eq!(s.status, LpStatus::Infeasible, "{p:?}"),
            }
        }
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = LpProblem::default();
        for _ in 0..30 {
            p.add_col(rng.gen_range(-1.0..1.0), 0.0, rng.gen_range(1.0..5.0));
        }
        for _ in 0..20 {
            let row: Vec<(usize, f64)> = (0..30).map(|j| (j, rng.gen_range(-1.0..1.0))).collect();
            p.add_row(row, -2.0, 2.0);
        }
        let a = solve_lp(&p, &LpOptions::default());
        let b = solve_lp(&p, &LpOptions::default());
        assert_eq!(a.status, LpStatus::Optimal);
        assert_eq!(a, b);
    }
}
