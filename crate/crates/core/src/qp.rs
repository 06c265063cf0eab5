//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ vᵀ P v + rᵀ v + constant
//! subject to  Aeq v  = beq
//!             Ain v ≤ bin
//! ```
//!
//! Equalities are eliminated with a null-space basis from a pivoted
//! Householder QR; the remaining inequality-constrained problem is solved
//! with the Goldfarb–Idnani dual active-set method. When the reduced Hessian
//! is only semidefinite, a proximal outer loop (`P + εI` with a moving
//! center) recovers an exact solution of the original problem.
//!
//! [`QpSolver`] keeps all factorizations that depend only on `(P, Aeq, Ain)`
//! so that repeated solves with new `(r, beq, bin)` are cheap matrix-vector
//! work. The consensus controller relies on this.

use nalgebra::Cholesky;

use crate::error::{dim_check, Error, Result};
use crate::linalg::{is_symmetric, pivoted_qr, solve_lower, solve_upper};
use crate::{Matrix, Vector};

pub use crate::problem::assemble_mpc_qp;

/// Default primal/stationarity tolerance.
pub const QP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub p: Matrix,
    pub r: Vector,
    /// Constant offset added to the reported objective.
    pub constant: f64,
    pub aeq: Matrix,
    pub beq: Vector,
    pub ain: Matrix,
    pub bin: Vector,
}

impl QuadraticProgram {
    /// Unconstrained problem; add rows with [`Self::with_equalities`] and
    /// [`Self::with_inequalities`].
    pub fn new(p: Matrix, r: Vector) -> Result<Self> {
        let n = r.len();
        dim_check(p.nrows() == n && p.ncols() == n, || {
            format!("P is {}x{} but r has length {n}", p.nrows(), p.ncols())
        })?;
        if !is_symmetric(&p, 1e-12) {
            return Err(Error::InvalidInput("P is not symmetric".into()));
        }
        Ok(Self {
            p,
            r,
            constant: 0.0,
            aeq: Matrix::zeros(0, n),
            beq: Vector::zeros(0),
            ain: Matrix::zeros(0, n),
            bin: Vector::zeros(0),
        })
    }

    pub fn with_equalities(mut self, aeq: Matrix, beq: Vector) -> Result<Self> {
        dim_check(aeq.ncols() == self.n() && aeq.nrows() == beq.len(), || {
            format!("equality block {}x{} vs rhs {} (n = {})", aeq.nrows(), aeq.ncols(), beq.len(), self.n())
        })?;
        self.aeq = aeq;
        self.beq = beq;
        Ok(self)
    }

    pub fn with_inequalities(mut self, ain: Matrix, bin: Vector) -> Result<Self> {
        dim_check(ain.ncols() == self.n() && ain.nrows() == bin.len(), || {
            format!("inequality block {}x{} vs rhs {} (n = {})", ain.nrows(), ain.ncols(), bin.len(), self.n())
        })?;
        self.ain = ain;
        self.bin = bin;
        Ok(self)
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn objective(&self, v: &Vector) -> f64 {
        0.5 * v.dot(&(&self.p * v)) + self.r.dot(v) + self.constant
    }

    /// Largest equality or inequality violation at `v`.
    pub fn infeasibility(&self, v: &Vector) -> f64 {
        let eq = (&self.aeq * v - &self.beq).amax();
        let ineq = (&self.ain * v - &self.bin).iter().fold(0.0_f64, |a, &s| a.max(s));
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v: Vector,
    pub status: QpStatus,
    pub objective: f64,
    /// Multipliers `ν` with `Pv + r + Aeqᵀν + Ainᵀμ = 0`.
    pub eq_duals: Vector,
    /// Multipliers `μ ≥ 0` of the inequality rows.
    pub ineq_duals: Vector,
    pub iterations: usize,
    /// The KKT system was singular and a least-squares solution was used.
    pub least_squares: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    /// Active-set iteration cap; `None` means `50 · (number of constraints)`.
    pub max_iter: Option<usize>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: QP_TOL,
            max_iter: None,
        }
    }
}

fn stationarity(qp: &QuadraticProgram, v: &Vector, nu: &Vector, mu: &Vector) -> (f64, f64) {
    let pv = &qp.p * v;
    let res = &pv + &qp.r + qp.aeq.transpose() * nu + qp.ain.transpose() * mu;
    let scale = 1.0 + pv.amax().max(qp.r.amax());
    (res.amax(), scale)
}

/// Solves an equality-constrained QP through its KKT system.
///
/// The equality matrix is rank-checked first. A singular KKT matrix falls
/// back to a least-squares solve, flagged in the result; the problem is
/// reported infeasible when that least-squares point does not satisfy the
/// system.
pub fn solve_eq_qp(qp: &QuadraticProgram) -> Result<QpSolution> {
    if qp.ain.nrows() > 0 {
        return Err(Error::InvalidInput(
            "solve_eq_qp called on a problem with inequality rows".into(),
        ));
    }
    let n = qp.n();
    let m = qp.aeq.nrows();
    let full_rank = m == 0 || pivoted_qr(&qp.aeq.transpose(), 1e-10).rank == m;

    let mut kkt = Matrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    kkt.view_mut((n, 0), (m, n)).copy_from(&qp.aeq);
    kkt.view_mut((0, n), (n, m)).copy_from(&qp.aeq.transpose());
    let mut rhs = Vector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-&qp.r));
    rhs.rows_mut(n, m).copy_from(&qp.beq);

    let direct = if full_rank {
        kkt.clone().lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()))
    } else {
        None
    };
    let (sol, least_squares) = match direct {
        Some(s) => (s, false),
        None => {
            let svd = kkt.clone().svd(true, true);
            let s = svd
                .solve(&rhs, 1e-12 * svd.singular_values.max().max(1.0))
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            (s, true)
        }
    };
    let v = sol.rows(0, n).clone_owned();
    let nu = sol.rows(n, m).clone_owned();
    let mu = Vector::zeros(0);

    let (stat, scale) = stationarity(qp, &v, &nu, &mu);
    let feas = qp.infeasibility(&v);
    let status = if feas <= QP_TOL * (1.0 + qp.beq.amax()) && stat <= QP_TOL * scale {
        QpStatus::Optimal
    } else {
        QpStatus::Infeasible
    };
    Ok(QpSolution {
        objective: qp.objective(&v),
        v,
        status,
        eq_duals: nu,
        ineq_duals: mu,
        iterations: 1,
        least_squares,
    })
}

/// Solves a convex QP. Problems without inequality rows go straight to the
/// KKT route of [`solve_eq_qp`].
pub fn solve_qp(qp: &QuadraticProgram, opts: &QpOptions) -> Result<QpSolution> {
    if qp.ain.nrows() == 0 {
        return solve_eq_qp(qp);
    }
    let solver = QpSolver::new(&qp.p, &qp.aeq, &qp.ain, *opts)?;
    let mut sol = solver.solve(&qp.r, &qp.beq, &qp.bin)?;
    sol.objective += qp.constant;
    Ok(sol)
}

/// Factorized solver for a fixed `(P, Aeq, Ain)`.
#[derive(Debug, Clone)]
pub struct QpSolver {
    n: usize,
    p: Matrix,
    aeq: Matrix,
    ain: Matrix,
    opts: QpOptions,
    /// Orthonormal basis of `range(Aeqᵀ)` (first `rank` columns of Q).
    range: Matrix,
    /// Orthonormal basis of `null(Aeq)`.
    null: Matrix,
    /// Leading `rank × rank` block of R and the pivoted row order of Aeq.
    r11: Matrix,
    r_full: Matrix,
    perm: Vec<usize>,
    rank: usize,
    /// Reduced Hessian `ZᵀPZ + εI`, its Cholesky factor, and `J = L⁻ᵀ`.
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    j0: Matrix,
    prox: f64,
    /// Reduced inequality rows `Ain Z`, normalized to unit length.
    c_red: Matrix,
    row_norms: Vector,
}

impl QpSolver {
    pub fn new(p: &Matrix, aeq: &Matrix, ain: &Matrix, opts: QpOptions) -> Result<Self> {
        let n = p.nrows();
        dim_check(p.is_square(), || "P must be square".into())?;
        dim_check(aeq.ncols() == n && ain.ncols() == n, || {
            format!("constraint blocks have {} and {} columns, expected {n}", aeq.ncols(), ain.ncols())
        })?;
        if !is_symmetric(p, 1e-12) {
            return Err(Error::InvalidInput("P is not symmetric".into()));
        }
        let meq = aeq.nrows();
        let (range, null, r11, r_full, perm, rank) = if meq == 0 {
            (Matrix::zeros(n, 0), Matrix::identity(n, n), Matrix::zeros(0, 0), Matrix::zeros(n, 0), vec![], 0)
        } else {
            let f = pivoted_qr(&aeq.transpose(), 1e-10);
            let range = f.q.columns(0, f.rank).clone_owned();
            let null = f.q.columns(f.rank, n - f.rank).clone_owned();
            let r11 = f.r.view((0, 0), (f.rank, f.rank)).clone_owned();
            (range, null, r11, f.r, f.perm, f.rank)
        };

        let h = null.transpose() * p * &null;
        let dim = h.nrows();
        let hmax = h.diagonal().iter().fold(0.0_f64, |a, &v| a.max(v.abs())).max(1.0);
        let try_chol = |h: Matrix| {
            h.cholesky().filter(|c| {
                let diag = c.l_dirty().diagonal();
                let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
                dim == 0 || lo * lo > 1e-11 * hi * hi
            })
        };
        let (chol, prox) = match try_chol(h.clone()) {
            Some(c) => (Some(c), 0.0),
            None => {
                let eps = 1e-7 * hmax;
                let shifted = &h + Matrix::identity(dim, dim) * eps;
                (shifted.cholesky(), eps)
            }
        };
        let Some(chol_ref) = chol.as_ref() else {
            return Err(Error::InvalidInput("P is not positive semidefinite on null(Aeq)".into()));
        };
        let l = chol_ref.l();
        let mut linv = Matrix::identity(dim, dim);
        for j in 0..dim {
            let col = solve_lower(&l, &linv.column(j).clone_owned());
            linv.set_column(j, &col);
        }
        let j0 = linv.transpose();

        let mut c_red = ain * &null;
        let mut row_norms = Vector::zeros(ain.nrows());
        for i in 0..ain.nrows() {
            let norm = c_red.row(i).norm();
            row_norms[i] = norm;
            if norm > 0.0 {
                c_red.row_mut(i).scale_mut(1.0 / norm);
            }
        }

        Ok(Self {
            n,
            p: p.clone(),
            aeq: aeq.clone(),
            ain: ain.clone(),
            opts,
            range,
            null,
            r11,
            r_full,
            perm,
            rank,
            chol,
            j0,
            prox,
            c_red,
            row_norms,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves for new `(r, beq, bin)`. The reported objective excludes any
    /// constant offset.
    pub fn solve(&self, r: &Vector, beq: &Vector, bin: &Vector) -> Result<QpSolution> {
        dim_check(r.len() == self.n, || format!("r has length {}, expected {}", r.len(), self.n))?;
        dim_check(beq.len() == self.aeq.nrows(), || "beq length mismatch".into())?;
        dim_check(bin.len() == self.ain.nrows(), || "bin length mismatch".into())?;
        let meq = self.aeq.nrows();
        let min = self.ain.nrows();
        let qp_view = |v: &Vector| 0.5 * v.dot(&(&self.p * v)) + r.dot(v);

        // particular solution v_p ∈ range(Aeqᵀ) with Aeq v_p = beq
        let vp = if meq == 0 {
            Vector::zeros(self.n)
        } else {
            let bperm: Vec<f64> = self.perm.iter().map(|&i| beq[i]).collect();
            // R11ᵀ s = (Πᵀ beq)[..rank]
            let r11t = self.r11.transpose();
            let s = solve_lower(&r11t, &Vector::from_column_slice(&bperm[..self.rank]));
            let vp = &self.range * &s;
            let resid = (&self.aeq * &vp - beq).amax();
            if resid > self.opts.tol * (1.0 + beq.amax()) {
                return Ok(self.infeasible(vp, qp_view(&Vector::zeros(self.n))));
            }
            vp
        };

        let g = self.null.transpose() * (&self.p * &vp + r);
        let b_red: Vector = {
            let raw = bin - &self.ain * &vp;
            Vector::from_fn(min, |i, _| {
                if self.row_norms[i] > 0.0 {
                    raw[i] / self.row_norms[i]
                } else {
                    raw[i]
                }
            })
        };
        // rows with a zero reduced normal are either trivially satisfied or infeasible
        for i in 0..min {
            if self.row_norms[i] == 0.0 && b_red[i] < -self.opts.tol * (1.0 + bin[i].abs()) {
                return Ok(self.infeasible(vp.clone(), qp_view(&vp)));
            }
        }

        let max_iter = self.opts.max_iter.unwrap_or(50 * min.max(1));
        let chol = self.chol.as_ref().expect("factorized at construction");
        let mut y = Vector::zeros(g.len());
        let mut total_iter = 0;
        let mut result;
        let outer = if self.prox > 0.0 { 500 } else { 1 };
        let mut outer_it = 0;
        loop {
            let g_k = if self.prox > 0.0 { &g - &y * self.prox } else { g.clone() };
            result = dual_active_set(chol, &self.j0, &g_k, &self.c_red, &b_red, &self.row_norms, self.opts.tol, max_iter);
            total_iter += result.iterations;
            outer_it += 1;
            if result.status != QpStatus::Optimal || self.prox == 0.0 {
                break;
            }
            let step = (&result.y - &y).amax();
            y = result.y.clone();
            if step <= 1e-11 * (1.0 + y.amax()) || outer_it >= outer {
                break;
            }
        }
        let y = result.y;
        let v = &vp + &self.null * &y;
        let mut mu = Vector::zeros(min);
        for (&i, &u) in result.active.iter().zip(result.mult.iter()) {
            if self.row_norms[i] > 0.0 {
                mu[i] = u / self.row_norms[i];
            }
        }
        let nu = self.eq_duals(&v, r, &mu);
        let objective = qp_view(&v);

        let mut status = result.status;
        if status == QpStatus::Optimal {
            let eq = if meq > 0 { (&self.aeq * &v - beq).amax() } else { 0.0 };
            let ineq = (&self.ain * &v - bin).iter().fold(0.0_f64, |a, &s| a.max(s));
            let pv = &self.p * &v;
            let stat = (&pv + r + self.aeq.transpose() * &nu + self.ain.transpose() * &mu).amax();
            let scale = 1.0 + pv.amax().max(r.amax());
            let bscale = 1.0 + beq.amax().max(bin.amax());
            if eq > self.opts.tol * bscale || ineq > self.opts.tol * bscale || stat > self.opts.tol * scale {
                status = QpStatus::IterLimit;
            }
        }
        Ok(QpSolution {
            v,
            status,
            objective,
            eq_duals: nu,
            ineq_duals: mu,
            iterations: total_iter,
            least_squares: self.rank < meq,
        })
    }

    fn infeasible(&self, v: Vector, objective: f64) -> QpSolution {
        QpSolution {
            v,
            status: QpStatus::Infeasible,
            objective,
            eq_duals: Vector::zeros(self.aeq.nrows()),
            ineq_duals: Vector::zeros(self.ain.nrows()),
            iterations: 0,
            least_squares: self.rank < self.aeq.nrows(),
        }
    }

    fn eq_duals(&self, v: &Vector, r: &Vector, mu: &Vector) -> Vector {
        let meq = self.aeq.nrows();
        if meq == 0 {
            return Vector::zeros(0);
        }
        // Aeqᵀ ν = −(Pv + r + Ainᵀμ), with Aeqᵀ Π = Q R
        let g = &self.p * v + r + self.ain.transpose() * mu;
        let qtg = self.range.transpose() * g;
        let rhs: Vec<f64> = (-qtg).iter().copied().collect();
        let sol = solve_upper(&self.r_full, &rhs, self.rank);
        let mut nu = Vector::zeros(meq);
        for (k, &val) in sol.iter().enumerate() {
            nu[self.perm[k]] = val;
        }
        nu
    }
}

struct ActiveSetResult {
    y: Vector,
    active: Vec<usize>,
    mult: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Goldfarb–Idnani dual method for `min ½yᵀHy + gᵀy` s.t. `C y ≤ b`, with
/// `H = LLᵀ` and `j0 = L⁻ᵀ`. Rows of `C` are unit length (or zero).
#[allow(clippy::too_many_arguments)]
fn dual_active_set(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    j0: &Matrix,
    g: &Vector,
    c: &Matrix,
    b: &Vector,
    row_norms: &Vector,
    tol: f64,
    max_iter: usize,
) -> ActiveSetResult {
    let p = g.len();
    let m = c.nrows();
    let mut y = -chol.solve(g);
    let mut j = j0.clone();
    let mut rmat = Matrix::zeros(p, p);
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let mut excluded = vec![false; m];
    let mut iterations = 0;
    let r_norm = 1.0_f64;

    // slack of row i: b_i − c_iᵀ y (≥ 0 when satisfied)
    let slack = |y: &Vector, i: usize| b[i] - c.row(i).dot(&y.transpose());
    let viol_tol = |i: usize| tol * (1.0 + b[i].abs());

    let done = |y: Vector, active: Vec<usize>, mult: Vec<f64>, status, iterations| ActiveSetResult {
        y,
        active,
        mult,
        status,
        iterations,
    };

    loop {
        // pick the most violated inactive row
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..m {
            if excluded[i] || row_norms[i] == 0.0 || active.contains(&i) {
                continue;
            }
            let s = slack(&y, i);
            if s < -viol_tol(i) && worst.is_none_or(|(_, w)| s < w) {
                worst = Some((i, s));
            }
        }
        let Some((ip, _)) = worst else {
            return done(y, active, mult, QpStatus::Optimal, iterations);
        };
        // constraint in ≥ form: n = −c_ip
        let np: Vector = -c.row(ip).transpose();
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return done(y, active, mult, QpStatus::IterLimit, iterations);
            }
            let iq = active.len();
            let d: Vector = j.transpose() * &np;
            let z: Vector = if iq < p {
                j.columns(iq, p - iq) * d.rows(iq, p - iq)
            } else {
                Vector::zeros(p)
            };
            let r: Vec<f64> = if iq > 0 {
                solve_upper(&rmat, d.as_slice(), iq)
            } else {
                Vec::new()
            };

            // dual (partial) step
            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for k in 0..iq {
                if r[k] > 0.0 {
                    let ratio = mult[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_pos = Some(k);
                    }
                }
            }
            // primal (full) step
            let s_p = slack(&y, ip); // nᵀy − b̃, negative while violated
            let zn = z.dot(&np);
            let t2 = if z.norm_squared() > 1e-30 && zn.abs() > 1e-30 {
                -s_p / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return done(y, active, mult, QpStatus::Infeasible, iterations);
            }

            if !t2.is_finite() {
                for k in 0..iq {
                    mult[k] -= t * r[k];
                }
                u_plus += t;
                let l = drop_pos.expect("finite t1 has a blocking constraint");
                delete_constraint(&mut rmat, &mut j, &mut active, &mut mult, l);
                continue;
            }

            y += &z * t;
            for k in 0..iq {
                mult[k] -= t * r[k];
            }
            u_plus += t;

            if t == t2 {
                let mut d = d;
                if add_constraint(&mut rmat, &mut j, &mut d, iq, r_norm) {
                    active.push(ip);
                    mult.push(u_plus);
                } else {
                    excluded[ip] = true;
                }
                break;
            }
            let l = drop_pos.expect("partial step has a blocking constraint");
            delete_constraint(&mut rmat, &mut j, &mut active, &mut mult, l);
        }
    }
}

fn add_constraint(rmat: &mut Matrix, j: &mut Matrix, d: &mut Vector, iq: usize, r_norm: f64) -> bool {
    let p = d.len();
    for jj in (iq + 1..p).rev() {
        let (mut cc, mut ss) = (d[jj - 1], d[jj]);
        let h = cc.hypot(ss);
        if h == 0.0 {
            continue;
        }
        d[jj] = 0.0;
        ss /= h;
        cc /= h;
        if cc < 0.0 {
            cc = -cc;
            ss = -ss;
            d[jj - 1] = -h;
        } else {
            d[jj - 1] = h;
        }
        let xny = ss / (1.0 + cc);
        for k in 0..p {
            let t1 = j[(k, jj - 1)];
            let t2 = j[(k, jj)];
            j[(k, jj - 1)] = t1 * cc + t2 * ss;
            j[(k, jj)] = xny * (t1 + j[(k, jj - 1)]) - t2;
        }
    }
    let iq = iq + 1;
    for i in 0..iq {
        rmat[(i, iq - 1)] = d[i];
    }
    d[iq - 1].abs() > f64::EPSILON * r_norm.max(1.0)
}

fn delete_constraint(rmat: &mut Matrix, j: &mut Matrix, active: &mut Vec<usize>, mult: &mut Vec<f64>, qq: usize) {
    let p = j.nrows();
    let iq = active.len();
    active.remove(qq);
    mult.remove(qq);
    for i in qq..iq - 1 {
        for row in 0..p {
            rmat[(row, i)] = rmat[(row, i + 1)];
        }
    }
    for row in 0..p {
        rmat[(row, iq - 1)] = 0.0;
    }
    let iq = iq - 1;
    for jj in qq..iq {
        let (mut cc, mut ss) = (rmat[(jj, jj)], rmat[(jj + 1, jj)]);
        let h = cc.hypot(ss);
        if h == 0.0 {
            continue;
        }
        cc /= h;
        ss /= h;
        rmat[(jj + 1, jj)] = 0.0;
        if cc < 0.0 {
            rmat[(jj, jj)] = -h;
            cc = -cc;
            ss = -ss;
        } else {
            rmat[(jj, jj)] = h;
        }
        let xny = ss / (1.0 + cc);
        for k in jj + 1..iq {
            let t1 = rmat[(jj, k)];
            let t2 = rmat[(jj + 1, k)];
            rmat[(jj, k)] = t1 * cc + t2 * ss;
            rmat[(jj + 1, k)] = xny * (t1 + rmat[(jj, k)]) - t2;
        }
        for k in 0..p {
            let t1 = j[(k, jj)];
            let t2 = j[(k, jj + 1)];
            j[(k, jj)] = t1 * cc + t2 * ss;
            j[(k, jj + 1)] = xny * (j[(k, jj)] + t1) - t2;
        }
    }
}
