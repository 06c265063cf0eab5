//! Linear complementarity problems and linear complementarity systems.
//!
//! An LCP(q, F) asks for `λ ≥ 0` with `y = Fλ + q ≥ 0` and `λᵀy = 0`. A linear
//! complementarity system (LCS) couples a linear difference equation to an
//! LCP whose data depends on the current state and input:
//!
//! ```text
//! x⁺ = A x + B u + D λ + d
//! 0 ≤ λ ⊥ E x + F λ + H u + c ≥ 0
//! ```
//!
//! LCPs are solved with Lemke's complementary pivoting method (covering vector
//! of ones, lexicographic ratio test). Small problems that end on a secondary
//! ray fall back to enumerating active sets.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::{Matrix, Vector};

/// Default complementarity tolerance.
pub const LCP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LcpProblem {
    q: Vector,
    f: Matrix,
}

impl LcpProblem {
    pub fn new(q: Vector, f: Matrix) -> Result<Self> {
        dim_check(f.is_square(), || {
            format!("LCP matrix must be square, got {}x{}", f.nrows(), f.ncols())
        })?;
        dim_check(q.len() == f.nrows(), || {
            format!("LCP vector has length {} but matrix is {}x{}", q.len(), f.nrows(), f.ncols())
        })?;
        Ok(Self { q, f })
    }

    pub fn q(&self) -> &Vector {
        &self.q
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LcpStatus {
    Solved,
    /// Lemke terminated on a secondary ray (and enumeration, if tried, found nothing).
    Ray,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub lambda: Vector,
    pub y: Vector,
    pub status: LcpStatus,
    pub pivots: usize,
}

impl LcpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == LcpStatus::Solved
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcpOptions {
    pub tol: f64,
    /// Pivot budget; `None` means `100 · m`.
    pub max_pivots: Option<usize>,
    /// Largest problem size for which a failed pivot path is retried by
    /// enumerating all active sets.
    pub enumeration_fallback: usize,
}

impl Default for LcpOptions {
    fn default() -> Self {
        Self {
            tol: LCP_TOL,
            max_pivots: None,
            enumeration_fallback: 12,
        }
    }
}

/// `max(‖min(λ,0)‖∞, ‖min(y,0)‖∞, maxᵢ |λᵢ yᵢ|)`.
pub fn complementarity_residual(lambda: &Vector, y: &Vector) -> Result<f64> {
    dim_check(lambda.len() == y.len(), || {
        format!("λ has length {} but y has length {}", lambda.len(), y.len())
    })?;
    Ok(lambda
        .iter()
        .zip(y.iter())
        .fold(0.0_f64, |acc, (&l, &g)| {
            acc.max((-l).max(0.0)).max((-g).max(0.0)).max((l * g).abs())
        }))
}

/// Checks the `Solved` invariants of an LCP solution.
pub fn satisfies_lcp(lambda: &Vector, y: &Vector, f: &Matrix, q: &Vector, tol: f64) -> bool {
    if lambda.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return false;
    }
    let fit = (f * lambda + q - y).amax();
    let scale = 1.0 + lambda.norm() * y.norm();
    fit <= tol * (1.0 + q.amax().max(y.amax()))
        && lambda.min() >= -tol
        && y.min() >= -tol
        && lambda.dot(y).abs() <= tol * scale
}

pub fn solve_lcp(problem: &LcpProblem, opts: &LcpOptions) -> LcpSolution {
    let m = problem.dim();
    let (f, q) = (&problem.f, &problem.q);
    if m == 0 {
        return LcpSolution {
            lambda: Vector::zeros(0),
            y: Vector::zeros(0),
            status: LcpStatus::Solved,
            pivots: 0,
        };
    }
    let max_pivots = opts.max_pivots.unwrap_or(100 * m);
    let outcome = lemke(f, q, max_pivots);

    let mut status = outcome.status;
    if let Some(basic) = &outcome.basic_z {
        if let Some(lambda) = polish(f, q, basic, &outcome.z, opts.tol) {
            let y = f * &lambda + q;
            return LcpSolution {
                lambda,
                y,
                status: LcpStatus::Solved,
                pivots: outcome.pivots,
            };
        }
        // the pivot path ended but the point it produced is not a solution
        status = LcpStatus::Ray;
    }

    if m <= opts.enumeration_fallback {
        if let Some(lambda) = enumerate_lcp(f, q, opts.tol) {
            let y = f * &lambda + q;
            return LcpSolution {
                lambda,
                y,
                status: LcpStatus::Solved,
                pivots: outcome.pivots,
            };
        }
    }

    let lambda = outcome.z.map(|v| v.max(0.0));
    let y = f * &lambda + q;
    LcpSolution {
        lambda,
        y,
        status,
        pivots: outcome.pivots,
    }
}

struct LemkeOutcome {
    z: Vector,
    /// Indices of basic `z` variables when the path terminated with z0 leaving.
    basic_z: Option<Vec<usize>>,
    status: LcpStatus,
    pivots: usize,
}

/// Lexicographic comparison of two tableau rows, each scaled by its pivot
/// column entry. Entries closer than a relative tolerance count as ties.
fn lex_cmp(t: &Matrix, a: usize, b: usize, col: usize, rhs: usize, m: usize) -> Ordering {
    let (pa, pb) = (t[(a, col)], t[(b, col)]);
    let key = |row: usize, j: usize, p: f64| {
        let c = if j == 0 { rhs } else { j - 1 };
        t[(row, c)] / p
    };
    for j in 0..=m {
        let (va, vb) = (key(a, j, pa), key(b, j, pb));
        let scale = 1.0 + va.abs().max(vb.abs());
        if (va - vb).abs() > 1e-12 * scale {
            return va.partial_cmp(&vb).unwrap_or(Ordering::Equal);
        }
    }
    Ordering::Equal
}

fn pivot(t: &mut Matrix, row: usize, col: usize) {
    let p = t[(row, col)];
    t.row_mut(row).scale_mut(1.0 / p);
    let pivot_row = t.row(row).clone_owned();
    for i in 0..t.nrows() {
        if i == row {
            continue;
        }
        let factor = t[(i, col)];
        if factor != 0.0 {
            for j in 0..t.ncols() {
                t[(i, j)] -= factor * pivot_row[j];
            }
        }
    }
}

fn lemke(f: &Matrix, q: &Vector, max_pivots: usize) -> LemkeOutcome {
    let m = q.len();
    if q.min() >= 0.0 {
        return LemkeOutcome {
            z: Vector::zeros(m),
            basic_z: Some(Vec::new()),
            status: LcpStatus::Solved,
            pivots: 0,
        };
    }

    // columns: w (0..m), z (m..2m), z0 (2m), rhs (2m+1)
    let z0 = 2 * m;
    let rhs = 2 * m + 1;
    let mut t = Matrix::zeros(m, 2 * m + 2);
    for i in 0..m {
        t[(i, i)] = 1.0;
        for j in 0..m {
            t[(i, m + j)] = -f[(i, j)];
        }
        t[(i, z0)] = -1.0;
        t[(i, rhs)] = q[i];
    }
    let mut basis: Vec<usize> = (0..m).collect();

    // z0 enters at the lexicographically most negative row
    let mut row = 0;
    for i in 1..m {
        if lex_cmp(&t, i, row, z0, rhs, m) == Ordering::Greater {
            row = i;
        }
    }
    let mut leaving = basis[row];
    pivot(&mut t, row, z0);
    basis[row] = z0;
    let mut pivots = 1;

    let extract = |t: &Matrix, basis: &[usize]| {
        let mut z = Vector::zeros(m);
        for (i, &b) in basis.iter().enumerate() {
            if (m..2 * m).contains(&b) {
                z[b - m] = t[(i, rhs)];
            }
        }
        z
    };

    loop {
        let entering = if leaving < m { leaving + m } else { leaving - m };
        let col_max = t.column(entering).amax();
        let eps = 1e-11 * col_max.max(1.0);

        let mut best: Option<usize> = None;
        for i in 0..m {
            if t[(i, entering)] <= eps {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => match lex_cmp(&t, i, b, entering, rhs, m) {
                    Ordering::Less => Some(i),
                    Ordering::Equal if basis[i] == z0 => Some(i),
                    _ => Some(b),
                },
            };
        }
        // prefer z0 leaving whenever it ties on the plain ratio
        if let Some(b) = best {
            let ratio = t[(b, rhs)] / t[(b, entering)];
            if let Some(r0) = basis.iter().position(|&v| v == z0) {
                if t[(r0, entering)] > eps {
                    let r0_ratio = t[(r0, rhs)] / t[(r0, entering)];
                    if (r0_ratio - ratio).abs() <= 1e-12 * (1.0 + ratio.abs()) {
                        best = Some(r0);
                    }
                }
            }
        }

        let Some(r) = best else {
            return LemkeOutcome {
                z: extract(&t, &basis),
                basic_z: None,
                status: LcpStatus::Ray,
                pivots,
            };
        };
        if pivots >= max_pivots {
            return LemkeOutcome {
                z: extract(&t, &basis),
                basic_z: None,
                status: LcpStatus::IterLimit,
                pivots,
            };
        }
        leaving = basis[r];
        pivot(&mut t, r, entering);
        basis[r] = entering;
        pivots += 1;

        if leaving == z0 {
            let basic_z = basis
                .iter()
                .filter(|&&b| (m..2 * m).contains(&b))
                .map(|&b| b - m)
                .collect();
            return LemkeOutcome {
                z: extract(&t, &basis),
                basic_z: Some(basic_z),
                status: LcpStatus::Solved,
                pivots,
            };
        }
    }
}

/// Re-solves `F_JJ λ_J = −q_J` on the terminal basis for full accuracy,
/// keeping whichever of the tableau point and the re-solved point is valid.
fn polish(f: &Matrix, q: &Vector, basic: &[usize], raw: &Vector, tol: f64) -> Option<Vector> {
    let m = q.len();
    let mut candidates = Vec::with_capacity(2);
    if let Some(sol) = solve_active_set(f, q, basic) {
        candidates.push(sol);
    }
    candidates.push(raw.clone());
    candidates.into_iter().find_map(|mut lambda| {
        for i in 0..m {
            if lambda[i] < 0.0 && lambda[i] >= -tol {
                lambda[i] = 0.0;
            }
        }
        let y = f * &lambda + q;
        satisfies_lcp(&lambda, &y, f, q, tol).then_some(lambda)
    })
}

fn solve_active_set(f: &Matrix, q: &Vector, active: &[usize]) -> Option<Vector> {
    let m = q.len();
    let k = active.len();
    let mut lambda = Vector::zeros(m);
    if k == 0 {
        return Some(lambda);
    }
    let sub = Matrix::from_fn(k, k, |i, j| f[(active[i], active[j])]);
    let rhs = Vector::from_fn(k, |i, _| -q[active[i]]);
    let sol = sub.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    for (i, &a) in active.iter().enumerate() {
        lambda[a] = sol[i];
    }
    Some(lambda)
}

/// Exhaustive search over active sets, fewest active components first.
fn enumerate_lcp(f: &Matrix, q: &Vector, tol: f64) -> Option<Vector> {
    let m = q.len();
    let mut masks: Vec<u32> = (0..(1u32 << m)).collect();
    masks.sort_by_key(|s| s.count_ones());
    masks.into_iter().find_map(|mask| {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut lambda = solve_active_set(f, q, &active)?;
        lambda.iter_mut().for_each(|v| {
            if *v < 0.0 && *v >= -tol {
                *v = 0.0
            }
        });
        let y = f * &lambda + q;
        satisfies_lcp(&lambda, &y, f, q, tol).then_some(lambda)
    })
}

/// Whether every principal minor of `f` is positive. Returns `None` above
/// `m = 10`, where the check is skipped. A `Some(false)` result means the LCP
/// may have multiple solutions (or none) for some `q`.
pub fn is_p_matrix(f: &Matrix) -> Option<bool> {
    let m = f.nrows();
    if m > 10 {
        return None;
    }
    for mask in 1u32..(1u32 << m) {
        let idx: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let sub = Matrix::from_fn(idx.len(), idx.len(), |i, j| f[(idx[i], idx[j])]);
        if sub.determinant() <= 1e-12 {
            return Some(false);
        }
    }
    Some(true)
}

/// Linear complementarity system `x⁺ = Ax + Bu + Dλ + d`, `0 ≤ λ ⊥ Ex + Fλ + Hu + c ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LcsDocument", into = "LcsDocument")]
pub struct LcsModel {
    a: Matrix,
    b: Matrix,
    d: Matrix,
    bias: Vector,
    e: Matrix,
    f: Matrix,
    h: Matrix,
    c: Vector,
}

impl LcsModel {
    /// `bias` is the constant drift `d`; `c` the constant gap offset.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b: Matrix,
        d: Matrix,
        bias: Vector,
        e: Matrix,
        f: Matrix,
        h: Matrix,
        c: Vector,
    ) -> Result<Self> {
        let nx = a.nrows();
        let nl = f.nrows();
        let nu = b.ncols();
        let check = |name: &str, m: &Matrix, r: usize, cl: usize| {
            dim_check(m.nrows() == r && m.ncols() == cl, || {
                format!("{name} is {}x{}, expected {r}x{cl}", m.nrows(), m.ncols())
            })
        };
        check("A", &a, nx, nx)?;
        check("B", &b, nx, nu)?;
        check("D", &d, nx, nl)?;
        check("E", &e, nl, nx)?;
        check("F", &f, nl, nl)?;
        check("H", &h, nl, nu)?;
        dim_check(bias.len() == nx, || format!("d has length {}, expected {nx}", bias.len()))?;
        dim_check(c.len() == nl, || format!("c has length {}, expected {nl}", c.len()))?;
        let all_finite = [&a, &b, &d, &e, &f, &h]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
            && bias.iter().chain(c.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput("LCS data contains non-finite entries".into()));
        }
        Ok(Self { a, b, d, bias, e, f, h, c })
    }

    /// A system without contact forces: `x⁺ = Ax + Bu + d`.
    pub fn linear(a: Matrix, b: Matrix, bias: Vector) -> Result<Self> {
        let (nx, nu) = (a.nrows(), b.ncols());
        Self::new(
            a,
            b,
            Matrix::zeros(nx, 0),
            bias,
            Matrix::zeros(0, nx),
            Matrix::zeros(0, 0),
            Matrix::zeros(0, nu),
            Vector::zeros(0),
        )
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_lambda(&self) -> usize {
        self.f.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn d(&self) -> &Matrix {
        &self.d
    }
    pub fn bias(&self) -> &Vector {
        &self.bias
    }
    pub fn e(&self) -> &Matrix {
        &self.e
    }
    pub fn f(&self) -> &Matrix {
        &self.f
    }
    pub fn h(&self) -> &Matrix {
        &self.h
    }
    pub fn c(&self) -> &Vector {
        &self.c
    }

    pub fn gap(&self, x: &Vector, lambda: &Vector, u: &Vector) -> Vector {
        &self.e * x + &self.f * lambda + &self.h * u + &self.c
    }

    pub fn flow(&self, x: &Vector, lambda: &Vector, u: &Vector) -> Vector {
        &self.a * x + &self.b * u + &self.d * lambda + &self.bias
    }

    fn check_xu(&self, x: &Vector, u: &Vector) -> Result<()> {
        dim_check(x.len() == self.n_x(), || {
            format!("state has length {}, expected {}", x.len(), self.n_x())
        })?;
        dim_check(u.len() == self.n_u(), || {
            format!("input has length {}, expected {}", u.len(), self.n_u())
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Serialized form of [`LcsModel`]: row-major nested arrays under the keys
/// `A, B, D, d, E, F, H, c`. The optional `n_u` disambiguates systems with
/// no state rows and no contact rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcsDocument {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d_mat: Vec<Vec<f64>>,
    #[serde(rename = "d")]
    pub d_vec: Vec<f64>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "c")]
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_u: Option<usize>,
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<Matrix> {
    dim_check(rows.len() == nrows, || format!("{name} has {} rows, expected {nrows}", rows.len()))?;
    for (i, r) in rows.iter().enumerate() {
        dim_check(r.len() == ncols, || {
            format!("{name} row {i} has {} entries, expected {ncols}", r.len())
        })?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl TryFrom<LcsDocument> for LcsModel {
    type Error = Error;

    fn try_from(doc: LcsDocument) -> Result<Self> {
        let nx = doc.d_vec.len();
        let nl = doc.c.len();
        let nu = doc
            .n_u
            .or_else(|| doc.b.first().map(Vec::len))
            .or_else(|| doc.h.first().map(Vec::len))
            .unwrap_or(0);
        LcsModel::new(
            matrix_from_rows(&doc.a, nx, nx, "A")?,
            matrix_from_rows(&doc.b, nx, nu, "B")?,
            matrix_from_rows(&doc.d_mat, nx, nl, "D")?,
            DVector::from_vec(doc.d_vec),
            matrix_from_rows(&doc.e, nl, nx, "E")?,
            matrix_from_rows(&doc.f, nl, nl, "F")?,
            matrix_from_rows(&doc.h, nl, nu, "H")?,
            DVector::from_vec(doc.c),
        )
    }
}

impl From<LcsModel> for LcsDocument {
    fn from(m: LcsModel) -> Self {
        LcsDocument {
            a: matrix_to_rows(&m.a),
            b: matrix_to_rows(&m.b),
            d_mat: matrix_to_rows(&m.d),
            d_vec: m.bias.iter().copied().collect(),
            e: matrix_to_rows(&m.e),
            f: matrix_to_rows(&m.f),
            h: matrix_to_rows(&m.h),
            c: m.c.iter().copied().collect(),
            n_u: Some(m.b.ncols()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcsStep {
    pub x_next: Vector,
    pub lambda: Vector,
    pub y: Vector,
}

/// Advances the system one step by solving `LCP(Ex + Hu + c, F)`.
pub fn lcs_step(model: &LcsModel, x: &Vector, u: &Vector) -> Result<LcsStep> {
    model.check_xu(x, u)?;
    let q = &model.e * x + &model.h * u + &model.c;
    let problem = LcpProblem::new(q, model.f.clone())?;
    let sol = solve_lcp(&problem, &LcpOptions::default());
    if !sol.is_solved() {
        return Err(Error::LcpFailure {
            step: None,
            status: sol.status,
        });
    }
    let x_next = model.flow(x, &sol.lambda, u);
    Ok(LcsStep {
        x_next,
        lambda: sol.lambda,
        y: sol.y,
    })
}

/// Additive disturbance applied to the state after each step.
pub trait StateDisturbance {
    fn sample(&mut self, step: usize, n_x: usize) -> Vector;
}

/// Independent zero-mean Gaussian noise on every state component.
#[derive(Debug, Clone)]
pub struct GaussianDisturbance {
    normal: Normal<f64>,
    rng: ChaCha8Rng,
}

impl GaussianDisturbance {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|e| Error::InvalidInput(format!("bad noise σ {sigma}: {e}")))?;
        Ok(Self {
            normal,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl StateDisturbance for GaussianDisturbance {
    fn sample(&mut self, _step: usize, n_x: usize) -> Vector {
        Vector::from_fn(n_x, |_, _| self.normal.sample(&mut self.rng))
    }
}

/// Time-indexed record of an LCS rollout. `states` has one more entry than
/// the per-step sequences.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub forces: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub gaps: Vec<Vector>,
    pub stage_costs: Vec<f64>,
}

impl Trajectory {
    pub fn new(x0: Vector) -> Self {
        Self {
            states: vec![x0],
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn push(&mut self, step: LcsStep, u: Vector, stage_cost: f64) {
        self.states.push(step.x_next);
        self.forces.push(step.lambda);
        self.gaps.push(step.y);
        self.inputs.push(u);
        self.stage_costs.push(stage_cost);
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory always holds x0")
    }

    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }
}

/// Open-loop rollout. Noise, when given, is added to `x_{k+1}` after each
/// step. Stage costs are left at zero.
pub fn simulate(
    model: &LcsModel,
    x0: &Vector,
    inputs: &[Vector],
    mut noise: Option<&mut dyn StateDisturbance>,
) -> Result<Trajectory> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("simulate needs at least one input".into()));
    }
    let mut traj = Trajectory::new(x0.clone());
    let mut x = x0.clone();
    for (k, u) in inputs.iter().enumerate() {
        let mut step = lcs_step(model, &x, u).map_err(|e| match e {
            Error::LcpFailure { status, .. } => Error::LcpFailure {
                step: Some(k),
                status,
            },
            other => other,
        })?;
        if let Some(noise) = noise.as_deref_mut() {
            step.x_next += noise.sample(k, model.n_x());
        }
        x = step.x_next.clone();
        traj.push(step, u.clone(), 0.0);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn solve(q: Vector, f: Matrix) -> LcpSolution {
        solve_lcp(&LcpProblem::new(q, f).unwrap(), &LcpOptions::default())
    }

    #[test]
    fn nonnegative_q_gives_zero_force() {
        let s = solve(dvector![1.0], dmatrix![1.0]);
        assert_eq!(s.status, LcpStatus::Solved);
        assert_eq!(s.lambda, dvector![0.0]);
        assert_eq!(s.y, dvector![1.0]);
    }

    #[test]
    fn scalar_active_contact() {
        let s = solve(dvector![-1.0], dmatrix![2.0]);
        assert!(s.is_solved());
        assert_abs_diff_eq!(s.lambda[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.y[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn decoupled_identity() {
        let s = solve(dvector![-1.0, -1.0], Matrix::identity(2, 2));
        assert!(s.is_solved());
        assert_abs_diff_eq!(s.lambda, dvector![1.0, 1.0], epsilon = 1e-12);
        assert_abs_diff_eq!(s.y, dvector![0.0, 0.0], epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            LcpProblem::new(dvector![1.0, 2.0], dmatrix![1.0]),
            Err(Error::Dimension(_))
        ));
        assert!(LcpProblem::new(dvector![1.0], dmatrix![1.0, 2.0]).is_err());
    }

    #[test]
    fn infeasible_lcp_reports_ray() {
        // y = -λ - 1 can never be nonnegative
        let s = solve(dvector![-1.0], dmatrix![-1.0]);
        assert_eq!(s.status, LcpStatus::Ray);
    }

    #[test]
    fn degenerate_q_is_handled() {
        // repeated most-negative entries exercise the lexicographic tie-break
        let f = dmatrix![2.0, 1.0, 0.0; 1.0, 2.0, 1.0; 0.0, 1.0, 2.0];
        let q = dvector![-1.0, -1.0, -1.0];
        let s = solve(q.clone(), f.clone());
        assert!(s.is_solved());
        assert!(satisfies_lcp(&s.lambda, &s.y, &f, &q, 1e-9));
    }

    #[test]
    fn residual_examples() {
        let r = |l: Vector, y: Vector| complementarity_residual(&l, &y).unwrap();
        assert_eq!(r(dvector![0.0], dvector![1.0]), 0.0);
        assert_eq!(r(dvector![1.0], dvector![1.0]), 1.0);
        assert_eq!(r(dvector![0.5, 0.0], dvector![0.0, 0.2]), 0.0);
        assert_eq!(r(dvector![-0.3], dvector![0.0]), 0.3);
        assert!(complementarity_residual(&dvector![0.0], &dvector![0.0, 1.0]).is_err());
    }

    #[test]
    fn p_matrix_detection() {
        assert_eq!(is_p_matrix(&Matrix::identity(3, 3)), Some(true));
        assert_eq!(is_p_matrix(&dmatrix![0.0, 1.0; -1.0, 0.0]), Some(false));
        assert_eq!(is_p_matrix(&Matrix::identity(11, 11)), None);
    }

    fn contact_free() -> LcsModel {
        LcsModel::new(
            dmatrix![1.0, 0.1; 0.0, 1.0],
            dmatrix![0.0; 0.1],
            dmatrix![0.0; 0.0],
            dvector![0.0, -0.2],
            dmatrix![0.0, 0.0],
            dmatrix![1.0],
            dmatrix![0.0],
            dvector![1.0],
        )
        .unwrap()
    }

    #[test]
    fn inactive_contact_step() {
        let m = contact_free();
        let (x, u) = (dvector![1.0, 2.0], dvector![3.0]);
        let s = lcs_step(&m, &x, &u).unwrap();
        assert_eq!(s.lambda, dvector![0.0]);
        let expected = m.a() * &x + m.b() * &u + m.bias();
        assert_abs_diff_eq!(s.x_next, expected, epsilon = 1e-15);
    }

    #[test]
    fn pushed_contact_step_matches_mode_enumeration() {
        // one state, one contact: x⁺ = x + λ, gap = x + 2λ + 1
        let m = LcsModel::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dvector![0.0],
            dmatrix![1.0],
            dmatrix![2.0],
            dmatrix![0.0],
            dvector![1.0],
        )
        .unwrap();
        let s = lcs_step(&m, &dvector![-3.0], &dvector![0.0]).unwrap();
        // mode λ=0 gives gap -2 < 0, so the contact is active: λ = (3-1)/2 = 1
        assert_abs_diff_eq!(s.lambda[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x_next[0], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let m = contact_free();
        assert!(lcs_step(&m, &dvector![1.0], &dvector![0.0]).is_err());
        assert!(lcs_step(&m, &dvector![1.0, 0.0], &dvector![0.0, 1.0]).is_err());
    }

    #[test]
    fn simulate_single_step_matches_lcs_step() {
        let m = contact_free();
        let x0 = dvector![0.5, -0.5];
        let u = dvector![1.0];
        let traj = simulate(&m, &x0, &[u.clone()], None).unwrap();
        let step = lcs_step(&m, &x0, &u).unwrap();
        assert_eq!(traj.states.len(), 2);
        assert_eq!(traj.states[1], step.x_next);
        assert_eq!(traj.forces[0], step.lambda);
    }

    #[test]
    fn simulate_requires_inputs() {
        assert!(simulate(&contact_free(), &dvector![0.0, 0.0], &[], None).is_err());
    }

    #[test]
    fn simulate_reports_failing_step() {
        let m = LcsModel::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
            dvector![0.0],
            dmatrix![1.0],
            dmatrix![-1.0],
            dmatrix![0.0],
            dvector![0.0],
        )
        .unwrap();
        // gap = x - λ: solvable while x ≥ 0, infeasible once u drives x negative
        let inputs = vec![dvector![-0.5], dvector![-1.0], dvector![0.0]];
        match simulate(&m, &dvector![1.0], &inputs, None) {
            Err(Error::LcpFailure { step, .. }) => assert_eq!(step, Some(2)),
            other => panic!("expected LCP failure, got {other:?}"),
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let m = contact_free();
        let inputs = vec![dvector![0.0]; 20];
        let run = |seed| {
            let mut n = GaussianDisturbance::new(0.05, seed).unwrap();
            simulate(&m, &dvector![0.0, 0.0], &inputs, Some(&mut n)).unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
        let clean = simulate(&m, &dvector![0.0, 0.0], &inputs, None).unwrap();
        assert_eq!(clean, simulate(&m, &dvector![0.0, 0.0], &inputs, None).unwrap());
    }

    #[test]
    fn noise_statistics() {
        // x⁺ = x + w, so the increments are the raw noise samples
        let m = LcsModel::linear(dmatrix![1.0], dmatrix![0.0], dvector![0.0]).unwrap();
        let inputs = vec![dvector![0.0]; 10_000];
        let mut n = GaussianDisturbance::new(0.05, 3).unwrap();
        let traj = simulate(&m, &dvector![0.0], &inputs, Some(&mut n)).unwrap();
        let inc: Vec<f64> = traj.states.windows(2).map(|w| w[1][0] - w[0][0]).collect();
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        // standard errors: σ/√n = 5e-4 for the mean, σ/√(2n) ≈ 3.5e-4 for the std
        assert!(mean.abs() < 2.5e-3, "mean {mean}");
        assert!((var.sqrt() - 0.05).abs() < 2e-3, "std {}", var.sqrt());
    }

    #[test]
    fn model_document_round_trip() {
        let m = contact_free();
        let text = m.to_json();
        assert!(text.contains("\"A\"") && text.contains("\"c\""));
        assert_eq!(LcsModel::from_json(&text).unwrap(), m);
        let bad = text.replace("\"F\": [\n    [\n      1.0\n    ]\n  ]", "\"F\": [[1.0, 2.0]]");
        assert!(LcsModel::from_json(&bad).is_err());
    }
}
