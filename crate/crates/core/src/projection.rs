//! Per-time-step projections onto the complementarity set
//!
//! ```text
//! 𝓗 = { (x, λ, u) : Ex + Fλ + Hu + c ≥ 0, λ ≥ 0, λᵀ(Ex + Fλ + Hu + c) = 0 }
//! ```
//!
//! in the weighted norm `(δ − α)ᵀ U (δ − α)`. Three methods are provided:
//! an exact branch-and-bound over the contact modes, a fast LCP completion
//! that keeps the state and input slices of the target, and an approximate
//! nested ADMM. Every call is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::bnb::{branch_and_bound, AffineRow, BnbOptions, BnbProblem, BnbStatus, Pair};
use crate::error::{dim_check, Error, Result};
use crate::lcs::{complementarity_residual, solve_lcp, LcpOptions, LcpProblem, LcsModel};
use crate::linalg::is_psd;
use crate::qp::{solve_qp, QpOptions, QpStatus, QuadraticProgram};
use crate::{Matrix, Vector};

pub const DEFAULT_BIG_M: f64 = 1000.0;

/// The contact data `(E, F, H, c)` defining one time step's complementarity set.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaritySet {
    e: Matrix,
    f: Matrix,
    h: Matrix,
    c: Vector,
}

impl ComplementaritySet {
    pub fn new(e: Matrix, f: Matrix, h: Matrix, c: Vector) -> Result<Self> {
        let nl = f.nrows();
        dim_check(f.is_square(), || "F must be square".into())?;
        dim_check(e.nrows() == nl && h.nrows() == nl && c.len() == nl, || {
            format!("contact rows disagree: E {}, F {}, H {}, c {}", e.nrows(), nl, h.nrows(), c.len())
        })?;
        Ok(Self { e, f, h, c })
    }

    pub fn from_model(model: &LcsModel) -> Self {
        Self {
            e: model.e().clone(),
            f: model.f().clone(),
            h: model.h().clone(),
            c: model.c().clone(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.e.ncols()
    }
    pub fn n_lambda(&self) -> usize {
        self.f.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.h.ncols()
    }
    pub fn dim(&self) -> usize {
        self.n_x() + self.n_lambda() + self.n_u()
    }

    /// `[E F H]`.
    pub fn gap_matrix(&self) -> Matrix {
        let (nx, nl, nu) = (self.n_x(), self.n_lambda(), self.n_u());
        let mut k = Matrix::zeros(nl, nx + nl + nu);
        k.view_mut((0, 0), (nl, nx)).copy_from(&self.e);
        k.view_mut((0, nx), (nl, nl)).copy_from(&self.f);
        k.view_mut((0, nx + nl), (nl, nu)).copy_from(&self.h);
        k
    }

    pub fn gap(&self, delta: &Vector) -> Vector {
        &self.gap_matrix() * delta + &self.c
    }

    pub fn lambda_slice(&self, delta: &Vector) -> Vector {
        delta.rows(self.n_x(), self.n_lambda()).clone_owned()
    }

    /// Complementarity residual of a stacked `(x, λ, u)` point.
    pub fn residual(&self, delta: &Vector) -> f64 {
        complementarity_residual(&self.lambda_slice(delta), &self.gap(delta)).expect("slices agree")
    }

    pub fn contains(&self, delta: &Vector, tol: f64) -> bool {
        self.residual(delta) <= tol
    }
}

/// The point to project (`z_k + w_k` inside the controller) and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTarget {
    point: Vector,
    weight: Matrix,
}

impl ProjectionTarget {
    pub fn new(point: Vector, weight: Matrix) -> Result<Self> {
        dim_check(weight.nrows() == point.len() && weight.ncols() == point.len(), || {
            format!("weight is {}x{} for a point of length {}", weight.nrows(), weight.ncols(), point.len())
        })?;
        if !is_psd(&weight, 1e-12) {
            return Err(Error::InvalidInput("projection weight must be symmetric PSD".into()));
        }
        Ok(Self { point, weight })
    }

    pub fn point(&self) -> &Vector {
        &self.point
    }
    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn distance(&self, delta: &Vector) -> f64 {
        let diff = delta - &self.point;
        diff.dot(&(&self.weight * &diff))
    }

    fn check(&self, set: &ComplementaritySet) -> Result<()> {
        dim_check(self.point.len() == set.dim(), || {
            format!("target has length {}, set expects {}", self.point.len(), set.dim())
        })
    }
}

/// Per-contact mode: `true` means `sᵢ = 1` (force clamped to zero, gap free),
/// `false` means `sᵢ = 0` (gap clamped to zero, force free).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeVector(pub Vec<bool>);

impl ModeVector {
    pub fn bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| b as u8).collect()
    }
}

impl std::fmt::Display for ModeVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.0 {
            write!(f, "{}", *b as u8)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectionWarning {
    /// A force or gap came within `1e-6·M` of its big-M bound.
    BigMTooSmall,
    /// Branch-and-bound stopped on its node budget; the best incumbent is returned.
    Suboptimal,
    /// Nested ADMM residual grew past `1e6`; the best iterate is returned.
    Diverged,
    /// Nested ADMM finished with a residual above the LCP tolerance.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub delta: Vector,
    pub mode: Option<ModeVector>,
    pub objective: f64,
    pub residual: f64,
    pub nodes: usize,
    pub pivots: usize,
    pub warnings: Vec<ProjectionWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiqpProjectionOptions {
    pub big_m: f64,
    pub node_budget: usize,
}

impl Default for MiqpProjectionOptions {
    fn default() -> Self {
        Self {
            big_m: DEFAULT_BIG_M,
            node_budget: 5_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedAdmmOptions {
    /// Iteration cap.
    pub iterations: usize,
    pub rho: f64,
    /// Stop once the primal and dual residuals (∞-norm) fall below this.
    pub tolerance: f64,
    /// Finish by solving the convex QP of the mode the iterate settled in.
    pub polish: bool,
}

impl Default for NestedAdmmOptions {
    fn default() -> Self {
        Self {
            iterations: 50,
            rho: 1.0,
            tolerance: 1e-9,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ProjectionMethod {
    Miqp(MiqpProjectionOptions),
    Lcp,
    Admm(NestedAdmmOptions),
}

impl ProjectionMethod {
    pub fn miqp() -> Self {
        Self::Miqp(MiqpProjectionOptions::default())
    }
    pub fn admm() -> Self {
        Self::Admm(NestedAdmmOptions::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Miqp(_) => "miqp",
            Self::Lcp => "lcp",
            Self::Admm(_) => "admm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "miqp" => Ok(Self::miqp()),
            "lcp" => Ok(Self::Lcp),
            "admm" => Ok(Self::admm()),
            other => Err(Error::InvalidInput(format!("unknown projection method '{other}'"))),
        }
    }

    /// Deterministic methods return bit-identical results for identical inputs.
    pub fn project(&self, target: &ProjectionTarget, set: &ComplementaritySet) -> Result<ProjectionResult> {
        match self {
            Self::Miqp(o) => project_miqp(target, set, o),
            Self::Lcp => project_lcp(target, set),
            Self::Admm(o) => project_nested_admm(target, set, o),
        }
    }
}

fn bnb_problem(target: &ProjectionTarget, set: &ComplementaritySet, big_m: f64) -> BnbProblem {
    let n = set.dim();
    let nx = set.n_x();
    let u = target.weight();
    let alpha = target.point();
    let k = set.gap_matrix();
    let pairs = (0..set.n_lambda())
        .map(|i| {
            let mut lam = Vector::zeros(n);
            lam[nx + i] = 1.0;
            Pair {
                lambda: AffineRow { coeffs: lam, offset: 0.0 },
                gap: AffineRow {
                    coeffs: k.row(i).transpose(),
                    offset: set.c[i],
                },
                group: 0,
                big_m,
            }
        })
        .collect();
    BnbProblem {
        p: u * 2.0,
        r: -(u * alpha) * 2.0,
        constant: alpha.dot(&(u * alpha)),
        aeq: Matrix::zeros(0, n),
        beq: Vector::zeros(0),
        ain: Matrix::zeros(0, n),
        bin: Vector::zeros(0),
        pairs,
    }
}

fn big_m_active(delta: &Vector, set: &ComplementaritySet, big_m: f64) -> bool {
    let lam = set.lambda_slice(delta);
    let gap = set.gap(delta);
    let limit = big_m * (1.0 - 1e-6);
    big_m.is_finite() && lam.iter().chain(gap.iter()).any(|&v| v >= limit)
}

/// Exact weighted projection via branch-and-bound over the `2^{n_λ}` modes.
pub fn project_miqp(
    target: &ProjectionTarget,
    set: &ComplementaritySet,
    opts: &MiqpProjectionOptions,
) -> Result<ProjectionResult> {
    target.check(set)?;
    if !(opts.big_m > 0.0) {
        return Err(Error::InvalidInput("big-M must be positive".into()));
    }
    // members project onto themselves
    if set.contains(target.point(), 0.0) {
        let lam = set.lambda_slice(target.point());
        let gap = set.gap(target.point());
        return Ok(ProjectionResult {
            delta: target.point().clone(),
            mode: Some(ModeVector(lam.iter().zip(gap.iter()).map(|(l, g)| l <= g).collect())),
            objective: 0.0,
            residual: 0.0,
            nodes: 0,
            pivots: 0,
            warnings: vec![],
        });
    }
    let problem = bnb_problem(target, set, opts.big_m);
    let bnb = branch_and_bound(
        &problem,
        &BnbOptions {
            node_budget: opts.node_budget,
            ..Default::default()
        },
        None,
    );
    let Some(best) = bnb.best else {
        return Err(Error::InfeasibleSet);
    };
    let mut warnings = Vec::new();
    if bnb.status == BnbStatus::BudgetExhausted {
        warnings.push(ProjectionWarning::Suboptimal);
    }
    if big_m_active(&best.v, set, opts.big_m) {
        warnings.push(ProjectionWarning::BigMTooSmall);
    }
    Ok(ProjectionResult {
        residual: set.residual(&best.v),
        objective: target.distance(&best.v),
        delta: best.v,
        mode: Some(ModeVector(best.modes)),
        nodes: bnb.nodes,
        pivots: 0,
        warnings,
    })
}

/// Keeps the state and input slices of the target and completes the force
/// slice by solving `LCP(E αˣ + H αᵘ + c, F)`. The result lies in the set.
pub fn project_lcp(target: &ProjectionTarget, set: &ComplementaritySet) -> Result<ProjectionResult> {
    target.check(set)?;
    let (nx, nl, nu) = (set.n_x(), set.n_lambda(), set.n_u());
    let alpha = target.point();
    let ax = alpha.rows(0, nx);
    let au = alpha.rows(nx + nl, nu);
    let q = &set.e * ax + &set.h * au + &set.c;
    let sol = solve_lcp(&LcpProblem::new(q, set.f.clone())?, &LcpOptions::default());
    if !sol.is_solved() {
        return Err(Error::LcpFailure {
            step: None,
            status: sol.status,
        });
    }
    let mut delta = alpha.clone();
    delta.rows_mut(nx, nl).copy_from(&sol.lambda);
    let mode = ModeVector(sol.lambda.iter().zip(sol.y.iter()).map(|(l, y)| l <= y).collect());
    Ok(ProjectionResult {
        residual: set.residual(&delta),
        objective: target.distance(&delta),
        delta,
        mode: Some(mode),
        nodes: 0,
        pivots: sol.pivots,
        warnings: vec![],
    })
}

/// Projection of a pair onto `{a ≥ 0, b ≥ 0, ab = 0}`.
fn complementary_pair(a: f64, b: f64) -> (f64, f64) {
    if a <= 0.0 && b <= 0.0 {
        return (0.0, 0.0);
    }
    // distance² to each axis candidate
    let to_a_axis = a.min(0.0).powi(2) + b * b;
    let to_b_axis = a * a + b.min(0.0).powi(2);
    if to_a_axis < to_b_axis || (to_a_axis == to_b_axis && a >= b) {
        (a.max(0.0), 0.0)
    } else {
        (0.0, b.max(0.0))
    }
}

/// Solves the convex QP of a fixed mode pattern; `None` when infeasible.
fn fixed_mode_qp(target: &ProjectionTarget, set: &ComplementaritySet, modes: &[bool]) -> Result<Option<Vector>> {
    let n = set.dim();
    let (nx, nl) = (set.n_x(), set.n_lambda());
    let k = set.gap_matrix();
    let u = target.weight();
    let alpha = target.point();
    let mut aeq = Matrix::zeros(nl, n);
    let mut beq = Vector::zeros(nl);
    let mut ain = Matrix::zeros(nl, n);
    let mut bin = Vector::zeros(nl);
    for (i, &clamp_lambda) in modes.iter().enumerate() {
        if clamp_lambda {
            aeq[(i, nx + i)] = 1.0;
            ain.row_mut(i).copy_from(&(-k.row(i)));
            bin[i] = set.c[i];
        } else {
            aeq.row_mut(i).copy_from(&k.row(i));
            beq[i] = -set.c[i];
            ain[(i, nx + i)] = -1.0;
        }
    }
    let qp = QuadraticProgram::new(u * 2.0, -(u * alpha) * 2.0)?
        .with_constant(alpha.dot(&(u * alpha)))
        .with_equalities(aeq, beq)?
        .with_inequalities(ain, bin)?;
    let sol = solve_qp(&qp, &QpOptions::default())?;
    Ok((sol.status == QpStatus::Optimal).then_some(sol.v))
}

/// Approximate projection by consensus ADMM on the split
/// `(δ, y)` with `y = Eδˣ + Fδ^λ + Hδᵘ + c` and a copy `ω` of `(δ^λ, y)`
/// constrained to the complementarity cone.
///
/// Each iteration (a) solves the weighted least-squares problem on the affine
/// set, (b) projects `(δ^λ, y) + v` pairwise onto `{a ≥ 0, b ≥ 0, ab = 0}`,
/// and (c) updates the scaled dual `v`. Convergence and feasibility are not
/// guaranteed; the final residual is reported. With `polish`, the mode
/// pattern of the final copy is fixed and its convex QP solved; when that
/// mode is infeasible, `x` and `u` are kept and `λ` is completed by the LCP,
/// so the result lies in the set whenever the LCP is solvable.
pub fn project_nested_admm(
    target: &ProjectionTarget,
    set: &ComplementaritySet,
    opts: &NestedAdmmOptions,
) -> Result<ProjectionResult> {
    target.check(set)?;
    if opts.iterations == 0 {
        return Err(Error::InvalidInput("nested ADMM needs at least one iteration".into()));
    }
    if !(opts.rho > 0.0) {
        return Err(Error::InvalidInput("nested ADMM penalty must be positive".into()));
    }
    let (nx, nl) = (set.n_x(), set.n_lambda());
    let rho = opts.rho;
    let u = target.weight();
    let alpha = target.point();
    let k = set.gap_matrix();

    // M = U + ρ SᵀS + ρ KᵀK, S selecting the force slice
    let mut m = u + k.transpose() * &k * rho;
    for i in 0..nl {
        m[(nx + i, nx + i)] += rho;
    }
    let chol = m.clone().cholesky();
    let svd = if chol.is_none() { Some(m.clone().svd(true, true)) } else { None };
    let solve = |rhs: &Vector| -> Vector {
        match (&chol, &svd) {
            (Some(c), _) => c.solve(rhs),
            (None, Some(s)) => s.solve(rhs, 1e-12).expect("svd has both factors"),
            _ => unreachable!(),
        }
    };
    // rhs = Uα + ρKᵀ(b − c) + ρSᵀa, with Uα − ρKᵀc fixed
    let kt = k.transpose();
    let rhs0 = u * alpha - &kt * &set.c * rho;

    let mut omega_l = Vector::zeros(nl);
    let mut omega_y = Vector::zeros(nl);
    let gap0 = set.gap(alpha);
    for i in 0..nl {
        let (a, b) = complementary_pair(alpha[nx + i], gap0[i]);
        omega_l[i] = a;
        omega_y[i] = b;
    }
    let mut v_l = Vector::zeros(nl);
    let mut v_y = Vector::zeros(nl);

    let mut delta = alpha.clone();
    let mut rhs = rhs0.clone();
    let mut b = Vector::zeros(nl);
    let mut y = Vector::zeros(nl);
    let mut best: Option<(Vector, f64)> = None;
    let mut warnings = Vec::new();
    for _ in 0..opts.iterations {
        b.copy_from(&omega_y);
        b -= &v_y;
        rhs.copy_from(&rhs0);
        rhs.gemv(rho, &kt, &b, 1.0);
        for i in 0..nl {
            rhs[nx + i] += rho * (omega_l[i] - v_l[i]);
        }
        delta = solve(&rhs);
        y.copy_from(&set.c);
        y.gemv(1.0, &k, &delta, 1.0);
        let mut res = 0.0_f64;
        let mut primal = 0.0_f64;
        let mut dual = 0.0_f64;
        for i in 0..nl {
            let l = delta[nx + i];
            res = res.max((-l).max(0.0)).max((-y[i]).max(0.0)).max((l * y[i]).abs());
            let (pa, pb) = complementary_pair(l + v_l[i], y[i] + v_y[i]);
            dual = dual.max((pa - omega_l[i]).abs()).max((pb - omega_y[i]).abs());
            omega_l[i] = pa;
            omega_y[i] = pb;
            let (rl, ry) = (l - pa, y[i] - pb);
            primal = primal.max(rl.abs()).max(ry.abs());
            v_l[i] += rl;
            v_y[i] += ry;
        }
        if !res.is_finite() || res > 1e6 {
            warnings.push(ProjectionWarning::Diverged);
            delta = best.as_ref().map(|(d, _)| d.clone()).unwrap_or_else(|| alpha.clone());
            break;
        }
        if best.as_ref().is_none_or(|(_, r)| res < *r) {
            best = Some((delta.clone(), res));
        }
        if primal < opts.tolerance && rho * dual < opts.tolerance {
            break;
        }
    }

    if opts.polish && !warnings.contains(&ProjectionWarning::Diverged) {
        let modes: Vec<bool> = (0..nl).map(|i| omega_l[i] <= omega_y[i]).collect();
        if let Some(polished) = fixed_mode_qp(target, set, &modes)? {
            delta = polished;
        } else if let Ok(done) = project_lcp(&ProjectionTarget::new(delta.clone(), u.clone())?, set) {
            delta = done.delta;
        }
    }
    let residual = set.residual(&delta);
    if residual > crate::lcs::LCP_TOL && !warnings.contains(&ProjectionWarning::Diverged) {
        warnings.push(ProjectionWarning::NotConverged);
    }
    let gap = set.gap(&delta);
    Ok(ProjectionResult {
        objective: target.distance(&delta),
        mode: Some(ModeVector((0..nl).map(|i| delta[nx + i] <= gap[i]).collect())),
        delta,
        residual,
        nodes: 0,
        pivots: 0,
        warnings,
    })
}

/// Exhaustive projection over all `2^{n_λ}` mode patterns (no big-M bounds).
/// Intended as a reference for small sets; `n_λ ≤ 12`.
pub fn enumerate_projection_oracle(target: &ProjectionTarget, set: &ComplementaritySet) -> Result<ProjectionResult> {
    target.check(set)?;
    let nl = set.n_lambda();
    if nl > 12 {
        return Err(Error::SizeCap(format!("enumeration limited to 12 contacts, got {nl}")));
    }
    let mut best: Option<(Vector, f64, Vec<bool>)> = None;
    for mask in 0u32..(1 << nl) {
        let modes: Vec<bool> = (0..nl).map(|i| mask & (1 << i) != 0).collect();
        if let Some(v) = fixed_mode_qp(target, set, &modes)? {
            let obj = target.distance(&v);
            if best.as_ref().is_none_or(|(_, b, _)| obj < *b) {
                best = Some((v, obj, modes));
            }
        }
    }
    let (delta, objective, modes) = best.ok_or(Error::InfeasibleSet)?;
    Ok(ProjectionResult {
        residual: set.residual(&delta),
        delta,
        mode: Some(ModeVector(modes)),
        objective,
        nodes: 1 << nl,
        pivots: 0,
        warnings: vec![],
    })
}

/// Default block-diagonal projection weight `diag(u_x I, u_λ I, u_u I)`.
pub fn block_weight(n_x: usize, n_lambda: usize, n_u: usize, w: (f64, f64, f64)) -> Matrix {
    let n = n_x + n_lambda + n_u;
    Matrix::from_fn(n, n, |i, j| {
        if i != j {
            0.0
        } else if i < n_x {
            w.0
        } else if i < n_x + n_lambda {
            w.1
        } else {
            w.2
        }
    })
}
