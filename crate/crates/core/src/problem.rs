//! The finite-horizon MPC problem over an LCS and its stacked-variable layout.
//!
//! Decision variables are stacked as
//!
//! ```text
//! z = [z₀, z₁, …, z_{N−1}, x_N],   z_k = [x_k; λ_k; u_k]
//! ```
//!
//! The terminal block carries only the state: `λ_N` and `u_N` never enter
//! the cost or the dynamics. Projections and constraint builders index into
//! this layout, so the order is part of the public contract.

use std::ops::{AddAssign, Range};

use crate::error::{dim_check, Error, Result};
use crate::lcs::LcsModel;
use crate::linalg::{is_pd, is_psd, is_symmetric};
use crate::qp::QuadraticProgram;
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackLayout {
    pub n_x: usize,
    pub n_lambda: usize,
    pub n_u: usize,
    pub horizon: usize,
}

impl StackLayout {
    pub fn new(model: &LcsModel, horizon: usize) -> Self {
        Self {
            n_x: model.n_x(),
            n_lambda: model.n_lambda(),
            n_u: model.n_u(),
            horizon,
        }
    }

    /// Length of one `z_k = [x; λ; u]` block.
    pub fn nz(&self) -> usize {
        self.n_x + self.n_lambda + self.n_u
    }

    pub fn len(&self) -> usize {
        self.horizon * self.nz() + self.n_x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn z(&self, k: usize) -> Range<usize> {
        debug_assert!(k < self.horizon);
        k * self.nz()..(k + 1) * self.nz()
    }

    /// State block for `k = 0..=N`.
    pub fn x(&self, k: usize) -> Range<usize> {
        debug_assert!(k <= self.horizon);
        k * self.nz()..k * self.nz() + self.n_x
    }

    pub fn lambda(&self, k: usize) -> Range<usize> {
        let s = k * self.nz() + self.n_x;
        s..s + self.n_lambda
    }

    pub fn u(&self, k: usize) -> Range<usize> {
        let s = k * self.nz() + self.n_x + self.n_lambda;
        s..s + self.n_u
    }

    /// Offsets of the `x`, `λ` and `u` slices inside a single `z_k`.
    pub fn local_x(&self) -> Range<usize> {
        0..self.n_x
    }

    pub fn local_lambda(&self) -> Range<usize> {
        self.n_x..self.n_x + self.n_lambda
    }

    pub fn local_u(&self) -> Range<usize> {
        self.n_x + self.n_lambda..self.nz()
    }
}

/// Which stacked component a stage bound applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageVar {
    /// `x_k[i]` for `k = 1..=N` (the initial state is pinned).
    State(usize),
    /// `λ_k[i]` for `k = 0..N`.
    Force(usize),
    /// `u_k[i]` for `k = 0..N`.
    Input(usize),
}

/// Convex polyhedral set `{ z : a z ≤ b }` on the stacked variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexSet {
    pub a: Matrix,
    pub b: Vector,
}

impl ConvexSet {
    pub fn unconstrained(len: usize) -> Self {
        Self {
            a: Matrix::zeros(0, len),
            b: Vector::zeros(0),
        }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn push_row(&mut self, row: &[f64], rhs: f64) -> Result<()> {
        dim_check(row.len() == self.a.ncols(), || {
            format!("constraint row has {} entries, expected {}", row.len(), self.a.ncols())
        })?;
        let n = self.a.nrows();
        self.a = self.a.clone().insert_row(n, 0.0);
        for (j, &v) in row.iter().enumerate() {
            self.a[(n, j)] = v;
        }
        self.b = self.b.clone().insert_row(n, rhs);
        Ok(())
    }

    /// `lower ≤ var ≤ upper` at every stage the variable exists.
    pub fn add_stage_bounds(
        &mut self,
        layout: &StackLayout,
        var: StageVar,
        lower: Option<f64>,
        upper: Option<f64>,
    ) -> Result<()> {
        let len = layout.len();
        dim_check(self.a.ncols() == len, || "constraint set does not match layout".into())?;
        let indices: Vec<usize> = match var {
            StageVar::State(i) => {
                dim_check(i < layout.n_x, || format!("state index {i} out of range"))?;
                (1..=layout.horizon).map(|k| layout.x(k).start + i).collect()
            }
            StageVar::Force(i) => {
                dim_check(i < layout.n_lambda, || format!("force index {i} out of range"))?;
                (0..layout.horizon).map(|k| layout.lambda(k).start + i).collect()
            }
            StageVar::Input(i) => {
                dim_check(i < layout.n_u, || format!("input index {i} out of range"))?;
                (0..layout.horizon).map(|k| layout.u(k).start + i).collect()
            }
        };
        for idx in indices {
            let mut row = vec![0.0; len];
            if let Some(hi) = upper {
                row[idx] = 1.0;
                self.push_row(&row, hi)?;
            }
            if let Some(lo) = lower {
                row[idx] = -1.0;
                self.push_row(&row, -lo)?;
            }
        }
        Ok(())
    }

    pub fn contains(&self, z: &Vector, tol: f64) -> bool {
        (&self.a * z - &self.b).iter().all(|&s| s <= tol)
    }
}

/// Finite-horizon problem data: `Σ_{k<N} (x_kᵀQ_k x_k + u_kᵀR_k u_k) + x_NᵀQ_N x_N`
/// subject to the LCS dynamics, complementarity, and a convex set.
#[derive(Debug, Clone, PartialEq)]
pub struct McpProblemSpec {
    model: LcsModel,
    horizon: usize,
    q: Vec<Matrix>,
    r: Vec<Matrix>,
    q_terminal: Matrix,
    constraints: ConvexSet,
    x0: Vector,
}

impl McpProblemSpec {
    /// Stage-invariant costs.
    pub fn new(
        model: LcsModel,
        horizon: usize,
        q: Matrix,
        r: Matrix,
        q_terminal: Matrix,
        x0: Vector,
    ) -> Result<Self> {
        Self::with_stage_costs(model, vec![q; horizon], vec![r; horizon], q_terminal, x0)
    }

    pub fn with_stage_costs(
        model: LcsModel,
        q: Vec<Matrix>,
        r: Vec<Matrix>,
        q_terminal: Matrix,
        x0: Vector,
    ) -> Result<Self> {
        let horizon = q.len();
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        dim_check(r.len() == horizon, || format!("{} R matrices for horizon {horizon}", r.len()))?;
        let (nx, nu) = (model.n_x(), model.n_u());
        for (k, qk) in q.iter().enumerate() {
            dim_check(qk.shape() == (nx, nx), || format!("Q_{k} is {:?}, expected {nx}x{nx}", qk.shape()))?;
            if !is_symmetric(qk, 1e-12) || !is_psd(qk, 1e-12) {
                return Err(Error::InvalidInput(format!("Q_{k} is not symmetric PSD")));
            }
        }
        for (k, rk) in r.iter().enumerate() {
            dim_check(rk.shape() == (nu, nu), || format!("R_{k} is {:?}, expected {nu}x{nu}", rk.shape()))?;
            if !is_pd(rk) {
                return Err(Error::InvalidInput(format!("R_{k} is not symmetric positive definite")));
            }
        }
        dim_check(q_terminal.shape() == (nx, nx), || "Q_N has the wrong shape".into())?;
        if !is_symmetric(&q_terminal, 1e-12) || !is_psd(&q_terminal, 1e-12) {
            return Err(Error::InvalidInput("Q_N is not symmetric PSD".into()));
        }
        dim_check(x0.len() == nx, || format!("x0 has length {}, expected {nx}", x0.len()))?;
        let layout = StackLayout::new(&model, horizon);
        Ok(Self {
            model,
            horizon,
            q,
            r,
            q_terminal,
            constraints: ConvexSet::unconstrained(layout.len()),
            x0,
        })
    }

    pub fn with_constraints(mut self, constraints: ConvexSet) -> Result<Self> {
        dim_check(constraints.a.ncols() == self.layout().len(), || {
            format!("constraint set has {} columns, expected {}", constraints.a.ncols(), self.layout().len())
        })?;
        self.constraints = constraints;
        Ok(self)
    }

    pub fn with_x0(mut self, x0: Vector) -> Result<Self> {
        dim_check(x0.len() == self.model.n_x(), || "x0 has the wrong length".into())?;
        self.x0 = x0;
        Ok(self)
    }

    /// Swaps in a model of identical dimensions (relinearization).
    pub fn with_model(mut self, model: LcsModel) -> Result<Self> {
        dim_check(
            model.n_x() == self.model.n_x() && model.n_lambda() == self.model.n_lambda() && model.n_u() == self.model.n_u(),
            || "replacement model has different dimensions".into(),
        )?;
        self.model = model;
        Ok(self)
    }

    pub fn model(&self) -> &LcsModel {
        &self.model
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn q(&self, k: usize) -> &Matrix {
        &self.q[k]
    }
    pub fn r(&self, k: usize) -> &Matrix {
        &self.r[k]
    }
    pub fn q_terminal(&self) -> &Matrix {
        &self.q_terminal
    }
    pub fn constraints(&self) -> &ConvexSet {
        &self.constraints
    }
    pub fn x0(&self) -> &Vector {
        &self.x0
    }

    pub fn layout(&self) -> StackLayout {
        StackLayout::new(&self.model, self.horizon)
    }

    pub fn stage_cost(&self, k: usize, x: &Vector, u: &Vector) -> f64 {
        x.dot(&(&self.q[k] * x)) + u.dot(&(&self.r[k] * u))
    }

    pub fn terminal_cost(&self, x: &Vector) -> f64 {
        x.dot(&(&self.q_terminal * x))
    }

    /// MPC objective of a stacked vector.
    pub fn stacked_cost(&self, z: &Vector) -> f64 {
        let l = self.layout();
        let mut cost = 0.0;
        for k in 0..self.horizon {
            let x = z.rows_range(l.x(k)).clone_owned();
            let u = z.rows_range(l.u(k)).clone_owned();
            cost += self.stage_cost(k, &x, &u);
        }
        cost + self.terminal_cost(&z.rows_range(l.x(self.horizon)).clone_owned())
    }

    /// Hessian of `c(z)` plus `Σ_k (z_k − δ_k + w_k)ᵀ G_k (·)`, in the `½ vᵀPv` convention.
    pub fn hessian(&self, g: &[Matrix]) -> Result<Matrix> {
        let l = self.layout();
        dim_check(g.len() == self.horizon, || format!("{} consensus weights for horizon {}", g.len(), self.horizon))?;
        let n = l.len();
        let mut p = Matrix::zeros(n, n);
        for k in 0..self.horizon {
            dim_check(g[k].shape() == (l.nz(), l.nz()), || format!("G_{k} has the wrong shape"))?;
            let xr = l.x(k);
            p.view_mut((xr.start, xr.start), (l.n_x, l.n_x)).add_assign(&(&self.q[k] * 2.0));
            let ur = l.u(k);
            p.view_mut((ur.start, ur.start), (l.n_u, l.n_u)).add_assign(&(&self.r[k] * 2.0));
            let zr = l.z(k);
            p.view_mut((zr.start, zr.start), (l.nz(), l.nz())).add_assign(&(&g[k] * 2.0));
        }
        let xr = l.x(self.horizon);
        p.view_mut((xr.start, xr.start), (l.n_x, l.n_x)).add_assign(&(&self.q_terminal * 2.0));
        Ok(p)
    }

    /// Rows pinning `x₀` followed by the `N` dynamics blocks.
    pub fn dynamics_matrix(&self) -> Matrix {
        let l = self.layout();
        let m = &self.model;
        let nx = l.n_x;
        let mut aeq = Matrix::zeros(nx * (self.horizon + 1), l.len());
        aeq.view_mut((0, 0), (nx, nx)).fill_with_identity();
        for k in 0..self.horizon {
            let row = nx * (k + 1);
            aeq.view_mut((row, l.x(k + 1).start), (nx, nx)).fill_with_identity();
            aeq.view_mut((row, l.x(k).start), (nx, nx)).copy_from(&(-m.a()));
            aeq.view_mut((row, l.lambda(k).start), (nx, l.n_lambda)).copy_from(&(-m.d()));
            aeq.view_mut((row, l.u(k).start), (nx, l.n_u)).copy_from(&(-m.b()));
        }
        aeq
    }

    pub fn dynamics_rhs(&self) -> Vector {
        let nx = self.model.n_x();
        let mut beq = Vector::zeros(nx * (self.horizon + 1));
        beq.rows_mut(0, nx).copy_from(&self.x0);
        for k in 0..self.horizon {
            beq.rows_mut(nx * (k + 1), nx).copy_from(self.model.bias());
        }
        beq
    }

    /// Linear term and constant of the consensus penalty.
    pub fn consensus_linear(&self, deltas: &[Vector], duals: &[Vector], g: &[Matrix]) -> Result<(Vector, f64)> {
        let l = self.layout();
        dim_check(deltas.len() == self.horizon && duals.len() == self.horizon, || {
            format!("expected {} copies and duals, got {} and {}", self.horizon, deltas.len(), duals.len())
        })?;
        let mut r = Vector::zeros(l.len());
        let mut constant = 0.0;
        for k in 0..self.horizon {
            dim_check(deltas[k].len() == l.nz() && duals[k].len() == l.nz(), || {
                format!("copy or dual {k} has the wrong length")
            })?;
            let shift = &deltas[k] - &duals[k];
            let gs = &g[k] * &shift;
            r.rows_range_mut(l.z(k)).copy_from(&(-&gs * 2.0));
            constant += shift.dot(&gs);
        }
        Ok((r, constant))
    }
}

/// Quadratic step of the consensus iteration as a standalone QP.
///
/// Cost: `c(z) + Σ_k (z_k − δ_k + w_k)ᵀ G_k (z_k − δ_k + w_k)`; equalities
/// pin `x₀` and encode the `N` dynamics blocks; inequalities are the
/// problem's convex set.
pub fn assemble_mpc_qp(
    spec: &McpProblemSpec,
    deltas: &[Vector],
    duals: &[Vector],
    g: &[Matrix],
) -> Result<QuadraticProgram> {
    let p = spec.hessian(g)?;
    let (r, constant) = spec.consensus_linear(deltas, duals, g)?;
    QuadraticProgram::new(p, r)?
        .with_constant(constant)
        .with_equalities(spec.dynamics_matrix(), spec.dynamics_rhs())?
        .with_inequalities(spec.constraints.a.clone(), spec.constraints.b.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn toy() -> LcsModel {
        LcsModel::new(
            dmatrix![1.0, 0.1; 0.0, 1.0],
            dmatrix![0.0; 0.1],
            dmatrix![0.0; 0.2],
            dvector![0.0, 0.0],
            dmatrix![1.0, 0.0],
            dmatrix![1.0],
            dmatrix![0.0],
            dvector![0.5],
        )
        .unwrap()
    }

    #[test]
    fn layout_offsets() {
        let l = StackLayout::new(&toy(), 3);
        assert_eq!(l.nz(), 4);
        assert_eq!(l.len(), 14);
        assert_eq!(l.x(1), 4..6);
        assert_eq!(l.lambda(1), 6..7);
        assert_eq!(l.u(2), 11..12);
        assert_eq!(l.x(3), 12..14);
    }

    #[test]
    fn rejects_bad_costs() {
        let i2 = Matrix::identity(2, 2);
        let i1 = Matrix::identity(1, 1);
        assert!(McpProblemSpec::new(toy(), 0, i2.clone(), i1.clone(), i2.clone(), dvector![0.0, 0.0]).is_err());
        assert!(McpProblemSpec::new(toy(), 2, -&i2, i1.clone(), i2.clone(), dvector![0.0, 0.0]).is_err());
        assert!(McpProblemSpec::new(toy(), 2, i2.clone(), Matrix::zeros(1, 1), i2.clone(), dvector![0.0, 0.0]).is_err());
        assert!(McpProblemSpec::new(toy(), 2, i2.clone(), i1, i2, dvector![0.0]).is_err());
    }

    #[test]
    fn stage_bounds_produce_rows() {
        let spec = McpProblemSpec::new(
            toy(),
            3,
            Matrix::identity(2, 2),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2),
            dvector![0.0, 0.0],
        )
        .unwrap();
        let l = spec.layout();
        let mut set = ConvexSet::unconstrained(l.len());
        set.add_stage_bounds(&l, StageVar::State(0), Some(-1.0), Some(1.0)).unwrap();
        set.add_stage_bounds(&l, StageVar::Input(0), None, Some(2.0)).unwrap();
        assert_eq!(set.rows(), 3 * 2 + 3);
        assert!(set.add_stage_bounds(&l, StageVar::Force(1), None, Some(1.0)).is_err());
        let spec = spec.with_constraints(set).unwrap();
        assert!(spec.constraints().contains(&Vector::zeros(l.len()), 0.0));
    }
}
