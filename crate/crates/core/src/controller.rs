//! The consensus complementarity control loop and receding-horizon driver.
//!
//! One control step runs exactly `θ` iterations of
//!
//! ```text
//! z      ← argmin c(z) + Σ_k (z_k − δ_k + w_k)ᵀ G_k (z_k − δ_k + w_k)   s.t. dynamics, 𝒞
//! δ_k    ← Π_𝓗k(z_k + w_k)                                          (weight U)
//! w_k    ← w_k + z_k − δ_k
//! G_k    ← ρ_k G_k,   w_k ← w_k / ρ_k
//! ```
//!
//! and returns the first input of the final `z`.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{dim_check, Error, Result};
use crate::lcs::{lcs_step, LcsModel, LcsStep, StateDisturbance, Trajectory};
use crate::linalg::is_pd;
use crate::problem::{McpProblemSpec, StackLayout};
use crate::projection::{block_weight, ComplementaritySet, ProjectionMethod, ProjectionTarget, ProjectionWarning};
use crate::qp::{QpOptions, QpSolver, QpStatus};
use crate::{Matrix, Vector};

/// Weight `U` of the projection step.
#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionWeight {
    /// `diag(x·I, λ·I, u·I)`.
    Blocks { x: f64, lambda: f64, u: f64 },
    Matrix(Matrix),
    /// The current (scaled) consensus weight `G_k`.
    Consensus,
}

impl Default for ProjectionWeight {
    fn default() -> Self {
        Self::Blocks {
            x: 1.0,
            lambda: 0.01,
            u: 1.0,
        }
    }
}

/// How `δ⁰` and `w⁰` are seeded from the previous control step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarmStart {
    /// Use the configured initial values (zero by default) every step.
    #[default]
    None,
    /// Copies shifted forward by one stage; duals from the configuration.
    Copies,
    /// Copies and duals shifted forward by one stage. Duals are rescaled so
    /// that the multiplier `G_k w_k` carries over to the reset weights.
    CopiesAndDuals,
}

#[derive(Debug, Clone)]
pub struct C3Config {
    pub theta: usize,
    /// Consensus weights; one matrix is broadcast to every stage.
    pub g: Vec<Matrix>,
    /// Scaling factors; one value is broadcast to every stage.
    pub rho: Vec<f64>,
    pub projection: ProjectionMethod,
    pub weight: ProjectionWeight,
    pub initial_delta: Option<Vec<Vector>>,
    pub initial_dual: Option<Vec<Vector>>,
    pub warm_start: WarmStart,
    pub parallel_projection: bool,
    pub qp: QpOptions,
}

impl C3Config {
    pub fn new(theta: usize, g: Matrix, rho: f64, projection: ProjectionMethod) -> Self {
        Self {
            theta,
            g: vec![g],
            rho: vec![rho],
            projection,
            weight: ProjectionWeight::default(),
            initial_delta: None,
            initial_dual: None,
            warm_start: WarmStart::None,
            parallel_projection: false,
            qp: QpOptions::default(),
        }
    }

    /// `G = s·I` on a stage of width `nz`.
    pub fn scaled_identity(theta: usize, nz: usize, s: f64, rho: f64, projection: ProjectionMethod) -> Self {
        Self::new(theta, Matrix::identity(nz, nz) * s, rho, projection)
    }

    fn stage_weights(&self, layout: &StackLayout) -> Result<(Vec<Matrix>, Vec<f64>)> {
        let n = layout.horizon;
        let nz = layout.nz();
        if self.theta == 0 {
            return Err(Error::InvalidInput("θ must be at least 1".into()));
        }
        let g = match self.g.len() {
            1 => vec![self.g[0].clone(); n],
            len if len == n => self.g.clone(),
            len => return Err(Error::Dimension(format!("{len} consensus weights for horizon {n}"))),
        };
        let rho = match self.rho.len() {
            1 => vec![self.rho[0]; n],
            len if len == n => self.rho.clone(),
            len => return Err(Error::Dimension(format!("{len} scaling factors for horizon {n}"))),
        };
        for (k, gk) in g.iter().enumerate() {
            dim_check(gk.shape() == (nz, nz), || format!("G_{k} is {:?}, expected {nz}x{nz}", gk.shape()))?;
            if !is_pd(gk) {
                return Err(Error::InvalidInput(format!("G_{k} is not symmetric positive definite")));
            }
        }
        if let Some(k) = rho.iter().position(|r| !(*r > 0.0)) {
            return Err(Error::InvalidInput(format!("ρ_{k} must be positive")));
        }
        Ok((g, rho))
    }

    /// `U` for stage weight `gk`.
    pub fn projection_weight(&self, layout: &StackLayout, gk: &Matrix) -> Matrix {
        match &self.weight {
            ProjectionWeight::Blocks { x, lambda, u } => block_weight(layout.n_x, layout.n_lambda, layout.n_u, (*x, *lambda, *u)),
            ProjectionWeight::Matrix(m) => m.clone(),
            ProjectionWeight::Consensus => gk.clone(),
        }
    }
}

/// One ADMM iterate. `w_prev` is the dual entering the iteration and `w` the
/// dual after the update and rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub z: Vector,
    pub delta: Vec<Vector>,
    pub w_prev: Vec<Vector>,
    pub w: Vec<Vector>,
    /// `z_k − δ_k + w_k` with the updated, unscaled dual.
    pub residual: Vec<Vector>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct C3Workspace {
    pub z: Vector,
    pub delta: Vec<Vector>,
    pub w: Vec<Vector>,
    pub g: Vec<Matrix>,
    pub history: Vec<IterateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    /// `‖z − δ‖` over the stages with copies.
    pub primal_residual: f64,
    /// Largest complementarity residual of the QP iterate `z_k`.
    pub complementarity_residual: f64,
    pub qp_objective: f64,
    pub qp_ms: f64,
    pub projection_ms: f64,
    pub dual_ms: f64,
    pub warnings: Vec<(usize, ProjectionWarning)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct C3StepResult {
    pub u0: Vector,
    pub states: Vec<Vector>,
    pub forces: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub iterations: Vec<IterationLog>,
    pub workspace: C3Workspace,
}

impl C3StepResult {
    pub fn qp_ms(&self) -> f64 {
        self.iterations.iter().map(|i| i.qp_ms).sum()
    }
    pub fn projection_ms(&self) -> f64 {
        self.iterations.iter().map(|i| i.projection_ms).sum()
    }
    pub fn final_complementarity_residual(&self) -> f64 {
        self.iterations.last().map_or(0.0, |i| i.complementarity_residual)
    }
}

struct CachedSolver {
    p: Matrix,
    aeq: Matrix,
    ain: Matrix,
    solver: QpSolver,
}

/// Runs C3 control steps, reusing QP factorizations while the problem
/// structure (model, costs, constraint rows) is unchanged.
pub struct C3Controller {
    config: C3Config,
    cache: Vec<Option<CachedSolver>>,
    previous: Option<(Vec<Vector>, Vec<Vector>)>,
}

impl C3Controller {
    pub fn new(config: C3Config) -> Result<Self> {
        if config.theta == 0 {
            return Err(Error::InvalidInput("θ must be at least 1".into()));
        }
        let theta = config.theta;
        Ok(Self {
            config,
            cache: (0..theta).map(|_| None).collect(),
            previous: None,
        })
    }

    pub fn config(&self) -> &C3Config {
        &self.config
    }

    pub fn reset(&mut self) {
        self.previous = None;
    }

    fn solver(&mut self, i: usize, p: Matrix, aeq: &Matrix, ain: &Matrix) -> Result<&QpSolver> {
        let hit = matches!(&self.cache[i], Some(c) if c.p == p && &c.aeq == aeq && &c.ain == ain);
        if !hit {
            let solver = QpSolver::new(&p, aeq, ain, self.config.qp)?;
            self.cache[i] = Some(CachedSolver {
                p,
                aeq: aeq.clone(),
                ain: ain.clone(),
                solver,
            });
        }
        Ok(&self.cache[i].as_ref().expect("just filled").solver)
    }

    fn initial_copies(&self, layout: &StackLayout) -> Result<(Vec<Vector>, Vec<Vector>)> {
        let n = layout.horizon;
        let nz = layout.nz();
        let check = |v: &Vec<Vector>, what: &str| {
            dim_check(v.len() == n && v.iter().all(|d| d.len() == nz), || {
                format!("initial {what} must hold {n} vectors of length {nz}")
            })
        };
        let shift = |prev: &Vec<Vector>| {
            let mut shifted: Vec<Vector> = prev[1..].to_vec();
            shifted.push(prev[prev.len() - 1].clone());
            shifted
        };
        let previous = self.previous.as_ref().filter(|(d, _)| d.len() == n);
        let delta = match (self.config.warm_start, previous, &self.config.initial_delta) {
            (WarmStart::Copies | WarmStart::CopiesAndDuals, Some((d, _)), _) => shift(d),
            (_, _, Some(d)) => {
                check(d, "copies")?;
                d.clone()
            }
            _ => vec![Vector::zeros(nz); n],
        };
        let w = match (self.config.warm_start, previous, &self.config.initial_dual) {
            (WarmStart::CopiesAndDuals, Some((_, w)), _) => shift(w),
            (_, _, Some(w)) => {
                check(w, "duals")?;
                w.clone()
            }
            _ => vec![Vector::zeros(nz); n],
        };
        Ok((delta, w))
    }

    /// One control step: exactly `θ` consensus iterations.
    pub fn solve(&mut self, spec: &McpProblemSpec) -> Result<C3StepResult> {
        let layout = spec.layout();
        let n = layout.horizon;
        let (mut g, rho) = self.config.stage_weights(&layout)?;
        let (mut delta, mut w) = self.initial_copies(&layout)?;
        let set = ComplementaritySet::from_model(spec.model());
        let aeq = spec.dynamics_matrix();
        let beq = spec.dynamics_rhs();
        let ain = spec.constraints().a.clone();
        let bin = spec.constraints().b.clone();

        let mut z = Vector::zeros(layout.len());
        let mut logs = Vec::with_capacity(self.config.theta);
        let mut history = Vec::with_capacity(self.config.theta);
        for i in 0..self.config.theta {
            let t0 = Instant::now();
            let p = spec.hessian(&g)?;
            let (r, constant) = spec.consensus_linear(&delta, &w, &g)?;
            let sol = self.solver(i, p, &aeq, &ain)?.solve(&r, &beq, &bin)?;
            match sol.status {
                QpStatus::Optimal => {}
                QpStatus::Infeasible => {
                    return Err(Error::QpInfeasible(format!(
                        "quadratic step infeasible at iteration {i} (x0 = {:?})",
                        spec.x0().as_slice()
                    )))
                }
                QpStatus::IterLimit => {
                    let viol = (&aeq * &sol.v - &beq)
                        .amax()
                        .max((&ain * &sol.v - &bin).iter().fold(0.0_f64, |a, &s| a.max(s)));
                    if !(viol < 1e-6) {
                        return Err(Error::QpIterLimit);
                    }
                }
            }
            z = sol.v;
            let qp_ms = t0.elapsed().as_secs_f64() * 1e3;

            let t1 = Instant::now();
            let targets: Vec<ProjectionTarget> = (0..n)
                .map(|k| {
                    let point = z.rows_range(layout.z(k)).clone_owned() + &w[k];
                    ProjectionTarget::new(point, self.config.projection_weight(&layout, &g[k]))
                })
                .collect::<Result<_>>()?;
            let method = self.config.projection;
            let project = |k: usize| {
                method.project(&targets[k], &set).map_err(|e| Error::Projection {
                    k,
                    iteration: i,
                    source: Box::new(e),
                })
            };
            let results: Vec<_> = if self.config.parallel_projection {
                (0..n).into_par_iter().map(project).collect::<Result<_>>()?
            } else {
                (0..n).map(project).collect::<Result<_>>()?
            };
            let projection_ms = t1.elapsed().as_secs_f64() * 1e3;

            let t2 = Instant::now();
            let mut warnings = Vec::new();
            let w_prev = w.clone();
            let mut residual = Vec::with_capacity(n);
            let mut primal = 0.0;
            for (k, res) in results.into_iter().enumerate() {
                warnings.extend(res.warnings.iter().map(|&wn| (k, wn)));
                delta[k] = res.delta;
                let zk = z.rows_range(layout.z(k)).clone_owned();
                let diff = &zk - &delta[k];
                primal += diff.norm_squared();
                w[k] = &w[k] + &zk - &delta[k];
                residual.push(&diff + &w[k]);
                g[k] *= rho[k];
                w[k] /= rho[k];
            }
            let dual_ms = t2.elapsed().as_secs_f64() * 1e3;

            let comp = (0..n)
                .map(|k| set.residual(&z.rows_range(layout.z(k)).clone_owned()))
                .fold(0.0_f64, f64::max);
            logs.push(IterationLog {
                primal_residual: primal.sqrt(),
                complementarity_residual: comp,
                qp_objective: sol.objective + constant,
                qp_ms,
                projection_ms,
                dual_ms,
                warnings,
            });
            history.push(IterateRecord {
                z: z.clone(),
                delta: delta.clone(),
                w_prev,
                w: w.clone(),
                residual,
            });
        }

        let growth: Vec<f64> = rho.iter().map(|r| r.powi(self.config.theta as i32)).collect();
        self.previous = Some((delta.clone(), w.iter().zip(&growth).map(|(wk, s)| wk * *s).collect()));
        let states = (0..=n).map(|k| z.rows_range(layout.x(k)).clone_owned()).collect();
        let forces = (0..n).map(|k| z.rows_range(layout.lambda(k)).clone_owned()).collect();
        let inputs: Vec<Vector> = (0..n).map(|k| z.rows_range(layout.u(k)).clone_owned()).collect();
        Ok(C3StepResult {
            u0: inputs[0].clone(),
            states,
            forces,
            inputs,
            iterations: logs,
            workspace: C3Workspace {
                z,
                delta,
                w,
                g,
                history,
            },
        })
    }
}

/// Single C3 control step with a fresh controller.
pub fn c3_solve(spec: &McpProblemSpec, config: &C3Config) -> Result<C3StepResult> {
    C3Controller::new(config.clone())?.solve(spec)
}

/// `Σ_{k<N} (x_kᵀQ_k x_k + u_kᵀR_k u_k) + x_NᵀQ_N x_N` along the rollout of
/// `inputs` through the spec's model from its `x₀`.
pub fn cost_to_go(spec: &McpProblemSpec, inputs: &[Vector]) -> Result<f64> {
    let n = spec.horizon();
    dim_check(inputs.len() >= n, || format!("{} inputs for horizon {n}", inputs.len()))?;
    let mut x = spec.x0().clone();
    let mut cost = 0.0;
    for (k, u) in inputs.iter().take(n).enumerate() {
        cost += spec.stage_cost(k, &x, u);
        x = lcs_step(spec.model(), &x, u)
            .map_err(|e| match e {
                Error::LcpFailure { status, .. } => Error::LcpFailure { step: Some(k), status },
                other => other,
            })?
            .x_next;
    }
    Ok(cost + spec.terminal_cost(&x))
}

/// Cost of an already-recorded state/input sequence (`states` holds `N + 1`
/// entries).
pub fn realized_cost(spec: &McpProblemSpec, states: &[Vector], inputs: &[Vector]) -> Result<f64> {
    let n = spec.horizon();
    dim_check(states.len() > n && inputs.len() >= n, || {
        format!("need {} states and {n} inputs, got {} and {}", n + 1, states.len(), inputs.len())
    })?;
    let stages: f64 = (0..n).map(|k| spec.stage_cost(k, &states[k], &inputs[k])).sum();
    Ok(stages + spec.terminal_cost(&states[n]))
}

/// Step oracle for the closed loop.
pub trait Plant {
    fn step(&mut self, x: &Vector, u: &Vector) -> Result<LcsStep>;
}

/// Input added to the commanded input over a window of plant steps.
#[derive(Debug, Clone, PartialEq)]
pub struct InputPush {
    pub start_step: usize,
    pub steps: usize,
    pub value: Vector,
}

/// An LCS simulated plant with optional state noise and input pushes.
pub struct LcsPlant {
    model: LcsModel,
    noise: Option<Box<dyn StateDisturbance + Send>>,
    pushes: Vec<InputPush>,
    step_index: usize,
}

impl LcsPlant {
    pub fn new(model: LcsModel) -> Self {
        Self {
            model,
            noise: None,
            pushes: Vec::new(),
            step_index: 0,
        }
    }

    pub fn with_noise(mut self, noise: Box<dyn StateDisturbance + Send>) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn with_push(mut self, push: InputPush) -> Result<Self> {
        dim_check(push.value.len() == self.model.n_u(), || "push has the wrong input dimension".into())?;
        self.pushes.push(push);
        Ok(self)
    }

    pub fn model(&self) -> &LcsModel {
        &self.model
    }

    /// Input actually applied at the current step.
    pub fn applied_input(&self, u: &Vector) -> Vector {
        let mut applied = u.clone();
        for p in &self.pushes {
            if (p.start_step..p.start_step + p.steps).contains(&self.step_index) {
                applied += &p.value;
            }
        }
        applied
    }
}

impl Plant for LcsPlant {
    fn step(&mut self, x: &Vector, u: &Vector) -> Result<LcsStep> {
        let applied = self.applied_input(u);
        let mut step = lcs_step(&self.model, x, &applied).map_err(|e| match e {
            Error::LcpFailure { status, .. } => Error::LcpFailure {
                step: Some(self.step_index),
                status,
            },
            other => other,
        })?;
        if let Some(noise) = self.noise.as_mut() {
            step.x_next += noise.sample(self.step_index, self.model.n_x());
        }
        self.step_index += 1;
        Ok(step)
    }
}

pub type Relinearize<'a> = dyn Fn(&Vector, &Vector) -> Result<LcsModel> + 'a;
pub type StopCondition<'a> = dyn Fn(&Trajectory) -> bool + 'a;

pub struct RecedingHorizonOptions<'a> {
    /// Plant steps to simulate.
    pub steps: usize,
    /// Plant steps per control update (zero-order hold in between).
    pub steps_per_control: usize,
    pub relinearize: Option<&'a Relinearize<'a>>,
    /// Checked after every plant step; ends the run early when true.
    pub stop: Option<&'a StopCondition<'a>>,
    /// Keep per-iteration iterates in the logged step results.
    pub keep_iterates: bool,
}

impl Default for RecedingHorizonOptions<'_> {
    fn default() -> Self {
        Self {
            steps: 100,
            steps_per_control: 1,
            relinearize: None,
            stop: None,
            keep_iterates: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlRecord {
    pub plant_step: usize,
    pub result: C3StepResult,
}

#[derive(Debug)]
pub struct RecedingHorizonRun {
    pub trajectory: Trajectory,
    pub controls: Vec<ControlRecord>,
    /// Set when the plant or the controller failed; logs cover the steps before it.
    pub failure: Option<Error>,
}

/// Closed loop: re-solve from the measured state, apply `u₀`, repeat.
/// Stage costs in the trajectory use `Q_0` and `R_0` of the template.
pub fn c3_receding_horizon(
    plant: &mut dyn Plant,
    template: &McpProblemSpec,
    controller: &mut C3Controller,
    x0: &Vector,
    opts: &RecedingHorizonOptions<'_>,
) -> RecedingHorizonRun {
    let mut run = RecedingHorizonRun {
        trajectory: Trajectory::new(x0.clone()),
        controls: Vec::new(),
        failure: None,
    };
    let every = opts.steps_per_control.max(1);
    let mut spec = template.clone();
    let mut x = x0.clone();
    let mut u = Vector::zeros(template.model().n_u());
    for step in 0..opts.steps {
        if step % every == 0 {
            let rebuilt = match opts.relinearize {
                Some(f) => f(&x, &u).and_then(|m| spec.clone().with_model(m)),
                None => Ok(spec.clone()),
            }
            .and_then(|s| s.with_x0(x.clone()));
            match rebuilt.and_then(|s| {
                let r = controller.solve(&s);
                spec = s;
                r
            }) {
                Ok(mut result) => {
                    u = result.u0.clone();
                    if !opts.keep_iterates {
                        result.workspace.history.clear();
                    }
                    run.controls.push(ControlRecord { plant_step: step, result });
                }
                Err(e) => {
                    run.failure = Some(e);
                    return run;
                }
            }
        }
        match plant.step(&x, &u) {
            Ok(next) => {
                let cost = spec.stage_cost(0, &x, &u);
                x = next.x_next.clone();
                run.trajectory.push(next, u.clone(), cost);
            }
            Err(e) => {
                run.failure = Some(Error::Plant {
                    step,
                    source: Box::new(e),
                });
                return run;
            }
        }
        if opts.stop.is_some_and(|f| f(&run.trajectory)) {
            break;
        }
    }
    run
}
