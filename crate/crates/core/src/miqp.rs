//! Full-horizon mixed-integer MPC with big-M complementarity.
//!
//! Every pair `(λ_{k,i}, y_{k,i})` with `y_k = E x_k + F λ_k + H u_k + c`
//! gets a binary `s_{k,i}`:
//!
//! ```text
//! 0 ≤ λ_{k,i} ≤ M (1 − s_{k,i}),    0 ≤ y_{k,i} ≤ M s_{k,i}
//! ```
//!
//! solved by branch-and-bound over the stacked `z`, branching on the
//! earliest time step first.

use crate::bnb::{branch_and_bound, AffineRow, BnbOptions, BnbProblem, BnbStatus, Incumbent, Pair};
use crate::controller::{c3_solve, C3Config};
use crate::error::{Error, Result};
use crate::lcs::lcs_step;
use crate::problem::McpProblemSpec;
use crate::projection::{ModeVector, ProjectionMethod, DEFAULT_BIG_M};
use crate::{Matrix, Vector};

/// Largest `N·n_λ` searched without an explicit node budget.
pub const MAX_BINARIES: usize = 40;

/// Node budget used when the problem is under [`MAX_BINARIES`].
pub const DEFAULT_NODE_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct FullMiqpOptions {
    pub big_m: f64,
    pub node_budget: Option<usize>,
    pub seed: Seed,
}

/// Where the first incumbent comes from.
#[derive(Debug, Clone, Default)]
pub enum Seed {
    Cold,
    /// LCP-projection C3 with `θ = 10`, `G = 0.1·I`, `ρ = 2`.
    #[default]
    LcpC3,
    Controller(C3Config),
}

impl Default for FullMiqpOptions {
    fn default() -> Self {
        Self {
            big_m: DEFAULT_BIG_M,
            node_budget: None,
            seed: Seed::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MiqpSolution {
    pub z: Vector,
    pub states: Vec<Vector>,
    pub forces: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub objective: f64,
    /// Per-step modes; `true` where the force is clamped to zero.
    pub modes: Vec<ModeVector>,
    pub nodes: usize,
    /// The node budget ran out before the search was complete.
    pub suboptimal: bool,
    /// Objective of the seeding rollout, when one was feasible.
    pub seed_objective: Option<f64>,
}

fn build(spec: &McpProblemSpec, big_m: f64) -> Result<BnbProblem> {
    let l = spec.layout();
    let m = spec.model();
    let n = l.len();
    let mut pairs = Vec::with_capacity(spec.horizon() * l.n_lambda);
    for k in 0..spec.horizon() {
        for i in 0..l.n_lambda {
            let mut lam = Vector::zeros(n);
            lam[l.lambda(k).start + i] = 1.0;
            let mut gap = Vector::zeros(n);
            gap.rows_range_mut(l.x(k)).copy_from(&m.e().row(i).transpose());
            gap.rows_range_mut(l.lambda(k)).copy_from(&m.f().row(i).transpose());
            gap.rows_range_mut(l.u(k)).copy_from(&m.h().row(i).transpose());
            pairs.push(Pair {
                lambda: AffineRow { coeffs: lam, offset: 0.0 },
                gap: AffineRow {
                    coeffs: gap,
                    offset: m.c()[i],
                },
                group: k,
                big_m,
            });
        }
    }
    let zeros = vec![Matrix::zeros(l.nz(), l.nz()); spec.horizon()];
    Ok(BnbProblem {
        p: spec.hessian(&zeros)?,
        r: Vector::zeros(n),
        constant: 0.0,
        aeq: spec.dynamics_matrix(),
        beq: spec.dynamics_rhs(),
        ain: spec.constraints().a.clone(),
        bin: spec.constraints().b.clone(),
        pairs,
    })
}

/// Rolls the seed controller's inputs through the model; returns the stacked
/// vector when it is feasible for the mixed-integer problem.
fn seed_incumbent(spec: &McpProblemSpec, seed: &Seed, big_m: f64) -> Option<Incumbent> {
    let nz = spec.layout().nz();
    let cfg = match seed {
        Seed::Cold => return None,
        Seed::LcpC3 => C3Config::scaled_identity(10, nz, 0.1, 2.0, ProjectionMethod::Lcp),
        Seed::Controller(cfg) => cfg.clone(),
    };
    let plan = c3_solve(spec, &cfg).ok()?;
    let l = spec.layout();
    let mut z = Vector::zeros(l.len());
    let mut x = spec.x0().clone();
    let mut modes = Vec::new();
    for k in 0..spec.horizon() {
        let u = &plan.inputs[k];
        let step = lcs_step(spec.model(), &x, u).ok()?;
        z.rows_range_mut(l.x(k)).copy_from(&x);
        z.rows_range_mut(l.lambda(k)).copy_from(&step.lambda);
        z.rows_range_mut(l.u(k)).copy_from(u);
        for (lam, gap) in step.lambda.iter().zip(step.y.iter()) {
            if *lam > big_m || *gap > big_m {
                return None;
            }
            modes.push(lam <= gap);
        }
        x = step.x_next;
    }
    z.rows_range_mut(l.x(spec.horizon())).copy_from(&x);
    if !spec.constraints().contains(&z, 1e-9) {
        return None;
    }
    Some(Incumbent {
        objective: spec.stacked_cost(&z),
        v: z,
        modes,
    })
}

/// Globally optimal receding-horizon plan over all mode sequences.
pub fn solve_full_miqp(spec: &McpProblemSpec, opts: &FullMiqpOptions) -> Result<MiqpSolution> {
    if !(opts.big_m > 0.0) {
        return Err(Error::InvalidInput("big-M must be positive".into()));
    }
    let l = spec.layout();
    let binaries = spec.horizon() * l.n_lambda;
    let budget = match opts.node_budget {
        Some(b) => b,
        None if binaries <= MAX_BINARIES => DEFAULT_NODE_BUDGET,
        None => {
            return Err(Error::SizeCap(format!(
                "{binaries} binaries exceed {MAX_BINARIES}; pass a node budget"
            )))
        }
    };
    let problem = build(spec, opts.big_m)?;
    let seed = seed_incumbent(spec, &opts.seed, opts.big_m);
    let seed_objective = seed.as_ref().map(|s| s.objective);
    let bnb = branch_and_bound(
        &problem,
        &BnbOptions {
            node_budget: budget,
            ..Default::default()
        },
        seed,
    );
    let suboptimal = bnb.status == BnbStatus::BudgetExhausted;
    let Some(best) = bnb.best else {
        return Err(if suboptimal {
            Error::SizeCap(format!("no feasible mode sequence within {budget} nodes"))
        } else {
            Error::InfeasibleSet
        });
    };

    let z = best.v;
    let n = spec.horizon();
    let modes = best
        .modes
        .chunks(l.n_lambda.max(1))
        .map(|c| ModeVector(c.to_vec()))
        .collect::<Vec<_>>();
    let modes = if l.n_lambda == 0 { vec![ModeVector(vec![]); n] } else { modes };
    Ok(MiqpSolution {
        objective: spec.stacked_cost(&z),
        states: (0..=n).map(|k| z.rows_range(l.x(k)).clone_owned()).collect(),
        forces: (0..n).map(|k| z.rows_range(l.lambda(k)).clone_owned()).collect(),
        inputs: (0..n).map(|k| z.rows_range(l.u(k)).clone_owned()).collect(),
        z,
        modes,
        nodes: bnb.nodes,
        suboptimal,
        seed_objective,
    })
}
