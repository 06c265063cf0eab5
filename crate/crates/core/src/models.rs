//! Benchmark systems: cart-pole with soft walls and a two-gripper finger
//! gaiting task.
//!
//! Cart-pole state is `[x_c, θ, ẋ_c, θ̇]` with the pole tip at
//! `x_c − l_p sin θ`. Linearizing about `θ = 0`,
//!
//! ```text
//! M = [m_c + m_p   −m_p l_c ]      M q̈ = [u; m_p g l_c θ] + [−1 1; l_p −l_p] λ
//!     [−m_p l_c    m_p l_c² ]
//! ```
//!
//! where `λ = [right wall, left wall]`. Each wall is a spring of stiffness
//! `k` at distance `d`, so `λ ⊥ ±(−x_c + l_p θ) + λ/k + d ≥ 0`. Explicit Euler
//! with step `T_s` gives `A = I + T_s A_c`, `B = T_s B_c`, `D = T_s D_c`; the
//! contact rows are algebraic and are not scaled by `T_s`.
//!
//! Finger gaiting uses the semi-implicit Stewart–Trinkle step with unit
//! masses. State `[o, ȯ, g₁, ġ₁, g₂, ġ₂]`, forces
//! `[γ₁, f₁⁺, f₁⁻, γ₂, f₂⁺, f₂⁻]`, inputs `[a₁, a₂, n₁, n₂]` (gripper
//! accelerations, then normal forces):
//!
//! ```text
//! ȯ'  = ȯ  + h(f₁⁺ − f₁⁻ + f₂⁺ − f₂⁻) − h g        o'  = o  + h ȯ'
//! ġᵢ' = ġᵢ + h aᵢ − h(fᵢ⁺ − fᵢ⁻)                    gᵢ' = gᵢ + h ġᵢ'
//! 0 ≤ γᵢ  ⊥ μ nᵢ − fᵢ⁺ − fᵢ⁻ ≥ 0
//! 0 ≤ fᵢ⁺ ⊥ γᵢ + ȯ' − ġᵢ' ≥ 0
//! 0 ≤ fᵢ⁻ ⊥ γᵢ − ȯ' + ġᵢ' ≥ 0
//! ```
//!
//! Substituting the next-step velocities gives the `E`, `F`, `H`, `c` rows.

use serde::{Deserialize, Serialize};

use crate::controller::{C3Config, ProjectionWeight, WarmStart};
use crate::error::{Error, Result};
use crate::lcs::LcsModel;
use crate::problem::{ConvexSet, McpProblemSpec, StackLayout, StageVar};
use crate::projection::ProjectionMethod;
use crate::{Matrix, Vector};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    pub m_c: f64,
    pub m_p: f64,
    pub l_p: f64,
    pub l_c: f64,
    pub k1: f64,
    pub k2: f64,
    pub d: f64,
    pub t_s: f64,
}

impl CartPoleParams {
    pub fn sim() -> Self {
        Self {
            m_c: 0.978,
            m_p: 0.411,
            l_p: 0.6,
            l_c: 0.4267,
            k1: 50.0,
            k2: 50.0,
            d: 0.35,
            t_s: 0.01,
        }
    }

    /// Wall stiffness and distance of the physical rig.
    pub fn hw() -> Self {
        Self {
            k1: 100.0,
            k2: 100.0,
            d: 0.39,
            ..Self::sim()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.m_c, self.m_p, self.l_p, self.l_c, self.k1, self.k2, self.d, self.t_s];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("cart-pole parameters must be positive: {self:?}")))
        }
    }
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self::sim()
    }
}

pub fn cartpole_lcs(p: &CartPoleParams) -> Result<LcsModel> {
    p.validate()?;
    let (mc, mp, lc, lp, ts) = (p.m_c, p.m_p, p.l_c, p.l_p, p.t_s);
    let den = mc * lc;
    // M⁻¹ applied to the gravity, input and wall generalized forces
    let ddx_theta = mp * GRAVITY / mc;
    let ddth_theta = (mc + mp) * GRAVITY / den;
    let ddx_u = 1.0 / mc;
    let ddth_u = 1.0 / den;
    let ddx_wall = (lp - lc) / den;
    let ddth_wall = ((mc + mp) * lp - mp * lc) / (mc * mp * lc * lc);

    let mut a = Matrix::identity(4, 4);
    a[(0, 2)] = ts;
    a[(1, 3)] = ts;
    a[(2, 1)] = ts * ddx_theta;
    a[(3, 1)] = ts * ddth_theta;
    let b = Matrix::from_column_slice(4, 1, &[0.0, 0.0, ts * ddx_u, ts * ddth_u]);
    let d = Matrix::from_row_slice(
        4,
        2,
        &[0.0, 0.0, 0.0, 0.0, ts * ddx_wall, -ts * ddx_wall, ts * ddth_wall, -ts * ddth_wall],
    );
    let e = Matrix::from_row_slice(2, 4, &[-1.0, lp, 0.0, 0.0, 1.0, -lp, 0.0, 0.0]);
    let f = Matrix::from_diagonal(&Vector::from_vec(vec![1.0 / p.k1, 1.0 / p.k2]));
    LcsModel::new(a, b, d, Vector::zeros(4), e, f, Matrix::zeros(2, 1), Vector::from_element(2, p.d))
}

/// Solution of the discrete algebraic Riccati equation
/// `P = Q + AᵀPA − AᵀPB (R + BᵀPB)⁻¹ BᵀPA` by fixed-point iteration.
pub fn dare(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let bp = b.transpose() * &p;
        let s = r + &bp * b;
        let gain = s
            .cholesky()
            .ok_or_else(|| Error::InvalidInput("R + BᵀPB is not positive definite".into()))?
            .solve(&(&bp * a));
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * gain;
        let next = (&next + next.transpose()) * 0.5;
        let change = (&next - &p).amax();
        p = next;
        if !p.amax().is_finite() {
            break;
        }
        if change <= 1e-10 * (1.0 + p.amax()) {
            return Ok(p);
        }
    }
    Err(Error::InvalidInput("Riccati iteration did not converge (is (A, B) stabilizable?)".into()))
}

/// State and input weights used for the cart-pole experiments. The terminal
/// weight is the contact-free infinite-horizon cost.
pub fn cartpole_costs(model: &LcsModel) -> Result<(Matrix, Matrix, Matrix)> {
    let q = Matrix::from_diagonal(&Vector::from_vec(vec![10.0, 3.0, 1.0, 1.0]));
    let r = Matrix::identity(1, 1);
    let q_n = dare(model.a(), model.b(), &q, &r)?;
    Ok((q, r, q_n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerGaitingParams {
    pub gravity: f64,
    pub mu: f64,
    pub h: f64,
    pub g1_limits: (f64, f64),
    pub g2_limits: (f64, f64),
}

impl Default for FingerGaitingParams {
    fn default() -> Self {
        Self {
            gravity: GRAVITY,
            mu: 1.0,
            h: 0.1,
            g1_limits: (1.0, 3.0),
            g2_limits: (3.0, 5.0),
        }
    }
}

impl FingerGaitingParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu >= 0.0
            && self.h > 0.0
            && self.gravity.is_finite()
            && self.g1_limits.0 <= self.g1_limits.1
            && self.g2_limits.0 <= self.g2_limits.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid finger-gaiting parameters: {self:?}")))
        }
    }
}

pub fn finger_gaiting_lcs(p: &FingerGaitingParams) -> Result<LcsModel> {
    p.validate()?;
    let (h, mu, g) = (p.h, p.mu, p.gravity);
    let h2 = h * h;

    let mut a = Matrix::identity(6, 6);
    for pos in [0, 2, 4] {
        a[(pos, pos + 1)] = h;
    }
    let mut b = Matrix::zeros(6, 4);
    for (i, (pos, vel)) in [(2, 3), (4, 5)].into_iter().enumerate() {
        b[(vel, i)] = h;
        b[(pos, i)] = h2;
    }
    // friction on the object (+) and its reaction on the gripper (−)
    let obj = [0.0, 1.0, -1.0, 0.0, 1.0, -1.0];
    let grip1 = [0.0, -1.0, 1.0, 0.0, 0.0, 0.0];
    let grip2 = [0.0, 0.0, 0.0, 0.0, -1.0, 1.0];
    let mut d = Matrix::zeros(6, 6);
    for j in 0..6 {
        d[(1, j)] = h * obj[j];
        d[(0, j)] = h2 * obj[j];
        d[(3, j)] = h * grip1[j];
        d[(2, j)] = h2 * grip1[j];
        d[(5, j)] = h * grip2[j];
        d[(4, j)] = h2 * grip2[j];
    }
    let bias = Vector::from_vec(vec![-h2 * g, -h * g, 0.0, 0.0, 0.0, 0.0]);

    let mut e = Matrix::zeros(6, 6);
    let mut f = Matrix::zeros(6, 6);
    let mut hm = Matrix::zeros(6, 4);
    let mut c = Vector::zeros(6);
    for (i, (slack, vel)) in [(0usize, 3usize), (3, 5)].into_iter().enumerate() {
        let grip = if i == 0 { &grip1 } else { &grip2 };
        // friction cone
        f[(slack, slack + 1)] = -1.0;
        f[(slack, slack + 2)] = -1.0;
        hm[(slack, 2 + i)] = mu;
        // relative sliding velocity ȯ' − ġᵢ' with sign ±
        for (row, sign) in [(slack + 1, 1.0), (slack + 2, -1.0)] {
            f[(row, slack)] = 1.0;
            e[(row, 1)] = sign;
            e[(row, vel)] = -sign;
            for j in 0..6 {
                f[(row, j)] += sign * h * (obj[j] - grip[j]);
            }
            hm[(row, i)] = -sign * h;
            c[row] = -sign * h * g;
        }
    }
    LcsModel::new(a, b, d, bias, e, f, hm, c)
}

/// Stage weights for lifting the object to `o = 0`; gripper positions are
/// left free and only bounded.
pub fn finger_gaiting_costs() -> (Matrix, Matrix, Matrix) {
    let q = Matrix::from_diagonal(&Vector::from_vec(vec![100.0, 3.0, 0.0, 0.1, 0.0, 0.1]));
    let r = Matrix::identity(4, 4) * 0.01;
    let q_n = &q * 10.0;
    (q, r, q_n)
}

/// Gripper travel limits on `x_1 … x_N` and nonnegative normal forces.
pub fn finger_gaiting_constraints(layout: &StackLayout, p: &FingerGaitingParams) -> Result<ConvexSet> {
    let mut set = ConvexSet::unconstrained(layout.len());
    set.add_stage_bounds(layout, StageVar::State(2), Some(p.g1_limits.0), Some(p.g1_limits.1))?;
    set.add_stage_bounds(layout, StageVar::State(4), Some(p.g2_limits.0), Some(p.g2_limits.1))?;
    set.add_stage_bounds(layout, StageVar::Input(2), Some(0.0), None)?;
    set.add_stage_bounds(layout, StageVar::Input(3), Some(0.0), None)?;
    Ok(set)
}

/// Named benchmark configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CartpoleSim,
    CartpoleHw,
    FingerGaiting,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::CartpoleSim, Preset::CartpoleHw, Preset::FingerGaiting];

    pub fn name(&self) -> &'static str {
        match self {
            Self::CartpoleSim => "cartpole-sim",
            Self::CartpoleHw => "cartpole-hw",
            Self::FingerGaiting => "finger-gaiting",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown preset '{name}'")))
    }

    pub fn model(&self) -> Result<LcsModel> {
        match self {
            Self::CartpoleSim => cartpole_lcs(&CartPoleParams::sim()),
            Self::CartpoleHw => cartpole_lcs(&CartPoleParams::hw()),
            Self::FingerGaiting => finger_gaiting_lcs(&FingerGaitingParams::default()),
        }
    }

    /// Plant time step in seconds.
    pub fn time_step(&self) -> f64 {
        match self {
            Self::CartpoleSim => CartPoleParams::sim().t_s,
            Self::CartpoleHw => CartPoleParams::hw().t_s,
            Self::FingerGaiting => FingerGaitingParams::default().h,
        }
    }

    pub fn horizon(&self) -> usize {
        10
    }

    /// Problem template at `x0` with the preset's costs and constraints.
    pub fn problem(&self, x0: Vector) -> Result<McpProblemSpec> {
        let model = self.model()?;
        match self {
            Self::CartpoleSim | Self::CartpoleHw => {
                let (q, r, q_n) = cartpole_costs(&model)?;
                McpProblemSpec::new(model, self.horizon(), q, r, q_n, x0)
            }
            Self::FingerGaiting => {
                let (q, r, q_n) = finger_gaiting_costs();
                let spec = McpProblemSpec::new(model, self.horizon(), q, r, q_n, x0)?;
                let set = finger_gaiting_constraints(&spec.layout(), &FingerGaitingParams::default())?;
                spec.with_constraints(set)
            }
        }
    }

    /// Controller settings reported for each benchmark. All presets carry
    /// copies and duals across control steps.
    pub fn controller(&self) -> C3Config {
        let mut cfg = match self {
            Self::CartpoleSim => C3Config::scaled_identity(10, 7, 0.1, 2.0, ProjectionMethod::Lcp),
            Self::CartpoleHw => C3Config::scaled_identity(10, 7, 0.5, 2.3, ProjectionMethod::Lcp),
            Self::FingerGaiting => C3Config::scaled_identity(10, 16, 1.0, 1.2, ProjectionMethod::miqp()),
        };
        if *self == Self::FingerGaiting {
            cfg.weight = ProjectionWeight::Blocks {
                x: 1.0,
                lambda: 1.0,
                u: 0.1,
            };
        }
        cfg.warm_start = WarmStart::CopiesAndDuals;
        cfg
    }
}
