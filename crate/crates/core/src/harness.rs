//! Config-driven experiments: closed-loop trials, projection benchmarks and
//! cost-to-go comparisons, with CSV output.
//!
//! A config is TOML:
//!
//! ```toml
//! preset = "cartpole-sim"
//! trials = 10
//! seed = 7
//! duration = 10.0        # simulated seconds
//! control_rate = 100.0   # Hz
//!
//! [initial_state]
//! low = [-0.35, -0.01, -1.0, -1.0]
//! high = [0.35, 0.01, 1.0, 1.0]
//!
//! [controller]
//! projection = "lcp"
//!
//! [disturbance]
//! kind = "push"
//! low = 10.0
//! high = 15.0
//! duration = 0.25
//!
//! [success]
//! tolerance = 0.05
//! ```
//!
//! Every field except `seed` has a default; see [`ExperimentConfig`].

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    c3_receding_horizon, cost_to_go, realized_cost, C3Config, C3Controller, InputPush, LcsPlant, ProjectionWeight,
    RecedingHorizonOptions, RecedingHorizonRun, WarmStart,
};
use crate::error::{Error, Result};
use crate::lcs::{simulate, GaussianDisturbance, LcsModel, Trajectory};
use crate::miqp::{solve_full_miqp, FullMiqpOptions};
use crate::models::Preset;
use crate::problem::McpProblemSpec;
use crate::projection::{ComplementaritySet, ProjectionMethod, ProjectionTarget};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Diagonals of `Q`, `R` and `Q_N`.
    pub q: Option<Vec<f64>>,
    pub r: Option<Vec<f64>>,
    pub q_terminal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub theta: Option<usize>,
    /// `G = g·I`.
    pub g: Option<f64>,
    pub rho: Option<f64>,
    /// `miqp`, `lcp` or `admm`.
    pub projection: Option<String>,
    pub big_m: Option<f64>,
    /// `[x, λ, u]` block weights of `U`, or omit for the preset's.
    pub weight: Option<[f64; 3]>,
    /// Use the consensus weight `G_k` as `U`.
    #[serde(default)]
    pub consensus_weight: bool,
    /// `none`, `copies` or `copies-and-duals`.
    pub warm_start: Option<String>,
    pub parallel_projection: Option<bool>,
}

/// Initial states: `fixed`, or uniform between `low` and `high`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub fixed: Option<Vec<f64>>,
    pub low: Option<Vec<f64>>,
    pub high: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Disturbance {
    /// Additive state noise after every plant step.
    Gaussian { sigma: f64 },
    /// Input push of magnitude `U[low, high]` on one input channel.
    Push {
        low: f64,
        high: f64,
        /// Seconds.
        duration: f64,
        /// Seconds after the start of the run.
        #[serde(default)]
        start: f64,
        #[serde(default)]
        input: usize,
    },
}

/// A trial counts as stabilized when the selected states stay within
/// `tolerance` (∞-norm) of `target` over the final `hold` seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuccessCriterion {
    /// State indices checked; all when omitted.
    pub states: Option<Vec<usize>>,
    pub target: Option<Vec<f64>>,
    pub tolerance: f64,
    #[serde(default)]
    pub hold: f64,
    /// End a trial as soon as the band is reached.
    #[serde(default)]
    pub stop_early: bool,
}

impl Default for SuccessCriterion {
    fn default() -> Self {
        Self {
            states: None,
            target: None,
            tolerance: 0.05,
            hold: 0.0,
            stop_early: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "yes")]
    pub trajectories: bool,
    #[serde(default = "yes")]
    pub summary: bool,
    /// Wall-clock columns; when off they are written as zero so that
    /// repeated runs produce byte-identical files.
    #[serde(default = "yes")]
    pub timings: bool,
}

fn yes() -> bool {
    true
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            trajectories: true,
            summary: true,
            timings: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    /// Inline model; replaces the preset's.
    pub model: Option<LcsModel>,
    /// Plant time step in seconds; required with an inline model and no preset.
    pub time_step: Option<f64>,
    pub horizon: Option<usize>,
    #[serde(default)]
    pub costs: CostConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default = "one")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub initial_state: InitialState,
    pub disturbance: Option<Disturbance>,
    /// Simulated seconds per trial.
    #[serde(default = "ten")]
    pub duration: f64,
    /// Control updates per second; every plant step when omitted.
    pub control_rate: Option<f64>,
    #[serde(default)]
    pub success: SuccessCriterion,
    #[serde(default)]
    pub outputs: Outputs,
    /// Constant input for open-loop `simulate`.
    pub open_loop_input: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}
fn ten() -> f64 {
    10.0
}

fn diag(v: &[f64], n: usize, what: &str) -> Result<Matrix> {
    if v.len() != n {
        return Err(Error::InvalidInput(format!("{what} needs {n} diagonal entries, got {}", v.len())));
    }
    Ok(Matrix::from_diagonal(&Vector::from_column_slice(v)))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.preset.is_none() && self.model.is_none() {
            return Err(Error::InvalidInput("config needs a preset or an inline model".into()));
        }
        if self.time_step().is_none_or(|t| !(t > 0.0)) {
            return Err(Error::InvalidInput("time_step must be positive".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidInput("duration must be positive".into()));
        }
        if self.control_rate.is_some_and(|r| !(r > 0.0)) {
            return Err(Error::InvalidInput("control_rate must be positive".into()));
        }
        if let Some(Disturbance::Gaussian { sigma }) = self.disturbance {
            if !(sigma >= 0.0) {
                return Err(Error::InvalidInput("sigma must be nonnegative".into()));
            }
        }
        if let Some(Disturbance::Push { low, high, duration, .. }) = self.disturbance {
            if !(low <= high) || !(duration >= 0.0) {
                return Err(Error::InvalidInput("push needs low ≤ high and a nonnegative duration".into()));
            }
        }
        let m = self.model()?;
        if self.controller.projection.is_some() {
            self.projection()?;
        }
        self.warm_start()?;
        let init = &self.initial_state;
        for v in [&init.fixed, &init.low, &init.high].into_iter().flatten() {
            if v.len() != m.n_x() {
                return Err(Error::Dimension(format!("initial state needs {} entries", m.n_x())));
            }
        }
        if init.fixed.is_none() && init.low.is_some() != init.high.is_some() {
            return Err(Error::InvalidInput("uniform initial state needs both low and high".into()));
        }
        if let Some(Disturbance::Push { input, .. }) = self.disturbance {
            if input >= m.n_u() {
                return Err(Error::Dimension(format!("push input {input} out of range")));
            }
        }
        self.template(&Vector::zeros(m.n_x()))?;
        Ok(())
    }

    pub fn model(&self) -> Result<LcsModel> {
        match (&self.model, self.preset) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(p)) => p.model(),
            (None, None) => Err(Error::InvalidInput("config needs a preset or an inline model".into())),
        }
    }

    pub fn time_step(&self) -> Option<f64> {
        self.time_step.or(self.preset.map(|p| p.time_step()))
    }

    fn dt(&self) -> f64 {
        self.time_step().expect("validated")
    }

    /// Plant steps per trial.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt()).round() as usize
    }

    /// Plant steps between control updates, `⌈(1/rate)/T_s⌉`.
    pub fn steps_per_control(&self) -> usize {
        match self.control_rate {
            Some(rate) => ((1.0 / rate) / self.dt() - 1e-9).ceil().max(1.0) as usize,
            None => 1,
        }
    }

    fn projection(&self) -> Result<ProjectionMethod> {
        let base = match (&self.controller.projection, self.preset) {
            (Some(name), _) => ProjectionMethod::from_name(name)?,
            (None, Some(p)) => p.controller().projection,
            (None, None) => ProjectionMethod::Lcp,
        };
        Ok(match (base, self.controller.big_m) {
            (ProjectionMethod::Miqp(mut o), Some(m)) => {
                o.big_m = m;
                ProjectionMethod::Miqp(o)
            }
            (b, _) => b,
        })
    }

    fn warm_start(&self) -> Result<Option<WarmStart>> {
        Ok(match self.controller.warm_start.as_deref() {
            None => None,
            Some("none") => Some(WarmStart::None),
            Some("copies") => Some(WarmStart::Copies),
            Some("copies-and-duals") => Some(WarmStart::CopiesAndDuals),
            Some(other) => return Err(Error::InvalidInput(format!("unknown warm start '{other}'"))),
        })
    }

    /// The problem template at `x0`: preset costs and constraints, then overrides.
    pub fn template(&self, x0: &Vector) -> Result<McpProblemSpec> {
        let model = self.model()?;
        let (nx, nu) = (model.n_x(), model.n_u());
        let base = match self.preset {
            Some(p) if self.model.is_none() => Some(p.problem(x0.clone())?),
            _ => None,
        };
        let horizon = self.horizon.or(base.as_ref().map(|b| b.horizon())).unwrap_or(10);
        let pick = |v: &Option<Vec<f64>>, n: usize, what: &str, fallback: Option<&Matrix>| -> Result<Matrix> {
            match (v, fallback) {
                (Some(v), _) => diag(v, n, what),
                (None, Some(m)) => Ok(m.clone()),
                (None, None) => Ok(Matrix::identity(n, n)),
            }
        };
        let c = &self.costs;
        let q = pick(&c.q, nx, "q", base.as_ref().map(|b| b.q(0)))?;
        let r = pick(&c.r, nu, "r", base.as_ref().map(|b| b.r(0)))?;
        let q_n = pick(&c.q_terminal, nx, "q_terminal", base.as_ref().map(|b| b.q_terminal()))?;
        let spec = McpProblemSpec::new(model, horizon, q, r, q_n, x0.clone())?;
        match base {
            Some(b) if b.horizon() == horizon => spec.with_constraints(b.constraints().clone()),
            Some(_) if self.preset == Some(Preset::FingerGaiting) => {
                let set = crate::models::finger_gaiting_constraints(&spec.layout(), &Default::default())?;
                spec.with_constraints(set)
            }
            _ => Ok(spec),
        }
    }

    pub fn controller_config(&self) -> Result<C3Config> {
        let model = self.model()?;
        let nz = model.n_x() + model.n_lambda() + model.n_u();
        let mut cfg = match self.preset {
            Some(p) if self.model.is_none() => p.controller(),
            _ => C3Config::scaled_identity(10, nz, 1.0, 1.0, ProjectionMethod::Lcp),
        };
        let c = &self.controller;
        if let Some(t) = c.theta {
            cfg.theta = t;
        }
        if let Some(g) = c.g {
            cfg.g = vec![Matrix::identity(nz, nz) * g];
        }
        if let Some(r) = c.rho {
            cfg.rho = vec![r];
        }
        cfg.projection = self.projection()?;
        if let Some([x, lambda, u]) = c.weight {
            cfg.weight = ProjectionWeight::Blocks { x, lambda, u };
        }
        if c.consensus_weight {
            cfg.weight = ProjectionWeight::Consensus;
        }
        if let Some(w) = self.warm_start()? {
            cfg.warm_start = w;
        }
        if let Some(p) = c.parallel_projection {
            cfg.parallel_projection = p;
        }
        Ok(cfg)
    }

    /// Random stream of trial `i`, derived from the master seed.
    pub fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trial as u64);
        rng
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng, nx: usize) -> Vector {
        let init = &self.initial_state;
        match (&init.fixed, &init.low, &init.high) {
            (Some(x), _, _) => Vector::from_column_slice(x),
            (None, Some(lo), Some(hi)) => Vector::from_iterator(
                nx,
                lo.iter().zip(hi).map(|(&l, &h)| if l < h { rng.random_range(l..h) } else { l }),
            ),
            _ => Vector::zeros(nx),
        }
    }

    /// Stabilization check on a closed-loop trajectory.
    pub fn stabilized(&self, traj: &Trajectory) -> bool {
        let window = ((self.success.hold / self.dt()).round() as usize).max(1);
        let states = &traj.states[traj.states.len().saturating_sub(window)..];
        states.iter().all(|x| self.in_band(x))
    }

    fn in_band(&self, x: &Vector) -> bool {
        let s = &self.success;
        let idx: Vec<usize> = s.states.clone().unwrap_or_else(|| (0..x.len()).collect());
        idx.iter().enumerate().all(|(j, &i)| {
            let target = s.target.as_ref().and_then(|t| t.get(j)).copied().unwrap_or(0.0);
            x.get(i).is_some_and(|v| (v - target).abs() < s.tolerance)
        })
    }
}

/// One row of [`ResultsTable`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub stabilized: bool,
    pub final_state_norm: f64,
    pub accumulated_cost: f64,
    pub steps: usize,
    pub projection_ms_mean: f64,
    pub projection_ms_std: f64,
    pub failure: String,
}

#[derive(Debug, Clone, Default)]
pub struct ResultsTable {
    pub trials: Vec<TrialSummary>,
    /// Filled by [`compare_cost_to_go`].
    pub cost_to_go: Vec<CostToGoSample>,
}

impl ResultsTable {
    pub fn stabilized_count(&self) -> usize {
        self.trials.iter().filter(|t| t.stabilized).count()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Closed-loop run of one trial.
pub struct TrialRun {
    pub x0: Vector,
    pub run: RecedingHorizonRun,
    pub summary: TrialSummary,
}

pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<TrialRun> {
    let model = config.model()?;
    let mut rng = config.trial_rng(trial);
    let x0 = config.initial_state(&mut rng, model.n_x());
    let mut plant = LcsPlant::new(model.clone());
    match config.disturbance {
        Some(Disturbance::Gaussian { sigma }) => {
            plant = plant.with_noise(Box::new(GaussianDisturbance::new(sigma, rng.random())?));
        }
        Some(Disturbance::Push {
            low,
            high,
            duration,
            start,
            input,
        }) => {
            let magnitude = if low < high { rng.random_range(low..high) } else { low };
            let mut value = Vector::zeros(model.n_u());
            value[input] = magnitude;
            plant = plant.with_push(InputPush {
                start_step: (start / config.dt()).round() as usize,
                steps: (duration / config.dt()).round() as usize,
                value,
            })?;
        }
        None => {}
    }
    let template = config.template(&x0)?;
    let mut controller = C3Controller::new(config.controller_config()?)?;
    let stop = |t: &Trajectory| t.states.last().is_some_and(|x| config.in_band(x));
    let opts = RecedingHorizonOptions {
        steps: config.steps(),
        steps_per_control: config.steps_per_control(),
        stop: config.success.stop_early.then_some(&stop as _),
        ..Default::default()
    };
    let run = c3_receding_horizon(&mut plant, &template, &mut controller, &x0, &opts);
    let per_call: Vec<f64> = run
        .controls
        .iter()
        .map(|c| c.result.projection_ms() / (c.result.iterations.len() * template.horizon()).max(1) as f64)
        .collect();
    let (pm, ps) = if config.outputs.timings { mean_std(&per_call) } else { (0.0, 0.0) };
    let summary = TrialSummary {
        trial,
        stabilized: run.failure.is_none() && config.stabilized(&run.trajectory),
        final_state_norm: run.trajectory.final_state().amax(),
        accumulated_cost: run.trajectory.total_cost(),
        steps: run.trajectory.len(),
        projection_ms_mean: pm,
        projection_ms_std: ps,
        failure: run.failure.as_ref().map(|e| e.category().to_string()).unwrap_or_default(),
    };
    Ok(TrialRun { x0, run, summary })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes one trial as `t, x…, λ…, u…, stage_cost, qp_ms, proj_ms`; the
/// final row carries the terminal state only.
pub fn write_trial_csv(path: &Path, dt: f64, run: &RecedingHorizonRun, timings: bool) -> Result<()> {
    let traj = &run.trajectory;
    let nx = traj.states[0].len();
    let nl = traj.forces.first().map_or(0, |f| f.len());
    let nu = traj.inputs.first().map_or(0, |u| u.len());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["t".to_string()];
    header.extend((0..nx).map(|i| format!("x{i}")));
    header.extend((0..nl).map(|i| format!("lambda{i}")));
    header.extend((0..nu).map(|i| format!("u{i}")));
    header.extend(["stage_cost", "qp_ms", "proj_ms"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;

    let mut solves = run.controls.iter().peekable();
    for k in 0..=traj.len() {
        let mut row = vec![format!("{}", k as f64 * dt)];
        row.extend(traj.states[k].iter().map(|v| v.to_string()));
        if k < traj.len() {
            row.extend(traj.forces[k].iter().map(|v| v.to_string()));
            row.extend(traj.inputs[k].iter().map(|v| v.to_string()));
            row.push(traj.stage_costs[k].to_string());
            let (mut qp, mut proj) = (0.0, 0.0);
            if let Some(c) = solves.next_if(|c| c.plant_step == k) {
                if timings {
                    qp = c.result.qp_ms();
                    proj = c.result.projection_ms();
                }
            }
            row.push(qp.to_string());
            row.push(proj.to_string());
        } else {
            row.extend(std::iter::repeat_n(String::new(), nl + nu + 3));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, table: &ResultsTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for t in &table.trials {
        w.serialize(t).map_err(csv_err)?;
    }
    if table.trials.is_empty() {
        w.write_record([
            "trial",
            "stabilized",
            "final_state_norm",
            "accumulated_cost",
            "steps",
            "projection_ms_mean",
            "projection_ms_std",
            "failure",
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every trial (concurrently) and writes CSVs under `out` when given.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<ResultsTable> {
    config.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let results: Vec<Result<TrialSummary>> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let t = run_trial(config, i)?;
            if let (Some(dir), true) = (out, config.outputs.trajectories) {
                write_trial_csv(&dir.join(format!("trial_{i:03}.csv")), config.dt(), &t.run, config.outputs.timings)?;
            }
            Ok(t.summary)
        })
        .collect();
    let table = ResultsTable {
        trials: results.into_iter().collect::<Result<_>>()?,
        cost_to_go: Vec::new(),
    };
    if let (Some(dir), true) = (out, config.outputs.summary) {
        write_summary_csv(&dir.join("summary.csv"), &table)?;
    }
    Ok(table)
}

/// Open-loop rollout of a constant input from the first trial's initial state.
pub fn run_open_loop(config: &ExperimentConfig, out: Option<&Path>) -> Result<Trajectory> {
    config.validate()?;
    let model = config.model()?;
    let mut rng = config.trial_rng(0);
    let x0 = config.initial_state(&mut rng, model.n_x());
    let u = match &config.open_loop_input {
        Some(u) if u.len() == model.n_u() => Vector::from_column_slice(u),
        Some(_) => return Err(Error::Dimension(format!("open_loop_input needs {} entries", model.n_u()))),
        None => Vector::zeros(model.n_u()),
    };
    let inputs = vec![u; config.steps().max(1)];
    let mut noise = match config.disturbance {
        Some(Disturbance::Gaussian { sigma }) => Some(GaussianDisturbance::new(sigma, rng.random())?),
        _ => None,
    };
    let mut traj = simulate(&model, &x0, &inputs, noise.as_mut().map(|n| n as &mut dyn crate::lcs::StateDisturbance))?;
    let spec = config.template(&x0)?;
    for k in 0..traj.len() {
        traj.stage_costs[k] = spec.stage_cost(0, &traj.states[k], &traj.inputs[k]);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let run = RecedingHorizonRun {
            trajectory: traj.clone(),
            controls: Vec::new(),
            failure: None,
        };
        write_trial_csv(&dir.join("open_loop.csv"), config.dt(), &run, false)?;
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineSummary {
    pub trial: usize,
    pub objective: f64,
    pub nodes: usize,
    pub suboptimal: bool,
    /// Mode bits per step, `1` where the force is clamped to zero.
    pub modes: String,
}

/// Full-horizon MIQP plan from each trial's initial state; writes the plans
/// as trial CSVs and a summary when `out` is given.
pub fn run_baseline(config: &ExperimentConfig, opts: &FullMiqpOptions, out: Option<&Path>) -> Result<Vec<BaselineSummary>> {
    config.validate()?;
    let model = config.model()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let rows = (0..config.trials)
        .into_par_iter()
        .map(|trial| {
            let x0 = config.initial_state(&mut config.trial_rng(trial), model.n_x());
            let spec = config.template(&x0)?;
            let sol = solve_full_miqp(&spec, opts)?;
            if let Some(dir) = out {
                let mut traj = Trajectory::new(x0);
                for k in 0..spec.horizon() {
                    let gap = model.gap(&sol.states[k], &sol.forces[k], &sol.inputs[k]);
                    let cost = spec.stage_cost(k, &sol.states[k], &sol.inputs[k]);
                    let step = crate::lcs::LcsStep {
                        x_next: sol.states[k + 1].clone(),
                        lambda: sol.forces[k].clone(),
                        y: gap,
                    };
                    traj.push(step, sol.inputs[k].clone(), cost);
                }
                let run = RecedingHorizonRun {
                    trajectory: traj,
                    controls: Vec::new(),
                    failure: None,
                };
                write_trial_csv(&dir.join(format!("baseline_{trial:03}.csv")), config.dt(), &run, false)?;
            }
            Ok(BaselineSummary {
                trial,
                objective: sol.objective,
                nodes: sol.nodes,
                suboptimal: sol.suboptimal,
                modes: sol.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" "),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = out {
        let mut w = csv::Writer::from_path(dir.join("baseline_summary.csv")).map_err(csv_err)?;
        for r in &rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionBench {
    pub method: String,
    pub calls: usize,
    pub mean_s: f64,
    pub std_s: f64,
    /// Mean cost-to-go of the controller using this projection over the
    /// sampled states.
    pub avg_cost_to_go: f64,
}

/// Projection targets `z_k + w_k` met by the config's controller along its
/// closed-loop trials, at most `calls` of them.
pub fn collect_projection_targets(config: &ExperimentConfig, calls: usize) -> Result<(Vec<Vector>, Vec<Vector>)> {
    let model = config.model()?;
    let mut cfg = config.clone();
    cfg.outputs.timings = false;
    let mut targets = Vec::new();
    let mut states = Vec::new();
    let layout = config.template(&Vector::zeros(model.n_x()))?.layout();
    'trials: for trial in 0..config.trials.max(1) {
        let mut rng = config.trial_rng(trial);
        let x0 = config.initial_state(&mut rng, model.n_x());
        let template = config.template(&x0)?;
        let mut controller = C3Controller::new(config.controller_config()?)?;
        let mut plant = LcsPlant::new(model.clone());
        let opts = RecedingHorizonOptions {
            steps: config.steps(),
            steps_per_control: config.steps_per_control(),
            keep_iterates: true,
            ..Default::default()
        };
        let run = c3_receding_horizon(&mut plant, &template, &mut controller, &x0, &opts);
        for c in &run.controls {
            states.push(run.trajectory.states[c.plant_step].clone());
            for rec in &c.result.workspace.history {
                for k in 0..template.horizon() {
                    targets.push(rec.z.rows_range(layout.z(k)) + &rec.w_prev[k]);
                    if targets.len() >= calls {
                        break 'trials;
                    }
                }
            }
        }
    }
    Ok((targets, states))
}

/// Table-I-style benchmark: per-call wall time of each projection on the
/// same targets, and the mean cost-to-go of one C3 solve per sampled state.
pub fn bench_projections(
    config: &ExperimentConfig,
    methods: &[ProjectionMethod],
    calls: usize,
    cost_samples: usize,
) -> Result<Vec<ProjectionBench>> {
    config.validate()?;
    let (targets, states) = collect_projection_targets(config, calls)?;
    let model = config.model()?;
    let set = ComplementaritySet::from_model(&model);
    let base = config.controller_config()?;
    let layout = config.template(&Vector::zeros(model.n_x()))?.layout();
    let g0 = base.g.first().cloned().unwrap_or_else(|| Matrix::identity(layout.nz(), layout.nz()));
    let weight = base.projection_weight(&layout, &g0);
    let mut out = Vec::new();
    for method in methods {
        let mut times = Vec::with_capacity(targets.len());
        for t in &targets {
            let target = ProjectionTarget::new(t.clone(), weight.clone())?;
            let start = Instant::now();
            let res = method.project(&target, &set);
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(res)?;
        }
        let (mean_s, std_s) = mean_std(&times);
        let mut cfg = base.clone();
        cfg.projection = method.clone();
        cfg.warm_start = WarmStart::None;
        let costs: Vec<f64> = states
            .iter()
            .step_by((states.len() / cost_samples.max(1)).max(1))
            .take(cost_samples)
            .map(|x| {
                let spec = config.template(x)?;
                let r = crate::controller::c3_solve(&spec, &cfg)?;
                cost_to_go(&spec, &r.inputs)
            })
            .collect::<Result<_>>()?;
        out.push(ProjectionBench {
            method: method.name().to_string(),
            calls: targets.len(),
            mean_s,
            std_s,
            avg_cost_to_go: mean_std(&costs).0,
        });
    }
    Ok(out)
}

pub fn write_bench_csv(path: &Path, rows: &[ProjectionBench]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostToGoSample {
    pub step: usize,
    pub t: f64,
    /// Cost of rolling C3's planned inputs through the model.
    pub c3: f64,
    /// Full-horizon MIQP optimum (NaN when the baseline failed).
    pub baseline: f64,
    /// The search hit its node budget.
    pub baseline_suboptimal: bool,
    /// Cost of the next `N` logged states and inputs (NaN near the end).
    pub realized: f64,
    pub complementarity_residual: f64,
}

/// Closed loop on trial 0; at every control step compares C3's predicted
/// cost-to-go with the MIQP baseline and with the cost actually incurred
/// over the following `N` plant steps.
pub fn compare_cost_to_go(config: &ExperimentConfig, miqp: &FullMiqpOptions) -> Result<Vec<CostToGoSample>> {
    config.validate()?;
    let t = run_trial(config, 0)?;
    let traj = &t.run.trajectory;
    let n = config.template(&t.x0)?.horizon();
    let mut out = Vec::new();
    for c in &t.run.controls {
        let k = c.plant_step;
        let spec = config.template(&traj.states[k])?;
        let c3 = cost_to_go(&spec, &c.result.inputs)?;
        let (baseline, suboptimal) = match solve_full_miqp(&spec, miqp) {
            Ok(sol) => (sol.objective, sol.suboptimal),
            Err(_) => (f64::NAN, true),
        };
        let realized = if k + n < traj.states.len() {
            realized_cost(&spec, &traj.states[k..=k + n], &traj.inputs[k..k + n])?
        } else {
            f64::NAN
        };
        out.push(CostToGoSample {
            step: k,
            t: k as f64 * config.dt(),
            c3,
            baseline,
            baseline_suboptimal: suboptimal,
            realized,
            complementarity_residual: c.result.final_complementarity_residual(),
        });
    }
    Ok(out)
}

pub fn write_cost_to_go_csv(path: &Path, rows: &[CostToGoSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CART: &str = r#"
        preset = "cartpole-sim"
        seed = 3
        duration = 0.5
        [initial_state]
        low = [-0.1, -0.01, -0.1, -0.1]
        high = [0.1, 0.01, 0.1, 0.1]
    "#;

    #[test]
    fn parses_and_defaults() {
        let c = ExperimentConfig::from_toml(CART).unwrap();
        assert_eq!(c.trials, 1);
        assert_eq!(c.steps(), 50);
        assert_eq!(c.steps_per_control(), 1);
        assert_eq!(c.controller_config().unwrap().theta, 10);
    }

    #[test]
    fn control_rate_rounds_up() {
        let mut c = ExperimentConfig::from_toml(CART).unwrap();
        c.control_rate = Some(30.0);
        assert_eq!(c.steps_per_control(), 4);
        c.control_rate = Some(100.0);
        assert_eq!(c.steps_per_control(), 1);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(matches!(ExperimentConfig::from_toml("seed = 1\nbogus = 2"), Err(Error::Parse(_))));
        assert!(ExperimentConfig::from_toml("seed = 1").is_err());
        let bad = format!("{CART}\n[controller]\nwarm_start = \"hot\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn trial_streams_differ_and_repeat() {
        let c = ExperimentConfig::from_toml(CART).unwrap();
        let a = c.initial_state(&mut c.trial_rng(0), 4);
        let b = c.initial_state(&mut c.trial_rng(1), 4);
        assert_ne!(a, b);
        assert_eq!(a, c.initial_state(&mut c.trial_rng(0), 4));
    }

    #[test]
    fn band_and_hold() {
        let mut c = ExperimentConfig::from_toml(CART).unwrap();
        c.success = SuccessCriterion {
            states: Some(vec![0]),
            target: Some(vec![1.0]),
            tolerance: 0.5,
            hold: 0.02,
            stop_early: false,
        };
        let mut t = Trajectory::new(Vector::from_element(4, 0.0));
        t.states.push(Vector::from_element(4, 1.2));
        assert!(!c.stabilized(&t));
        t.states.push(Vector::from_element(4, 0.9));
        assert!(c.stabilized(&t));
    }

    #[test]
    fn mean_std_population() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }
}
