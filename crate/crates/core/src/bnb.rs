//! Branch-and-bound over complementarity pairs.
//!
//! Each pair `(λᵢ, yᵢ)` is an affine function of the decision vector. A node
//! fixes a subset of pairs to one of the two big-M modes:
//!
//! * `sᵢ = 0`: `yᵢ = 0`, `0 ≤ λᵢ ≤ M`
//! * `sᵢ = 1`: `λᵢ = 0`, `0 ≤ yᵢ ≤ M`
//!
//! Unfixed pairs keep `0 ≤ λᵢ ≤ M`, `0 ≤ yᵢ ≤ M` and drop orthogonality,
//! which gives a convex relaxation and hence a valid lower bound. The search
//! is depth-first; the branching pair is the violated pair with the smallest
//! group index (time step), ties broken by the largest `λᵢ·yᵢ`.

use crate::qp::{QpOptions, QpSolver, QpStatus};
use crate::{Matrix, Vector};

#[derive(Debug, Clone)]
pub(crate) struct AffineRow {
    pub coeffs: Vector,
    pub offset: f64,
}

impl AffineRow {
    pub fn eval(&self, v: &Vector) -> f64 {
        self.coeffs.dot(v) + self.offset
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Pair {
    pub lambda: AffineRow,
    pub gap: AffineRow,
    pub group: usize,
    pub big_m: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BnbProblem {
    pub p: Matrix,
    pub r: Vector,
    pub constant: f64,
    pub aeq: Matrix,
    pub beq: Vector,
    pub ain: Matrix,
    pub bin: Vector,
    pub pairs: Vec<Pair>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnbOptions {
    pub node_budget: usize,
    /// A pair counts as complementary when `min(λᵢ, yᵢ)` is below this
    /// (relative to `1 + |λᵢ| + |yᵢ|`).
    pub comp_tol: f64,
}

impl Default for BnbOptions {
    fn default() -> Self {
        Self {
            node_budget: 20_000,
            comp_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Incumbent {
    pub v: Vector,
    pub objective: f64,
    /// `true` where `sᵢ = 1` (λᵢ clamped to zero).
    pub modes: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BnbStatus {
    Complete,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub(crate) struct BnbResult {
    pub best: Option<Incumbent>,
    pub nodes: usize,
    pub status: BnbStatus,
}

/// `0 ≤ aff ≤ M` as `−c·v ≤ off` and `c·v ≤ M − off`.
fn push_bounds<'a>(aff: &'a AffineRow, rows: &mut Vec<(&'a Vector, f64, f64)>, m: f64) {
    rows.push((&aff.coeffs, -1.0, aff.offset));
    if m.is_finite() {
        rows.push((&aff.coeffs, 1.0, m - aff.offset));
    }
}

impl BnbProblem {
    fn n(&self) -> usize {
        self.r.len()
    }

    /// QP for a node given per-pair fixings.
    fn node_solve(&self, fixed: &[Option<bool>]) -> Option<(Vector, f64)> {
        let n = self.n();
        let n_fixed = fixed.iter().filter(|f| f.is_some()).count();
        let meq = self.aeq.nrows() + n_fixed;
        let mut aeq = Matrix::zeros(meq, n);
        let mut beq = Vector::zeros(meq);
        aeq.rows_mut(0, self.aeq.nrows()).copy_from(&self.aeq);
        beq.rows_mut(0, self.beq.len()).copy_from(&self.beq);

        let mut in_rows: Vec<(&Vector, f64, f64)> = Vec::new(); // (coeffs, sign, rhs)
        let mut row = self.aeq.nrows();
        for (pair, fix) in self.pairs.iter().zip(fixed) {
            match fix {
                None => {
                    push_bounds(&pair.lambda, &mut in_rows, pair.big_m);
                    push_bounds(&pair.gap, &mut in_rows, pair.big_m);
                }
                Some(clamp_lambda) => {
                    let (eq, free) = if *clamp_lambda {
                        (&pair.lambda, &pair.gap)
                    } else {
                        (&pair.gap, &pair.lambda)
                    };
                    aeq.row_mut(row).copy_from(&eq.coeffs.transpose());
                    beq[row] = -eq.offset;
                    row += 1;
                    push_bounds(free, &mut in_rows, pair.big_m);
                }
            }
        }
        let min = self.ain.nrows() + in_rows.len();
        let mut ain = Matrix::zeros(min, n);
        let mut bin = Vector::zeros(min);
        ain.rows_mut(0, self.ain.nrows()).copy_from(&self.ain);
        bin.rows_mut(0, self.bin.len()).copy_from(&self.bin);
        for (i, (coeffs, sign, rhs)) in in_rows.into_iter().enumerate() {
            let r = self.ain.nrows() + i;
            ain.row_mut(r).copy_from(&(coeffs.transpose() * sign));
            bin[r] = rhs;
        }
        let solver = QpSolver::new(&self.p, &aeq, &ain, QpOptions::default()).ok()?;
        let sol = solver.solve(&self.r, &beq, &bin).ok()?;
        match sol.status {
            QpStatus::Optimal => Some((sol.v, sol.objective + self.constant)),
            // accept a slightly inaccurate point; a later leaf solve re-checks it
            QpStatus::IterLimit if sol.v.iter().all(|x| x.is_finite()) && self.infeasibility(&sol.v, fixed) < 1e-6 => {
                Some((sol.v, sol.objective + self.constant))
            }
            _ => None,
        }
    }

    fn infeasibility(&self, v: &Vector, fixed: &[Option<bool>]) -> f64 {
        let mut worst = (&self.aeq * v - &self.beq).amax();
        worst = worst.max((&self.ain * v - &self.bin).iter().fold(0.0_f64, |a, &s| a.max(s)));
        for (pair, fix) in self.pairs.iter().zip(fixed) {
            let (l, g) = (pair.lambda.eval(v), pair.gap.eval(v));
            worst = worst.max(-l).max(-g);
            match fix {
                Some(true) => worst = worst.max(l.abs()),
                Some(false) => worst = worst.max(g.abs()),
                None => {}
            }
        }
        worst
    }

    fn violation(&self, v: &Vector, i: usize, tol: f64) -> Option<f64> {
        let pair = &self.pairs[i];
        let (l, g) = (pair.lambda.eval(v), pair.gap.eval(v));
        (l.min(g) > tol * (1.0 + l.abs() + g.abs())).then_some(l * g)
    }
}

pub(crate) fn branch_and_bound(problem: &BnbProblem, opts: &BnbOptions, seed: Option<Incumbent>) -> BnbResult {
    let np = problem.pairs.len();
    let mut best = seed;
    let mut nodes = 0;
    let mut status = BnbStatus::Complete;
    let prune = |bound: f64, best: &Option<Incumbent>| {
        best.as_ref()
            .is_some_and(|inc| bound >= inc.objective - 1e-10 * (1.0 + inc.objective.abs()))
    };

    let mut stack: Vec<(Vec<Option<bool>>, f64)> = vec![(vec![None; np], f64::NEG_INFINITY)];
    while let Some((fixed, parent_bound)) = stack.pop() {
        if prune(parent_bound, &best) {
            continue;
        }
        if nodes >= opts.node_budget {
            status = BnbStatus::BudgetExhausted;
            break;
        }
        nodes += 1;
        let Some((v, obj)) = problem.node_solve(&fixed) else {
            continue;
        };
        if prune(obj, &best) {
            continue;
        }

        // branching pair: earliest group, then largest violation
        let mut pick: Option<(usize, usize, f64)> = None;
        for i in 0..np {
            if fixed[i].is_some() {
                continue;
            }
            if let Some(viol) = problem.violation(&v, i, opts.comp_tol) {
                let g = problem.pairs[i].group;
                let better = match pick {
                    None => true,
                    Some((_, pg, pv)) => g < pg || (g == pg && viol > pv),
                };
                if better {
                    pick = Some((i, g, viol));
                }
            }
        }

        match pick {
            None => {
                // relaxation is complementary: fix every pair by its zero side and re-solve
                let mut leaf = fixed.clone();
                for i in 0..np {
                    if leaf[i].is_none() {
                        let pair = &problem.pairs[i];
                        leaf[i] = Some(pair.lambda.eval(&v) <= pair.gap.eval(&v));
                    }
                }
                let (lv, lobj) = if leaf == fixed {
                    (v, obj)
                } else {
                    nodes += 1;
                    match problem.node_solve(&leaf) {
                        Some(s) => s,
                        None => continue,
                    }
                };
                if best.as_ref().is_none_or(|inc| lobj < inc.objective) {
                    best = Some(Incumbent {
                        v: lv,
                        objective: lobj,
                        modes: leaf.iter().map(|f| f.expect("leaf fully fixed")).collect(),
                    });
                }
            }
            Some((i, _, _)) => {
                let pair = &problem.pairs[i];
                let lambda_first = pair.lambda.eval(&v) <= pair.gap.eval(&v);
                let mut first = fixed.clone();
                first[i] = Some(lambda_first);
                let mut second = fixed;
                second[i] = Some(!lambda_first);
                stack.push((second, obj));
                stack.push((first, obj));
            }
        }
    }
    BnbResult { best, nodes, status }
}
