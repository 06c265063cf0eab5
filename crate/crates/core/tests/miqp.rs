mod common;

use c3::lcs::LcsModel;
use c3::miqp::*;
use c3::models::Preset;
use c3::problem::McpProblemSpec;
use c3::{Error, Matrix, Vector};
use common::condensed_lq;
use nalgebra::{dmatrix, dvector};

/// Point mass with a stiff wall at position 1.
fn wall(x0: Vector, n: usize) -> McpProblemSpec {
    let model = LcsModel::new(
        dmatrix![1.0, 0.1; 0.0, 1.0],
        dmatrix![0.005; 0.1],
        dmatrix![-0.005; -0.1],
        dvector![0.0, 0.0],
        dmatrix![-1.0, 0.0],
        dmatrix![0.1],
        dmatrix![0.0],
        dvector![1.0],
    )
    .unwrap();
    McpProblemSpec::new(model, n, Matrix::identity(2, 2), dmatrix![0.1], Matrix::identity(2, 2), x0).unwrap()
}

/// Horizon optimum by enumerating, for every step and contact, whether the
/// force, the gap or both are held at zero, and solving each KKT system.
fn enumerate_horizon(spec: &McpProblemSpec) -> Option<f64> {
    let m = spec.model();
    let (nx, nl, nu, n) = (m.n_x(), m.n_lambda(), m.n_u(), spec.horizon());
    let nz = nx + nl + nu;
    let len = nz * n + nx;
    let xi = |k: usize| k * nz;
    let li = |k: usize| k * nz + nx;
    let ui = |k: usize| k * nz + nx + nl;

    let mut h = Matrix::zeros(len, len);
    for k in 0..n {
        h.view_mut((xi(k), xi(k)), (nx, nx)).copy_from(&(spec.q(k) * 2.0));
        h.view_mut((ui(k), ui(k)), (nu, nu)).copy_from(&(spec.r(k) * 2.0));
    }
    h.view_mut((xi(n), xi(n)), (nx, nx)).copy_from(&(spec.q_terminal() * 2.0));

    let mut base: Vec<(Vector, f64)> = Vec::new();
    for i in 0..nx {
        let mut a = Vector::zeros(len);
        a[xi(0) + i] = 1.0;
        base.push((a, spec.x0()[i]));
    }
    for k in 0..n {
        for i in 0..nx {
            let mut a = Vector::zeros(len);
            a[xi(k + 1) + i] = 1.0;
            for j in 0..nx {
                a[xi(k) + j] -= m.a()[(i, j)];
            }
            for j in 0..nl {
                a[li(k) + j] -= m.d()[(i, j)];
            }
            for j in 0..nu {
                a[ui(k) + j] -= m.b()[(i, j)];
            }
            base.push((a, m.bias()[i]));
        }
    }
    let gap_row = |k: usize, i: usize| {
        let mut a = Vector::zeros(len);
        for j in 0..nx {
            a[xi(k) + j] = m.e()[(i, j)];
        }
        for j in 0..nl {
            a[li(k) + j] = m.f()[(i, j)];
        }
        for j in 0..nu {
            a[ui(k) + j] = m.h()[(i, j)];
        }
        a
    };

    let pairs = n * nl;
    let mut best: Option<f64> = None;
    for code in 0..3usize.pow(pairs as u32) {
        let mut rows = base.clone();
        let mut rest = code;
        for p in 0..pairs {
            let (k, i) = (p / nl, p % nl);
            let choice = rest % 3;
            rest /= 3;
            if choice != 1 {
                let mut a = Vector::zeros(len);
                a[li(k) + i] = 1.0;
                rows.push((a, 0.0));
            }
            if choice != 0 {
                rows.push((gap_row(k, i), -m.c()[i]));
            }
        }
        let r = rows.len();
        let mut kkt = Matrix::zeros(len + r, len + r);
        kkt.view_mut((0, 0), (len, len)).copy_from(&h);
        let mut rhs = Vector::zeros(len + r);
        for (j, (a, b)) in rows.iter().enumerate() {
            kkt.view_mut((len + j, 0), (1, len)).copy_from(&a.transpose());
            kkt.view_mut((0, len + j), (len, 1)).copy_from(a);
            rhs[len + j] = *b;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let z = sol.rows(0, len).clone_owned();
        let ok = (0..n).all(|k| {
            (0..nl).all(|i| {
                let lam = z[li(k) + i];
                let gap = gap_row(k, i).dot(&z) + m.c()[i];
                lam >= -1e-9 && gap >= -1e-9
            })
        });
        if !ok {
            continue;
        }
        let obj = 0.5 * z.dot(&(&h * &z));
        best = Some(best.map_or(obj, |b: f64| b.min(obj)));
    }
    best
}

#[test]
fn two_step_wall_matches_mode_enumeration() {
    for x0 in [dvector![1.5, 0.5], dvector![0.9, 2.0], dvector![-1.0, 0.0], dvector![1.2, -3.0]] {
        let spec = wall(x0, 2);
        let expect = enumerate_horizon(&spec).unwrap();
        let sol = solve_full_miqp(&spec, &FullMiqpOptions::default()).unwrap();
        assert!(!sol.suboptimal);
        assert!((sol.objective - expect).abs() < 1e-7 * (1.0 + expect), "{} vs {expect}", sol.objective);
    }
}

#[test]
fn cartpole_short_horizon_matches_mode_enumeration() {
    let base = Preset::CartpoleSim.problem(Vector::zeros(4)).unwrap();
    for x0 in [dvector![0.3, -0.15, 0.5, -0.6], dvector![-0.35, 0.0, -1.0, 1.0], dvector![0.0, 0.0, 0.0, 0.0]] {
        let m = base.model().clone();
        let spec = McpProblemSpec::new(m, 3, base.q(0).clone(), base.r(0).clone(), base.q_terminal().clone(), x0).unwrap();
        let expect = enumerate_horizon(&spec).unwrap();
        for seed in [Seed::Cold, Seed::LcpC3] {
            let sol = solve_full_miqp(&spec, &FullMiqpOptions { seed, ..Default::default() }).unwrap();
            assert!((sol.objective - expect).abs() < 1e-7 * (1.0 + expect), "{} vs {expect}", sol.objective);
        }
    }
}

#[test]
fn plan_is_an_lcs_rollout() {
    let spec = wall(dvector![1.5, 0.5], 6);
    let sol = solve_full_miqp(&spec, &FullMiqpOptions::default()).unwrap();
    let mut x = spec.x0().clone();
    for k in 0..6 {
        assert!((&sol.states[k] - &x).amax() < 1e-8);
        let step = c3::lcs::lcs_step(spec.model(), &x, &sol.inputs[k]).unwrap();
        assert!((&sol.forces[k] - &step.lambda).amax() < 1e-6);
        x = step.x_next;
    }
    assert_eq!(sol.modes.len(), 6);
}

#[test]
fn without_contacts_it_is_lq_mpc() {
    let model = LcsModel::linear(dmatrix![1.0, 0.1; 0.0, 1.0], dmatrix![0.005; 0.1], Vector::zeros(2)).unwrap();
    let spec = McpProblemSpec::new(model, 8, Matrix::identity(2, 2), dmatrix![0.1], Matrix::identity(2, 2) * 5.0, dvector![1.0, -0.5]).unwrap();
    let sol = solve_full_miqp(&spec, &FullMiqpOptions::default()).unwrap();
    assert!((sol.z - condensed_lq(&spec, None)).amax() < 1e-8);
}

#[test]
fn empty_contact_set_is_infeasible() {
    // gap = −1 − λ is never nonnegative
    let model = LcsModel::new(
        dmatrix![1.0],
        dmatrix![1.0],
        dmatrix![0.0],
        dvector![0.0],
        dmatrix![0.0],
        dmatrix![-1.0],
        dmatrix![0.0],
        dvector![-1.0],
    )
    .unwrap();
    let spec = McpProblemSpec::new(model, 2, dmatrix![1.0], dmatrix![1.0], dmatrix![1.0], dvector![0.0]).unwrap();
    let opts = FullMiqpOptions {
        seed: Seed::Cold,
        ..Default::default()
    };
    assert!(matches!(solve_full_miqp(&spec, &opts), Err(Error::InfeasibleSet)));
}

#[test]
fn exhausted_budget_is_flagged() {
    let spec = Preset::CartpoleSim.problem(dvector![0.3, -0.15, 0.5, -0.6]).unwrap();
    let opts = FullMiqpOptions {
        node_budget: Some(3),
        ..Default::default()
    };
    let sol = solve_full_miqp(&spec, &opts).unwrap();
    assert!(sol.suboptimal);
    // the seed is still a valid plan
    assert!(sol.objective <= sol.seed_objective.unwrap() + 1e-9);
}
