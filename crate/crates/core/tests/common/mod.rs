#![allow(dead_code)]

use c3::projection::{ComplementaritySet, ProjectionTarget};
use c3::{Matrix, Vector};
use rand::Rng;

pub fn uniform_matrix(rng: &mut impl Rng, r: usize, c: usize, s: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

pub fn uniform_vector(rng: &mut impl Rng, n: usize, s: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-s..s))
}

/// `AAᵀ + D` with `D ≥ 0` diagonal; a P-matrix when `min_diag > 0`.
pub fn psd_plus_diag(rng: &mut impl Rng, m: usize, min_diag: f64) -> Matrix {
    let a = uniform_matrix(rng, m, m, 1.0);
    let d = Vector::from_fn(m, |_, _| rng.random_range(min_diag..min_diag + 0.5));
    &a * a.transpose() + Matrix::from_diagonal(&d)
}

/// Random P-matrix built as `I + S` with a small nonsymmetric `S`.
pub fn nonsymmetric_p(rng: &mut impl Rng, m: usize) -> Matrix {
    let s = uniform_matrix(rng, m, m, 0.8 / m as f64);
    Matrix::identity(m, m) + s
}

/// Every LCP solution found by fixing which `λᵢ` may be positive.
pub fn lcp_enumerate(f: &Matrix, q: &Vector) -> Vec<Vector> {
    let m = q.len();
    let mut out = Vec::new();
    for mask in 0..(1usize << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let mut lam = Vector::zeros(m);
        if !active.is_empty() {
            let sub = Matrix::from_fn(active.len(), active.len(), |r, c| f[(active[r], active[c])]);
            let rhs = Vector::from_iterator(active.len(), active.iter().map(|&i| -q[i]));
            let Some(sol) = sub.lu().solve(&rhs) else { continue };
            for (j, &i) in active.iter().enumerate() {
                lam[i] = sol[j];
            }
        }
        let y = f * &lam + q;
        let comp = active.iter().fold(0.0_f64, |a, &i| a.max(y[i].abs()));
        if lam.min() >= -1e-9 && y.min() >= -1e-9 && comp < 1e-8 * (1.0 + q.amax()) {
            out.push(lam);
        }
    }
    out
}

/// A random complementarity set whose `F` is a P-matrix, so it is never empty.
pub fn random_set(rng: &mut impl Rng, nx: usize, nl: usize, nu: usize) -> ComplementaritySet {
    ComplementaritySet::new(
        uniform_matrix(rng, nl, nx, 1.0),
        psd_plus_diag(rng, nl, 0.1),
        uniform_matrix(rng, nl, nu, 1.0),
        uniform_vector(rng, nl, 1.0),
    )
    .unwrap()
}

/// Diagonal positive weight.
pub fn random_weight(rng: &mut impl Rng, n: usize) -> Matrix {
    Matrix::from_diagonal(&Vector::from_fn(n, |_, _| rng.random_range(0.1..2.0)))
}

/// Weighted projection by enumerating, per contact, which of `λᵢ = 0`,
/// `yᵢ = 0` or both hold with equality. The optimum of each mode's convex QP
/// minimizes over its active constraints, so the best sign-feasible
/// equality-constrained minimizer is the projection.
pub fn projection_enumerate(target: &ProjectionTarget, set: &ComplementaritySet) -> Option<(f64, Vector)> {
    let n = set.dim();
    let (nx, nl) = (set.n_x(), set.n_lambda());
    let k = set.gap_matrix();
    let c = set.gap(&Vector::zeros(n));
    let w = target.weight();
    let p = target.point();
    let mut best: Option<(f64, Vector)> = None;
    for code in 0..3usize.pow(nl as u32) {
        let mut rows: Vec<(Vector, f64)> = Vec::new();
        let mut rest = code;
        for i in 0..nl {
            let choice = rest % 3;
            rest /= 3;
            if choice != 1 {
                let mut e = Vector::zeros(n);
                e[nx + i] = 1.0;
                rows.push((e, 0.0));
            }
            if choice != 0 {
                rows.push((k.row(i).transpose(), -c[i]));
            }
        }
        let m = rows.len();
        let mut kkt = Matrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(w * 2.0));
        let mut rhs = Vector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(w * p * 2.0));
        for (j, (a, b)) in rows.iter().enumerate() {
            kkt.view_mut((n + j, 0), (1, n)).copy_from(&a.transpose());
            kkt.view_mut((0, n + j), (n, 1)).copy_from(a);
            rhs[n + j] = *b;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-8 {
            continue;
        }
        let d = sol.rows(0, n).clone_owned();
        let lam = d.rows(nx, nl);
        let y = &k * &d + &c;
        if lam.min() < -1e-9 || y.min() < -1e-9 || lam.component_mul(&y).amax() > 1e-9 {
            continue;
        }
        let obj = target.distance(&d);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, d));
        }
    }
    best
}

/// Contact-free MPC by condensing onto the inputs: `z = M U + m`, then a dense
/// normal-equation solve. `prox` adds `Σ_k (z_k − t_k)ᵀ G_k (z_k − t_k)`.
pub fn condensed_lq(spec: &c3::problem::McpProblemSpec, prox: Option<(&[Vector], &[Matrix])>) -> Vector {
    let l = spec.layout();
    let model = spec.model();
    assert_eq!(l.n_lambda, 0);
    let n = spec.horizon();
    let nu = l.n_u;
    let rollout = |u: &Vector| {
        let mut z = Vector::zeros(l.len());
        let mut x = spec.x0().clone();
        for k in 0..n {
            let uk = u.rows(k * nu, nu).clone_owned();
            z.rows_range_mut(l.x(k)).copy_from(&x);
            z.rows_range_mut(l.u(k)).copy_from(&uk);
            x = model.a() * &x + model.b() * &uk + model.bias();
        }
        z.rows_range_mut(l.x(n)).copy_from(&x);
        z
    };
    let m0 = rollout(&Vector::zeros(n * nu));
    let mut big_m = Matrix::zeros(l.len(), n * nu);
    for j in 0..n * nu {
        let mut e = Vector::zeros(n * nu);
        e[j] = 1.0;
        big_m.set_column(j, &(rollout(&e) - &m0));
    }
    let mut h = Matrix::zeros(l.len(), l.len());
    let mut b = Vector::zeros(l.len());
    for k in 0..n {
        h.view_range_mut(l.x(k), l.x(k)).copy_from(spec.q(k));
        h.view_range_mut(l.u(k), l.u(k)).copy_from(spec.r(k));
        if let Some((t, g)) = prox {
            let zr = l.z(k);
            let blk = h.view_range(zr.clone(), zr.clone()) + &g[k];
            h.view_range_mut(zr.clone(), zr.clone()).copy_from(&blk);
            b.rows_range_mut(zr).copy_from(&(&g[k] * &t[k]));
        }
    }
    h.view_range_mut(l.x(n), l.x(n)).copy_from(spec.q_terminal());
    let lhs = big_m.transpose() * &h * &big_m;
    let rhs = big_m.transpose() * (&b - &h * &m0);
    let u = lhs.cholesky().expect("positive definite").solve(&rhs);
    rollout(&u)
}
