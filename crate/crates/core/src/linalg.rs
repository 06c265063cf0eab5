//! Small dense helpers not covered by nalgebra's decompositions.

use crate::{Matrix, Vector};

/// Householder QR with column pivoting that keeps the full orthogonal factor.
///
/// Factors `a Π = Q R` with `Q` square (`nrows × nrows`). Columns of `Q`
/// past `rank` span the orthogonal complement of `range(a)`.
pub(crate) struct PivotedQr {
    pub q: Matrix,
    pub r: Matrix,
    pub perm: Vec<usize>,
    pub rank: usize,
}

pub(crate) fn pivoted_qr(a: &Matrix, rel_tol: f64) -> PivotedQr {
    let (n, m) = a.shape();
    let mut r = a.clone();
    let mut q = Matrix::identity(n, n);
    let mut perm: Vec<usize> = (0..m).collect();
    let steps = n.min(m);
    let mut norms: Vec<f64> = (0..m).map(|j| r.column(j).norm_squared()).collect();
    let mut first_diag = 0.0_f64;
    let mut rank = 0;

    for k in 0..steps {
        let (piv, _) = norms
            .iter()
            .enumerate()
            .skip(k)
            .fold((k, -1.0), |best, (j, &v)| if v > best.1 { (j, v) } else { best });
        if piv != k {
            r.swap_columns(k, piv);
            norms.swap(k, piv);
            perm.swap(k, piv);
        }
        let alpha = r.view((k, k), (n - k, 1)).norm();
        if k == 0 {
            first_diag = alpha;
        }
        if alpha <= rel_tol * first_diag.max(f64::MIN_POSITIVE) || alpha == 0.0 {
            break;
        }
        rank += 1;
        let sign = if r[(k, k)] >= 0.0 { 1.0 } else { -1.0 };
        let mut v = r.view((k, k), (n - k, 1)).clone_owned();
        v[0] += sign * alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            // R ← (I − 2vvᵀ/vᵀv) R on rows k..n
            for j in k..m {
                let dot = (0..n - k).map(|i| v[i] * r[(k + i, j)]).sum::<f64>();
                let s = 2.0 * dot / vnorm2;
                for i in 0..n - k {
                    r[(k + i, j)] -= s * v[i];
                }
            }
            // Q ← Q (I − 2vvᵀ/vᵀv) on columns k..n
            for row in 0..n {
                let dot = (0..n - k).map(|i| q[(row, k + i)] * v[i]).sum::<f64>();
                let s = 2.0 * dot / vnorm2;
                for i in 0..n - k {
                    q[(row, k + i)] -= s * v[i];
                }
            }
        }
        for i in k + 1..n {
            r[(i, k)] = 0.0;
        }
        for (j, norm) in norms.iter_mut().enumerate().skip(k + 1) {
            *norm = r.view((k + 1, j), (n - k - 1, 1)).norm_squared();
        }
    }
    PivotedQr { q, r, perm, rank }
}

/// Solves `L x = b` for lower-triangular `l` (only the lower part is read).
pub(crate) fn solve_lower(l: &Matrix, b: &Vector) -> Vector {
    let n = b.len();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * x[j];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `U x = b` for upper-triangular `u` using its leading `n × n` block.
pub(crate) fn solve_upper(u: &Matrix, b: &[f64], n: usize) -> Vec<f64> {
    let mut x = b[..n].to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= u[(i, j)] * x[j];
        }
        x[i] = s / u[(i, i)];
    }
    x
}

pub(crate) fn is_symmetric(m: &Matrix, tol: f64) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * (1.0 + m[(i, j)].abs())))
}

/// Positive semidefiniteness via the symmetric eigendecomposition.
pub(crate) fn is_psd(m: &Matrix, tol: f64) -> bool {
    if m.nrows() == 0 {
        return true;
    }
    if !is_symmetric(m, 1e-9) {
        return false;
    }
    let scale = m.amax().max(1.0);
    m.clone().symmetric_eigenvalues().min() >= -tol * scale
}

pub(crate) fn is_pd(m: &Matrix) -> bool {
    m.nrows() == 0 || (is_symmetric(m, 1e-9) && m.clone().cholesky().is_some())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn pivoted_qr_reconstructs_and_finds_rank() {
        let a = dmatrix![1.0, 2.0, 3.0; 2.0, 4.0, 6.0; 0.0, 1.0, 1.0; 1.0, 0.0, 1.0];
        let f = pivoted_qr(&a, 1e-12);
        assert_eq!(f.rank, 2);
        let mut ap = a.clone();
        for (j, &p) in f.perm.iter().enumerate() {
            ap.set_column(j, &a.column(p));
        }
        assert!((&f.q * &f.r - ap).amax() < 1e-12);
        assert!((f.q.transpose() * &f.q - Matrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn triangular_solves() {
        let l = dmatrix![2.0, 0.0; 1.0, 4.0];
        let x = solve_lower(&l, &Vector::from_vec(vec![2.0, 9.0]));
        assert!((x - Vector::from_vec(vec![1.0, 2.0])).amax() < 1e-15);
        let u = l.transpose();
        let y = solve_upper(&u, &[4.0, 8.0], 2);
        assert_eq!(y, vec![1.0, 2.0]);
    }
}
