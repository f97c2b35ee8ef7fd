//! Small dense kernels for the 3-unknown systems used throughout the crate.

use crate::scalar::Scalar;

/// Eigenvalues of a symmetric 3x3 matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues3<T: Scalar>(m: [[T; 3]; 3]) -> [T; 3] {
    let mut a = m;
    let eps = T::epsilon();
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= eps * eps * diag || off == T::zero() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            // A <- J^T A J
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2]];
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

/// Gram matrix `M^T M` of a row-major n x 3 matrix.
pub fn gram3<T: Scalar>(rows: &[[T; 3]]) -> [[T; 3]; 3] {
    let mut g = [[T::zero(); 3]; 3];
    for r in rows {
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += r[i] * r[j];
            }
        }
    }
    g
}

/// Ratio of extreme eigenvalues of a symmetric positive semi-definite matrix.
/// Returns infinity when the smallest eigenvalue is not positive.
pub fn spd_condition3<T: Scalar>(m: [[T; 3]; 3]) -> T {
    let ev = symmetric_eigenvalues3(m);
    if ev[0] <= T::zero() {
        T::infinity()
    } else {
        ev[2] / ev[0]
    }
}

/// Householder QR least squares for a tall n x 3 system.
///
/// Returns the minimizer of `||A x - b||_2` and the upper-triangular factor.
/// `None` when a column is exactly zero after elimination.
pub fn householder_lstsq3<T: Scalar>(rows: &[[T; 3]], rhs: &[T]) -> Option<([T; 3], [[T; 3]; 3])> {
    let n = rows.len();
    debug_assert_eq!(n, rhs.len());
    if n < 3 {
        return None;
    }
    // Column-major working copy.
    let mut cols: [Vec<T>; 3] = [
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1]).collect(),
        rows.iter().map(|r| r[2]).collect(),
    ];
    let mut b = rhs.to_vec();
    let mut r = [[T::zero(); 3]; 3];

    for k in 0..3 {
        let norm = cols[k][k..].iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            return None;
        }
        let alpha = if cols[k][k] > T::zero() { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k below the diagonal.
        let mut v: Vec<T> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().map(|&x| x * x).sum::<T>();
        if vnorm2 == T::zero() {
            r[k][k] = alpha;
            for j in (k + 1)..3 {
                r[k][j] = cols[j][k];
            }
            continue;
        }
        let two = T::lit(2.0);
        for j in (k + 1)..3 {
            let dot = v.iter().zip(&cols[j][k..]).map(|(&a, &c)| a * c).sum::<T>();
            let f = two * dot / vnorm2;
            for (c, &vi) in cols[j][k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot = v.iter().zip(&b[k..]).map(|(&a, &c)| a * c).sum::<T>();
        let f = two * dot / vnorm2;
        for (c, &vi) in b[k..].iter_mut().zip(&v) {
            *c -= f * vi;
        }
        r[k][k] = alpha;
        for j in (k + 1)..3 {
            r[k][j] = cols[j][k];
        }
    }

    let mut x = [T::zero(); 3];
    for i in (0..3).rev() {
        let mut s = b[i];
        for j in (i + 1)..3 {
            s -= r[i][j] * x[j];
        }
        x[i] = s / r[i][i];
    }
    Some((x, r))
}
