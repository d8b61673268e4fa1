//! Dense linear-algebra helpers with deterministic sign conventions.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::tensor::Matrix;

/// Leading singular triplets, singular values nonincreasing.
#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

fn full_svd(m: &Matrix) -> Result<TruncatedSvd> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite matrix entry".into()));
    }
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut uo = Matrix::zeros(m.nrows(), k);
    let mut vo = Matrix::zeros(m.ncols(), k);
    let mut s = Vec::with_capacity(k);
    for (j, &src) in order.iter().enumerate() {
        uo.set_column(j, &u.column(src));
        vo.set_column(j, &vt.row(src).transpose());
        s.push(svd.singular_values[src]);
    }
    sign_fix(&mut uo, Some(&mut vo));
    Ok(TruncatedSvd { u: uo, s, v: vo })
}

/// Flips each column of `u` so its largest-magnitude entry is positive (lowest
/// index on ties), mirroring the flip onto `v`.
pub fn sign_fix(u: &mut Matrix, mut v: Option<&mut Matrix>) {
    for j in 0..u.ncols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, x) in u.column(j).iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            u.column_mut(j).neg_mut();
            if let Some(v) = v.as_deref_mut() {
                v.column_mut(j).neg_mut();
            }
        }
    }
}

pub fn truncated_svd(m: &Matrix, r: usize) -> Result<TruncatedSvd> {
    let k = m.nrows().min(m.ncols());
    if r == 0 || r > k {
        return invalid(format!(
            "rank {r} out of range for a {}x{} matrix",
            m.nrows(),
            m.ncols()
        ));
    }
    let full = full_svd(m)?;
    Ok(TruncatedSvd {
        u: full.u.columns(0, r).into_owned(),
        s: full.s[..r].to_vec(),
        v: full.v.columns(0, r).into_owned(),
    })
}

/// All singular values, nonincreasing.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite matrix entry".into()));
    }
    let mut s: Vec<f64> = m
        .clone()
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(s)
}

/// Leading `r` left singular vectors of `m`, with `r` allowed up to `rows`.
///
/// Directions beyond the numerical rank of `m` (and beyond its column count)
/// are filled from the orthogonal complement of the retained vectors.
pub fn leading_left_vectors(m: &Matrix, r: usize) -> Result<Matrix> {
    let p = m.nrows();
    if r == 0 || r > p {
        return invalid(format!("rank {r} out of range for {p} rows"));
    }
    let full = full_svd(m)?;
    let smax = full.s.first().copied().unwrap_or(0.0);
    let tol = smax * 1e-13 * (p.max(m.ncols()) as f64);
    let keep = full.s.iter().take(r).filter(|&&s| s > tol).count();
    if keep == r {
        return Ok(full.u.columns(0, r).into_owned());
    }
    let base = full.u.columns(0, keep).into_owned();
    let comp = orth_complement(&base)?;
    let mut out = Matrix::zeros(p, r);
    out.columns_mut(0, keep).copy_from(&base);
    out.columns_mut(keep, r - keep)
        .copy_from(&comp.columns(0, r - keep));
    Ok(out)
}

/// Thin QR with a nonnegative diagonal in `R`.
pub fn qr_thin(m: &Matrix) -> (Matrix, Matrix) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis of the complement of the column space of an orthonormal `u`.
pub fn orth_complement(u: &Matrix) -> Result<Matrix> {
    let p = u.nrows();
    let r = u.ncols();
    if r > p {
        return invalid(format!("{r} columns exceed ambient dimension {p}"));
    }
    if r == p {
        return Ok(Matrix::zeros(p, 0));
    }
    let mut aug = Matrix::zeros(p, r + p);
    aug.columns_mut(0, r).copy_from(u);
    aug.columns_mut(r, p).fill_with_identity();
    let (q, _) = qr_thin(&aug);
    Ok(q.columns(r, p - r).into_owned())
}

/// `||a^T a - I||_F`.
pub fn orthonormality_defect(a: &Matrix) -> f64 {
    let g = a.transpose() * a;
    (g - Matrix::identity(a.ncols(), a.ncols())).norm()
}

/// Outcome of a least-squares solve.
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: Matrix,
    /// Whether Tikhonov regularization was added because the system was rank-deficient.
    pub regularized: bool,
}

/// Minimizes `||a x - b||_F` column by column with Householder QR.
///
/// When `a` has fewer rows than columns, or its triangular factor has a
/// diagonal entry below `ridge_eps` times the largest one, the system is
/// augmented with `sqrt(ridge_eps) * max|R_ii| * I` rows and solved again.
pub fn lstsq(a: &Matrix, b: &Matrix, ridge_eps: f64) -> Result<LstsqSolution> {
    if a.nrows() != b.nrows() {
        return invalid(format!(
            "least squares with {} equations but {} right-hand-side rows",
            a.nrows(),
            b.nrows()
        ));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite least-squares input".into()));
    }
    let c = a.ncols();
    if a.nrows() >= c {
        let (x, diag) = qr_solve(a, b)?;
        let dmax = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dmin = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if dmax > 0.0 && dmin >= ridge_eps * dmax {
            return Ok(LstsqSolution {
                x,
                regularized: false,
            });
        }
        let lam = ridge_eps.sqrt() * if dmax > 0.0 { dmax } else { 1.0 };
        return ridge(a, b, lam);
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    ridge(a, b, ridge_eps.sqrt() * scale)
}

/// Least squares for tall systems that are usually well conditioned.
///
/// Solves the normal equations by Cholesky with one step of iterative
/// refinement when the Cholesky diagonal indicates a condition number below
/// about `1e6`, and defers to [`lstsq`] otherwise.
pub fn lstsq_tall(a: &Matrix, b: &Matrix, ridge_eps: f64) -> Result<LstsqSolution> {
    if a.nrows() != b.nrows() {
        return invalid("least-squares dimension mismatch");
    }
    if a.nrows() < a.ncols() || a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return lstsq(a, b, ridge_eps);
    }
    let at = a.transpose();
    let g = &at * a;
    if let Some(ch) = g.cholesky() {
        let l = ch.l_dirty();
        let n = l.nrows();
        let dmax = (0..n).fold(0.0f64, |m, i| m.max(l[(i, i)].abs()));
        let dmin = (0..n).fold(f64::INFINITY, |m, i| m.min(l[(i, i)].abs()));
        if dmax > 0.0 && dmin >= 1e-6 * dmax {
            let mut x = ch.solve(&(&at * b));
            let resid = b - a * &x;
            x += ch.solve(&(&at * resid));
            if x.iter().all(|v| v.is_finite()) {
                return Ok(LstsqSolution {
                    x,
                    regularized: false,
                });
            }
        }
    }
    lstsq(a, b, ridge_eps)
}

fn ridge(a: &Matrix, b: &Matrix, lam: f64) -> Result<LstsqSolution> {
    let (n, c) = (a.nrows(), a.ncols());
    let mut aa = Matrix::zeros(n + c, c);
    aa.rows_mut(0, n).copy_from(a);
    for j in 0..c {
        aa[(n + j, j)] = lam;
    }
    let mut bb = Matrix::zeros(n + c, b.ncols());
    bb.rows_mut(0, n).copy_from(b);
    let (x, _) = qr_solve(&aa, &bb)?;
    Ok(LstsqSolution {
        x,
        regularized: true,
    })
}

fn qr_solve(a: &Matrix, b: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let c = a.ncols();
    let qr = a.clone().qr();
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let diag: Vec<f64> = (0..c).map(|i| r[(i, i)]).collect();
    let rhs: DMatrix<f64> = qtb.rows(0, c).into_owned();
    let x = if diag.iter().any(|&d| d == 0.0) {
        // Exactly singular; solve the regularized system instead.
        let mut rr = r.clone();
        let dmax = diag.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..c {
            if rr[(i, i)] == 0.0 {
                rr[(i, i)] = dmax * f64::EPSILON;
            }
        }
        rr.solve_upper_triangular(&rhs)
    } else {
        r.solve_upper_triangular(&rhs)
    }
    .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite least-squares solution".into()));
    }
    Ok((x, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn pseudo(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn diagonal_case() {
        let m = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let t = truncated_svd(&m, 2).unwrap();
        assert!((t.s[0] - 3.0).abs() < 1e-14 && (t.s[1] - 2.0).abs() < 1e-14);
        assert!((t.u.column(0) - Matrix::identity(3, 3).column(0)).norm() < 1e-14);
        assert!((t.u.column(1) - Matrix::identity(3, 3).column(1)).norm() < 1e-14);
    }

    #[test]
    fn rank_one_case() {
        let a = nalgebra::DVector::from_vec(vec![1.0, -2.0, 2.0]);
        let b = nalgebra::DVector::from_vec(vec![3.0, 4.0]);
        let m = &a * b.transpose();
        let t = truncated_svd(&m, 1).unwrap();
        assert!((t.s[0] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn residual_matches_eigen_oracle() {
        let m = pseudo(5, 4, 7);
        let t = truncated_svd(&m, 3).unwrap();
        let recon = &t.u * Matrix::from_diagonal(&nalgebra::DVector::from_vec(t.s.clone())) * t.v.transpose();
        let err2 = (&m - recon).norm_squared();
        let eig = SymmetricEigen::new(m.transpose() * &m);
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((err2 - ev[3]).abs() <= 1e-9 * ev[0]);
        for j in 0..3 {
            assert!((t.s[j] * t.s[j] - ev[j]).abs() <= 1e-9 * ev[0]);
        }
        assert!(orthonormality_defect(&t.u) < 1e-10);
        assert!(orthonormality_defect(&t.v) < 1e-10);
    }

    #[test]
    fn svd_rank_out_of_range() {
        let m = pseudo(3, 2, 1);
        assert!(matches!(truncated_svd(&m, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(truncated_svd(&m, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sign_convention() {
        let m = pseudo(6, 4, 3);
        let t = truncated_svd(&m, 4).unwrap();
        for j in 0..4 {
            let col = t.u.column(j);
            let imax = col.iamax();
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn padded_left_vectors() {
        let a = nalgebra::DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0]);
        let m = &a * a.transpose();
        let u = leading_left_vectors(&m, 3).unwrap();
        assert_eq!(u.ncols(), 3);
        assert!(orthonormality_defect(&u) < 1e-12);
        let p = &u * u.transpose();
        assert!((&p * &m - &m).norm() < 1e-12);
        // r may exceed the column count.
        let w = pseudo(5, 2, 9);
        let u = leading_left_vectors(&w, 4).unwrap();
        assert!(orthonormality_defect(&u) < 1e-12);
    }

    #[test]
    fn complement_completes_basis() {
        let (q, _) = qr_thin(&pseudo(6, 2, 5));
        let c = orth_complement(&q).unwrap();
        assert_eq!(c.ncols(), 4);
        assert!((q.transpose() * &c).norm() < 1e-12);
        let mut full = Matrix::zeros(6, 6);
        full.columns_mut(0, 2).copy_from(&q);
        full.columns_mut(2, 4).copy_from(&c);
        assert!(orthonormality_defect(&full) < 1e-12);
    }

    #[test]
    fn qr_has_nonnegative_diagonal() {
        let m = pseudo(7, 3, 11);
        let (q, r) = qr_thin(&m);
        for i in 0..3 {
            assert!(r[(i, i)] >= 0.0);
        }
        assert!((&q * &r - &m).norm() < 1e-12);
    }

    #[test]
    fn lstsq_overdetermined_and_ridge() {
        let a = pseudo(8, 3, 13);
        let x = pseudo(3, 2, 17);
        let b = &a * &x;
        let sol = lstsq(&a, &b, 1e-12).unwrap();
        assert!(!sol.regularized);
        assert!((sol.x - &x).norm() < 1e-10);

        let mut sing = a.clone();
        let c0 = sing.column(0).into_owned();
        sing.set_column(2, &c0);
        let sol = lstsq(&sing, &b, 1e-12).unwrap();
        assert!(sol.regularized);
        assert!(sol.x.iter().all(|v| v.is_finite()));

        let fast = lstsq_tall(&a, &b, 1e-12).unwrap();
        assert!((fast.x - &x).norm() < 1e-10);
        let fast = lstsq_tall(&sing, &b, 1e-12).unwrap();
        assert!(fast.regularized);

        let wide = pseudo(2, 4, 19);
        let sol = lstsq(&wide, &pseudo(2, 1, 23), 1e-12).unwrap();
        assert!(sol.regularized);
        assert!((&wide * &sol.x - pseudo(2, 1, 23)).norm() < 1e-4);
    }
}
