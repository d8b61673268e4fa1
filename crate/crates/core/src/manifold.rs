//! Geometry of the fixed-Tucker-rank manifold at a base point.
//!
//! Tangent vectors are parameterized as `B x_k U_k + sum_k S x_k U_k⊥ D_k x_{j!=k} U_j`.
//! Internally the solvers use the rescaled blocks `E_k = D_k R_k^T`, where
//! `M_k(S)^T = V_k R_k` is the QR factorization of the transposed core
//! unfolding. In those coordinates `M_k` of the k-th block is
//! `U_k⊥ E_k W_k^T`, so the map from parameters to dense tensors is an
//! isometry even when the core is nearly rank deficient.

use crate::error::{invalid, Error, Result};
use crate::linalg::{orth_complement, orthonormality_defect, qr_thin, singular_values};
use crate::tensor::{DenseTensor, Matrix};
use crate::tucker::TuckerTensor;

/// Relative threshold below which a core unfolding counts as rank deficient.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Cached gauge quantities at a base point.
#[derive(Clone, Debug)]
pub struct Gauge {
    base: TuckerTensor,
    v: Vec<Matrix>,
    r: Vec<Matrix>,
    w: Vec<Matrix>,
    u_perp: Vec<Matrix>,
    degenerate: bool,
}

/// Gauge-relative tangent parameters `(B, {D_k})`.
#[derive(Clone, Debug)]
pub struct TangentVector<'a> {
    pub gauge: &'a Gauge,
    pub b: DenseTensor,
    pub d: Vec<Matrix>,
}

fn other_modes_product(shape: &[usize], k: usize) -> usize {
    shape
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &p)| p)
        .product()
}

/// Applies `U_j` along every mode `j != k` of `t`.
fn expand_except(t: &DenseTensor, factors: &[Matrix], k: usize) -> DenseTensor {
    let mut out = t.clone();
    for (j, u) in factors.iter().enumerate() {
        if j != k {
            out = out.mode_product(u, j).expect("compatible factor");
        }
    }
    out
}

/// Applies `U_j^T` along every mode `j != k` of `t`.
pub(crate) fn contract_except(t: &DenseTensor, factors: &[Matrix], k: usize) -> DenseTensor {
    let mut out = t.clone();
    for (j, u) in factors.iter().enumerate() {
        if j != k {
            out = out.mode_product_t(u, j).expect("compatible factor");
        }
    }
    out
}

impl Gauge {
    /// Builds the gauge, failing if some core unfolding is rank deficient.
    pub fn new(x: &TuckerTensor) -> Result<Self> {
        let g = Self::build(x)?;
        for (k, rk) in g.r.iter().enumerate() {
            let s = singular_values(rk)?;
            let smax = s.first().copied().unwrap_or(0.0);
            let smin = s.last().copied().unwrap_or(0.0);
            if rk.nrows() < x.ranks()[k] || smax == 0.0 || smin < DEGENERACY_TOL * smax {
                return Err(Error::DegeneratePoint(format!(
                    "core unfolding along mode {k} is rank deficient (sigma_min/sigma_max = {:.3e})",
                    if smax > 0.0 { smin / smax } else { 0.0 }
                )));
            }
        }
        Ok(g)
    }

    /// Builds the gauge even at rank-deficient points.
    ///
    /// The Householder QR of a rank-deficient unfolding still returns an
    /// orthonormal `V_k` whose span contains the row space, which pads the
    /// missing directions deterministically. Fails only when some `r_k`
    /// exceeds the product of the other ranks.
    pub fn lenient(x: &TuckerTensor) -> Result<Self> {
        Self::build(x)
    }

    fn build(x: &TuckerTensor) -> Result<Self> {
        let core = x.core();
        let ranks = x.ranks();
        let order = x.order();
        let mut v = Vec::with_capacity(order);
        let mut r = Vec::with_capacity(order);
        let mut w = Vec::with_capacity(order);
        let mut u_perp = Vec::with_capacity(order);
        let mut degenerate = false;
        for k in 0..order {
            let rest = other_modes_product(&ranks, k);
            if rest < ranks[k] {
                return Err(Error::DegeneratePoint(format!(
                    "rank {} along mode {k} exceeds the product {rest} of the other ranks",
                    ranks[k]
                )));
            }
            let (vk, rk) = qr_thin(&core.matricize(k)?.transpose());
            let dmax = (0..rk.nrows()).fold(0.0f64, |m, i| m.max(rk[(i, i)].abs()));
            let dmin = (0..rk.nrows()).fold(f64::INFINITY, |m, i| m.min(rk[(i, i)].abs()));
            if dmax == 0.0 || dmin < DEGENERACY_TOL * dmax {
                degenerate = true;
            }
            // W_k = (U_D ⊗ ... ⊗ U_1 without U_k) V_k, via mode products on V_k
            // folded as an [r_j (j != k)..., r_k] tensor.
            let mut vshape: Vec<usize> = (0..order).filter(|&j| j != k).map(|j| ranks[j]).collect();
            vshape.push(ranks[k]);
            let mut wt = DenseTensor::new(vshape, vk.as_slice().to_vec())?;
            for (pos, j) in (0..order).filter(|&j| j != k).enumerate() {
                wt = wt.mode_product(&x.factors()[j], pos)?;
            }
            let prest = other_modes_product(&x.dims(), k);
            w.push(Matrix::from_vec(prest, ranks[k], wt.into_data()));
            u_perp.push(orth_complement(&x.factors()[k])?);
            v.push(vk);
            r.push(rk);
        }
        Ok(Self {
            base: x.clone(),
            v,
            r,
            w,
            u_perp,
            degenerate,
        })
    }

    pub fn base(&self) -> &TuckerTensor {
        &self.base
    }

    pub fn v(&self) -> &[Matrix] {
        &self.v
    }

    /// Upper-triangular factors with `M_k(S)^T = V_k R_k`.
    pub fn r(&self) -> &[Matrix] {
        &self.r
    }

    pub fn w(&self) -> &[Matrix] {
        &self.w
    }

    pub fn u_perp(&self) -> &[Matrix] {
        &self.u_perp
    }

    pub fn factors(&self) -> &[Matrix] {
        self.base.factors()
    }

    /// Whether some core unfolding was rank deficient when the gauge was built.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn dims(&self) -> Vec<usize> {
        self.base.dims()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.base.ranks()
    }

    fn check_ambient(&self, z: &DenseTensor) -> Result<()> {
        if z.shape() != self.dims().as_slice() {
            return invalid(format!(
                "tensor of shape {:?} does not live in the ambient space {:?}",
                z.shape(),
                self.dims()
            ));
        }
        Ok(())
    }

    /// Core block `z x_k U_k^T` and the rescaled blocks
    /// `E_k = U_k⊥^T M_k(z) W_k` of the tangent projection of `z`.
    pub fn tangent_coords(&self, z: &DenseTensor) -> Result<(DenseTensor, Vec<Matrix>)> {
        self.check_ambient(z)?;
        let f = self.factors();
        let mut e = Vec::with_capacity(f.len());
        for k in 0..f.len() {
            let y = contract_except(z, f, k);
            let g = y.matricize(k)? * &self.v[k];
            e.push(self.u_perp[k].transpose() * g);
        }
        let core = contract_except(z, f, usize::MAX);
        Ok((core, e))
    }

    /// Dense tensor `B x_k U_k + sum_k T_k(U_k⊥ E_k V_k^T) x_{j!=k} U_j`.
    pub fn dense_from_coords(&self, b: &DenseTensor, e: &[Matrix]) -> Result<DenseTensor> {
        let ranks = self.ranks();
        if b.shape() != ranks.as_slice() || e.len() != ranks.len() {
            return invalid("tangent coordinates do not match the gauge");
        }
        let f = self.factors();
        let mut out = expand_except(b, f, usize::MAX);
        for k in 0..f.len() {
            let qk = f[k].nrows() - ranks[k];
            if e[k].nrows() != qk || e[k].ncols() != ranks[k] {
                return invalid(format!(
                    "block {k} is {}x{}, expected {qk}x{}",
                    e[k].nrows(),
                    e[k].ncols(),
                    ranks[k]
                ));
            }
            if qk == 0 {
                continue;
            }
            let mk = (&self.u_perp[k] * &e[k]) * self.v[k].transpose();
            let mut shape = ranks.clone();
            shape[k] = f[k].nrows();
            let t = DenseTensor::tensorize(&mk, k, &shape)?;
            out.axpy(1.0, &expand_except(&t, f, k));
        }
        Ok(out)
    }

    /// Orthogonal projection onto the tangent space.
    pub fn project_tangent(&self, z: &DenseTensor) -> Result<DenseTensor> {
        let (b, e) = self.tangent_coords(z)?;
        self.dense_from_coords(&b, &e)
    }

    /// `z - project_tangent(z)`.
    pub fn project_tangent_complement(&self, z: &DenseTensor) -> Result<DenseTensor> {
        let p = self.project_tangent(z)?;
        Ok(z - &p)
    }

    /// `E_k = D_k R_k^T`.
    pub fn e_from_d(&self, d: &[Matrix]) -> Vec<Matrix> {
        d.iter()
            .zip(&self.r)
            .map(|(dk, rk)| dk * rk.transpose())
            .collect()
    }

    /// `D_k = E_k R_k^{-T}`, solved by back substitution.
    pub fn d_from_e(&self, e: &[Matrix]) -> Result<Vec<Matrix>> {
        e.iter()
            .zip(&self.r)
            .enumerate()
            .map(|(k, (ek, rk))| {
                let n = rk.nrows();
                let dmax = (0..n).fold(0.0f64, |m, i| m.max(rk[(i, i)].abs()));
                if (0..n).any(|i| rk[(i, i)].abs() < DEGENERACY_TOL * dmax) || dmax == 0.0 {
                    return Err(Error::DegeneratePoint(format!(
                        "core unfolding along mode {k} is singular"
                    )));
                }
                let dt = rk
                    .solve_upper_triangular(&ek.transpose())
                    .ok_or_else(|| Error::DegeneratePoint(format!("singular core factor {k}")))?;
                Ok(dt.transpose())
            })
            .collect()
    }

    pub fn tangent_vector(&self, b: DenseTensor, d: Vec<Matrix>) -> Result<TangentVector<'_>> {
        let ranks = self.ranks();
        let dims = self.dims();
        if b.shape() != ranks.as_slice() || d.len() != ranks.len() {
            return invalid("tangent parameters do not match the gauge");
        }
        for (k, dk) in d.iter().enumerate() {
            if dk.nrows() != dims[k] - ranks[k] || dk.ncols() != ranks[k] {
                return invalid(format!("D_{k} has the wrong shape"));
            }
        }
        Ok(TangentVector { gauge: self, b, d })
    }

    /// Inverts the tangent parameterization for `z` in the tangent space.
    pub fn dense_to_tangent(&self, z: &DenseTensor) -> Result<TangentVector<'_>> {
        let (b, e) = self.tangent_coords(z)?;
        let p = self.dense_from_coords(&b, &e)?;
        let resid = z.distance(&p);
        if resid > 1e-8 * z.frob_norm() {
            return invalid(format!(
                "tensor is not in the tangent space (residual {:.3e})",
                resid / z.frob_norm()
            ));
        }
        let d = self.d_from_e(&e)?;
        Ok(TangentVector { gauge: self, b, d })
    }
}

impl TangentVector<'_> {
    pub fn to_dense(&self) -> Result<DenseTensor> {
        let e = self.gauge.e_from_d(&self.d);
        self.gauge.dense_from_coords(&self.b, &e)
    }
}

/// Builds the gauge at `x`; see [`Gauge::new`].
pub fn compute_gauge(x: &TuckerTensor) -> Result<Gauge> {
    Gauge::new(x)
}

pub fn project_tangent(g: &Gauge, z: &DenseTensor) -> Result<DenseTensor> {
    g.project_tangent(z)
}

pub fn project_tangent_complement(g: &Gauge, z: &DenseTensor) -> Result<DenseTensor> {
    g.project_tangent_complement(z)
}

pub fn tangent_to_dense(tv: &TangentVector<'_>) -> Result<DenseTensor> {
    tv.to_dense()
}

pub fn dense_to_tangent<'a>(g: &'a Gauge, z: &DenseTensor) -> Result<TangentVector<'a>> {
    g.dense_to_tangent(z)
}

/// Checks gauge invariants, returning the worst orthonormality defect.
pub fn gauge_defect(g: &Gauge) -> f64 {
    let mut worst = 0.0f64;
    for k in 0..g.factors().len() {
        worst = worst.max(orthonormality_defect(&g.w[k]));
        worst = worst.max(orthonormality_defect(&g.v[k]));
        let u = &g.factors()[k];
        let up = &g.u_perp[k];
        worst = worst.max((u.transpose() * up).norm());
        let mut full = Matrix::zeros(u.nrows(), u.ncols() + up.ncols());
        full.columns_mut(0, u.ncols()).copy_from(u);
        full.columns_mut(u.ncols(), up.ncols()).copy_from(up);
        worst = worst.max(orthonormality_defect(&full));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{gaussian_matrix, gaussian_tensor, haar_orthonormal, rng_from_seed, Rng};

    fn point(rng: &mut Rng, dims: &[usize], r: &[usize]) -> TuckerTensor {
        let core = gaussian_tensor(rng, r);
        let f = dims
            .iter()
            .zip(r)
            .map(|(&p, &rk)| haar_orthonormal(rng, p, rk))
            .collect();
        TuckerTensor::new(core, f).unwrap()
    }

    fn random_tangent<'a>(rng: &mut Rng, g: &'a Gauge) -> TangentVector<'a> {
        let b = gaussian_tensor(rng, &g.ranks());
        let d = g
            .dims()
            .iter()
            .zip(g.ranks())
            .map(|(&p, r)| gaussian_matrix(rng, p - r, r))
            .collect();
        g.tangent_vector(b, d).unwrap()
    }

    #[test]
    fn diagonal_matrix_gauge() {
        let core = DenseTensor::from_matrix(&Matrix::from_diagonal(&nalgebra::DVector::from_vec(
            vec![3.0, 1.0],
        )));
        let mut rng = rng_from_seed(1);
        let u1 = haar_orthonormal(&mut rng, 4, 2);
        let u2 = haar_orthonormal(&mut rng, 5, 2);
        let x = TuckerTensor::new(core, vec![u1, u2.clone()]).unwrap();
        let g = Gauge::new(&x).unwrap();
        assert!((&g.v()[0] - Matrix::identity(2, 2)).norm() < 1e-14);
        assert!((&g.w()[0] - &u2).norm() < 1e-14);
        assert!(gauge_defect(&g) < 1e-10);
    }

    #[test]
    fn complements_annihilate_unfoldings() {
        let mut rng = rng_from_seed(2);
        let x = point(&mut rng, &[5, 4, 6], &[2, 2, 2]);
        let g = Gauge::new(&x).unwrap();
        let dense = x.to_dense();
        for k in 0..3 {
            let m = dense.matricize(k).unwrap();
            assert!((g.u_perp()[k].transpose() * m).norm() < 1e-10);
        }
        assert!(gauge_defect(&g) < 1e-10);
    }

    #[test]
    fn degenerate_core_is_reported() {
        let mut core = DenseTensor::zeros(&[2, 2, 2]);
        core.data_mut()[0] = 1.0;
        let mut rng = rng_from_seed(3);
        let f = (0..3).map(|_| haar_orthonormal(&mut rng, 4, 2)).collect();
        let x = TuckerTensor::new(core, f).unwrap();
        assert!(matches!(Gauge::new(&x), Err(Error::DegeneratePoint(_))));
        let g = Gauge::lenient(&x).unwrap();
        assert!(g.is_degenerate());
        assert!(gauge_defect(&g) < 1e-10);
        // The padded projector still fixes the base point.
        let z = x.to_dense();
        assert!(g.project_tangent(&z).unwrap().distance(&z) < 1e-12);
    }

    #[test]
    fn projector_fixes_tangent_vectors() {
        let mut rng = rng_from_seed(4);
        let x = point(&mut rng, &[5, 4, 3], &[2, 3, 2]);
        let g = Gauge::new(&x).unwrap();
        let z = x.to_dense();
        assert!(g.project_tangent(&z).unwrap().distance(&z) < 1e-10 * z.frob_norm());
        let tv = random_tangent(&mut rng, &g);
        let t = tv.to_dense().unwrap();
        assert!(g.project_tangent(&t).unwrap().distance(&t) < 1e-10 * t.frob_norm());
        assert!(g.project_tangent_complement(&t).unwrap().frob_norm() < 1e-10 * t.frob_norm());
    }

    #[test]
    fn projector_is_self_adjoint_and_splits_norm() {
        let mut rng = rng_from_seed(5);
        let x = point(&mut rng, &[4, 5, 3], &[2, 2, 2]);
        let g = Gauge::new(&x).unwrap();
        let z = gaussian_tensor(&mut rng, &[4, 5, 3]);
        let w = gaussian_tensor(&mut rng, &[4, 5, 3]);
        let pz = g.project_tangent(&z).unwrap();
        let pw = g.project_tangent(&w).unwrap();
        let lhs = pz.inner(&w).unwrap();
        let rhs = z.inner(&pw).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * z.frob_norm() * w.frob_norm());
        let perp = g.project_tangent_complement(&z).unwrap();
        let split = pz.frob_norm().powi(2) + perp.frob_norm().powi(2);
        assert!((split - z.frob_norm().powi(2)).abs() < 1e-10 * z.frob_norm().powi(2));
        let pperp = g.project_tangent_complement(&perp).unwrap();
        assert!(pperp.distance(&perp) < 1e-10 * z.frob_norm());
    }

    #[test]
    fn parameterization_blocks_are_orthogonal() {
        let mut rng = rng_from_seed(6);
        let x = point(&mut rng, &[4, 4, 5], &[2, 2, 2]);
        let g = Gauge::new(&x).unwrap();
        let tv = random_tangent(&mut rng, &g);
        let zero_d: Vec<Matrix> = tv.d.iter().map(|d| d * 0.0).collect();
        let mut blocks = vec![g
            .tangent_vector(tv.b.clone(), zero_d.clone())
            .unwrap()
            .to_dense()
            .unwrap()];
        for k in 0..3 {
            let mut d = zero_d.clone();
            d[k] = tv.d[k].clone();
            blocks.push(
                g.tangent_vector(DenseTensor::zeros(&[2, 2, 2]), d)
                    .unwrap()
                    .to_dense()
                    .unwrap(),
            );
        }
        for i in 0..blocks.len() {
            for j in 0..i {
                assert!(blocks[i].inner(&blocks[j]).unwrap().abs() < 1e-10);
            }
        }
        let base = g.tangent_vector(x.core().clone(), zero_d).unwrap();
        assert!(base.to_dense().unwrap().distance(&x.to_dense()) < 1e-12);
    }

    #[test]
    fn dense_to_tangent_round_trip() {
        let mut rng = rng_from_seed(7);
        let x = point(&mut rng, &[5, 4, 4], &[2, 2, 3]);
        let g = Gauge::new(&x).unwrap();
        let tv = random_tangent(&mut rng, &g);
        let z = tv.to_dense().unwrap();
        let back = g.dense_to_tangent(&z).unwrap();
        assert!(back.b.distance(&tv.b) < 1e-8 * tv.b.frob_norm());
        for k in 0..3 {
            assert!((&back.d[k] - &tv.d[k]).norm() < 1e-8 * tv.d[k].norm());
        }
        let base = g.dense_to_tangent(&x.to_dense()).unwrap();
        assert!(base.b.distance(x.core()) < 1e-10);
        assert!(base.d.iter().all(|d| d.norm() < 1e-10));
        let off = gaussian_tensor(&mut rng, &[5, 4, 4]);
        assert!(g.dense_to_tangent(&off).is_err());
    }
}
