//! Tucker decompositions and low-Tucker-rank approximation.

use crate::error::{invalid, Result};
use crate::linalg::{leading_left_vectors, orthonormality_defect};
use crate::random::{haar_orthonormal, rng_from_seed};
use crate::tensor::{DenseTensor, Matrix};

/// `core x_1 U_1 ... x_D U_D` with column-orthonormal factors.
#[derive(Clone, Debug, PartialEq)]
pub struct TuckerTensor {
    core: DenseTensor,
    factors: Vec<Matrix>,
}

const ORTHO_TOL: f64 = 1e-10;

impl TuckerTensor {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return invalid(format!(
                "{} factors for an order-{} core",
                factors.len(),
                core.order()
            ));
        }
        for (k, u) in factors.iter().enumerate() {
            if u.ncols() != core.shape()[k] {
                return invalid(format!(
                    "factor {k} has {} columns, core extent is {}",
                    u.ncols(),
                    core.shape()[k]
                ));
            }
            if u.ncols() > u.nrows() {
                return invalid(format!("factor {k} is wider than tall"));
            }
            let defect = orthonormality_defect(u);
            if !(defect <= ORTHO_TOL) {
                return invalid(format!(
                    "factor {k} is not column-orthonormal (defect {defect:.3e})"
                ));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn order(&self) -> usize {
        self.factors.len()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.core.shape().to_vec()
    }

    /// Ambient shape.
    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(|u| u.nrows()).collect()
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut t = self.core.clone();
        for (k, u) in self.factors.iter().enumerate() {
            t = t.mode_product(u, k).expect("compatible factors");
        }
        t
    }

    /// Frobenius norm, equal to the core norm for orthonormal factors.
    pub fn frob_norm(&self) -> f64 {
        self.core.frob_norm()
    }

    pub fn into_parts(self) -> (DenseTensor, Vec<Matrix>) {
        (self.core, self.factors)
    }
}

/// Retraction onto the bounded Tucker-rank set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetractionMethod {
    Thosvd,
    Sthosvd,
    /// Best rank-r matrix approximation; order-2 inputs only.
    MatrixSvd,
}

pub(crate) fn check_ranks(shape: &[usize], r: &[usize]) -> Result<()> {
    if r.len() != shape.len() {
        return invalid(format!(
            "rank tuple {r:?} does not match tensor order {}",
            shape.len()
        ));
    }
    for (k, (&rk, &pk)) in r.iter().zip(shape).enumerate() {
        if rk == 0 || rk > pk {
            return invalid(format!("rank {rk} out of range for mode {k} of extent {pk}"));
        }
    }
    Ok(())
}

/// Largest ranks not exceeding `r` (and `dims`) with every `r_k` at most the
/// product of the other ranks, the condition for a nondegenerate core to exist.
pub fn feasible_ranks(dims: &[usize], r: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = r.iter().zip(dims).map(|(&a, &p)| a.min(p).max(1)).collect();
    if out.len() < 2 {
        return out;
    }
    loop {
        let mut changed = false;
        for k in 0..out.len() {
            let rest: usize = out
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .map(|(_, &v)| v)
                .product();
            if out[k] > rest {
                out[k] = rest;
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Re-expresses `x` with ranks `r >= x.ranks()`, padding factors with
/// orthonormal complement columns and the core with zeros.
pub fn pad_to_rank(x: &TuckerTensor, r: &[usize]) -> Result<TuckerTensor> {
    check_ranks(&x.dims(), r)?;
    let old = x.ranks();
    if old.iter().zip(r).any(|(a, b)| a > b) {
        return invalid(format!("cannot pad ranks {old:?} down to {r:?}"));
    }
    if old == r {
        return Ok(x.clone());
    }
    let mut core = DenseTensor::zeros(r);
    let src = x.core();
    let mut idx = vec![0usize; old.len()];
    for &v in src.data() {
        let lin = core.linear_index(&idx);
        core.data_mut()[lin] = v;
        for (i, &p) in idx.iter_mut().zip(&old) {
            *i += 1;
            if *i < p {
                break;
            }
            *i = 0;
        }
    }
    let factors = x
        .factors()
        .iter()
        .zip(r)
        .map(|(u, &rk)| {
            if u.ncols() == rk {
                return Ok(u.clone());
            }
            let comp = crate::linalg::orth_complement(u)?;
            let mut out = Matrix::zeros(u.nrows(), rk);
            out.columns_mut(0, u.ncols()).copy_from(u);
            out.columns_mut(u.ncols(), rk - u.ncols())
                .copy_from(&comp.columns(0, rk - u.ncols()));
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    TuckerTensor::new(core, factors)
}

/// `t x_k U_k^T` over every mode.
pub fn project_core(t: &DenseTensor, factors: &[Matrix]) -> Result<DenseTensor> {
    let mut core = t.clone();
    for (k, u) in factors.iter().enumerate() {
        core = core.mode_product_t(u, k)?;
    }
    Ok(core)
}

/// `t x_j U_j^T` for every `j != skip`.
fn project_except(t: &DenseTensor, factors: &[&Matrix], skip: usize) -> Result<DenseTensor> {
    let mut out: Option<DenseTensor> = None;
    for (j, u) in factors.iter().enumerate() {
        if j != skip {
            out = Some(out.as_ref().unwrap_or(t).mode_product_t(u, j)?);
        }
    }
    Ok(out.unwrap_or_else(|| t.clone()))
}

/// Truncated higher-order SVD: independent per-mode truncated SVDs.
pub fn thosvd(t: &DenseTensor, r: &[usize]) -> Result<TuckerTensor> {
    check_ranks(t.shape(), r)?;
    let factors = (0..t.order())
        .map(|k| leading_left_vectors(&t.matricize(k)?, r[k]))
        .collect::<Result<Vec<_>>>()?;
    let core = project_core(t, &factors)?;
    TuckerTensor::new(core, factors)
}

/// Sequentially truncated HOSVD, truncating modes in increasing order.
pub fn sthosvd(t: &DenseTensor, r: &[usize]) -> Result<TuckerTensor> {
    check_ranks(t.shape(), r)?;
    let mut cur = t.clone();
    let mut factors = Vec::with_capacity(t.order());
    for (k, &rk) in r.iter().enumerate() {
        let u = leading_left_vectors(&cur.matricize(k)?, rk)?;
        cur = cur.mode_product_t(&u, k)?;
        factors.push(u);
    }
    TuckerTensor::new(cur, factors)
}

/// One sweep of higher-order orthogonal iteration from `init`.
///
/// With `inplace == false` every mode is updated against the initial factors
/// of all other modes. With `inplace == true` modes before `k` use the
/// factors already updated in this sweep.
pub fn ohooi(
    t: &DenseTensor,
    init: &[Matrix],
    r: &[usize],
    inplace: bool,
) -> Result<TuckerTensor> {
    check_ranks(t.shape(), r)?;
    if init.len() != t.order() {
        return invalid("one initial factor per mode is required");
    }
    for (k, u) in init.iter().enumerate() {
        if u.nrows() != t.shape()[k] || u.ncols() != r[k] {
            return invalid(format!(
                "initial factor {k} is {}x{}, expected {}x{}",
                u.nrows(),
                u.ncols(),
                t.shape()[k],
                r[k]
            ));
        }
        let defect = orthonormality_defect(u);
        if !(defect <= 1e-8) {
            return invalid(format!(
                "initial factor {k} is not column-orthonormal (defect {defect:.3e})"
            ));
        }
    }
    let mut updated: Vec<Matrix> = Vec::with_capacity(t.order());
    for k in 0..t.order() {
        let refs: Vec<&Matrix> = (0..t.order())
            .map(|j| if inplace && j < k { &updated[j] } else { &init[j] })
            .collect();
        let partial = project_except(t, &refs, k)?;
        updated.push(leading_left_vectors(&partial.matricize(k)?, r[k])?);
    }
    let core = project_core(t, &updated)?;
    TuckerTensor::new(core, updated)
}

/// Runs HOOI sweeps from `init` until the objective `||t x_k U_k^T||_F`
/// changes by less than `1e-12` relative, or `max_sweeps` is reached.
/// Returns the final point and the objective after every sweep.
pub fn hooi(
    t: &DenseTensor,
    init: Vec<Matrix>,
    r: &[usize],
    max_sweeps: usize,
) -> Result<(TuckerTensor, Vec<f64>)> {
    check_ranks(t.shape(), r)?;
    if max_sweeps == 0 {
        return invalid("max_sweeps must be at least 1");
    }
    let mut factors = init;
    let mut objectives = Vec::new();
    let mut prev = project_core(t, &factors)?.frob_norm();
    for _ in 0..max_sweeps {
        for k in 0..t.order() {
            let refs: Vec<&Matrix> = factors.iter().collect();
            let partial = project_except(t, &refs, k)?;
            factors[k] = leading_left_vectors(&partial.matricize(k)?, r[k])?;
        }
        let obj = project_core(t, &factors)?.frob_norm();
        objectives.push(obj);
        let done = (obj - prev).abs() <= 1e-12 * obj.max(f64::MIN_POSITIVE);
        prev = obj;
        if done {
            break;
        }
    }
    let core = project_core(t, &factors)?;
    Ok((TuckerTensor::new(core, factors)?, objectives))
}

/// Approximates the best Tucker-rank-`r` approximation by HOOI restarts.
///
/// Restart 0 starts from the HOSVD factors, the rest from random orthonormal
/// factors drawn from `seed`. The largest objective wins, ties going to the
/// lowest restart index.
pub fn hooi_best_approx(
    t: &DenseTensor,
    r: &[usize],
    max_sweeps: usize,
    restarts: usize,
    seed: u64,
) -> Result<TuckerTensor> {
    check_ranks(t.shape(), r)?;
    let mut rng = rng_from_seed(seed);
    let mut best: Option<(f64, TuckerTensor)> = None;
    for i in 0..restarts.max(1) {
        let init = if i == 0 {
            thosvd(t, r)?.into_parts().1
        } else {
            t.shape()
                .iter()
                .zip(r)
                .map(|(&p, &rk)| haar_orthonormal(&mut rng, p, rk))
                .collect()
        };
        let (x, _) = hooi(t, init, r, max_sweeps)?;
        let obj = x.frob_norm();
        if best.as_ref().map_or(true, |(b, _)| obj > *b) {
            best = Some((obj, x));
        }
    }
    Ok(best.unwrap().1)
}

/// Maps `z` to a point of Tucker rank at most `r`.
pub fn retract(z: &DenseTensor, r: &[usize], method: RetractionMethod) -> Result<TuckerTensor> {
    match method {
        RetractionMethod::Thosvd => thosvd(z, r),
        RetractionMethod::Sthosvd => sthosvd(z, r),
        RetractionMethod::MatrixSvd => {
            if z.order() != 2 {
                return invalid(format!(
                    "matrix SVD retraction needs an order-2 tensor, got order {}",
                    z.order()
                ));
            }
            // For matrices the per-mode projection P_U Z P_V is the
            // Eckart-Young truncation.
            thosvd(z, r)
        }
    }
}
