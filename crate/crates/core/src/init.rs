//! Spectral initializations.

use crate::error::{invalid, Error, Result};
use crate::linalg::{leading_left_vectors, qr_thin, singular_values};
use crate::regression::{DesignKind, ProblemInstance};
use crate::tensor::{DenseTensor, Matrix};
use crate::tucker::{check_ranks, ohooi, retract, RetractionMethod, TuckerTensor};

fn spectral_factors(t: &DenseTensor, r: &[usize]) -> Result<Vec<Matrix>> {
    (0..t.order())
        .map(|k| leading_left_vectors(&t.matricize(k)?, r[k]))
        .collect()
}

/// Scalar-on-tensor initialization: per-mode spectral factors of `A*(y)`
/// followed by one HOOI sweep.
pub fn init_scalar_on_tensor(
    inst: &ProblemInstance,
    r: &[usize],
    hooi_inplace: bool,
) -> Result<TuckerTensor> {
    if inst.design.m() != 0 {
        return invalid("scalar-on-tensor initialization requires m = 0");
    }
    check_ranks(inst.dims(), r)?;
    let t = inst.design.adjoint(&inst.observations)?;
    let u0 = spectral_factors(&t, r)?;
    ohooi(&t, &u0, r, hooi_inplace)
}

/// Tensor-on-vector initialization through the QR factorization of the
/// covariate matrix.
pub fn init_tensor_on_vector(
    inst: &ProblemInstance,
    r: &[usize],
    hooi_inplace: bool,
) -> Result<TuckerTensor> {
    let design = &inst.design;
    if design.kind() != DesignKind::Vector {
        return invalid("tensor-on-vector initialization requires a vector design");
    }
    check_ranks(inst.dims(), r)?;
    let n = design.n();
    let p1 = inst.dims()[0];
    if n < p1 {
        return Err(Error::DegenerateDesign(format!(
            "{n} samples cannot give a full-column-rank {n}x{p1} design"
        )));
    }
    let a = Matrix::from_column_slice(n, p1, design.covariates().data()) * design.scale();
    let (q, ra) = qr_thin(&a);
    let s = singular_values(&ra)?;
    if s[0] == 0.0 || *s.last().unwrap() < 1e-12 * s[0] {
        return Err(Error::DegenerateDesign("covariate matrix is rank deficient".into()));
    }
    let ybar = inst.observations.mode_product_t(&q, 0)?;
    let u0 = spectral_factors(&ybar, r)?;
    let xbar = ohooi(&ybar, &u0, r, hooi_inplace)?;
    // X^0 = Xbar x_1 R^{-1}; refactor the first mode to keep it orthonormal.
    let (core, mut factors) = xbar.into_parts();
    let ru = ra
        .solve_upper_triangular(&factors[0])
        .ok_or_else(|| Error::DegenerateDesign("singular triangular factor".into()))?;
    let (q1, r1) = qr_thin(&ru);
    factors[0] = q1;
    let core = core.mode_product(&r1, 0)?;
    TuckerTensor::new(core, factors)
}

/// Matrix trace initialization: best rank-`r` approximation of `A*(y)`.
pub fn init_matrix_trace(inst: &ProblemInstance, r: &[usize]) -> Result<TuckerTensor> {
    if inst.dims().len() != 2 || inst.design.d() != 2 {
        return invalid("matrix trace initialization requires d = 2 and m = 0");
    }
    let t = inst.design.adjoint(&inst.observations)?;
    retract(&t, r, RetractionMethod::MatrixSvd)
}

/// Picks the initialization matching the design kind.
pub fn spectral_init(inst: &ProblemInstance, r: &[usize], hooi_inplace: bool) -> Result<TuckerTensor> {
    match inst.design.kind() {
        DesignKind::Vector => init_tensor_on_vector(inst, r, hooi_inplace),
        DesignKind::MatrixTrace => init_matrix_trace(inst, r),
        DesignKind::General if inst.design.m() == 0 => init_scalar_on_tensor(inst, r, hooi_inplace),
        DesignKind::General => invalid("no spectral initialization for general designs with m > 0"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormality_defect;
    use crate::random::rng_from_seed;
    use crate::regression::{generate_gaussian_instance, identity_design, random_tucker, LinearDesign};

    fn identity_instance(dims: &[usize], r: &[usize], seed: u64) -> (ProblemInstance, DenseTensor) {
        let design = identity_design(dims).unwrap();
        let truth = random_tucker(&mut rng_from_seed(seed), dims, r).unwrap().to_dense();
        let y = design.apply(&truth).unwrap();
        (ProblemInstance::new(design, y).unwrap(), truth)
    }

    #[test]
    fn scalar_init_exact_under_identity() {
        let (inst, truth) = identity_instance(&[5, 4, 4], &[2, 2, 2], 1);
        for r in [[2, 2, 2], [3, 3, 3]] {
            for inplace in [false, true] {
                let x = init_scalar_on_tensor(&inst, &r, inplace).unwrap();
                assert!(x.to_dense().distance(&truth) < 1e-9 * truth.frob_norm());
                for u in x.factors() {
                    assert!(orthonormality_defect(u) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn vector_init_exact_when_noiseless() {
        let inst = generate_gaussian_instance(DesignKind::Vector, &[5, 4, 3], 1, &[2, 2, 2], 0.0, 12, 2).unwrap();
        let truth = inst.ground_truth.as_ref().unwrap().to_dense();
        let x = init_tensor_on_vector(&inst, &[2, 2, 2], false).unwrap();
        assert!(x.to_dense().distance(&truth) < 1e-8 * truth.frob_norm());
        let x = init_tensor_on_vector(&inst, &[3, 3, 3], false).unwrap();
        assert!(x.to_dense().distance(&truth) < 1e-8 * truth.frob_norm());
    }

    #[test]
    fn vector_init_identity_matches_ohooi() {
        let dims = [4, 3, 3];
        let truth = random_tucker(&mut rng_from_seed(3), &dims, &[2, 2, 2]).unwrap().to_dense();
        let design = LinearDesign::vector(&Matrix::identity(4, 4), &dims[1..], 1.0).unwrap();
        let y = design.apply(&truth).unwrap();
        let inst = ProblemInstance::new(design, y.clone()).unwrap();
        let x = init_tensor_on_vector(&inst, &[2, 2, 2], false).unwrap();
        let direct = ohooi(&y, &spectral_factors(&y, &[2, 2, 2]).unwrap(), &[2, 2, 2], false).unwrap();
        assert!(x.to_dense().distance(&direct.to_dense()) < 1e-10);
    }

    #[test]
    fn vector_init_rejects_rank_deficient_designs() {
        let inst = generate_gaussian_instance(DesignKind::Vector, &[5, 3], 1, &[1, 1], 0.0, 3, 4).unwrap();
        assert!(matches!(
            init_tensor_on_vector(&inst, &[1, 1], false),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn matrix_init_cases() {
        let (inst, truth) = identity_instance(&[5, 4], &[2, 2], 5);
        let design = LinearDesign::matrix_trace(inst.design.covariates().clone(), 1.0).unwrap();
        let inst = ProblemInstance::new(design, inst.observations.clone()).unwrap();
        let x = init_matrix_trace(&inst, &[3, 3]).unwrap();
        assert!(x.to_dense().distance(&truth) < 1e-10);
        let full = init_matrix_trace(&inst, &[4, 4]).unwrap();
        let adj = inst.design.adjoint(&inst.observations).unwrap();
        assert!(full.to_dense().distance(&adj) < 1e-10);
    }

    #[test]
    fn scalar_init_requires_scalar_responses() {
        let inst = generate_gaussian_instance(DesignKind::General, &[3, 3, 2], 2, &[1, 1, 1], 0.0, 10, 6).unwrap();
        assert!(init_scalar_on_tensor(&inst, &[1, 1, 1], false).is_err());
        assert!(spectral_init(&inst, &[1, 1, 1], false).is_err());
    }
}
