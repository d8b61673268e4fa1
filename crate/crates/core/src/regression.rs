//! Linear measurement designs, synthetic Gaussian instances and TRIP estimates.
//!
//! Covariates are stored as one batched tensor of shape `(n, p_1, ..., p_d)`
//! with the sample index fastest, i.e. an `n x (p_1 ... p_d)` column-major
//! matrix `C`. Applying the design to `X` with the response modes flattened
//! is then the single product `scale * C * X`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrixView, DMatrixViewMut};

use crate::error::{invalid, Error, Result};
use crate::random::{gaussian_tensor, gaussian_vec, haar_orthonormal, rng_from_seed};
use crate::tensor::{DenseTensor, Matrix};
use crate::tucker::TuckerTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignKind {
    General,
    /// A single covariate matrix acting on mode 1.
    Vector,
    /// Scalar responses on matrix covariates, with matrix-specific fast paths.
    MatrixTrace,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesignKind::General => "general",
            DesignKind::Vector => "vector",
            DesignKind::MatrixTrace => "matrix-trace",
        })
    }
}

impl FromStr for DesignKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(DesignKind::General),
            "vector" => Ok(DesignKind::Vector),
            "matrix-trace" => Ok(DesignKind::MatrixTrace),
            _ => Err(Error::Parse(format!("unknown design kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LinearDesign {
    kind: DesignKind,
    covariates: DenseTensor,
    dims: Vec<usize>,
    d: usize,
    n: usize,
    scale: f64,
}

impl LinearDesign {
    /// `covariates` has shape `(n, p_1, ..., p_d)`; `response_dims` lists
    /// `p_{d+1}, ..., p_{d+m}`.
    pub fn general(covariates: DenseTensor, response_dims: &[usize], scale: f64) -> Result<Self> {
        Self::build(DesignKind::General, covariates, response_dims, scale)
    }

    /// Packs a list of equally shaped covariate tensors.
    pub fn from_covariate_list(
        list: &[DenseTensor],
        response_dims: &[usize],
        scale: f64,
    ) -> Result<Self> {
        let first = list
            .first()
            .ok_or_else(|| Error::InvalidArgument("at least one covariate is required".into()))?;
        let n = list.len();
        let pd = first.len();
        let mut data = vec![0.0; n * pd];
        for (i, a) in list.iter().enumerate() {
            if a.shape() != first.shape() {
                return invalid("all covariates must share one shape");
            }
            for (j, &v) in a.data().iter().enumerate() {
                data[i + n * j] = v;
            }
        }
        let mut shape = vec![n];
        shape.extend_from_slice(first.shape());
        Self::general(DenseTensor::new(shape, data)?, response_dims, scale)
    }

    /// Tensor-on-vector design `X x_1 (scale A)` with `A` of size `n x p_1`.
    pub fn vector(a: &Matrix, response_dims: &[usize], scale: f64) -> Result<Self> {
        Self::build(
            DesignKind::Vector,
            DenseTensor::from_matrix(a),
            response_dims,
            scale,
        )
    }

    /// Matrix trace regression; `covariates` has shape `(n, p_1, p_2)`.
    pub fn matrix_trace(covariates: DenseTensor, scale: f64) -> Result<Self> {
        if covariates.order() != 3 {
            return invalid("matrix trace covariates must have shape (n, p1, p2)");
        }
        Self::build(DesignKind::MatrixTrace, covariates, &[], scale)
    }

    fn build(
        kind: DesignKind,
        covariates: DenseTensor,
        response_dims: &[usize],
        scale: f64,
    ) -> Result<Self> {
        if covariates.order() < 2 {
            return invalid("covariates need a sample mode and at least one feature mode");
        }
        if response_dims.iter().any(|&p| p == 0) {
            return invalid("response extents must be positive");
        }
        if !scale.is_finite() {
            return invalid("design scale must be finite");
        }
        let n = covariates.shape()[0];
        let d = covariates.order() - 1;
        let mut dims = covariates.shape()[1..].to_vec();
        dims.extend_from_slice(response_dims);
        Ok(Self {
            kind,
            covariates,
            dims,
            d,
            n,
            scale,
        })
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.dims.len() - self.d
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Ambient shape `(p_1, ..., p_{d+m})` of the parameter tensor.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn covariate_dims(&self) -> &[usize] {
        &self.dims[..self.d]
    }

    pub fn response_dims(&self) -> &[usize] {
        &self.dims[self.d..]
    }

    /// Shape of the observations: `(n, p_{d+1}, ..., p_{d+m})`, or `(n)`.
    pub fn observation_shape(&self) -> Vec<usize> {
        let mut s = vec![self.n];
        s.extend_from_slice(self.response_dims());
        s
    }

    /// Batched covariates of shape `(n, p_1, ..., p_d)`.
    pub fn covariates(&self) -> &DenseTensor {
        &self.covariates
    }

    /// Covariates as the `n x (p_1 ... p_d)` matrix `C` (unscaled).
    pub fn covariate_matrix(&self) -> DMatrixView<'_, f64> {
        let pd = self.covariates.len() / self.n;
        self.covariates.as_matrix(self.n, pd)
    }

    /// The `i`-th covariate tensor (unscaled).
    pub fn covariate(&self, i: usize) -> DenseTensor {
        let c = self.covariate_matrix();
        let data = c.row(i).iter().copied().collect();
        DenseTensor::new(self.covariate_dims().to_vec(), data).expect("valid shape")
    }

    fn pd(&self) -> usize {
        self.covariate_dims().iter().product()
    }

    fn pr(&self) -> usize {
        self.response_dims().iter().product()
    }

    /// The measurement operator.
    pub fn apply(&self, x: &DenseTensor) -> Result<DenseTensor> {
        if x.shape() != self.dims.as_slice() {
            return invalid(format!(
                "parameter of shape {:?} does not match design dims {:?}",
                x.shape(),
                self.dims
            ));
        }
        let (pd, pr) = (self.pd(), self.pr());
        let xm = x.as_matrix(pd, pr);
        let mut out = vec![0.0; self.n * pr];
        DMatrixViewMut::from_slice(&mut out, self.n, pr).gemm(
            self.scale,
            &self.covariate_matrix(),
            &xm,
            0.0,
        );
        DenseTensor::new(self.observation_shape(), out)
    }

    /// The adjoint of [`apply`](Self::apply).
    pub fn adjoint(&self, r: &DenseTensor) -> Result<DenseTensor> {
        if r.shape() != self.observation_shape().as_slice() {
            return invalid(format!(
                "residual of shape {:?} does not match observation shape {:?}",
                r.shape(),
                self.observation_shape()
            ));
        }
        let (pd, pr) = (self.pd(), self.pr());
        let mut out = vec![0.0; pd * pr];
        let mut dst = DMatrixViewMut::from_slice(&mut out, pd, pr);
        let rm = r.as_matrix(self.n, pr);
        if pd > 5 && pr > 5 && self.n > 5 {
            // Blocked kernel on a transposed-stride view of C.
            let ct = DMatrixView::from_slice_with_strides(self.covariates.data(), pd, self.n, self.n, 1);
            dst.gemm(self.scale, &ct, &rm, 0.0);
        } else {
            // Few response columns: contiguous dot products.
            dst.gemm_tr(self.scale, &self.covariate_matrix(), &rm, 0.0);
        }
        DenseTensor::new(self.dims.clone(), out)
    }
}

/// A regression problem: design, observations and optional ground truth.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub design: LinearDesign,
    pub observations: DenseTensor,
    pub ground_truth: Option<TuckerTensor>,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

impl ProblemInstance {
    pub fn new(design: LinearDesign, observations: DenseTensor) -> Result<Self> {
        if observations.shape() != design.observation_shape().as_slice() {
            return invalid(format!(
                "observations of shape {:?}, expected {:?}",
                observations.shape(),
                design.observation_shape()
            ));
        }
        Ok(Self {
            design,
            observations,
            ground_truth: None,
            noise_sigma: 0.0,
            seed: None,
        })
    }

    pub fn dims(&self) -> &[usize] {
        self.design.dims()
    }

    /// `y - A(x)`.
    pub fn residual(&self, x: &DenseTensor) -> Result<DenseTensor> {
        Ok(&self.observations - &self.design.apply(x)?)
    }

    /// `0.5 ||y - A(x)||_F^2`.
    pub fn loss(&self, x: &DenseTensor) -> Result<f64> {
        Ok(0.5 * self.residual(x)?.frob_norm().powi(2))
    }

    /// Ambient gradient `A*(A(x) - y)` of the loss.
    pub fn euclidean_gradient(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let r = self.residual(x)?;
        Ok(-&self.design.adjoint(&r)?)
    }

    /// `||x - X*||_F / ||X*||_F` when the ground truth is known.
    pub fn rel_rmse(&self, x: &DenseTensor) -> Option<f64> {
        self.ground_truth.as_ref().map(|t| {
            let td = t.to_dense();
            x.distance(&td) / td.frob_norm()
        })
    }

    /// Writes the instance into `dir` as a metadata record plus tensor dumps.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let join = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut meta = String::new();
        meta.push_str(&format!("kind={}\n", self.design.kind));
        meta.push_str(&format!("dims={}\n", join(self.design.dims())));
        meta.push_str(&format!("d={}\n", self.design.d()));
        meta.push_str(&format!("m={}\n", self.design.m()));
        meta.push_str(&format!("n={}\n", self.design.n()));
        meta.push_str(&format!("scale={:.17e}\n", self.design.scale()));
        meta.push_str(&format!("sigma={:.17e}\n", self.noise_sigma));
        if let Some(seed) = self.seed {
            meta.push_str(&format!("seed={seed}\n"));
        }
        if let Some(t) = &self.ground_truth {
            meta.push_str(&format!("truth_ranks={}\n", join(&t.ranks())));
        }
        std::fs::write(dir.join("meta.txt"), meta)?;
        self.design.covariates.save(dir.join("covariates.txt"))?;
        self.observations.save(dir.join("observations.txt"))?;
        if let Some(t) = &self.ground_truth {
            t.core().save(dir.join("truth_core.txt"))?;
            for (k, u) in t.factors().iter().enumerate() {
                DenseTensor::from_matrix(u).save(dir.join(format!("truth_factor_{k}.txt")))?;
            }
        }
        Ok(())
    }

    /// Reads an instance written by [`export`](Self::export).
    pub fn import(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("meta.txt"))?;
        let meta: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| Error::Parse(format!("metadata is missing {k:?}")))
        };
        let parse_f = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|e| Error::Parse(format!("bad {k}: {e}")))
        };
        let parse_list = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().map_err(|e| Error::Parse(format!("bad extent {t:?}: {e}"))))
                .collect()
        };
        let kind: DesignKind = get("kind")?.parse()?;
        let dims = parse_list(get("dims")?)?;
        let d: usize = get("d")?
            .parse()
            .map_err(|e| Error::Parse(format!("bad d: {e}")))?;
        let scale = parse_f("scale")?;
        let covariates = DenseTensor::load(dir.join("covariates.txt"))?;
        if d > dims.len() {
            return Err(Error::Parse("d exceeds the number of modes".into()));
        }
        let design = match kind {
            DesignKind::General => LinearDesign::general(covariates, &dims[d..], scale)?,
            DesignKind::Vector => {
                let a = covariates.matricize(0)?;
                LinearDesign::vector(&a, &dims[d..], scale)?
            }
            DesignKind::MatrixTrace => LinearDesign::matrix_trace(covariates, scale)?,
        };
        if design.dims() != dims.as_slice() {
            return Err(Error::Parse("covariate dump does not match dims".into()));
        }
        let observations = DenseTensor::load(dir.join("observations.txt"))?;
        let mut inst = ProblemInstance::new(design, observations)?;
        inst.noise_sigma = parse_f("sigma")?;
        inst.seed = match meta.get("seed") {
            Some(s) => Some(s.parse().map_err(|e| Error::Parse(format!("bad seed: {e}")))?),
            None => None,
        };
        if meta.contains_key("truth_ranks") {
            let core = DenseTensor::load(dir.join("truth_core.txt"))?;
            let factors = (0..dims.len())
                .map(|k| DenseTensor::load(dir.join(format!("truth_factor_{k}.txt")))?.matricize(0))
                .collect::<Result<Vec<_>>>()?;
            inst.ground_truth = Some(TuckerTensor::new(core, factors)?);
        }
        Ok(inst)
    }
}

/// Draws a Tucker tensor with a Gaussian core and uniformly random factors.
pub fn random_tucker(rng: &mut crate::random::Rng, dims: &[usize], r: &[usize]) -> Result<TuckerTensor> {
    crate::tucker::check_ranks(dims, r)?;
    let core = gaussian_tensor(rng, r);
    let factors = dims
        .iter()
        .zip(r)
        .map(|(&p, &rk)| haar_orthonormal(rng, p, rk))
        .collect();
    TuckerTensor::new(core, factors)
}

/// Synthetic Gaussian-ensemble instance.
///
/// The ground truth has an i.i.d. N(0,1) core and Haar factors; covariates
/// are i.i.d. N(0,1) with `scale = 1/sqrt(n)`, and the noise `scale * eps`
/// has `eps` i.i.d. N(0, sigma^2). `d` counts covariate modes; for
/// [`DesignKind::Vector`] it must be 1 and for [`DesignKind::MatrixTrace`]
/// `dims` must have exactly two modes with `d = 2`.
pub fn generate_gaussian_instance(
    kind: DesignKind,
    dims: &[usize],
    d: usize,
    r_star: &[usize],
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<ProblemInstance> {
    if dims.is_empty() || dims.iter().any(|&p| p == 0) {
        return invalid(format!("invalid dims {dims:?}"));
    }
    if d == 0 || d > dims.len() {
        return invalid(format!("d = {d} must lie in 1..={}", dims.len()));
    }
    if n == 0 {
        return invalid("n must be positive");
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return invalid("sigma must be a finite nonnegative number");
    }
    match kind {
        DesignKind::Vector if d != 1 => return invalid("vector designs have d = 1"),
        DesignKind::MatrixTrace if d != 2 || dims.len() != 2 => {
            return invalid("matrix trace designs have d = 2 and m = 0")
        }
        _ => {}
    }
    let mut rng = rng_from_seed(seed);
    let truth = random_tucker(&mut rng, dims, r_star)?;
    let mut cshape = vec![n];
    cshape.extend_from_slice(&dims[..d]);
    let covariates = gaussian_tensor(&mut rng, &cshape);
    let scale = 1.0 / (n as f64).sqrt();
    let design = match kind {
        DesignKind::General => LinearDesign::general(covariates, &dims[d..], scale)?,
        DesignKind::Vector => LinearDesign::vector(&covariates.matricize(0)?, &dims[1..], scale)?,
        DesignKind::MatrixTrace => LinearDesign::matrix_trace(covariates, scale)?,
    };
    let mut obs = design.apply(&truth.to_dense())?;
    if sigma > 0.0 {
        let eps = gaussian_vec(&mut rng, obs.len());
        for (o, e) in obs.data_mut().iter_mut().zip(eps) {
            *o += scale * sigma * e;
        }
    }
    let mut inst = ProblemInstance::new(design, obs)?;
    inst.ground_truth = Some(truth);
    inst.noise_sigma = sigma;
    inst.seed = Some(seed);
    Ok(inst)
}

/// Samples `trials` unit-norm tensors of Tucker rank at most `r` and returns
/// the extreme values of `||A(z)||_F^2`. This is a sampled lower bound on the
/// restricted isometry constant, not a certificate.
pub fn estimate_trip(design: &LinearDesign, r: &[usize], trials: usize, seed: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return invalid("trials must be positive");
    }
    let mut rng = rng_from_seed(seed);
    let mut rmin = f64::INFINITY;
    let mut rmax = 0.0f64;
    for _ in 0..trials {
        let z = random_tucker(&mut rng, design.dims(), r)?.to_dense();
        let z = z.scale(1.0 / z.frob_norm());
        let v = design.apply(&z)?.frob_norm().powi(2);
        rmin = rmin.min(v);
        rmax = rmax.max(v);
    }
    Ok((rmin, rmax))
}

/// `max(1 - rmin, rmax - 1)`.
pub fn trip_constant(rmin: f64, rmax: f64) -> f64 {
    (1.0 - rmin).max(rmax - 1.0)
}

/// Identity-like design with `n = prod(dims)` and `A_i = e_i`.
pub fn identity_design(dims: &[usize]) -> Result<LinearDesign> {
    let n: usize = dims.iter().product();
    let mut shape = vec![n];
    shape.extend_from_slice(dims);
    let mut c = DenseTensor::zeros(&shape);
    for i in 0..n {
        c.data_mut()[i + n * i] = 1.0;
    }
    LinearDesign::general(c, &[], 1.0)
}
