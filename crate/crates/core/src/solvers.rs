//! Riemannian gradient descent, Riemannian Gauss-Newton and simple baselines.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrixView;

use crate::error::{invalid, Error, Result};
use crate::linalg::{lstsq, lstsq_tall};
use crate::manifold::{contract_except, Gauge};
use crate::regression::{DesignKind, ProblemInstance};
use crate::tensor::{DenseTensor, Matrix};
use crate::tucker::{feasible_ranks, pad_to_rank, retract, thosvd, RetractionMethod, TuckerTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Rgd,
    Rgn,
    Pgd,
    FactoredGd,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Rgd => "RGD",
            Algorithm::Rgn => "RGN",
            Algorithm::Pgd => "PGD",
            Algorithm::FactoredGd => "FACTORED_GD",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "RGD" => Ok(Algorithm::Rgd),
            "RGN" => Ok(Algorithm::Rgn),
            "PGD" => Ok(Algorithm::Pgd),
            "FACTORED_GD" | "GD" => Ok(Algorithm::FactoredGd),
            _ => Err(Error::Parse(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub input_rank: Vec<usize>,
    pub max_iters: usize,
    pub tol_rel_rmse: f64,
    pub retraction: RetractionMethod,
    /// Candidate stepsizes for PGD and factored GD. With `scale = 1/sqrt(n)`
    /// these are the multiples of `1/n` in the unnormalized convention.
    pub baseline_stepsizes: Vec<f64>,
    /// Fixed baseline stepsize; `None` selects the best from the grid.
    pub stepsize: Option<f64>,
    pub ridge_eps: f64,
    /// Use the tensor-on-vector closed form for RGN on vector designs.
    pub vector_closed_form: bool,
    /// Abort when the loss exceeds this multiple of the initial loss.
    pub divergence_factor: f64,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, input_rank: Vec<usize>) -> Self {
        Self {
            algorithm,
            input_rank,
            max_iters: 300,
            tol_rel_rmse: 1e-13,
            retraction: RetractionMethod::Sthosvd,
            baseline_stepsizes: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            stepsize: None,
            ridge_eps: 1e-12,
            vector_closed_form: true,
            divergence_factor: 1e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if !(self.tol_rel_rmse >= 0.0) {
            return invalid("tol_rel_rmse must be nonnegative");
        }
        if self.input_rank.is_empty() || self.input_rank.iter().any(|&r| r == 0) {
            return invalid("input_rank entries must be at least 1");
        }
        if !(self.ridge_eps > 0.0) {
            return invalid("ridge_eps must be positive");
        }
        if matches!(self.algorithm, Algorithm::Pgd | Algorithm::FactoredGd)
            && self.stepsize.is_none()
            && self.baseline_stepsizes.is_empty()
        {
            return invalid("baseline_stepsizes must not be empty");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    TolReached,
    MaxIters,
    Degenerate,
    NumericalFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::TolReached => "TOL_REACHED",
            Termination::MaxIters => "MAX_ITERS",
            Termination::Degenerate => "DEGENERATE",
            Termination::NumericalFailure => "NUMERICAL_FAILURE",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// NaN when the instance carries no ground truth.
    pub rel_rmse: f64,
    pub loss: f64,
    pub stepsize: f64,
    pub elapsed_ns: u128,
}

#[derive(Clone, Debug)]
pub struct RunTrace {
    /// Record 0 is the initial point.
    pub records: Vec<IterRecord>,
    pub termination: Termination,
    /// Set when a baseline run was aborted for divergence.
    pub diverged: bool,
    /// Stepsize picked from the grid for baseline algorithms.
    pub selected_stepsize: Option<f64>,
    pub message: Option<String>,
}

impl RunTrace {
    pub fn final_rel_rmse(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.rel_rmse)
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }
}

fn check_point(inst: &ProblemInstance, x: &TuckerTensor) -> Result<()> {
    if x.dims() != inst.dims() {
        return invalid(format!(
            "iterate of shape {:?} does not match instance dims {:?}",
            x.dims(),
            inst.dims()
        ));
    }
    Ok(())
}

fn retraction_for(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<RetractionMethod> {
    if cfg.retraction == RetractionMethod::MatrixSvd && inst.dims().len() != 2 {
        return invalid("matrix SVD retraction requires an order-2 parameter");
    }
    Ok(cfg.retraction)
}

fn target_rank(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<Vec<usize>> {
    if cfg.input_rank.len() != inst.dims().len() {
        return invalid(format!(
            "input rank {:?} does not match parameter order {}",
            cfg.input_rank,
            inst.dims().len()
        ));
    }
    Ok(feasible_ranks(inst.dims(), &cfg.input_rank))
}

/// `P_T(A*(A(X) - Y))` at a nondegenerate point.
pub fn riemannian_gradient(inst: &ProblemInstance, x: &TuckerTensor) -> Result<DenseTensor> {
    check_point(inst, x)?;
    let g = Gauge::new(x)?;
    g.project_tangent(&inst.euclidean_gradient(&x.to_dense())?)
}

/// One RGD step with the exact line-search stepsize along the projected gradient.
pub fn rgd_step(
    inst: &ProblemInstance,
    x: &TuckerTensor,
    cfg: &SolverConfig,
) -> Result<(TuckerTensor, f64)> {
    check_point(inst, x)?;
    let residual = inst.residual(&x.to_dense())?;
    rgd_step_from_residual(inst, x, &residual, cfg)
}

/// [`rgd_step`] given `y - A(x)`, saving one pass over the design.
fn rgd_step_from_residual(
    inst: &ProblemInstance,
    x: &TuckerTensor,
    residual: &DenseTensor,
    cfg: &SolverConfig,
) -> Result<(TuckerTensor, f64)> {
    check_point(inst, x)?;
    let r = target_rank(inst, cfg)?;
    let method = retraction_for(inst, cfg)?;
    let gauge = Gauge::lenient(x)?;
    let xd = x.to_dense();
    let g = gauge.project_tangent(&-&inst.design.adjoint(residual)?)?;
    let gnorm = g.frob_norm();
    if gnorm <= 1e-15 * inst.observations.frob_norm() {
        return Ok((x.clone(), 0.0));
    }
    let ag = inst.design.apply(&g)?.frob_norm();
    if ag == 0.0 || !ag.is_finite() {
        return Err(Error::NumericalFailure(
            "the design annihilates the gradient".into(),
        ));
    }
    let alpha = (gnorm / ag).powi(2);
    let mut next = xd;
    next.axpy(-alpha, &g);
    Ok((retract(&next, &r, method)?, alpha))
}

/// Applies `U_j^T` along each listed tensor mode of `t`.
fn contract_modes(t: &DenseTensor, mats: &[(&Matrix, usize)]) -> Result<DenseTensor> {
    let mut out: Option<DenseTensor> = None;
    for &(u, k) in mats {
        out = Some(out.as_ref().unwrap_or(t).mode_product_t(u, k)?);
    }
    Ok(out.unwrap_or_else(|| t.clone()))
}

/// For every listed (matrix, mode) pair, contracts `t` along all the other
/// listed modes. Splits the list in halves so the full tensor is traversed
/// only twice.
fn leave_one_out(t: &DenseTensor, mats: &[(&Matrix, usize)]) -> Result<Vec<DenseTensor>> {
    if mats.len() == 1 {
        return Ok(vec![t.clone()]);
    }
    let (left, right) = mats.split_at(mats.len() / 2);
    let mut out = leave_one_out(&contract_modes(t, right)?, left)?;
    out.extend(leave_one_out(&contract_modes(t, left)?, right)?);
    Ok(out)
}

/// Solves `a x = b`, choosing the normal-equation path for well-posed tall systems.
fn solve_ls(a: &Matrix, b: &Matrix, ridge_eps: f64) -> Result<Matrix> {
    Ok(lstsq_tall(a, b, ridge_eps)?.x)
}

/// The RGN iterate before retraction: the minimizer of `||Y - A(Z)||` over
/// the tangent space at `x`, assembled as `m + 1` separate least squares.
pub fn rgn_tangent_solution(
    inst: &ProblemInstance,
    x: &TuckerTensor,
    ridge_eps: f64,
) -> Result<DenseTensor> {
    check_point(inst, x)?;
    let gauge = Gauge::lenient(x)?;
    let design = &inst.design;
    let d = design.d();
    let order = inst.dims().len();
    let n = design.n();
    let s = design.scale();
    let f = gauge.factors();
    let ranks = gauge.ranks();
    let dims = gauge.dims();
    let q: Vec<usize> = dims.iter().zip(&ranks).map(|(p, r)| p - r).collect();
    let rd: usize = ranks[..d].iter().product();
    let rr: usize = ranks[d..].iter().product();

    // Covariates contracted with U_j^T on all covariate modes but one.
    let cov_mats: Vec<(&Matrix, usize)> = (0..d).map(|k| (&f[k], k + 1)).collect();
    let loo = leave_one_out(design.covariates(), &cov_mats)?;
    let cu = loo[0].mode_product_t(&f[0], 1)?;
    let cu = Matrix::from_column_slice(n, rd, cu.data());

    // Joint system for the core block and the covariate-mode blocks.
    let ncols = rd * rr + (0..d).map(|k| q[k] * ranks[k]).sum::<usize>();
    let mut g = Matrix::zeros(n * rr, ncols);
    for j in 0..rr {
        g.view_mut((j * n, j * rd), (n, rd)).copy_from(&(&cu * s));
    }
    let mut offsets = Vec::with_capacity(d);
    let mut off = rd * rr;
    for k in 0..d {
        offsets.push(off);
        if q[k] > 0 {
            let qk_t = loo[k].mode_product_t(&gauge.u_perp()[k], k + 1)?;
            let r_lt: usize = ranks[..k].iter().product();
            let r_gt: usize = ranks[k + 1..d].iter().product();
            let v = &gauge.v()[k];
            for j in 0..rr {
                for c_gt in 0..r_gt {
                    let vrow = r_lt * (c_gt + r_gt * j);
                    let vblk = v.rows(vrow, r_lt);
                    for a in 0..q[k] {
                        let start = n * r_lt * (a + q[k] * c_gt);
                        let qblk =
                            DMatrixView::from_slice(&qk_t.data()[start..start + n * r_lt], n, r_lt);
                        let mut target = g.view_with_steps_mut(
                            (j * n, off + a),
                            (n, ranks[k]),
                            (0, q[k] - 1),
                        );
                        target.gemm(s, &qblk, &vblk, 1.0);
                    }
                }
            }
        }
        off += q[k] * ranks[k];
    }
    let resp_mats: Vec<(&Matrix, usize)> = (d..order).map(|z| (&f[z], 1 + z - d)).collect();
    let y0 = contract_modes(&inst.observations, &resp_mats)?;
    let rhs = Matrix::from_column_slice(n * rr, 1, y0.data());
    let sol = solve_ls(&g, &rhs, ridge_eps)?;
    let b = DenseTensor::new(ranks.clone(), sol.as_slice()[..rd * rr].to_vec())?;
    let mut e: Vec<Matrix> = (0..d)
        .map(|k| {
            Matrix::from_column_slice(
                q[k],
                ranks[k],
                &sol.as_slice()[offsets[k]..offsets[k] + q[k] * ranks[k]],
            )
        })
        .collect();

    // One multivariate system per response mode.
    for z in d..order {
        if q[z] == 0 {
            e.push(Matrix::zeros(0, ranks[z]));
            continue;
        }
        let mut mats: Vec<(&Matrix, usize)> = (d..order)
            .filter(|&l| l != z)
            .map(|l| (&f[l], 1 + l - d))
            .collect();
        mats.push((&gauge.u_perp()[z], 1 + z - d));
        let yz = contract_modes(&inst.observations, &mats)?;
        let ytil = yz.matricize(1 + z - d)?.transpose();
        let blocks = rr / ranks[z];
        let v = &gauge.v()[z];
        let mut at = Matrix::zeros(n * blocks, ranks[z]);
        for j in 0..blocks {
            at.view_mut((j * n, 0), (n, ranks[z]))
                .gemm(s, &cu, &v.rows(rd * j, rd), 0.0);
        }
        let et = lstsq(&at, &ytil, ridge_eps)?.x;
        e.push(et.transpose());
    }
    gauge.dense_from_coords(&b, &e)
}

/// One Riemannian Gauss-Newton step.
pub fn rgn_step(inst: &ProblemInstance, x: &TuckerTensor, cfg: &SolverConfig) -> Result<TuckerTensor> {
    let r = target_rank(inst, cfg)?;
    let method = retraction_for(inst, cfg)?;
    let half = rgn_tangent_solution(inst, x, cfg.ridge_eps)?;
    retract(&half, &r, method)
}

/// Closed-form RGN iterate before retraction for tensor-on-vector designs.
pub fn rgn_vector_tangent_solution(inst: &ProblemInstance, x: &TuckerTensor) -> Result<DenseTensor> {
    check_point(inst, x)?;
    let design = &inst.design;
    if design.kind() != DesignKind::Vector {
        return invalid("the closed form applies to vector designs only");
    }
    let gauge = Gauge::lenient(x)?;
    let f = gauge.factors();
    let ranks = gauge.ranks();
    let order = ranks.len();
    let n = design.n();
    let a = Matrix::from_column_slice(n, f[0].nrows(), design.covariates().data()) * design.scale();
    let at = a.transpose();
    let gram = &at * &a;
    let eig = nalgebra::SymmetricEigen::new(gram.clone());
    let emax = eig.eigenvalues.max();
    let emin = eig.eigenvalues.min();
    if !(emax > 0.0) || emin <= 1e-12 * emax {
        return Err(Error::DegenerateDesign(
            "A^T A is singular or nearly so".into(),
        ));
    }
    let chol = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign("A^T A is not positive definite".into()))?;
    let u1 = &f[0];
    let u1p = &gauge.u_perp()[0];
    let v1 = &gauge.v()[0];

    // Y x_{k>=1} U_k^T unfolded along the sample mode: n x prod_{k>=1} r_k.
    let mats: Vec<(&Matrix, usize)> = (1..order).map(|k| (&f[k], k)).collect();
    let y0 = contract_modes(&inst.observations, &mats)?;
    let y0m = Matrix::from_column_slice(n, y0.len() / n, y0.data());
    let h = chol.solve(&(&at * (&y0m * v1)));
    let e1 = u1p.transpose() * &h;
    let a1 = &a * u1;
    let g1 = a1.transpose() * &a1;
    let g1_chol = g1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateDesign("U_1^T A^T A U_1 is singular".into()))?;
    let correction = &a * (u1p * &e1) * v1.transpose();
    let b1 = g1_chol.solve(&(a1.transpose() * (y0m - correction)));
    let b = DenseTensor::tensorize(&b1, 0, &ranks)?;

    let adj = design.adjoint(&inst.observations)?;
    let mut e = vec![e1];
    for k in 1..order {
        let v = &gauge.v()[k];
        if gauge.u_perp()[k].ncols() == 0 {
            e.push(Matrix::zeros(0, ranks[k]));
            continue;
        }
        let num = gauge.u_perp()[k].transpose()
            * (contract_except(&adj, f, k).matricize(k)? * v);
        // V_k^T (I ⊗ ... ⊗ G_1) V_k, with G_1 acting on the fastest index.
        let vm = Matrix::from_column_slice(ranks[0], v.len() / ranks[0], v.as_slice());
        let gv = &g1 * vm;
        let gv = Matrix::from_column_slice(v.nrows(), v.ncols(), gv.as_slice());
        let kmat = v.transpose() * gv;
        let kchol = kmat
            .cholesky()
            .ok_or_else(|| Error::DegenerateDesign(format!("mode-{k} Gram block is singular")))?;
        e.push(kchol.solve(&num.transpose()).transpose());
    }
    gauge.dense_from_coords(&b, &e)
}

/// RGN step through the tensor-on-vector closed form.
pub fn rgn_step_vector_closed_form(
    inst: &ProblemInstance,
    x: &TuckerTensor,
    cfg: &SolverConfig,
) -> Result<TuckerTensor> {
    let r = target_rank(inst, cfg)?;
    let method = retraction_for(inst, cfg)?;
    let half = rgn_vector_tangent_solution(inst, x)?;
    retract(&half, &r, method)
}

/// Projected gradient descent step in the ambient space.
pub fn pgd_step(
    inst: &ProblemInstance,
    x: &TuckerTensor,
    stepsize: f64,
    cfg: &SolverConfig,
) -> Result<TuckerTensor> {
    check_point(inst, x)?;
    let residual = inst.residual(&x.to_dense())?;
    pgd_step_from_residual(inst, x, &residual, stepsize, cfg)
}

fn pgd_step_from_residual(
    inst: &ProblemInstance,
    x: &TuckerTensor,
    residual: &DenseTensor,
    stepsize: f64,
    cfg: &SolverConfig,
) -> Result<TuckerTensor> {
    check_point(inst, x)?;
    if stepsize == 0.0 {
        return Ok(x.clone());
    }
    let r = target_rank(inst, cfg)?;
    let method = retraction_for(inst, cfg)?;
    let mut z = x.to_dense();
    z.axpy(stepsize, &inst.design.adjoint(residual)?);
    retract(&z, &r, method)
}

/// Unconstrained Tucker factorization `core x_k U_k` for factored GD.
#[derive(Clone, Debug)]
pub struct FactoredState {
    pub core: DenseTensor,
    pub factors: Vec<Matrix>,
}

impl FactoredState {
    pub fn from_tucker(x: &TuckerTensor) -> Self {
        Self {
            core: x.core().clone(),
            factors: x.factors().to_vec(),
        }
    }

    pub fn to_dense(&self) -> DenseTensor {
        let mut t = self.core.clone();
        for (k, u) in self.factors.iter().enumerate() {
            t = t.mode_product(u, k).expect("compatible factors");
        }
        t
    }
}

/// Simultaneous gradient step on the core and all factors.
pub fn factored_gd_step(
    inst: &ProblemInstance,
    state: &FactoredState,
    stepsize: f64,
) -> Result<FactoredState> {
    if stepsize == 0.0 {
        return Ok(state.clone());
    }
    let grad = inst.euclidean_gradient(&state.to_dense())?;
    let f = &state.factors;
    let mut core = state.core.clone();
    core.axpy(-stepsize, &contract_except(&grad, f, usize::MAX));
    let mut factors = Vec::with_capacity(f.len());
    for k in 0..f.len() {
        let gk = contract_except(&grad, f, k).matricize(k)? * state.core.matricize(k)?.transpose();
        factors.push(&f[k] - gk * stepsize);
    }
    Ok(FactoredState { core, factors })
}

enum Iterate {
    Tucker(TuckerTensor),
    Factored(FactoredState),
}

impl Iterate {
    fn dense(&self) -> DenseTensor {
        match self {
            Iterate::Tucker(x) => x.to_dense(),
            Iterate::Factored(s) => s.to_dense(),
        }
    }
}

/// Runs the configured algorithm from `x0`.
///
/// Numerical trouble ends the run with a termination reason rather than an
/// error; errors are returned only for invalid arguments.
pub fn solve(
    inst: &ProblemInstance,
    cfg: &SolverConfig,
    x0: &TuckerTensor,
) -> Result<(TuckerTensor, RunTrace)> {
    cfg.validate()?;
    check_point(inst, x0)?;
    let r = target_rank(inst, cfg)?;
    retraction_for(inst, cfg)?;
    if x0.ranks().iter().zip(&cfg.input_rank).any(|(a, b)| a > b) {
        return invalid(format!(
            "initial ranks {:?} exceed the input rank {:?}",
            x0.ranks(),
            cfg.input_rank
        ));
    }
    let x0 = if x0.ranks().iter().zip(&r).any(|(a, b)| a > b) {
        // Only reachable when the requested ranks were infeasible.
        thosvd(&x0.to_dense(), &r)?
    } else {
        pad_to_rank(x0, &r)?
    };
    match cfg.algorithm {
        Algorithm::Pgd | Algorithm::FactoredGd if cfg.stepsize.is_none() => {
            let mut best: Option<(f64, TuckerTensor, RunTrace)> = None;
            for &eta in &cfg.baseline_stepsizes {
                let (x, trace) = run(inst, cfg, &x0, &r, eta);
                let score = if trace.diverged {
                    f64::INFINITY
                } else if inst.ground_truth.is_some() {
                    trace.final_rel_rmse()
                } else {
                    trace.final_loss()
                };
                let score = if score.is_nan() { f64::INFINITY } else { score };
                if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                    best = Some((score, x, trace));
                }
            }
            let (_, x, mut trace) = best.expect("nonempty grid");
            trace.selected_stepsize = Some(trace_stepsize(&trace));
            Ok((x, trace))
        }
        _ => {
            let eta = cfg.stepsize.unwrap_or(0.0);
            let (x, mut trace) = run(inst, cfg, &x0, &r, eta);
            if matches!(cfg.algorithm, Algorithm::Pgd | Algorithm::FactoredGd) {
                trace.selected_stepsize = Some(eta);
            }
            Ok((x, trace))
        }
    }
}

fn trace_stepsize(trace: &RunTrace) -> f64 {
    trace.records.get(1).map_or(0.0, |r| r.stepsize)
}

fn run(
    inst: &ProblemInstance,
    cfg: &SolverConfig,
    x0: &TuckerTensor,
    r: &[usize],
    eta: f64,
) -> (TuckerTensor, RunTrace) {
    let start = Instant::now();
    let truth = inst.ground_truth.as_ref().map(|t| t.to_dense());
    let truth_norm = truth.as_ref().map(|t| t.frob_norm());
    // The residual of the current iterate is kept for the next gradient.
    let metrics = |xd: &DenseTensor| -> (f64, f64, Option<DenseTensor>) {
        let residual = inst.residual(xd).ok();
        let loss = residual.as_ref().map_or(f64::NAN, |r| 0.5 * r.frob_norm().powi(2));
        let err = match (&truth, truth_norm) {
            (Some(t), Some(nrm)) => xd.distance(t) / nrm,
            _ => f64::NAN,
        };
        (err, loss, residual)
    };
    let mut state = match cfg.algorithm {
        Algorithm::FactoredGd => Iterate::Factored(FactoredState::from_tucker(x0)),
        _ => Iterate::Tucker(x0.clone()),
    };
    let (err0, loss0, mut residual) = metrics(&x0.to_dense());
    let mut trace = RunTrace {
        records: vec![IterRecord {
            iter: 0,
            rel_rmse: err0,
            loss: loss0,
            stepsize: 0.0,
            elapsed_ns: start.elapsed().as_nanos(),
        }],
        termination: Termination::MaxIters,
        diverged: false,
        selected_stepsize: None,
        message: None,
    };
    let use_closed_form = cfg.vector_closed_form && inst.design.kind() == DesignKind::Vector;
    let done = |err: f64, loss: f64, prev_loss: f64| -> bool {
        if truth.is_some() {
            err <= cfg.tol_rel_rmse
        } else {
            (prev_loss - loss).abs() <= cfg.tol_rel_rmse * prev_loss.max(f64::MIN_POSITIVE)
        }
    };
    if truth.is_some() && err0 <= cfg.tol_rel_rmse {
        trace.termination = Termination::TolReached;
    } else {
        let mut prev_loss = loss0;
        for it in 1..=cfg.max_iters {
            let step: Result<(Iterate, f64)> = match &state {
                Iterate::Tucker(x) => match cfg.algorithm {
                    Algorithm::Rgd => match &residual {
                        Some(res) => rgd_step_from_residual(inst, x, res, cfg),
                        None => rgd_step(inst, x, cfg),
                    }
                    .map(|(y, a)| (Iterate::Tucker(y), a)),
                    Algorithm::Rgn => {
                        let y = if use_closed_form {
                            rgn_step_vector_closed_form(inst, x, cfg)
                        } else {
                            rgn_step(inst, x, cfg)
                        };
                        y.map(|y| (Iterate::Tucker(y), 1.0))
                    }
                    _ => match &residual {
                        Some(res) => pgd_step_from_residual(inst, x, res, eta, cfg),
                        None => pgd_step(inst, x, eta, cfg),
                    }
                    .map(|y| (Iterate::Tucker(y), eta)),
                },
                Iterate::Factored(s) => {
                    factored_gd_step(inst, s, eta).map(|y| (Iterate::Factored(y), eta))
                }
            };
            let (next, alpha) = match step {
                Ok(v) => v,
                Err(e) => {
                    trace.termination = match e {
                        Error::DegeneratePoint(_) => Termination::Degenerate,
                        _ => Termination::NumericalFailure,
                    };
                    trace.message = Some(e.to_string());
                    break;
                }
            };
            let xd = next.dense();
            let (err, loss, res) = metrics(&xd);
            residual = res;
            if !loss.is_finite() || xd.data().iter().any(|v| !v.is_finite()) {
                trace.termination = Termination::NumericalFailure;
                trace.message = Some("non-finite iterate".into());
                break;
            }
            state = next;
            trace.records.push(IterRecord {
                iter: it,
                rel_rmse: err,
                loss,
                stepsize: alpha,
                elapsed_ns: start.elapsed().as_nanos(),
            });
            if loss > cfg.divergence_factor * loss0.max(f64::MIN_POSITIVE) {
                trace.diverged = true;
                trace.termination = Termination::NumericalFailure;
                trace.message = Some("loss diverged".into());
                break;
            }
            if done(err, loss, prev_loss) || (cfg.algorithm == Algorithm::Rgd && alpha == 0.0) {
                trace.termination = Termination::TolReached;
                break;
            }
            prev_loss = loss;
        }
    }
    let x = match state {
        Iterate::Tucker(x) => x,
        Iterate::Factored(s) => {
            thosvd(&s.to_dense(), r).unwrap_or_else(|_| x0.clone())
        }
    };
    (x, trace)
}
