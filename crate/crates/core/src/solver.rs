//! Riemannian trust-region refinement on SO(3) × S² and the full
//! initialize / refine / certify pipeline.

use std::time::Instant;

use crate::certifier::{certify, Certificate, CertifierOptions};
use crate::error::{Error, Result};
use crate::geometry::{
    build_data_matrix, cost, eight_point_from_data, essential_from_pose, pose_from_essential,
    CorrespondenceSet, DataMatrix, RelativePose,
};
use crate::manifold::{
    build_cost_matrices, precondition, preconditioner_alpha, project, retract,
    riemannian_gradient, riemannian_hessian_vp_with_grad, CostMatrices, ProductTangent,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop once the Riemannian gradient norm falls below this value.
    /// `None` means `1e-9·(1 + trace(C))`.
    pub grad_tol: Option<f64>,
    pub max_outer_iters: usize,
    pub max_inner_cg_iters: usize,
    pub initial_tr_radius: f64,
    pub max_tr_radius: f64,
    pub use_preconditioner: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grad_tol: None,
            max_outer_iters: 200,
            max_inner_cg_iters: 25,
            initial_tr_radius: 0.1,
            max_tr_radius: std::f64::consts::PI,
            use_preconditioner: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let tol_ok = self.grad_tol.is_none_or(|g| g > 0.0 && g.is_finite());
        if !tol_ok
            || self.max_outer_iters == 0
            || self.max_inner_cg_iters == 0
            || !(self.initial_tr_radius > 0.0)
            || !(self.max_tr_radius >= self.initial_tr_radius)
        {
            return Err(Error::InvalidConfig(format!("invalid solver options: {self:?}")));
        }
        Ok(())
    }

    pub fn grad_tolerance(&self, c: &DataMatrix) -> f64 {
        self.grad_tol.unwrap_or(1e-9 * (1.0 + c.trace()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub pose: RelativePose,
    /// `vec(E)ᵀ C vec(E)` at the returned pose.
    pub final_cost: f64,
    pub initial_cost: f64,
    pub grad_norm: f64,
    pub outer_iters: usize,
    pub total_inner_iters: usize,
    pub converged: bool,
    /// Cost after each accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
}

fn check_finite(c: &DataMatrix) -> Result<()> {
    if c.c.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("data matrix"))
    }
}

enum CgExit {
    Converged,
    Boundary,
    MaxIters,
}

struct CgResult {
    eta: ProductTangent,
    heta: ProductTangent,
    iters: usize,
    exit: CgExit,
}

/// Steihaug-Toint truncated CG on the trust-region subproblem, with the
/// trust region measured in the norm induced by the inverse preconditioner.
fn truncated_cg(
    grad: &ProductTangent,
    delta: f64,
    max_iters: usize,
    hess: impl Fn(&ProductTangent) -> ProductTangent,
    precon: impl Fn(&ProductTangent) -> ProductTangent,
    pose: &RelativePose,
) -> CgResult {
    let mut eta = ProductTangent::zeros();
    let mut heta = ProductTangent::zeros();
    let mut r = *grad;
    let r0 = r.norm();
    let mut z = precon(&r);
    let mut z_r = z.dot(&r);
    let mut d_pd = z_r;
    let mut e_pd = 0.0;
    let mut e_pe = 0.0;
    let mut dir = z.scale(-1.0);
    let delta2 = delta * delta;

    for j in 1..=max_iters {
        let hd = hess(&dir);
        let d_hd = dir.dot(&hd);
        let alpha = z_r / d_hd;
        let e_pe_new = e_pe + 2.0 * alpha * e_pd + alpha * alpha * d_pd;
        if d_hd <= 0.0 || e_pe_new >= delta2 || !alpha.is_finite() {
            let tau = (-e_pd + (e_pd * e_pd + d_pd * (delta2 - e_pe)).max(0.0).sqrt()) / d_pd;
            eta = eta.axpy(tau, &dir);
            heta = heta.axpy(tau, &hd);
            return CgResult { eta, heta, iters: j, exit: CgExit::Boundary };
        }
        e_pe = e_pe_new;
        eta = eta.axpy(alpha, &dir);
        heta = heta.axpy(alpha, &hd);
        r = r.axpy(alpha, &hd);
        let r_norm = r.norm();
        if r_norm <= r0 * r0.min(0.1) {
            return CgResult { eta, heta, iters: j, exit: CgExit::Converged };
        }
        z = precon(&r);
        let z_r_old = z_r;
        z_r = z.dot(&r);
        let beta = z_r / z_r_old;
        dir = project(pose, &z.scale(-1.0).axpy(beta, &dir));
        e_pd = beta * (e_pd + alpha * d_pd);
        d_pd = z_r + beta * beta * d_pd;
    }
    CgResult { eta, heta, iters: max_iters, exit: CgExit::MaxIters }
}

struct Model {
    pose: RelativePose,
    cm: CostMatrices,
    egrad: ProductTangent,
    grad: ProductTangent,
    /// ½ vec(E)ᵀ C vec(E)
    f: f64,
}

impl Model {
    fn at(c: &DataMatrix, pose: RelativePose) -> Result<Self> {
        let cm = build_cost_matrices(c, &pose);
        let egrad = ProductTangent::from_stacked(&crate::manifold::euclidean_gradient(&cm, &pose));
        let grad = riemannian_gradient(&cm, &pose);
        let f = 0.5 * cost(c, &essential_from_pose(&pose));
        if !f.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite("cost or gradient"));
        }
        Ok(Self { pose, cm, egrad, grad, f })
    }

    fn hess(&self, v: &ProductTangent) -> ProductTangent {
        riemannian_hessian_vp_with_grad(&self.cm, &self.pose, &self.egrad, v)
    }
}

/// Truncated-Newton Riemannian trust-region refinement of `init`.
pub fn refine_on_manifold(
    c: &DataMatrix,
    init: &RelativePose,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    check_finite(c)?;
    let tol = opts.grad_tolerance(c);
    let alpha = if opts.use_preconditioner {
        preconditioner_alpha(c).unwrap_or(1.0)
    } else {
        1.0
    };

    let mut model = Model::at(c, *init)?;
    let initial_cost = 2.0 * model.f;
    let mut accepted_costs = vec![initial_cost];
    let mut delta = opts.initial_tr_radius;
    let mut outer = 0;
    let mut inner_total = 0;
    let mut grad_norm = model.grad.norm();

    while grad_norm > tol && outer < opts.max_outer_iters {
        outer += 1;
        let cg = truncated_cg(
            &model.grad,
            delta,
            opts.max_inner_cg_iters,
            |v| model.hess(v),
            |v| precondition(alpha, v),
            &model.pose,
        );
        inner_total += cg.iters;

        let candidate = retract(&model.pose, &cg.eta)
            .ok()
            .and_then(|p| Model::at(c, p).ok());
        let model_decrease = -(model.grad.dot(&cg.eta) + 0.5 * cg.eta.dot(&cg.heta));
        let reg = 1e3 * f64::EPSILON * model.f.abs().max(1.0);
        let (rho, f_new) = match &candidate {
            Some(m) => (((model.f - m.f) + reg) / (model_decrease + reg), m.f),
            None => (f64::NEG_INFINITY, f64::INFINITY),
        };

        if !(rho >= 0.1) {
            delta *= 0.25;
        } else if rho > 0.75 && matches!(cg.exit, CgExit::Boundary) {
            delta = (2.0 * delta).min(opts.max_tr_radius);
        }

        if rho > 0.1 && f_new <= model.f {
            model = candidate.expect("accepted step has a model");
            grad_norm = model.grad.norm();
            accepted_costs.push(2.0 * model.f);
        } else if delta < 1e-14 {
            // Stalled at machine precision.
            break;
        }
    }

    Ok(SolveReport {
        pose: model.pose,
        final_cost: 2.0 * model.f,
        initial_cost,
        grad_norm,
        outer_iters: outer,
        total_inner_iters: inner_total,
        converged: grad_norm <= tol,
        accepted_costs,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EstimateOptions {
    pub solver: SolverOptions,
    pub certifier: CertifierOptions,
}

/// Wall time per pipeline stage, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageTiming {
    pub init_us: u64,
    pub refine_us: u64,
    pub certify_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub report: SolveReport,
    pub certificate: Certificate,
    pub timing: StageTiming,
    /// Set when the linear initializer or its decomposition was degenerate.
    pub degenerate_init: bool,
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

/// Eight-point initialization, manifold refinement and certification.
pub fn estimate(corr: &CorrespondenceSet, opts: &EstimateOptions) -> Result<Estimate> {
    let start = Instant::now();
    if corr.len() < 8 {
        return Err(Error::TooFewCorrespondences { required: 8, got: corr.len() });
    }
    let c = build_data_matrix(corr)?;
    let init = eight_point_from_data(&c)?;
    let decomposed = pose_from_essential(&init.essential, corr)?;
    let init_us = micros(start);

    let t = Instant::now();
    let report = refine_on_manifold(&c, &decomposed.pose, &opts.solver)?;
    let refine_us = micros(t);

    let t = Instant::now();
    let certificate = certify(&c, &report.pose, &opts.certifier)?;
    let certify_us = micros(t);

    Ok(Estimate {
        report,
        certificate,
        timing: StageTiming { init_us, refine_us, certify_us, total_us: micros(start) },
        degenerate_init: init.degenerate || decomposed.degenerate,
    })
}
