//! Optimality certificates from closed-form Lagrangian dual candidates.
//!
//! The set of normalized essential matrices is described by seven quadratic
//! constraints on `x = [vec(E); t]` (`tᵀt = 1` plus the entries of
//! `EEᵀ = [t]×[t]×ᵀ`). Dropping one of h₂…h₇ gives a relaxation whose dual
//! candidate `λ̂` solves `J(x̂) λ = Q x̂` in the least-squares sense. The
//! candidate certifies `x̂` when `M(λ̂) = Q − Σ λ̂ᵢ Aᵢ` is PSD (up to `τ_μ`) and
//! the duality gap `f(x̂) − λ̂₁` vanishes (up to `τ_gap`).

use std::fmt;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{DataMatrix, Mat3, Mat9, RelativePose, RotationMatrix, TranslationDirection};

pub type Mat12 = SMatrix<f64, 12, 12>;
pub type Vec12 = nalgebra::SVector<f64, 12>;
pub type Jacobian = SMatrix<f64, 12, 6>;

const SYMMETRY_TOL: f64 = 1e-10;
const COUPLING_TOL: f64 = 1e-14;

/// Matrix forms `xᵀ A_k x = c_k` of the seven constraints h₁…h₇.
#[derive(Debug, Clone)]
pub struct ConstraintMatrices {
    pub a: [Mat12; 7],
    pub c: [f64; 7],
}

impl ConstraintMatrices {
    /// `A_k` for the 1-based constraint index `k`.
    pub fn get(&self, k: usize) -> &Mat12 {
        &self.a[k - 1]
    }
}

// Row i of E occupies entries i, i+3, i+6 of vec(E); t starts at 9.
fn row_product(m: &mut Mat12, i: usize, j: usize, scale: f64) {
    for col in 0..3 {
        let (p, q) = (i + 3 * col, j + 3 * col);
        if p == q {
            m[(p, p)] += scale;
        } else {
            m[(p, q)] += 0.5 * scale;
            m[(q, p)] += 0.5 * scale;
        }
    }
}

fn t_product(m: &mut Mat12, i: usize, j: usize, scale: f64) {
    let (p, q) = (9 + i, 9 + j);
    if p == q {
        m[(p, p)] += scale;
    } else {
        m[(p, q)] += 0.5 * scale;
        m[(q, p)] += 0.5 * scale;
    }
}

fn build_constraints() -> ConstraintMatrices {
    let mut a = [Mat12::zeros(); 7];
    // h1: tᵀt = 1
    for i in 0..3 {
        t_product(&mut a[0], i, i, 1.0);
    }
    // h2..h4: ‖e_i‖² = ‖t‖² − t_i²
    for i in 0..3 {
        row_product(&mut a[1 + i], i, i, 1.0);
        for j in (0..3).filter(|&j| j != i) {
            t_product(&mut a[1 + i], j, j, -1.0);
        }
    }
    // h5, h6, h7: e_iᵀe_j = −t_i t_j
    for (k, (i, j)) in [(0, 2), (1, 2), (0, 1)].into_iter().enumerate() {
        row_product(&mut a[4 + k], i, j, 1.0);
        t_product(&mut a[4 + k], i, j, 1.0);
    }
    ConstraintMatrices {
        a,
        c: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    }
}

pub fn constraint_matrices() -> &'static ConstraintMatrices {
    static CONSTRAINTS: OnceLock<ConstraintMatrices> = OnceLock::new();
    CONSTRAINTS.get_or_init(build_constraints)
}

/// One of the six single-drop relaxations, identified by the dropped
/// constraint index (2…7).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Relaxation(u8);

impl Relaxation {
    /// Evaluation order: h₇ first, then h₂…h₆.
    pub const ORDER: [Relaxation; 6] = [
        Relaxation(7),
        Relaxation(2),
        Relaxation(3),
        Relaxation(4),
        Relaxation(5),
        Relaxation(6),
    ];

    pub fn dropping(k: usize) -> Result<Self> {
        if (2..=7).contains(&k) {
            Ok(Self(k as u8))
        } else {
            Err(Error::InvalidConfig(format!(
                "dropped constraint must be in 2..=7, got {k}"
            )))
        }
    }

    pub fn dropped(&self) -> usize {
        self.0 as usize
    }

    /// 1-based position in [`Relaxation::ORDER`].
    pub fn index(&self) -> usize {
        Self::ORDER.iter().position(|r| r == self).unwrap() + 1
    }

    /// The six retained constraint indices, ascending (h₁ always first).
    pub fn retained(&self) -> [usize; 6] {
        let mut out = [0; 6];
        let mut n = 0;
        for k in (1..=7).filter(|&k| k != self.dropped()) {
            out[n] = k;
            n += 1;
        }
        out
    }
}

impl fmt::Display for Relaxation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "drop h{}", self.0)
    }
}

/// Columns `A_k x` for the retained constraints, in ascending `k`.
pub fn build_jacobian(x: &Vec12, relaxation: Relaxation) -> Jacobian {
    let cm = constraint_matrices();
    let mut j = Jacobian::zeros();
    for (col, k) in relaxation.retained().into_iter().enumerate() {
        j.set_column(col, &(cm.get(k) * x));
    }
    j
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualCandidate {
    /// Multipliers for the retained constraints, ascending index.
    pub lambda: [f64; 6],
    pub relaxation: Relaxation,
    /// `‖J λ̂ − Q x̂‖`
    pub residual: f64,
}

impl DualCandidate {
    /// `d(λ̂) = λ̂₁`, since only h₁ has a nonzero right-hand side.
    pub fn dual_value(&self) -> f64 {
        self.lambda[0]
    }
}

/// Least-squares solution of `J(x̂) λ = Q x̂` by Householder QR.
pub fn solve_dual_candidate(q: &Mat12, x: &Vec12, relaxation: Relaxation) -> Result<DualCandidate> {
    let j = build_jacobian(x, relaxation);
    let b = q * x;
    if !j.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("dual candidate system"));
    }
    let jd = DMatrix::from_column_slice(12, 6, j.as_slice());
    let qr = jd.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let diag_min = r.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(diag_min > 1e-10 * diag_max) {
        return Err(Error::RankDeficientJacobian {
            dropped: relaxation.dropped(),
        });
    }
    let qtb = qr.q().transpose() * DVector::from_column_slice(b.as_slice());
    let sol = r
        .solve_upper_triangular(&qtb)
        .ok_or(Error::RankDeficientJacobian {
            dropped: relaxation.dropped(),
        })?;
    let mut lambda = [0.0; 6];
    lambda.copy_from_slice(sol.as_slice());
    let lam = nalgebra::SVector::<f64, 6>::from_column_slice(&lambda);
    let residual = (j * lam - b).norm();
    Ok(DualCandidate {
        lambda,
        relaxation,
        residual,
    })
}

/// Full `M(λ̂) = Q − Σ λ̂ᵢ Aᵢ`.
pub fn lagrangian_hessian(q: &Mat12, cand: &DualCandidate) -> Mat12 {
    let cm = constraint_matrices();
    let mut m = *q;
    for (lam, k) in cand.lambda.iter().zip(cand.relaxation.retained()) {
        m -= cm.get(k) * *lam;
    }
    m
}

/// The E- and t-diagonal blocks of `M(λ̂)`. The off-diagonal block vanishes
/// for this constraint family.
pub fn hessian_of_lagrangian(q: &Mat12, cand: &DualCandidate) -> Result<(Mat9, Mat3)> {
    let m = lagrangian_hessian(q, cand);
    let coupling = m.fixed_view::<9, 3>(0, 9).amax();
    if coupling > COUPLING_TOL {
        return Err(Error::CoupledLagrangian(coupling));
    }
    Ok((
        m.fixed_view::<9, 9>(0, 0).into_owned(),
        m.fixed_view::<3, 3>(9, 9).into_owned(),
    ))
}

/// Smallest eigenvalue of a symmetric 3×3 matrix, trigonometric closed form.
pub fn min_eigenvalue_sym3(m: &Mat3) -> Result<f64> {
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    let m = (m + m.transpose()) * 0.5;
    let p1 = m[(0, 1)].powi(2) + m[(0, 2)].powi(2) + m[(1, 2)].powi(2);
    let q = m.trace() / 3.0;
    let p2 = (m[(0, 0)] - q).powi(2) + (m[(1, 1)] - q).powi(2) + (m[(2, 2)] - q).powi(2) + 2.0 * p1;
    if p2 == 0.0 {
        return Ok(q);
    }
    let p = (p2 / 6.0).sqrt();
    let b = (m - Mat3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    Ok(q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos())
}

pub fn min_eigenvalue_sym9(m: &Mat9) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s).eigenvalues.min()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifierOptions {
    /// Minimum-eigenvalue threshold τ_μ (negative).
    pub tau_mu: f64,
    /// Gap threshold τ_gap.
    pub tau_gap: f64,
    /// Compare the gap against `τ_gap·(1 + f)` instead of `τ_gap`.
    pub relative_gap: bool,
    /// Number of relaxations to try, 1…6.
    pub max_relaxations: usize,
}

impl Default for CertifierOptions {
    fn default() -> Self {
        Self {
            tau_mu: -0.02,
            tau_gap: 1e-14,
            relative_gap: true,
            max_relaxations: 6,
        }
    }
}

impl CertifierOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.max_relaxations) {
            return Err(Error::InvalidConfig(format!(
                "max_relaxations must be in 1..=6, got {}",
                self.max_relaxations
            )));
        }
        if !(self.tau_gap >= 0.0) || !self.tau_mu.is_finite() {
            return Err(Error::InvalidConfig("invalid certifier tolerances".into()));
        }
        Ok(())
    }

    pub fn gap_tolerance(&self, primal: f64) -> f64 {
        if self.relative_gap {
            self.tau_gap * (1.0 + primal.abs())
        } else {
            self.tau_gap
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateStatus {
    Optimal,
    Unknown,
}

impl fmt::Display for CertificateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Optimal => "optimal",
            Self::Unknown => "unknown",
        })
    }
}

/// Outcome of [`certify`]. When no relaxation succeeds the numeric fields
/// describe the last relaxation evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub status: CertificateStatus,
    pub relaxation_used: Option<Relaxation>,
    pub dual_value: f64,
    pub primal_value: f64,
    pub gap: f64,
    pub mu_t: f64,
    /// Not computed when the 3×3 check already failed.
    pub mu_e: Option<f64>,
    pub relaxations_tried: usize,
    /// Least-squares residual of the dual system.
    pub residual: f64,
}

impl Certificate {
    pub fn is_optimal(&self) -> bool {
        self.status == CertificateStatus::Optimal
    }
}

/// Tries the relaxations in [`Relaxation::ORDER`] until one certifies the
/// pose or `max_relaxations` have been evaluated.
pub fn certify(c: &DataMatrix, pose: &RelativePose, opts: &CertifierOptions) -> Result<Certificate> {
    opts.validate()?;
    RotationMatrix::new(*pose.r())?;
    TranslationDirection::new(*pose.t())?;
    let q = c.padded();
    let x = pose.stacked();
    let primal = (x.transpose() * q * x)[0];
    if !primal.is_finite() {
        return Err(Error::NonFinite("primal cost"));
    }
    let tol = opts.gap_tolerance(primal);

    let mut cert = Certificate {
        status: CertificateStatus::Unknown,
        relaxation_used: None,
        dual_value: f64::NAN,
        primal_value: primal,
        gap: f64::NAN,
        mu_t: f64::NAN,
        mu_e: None,
        relaxations_tried: 0,
        residual: f64::NAN,
    };
    for relaxation in Relaxation::ORDER.iter().take(opts.max_relaxations) {
        cert.relaxations_tried += 1;
        let cand = match solve_dual_candidate(&q, &x, *relaxation) {
            Ok(cand) => cand,
            Err(Error::RankDeficientJacobian { .. }) => continue,
            Err(e) => return Err(e),
        };
        let (block_e, block_t) = hessian_of_lagrangian(&q, &cand)?;
        cert.dual_value = cand.dual_value();
        cert.gap = primal - cert.dual_value;
        cert.residual = cand.residual;
        cert.mu_t = min_eigenvalue_sym3(&block_t)?;
        cert.mu_e = None;
        let gap_ok = cert.gap.abs() <= tol;
        if cert.mu_t < opts.tau_mu || !gap_ok {
            continue;
        }
        let mu_e = min_eigenvalue_sym9(&block_e);
        cert.mu_e = Some(mu_e);
        if mu_e < opts.tau_mu || !gap_ok {
            continue;
        }
        cert.status = CertificateStatus::Optimal;
        cert.relaxation_used = Some(*relaxation);
        break;
    }
    Ok(cert)
}
