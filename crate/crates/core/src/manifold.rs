//! The cost `½ vec(E)ᵀ C vec(E)` as a function on SO(3) × S².
//!
//! With `r = vec(R)` and `E = [t]×R`, the essential vector is linear in each
//! factor separately: `vec(E) = T̃ r` with `T̃ = I₃ ⊗ [t]×`, and
//! `vec(E) = R̃ t` where block `b` of `R̃` is `−[r_b]×` for column `r_b` of `R`.
//! Public costs are reported without the ½; gradients and Hessians are those
//! of the ½-scaled function.

use nalgebra::{SMatrix, SVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{
    cross_matrix, so3_exp, DataMatrix, Mat3, Mat9, RelativePose, RotationMatrix,
    TranslationDirection, Vec3, Vec9,
};

pub type Mat9x3 = SMatrix<f64, 9, 3>;
pub type Mat3x9 = SMatrix<f64, 3, 9>;
pub type Vec12 = SVector<f64, 12>;

/// A tangent (or ambient) vector at a point of SO(3) × S².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductTangent {
    pub omega_r: Mat3,
    pub delta_t: Vec3,
}

impl ProductTangent {
    pub fn zeros() -> Self {
        Self {
            omega_r: Mat3::zeros(),
            delta_t: Vec3::zeros(),
        }
    }

    pub fn new(omega_r: Mat3, delta_t: Vec3) -> Self {
        Self { omega_r, delta_t }
    }

    /// Splits a stacked `(vec(Ṙ); ṫ)` vector.
    pub fn from_stacked(v: &Vec12) -> Self {
        Self {
            omega_r: Mat3::from_column_slice(&v.as_slice()[..9]),
            delta_t: Vec3::new(v[9], v[10], v[11]),
        }
    }

    pub fn stacked(&self) -> Vec12 {
        let mut v = Vec12::zeros();
        v.fixed_rows_mut::<9>(0)
            .copy_from_slice(self.omega_r.as_slice());
        v.fixed_rows_mut::<3>(9).copy_from(&self.delta_t);
        v
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.omega_r.dot(&other.omega_r) + self.delta_t.dot(&other.delta_t)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            omega_r: self.omega_r * s,
            delta_t: self.delta_t * s,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            omega_r: self.omega_r + other.omega_r,
            delta_t: self.delta_t + other.delta_t,
        }
    }

    /// `self + s·other`
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        Self {
            omega_r: self.omega_r + other.omega_r * s,
            delta_t: self.delta_t + other.delta_t * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.omega_r.iter().chain(self.delta_t.iter()).all(|x| x.is_finite())
    }
}

fn sym(a: &Mat3) -> Mat3 {
    (a + a.transpose()) * 0.5
}

fn skew(a: &Mat3) -> Mat3 {
    (a - a.transpose()) * 0.5
}

/// `R · skew(Rᵀ X)`
pub fn proj_rotation_tangent(r: &RotationMatrix, x: &Mat3) -> Mat3 {
    let r = r.matrix();
    r * skew(&(r.transpose() * x))
}

/// `x − (tᵀx) t`
pub fn proj_sphere_tangent(t: &TranslationDirection, x: &Vec3) -> Vec3 {
    let t = t.vector();
    x - t * t.dot(x)
}

pub fn project(pose: &RelativePose, v: &ProductTangent) -> ProductTangent {
    ProductTangent {
        omega_r: proj_rotation_tangent(&pose.rotation, &v.omega_r),
        delta_t: proj_sphere_tangent(&pose.translation, &v.delta_t),
    }
}

/// `T̃ = I₃ ⊗ [t]×`, so that `vec([t]× R) = T̃ vec(R)`.
pub fn t_tilde(t: &Vec3) -> Mat9 {
    let tx = cross_matrix(t);
    let mut m = Mat9::zeros();
    for b in 0..3 {
        m.fixed_view_mut::<3, 3>(3 * b, 3 * b).copy_from(&tx);
    }
    m
}

/// `R̃ = (Rᵀ ⊗ I₃) B`, so that `vec([t]× R) = R̃ t`.
pub fn r_tilde(r: &Mat3) -> Mat9x3 {
    let mut m = Mat9x3::zeros();
    for b in 0..3 {
        let rb: Vec3 = r.column(b).into_owned();
        m.fixed_view_mut::<3, 3>(3 * b, 0)
            .copy_from(&(-cross_matrix(&rb)));
    }
    m
}

/// Stacking matrices with `R̃[:, i] = B_i vec(R)`; each is `I₃ ⊗ [e_i]×`.
const STACK_B: [[[f64; 3]; 3]; 3] = [
    [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
];

fn stack_b(i: usize) -> Mat9 {
    let blk = Mat3::from_fn(|a, b| STACK_B[i][a][b]);
    let mut m = Mat9::zeros();
    for b in 0..3 {
        m.fixed_view_mut::<3, 3>(3 * b, 3 * b).copy_from(&blk);
    }
    m
}

/// Stacking matrices with `T̃[:, i] = A_i t`: block `b` of `A_{3b+c}` is
/// `−[e_c]×`, all other blocks zero.
fn stack_a(i: usize) -> Mat9x3 {
    let (b, c) = (i / 3, i % 3);
    let mut m = Mat9x3::zeros();
    m.fixed_view_mut::<3, 3>(3 * b, 0)
        .copy_from(&(-cross_matrix(&Vec3::ith(c, 1.0))));
    m
}

/// Snapshot of the quadratic model at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrices {
    /// `T̃ᵀ C T̃`
    pub m_r: Mat9,
    /// `R̃ᵀ C R̃`
    pub m_t: Mat3,
    /// `∂(M_r r)/∂t`
    pub m_tr: Mat9x3,
}

pub fn build_cost_matrices(c: &DataMatrix, pose: &RelativePose) -> CostMatrices {
    let tt = t_tilde(pose.t());
    let rt = r_tilde(pose.r());
    let m_r = tt.transpose() * c.c * tt;
    let m_t = rt.transpose() * c.c * rt;
    let m_tr = cross_term_by_rows(c, pose, &tt, &rt);
    CostMatrices {
        m_r: sym9(&m_r),
        m_t: sym(&m_t),
        m_tr,
    }
}

fn sym9(m: &Mat9) -> Mat9 {
    (m + m.transpose()) * 0.5
}

/// Row `i` of `M_r r` is `tᵀ A_iᵀ C R̃ t`; its gradient in `t` is
/// `A_iᵀ C e + R̃ᵀ C A_i t`.
fn cross_term_by_rows(c: &DataMatrix, pose: &RelativePose, tt: &Mat9, rt: &Mat9x3) -> Mat9x3 {
    let e = tt * pose.rotation.vec();
    let ce = c.c * e;
    let t = pose.t();
    let mut m = Mat9x3::zeros();
    for i in 0..9 {
        let a = stack_a(i);
        let g = a.transpose() * ce + rt.transpose() * (c.c * (a * t));
        m.set_row(i, &g.transpose());
    }
    m
}

/// `∂(M_t t)/∂r` stacked from the derivatives of its three rows. Used to
/// cross-check `M_tr = M_rtᵀ`.
pub fn cross_term_rt(c: &DataMatrix, pose: &RelativePose) -> Mat3x9 {
    let tt = t_tilde(pose.t());
    let r = pose.rotation.vec();
    let ce = c.c * (tt * r);
    let mut m = Mat3x9::zeros();
    for i in 0..3 {
        let b = stack_b(i);
        let g = b.transpose() * ce + tt.transpose() * (c.c * (b * r));
        m.set_row(i, &g.transpose());
    }
    m
}

/// `(M_r r; M_t t)`, the gradient of `½ vec(E)ᵀ C vec(E)` in the entries of
/// `(R, t)`.
pub fn euclidean_gradient(cm: &CostMatrices, pose: &RelativePose) -> Vec12 {
    let gr = cm.m_r * pose.rotation.vec();
    let gt = cm.m_t * pose.t();
    let mut g = Vec12::zeros();
    g.fixed_rows_mut::<9>(0).copy_from(&gr);
    g.fixed_rows_mut::<3>(9).copy_from(&gt);
    g
}

/// Block Hessian `[M_r, M_tr; M_trᵀ, M_t]` applied to `(ṙ; ṫ)`.
pub fn euclidean_hessian_vp(cm: &CostMatrices, v: &ProductTangent) -> Vec12 {
    let rdot = Vec9::from_column_slice(v.omega_r.as_slice());
    let hr = cm.m_r * rdot + cm.m_tr * v.delta_t;
    let ht = cm.m_tr.transpose() * rdot + cm.m_t * v.delta_t;
    let mut h = Vec12::zeros();
    h.fixed_rows_mut::<9>(0).copy_from(&hr);
    h.fixed_rows_mut::<3>(9).copy_from(&ht);
    h
}

pub fn riemannian_gradient(cm: &CostMatrices, pose: &RelativePose) -> ProductTangent {
    let g = ProductTangent::from_stacked(&euclidean_gradient(cm, pose));
    project(pose, &g)
}

/// Riemannian Hessian of the embedded submanifold: projected directional
/// derivative plus the Weingarten terms `−Ṙ sym(Rᵀ∇_R)` and `−(tᵀ∇_t) ṫ`.
pub fn riemannian_hessian_vp(
    cm: &CostMatrices,
    pose: &RelativePose,
    v: &ProductTangent,
) -> ProductTangent {
    let egrad = ProductTangent::from_stacked(&euclidean_gradient(cm, pose));
    riemannian_hessian_vp_with_grad(cm, pose, &egrad, v)
}

pub(crate) fn riemannian_hessian_vp_with_grad(
    cm: &CostMatrices,
    pose: &RelativePose,
    egrad: &ProductTangent,
    v: &ProductTangent,
) -> ProductTangent {
    let eh = ProductTangent::from_stacked(&euclidean_hessian_vp(cm, v));
    let r = pose.r();
    let rot = eh.omega_r - v.omega_r * sym(&(r.transpose() * egrad.omega_r));
    ProductTangent {
        omega_r: proj_rotation_tangent(&pose.rotation, &rot),
        delta_t: proj_sphere_tangent(&pose.translation, &eh.delta_t)
            - v.delta_t * pose.t().dot(&egrad.delta_t),
    }
}

/// `R ← R exp(RᵀṘ)`, `t ← (t + ṫ)/‖t + ṫ‖`.
pub fn retract(pose: &RelativePose, v: &ProductTangent) -> Result<RelativePose> {
    let r = pose.r();
    let w = skew(&(r.transpose() * v.omega_r));
    let omega = Vec3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
    let r_new = r * so3_exp(&omega);
    let t_new = pose.t() + v.delta_t;
    let n = t_new.norm();
    if !n.is_finite() || !omega.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("retraction step"));
    }
    if n == 0.0 {
        return Err(Error::AntipodalStep);
    }
    Ok(RelativePose::new(
        RotationMatrix::from_matrix_unchecked(r_new),
        TranslationDirection::normalized(t_new)?,
    ))
}

/// Sum of the three largest eigenvalues of `C`.
pub fn preconditioner_alpha(c: &DataMatrix) -> Result<f64> {
    if c.c.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroDataMatrix);
    }
    if !c.c.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("data matrix"));
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(c.c).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let alpha = ev[0] + ev[1] + ev[2];
    if alpha > 0.0 {
        Ok(alpha)
    } else {
        Err(Error::ZeroDataMatrix)
    }
}

/// The preconditioner `v ↦ v/α` on tangent vectors.
pub fn precondition(alpha: f64, v: &ProductTangent) -> ProductTangent {
    v.scale(1.0 / alpha)
}
