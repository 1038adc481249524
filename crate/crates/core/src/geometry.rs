//! Epipolar geometry primitives: bearing pairs, poses, essential matrices, the
//! quadratic data matrix and the linear (8-point) initializer.
//!
//! Throughout, `vec(·)` stacks a 3×3 matrix column by column, which is also the
//! storage order of nalgebra matrices. A correspondence `(f, f')` is consistent
//! with a pose when `fᵀ E f' = 0` for `E = [t]×R`, i.e. a point `p'` in the
//! second frame maps to `R p' + t` in the first.

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec9 = SVector<f64, 9>;
pub type Mat9 = SMatrix<f64, 9, 9>;

const UNIT_TOL: f64 = 1e-12;
const ROTATION_TOL: f64 = 1e-10;

/// A pair of unit bearing vectors observing the same point from two cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingPair {
    pub f: Vec3,
    pub f_prime: Vec3,
}

impl BearingPair {
    /// Builds a pair from vectors that are already unit length.
    pub fn new(f: Vec3, f_prime: Vec3) -> Result<Self> {
        for v in [&f, &f_prime] {
            let n = v.norm();
            if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::NotUnit(n));
            }
        }
        Ok(Self { f, f_prime })
    }

    /// Normalizes both vectors. Fails on zero or non-finite input.
    pub fn normalized(f: Vec3, f_prime: Vec3) -> Result<Self> {
        let nf = f.norm();
        let nfp = f_prime.norm();
        for n in [nf, nfp] {
            if !n.is_finite() || n == 0.0 {
                return Err(Error::NotUnit(n));
            }
        }
        Ok(Self {
            f: f / nf,
            f_prime: f_prime / nfp,
        })
    }

    /// Kronecker product `f' ⊗ f`, so that `vec(E)ᵀ (f' ⊗ f) = fᵀ E f'`.
    pub fn kron(&self) -> Vec9 {
        let mut k = Vec9::zeros();
        for a in 0..3 {
            for b in 0..3 {
                k[3 * a + b] = self.f_prime[a] * self.f[b];
            }
        }
        k
    }
}

/// The problem input: ordered bearing pairs with optional per-pair weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pairs: Vec<BearingPair>,
    weights: Option<Vec<f64>>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<BearingPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyCorrespondences);
        }
        Ok(Self {
            pairs,
            weights: None,
        })
    }

    /// Attaches weights in `[0, 1]`, one per pair.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.pairs.len() {
            return Err(Error::InvalidWeights(format!(
                "expected {} weights, got {}",
                self.pairs.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::WeightOutOfRange(*w));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn pairs(&self) -> &[BearingPair] {
        &self.pairs
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Unweighted subset of the given indices.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.pairs[i]).collect())
    }
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn new(m: Mat3) -> Result<Self> {
        let orth = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if !orth.is_finite() || orth > ROTATION_TOL {
            return Err(Error::NotARotation(format!("‖RᵀR − I‖∞ = {orth:e}")));
        }
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotARotation(format!("det = {det}")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Rotation by `angle` radians about `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let axis = axis.normalize();
        Self(so3_exp(&(axis * angle)))
    }

    /// Wraps a matrix already known to be orthonormal (up to rounding).
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn vec(&self) -> Vec9 {
        Vec9::from_column_slice(self.0.as_slice())
    }
}

/// A unit vector on S², the translation direction up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationDirection(Vec3);

impl TranslationDirection {
    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnit(n));
        }
        Ok(Self(v))
    }

    pub fn normalized(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::NotUnit(n));
        }
        Ok(Self(v / n))
    }

    pub fn vector(&self) -> &Vec3 {
        &self.0
    }
}

/// A (normalized) essential matrix with singular values (1, 1, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Mat3);

impl EssentialMatrix {
    #[cfg(test)]
    pub(crate) fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    /// `vec(E)`, column-major.
    pub fn vec(&self) -> Vec9 {
        Vec9::from_column_slice(self.0.as_slice())
    }
}

/// Relative pose `(R, t)` on SO(3) × S².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: RotationMatrix,
    pub translation: TranslationDirection,
}

impl RelativePose {
    pub fn new(rotation: RotationMatrix, translation: TranslationDirection) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn r(&self) -> &Mat3 {
        self.rotation.matrix()
    }

    pub fn t(&self) -> &Vec3 {
        self.translation.vector()
    }

    /// Stacked `x = [vec(E); t]` used by the certifier.
    pub fn stacked(&self) -> SVector<f64, 12> {
        let e = essential_from_pose(self).vec();
        let mut x = SVector::<f64, 12>::zeros();
        x.fixed_rows_mut::<9>(0).copy_from(&e);
        x.fixed_rows_mut::<3>(9).copy_from(self.t());
        x
    }
}

/// The 9×9 PSD matrix `C = Σ wᵢ (f'ᵢ ⊗ fᵢ)(f'ᵢ ⊗ fᵢ)ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    pub c: Mat9,
    pub n_points: usize,
}

impl DataMatrix {
    pub fn trace(&self) -> f64 {
        self.c.trace()
    }

    /// The 12×12 matrix `Q` with `C` in the leading block and zeros elsewhere.
    pub fn padded(&self) -> SMatrix<f64, 12, 12> {
        let mut q = SMatrix::<f64, 12, 12>::zeros();
        q.fixed_view_mut::<9, 9>(0, 0).copy_from(&self.c);
        q
    }
}

pub fn cross_matrix(t: &Vec3) -> Mat3 {
    Mat3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Exponential map of so(3): `exp([w]×)`.
pub(crate) fn so3_exp(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = cross_matrix(w);
    // Taylor coefficients below the threshold keep full precision near zero.
    let (a, b) = if theta2 < 1e-10 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

pub fn essential_from_pose(pose: &RelativePose) -> EssentialMatrix {
    EssentialMatrix(cross_matrix(pose.t()) * pose.r())
}

/// Builds the (optionally weighted) data matrix with fixed left-to-right
/// summation over the pairs.
pub fn build_data_matrix(corr: &CorrespondenceSet) -> Result<DataMatrix> {
    if corr.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let mut c = Mat9::zeros();
    for (i, pair) in corr.pairs().iter().enumerate() {
        let w = corr.weight(i);
        if w == 0.0 {
            continue;
        }
        let k = pair.kron();
        c.ger(w, &k, &k, 1.0);
    }
    Ok(DataMatrix {
        c,
        n_points: corr.len(),
    })
}

/// Normalized algebraic error `fᵀ E f'`.
pub fn epipolar_residual(e: &EssentialMatrix, pair: &BearingPair) -> f64 {
    pair.f.dot(&(e.matrix() * pair.f_prime))
}

/// `vec(E)ᵀ C vec(E)`.
pub fn cost(c: &DataMatrix, e: &EssentialMatrix) -> f64 {
    let v = e.vec();
    (v.transpose() * c.c * v)[0].max(0.0)
}

/// Projects a nonzero 3×3 matrix onto the normalized essential matrices,
/// `U diag(1, 1, 0) Vᵀ`.
pub fn project_to_essential(m: &Mat3) -> Result<EssentialMatrix> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("essential projection input"));
    }
    if m.norm() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let (u, _, v_t) = sorted_svd(m);
    let e = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 0.0)) * v_t;
    Ok(EssentialMatrix(e))
}

/// SVD with singular values in descending order and `det(U) = det(V) = +1`.
/// Flipping the sign of the last singular direction leaves `U diag(1,1,0) Vᵀ`
/// unchanged.
fn sorted_svd(m: &Mat3) -> (Mat3, Vec3, Mat3) {
    let svd = m.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut v_t = svd.v_t.expect("requested Vᵀ");
    let mut s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let (u0, v0, s0) = (u, v_t, s);
    for (dst, &src) in order.iter().enumerate() {
        u.set_column(dst, &u0.column(src));
        v_t.set_row(dst, &v0.row(src));
        s[dst] = s0[src];
    }
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    (u, s, v_t)
}

/// Output of the linear initializer.
#[derive(Debug, Clone, Copy)]
pub struct EightPointEstimate {
    pub essential: EssentialMatrix,
    /// Set when `C` has rank below 8, i.e. the null space is not one-dimensional.
    pub degenerate: bool,
}

/// Linear estimate from the eigenvector of `C` with the smallest eigenvalue,
/// projected onto the essential matrices.
pub fn initialize_eight_point(corr: &CorrespondenceSet) -> Result<EightPointEstimate> {
    if corr.len() < 8 {
        return Err(Error::TooFewCorrespondences {
            required: 8,
            got: corr.len(),
        });
    }
    let data = build_data_matrix(corr)?;
    eight_point_from_data(&data)
}

pub(crate) fn eight_point_from_data(data: &DataMatrix) -> Result<EightPointEstimate> {
    if !data.c.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("data matrix"));
    }
    let eig = SymmetricEigen::new(data.c);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut v: Vec9 = eig.eigenvectors.column(order[0]).into_owned();
    let scale = v.amax();
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12 * scale) {
        if first < 0.0 {
            v.neg_mut();
        }
    }
    let trace = data.trace().max(f64::MIN_POSITIVE);
    let degenerate = eig.eigenvalues[order[1]] <= 1e-10 * trace;
    let m = Mat3::from_column_slice(v.as_slice());
    Ok(EightPointEstimate {
        essential: project_to_essential(&m)?,
        degenerate,
    })
}

/// Pose recovered from an essential matrix, with a flag for when no candidate
/// had any cheirality support.
#[derive(Debug, Clone, Copy)]
pub struct PoseEstimate {
    pub pose: RelativePose,
    pub degenerate: bool,
}

/// Decomposes `E` into its four `(R, t)` candidates and keeps the one with the
/// most correspondences triangulating in front of both cameras (midpoint
/// method).
pub fn pose_from_essential(e: &EssentialMatrix, corr: &CorrespondenceSet) -> Result<PoseEstimate> {
    if corr.is_empty() {
        return Err(Error::EmptyCorrespondences);
    }
    let (u, _, v_t) = sorted_svd(e.matrix());
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t: Vec3 = u.column(2).into_owned();
    let rotations = [u * w * v_t, u * w.transpose() * v_t];
    let candidates = [
        (rotations[0], t),
        (rotations[0], -t),
        (rotations[1], t),
        (rotations[1], -t),
    ];

    let mut best = 0usize;
    let mut best_support = 0usize;
    for (idx, (r, t)) in candidates.iter().enumerate() {
        let support = corr
            .pairs()
            .iter()
            .filter(|p| midpoint_depths(r, t, p).is_some_and(|(d1, d2)| d1 > 0.0 && d2 > 0.0))
            .count();
        if support > best_support {
            best = idx;
            best_support = support;
        }
    }
    let (r, t) = candidates[best];
    Ok(PoseEstimate {
        pose: RelativePose::new(
            RotationMatrix::from_matrix_unchecked(r),
            TranslationDirection::normalized(t)?,
        ),
        degenerate: best_support == 0,
    })
}

/// Depths `(d1, d2)` along `f` and `f'` of the closest points between the two
/// rays `d1 f` and `t + d2 R f'`; `None` for (near-)parallel rays.
fn midpoint_depths(r: &Mat3, t: &Vec3, pair: &BearingPair) -> Option<(f64, f64)> {
    let g = r * pair.f_prime;
    let b = pair.f.dot(&g);
    let denom = 1.0 - b * b;
    if denom.abs() < 1e-12 {
        return None;
    }
    let d = pair.f.dot(t);
    let e = g.dot(t);
    let d1 = (d - b * e) / denom;
    let d2 = b * d1 - e;
    Some((d1, d2))
}
