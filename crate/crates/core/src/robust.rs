//! Graduated non-convexity with Tukey's biweight, solved through the
//! Black-Rangarajan weighted formulation.

use crate::certifier::{certify, Certificate, CertifierOptions};
use crate::error::{Error, Result};
use crate::geometry::{
    build_data_matrix, eight_point_from_data, epipolar_residual, essential_from_pose,
    pose_from_essential, CorrespondenceSet, RelativePose,
};
use crate::solver::{refine_on_manifold, SolverOptions};

/// Tukey's biweight, saturating at 1/3 for `|r| ≥ c̄`.
pub fn tukey_rho(r: f64, c_bar: f64) -> f64 {
    if r.abs() <= c_bar {
        let x = r * r / (c_bar * c_bar);
        x - x * x + x * x * x / 3.0
    } else {
        1.0 / 3.0
    }
}

/// GNC surrogate of the biweight with threshold `√μ·c̄`; equal to
/// [`tukey_rho`] at `μ = 1`.
pub fn tukey_surrogate(r: f64, c_bar: f64, mu: f64) -> f64 {
    let s2 = mu * c_bar * c_bar;
    if r * r <= s2 {
        let x = r * r / s2;
        x - x * x + x * x * x / 3.0
    } else {
        1.0 / 3.0
    }
}

/// Penalty `Ψ(w) = (μc̄²/3)(1 − √w)²(1 + 2√w)` on a weight in `[0, 1]`.
pub fn outlier_process(w: f64, c_bar: f64, mu: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::WeightOutOfRange(w));
    }
    let s = w.sqrt();
    Ok(mu * c_bar * c_bar / 3.0 * (1.0 - s).powi(2) * (1.0 + 2.0 * s))
}

/// Minimizer over `w ∈ [0, 1]` of `w ε² + Ψ(w)`.
pub fn weight_for_residual(residual: f64, c_bar: f64, mu: f64) -> f64 {
    let y = residual * residual / (mu * c_bar * c_bar);
    if y > 1.0 {
        0.0
    } else {
        (1.0 - y) * (1.0 - y)
    }
}

pub fn update_weights(residuals: &[f64], c_bar: f64, mu: f64) -> Vec<f64> {
    residuals.iter().map(|&r| weight_for_residual(r, c_bar, mu)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GncConfig {
    pub mu_init: f64,
    /// Factor by which μ shrinks each outer iteration.
    pub mu_rate: f64,
    pub c_bar_sq: f64,
    /// Weights above this mark a correspondence as an inlier.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub inner_iters: usize,
    pub max_outer_iters: usize,
    pub conv_tol: f64,
    pub solver: SolverOptions,
    pub certifier: CertifierOptions,
}

impl Default for GncConfig {
    fn default() -> Self {
        Self {
            mu_init: 6000.0,
            mu_rate: 1.1,
            c_bar_sq: 1e-5,
            inlier_threshold: 0.9,
            min_inliers: 12,
            inner_iters: 2,
            max_outer_iters: 500,
            conv_tol: 1e-6,
            solver: SolverOptions::default(),
            certifier: CertifierOptions::default(),
        }
    }
}

impl GncConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_init >= 1.0
            && self.mu_rate > 1.0
            && self.c_bar_sq > 0.0
            && self.inlier_threshold > 0.0
            && self.inlier_threshold < 1.0
            && self.inner_iters >= 1
            && self.max_outer_iters >= 1
            && self.conv_tol >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid GNC configuration: {self:?}")));
        }
        self.solver.validate()?;
        self.certifier.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustResult {
    pub pose: RelativePose,
    pub weights: Vec<f64>,
    pub inlier_indices: Vec<usize>,
    pub is_valid: bool,
    pub certificate: Option<Certificate>,
    pub outer_iters: usize,
    /// Inner CG iterations summed over every refinement.
    pub inner_iters: usize,
    /// Value of μ in the last outer iteration.
    pub final_mu: f64,
    /// Cost on the inlier set after the final refinement.
    pub final_cost: f64,
    pub diagnostic: Option<String>,
}

fn residuals(corr: &CorrespondenceSet, pose: &RelativePose) -> Vec<f64> {
    let e = essential_from_pose(pose);
    corr.pairs().iter().map(|p| epipolar_residual(&e, p)).collect()
}

/// `Σ wᵢ εᵢ² + Ψ(wᵢ, μ)`
pub fn joint_objective(residuals: &[f64], weights: &[f64], c_bar: f64, mu: f64) -> f64 {
    residuals
        .iter()
        .zip(weights)
        .map(|(r, &w)| w * r * r + outlier_process(w.clamp(0.0, 1.0), c_bar, mu).unwrap_or(0.0))
        .sum()
}

fn invalid(
    pose: RelativePose,
    weights: Vec<f64>,
    cfg: &GncConfig,
    outer: usize,
    inner: usize,
    mu: f64,
    diagnostic: String,
) -> RobustResult {
    let inlier_indices = inliers(&weights, cfg.inlier_threshold);
    RobustResult {
        pose,
        weights,
        inlier_indices,
        is_valid: false,
        certificate: None,
        outer_iters: outer,
        inner_iters: inner,
        final_mu: mu,
        final_cost: f64::NAN,
        diagnostic: Some(diagnostic),
    }
}

fn inliers(weights: &[f64], threshold: f64) -> Vec<usize> {
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Runs the GNC schedule from `init` (or the unweighted eight-point estimate),
/// thresholds the weights and, given enough inliers, refines and certifies on
/// the inlier subset.
pub fn robust_estimate(
    corr: &CorrespondenceSet,
    cfg: &GncConfig,
    init: Option<RelativePose>,
) -> Result<RobustResult> {
    cfg.validate()?;
    if corr.len() < 8 {
        return Err(Error::TooFewCorrespondences { required: 8, got: corr.len() });
    }
    let unweighted = CorrespondenceSet::new(corr.pairs().to_vec())?;
    let mut pose = match init {
        Some(p) => p,
        None => {
            let c = build_data_matrix(&unweighted)?;
            let e = eight_point_from_data(&c)?.essential;
            pose_from_essential(&e, &unweighted)?.pose
        }
    };
    let c_bar = cfg.c_bar_sq.sqrt();
    let mut mu = cfg.mu_init;
    let mut weights = vec![1.0; corr.len()];
    let mut outer = 0;
    let mut inner_total = 0;

    while outer < cfg.max_outer_iters {
        outer += 1;
        // Both ends of the convergence test are evaluated at the current μ so
        // the rescaling of Ψ alone never counts as progress.
        let start = joint_objective(&residuals(&unweighted, &pose), &weights, c_bar, mu);
        let mut last = start;
        for _ in 0..cfg.inner_iters {
            let active = weights.iter().filter(|&&w| w > 0.0).count();
            if active < 8 {
                return Ok(invalid(
                    pose,
                    weights,
                    cfg,
                    outer,
                    inner_total,
                    mu,
                    format!("only {active} correspondences with nonzero weight at mu = {mu}"),
                ));
            }
            let weighted = unweighted.clone().with_weights(weights.clone())?;
            let c = build_data_matrix(&weighted)?;
            let rep = refine_on_manifold(&c, &pose, &cfg.solver)?;
            inner_total += rep.total_inner_iters;
            pose = rep.pose;
            weights = update_weights(&residuals(&unweighted, &pose), c_bar, mu);
            let obj = joint_objective(&residuals(&unweighted, &pose), &weights, c_bar, mu);
            let settled = (obj - last).abs() < cfg.conv_tol;
            last = obj;
            if settled {
                break;
            }
        }
        if (last - start).abs() < cfg.conv_tol || mu == 1.0 {
            break;
        }
        mu = (mu / cfg.mu_rate).max(1.0);
    }

    let inlier_indices = inliers(&weights, cfg.inlier_threshold);
    if inlier_indices.len() < cfg.min_inliers.max(8) {
        let n = inlier_indices.len();
        return Ok(invalid(
            pose,
            weights,
            cfg,
            outer,
            inner_total,
            mu,
            format!("{n} inliers, {} required", cfg.min_inliers),
        ));
    }

    let subset = unweighted.subset(&inlier_indices)?;
    let c = build_data_matrix(&subset)?;
    let rep = refine_on_manifold(&c, &pose, &cfg.solver)?;
    inner_total += rep.total_inner_iters;
    let certificate = certify(&c, &rep.pose, &cfg.certifier)?;
    Ok(RobustResult {
        pose: rep.pose,
        weights,
        inlier_indices,
        is_valid: true,
        certificate: Some(certificate),
        outer_iters: outer,
        inner_iters: inner_total,
        final_mu: mu,
        final_cost: rep.final_cost,
        diagnostic: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, inject_outliers, rotation_error_deg, SceneParams};
    use crate::geometry::{RotationMatrix, TranslationDirection, Vec3};
    use crate::testutil::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn rho_examples() {
        let c = 0.01;
        assert_eq!(tukey_rho(0.0, c), 0.0);
        assert_eq!(tukey_rho(c, c), 1.0 / 3.0);
        assert_eq!(tukey_rho(5.0 * c, c), 1.0 / 3.0);
        assert!((tukey_rho(c / 2f64.sqrt(), c) - 0.2916667).abs() < 1e-7);
    }

    #[test]
    fn surrogate_examples() {
        let c = 0.003;
        let mut rng = rng(80);
        for _ in 0..100 {
            let r = rng.random_range(-0.01..0.01);
            assert_eq!(tukey_surrogate(r, c, 1.0), tukey_rho(r, c));
        }
        for mu in [1.0, 10.0, 6000.0] {
            assert_eq!(tukey_surrogate(0.0, c, mu), 0.0);
            assert_eq!(tukey_surrogate(mu.sqrt() * c * 1.0001, c, mu), 1.0 / 3.0);
        }
    }

    #[test]
    fn outlier_process_endpoints() {
        let (c, mu) = (0.01, 7.0);
        assert_eq!(outlier_process(1.0, c, mu).unwrap(), 0.0);
        assert!((outlier_process(0.0, c, mu).unwrap() - mu * c * c / 3.0).abs() < 1e-18);
        assert!(outlier_process(1.5, c, mu).is_err());
        assert!(outlier_process(-0.1, c, mu).is_err());
    }

    #[test]
    fn weight_examples() {
        let (c, mu) = (0.01f64, 4.0);
        let s = (mu * c * c).sqrt();
        let w = update_weights(&[0.0, s, s / 2f64.sqrt(), 2.0 * s], c, mu);
        assert_eq!(w[0], 1.0);
        assert_eq!(w[1], 0.0);
        assert!((w[2] - 0.25).abs() < 1e-15);
        assert_eq!(w[3], 0.0);
    }

    #[test]
    fn br_identity_against_grid_minimum() {
        let mut rng = rng(81);
        let c = 1e-5f64.sqrt();
        for _ in 0..200 {
            let mu: f64 = rng.random_range(1.0..100.0);
            let eps = rng.random_range(0.0..1.5) * mu.sqrt() * c;
            let scale = mu * c * c;
            let obj = |w: f64| w * eps * eps + outlier_process(w, c, mu).unwrap();
            // Golden-section search on [0, 1].
            let (mut a, mut b) = (0.0, 1.0);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let x1 = b - g * (b - a);
                let x2 = a + g * (b - a);
                if obj(x1) < obj(x2) {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let grid_min = obj(0.5 * (a + b)).min(obj(0.0)).min(obj(1.0));
            let w = weight_for_residual(eps, c, mu);
            assert!(obj(w) <= grid_min + 1e-12 * scale);
            assert!((obj(w) - scale * tukey_surrogate(eps, c, mu)).abs() <= 1e-10 * scale);
        }
    }

    proptest! {
        #[test]
        fn weights_in_unit_interval(r in -1.0f64..1.0, mu in 1.0f64..1e4) {
            let w = weight_for_residual(r, 1e-5f64.sqrt(), mu);
            prop_assert!((0.0..=1.0).contains(&w));
        }

        #[test]
        fn weights_monotone(a in 0.0f64..0.5, b in 0.0f64..0.5, mu in 1.0f64..1e4) {
            let c = 1e-5f64.sqrt();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(weight_for_residual(hi, c, mu) <= weight_for_residual(lo, c, mu));
        }

        #[test]
        fn rho_bounded_and_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 1e-3f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (rl, rh) = (tukey_rho(lo, c), tukey_rho(hi, c));
            prop_assert!((0.0..=1.0 / 3.0).contains(&rl));
            prop_assert!(rl <= rh + 1e-15);
        }

        #[test]
        fn surrogate_non_increasing_in_mu(r in 0.0f64..0.01, m1 in 1.0f64..100.0, m2 in 1.0f64..100.0) {
            let c = 1e-3;
            let (lo, hi) = if m1 <= m2 { (m1, m2) } else { (m2, m1) };
            prop_assert!(tukey_surrogate(r, c, hi) <= tukey_surrogate(r, c, lo) + 1e-15);
        }
    }

    #[test]
    fn alternation_does_not_increase_joint_objective() {
        let mut inst = generate_scene(&SceneParams { n_points: 100, seed: 82, ..Default::default() }).unwrap();
        inst = inject_outliers(&inst, 0.3, 83);
        let corr = &inst.corr;
        let c_bar = 1e-5f64.sqrt();
        let c = build_data_matrix(corr).unwrap();
        let e = eight_point_from_data(&c).unwrap().essential;
        let mut pose = pose_from_essential(&e, corr).unwrap().pose;
        let mut weights = vec![1.0; corr.len()];
        for mu in [6000.0, 1000.0, 100.0] {
            let mut obj = joint_objective(&residuals(corr, &pose), &weights, c_bar, mu);
            for _ in 0..3 {
                let wc = build_data_matrix(&corr.clone().with_weights(weights.clone()).unwrap()).unwrap();
                pose = refine_on_manifold(&wc, &pose, &SolverOptions::default()).unwrap().pose;
                let after_pose = joint_objective(&residuals(corr, &pose), &weights, c_bar, mu);
                assert!(after_pose <= obj * (1.0 + 1e-9) + 1e-15);
                weights = update_weights(&residuals(corr, &pose), c_bar, mu);
                let after_w = joint_objective(&residuals(corr, &pose), &weights, c_bar, mu);
                assert!(after_w <= after_pose * (1.0 + 1e-12) + 1e-15);
                obj = after_w;
            }
        }
    }

    #[test]
    fn clean_noiseless_run() {
        let inst = generate_scene(&SceneParams { n_points: 100, noise_px: 0.0, seed: 84, ..Default::default() }).unwrap();
        let res = robust_estimate(&inst.corr, &GncConfig::default(), None).unwrap();
        assert!(res.is_valid);
        assert_eq!(res.outer_iters, 1);
        assert!(res.weights.iter().all(|&w| (w - 1.0).abs() < 1e-9));
        assert!(rotation_error_deg(&res.pose.rotation, &inst.gt_pose.rotation).to_radians() <= 1e-5);
    }

    #[test]
    fn unreachable_min_inliers_is_invalid() {
        let inst = generate_scene(&SceneParams { n_points: 50, seed: 85, ..Default::default() }).unwrap();
        let cfg = GncConfig { min_inliers: 1000, ..Default::default() };
        let res = robust_estimate(&inst.corr, &cfg, None).unwrap();
        assert!(!res.is_valid);
        assert!(res.certificate.is_none());
        let seven = inst.corr.subset(&[0, 1, 2, 3, 4, 5, 6]).unwrap();
        assert!(robust_estimate(&seven, &GncConfig::default(), None).is_err());
    }

    #[test]
    fn recovers_inliers_from_nearby_start() {
        let params = SceneParams { n_points: 200, fov_deg: 150.0, seed: 86, ..Default::default() };
        let inst = inject_outliers(&generate_scene(&params).unwrap(), 0.4, 87);
        let gt = &inst.gt_pose;
        let nudge = RotationMatrix::from_axis_angle(&Vec3::new(1.0, 2.0, -1.0), 2f64.to_radians());
        let start = RelativePose::new(
            RotationMatrix::new(nudge.matrix() * gt.r()).unwrap(),
            TranslationDirection::normalized(gt.t() + Vec3::new(0.02, -0.03, 0.01)).unwrap(),
        );
        let res = robust_estimate(&inst.corr, &GncConfig::default(), Some(start)).unwrap();
        assert!(res.is_valid);
        let true_inliers: Vec<usize> = (0..200).filter(|&i| !inst.outlier_mask[i]).collect();
        let found = true_inliers.iter().filter(|i| res.inlier_indices.contains(i)).count();
        assert!(found as f64 >= 0.9 * true_inliers.len() as f64);
        let false_pos = res.inlier_indices.len() - found;
        assert!(false_pos <= 10, "{false_pos}");
        assert!(rotation_error_deg(&res.pose.rotation, &gt.rotation) < 0.1);
    }
}
