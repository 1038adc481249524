//! Multi-start search for counterexamples to the certifier. An `Optimal`
//! verdict at `x` only promises `f(x) ≤ f* + τ_gap(1 + f) + |τ_μ|·‖x‖²`, with
//! `‖x‖² = 3` on the feasible set; nothing found by multi-start may beat it by
//! more than that.

use certpose_core::geometry::{
    build_data_matrix, BearingPair, CorrespondenceSet, RelativePose, RotationMatrix,
    TranslationDirection, Vec3,
};
use certpose_core::synth::{generate_scene, inject_outliers, SceneParams};
use certpose_core::{certify, refine_on_manifold, CertificateStatus, CertifierOptions, SolverOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_pose(rng: &mut impl Rng) -> RelativePose {
    let r = RotationMatrix::from_axis_angle(&unit(rng), rng.random_range(0.0..std::f64::consts::PI));
    RelativePose::new(r, TranslationDirection::normalized(unit(rng)).unwrap())
}

fn problems() -> Vec<CorrespondenceSet> {
    let mut out = Vec::new();
    for seed in 0..8 {
        let narrow = SceneParams { n_points: 12, fov_deg: 60.0, noise_px: 2.0, seed, ..Default::default() };
        out.push(generate_scene(&narrow).unwrap().corr);
        let wide = SceneParams { n_points: 40, noise_px: 1.0, seed: seed + 100, ..Default::default() };
        out.push(inject_outliers(&generate_scene(&wide).unwrap(), 0.3, seed).corr);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..8 {
        let pairs = (0..15)
            .map(|_| BearingPair::new(unit(&mut rng), unit(&mut rng)).unwrap())
            .collect();
        out.push(CorrespondenceSet::new(pairs).unwrap());
    }
    out
}

#[test]
fn no_certified_local_minimum_is_beaten() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let opts = SolverOptions::default();
    let cert_opts = CertifierOptions::default();
    let (mut certified, mut rejected) = (0, 0);
    for corr in problems() {
        let c = build_data_matrix(&corr).unwrap();
        let locals: Vec<_> = (0..30)
            .map(|_| refine_on_manifold(&c, &random_pose(&mut rng), &opts).unwrap())
            .collect();
        let best = locals.iter().map(|r| r.final_cost).fold(f64::INFINITY, f64::min);
        for rep in &locals {
            let cert = certify(&c, &rep.pose, &cert_opts).unwrap();
            if cert.status == CertificateStatus::Optimal {
                certified += 1;
                let f = rep.final_cost;
                let slack = cert_opts.tau_gap * (1.0 + f) + 3.0 * cert_opts.tau_mu.abs();
                assert!(best >= f - slack, "certified {f} but found {best}");
                assert!(cert.dual_value <= f + cert_opts.tau_gap * (1.0 + f));
            } else if rep.final_cost > best + 1e-6 * (1.0 + best) && rep.grad_norm < 1e-6 {
                rejected += 1;
            }
        }
    }
    assert!(certified > 0);
    assert!(rejected > 0, "no suboptimal local minimum was reached");
}

#[test]
fn perturbed_optimum_is_not_certified() {
    let params = SceneParams { n_points: 50, seed: 5, ..Default::default() };
    let inst = generate_scene(&params).unwrap();
    let c = build_data_matrix(&inst.corr).unwrap();
    let opt = refine_on_manifold(&c, &inst.gt_pose, &SolverOptions::default()).unwrap();
    assert_eq!(certify(&c, &opt.pose, &CertifierOptions::default()).unwrap().status, CertificateStatus::Optimal);
    let nudge = RotationMatrix::from_axis_angle(&Vec3::new(0.3, -1.0, 0.5), 0.3);
    let off = RelativePose::new(
        RotationMatrix::new(nudge.matrix() * opt.pose.r()).unwrap(),
        opt.pose.translation,
    );
    let f_off = certpose_core::geometry::cost(&c, &certpose_core::geometry::essential_from_pose(&off));
    assert!(f_off > opt.final_cost + 0.06);
    assert_eq!(certify(&c, &off, &CertifierOptions::default()).unwrap().status, CertificateStatus::Unknown);
}
