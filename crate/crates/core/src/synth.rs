//! Synthetic two-view scenes, outlier injection, error metrics and seeded
//! parameter sweeps.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    BearingPair, CorrespondenceSet, Mat3, RelativePose, RotationMatrix, TranslationDirection, Vec3,
};
use crate::robust::{robust_estimate, GncConfig};
use crate::solver::{estimate, EstimateOptions};

const POINT_ATTEMPTS: usize = 100;
const POSE_ATTEMPTS: usize = 50;
const ROTATION_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub n_points: usize,
    pub fov_deg: f64,
    pub max_parallax_m: f64,
    pub focal_px: f64,
    pub noise_px: f64,
    pub depth_range_m: (f64, f64),
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            n_points: 100,
            fov_deg: 100.0,
            max_parallax_m: 2.0,
            focal_px: 800.0,
            noise_px: 0.5,
            depth_range_m: (1.0, 8.0),
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let (near, far) = self.depth_range_m;
        let ok = self.n_points >= 1
            && self.fov_deg > 0.0
            && self.fov_deg < 180.0
            && self.max_parallax_m > 0.0
            && self.focal_px > 0.0
            && self.noise_px >= 0.0
            && near > 0.0
            && far > near;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid scene parameters: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub corr: CorrespondenceSet,
    pub gt_pose: RelativePose,
    pub outlier_mask: Vec<bool>,
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Haar-distributed rotation from a normalized Gaussian quaternion.
fn haar_rotation(rng: &mut impl Rng) -> Mat3 {
    let q = loop {
        let q = nalgebra::Vector4::<f64>::from_fn(|_, _| StandardNormal.sample(rng));
        let n = q.norm();
        if n > 1e-9 {
            break q / n;
        }
    };
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn in_fov(p: &Vec3, tan_half: f64) -> bool {
    p.z > 0.0 && (p.x / p.z).abs() <= tan_half && (p.y / p.z).abs() <= tan_half
}

/// Moves `f` by a random tangent offset of length `U[0, √3·σ/focal]`.
fn perturb(f: &Vec3, max_offset: f64, rng: &mut impl Rng) -> Vec3 {
    if max_offset == 0.0 {
        return *f;
    }
    let helper = if f.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = f.cross(&helper).normalize();
    let v = f.cross(&u);
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let m = rng.random_range(0.0..=max_offset);
    (f + (u * theta.cos() + v * theta.sin()) * m).normalize()
}

struct Camera2 {
    r: Mat3,
    /// Position of camera 2 in the camera-1 frame.
    t: Vec3,
}

/// Camera-2 pose: translation with magnitude in `[max/2, max]`, rotation
/// drawn from the Haar measure and kept only when the optical axis points
/// within `fov/4` of the frustum centre.
fn sample_camera2(p: &SceneParams, rng: &mut impl Rng) -> Option<Camera2> {
    let dir = random_unit(rng);
    let t = dir * rng.random_range(0.5 * p.max_parallax_m..=p.max_parallax_m);
    let centre = Vec3::new(0.0, 0.0, 0.5 * (p.depth_range_m.0 + p.depth_range_m.1));
    let view = (centre - t).normalize();
    let cone = (p.fov_deg / 4.0).to_radians().cos();
    for _ in 0..ROTATION_DRAWS {
        let r = haar_rotation(rng);
        if r.column(2).dot(&view) >= cone {
            return Some(Camera2 { r, t });
        }
    }
    None
}

/// Random scene seen by both cameras; camera 1 sits at the origin.
pub fn generate_scene(p: &SceneParams) -> Result<ProblemInstance> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let tan_half = (p.fov_deg / 2.0).to_radians().tan();
    let (near, far) = p.depth_range_m;
    let max_offset = 3f64.sqrt() * p.noise_px / p.focal_px;

    'pose: for _ in 0..POSE_ATTEMPTS {
        let Some(cam) = sample_camera2(p, &mut rng) else {
            continue;
        };
        let mut points = Vec::with_capacity(p.n_points);
        for _ in 0..p.n_points {
            let mut found = None;
            for _ in 0..POINT_ATTEMPTS {
                let z = rng.random_range(near..=far);
                let x = z * tan_half * rng.random_range(-1.0..=1.0);
                let y = z * tan_half * rng.random_range(-1.0..=1.0);
                let p1 = Vec3::new(x, y, z);
                let p2 = cam.r.transpose() * (p1 - cam.t);
                if in_fov(&p2, tan_half) {
                    found = Some((p1, p2));
                    break;
                }
            }
            match found {
                Some(pair) => points.push(pair),
                None => continue 'pose,
            }
        }
        let pairs = points
            .iter()
            .map(|(p1, p2)| {
                let f = perturb(&p1.normalize(), max_offset, &mut rng);
                let fp = perturb(&p2.normalize(), max_offset, &mut rng);
                BearingPair::new(f, fp)
            })
            .collect::<Result<Vec<_>>>()?;
        let gt_pose = RelativePose::new(
            RotationMatrix::new(cam.r)?,
            TranslationDirection::normalized(cam.t)?,
        );
        return Ok(ProblemInstance {
            corr: CorrespondenceSet::new(pairs)?,
            gt_pose,
            outlier_mask: vec![false; p.n_points],
        });
    }
    Err(Error::SceneGeneration)
}

/// Replaces `f'` of `⌊fraction·N⌋` random pairs with uniform unit vectors.
pub fn inject_outliers(inst: &ProblemInstance, fraction: f64, seed: u64) -> ProblemInstance {
    let fraction = fraction.clamp(0.0, 1.0);
    let n = inst.corr.len();
    let k = ((fraction * n as f64) + 1e-9).floor() as usize;
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = inst.corr.pairs().to_vec();
    let mut mask = inst.outlier_mask.clone();
    let mut chosen = sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        pairs[i].f_prime = random_unit(&mut rng);
        mask[i] = true;
    }
    let mut corr = CorrespondenceSet::new(pairs).expect("non-empty");
    if let Some(w) = inst.corr.weights() {
        corr = corr.with_weights(w.to_vec()).expect("weights already validated");
    }
    ProblemInstance {
        corr,
        gt_pose: inst.gt_pose,
        outlier_mask: mask,
    }
}

/// Geodesic distance between two rotations, in degrees.
pub fn rotation_error_deg(r_est: &RotationMatrix, r_gt: &RotationMatrix) -> f64 {
    let c = ((r_gt.matrix().transpose() * r_est.matrix()).trace() - 1.0) / 2.0;
    c.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Angle between translation directions, folded over the sign ambiguity.
pub fn translation_error_deg(t_est: &TranslationDirection, t_gt: &TranslationDirection) -> f64 {
    let c = t_est.vector().dot(t_gt.vector()).abs().min(1.0);
    c.acos().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Plain,
    Robust,
}

/// One combination of scene parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub n: usize,
    pub noise_px: f64,
    pub fov_deg: f64,
    pub parallax_m: f64,
    pub focal_px: f64,
    pub outlier_frac: f64,
}

impl Default for SweepCell {
    fn default() -> Self {
        let p = SceneParams::default();
        Self {
            n: p.n_points,
            noise_px: p.noise_px,
            fov_deg: p.fov_deg,
            parallax_m: p.max_parallax_m,
            focal_px: p.focal_px,
            outlier_frac: 0.0,
        }
    }
}

/// Cartesian product of per-parameter value lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub n: Vec<usize>,
    pub noise_px: Vec<f64>,
    pub fov_deg: Vec<f64>,
    pub parallax_m: Vec<f64>,
    pub focal_px: Vec<f64>,
    pub outlier_frac: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let c = SweepCell::default();
        Self {
            n: vec![c.n],
            noise_px: vec![c.noise_px],
            fov_deg: vec![c.fov_deg],
            parallax_m: vec![c.parallax_m],
            focal_px: vec![c.focal_px],
            outlier_frac: vec![c.outlier_frac],
        }
    }
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &noise_px in &self.noise_px {
                for &fov_deg in &self.fov_deg {
                    for &parallax_m in &self.parallax_m {
                        for &focal_px in &self.focal_px {
                            for &outlier_frac in &self.outlier_frac {
                                out.push(SweepCell {
                                    n,
                                    noise_px,
                                    fov_deg,
                                    parallax_m,
                                    focal_px,
                                    outlier_frac,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOptions {
    pub estimate: EstimateOptions,
    pub gnc: GncConfig,
    /// Also run each plain trial without the preconditioner.
    pub ab_precondition: bool,
    /// Record wall time; off keeps the table reproducible.
    pub timing: bool,
}

/// Counters of the run without the preconditioner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbRecord {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub cell: SweepCell,
    pub rot_err_deg: f64,
    pub trans_err_deg: f64,
    pub cost: f64,
    pub certified: bool,
    pub relaxations_tried: usize,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub time_us: u64,
    pub ab: Option<AbRecord>,
    /// Set when the trial failed; numeric fields are then NaN or zero.
    pub error: Option<String>,
}

/// Independent per-trial seed from `(seed, cell, trial)`.
pub fn trial_seed(seed: u64, cell: usize, trial: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ cell as u64) ^ trial as u64)
}

fn failed(seed: u64, cell: SweepCell, err: Error) -> TrialRecord {
    TrialRecord {
        seed,
        cell,
        rot_err_deg: f64::NAN,
        trans_err_deg: f64::NAN,
        cost: f64::NAN,
        certified: false,
        relaxations_tried: 0,
        outer_iters: 0,
        inner_iters: 0,
        time_us: 0,
        ab: None,
        error: Some(err.to_string()),
    }
}

pub fn run_trial(cell: SweepCell, seed: u64, pipeline: Pipeline, opts: &SweepOptions) -> TrialRecord {
    match try_trial(cell, seed, pipeline, opts) {
        Ok(rec) => rec,
        Err(e) => failed(seed, cell, e),
    }
}

fn try_trial(cell: SweepCell, seed: u64, pipeline: Pipeline, opts: &SweepOptions) -> Result<TrialRecord> {
    let params = SceneParams {
        n_points: cell.n,
        fov_deg: cell.fov_deg,
        max_parallax_m: cell.parallax_m,
        focal_px: cell.focal_px,
        noise_px: cell.noise_px,
        seed,
        ..Default::default()
    };
    let mut inst = generate_scene(&params)?;
    if cell.outlier_frac > 0.0 {
        inst = inject_outliers(&inst, cell.outlier_frac, seed ^ 0x5DEE_CE66_D1CE_5EED);
    }
    let start = Instant::now();
    let (pose, cost, cert, outer, inner) = match pipeline {
        Pipeline::Plain => {
            let est = estimate(&inst.corr, &opts.estimate)?;
            (
                est.report.pose,
                est.report.final_cost,
                Some(est.certificate),
                est.report.outer_iters,
                est.report.total_inner_iters,
            )
        }
        Pipeline::Robust => {
            let res = robust_estimate(&inst.corr, &opts.gnc, None)?;
            (res.pose, res.final_cost, res.certificate, res.outer_iters, res.inner_iters)
        }
    };
    let time_us = if opts.timing { start.elapsed().as_micros() as u64 } else { 0 };
    let ab = if opts.ab_precondition && pipeline == Pipeline::Plain {
        let mut o = opts.estimate;
        o.solver.use_preconditioner = false;
        let est = estimate(&inst.corr, &o)?;
        Some(AbRecord {
            outer_iters: est.report.outer_iters,
            inner_iters: est.report.total_inner_iters,
            cost: est.report.final_cost,
        })
    } else {
        None
    };
    Ok(TrialRecord {
        seed,
        cell,
        rot_err_deg: rotation_error_deg(&pose.rotation, &inst.gt_pose.rotation),
        trans_err_deg: translation_error_deg(&pose.translation, &inst.gt_pose.translation),
        cost,
        certified: cert.as_ref().is_some_and(|c| c.is_optimal()),
        relaxations_tried: cert.as_ref().map_or(0, |c| c.relaxations_tried),
        outer_iters: outer,
        inner_iters: inner,
        time_us,
        ab,
        error: None,
    })
}

/// Runs every `(cell, trial)` pair in parallel. Records come back in cell-major
/// order and do not depend on the thread count.
pub fn run_sweep(
    grid: &SweepGrid,
    trials_per_cell: usize,
    pipeline: Pipeline,
    seed: u64,
    opts: &SweepOptions,
) -> Vec<TrialRecord> {
    let cells = grid.cells();
    let jobs: Vec<(usize, SweepCell, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, &cell)| (0..trials_per_cell).map(move |t| (ci, cell, t)))
        .collect();
    jobs.par_iter()
        .map(|&(ci, cell, t)| run_trial(cell, trial_seed(seed, ci, t), pipeline, opts))
        .collect()
}
