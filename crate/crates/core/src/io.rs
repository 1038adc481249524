//! Correspondence files, result documents and benchmark CSV.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certifier::Certificate;
use crate::error::{Error, Result};
use crate::geometry::{
    essential_from_pose, BearingPair, CorrespondenceSet, Mat3, RelativePose, RotationMatrix,
    TranslationDirection, Vec3,
};
use crate::robust::RobustResult;
use crate::solver::{Estimate, StageTiming};
use crate::synth::TrialRecord;

pub const SCHEMA_VERSION: u32 = 1;
const FILE_UNIT_TOL: f64 = 1e-6;

/// Parses lines of `fx fy fz fpx fpy fpz`; blank lines and `#` comments are
/// skipped. Vectors must be unit within 1e-6 and are renormalized.
pub fn parse_correspondences(text: &str) -> Result<CorrespondenceSet> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: idx + 1, msg };
        let vals = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|e| err(format!("{tok:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if vals.len() != 6 {
            return Err(err(format!("expected 6 values, found {}", vals.len())));
        }
        let f = Vec3::new(vals[0], vals[1], vals[2]);
        let fp = Vec3::new(vals[3], vals[4], vals[5]);
        for v in [&f, &fp] {
            let n = v.norm();
            if !n.is_finite() || (n - 1.0).abs() > FILE_UNIT_TOL {
                return Err(err(format!("bearing vector has norm {n}, expected 1")));
            }
        }
        pairs.push(BearingPair::normalized(f, fp).map_err(|e| err(e.to_string()))?);
    }
    CorrespondenceSet::new(pairs)
}

pub fn read_correspondence_file(path: &Path) -> Result<CorrespondenceSet> {
    parse_correspondences(&std::fs::read_to_string(path)?)
}

/// Writes one pair per line, preceded by the given comment lines.
pub fn format_correspondences(corr: &CorrespondenceSet, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        let _ = writeln!(out, "# {c}");
    }
    for p in corr.pairs() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            p.f.x, p.f.y, p.f.z, p.f_prime.x, p.f_prime.y, p.f_prime.z
        );
    }
    out
}

fn row_major(m: &Mat3) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = m[(r, c)];
        }
    }
    out
}

fn from_row_major(v: &[f64; 9]) -> Mat3 {
    Mat3::from_row_slice(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDoc {
    /// Row-major.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateDoc {
    pub status: String,
    pub relaxation_used: Option<usize>,
    pub gap: Option<f64>,
    pub mu_t: Option<f64>,
    pub mu_e: Option<f64>,
    pub relaxations_tried: usize,
    pub dual_value: Option<f64>,
    pub primal_value: f64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl From<&Certificate> for CertificateDoc {
    fn from(c: &Certificate) -> Self {
        Self {
            status: c.status.to_string(),
            relaxation_used: c.relaxation_used.map(|r| r.dropped()),
            gap: finite(c.gap),
            mu_t: finite(c.mu_t),
            mu_e: c.mu_e.and_then(finite),
            relaxations_tried: c.relaxations_tried,
            dual_value: finite(c.dual_value),
            primal_value: c.primal_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustDoc {
    pub weights: Vec<f64>,
    pub inlier_indices: Vec<usize>,
    pub is_valid: bool,
    pub outer_iters: usize,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingDoc {
    pub init_us: u64,
    pub refine_us: u64,
    pub certify_us: u64,
    pub total_us: u64,
}

impl From<StageTiming> for TimingDoc {
    fn from(t: StageTiming) -> Self {
        Self {
            init_us: t.init_us,
            refine_us: t.refine_us,
            certify_us: t.certify_us,
            total_us: t.total_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub pose: PoseDoc,
    /// Row-major.
    pub essential: [f64; 9],
    pub cost: f64,
    pub certificate: Option<CertificateDoc>,
    pub robust: Option<RobustDoc>,
    pub timing: TimingDoc,
}

impl ResultDocument {
    fn base(pose: &RelativePose, cost: f64, timing: TimingDoc) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            pose: PoseDoc {
                rotation: row_major(pose.r()),
                translation: [pose.t().x, pose.t().y, pose.t().z],
            },
            essential: row_major(essential_from_pose(pose).matrix()),
            cost,
            certificate: None,
            robust: None,
            timing,
        }
    }

    pub fn from_estimate(est: &Estimate) -> Self {
        let mut doc = Self::base(&est.report.pose, est.report.final_cost, est.timing.into());
        doc.certificate = Some((&est.certificate).into());
        doc
    }

    pub fn from_robust(res: &RobustResult, total_us: u64) -> Self {
        let timing = TimingDoc { total_us, ..Default::default() };
        let cost = if res.final_cost.is_finite() { res.final_cost } else { 0.0 };
        let mut doc = Self::base(&res.pose, cost, timing);
        doc.certificate = res.certificate.as_ref().map(Into::into);
        doc.robust = Some(RobustDoc {
            weights: res.weights.clone(),
            inlier_indices: res.inlier_indices.clone(),
            is_valid: res.is_valid,
            outer_iters: res.outer_iters,
            diagnostic: res.diagnostic.clone(),
        });
        doc
    }

    /// Rebuilds the pose, checking the rotation and translation invariants.
    pub fn pose(&self) -> Result<RelativePose> {
        let [x, y, z] = self.pose.translation;
        Ok(RelativePose::new(
            RotationMatrix::new(from_row_major(&self.pose.rotation))?,
            TranslationDirection::new(Vec3::new(x, y, z))?,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Single-row CSV with a header line.
    pub fn to_csv(&self) -> String {
        let cert = self.certificate.as_ref();
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        let mut header = vec!["status".to_string(), "cost".into()];
        header.extend((0..9).map(|i| format!("r{}{}", i / 3, i % 3)));
        header.extend(["t0", "t1", "t2"].map(String::from));
        header.extend(
            ["gap", "mu_t", "mu_e", "relaxations_tried", "dual_value", "is_valid", "total_us"]
                .map(String::from),
        );
        let mut row = vec![
            cert.map_or("none".into(), |c| c.status.clone()),
            self.cost.to_string(),
        ];
        row.extend(self.pose.rotation.iter().map(f64::to_string));
        row.extend(self.pose.translation.iter().map(f64::to_string));
        row.push(opt(cert.and_then(|c| c.gap)));
        row.push(opt(cert.and_then(|c| c.mu_t)));
        row.push(opt(cert.and_then(|c| c.mu_e)));
        row.push(cert.map_or(String::new(), |c| c.relaxations_tried.to_string()));
        row.push(opt(cert.and_then(|c| c.dual_value)));
        row.push(self.robust.as_ref().map_or(String::new(), |r| r.is_valid.to_string()));
        row.push(self.timing.total_us.to_string());
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

pub const BENCHMARK_COLUMNS: [&str; 15] = [
    "seed",
    "n",
    "noise_px",
    "fov_deg",
    "parallax_m",
    "focal_px",
    "outlier_frac",
    "rot_err_deg",
    "trans_err_deg",
    "cost",
    "certified",
    "relaxations_tried",
    "outer_iters",
    "inner_iters",
    "time_us",
];

pub const AB_COLUMNS: [&str; 3] = ["outer_iters_noprec", "inner_iters_noprec", "cost_noprec"];

/// Benchmark table; the A/B columns are appended when `with_ab` is set.
pub fn format_benchmark_csv(records: &[TrialRecord], with_ab: bool) -> String {
    let mut out = BENCHMARK_COLUMNS.join(",");
    if with_ab {
        out.push(',');
        out.push_str(&AB_COLUMNS.join(","));
    }
    out.push('\n');
    for r in records {
        let c = &r.cell;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            c.n,
            c.noise_px,
            c.fov_deg,
            c.parallax_m,
            c.focal_px,
            c.outlier_frac,
            r.rot_err_deg,
            r.trans_err_deg,
            r.cost,
            u8::from(r.certified),
            r.relaxations_tried,
            r.outer_iters,
            r.inner_iters,
            r.time_us,
        );
        if with_ab {
            match &r.ab {
                Some(ab) => {
                    let _ = write!(out, ",{},{},{}", ab.outer_iters, ab.inner_iters, ab.cost);
                }
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{estimate, EstimateOptions};
    use crate::synth::{generate_scene, run_sweep, Pipeline, SceneParams, SweepGrid, SweepOptions};

    #[test]
    fn parse_round_trip() {
        let inst = generate_scene(&SceneParams { n_points: 20, seed: 100, ..Default::default() }).unwrap();
        let text = format_correspondences(&inst.corr, &["fixture".into()]);
        let parsed = parse_correspondences(&text).unwrap();
        assert_eq!(parsed.len(), 20);
        for (a, b) in parsed.pairs().iter().zip(inst.corr.pairs()) {
            assert!((a.f - b.f).amax() <= 1e-15 && (a.f_prime - b.f_prime).amax() <= 1e-15);
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# header\n1 0 0 0 1 0\n1 0 0 0 1\n";
        assert!(matches!(parse_correspondences(text), Err(Error::Parse { line: 3, .. })));
        let text = "1 0 0 0 1 0\n\n2 0 0 0 1 0\n";
        assert!(matches!(parse_correspondences(text), Err(Error::Parse { line: 3, .. })));
        let text = "1 0 0 0 1 x\n";
        assert!(matches!(parse_correspondences(text), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_correspondences("# only\n"), Err(Error::EmptyCorrespondences)));
        // Within the file tolerance, vectors are renormalized.
        let ok = parse_correspondences("1.0000004 0 0 0 1 0\n").unwrap();
        assert_eq!(ok.pairs()[0].f, Vec3::x());
    }

    #[test]
    fn document_round_trip() {
        let inst = generate_scene(&SceneParams { n_points: 40, seed: 101, ..Default::default() }).unwrap();
        let est = estimate(&inst.corr, &EstimateOptions::default()).unwrap();
        let doc = ResultDocument::from_estimate(&est);
        let json = doc.to_json().unwrap();
        let back = ResultDocument::from_json(&json).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.to_json().unwrap(), json);
        let pose = back.pose().unwrap();
        assert_eq!(pose.r(), est.report.pose.r());
        assert_eq!(doc.schema_version, 1);
        let csv = doc.to_csv();
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn benchmark_csv_schema() {
        let grid = SweepGrid { n: vec![20], ..Default::default() };
        let opts = SweepOptions { ab_precondition: true, ..Default::default() };
        let recs = run_sweep(&grid, 2, Pipeline::Plain, 3, &opts);
        let csv = format_benchmark_csv(&recs, true);
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(&header[..15], &BENCHMARK_COLUMNS);
        assert_eq!(&header[15..], &AB_COLUMNS);
        for line in lines {
            assert_eq!(line.split(',').count(), 18);
        }
        let plain = format_benchmark_csv(&recs, false);
        assert_eq!(plain.lines().next().unwrap(), BENCHMARK_COLUMNS.join(","));
    }
}
