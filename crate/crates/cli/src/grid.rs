//! `--grid key=values` parsing for the benchmark command.
//!
//! The value part is a comma-separated list of items; each item is a single value or
//! an inclusive range `a..b` with an optional step `a..b:s`. Integer ranges
//! default to step 1, float ranges need an explicit step.

use anyhow::{anyhow, bail, Context, Result};
use certpose_core::synth::SweepGrid;

fn int_values(values: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for item in values.split(',') {
        let item = item.trim();
        match item.split_once("..") {
            Some((lo, rest)) => {
                let (hi, step) = match rest.split_once(':') {
                    Some((hi, s)) => (hi, s.parse::<usize>().with_context(|| format!("bad step in {item:?}"))?),
                    None => (rest, 1),
                };
                let lo: usize = lo.parse().with_context(|| format!("bad range start in {item:?}"))?;
                let hi: usize = hi.parse().with_context(|| format!("bad range end in {item:?}"))?;
                if step == 0 || lo > hi {
                    bail!("empty range {item:?}");
                }
                out.extend((lo..=hi).step_by(step));
            }
            None => out.push(item.parse().with_context(|| format!("bad integer {item:?}"))?),
        }
    }
    Ok(out)
}

fn float_values(values: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for item in values.split(',') {
        let item = item.trim();
        match item.split_once("..") {
            Some((lo, rest)) => {
                let (hi, step) = rest
                    .split_once(':')
                    .ok_or_else(|| anyhow!("float range {item:?} needs a step, e.g. 0..1:0.1"))?;
                let lo: f64 = lo.parse().with_context(|| format!("bad range start in {item:?}"))?;
                let hi: f64 = hi.parse().with_context(|| format!("bad range end in {item:?}"))?;
                let step: f64 = step.parse().with_context(|| format!("bad step in {item:?}"))?;
                if !(step > 0.0) || !(lo <= hi) {
                    bail!("empty range {item:?}");
                }
                // Index-based so rounding never drops the end point.
                let count = ((hi - lo) / step + 1e-9).floor() as usize;
                out.extend((0..=count).map(|k| lo + k as f64 * step));
            }
            None => {
                let v: f64 = item.parse().with_context(|| format!("bad number {item:?}"))?;
                if !v.is_finite() {
                    bail!("non-finite value {item:?}");
                }
                out.push(v);
            }
        }
    }
    Ok(out)
}

pub fn parse_grid(entries: &[String]) -> Result<SweepGrid> {
    let mut grid = SweepGrid::default();
    for entry in entries {
        let (key, values) = entry
            .split_once('=')
            .ok_or_else(|| anyhow!("grid entry {entry:?} is not key=value"))?;
        match key.trim() {
            "n" => grid.n = int_values(values)?,
            "noise" | "noise_px" => grid.noise_px = float_values(values)?,
            "fov" | "fov_deg" => grid.fov_deg = float_values(values)?,
            "parallax" | "parallax_m" => grid.parallax_m = float_values(values)?,
            "focal" | "focal_px" => grid.focal_px = float_values(values)?,
            "outliers" | "outlier_frac" => grid.outlier_frac = float_values(values)?,
            other => bail!("unknown grid key {other:?}"),
        }
    }
    Ok(grid)
}
