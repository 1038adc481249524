use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use certpose_core::io::{
    format_benchmark_csv, format_correspondences, read_correspondence_file, ResultDocument,
};
use certpose_core::solver::EstimateOptions;
use certpose_core::synth::{
    generate_scene, inject_outliers, run_sweep, Pipeline, SceneParams, SweepOptions,
};
use certpose_core::{estimate, robust_estimate, CertificateStatus, GncConfig};
use clap::{Args, Parser, Subcommand};

mod grid;

const EXIT_ERROR: u8 = 1;
const EXIT_UNKNOWN: u8 = 2;
const EXIT_INVALID: u8 = 3;

/// Certifiable relative pose estimation from bearing-vector correspondences.
#[derive(Parser)]
#[command(name = "certpose", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate and certify the relative pose.
    Estimate {
        input: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Outlier-robust estimation with graduated non-convexity.
    Robust {
        input: PathBuf,
        #[command(flatten)]
        common: CommonFlags,
        #[arg(long, default_value_t = GncConfig::default().mu_init)]
        mu_init: f64,
        #[arg(long, default_value_t = GncConfig::default().mu_rate)]
        mu_rate: f64,
        #[arg(long, default_value_t = GncConfig::default().c_bar_sq)]
        cbar_sq: f64,
        #[arg(long, default_value_t = GncConfig::default().inlier_threshold)]
        tau_w: f64,
        #[arg(long, default_value_t = GncConfig::default().min_inliers)]
        min_inliers: usize,
    },
    /// Run a seeded synthetic sweep and print one CSV row per trial.
    Benchmark(BenchmarkArgs),
    /// Write a synthetic correspondence file.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct CommonFlags {
    /// Number of relaxations the certifier may try (1-6).
    #[arg(long, default_value_t = 6)]
    max_relaxations: usize,
    #[arg(long)]
    no_precondition: bool,
    /// JSON output (default).
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
}

impl CommonFlags {
    fn estimate_options(&self) -> EstimateOptions {
        let mut opts = EstimateOptions::default();
        opts.certifier.max_relaxations = self.max_relaxations;
        opts.solver.use_preconditioner = !self.no_precondition;
        opts
    }

    fn render(&self, doc: &ResultDocument) -> Result<String> {
        if self.csv {
            Ok(doc.to_csv())
        } else {
            Ok(doc.to_json()? + "\n")
        }
    }
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Sweep axes as key=values, e.g. `n=8..200:8 noise=0.5 fov=70,100`.
    #[arg(long, num_args = 1..)]
    grid: Vec<String>,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Base seed; the CERTPOSE_SEED environment variable takes precedence.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Run the robust pipeline instead of the plain one.
    #[arg(long)]
    robust: bool,
    /// Append counters of a second run without the preconditioner.
    #[arg(long)]
    ab_precondition: bool,
    /// Record wall time per trial (makes the output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = SceneParams::default().fov_deg)]
    fov: f64,
    #[arg(long, default_value_t = SceneParams::default().noise_px)]
    noise: f64,
    #[arg(long, default_value_t = SceneParams::default().max_parallax_m)]
    parallax: f64,
    #[arg(long, default_value_t = SceneParams::default().focal_px)]
    focal: f64,
    /// Fraction of correspondences replaced by random bearings.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn exit_for(doc: &ResultDocument) -> u8 {
    if doc.robust.as_ref().is_some_and(|r| !r.is_valid) {
        return EXIT_INVALID;
    }
    match &doc.certificate {
        Some(c) if c.status == CertificateStatus::Optimal.to_string() => 0,
        _ => EXIT_UNKNOWN,
    }
}

fn cmd_estimate(input: &PathBuf, common: &CommonFlags) -> Result<(String, u8)> {
    let corr = read_correspondence_file(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let est = estimate(&corr, &common.estimate_options())?;
    let doc = ResultDocument::from_estimate(&est);
    Ok((common.render(&doc)?, exit_for(&doc)))
}

fn cmd_robust(input: &PathBuf, common: &CommonFlags, cfg: GncConfig) -> Result<(String, u8)> {
    let start = Instant::now();
    let corr = read_correspondence_file(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let res = robust_estimate(&corr, &cfg, None)?;
    let doc = ResultDocument::from_robust(&res, start.elapsed().as_micros() as u64);
    Ok((common.render(&doc)?, exit_for(&doc)))
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<String> {
    let grid = grid::parse_grid(&args.grid)?;
    let seed = match std::env::var("CERTPOSE_SEED") {
        Ok(s) => s.trim().parse().context("CERTPOSE_SEED is not an unsigned integer")?,
        Err(_) => args.seed,
    };
    let opts = SweepOptions {
        ab_precondition: args.ab_precondition,
        timing: args.timing,
        ..Default::default()
    };
    let pipeline = if args.robust { Pipeline::Robust } else { Pipeline::Plain };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build()?;
    let records = pool.install(|| run_sweep(&grid, args.trials, pipeline, seed, &opts));
    Ok(format_benchmark_csv(&records, args.ab_precondition))
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let params = SceneParams {
        n_points: args.n,
        fov_deg: args.fov,
        max_parallax_m: args.parallax,
        focal_px: args.focal,
        noise_px: args.noise,
        seed: args.seed,
        ..Default::default()
    };
    let mut inst = generate_scene(&params)?;
    if args.outliers > 0.0 {
        anyhow::ensure!(args.outliers <= 1.0, "outlier fraction must lie in [0, 1]");
        inst = inject_outliers(&inst, args.outliers, args.seed ^ 0x5DEE_CE66_D1CE_5EED);
    }
    let r = inst.gt_pose.r();
    let t = inst.gt_pose.t();
    let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let comments = vec![
        format!(
            "certpose fixture n={} fov={} noise={} parallax={} focal={} outliers={} seed={}",
            args.n, args.fov, args.noise, args.parallax, args.focal, args.outliers, args.seed
        ),
        format!("gt_rotation {}", join(&mut (0..9).map(|i| r[(i / 3, i % 3)]))),
        format!("gt_translation {}", join(&mut t.iter().copied())),
        format!(
            "outlier_mask {}",
            inst.outlier_mask.iter().map(|&o| if o { '1' } else { '0' }).collect::<String>()
        ),
    ];
    let text = format_correspondences(&inst.corr, &comments);
    match &args.output {
        Some(path) => {
            std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let (out, code) = match &cli.cmd {
        Command::Estimate { input, common } => cmd_estimate(input, common)?,
        Command::Robust { input, common, mu_init, mu_rate, cbar_sq, tau_w, min_inliers } => {
            let est = common.estimate_options();
            let cfg = GncConfig {
                mu_init: *mu_init,
                mu_rate: *mu_rate,
                c_bar_sq: *cbar_sq,
                inlier_threshold: *tau_w,
                min_inliers: *min_inliers,
                solver: est.solver,
                certifier: est.certifier,
                ..Default::default()
            };
            cmd_robust(input, common, cfg)?
        }
        Command::Benchmark(args) => (cmd_benchmark(args)?, 0),
        Command::Generate(args) => {
            cmd_generate(args)?;
            return Ok(0);
        }
    };
    std::io::stdout().write_all(out.as_bytes())?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors share the generic error code; 2 is reserved for an
            // uncertified estimate.
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
