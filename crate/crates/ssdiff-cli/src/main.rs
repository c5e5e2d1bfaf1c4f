use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use ssdiff::experiments::{fit_exponent, read_rows_csv, run_lab, run_sweep, verify_suite, CellContext, SweepConfig};
use ssdiff::knn::{build_kernel, kernel_moments, PointCloud, SparseKernel};
use ssdiff::stationary::{default_max_iter, stationary_distribution};
use ssdiff::stein::{assumption3_check, discrepancy_terms, knn_scaling, Aggregation, FkParams, DEFAULT_SERIES_CAP};
use ssdiff::torus::{read_points_csv, sample_stream, write_points_csv, TorusPoint};
use ssdiff::transport::{entropic_w2, exact_w2_with_limit, half_cell_bound, DiscreteMeasure, Metric};

/// kNN random walks on the flat torus against their diffusion limit.
#[derive(Parser, Debug)]
#[command(name = "ssdiff", version)]
struct Cli {
    /// Sweep configuration (JSON). Also supplies the density and `rho`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw `n` points from the configured density into `points.csv`.
    Sample {
        #[arg(long)]
        n: usize,
    },
    /// Build the kNN kernel of a point file into `kernel.txt`.
    Graph {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Invariant measure of a kernel file into `stationary.csv`.
    Stationary {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Bound terms for the kNN walk on a point file.
    Bound {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// W2 between the invariant measure and the discretized target.
    W2 {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        k: usize,
        /// Target grid cells per axis; defaults to the configured grid.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Run the configured sweep.
    Sweep,
    /// One-dimensional semigroup checks.
    Lab,
    /// Power-law fit of one results column against another.
    Fit {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "n")]
        x: String,
        #[arg(long, default_value = "w2_torus")]
        y: String,
    },
    /// Run the acceptance criteria; exits nonzero on any failure.
    Verify,
}

fn config(cli: &Cli) -> Result<SweepConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SweepConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => SweepConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_points(path: &Path, cfg: &SweepConfig) -> Result<(usize, Vec<TorusPoint>)> {
    let (dim, pts) = read_points_csv(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
    if dim != cfg.dim {
        bail!("{} has dimension {dim}, config has {}", path.display(), cfg.dim);
    }
    Ok((dim, pts))
}

fn print(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<ExitCode> {
    let cfg = config(cli)?;
    let out = &cli.out;
    fs::create_dir_all(out)?;
    let seed = cfg.base_seed;
    match &cli.command {
        Command::Sample { n } => {
            let pts = sample_stream(&cfg.model()?, *n, seed, *n as u64);
            let path = out.join("points.csv");
            write_points_csv(&pts, cfg.dim, BufWriter::new(File::create(&path)?))?;
            print(&json!({ "schema": 1, "n": n, "dim": cfg.dim, "seed": seed, "file": path }))?;
        }
        Command::Graph { points, k } => {
            let (dim, pts) = load_points(points, &cfg)?;
            let kernel = build_kernel(&PointCloud::new(dim, &pts, Some(seed))?, *k)?;
            let path = out.join("kernel.txt");
            kernel.write_text(BufWriter::new(File::create(&path)?))?;
            print(&json!({ "schema": 1, "n": kernel.n, "k": kernel.k, "file": path }))?;
        }
        Command::Stationary { graph, tol } => {
            let kernel = SparseKernel::read_text(BufReader::new(File::open(graph)?))?;
            let pi = stationary_distribution(&kernel, *tol, default_max_iter(kernel.n))?;
            pi.write_csv(BufWriter::new(File::create(out.join("stationary.csv"))?))?;
            print(&pi.report_json())?;
        }
        Command::Bound { points, k } => {
            let (dim, pts) = load_points(points, &cfg)?;
            let model = cfg.model()?;
            let cloud = PointCloud::new(dim, &pts, Some(seed))?;
            let kernel = build_kernel(&cloud, *k)?;
            let pi = stationary_distribution(&kernel, 1e-12, default_max_iter(cloud.len()))?;
            let moments = kernel_moments(&kernel, &cloud, cfg.m_max)?;
            let scaling = knn_scaling(*k, cloud.len(), dim)?;
            let params = FkParams::new(cfg.rho, dim)?;
            let terms = discrepancy_terms(&moments, &cloud, &pi, &model, &scaling, &params, Aggregation::NuWeighted)?;
            let asm = terms.assembled(cfg.c_report)?;
            let ass = assumption3_check(&kernel, &cloud, &pi, &model, &params, &scaling, DEFAULT_SERIES_CAP)?;
            let mut v = terms.to_json(&asm);
            v["assumption"] = serde_json::to_value(&ass)?;
            fs::write(out.join("bound.json"), serde_json::to_string_pretty(&v)?)?;
            print(&v)?;
        }
        Command::W2 { points, k, grid } => {
            let (dim, pts) = load_points(points, &cfg)?;
            let mut cfg = cfg.clone();
            cfg.ot.grid_per_axis = grid.or(cfg.ot.grid_per_axis);
            let m = cfg.grid();
            let b = CellContext::new(&cfg)?.grid_measure;
            let cloud = PointCloud::new(dim, &pts, Some(seed))?;
            let kernel = build_kernel(&cloud, *k)?;
            let pi = stationary_distribution(&kernel, 1e-12, default_max_iter(cloud.len()))?;
            let a = DiscreteMeasure::from_cloud(&cloud, &pi.probabilities)?;
            let exact = a.len() * b.len() <= cfg.ot.exact_threshold;
            let w2 = if exact {
                exact_w2_with_limit(&a, &b, &Metric::Torus, cfg.ot.exact_threshold)?.0
            } else {
                entropic_w2(&a, &b, &Metric::Torus, cfg.ot.entropic_gap)?
            };
            print(&json!({
                "schema": 1, "n": cloud.len(), "k": k, "grid_per_axis": m,
                "w2_torus": w2, "exact": exact, "half_cell": half_cell_bound(dim, m),
            }))?;
        }
        Command::Sweep => {
            let (rows, manifest) = run_sweep(&cfg, out)?;
            let failed = rows.iter().filter(|r| !r.ok()).count();
            print(&json!({
                "schema": 1, "rows": rows.len(), "failed": failed,
                "config_hash": manifest.config_hash, "out": out,
            }))?;
        }
        Command::Lab => {
            let report = run_lab(Some(out))?;
            let max_ratio = report.gradient.iter().map(|g| g.2.max_ratio).fold(0.0, f64::max);
            print(&json!({
                "schema": 1,
                "gradient_max_ratio": max_ratio,
                "interpolation_pass": report.interpolation.iter().all(|r| r.pass),
                "out": out,
            }))?;
        }
        Command::Fit { results, x, y } => {
            let rows = read_rows_csv(results)?;
            let fit = fit_exponent(&rows, x, y)?;
            print(&json!({ "schema": 1, "x": x, "y": y, "fit": fit }))?;
        }
        Command::Verify => {
            let verdict = verify_suite();
            let text = serde_json::to_string_pretty(&verdict)?;
            fs::write(out.join("verdict.json"), &text)?;
            for c in &verdict.criteria {
                eprintln!("criterion {} {}: {}", c.id, if c.pass { "PASS" } else { "FAIL" }, c.name);
            }
            println!("{text}");
            if !verdict.pass {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
