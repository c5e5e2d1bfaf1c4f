//! Sweeps over `(n, k, seed)` cells, exponent fits, reports and the
//! acceptance suite.
//!
//! Each cell runs the full pipeline: sample, kNN kernel, invariant measure,
//! jump moments, bound terms, integrability check and `W_2` against the
//! discretized diffusion target. Results are sorted by `(n, k, seed)` before
//! they are written, so the CSV only depends on the configuration.

mod report;
mod verify;

pub use report::{emit_report, svg_loglog, ReportSummary, Series};
pub use verify::{
    criterion_assumption_check, criterion_fk_constant, criterion_gradient_bounds, criterion_gradient_bounds_with,
    criterion_interpolation, criterion_item_scaling, criterion_kernel_stationary, criterion_rate_scaling,
    criterion_transport, criterion_uniform_sanity, default_sweep_rows, item_scaling_from_rows, rate_scaling_from_rows,
    run_lab, uniform_sanity_config, verify_suite, Criterion, LabReport, Verdict,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::knn::{build_kernel, kernel_moments, PointCloud};
use crate::stationary::{default_max_iter, stationary_distribution};
use crate::stein::{assumption3_check, discrepancy_terms, knn_scaling, Aggregation, FkParams, DEFAULT_SERIES_CAP};
use crate::torus::{normalize_target, sample_stream, DensityModel, TargetMeasure};
use crate::transport::{discretize_target, entropic_w2, exact_w2_with_limit, half_cell_bound, DiscreteMeasure, Metric};
use crate::{Error, Result, SCHEMA_VERSION};

/// How `k` is chosen from `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum KRule {
    Fixed { k: usize },
    /// `k = ceil(n^alpha)`.
    Power { alpha: f64 },
    /// `k = ceil(c ln n)`, for probing the logarithmic regime.
    Log { c: f64 },
}

impl KRule {
    pub fn k_for(&self, n: usize) -> Result<usize> {
        let k = match *self {
            KRule::Fixed { k } => k,
            KRule::Power { alpha } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::InvalidParameter(format!("alpha = {alpha}")));
                }
                (n as f64).powf(alpha).ceil() as usize
            }
            KRule::Log { c } => {
                if !(c > 0.0) {
                    return Err(Error::InvalidParameter(format!("c = {c}")));
                }
                (c * (n as f64).ln()).ceil() as usize
            }
        };
        if k == 0 || k >= n {
            return Err(Error::InvalidParameter(format!("k = {k} for n = {n}")));
        }
        Ok(k)
    }
}

/// Transport settings of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtSettings {
    /// Target cells per axis; `None` picks [`default_grid`].
    pub grid_per_axis: Option<usize>,
    /// Largest `n * cells` solved exactly; larger instances go entropic.
    pub exact_threshold: usize,
    /// Gap certified by the entropic solver.
    pub entropic_gap: f64,
    /// Lattice resolution for the conformal distance; `None` skips it.
    pub conformal_grid: Option<usize>,
}

impl Default for OtSettings {
    fn default() -> Self {
        Self {
            grid_per_axis: None,
            exact_threshold: 40_000_000,
            entropic_gap: 1e-3,
            conformal_grid: None,
        }
    }
}

/// Default target resolution per dimension.
pub fn default_grid(dim: usize) -> usize {
    match dim {
        1 => 1024,
        2 => 32,
        _ => 10,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub schema: u32,
    /// JSON density model; when absent, `amp` selects `1 + amp cos(2 pi x_1)`.
    pub density_path: Option<PathBuf>,
    pub amp: f64,
    pub dim: usize,
    pub n_list: Vec<usize>,
    pub k_rule: KRule,
    pub seeds: usize,
    pub base_seed: u64,
    pub rho: f64,
    pub c_report: f64,
    pub m_max: usize,
    pub ot: OtSettings,
    pub out_dir: Option<PathBuf>,
    pub workers: usize,
}

impl Default for SweepConfig {
    /// The acceptance sweep.
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            density_path: None,
            amp: 0.3,
            dim: 2,
            n_list: vec![2000, 4000, 8000, 16000],
            k_rule: KRule::Power { alpha: 0.75 },
            seeds: 5,
            base_seed: 1,
            rho: 0.0,
            c_report: 1.0,
            m_max: 64,
            ot: OtSettings::default(),
            out_dir: None,
            workers: 1,
        }
    }
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dim = 0".into()));
        }
        if self.n_list.is_empty() || self.seeds == 0 {
            return Err(Error::InvalidParameter("empty sweep".into()));
        }
        for &n in &self.n_list {
            if n < 4 {
                return Err(Error::InvalidParameter(format!("n = {n} below 4")));
            }
            self.k_rule.k_for(n)?;
        }
        if self.m_max < 4 {
            return Err(Error::InvalidParameter(format!("m_max = {}", self.m_max)));
        }
        if !(self.c_report > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidParameter("c_report must be positive and rho finite".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers = 0".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<DensityModel> {
        let m = match &self.density_path {
            Some(p) => DensityModel::load(p)?,
            None if self.amp == 0.0 => DensityModel::uniform(self.dim),
            None => DensityModel::one_mode(self.dim, self.amp)?,
        };
        if m.dim != self.dim {
            return Err(Error::ShapeMismatch(format!("model dim {} in a {}-d sweep", m.dim, self.dim)));
        }
        Ok(m)
    }

    pub fn grid(&self) -> usize {
        self.ot.grid_per_axis.unwrap_or_else(|| default_grid(self.dim))
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory
    /// and worker count.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.workers = 1;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// `(n, k, seed)` for every cell, in emission order.
    pub fn cells(&self) -> Result<Vec<(usize, usize, u64)>> {
        let mut out = vec![];
        for &n in &self.n_list {
            let k = self.k_rule.k_for(n)?;
            for s in 0..self.seeds as u64 {
                out.push((n, k, self.base_seed + s));
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

/// One sweep cell. Failed cells keep `error` and leave measurements empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultRow {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub w2_torus: Option<f64>,
    pub w2_conformal: Option<f64>,
    pub w2_exact: Option<bool>,
    pub grid_per_axis: Option<usize>,
    pub half_cell: Option<f64>,
    pub s: Option<f64>,
    pub tau: Option<f64>,
    pub rho: Option<f64>,
    pub short_time: Option<f64>,
    pub drift_term: Option<f64>,
    pub diffusion_term: Option<f64>,
    pub third_term: Option<f64>,
    pub tail_sum: Option<f64>,
    pub tail_truncation: Option<f64>,
    pub k_trunc: Option<usize>,
    pub bound_total: Option<f64>,
    pub sup_drift_term: Option<f64>,
    pub sup_diffusion_term: Option<f64>,
    pub sup_third_term: Option<f64>,
    pub i1: Option<f64>,
    pub i2: Option<f64>,
    pub i3: Option<f64>,
    pub i4: Option<f64>,
    pub i5: Option<f64>,
    pub jump_max: Option<f64>,
    pub r_max: Option<f64>,
    pub stationary_residual: Option<f64>,
    pub stationary_iterations: Option<usize>,
    pub series_value: Option<f64>,
    pub series_truncation: Option<f64>,
    pub series_terms: Option<usize>,
    pub gaussian_tail: Option<f64>,
    pub mean_exponent: Option<f64>,
    pub envelope_exponent: Option<f64>,
    #[serde(skip)]
    pub runtime_s: f64,
}

impl ResultRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    /// Numeric column by CSV name.
    pub fn field(&self, name: &str) -> Option<f64> {
        let u = |x: Option<usize>| x.map(|v| v as f64);
        match name {
            "d" => Some(self.d as f64),
            "n" => Some(self.n as f64),
            "k" => Some(self.k as f64),
            "seed" => Some(self.seed as f64),
            "w2_torus" => self.w2_torus,
            "w2_conformal" => self.w2_conformal,
            "half_cell" => self.half_cell,
            "s" => self.s,
            "tau" => self.tau,
            "rho" => self.rho,
            "short_time" => self.short_time,
            "drift_term" => self.drift_term,
            "diffusion_term" => self.diffusion_term,
            "third_term" => self.third_term,
            "tail_sum" => self.tail_sum,
            "tail_truncation" => self.tail_truncation,
            "k_trunc" => u(self.k_trunc),
            "bound_total" => self.bound_total,
            "sup_drift_term" => self.sup_drift_term,
            "sup_diffusion_term" => self.sup_diffusion_term,
            "sup_third_term" => self.sup_third_term,
            "i1" => self.i1,
            "i2" => self.i2,
            "i3" => self.i3,
            "i4" => self.i4,
            "i5" => self.i5,
            "jump_max" => self.jump_max,
            "r_max" => self.r_max,
            "stationary_residual" => self.stationary_residual,
            "stationary_iterations" => u(self.stationary_iterations),
            "series_value" => self.series_value,
            "series_truncation" => self.series_truncation,
            "series_terms" => u(self.series_terms),
            "gaussian_tail" => self.gaussian_tail,
            "mean_exponent" => self.mean_exponent,
            "envelope_exponent" => self.envelope_exponent,
            _ => None,
        }
    }
}

/// Shared read-only inputs of every cell.
pub struct CellContext {
    pub config: SweepConfig,
    pub model: DensityModel,
    pub target: TargetMeasure,
    pub grid_measure: DiscreteMeasure,
}

impl CellContext {
    pub fn new(config: &SweepConfig) -> Result<Self> {
        config.validate()?;
        let model = config.model()?;
        model.check_positive(64)?;
        let grid = config.grid();
        let target = normalize_target(&model, quadrature_res(config.dim, grid));
        let grid_measure = discretize_target(&target, grid)?;
        Ok(Self {
            config: config.clone(),
            model,
            target,
            grid_measure,
        })
    }
}

fn quadrature_res(dim: usize, grid: usize) -> usize {
    match dim {
        1 => (8 * grid).max(4096),
        2 => (4 * grid).max(256),
        _ => (2 * grid).max(32),
    }
}

/// Runs the pipeline on one cell; errors propagate to the caller.
pub fn run_cell(ctx: &CellContext, n: usize, k: usize, seed: u64) -> Result<ResultRow> {
    let cfg = &ctx.config;
    let d = cfg.dim;
    let points = sample_stream(&ctx.model, n, seed, n as u64);
    let cloud = PointCloud::new(d, &points, Some(seed))?;
    let kernel = build_kernel(&cloud, k)?;
    let pi = stationary_distribution(&kernel, 1e-12, default_max_iter(n))?;
    let moments = kernel_moments(&kernel, &cloud, cfg.m_max)?;
    let scaling = knn_scaling(k, n, d)?;
    let params = FkParams::new(cfg.rho, d)?;
    let nu = discrepancy_terms(&moments, &cloud, &pi, &ctx.model, &scaling, &params, Aggregation::NuWeighted)?;
    let sup = discrepancy_terms(&moments, &cloud, &pi, &ctx.model, &scaling, &params, Aggregation::Sup)?;
    let asm = nu.assembled(cfg.c_report)?;
    let ass = assumption3_check(&kernel, &cloud, &pi, &ctx.model, &params, &scaling, DEFAULT_SERIES_CAP)?;
    let a = DiscreteMeasure::from_cloud(&cloud, &pi.probabilities)?;
    let b = &ctx.grid_measure;
    let pairs = n * b.len();
    let exact = pairs <= cfg.ot.exact_threshold;
    let w2 = if exact {
        exact_w2_with_limit(&a, b, &Metric::Torus, cfg.ot.exact_threshold)?.0
    } else {
        entropic_w2(&a, b, &Metric::Torus, cfg.ot.entropic_gap)?
    };
    let w2_conformal = match cfg.ot.conformal_grid {
        Some(res) => {
            let metric = Metric::Conformal {
                model: ctx.model.clone(),
                grid_res: res,
            };
            Some(if exact {
                exact_w2_with_limit(&a, b, &metric, cfg.ot.exact_threshold)?.0
            } else {
                entropic_w2(&a, b, &metric, cfg.ot.entropic_gap)?
            })
        }
        None => None,
    };
    let grid = cfg.grid();
    Ok(ResultRow {
        d,
        n,
        k,
        seed,
        error: None,
        w2_torus: Some(w2),
        w2_conformal,
        w2_exact: Some(exact),
        grid_per_axis: Some(grid),
        half_cell: Some(half_cell_bound(d, grid)),
        s: Some(nu.s),
        tau: Some(nu.tau),
        rho: Some(nu.rho),
        short_time: Some(nu.short_time),
        drift_term: Some(nu.drift_term),
        diffusion_term: Some(nu.diffusion_term),
        third_term: Some(nu.third_term),
        tail_sum: Some(asm.tail_sum),
        tail_truncation: Some(asm.truncation_bound),
        k_trunc: Some(asm.k_trunc),
        bound_total: Some(asm.total),
        sup_drift_term: Some(sup.drift_term),
        sup_diffusion_term: Some(sup.diffusion_term),
        sup_third_term: Some(sup.third_term),
        i1: Some(nu.sup_items.i1),
        i2: Some(nu.sup_items.i2),
        i3: Some(nu.sup_items.i3),
        i4: nu.sup_items.item(4),
        i5: nu.sup_items.item(5),
        jump_max: Some(nu.jump_max),
        r_max: moments.radius.iter().cloned().reduce(f64::max),
        stationary_residual: Some(pi.residual),
        stationary_iterations: Some(pi.iterations),
        series_value: Some(ass.series_value),
        series_truncation: Some(ass.truncation_bound),
        series_terms: Some(ass.k_truncation),
        gaussian_tail: Some(ass.gaussian_tail_value).filter(|v| v.is_finite()),
        mean_exponent: Some(ass.mean_exponent),
        envelope_exponent: Some(ass.envelope_exponent),
        runtime_s: 0.0,
    })
}

/// Status of one cell in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub workers: usize,
    pub cells: Vec<CellStatus>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    /// Recomputes every listed checksum relative to `dir`.
    pub fn verify_files(&self, dir: &Path) -> Result<bool> {
        for f in &self.files {
            if sha256_file(&dir.join(&f.path))? != f.sha256 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Runs every cell on a pool of `config.workers` threads. Cell failures are
/// recorded in their rows; only configuration errors abort.
pub fn sweep_rows(config: &SweepConfig) -> Result<Vec<ResultRow>> {
    let ctx = CellContext::new(config)?;
    let cells = config.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let rows = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, k, seed)| {
                let start = Instant::now();
                let mut row = run_cell(&ctx, n, k, seed).unwrap_or_else(|e| ResultRow {
                    d: config.dim,
                    n,
                    k,
                    seed,
                    error: Some(e.to_string()),
                    ..Default::default()
                });
                row.runtime_s = start.elapsed().as_secs_f64();
                row
            })
            .collect::<Vec<_>>()
    });
    Ok(rows)
}

/// Writes rows in the fixed column order of [`ResultRow`].
pub fn write_rows_csv<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = vec![];
    for r in rd.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

/// Runs the sweep and writes `results.csv`, `summary.json`, the plots and
/// `manifest.json` into `out_dir`.
pub fn run_sweep(config: &SweepConfig, out_dir: &Path) -> Result<(Vec<ResultRow>, RunManifest)> {
    let started = unix_now();
    let rows = sweep_rows(config)?;
    fs::create_dir_all(out_dir)?;
    let mut names = vec!["results.csv".to_string()];
    write_rows_csv(&rows, fs::File::create(out_dir.join("results.csv"))?)?;
    if rows.iter().any(ResultRow::ok) {
        let summary = emit_report(&rows, config, out_dir)?;
        names.extend(summary.files.iter().cloned());
    }
    let files = names
        .into_iter()
        .map(|p| Ok(FileEntry { sha256: sha256_file(&out_dir.join(&p))?, path: p }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        schema: SCHEMA_VERSION,
        config_hash: config.hash(),
        seeds: (0..config.seeds as u64).map(|s| config.base_seed + s).collect(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: started,
        finished_unix: unix_now(),
        workers: config.workers,
        cells: rows
            .iter()
            .map(|r| CellStatus {
                n: r.n,
                k: r.k,
                seed: r.seed,
                ok: r.ok(),
                error: r.error.clone(),
                runtime_s: r.runtime_s,
            })
            .collect(),
        files,
    };
    fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok((rows, manifest))
}

/// Least-squares fit of `ln y = slope ln x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits a power law through `(x, y)` pairs.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<Fit> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch("x and y lengths differ".into()));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::NonPositive(format!("{v} in a log-log fit")));
    }
    let mut distinct: Vec<f64> = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidParameter(format!("{} distinct x values, need 3", distinct.len())));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Ok(Fit {
        slope,
        intercept,
        r_squared,
        points: lx.len(),
    })
}

/// Mean of `y_field` over successful rows, keyed by `x_field`.
pub fn seed_means(rows: &[ResultRow], x_field: &str, y_field: &str) -> Vec<(f64, f64, usize)> {
    let mut groups: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.ok()) {
        if let (Some(x), Some(y)) = (r.field(x_field), r.field(y_field)) {
            groups.entry(x.to_bits()).or_insert((x, vec![])).1.push(y);
        }
    }
    let mut out: Vec<(f64, f64, usize)> = groups
        .into_values()
        .map(|(x, ys)| (x, ys.iter().sum::<f64>() / ys.len() as f64, ys.len()))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Log-log fit of the seed-averaged `y_field` against `x_field`.
pub fn fit_exponent(rows: &[ResultRow], x_field: &str, y_field: &str) -> Result<Fit> {
    let means = seed_means(rows, x_field, y_field);
    let xs: Vec<f64> = means.iter().map(|m| m.0).collect();
    let ys: Vec<f64> = means.iter().map(|m| m.1).collect();
    fit_power_law(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_rules() {
        let p = KRule::Power { alpha: 0.75 };
        assert_eq!(p.k_for(2000).unwrap(), 300);
        assert_eq!(p.k_for(16000).unwrap(), 1423);
        assert_eq!(p.k_for(512).unwrap(), 108);
        assert_eq!(KRule::Log { c: 2.0 }.k_for(1000).unwrap(), 14);
        assert!(KRule::Fixed { k: 10 }.k_for(10).is_err());
        assert!(KRule::Power { alpha: 1.0 }.k_for(100).is_err());
    }

    #[test]
    fn config_round_trips_and_hash_ignores_workers() {
        let c = SweepConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        let back: SweepConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let mut w = c.clone();
        w.workers = 4;
        assert_eq!(w.hash(), c.hash());
        let mut other = c.clone();
        other.seeds = 2;
        assert_ne!(other.hash(), c.hash());
        let partial: SweepConfig = serde_json::from_str(r#"{"dim": 1, "n_list": [64]}"#).unwrap();
        assert_eq!(partial.seeds, 5);
        assert!(SweepConfig {
            n_list: vec![3],
            ..SweepConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn exact_power_law_fit() {
        let xs = [10.0, 100.0, 1000.0, 5000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        let flat = fit_power_law(&xs, &[2.0; 4]).unwrap();
        assert_eq!(flat.slope, 0.0);
    }

    #[test]
    fn noisy_power_law_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..40).map(|i| 10f64.powf(1.0 + i as f64 * 0.1)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.powf(-0.5) * (1.0 + 0.01 * (rng.gen::<f64>() * 2.0 - 1.0))).collect();
        let f = fit_power_law(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 0.05, "{}", f.slope);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_power_law(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
        assert!(fit_power_law(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn fit_exponent_averages_seeds() {
        let rows: Vec<ResultRow> = [100usize, 200, 400]
            .iter()
            .flat_map(|&n| {
                [0.9, 1.1].into_iter().enumerate().map(move |(s, f)| ResultRow {
                    n,
                    seed: s as u64,
                    w2_torus: Some(f * 2.0 / (n as f64).sqrt()),
                    ..Default::default()
                })
            })
            .collect();
        let f = fit_exponent(&rows, "n", "w2_torus").unwrap();
        assert_relative_eq!(f.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 2f64.ln(), epsilon = 1e-12);
    }

    fn smoke_config() -> SweepConfig {
        SweepConfig {
            amp: 0.0,
            dim: 1,
            n_list: vec![512, 1024],
            seeds: 3,
            ot: OtSettings {
                grid_per_axis: Some(256),
                ..OtSettings::default()
            },
            ..SweepConfig::default()
        }
    }

    #[test]
    fn smoke_sweep_is_finite_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = smoke_config();
        let (rows, manifest) = run_sweep(&cfg, dir.path()).unwrap();
        assert_eq!(rows.len(), 6);
        for r in &rows {
            assert!(r.ok(), "{:?}", r.error);
            for name in ["w2_torus", "bound_total", "i2", "i4", "series_value", "stationary_residual"] {
                assert!(r.field(name).unwrap().is_finite(), "{name}");
            }
            // Sup aggregation dominates the nu-weighted one.
            assert!(r.sup_drift_term.unwrap() >= r.drift_term.unwrap());
            assert!(r.sup_diffusion_term.unwrap() >= r.diffusion_term.unwrap());
            assert!(r.sup_third_term.unwrap() >= r.third_term.unwrap());
        }
        assert!(manifest.verify_files(dir.path()).unwrap());
        assert_eq!(manifest.config_hash, cfg.hash());
        let first = fs::read(dir.path().join("results.csv")).unwrap();
        let again = tempfile::tempdir().unwrap();
        run_sweep(&cfg, again.path()).unwrap();
        assert_eq!(first, fs::read(again.path().join("results.csv")).unwrap());
        let back = read_rows_csv(&dir.path().join("results.csv")).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back[0].w2_torus, rows[0].w2_torus);
    }

    #[test]
    fn failed_cells_are_tagged() {
        let cfg = SweepConfig {
            amp: 0.0,
            dim: 1,
            n_list: vec![64],
            k_rule: KRule::Fixed { k: 8 },
            seeds: 2,
            ot: OtSettings {
                grid_per_axis: Some(64),
                conformal_grid: Some(8),
                ..OtSettings::default()
            },
            ..SweepConfig::default()
        };
        let rows = sweep_rows(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.error.as_deref().unwrap().contains("grid_res"));
            assert!(r.w2_torus.is_none() && r.bound_total.is_none());
        }
        let mut buf = vec![];
        write_rows_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("grid_res 8 below 32"));
    }
}
