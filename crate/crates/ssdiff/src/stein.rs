//! Gradient-bound factors `f_k(t)`, the kNN scaling, and every term of the
//! Wasserstein bound for a Markov kernel against the diffusion target.
//!
//! With `l = |y - x|_{a^{-1}(x)}` and a reporting constant `C`, the bound is
//!
//! ```text
//! C * ( tau |b|_{L2(nu)} + sqrt(tau)
//!     + |M1/s - b| + |M2/(2s) - a| + (|ln tau| / s) |M3|
//!     + sum_{k>=4} C^{k-1} / (s sqrt(k! tau^{k-3})) |Mk| )
//! ```
//!
//! where every `|.|` is the `a^{-1}`-norm aggregated in `L2(nu)` (or as a
//! supremum over points).

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::knn::{MomentField, PointCloud, SparseKernel};
use crate::numeric::{compensated_sum, ln_factorial};
use crate::stationary::StationaryDistribution;
use crate::torus::{drift_and_scale, min_image_coord, DensityModel};
use crate::{Error, Result, SCHEMA_VERSION};

/// Curvature `rho` and dimension `d` entering `f_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkParams {
    pub rho: f64,
    pub dim: usize,
}

impl FkParams {
    pub fn new(rho: f64, dim: usize) -> Result<Self> {
        if dim == 0 || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!("rho = {rho}, d = {dim}")));
        }
        Ok(Self { rho, dim })
    }
}

/// `ln f_k(t)`.
pub fn log_fk(k: usize, t: f64, p: FkParams) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("t = {t} must be positive")));
    }
    let d = p.dim as f64;
    let rho = p.rho;
    if k == 1 {
        return Ok(-rho * t);
    }
    let km1 = (k - 1) as f64;
    if rho == 0.0 {
        return Ok(0.5 * km1 * (d * km1 / (2.0 * t)).ln());
    }
    let base = rho * d / (2.0 * rho * t / km1).exp_m1();
    Ok(-rho * t * (k as f64 / 2.0).max(1.0) + 0.5 * km1 * base.ln())
}

/// `f_k(t)`, evaluated through [`log_fk`].
pub fn eval_fk(k: usize, t: f64, p: FkParams) -> Result<f64> {
    log_fk(k, t, p).map(f64::exp)
}

/// `V_m = int_{B(0,1)} x_1^m dx` in dimension `d`.
pub fn ball_moment(d: usize, m: usize) -> f64 {
    if m % 2 == 1 {
        return 0.0;
    }
    use statrs::function::gamma::ln_gamma;
    let (d, m) = (d as f64, m as f64);
    (0.5 * (d - 1.0) * PI.ln() + ln_gamma(0.5 * (m + 1.0)) - ln_gamma(0.5 * (m + d) + 1.0)).exp()
}

/// Step size `s`, time `tau` and horizon `T` of the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub s: f64,
    pub tau: f64,
    pub t_final: f64,
    pub v0: f64,
    pub v2: f64,
}

/// `s = tau = (k/n)^{2/d} V_2 / V_0^{1+2/d}` with `T = 1`.
pub fn knn_scaling(k: usize, n: usize, d: usize) -> Result<ScalingParams> {
    if k == 0 || k >= n || d == 0 {
        return Err(Error::InvalidParameter(format!("k = {k}, n = {n}, d = {d}")));
    }
    let v0 = ball_moment(d, 0);
    let v2 = ball_moment(d, 2);
    let e = 2.0 / d as f64;
    let s = (k as f64 / n as f64).powf(e) * v2 / v0.powf(1.0 + e);
    Ok(ScalingParams {
        s,
        tau: s,
        t_final: 1.0,
        v0,
        v2,
    })
}

/// Predicted kNN rate `sqrt(log n / k) (n/k)^{1/d} + (k/n)^{1/d}`.
pub fn knn_rate(n: usize, k: usize, d: usize) -> f64 {
    let (nf, kf, inv_d) = (n as f64, k as f64, 1.0 / d as f64);
    (nf.ln() / kf).sqrt() * (nf / kf).powf(inv_d) + (kf / nf).powf(inv_d)
}

/// How per-point quantities are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Root mean square under the invariant measure.
    NuWeighted,
    /// Maximum over points.
    Sup,
}

/// Euclidean supremum items of the kNN analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupItems {
    /// `sup |M1/s - f^{-2/d} grad log f|`.
    pub i1: f64,
    /// `sup |M2/(2s) - f^{-2/d} I / 2|`.
    pub i2: f64,
    /// `sup |M3|`.
    pub i3: f64,
    /// `(m, sup |Mm|)` for exact orders `m >= 4`.
    pub higher: Vec<(usize, f64)>,
}

impl SupItems {
    pub fn item(&self, m: usize) -> Option<f64> {
        match m {
            1 => Some(self.i1),
            2 => Some(self.i2),
            3 => Some(self.i3),
            _ => self.higher.iter().find(|e| e.0 == m).map(|e| e.1),
        }
    }
}

/// One moment term of the tail series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailTerm {
    pub order: usize,
    /// Aggregated `|M_k|_{a^{-1}}` (possibly a majorant).
    pub value: f64,
    pub ln_value: f64,
    /// False when only the absolute-moment majorant is available.
    pub exact: bool,
    /// `ln` of the aggregated absolute-moment majorant.
    pub ln_majorant: f64,
}

/// All terms of the bound for one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub mode: Aggregation,
    pub s: f64,
    pub tau: f64,
    pub rho: f64,
    pub short_time: f64,
    pub drift_term: f64,
    pub diffusion_term: f64,
    pub third_term: f64,
    /// Orders `4..=m_max`.
    pub tail_terms: Vec<TailTerm>,
    /// Largest jump length in the `a^{-1}` metric.
    pub jump_max: f64,
    pub sup_items: SupItems,
}

/// Result of summing the bound for a reporting constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assembly {
    pub c_report: f64,
    pub total: f64,
    /// Upper bound on the omitted part of the tail series.
    pub truncation_bound: f64,
    /// Last order summed.
    pub k_trunc: usize,
    /// Tail sum actually included (already multiplied by `c_report`).
    pub tail_sum: f64,
}

const TAIL_REL_STOP: f64 = 1e-14;

impl BoundTerms {
    /// Head of the bound (everything before the `k >= 4` series), without `C`.
    pub fn head(&self) -> f64 {
        self.short_time
            + self.drift_term
            + self.diffusion_term
            + self.tau.ln().abs() / self.s * self.third_term
    }

    fn ln_weight(&self, k: usize, ln_c: f64) -> f64 {
        (k - 1) as f64 * ln_c - self.s.ln() - 0.5 * (ln_factorial(k) + (k as f64 - 3.0) * self.tau.ln())
    }

    /// Sum of the bound with reporting constant `c_report`.
    pub fn assembled(&self, c_report: f64) -> Result<Assembly> {
        if !(c_report > 0.0 && c_report.is_finite()) {
            return Err(Error::InvalidParameter(format!("C = {c_report}")));
        }
        let ln_c = c_report.ln();
        let head = self.head();
        let mut tail = 0.0;
        let mut truncation_bound = 0.0;
        let mut k_trunc = 3;
        let ln_l = self.jump_max.ln();
        for term in &self.tail_terms {
            let k = term.order;
            tail += (self.ln_weight(k, ln_c) + term.ln_value).exp();
            k_trunc = k;
            // Orders above k: |M_j| <= majorant_k * l^{j-k}, and consecutive
            // weights shrink by C l / sqrt(j tau).
            let q = |j: usize| c_report * self.jump_max / (j as f64 * self.tau).sqrt();
            let q_next = q(k + 2);
            let bound = if self.jump_max == 0.0 || term.ln_majorant == f64::NEG_INFINITY {
                0.0
            } else if q_next < 1.0 {
                (self.ln_weight(k + 1, ln_c) + term.ln_majorant + ln_l).exp() / (1.0 - q_next)
            } else {
                f64::INFINITY
            };
            truncation_bound = bound;
            if bound <= TAIL_REL_STOP * (head + tail) {
                break;
            }
        }
        if !truncation_bound.is_finite() {
            return Err(Error::Divergent(format!(
                "tail weights still growing at order {k_trunc}"
            )));
        }
        Ok(Assembly {
            c_report,
            total: c_report * (head + tail),
            truncation_bound: c_report * truncation_bound,
            k_trunc,
            tail_sum: c_report * tail,
        })
    }

    pub fn to_json(&self, assembly: &Assembly) -> serde_json::Value {
        serde_json::json!({
            "schema": SCHEMA_VERSION,
            "terms": self,
            "assembly": assembly,
            "c_report": assembly.c_report,
            "rho": self.rho,
        })
    }
}

/// `C * (head + tail)` for a computed set of terms.
pub fn assemble_bound(terms: &BoundTerms, scaling: &ScalingParams, c_report: f64) -> Result<Assembly> {
    if (terms.s - scaling.s).abs() > 1e-15 * scaling.s || (terms.tau - scaling.tau).abs() > 1e-15 * scaling.tau {
        return Err(Error::InvalidParameter("terms computed with a different scaling".into()));
    }
    terms.assembled(c_report)
}

struct PointTerms {
    weight: f64,
    b_sq: f64,
    drift: f64,
    diffusion: f64,
    third: f64,
    /// `ln |M_k|_{a^{-1}}` and `ln` majorant, orders `4..=m_max`.
    ln_tail: Vec<f64>,
    ln_major: Vec<f64>,
    jump: f64,
    i1: f64,
    i2: f64,
    i3: f64,
    higher: Vec<f64>,
}

fn ln_rms(weights: &[f64], ln_vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = ln_vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s = compensated_sum(weights.iter().zip(ln_vals).map(|(w, l)| w * (2.0 * (l - max)).exp()));
    max + 0.5 * s.ln()
}

/// Evaluates every term of the bound for the kernel behind `moments`.
pub fn discrepancy_terms(
    moments: &MomentField,
    cloud: &PointCloud,
    pi: &StationaryDistribution,
    model: &DensityModel,
    scaling: &ScalingParams,
    params: &FkParams,
    mode: Aggregation,
) -> Result<BoundTerms> {
    if moments.m_max < 4 || moments.exact_order < 3 {
        return Err(Error::InvalidParameter(format!(
            "moments to order {} (exact {}), need 4 (exact 3)",
            moments.m_max, moments.exact_order
        )));
    }
    if moments.n != cloud.len() || pi.probabilities.len() != cloud.len() || model.dim != cloud.dim {
        return Err(Error::ShapeMismatch("moments, cloud, measure and model disagree".into()));
    }
    moments.check_radius()?;
    let d = cloud.dim;
    let s = scaling.s;
    let m_max = moments.m_max;
    let c2 = moments.compositions(2);
    let diag: Vec<bool> = c2.exponents.iter().map(|a| a.contains(&2)).collect();
    let points: Vec<PointTerms> = (0..moments.n)
        .into_par_iter()
        .map(|i| {
            let (b, scale) = drift_and_scale(model, cloud.point(i));
            // a^{-1} = c I with c = 2 f^{2/d}.
            let c = 2.0 / scale;
            let m1 = moments.packed(i, 1).expect("order 1");
            let mut e1 = 0.0;
            for t in 0..d {
                let r = m1.coeffs[t] / s - b[t];
                e1 += r * r;
            }
            let m2 = moments.packed(i, 2).expect("order 2");
            let mut e2 = 0.0;
            for ((coef, w), &is_diag) in m2.coeffs.iter().zip(&c2.multiplicity).zip(&diag) {
                let r = coef / (2.0 * s) - if is_diag { 0.5 * scale } else { 0.0 };
                e2 += w * r * r;
            }
            let m3 = moments.frobenius_sq(i, 3).expect("order 3").sqrt();
            let ln_c = c.ln();
            let mut ln_tail = Vec::with_capacity(m_max.saturating_sub(3));
            let mut ln_major = Vec::with_capacity(m_max.saturating_sub(3));
            let mut higher = Vec::new();
            for m in 4..=m_max {
                let major = 0.5 * m as f64 * ln_c + moments.ln_abs_moment(i, m);
                ln_major.push(major);
                match moments.frobenius_sq(i, m) {
                    Some(f2) => {
                        higher.push(f2.sqrt());
                        ln_tail.push(0.5 * m as f64 * ln_c + 0.5 * f2.ln());
                    }
                    None => ln_tail.push(major),
                }
            }
            let b_sq: f64 = b.iter().map(|x| x * x).sum();
            PointTerms {
                weight: pi.probabilities[i],
                b_sq: c * b_sq,
                drift: (c * e1).sqrt(),
                diffusion: c * e2.sqrt(),
                third: c.powf(1.5) * m3,
                ln_tail,
                ln_major,
                jump: c.sqrt() * moments.radius[i],
                i1: e1.sqrt(),
                i2: e2.sqrt(),
                i3: m3,
                higher,
            }
        })
        .collect();
    let weights: Vec<f64> = points.iter().map(|p| p.weight).collect();
    let agg = |f: &dyn Fn(&PointTerms) -> f64| -> f64 {
        match mode {
            Aggregation::NuWeighted => {
                compensated_sum(points.iter().map(|p| p.weight * f(p).powi(2))).sqrt()
            }
            Aggregation::Sup => points.iter().map(f).fold(0.0, f64::max),
        }
    };
    let ln_agg = |idx: usize, major: bool| -> f64 {
        let vals = points.iter().map(move |p| if major { p.ln_major[idx] } else { p.ln_tail[idx] });
        match mode {
            Aggregation::NuWeighted => ln_rms(&weights, vals),
            Aggregation::Sup => vals.fold(f64::NEG_INFINITY, f64::max),
        }
    };
    let tau = scaling.tau;
    let short_time = tau * agg(&|p| p.b_sq.sqrt()) + tau.sqrt();
    let tail_terms = (4..=m_max)
        .map(|m| {
            let idx = m - 4;
            let ln_value = ln_agg(idx, false);
            TailTerm {
                order: m,
                value: ln_value.exp(),
                ln_value,
                exact: m <= moments.exact_order,
                ln_majorant: ln_agg(idx, true),
            }
        })
        .collect();
    let sup = |f: &dyn Fn(&PointTerms) -> f64| points.iter().map(f).fold(0.0, f64::max);
    let n_higher = points.first().map_or(0, |p| p.higher.len());
    let sup_items = SupItems {
        i1: sup(&|p| p.i1),
        i2: sup(&|p| p.i2),
        i3: sup(&|p| p.i3),
        higher: (0..n_higher).map(|h| (h + 4, sup(&|p| p.higher[h]))).collect(),
    };
    Ok(BoundTerms {
        mode,
        s,
        tau,
        rho: params.rho,
        short_time,
        drift_term: agg(&|p| p.drift),
        diffusion_term: agg(&|p| p.diffusion),
        third_term: agg(&|p| p.third),
        tail_terms,
        jump_max: sup(&|p| p.jump),
        sup_items,
    })
}

/// Diagnostics of the integrability condition on the kernel's jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub schema: u32,
    /// `int sup_t (sum_k f_k(t) l^k / k!)^2 K(x, dy) nu(dx)`, truncated.
    pub series_value: f64,
    /// Bound on the part of `series_value` lost to truncation.
    pub truncation_bound: f64,
    /// Largest number of series terms used by any jump.
    pub k_truncation: usize,
    pub series_finite: bool,
    /// Times at which the supremum over `[tau, T]` was taken.
    pub t_grid_len: usize,
    /// `sqrt(2/pi) (tau/d) int (exp(d e |y-x|^2 / tau) - 1) K nu` (Euclidean jumps).
    pub gaussian_tail_value: f64,
    pub gaussian_tail_finite: bool,
    /// `ln` of the Gaussian-tail value, usable when the value overflows.
    pub ln_gaussian_tail: f64,
    /// Largest realized exponent `d e |y-x|^2 / tau`.
    pub max_exponent: f64,
    /// `nu`-mean of the exponent `d e |y-x|^2 / tau`.
    pub mean_exponent: f64,
    /// `r_M = (2k / (n V_0 min f))^{1/d}`.
    pub r_m: f64,
    /// `d e r_M^2 / tau`, a function of `d` and `min f` only.
    pub envelope_exponent: f64,
    /// Gaussian-tail value with every jump replaced by `r_M`.
    pub gaussian_tail_envelope: f64,
    pub max_radius: f64,
}

/// Per-time tables of `ln(f_k(t)/k!)` and suffix maxima of consecutive ratios.
struct SeriesTable {
    ln_coef: Vec<f64>,
    ratio: Vec<f64>,
    suffix_max: Vec<f64>,
}

impl SeriesTable {
    fn new(t: f64, p: FkParams, k_cap: usize) -> Result<Self> {
        let mut ln_coef = vec![0.0; k_cap + 2];
        for k in 1..=k_cap + 1 {
            ln_coef[k] = log_fk(k, t, p)? - ln_factorial(k);
        }
        let mut ratio = vec![0.0; k_cap + 1];
        for k in 1..=k_cap {
            ratio[k] = (ln_coef[k + 1] - ln_coef[k]).exp();
        }
        let mut suffix_max = vec![0.0; k_cap + 2];
        for k in (1..=k_cap).rev() {
            suffix_max[k] = ratio[k].max(suffix_max[k + 1]);
        }
        Ok(Self {
            ln_coef,
            ratio,
            suffix_max,
        })
    }

    /// `(sum, tail bound, terms used)` of `sum_k c_k l^k`.
    ///
    /// The remainder after term `k` is at most `term_k q / (1 - q)` with
    /// `q = l * max_{j >= k} c_{j+1}/c_j`; summation stops once that is
    /// below `rel` times the partial sum.
    fn sum(&self, l: f64, rel: f64, k_cap: usize) -> (f64, f64, usize) {
        if l == 0.0 {
            return (0.0, 0.0, 0);
        }
        let mut term = (self.ln_coef[1] + l.ln()).exp();
        let mut total = term;
        for k in 1..=k_cap {
            let q = l * self.suffix_max[k];
            if q < 1.0 {
                let rest = term * q / (1.0 - q);
                if rest <= rel * total {
                    return (total, rest, k);
                }
            }
            if k == k_cap {
                let rest = if q < 1.0 { term * q / (1.0 - q) } else { f64::INFINITY };
                return (total, rest, k);
            }
            term *= l * self.ratio[k];
            total += term;
        }
        unreachable!()
    }
}

/// Default cap on the number of series terms per jump.
pub const DEFAULT_SERIES_CAP: usize = 1024;

/// Evaluates the integrability condition and the Gaussian-tail sufficient
/// quantity for `kernel` under the invariant measure `pi`.
#[allow(clippy::too_many_arguments)]
pub fn assumption3_check(
    kernel: &SparseKernel,
    cloud: &PointCloud,
    pi: &StationaryDistribution,
    model: &DensityModel,
    params: &FkParams,
    scaling: &ScalingParams,
    k_max: usize,
) -> Result<AssumptionReport> {
    let n = cloud.len();
    if kernel.n != n || pi.probabilities.len() != n {
        return Err(Error::ShapeMismatch("kernel, cloud and measure disagree".into()));
    }
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!("k_max = {k_max}")));
    }
    let d = cloud.dim;
    let tau = scaling.tau;
    let t_final = scaling.t_final.max(tau);
    // f_k is non-increasing in t when rho >= 0, so the supremum sits at tau.
    let t_grid: Vec<f64> = if params.rho >= 0.0 {
        vec![tau]
    } else {
        let (a, b) = (tau.ln(), t_final.ln());
        (0..32).map(|i| (a + (b - a) * i as f64 / 31.0).exp()).collect()
    };
    let tables = t_grid
        .iter()
        .map(|&t| SeriesTable::new(t, *params, k_max))
        .collect::<Result<Vec<_>>>()?;
    const REL: f64 = 1e-17;
    let de = d as f64 * std::f64::consts::E;
    struct Row {
        series: f64,
        trunc: f64,
        k_used: usize,
        ln_gauss: f64,
        max_exp: f64,
        mean_exp: f64,
        radius: f64,
    }
    let rows: Vec<Row> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = cloud.point(i);
            let w = kernel.row_weight(i);
            let c = 2.0 / drift_and_scale(model, xi).1;
            let sqrt_c = c.sqrt();
            let mut series = 0.0;
            let mut trunc = 0.0;
            let mut k_used = 0;
            let mut gauss_terms = Vec::with_capacity(kernel.row(i).len());
            let mut max_exp: f64 = 0.0;
            let mut mean_exp = 0.0;
            let mut radius: f64 = 0.0;
            for &j in kernel.row(i) {
                let xj = cloud.point(j as usize);
                let r2: f64 = (0..d).map(|s| min_image_coord(xj[s] - xi[s]).powi(2)).sum();
                radius = radius.max(r2.sqrt());
                let l = sqrt_c * r2.sqrt();
                let mut best = (0.0, 0.0);
                for tab in &tables {
                    let (v, rest, used) = tab.sum(l, REL, k_max);
                    k_used = k_used.max(used);
                    if v + rest > best.0 + best.1 {
                        best = (v, rest);
                    }
                }
                series += w * best.0 * best.0;
                trunc += w * (2.0 * best.0 * best.1 + best.1 * best.1);
                let e = de * r2 / tau;
                max_exp = max_exp.max(e);
                mean_exp += w * e;
                gauss_terms.push(e);
            }
            // ln sum_j w (e^{x_j} - 1), stable for large exponents.
            let top = gauss_terms.iter().cloned().fold(0.0f64, f64::max);
            let ln_gauss = if top == 0.0 {
                f64::NEG_INFINITY
            } else {
                let s: f64 = gauss_terms.iter().map(|&e| w * ((e - top).exp() - (-top).exp())).sum();
                top + s.ln()
            };
            Row {
                series,
                trunc,
                k_used,
                ln_gauss,
                max_exp,
                mean_exp,
                radius,
            }
        })
        .collect();
    let p = &pi.probabilities;
    let series_value = compensated_sum(rows.iter().zip(p).map(|(r, w)| w * r.series));
    let truncation_bound = compensated_sum(rows.iter().zip(p).map(|(r, w)| w * r.trunc));
    let k_truncation = rows.iter().map(|r| r.k_used).max().unwrap_or(0);
    let prefactor = (2.0 / PI).sqrt() * tau / d as f64;
    let ln_weighted: Vec<f64> = rows
        .iter()
        .zip(p)
        .map(|(r, &w)| if w > 0.0 { w.ln() + r.ln_gauss } else { f64::NEG_INFINITY })
        .collect();
    let top = ln_weighted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_gaussian_tail = if top == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        prefactor.ln() + top + compensated_sum(ln_weighted.iter().map(|l| (l - top).exp())).ln()
    };
    let gaussian_tail_value = ln_gaussian_tail.exp();
    let k = kernel.k.max(1);
    let r_m = (2.0 * k as f64 / (n as f64 * scaling.v0 * model.margin)).powf(1.0 / d as f64);
    let envelope_exponent = de * r_m * r_m / tau;
    let series_finite = series_value.is_finite() && truncation_bound.is_finite();
    if !series_finite {
        return Err(Error::Divergent(format!(
            "series not summable within {k_max} terms"
        )));
    }
    Ok(AssumptionReport {
        schema: SCHEMA_VERSION,
        series_value,
        truncation_bound,
        k_truncation,
        series_finite,
        t_grid_len: t_grid.len(),
        gaussian_tail_value,
        gaussian_tail_finite: gaussian_tail_value.is_finite(),
        ln_gaussian_tail,
        max_exponent: rows.iter().map(|r| r.max_exp).fold(0.0, f64::max),
        mean_exponent: compensated_sum(rows.iter().zip(p).map(|(r, w)| w * r.mean_exp)),
        r_m,
        envelope_exponent,
        gaussian_tail_envelope: prefactor * envelope_exponent.exp_m1(),
        max_radius: rows.iter().map(|r| r.radius).fold(0.0, f64::max),
    })
}

/// Minimal constant in `f_k(t) t^{(k-1)/2} / sqrt(k!) <= C^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrudeConstant {
    /// `max(scan_sup, limit)`: valid for every `k`, not only the scanned ones.
    pub constant: f64,
    /// Supremum over `k <= k_max` and the time grid.
    pub scan_sup: f64,
    pub argmax_k: usize,
    pub argmax_t: f64,
    /// `lim_{k -> inf}` of the `k`-th root, `sqrt(d e / 2) max_t e^{-rho t / 2}`.
    pub limit: f64,
}

fn crude_ratio_root(k: usize, t: f64, p: FkParams) -> Result<f64> {
    let ln = log_fk(k, t, p)? + 0.5 * (k as f64 - 1.0) * t.ln() - 0.5 * ln_factorial(k);
    Ok((ln / k as f64).exp())
}

/// Scans `(f_k(t) t^{(k-1)/2} / sqrt(k!))^{1/k}` over `k <= k_max` and `t_grid`.
pub fn crude_fk_constant_report(params: FkParams, t_grid: &[f64], k_max: usize) -> Result<CrudeConstant> {
    if t_grid.is_empty() || k_max == 0 {
        return Err(Error::InvalidParameter("empty scan".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0, 0.0);
    for &t in t_grid {
        for k in 1..=k_max {
            let v = crude_ratio_root(k, t, params)?;
            if v > best.0 {
                best = (v, k, t);
            }
        }
    }
    let de = params.dim as f64 * std::f64::consts::E;
    let limit = (0.5 * de).sqrt()
        * t_grid
            .iter()
            .map(|&t| (-0.5 * params.rho * t).exp())
            .fold(0.0, f64::max);
    Ok(CrudeConstant {
        constant: best.0.max(limit),
        scan_sup: best.0,
        argmax_k: best.1,
        argmax_t: best.2,
        limit,
    })
}

/// The constant of [`crude_fk_constant_report`].
pub fn crude_fk_constant(params: FkParams, t_grid: &[f64], k_max: usize) -> Result<f64> {
    crude_fk_constant_report(params, t_grid, k_max).map(|c| c.constant)
}

/// `n` log-spaced times in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}
