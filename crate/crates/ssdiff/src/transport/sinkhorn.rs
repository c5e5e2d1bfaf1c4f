//! Entropic transport with an epsilon ladder and a certified stopping rule.
//!
//! Each ladder level maximizes the entropic dual, by Newton steps on small
//! instances and by log-domain Sinkhorn sweeps otherwise. The scaled plan
//! is then rounded onto the exact marginals (primal upper bound) and the
//! potentials are made feasible by c-transforms (dual lower bound). The
//! ladder stops once the two bounds on the distance are within the gap.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::numeric::compensated_sum;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Certified {
    pub upper_sq: f64,
    pub lower_sq: f64,
    pub epsilon: f64,
    pub iterations: usize,
}

const LEVEL_ITERS: usize = 2_000;
const NEWTON_ITERS: usize = 60;
const TOTAL_ITERS: usize = 200_000;
const NEWTON_MAX_NODES: usize = 2_500;

fn lse(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Problem<'a> {
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a [f64],
    n: usize,
    m: usize,
}

impl Problem<'_> {
    fn plan(&self, f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
        let m = self.m;
        let mut p = vec![0.0; self.n * m];
        p.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
            let c = &self.cost[i * m..(i + 1) * m];
            for j in 0..m {
                row[j] = ((f[i] + g[j] - c[j]) / eps).exp();
            }
        });
        p
    }

    fn marginals(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        let r: Vec<f64> = p.par_chunks(m).map(|row| row.iter().sum()).collect();
        let mut c = vec![0.0; m];
        for row in p.chunks(m) {
            for (cj, x) in c.iter_mut().zip(row) {
                *cj += x;
            }
        }
        (r, c)
    }

    fn violation(&self, r: &[f64], c: &[f64]) -> f64 {
        let ea: f64 = r.iter().zip(self.a).map(|(x, y)| (x - y).abs()).sum();
        let eb: f64 = c.iter().zip(self.b).map(|(x, y)| (x - y).abs()).sum();
        ea + eb
    }

    /// Entropic dual objective; `None` when the plan overflows.
    fn dual(&self, f: &[f64], g: &[f64], eps: f64) -> Option<f64> {
        let m = self.m;
        let rows: Vec<f64> = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let c = &self.cost[i * m..(i + 1) * m];
                (0..m).map(|j| ((f[i] + g[j] - c[j]) / eps).exp()).sum::<f64>()
            })
            .collect();
        let mass = compensated_sum(rows);
        if !mass.is_finite() {
            return None;
        }
        let lin = compensated_sum(
            self.a
                .iter()
                .zip(f)
                .map(|(x, y)| x * y)
                .chain(self.b.iter().zip(g).map(|(x, y)| x * y)),
        );
        Some(lin - eps * mass)
    }

    fn sinkhorn_sweep(&self, f: &mut [f64], g: &mut [f64], eps: f64, ln_a: &[f64], ln_b: &[f64]) {
        let (n, m, cost) = (self.n, self.m, self.cost);
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            let row = &cost[i * m..(i + 1) * m];
            *fi = eps * ln_a[i] - eps * lse(row.iter().zip(g.iter()).map(|(c, gj)| (gj - c) / eps));
        });
        let f = &*f;
        g.par_iter_mut().enumerate().for_each(|(j, gj)| {
            *gj = eps * ln_b[j] - eps * lse((0..n).map(|i| (f[i] - cost[i * m + j]) / eps));
        });
    }

    /// One damped Newton step on the dual; false if no ascent was possible.
    fn newton_step(&self, f: &mut [f64], g: &mut [f64], eps: f64, p: &[f64], r: &[f64], c: &[f64]) -> bool {
        let (n, m) = (self.n, self.m);
        let size = n + m;
        let mut h = DMatrix::<f64>::zeros(size, size);
        let diag_max = r.iter().chain(c).cloned().fold(0.0, f64::max);
        let reg = 1e-12 * diag_max.max(f64::MIN_POSITIVE);
        for i in 0..n {
            h[(i, i)] = r[i] + reg;
            for j in 0..m {
                let x = p[i * m + j];
                h[(i, n + j)] = x;
                h[(n + j, i)] = x;
            }
        }
        for j in 0..m {
            h[(n + j, n + j)] = c[j] + reg;
        }
        let grad = DVector::from_iterator(
            size,
            self.a
                .iter()
                .zip(r)
                .map(|(x, y)| x - y)
                .chain(self.b.iter().zip(c).map(|(x, y)| x - y)),
        );
        let Some(chol) = h.cholesky() else {
            return false;
        };
        let dir = chol.solve(&grad) * eps;
        let slope = grad.dot(&dir);
        if !(slope > 0.0) {
            return false;
        }
        let Some(base) = self.dual(f, g, eps) else {
            return false;
        };
        let mut t = 1.0;
        for _ in 0..40 {
            let nf: Vec<f64> = (0..n).map(|i| f[i] + t * dir[i]).collect();
            let ng: Vec<f64> = (0..m).map(|j| g[j] + t * dir[n + j]).collect();
            if let Some(v) = self.dual(&nf, &ng, eps) {
                if v >= base + 1e-4 * t * slope {
                    f.copy_from_slice(&nf);
                    g.copy_from_slice(&ng);
                    return true;
                }
            }
            t *= 0.5;
        }
        false
    }

    fn certify(&self, f: &[f64], g: &[f64], eps: f64, iterations: usize) -> Certified {
        let (a, b, cost, n, m) = (self.a, self.b, self.cost, self.n, self.m);
        let mut plan = self.plan(f, g, eps);
        // Rounding onto the transport polytope.
        for i in 0..n {
            let row = &mut plan[i * m..(i + 1) * m];
            let r: f64 = row.iter().sum();
            if r > a[i] {
                let x = a[i] / r;
                row.iter_mut().for_each(|p| *p *= x);
            }
        }
        let (_, col) = self.marginals(&plan);
        let y: Vec<f64> = (0..m).map(|j| if col[j] > b[j] { b[j] / col[j] } else { 1.0 }).collect();
        for row in plan.chunks_mut(m) {
            for (p, yj) in row.iter_mut().zip(&y) {
                *p *= yj;
            }
        }
        let (r, c) = self.marginals(&plan);
        let err_a: Vec<f64> = (0..n).map(|i| (a[i] - r[i]).max(0.0)).collect();
        let err_b: Vec<f64> = (0..m).map(|j| (b[j] - c[j]).max(0.0)).collect();
        let norm: f64 = err_a.iter().sum();
        let base = compensated_sum(plan.iter().zip(cost).map(|(p, c)| p * c));
        let err_b = &err_b;
        let fix = if norm > 0.0 {
            compensated_sum((0..n).flat_map(|i| {
                let ea = err_a[i];
                (0..m).map(move |j| ea * err_b[j] * cost[i * m + j])
            })) / norm
        } else {
            0.0
        };
        // c-transforms give a feasible dual pair.
        let gt: Vec<f64> = (0..m)
            .map(|j| (0..n).map(|i| cost[i * m + j] - f[i]).fold(f64::INFINITY, f64::min))
            .collect();
        let ft: Vec<f64> = (0..n)
            .map(|i| (0..m).map(|j| cost[i * m + j] - gt[j]).fold(f64::INFINITY, f64::min))
            .collect();
        let lower = compensated_sum(
            a.iter()
                .zip(&ft)
                .map(|(x, y)| x * y)
                .chain(b.iter().zip(&gt).map(|(x, y)| x * y)),
        );
        Certified {
            upper_sq: (base + fix).max(0.0),
            lower_sq: lower,
            epsilon: eps,
            iterations,
        }
    }
}

/// `cost` is row-major `n x m`; all weights must be positive.
pub(crate) fn solve(a: &[f64], b: &[f64], cost: &[f64], target_gap: f64) -> Result<Certified> {
    let (n, m) = (a.len(), b.len());
    let prob = Problem { a, b, cost, n, m };
    let ln_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let ln_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let max_cost = cost.iter().cloned().fold(0.0, f64::max);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut eps = max_cost.max(1e-300);
    let eps_floor = 1e-13 * max_cost.max(f64::MIN_POSITIVE);
    // Marginal violation that costs at most a tenth of the gap once rounded.
    let tol = (0.1 * target_gap * target_gap / max_cost.max(f64::MIN_POSITIVE)).clamp(1e-14, 1e-3);
    let newton = n + m <= NEWTON_MAX_NODES;
    let mut iterations = 0;
    let mut best: Option<Certified> = None;
    loop {
        prob.sinkhorn_sweep(&mut f, &mut g, eps, &ln_a, &ln_b);
        iterations += 1;
        let cap = if newton { NEWTON_ITERS } else { LEVEL_ITERS };
        for _ in 0..cap {
            let p = prob.plan(&f, &g, eps);
            let (r, c) = prob.marginals(&p);
            if prob.violation(&r, &c) <= tol || iterations >= TOTAL_ITERS {
                break;
            }
            if !newton || !prob.newton_step(&mut f, &mut g, eps, &p, &r, &c) {
                prob.sinkhorn_sweep(&mut f, &mut g, eps, &ln_a, &ln_b);
            }
            iterations += 1;
        }
        let cert = prob.certify(&f, &g, eps, iterations);
        if best.as_ref().is_none_or(|b| cert.upper_sq < b.upper_sq) {
            best = Some(cert.clone());
        }
        let upper = best.as_ref().expect("set above").upper_sq;
        let gap = upper.sqrt() - cert.lower_sq.max(0.0).sqrt();
        if gap <= target_gap {
            let mut out = best.expect("set above");
            out.lower_sq = out.lower_sq.max(cert.lower_sq);
            return Ok(out);
        }
        if iterations >= TOTAL_ITERS || eps <= eps_floor {
            return Err(Error::NotConverged(format!(
                "entropic gap {gap:e} above {target_gap:e} after {iterations} iterations"
            )));
        }
        eps *= 0.5;
    }
}
