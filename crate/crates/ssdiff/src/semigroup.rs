//! One-dimensional periodic laboratory for diffusion semigroups.
//!
//! A [`Generator1D`] discretizes `L phi = b phi' + a phi''` on `N` equispaced
//! nodes of the unit circle with central differences. Its invariant weights
//! are the exact null vector of the discrete adjoint, so Crank–Nicolson
//! evolution conserves `sum_i mu_i u_i` up to rounding.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::numeric::compensated_sum;
use crate::stein::{eval_fk, log_grid, FkParams};
use crate::torus::DensityModel;
use crate::transport::exact_w2_cost;
use crate::{Error, Result, SCHEMA_VERSION};

/// Largest grid accepted by [`spectral_gap`].
pub const MAX_GAP_NODES: usize = 2048;

/// Discrete periodic generator on `N` nodes `x_i = i / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator1D {
    a: Vec<f64>,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    mu: Vec<f64>,
}

impl Generator1D {
    /// Builds the stencil from coefficient samples at the nodes.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = a.len();
        if n < 3 || b.len() != n {
            return Err(Error::ShapeMismatch(format!("{} and {} coefficient samples", n, b.len())));
        }
        if let Some(i) = a.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::NonPositive(format!("a[{i}] = {}", a[i])));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("drift samples must be finite".into()));
        }
        let h = 1.0 / n as f64;
        let lo: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a / (h * h) - b / (2.0 * h)).collect();
        let hi: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a / (h * h) + b / (2.0 * h)).collect();
        if let Some(i) = lo.iter().zip(&hi).position(|(l, u)| !(*l > 0.0 && *u > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "grid too coarse for the drift at node {i}: |b| h / a must stay below 2"
            )));
        }
        let mu = null_vector(&lo, &hi)?;
        Ok(Self { a, b, lo, hi, mu })
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        grid(self.len())
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Invariant probability weights of the discrete generator.
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Stencil row `(lower, centre, upper)` for node `i`.
    pub fn row(&self, i: usize) -> (f64, f64, f64) {
        (self.lo[i], -(self.lo[i] + self.hi[i]), self.hi[i])
    }

    /// `L phi`, written in difference form so constants map to exactly zero.
    pub fn apply(&self, phi: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let (l, r) = ((i + n - 1) % n, (i + 1) % n);
                self.lo[i] * (phi[l] - phi[i]) + self.hi[i] * (phi[r] - phi[i])
            })
            .collect()
    }

    /// Curvature bound `min u''` for `a = 1`, `b = -u'`.
    pub fn rho_bakry_emery(&self) -> Result<f64> {
        if self.a.iter().any(|x| (x - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidParameter("curvature estimate needs a = 1".into()));
        }
        let d = central_diff(&self.b);
        Ok(d.iter().map(|x| -x).fold(f64::INFINITY, f64::min))
    }
}

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 / n as f64).collect()
}

/// Samples `a` and `b` on the grid.
pub fn build_generator(a: impl Fn(f64) -> f64, b: impl Fn(f64) -> f64, n: usize) -> Result<Generator1D> {
    let x = grid(n);
    Generator1D::new(x.iter().map(|&x| a(x)).collect(), x.iter().map(|&x| b(x)).collect())
}

/// `phi''` on the unit circle.
pub fn heat(n: usize) -> Result<Generator1D> {
    build_generator(|_| 1.0, |_| 0.0, n)
}

/// `-u' phi' + phi''`, reversible for `exp(-u)`.
pub fn bakry_emery(u_prime: impl Fn(f64) -> f64, n: usize) -> Result<Generator1D> {
    build_generator(|_| 1.0, |x| -u_prime(x), n)
}

/// `a = f^{-2} / 2`, `b = f^{-2} (log f)'` for a one-dimensional density,
/// whose reversible measure is proportional to `f^4`.
pub fn reversible_pair(f: &DensityModel, n: usize) -> Result<Generator1D> {
    if f.dim != 1 {
        return Err(Error::UnsupportedDimension(f.dim));
    }
    build_generator(
        |x| 0.5 / f.value(&[x]).powi(2),
        |x| f.grad(&[x])[0] / f.value(&[x]).powi(3),
        n,
    )
}

/// Solves `mu L = 0` on the cycle through the constant net flux between
/// neighbours.
fn null_vector(lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    let n = lo.len();
    let mut alpha = vec![0.0; n + 1];
    let mut beta = vec![0.0; n + 1];
    alpha[0] = 1.0;
    for i in 0..n {
        let down = lo[(i + 1) % n];
        alpha[i + 1] = alpha[i] * hi[i] / down;
        beta[i + 1] = (beta[i] * hi[i] + 1.0) / down;
    }
    let flux = (alpha[n] - 1.0) / beta[n];
    let raw: Vec<f64> = (0..n).map(|i| alpha[i] - flux * beta[i]).collect();
    if raw.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::NotConverged("invariant weights of the generator".into()));
    }
    let s = compensated_sum(raw.iter().cloned());
    Ok(raw.into_iter().map(|x| x / s).collect())
}

/// Periodic tridiagonal system solved by Sherman–Morrison on top of a
/// factored Thomas sweep.
struct CyclicSolver {
    sub: Vec<f64>,
    // Thomas factors of the corner-corrected matrix.
    cp: Vec<f64>,
    denom: Vec<f64>,
    z: Vec<f64>,
    corner_top: f64,
    gamma: f64,
}

impl CyclicSolver {
    fn new(sub: Vec<f64>, mut diag: Vec<f64>, sup: Vec<f64>) -> Self {
        let n = diag.len();
        // Row 0 couples to x_{n-1} through sub[0]; row n-1 to x_0 through sup[n-1].
        let corner_top = sub[0];
        let corner_bottom = sup[n - 1];
        let gamma = -diag[0];
        diag[0] -= gamma;
        diag[n - 1] -= corner_bottom * corner_top / gamma;
        let mut cp = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = diag[0];
        cp[0] = sup[0] / denom[0];
        for i in 1..n {
            denom[i] = diag[i] - sub[i] * cp[i - 1];
            cp[i] = sup[i] / denom[i];
        }
        let mut s = Self {
            sub,
            cp,
            denom,
            z: vec![],
            corner_top,
            gamma,
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = corner_bottom;
        s.z = s.thomas(&u);
        s
    }

    fn thomas(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        let mut x = vec![0.0; n];
        x[0] = r[0] / self.denom[0];
        for i in 1..n {
            x[i] = (r[i] - self.sub[i] * x[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.cp[i] * x[i + 1];
        }
        x
    }

    fn solve(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        let mut x = self.thomas(r);
        let v = |w: &[f64]| w[0] + self.corner_top * w[n - 1] / self.gamma;
        let fact = v(&x) / (1.0 + v(&self.z));
        for (xi, zi) in x.iter_mut().zip(&self.z) {
            *xi -= fact * zi;
        }
        x
    }
}

/// Grid function together with its elapsed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemigroupState {
    pub values: Vec<f64>,
    pub t: f64,
}

impl SemigroupState {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, t: 0.0 }
    }

    /// Advances by `duration` with Crank–Nicolson steps of at most `dt`.
    pub fn advance(&mut self, gen: &Generator1D, duration: f64, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {dt}")));
        }
        if !(duration >= 0.0) {
            return Err(Error::InvalidParameter(format!("duration = {duration}")));
        }
        if self.values.len() != gen.len() {
            return Err(Error::ShapeMismatch(format!("{} values on {} nodes", self.values.len(), gen.len())));
        }
        if duration == 0.0 {
            return Ok(());
        }
        let steps = (duration / dt - 1e-9).ceil().max(1.0) as usize;
        let theta = 0.5 * duration / steps as f64;
        let n = gen.len();
        let sub: Vec<f64> = gen.lo.iter().map(|l| -theta * l).collect();
        let sup: Vec<f64> = gen.hi.iter().map(|u| -theta * u).collect();
        let diag: Vec<f64> = (0..n).map(|i| 1.0 + theta * (gen.lo[i] + gen.hi[i])).collect();
        let solver = CyclicSolver::new(sub, diag, sup);
        let mut u = std::mem::take(&mut self.values);
        for _ in 0..steps {
            let lu = gen.apply(&u);
            let rhs: Vec<f64> = u.iter().zip(&lu).map(|(x, l)| x + theta * l).collect();
            u = solver.solve(&rhs);
        }
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotConverged("non-finite values during evolution".into()));
        }
        self.values = u;
        self.t += duration;
        Ok(())
    }
}

/// `P_t u0` by Crank–Nicolson with step at most `dt`.
pub fn evolve(gen: &Generator1D, u0: &[f64], t: f64, dt: f64) -> Result<SemigroupState> {
    let mut s = SemigroupState::new(u0.to_vec());
    s.advance(gen, t, dt)?;
    Ok(s)
}

/// `k`-th derivative of a periodic grid function by trigonometric
/// interpolation; the Nyquist mode is dropped.
pub fn spectral_derivative(u: &[f64], k: u32) -> Vec<f64> {
    let n = u.len();
    if k == 0 || n == 0 {
        return u.to_vec();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = u.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let two_pi = 2.0 * std::f64::consts::PI;
    for (j, c) in buf.iter_mut().enumerate() {
        let m = if 2 * j < n {
            j as f64
        } else if 2 * j > n {
            j as f64 - n as f64
        } else {
            *c = Complex::new(0.0, 0.0);
            continue;
        };
        *c *= Complex::new(0.0, two_pi * m).powu(k);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn central_diff(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let h = 1.0 / n as f64;
    (0..n).map(|i| (u[(i + 1) % n] - u[(i + n - 1) % n]) / (2.0 * h)).collect()
}

/// One `(k, t)` cell of a gradient-bound check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEntry {
    pub k: usize,
    pub t: f64,
    pub fk: f64,
    pub max_ratio: f64,
    pub argmax: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub schema: u32,
    pub rho: f64,
    pub dim: usize,
    pub slack: f64,
    pub entries: Vec<GradientEntry>,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Crank–Nicolson steps per evolution in [`gradient_bound_check`].
pub const CHECK_STEPS: usize = 2000;

/// Compares `a^{k/2} |(P_t phi)^{(k)}|` with `f_k(t) sqrt(P_t (a phi'^2))` at
/// every node, for `k = 1..=k_max` and each `t`.
pub fn gradient_bound_check(
    gen: &Generator1D,
    phi: &[f64],
    params: FkParams,
    t_list: &[f64],
    k_max: usize,
    slack: f64,
) -> Result<GradientReport> {
    gradient_bound_check_with(gen, phi, params, t_list, k_max, slack, &eval_fk)
}

/// [`gradient_bound_check`] with a replacement for `f_k`.
pub fn gradient_bound_check_with(
    gen: &Generator1D,
    phi: &[f64],
    params: FkParams,
    t_list: &[f64],
    k_max: usize,
    slack: f64,
    fk: &dyn Fn(usize, f64, FkParams) -> Result<f64>,
) -> Result<GradientReport> {
    let n = gen.len();
    if phi.len() != n {
        return Err(Error::ShapeMismatch(format!("{} values on {} nodes", phi.len(), n)));
    }
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be positive".into()));
    }
    let scale = phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mean = compensated_sum(phi.iter().cloned()) / n as f64;
    let constant = phi.iter().all(|x| (x - mean).abs() <= 1e-14 * (1.0 + scale));
    let dphi = spectral_derivative(phi, 1);
    let energy: Vec<f64> = dphi.iter().zip(&gen.a).map(|(d, a)| a * d * d).collect();
    let mut entries = vec![];
    for &t in t_list {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("t = {t}")));
        }
        let dt = t / CHECK_STEPS as f64;
        let pt = evolve(gen, phi, t, dt)?.values;
        let pe = evolve(gen, &energy, t, dt)?.values;
        for k in 1..=k_max {
            let fk = fk(k, t, params)?;
            let dk = spectral_derivative(&pt, k as u32);
            let mut best = GradientEntry {
                k,
                t,
                fk,
                max_ratio: 0.0,
                argmax: 0,
                lhs: 0.0,
                rhs: 0.0,
            };
            if !constant {
                for i in 0..n {
                    let lhs = gen.a[i].powf(0.5 * k as f64) * dk[i].abs();
                    let rhs = fk * pe[i].max(0.0).sqrt();
                    let r = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
                    if r > best.max_ratio || i == 0 {
                        best.max_ratio = r;
                        best.argmax = i;
                        best.lhs = lhs;
                        best.rhs = rhs;
                    }
                }
            }
            entries.push(best);
        }
    }
    let max_ratio = entries.iter().map(|e| e.max_ratio).fold(0.0, f64::max);
    Ok(GradientReport {
        schema: SCHEMA_VERSION,
        rho: params.rho,
        dim: params.dim,
        slack,
        entries,
        max_ratio,
        pass: max_ratio <= 1.0 + slack,
    })
}

/// Smallest nonzero eigenvalue of `-L` in `L^2(mu)`.
pub fn spectral_gap(gen: &Generator1D) -> Result<f64> {
    let n = gen.len();
    if n > MAX_GAP_NODES {
        return Err(Error::InvalidParameter(format!("{n} nodes above {MAX_GAP_NODES}")));
    }
    let s: Vec<f64> = gen.mu.iter().map(|m| m.sqrt()).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (l, c, u) = gen.row(i);
        let (il, iu) = ((i + n - 1) % n, (i + 1) % n);
        m[(i, i)] -= c;
        m[(i, il)] -= s[i] * l / s[il];
        m[(i, iu)] -= s[i] * u / s[iu];
    }
    let sym = (&m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().cloned().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev[1])
}

/// `sum_i mu_i h_i a_i ((log h)'_i)^2` with spectral derivatives.
pub fn fisher_information(gen: &Generator1D, h: &[f64]) -> Result<f64> {
    if h.len() != gen.len() {
        return Err(Error::ShapeMismatch(format!("{} values on {} nodes", h.len(), gen.len())));
    }
    if let Some(i) = h.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::NonPositive(format!("h[{i}] = {}", h[i])));
    }
    let lh: Vec<f64> = h.iter().map(|x| x.ln()).collect();
    let d = spectral_derivative(&lh, 1);
    Ok(compensated_sum((0..h.len()).map(|i| gen.mu[i] * h[i] * gen.a[i] * d[i] * d[i])))
}

/// Fisher information along `P_t h` and the distance estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherTrace {
    pub times: Vec<f64>,
    pub fisher: Vec<f64>,
    /// `W_2(nu, nu_T)` under the metric of `a`.
    pub w2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpReport {
    pub schema: u32,
    pub t_final: f64,
    pub kappa: f64,
    pub c: f64,
    pub w2_initial: f64,
    pub w2_final: f64,
    /// `-ln(W_2(nu_T, mu) / W_2(nu, mu)) / T`.
    pub empirical_rate: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub trace: FisherTrace,
}

/// Points of the log-spaced time grid used by [`interp_inequality_check`].
pub const INTERP_TIMES: usize = 96;
const INTERP_STEPS: usize = 200;

/// Squared `d_a` distances between nodes, from arc length `int a^{-1/2}`.
fn arc_length(gen: &Generator1D) -> (Vec<f64>, f64) {
    let n = gen.len();
    let h = gen.spacing();
    let w: Vec<f64> = gen.a.iter().map(|a| a.powf(-0.5)).collect();
    let mut f = vec![0.0; n + 1];
    for i in 0..n {
        f[i + 1] = f[i] + 0.5 * h * (w[i] + w[(i + 1) % n]);
    }
    let total = f[n];
    f.truncate(n);
    (f, total)
}

/// `W_2` between two weightings of the grid nodes under `d_a`.
pub fn grid_w2(gen: &Generator1D, p: &[f64], q: &[f64]) -> Result<f64> {
    let (f, total) = arc_length(gen);
    let cost = |i: usize, j: usize| {
        let d = (f[i] - f[j]).abs();
        let d = d.min(total - d);
        d * d
    };
    exact_w2_cost(p, q, cost, 0.25 * total * total)
}

/// Checks `(1 - c e^{-kappa T}) W_2(nu, mu) <= int_0^T I(nu_t)^{1/2} dt` with
/// `c = 1` and `kappa` the spectral gap, for `d nu = h d mu`.
pub fn interp_inequality_check(gen: &Generator1D, h: &[f64], t_final: f64) -> Result<InterpReport> {
    if !(t_final > 0.0) {
        return Err(Error::InvalidParameter(format!("T = {t_final}")));
    }
    let n = gen.len();
    if h.len() != n {
        return Err(Error::ShapeMismatch(format!("{} values on {} nodes", h.len(), n)));
    }
    let mass = compensated_sum(h.iter().zip(&gen.mu).map(|(x, m)| x * m));
    if !(mass > 0.0) {
        return Err(Error::NonPositive("total mass of h".into()));
    }
    let h: Vec<f64> = h.iter().map(|x| x / mass).collect();
    let kappa = spectral_gap(gen)?;
    let mut times = vec![0.0];
    times.extend(log_grid(t_final * 1e-5, t_final, INTERP_TIMES));
    let mut state = SemigroupState::new(h.clone());
    let mut fisher = vec![];
    for (idx, &t) in times.iter().enumerate() {
        if idx > 0 {
            let step = t - times[idx - 1];
            state.advance(gen, step, step / INTERP_STEPS as f64)?;
        }
        fisher.push(fisher_information(gen, &state.values)?);
    }
    let rhs = compensated_sum(
        times
            .windows(2)
            .zip(fisher.windows(2))
            .map(|(t, i)| 0.5 * (t[1] - t[0]) * (i[0].sqrt() + i[1].sqrt())),
    );
    let weights = |u: &[f64]| -> Vec<f64> { u.iter().zip(&gen.mu).map(|(x, m)| x * m).collect() };
    let nu = weights(&h);
    let nu_t = weights(&state.values);
    let w2_initial = grid_w2(gen, &nu, &gen.mu)?;
    let w2_final = grid_w2(gen, &nu_t, &gen.mu)?;
    let w2_path = grid_w2(gen, &nu, &nu_t)?;
    let lhs = (1.0 - (-kappa * t_final).exp()) * w2_initial;
    let empirical_rate = (w2_initial > 0.0 && w2_final > 0.0).then(|| -(w2_final / w2_initial).ln() / t_final);
    Ok(InterpReport {
        schema: SCHEMA_VERSION,
        t_final,
        kappa,
        c: 1.0,
        w2_initial,
        w2_final,
        empirical_rate,
        lhs,
        rhs,
        slack: rhs - lhs,
        pass: lhs <= rhs + 1e-12,
        trace: FisherTrace {
            times,
            fisher,
            w2: w2_path,
        },
    })
}

/// `(Gamma_1(phi, psi), Gamma_2(phi, psi))` on the grid, by nested stencils.
pub fn gamma_ops(gen: &Generator1D, phi: &[f64], psi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = gen.len();
    if phi.len() != n || psi.len() != n {
        return Err(Error::ShapeMismatch("test functions must live on the grid".into()));
    }
    let gamma1 = |u: &[f64], v: &[f64]| -> Vec<f64> {
        let (du, dv) = (central_diff(u), central_diff(v));
        (0..n).map(|i| gen.a[i] * du[i] * dv[i]).collect()
    };
    let g1 = gamma1(phi, psi);
    let lg = gen.apply(&g1);
    let a = gamma1(&gen.apply(phi), psi);
    let b = gamma1(phi, &gen.apply(psi));
    let g2 = (0..n).map(|i| 0.5 * (lg[i] - a[i] - b[i])).collect();
    Ok((g1, g2))
}

/// Minimum over a `per_axis^d` lattice of the smallest Hessian eigenvalue of
/// `v`, by central differences.
pub fn rho_from_potential(dim: usize, v: impl Fn(&[f64]) -> f64, per_axis: usize) -> Result<f64> {
    if !(1..=3).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if per_axis < 3 {
        return Err(Error::InvalidParameter(format!("per_axis = {per_axis}")));
    }
    let h = 1.0 / per_axis as f64;
    let total = per_axis.pow(dim as u32);
    let mut best = f64::INFINITY;
    let mut x = vec![0.0; dim];
    for idx in 0..total {
        let mut r = idx;
        for c in x.iter_mut() {
            *c = (r % per_axis) as f64 * h;
            r /= per_axis;
        }
        let mut hess = Matrix3::<f64>::identity();
        let v0 = v(&x);
        let at = |shift: &[(usize, f64)]| {
            let mut y = x.clone();
            for &(k, s) in shift {
                y[k] += s;
            }
            v(&y)
        };
        for i in 0..dim {
            hess[(i, i)] = (at(&[(i, h)]) - 2.0 * v0 + at(&[(i, -h)])) / (h * h);
            for j in 0..i {
                let hij = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)])
                    + at(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h);
                hess[(i, j)] = hij;
                hess[(j, i)] = hij;
            }
        }
        let sub = hess.view((0, 0), (dim, dim)).clone_owned();
        let low = SymmetricEigen::new(sub).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        best = best.min(low);
    }
    Ok(best)
}

/// Curvature bound for `a = I`, `b = grad log f`, i.e. the potential
/// `V = -log f`.
pub fn estimate_rho_hessian(model: &DensityModel, per_axis: usize) -> Result<f64> {
    model.check_positive(per_axis)?;
    rho_from_potential(model.dim, |x| -model.value(x).ln(), per_axis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sample(n: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
        grid(n).into_iter().map(g).collect()
    }

    #[test]
    fn heat_rows_are_the_discrete_laplacian() {
        let gen = heat(16).unwrap();
        let h2 = 256.0;
        for i in 0..16 {
            let (l, c, u) = gen.row(i);
            assert_eq!((l, c, u), (h2, -2.0 * h2, h2));
        }
        assert!(gen.apply(&[3.7; 16]).iter().all(|x| x.abs() <= 1e-12));
    }

    #[test]
    fn rejects_nonpositive_diffusion() {
        assert!(matches!(build_generator(|x| x - 0.5, |_| 0.0, 32), Err(Error::NonPositive(_))));
    }

    #[test]
    fn eigenfunction_identity_is_second_order() {
        let err = |n: usize| {
            let gen = heat(n).unwrap();
            let phi = sample(n, |x| (2.0 * PI * x).sin());
            let l = gen.apply(&phi);
            sample(n, |x| -4.0 * PI * PI * (2.0 * PI * x).sin())
                .iter()
                .zip(&l)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 < 0.04, "{e1}");
        assert_relative_eq!(e1 / e2, 4.0, max_relative = 0.01);
    }

    #[test]
    fn derived_measure_annihilates_the_generator() {
        let u = |x: f64| 0.3 * (2.0 * PI * x).cos() + 0.1 * (4.0 * PI * x).sin();
        let gen = build_generator(|x| 1.0 + 0.3 * (2.0 * PI * x).sin(), |x| 0.2 * u(x), 128).unwrap();
        let mu = gen.mu();
        let n = gen.len();
        let phi = sample(n, |x| (6.0 * PI * x).cos() + x * (1.0 - x));
        let lphi = gen.apply(&phi);
        let s = compensated_sum((0..n).map(|i| mu[i] * lphi[i]));
        assert!(s.abs() < 1e-10, "{s}");
        assert_relative_eq!(mu.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn reversible_pair_targets_f_to_the_fourth() {
        let f = DensityModel::one_mode(1, 0.3).unwrap();
        let err = |n: usize| {
            let gen = reversible_pair(&f, n).unwrap();
            let raw = sample(n, |x| f.value(&[x]).powi(4));
            let s: f64 = raw.iter().sum();
            gen.mu()
                .iter()
                .zip(&raw)
                .map(|(m, r)| (m * n as f64 - r * n as f64 / s).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(128), err(256));
        assert!(e1 < 1e-3, "{e1}");
        assert!(e1 / e2 > 3.5, "{e1} {e2}");
    }

    #[test]
    fn heat_decay_of_a_sine() {
        let n = 512;
        let gen = heat(n).unwrap();
        let phi = sample(n, |x| (2.0 * PI * x).sin());
        let s = evolve(&gen, &phi, 0.01, 1e-5).unwrap();
        let amp = s.values[n / 4];
        assert_relative_eq!(amp, (-0.394784176f64).exp(), max_relative = 1e-4);
        assert_relative_eq!(amp, 0.67383, max_relative = 1e-4);
        assert_eq!(s.t, 0.01);
    }

    #[test]
    fn constants_are_fixed() {
        let gen = bakry_emery(|x| -0.5 * 2.0 * PI * (2.0 * PI * x).sin(), 64).unwrap();
        let s = evolve(&gen, &[2.5; 64], 0.3, 1e-3).unwrap();
        let dev = s.values.iter().map(|x| (x - 2.5).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12, "{dev}");
    }

    #[test]
    fn semigroup_property_and_mass() {
        let gen = bakry_emery(|x| 0.8 * (2.0 * PI * x).cos(), 128).unwrap();
        let u0 = sample(128, |x| 1.0 + 0.5 * (2.0 * PI * x).sin() + 0.2 * (8.0 * PI * x).cos());
        let mass = |u: &[f64]| compensated_sum(u.iter().zip(gen.mu()).map(|(a, b)| a * b));
        let mut s = evolve(&gen, &u0, 0.02, 1e-4).unwrap();
        s.advance(&gen, 0.03, 1e-4).unwrap();
        let direct = evolve(&gen, &u0, 0.05, 1e-4).unwrap();
        let diff = s.values.iter().zip(&direct.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-7, "{diff}");
        let drift = (mass(&s.values) - mass(&u0)).abs();
        assert!(drift < 1e-10, "{drift}");
        let (lo, hi) = (u0.iter().cloned().fold(f64::INFINITY, f64::min), u0.iter().cloned().fold(0.0, f64::max));
        assert!(s.values.iter().all(|x| *x >= lo - 1e-9 && *x <= hi + 1e-9));
    }

    #[test]
    fn evolve_rejects_bad_step() {
        let gen = heat(8).unwrap();
        assert!(evolve(&gen, &[0.0; 8], 0.1, 0.0).is_err());
        assert!(evolve(&gen, &[0.0; 8], 0.1, -1.0).is_err());
    }

    #[test]
    fn spectral_derivative_of_trig_polynomial() {
        let u = sample(32, |x| (2.0 * PI * x).sin() + 0.5 * (6.0 * PI * x).cos());
        let d3 = spectral_derivative(&u, 3);
        let w = 2.0 * PI;
        let exact = sample(32, |x| -w.powi(3) * (w * x).cos() + 0.5 * (3.0 * w).powi(3) * (3.0 * w * x).sin());
        for (a, b) in d3.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn gradient_bound_heat_first_order_is_jensen() {
        let gen = heat(256).unwrap();
        let phi = sample(256, |x| (2.0 * PI * x).sin() + 0.5 * (4.0 * PI * x).cos());
        let p = FkParams::new(0.0, 1).unwrap();
        let r = gradient_bound_check(&gen, &phi, p, &[0.01, 0.05], 1, 0.05).unwrap();
        assert!(r.max_ratio <= 1.0 + 1e-9, "{}", r.max_ratio);
        assert!(r.pass);
    }

    #[test]
    fn gradient_bound_second_order_on_a_sine() {
        let n = 512;
        let gen = heat(n).unwrap();
        let phi = sample(n, |x| (2.0 * PI * x).sin());
        let p = FkParams::new(0.0, 1).unwrap();
        let r = gradient_bound_check(&gen, &phi, p, &[0.01], 2, 0.05).unwrap();
        let e = r.entries.iter().find(|e| e.k == 2).unwrap();
        // Oracle at x = 1/4, where the Hessian peaks.
        let t: f64 = 0.01;
        let w2 = 4.0 * PI * PI;
        let lhs = w2 * (-w2 * t).exp();
        let rhs = (1.0 / (2.0 * t)).sqrt() * (0.5 * w2 * (1.0 - (-4.0 * w2 * t).exp())).sqrt();
        assert_relative_eq!(e.max_ratio, lhs / rhs, max_relative = 1e-4);
        assert!(e.max_ratio < 1.0);
    }

    #[test]
    fn gradient_bound_constant_passes() {
        let gen = heat(64).unwrap();
        let p = FkParams::new(0.0, 1).unwrap();
        let r = gradient_bound_check(&gen, &[1.0; 64], p, &[0.01], 3, 0.05).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn heat_gap_is_four_pi_squared() {
        let gen = heat(256).unwrap();
        let gap = spectral_gap(&gen).unwrap();
        let h = 1.0 / 256.0;
        let discrete = 4.0 / (h * h) * (PI * h).sin().powi(2);
        assert_relative_eq!(gap, discrete, max_relative = 1e-10);
        assert_relative_eq!(gap, 4.0 * PI * PI, max_relative = 1e-4);
        let fast = build_generator(|_| 4.0, |_| 0.0, 256).unwrap();
        assert_relative_eq!(spectral_gap(&fast).unwrap(), 4.0 * gap, max_relative = 1e-10);
    }

    #[test]
    fn gap_is_positive_for_variable_coefficients() {
        let gen = build_generator(|x| 0.2 + (2.0 * PI * x).sin().powi(2), |x| (2.0 * PI * x).cos(), 128).unwrap();
        assert!(spectral_gap(&gen).unwrap() > 0.0);
        assert!(spectral_gap(&heat(MAX_GAP_NODES + 1).unwrap()).is_err());
    }

    #[test]
    fn fisher_matches_fine_quadrature() {
        let gen = heat(512).unwrap();
        assert_eq!(fisher_information(&gen, &[1.0; 512]).unwrap(), 0.0);
        let h = sample(512, |x| 1.0 + 0.5 * (2.0 * PI * x).cos());
        let got = fisher_information(&gen, &h).unwrap();
        let m = 10_000;
        let oracle: f64 = (0..m)
            .map(|i| {
                let x = (i as f64 + 0.5) / m as f64;
                let hp = -PI * (2.0 * PI * x).sin();
                hp * hp / (1.0 + 0.5 * (2.0 * PI * x).cos())
            })
            .sum::<f64>()
            / m as f64;
        assert!((got - oracle).abs() < 1e-6, "{got} {oracle}");
        assert!(fisher_information(&gen, &vec![0.0; 512]).is_err());
    }

    #[test]
    fn fisher_decreases_under_heat_flow() {
        let gen = heat(256).unwrap();
        let mut s = SemigroupState::new(sample(256, |x| 1.0 + 0.6 * (2.0 * PI * x).cos() + 0.3 * (6.0 * PI * x).sin()));
        let mut last = fisher_information(&gen, &s.values).unwrap();
        for _ in 0..40 {
            s.advance(&gen, 0.002, 2e-5).unwrap();
            let now = fisher_information(&gen, &s.values).unwrap();
            assert!(now <= last + 1e-8, "{now} {last}");
            last = now;
        }
    }

    #[test]
    fn interpolation_inequality_trivial_and_heat() {
        let gen = heat(256).unwrap();
        let flat = interp_inequality_check(&gen, &[1.0; 256], 0.2).unwrap();
        assert!(flat.lhs.abs() < 1e-12 && flat.rhs.abs() < 1e-12 && flat.pass);
        let h = sample(256, |x| 1.0 + 0.5 * (2.0 * PI * x).cos());
        let r = interp_inequality_check(&gen, &h, 0.2).unwrap();
        assert!(r.pass, "{} {}", r.lhs, r.rhs);
        assert!(r.rhs / r.lhs >= 1.0);
    }

    #[test]
    fn bochner_identity_converges() {
        let err = |n: usize| {
            let up = |x: f64| -2.0 * PI * (2.0 * PI * x).sin();
            let gen = bakry_emery(up, n).unwrap();
            let phi = sample(n, |x| (2.0 * PI * x).sin());
            let (_, g2) = gamma_ops(&gen, &phi, &phi).unwrap();
            let w = 2.0 * PI;
            grid(n)
                .iter()
                .zip(&g2)
                .map(|(&x, g)| {
                    let exact = (w * w * (w * x).sin()).powi(2) - w * w * (w * x).cos() * (w * (w * x).cos()).powi(2);
                    (exact - g).abs()
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(128), err(256));
        assert!(e1 < 5.0, "{e1}");
        assert_relative_eq!(e1 / e2, 4.0, max_relative = 0.05);
    }

    #[test]
    fn gamma_of_constants_vanish() {
        let gen = bakry_emery(|x| x.sin(), 32).unwrap();
        let (g1, g2) = gamma_ops(&gen, &[1.0; 32], &[1.0; 32]).unwrap();
        assert!(g1.iter().chain(&g2).all(|x| *x == 0.0));
    }

    #[test]
    fn curvature_dimension_holds_above_min_u_second() {
        let n = 256;
        let beta = 0.3;
        let gen = bakry_emery(|x| -beta * 2.0 * PI * (2.0 * PI * x).sin(), n).unwrap();
        let rho = gen.rho_bakry_emery().unwrap();
        assert_relative_eq!(rho, -beta * 4.0 * PI * PI, max_relative = 1e-3);
        for phi in [
            sample(n, |x| (2.0 * PI * x).sin()),
            sample(n, |x| (4.0 * PI * x).cos() + 0.3 * (2.0 * PI * x).sin()),
        ] {
            let (g1, g2) = gamma_ops(&gen, &phi, &phi).unwrap();
            let low = g1.iter().zip(&g2).map(|(a, b)| b - rho * a).fold(f64::INFINITY, f64::min);
            assert!(low >= -1e-6 * g2.iter().cloned().fold(1.0, f64::max), "{low}");
        }
        assert!(build_generator(|_| 2.0, |_| 0.0, 16).unwrap().rho_bakry_emery().is_err());
    }

    #[test]
    fn rho_from_cosine_potential() {
        let rho = |n| rho_from_potential(1, |x| (2.0 * PI * x[0]).cos(), n).unwrap();
        let (r1, r2) = (rho(256), rho(512));
        let exact = -4.0 * PI * PI;
        assert_relative_eq!(r1, exact, max_relative = 1e-4);
        assert_relative_eq!((r1 - exact) / (r2 - exact), 4.0, max_relative = 0.01);
        assert_eq!(rho_from_potential(2, |_| 1.5, 16).unwrap(), 0.0);
        assert_eq!(estimate_rho_hessian(&DensityModel::uniform(2), 16).unwrap(), 0.0);
    }

    #[test]
    fn rho_of_density_model_matches_log_concavity() {
        // V = -log(1 + a cos 2 pi x): V'' at x = 0 is 4 pi^2 a / (1 + a).
        let f = DensityModel::one_mode(1, 0.3).unwrap();
        let r = estimate_rho_hessian(&f, 1024).unwrap();
        let at = |x: f64| {
            let c = (2.0 * PI * x).cos();
            let s = (2.0 * PI * x).sin();
            let w = 2.0 * PI;
            let g = 1.0 + 0.3 * c;
            w * w * 0.3 * c / g + (w * 0.3 * s / g).powi(2)
        };
        let min = (0..100_000).map(|i| at(i as f64 / 100_000.0)).fold(f64::INFINITY, f64::min);
        assert_relative_eq!(r, min, max_relative = 1e-4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn row_sums_vanish_and_mu_is_invariant(
            a0 in 0.2f64..2.0, a1 in -0.15f64..0.15, b0 in -2.0f64..2.0, b1 in -2.0f64..2.0, n in 16usize..96
        ) {
            let gen = build_generator(
                |x| a0 + a1 * (2.0 * PI * x).sin(),
                |x| b0 * (2.0 * PI * x).cos() + b1,
                n,
            ).unwrap();
            for i in 0..n {
                let (l, c, u) = gen.row(i);
                prop_assert!((l + c + u).abs() <= 1e-12 * (l.abs() + u.abs()));
            }
            let phi: Vec<f64> = grid(n).iter().map(|x| (2.0 * PI * x).sin() * x).collect();
            let lphi = gen.apply(&phi);
            let scale = lphi.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            let s = compensated_sum((0..n).map(|i| gen.mu()[i] * lphi[i]));
            prop_assert!(s.abs() <= 1e-10 * scale);
        }
    }
}
