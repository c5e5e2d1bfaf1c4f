//! Tensor powers and metric-weighted inner products.
//!
//! For a symmetric positive-definite `A`, the inner product of two order-`m`
//! tensors is
//!
//! ```text
//! <x, y>_A = sum_{l, j} x_l y_j prod_i A[l_i, j_i]
//! ```
//!
//! so that `|v^{⊗m}|_A = (v^T A v)^{m/2}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest order supported by the dense representation.
pub const MAX_ORDER: usize = 8;
/// Largest dimension supported by the dense representation.
pub const MAX_DIM: usize = 4;

/// Dense order-`m` tensor over `R^d`, stored row-major in `d^m` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTensor {
    pub order: usize,
    pub dim: usize,
    pub entries: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            order,
            dim,
            entries: vec![0.0; dim.pow(order as u32)],
        }
    }

    pub fn from_entries(dim: usize, order: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim.pow(order as u32) {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for dim {dim}, order {order}",
                entries.len()
            )));
        }
        Ok(Self {
            order,
            dim,
            entries,
        })
    }

    /// Entry at multi-index `idx` (0-based).
    pub fn get(&self, idx: &[usize]) -> f64 {
        let flat = idx.iter().fold(0, |acc, &i| acc * self.dim + i);
        self.entries[flat]
    }

    /// Flat Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.entries.iter_mut().for_each(|x| *x *= c);
    }

    pub fn sub(&self, other: &SymTensor) -> Result<SymTensor> {
        check_shape(self, other)?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a - b)
            .collect();
        Ok(SymTensor {
            order: self.order,
            dim: self.dim,
            entries,
        })
    }
}

/// Tag for the structure of a [`MetricMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Identity,
    General,
}

/// Symmetric positive-definite `d x d` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub dim: usize,
    /// Row-major entries.
    pub entries: Vec<f64>,
    pub kind: MetricKind,
}

impl MetricMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![0.0; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 1.0;
        }
        Self {
            dim,
            entries,
            kind: MetricKind::Identity,
        }
    }

    /// `c * I`; `c` must be positive.
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!("scale {c}")));
        }
        let mut m = Self::identity(dim);
        if c != 1.0 {
            m.entries.iter_mut().for_each(|x| *x *= c);
            m.kind = MetricKind::General;
        }
        Ok(m)
    }

    /// Validates symmetry (1e-12 relative) and positive-definiteness.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {dim}x{dim} matrix",
                entries.len()
            )));
        }
        let scale = entries.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..dim {
            for j in 0..i {
                let (a, b) = (entries[i * dim + j], entries[j * dim + i]);
                if (a - b).abs() > 1e-12 * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "asymmetric entry ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        let m = DMatrix::from_row_slice(dim, dim, &entries);
        let eig = m.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min}"
            )));
        }
        let is_identity = (0..dim).all(|i| {
            (0..dim).all(|j| entries[i * dim + j] == if i == j { 1.0 } else { 0.0 })
        });
        Ok(Self {
            dim,
            entries,
            kind: if is_identity {
                MetricKind::Identity
            } else {
                MetricKind::General
            },
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// `v^T A v`.
    pub fn quadratic(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for i in 0..d {
            for j in 0..d {
                q += v[i] * self.entries[i * d + j] * v[j];
            }
        }
        q
    }

    /// `Some(c)` when the matrix equals `c * I`.
    pub fn scalar_factor(&self) -> Option<f64> {
        let d = self.dim;
        let c = self.entries[0];
        let ok = (0..d).all(|i| {
            (0..d).all(|j| self.entries[i * d + j] == if i == j { c } else { 0.0 })
        });
        ok.then_some(c)
    }

    /// Inverse, again symmetric positive-definite.
    pub fn inverse(&self) -> Result<Self> {
        if let Some(c) = self.scalar_factor() {
            return Self::scaled_identity(self.dim, 1.0 / c);
        }
        let m = DMatrix::from_row_slice(self.dim, self.dim, &self.entries);
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::NotPositiveDefinite("singular".into()))?;
        let d = self.dim;
        let mut entries = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                entries[i * d + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            }
        }
        Self::new(d, entries)
    }
}

/// `v^{⊗m}`: the entry at multi-index `j` is `prod_i v[j_i]`.
pub fn tensor_power(v: &[f64], m: usize) -> SymTensor {
    let d = v.len();
    let mut entries = vec![1.0];
    for _ in 0..m {
        let mut next = Vec::with_capacity(entries.len() * d);
        for &e in &entries {
            next.extend(v.iter().map(|&x| e * x));
        }
        entries = next;
    }
    SymTensor {
        order: m,
        dim: d,
        entries,
    }
}

fn check_shape(x: &SymTensor, y: &SymTensor) -> Result<()> {
    if x.order != y.order || x.dim != y.dim || x.entries.len() != y.entries.len() {
        return Err(Error::ShapeMismatch(format!(
            "order/dim ({}, {}) vs ({}, {})",
            x.order, x.dim, y.order, y.dim
        )));
    }
    Ok(())
}

/// Applies `A` along every mode of `y`, returning `A^{⊗m} y`.
fn apply_metric(y: &SymTensor, a: &MetricMatrix) -> Vec<f64> {
    let d = y.dim;
    let mut cur = y.entries.clone();
    let mut next = vec![0.0; cur.len()];
    // Mode `i` has stride d^{m-1-i}.
    for mode in 0..y.order {
        let stride = d.pow((y.order - 1 - mode) as u32);
        let block = stride * d;
        for base in (0..cur.len()).step_by(block) {
            for off in 0..stride {
                for l in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += a.entries[l * d + j] * cur[base + j * stride + off];
                    }
                    next[base + l * stride + off] = s;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// `<x, y>_A`.
pub fn metric_inner(x: &SymTensor, y: &SymTensor, a: &MetricMatrix) -> Result<f64> {
    check_shape(x, y)?;
    if x.order > 0 && a.dim != x.dim {
        return Err(Error::ShapeMismatch(format!(
            "metric dim {} vs tensor dim {}",
            a.dim, x.dim
        )));
    }
    if let Some(c) = a.scalar_factor() {
        let dot: f64 = x.entries.iter().zip(&y.entries).map(|(p, q)| p * q).sum();
        return Ok(c.powi(x.order as i32) * dot);
    }
    let ay = apply_metric(y, a);
    Ok(x.entries.iter().zip(&ay).map(|(p, q)| p * q).sum())
}

/// `|x|_A`; tiny negative radicands from rounding are clamped to zero.
pub fn metric_norm(x: &SymTensor, a: &MetricMatrix) -> Result<f64> {
    let q = metric_inner(x, x, a)?;
    let flat: f64 = x.entries.iter().map(|e| e * e).sum();
    if q < 0.0 {
        if q >= -1e-12 * flat {
            return Ok(0.0);
        }
        return Err(Error::NotPositiveDefinite(format!("negative quadratic form {q}")));
    }
    Ok(q.sqrt())
}

/// Exponent vectors `alpha` with `|alpha| = order`, in a fixed order.
///
/// A symmetric tensor is determined by one coefficient per exponent vector;
/// the coefficient is repeated `multinomial(alpha)` times in the dense layout.
#[derive(Debug, Clone)]
pub struct Compositions {
    pub dim: usize,
    pub order: usize,
    pub exponents: Vec<Vec<u32>>,
    pub multiplicity: Vec<f64>,
}

impl Compositions {
    pub fn new(dim: usize, order: usize) -> Self {
        let mut exponents = Vec::new();
        let mut cur = vec![0u32; dim];
        fill(&mut exponents, &mut cur, 0, order as u32);
        let fact = |k: u32| (1..=k).map(|x| x as f64).product::<f64>();
        let multiplicity = exponents
            .iter()
            .map(|a| fact(order as u32) / a.iter().map(|&x| fact(x)).product::<f64>())
            .collect();
        Self {
            dim,
            order,
            exponents,
            multiplicity,
        }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Index of the exponent vector of a dense multi-index.
    pub fn index_of(&self, multi: &[usize]) -> usize {
        let mut alpha = vec![0u32; self.dim];
        for &j in multi {
            alpha[j] += 1;
        }
        self.exponents
            .iter()
            .position(|a| *a == alpha)
            .expect("exponent vector present")
    }
}

fn fill(out: &mut Vec<Vec<u32>>, cur: &mut [u32], pos: usize, left: u32) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.to_vec());
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        fill(out, cur, pos + 1, left - e);
    }
}

/// Symmetric tensor stored by exponent vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSym {
    pub dim: usize,
    pub order: usize,
    pub coeffs: Vec<f64>,
}

impl PackedSym {
    /// Squared Hilbert-Schmidt norm.
    pub fn frobenius_sq(&self, comp: &Compositions) -> f64 {
        self.coeffs
            .iter()
            .zip(&comp.multiplicity)
            .map(|(c, w)| w * c * c)
            .sum()
    }

    pub fn to_dense(&self, comp: &Compositions) -> SymTensor {
        let d = self.dim;
        let total = d.pow(self.order as u32);
        let mut entries = Vec::with_capacity(total);
        let mut multi = vec![0usize; self.order];
        for flat in 0..total {
            let mut r = flat;
            for slot in multi.iter_mut().rev() {
                *slot = r % d;
                r /= d;
            }
            entries.push(self.coeffs[comp.index_of(&multi)]);
        }
        SymTensor {
            order: self.order,
            dim: d,
            entries,
        }
    }
}
