//! Radius function, the kNN Markov kernel and its jump moments.
//!
//! Row `i` of the kernel holds the `k` cloud points closest to `X_i` under the
//! torus distance, each with probability `1/k`. Ties are broken by distance,
//! then by preferring the point itself, then by ascending index, so every row
//! contains its own point.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::{Compositions, PackedSym, SymTensor};
use crate::torus::{dist_sq_slices, min_image_coord, TorusPoint};
use crate::{Error, Result};

/// Exact moment orders kept by default when `d >= 2`.
pub const DEFAULT_EXACT_ORDER: usize = 8;

/// Sampled vertices `X_1..X_n`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub dim: usize,
    pub coords: Vec<f64>,
    pub seed: Option<u64>,
}

impl PointCloud {
    pub fn new(dim: usize, points: &[TorusPoint], seed: Option<u64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParameter("a cloud needs at least 2 points".into()));
        }
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.dim() != dim {
                return Err(Error::ShapeMismatch(format!("point of dim {} in a {dim}-d cloud", p.dim())));
            }
            coords.extend(p.coords.iter().map(|&c| crate::torus::wrap(c)));
        }
        Ok(Self { dim, coords, seed })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn to_points(&self) -> Vec<TorusPoint> {
        (0..self.len())
            .map(|i| TorusPoint {
                coords: self.point(i).to_vec(),
            })
            .collect()
    }
}

/// Row-stochastic kernel whose row `i` puts mass `1/len_i` on each stored
/// entry (repeated entries accumulate).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseKernel {
    pub n: usize,
    /// Common row length, or 0 when rows differ in length.
    pub k: usize,
    pub offsets: Vec<usize>,
    pub cols: Vec<u32>,
}

impl SparseKernel {
    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let n = rows.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        offsets.push(0);
        for (i, r) in rows.iter().enumerate() {
            if r.is_empty() {
                return Err(Error::InvalidParameter(format!("row {i} is empty")));
            }
            for &j in r {
                if j >= n {
                    return Err(Error::InvalidParameter(format!("row {i} points to {j} >= n")));
                }
                cols.push(j as u32);
            }
            offsets.push(cols.len());
        }
        let k0 = rows.first().map_or(0, |r| r.len());
        let k = if rows.iter().all(|r| r.len() == k0) { k0 } else { 0 };
        Ok(Self { n, k, offsets, cols })
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.cols[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn row_weight(&self, i: usize) -> f64 {
        1.0 / (self.offsets[i + 1] - self.offsets[i]) as f64
    }

    /// Row `i` as `(column, probability)` pairs with repeated columns merged.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, f64)> {
        let mut r: Vec<usize> = self.row(i).iter().map(|&j| j as usize).collect();
        let len = r.len() as f64;
        r.sort_unstable();
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut idx = 0;
        while idx < r.len() {
            let j = r[idx];
            let mut c = 0;
            while idx < r.len() && r[idx] == j {
                c += 1;
                idx += 1;
            }
            out.push((j, c as f64 / len));
        }
        out
    }

    /// Every row has positive length and its rational mass `count / len` sums to 1.
    pub fn is_row_stochastic(&self) -> bool {
        (0..self.n).all(|i| {
            let len = self.offsets[i + 1] - self.offsets[i];
            len > 0 && self.row(i).iter().all(|&j| (j as usize) < self.n)
        }) && self.offsets.len() == self.n + 1
    }

    pub fn has_self_loops(&self) -> bool {
        (0..self.n).all(|i| self.row(i).contains(&(i as u32)))
    }

    /// Writes the text format: `n,k` then one line of neighbour indices per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},{}", self.n, self.k)?;
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|j| j.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty kernel file".into()))??;
        let parts: Vec<&str> = header.trim().split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Parse(format!("bad header {header:?}")));
        }
        let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
        let n = parse(parts[0])?;
        let k = parse(parts[1])?;
        let mut rows = Vec::with_capacity(n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            rows.push(line.split(',').map(parse).collect::<Result<Vec<_>>>()?);
        }
        if rows.len() != n {
            return Err(Error::Parse(format!("{} rows, header says {n}", rows.len())));
        }
        let kern = Self::from_rows(&rows)?;
        if kern.k != k {
            return Err(Error::Parse(format!("row length {} vs header k {k}", kern.k)));
        }
        Ok(kern)
    }
}

/// Packs the ordering key: non-negative floats order like their bit patterns.
#[inline]
fn packed_key(bits: u64, j: usize, i: usize) -> u128 {
    ((bits as u128) << 64) | (((j != i) as u128) << 32) | j as u128
}

fn finish_keys(mut keys: Vec<u128>, k: usize) -> Vec<(f64, usize)> {
    if keys.len() > k {
        keys.select_nth_unstable(k - 1);
        keys.truncate(k);
    }
    keys.sort_unstable();
    keys.into_iter()
        .map(|key| (f64::from_bits((key >> 64) as u64), (key as u32) as usize))
        .collect()
}

fn select_k(cand: Vec<(f64, usize)>, k: usize, i: usize) -> Vec<(f64, usize)> {
    finish_keys(cand.iter().map(|&(d, j)| packed_key(d.to_bits(), j, i)).collect(), k)
}

/// Neighbour list of point `i` by scanning every point.
fn brute_row(cloud: &PointCloud, i: usize, k: usize) -> Vec<(f64, usize)> {
    let n = cloud.len();
    let xi = cloud.point(i);
    let bits: Vec<u64> = (0..n).map(|j| dist_sq_slices(xi, cloud.point(j)).to_bits()).collect();
    let kth = if k == n {
        u64::MAX
    } else {
        let mut scratch = bits.clone();
        *scratch.select_nth_unstable(k - 1).1
    };
    let keys = bits
        .iter()
        .enumerate()
        .filter(|&(_, &b)| b <= kth)
        .map(|(j, &b)| packed_key(b, j, i))
        .collect();
    finish_keys(keys, k)
}

/// Brute-force neighbour lists (squared distance, index) of every point.
pub fn neighbor_search_brute(cloud: &PointCloud, k: usize) -> Vec<Vec<usize>> {
    (0..cloud.len())
        .into_par_iter()
        .map(|i| brute_row(cloud, i, k).into_iter().map(|(_, j)| j).collect())
        .collect()
}

struct BucketGrid {
    dim: usize,
    g: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl BucketGrid {
    fn new(cloud: &PointCloud, g: usize) -> Self {
        let dim = cloud.dim;
        let cells = g.pow(dim as u32);
        let cell_of: Vec<usize> = (0..cloud.len())
            .map(|i| Self::cell_index(cloud.point(i), g))
            .collect();
        let mut count = vec![0usize; cells + 1];
        for &c in &cell_of {
            count[c + 1] += 1;
        }
        for c in 0..cells {
            count[c + 1] += count[c];
        }
        let start = count.clone();
        let mut fill = count;
        let mut items = vec![0; cloud.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        Self { dim, g, start, items }
    }

    fn cell_coord(x: f64, g: usize) -> usize {
        ((x * g as f64) as usize).min(g - 1)
    }

    fn cell_index(x: &[f64], g: usize) -> usize {
        x.iter().fold(0, |acc, &c| acc * g + Self::cell_coord(c, g))
    }

    fn cell(&self, c: &[i64]) -> &[usize] {
        let g = self.g as i64;
        let idx = c.iter().fold(0i64, |acc, &ci| acc * g + ci.rem_euclid(g)) as usize;
        &self.items[self.start[idx]..self.start[idx + 1]]
    }

    /// Calls `visit` on every cell whose Chebyshev offset from `base` is exactly `r`.
    fn shell(&self, base: &[i64], r: i64, visit: &mut dyn FnMut(&[usize])) {
        let d = self.dim;
        let side = 2 * r + 1;
        let total = side.pow(d as u32);
        let mut off = vec![0i64; d];
        let mut c = vec![0i64; d];
        for flat in 0..total {
            let mut rem = flat;
            let mut on_shell = false;
            for o in off.iter_mut() {
                *o = rem % side - r;
                rem /= side;
                on_shell |= o.abs() == r;
            }
            if !on_shell {
                continue;
            }
            for s in 0..d {
                c[s] = base[s] + off[s];
            }
            visit(self.cell(&c));
        }
    }
}

/// Exact k-nearest-neighbour lists, accelerated by a bucket grid.
///
/// Each list is ordered by distance with the tie rule of the module docs and
/// is identical to [`neighbor_search_brute`].
pub fn neighbor_search(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} with n = {n}")));
    }
    let d = cloud.dim;
    let mut g = (3.0 * (n as f64 / k as f64).powf(1.0 / d as f64)).floor() as usize;
    while g > 1 && g.pow(d as u32) > n {
        g -= 1;
    }
    if g < 4 {
        return Ok(neighbor_search_brute(cloud, k));
    }
    let grid = BucketGrid::new(cloud, g);
    let w = 1.0 / g as f64;
    let lists = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = cloud.point(i);
            let base: Vec<i64> = xi.iter().map(|&c| BucketGrid::cell_coord(c, g) as i64).collect();
            let mut cand: Vec<(f64, usize)> = Vec::new();
            let mut r = 0i64;
            loop {
                if 2 * r + 1 >= g as i64 {
                    return brute_row(cloud, i, k);
                }
                grid.shell(&base, r, &mut |items| {
                    for &j in items {
                        cand.push((dist_sq_slices(xi, cloud.point(j)), j));
                    }
                });
                if cand.len() >= k {
                    cand = select_k(cand, k, i);
                    // Every unvisited point is at least r * w away.
                    let reach = r as f64 * w;
                    if cand[k - 1].0 < reach * reach * (1.0 - 1e-9) {
                        return cand;
                    }
                }
                r += 1;
            }
        })
        .map(|c| c.into_iter().map(|(_, j)| j).collect())
        .collect();
    Ok(lists)
}

/// `k`-th smallest torus distance from `x` to the cloud.
pub fn knn_radius(cloud: &PointCloud, x: &TorusPoint, k: usize) -> Result<f64> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} with n = {n}")));
    }
    let mut d: Vec<f64> = (0..n).map(|j| dist_sq_slices(&x.coords, cloud.point(j))).collect();
    d.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(d[k - 1].sqrt())
}

/// The kNN kernel with self-loops.
pub fn build_kernel(cloud: &PointCloud, k: usize) -> Result<SparseKernel> {
    let n = cloud.len();
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} must lie in [2, {n}]")));
    }
    let lists = neighbor_search(cloud, k)?;
    let mut cols = Vec::with_capacity(n * k);
    for l in &lists {
        cols.extend(l.iter().map(|&j| j as u32));
    }
    Ok(SparseKernel {
        n,
        k,
        offsets: (0..=n).map(|i| i * k).collect(),
        cols,
    })
}

/// Jump moments `M_m(X_i) = sum_j K(i, j) (X_j - X_i)^{⊗m}`.
///
/// Orders up to `exact_order` are stored exactly as packed symmetric
/// tensors. For every order up to `m_max` the absolute moments
/// `sum_j K(i, j) |X_j - X_i|^m` are stored as well; they majorize the
/// Hilbert-Schmidt norm of `M_m(X_i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentField {
    pub n: usize,
    pub dim: usize,
    pub m_max: usize,
    pub exact_order: usize,
    /// Realized radius of each row. Minimal-image jumps are only meaningful
    /// while it stays below 1/2; see [`MomentField::check_radius`].
    pub radius: Vec<f64>,
    /// Packed coefficients of orders `1..=exact_order`, point-major.
    packed: Vec<f64>,
    packed_len: usize,
    /// `sum_j K(i, j) (|X_j - X_i| / r_i)^m` for orders `0..=m_max`, point-major.
    abs_scaled: Vec<f64>,
    #[serde(skip)]
    comps: Vec<Compositions>,
}

impl MomentField {
    fn offsets(&self, m: usize) -> (usize, usize) {
        let mut off = 0;
        for o in 1..m {
            off += self.comps[o].len();
        }
        (off, off + self.comps[m].len())
    }

    /// Fails when some realized radius reaches 1/2.
    pub fn check_radius(&self) -> Result<()> {
        match self.radius.iter().position(|&r| r >= 0.5) {
            Some(index) => Err(Error::RadiusTooLarge {
                index,
                radius: self.radius[index],
            }),
            None => Ok(()),
        }
    }

    /// Packed `M_m(X_i)`, or `None` above the exact order.
    pub fn packed(&self, i: usize, m: usize) -> Option<PackedSym> {
        if m == 0 || m > self.exact_order {
            return None;
        }
        let (a, b) = self.offsets(m);
        let base = i * self.packed_len;
        Some(PackedSym {
            dim: self.dim,
            order: m,
            coeffs: self.packed[base + a..base + b].to_vec(),
        })
    }

    /// Dense `M_m(X_i)` (orders up to the dense cap).
    pub fn tensor(&self, i: usize, m: usize) -> Option<SymTensor> {
        if m > crate::tensor::MAX_ORDER {
            return None;
        }
        self.packed(i, m).map(|p| p.to_dense(&self.comps[m]))
    }

    /// Squared Hilbert-Schmidt norm of `M_m(X_i)` for exact orders.
    pub fn frobenius_sq(&self, i: usize, m: usize) -> Option<f64> {
        if m == 0 || m > self.exact_order {
            return None;
        }
        let (a, b) = self.offsets(m);
        let base = i * self.packed_len;
        Some(
            self.packed[base + a..base + b]
                .iter()
                .zip(&self.comps[m].multiplicity)
                .map(|(c, w)| w * c * c)
                .sum(),
        )
    }

    /// `sum_j K(i, j) |X_j - X_i|^m`.
    pub fn abs_moment(&self, i: usize, m: usize) -> f64 {
        self.radius[i].powi(m as i32) * self.abs_scaled[i * (self.m_max + 1) + m]
    }

    /// `ln` of [`MomentField::abs_moment`], free of underflow at high orders.
    pub fn ln_abs_moment(&self, i: usize, m: usize) -> f64 {
        if m == 0 {
            return 0.0;
        }
        let r = self.radius[i];
        if r == 0.0 {
            return f64::NEG_INFINITY;
        }
        m as f64 * r.ln() + self.abs_scaled[i * (self.m_max + 1) + m].ln()
    }

    pub fn compositions(&self, m: usize) -> &Compositions {
        &self.comps[m]
    }

    /// Writes `i,m,entries` rows with the dense tensor entries joined by `;`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["i", "m", "entries"])?;
        let top = self.exact_order.min(crate::tensor::MAX_ORDER);
        for i in 0..self.n {
            for m in 1..=top {
                let t = self.tensor(i, m).expect("exact order");
                let e: Vec<String> = t.entries.iter().map(|x| format!("{x:.17e}")).collect();
                wr.write_record([i.to_string(), m.to_string(), e.join(";")])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn lane_sum(x: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut chunks = x.chunks_exact(4);
    for c in &mut chunks {
        for l in 0..4 {
            lanes[l] += c[l];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + chunks.remainder().iter().sum::<f64>()
}

/// Moments up to `m_max` with the default exact order.
pub fn kernel_moments(kernel: &SparseKernel, cloud: &PointCloud, m_max: usize) -> Result<MomentField> {
    let exact = if cloud.dim == 1 {
        m_max
    } else {
        m_max.min(DEFAULT_EXACT_ORDER)
    };
    kernel_moments_with(kernel, cloud, m_max, exact)
}

/// Moments up to `m_max`, exact through `exact_order`.
pub fn kernel_moments_with(
    kernel: &SparseKernel,
    cloud: &PointCloud,
    m_max: usize,
    exact_order: usize,
) -> Result<MomentField> {
    if m_max < 2 {
        return Err(Error::InvalidParameter(format!("m_max = {m_max} below 2")));
    }
    if kernel.n != cloud.len() {
        return Err(Error::ShapeMismatch(format!("kernel n {} vs cloud n {}", kernel.n, cloud.len())));
    }
    let exact_order = exact_order.min(m_max);
    let d = cloud.dim;
    let comps: Vec<Compositions> = (0..=exact_order.max(2)).map(|m| Compositions::new(d, m)).collect();
    let packed_len: usize = (1..=exact_order).map(|m| comps[m].len()).sum();
    let per_point: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..kernel.n)
        .into_par_iter()
        .map(|i| {
            let xi = cloud.point(i);
            let w = kernel.row_weight(i);
            let mut packed = vec![0.0; packed_len];
            let mut abs = vec![0.0; m_max + 1];
            let mut v = vec![0.0; d];
            let jump = |j: u32, v: &mut [f64]| {
                let xj = cloud.point(j as usize);
                for s in 0..d {
                    v[s] = min_image_coord(xj[s] - xi[s]);
                }
                v.iter().map(|x| x * x).sum::<f64>().sqrt()
            };
            let radius = kernel
                .row(i)
                .iter()
                .map(|&j| jump(j, &mut v))
                .fold(0.0f64, f64::max);
            let inv_r = if radius > 0.0 { 1.0 / radius } else { 0.0 };
            // Column layout: one contiguous array per coordinate power.
            let row = kernel.row(i);
            let len = row.len();
            let mut pw = vec![vec![1.0; len]; d * (exact_order + 1)];
            let mut u = vec![0.0; len];
            for (t, &j) in row.iter().enumerate() {
                u[t] = jump(j, &mut v) * inv_r;
                for s in 0..d {
                    pw[s * (exact_order + 1) + 1][t] = v[s];
                }
            }
            for s in 0..d {
                for e in 2..=exact_order {
                    let (lo, hi) = pw.split_at_mut(s * (exact_order + 1) + e);
                    let prev = &lo[s * (exact_order + 1) + e - 1];
                    let first = &lo[s * (exact_order + 1) + 1];
                    for t in 0..len {
                        hi[0][t] = prev[t] * first[t];
                    }
                }
            }
            let mut p = vec![w; len];
            for a in abs.iter_mut() {
                *a = lane_sum(&p);
                for (x, y) in p.iter_mut().zip(&u) {
                    *x *= y;
                }
            }
            let mut prod = vec![0.0; len];
            let mut off = 0;
            for comp in comps.iter().take(exact_order + 1).skip(1) {
                for (c, alpha) in comp.exponents.iter().enumerate() {
                    prod.copy_from_slice(&pw[alpha[0] as usize]);
                    for s in 1..d {
                        let col = &pw[s * (exact_order + 1) + alpha[s] as usize];
                        for (x, y) in prod.iter_mut().zip(col) {
                            *x *= y;
                        }
                    }
                    packed[off + c] = w * lane_sum(&prod);
                }
                off += comp.len();
            }
            (radius, packed, abs)
        })
        .collect();
    let mut radius = Vec::with_capacity(kernel.n);
    let mut packed = Vec::with_capacity(kernel.n * packed_len);
    let mut abs_scaled = Vec::with_capacity(kernel.n * (m_max + 1));
    for (r, p, a) in per_point {
        radius.push(r);
        packed.extend(p);
        abs_scaled.extend(a);
    }
    Ok(MomentField {
        n: kernel.n,
        dim: d,
        m_max,
        exact_order,
        radius,
        packed,
        packed_len,
        abs_scaled,
        comps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{metric_norm, tensor_power, MetricMatrix};
    use crate::torus::{min_image, sample, DensityModel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud1(xs: &[f64]) -> PointCloud {
        let pts: Vec<TorusPoint> = xs.iter().map(|&x| TorusPoint::new(vec![x])).collect();
        PointCloud::new(1, &pts, None).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, d: usize, n: usize) -> PointCloud {
        let pts: Vec<TorusPoint> = (0..n)
            .map(|_| TorusPoint::new((0..d).map(|_| rng.gen()).collect()))
            .collect();
        PointCloud::new(d, &pts, None).unwrap()
    }

    #[test]
    fn radius_examples() {
        let c = cloud1(&[0.0, 0.1, 0.25, 0.6]);
        let x = TorusPoint::new(vec![0.0]);
        assert!((knn_radius(&c, &x, 2).unwrap() - 0.1).abs() < 1e-15);
        assert!((knn_radius(&c, &x, 3).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(knn_radius(&c, &x, 1).unwrap(), 0.0);
        assert!(knn_radius(&c, &x, 5).is_err());
    }

    #[test]
    fn kernel_examples() {
        let c = cloud1(&[0.0, 0.1, 0.25, 0.6]);
        let k = build_kernel(&c, 2).unwrap();
        assert_eq!(k.row(0), &[0, 1]);
        assert_eq!(k.row(3), &[3, 2]);
        let tie = cloud1(&[0.0, 0.25, 0.75]);
        assert_eq!(build_kernel(&tie, 2).unwrap().row(0), &[0, 1]);
        let full = build_kernel(&c, 4).unwrap();
        for i in 0..4 {
            let mut r = full.row(i).to_vec();
            r.sort();
            assert_eq!(r, vec![0, 1, 2, 3]);
            assert_eq!(full.row_entries(i).len(), 4);
        }
        assert!(build_kernel(&c, 1).is_err());
    }

    #[test]
    fn duplicates_come_first_and_self_is_kept() {
        let c = cloud1(&[0.3, 0.3, 0.3, 0.31, 0.9]);
        let lists = neighbor_search(&c, 3).unwrap();
        assert_eq!(lists[2], vec![2, 0, 1]);
        let k = build_kernel(&c, 2).unwrap();
        assert_eq!(k.row(2), &[2, 0]);
        assert!(k.has_self_loops());
    }

    #[test]
    fn lattice_cloud_has_adjacent_neighbours() {
        let m = 16;
        let pts: Vec<TorusPoint> = (0..m * m)
            .map(|i| TorusPoint::new(vec![(i / m) as f64 / m as f64, (i % m) as f64 / m as f64]))
            .collect();
        let c = PointCloud::new(2, &pts, None).unwrap();
        let lists = neighbor_search(&c, 5).unwrap();
        let p = |i: usize, j: usize| ((i + m) % m) * m + (j + m) % m;
        let mut want = vec![p(5, 5), p(4, 5), p(5, 4), p(5, 6), p(6, 5)];
        let mut got = lists[p(5, 5)].clone();
        want.sort();
        got.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn accelerated_search_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..100 {
            let d = 1 + trial % 3;
            let n = rng.gen_range(2..=64);
            let k = rng.gen_range(1..=n.min(12));
            let c = random_cloud(&mut rng, d, n);
            assert_eq!(neighbor_search(&c, k).unwrap(), neighbor_search_brute(&c, k));
        }
        for (d, n, k) in [(1, 4000, 30), (2, 3000, 40), (2, 2000, 3), (3, 2000, 20)] {
            let c = random_cloud(&mut rng, d, n);
            assert_eq!(neighbor_search(&c, k).unwrap(), neighbor_search_brute(&c, k));
        }
    }

    #[test]
    fn realized_radius_matches_knn_radius() {
        let f = DensityModel::one_mode(2, 0.3).unwrap();
        let pts = sample(&f, 400, 4);
        let c = PointCloud::new(2, &pts, Some(4)).unwrap();
        let k = 20;
        let kern = build_kernel(&c, k).unwrap();
        let mom = kernel_moments(&kern, &c, 6).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let r = knn_radius(&c, p, k).unwrap();
            assert!((mom.radius[i] - r).abs() < 1e-15);
            for m in 1..=6 {
                let norm = mom.frobenius_sq(i, m).unwrap().sqrt();
                assert!(norm <= r.powi(m as i32) * (1.0 + 1e-12));
                assert!(norm <= mom.abs_moment(i, m) * (1.0 + 1e-12));
                assert!((mom.ln_abs_moment(i, m).exp() / mom.abs_moment(i, m) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moment_examples() {
        let c = cloud1(&[0.5, 0.6, 0.4]);
        let kern = SparseKernel::from_rows(&[vec![1, 2], vec![1, 0], vec![2, 0]]).unwrap();
        let mom = kernel_moments(&kern, &c, 4).unwrap();
        assert!(mom.tensor(0, 1).unwrap().entries[0].abs() < 1e-15);
        assert!((mom.tensor(0, 2).unwrap().entries[0] - 0.01).abs() < 1e-15);
        assert!(mom.tensor(0, 3).unwrap().entries[0].abs() < 1e-17);

        let sym = cloud1(&[0.0, 0.2, 0.8]);
        let kern = build_kernel(&sym, 3).unwrap();
        let mom = kernel_moments(&kern, &sym, 3).unwrap();
        assert!(mom.tensor(0, 1).unwrap().entries[0].abs() < 1e-15);

        // The antipode is represented as +1/2, so this row is not centred.
        let quarter = cloud1(&[0.0, 0.25, 0.5, 0.75]);
        let kern = build_kernel(&quarter, 4).unwrap();
        let mom = kernel_moments(&kern, &quarter, 3).unwrap();
        assert!((mom.tensor(0, 1).unwrap().entries[0] - 0.125).abs() < 1e-15);
        assert!(mom.check_radius().is_err());
    }

    #[test]
    fn moments_match_dense_tensor_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_cloud(&mut rng, 2, 300);
        let kern = build_kernel(&c, 25).unwrap();
        let mom = kernel_moments(&kern, &c, 10).unwrap();
        assert_eq!(mom.exact_order, 8);
        let pts = c.to_points();
        for i in [0, 17, 299] {
            for m in 1..=5 {
                let mut acc = vec![0.0; 2usize.pow(m as u32)];
                for &j in kern.row(i) {
                    let v = min_image(&pts[i], &pts[j as usize]);
                    for (a, e) in acc.iter_mut().zip(tensor_power(&v, m).entries) {
                        *a += e / 25.0;
                    }
                }
                let t = mom.tensor(i, m).unwrap();
                for (a, b) in acc.iter().zip(&t.entries) {
                    assert!((a - b).abs() < 1e-15);
                }
                let hs = metric_norm(&t, &MetricMatrix::identity(2)).unwrap();
                assert!((hs * hs - mom.frobenius_sq(i, m).unwrap()).abs() < 1e-14);
            }
        }
        assert!(mom.tensor(0, 9).is_none());
    }

    #[test]
    fn large_radius_is_rejected() {
        let c = cloud1(&[0.0, 0.45, 0.55]);
        let kern = build_kernel(&c, 3).unwrap();
        assert!(kernel_moments(&kern, &c, 2).unwrap().check_radius().is_ok());
        let pts: Vec<TorusPoint> = [[0.0, 0.0], [0.5, 0.5], [0.1, 0.1]]
            .iter()
            .map(|p| TorusPoint::new(p.to_vec()))
            .collect();
        let c2 = PointCloud::new(2, &pts, None).unwrap();
        let kern2 = build_kernel(&c2, 3).unwrap();
        assert!(matches!(
            kernel_moments(&kern2, &c2, 2).unwrap().check_radius(),
            Err(Error::RadiusTooLarge { index: 0, .. })
        ));
    }

    #[test]
    fn kernel_text_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_cloud(&mut rng, 2, 50);
        let kern = build_kernel(&c, 6).unwrap();
        let mut buf = Vec::new();
        kern.write_text(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("50,6\n"));
        assert_eq!(SparseKernel::read_text(&buf[..]).unwrap(), kern);
    }

    #[test]
    fn moments_csv_has_rows() {
        let c = cloud1(&[0.1, 0.2, 0.3]);
        let kern = build_kernel(&c, 2).unwrap();
        let mom = kernel_moments(&kern, &c, 3).unwrap();
        let mut buf = Vec::new();
        mom.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 3);
    }

    proptest! {
        #[test]
        fn kernels_are_row_stochastic(seed in 0u64..1000, n in 3usize..80, kf in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 1 + (seed % 2) as usize;
            let c = random_cloud(&mut rng, d, n);
            let k = 2 + ((n - 2) as f64 * kf) as usize;
            let kern = build_kernel(&c, k).unwrap();
            prop_assert!(kern.is_row_stochastic());
            prop_assert!(kern.has_self_loops());
            for i in 0..n {
                prop_assert_eq!(kern.row(i).len(), k);
                let counts: usize = kern.row_entries(i).iter().map(|e| (e.1 * k as f64).round() as usize).sum();
                prop_assert_eq!(counts, k);
                let total: f64 = kern.row_entries(i).iter().map(|e| e.1).sum();
                prop_assert!((total - 1.0).abs() < 1e-14);
            }
        }
    }
}
