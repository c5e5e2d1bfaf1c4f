//! Invariant measures of sparse Markov kernels.
//!
//! Uniqueness is diagnosed first: the support digraph is condensed into
//! strongly connected components and the invariant probability is unique iff
//! exactly one component is closed. The fixed point is then found by power
//! iteration from the uniform vector.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::knn::SparseKernel;
use crate::numeric::{compensated_sum, KahanSum};
use crate::{Error, Result, SCHEMA_VERSION};

/// Strongly connected components of the kernel's support digraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommClassReport {
    /// Components in reverse topological order of the condensation.
    pub components: Vec<Vec<usize>>,
    pub component_of: Vec<usize>,
    /// `is_closed[c]` iff no edge leaves component `c`.
    pub is_closed: Vec<bool>,
}

impl CommClassReport {
    pub fn closed_classes(&self) -> Vec<&[usize]> {
        self.components
            .iter()
            .zip(&self.is_closed)
            .filter(|(_, &c)| c)
            .map(|(v, _)| v.as_slice())
            .collect()
    }

    /// Nodes outside every closed class.
    pub fn transient(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self
            .components
            .iter()
            .zip(&self.is_closed)
            .filter(|(_, &c)| !c)
            .flat_map(|(v, _)| v.iter().copied())
            .collect();
        t.sort_unstable();
        t
    }
}

/// Iterative Tarjan condensation.
pub fn communicating_classes(kernel: &SparseKernel) -> CommClassReport {
    let n = kernel.n;
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut component_of = vec![UNSEEN; n];
    let mut components: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0;
    // (node, next edge position)
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        call.push((root, 0));
        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if *pos == 0 && index[v] == UNSEEN {
                index[v] = counter;
                low[v] = counter;
                counter += 1;
                stack.push(v);
                on_stack[v] = true;
            }
            let row = kernel.row(v);
            if *pos < row.len() {
                let w = row[*pos] as usize;
                *pos += 1;
                if index[w] == UNSEEN {
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    component_of[w] = components.len();
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                components.push(comp);
            }
        }
    }
    let is_closed = components
        .iter()
        .enumerate()
        .map(|(c, nodes)| {
            nodes
                .iter()
                .all(|&v| kernel.row(v).iter().all(|&w| component_of[w as usize] == c))
        })
        .collect();
    CommClassReport {
        components,
        component_of,
        is_closed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Power,
    LazyPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDistribution {
    pub probabilities: Vec<f64>,
    /// `|pi K - pi|_1` under the original kernel.
    pub residual: f64,
    pub iterations: usize,
    pub method: Method,
}

impl StationaryDistribution {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "probability"])?;
        for (i, p) in self.probabilities.iter().enumerate() {
            wr.write_record([i.to_string(), format!("{p:.17e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": SCHEMA_VERSION,
            "n": self.probabilities.len(),
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
        })
    }
}

/// Default iteration cap `max(10 n ln n, 1000)`.
pub fn default_max_iter(n: usize) -> usize {
    ((10.0 * n as f64 * (n as f64).ln()).ceil() as usize).max(1000)
}

/// Column view of the kernel: for each target, its sources and weights in
/// ascending source order.
struct InEdges {
    offsets: Vec<usize>,
    src: Vec<u32>,
    row_weight: Vec<f64>,
}

impl InEdges {
    fn new(kernel: &SparseKernel) -> Self {
        let n = kernel.n;
        let mut count = vec![0usize; n + 1];
        for &j in &kernel.cols {
            count[j as usize + 1] += 1;
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let offsets = count.clone();
        let mut fill = count;
        let mut src = vec![0; kernel.cols.len()];
        for i in 0..n {
            for &j in kernel.row(i) {
                src[fill[j as usize]] = i as u32;
                fill[j as usize] += 1;
            }
        }
        Self {
            offsets,
            src,
            row_weight: (0..n).map(|i| kernel.row_weight(i)).collect(),
        }
    }

    fn scaled(&self, pi: &[f64]) -> Vec<f64> {
        pi.iter().zip(&self.row_weight).map(|(p, w)| p * w).collect()
    }

    /// `(pi K)_j` for every `j`, each by compensated summation.
    fn apply(&self, pi: &[f64], out: &mut [f64]) {
        let q = self.scaled(pi);
        out.par_iter_mut().enumerate().for_each(|(j, o)| {
            let mut acc = KahanSum::default();
            for &i in &self.src[self.offsets[j]..self.offsets[j + 1]] {
                acc.add(q[i as usize]);
            }
            *o = acc.value();
        });
    }

    /// As [`InEdges::apply`] with plain four-lane accumulation.
    fn apply_fast(&self, pi: &[f64], out: &mut [f64]) {
        let q = self.scaled(pi);
        out.par_iter_mut().enumerate().for_each(|(j, o)| {
            let src = &self.src[self.offsets[j]..self.offsets[j + 1]];
            let mut lanes = [0.0f64; 4];
            let mut chunks = src.chunks_exact(4);
            for c in &mut chunks {
                for l in 0..4 {
                    lanes[l] += q[c[l] as usize];
                }
            }
            let tail: f64 = chunks.remainder().iter().map(|&i| q[i as usize]).sum();
            *o = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail;
        });
    }
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    compensated_sum(a.iter().zip(b).map(|(x, y)| (x - y).abs()))
}

/// `|pi K - pi|_1`.
pub fn invariance_residual(pi: &[f64], kernel: &SparseKernel) -> f64 {
    let cols = InEdges::new(kernel);
    let mut y = vec![0.0; kernel.n];
    cols.apply(pi, &mut y);
    l1_diff(&y, pi)
}

/// Left fixed point of `kernel` by power iteration.
///
/// Kernels lacking a self-loop on some row are iterated through the lazy
/// kernel `(K + I)/2`, which has the same fixed points.
pub fn stationary_distribution(
    kernel: &SparseKernel,
    tol: f64,
    max_iter: usize,
) -> Result<StationaryDistribution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol = {tol}")));
    }
    let classes = communicating_classes(kernel);
    let closed = classes.closed_classes().len();
    if closed != 1 {
        return Err(Error::MultipleClosedClasses(closed));
    }
    let n = kernel.n;
    let method = if kernel.has_self_loops() {
        Method::Power
    } else {
        Method::LazyPower
    };
    let cols = InEdges::new(kernel);
    let mut pi = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    let mut residual = f64::INFINITY;
    // Iterate with the fast product; confirm with the compensated one.
    for it in 0..=max_iter {
        cols.apply_fast(&pi, &mut y);
        residual = l1_diff(&y, &pi);
        if residual <= 0.5 * tol || it == max_iter {
            cols.apply(&pi, &mut y);
            residual = l1_diff(&y, &pi);
            if residual <= tol {
                return Ok(StationaryDistribution {
                    probabilities: pi,
                    residual,
                    iterations: it,
                    method,
                });
            }
        }
        if it == max_iter {
            break;
        }
        if method == Method::LazyPower {
            for (p, q) in pi.iter_mut().zip(&y) {
                *p = 0.5 * (*p + q);
            }
        } else {
            pi.copy_from_slice(&y);
        }
        let total = compensated_sum(pi.iter().copied());
        pi.iter_mut().for_each(|p| *p /= total);
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual,
    })
}

/// Dense LU solve of `(K^T - I) pi = 0`, `sum pi = 1`, for small kernels.
pub fn direct_solve(kernel: &SparseKernel) -> Result<Vec<f64>> {
    let n = kernel.n;
    if n > 4096 {
        return Err(Error::SizeLimit { pairs: n * n, limit: 4096 * 4096 });
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let w = kernel.row_weight(i);
        for &j in kernel.row(i) {
            a[(j as usize, i)] += w;
        }
        a[(i, i)] -= 1.0;
    }
    for i in 0..n {
        a[(n - 1, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotConverged("singular system".into()))?;
    Ok(sol.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::{build_kernel, PointCloud};
    use crate::torus::TorusPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kern(rows: &[&[usize]]) -> SparseKernel {
        SparseKernel::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn class_examples() {
        let cyc = communicating_classes(&kern(&[&[1], &[2], &[0]]));
        assert_eq!(cyc.components.len(), 1);
        assert_eq!(cyc.is_closed, vec![true]);

        let two = communicating_classes(&kern(&[&[0], &[0, 1]]));
        assert_eq!(two.closed_classes(), vec![&[0usize][..]]);
        assert_eq!(two.transient(), vec![1]);

        let disjoint = communicating_classes(&kern(&[&[1], &[0], &[3], &[2]]));
        assert_eq!(disjoint.closed_classes().len(), 2);
    }

    #[test]
    fn classes_partition_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(1..40);
            let rows: Vec<Vec<usize>> = (0..n)
                .map(|_| (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..n)).collect())
                .collect();
            let k = SparseKernel::from_rows(&rows).unwrap();
            let rep = communicating_classes(&k);
            let mut all: Vec<usize> = rep.components.concat();
            all.sort();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(!rep.closed_classes().is_empty());
            // Reachability oracle: i and j share a component iff each reaches the other.
            let reach = |s: usize| {
                let mut seen = vec![false; n];
                let mut st = vec![s];
                seen[s] = true;
                while let Some(v) = st.pop() {
                    for &w in k.row(v) {
                        if !seen[w as usize] {
                            seen[w as usize] = true;
                            st.push(w as usize);
                        }
                    }
                }
                seen
            };
            let r: Vec<Vec<bool>> = (0..n).map(reach).collect();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(rep.component_of[i] == rep.component_of[j], r[i][j] && r[j][i]);
                }
            }
        }
    }

    #[test]
    fn stationary_examples() {
        let ds = stationary_distribution(&kern(&[&[0, 1], &[1, 2], &[2, 0]]), 1e-12, 1000).unwrap();
        for p in &ds.probabilities {
            assert!((p - 1.0 / 3.0).abs() < 1e-14);
        }
        let two = stationary_distribution(&kern(&[&[0], &[0, 1]]), 1e-12, 1000).unwrap();
        assert!((two.probabilities[0] - 1.0).abs() < 1e-12);
        assert!(two.probabilities[1] < 1e-12);

        let dsk = kern(&[&[1, 2], &[2, 0], &[0, 1]]);
        let p = stationary_distribution(&dsk, 1e-12, 1000).unwrap();
        assert_eq!(p.method, Method::LazyPower);
        assert!(p.probabilities.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-13));
    }

    #[test]
    fn periodic_chain_uses_lazy_kernel() {
        let cyc = kern(&[&[1], &[2], &[3], &[0, 1]]);
        let p = stationary_distribution(&cyc, 1e-12, 100_000).unwrap();
        assert_eq!(p.method, Method::LazyPower);
        assert!(invariance_residual(&p.probabilities, &cyc) <= 1e-12);
        let d = direct_solve(&cyc).unwrap();
        assert!(l1_diff(&d, &p.probabilities) < 1e-10);
    }

    #[test]
    fn non_unique_is_an_error() {
        let err = stationary_distribution(&kern(&[&[1], &[0], &[3], &[2]]), 1e-12, 100);
        assert!(matches!(err, Err(Error::MultipleClosedClasses(2))));
        let slow = kern(&[&[0, 1], &[1, 0]]);
        assert!(stationary_distribution(&slow, 1e-12, 1000).is_ok());
        let cap = stationary_distribution(&kern(&[&[1], &[2], &[0, 0, 0, 0, 0, 0, 0, 1]]), 1e-14, 3);
        assert!(matches!(cap, Err(Error::MaxIterExceeded { iterations: 3, .. })));
    }

    #[test]
    fn residual_examples() {
        let k = kern(&[&[0], &[0, 1]]);
        assert!(invariance_residual(&[1.0, 0.0], &k) <= 1e-14);
        assert!(invariance_residual(&[0.5, 0.5], &k) > 0.0);
        let eps = 1e-6;
        let r = invariance_residual(&[1.0 - eps, eps], &k);
        // pi K = (1 - eps/2, eps/2): residual = eps exactly.
        assert!((r - eps).abs() < 1e-15);
        let r2 = invariance_residual(&[1.0 - 2.0 * eps, 2.0 * eps], &k);
        assert!((r2 / r - 2.0).abs() < 1e-9);
    }

    #[test]
    fn power_matches_direct_on_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in [1, 2] {
            let pts: Vec<TorusPoint> = (0..300)
                .map(|_| TorusPoint::new((0..d).map(|_| rng.gen()).collect()))
                .collect();
            let c = PointCloud::new(d, &pts, None).unwrap();
            let k = build_kernel(&c, 20).unwrap();
            let p = stationary_distribution(&k, 1e-12, default_max_iter(300)).unwrap();
            assert!(p.residual <= 1e-12);
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(p.probabilities.iter().all(|&x| x >= 0.0));
            let direct = direct_solve(&k).unwrap();
            assert!(l1_diff(&direct, &p.probabilities) < 1e-8);
        }
    }

    #[test]
    fn csv_and_json() {
        let p = stationary_distribution(&kern(&[&[0, 1], &[1, 0]]), 1e-12, 100).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("index,probability\n0,"));
        assert_eq!(p.report_json()["schema"], 1);
    }
}
