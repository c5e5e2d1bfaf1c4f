//! Shortest paths for the conformal metric `d_a` with line element
//! `sqrt(2) f^{1/d} |dx|`.
//!
//! Paths run over a periodic lattice with spacing `h = 1/res` (linear in 1-D,
//! 8-connected in 2-D). An endpoint joins the lattice through straight
//! connectors to every node within Chebyshev distance [`CONNECTOR_RADIUS`],
//! and two endpoints that close are also joined directly. Segment lengths are
//! integrals of the conformal factor by Gauss-Legendre quadrature, so a lattice
//! edge of a coarse grid has the same length as the two collinear edges that
//! replace it after refinement; the connector set is fixed in absolute units,
//! so refining never removes a path.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::numeric::gauss_legendre_unit;
use crate::torus::{min_image_coord, DensityModel, TorusPoint};
use crate::{Error, Result};

/// Absolute Chebyshev radius of the endpoint connectors.
pub const CONNECTOR_RADIUS: f64 = 1.0 / 16.0;

const QUAD_POINTS: usize = 12;

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lattice discretization of the conformal metric of a density.
pub struct GeodesicGrid {
    f: DensityModel,
    dim: usize,
    res: usize,
    h: f64,
    /// Lattice steps; each node stores the length of the edge in each direction.
    dirs: Vec<[i64; 2]>,
    edges: Vec<f64>,
    quad: (Vec<f64>, Vec<f64>),
}

impl GeodesicGrid {
    pub fn new(f: &DensityModel, res: usize) -> Result<Self> {
        if f.dim > 2 {
            return Err(Error::UnsupportedDimension(f.dim));
        }
        if res < 32 {
            return Err(Error::InvalidParameter(format!("grid_res {res} below 32")));
        }
        let dirs: Vec<[i64; 2]> = if f.dim == 1 {
            vec![[1, 0]]
        } else {
            vec![[1, 0], [0, 1], [1, 1], [1, -1]]
        };
        let mut g = Self {
            f: f.clone(),
            dim: f.dim,
            res,
            h: 1.0 / res as f64,
            dirs,
            edges: Vec::new(),
            quad: gauss_legendre_unit(QUAD_POINTS),
        };
        let n = g.node_count();
        let nd = g.dirs.len();
        let mut edges = vec![0.0; n * nd];
        for node in 0..n {
            let p = g.node_pos(node);
            for (k, dir) in g.dirs.iter().enumerate() {
                let v: Vec<f64> = (0..g.dim).map(|i| dir[i] as f64 * g.h).collect();
                edges[node * nd + k] = g.segment(&p, &v);
            }
        }
        g.edges = edges;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.res.pow(self.dim as u32)
    }

    fn node_pos(&self, node: usize) -> Vec<f64> {
        if self.dim == 1 {
            vec![node as f64 * self.h]
        } else {
            vec![(node / self.res) as f64 * self.h, (node % self.res) as f64 * self.h]
        }
    }

    fn node_at(&self, c: &[i64]) -> usize {
        let r = self.res as i64;
        if self.dim == 1 {
            c[0].rem_euclid(r) as usize
        } else {
            (c[0].rem_euclid(r) * r + c[1].rem_euclid(r)) as usize
        }
    }

    fn node_coords(&self, node: usize) -> [i64; 2] {
        if self.dim == 1 {
            [node as i64, 0]
        } else {
            [(node / self.res) as i64, (node % self.res) as i64]
        }
    }

    /// Length of the straight segment `p -> p + v`.
    fn segment(&self, p: &[f64], v: &[f64]) -> f64 {
        let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            return 0.0;
        }
        let (ts, ws) = &self.quad;
        let inv_d = 1.0 / self.dim as f64;
        let mut x = vec![0.0; self.dim];
        let mut acc = 0.0;
        for (t, w) in ts.iter().zip(ws) {
            for i in 0..self.dim {
                x[i] = p[i] + t * v[i];
            }
            acc += w * self.f.value(&x).powf(inv_d);
        }
        std::f64::consts::SQRT_2 * acc * len
    }

    /// Nodes within the connector radius of `x`, with connector lengths.
    fn connectors(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let r = CONNECTOR_RADIUS;
        let ranges: Vec<(i64, i64)> = x
            .iter()
            .map(|&xi| (((xi - r) / self.h).floor() as i64, ((xi + r) / self.h).ceil() as i64))
            .collect();
        let mut out = Vec::new();
        let mut push = |c: &[i64]| {
            let v: Vec<f64> = c
                .iter()
                .zip(x)
                .map(|(&ci, &xi)| min_image_coord(ci as f64 * self.h - xi))
                .collect();
            if v.iter().all(|vi| vi.abs() <= r) {
                out.push((self.node_at(c), self.segment(x, &v)));
            }
        };
        if self.dim == 1 {
            for c in ranges[0].0..=ranges[0].1 {
                push(&[c]);
            }
        } else {
            for c0 in ranges[0].0..=ranges[0].1 {
                for c1 in ranges[1].0..=ranges[1].1 {
                    push(&[c0, c1]);
                }
            }
        }
        out
    }

    /// Lattice distances from the endpoint `x` to every node.
    pub fn distances_from(&self, x: &TorusPoint) -> Vec<f64> {
        let n = self.node_count();
        let nd = self.dirs.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap = BinaryHeap::new();
        for (node, len) in self.connectors(&x.coords) {
            if len < dist[node] {
                dist[node] = len;
                heap.push(HeapItem(len, node));
            }
        }
        while let Some(HeapItem(du, u)) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            let cu = self.node_coords(u);
            for (k, dir) in self.dirs.iter().enumerate() {
                let fwd = self.node_at(&[cu[0] + dir[0], cu[1] + dir[1]]);
                let back = self.node_at(&[cu[0] - dir[0], cu[1] - dir[1]]);
                let cand = [(fwd, self.edges[u * nd + k]), (back, self.edges[back * nd + k])];
                for (v, w) in cand {
                    let nv = du + w;
                    if nv < dist[v] {
                        dist[v] = nv;
                        heap.push(HeapItem(nv, v));
                    }
                }
            }
        }
        dist
    }

    fn finish(&self, dist: &[f64], x: &TorusPoint, y: &TorusPoint, conn_y: &[(usize, f64)]) -> f64 {
        let mut best = conn_y
            .iter()
            .map(|&(node, len)| dist[node] + len)
            .fold(f64::INFINITY, f64::min);
        let v: Vec<f64> = x
            .coords
            .iter()
            .zip(&y.coords)
            .map(|(a, b)| min_image_coord(b - a))
            .collect();
        if v.iter().all(|vi| vi.abs() <= CONNECTOR_RADIUS) {
            best = best.min(self.segment(&x.coords, &v));
        }
        best
    }

    pub fn distance(&self, x: &TorusPoint, y: &TorusPoint) -> f64 {
        let dist = self.distances_from(x);
        self.finish(&dist, x, y, &self.connectors(&y.coords))
    }

    /// Row-major `|a| x |b|` matrix of geodesic distances.
    pub fn all_pairs(&self, a: &[TorusPoint], b: &[TorusPoint]) -> Vec<f64> {
        let conn: Vec<Vec<(usize, f64)>> = b.iter().map(|y| self.connectors(&y.coords)).collect();
        a.par_iter()
            .map(|x| {
                let dist = self.distances_from(x);
                b.iter()
                    .zip(&conn)
                    .map(|(y, cy)| self.finish(&dist, x, y, cy))
                    .collect::<Vec<f64>>()
            })
            .collect::<Vec<_>>()
            .concat()
    }
}

/// Upper approximation of the conformal distance between `x` and `y`.
pub fn conformal_geodesic(
    f: &DensityModel,
    x: &TorusPoint,
    y: &TorusPoint,
    grid_res: usize,
) -> Result<f64> {
    Ok(GeodesicGrid::new(f, grid_res)?.distance(x, y))
}
