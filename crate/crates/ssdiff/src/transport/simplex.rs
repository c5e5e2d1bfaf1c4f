//! Primal network simplex for the uncapacitated transportation problem.
//!
//! Arc costs are never stored: the solver only keeps a spanning tree
//! (parent/thread/successor arrays) together with node potentials, and
//! prices arcs on demand through the cost callback. Non-tree arcs always
//! carry zero flow, so flows are stored per tree node.

use crate::{Error, Result};

const NONE: usize = usize::MAX;

pub(crate) struct Solution {
    /// `(source, sink, mass)` for every positive flow.
    pub flows: Vec<(usize, usize, f64)>,
    pub cost: f64,
}

struct Cursor {
    e: usize,
    i: usize,
    j: usize,
}

struct Simplex<'c, C> {
    n: usize,
    m: usize,
    cost: &'c C,
    art_cost: f64,
    eps: f64,
    root: usize,
    real_arcs: usize,
    total_arcs: usize,
    block: usize,
    cursor: Cursor,

    parent: Vec<usize>,
    pred: Vec<usize>,
    /// True when the tree arc of a node points from the node to its parent.
    up: Vec<bool>,
    flow: Vec<f64>,
    thread: Vec<usize>,
    rev_thread: Vec<usize>,
    succ_num: Vec<usize>,
    last_succ: Vec<usize>,
    pi: Vec<f64>,
    dirty_revs: Vec<usize>,

    in_arc: usize,
    join: usize,
    u_in: usize,
    v_in: usize,
    u_out: usize,
    delta: f64,
}

impl<'c, C: Fn(usize, usize) -> f64> Simplex<'c, C> {
    fn ends(&self, e: usize) -> (usize, usize) {
        if e < self.real_arcs {
            (e / self.m, self.n + e % self.m)
        } else {
            let u = e - self.real_arcs;
            if u < self.n {
                (u, self.root)
            } else {
                (self.root, u)
            }
        }
    }

    fn arc_cost(&self, e: usize) -> f64 {
        if e < self.real_arcs {
            (self.cost)(e / self.m, e % self.m)
        } else {
            self.art_cost
        }
    }

    fn advance(&self, c: &mut Cursor) {
        c.e += 1;
        if c.e == self.total_arcs {
            *c = Cursor { e: 0, i: 0, j: 0 };
        } else if c.e < self.real_arcs {
            c.j += 1;
            if c.j == self.m {
                c.j = 0;
                c.i += 1;
            }
        }
    }

    fn reduced(&self, c: &Cursor) -> f64 {
        if c.e < self.real_arcs {
            (self.cost)(c.i, c.j) + self.pi[c.i] - self.pi[self.n + c.j]
        } else {
            let (s, t) = self.ends(c.e);
            self.art_cost + self.pi[s] - self.pi[t]
        }
    }

    /// Block search pricing.
    fn find_entering(&mut self) -> bool {
        let mut cur = Cursor {
            e: self.cursor.e,
            i: self.cursor.i,
            j: self.cursor.j,
        };
        let mut best = NONE;
        let mut min = -self.eps;
        let mut cnt = self.block;
        for _ in 0..self.total_arcs {
            let rc = self.reduced(&cur);
            if rc < min {
                min = rc;
                best = cur.e;
            }
            self.advance(&mut cur);
            cnt -= 1;
            if cnt == 0 {
                if best != NONE {
                    break;
                }
                cnt = self.block;
            }
        }
        self.cursor = cur;
        if best == NONE {
            return false;
        }
        self.in_arc = best;
        true
    }

    fn find_join(&mut self) {
        let (mut u, mut v) = self.ends(self.in_arc);
        while u != v {
            if self.succ_num[u] < self.succ_num[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        self.join = u;
    }

    fn find_leaving(&mut self) {
        let (first, second) = self.ends(self.in_arc);
        let mut delta = f64::INFINITY;
        let mut result = 0;
        let mut u = first;
        while u != self.join {
            if self.up[u] && self.flow[u] < delta {
                delta = self.flow[u];
                self.u_out = u;
                result = 1;
            }
            u = self.parent[u];
        }
        u = second;
        while u != self.join {
            if !self.up[u] && self.flow[u] <= delta {
                delta = self.flow[u];
                self.u_out = u;
                result = 2;
            }
            u = self.parent[u];
        }
        debug_assert!(result != 0);
        if result == 1 {
            self.u_in = first;
            self.v_in = second;
        } else {
            self.u_in = second;
            self.v_in = first;
        }
        self.delta = delta;
    }

    fn change_flow(&mut self) {
        let val = self.delta;
        if val > 0.0 {
            let (s, t) = self.ends(self.in_arc);
            let mut u = s;
            while u != self.join {
                if self.up[u] {
                    self.flow[u] -= val;
                } else {
                    self.flow[u] += val;
                }
                u = self.parent[u];
            }
            u = t;
            while u != self.join {
                if self.up[u] {
                    self.flow[u] += val;
                } else {
                    self.flow[u] -= val;
                }
                u = self.parent[u];
            }
        }
    }

    fn update_tree(&mut self) {
        let (u_in, v_in, u_out, join) = (self.u_in, self.v_in, self.u_out, self.join);
        let in_src = self.ends(self.in_arc).0;
        let old_rev_thread = self.rev_thread[u_out];
        let old_succ_num = self.succ_num[u_out];
        let old_last_succ = self.last_succ[u_out];
        let v_out = self.parent[u_out];

        if u_in == u_out {
            self.parent[u_in] = v_in;
            self.pred[u_in] = self.in_arc;
            self.up[u_in] = u_in == in_src;
            self.flow[u_in] = self.delta;
            if self.thread[v_in] != u_out {
                let mut after = self.thread[old_last_succ];
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
                after = self.thread[v_in];
                self.thread[v_in] = u_out;
                self.rev_thread[u_out] = v_in;
                self.thread[old_last_succ] = after;
                self.rev_thread[after] = old_last_succ;
            }
        } else {
            let thread_continue = if old_rev_thread == v_in {
                self.thread[old_last_succ]
            } else {
                self.thread[v_in]
            };
            let mut stem = u_in;
            let mut par_stem = v_in;
            let mut last = self.last_succ[u_in];
            let mut after = self.thread[last];
            self.thread[v_in] = u_in;
            self.dirty_revs.clear();
            self.dirty_revs.push(v_in);
            while stem != u_out {
                let next_stem = self.parent[stem];
                self.thread[last] = next_stem;
                self.dirty_revs.push(last);

                let before = self.rev_thread[stem];
                self.thread[before] = after;
                self.rev_thread[after] = before;

                self.parent[stem] = par_stem;
                par_stem = stem;
                stem = next_stem;

                last = if self.last_succ[stem] == self.last_succ[par_stem] {
                    self.rev_thread[par_stem]
                } else {
                    self.last_succ[stem]
                };
                after = self.thread[last];
            }
            self.parent[u_out] = par_stem;
            self.thread[last] = thread_continue;
            self.rev_thread[thread_continue] = last;
            self.last_succ[u_out] = last;

            if old_rev_thread != v_in {
                self.thread[old_rev_thread] = after;
                self.rev_thread[after] = old_rev_thread;
            }
            for k in 0..self.dirty_revs.len() {
                let u = self.dirty_revs[k];
                let t = self.thread[u];
                self.rev_thread[t] = u;
            }

            let mut tmp_sc = 0usize;
            let tmp_ls = self.last_succ[u_out];
            let mut u = u_out;
            while u != u_in {
                let p = self.parent[u];
                self.pred[u] = self.pred[p];
                self.up[u] = !self.up[p];
                self.flow[u] = self.flow[p];
                tmp_sc = tmp_sc + self.succ_num[u] - self.succ_num[p];
                self.succ_num[u] = tmp_sc;
                self.last_succ[p] = tmp_ls;
                u = p;
            }
            self.pred[u_in] = self.in_arc;
            self.up[u_in] = u_in == in_src;
            self.flow[u_in] = self.delta;
            self.succ_num[u_in] = old_succ_num;
        }

        let up_limit_out = if self.last_succ[join] == v_in { join } else { NONE };
        let last_succ_out = self.last_succ[u_out];
        let mut u = v_in;
        while u != NONE && self.last_succ[u] == v_in {
            self.last_succ[u] = last_succ_out;
            u = self.parent[u];
        }
        if join != old_rev_thread && v_in != old_rev_thread {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = old_rev_thread;
                u = self.parent[u];
            }
        } else if last_succ_out != old_last_succ {
            let mut u = v_out;
            while u != up_limit_out && self.last_succ[u] == old_last_succ {
                self.last_succ[u] = last_succ_out;
                u = self.parent[u];
            }
        }
        let mut u = v_in;
        while u != join {
            self.succ_num[u] += old_succ_num;
            u = self.parent[u];
        }
        let mut u = v_out;
        while u != join {
            self.succ_num[u] -= old_succ_num;
            u = self.parent[u];
        }
    }

    fn update_potential(&mut self) {
        let c = self.arc_cost(self.in_arc);
        let u_in = self.u_in;
        let sigma = if self.up[u_in] {
            self.pi[self.v_in] - self.pi[u_in] - c
        } else {
            self.pi[self.v_in] - self.pi[u_in] + c
        };
        let end = self.thread[self.last_succ[u_in]];
        let mut u = u_in;
        while u != end {
            self.pi[u] += sigma;
            u = self.thread[u];
        }
    }
}

/// Solves `min sum c_ij x_ij` subject to row sums `supply` and column sums
/// `demand`, both non-negative with equal totals.
pub(crate) fn solve<C: Fn(usize, usize) -> f64>(
    supply: &[f64],
    demand: &[f64],
    cost: &C,
    max_cost: f64,
) -> Result<Solution> {
    let (n, m) = (supply.len(), demand.len());
    let nodes = n + m;
    let root = nodes;
    let real_arcs = n * m;
    let total_arcs = real_arcs + nodes;
    let art_cost = (max_cost.max(0.0) + 1.0) * nodes as f64;
    let block = ((total_arcs as f64).sqrt() as usize).max(10);

    let mut s = Simplex {
        n,
        m,
        cost,
        art_cost,
        eps: 8.0 * f64::EPSILON * (art_cost + max_cost),
        root,
        real_arcs,
        total_arcs,
        block,
        cursor: Cursor { e: 0, i: 0, j: 0 },
        parent: vec![root; nodes + 1],
        pred: (0..=nodes).map(|u| real_arcs + u).collect(),
        up: (0..=nodes).map(|u| u < n).collect(),
        flow: supply.iter().chain(demand).cloned().chain([0.0]).collect(),
        thread: (1..=nodes + 1).map(|u| u % (nodes + 1)).collect(),
        rev_thread: (0..=nodes).map(|u| (u + nodes) % (nodes + 1)).collect(),
        succ_num: vec![1; nodes + 1],
        last_succ: (0..=nodes).collect(),
        pi: (0..=nodes)
            .map(|u| if u < n { -art_cost } else if u < nodes { art_cost } else { 0.0 })
            .collect(),
        dirty_revs: Vec::new(),
        in_arc: 0,
        join: 0,
        u_in: 0,
        v_in: 0,
        u_out: 0,
        delta: 0.0,
    };
    s.parent[root] = NONE;
    s.pred[root] = NONE;
    s.succ_num[root] = nodes + 1;
    s.last_succ[root] = if nodes == 0 { root } else { nodes - 1 };

    let cap = 1000 + 200 * nodes * nodes.max(16).ilog2() as usize;
    let mut pivots = 0;
    while s.find_entering() {
        s.find_join();
        s.find_leaving();
        s.change_flow();
        s.update_tree();
        s.update_potential();
        pivots += 1;
        if pivots > cap {
            return Err(Error::NotConverged(format!(
                "network simplex exceeded {cap} pivots"
            )));
        }
    }

    // Recompute tree flows from the node balances so marginals are exact
    // up to rounding in the subtree sums.
    let mut net: Vec<f64> = supply.iter().cloned().chain(demand.iter().map(|b| -b)).chain([0.0]).collect();
    let mut order = Vec::with_capacity(nodes);
    let mut u = s.thread[root];
    while u != root {
        order.push(u);
        u = s.thread[u];
    }
    let mut flows = Vec::new();
    let mut total = 0.0;
    let mut art_flow = 0.0f64;
    for &u in order.iter().rev() {
        let x = net[u];
        let p = s.parent[u];
        net[p] += x;
        let f = if s.up[u] { x } else { -x };
        let e = s.pred[u];
        if e < real_arcs {
            if f > 0.0 {
                let (i, j) = (e / m, e % m);
                total += f * cost(i, j);
                flows.push((i, j, f));
            }
        } else {
            art_flow = art_flow.max(f.abs());
        }
    }
    let scale = supply.iter().sum::<f64>().max(1.0);
    if art_flow > 1e-9 * scale {
        return Err(Error::NotConverged(format!(
            "artificial flow {art_flow:e} left in the basis"
        )));
    }
    flows.sort_by_key(|f| (f.0, f.1));
    Ok(Solution {
        flows,
        cost: total,
    })
}
