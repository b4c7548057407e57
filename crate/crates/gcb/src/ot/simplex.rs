//! Network simplex for the transportation problem.
//!
//! Minimizes sum c_ij x_ij subject to row marginals mu and column
//! marginals nu, x >= 0. The basis is a spanning tree of the bipartite
//! supply/demand graph; pivoting follows Bland's rule (entering: lowest
//! cell index with negative reduced cost; leaving: lowest cell index among
//! minimum-flow donors), which prevents cycling and makes the returned
//! plan reproducible.

/// Reusable buffers so the metric sweeps can solve millions of small
/// problems without allocating.
pub struct TransportSolver {
    // basic cells (parallel arrays), |basis| = n + m - 1
    cell_i: Vec<usize>,
    cell_j: Vec<usize>,
    flow: Vec<f64>,
    // node -> list of incident basic cell ids (rows 0..n, cols n..n+m)
    adj: Vec<Vec<usize>>,
    u: Vec<f64>,
    v: Vec<f64>,
    dual_done: Vec<bool>,
    is_basic: Vec<bool>,
    // cycle scratch
    parent_edge: Vec<usize>,
    parent_node: Vec<usize>,
    stack: Vec<usize>,
    path: Vec<usize>,
    pub pivots: usize,
}

pub struct SolveOutput<'a> {
    pub value: f64,
    pub cells: (&'a [usize], &'a [usize], &'a [f64]),
    pub u: &'a [f64],
    pub v: &'a [f64],
    pub pivots: usize,
}

impl Default for TransportSolver {
    fn default() -> Self {
        Self::new()
    }
}

impl TransportSolver {
    pub fn new() -> Self {
        TransportSolver {
            cell_i: Vec::new(),
            cell_j: Vec::new(),
            flow: Vec::new(),
            adj: Vec::new(),
            u: Vec::new(),
            v: Vec::new(),
            dual_done: Vec::new(),
            is_basic: Vec::new(),
            parent_edge: Vec::new(),
            parent_node: Vec::new(),
            stack: Vec::new(),
            path: Vec::new(),
            pivots: 0,
        }
    }

    /// Solves the transportation problem; `mu` and `nu` must have equal
    /// positive total mass. Returns the optimal value; basis flows and
    /// dual potentials are left in the solver for inspection.
    pub fn solve<C: Fn(usize, usize) -> f64>(&mut self, mu: &[f64], nu: &[f64], cost: C) -> SolveOutput<'_> {
        let (n, m) = (mu.len(), nu.len());
        debug_assert!(n > 0 && m > 0);
        self.northwest_corner(mu, nu);
        self.rebuild_adj(n, m);
        self.compute_duals(n, m, &cost);
        self.is_basic.clear();
        self.is_basic.resize(n * m, false);
        for b in 0..self.cell_i.len() {
            self.is_basic[self.cell_i[b] * m + self.cell_j[b]] = true;
        }

        self.pivots = 0;
        let pivot_cap = 64 * n * m + 1024;
        loop {
            // entering: first cell in index order with negative reduced cost
            let mut entering = usize::MAX;
            let mut scale = 1.0_f64;
            'scan: for i in 0..n {
                for j in 0..m {
                    if self.is_basic[i * m + j] {
                        continue;
                    }
                    let c = cost(i, j);
                    scale = scale.max(c.abs());
                    if c - self.u[i] - self.v[j] < -1e-11 * scale {
                        entering = i * m + j;
                        break 'scan;
                    }
                }
            }
            if entering == usize::MAX {
                break;
            }
            self.pivots += 1;
            assert!(self.pivots <= pivot_cap, "transport simplex exceeded pivot cap");
            self.pivot(entering / m, entering % m, n, m);
            self.compute_duals(n, m, &cost);
        }

        let mut value = 0.0;
        for b in 0..self.cell_i.len() {
            value += self.flow[b] * cost(self.cell_i[b], self.cell_j[b]);
        }
        SolveOutput {
            value,
            cells: (&self.cell_i, &self.cell_j, &self.flow),
            u: &self.u[..n],
            v: &self.v[..m],
            pivots: self.pivots,
        }
    }

    /// Northwest-corner initial basic feasible solution with exactly
    /// n + m - 1 basic cells (degenerate zeros included).
    fn northwest_corner(&mut self, mu: &[f64], nu: &[f64]) {
        let (n, m) = (mu.len(), nu.len());
        self.cell_i.clear();
        self.cell_j.clear();
        self.flow.clear();
        let mut a = mu.to_vec();
        let mut b = nu.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = a[i].min(b[j]);
            self.cell_i.push(i);
            self.cell_j.push(j);
            self.flow.push(x);
            a[i] -= x;
            b[j] -= x;
            if i == n - 1 && j == m - 1 {
                break;
            }
            // advance along the dimension that was exhausted; prefer the
            // row so ties produce a degenerate zero cell in the next column
            if a[i] <= b[j] && i < n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        debug_assert_eq!(self.flow.len(), n + m - 1);
    }

    fn rebuild_adj(&mut self, n: usize, m: usize) {
        self.adj.resize(n + m, Vec::new());
        for l in self.adj.iter_mut() {
            l.clear();
        }
        for b in 0..self.cell_i.len() {
            self.adj[self.cell_i[b]].push(b);
            self.adj[n + self.cell_j[b]].push(b);
        }
    }

    fn compute_duals<C: Fn(usize, usize) -> f64>(&mut self, n: usize, m: usize, cost: &C) {
        self.u.resize(n, 0.0);
        self.v.resize(m, 0.0);
        self.dual_done.clear();
        self.dual_done.resize(n + m, false);
        self.stack.clear();
        self.u[0] = 0.0;
        self.dual_done[0] = true;
        self.stack.push(0);
        while let Some(node) = self.stack.pop() {
            for idx in 0..self.adj[node].len() {
                let b = self.adj[node][idx];
                let (i, j) = (self.cell_i[b], self.cell_j[b]);
                let (rn, cn) = (i, n + j);
                let other = if node == rn { cn } else { rn };
                if self.dual_done[other] {
                    continue;
                }
                if other == cn {
                    self.v[j] = cost(i, j) - self.u[i];
                } else {
                    self.u[i] = cost(i, j) - self.v[j];
                }
                self.dual_done[other] = true;
                self.stack.push(other);
            }
        }
    }

    /// Brings cell (ei, ej) into the basis, pushing flow around the unique
    /// tree cycle and dropping the binding donor cell.
    fn pivot(&mut self, ei: usize, ej: usize, n: usize, m: usize) {
        // path from col node (n + ej) to row node ei through the tree
        let nodes = n + m;
        self.parent_edge.clear();
        self.parent_edge.resize(nodes, usize::MAX);
        self.parent_node.clear();
        self.parent_node.resize(nodes, usize::MAX);
        let start = n + ej;
        let target = ei;
        self.stack.clear();
        self.stack.push(start);
        self.parent_node[start] = start;
        while let Some(node) = self.stack.pop() {
            if node == target {
                break;
            }
            for idx in 0..self.adj[node].len() {
                let b = self.adj[node][idx];
                let (i, j) = (self.cell_i[b], self.cell_j[b]);
                let other = if node == i { n + j } else { i };
                if self.parent_node[other] == usize::MAX {
                    self.parent_node[other] = node;
                    self.parent_edge[other] = b;
                    self.stack.push(other);
                }
            }
        }
        debug_assert_ne!(self.parent_node[target], usize::MAX, "basis tree disconnected");

        // walk back collecting the path; edges alternate -,+,-,... starting
        // from the edge incident to the entering cell's column
        self.path.clear();
        let mut node = target;
        while node != start {
            self.path.push(self.parent_edge[node]);
            node = self.parent_node[node];
        }
        self.path.reverse(); // now ordered from the column end toward the row end

        // donors are the edges at even positions in `path` (0-based):
        // path[0] shares the entering column, so it loses flow.
        let mut theta = f64::INFINITY;
        let mut leave_pos = usize::MAX;
        let mut leave_cell = usize::MAX;
        for (pos, &b) in self.path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = self.flow[b];
                let cell = self.cell_i[b] * m + self.cell_j[b];
                if f < theta - 1e-15 || (f <= theta + 1e-15 && cell < leave_cell) {
                    theta = f.min(theta);
                    leave_pos = pos;
                    leave_cell = cell;
                }
            }
        }
        debug_assert_ne!(leave_pos, usize::MAX);

        for (pos, &b) in self.path.iter().enumerate() {
            if pos % 2 == 0 {
                self.flow[b] -= theta;
            } else {
                self.flow[b] += theta;
            }
        }
        // replace the leaving cell with the entering one
        let b = self.path[leave_pos];
        self.is_basic[self.cell_i[b] * m + self.cell_j[b]] = false;
        self.is_basic[ei * m + ej] = true;
        self.cell_i[b] = ei;
        self.cell_j[b] = ej;
        self.flow[b] = theta;
        self.rebuild_adj(n, m);
    }
}
