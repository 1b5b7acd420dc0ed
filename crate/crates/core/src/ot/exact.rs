//! Exact Wasserstein-1 between finite measures via the transportation
//! simplex (network simplex on the complete bipartite graph).
//!
//! The basis is a spanning tree of `n + m - 1` cells over the row and column
//! nodes. Each pivot prices every non-basic cell against the tree potentials,
//! brings in the most negative reduced cost, and pushes flow around the unique
//! cycle it closes.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::measure::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest `n * m` the dense solver accepts; bigger problems go through
/// [`super::sliced_w1`].
pub const MAX_PAIRS: usize = 1_000_000;
const OPTIMALITY_TOL: f64 = 1e-10;

/// A coupling between two measures, stored densely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub gamma: Tensor,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.gamma.rows()).map(|i| self.gamma.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let m = self.gamma.cols();
        let mut out = vec![0.0; m];
        for i in 0..self.gamma.rows() {
            for (j, g) in self.gamma.row(i).iter().enumerate() {
                out[j] += g;
            }
        }
        out
    }

    /// Transport cost of the plan under the Euclidean ground metric.
    pub fn cost(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
        let mut total = 0.0;
        for i in 0..self.gamma.rows() {
            for (j, &g) in self.gamma.row(i).iter().enumerate() {
                if g != 0.0 {
                    total += g * euclidean(mu.atom(i), nu.atom(j));
                }
            }
        }
        total
    }

    /// Largest deviation of the marginals from the given weights.
    pub fn marginal_error(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
        let row_sums = self.row_sums();
        let rows = row_sums.iter().zip(mu.weights()).map(|(a, b)| (a - b).abs());
        let cols = self.col_sums().into_iter().zip(nu.weights()).map(|(a, b)| (a - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimal transport cost and an optimal plan.
pub fn exact_w1(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(f64, TransportPlan)> {
    if mu.dim() != nu.dim() {
        return Err(Error::Dimension { expected: mu.dim(), got: nu.dim() });
    }
    let (n, m) = (mu.len(), nu.len());
    if n.saturating_mul(m) > MAX_PAIRS {
        return Err(Error::InvalidArgument(format!(
            "{n} x {m} exceeds the exact solver limit of {MAX_PAIRS} pairs; use sliced_w1"
        )));
    }
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = euclidean(mu.atom(i), nu.atom(j));
        }
    }
    let flows = solve_transport(mu.weights(), nu.weights(), &cost)?;
    let plan = TransportPlan { gamma: Tensor::matrix(n, m, flows).expect("sized") };
    Ok((plan.cost(mu, nu), plan))
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    row: usize,
    col: usize,
    flow: f64,
}

/// Solves `min <C, X>` subject to `X 1 = supply`, `X^T 1 = demand`, `X >= 0`.
/// Returns the dense row-major flow matrix.
pub(crate) fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Vec<f64>> {
    let (n, m) = (supply.len(), demand.len());
    debug_assert_eq!(cost.len(), n * m);

    let mut cells = northwest_corner(supply, demand);
    let mut basic = vec![false; n * m];
    // adjacency over nodes 0..n (rows) and n..n+m (columns), holding cell indices
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
    for (k, c) in cells.iter().enumerate() {
        basic[c.row * m + c.col] = true;
        adj[c.row].push(k);
        adj[n + c.col].push(k);
    }

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let max_iter = 1000 + 50 * n * m;
    for _ in 0..max_iter {
        potentials(&cells, &adj, cost, n, m, &mut u, &mut v);

        let mut best = -OPTIMALITY_TOL;
        let mut entering = None;
        for i in 0..n {
            let row = &cost[i * m..(i + 1) * m];
            for j in 0..m {
                if basic[i * m + j] {
                    continue;
                }
                let rc = row[j] - u[i] - v[j];
                if rc < best {
                    best = rc;
                    entering = Some((i, j));
                }
            }
        }
        let Some((ei, ej)) = entering else {
            let mut flows = vec![0.0; n * m];
            for c in &cells {
                flows[c.row * m + c.col] = c.flow.max(0.0);
            }
            return Ok(flows);
        };

        // path of cells from column node ej back to row node ei through the tree
        let path = tree_path(&cells, &adj, n, n + ej, ei);
        // signs alternate along the path, starting with a decrease
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 && cells[k].flow < theta {
                theta = cells[k].flow;
                leaving = k;
            }
        }
        let theta = theta.max(0.0);
        for (pos, &k) in path.iter().enumerate() {
            if pos % 2 == 0 {
                cells[k].flow -= theta;
            } else {
                cells[k].flow += theta;
            }
        }

        let old = cells[leaving];
        basic[old.row * m + old.col] = false;
        remove_edge(&mut adj[old.row], leaving);
        remove_edge(&mut adj[n + old.col], leaving);
        cells[leaving] = Cell { row: ei, col: ej, flow: theta };
        basic[ei * m + ej] = true;
        adj[ei].push(leaving);
        adj[n + ej].push(leaving);
    }
    Err(Error::Solver(format!("no optimum after {max_iter} pivots on a {n}x{m} problem")))
}

fn remove_edge(list: &mut Vec<usize>, cell: usize) {
    if let Some(p) = list.iter().position(|&c| c == cell) {
        list.swap_remove(p);
    }
}

/// Staircase initial basis: always `n + m - 1` cells forming a spanning tree,
/// some possibly carrying zero flow.
fn northwest_corner(supply: &[f64], demand: &[f64]) -> Vec<Cell> {
    let (n, m) = (supply.len(), demand.len());
    let mut ra = supply.to_vec();
    let mut rb = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    let mut cells = Vec::with_capacity(n + m - 1);
    loop {
        if i == n - 1 && j == m - 1 {
            cells.push(Cell { row: i, col: j, flow: ra[i].min(rb[j]).max(0.0) });
            break;
        }
        if i == n - 1 {
            let amount = rb[j].max(0.0);
            cells.push(Cell { row: i, col: j, flow: amount });
            ra[i] -= amount;
            j += 1;
        } else if j == m - 1 || ra[i] <= rb[j] {
            let amount = ra[i].max(0.0);
            cells.push(Cell { row: i, col: j, flow: amount });
            rb[j] -= amount;
            i += 1;
        } else {
            let amount = rb[j].max(0.0);
            cells.push(Cell { row: i, col: j, flow: amount });
            ra[i] -= amount;
            j += 1;
        }
    }
    cells
}

/// Dual potentials with `u[row] + v[col] = cost` on every basic cell, rooted at `u[0] = 0`.
fn potentials(cells: &[Cell], adj: &[Vec<usize>], cost: &[f64], n: usize, m: usize, u: &mut [f64], v: &mut [f64]) {
    let mut seen = vec![false; n + m];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    u[0] = 0.0;
    while let Some(node) = queue.pop_front() {
        for &k in &adj[node] {
            let c = cells[k];
            let (other, value) = if node < n {
                (n + c.col, cost[c.row * m + c.col] - u[c.row])
            } else {
                (c.row, cost[c.row * m + c.col] - v[c.col])
            };
            if !seen[other] {
                seen[other] = true;
                if other < n {
                    u[other] = value;
                } else {
                    v[other - n] = value;
                }
                queue.push_back(other);
            }
        }
    }
}

/// Cell indices along the unique tree path from node `from` to node `to`.
fn tree_path(cells: &[Cell], adj: &[Vec<usize>], n: usize, from: usize, to: usize) -> Vec<usize> {
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; adj.len()];
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([from]);
    seen[from] = true;
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &k in &adj[node] {
            let c = cells[k];
            let other = if node < n { n + c.col } else { c.row };
            if !seen[other] {
                seen[other] = true;
                parent[other] = Some((node, k));
                queue.push_back(other);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = to;
    while node != from {
        let (prev, k) = parent[node].expect("basis is a spanning tree");
        path.push(k);
        node = prev;
    }
    path.reverse();
    path
}
