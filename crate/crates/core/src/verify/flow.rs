//! Exact maximum-weight k-to-1 assignment via min-cost flow.
//!
//! Every replica must be matched to exactly one surrogate; every surrogate
//! takes at most (and, since capacities sum to the replica count, exactly)
//! `k` replicas. Costs are `1 − v ∈ [0,1]`, so successive shortest paths
//! with Dijkstra and Johnson potentials apply directly and the integral
//! optimum is exact up to float arithmetic on path costs.

use crate::error::Error;
use crate::matching::Mat;
use crate::Result;

#[derive(Debug, Clone)]
struct FlowEdge {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<FlowEdge>>,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        FlowGraph {
            adj: vec![Vec::new(); n],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(FlowEdge {
            to,
            rev: rev_from,
            cap,
            cost,
        });
        self.adj[to].push(FlowEdge {
            to: from,
            rev: rev_to,
            cap: 0,
            cost: -cost,
        });
    }
}

/// Exact optimal k-to-1 assignment of a `(km) × m` value matrix.
/// Returns the total matched value and the surrogate index per replica.
pub fn max_weight_k_matching(values: &Mat, k: usize) -> Result<(f64, Vec<usize>)> {
    let rows = values.rows();
    let m = values.cols();
    if k == 0 || m == 0 || rows != k * m {
        return Err(Error::InvalidInput(format!(
            "assignment needs a (k*m) x m matrix, got {rows}x{m} with k={k}"
        )));
    }
    if rows * m > 10_000 {
        return Err(Error::InvalidInput(
            "instance too large for the exact matcher (km*m > 1e4)".into(),
        ));
    }
    for i in 0..rows {
        for j in 0..m {
            let v = values.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "edge value {v} outside [0,1]"
                )));
            }
        }
    }

    let n = rows + m + 2;
    let source = 0usize;
    let sink = n - 1;
    let replica = |i: usize| 1 + i;
    let surrogate = |j: usize| 1 + rows + j;

    let mut g = FlowGraph::new(n);
    for i in 0..rows {
        g.add_edge(source, replica(i), 1, 0.0);
        for j in 0..m {
            g.add_edge(replica(i), surrogate(j), 1, 1.0 - values.get(i, j));
        }
    }
    for j in 0..m {
        g.add_edge(surrogate(j), sink, k as i64, 0.0);
    }

    // Successive shortest paths with potentials; all costs start non-negative.
    let mut potential = vec![0.0f64; n];
    let mut total_cost = 0.0f64;
    for _ in 0..rows {
        // Dijkstra on reduced costs.
        let mut dist = vec![f64::INFINITY; n];
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
        dist[source] = 0.0;
        let mut heap = std::collections::BinaryHeap::new();
        heap.push(std::cmp::Reverse((ordered_float(0.0), source)));
        while let Some(std::cmp::Reverse((d, u))) = heap.pop() {
            let d = f64::from_bits(d) ;
            if d > dist[u] + 1e-12 {
                continue;
            }
            for (idx, e) in g.adj[u].iter().enumerate() {
                if e.cap <= 0 {
                    continue;
                }
                let nd = dist[u] + e.cost + potential[u] - potential[e.to];
                if nd + 1e-12 < dist[e.to] {
                    dist[e.to] = nd;
                    prev[e.to] = Some((u, idx));
                    heap.push(std::cmp::Reverse((ordered_float(nd), e.to)));
                }
            }
        }
        if dist[sink].is_infinite() {
            return Err(Error::InvariantViolation(
                "assignment instance is infeasible".into(),
            ));
        }
        for v in 0..n {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        // Augment one unit along the shortest path.
        let mut v = sink;
        while v != source {
            let (u, idx) = prev[v].expect("path exists");
            total_cost += g.adj[u][idx].cost;
            g.adj[u][idx].cap -= 1;
            let rev = g.adj[u][idx].rev;
            g.adj[v][rev].cap += 1;
            v = u;
        }
    }

    // Read the assignment off the replica → surrogate edges.
    let mut assignment = vec![usize::MAX; rows];
    for i in 0..rows {
        for e in &g.adj[replica(i)] {
            if e.to != source && e.cap == 0 && e.to >= surrogate(0) && e.to < surrogate(m - 1) + 1 {
                assignment[i] = e.to - surrogate(0);
            }
        }
    }
    if assignment.iter().any(|a| *a == usize::MAX) {
        return Err(Error::InvariantViolation("incomplete assignment".into()));
    }
    let value = rows as f64 - total_cost;
    Ok((value, assignment))
}

// Non-negative floats order correctly through their bit patterns.
fn ordered_float(x: f64) -> u64 {
    debug_assert!(x >= 0.0 || x.abs() < 1e-9);
    x.max(0.0).to_bits()
}

/// Brute-force optimal k-to-1 assignment by exhaustive enumeration.
/// Only for tiny instances (`km ≤ 8`).
pub fn brute_force_k_matching(values: &Mat, k: usize) -> Result<(f64, Vec<usize>)> {
    let rows = values.rows();
    let m = values.cols();
    if k == 0 || m == 0 || rows != k * m {
        return Err(Error::InvalidInput("bad brute-force dimensions".into()));
    }
    if rows > 8 {
        return Err(Error::InvalidInput("brute force limited to km <= 8".into()));
    }
    let mut caps = vec![k; m];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut current = Vec::with_capacity(rows);
    fn recurse(
        values: &Mat,
        i: usize,
        caps: &mut Vec<usize>,
        current: &mut Vec<usize>,
        acc: f64,
        best: &mut (f64, Vec<usize>),
    ) {
        if i == values.rows() {
            if acc > best.0 {
                *best = (acc, current.clone());
            }
            return;
        }
        for j in 0..values.cols() {
            if caps[j] > 0 {
                caps[j] -= 1;
                current.push(j);
                recurse(values, i + 1, caps, current, acc + values.get(i, j), best);
                current.pop();
                caps[j] += 1;
            }
        }
    }
    recurse(values, 0, &mut caps, &mut current, 0.0, &mut best);
    Ok(best)
}
