//! Globally optimal matching of fused trees to geocoded addresses.
//!
//! The objective maximizes `sum x_ij * (M - dist_ij)` subject to: each tree
//! matched at most once, each address matched at most `K` times (its
//! inventory tree count), and only pairs within `M` meters admissible.
//!
//! Candidate pairs come from a uniform spatial grid so each address inspects
//! only its 3x3 cell neighborhood; the result is identical to brute-force
//! distance filtering. The solver runs min-cost max-flow per connected
//! component of the candidate graph, which is integral and equal to the LP
//! optimum by total unimodularity of the bipartite constraint matrix.
//!
//! Matching is not forced to maximum flow: augmentation stops once a further
//! match would lower the objective. Since every admissible pair has
//! `M - dist >= 0`, the returned matching includes zero-gain matches at
//! exactly `M`, and among equal-objective optima of that maximal cardinality
//! the solver returns the one minimizing the lexicographic sequence of
//! `(address_index, tree_index)` pairs.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::fuse::FusedTree;
use crate::geo::{self, GeoPoint};
use crate::geocode::GeocodedAddress;
use crate::grid::BucketGrid;
use crate::inventory::AddressGroup;
use crate::par::par_iter;
#[cfg(feature = "parallel")]
use crate::par::*;

/// Default maximum admissible match distance, meters.
pub const DEFAULT_MAX_MATCH_DISTANCE_M: f64 = 50.0;

/// An admissible (address, tree) pair with its distance, `dist_m <= M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub address_index: usize,
    pub tree_index: usize,
    pub dist_m: f64,
}

/// One matched pair in an [`AssignmentResult`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub address_index: usize,
    pub tree_index: usize,
    pub dist_m: f64,
}

/// Solver output. `matches` is sorted by `(address_index, tree_index)` and
/// `objective_value` is the sum of `M - dist` accumulated in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub matches: Vec<Match>,
    pub objective_value: f64,
    pub unmatched_trees: usize,
    pub unfilled_capacity: usize,
}

/// Enumerates exactly the (address, tree) pairs within `max_distance_m`,
/// sorted by `(address_index, tree_index)`.
pub fn build_candidates(
    addresses: &[GeocodedAddress],
    trees: &[FusedTree],
    max_distance_m: f64,
) -> Vec<CandidatePair> {
    if addresses.is_empty() || trees.is_empty() {
        return Vec::new();
    }
    let tree_points: Vec<GeoPoint> = trees.iter().map(|t| t.point).collect();
    let grid = BucketGrid::build(&tree_points, max_distance_m);

    let per_address: Vec<Vec<CandidatePair>> = par_iter!(addresses)
        .enumerate()
        .map(|(ai, a)| {
            let p = a
                .point
                .expect("build_candidates requires resolved, non-outlier addresses");
            grid.neighborhood(p)
                .into_iter()
                .filter_map(|ti| {
                    let d = geo::local_distance_m(p, tree_points[ti]);
                    (d <= max_distance_m).then_some(CandidatePair {
                        address_index: ai,
                        tree_index: ti,
                        dist_m: d,
                    })
                })
                .collect()
        })
        .collect();

    per_address.into_iter().flatten().collect()
}

/// Residual flow network with paired forward/reverse arcs (`a ^ 1` is the
/// reverse of `a`).
struct FlowGraph {
    to: Vec<usize>,
    from: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<f64>,
    adj: Vec<Vec<usize>>,
}

impl FlowGraph {
    fn new(n_nodes: usize) -> Self {
        Self {
            to: Vec::new(),
            from: Vec::new(),
            cap: Vec::new(),
            cost: Vec::new(),
            adj: vec![Vec::new(); n_nodes],
        }
    }

    fn add_arc(&mut self, u: usize, v: usize, cap: i64, cost: f64) -> usize {
        let id = self.to.len();
        self.to.push(v);
        self.from.push(u);
        self.cap.push(cap);
        self.cost.push(cost);
        self.adj[u].push(id);
        self.to.push(u);
        self.from.push(v);
        self.cap.push(0);
        self.cost.push(-cost);
        self.adj[v].push(id + 1);
        id
    }

    fn n_nodes(&self) -> usize {
        self.adj.len()
    }
}

#[derive(PartialEq)]
struct HeapKey(f64, usize);

impl Eq for HeapKey {}

impl PartialOrd for HeapKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Successive shortest paths with Dijkstra on reduced costs. Augments one
/// unit at a time while the true path cost stays non-positive, so every
/// augmentation improves or preserves the objective.
fn run_ssp(g: &mut FlowGraph, source: usize, sink: usize, mut pi: Vec<f64>) {
    let n = g.n_nodes();
    loop {
        let mut dist = vec![f64::INFINITY; n];
        let mut prev_arc = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse(HeapKey(0.0, source)));
        while let Some(Reverse(HeapKey(d, u))) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &a in &g.adj[u] {
                if g.cap[a] <= 0 {
                    continue;
                }
                let v = g.to[a];
                let rc = g.cost[a] + pi[u] - pi[v];
                let nd = d + rc;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev_arc[v] = a;
                    heap.push(Reverse(HeapKey(nd, v)));
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let true_cost = dist[sink] + pi[sink] - pi[source];
        if true_cost > 0.0 {
            break;
        }
        let mut v = sink;
        while v != source {
            let a = prev_arc[v];
            g.cap[a] -= 1;
            g.cap[a ^ 1] += 1;
            v = g.from[a];
        }
        for v in 0..n {
            if dist[v].is_finite() {
                pi[v] += dist[v].min(dist[sink]);
            }
        }
    }
}

/// Node potentials from a single Bellman-Ford pass with a virtual source
/// feeding every node. Valid for any residual graph without negative cycles,
/// which an optimal flow guarantees; afterwards every residual arc has a
/// non-negative reduced cost, with exact zeros on the tight arcs the
/// lexicographic refinement walks.
fn clean_potentials(g: &FlowGraph) -> Vec<f64> {
    let n = g.n_nodes();
    let mut pot = vec![0.0; n];
    for _ in 0..n {
        let mut changed = false;
        for a in 0..g.to.len() {
            if g.cap[a] <= 0 {
                continue;
            }
            let (u, v) = (g.from[a], g.to[a]);
            let nd = pot[u] + g.cost[a];
            if nd < pot[v] {
                pot[v] = nd;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    pot
}

/// Depth-first search for a simple path `start -> goal` over residual arcs
/// with zero reduced cost, skipping locked arcs. Returns the arc sequence.
fn zero_cost_path(
    g: &FlowGraph,
    pi: &[f64],
    start: usize,
    goal: usize,
    locked: &[bool],
) -> Option<Vec<usize>> {
    let n = g.n_nodes();
    let mut visited = vec![false; n];
    let mut stack = vec![(start, 0usize)];
    let mut path: Vec<usize> = Vec::new();
    visited[start] = true;
    while let Some(&mut (u, ref mut next)) = stack.last_mut() {
        if u == goal {
            return Some(path);
        }
        let mut advanced = false;
        while *next < g.adj[u].len() {
            let a = g.adj[u][*next];
            *next += 1;
            if g.cap[a] <= 0 || locked[a] {
                continue;
            }
            let v = g.to[a];
            if visited[v] {
                continue;
            }
            let rc = g.cost[a] + pi[u] - pi[v];
            if rc != 0.0 {
                continue;
            }
            visited[v] = true;
            path.push(a);
            stack.push((v, 0));
            advanced = true;
            break;
        }
        if !advanced {
            stack.pop();
            path.pop();
        }
    }
    None
}

/// Exact maximizer of `sum (M - dist)` under the per-tree and per-address
/// capacity constraints. `capacities[i]` is the inventory tree count of
/// address `i`; `n_trees` is the number of fused trees indexable by
/// candidates.
pub fn solve_assignment(
    candidates: &[CandidatePair],
    capacities: &[usize],
    n_trees: usize,
    max_distance_m: f64,
) -> Result<AssignmentResult> {
    for (i, &k) in capacities.iter().enumerate() {
        if k == 0 {
            return Err(Error::InvalidCapacity(i));
        }
    }
    for c in candidates {
        if c.address_index >= capacities.len() || c.tree_index >= n_trees {
            return Err(Error::Degenerate(format!(
                "candidate ({}, {}) outside instance bounds",
                c.address_index, c.tree_index
            )));
        }
        if !(0.0..=max_distance_m).contains(&c.dist_m) {
            return Err(Error::Degenerate(format!(
                "candidate distance {} outside [0, {max_distance_m}]",
                c.dist_m
            )));
        }
    }

    let mut sorted: Vec<CandidatePair> = candidates.to_vec();
    sorted.sort_by_key(|c| (c.address_index, c.tree_index));

    // Connected components of the bipartite candidate graph; each solves
    // independently.
    let components = split_components(&sorted, capacities.len(), n_trees);

    let mut matches: Vec<Match> = Vec::new();
    for comp in components {
        solve_component(&sorted, &comp, capacities, max_distance_m, &mut matches);
    }
    matches.sort_by_key(|m| (m.address_index, m.tree_index));

    let objective_value = matches.iter().map(|m| max_distance_m - m.dist_m).sum();
    let total_capacity: usize = capacities.iter().sum();
    Ok(AssignmentResult {
        unmatched_trees: n_trees - matches.len(),
        unfilled_capacity: total_capacity - matches.len(),
        matches,
        objective_value,
    })
}

/// Candidate indices grouped by connected component, ordered by smallest
/// address index.
fn split_components(sorted: &[CandidatePair], n_addr: usize, n_trees: usize) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n_addr + n_trees).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = x;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    for c in sorted {
        let a = find(&mut parent, c.address_index);
        let b = find(&mut parent, n_addr + c.tree_index);
        parent[a] = b;
    }
    let mut by_root: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut root_slot: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (ci, c) in sorted.iter().enumerate() {
        let root = find(&mut parent, c.address_index);
        let slot = *root_slot.entry(root).or_insert_with(|| {
            by_root.push((root, Vec::new()));
            by_root.len() - 1
        });
        by_root[slot].1.push(ci);
    }
    by_root.into_iter().map(|(_, v)| v).collect()
}

fn solve_component(
    all: &[CandidatePair],
    comp: &[usize],
    capacities: &[usize],
    max_distance_m: f64,
    matches: &mut Vec<Match>,
) {
    // Local dense ids, in first-appearance (sorted candidate) order.
    let mut addr_ids: Vec<usize> = comp.iter().map(|&ci| all[ci].address_index).collect();
    addr_ids.sort_unstable();
    addr_ids.dedup();
    let mut tree_ids: Vec<usize> = comp.iter().map(|&ci| all[ci].tree_index).collect();
    tree_ids.sort_unstable();
    tree_ids.dedup();
    let addr_local: std::collections::HashMap<usize, usize> =
        addr_ids.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let tree_local: std::collections::HashMap<usize, usize> =
        tree_ids.iter().enumerate().map(|(l, &g)| (g, l)).collect();

    let na = addr_ids.len();
    let nt = tree_ids.len();
    let source = 0usize;
    let sink = na + nt + 1;
    let mut g = FlowGraph::new(na + nt + 2);

    for (l, &ga) in addr_ids.iter().enumerate() {
        g.add_arc(source, 1 + l, capacities[ga] as i64, 0.0);
    }
    let mut pair_arc: Vec<usize> = Vec::with_capacity(comp.len());
    for &ci in comp {
        let c = &all[ci];
        let u = 1 + addr_local[&c.address_index];
        let v = 1 + na + tree_local[&c.tree_index];
        pair_arc.push(g.add_arc(u, v, 1, -(max_distance_m - c.dist_m)));
    }
    for l in 0..nt {
        g.add_arc(1 + na + l, sink, 1, 0.0);
    }

    // Initial potentials by layer: the graph is a DAG before any flow.
    let mut pi = vec![0.0; g.n_nodes()];
    for (slot, &ci) in comp.iter().enumerate() {
        let c = &all[ci];
        let v = 1 + na + tree_local[&c.tree_index];
        let cost = g.cost[pair_arc[slot]];
        if cost < pi[v] {
            pi[v] = cost;
        }
    }
    pi[sink] = (0..nt).map(|l| pi[1 + na + l]).fold(0.0, f64::min);

    run_ssp(&mut g, source, sink, pi);

    // Lexicographic refinement over the optimal face: visit pairs in
    // (address, tree) order, keep each pair matched when some optimum
    // consistent with earlier decisions contains it.
    let pot = clean_potentials(&g);
    let mut locked = vec![false; g.to.len()];
    for &a in &pair_arc {
        if g.cap[a] == 0 {
            // Matched; freeze it by forbidding the unmatching direction.
            locked[a ^ 1] = true;
            continue;
        }
        let (u, v) = (g.from[a], g.to[a]);
        let rc = g.cost[a] + pot[u] - pot[v];
        if rc != 0.0 {
            continue; // cannot appear in any optimum
        }
        if let Some(path) = zero_cost_path(&g, &pot, v, u, &locked) {
            g.cap[a] -= 1;
            g.cap[a ^ 1] += 1;
            for pa in path {
                g.cap[pa] -= 1;
                g.cap[pa ^ 1] += 1;
            }
            locked[a ^ 1] = true;
        } else {
            locked[a] = true;
        }
    }

    for (slot, &ci) in comp.iter().enumerate() {
        if g.cap[pair_arc[slot]] == 0 {
            let c = all[ci];
            matches.push(Match {
                address_index: c.address_index,
                tree_index: c.tree_index,
                dist_m: c.dist_m,
            });
        }
    }
}

/// A matched fused tree expanded to one inventory tree id of its address.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedMatch {
    pub tree_id: String,
    pub address_index: usize,
    pub fused_index: usize,
    pub point: GeoPoint,
    pub dist_m: f64,
}

/// Distributes each address's matched detections to its inventory tree ids in
/// stable inventory order. Matching correctness is defined at address
/// granularity, so the pairing within an address is a deterministic
/// convention, not a claim about individual trees.
pub fn expand_to_trees(
    result: &AssignmentResult,
    groups: &[AddressGroup],
    trees: &[FusedTree],
) -> Vec<ExpandedMatch> {
    let mut out = Vec::with_capacity(result.matches.len());
    let mut cursor: Vec<usize> = vec![0; groups.len()];
    // matches are sorted by (address_index, tree_index) already
    for m in &result.matches {
        let group = &groups[m.address_index];
        let slot = cursor[m.address_index];
        debug_assert!(slot < group.capacity_k);
        out.push(ExpandedMatch {
            tree_id: group.tree_ids[slot].clone(),
            address_index: m.address_index,
            fused_index: m.tree_index,
            point: trees[m.tree_index].point,
            dist_m: m.dist_m,
        });
        cursor[m.address_index] += 1;
    }
    out
}
