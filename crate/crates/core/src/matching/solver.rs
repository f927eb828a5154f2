//! Maximum-cardinality minimum-weight bipartite matching by successive
//! shortest augmenting paths (Dijkstra with node potentials) on the sparse
//! feasible graph. Connected components are solved independently.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;

/// A feasible (treated, control) pair and its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub treated: usize,
    pub control: usize,
    pub weight: f64,
}

/// Weights are compared as fixed-point integers with this many fractional
/// bits, which keeps potentials and path lengths exact.
const FRACTION_BITS: i32 = 40;

fn fixed(w: f64) -> i64 {
    (w * f64::from(FRACTION_BITS).exp2()).round() as i64
}

/// Returns a matching of maximum cardinality whose total weight is minimal
/// among maximum matchings. Ties are resolved by considering edges in
/// (weight, treated id, control id) order. Output is sorted by treated id.
///
/// Weights must be finite and nonnegative.
pub fn solve_matching(edges: &[Edge], treated_ids: &[&str], control_ids: &[&str]) -> Vec<Edge> {
    if edges.is_empty() {
        return Vec::new();
    }
    assert!(
        edges.iter().all(|e| e.weight.is_finite() && e.weight >= 0.0),
        "edge weights must be finite and nonnegative"
    );
    let nt = treated_ids.len();
    let t_rank = ranks(treated_ids);
    let c_rank = ranks(control_ids);

    let mut sorted: Vec<Edge> = edges.to_vec();
    sorted.sort_by(|a, b| {
        a.weight
            .total_cmp(&b.weight)
            .then(t_rank[a.treated].cmp(&t_rank[b.treated]))
            .then(c_rank[a.control].cmp(&c_rank[b.control]))
    });

    // Components over nodes 0..nt (treated) and nt.. (control).
    let mut uf = UnionFind::new(nt + control_ids.len());
    for e in &sorted {
        uf.union(e.treated, nt + e.control);
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Edge>> = std::collections::BTreeMap::new();
    for e in &sorted {
        groups.entry(uf.find(e.treated)).or_default().push(*e);
    }
    let groups: Vec<Vec<Edge>> = groups.into_values().collect();

    let mut out: Vec<Edge> = groups
        .par_iter()
        .flat_map_iter(|g| solve_component(g, &t_rank, &c_rank))
        .collect();
    out.sort_by_key(|e| t_rank[e.treated]);
    out
}

/// Sum of weights in canonical (treated index, control index) order.
pub fn total_weight(pairs: &[Edge]) -> f64 {
    let mut v: Vec<&Edge> = pairs.iter().collect();
    v.sort_by_key(|e| (e.treated, e.control));
    v.iter().map(|e| e.weight).sum()
}

fn ranks(ids: &[&str]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(ids[b]).then(a.cmp(&b)));
    let mut rank = vec![0; ids.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

struct Graph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<u8>,
    cost: Vec<i64>,
}

impl Graph {
    fn add(&mut self, u: usize, v: usize, cost: i64) {
        self.adj[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(1);
        self.cost.push(cost);
        self.adj[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(0);
        self.cost.push(-cost);
    }
}

/// `edges` arrive in tie-break order.
fn solve_component(edges: &[Edge], t_rank: &[usize], c_rank: &[usize]) -> Vec<Edge> {
    let mut ts: Vec<usize> = edges.iter().map(|e| e.treated).collect();
    let mut cs: Vec<usize> = edges.iter().map(|e| e.control).collect();
    ts.sort_by_key(|&t| t_rank[t]);
    ts.dedup();
    cs.sort_by_key(|&c| c_rank[c]);
    cs.dedup();
    let local_t = |t: usize| 1 + ts.binary_search_by_key(&t_rank[t], |&x| t_rank[x]).unwrap();
    let local_c = |c: usize| 1 + ts.len() + cs.binary_search_by_key(&c_rank[c], |&x| c_rank[x]).unwrap();
    let n = ts.len() + cs.len() + 2;
    let (source, sink) = (0, n - 1);

    let mut g = Graph {
        adj: vec![Vec::new(); n],
        to: Vec::new(),
        cap: Vec::new(),
        cost: Vec::new(),
    };
    for i in 0..ts.len() {
        g.add(source, 1 + i, 0);
    }
    let first_pair_edge = g.to.len();
    for e in edges {
        g.add(local_t(e.treated), local_c(e.control), fixed(e.weight));
    }
    for j in 0..cs.len() {
        g.add(1 + ts.len() + j, sink, 0);
    }

    let mut potential = vec![0i64; n];
    let mut dist = vec![i64::MAX; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    loop {
        dist.iter_mut().for_each(|d| *d = i64::MAX);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[source] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0i64, source)));
        while let Some(Reverse((d, u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == sink {
                break;
            }
            for &e in &g.adj[u] {
                if g.cap[e] == 0 {
                    continue;
                }
                let v = g.to[e];
                if done[v] {
                    continue;
                }
                let nd = d + g.cost[e] + potential[u] - potential[v];
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = e;
                    heap.push(Reverse((nd, v)));
                }
            }
        }
        if !done[sink] {
            break;
        }
        let ds = dist[sink];
        for v in 0..n {
            potential[v] += if done[v] { dist[v] } else { ds };
        }
        let mut v = sink;
        while v != source {
            let e = prev[v];
            g.cap[e] -= 1;
            g.cap[e ^ 1] += 1;
            v = g.to[e ^ 1];
        }
    }

    edges
        .iter()
        .enumerate()
        .filter(|(i, _)| g.cap[first_pair_edge + 2 * i] == 0)
        .map(|(_, e)| *e)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("u{i:03}")).collect()
    }

    fn solve(edges: &[Edge], nt: usize, nc: usize) -> Vec<Edge> {
        let t = ids(nt);
        let c = ids(nc);
        let tr: Vec<&str> = t.iter().map(String::as_str).collect();
        let cr: Vec<&str> = c.iter().map(String::as_str).collect();
        solve_matching(edges, &tr, &cr)
    }

    fn e(t: usize, c: usize, w: f64) -> Edge {
        Edge {
            treated: t,
            control: c,
            weight: w,
        }
    }

    #[test]
    fn two_by_two() {
        let m = solve(&[e(0, 0, 1.0), e(0, 1, 2.0), e(1, 0, 2.0), e(1, 1, 1.0)], 2, 2);
        assert_eq!(m, vec![e(0, 0, 1.0), e(1, 1, 1.0)]);
        assert_eq!(total_weight(&m), 2.0);
    }

    #[test]
    fn single_edge_and_pigeonhole() {
        assert_eq!(solve(&[e(0, 0, 0.3)], 1, 1), vec![e(0, 0, 0.3)]);
        let all: Vec<Edge> = (0..3)
            .flat_map(|t| (0..2).map(move |c| e(t, c, 0.1 * (t + c) as f64)))
            .collect();
        assert_eq!(solve(&all, 3, 2).len(), 2);
        assert!(solve(&[], 3, 3).is_empty());
    }

    #[test]
    fn cardinality_beats_weight() {
        // Taking the cheap edge (0,0) alone would block treated 1.
        let m = solve(&[e(0, 0, 0.0), e(0, 1, 1.5), e(1, 0, 1.5)], 2, 2);
        assert_eq!(m.len(), 2);
        assert_eq!(total_weight(&m), 3.0);
    }

    #[test]
    fn ties_follow_id_order() {
        let m = solve(&[e(0, 1, 0.5), e(0, 0, 0.5)], 1, 2);
        assert_eq!(m, vec![e(0, 0, 0.5)]);
    }
}
