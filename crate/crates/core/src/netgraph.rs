//! Undirected simple graphs, hop-distance queries and the degree-capped
//! preferential-attachment generator.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{stream_rng, Error, Result};

/// Undirected simple graph over dense node ids `0..n`.
///
/// Immutable after construction; neighbor lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    adjacency: Vec<Vec<usize>>,
}

impl Network {
    /// Builds a graph from an edge iterator. Duplicate edges (in either
    /// orientation) collapse to one; self-loops and out-of-range ids are rejected.
    pub fn new<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut adjacency = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n {
                return Err(Error::InvalidNode { node: u, n });
            }
            if v >= n {
                return Err(Error::InvalidNode { node: v, n });
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { adjacency })
    }

    /// Graph with `n` nodes and no edges.
    pub fn edgeless(n: usize) -> Self {
        Self {
            adjacency: vec![Vec::new(); n],
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (u, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn check(&self, i: usize) -> Result<()> {
        if i < self.node_count() {
            Ok(())
        } else {
            Err(Error::InvalidNode {
                node: i,
                n: self.node_count(),
            })
        }
    }

    /// Breadth-first layers around `i`: `shells[s]` holds the nodes at hop
    /// distance exactly `s`, for `s = 0..=radius`. Trailing layers may be empty.
    pub fn shells(&self, i: usize, radius: usize) -> Result<Vec<Vec<usize>>> {
        self.check(i)?;
        let mut dist = vec![usize::MAX; self.node_count()];
        let mut layers = vec![Vec::new(); radius + 1];
        let mut queue = VecDeque::from([i]);
        dist[i] = 0;
        while let Some(u) = queue.pop_front() {
            let d = dist[u];
            layers[d].push(u);
            if d == radius {
                continue;
            }
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = d + 1;
                    queue.push_back(v);
                }
            }
        }
        for layer in &mut layers {
            layer.sort_unstable();
        }
        Ok(layers)
    }

    /// Nodes within `s` hops of `i`, sorted; always contains `i`.
    pub fn neighborhood(&self, i: usize, s: usize) -> Result<Vec<usize>> {
        let mut all: Vec<usize> = self.shells(i, s)?.into_iter().flatten().collect();
        all.sort_unstable();
        Ok(all)
    }

    /// Nodes at exactly `s` hops from `i`, sorted.
    pub fn boundary(&self, i: usize, s: usize) -> Result<Vec<usize>> {
        Ok(self.shells(i, s)?.pop().unwrap_or_default())
    }

    /// `neighborhood(i, k) \ {i}` for every node.
    pub fn punctured_neighborhoods(&self, k: usize) -> Vec<Vec<usize>> {
        if k == 1 {
            return self.adjacency.clone();
        }
        (0..self.node_count())
            .map(|i| {
                let mut hood = self.neighborhood(i, k).expect("node in range");
                hood.retain(|&j| j != i);
                hood
            })
            .collect()
    }

    /// Writes the whitespace-separated edge list format, one `u v` per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# nodes {}", self.node_count())?;
        for (u, v) in self.edges() {
            writeln!(out, "{u} {v}")?;
        }
        Ok(())
    }
}

/// Parses an edge list: one whitespace-separated `u v` pair per line, `#`
/// starts a comment, blank lines are skipped. Ids are returned verbatim.
pub fn parse_edge_list<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Mismatch(format!("edge list line {}: {e}", lineno + 1)))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        match (tokens.next(), tokens.next(), tokens.next()) {
            (Some(u), Some(v), None) => out.push((u.to_string(), v.to_string())),
            _ => {
                return Err(Error::Mismatch(format!(
                    "edge list line {}: expected two node ids, got {body:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Degree-capped Barabási–Albert graph.
///
/// Starts from `m` isolated nodes. Every later node attaches to `m` distinct
/// existing nodes drawn without replacement with weight `degree + 1`, among
/// nodes whose degree is still below `max_degree`. If fewer than `m` nodes
/// are eligible the construction fails; callers re-seed rather than relax
/// the cap.
pub fn generate_ba_capped(n: usize, m: usize, max_degree: usize, seed: u64) -> Result<Network> {
    if m == 0 || m >= n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= m < n, got m={m}, n={n}"
        )));
    }
    if max_degree < m {
        return Err(Error::InvalidParameter(format!(
            "max_degree {max_degree} below m {m}"
        )));
    }
    let mut rng = stream_rng(seed, 0);
    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity((n - m) * m);
    let mut candidates: Vec<usize> = Vec::with_capacity(n);
    let mut weights: Vec<f64> = Vec::with_capacity(n);
    for new in m..n {
        candidates.clear();
        weights.clear();
        for (node, &d) in degree.iter().enumerate().take(new) {
            if d < max_degree {
                candidates.push(node);
                weights.push((d + 1) as f64);
            }
        }
        if candidates.len() < m {
            return Err(Error::AttachmentInfeasible {
                step: new,
                eligible: candidates.len(),
                needed: m,
            });
        }
        let mut total: f64 = weights.iter().sum();
        for _ in 0..m {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (idx, &w) in weights.iter().enumerate() {
                if u < w {
                    pick = idx;
                    break;
                }
                u -= w;
            }
            // Zero weight marks an already chosen target; guard the fallthrough.
            while weights[pick] == 0.0 {
                pick -= 1;
            }
            let target = candidates[pick];
            total -= weights[pick];
            weights[pick] = 0.0;
            edges.push((new, target));
            degree[target] += 1;
            degree[new] += 1;
        }
    }
    Network::new(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path(n: usize) -> Network {
        Network::new(n, (1..n).map(|i| (i - 1, i))).unwrap()
    }

    fn star(n: usize) -> Network {
        Network::new(n, (1..n).map(|i| (0, i))).unwrap()
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(Network::new(3, [(0, 3)]), Err(Error::InvalidNode { .. })));
        assert!(matches!(Network::new(3, [(1, 1)]), Err(Error::SelfLoop(1))));
        let net = Network::new(3, [(0, 1), (1, 0), (0, 1)]).unwrap();
        assert_eq!(net.edge_count(), 1);
    }

    #[test]
    fn neighborhood_examples() {
        let p = path(3);
        assert_eq!(p.neighborhood(1, 1).unwrap(), vec![0, 1, 2]);
        assert_eq!(p.neighborhood(2, 0).unwrap(), vec![2]);
        assert_eq!(star(5).neighborhood(3, 2).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(p.neighborhood(3, 1).is_err());
    }

    #[test]
    fn boundary_examples() {
        assert_eq!(path(3).boundary(0, 2).unwrap(), vec![2]);
        assert_eq!(path(3).boundary(1, 0).unwrap(), vec![1]);
        let pair = Network::edgeless(2);
        assert!(pair.boundary(0, 1).unwrap().is_empty());
        let c4 = Network::new(4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(c4.boundary(0, 2).unwrap(), vec![2]);
        assert_eq!(c4.boundary(0, 1).unwrap(), vec![1, 3]);
    }

    #[test]
    fn ba_tree_case() {
        let net = generate_ba_capped(800, 1, 2, 11).unwrap();
        assert_eq!(net.edge_count(), 799);
        assert!(net.max_degree() <= 2);
    }

    #[test]
    fn ba_mean_degree_near_two_m() {
        let net = generate_ba_capped(800, 2, 5, 3).unwrap();
        let mean = 2.0 * net.edge_count() as f64 / 800.0;
        assert!((mean - 4.0).abs() <= 0.4, "mean degree {mean}");
        assert!(net.max_degree() <= 5);
    }

    #[test]
    fn ba_is_deterministic() {
        let a = generate_ba_capped(3, 1, 2, 42).unwrap();
        let b = generate_ba_capped(3, 1, 2, 42).unwrap();
        assert_eq!(a.edges(), b.edges());
        let c = generate_ba_capped(200, 3, 10, 42).unwrap();
        let d = generate_ba_capped(200, 3, 10, 42).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn ba_signals_infeasible_cap() {
        // With m == max_degree every newcomer is born saturated, so the two
        // seed nodes fill up after two arrivals.
        let err = generate_ba_capped(50, 2, 2, 1).unwrap_err();
        assert!(matches!(err, Error::AttachmentInfeasible { .. }));
        assert!(generate_ba_capped(5, 0, 2, 1).is_err());
        assert!(generate_ba_capped(5, 3, 2, 1).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let net = generate_ba_capped(30, 2, 5, 9).unwrap();
        let mut buf = Vec::new();
        net.write_edge_list(&mut buf).unwrap();
        let pairs = parse_edge_list(&buf[..]).unwrap();
        let parsed = Network::new(
            30,
            pairs
                .iter()
                .map(|(u, v)| (u.parse().unwrap(), v.parse().unwrap())),
        )
        .unwrap();
        assert_eq!(parsed, net);
        assert!(parse_edge_list("1 2 3\n".as_bytes()).is_err());
        assert_eq!(parse_edge_list("# c\n\n a b # x\n".as_bytes()).unwrap().len(), 1);
    }

    fn arb_network() -> impl Strategy<Value = Network> {
        (1usize..25).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..60).prop_map(move |pairs| {
                Network::new(n, pairs.into_iter().filter(|(u, v)| u != v)).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn adjacency_is_symmetric_and_consistent(net in arb_network()) {
            for (u, v) in net.edges() {
                prop_assert!(net.neighbors(u).contains(&v));
                prop_assert!(net.neighbors(v).contains(&u));
            }
            let rebuilt = Network::new(net.node_count(), net.edges()).unwrap();
            prop_assert_eq!(rebuilt, net);
        }

        #[test]
        fn boundary_is_shell_difference(net in arb_network(), s in 1usize..5) {
            for i in 0..net.node_count() {
                let outer = net.neighborhood(i, s).unwrap();
                let inner = net.neighborhood(i, s - 1).unwrap();
                let diff: Vec<usize> = outer.iter().copied().filter(|j| !inner.contains(j)).collect();
                prop_assert_eq!(net.boundary(i, s).unwrap(), diff);
                prop_assert!(inner.iter().all(|j| outer.contains(j)));
            }
        }

        #[test]
        fn ba_respects_cap(n in 10usize..120, m in 1usize..4, extra in 1usize..6, seed in 0u64..1000) {
            prop_assume!(m < n);
            if let Ok(net) = generate_ba_capped(n, m, m + extra, seed) {
                prop_assert!(net.max_degree() <= m + extra);
                prop_assert_eq!(net.edge_count(), (n - m) * m);
            }
        }
    }
}
