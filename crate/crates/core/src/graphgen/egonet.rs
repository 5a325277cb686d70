use std::collections::VecDeque;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use super::graph::Graph;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// A k-node ego-net window with its induced structure.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub center: usize,
    /// Parent node ids in BFS order, followed by any padding nodes.
    pub nodes: Vec<usize>,
    /// Induced k×k 0/1 adjacency, row-major.
    pub adj: Vec<u8>,
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Parent edges with exactly one endpoint in the window.
    pub boundary_edges: usize,
    /// Number of nodes added by uniform fill after BFS was exhausted.
    pub padded: usize,
}

impl Window {
    pub fn k(&self) -> usize {
        self.nodes.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a * self.k() + b] == 1
    }

    pub fn internal_edges(&self) -> usize {
        self.adj.iter().map(|&v| v as usize).sum::<usize>() / 2
    }

    /// Share of edges touching the window that leave it.
    pub fn boundary_fraction(&self) -> f64 {
        let total = self.boundary_edges + self.internal_edges();
        if total == 0 {
            0.0
        } else {
            self.boundary_edges as f64 / total as f64
        }
    }

    /// SHA-256 of (k, induced adjacency); equal structures hash equal.
    pub fn adjacency_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.k() as u64).to_le_bytes());
        h.update(&self.adj);
        h.finalize().into()
    }

    /// Window with nodes reordered by `perm` (new position a holds old position perm[a]).
    pub fn permuted(&self, perm: &[usize]) -> Window {
        let k = self.k();
        let mut adj = vec![0u8; k * k];
        for a in 0..k {
            for b in 0..k {
                adj[a * k + b] = self.adj[perm[a] * k + perm[b]];
            }
        }
        Window {
            center: self.center,
            nodes: perm.iter().map(|&p| self.nodes[p]).collect(),
            adj,
            features: Tensor::from_fn(k, self.features.cols(), |a, j| self.features.get(perm[a], j)),
            labels: perm.iter().map(|&p| self.labels[p]).collect(),
            boundary_edges: self.boundary_edges,
            padded: self.padded,
        }
    }
}

/// BFS window of `k` nodes around `center`. Neighbours are visited in ascending
/// id order; if the component is smaller than `k`, unvisited nodes are drawn
/// uniformly (seeded) to keep the window size fixed.
pub fn sample_egonet(graph: &Graph, center: usize, k: usize, seed: u64) -> Result<Window> {
    let n = graph.n();
    if center >= n {
        return Err(Error::Invalid(format!("center {center} not in graph of {n} nodes")));
    }
    if k == 0 || k > n {
        return Err(Error::Invalid(format!("window size {k} must be in 1..={n}")));
    }
    let mut in_window = vec![false; n];
    let mut nodes = Vec::with_capacity(k);
    let mut queue = VecDeque::from([center]);
    in_window[center] = true;
    nodes.push(center);
    'bfs: while let Some(u) = queue.pop_front() {
        for &w in graph.neighbors(u) {
            if nodes.len() == k {
                break 'bfs;
            }
            if !in_window[w] {
                in_window[w] = true;
                nodes.push(w);
                queue.push_back(w);
            }
        }
    }
    let mut padded = 0;
    if nodes.len() < k {
        let mut rest: Vec<usize> = (0..n).filter(|&i| !in_window[i]).collect();
        rest.shuffle(&mut rng::seeded(seed));
        for &v in rest.iter().take(k - nodes.len()) {
            in_window[v] = true;
            nodes.push(v);
            padded += 1;
        }
    }

    let mut adj = vec![0u8; k * k];
    for (a, &i) in nodes.iter().enumerate() {
        for (b, &j) in nodes.iter().enumerate() {
            adj[a * k + b] = u8::from(graph.has_edge(i, j));
        }
    }
    let boundary_edges = nodes
        .iter()
        .map(|&i| graph.neighbors(i).iter().filter(|&&j| !in_window[j]).count())
        .sum();
    let feats = graph.features();
    Ok(Window {
        center,
        features: Tensor::from_fn(k, feats.cols(), |a, j| feats.get(nodes[a], j)),
        labels: nodes.iter().map(|&i| graph.labels()[i]).collect(),
        nodes,
        adj,
        boundary_edges,
        padded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(n, edges, Tensor::zeros(n, 1), vec![0; n], 1).unwrap()
    }

    #[test]
    fn star_covers_whole_graph() {
        let star = g(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]);
        let w = sample_egonet(&star, 0, 6, 0).unwrap();
        assert_eq!(w.nodes, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(w.boundary_edges, 0);
        assert_eq!(w.boundary_fraction(), 0.0);
    }

    #[test]
    fn path_prefix() {
        let path = g(4, &[(0, 1), (1, 2), (2, 3)]);
        let w = sample_egonet(&path, 0, 2, 0).unwrap();
        assert_eq!(w.nodes, vec![0, 1]);
        assert_eq!(w.boundary_edges, 1);
        assert!(w.has_edge(0, 1));
    }

    #[test]
    fn padding_fills_from_other_components() {
        let two = g(6, &[(0, 1), (2, 3), (4, 5)]);
        let w = sample_egonet(&two, 0, 4, 9).unwrap();
        assert_eq!(w.k(), 4);
        assert_eq!(w.padded, 2);
        assert_eq!(&w.nodes[..2], &[0, 1]);
    }

    #[test]
    fn invalid_center() {
        assert!(sample_egonet(&g(3, &[]), 3, 2, 0).is_err());
    }

    #[test]
    fn hash_depends_on_structure_only() {
        let a = g(4, &[(0, 1), (1, 2), (2, 3)]);
        let b = g(4, &[(0, 1), (1, 2), (2, 3)]).with_features(Tensor::full(4, 1, 7.0)).unwrap();
        let wa = sample_egonet(&a, 1, 3, 0).unwrap();
        let wb = sample_egonet(&b, 1, 3, 5).unwrap();
        assert_eq!(wa.adjacency_hash(), wb.adjacency_hash());
        let wc = sample_egonet(&a, 0, 3, 0).unwrap();
        // 0-1-2 path vs 1-{0,2} star: same induced structure up to order, different layout.
        assert_ne!(wa.adj, wc.adj);
        assert_ne!(wa.adjacency_hash(), wc.adjacency_hash());
    }
}
