use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Undirected graph with node features and class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    adj: Vec<u8>,
    neighbors: Vec<Vec<usize>>,
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    /// Free-form record of how the graph was produced.
    pub provenance: String,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Each pair may be listed once
    /// in either orientation; duplicates collapse.
    pub fn from_edges(
        n: usize,
        edges: &[(usize, usize)],
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut adj = vec![0u8; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Invalid(format!("edge ({i},{j}) out of range for n={n}")));
            }
            if i == j {
                return Err(Error::Invalid(format!("self-loop on diagonal at node {i}")));
            }
            adj[i * n + j] = 1;
            adj[j * n + i] = 1;
        }
        Self::from_dense(n, adj, features, labels, num_classes)
    }

    pub fn from_dense(n: usize, adj: Vec<u8>, features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if adj.len() != n * n {
            return Err(Error::Invalid("adjacency size does not match n".into()));
        }
        for i in 0..n {
            if adj[i * n + i] != 0 {
                return Err(Error::Invalid(format!("diagonal entry set at node {i}")));
            }
            for j in 0..i {
                if adj[i * n + j] != adj[j * n + i] {
                    return Err(Error::Invalid(format!("asymmetric adjacency at ({i},{j})")));
                }
                if adj[i * n + j] > 1 {
                    return Err(Error::Invalid("adjacency entries must be 0/1".into()));
                }
            }
        }
        if features.rows() != n {
            return Err(Error::Invalid(format!("features have {} rows, n={n}", features.rows())));
        }
        if !features.is_finite() {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        if labels.len() != n {
            return Err(Error::Invalid("label vector length differs from n".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Invalid(format!("label {bad} out of range for C={num_classes}")));
        }
        let neighbors = (0..n).map(|i| (0..n).filter(|&j| adj[i * n + j] == 1).collect()).collect();
        Ok(Self { n, adj, neighbors, features, labels, num_classes, provenance: String::new() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j] == 1
    }

    /// Flat row-major 0/1 adjacency.
    pub fn adjacency(&self) -> &[u8] {
        &self.adj
    }

    /// Sorted neighbour ids.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Edges with i < j, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for &j in &self.neighbors[i] {
                if j > i {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Copy with replaced features (same structure and labels).
    pub fn with_features(&self, features: Tensor) -> Result<Self> {
        if features.rows() != self.n {
            return Err(Error::Invalid("feature rows must equal n".into()));
        }
        let mut g = self.clone();
        g.features = features;
        Ok(g)
    }

    /// Nodes within `hops` of `v`, including `v`, ascending.
    pub fn khop(&self, v: usize, hops: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        seen[v] = true;
        let mut frontier = vec![v];
        for _ in 0..hops {
            let mut next = Vec::new();
            for &u in &frontier {
                for &w in &self.neighbors[u] {
                    if !seen[w] {
                        seen[w] = true;
                        next.push(w);
                    }
                }
            }
            frontier = next;
        }
        (0..self.n).filter(|&i| seen[i]).collect()
    }

    /// Induced subgraph on `nodes` (in the given order).
    pub fn induced(&self, nodes: &[usize]) -> Result<Self> {
        let k = nodes.len();
        let mut adj = vec![0u8; k * k];
        for (a, &i) in nodes.iter().enumerate() {
            for (b, &j) in nodes.iter().enumerate() {
                adj[a * k + b] = self.adj[i * self.n + j];
            }
        }
        let feats = Tensor::from_fn(k, self.d(), |a, c| self.features.get(nodes[a], c));
        let labels = nodes.iter().map(|&i| self.labels[i]).collect();
        Self::from_dense(k, adj, feats, labels, self.num_classes)
    }
}

/// On-disk graph format. Edges are stored once with i < j.
#[derive(Serialize, Deserialize)]
pub(crate) struct GraphFile {
    pub version: u32,
    pub n: usize,
    pub d: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub provenance: String,
}

pub const GRAPH_FORMAT_VERSION: u32 = 1;

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        GraphFile {
            version: GRAPH_FORMAT_VERSION,
            n: g.n,
            d: g.d(),
            c: g.num_classes,
            edges: g.edges(),
            features: (0..g.n).map(|i| g.features.row_slice(i).to_vec()).collect(),
            labels: g.labels.clone(),
            provenance: g.provenance.clone(),
        }
    }
}

impl GraphFile {
    pub fn into_graph(self) -> Result<Graph> {
        if self.version != GRAPH_FORMAT_VERSION {
            return Err(Error::Invalid(format!("unsupported graph format version {}", self.version)));
        }
        if self.features.len() != self.n || self.features.iter().any(|r| r.len() != self.d) {
            return Err(Error::Invalid(format!("features must be {}x{}", self.n, self.d)));
        }
        let feats = if self.d == 0 { Tensor::zeros(self.n, 0) } else { Tensor::from_rows(&self.features)? };
        let mut g = Graph::from_edges(self.n, &self.edges, feats, self.labels, self.c)?;
        g.provenance = self.provenance;
        Ok(g)
    }
}
