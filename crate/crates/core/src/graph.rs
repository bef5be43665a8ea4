//! Immutable CSR graphs, disjoint-union batching and node relabelling.
//!
//! Every undirected edge `{i, j}` is materialized as the two arcs `i -> j`
//! and `j -> i`. Arcs are grouped by destination so that the incoming
//! neighborhood of `u` is the contiguous range
//! `csr_offsets[u]..csr_offsets[u + 1]`, sorted by source index.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("cannot batch an empty list of graphs")]
    EmptyBatch,
    #[error("permutation of length {len} does not match {num_nodes} nodes")]
    PermutationLength { len: usize, num_nodes: usize },
    #[error("permutation is not a bijection: {0} is hit twice or out of range")]
    NotBijective(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    arc_src: Vec<usize>,
    arc_dst: Vec<usize>,
    csr_offsets: Vec<usize>,
    degrees: Vec<usize>,
}

impl Graph {
    /// Builds the CSR form of an undirected simple graph.
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut canonical = Vec::with_capacity(edges.len());
        for &(i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(GraphError::NodeOutOfRange(i, j, num_nodes));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            canonical.push((i.min(j), i.max(j)));
        }
        canonical.sort_unstable();
        if let Some(w) = canonical.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        Ok(Self::from_canonical(num_nodes, &canonical))
    }

    /// `edges` must already be deduplicated with `i < j < num_nodes`.
    pub(crate) fn from_canonical(num_nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut degrees = vec![0usize; num_nodes];
        for &(i, j) in edges {
            degrees[i] += 1;
            degrees[j] += 1;
        }
        let mut csr_offsets = Vec::with_capacity(num_nodes + 1);
        csr_offsets.push(0);
        for d in &degrees {
            csr_offsets.push(csr_offsets.last().unwrap() + d);
        }
        let num_arcs = 2 * edges.len();
        let mut arc_src = vec![0usize; num_arcs];
        let mut cursor = csr_offsets[..num_nodes].to_vec();
        for &(i, j) in edges {
            arc_src[cursor[j]] = i;
            cursor[j] += 1;
            arc_src[cursor[i]] = j;
            cursor[i] += 1;
        }
        for u in 0..num_nodes {
            arc_src[csr_offsets[u]..csr_offsets[u + 1]].sort_unstable();
        }
        let mut arc_dst = Vec::with_capacity(num_arcs);
        for (u, &d) in degrees.iter().enumerate() {
            arc_dst.extend(std::iter::repeat_n(u, d));
        }
        Self {
            num_nodes,
            arc_src,
            arc_dst,
            csr_offsets,
            degrees,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_arcs(&self) -> usize {
        self.arc_src.len()
    }

    pub fn num_edges(&self) -> usize {
        self.arc_src.len() / 2
    }

    /// Source node of every arc, in CSR order.
    pub fn arc_src(&self) -> &[usize] {
        &self.arc_src
    }

    /// Destination node of every arc, in CSR order.
    pub fn arc_dst(&self) -> &[usize] {
        &self.arc_dst
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.csr_offsets
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn degree(&self, u: usize) -> usize {
        self.degrees[u]
    }

    /// Incoming neighbors of `u`, ascending.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.arc_src[self.csr_offsets[u]..self.csr_offsets[u + 1]]
    }

    pub fn arc_range(&self, u: usize) -> std::ops::Range<usize> {
        self.csr_offsets[u]..self.csr_offsets[u + 1]
    }

    /// Canonical edge list: `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .arc_src
            .iter()
            .zip(&self.arc_dst)
            .filter(|(s, d)| s < d)
            .map(|(&s, &d)| (s, d))
            .collect();
        out.sort_unstable();
        out
    }

    /// Per-arc coefficient `1 / sqrt(|N(u)| |N(v)|)` for arc `v -> u`,
    /// with degrees clamped below at 1.
    pub fn symmetric_norm(&self) -> Vec<f64> {
        self.arc_src
            .iter()
            .zip(&self.arc_dst)
            .map(|(&v, &u)| {
                let du = self.degrees[u].max(1) as f64;
                let dv = self.degrees[v].max(1) as f64;
                1.0 / (du * dv).sqrt()
            })
            .collect()
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self, GraphError> {
        check_permutation(perm, self.num_nodes)?;
        let edges: Vec<(usize, usize)> = self
            .edges()
            .into_iter()
            .map(|(i, j)| {
                let (a, b) = (perm[i], perm[j]);
                (a.min(b), a.max(b))
            })
            .collect();
        let mut edges = edges;
        edges.sort_unstable();
        Ok(Self::from_canonical(self.num_nodes, &edges))
    }
}

/// Validates that `perm` is a bijection on `0..n`.
pub fn check_permutation(perm: &[usize], n: usize) -> Result<(), GraphError> {
    if perm.len() != n {
        return Err(GraphError::PermutationLength {
            len: perm.len(),
            num_nodes: n,
        });
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(GraphError::NotBijective(p));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Disjoint union of several graphs, nodes laid out in list order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchedGraph {
    pub graph: Graph,
    /// `graph_offsets[k]` is the first node of member `k`; one trailing
    /// entry holds the total node count.
    pub graph_offsets: Vec<usize>,
    pub graph_ids: Vec<usize>,
}

impl BatchedGraph {
    pub fn new<'a, I>(graphs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = &'a Graph>,
    {
        let mut graph_offsets = vec![0];
        let mut graph_ids = Vec::new();
        let mut arc_src = Vec::new();
        let mut arc_dst = Vec::new();
        let mut csr_offsets = vec![0];
        let mut degrees = Vec::new();
        for (k, g) in graphs.into_iter().enumerate() {
            let base = *graph_offsets.last().unwrap();
            let arc_base = arc_src.len();
            arc_src.extend(g.arc_src.iter().map(|s| s + base));
            arc_dst.extend(g.arc_dst.iter().map(|d| d + base));
            csr_offsets.extend(g.csr_offsets[1..].iter().map(|o| o + arc_base));
            degrees.extend_from_slice(&g.degrees);
            graph_ids.extend(std::iter::repeat_n(k, g.num_nodes));
            graph_offsets.push(base + g.num_nodes);
        }
        if graph_offsets.len() == 1 {
            return Err(GraphError::EmptyBatch);
        }
        let graph = Graph {
            num_nodes: graph_ids.len(),
            arc_src,
            arc_dst,
            csr_offsets,
            degrees,
        };
        Ok(Self {
            graph,
            graph_offsets,
            graph_ids,
        })
    }

    pub fn num_graphs(&self) -> usize {
        self.graph_offsets.len() - 1
    }

    /// Node range owned by member `k`.
    pub fn node_range(&self, k: usize) -> std::ops::Range<usize> {
        self.graph_offsets[k]..self.graph_offsets[k + 1]
    }
}
