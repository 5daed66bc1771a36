//! Undirected network topologies: Barabási–Albert generation, adjacency
//! matrix ingestion and neighbor queries.
//!
//! Neighbor lists are stored in compressed (CSR) form. Every directed edge
//! `u -> v` has a stable [`EdgeId`] equal to its slot in the flattened
//! neighbor array, which the engine uses to index per-edge statistics.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Index of a directed edge `u -> v` in the flattened adjacency array.
pub type EdgeId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("invalid Barabási–Albert parameters n={n}, m={m}: need n > m >= 1")]
    InvalidParameters { n: usize, m: usize },
    #[error("a network needs at least two nodes, got {nodes}")]
    TooFewNodes { nodes: usize },
    #[error("adjacency matrix is empty")]
    EmptyMatrix,
    #[error("adjacency matrix is not square: row {row} has {found} entries, expected {expected}")]
    NotSquare {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-binary entry {token:?} at ({row}, {col})")]
    NonBinary {
        row: usize,
        col: usize,
        token: String,
    },
    #[error("adjacency matrix is asymmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("self-loop on node {node}")]
    SelfLoop { node: usize },
    #[error("duplicate edge {a}-{b}")]
    DuplicateEdge { a: usize, b: usize },
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("node index {node} out of range (node count {node_count})")]
    NodeOutOfRange { node: usize, node_count: usize },
}

/// Immutable, connected, simple undirected graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl NetworkTopology {
    /// Builds a topology from an undirected edge list, enforcing every
    /// structural invariant (no self-loops, no duplicates, connected).
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, TopologyError> {
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= node_count {
                    return Err(TopologyError::NodeOutOfRange { node, node_count });
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop { node: a });
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        Self::from_adjacency(adjacency)
    }

    fn from_adjacency(mut adjacency: Vec<Vec<usize>>) -> Result<Self, TopologyError> {
        if adjacency.is_empty() {
            return Err(TopologyError::EmptyMatrix);
        }
        if adjacency.len() < 2 {
            return Err(TopologyError::TooFewNodes {
                nodes: adjacency.len(),
            });
        }
        for (node, list) in adjacency.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(TopologyError::DuplicateEdge {
                    a: node.min(w[0]),
                    b: node.max(w[0]),
                });
            }
        }
        let mut offsets = Vec::with_capacity(adjacency.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for list in &adjacency {
            targets.extend_from_slice(list);
            offsets.push(targets.len());
        }
        let topology = NetworkTopology { offsets, targets };
        let components = topology.component_count();
        if components != 1 {
            return Err(TopologyError::Disconnected { components });
        }
        Ok(topology)
    }

    /// Barabási–Albert preferential attachment.
    ///
    /// Starts from a complete graph on `m + 1` nodes; every later node links
    /// to `m` distinct existing nodes picked with probability proportional to
    /// their current degree (resampling on repeats).
    pub fn generate_ba(n: usize, m: usize, seed: u64) -> Result<Self, TopologyError> {
        if m == 0 || n <= m {
            return Err(TopologyError::InvalidParameters { n, m });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
        // Each edge contributes both endpoints, so a uniform draw from this
        // list is a degree-proportional draw over nodes.
        let mut endpoints: Vec<usize> = Vec::with_capacity(2 * (m * (m + 1) / 2 + m * (n - m - 1)));

        for a in 0..=m {
            for b in (a + 1)..=m {
                adjacency[a].push(b);
                adjacency[b].push(a);
                endpoints.push(a);
                endpoints.push(b);
            }
        }

        let mut chosen = Vec::with_capacity(m);
        for new in (m + 1)..n {
            chosen.clear();
            while chosen.len() < m {
                let target = endpoints[rng.gen_range(0..endpoints.len())];
                if !chosen.contains(&target) {
                    chosen.push(target);
                }
            }
            for &target in &chosen {
                adjacency[new].push(target);
                adjacency[target].push(new);
                endpoints.push(new);
                endpoints.push(target);
            }
        }
        Self::from_adjacency(adjacency)
    }

    /// Parses whitespace-separated 0/1 tokens, one matrix row per line.
    /// Blank lines are ignored.
    pub fn load_adjacency_matrix(text: &str) -> Result<Self, TopologyError> {
        let rows: Vec<Vec<&str>> = text
            .lines()
            .map(|line| line.split_whitespace().collect::<Vec<_>>())
            .filter(|row| !row.is_empty())
            .collect();
        let n = rows.len();
        if n == 0 {
            return Err(TopologyError::EmptyMatrix);
        }
        let mut matrix = vec![vec![false; n]; n];
        for (row, tokens) in rows.iter().enumerate() {
            if tokens.len() != n {
                return Err(TopologyError::NotSquare {
                    row,
                    expected: n,
                    found: tokens.len(),
                });
            }
            for (col, token) in tokens.iter().enumerate() {
                matrix[row][col] = match *token {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(TopologyError::NonBinary {
                            row,
                            col,
                            token: other.to_string(),
                        })
                    }
                };
            }
        }
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            if matrix[i][i] {
                return Err(TopologyError::SelfLoop { node: i });
            }
            for j in (i + 1)..n {
                if matrix[i][j] != matrix[j][i] {
                    return Err(TopologyError::Asymmetric { row: i, col: j });
                }
            }
        }
        let adjacency = matrix
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &e)| e)
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Self::from_adjacency(adjacency)
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.targets.len() / 2
    }

    /// Number of directed edges (twice the undirected count).
    pub fn directed_edge_count(&self) -> usize {
        self.targets.len()
    }

    pub fn neighbors(&self, node: usize) -> Result<&[usize], TopologyError> {
        if node >= self.node_count() {
            return Err(TopologyError::NodeOutOfRange {
                node,
                node_count: self.node_count(),
            });
        }
        Ok(self.neighbors_of(node))
    }

    /// Unchecked variant of [`neighbors`](Self::neighbors) for hot paths.
    #[inline]
    pub fn neighbors_of(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|v| self.degree(v)).collect()
    }

    /// Range of edge ids leaving `node`, aligned with `neighbors_of(node)`.
    #[inline]
    pub fn edge_range(&self, node: usize) -> std::ops::Range<EdgeId> {
        self.offsets[node]..self.offsets[node + 1]
    }

    #[inline]
    pub fn edge_target(&self, edge: EdgeId) -> usize {
        self.targets[edge]
    }

    /// Id of the directed edge `from -> to`, if the nodes are adjacent.
    pub fn edge_id(&self, from: usize, to: usize) -> Option<EdgeId> {
        if from >= self.node_count() {
            return None;
        }
        self.neighbors_of(from)
            .binary_search(&to)
            .ok()
            .map(|slot| self.offsets[from] + slot)
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.edge_id(a, b).is_some()
    }

    /// Full structural scan: symmetry, no self-loops, no duplicates.
    pub fn check_invariants(&self) -> Result<(), TopologyError> {
        for u in 0..self.node_count() {
            let list = self.neighbors_of(u);
            for (idx, &v) in list.iter().enumerate() {
                if v == u {
                    return Err(TopologyError::SelfLoop { node: u });
                }
                if idx > 0 && list[idx - 1] >= v {
                    return Err(TopologyError::DuplicateEdge {
                        a: u.min(v),
                        b: u.max(v),
                    });
                }
                if !self.are_adjacent(v, u) {
                    return Err(TopologyError::Asymmetric { row: u, col: v });
                }
            }
        }
        match self.component_count() {
            1 => Ok(()),
            components => Err(TopologyError::Disconnected { components }),
        }
    }

    pub fn component_count(&self) -> usize {
        let n = self.node_count();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors_of(u) {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    /// One `i j` line per undirected edge with `i < j`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for u in 0..self.node_count() {
            for &v in self.neighbors_of(u).iter().filter(|&&v| v > u) {
                let _ = writeln!(out, "{u} {v}");
            }
        }
        out
    }

    /// Serializes to the same 0/1 matrix format accepted by
    /// [`load_adjacency_matrix`](Self::load_adjacency_matrix).
    pub fn to_adjacency_matrix(&self) -> String {
        let n = self.node_count();
        let mut out = String::with_capacity(n * n * 2);
        for u in 0..n {
            let mut row = vec!["0"; n];
            for &v in self.neighbors_of(u) {
                row[v] = "1";
            }
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}
