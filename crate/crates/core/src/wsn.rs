//! Sensor-network topology.
//!
//! Node ids are 0-based in the API; configs, reports and violation messages
//! use 1-based ids.

use std::fmt;

use crate::error::{Error, Result};

/// Undirected communication graph with self-edges (`a_nn = 1`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<u8>>,
}

/// A structural problem found by [`Topology::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NotSquare { row: usize, len: usize },
    NonBinary { m: usize, n: usize, value: u8 },
    Asymmetric { m: usize, n: usize },
    MissingSelfEdge { n: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSquare { row, len } => {
                write!(f, "row {} has {len} entries", row + 1)
            }
            Violation::NonBinary { m, n, value } => {
                write!(f, "a_mn = {value} is not binary at ({}, {})", m + 1, n + 1)
            }
            Violation::Asymmetric { m, n } => {
                write!(f, "a_mn ≠ a_nm at ({}, {})", m + 1, n + 1)
            }
            Violation::MissingSelfEdge { n } => write!(f, "missing self-edge at {}", n + 1),
        }
    }
}

/// Edge list of the built-in ten-node network (1-based).
///
/// Node 4 neighbours {3, 5, 6}; degrees counting the self-edge are
/// [2, 2, 3, 4, 3, 3, 4, 4, 2, 1].
pub const PAPER10_EDGES: [(usize, usize); 9] = [
    (1, 2),
    (3, 4),
    (4, 5),
    (4, 6),
    (3, 7),
    (6, 7),
    (5, 8),
    (7, 8),
    (8, 9),
];

impl Topology {
    /// Wraps a raw adjacency matrix without checking it; see [`Topology::validate`].
    pub fn from_adjacency_unchecked(adjacency: Vec<Vec<u8>>) -> Self {
        Self { adjacency }
    }

    /// Validated construction from a raw adjacency matrix.
    pub fn from_adjacency(adjacency: Vec<Vec<u8>>) -> Result<Self> {
        let topo = Self { adjacency };
        let violations = topo.validate();
        if violations.is_empty() {
            Ok(topo)
        } else {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            Err(Error::Input(format!(
                "invalid topology: {}",
                msg.join("; ")
            )))
        }
    }

    /// Undirected graph over `node_count` nodes from 1-based edge pairs.
    /// Self-edges are implied.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::Input("topology needs at least one node".into()));
        }
        let mut adjacency = vec![vec![0u8; node_count]; node_count];
        for (i, row) in adjacency.iter_mut().enumerate() {
            row[i] = 1;
        }
        for &(a, b) in edges {
            if a == 0 || b == 0 || a > node_count || b > node_count {
                return Err(Error::Input(format!(
                    "edge ({a}, {b}) references a node outside 1..={node_count}"
                )));
            }
            adjacency[a - 1][b - 1] = 1;
            adjacency[b - 1][a - 1] = 1;
        }
        Ok(Self { adjacency })
    }

    /// The built-in ten-node network.
    pub fn paper10() -> Self {
        Self::from_edges(10, &PAPER10_EDGES).expect("built-in edges are valid")
    }

    /// `count` nodes with no links.
    pub fn isolated(count: usize) -> Result<Self> {
        Self::from_edges(count, &[])
    }

    pub fn fully_connected(count: usize) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (1..=count)
            .flat_map(|a| ((a + 1)..=count).map(move |b| (a, b)))
            .collect();
        Self::from_edges(count, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn adjacency(&self) -> &[Vec<u8>] {
        &self.adjacency
    }

    fn check(&self, n: usize) -> Result<()> {
        if n < self.node_count() {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange {
                node: n,
                count: self.node_count(),
            })
        }
    }

    /// Number of edges at `n`, including the self-edge.
    pub fn degree(&self, n: usize) -> Result<usize> {
        self.check(n)?;
        Ok(self.adjacency[n].iter().filter(|&&a| a == 1).count())
    }

    /// Ascending ids `m` with `a_mn = 1`, including `n` itself.
    pub fn neighbors(&self, n: usize) -> Result<Vec<usize>> {
        self.check(n)?;
        Ok((0..self.node_count())
            .filter(|&m| self.adjacency[m][n] == 1)
            .collect())
    }

    /// Neighbours of `n` excluding `n`.
    pub fn others(&self, n: usize) -> Result<Vec<usize>> {
        Ok(self.neighbors(n)?.into_iter().filter(|&m| m != n).collect())
    }

    /// All structural violations; empty when the topology is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let count = self.node_count();
        let mut out = Vec::new();
        for (row, r) in self.adjacency.iter().enumerate() {
            if r.len() != count {
                out.push(Violation::NotSquare { row, len: r.len() });
            }
        }
        if !out.is_empty() {
            return out;
        }
        for m in 0..count {
            for n in 0..count {
                let v = self.adjacency[m][n];
                if v > 1 {
                    out.push(Violation::NonBinary { m, n, value: v });
                }
            }
        }
        for m in 0..count {
            for n in (m + 1)..count {
                if self.adjacency[m][n] != self.adjacency[n][m] {
                    out.push(Violation::Asymmetric { m, n });
                }
            }
        }
        for n in 0..count {
            if self.adjacency[n][n] != 1 {
                out.push(Violation::MissingSelfEdge { n });
            }
        }
        out
    }
}
