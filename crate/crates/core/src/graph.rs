//! Oriented graphs, incidence matrices and the weighted Laplacian.
//!
//! Node indices are 0-based here; scenario files use 1-based indices and are
//! converted by [`Graph::from_one_based`].

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PINV_REL_TOL};

/// An oriented graph with a fixed edge ordering. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from 0-based `(tail, head)` pairs.
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::InvalidGraph("node count must be positive".into()));
        }
        for (k, &(tail, head)) in edges.iter().enumerate() {
            if tail >= node_count || head >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge {} references node outside 1..={}",
                    k + 1,
                    node_count
                )));
            }
            if tail == head {
                return Err(Error::InvalidGraph(format!(
                    "edge {} is a self-loop at node {}",
                    k + 1,
                    tail + 1
                )));
            }
        }
        Ok(Self { node_count, edges })
    }

    /// Builds a graph from 1-based `[tail, head]` pairs as written in scenario files.
    pub fn from_one_based(node_count: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let converted = edges
            .iter()
            .enumerate()
            .map(|(k, &[t, h])| {
                if t == 0 || h == 0 {
                    Err(Error::InvalidGraph(format!(
                        "edge {} uses node index 0; indices are 1-based",
                        k + 1
                    )))
                } else {
                    Ok((t - 1, h - 1))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(node_count, converted)
    }

    /// Ring 0→1→…→n-1→0.
    pub fn ring(n: usize) -> Self {
        let edges = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::new(n, edges).expect("ring with n >= 3 is valid")
    }

    pub fn path(n: usize) -> Self {
        let edges = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        Self::new(n, edges).expect("path is valid")
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Self::new(n, edges).expect("complete graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Incidence matrix: `+1` at the tail, `-1` at the head of each edge.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.node_count, self.edges.len());
        for (k, &(tail, head)) in self.edges.iter().enumerate() {
            b[(tail, k)] = 1.0;
            b[(head, k)] = -1.0;
        }
        b
    }

    /// Kronecker lift `B ⊗ I_p`.
    pub fn incidence_lifted(&self, p: usize) -> DMatrix<f64> {
        linalg::kron(&self.incidence(), &DMatrix::identity(p, p))
    }

    /// Connectivity of the underlying undirected graph.
    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(t, h) in &self.edges {
            adj[t].push(h);
            adj[h].push(t);
        }
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.node_count
    }

    /// `L_Q = B diag(1/q) Bᵀ`.
    pub fn weighted_laplacian(&self, weights: &[f64]) -> Result<WeightedLaplacian> {
        if weights.len() != self.edge_count() {
            return Err(Error::InvalidWeights(format!(
                "expected {} weights, got {}",
                self.edge_count(),
                weights.len()
            )));
        }
        if let Some((k, q)) = weights
            .iter()
            .enumerate()
            .find(|(_, q)| !(q.is_finite() && **q > 0.0))
        {
            return Err(Error::InvalidWeights(format!(
                "weight {} is {q}, must be positive",
                k + 1
            )));
        }
        let mut l = DMatrix::zeros(self.node_count, self.node_count);
        for (&(t, h), &q) in self.edges.iter().zip(weights) {
            let g = 1.0 / q;
            l[(t, t)] += g;
            l[(h, h)] += g;
            l[(t, h)] -= g;
            l[(h, t)] -= g;
        }
        Ok(WeightedLaplacian {
            matrix: l,
            weights: weights.to_vec(),
        })
    }

    pub fn unit_laplacian(&self) -> WeightedLaplacian {
        self.weighted_laplacian(&vec![1.0; self.edge_count()])
            .expect("unit weights are valid")
    }

    /// Orthogonal projection of an edge vector onto the circulation space `N(B)`.
    pub fn project_circulation(&self, v: &DVector<f64>) -> DVector<f64> {
        let b = self.incidence();
        let (l_pinv, _) = linalg::sym_pinv(&(&b * b.transpose()), PINV_REL_TOL);
        v - b.transpose() * (l_pinv * (&b * v))
    }

    /// The matrix of [`Graph::project_circulation`], `I - B†B`.
    pub fn circulation_projector(&self) -> DMatrix<f64> {
        let b = self.incidence();
        let (l_pinv, _) = linalg::sym_pinv(&(&b * b.transpose()), PINV_REL_TOL);
        DMatrix::identity(self.edge_count(), self.edge_count()) - b.transpose() * l_pinv * b
    }
}

/// Weighted Laplacian together with the edge weights it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLaplacian {
    pub matrix: DMatrix<f64>,
    pub weights: Vec<f64>,
}

impl WeightedLaplacian {
    /// Moore–Penrose pseudoinverse. Fails unless the rank is exactly `n - 1`.
    pub fn pinv(&self) -> Result<DMatrix<f64>> {
        let n = self.matrix.nrows();
        let (pinv, rank) = linalg::sym_pinv(&self.matrix, PINV_REL_TOL);
        let expected = n - 1;
        if rank != expected {
            return Err(Error::RankDeficient { rank, expected });
        }
        Ok(pinv)
    }
}

pub fn laplacian_pinv(l: &WeightedLaplacian) -> Result<DMatrix<f64>> {
    l.pinv()
}
