//! Dense binary networks.
//!
//! Both observation times of the evolving network (`G⁻` before the treatment
//! period, `G⁺` after it) are [`Graph`] values over the same unit set.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Binary adjacency over `n` units. No self-loops; undirected graphs keep
/// the full symmetric matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    directed: bool,
    adj: Vec<bool>,
}

impl Graph {
    pub fn empty(n: usize, directed: bool) -> Self {
        Graph { n, directed, adj: vec![false; n * n] }
    }

    pub fn complete(n: usize, directed: bool) -> Self {
        let mut g = Graph::empty(n, directed);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g.adj[i * n + j] = true;
                }
            }
        }
        g
    }

    pub fn from_edges(n: usize, directed: bool, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Graph::empty(n, directed);
        for &(i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// Adds `i → j` (and `j → i` when undirected).
    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return Err(Error::arg(format!("self-loop at unit {i}")));
        }
        self.set(i, j);
        Ok(())
    }

    /// Unchecked insert for samplers that already validated indices.
    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize) {
        self.adj[i * self.n + j] = true;
        if !self.directed {
            self.adj[j * self.n + i] = true;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    /// Row sum of unit `i` (out-degree for directed graphs).
    pub fn degree(&self, i: usize) -> Result<usize> {
        self.check_index(i)?;
        Ok(self.row(i).iter().filter(|&&e| e).count())
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.row(i).iter().filter(|&&e| e).count()).collect()
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.adj[i * self.n..(i + 1) * self.n]
    }

    /// Edges as `(i, j)` pairs; undirected edges are listed once with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        let directed = self.directed;
        (0..n).flat_map(move |i| {
            let start = if directed { 0 } else { i + 1 };
            (start..n).filter(move |&j| self.has_edge(i, j)).map(move |j| (i, j))
        })
    }

    pub fn edge_count(&self) -> usize {
        self.edges().count()
    }

    /// Dyads a model may still switch on: non-edges of `self`, one entry per
    /// unordered pair when undirected.
    pub fn free_dyads(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        let mut out = Vec::new();
        for i in 0..n {
            let start = if self.directed { 0 } else { i + 1 };
            for j in start..n {
                if i != j && !self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::arg(format!("unit index {i} out of range for n = {}", self.n)));
        }
        Ok(())
    }

    /// Writes the edge-list text format: a `n <N> directed <0|1>` header and
    /// one `i j` line per edge, 0-indexed.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n {} directed {}\n", self.n, u8::from(self.directed));
        for (i, j) in self.edges() {
            writeln!(out, "{i} {j}").unwrap();
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (n, directed) = match fields.as_slice() {
            ["n", n, "directed", d] => {
                let n: usize = n.parse().map_err(|_| Error::parse(hl, "bad unit count"))?;
                let d = match *d {
                    "0" => false,
                    "1" => true,
                    _ => return Err(Error::parse(hl, "directed flag must be 0 or 1")),
                };
                (n, d)
            }
            _ => return Err(Error::parse(hl, "expected `n <N> directed <0|1>`")),
        };
        if n == 0 {
            return Err(Error::parse(hl, "unit count must be positive"));
        }
        let mut g = Graph::empty(n, directed);
        for (ln, line) in lines {
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::parse(ln, "expected `i j`"));
            };
            let i: usize = a.parse().map_err(|_| Error::parse(ln, "bad index"))?;
            let j: usize = b.parse().map_err(|_| Error::parse(ln, "bad index"))?;
            g.add_edge(i, j).map_err(|e| Error::parse(ln, e.to_string()))?;
        }
        Ok(g)
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        Graph::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn write_edge_list(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

/// Checks that both graphs share `n` and directedness and that `g_plus`
/// keeps every edge of `g_minus`.
pub fn check_supergraph(g_minus: &Graph, g_plus: &Graph) -> Result<()> {
    if g_minus.n != g_plus.n {
        return Err(Error::DimensionMismatch { expected: g_minus.n, found: g_plus.n });
    }
    if g_minus.directed != g_plus.directed {
        return Err(Error::arg("graphs differ in directedness"));
    }
    for (i, j) in g_minus.edges() {
        if !g_plus.has_edge(i, j) {
            return Err(Error::SupergraphViolation { i, j });
        }
    }
    Ok(())
}

/// New edges only: `G⁺ \ G⁻`.
pub fn edge_diff(g_minus: &Graph, g_plus: &Graph) -> Result<Graph> {
    check_supergraph(g_minus, g_plus)?;
    let adj = g_plus.adj.iter().zip(&g_minus.adj).map(|(&p, &m)| p && !m).collect();
    Ok(Graph { n: g_plus.n, directed: g_plus.directed, adj })
}
