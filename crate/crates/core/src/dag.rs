//! Directed acyclic graphs over named variables.
//!
//! A [`Dag`] is validated on construction (unique names, known endpoints, no
//! cycles) and is immutable afterwards. Topological order breaks ties by the
//! declared node order, so factorizations built from it are reproducible.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{Error, Result};

/// Canonical variable names. Matrices downstream are laid out in this order.
pub const THETA: &str = "theta";
pub const ACTION: &str = "a";
pub const X: &str = "x";
pub const Y: &str = "y";

pub const CANONICAL_ORDER: [&str; 4] = [THETA, ACTION, X, Y];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    nodes: Vec<String>,
    /// (cause, effect) as indices into `nodes`, sorted and deduplicated.
    edges: Vec<(usize, usize)>,
    order: Vec<usize>,
}

impl Dag {
    /// Builds and validates a DAG.
    pub fn new<N, E>(nodes: N, edges: E) -> Result<Self>
    where
        N: IntoIterator,
        N::Item: Into<String>,
        E: IntoIterator<Item = (String, String)>,
    {
        let nodes: Vec<String> = nodes.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for n in &nodes {
            if !seen.insert(n.as_str()) {
                return Err(Error::DuplicateNode(n.clone()));
            }
        }
        let index = |name: &str| {
            nodes
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownNode(name.to_string()))
        };
        let mut idx_edges = BTreeSet::new();
        for (cause, effect) in edges {
            idx_edges.insert((index(&cause)?, index(&effect)?));
        }
        let edges: Vec<(usize, usize)> = idx_edges.into_iter().collect();
        let order = kahn_order(nodes.len(), &edges).map_err(|i| Error::Cycle(nodes[i].clone()))?;
        Ok(Dag {
            nodes,
            edges,
            order,
        })
    }

    /// Convenience constructor from string slices.
    pub fn from_names(nodes: &[&str], edges: &[(&str, &str)]) -> Result<Self> {
        Dag::new(
            nodes.iter().copied(),
            edges.iter().map(|(c, e)| (c.to_string(), e.to_string())),
        )
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    /// Edges as (cause, effect) name pairs, in sorted index order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.edges
            .iter()
            .map(|&(c, e)| (self.nodes[c].as_str(), self.nodes[e].as_str()))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.iter().any(|n| n == node)
    }

    pub fn has_edge(&self, cause: &str, effect: &str) -> bool {
        self.edges().any(|(c, e)| c == cause && e == effect)
    }

    /// Parents of `node`, listed in declared node order.
    pub fn parents(&self, node: &str) -> Result<Vec<&str>> {
        let target = self
            .nodes
            .iter()
            .position(|n| n == node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))?;
        let mut parents: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(_, e)| e == target)
            .map(|&(c, _)| c)
            .collect();
        parents.sort_unstable();
        Ok(parents
            .into_iter()
            .map(|i| self.nodes[i].as_str())
            .collect())
    }

    pub fn topological_order(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.nodes[i].as_str()).collect()
    }

    /// Parses the plain-text edge-list format.
    ///
    /// One `cause -> effect` per line. Blank lines and `#` comments are
    /// ignored. An optional `nodes: a, b, c` line fixes the declared order;
    /// otherwise nodes are declared in order of first appearance. A line with
    /// a bare name declares an isolated node.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut nodes: Vec<String> = Vec::new();
        let mut explicit_nodes = false;
        let mut edges = Vec::new();
        let declare = |name: &str, nodes: &mut Vec<String>| {
            if !nodes.iter().any(|n| n == name) {
                nodes.push(name.to_string());
            }
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(list) = line.strip_prefix("nodes:") {
                if explicit_nodes || !nodes.is_empty() {
                    return Err(Error::parse(
                        i + 1,
                        "`nodes:` must come first and only once",
                    ));
                }
                explicit_nodes = true;
                for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    if nodes.iter().any(|n| n == name) {
                        return Err(Error::DuplicateNode(name.to_string()));
                    }
                    nodes.push(name.to_string());
                }
                continue;
            }
            match line.split_once("->") {
                Some((c, e)) => {
                    let (c, e) = (c.trim(), e.trim());
                    if c.is_empty() || e.is_empty() || e.contains("->") {
                        return Err(Error::parse(i + 1, format!("malformed edge `{line}`")));
                    }
                    if !explicit_nodes {
                        declare(c, &mut nodes);
                        declare(e, &mut nodes);
                    }
                    edges.push((c.to_string(), e.to_string()));
                }
                None => {
                    if line.split_whitespace().count() != 1 {
                        return Err(Error::parse(
                            i + 1,
                            format!("expected `cause -> effect`, got `{line}`"),
                        ));
                    }
                    if !explicit_nodes {
                        declare(line, &mut nodes);
                    }
                }
            }
        }
        Dag::new(nodes, edges)
    }

    /// Renders the edge-list format accepted by [`Dag::parse_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("nodes: {}\n", self.nodes.join(", "));
        for (c, e) in self.edges() {
            out.push_str(&format!("{c} -> {e}\n"));
        }
        out
    }
}

impl fmt::Display for Dag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<String> = self.edges().map(|(c, e)| format!("{c}->{e}")).collect();
        write!(f, "{{{}}}", edges.join(", "))
    }
}

/// Kahn's algorithm, always taking the lowest-indexed ready node.
/// On failure returns the index of some node on a cycle.
fn kahn_order(n: usize, edges: &[(usize, usize)]) -> std::result::Result<Vec<usize>, usize> {
    let mut indegree = vec![0usize; n];
    for &(_, e) in edges {
        indegree[e] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(next) = ready.pop_first() {
        order.push(next);
        for &(c, e) in edges {
            if c == next {
                indegree[e] -= 1;
                if indegree[e] == 0 {
                    ready.insert(e);
                }
            }
        }
    }
    if order.len() == n {
        Ok(order)
    } else {
        Err((0..n).find(|&i| indegree[i] > 0).unwrap_or(0))
    }
}
