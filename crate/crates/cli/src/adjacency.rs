//! Undirected adjacency files: the node count on the first line, then one
//! 0-indexed edge `i j` per line.

use std::collections::BTreeSet;
use std::path::Path;

use gmrfmi::gmrf::adjacency_from_edges;
use gmrfmi::sparse::SparsePrecision;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyFile {
    pub n: usize,
    /// Edges with `i < j`, in file order.
    pub edges: Vec<(usize, usize)>,
}

impl AdjacencyFile {
    pub fn matrix(&self) -> Result<SparsePrecision> {
        Ok(adjacency_from_edges(self.n, &self.edges)?)
    }

    pub fn neighbours(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.edges.iter().filter_map(|&(a, b)| if a == i { Some(b) } else if b == i { Some(a) } else { None }).collect();
        out.sort_unstable();
        out
    }
}

pub fn load_adjacency(path: &Path) -> Result<AdjacencyFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    parse_adjacency(&text, path)
}

pub fn parse_adjacency(text: &str, path: &Path) -> Result<AdjacencyFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
    let (first_line, first) = lines.next().ok_or_else(|| CliError::parse(path, 1, 1, "empty adjacency file"))?;
    let n: usize = first
        .trim()
        .parse()
        .map_err(|_| CliError::parse(path, first_line + 1, 1, format!("`{}` is not a node count", first.trim())))?;
    if n == 0 {
        return Err(CliError::parse(path, first_line + 1, 1, "node count must be positive"));
    }
    let mut seen = BTreeSet::new();
    let mut edges = Vec::new();
    for (k, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(CliError::parse(path, k + 1, 1, format!("expected `i j`, found `{}`", line.trim())));
        }
        let mut idx = [0usize; 2];
        for (c, f) in fields.iter().enumerate() {
            idx[c] = f
                .parse()
                .map_err(|_| CliError::parse(path, k + 1, c + 1, format!("`{f}` is not a node index")))?;
            if idx[c] >= n {
                return Err(CliError::parse(path, k + 1, c + 1, format!("node {} is out of range for n = {n}", idx[c])));
            }
        }
        let (a, b) = (idx[0].min(idx[1]), idx[0].max(idx[1]));
        if a == b {
            return Err(CliError::parse(path, k + 1, 1, format!("self-loop at node {a}")));
        }
        if !seen.insert((a, b)) {
            return Err(CliError::parse(path, k + 1, 1, format!("duplicate edge {a} {b}")));
        }
        edges.push((a, b));
    }
    Ok(AdjacencyFile { n, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(t: &str) -> Result<AdjacencyFile> {
        parse_adjacency(t, Path::new("g.adj"))
    }

    #[test]
    fn parses_edges() {
        let a = parse("3\n0 1\n2 1\n").unwrap();
        assert_eq!(a.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(a.neighbours(1), vec![0, 2]);
        assert_eq!(a.matrix().unwrap().get(0, 1), 1.0);
    }

    #[test]
    fn rejects_invalid_graphs() {
        assert!(parse("").is_err());
        assert!(parse("3\n1 1\n").is_err());
        assert!(parse("3\n0 1\n1 0\n").is_err());
        assert!(parse("3\n0 3\n").is_err());
        assert!(parse("3\n0\n").is_err());
    }
}
