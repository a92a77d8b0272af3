//! Fill-reducing ordering for sparse Cholesky.
//!
//! Minimum degree on the explicit elimination graph. Ties are broken by the
//! lowest node index so the ordering is a deterministic function of the pattern.

use std::collections::BTreeSet;

/// Returns `perm` with `perm[new] = old`.
pub fn minimum_degree(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut adj: Vec<BTreeSet<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, a)| a.iter().copied().filter(|&j| j != i).collect())
        .collect();
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut perm = Vec::with_capacity(n);
    while let Some((_, p)) = queue.pop_first() {
        perm.push(p);
        let nbrs: Vec<usize> = adj[p].iter().copied().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&p);
        }
        // eliminated node's neighbours become a clique
        for (a, &u) in nbrs.iter().enumerate() {
            for &v in &nbrs[a + 1..] {
                adj[u].insert(v);
                adj[v].insert(u);
            }
        }
        for &u in &nbrs {
            queue.insert((adj[u].len(), u));
        }
        adj[p].clear();
    }
    perm
}

/// Number of nonzeros in the Cholesky factor (diagonal included) produced by
/// eliminating in `perm` order. Used to compare orderings in tests.
pub fn fill_count(adjacency: &[Vec<usize>], perm: &[usize]) -> usize {
    let n = adjacency.len();
    let mut pos = vec![0usize; n];
    for (k, &p) in perm.iter().enumerate() {
        pos[p] = k;
    }
    let mut adj: Vec<BTreeSet<usize>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, a)| a.iter().map(|&j| pos[j]).filter(|&j| j != pos[i]).collect())
        .collect();
    let mut permuted: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, s) in adj.drain(..).enumerate() {
        permuted[pos[i]] = s;
    }
    let mut total = 0;
    for k in 0..n {
        let later: Vec<usize> = permuted[k].iter().copied().filter(|&j| j > k).collect();
        total += later.len() + 1;
        for (a, &u) in later.iter().enumerate() {
            for &v in &later[a + 1..] {
                permuted[u].insert(v);
                permuted[v].insert(u);
            }
        }
    }
    total
}
