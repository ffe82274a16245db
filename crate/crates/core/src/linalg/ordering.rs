use std::collections::VecDeque;

use super::SparseMatrix;

/// Reverse Cuthill–McKee ordering. Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &SparseMatrix) -> Vec<usize> {
    rcm_excluding(a, &[])
}

/// RCM on the graph with the listed rows (and their edges) removed; the
/// excluded indices are not part of the returned ordering.
pub fn rcm_excluding(a: &SparseMatrix, excluded: &[usize]) -> Vec<usize> {
    let n = a.n_rows();
    let mut adj = a.adjacency();
    let mut skip = vec![false; n];
    for &e in excluded {
        skip[e] = true;
    }
    for row in &mut adj {
        row.retain(|&j| !skip[j]);
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let mut visited = skip.clone();
    let mut order = Vec::with_capacity(n);
    while let Some(seed) = (0..n).filter(|&i| !visited[i]).min_by_key(|&i| degree[i]) {
        let start = pseudo_peripheral(&adj, &degree, &skip, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], skip: &[bool], root: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[root] = Some(0);
    let mut queue = VecDeque::from([root]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].unwrap_or(0);
        for &w in &adj[v] {
            if !skip[w] && level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], skip: &[bool], seed: usize) -> usize {
    let mut root = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(adj, skip, root);
        let depth = level.iter().flatten().copied().max().unwrap_or(0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        let far = (0..adj.len()).filter(|&i| level[i] == Some(depth)).min_by_key(|&i| degree[i]).unwrap_or(root);
        if far == root {
            break;
        }
        root = far;
    }
    root
}

/// Inverse of a permutation given as `perm[new] = old`.
pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// Lower and upper bandwidth of `P A Pᵀ` for `perm[new] = old`.
pub fn bandwidths(a: &SparseMatrix, perm: &[usize]) -> (usize, usize) {
    let inv = invert(perm);
    let (mut kl, mut ku) = (0, 0);
    for i in 0..a.n_rows() {
        let (cols, _) = a.row(i);
        for &j in cols {
            let (pi, pj) = (inv[i], inv[j]);
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
        }
    }
    (kl, ku)
}
