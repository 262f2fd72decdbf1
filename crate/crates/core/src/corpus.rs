//! All connected simple graphs on at most six vertices, up to isomorphism.
//!
//! The shipped list (`data/connected_graphs_le6.json`) is checked against a
//! brute-force enumeration in the tests.

use std::collections::BTreeSet;

use serde::Deserialize;

use crate::graph::RootedGraph;

const SHIPPED: &str = include_str!("../data/connected_graphs_le6.json");

#[derive(Deserialize)]
struct Entry {
    n: usize,
    edges: Vec<(usize, usize)>,
}

/// The shipped corpus, rooted at vertex 0.
pub fn small_connected_graphs() -> Vec<RootedGraph> {
    let entries: Vec<Entry> = serde_json::from_str(SHIPPED).expect("shipped corpus parses");
    entries
        .into_iter()
        .map(|e| RootedGraph::from_edges(e.n, &e.edges, 0).expect("shipped graphs are valid"))
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

fn pair_index(n: usize) -> Vec<Vec<usize>> {
    let mut idx = vec![vec![0; n]; n];
    let mut k = 0;
    for u in 0..n {
        for v in u + 1..n {
            idx[u][v] = k;
            idx[v][u] = k;
            k += 1;
        }
    }
    idx
}

/// Smallest edge bitmask over all relabellings.
pub fn canonical_mask(n: usize, edges: &[(usize, usize)]) -> u32 {
    let idx = pair_index(n);
    permutations(n)
        .iter()
        .map(|p| edges.iter().fold(0u32, |m, &(u, v)| m | 1 << idx[p[u]][p[v]]))
        .min()
        .unwrap_or(0)
}

/// Brute-force enumeration of the canonical masks of connected graphs on `n` vertices.
pub fn enumerate_connected(n: usize) -> BTreeSet<u32> {
    let idx = pair_index(n);
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
    let perms = permutations(n);
    let mut seen = BTreeSet::new();
    for mask in 0u32..(1u32 << pairs.len()) {
        let edges: Vec<(usize, usize)> =
            pairs.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &e)| e).collect();
        if !connected(n, &edges) {
            continue;
        }
        let canon = perms
            .iter()
            .map(|p| edges.iter().fold(0u32, |m, &(u, v)| m | 1 << idx[p[u]][p[v]]))
            .min()
            .unwrap();
        seen.insert(canon);
    }
    seen
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        p[x] = r;
        r
    }
    let mut comps = n;
    for &(u, v) in edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            parent[a] = b;
            comps -= 1;
        }
    }
    comps == 1
}
