#![allow(dead_code)]

use pamtree::graph::RootedGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random recursive tree on `n` vertices rooted at 0.
pub fn random_tree<R: Rng>(n: usize, rng: &mut R) -> RootedGraph {
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    RootedGraph::from_edges(n, &edges, 0).unwrap()
}

/// Random tree plus `extra` random chords.
pub fn random_connected<R: Rng>(n: usize, extra: usize, rng: &mut R) -> RootedGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    for _ in 0..extra {
        let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
        if u != v && !edges.contains(&(u.min(v), u.max(v))) && !edges.contains(&(u.max(v), u.min(v))) {
            edges.push((u.min(v), u.max(v)));
        }
    }
    RootedGraph::from_edges(n, &edges, 0).unwrap()
}

pub fn path_graph(n: usize) -> RootedGraph {
    let e: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    RootedGraph::from_edges(n, &e, 0).unwrap()
}

pub fn k2() -> RootedGraph {
    path_graph(2)
}

pub fn single() -> RootedGraph {
    RootedGraph::from_edges(1, &[], 0).unwrap()
}

/// Applies a permutation to the labels, keeping the root's image as root.
pub fn relabel(g: &RootedGraph, perm: &[usize]) -> RootedGraph {
    let edges: Vec<(usize, usize)> = g.edges().map(|(u, v)| (perm[u], perm[v])).collect();
    RootedGraph::from_edges(g.n(), &edges, perm[g.root()]).unwrap()
}
