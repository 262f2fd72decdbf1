//! Rooted graphs, Galton-Watson trees, balls, gluing and rooted-tree isomorphism.
//!
//! Graphs are stored in compressed adjacency form with sorted neighbour lists.
//! Sampled and canonical trees number vertices in breadth-first order from the
//! root, so the root is vertex `0` and every generation is a contiguous range.
//! Glued graphs keep the numbering of their inputs (see [`glue_two`] and
//! [`glue_star`]); [`RootedGraph::relabel_bfs`] restores breadth-first order.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::invalid;
use crate::{rng, Error, Result};

const NONE: usize = usize::MAX;

/// Finitely supported law of the vertex degree `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawRepr", into = "LawRepr")]
pub struct OffspringLaw {
    degrees: Vec<usize>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LawRepr {
    support: Vec<(usize, f64)>,
}

impl TryFrom<LawRepr> for OffspringLaw {
    type Error = Error;
    fn try_from(r: LawRepr) -> Result<Self> {
        OffspringLaw::new(r.support)
    }
}

impl From<OffspringLaw> for LawRepr {
    fn from(l: OffspringLaw) -> Self {
        LawRepr { support: l.support() }
    }
}

impl OffspringLaw {
    /// Builds a law from `(degree, probability)` pairs. Probabilities must sum
    /// to one (within `1e-9`; they are renormalised), the smallest degree must
    /// be at least 2 and the mean must exceed 2.
    pub fn new(mut support: Vec<(usize, f64)>) -> Result<Self> {
        support.retain(|&(_, p)| p != 0.0);
        if support.is_empty() {
            return Err(Error::InvalidLaw("empty support".into()));
        }
        if support.iter().any(|&(_, p)| !p.is_finite() || p < 0.0) {
            return Err(Error::InvalidLaw("probabilities must be finite and non-negative".into()));
        }
        support.sort_by_key(|&(d, _)| d);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(support.len());
        for (d, p) in support {
            match merged.last_mut() {
                Some(last) if last.0 == d => last.1 += p,
                _ => merged.push((d, p)),
            }
        }
        let total: f64 = merged.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidLaw(format!("probabilities sum to {total}")));
        }
        if merged[0].0 < 2 {
            return Err(Error::InvalidLaw(format!("minimal degree {} < 2", merged[0].0)));
        }
        let degrees: Vec<usize> = merged.iter().map(|&(d, _)| d).collect();
        let probs: Vec<f64> = merged.iter().map(|&(_, p)| p / total).collect();
        let mean: f64 = degrees.iter().zip(&probs).map(|(&d, &p)| d as f64 * p).sum();
        if mean <= 2.0 {
            return Err(Error::InvalidLaw(format!("mean degree {mean} must exceed 2")));
        }
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { degrees, probs, cumulative })
    }

    /// The deterministic law `D = d` (requires `d >= 3`).
    pub fn constant(d: usize) -> Result<Self> {
        Self::new(vec![(d, 1.0)])
    }

    /// Uniform law on the given degrees.
    pub fn uniform(degrees: &[usize]) -> Result<Self> {
        let p = 1.0 / degrees.len().max(1) as f64;
        Self::new(degrees.iter().map(|&d| (d, p)).collect())
    }

    pub fn support(&self) -> Vec<(usize, f64)> {
        self.degrees.iter().copied().zip(self.probs.iter().copied()).collect()
    }

    pub fn d_min(&self) -> usize {
        self.degrees[0]
    }

    pub fn d_max(&self) -> usize {
        *self.degrees.last().unwrap()
    }

    pub fn mean(&self) -> f64 {
        self.degrees.iter().zip(&self.probs).map(|(&d, &p)| d as f64 * p).sum()
    }

    /// Volume growth rate `ln E[D]`.
    pub fn theta(&self) -> f64 {
        self.mean().ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let i = self.cumulative.iter().position(|&c| u < c).unwrap_or(self.degrees.len() - 1);
        self.degrees[i]
    }
}

/// Free-form provenance attached to a graph.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    #[serde(default)]
    pub kind: String,
    /// Generations strictly beyond this depth were not generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<OffspringLaw>,
}

/// Connected, simple, undirected graph with a distinguished root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct RootedGraph {
    offsets: Vec<usize>,
    nbrs: Vec<usize>,
    root: usize,
    dist: Vec<usize>,
    meta: GraphMeta,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    root: usize,
    adjacency: Vec<Vec<usize>>,
    #[serde(default)]
    meta: GraphMeta,
}

impl TryFrom<GraphRepr> for RootedGraph {
    type Error = Error;
    fn try_from(r: GraphRepr) -> Result<Self> {
        if r.adjacency.len() != r.n {
            return Err(Error::InvalidGraph(format!(
                "n = {} but {} adjacency lists",
                r.n,
                r.adjacency.len()
            )));
        }
        let mut g = RootedGraph::from_adjacency(r.adjacency, r.root)?;
        g.meta = r.meta;
        Ok(g)
    }
}

impl From<RootedGraph> for GraphRepr {
    fn from(g: RootedGraph) -> Self {
        GraphRepr {
            n: g.n(),
            root: g.root,
            adjacency: (0..g.n()).map(|v| g.neighbors(v).to_vec()).collect(),
            meta: g.meta,
        }
    }
}

impl RootedGraph {
    /// Validates and builds a graph from adjacency lists.
    pub fn from_adjacency(mut adj: Vec<Vec<usize>>, root: usize) -> Result<Self> {
        let n = adj.len();
        if n == 0 {
            return Err(Error::InvalidGraph("empty graph".into()));
        }
        if root >= n {
            return Err(Error::VertexOutOfRange { vertex: root, n });
        }
        for (v, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidGraph(format!("duplicate edge at vertex {v}")));
            }
            if let Some(&u) = list.iter().find(|&&u| u >= n) {
                return Err(Error::VertexOutOfRange { vertex: u, n });
            }
            if list.binary_search(&v).is_ok() {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {v}")));
            }
        }
        for v in 0..n {
            for &u in &adj[v] {
                if adj[u].binary_search(&v).is_err() {
                    return Err(Error::InvalidGraph(format!("edge {v}-{u} is not symmetric")));
                }
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut nbrs = Vec::new();
        for list in &adj {
            nbrs.extend_from_slice(list);
            offsets.push(nbrs.len());
        }
        let mut g = Self { offsets, nbrs, root, dist: Vec::new(), meta: GraphMeta::default() };
        g.dist = g.bfs_distances(root);
        if g.dist.iter().any(|&d| d == NONE) {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    /// Builds a graph from an edge list on vertices `0..n`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], root: usize) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::VertexOutOfRange { vertex: u.max(v), n });
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        Self::from_adjacency(adj, root)
    }

    /// Tree in breadth-first numbering where vertex `v` has `children[v]`
    /// children. Children of consecutive vertices receive consecutive labels.
    fn tree_from_child_counts(children: &[usize]) -> Self {
        let n = children.len();
        let mut parent = vec![NONE; n];
        let mut first_child = vec![0usize; n];
        let mut next = 1;
        for v in 0..n {
            first_child[v] = next;
            for c in next..next + children[v] {
                parent[c] = v;
            }
            next += children[v];
        }
        debug_assert_eq!(next, n);
        let mut offsets = Vec::with_capacity(n + 1);
        let mut nbrs = Vec::with_capacity(2 * n.saturating_sub(1));
        let mut dist = vec![0usize; n];
        offsets.push(0);
        for v in 0..n {
            if parent[v] != NONE {
                nbrs.push(parent[v]);
                dist[v] = dist[parent[v]] + 1;
            }
            nbrs.extend(first_child[v]..first_child[v] + children[v]);
            offsets.push(nbrs.len());
        }
        Self { offsets, nbrs, root: 0, dist, meta: GraphMeta::default() }
    }

    pub fn n(&self) -> usize {
        self.dist.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut GraphMeta {
        &mut self.meta
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.nbrs[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn num_edges(&self) -> usize {
        self.nbrs.len() / 2
    }

    pub fn is_tree(&self) -> bool {
        self.num_edges() + 1 == self.n()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Graph distance from the root.
    pub fn depth(&self, v: usize) -> usize {
        self.dist[v]
    }

    pub fn max_depth(&self) -> usize {
        self.dist.iter().copied().max().unwrap_or(0)
    }

    /// Undirected edges `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n()).flat_map(move |u| {
            self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v))
        })
    }

    pub fn check_vertex(&self, v: usize) -> Result<()> {
        if v < self.n() {
            Ok(())
        } else {
            Err(Error::VertexOutOfRange { vertex: v, n: self.n() })
        }
    }

    /// Breadth-first distances from `source`; unreachable vertices get `usize::MAX`.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let n = self.offsets.len() - 1;
        let mut dist = vec![NONE; n];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == NONE {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Relabels vertices in breadth-first order from the root (neighbours
    /// visited in increasing label order). Returns the new graph and the map
    /// `old label -> new label`.
    pub fn relabel_bfs(&self) -> (RootedGraph, Vec<usize>) {
        let n = self.n();
        let mut new_of = vec![NONE; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::new();
        new_of[self.root] = 0;
        order.push(self.root);
        queue.push_back(self.root);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if new_of[v] == NONE {
                    new_of[v] = order.len();
                    order.push(v);
                    queue.push_back(v);
                }
            }
        }
        let adj = order
            .iter()
            .map(|&old| self.neighbors(old).iter().map(|&u| new_of[u]).collect())
            .collect();
        let mut g = RootedGraph::from_adjacency(adj, 0).expect("relabelling preserves validity");
        g.meta = self.meta.clone();
        (g, new_of)
    }

    /// Same graph with a different root.
    pub fn rerooted(&self, root: usize) -> Result<RootedGraph> {
        self.check_vertex(root)?;
        let mut g = self.clone();
        g.root = root;
        g.dist = g.bfs_distances(root);
        Ok(g)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Samples a Galton-Watson tree: the root has `D` children and every other
/// vertex `D - 1`, so every vertex has degree distributed as `D`. Generations
/// beyond `depth` are not generated. Draws happen in breadth-first order from
/// a single seeded stream.
pub fn sample_gw_tree(law: &OffspringLaw, depth: usize, seed: u64) -> RootedGraph {
    let mut rng = rng::stream(seed, 0);
    let mut children: Vec<usize> = vec![0];
    let mut gen: Vec<usize> = vec![0];
    let mut v = 0;
    while v < children.len() {
        if gen[v] < depth {
            let d = law.sample(&mut rng);
            let c = if v == 0 { d } else { d - 1 };
            children[v] = c;
            for _ in 0..c {
                children.push(0);
                gen.push(gen[v] + 1);
            }
        }
        v += 1;
    }
    let mut g = RootedGraph::tree_from_child_counts(&children);
    g.meta = GraphMeta {
        kind: "galton-watson".into(),
        depth_limit: Some(depth),
        seed: Some(seed),
        law: Some(law.clone()),
    };
    g
}

fn layered_tree(root_children: usize, children: usize, depth: usize, kind: &str) -> RootedGraph {
    let mut counts = vec![0usize];
    let mut gen = vec![0usize];
    let mut v = 0;
    while v < counts.len() {
        if gen[v] < depth {
            let c = if v == 0 { root_children } else { children };
            counts[v] = c;
            for _ in 0..c {
                counts.push(0);
                gen.push(gen[v] + 1);
            }
        }
        v += 1;
    }
    let mut g = RootedGraph::tree_from_child_counts(&counts);
    g.meta = GraphMeta { kind: kind.into(), depth_limit: Some(depth), ..Default::default() };
    g
}

/// Ball of radius `depth` around the root of the `d`-regular tree.
pub fn regular_tree(d: usize, depth: usize) -> Result<RootedGraph> {
    if d < 2 {
        return Err(invalid(format!("regular tree needs d >= 2, got {d}")));
    }
    Ok(layered_tree(d, d - 1, depth, "regular"))
}

/// Ball of radius `depth` of the half tree: every vertex, the root included,
/// has `d - 1` children.
pub fn half_tree(d: usize, depth: usize) -> Result<RootedGraph> {
    if d < 2 {
        return Err(invalid(format!("half tree needs d >= 2, got {d}")));
    }
    Ok(layered_tree(d - 1, d - 1, depth, "half"))
}

/// Closed ball `B_r(center)` in a parent graph.
#[derive(Debug, Clone)]
pub struct BallView {
    center: usize,
    radius: usize,
    vertices: Vec<usize>,
    dist: Vec<usize>,
    local: Vec<usize>,
}

/// Ball of radius `radius` around `center`, vertices listed in breadth-first order.
pub fn ball(g: &RootedGraph, center: usize, radius: usize) -> Result<BallView> {
    g.check_vertex(center)?;
    let mut local = vec![NONE; g.n()];
    let mut vertices = vec![center];
    let mut dist = vec![0];
    local[center] = 0;
    let mut head = 0;
    while head < vertices.len() {
        let u = vertices[head];
        let du = dist[head];
        head += 1;
        if du == radius {
            continue;
        }
        for &v in g.neighbors(u) {
            if local[v] == NONE {
                local[v] = vertices.len();
                vertices.push(v);
                dist.push(du + 1);
            }
        }
    }
    Ok(BallView { center, radius, vertices, dist, local })
}

impl BallView {
    pub fn center(&self) -> usize {
        self.center
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Vertices of the parent graph, in breadth-first order from the center.
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.local.get(v).is_some_and(|&l| l != NONE)
    }

    /// Position of `v` in [`Self::vertices`].
    pub fn local_index(&self, v: usize) -> Option<usize> {
        self.local.get(v).copied().filter(|&l| l != NONE)
    }

    /// Distance from the center of the `i`-th ball vertex.
    pub fn distance_at(&self, i: usize) -> usize {
        self.dist[i]
    }

    /// Vertices at distance exactly `radius`.
    pub fn boundary(&self) -> Vec<usize> {
        self.vertices
            .iter()
            .zip(&self.dist)
            .filter(|&(_, &d)| d == self.radius)
            .map(|(&v, _)| v)
            .collect()
    }

    /// Induced subgraph rooted at the center; vertex `i` is `self.vertices()[i]`.
    pub fn to_graph(&self, g: &RootedGraph) -> RootedGraph {
        let adj = self
            .vertices
            .iter()
            .map(|&v| g.neighbors(v).iter().filter_map(|&u| self.local_index(u)).collect())
            .collect();
        let mut out = RootedGraph::from_adjacency(adj, 0).expect("balls are connected");
        out.meta.kind = "ball".into();
        out.meta.depth_limit = Some(self.radius);
        out
    }
}

/// Completes a tree ball by attaching `d - 1` copies of the half tree of
/// depth `copy_depth` to each vertex at distance exactly `radius`. The result
/// is rooted at the ball center, numbered breadth-first, and the ball vertices
/// occupy labels `0..ball.len()` in ball order.
pub fn attach_boundary_completion(
    g: &RootedGraph,
    ball: &BallView,
    d: usize,
    copy_depth: usize,
) -> Result<RootedGraph> {
    if d < 2 {
        return Err(invalid(format!("completion needs d >= 2, got {d}")));
    }
    let local = ball.to_graph(g);
    if !local.is_tree() {
        return Err(Error::InvalidGraph("ball is not a tree".into()));
    }
    let copy = half_tree(d, copy_depth)?;
    let mut adj: Vec<Vec<usize>> = (0..local.n()).map(|v| local.neighbors(v).to_vec()).collect();
    for i in 0..local.n() {
        if ball.distance_at(i) != ball.radius() {
            continue;
        }
        for _ in 0..d - 1 {
            let offset = adj.len();
            for v in 0..copy.n() {
                adj.push(copy.neighbors(v).iter().map(|&u| u + offset).collect());
            }
            adj[i].push(offset);
            adj[offset].push(i);
        }
    }
    let raw = RootedGraph::from_adjacency(adj, 0)?;
    let (mut out, map) = raw.relabel_bfs();
    debug_assert!((0..local.n()).all(|i| map[i] == i));
    out.meta = GraphMeta {
        kind: "completion".into(),
        depth_limit: Some(ball.radius() + 1 + copy_depth),
        ..Default::default()
    };
    Ok(out)
}

/// Disjoint union of `g1` and `g2` plus the edge `x1 - x2`. Vertices of `g1`
/// keep their labels, vertex `v` of `g2` becomes `v + g1.n()`; the root is the
/// root of `g1`.
pub fn glue_two(g1: &RootedGraph, x1: usize, g2: &RootedGraph, x2: usize) -> Result<RootedGraph> {
    g1.check_vertex(x1)?;
    g2.check_vertex(x2)?;
    let off = g1.n();
    let mut adj: Vec<Vec<usize>> = (0..g1.n()).map(|v| g1.neighbors(v).to_vec()).collect();
    adj.extend((0..g2.n()).map(|v| g2.neighbors(v).iter().map(|&u| u + off).collect()));
    adj[x1].push(x2 + off);
    adj[x2 + off].push(x1);
    let mut g = RootedGraph::from_adjacency(adj, g1.root())?;
    g.meta.kind = "glue".into();
    Ok(g)
}

/// Offsets used by [`glue_star`]: piece `i` vertex `v` becomes `offsets[i] + v`.
pub fn star_offsets(pieces: &[(&RootedGraph, usize)]) -> Vec<usize> {
    let mut acc = 1;
    pieces
        .iter()
        .map(|(g, _)| {
            let o = acc;
            acc += g.n();
            o
        })
        .collect()
}

/// Star gluing: a fresh hub (label `0`, the root) joined to the marked vertex
/// of every piece. Piece labels are shifted by [`star_offsets`].
pub fn glue_star(pieces: &[(&RootedGraph, usize)]) -> Result<RootedGraph> {
    let offsets = star_offsets(pieces);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new()];
    for (&(g, y), &off) in pieces.iter().zip(&offsets) {
        g.check_vertex(y)?;
        adj.extend((0..g.n()).map(|v| g.neighbors(v).iter().map(|&u| u + off).collect()));
        adj[0].push(y + off);
        adj[y + off].push(0);
    }
    let mut g = RootedGraph::from_adjacency(adj, 0)?;
    g.meta.kind = "star".into();
    Ok(g)
}

/// Children lists of a rooted tree (neighbours farther from the root).
fn children_lists(g: &RootedGraph) -> Result<Vec<Vec<usize>>> {
    if !g.is_tree() {
        return Err(Error::InvalidGraph("rooted isomorphism needs a tree".into()));
    }
    Ok((0..g.n())
        .map(|v| g.neighbors(v).iter().copied().filter(|&u| g.depth(u) > g.depth(v)).collect())
        .collect())
}

/// Vertices ordered by non-increasing depth.
fn deepest_first(g: &RootedGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.n()).collect();
    order.sort_by_key(|&v| std::cmp::Reverse(g.depth(v)));
    order
}

/// Interned AHU labels: two rooted subtrees are isomorphic iff their labels
/// agree, provided both were labelled with the same interner.
#[derive(Debug, Default)]
pub struct AhuInterner {
    ids: HashMap<Vec<u32>, u32>,
}

impl AhuInterner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Label of every vertex of the rooted tree `g`.
    pub fn label(&mut self, g: &RootedGraph) -> Result<Vec<u32>> {
        let children = children_lists(g)?;
        let mut label = vec![0u32; g.n()];
        for v in deepest_first(g) {
            let mut key: Vec<u32> = children[v].iter().map(|&c| label[c]).collect();
            key.sort_unstable();
            let next = self.ids.len() as u32;
            label[v] = *self.ids.entry(key).or_insert(next);
        }
        Ok(label)
    }
}

/// Canonical parenthesised string of a rooted tree.
pub fn canonical_form(g: &RootedGraph) -> Result<String> {
    let children = children_lists(g)?;
    let mut code = vec![String::new(); g.n()];
    for v in deepest_first(g) {
        let mut parts: Vec<String> = children[v].iter().map(|&c| std::mem::take(&mut code[c])).collect();
        parts.sort_unstable();
        code[v] = format!("({})", parts.concat());
    }
    Ok(std::mem::take(&mut code[g.root()]))
}

/// Rooted isomorphism test for trees. Returns a witness `map` with
/// `map[v]` the image in `b` of vertex `v` of `a`, roots mapped to roots.
pub fn rooted_ball_isomorphic(a: &RootedGraph, b: &RootedGraph) -> Result<Option<Vec<usize>>> {
    if a.n() != b.n() {
        return Ok(None);
    }
    let mut interner = AhuInterner::new();
    let la = interner.label(a)?;
    let lb = interner.label(b)?;
    if la[a.root()] != lb[b.root()] {
        return Ok(None);
    }
    let ca = children_lists(a)?;
    let cb = children_lists(b)?;
    let mut map = vec![NONE; a.n()];
    let mut stack = vec![(a.root(), b.root())];
    while let Some((u, w)) = stack.pop() {
        map[u] = w;
        let mut xs = ca[u].clone();
        let mut ys = cb[w].clone();
        xs.sort_by_key(|&c| la[c]);
        ys.sort_by_key(|&c| lb[c]);
        stack.extend(xs.into_iter().zip(ys));
    }
    Ok(Some(map))
}

/// Rooted isomorphism `a -> b` subject to a vertex constraint: returns a
/// witness with `allowed(v, map[v])` for every vertex `v` of `a`, if any exists.
pub fn constrained_isomorphism(
    a: &RootedGraph,
    b: &RootedGraph,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Result<Option<Vec<usize>>> {
    if a.n() != b.n() {
        return Ok(None);
    }
    let mut interner = AhuInterner::new();
    let la = interner.label(a)?;
    let lb = interner.label(b)?;
    let ctx = Matcher {
        ca: children_lists(a)?,
        cb: children_lists(b)?,
        la,
        lb,
        allowed,
        memo: HashMap::new(),
    };
    let mut ctx = ctx;
    if !ctx.feasible(a.root(), b.root()) {
        return Ok(None);
    }
    let mut map = vec![NONE; a.n()];
    ctx.extract(a.root(), b.root(), &mut map);
    Ok(Some(map))
}

struct Matcher<'f> {
    ca: Vec<Vec<usize>>,
    cb: Vec<Vec<usize>>,
    la: Vec<u32>,
    lb: Vec<u32>,
    allowed: &'f dyn Fn(usize, usize) -> bool,
    memo: HashMap<(usize, usize), Option<Vec<usize>>>,
}

impl Matcher<'_> {
    /// Whether the subtree at `u` maps onto the subtree at `w`; memoises the
    /// child assignment.
    fn feasible(&mut self, u: usize, w: usize) -> bool {
        if let Some(m) = self.memo.get(&(u, w)) {
            return m.is_some();
        }
        let result = if self.la[u] != self.lb[w] || !(self.allowed)(u, w) {
            None
        } else {
            let xs = self.ca[u].clone();
            let ys = self.cb[w].clone();
            let k = xs.len();
            let mut ok = vec![vec![false; k]; k];
            for i in 0..k {
                for j in 0..k {
                    ok[i][j] = self.feasible(xs[i], ys[j]);
                }
            }
            perfect_matching(&ok).map(|assign| assign.into_iter().map(|j| ys[j]).collect())
        };
        let found = result.is_some();
        self.memo.insert((u, w), result);
        found
    }

    fn extract(&self, u: usize, w: usize, map: &mut [usize]) {
        map[u] = w;
        let images = self.memo[&(u, w)].as_ref().expect("feasible pair");
        for (i, &y) in images.iter().enumerate() {
            self.extract(self.ca[u][i], y, map);
        }
    }
}

/// Perfect matching in a square bipartite graph (Kuhn's augmenting paths).
fn perfect_matching(ok: &[Vec<bool>]) -> Option<Vec<usize>> {
    let k = ok.len();
    let mut match_right = vec![NONE; k];
    fn augment(i: usize, ok: &[Vec<bool>], seen: &mut [bool], match_right: &mut [usize]) -> bool {
        for j in 0..ok.len() {
            if ok[i][j] && !seen[j] {
                seen[j] = true;
                if match_right[j] == NONE || augment(match_right[j], ok, seen, match_right) {
                    match_right[j] = i;
                    return true;
                }
            }
        }
        false
    }
    for i in 0..k {
        let mut seen = vec![false; k];
        if !augment(i, ok, &mut seen, &mut match_right) {
            return None;
        }
    }
    let mut assign = vec![NONE; k];
    for (j, &i) in match_right.iter().enumerate() {
        assign[i] = j;
    }
    Some(assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_validation() {
        assert!(OffspringLaw::new(vec![(2, 1.0)]).is_err());
        assert!(OffspringLaw::new(vec![(1, 0.5), (5, 0.5)]).is_err());
        assert!(OffspringLaw::new(vec![(3, 0.5), (4, 0.4)]).is_err());
        let law = OffspringLaw::uniform(&[2, 3]).unwrap();
        assert_eq!(law.d_min(), 2);
        assert!((law.mean() - 2.5).abs() < 1e-15);
        assert!((law.theta() - 2.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_law_gives_regular_tree() {
        let law = OffspringLaw::constant(3).unwrap();
        let g = sample_gw_tree(&law, 2, 7);
        assert_eq!(g.n(), 10);
        assert_eq!(g.degree(0), 3);
        for v in 1..4 {
            assert_eq!(g.degree(v), 3);
        }
        let r = regular_tree(3, 2).unwrap();
        assert_eq!(canonical_form(&g).unwrap(), canonical_form(&r).unwrap());
    }

    #[test]
    fn two_regular_tree_is_a_path() {
        let g = regular_tree(2, 5).unwrap();
        assert_eq!(g.n(), 11);
        assert!(g.is_tree());
        assert_eq!((0..g.n()).filter(|&v| g.degree(v) == 1).count(), 2);
    }

    #[test]
    fn half_tree_root_degree() {
        let g = half_tree(3, 3).unwrap();
        assert_eq!(g.degree(0), 2);
        assert_eq!(g.n(), 15);
        let h = half_tree(2, 4).unwrap();
        assert_eq!(h.n(), 5);
        assert_eq!(h.degree(0), 1);
    }

    #[test]
    fn bfs_numbering_of_samples() {
        let law = OffspringLaw::uniform(&[2, 3, 5]).unwrap();
        let g = sample_gw_tree(&law, 6, 11);
        for v in 1..g.n() {
            assert!(g.depth(v) >= g.depth(v - 1));
        }
        let (h, map) = g.relabel_bfs();
        assert!(map.iter().enumerate().all(|(i, &j)| i == j));
        assert_eq!(h.n(), g.n());
    }

    #[test]
    fn ball_and_boundary() {
        let g = regular_tree(3, 4).unwrap();
        let b = ball(&g, 0, 2).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.boundary().len(), 6);
        let b0 = ball(&g, 5, 0).unwrap();
        assert_eq!(b0.vertices(), &[5]);
        let leaf_ball = ball(&g, g.n() - 1, 1).unwrap();
        assert_eq!(leaf_ball.len(), 2);
    }

    #[test]
    fn completion_of_regular_ball_is_regular_ball() {
        for d in 2..=4 {
            let g = regular_tree(d, 3).unwrap();
            let b = ball(&g, 0, 3).unwrap();
            let c = attach_boundary_completion(&g, &b, d, 2).unwrap();
            let target = regular_tree(d, 6).unwrap();
            assert!(rooted_ball_isomorphic(&c, &target).unwrap().is_some());
        }
    }

    #[test]
    fn glue_examples() {
        let one = RootedGraph::from_adjacency(vec![vec![]], 0).unwrap();
        let k2 = glue_two(&one, 0, &one, 0).unwrap();
        assert_eq!(k2.n(), 2);
        assert_eq!(k2.num_edges(), 1);
        let s = glue_star(&[(&one, 0), (&one, 0), (&one, 0)]).unwrap();
        assert_eq!(s.degree(0), 3);
        assert_eq!(s.n(), 4);
        let p = regular_tree(2, 1).unwrap();
        let g = glue_two(&p, 0, &p, 2).unwrap();
        assert_eq!(g.degree(0), 3);
        assert_eq!(g.degree(5), 2);
    }

    #[test]
    fn json_round_trip() {
        let law = OffspringLaw::uniform(&[2, 3]).unwrap();
        let g = sample_gw_tree(&law, 4, 3);
        let s = g.to_json().unwrap();
        let h = RootedGraph::from_json(&s).unwrap();
        assert_eq!(g, h);
        assert!(RootedGraph::from_json(r#"{"n":2,"root":0,"adjacency":[[1],[]]}"#).is_err());
    }

    #[test]
    fn isomorphism_witness_preserves_edges() {
        let a = RootedGraph::from_edges(5, &[(0, 1), (0, 2), (2, 3), (2, 4)], 0).unwrap();
        let b = RootedGraph::from_edges(5, &[(0, 4), (0, 3), (4, 1), (4, 2)], 0).unwrap();
        let map = rooted_ball_isomorphic(&a, &b).unwrap().unwrap();
        for (u, v) in a.edges() {
            assert!(b.has_edge(map[u], map[v]));
        }
        let c = RootedGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], 0).unwrap();
        assert!(rooted_ball_isomorphic(&a, &c).unwrap().is_none());
    }

    #[test]
    fn constrained_isomorphism_respects_constraint() {
        let a = regular_tree(3, 1).unwrap();
        // only the identity on vertex 1 is allowed
        let allowed = |u: usize, w: usize| u != 1 || w == 3;
        let map = constrained_isomorphism(&a, &a, &allowed).unwrap().unwrap();
        assert_eq!(map[1], 3);
        let never = |u: usize, w: usize| !(u == 1 || w == 1);
        assert!(constrained_isomorphism(&a, &a, &never).unwrap().is_none());
    }
}
