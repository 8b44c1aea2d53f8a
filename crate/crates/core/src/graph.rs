//! Interaction graphs: construction of the standard families, structural
//! statistics, and (de)serialization.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Exhaustive edge-expansion enumeration is limited to this many nodes.
pub const EXPANSION_MAX_NODES: usize = 22;

const REGULAR_CONNECT_ATTEMPTS: usize = 1000;
const REGULAR_PAIRING_ATTEMPTS: usize = 100_000;

/// Graph families the generator knows how to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFamily {
    Complete,
    Cycle,
    Path,
    Star,
    RandomRegular {
        degree: usize,
    },
    /// Clique on `k` nodes joined by a bridge to a path on `k` nodes (`n = 2k`).
    Lollipop,
    /// Near-square grid: `rows` is the largest divisor of `n` not exceeding `sqrt(n)`.
    Grid,
}

impl fmt::Display for GraphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphFamily::Complete => write!(f, "complete"),
            GraphFamily::Cycle => write!(f, "cycle"),
            GraphFamily::Path => write!(f, "path"),
            GraphFamily::Star => write!(f, "star"),
            GraphFamily::RandomRegular { degree } => write!(f, "random_regular({degree})"),
            GraphFamily::Lollipop => write!(f, "lollipop"),
            GraphFamily::Grid => write!(f, "grid"),
        }
    }
}

impl FromStr for GraphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("random_regular(").and_then(|r| r.strip_suffix(')')) {
            let degree = inner
                .parse()
                .map_err(|_| Error::Parse(format!("bad degree in {s:?}")))?;
            return Ok(GraphFamily::RandomRegular { degree });
        }
        match s {
            "complete" => Ok(GraphFamily::Complete),
            "cycle" => Ok(GraphFamily::Cycle),
            "path" => Ok(GraphFamily::Path),
            "star" => Ok(GraphFamily::Star),
            "lollipop" => Ok(GraphFamily::Lollipop),
            "grid" => Ok(GraphFamily::Grid),
            other => Err(Error::Parse(format!("unknown graph family {other:?}"))),
        }
    }
}

/// Undirected, simple, connected interaction graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(u32, u32)>,
    adjacency: Vec<Vec<u32>>,
    family: String,
}

impl Graph {
    /// Builds a graph from an edge list, rejecting self-loops, duplicate
    /// edges, out-of-range ids and disconnected inputs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], family: impl Into<String>) -> Result<Self> {
        if n < 2 {
            return param(format!("graph needs at least 2 nodes, got {n}"));
        }
        if n > u32::MAX as usize {
            return param("node count does not fit in 32 bits");
        }
        let mut seen = HashSet::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); n];
        let mut stored = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return param(format!("edge ({u},{v}) out of range for n={n}"));
            }
            if u == v {
                return param(format!("self-loop at node {u}"));
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return param(format!("duplicate edge ({},{})", key.0, key.1));
            }
            adjacency[u].push(v as u32);
            adjacency[v].push(u as u32);
            stored.push((key.0 as u32, key.1 as u32));
        }
        let g = Graph {
            n,
            edges: stored,
            adjacency,
            family: family.into(),
        };
        if !g.is_connected() {
            return param("graph is not connected");
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn min_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).min().unwrap_or(0)
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && self.adjacency[u].iter().any(|&w| w as usize == v)
    }

    /// For `lollipop(k)`, the path edge farthest from the clique.
    pub fn designated_edge(&self) -> Option<(usize, usize)> {
        let k: usize = self.family.strip_prefix("lollipop(")?.strip_suffix(')')?.parse().ok()?;
        (2 * k == self.n).then(|| (2 * k - 2, 2 * k - 1))
    }

    /// Hop distances from `src` (`usize::MAX` for unreachable nodes).
    pub fn bfs_distances(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            for &w in &self.adjacency[u] {
                let w = w as usize;
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Nodes in BFS order from `src`.
    pub fn bfs_order(&self, src: usize) -> Vec<usize> {
        let dist = self.bfs_distances(src);
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by_key(|&v| (dist[v], v));
        order
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(|&d| d != usize::MAX)
    }

    pub fn diameter(&self) -> usize {
        (0..self.n)
            .map(|s| self.bfs_distances(s).into_iter().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Short human-readable descriptor, e.g. `cycle(n=16)`.
    pub fn descriptor(&self) -> String {
        format!("{}(n={},m={})", self.family, self.n, self.m())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GraphFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        let edges: Vec<(usize, usize)> = file.edges.iter().map(|e| (e[0], e[1])).collect();
        Graph::from_edges(file.n, &edges, file.family)
    }

    /// Parses whitespace-separated `u v` lines; blank lines and `#` comments are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut n = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| Error::Parse(format!("line {}: expected two node ids", lineno + 1)))?
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad node id", lineno + 1)))
            };
            let (u, v) = (next()?, next()?);
            n = n.max(u + 1).max(v + 1);
            edges.push((u, v));
        }
        Graph::from_edges(n, &edges, "custom")
    }

    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|(u, v)| format!("{u} {v}\n")).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    edges: Vec<[usize; 2]>,
    family: String,
}

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        GraphFile {
            n: g.n,
            edges: g.edges.iter().map(|&(u, v)| [u as usize, v as usize]).collect(),
            family: g.family.clone(),
        }
    }
}

/// Builds a member of `family`. `count` is the node count for every family
/// except `Lollipop`, where it is the clique/path size `k`.
pub fn build_graph(family: GraphFamily, count: usize, seed: u64) -> Result<Graph> {
    match family {
        GraphFamily::Complete => {
            if count < 2 {
                return param("complete graph needs n >= 2");
            }
            let edges: Vec<_> = (0..count).flat_map(|u| (u + 1..count).map(move |v| (u, v))).collect();
            Graph::from_edges(count, &edges, "complete")
        }
        GraphFamily::Cycle => {
            if count < 3 {
                return param("cycle needs n >= 3");
            }
            let edges: Vec<_> = (0..count).map(|u| (u, (u + 1) % count)).collect();
            Graph::from_edges(count, &edges, "cycle")
        }
        GraphFamily::Path => {
            if count < 2 {
                return param("path needs n >= 2");
            }
            let edges: Vec<_> = (0..count - 1).map(|u| (u, u + 1)).collect();
            Graph::from_edges(count, &edges, "path")
        }
        GraphFamily::Star => {
            if count < 2 {
                return param("star needs n >= 2");
            }
            let edges: Vec<_> = (1..count).map(|v| (0, v)).collect();
            Graph::from_edges(count, &edges, "star")
        }
        GraphFamily::Lollipop => lollipop(count),
        GraphFamily::Grid => grid(count),
        GraphFamily::RandomRegular { degree } => random_regular(count, degree, seed),
    }
}

fn lollipop(k: usize) -> Result<Graph> {
    if k < 2 {
        return param(format!("lollipop needs k >= 2, got {k}"));
    }
    let mut edges: Vec<_> = (0..k).flat_map(|u| (u + 1..k).map(move |v| (u, v))).collect();
    edges.push((k - 1, k));
    edges.extend((k..2 * k - 1).map(|u| (u, u + 1)));
    Graph::from_edges(2 * k, &edges, format!("lollipop({k})"))
}

fn grid(n: usize) -> Result<Graph> {
    if n < 2 {
        return param("grid needs n >= 2");
    }
    let rows = (1..=n)
        .take_while(|r| r * r <= n)
        .filter(|r| n % r == 0)
        .max()
        .unwrap_or(1);
    let cols = n / rows;
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((id(r, c), id(r, c + 1)));
            }
            if r + 1 < rows {
                edges.push((id(r, c), id(r + 1, c)));
            }
        }
    }
    Graph::from_edges(n, &edges, format!("grid({rows}x{cols})"))
}

/// Uniform simple `d`-regular graph via the pairing model, rejecting
/// multigraphs and retrying until the result is connected.
fn random_regular(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if d == 0 || d >= n {
        return param(format!("random_regular needs 1 <= d < n, got d={d}, n={n}"));
    }
    if (n * d) % 2 != 0 {
        return param(format!("random_regular needs n*d even, got n={n}, d={d}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<usize> = (0..n).flat_map(|u| std::iter::repeat_n(u, d)).collect();
    for _ in 0..REGULAR_CONNECT_ATTEMPTS {
        let Some(edges) = (0..REGULAR_PAIRING_ATTEMPTS).find_map(|_| {
            points.shuffle(&mut rng);
            let mut seen = HashSet::with_capacity(n * d / 2);
            let mut edges = Vec::with_capacity(n * d / 2);
            for pair in points.chunks_exact(2) {
                let (u, v) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                if u == v || !seen.insert((u, v)) {
                    return None;
                }
                edges.push((u, v));
            }
            Some(edges)
        }) else {
            break;
        };
        if let Ok(g) = Graph::from_edges(n, &edges, format!("random_regular({d})")) {
            return Ok(g);
        }
    }
    param(format!(
        "could not generate a connected simple {d}-regular graph on {n} nodes"
    ))
}

/// Degree extremes, diameter and (optionally) exact edge expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub min_degree: usize,
    pub max_degree: usize,
    pub diameter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_expansion: Option<f64>,
}

pub fn graph_stats(g: &Graph, compute_expansion: bool) -> Result<GraphStats> {
    let edge_expansion = if compute_expansion {
        let cut = edge_expansion(g)?;
        Some(cut.ratio())
    } else {
        None
    };
    Ok(GraphStats {
        min_degree: g.min_degree(),
        max_degree: g.max_degree(),
        diameter: g.diameter(),
        edge_expansion,
    })
}

/// A minimizing set for the edge expansion: `boundary / size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpansionCut {
    pub boundary: u64,
    pub size: u64,
    /// Bitmask of the minimizing set.
    pub set: u32,
}

impl ExpansionCut {
    pub fn ratio(&self) -> f64 {
        self.boundary as f64 / self.size as f64
    }
}

/// Exact `min |∂S|/|S|` over nonempty `S` with `|S| <= n/2`, by Gray-code
/// enumeration of all subsets.
pub fn edge_expansion(g: &Graph) -> Result<ExpansionCut> {
    let n = g.n();
    if n > EXPANSION_MAX_NODES {
        return Err(Error::Size(format!(
            "edge expansion is exhaustive and limited to n <= {EXPANSION_MAX_NODES}, got n={n}"
        )));
    }
    let adj: Vec<u32> = (0..n)
        .map(|u| g.neighbors(u).iter().fold(0u32, |acc, &w| acc | (1 << w)))
        .collect();
    let mut best: Option<ExpansionCut> = None;
    let mut set = 0u32;
    let mut boundary: i64 = 0;
    for i in 1u64..(1u64 << n) {
        let bit = i.trailing_zeros() as usize;
        let inside = (adj[bit] & set).count_ones() as i64;
        let deg = adj[bit].count_ones() as i64;
        if set & (1 << bit) == 0 {
            boundary += deg - 2 * inside;
        } else {
            boundary -= deg - 2 * inside;
        }
        set ^= 1 << bit;
        let size = set.count_ones() as u64;
        if size == 0 || 2 * size > n as u64 {
            continue;
        }
        let b = boundary as u64;
        let better = match best {
            None => true,
            Some(cur) => b * cur.size < cur.boundary * size,
        };
        if better {
            best = Some(ExpansionCut { boundary: b, size, set });
        }
    }
    best.ok_or_else(|| Error::Parameter("graph too small for edge expansion".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_expansion(g: &Graph) -> f64 {
        let n = g.n();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << n) {
            let size = mask.count_ones() as usize;
            if 2 * size > n {
                continue;
            }
            let boundary = g
                .edges()
                .iter()
                .filter(|&&(u, v)| ((mask >> u) & 1) != ((mask >> v) & 1))
                .count();
            best = best.min(boundary as f64 / size as f64);
        }
        best
    }

    #[test]
    fn complete_four() {
        let g = build_graph(GraphFamily::Complete, 4, 0).unwrap();
        assert_eq!(g.m(), 6);
        assert_eq!(g.diameter(), 1);
        let s = graph_stats(&g, true).unwrap();
        assert_eq!(s.edge_expansion, Some(2.0));
    }

    #[test]
    fn lollipop_three() {
        let g = build_graph(GraphFamily::Lollipop, 3, 0).unwrap();
        assert_eq!(g.n(), 6);
        assert_eq!(g.m(), 6);
        assert_eq!(g.diameter(), 4);
        assert_eq!(g.designated_edge(), Some((4, 5)));
        // far end of the path: u2 has degree 1, u1 lies on the path
        assert_eq!(g.degree(5), 1);
        assert!(g.has_edge(4, 5));
    }

    #[test]
    fn lollipop_diameter_is_k_plus_one() {
        for k in 2..=16 {
            let g = build_graph(GraphFamily::Lollipop, k, 0).unwrap();
            assert_eq!(g.diameter(), k + 1, "k={k}");
            assert_eq!(g.m(), k * (k - 1) / 2 + k);
        }
    }

    #[test]
    fn cycle_five() {
        let g = build_graph(GraphFamily::Cycle, 5, 0).unwrap();
        assert_eq!(g.m(), 5);
        assert!((0..5).all(|u| g.degree(u) == 2));
    }

    #[test]
    fn cycle_six_expansion() {
        let g = build_graph(GraphFamily::Cycle, 6, 0).unwrap();
        let cut = edge_expansion(&g).unwrap();
        assert_eq!((cut.boundary, cut.size), (2, 3));
        assert!((cut.ratio() - brute_expansion(&g)).abs() < 1e-15);
    }

    #[test]
    fn star_stats() {
        let g = build_graph(GraphFamily::Star, 5, 0).unwrap();
        let s = graph_stats(&g, false).unwrap();
        assert_eq!((s.min_degree, s.max_degree, s.diameter), (1, 4, 2));
        assert_eq!(s.edge_expansion, None);
    }

    #[test]
    fn expansion_matches_brute_force() {
        let graphs = [
            build_graph(GraphFamily::Complete, 7, 0).unwrap(),
            build_graph(GraphFamily::Path, 9, 0).unwrap(),
            build_graph(GraphFamily::Grid, 12, 0).unwrap(),
            build_graph(GraphFamily::Lollipop, 5, 0).unwrap(),
            build_graph(GraphFamily::RandomRegular { degree: 3 }, 12, 4).unwrap(),
            build_graph(GraphFamily::Star, 9, 0).unwrap(),
        ];
        for g in &graphs {
            let fast = edge_expansion(g).unwrap().ratio();
            assert!((fast - brute_expansion(g)).abs() < 1e-12, "{}", g.descriptor());
        }
    }

    #[test]
    fn complete_expansion_via_oracle() {
        for n in 2..=12 {
            let g = build_graph(GraphFamily::Complete, n, 0).unwrap();
            let z = edge_expansion(&g).unwrap().ratio();
            assert!((z - brute_expansion(&g)).abs() < 1e-12);
        }
    }

    #[test]
    fn expansion_size_cap() {
        let g = build_graph(GraphFamily::Cycle, 23, 0).unwrap();
        assert!(matches!(graph_stats(&g, true), Err(Error::Size(_))));
        assert!(graph_stats(&g, false).is_ok());
    }

    #[test]
    fn invalid_parameters() {
        assert!(build_graph(GraphFamily::RandomRegular { degree: 8 }, 8, 0).is_err());
        assert!(build_graph(GraphFamily::RandomRegular { degree: 3 }, 7, 0).is_err());
        assert!(build_graph(GraphFamily::Lollipop, 1, 0).is_err());
        assert!(build_graph(GraphFamily::Cycle, 2, 0).is_err());
    }

    #[test]
    fn from_edges_rejects_bad_input() {
        assert!(Graph::from_edges(3, &[(0, 0), (1, 2)], "x").is_err());
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0), (1, 2)], "x").is_err());
        assert!(Graph::from_edges(4, &[(0, 1), (2, 3)], "x").is_err());
        assert!(Graph::from_edges(3, &[(0, 1), (1, 5)], "x").is_err());
    }

    #[test]
    fn random_regular_is_regular_and_connected() {
        for seed in 0..10 {
            let g = build_graph(GraphFamily::RandomRegular { degree: 3 }, 64, seed).unwrap();
            assert!((0..64).all(|u| g.degree(u) == 3));
            assert_eq!(g.m(), 96);
            assert!(g.is_connected());
        }
        let a = build_graph(GraphFamily::RandomRegular { degree: 4 }, 20, 9).unwrap();
        let b = build_graph(GraphFamily::RandomRegular { degree: 4 }, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_shape() {
        let g = build_graph(GraphFamily::Grid, 12, 0).unwrap();
        assert_eq!(g.family(), "grid(3x4)");
        assert_eq!(g.m(), 3 * 3 + 2 * 4);
        assert_eq!(g.diameter(), 5);
    }

    #[test]
    fn json_and_edge_list_round_trip() {
        let g = build_graph(GraphFamily::Lollipop, 4, 0).unwrap();
        let back = Graph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(g, back);
        assert_eq!(back.designated_edge(), Some((6, 7)));

        let text = "# triangle plus tail\n0 1\n1 2\n\n2 0\n2 3\n";
        let h = Graph::from_edge_list(text).unwrap();
        assert_eq!((h.n(), h.m()), (4, 4));
        assert_eq!(h.family(), "custom");
        assert!(Graph::from_edge_list("0 1\n1\n").is_err());
    }

    #[test]
    fn family_parse() {
        for f in [
            GraphFamily::Complete,
            GraphFamily::RandomRegular { degree: 5 },
            GraphFamily::Lollipop,
            GraphFamily::Grid,
        ] {
            assert_eq!(f.to_string().parse::<GraphFamily>().unwrap(), f);
        }
        assert!("hypercube".parse::<GraphFamily>().is_err());
    }
}
