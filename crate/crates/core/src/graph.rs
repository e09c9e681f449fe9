//! The proximity-graph container and the structural passes shared by the
//! builders: medoid entry selection, reverse-edge insertion, connectivity
//! repair and degree statistics.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::build_approx::Bootstrap;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Empty adjacency slot in fixed-width layouts.
pub const SENTINEL: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuildMode {
    Exact,
    Approx,
    Quantized,
}

impl BuildMode {
    pub fn to_byte(self) -> u8 {
        match self {
            BuildMode::Exact => 0,
            BuildMode::Approx => 1,
            BuildMode::Quantized => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(BuildMode::Exact),
            1 => Ok(BuildMode::Approx),
            2 => Ok(BuildMode::Quantized),
            _ => Err(Error::format(format!("unknown build mode {b}"))),
        }
    }
}

/// Parameters a graph was built with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub mode: BuildMode,
    /// The fixed δ the graph honours, when there is one. Adaptive builds
    /// have none and therefore report no δ′.
    pub delta: Option<f64>,
    pub t: u32,
    pub candidates: u32,
    pub iterations: u32,
    pub seed: u64,
    pub bootstrap: Bootstrap,
}

impl BuildMeta {
    pub fn exact(delta: f64) -> Self {
        BuildMeta {
            mode: BuildMode::Exact,
            delta: Some(delta),
            t: 0,
            candidates: 0,
            iterations: 0,
            seed: 0,
            bootstrap: Bootstrap::ExactKnn,
        }
    }
}

/// Directed graph over point ids with an optional out-degree cap.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityGraph {
    adjacency: Vec<Vec<u32>>,
    /// 0 means uncapped.
    max_degree: usize,
    entry: u32,
    meta: BuildMeta,
}

impl ProximityGraph {
    pub fn empty(n: usize, max_degree: usize, meta: BuildMeta) -> Self {
        ProximityGraph { adjacency: vec![Vec::new(); n], max_degree, entry: 0, meta }
    }

    pub fn from_adjacency(adjacency: Vec<Vec<u32>>, max_degree: usize, entry: u32, meta: BuildMeta) -> Result<Self> {
        let g = ProximityGraph { adjacency, max_degree, entry, meta };
        g.validate()?;
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }

    #[inline]
    pub fn neighbors(&self, u: u32) -> &[u32] {
        &self.adjacency[u as usize]
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn entry(&self) -> u32 {
        self.entry
    }

    pub fn set_entry(&mut self, entry: u32) {
        assert!((entry as usize) < self.len());
        self.entry = entry;
    }

    pub fn meta(&self) -> &BuildMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut BuildMeta {
        &mut self.meta
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub(crate) fn set_neighbors(&mut self, u: u32, list: Vec<u32>) {
        self.adjacency[u as usize] = list;
    }

    pub(crate) fn adjacency_mut(&mut self) -> &mut [Vec<u32>] {
        &mut self.adjacency
    }

    /// Checks every structural invariant: ids in range, no self-loops, no
    /// duplicate neighbors, degree cap respected, entry valid.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::invalid("graph has no nodes"));
        }
        if self.entry as usize >= n {
            return Err(Error::invalid(format!("entry {} out of range", self.entry)));
        }
        let mut seen = HashSet::new();
        for (u, list) in self.adjacency.iter().enumerate() {
            if self.max_degree > 0 && list.len() > self.max_degree {
                return Err(Error::invalid(format!("node {u} has degree {} > {}", list.len(), self.max_degree)));
            }
            seen.clear();
            for &v in list {
                if v as usize >= n {
                    return Err(Error::invalid(format!("node {u} links to out-of-range {v}")));
                }
                if v as usize == u {
                    return Err(Error::invalid(format!("self-loop at {u}")));
                }
                if !seen.insert(v) {
                    return Err(Error::invalid(format!("node {u} lists {v} twice")));
                }
            }
        }
        Ok(())
    }
}

/// Id of the point nearest the coordinate-wise centroid (ties: smallest id).
pub fn medoid(data: &Dataset) -> u32 {
    let c = data.centroid();
    let mut best = (f64::INFINITY, 0u32);
    for (i, row) in data.rows().enumerate() {
        let d: f64 = row.iter().zip(&c).map(|(&x, &m)| (x as f64 - m).powi(2)).sum();
        if d < best.0 {
            best = (d, i as u32);
        }
    }
    best.1
}

pub(crate) fn reachable_mask(graph: &ProximityGraph, start: u32) -> Vec<bool> {
    let mut seen = vec![false; graph.len()];
    let mut queue = VecDeque::new();
    seen[start as usize] = true;
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &v in graph.neighbors(u) {
            if !seen[v as usize] {
                seen[v as usize] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// BFS closure over out-edges, as ascending ids.
pub fn reachable_set(graph: &ProximityGraph, start: u32) -> Vec<u32> {
    reachable_mask(graph, start).into_iter().enumerate().filter_map(|(i, r)| r.then_some(i as u32)).collect()
}

/// Links every node unreachable from `entry` back into the graph.
///
/// Each still-unreachable node (ascending id) gets an edge from its nearest
/// reachable node. A donor at capacity gives up its longest edge that is not
/// part of the current BFS tree, so nodes already reachable stay reachable.
/// Returns the number of edges added.
pub fn repair_connectivity(graph: &mut ProximityGraph, data: &Dataset, entry: u32, max_degree: usize) -> usize {
    let n = graph.len();
    let mut added = 0;
    loop {
        let (mut reached, mut protected) = bfs_tree(graph, entry);
        if reached.iter().all(|&r| r) {
            return added;
        }
        let donors: Vec<u32> = (0..n as u32).filter(|&i| reached[i as usize]).collect();
        for x in 0..n as u32 {
            if reached[x as usize] {
                continue;
            }
            let mut ranked: Vec<(f64, u32)> = donors.iter().map(|&r| (data.sq_dist(r, x), r)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut linked = false;
            for &(_, r) in &ranked {
                let list = &mut graph.adjacency_mut()[r as usize];
                if max_degree == 0 || list.len() < max_degree {
                    list.push(x);
                } else {
                    let victim = list
                        .iter()
                        .enumerate()
                        .filter(|(_, &y)| !protected.contains(&(r, y)))
                        .max_by(|a, b| data.sq_dist(r, *a.1).total_cmp(&data.sq_dist(r, *b.1)).then(a.1.cmp(b.1)))
                        .map(|(pos, _)| pos);
                    match victim {
                        Some(pos) => list[pos] = x,
                        None => continue,
                    }
                }
                protected.insert((r, x));
                linked = true;
                break;
            }
            if !linked {
                // Every donor is saturated with tree edges; cannot happen for M >= 1.
                log::warn!("repair: no donor could accept node {x}");
                continue;
            }
            added += 1;
            // Everything reachable from x is now reachable; protect those edges.
            reached[x as usize] = true;
            let mut queue = VecDeque::from([x]);
            while let Some(u) = queue.pop_front() {
                for &v in graph.neighbors(u) {
                    if !reached[v as usize] {
                        reached[v as usize] = true;
                        protected.insert((u, v));
                        queue.push_back(v);
                    }
                }
            }
        }
    }
}

fn bfs_tree(graph: &ProximityGraph, start: u32) -> (Vec<bool>, HashSet<(u32, u32)>) {
    let mut seen = vec![false; graph.len()];
    let mut tree = HashSet::new();
    let mut queue = VecDeque::new();
    seen[start as usize] = true;
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &v in graph.neighbors(u) {
            if !seen[v as usize] {
                seen[v as usize] = true;
                tree.insert((u, v));
                queue.push_back(v);
            }
        }
    }
    (seen, tree)
}

/// For every edge (u,v) of the current graph, tries to add (v,u). When v
/// would exceed `max_degree`, its neighbor set becomes the `max_degree`
/// points of N(v) ∪ {incoming} closest to v (ties by id).
pub fn add_reverse_edges(graph: &mut ProximityGraph, data: &Dataset, max_degree: usize) {
    let n = graph.len();
    let mut incoming: Vec<Vec<u32>> = vec![Vec::new(); n];
    for u in 0..n as u32 {
        for &v in graph.neighbors(u) {
            incoming[v as usize].push(u);
        }
    }
    for (v, inc) in incoming.into_iter().enumerate() {
        let list = &mut graph.adjacency_mut()[v];
        let before = list.len();
        for u in inc {
            if !list[..before].contains(&u) && !list[before..].contains(&u) {
                list.push(u);
            }
        }
        if max_degree > 0 && list.len() > max_degree {
            let v = v as u32;
            let mut ranked: Vec<(f64, u32)> = list.iter().map(|&w| (data.sq_dist(v, w), w)).collect();
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            *list = ranked.into_iter().take(max_degree).map(|(_, w)| w).collect();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// `histogram[d]` = number of nodes with out-degree `d`.
    pub histogram: Vec<usize>,
}

pub fn degree_stats(graph: &ProximityGraph) -> DegreeStats {
    let degrees: Vec<usize> = graph.adjacency().iter().map(Vec::len).collect();
    let min = degrees.iter().copied().min().unwrap_or(0);
    let max = degrees.iter().copied().max().unwrap_or(0);
    let mean = if degrees.is_empty() { 0.0 } else { degrees.iter().sum::<usize>() as f64 / degrees.len() as f64 };
    let mut histogram = vec![0usize; max + 1];
    for d in degrees {
        histogram[d] += 1;
    }
    DegreeStats { min, max, mean, histogram }
}
