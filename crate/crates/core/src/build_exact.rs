//! Exact δ-EMG construction: every node keeps each candidate, in ascending
//! distance order, that none of its already accepted neighbors occludes.
//! O(n² log n); intended for desk-scale verification.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::geometry::{occludes_sq, Delta};
use crate::graph::{medoid, BuildMeta, ProximityGraph};

/// Above this size the exact builder logs a warning.
pub const EXACT_BUILD_GUARD: usize = 20_000;

pub fn select_neighbors_exact(u: u32, data: &Dataset, delta: f64) -> Vec<u32> {
    let n = data.len() as u32;
    let mut ranked: Vec<(f64, u32)> = (0..n).filter(|&v| v != u).map(|v| (data.sq_dist(u, v), v)).collect();
    ranked.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // (id, d²(u, id)) of accepted neighbors.
    let mut accepted: Vec<(u32, f64)> = Vec::new();
    for (uv, v) in ranked {
        let occluded = accepted.iter().any(|&(w, uw)| occludes_sq(uv, uw, data.sq_dist(w, v), delta));
        if !occluded {
            accepted.push((v, uv));
        }
    }
    accepted.into_iter().map(|(v, _)| v).collect()
}

pub fn build_exact(data: &Dataset, delta: f64) -> Result<ProximityGraph> {
    let delta = Delta::bounded(delta)?.value();
    data.ensure_distinct()?;
    if data.len() > EXACT_BUILD_GUARD {
        log::warn!("exact build on {} points exceeds the desk-scale guard of {EXACT_BUILD_GUARD}", data.len());
    }
    let adjacency: Vec<Vec<u32>> =
        (0..data.len() as u32).into_par_iter().map(|u| select_neighbors_exact(u, data, delta)).collect();
    ProximityGraph::from_adjacency(adjacency, 0, medoid(data), BuildMeta::exact(delta))
}

/// Pairs `(u, v)` that are neither edges nor occluded by an out-neighbor of
/// `u`. Empty for any graph satisfying the δ-EMG construction rule.
pub fn audit_construction(graph: &ProximityGraph, data: &Dataset, delta: f64) -> Vec<(u32, u32)> {
    let n = graph.len() as u32;
    (0..n)
        .into_par_iter()
        .flat_map_iter(|u| {
            let nbrs = graph.neighbors(u);
            (0..n)
                .filter(move |&v| v != u && !nbrs.contains(&v))
                .filter(move |&v| {
                    let uv = data.sq_dist(u, v);
                    !nbrs.iter().any(|&w| occludes_sq(uv, data.sq_dist(u, w), data.sq_dist(w, v), delta))
                })
                .map(move |v| (u, v))
        })
        .collect()
}
