//! Exact-distance graph search.
//!
//! * [`greedy_search`]: fixed candidate-set beam search.
//! * [`monotonic_top1`]: steepest-descent walk to a local optimum.
//! * [`error_bounded_search`]: top-k search whose candidate-set size grows
//!   one step at a time until `d(q, C[l]) >= α·d(q, C[k])`, reporting a
//!   certified local optimum and the achieved bound δ′ when it finds one.
//!
//! Every node's distance is computed at most once per query.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::ProximityGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub dist: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Candidate {
    pub dist: f64,
    pub id: u32,
    pub expanded: bool,
}

#[inline]
fn before(a_dist: f64, a_id: u32, b: &Candidate) -> bool {
    a_dist < b.dist || (a_dist == b.dist && a_id < b.id)
}

/// Candidates sorted ascending by `(distance, id)` with a capacity bound.
#[derive(Clone, Debug, Default)]
pub struct CandidateList {
    entries: Vec<Candidate>,
    capacity: usize,
    // Lowest index that may hold an unexpanded entry.
    cursor: usize,
}

impl CandidateList {
    pub fn new(capacity: usize) -> Self {
        CandidateList { entries: Vec::with_capacity(capacity + 1), capacity, cursor: 0 }
    }

    /// A list that never prunes; callers bound their view of it instead.
    pub fn unbounded() -> Self {
        CandidateList { entries: Vec::new(), capacity: usize::MAX, cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Grows or shrinks the bound; shrinking drops the tail.
    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity;
        self.entries.truncate(capacity);
    }

    /// Inserts unless already present or worse than a full list's tail.
    /// Returns the insertion position.
    pub fn insert(&mut self, id: u32, dist: f64) -> Option<usize> {
        if self.entries.len() >= self.capacity {
            match self.entries.last() {
                Some(last) if before(dist, id, last) => {}
                _ => return None,
            }
        }
        let pos = self.entries.partition_point(|c| before(c.dist, c.id, &Candidate { dist, id, expanded: false }));
        if let Some(c) = self.entries.get(pos) {
            if c.id == id {
                return None;
            }
        }
        self.entries.insert(pos, Candidate { dist, id, expanded: false });
        self.entries.truncate(self.capacity);
        if pos < self.cursor {
            self.cursor = pos;
        }
        Some(pos)
    }

    /// Index of the first unexpanded entry among the first `limit`.
    pub(crate) fn first_unexpanded(&mut self, limit: usize) -> Option<usize> {
        let end = limit.min(self.entries.len());
        while self.cursor < end {
            if !self.entries[self.cursor].expanded {
                return Some(self.cursor);
            }
            self.cursor += 1;
        }
        None
    }

    pub(crate) fn mark_expanded(&mut self, idx: usize) -> Candidate {
        self.entries[idx].expanded = true;
        self.entries[idx]
    }

    pub(crate) fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn get(&self, idx: usize) -> Option<Neighbor> {
        self.entries.get(idx).map(|c| Neighbor { id: c.id, dist: c.dist })
    }

    pub fn top(&self, k: usize) -> Vec<Neighbor> {
        self.entries.iter().take(k).map(|c| Neighbor { id: c.id, dist: c.dist }).collect()
    }
}

const EXACT: u8 = 1;
const EXPANDED: u8 = 2;
const DISCOVERED: u8 = 4;

/// Per-query node state reused across searches: cached exact distances
/// and visit flags, reset in O(1) via an epoch counter.
#[derive(Clone, Debug, Default)]
pub struct SearchScratch {
    epoch: u32,
    stamp: Vec<u32>,
    flags: Vec<u8>,
    exact: Vec<f64>,
}

impl SearchScratch {
    pub fn new(n: usize) -> Self {
        let mut s = SearchScratch::default();
        s.reset(n);
        s
    }

    pub(crate) fn reset(&mut self, n: usize) {
        if self.stamp.len() != n {
            self.stamp = vec![0; n];
            self.flags = vec![0; n];
            self.exact = vec![0.0; n];
            self.epoch = 0;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn flags(&self, i: u32) -> u8 {
        if self.stamp[i as usize] == self.epoch {
            self.flags[i as usize]
        } else {
            0
        }
    }

    #[inline]
    fn set(&mut self, i: u32, bit: u8) {
        let i = i as usize;
        if self.stamp[i] != self.epoch {
            self.stamp[i] = self.epoch;
            self.flags[i] = 0;
        }
        self.flags[i] |= bit;
    }

    #[inline]
    pub(crate) fn is_expanded(&self, i: u32) -> bool {
        self.flags(i) & EXPANDED != 0
    }

    #[inline]
    pub(crate) fn mark_expanded(&mut self, i: u32) {
        self.set(i, EXPANDED);
    }

    #[inline]
    pub(crate) fn exact(&self, i: u32) -> Option<f64> {
        (self.flags(i) & EXACT != 0).then(|| self.exact[i as usize])
    }

    #[inline]
    pub(crate) fn set_exact(&mut self, i: u32, d: f64) {
        self.set(i, EXACT);
        self.exact[i as usize] = d;
    }

    /// Marks `i` as seen; returns whether it was already seen.
    #[inline]
    pub(crate) fn discover(&mut self, i: u32) -> bool {
        let seen = self.flags(i) & DISCOVERED != 0;
        self.set(i, DISCOVERED);
        seen
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Fixed-size search: every candidate in `C[1:l]` was expanded.
    Converged,
    /// `d(q, C[l]) >= α·d(q, C[k])`.
    AlphaRule,
    /// Nothing left to expand before the α rule held.
    GraphExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub results: Vec<Neighbor>,
    /// Exact distance evaluations.
    pub dist_computations: usize,
    /// Estimated (quantized) distance evaluations; zero on exact search.
    pub approx_computations: usize,
    pub hops: usize,
    pub final_l: usize,
    pub local_opt: Option<Neighbor>,
    pub delta_prime: Option<f64>,
    pub terminated_by: Termination,
    /// Probing search only: number of probes and the longest run of
    /// consecutive probes between two expansions.
    pub probes: usize,
    pub max_probe_streak: usize,
}

impl SearchReport {
    pub fn ids(&self) -> Vec<u32> {
        self.results.iter().map(|n| n.id).collect()
    }
}

/// δ′ = δ·d(q,u)/d(q,r_k).
pub fn achieved_delta(delta: f64, local_opt_dist: f64, kth_dist: f64) -> f64 {
    delta * local_opt_dist / kth_dist
}

pub(crate) fn check_args(graph: &ProximityGraph, data: &Dataset, q: &[f32], start: u32, k: usize) -> Result<()> {
    if graph.len() != data.len() {
        return Err(Error::invalid(format!("graph has {} nodes but dataset has {} points", graph.len(), data.len())));
    }
    data.check_query(q)?;
    if start as usize >= graph.len() {
        return Err(Error::invalid(format!("start node {start} out of range")));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    Ok(())
}

pub(crate) struct Counters {
    pub dist: usize,
    pub hops: usize,
}

#[inline]
pub(crate) fn exact_dist(data: &Dataset, q: &[f32], id: u32, scratch: &mut SearchScratch, ctr: &mut Counters) -> f64 {
    match scratch.exact(id) {
        Some(d) => d,
        None => {
            ctr.dist += 1;
            let d = data.sq_dist_to(q, id).sqrt();
            scratch.set_exact(id, d);
            d
        }
    }
}

/// Expands unexpanded entries of `C[1:limit]` closest-first until none remain.
fn expand_until_settled(
    graph: &ProximityGraph,
    data: &Dataset,
    q: &[f32],
    cand: &mut CandidateList,
    limit: usize,
    scratch: &mut SearchScratch,
    ctr: &mut Counters,
) {
    while let Some(idx) = cand.first_unexpanded(limit) {
        let u = cand.mark_expanded(idx).id;
        scratch.mark_expanded(u);
        ctr.hops += 1;
        for &v in graph.neighbors(u) {
            if scratch.is_expanded(v) {
                continue;
            }
            let d = exact_dist(data, q, v, scratch, ctr);
            cand.insert(v, d);
        }
    }
}

pub(crate) fn greedy_core(
    graph: &ProximityGraph,
    data: &Dataset,
    q: &[f32],
    start: u32,
    l: usize,
    scratch: &mut SearchScratch,
) -> (CandidateList, Counters) {
    scratch.reset(graph.len());
    let mut ctr = Counters { dist: 0, hops: 0 };
    let mut cand = CandidateList::new(l);
    let d = exact_dist(data, q, start, scratch, &mut ctr);
    cand.insert(start, d);
    expand_until_settled(graph, data, q, &mut cand, l, scratch, &mut ctr);
    (cand, ctr)
}

/// Beam search with a fixed candidate-set size `l`; returns `C[1:k]`.
pub fn greedy_search(
    graph: &ProximityGraph,
    data: &Dataset,
    q: &[f32],
    start: u32,
    k: usize,
    l: usize,
) -> Result<SearchReport> {
    check_args(graph, data, q, start, k)?;
    if k > l {
        return Err(Error::invalid(format!("k = {k} exceeds l = {l}")));
    }
    let mut scratch = SearchScratch::new(graph.len());
    let (cand, ctr) = greedy_core(graph, data, q, start, l, &mut scratch);
    Ok(SearchReport {
        results: cand.top(k),
        dist_computations: ctr.dist,
        approx_computations: 0,
        hops: ctr.hops,
        final_l: l,
        local_opt: None,
        delta_prime: None,
        terminated_by: Termination::Converged,
        probes: 0,
        max_probe_streak: 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Top1 {
    pub id: u32,
    pub dist: f64,
    /// Number of nodes on the walk, start included.
    pub path_len: usize,
}

/// Moves to the closest neighbor (ties: smallest id) while it is strictly
/// closer to `q`; stops at the first local optimum.
pub fn monotonic_top1(graph: &ProximityGraph, data: &Dataset, q: &[f32], start: u32) -> Result<Top1> {
    check_args(graph, data, q, start, 1)?;
    let mut cur = start;
    let mut cur_d = data.sq_dist_to(q, cur);
    let mut path_len = 1;
    loop {
        let mut best: Option<(f64, u32)> = None;
        for &v in graph.neighbors(cur) {
            let d = data.sq_dist_to(q, v);
            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && v < bid)) {
                best = Some((d, v));
            }
        }
        match best {
            Some((d, v)) if d < cur_d => {
                cur = v;
                cur_d = d;
                path_len += 1;
            }
            _ => return Ok(Top1 { id: cur, dist: cur_d.sqrt(), path_len }),
        }
    }
}

/// Scans expanded entries of `C` beyond the first `k` for local optima
/// (every neighbor at least as far from `q`), returning the farthest one.
pub(crate) fn farthest_local_optimum(
    graph: &ProximityGraph,
    cand: &[Candidate],
    k: usize,
    scratch: &SearchScratch,
) -> Option<Neighbor> {
    let mut best: Option<Neighbor> = None;
    for c in cand.iter().skip(k) {
        if !c.expanded {
            continue;
        }
        let certified = graph.neighbors(c.id).iter().all(|&v| matches!(scratch.exact(v), Some(d) if d >= c.dist));
        if certified && best.is_none_or(|b| c.dist > b.dist) {
            best = Some(Neighbor { id: c.id, dist: c.dist });
        }
    }
    best
}

/// Error-bounded top-k search.
///
/// The candidate-set size `l` starts at `k` and grows by one; state carries
/// over between sizes. Expansion is confined to `C[1:l]` and the final
/// candidate set is `C[1:l+1]`. After each settling pass the search stops
/// once `C` holds at least `l` entries and `d(q, C[l]) >= α·d(q, C[k])`,
/// or, failing that, when every discovered node lies inside `C[1:l]`
/// already (the reachable graph is exhausted).
///
/// Discovered nodes beyond `C[l+1]` are kept rather than discarded: pruning
/// them would let an expanded node occupy `C[l+1]`, after which growing `l`
/// uncovers nothing and the search stalls long before the α rule can hold.
pub fn error_bounded_search(
    graph: &ProximityGraph,
    data: &Dataset,
    q: &[f32],
    start: u32,
    k: usize,
    alpha: f64,
) -> Result<SearchReport> {
    let mut scratch = SearchScratch::new(graph.len());
    error_bounded_search_with(graph, data, q, start, k, alpha, &mut scratch)
}

pub fn error_bounded_search_with(
    graph: &ProximityGraph,
    data: &Dataset,
    q: &[f32],
    start: u32,
    k: usize,
    alpha: f64,
    scratch: &mut SearchScratch,
) -> Result<SearchReport> {
    check_args(graph, data, q, start, k)?;
    if !alpha.is_finite() || alpha < 1.0 {
        return Err(Error::invalid(format!("alpha must be >= 1, got {alpha}")));
    }
    scratch.reset(graph.len());
    let mut ctr = Counters { dist: 0, hops: 0 };
    let mut l = k;
    let mut cand = CandidateList::unbounded();
    let d = exact_dist(data, q, start, scratch, &mut ctr);
    cand.insert(start, d);
    let terminated_by = loop {
        expand_until_settled(graph, data, q, &mut cand, l, scratch, &mut ctr);
        let es = cand.entries();
        if es.len() >= l && es[l - 1].dist >= alpha * es[k - 1].dist {
            break Termination::AlphaRule;
        }
        if es.len() <= l {
            break Termination::GraphExhausted;
        }
        l += 1;
    };
    let results = cand.top(k);
    let final_c = &cand.entries()[..cand.len().min(l + 1)];
    let local_opt = farthest_local_optimum(graph, final_c, k, scratch);
    let delta_prime = match (local_opt, graph.meta().delta, results.last()) {
        (Some(u), Some(delta), Some(rk)) if rk.dist > 0.0 => Some(achieved_delta(delta, u.dist, rk.dist)),
        _ => None,
    };
    Ok(SearchReport {
        results,
        dist_computations: ctr.dist,
        approx_computations: 0,
        hops: ctr.hops,
        final_l: l,
        local_opt,
        delta_prime,
        terminated_by,
        probes: 0,
        max_probe_streak: 0,
    })
}
