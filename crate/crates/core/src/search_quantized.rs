//! Probing top-k search on a quantized index.
//!
//! Two queues are kept: `C_e` holds nodes with exact distances, `C_a` holds
//! every discovered node with its estimate. Expanding a node estimates its
//! whole neighbor block; the best unprobed candidate in `C_a[1:l]` is
//! promoted to `C_e` (one exact distance) only when [`need_probing`] says
//! the exact queue has nothing better to expand. Probed nodes keep their
//! place in `C_a`, so a candidate outside the `l` best estimates is never
//! probed. The growth of `l` and the α rule
//! are those of [`crate::search::error_bounded_search`], evaluated on `C_e`.

use crate::error::{Error, Result};
use crate::graph::SENTINEL;
use crate::quantizer::QuantizedIndex;
use crate::search::{
    achieved_delta, check_args, exact_dist, farthest_local_optimum, CandidateList, Counters, SearchReport,
    SearchScratch, Termination,
};

/// `u`: best unexpanded `C_e` entry with its exact distance; `w`: best
/// unprobed `C_a` entry with its estimate.
pub fn need_probing(u: Option<(u32, f64)>, w: Option<(u32, f64)>, d_last: f64) -> bool {
    match (u, w) {
        (None, _) => true,
        (Some((_, du)), Some((_, dw))) => du > d_last && dw < du,
        (Some(_), None) => false,
    }
}

/// Fills `out` with one estimate per block slot of node `u`.
trait BlockEstimator {
    fn estimate(&mut self, index: &QuantizedIndex, u: u32, out: &mut Vec<f64>);
}

struct Quantized(crate::quantizer::PreparedQuery);

impl BlockEstimator for Quantized {
    fn estimate(&mut self, index: &QuantizedIndex, u: u32, out: &mut Vec<f64>) {
        index.model().estimate_block(&self.0, index.block(u), out);
    }
}

struct Exact<'q>(&'q [f32]);

impl BlockEstimator for Exact<'_> {
    fn estimate(&mut self, index: &QuantizedIndex, u: u32, out: &mut Vec<f64>) {
        out.clear();
        out.extend(index.block(u).ids().iter().map(|&v| {
            if v == SENTINEL {
                f64::INFINITY
            } else {
                index.data().sq_dist_to(self.0, v).sqrt()
            }
        }));
    }
}

pub fn probing_search(index: &QuantizedIndex, q: &[f32], k: usize, alpha: f64) -> Result<SearchReport> {
    let mut scratch = SearchScratch::new(index.graph().len());
    probing_search_with(index, q, k, alpha, &mut scratch)
}

pub fn probing_search_with(
    index: &QuantizedIndex,
    q: &[f32],
    k: usize,
    alpha: f64,
    scratch: &mut SearchScratch,
) -> Result<SearchReport> {
    check_args(index.graph(), index.data(), q, index.graph().entry(), k)?;
    let prepared = index.model().prepare(q)?;
    probing_core(index, q, k, alpha, scratch, Quantized(prepared))
}

/// Test hook: the same search with estimates replaced by exact distances
/// (estimator calls still counted as approximate computations).
pub fn probing_search_exact_estimator(index: &QuantizedIndex, q: &[f32], k: usize, alpha: f64) -> Result<SearchReport> {
    check_args(index.graph(), index.data(), q, index.graph().entry(), k)?;
    let mut scratch = SearchScratch::new(index.graph().len());
    probing_core(index, q, k, alpha, &mut scratch, Exact(q))
}

fn probing_core<E: BlockEstimator>(
    index: &QuantizedIndex,
    q: &[f32],
    k: usize,
    alpha: f64,
    scratch: &mut SearchScratch,
    mut estimator: E,
) -> Result<SearchReport> {
    if !alpha.is_finite() || alpha < 1.0 {
        return Err(Error::invalid(format!("alpha must be >= 1, got {alpha}")));
    }
    let graph = index.graph();
    let data = index.data();
    let entry = graph.entry();
    scratch.reset(graph.len());
    let mut ctr = Counters { dist: 0, hops: 0 };
    let mut approx = 0usize;
    let (mut probes, mut streak, mut max_streak) = (0usize, 0usize, 0usize);
    let mut estimates = Vec::with_capacity(graph.max_degree());

    let mut l = k;
    // Neither queue is pruned (see error_bounded_search on why pruning
    // stalls the growth of l). Probed nodes stay in C_a, flagged, so only
    // the l best estimates can ever be probed at a given l.
    let mut ce = CandidateList::unbounded();
    let mut ca = CandidateList::unbounded();
    let d0 = exact_dist(data, q, entry, scratch, &mut ctr);
    ce.insert(entry, d0);
    scratch.discover(entry);
    let mut d_last = d0;

    let terminated_by = loop {
        loop {
            let u = ce.first_unexpanded(l).map(|i| (i, ce.entries()[i]));
            let w = ca.first_unexpanded(l).map(|i| (i, ca.entries()[i]));
            if u.is_none() && w.is_none() {
                break;
            }
            if need_probing(u.map(|(_, c)| (c.id, c.dist)), w.map(|(_, c)| (c.id, c.dist)), d_last) {
                let (idx, w) = w.expect("probing requires an estimated candidate");
                ca.mark_expanded(idx);
                let d = exact_dist(data, q, w.id, scratch, &mut ctr);
                ce.insert(w.id, d);
                probes += 1;
                streak += 1;
                max_streak = max_streak.max(streak);
            } else {
                let (idx, c) = u.expect("expansion requires an exact candidate");
                ce.mark_expanded(idx);
                d_last = c.dist;
                ctr.hops += 1;
                streak = 0;
                estimator.estimate(index, c.id, &mut estimates);
                for (&v, &est) in index.block(c.id).ids().iter().zip(&estimates) {
                    if v == SENTINEL {
                        continue;
                    }
                    approx += 1;
                    if !scratch.discover(v) {
                        ca.insert(v, est);
                    }
                }
            }
        }
        let es = ce.entries();
        if es.len() >= l && es[l - 1].dist >= alpha * es[k - 1].dist {
            break Termination::AlphaRule;
        }
        if es.len() <= l {
            break Termination::GraphExhausted;
        }
        l += 1;
    };

    let results = ce.top(k);
    let final_c = &ce.entries()[..ce.len().min(l + 1)];
    let local_opt = farthest_local_optimum(graph, final_c, k, scratch);
    let delta_prime = match (local_opt, graph.meta().delta, results.last()) {
        (Some(u), Some(delta), Some(rk)) if rk.dist > 0.0 => Some(achieved_delta(delta, u.dist, rk.dist)),
        _ => None,
    };
    Ok(SearchReport {
        results,
        dist_computations: ctr.dist,
        approx_computations: approx,
        hops: ctr.hops,
        final_l: l,
        local_opt,
        delta_prime,
        terminated_by,
        probes,
        max_probe_streak: max_streak,
    })
}
