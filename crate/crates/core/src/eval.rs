//! Brute-force oracle, quality metrics and the benchmark loop.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::persist::Index;
use crate::search::{Neighbor, SearchScratch};

/// Timing repetitions per benchmark setting.
pub const TIMING_REPS: usize = 5;

/// Exact top-k by full scan, ascending by `(distance, id)`.
pub fn brute_force_knn(data: &Dataset, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    data.check_query(q)?;
    if k == 0 || k > data.len() {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={}", data.len())));
    }
    let mut all: Vec<(f64, u32)> = (0..data.len() as u32).map(|i| (data.sq_dist_to(q, i), i)).collect();
    let cmp = |a: &(f64, u32), b: &(f64, u32)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    Ok(all.into_iter().map(|(d, id)| Neighbor { id, dist: d.sqrt() }).collect())
}

pub fn ground_truth(base: &Dataset, queries: &Dataset, k: usize) -> Result<GroundTruth> {
    let lists: Vec<Vec<Neighbor>> =
        (0..queries.len()).into_par_iter().map(|i| brute_force_knn(base, queries.row(i), k)).collect::<Result<_>>()?;
    Ok(GroundTruth {
        ids: lists.iter().map(|l| l.iter().map(|n| n.id).collect()).collect(),
        distances: lists.iter().map(|l| l.iter().map(|n| n.dist).collect()).collect(),
    })
}

/// `|result ∩ truth| / k`, where a result also counts as a hit when its
/// distance ties the k-th true distance.
pub fn recall(result: &[Neighbor], truth_ids: &[u32], truth_dists: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let kk = k.min(truth_ids.len());
    let kth = truth_dists.get(kk.wrapping_sub(1)).copied().unwrap_or(f64::NEG_INFINITY);
    let hits = result.iter().take(k).filter(|r| truth_ids[..kk].contains(&r.id) || r.dist <= kth).count();
    hits as f64 / k as f64
}

/// Plain set recall on ids alone.
pub fn recall_ids(result: &[u32], truth: &[u32], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let t = &truth[..k.min(truth.len())];
    result.iter().take(k).filter(|id| t.contains(id)).count() as f64 / k as f64
}

/// Rank-aligned mean of `(d(q,r_i) − d(q,v_i)) / d(q,v_i)`. `None` when a
/// true distance is zero (the query coincides with a data point).
pub fn relative_distance_error(result: &[f64], truth: &[f64]) -> Option<f64> {
    let n = result.len().min(truth.len());
    if n == 0 || truth[..n].iter().any(|&t| t <= 0.0) {
        return None;
    }
    Some(result.iter().zip(truth).map(|(r, t)| (r - t) / t).sum::<f64>() / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub mode: String,
    pub n: usize,
    pub k: usize,
    pub alpha: f64,
    pub queries: usize,
    pub recall: f64,
    pub rel_dist_err: f64,
    /// Queries left out of `rel_dist_err` because a true distance was 0.
    pub rel_err_excluded: usize,
    pub mean_dist_computations: f64,
    pub mean_approx_computations: f64,
    pub mean_hops: f64,
    pub mean_final_l: f64,
    pub local_opt_freq: f64,
    /// Mean δ′ over queries that reported one; empty when none did.
    pub mean_delta_prime: Option<f64>,
    pub us_per_query: f64,
}

/// Per-query outputs of one benchmark setting, kept for recomputation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRun {
    pub row: BenchmarkRow,
    pub results: Vec<Vec<Neighbor>>,
}

pub fn run_benchmark(
    index: &Index,
    queries: &Dataset,
    gt: &GroundTruth,
    alphas: &[f64],
    ks: &[usize],
) -> Result<Vec<BenchmarkRow>> {
    Ok(run_benchmark_detailed(index, queries, gt, alphas, ks, TIMING_REPS)?.into_iter().map(|r| r.row).collect())
}

/// Runs every `(k, α)` setting over all queries on the calling thread,
/// `reps` times for timing; metrics come from the first repetition.
pub fn run_benchmark_detailed(
    index: &Index,
    queries: &Dataset,
    gt: &GroundTruth,
    alphas: &[f64],
    ks: &[usize],
    reps: usize,
) -> Result<Vec<BenchmarkRun>> {
    if gt.len() != queries.len() {
        return Err(Error::invalid(format!("ground truth has {} rows for {} queries", gt.len(), queries.len())));
    }
    let reps = reps.max(1);
    let mut scratch = SearchScratch::new(index.graph().len());
    let mut out = Vec::new();
    for &k in ks {
        if k > gt.depth() {
            return Err(Error::invalid(format!("k = {k} exceeds ground-truth depth {}", gt.depth())));
        }
        for &alpha in alphas {
            let mut reports = Vec::with_capacity(queries.len());
            let mut elapsed = 0.0;
            for rep in 0..reps {
                let start = Instant::now();
                for q in queries.rows() {
                    let r = index.search_with(q, k, alpha, &mut scratch)?;
                    if rep == 0 {
                        reports.push(r);
                    }
                }
                elapsed += start.elapsed().as_secs_f64();
            }
            let nq = queries.len().max(1) as f64;
            let mut recall_sum = 0.0;
            let (mut err_sum, mut err_n, mut excluded) = (0.0, 0usize, 0usize);
            let (mut dp_sum, mut dp_n) = (0.0, 0usize);
            for (i, r) in reports.iter().enumerate() {
                recall_sum += recall(&r.results, &gt.ids[i], &gt.distances[i], k);
                let rd: Vec<f64> = r.results.iter().map(|n| n.dist).collect();
                match relative_distance_error(&rd, &gt.distances[i][..k]) {
                    Some(e) => {
                        err_sum += e;
                        err_n += 1;
                    }
                    None => excluded += 1,
                }
                if let Some(dp) = r.delta_prime {
                    dp_sum += dp;
                    dp_n += 1;
                }
            }
            let mean = |f: &dyn Fn(&crate::search::SearchReport) -> f64| reports.iter().map(f).sum::<f64>() / nq;
            let row = BenchmarkRow {
                mode: format!("{:?}", index.graph().meta().mode).to_lowercase(),
                n: index.graph().len(),
                k,
                alpha,
                queries: queries.len(),
                recall: recall_sum / nq,
                rel_dist_err: if err_n > 0 { err_sum / err_n as f64 } else { 0.0 },
                rel_err_excluded: excluded,
                mean_dist_computations: mean(&|r| r.dist_computations as f64),
                mean_approx_computations: mean(&|r| r.approx_computations as f64),
                mean_hops: mean(&|r| r.hops as f64),
                mean_final_l: mean(&|r| r.final_l as f64),
                local_opt_freq: mean(&|r| r.local_opt.is_some() as u8 as f64),
                mean_delta_prime: (dp_n > 0).then(|| dp_sum / dp_n as f64),
                us_per_query: elapsed / reps as f64 / nq * 1e6,
            };
            out.push(BenchmarkRun { row, results: reports.into_iter().map(|r| r.results).collect() });
        }
    }
    Ok(out)
}
