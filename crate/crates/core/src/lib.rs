//! δ-error-bounded monotonic graphs (δ-EMG) for approximate nearest-neighbor
//! search, and their quantized variant (δ-EMQG).
//!
//! A δ-EMG guarantees that greedy top-1 search from any node ends inside the
//! query's δ-neighborhood: at distance at most `d(q, v₁)/δ` from the true
//! nearest neighbor `v₁`. Construction keeps, for every node `u`, each
//! candidate `v` that no closer accepted neighbor `w` occludes, where
//!
//! ```text
//! w ∈ Occlusion_δ(u, v)  ⇔  d(w,u) < d(u,v)  and  d²(w,v) + 2δ·d(u,v)·d(w,u) < d²(u,v)
//! ```
//!
//! Modules, bottom up:
//!
//! * [`geometry`], [`dataset`]: distances, the occlusion predicate, fvecs/ivecs I/O, synthetic data.
//! * [`graph`]: adjacency container, reachability repair, reverse edges.
//! * [`build_exact`], [`build_approx`]: quadratic exact build and the iterative approximate build.
//! * [`search`]: greedy, monotonic top-1 and error-bounded top-k search.
//! * [`quantizer`], [`search_quantized`]: 1-bit codes and probing search.
//! * [`eval`], [`persist`]: metrics, benchmark loop, index files.

pub mod build_approx;
pub mod build_exact;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod persist;
pub mod quantizer;
pub mod search;
pub mod search_quantized;

pub use build_approx::{build_approx, Bootstrap, BuildParams};
pub use build_exact::{audit_construction, build_exact};
pub use dataset::{gen_synthetic, Dataset, Distribution, GroundTruth};
pub use error::{Error, Result};
pub use geometry::Delta;
pub use graph::{BuildMeta, BuildMode, ProximityGraph, SENTINEL};
pub use persist::Index;
pub use quantizer::{build_quantized, QuantizationModel, QuantizedIndex};
pub use search::{error_bounded_search, greedy_search, monotonic_top1, Neighbor, SearchReport, Termination};
pub use search_quantized::probing_search;
