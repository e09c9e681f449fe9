//! Euclidean primitives and the δ-occlusion / δ-neighborhood predicates.
//!
//! All predicates use strict inequalities and are evaluated on squared
//! distances, taking a single square root for the cross term of the
//! occlusion inequality. Equality always means "not occluded".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar types a coordinate slice may hold. Accumulation is always `f64`.
pub trait Coord: Copy + Into<f64> {}

impl Coord for f32 {}
impl Coord for f64 {}

/// The occlusion parameter. Always strictly below one; negative values are
/// only meaningful for the adaptive rule of the approximate builder.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Delta(f64);

impl Delta {
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value >= 1.0 {
            return Err(Error::invalid(format!("delta must be finite and < 1, got {value}")));
        }
        Ok(Delta(value))
    }

    /// A δ that carries the search guarantee, i.e. δ ∈ (0, 1).
    pub fn bounded(value: f64) -> Result<Self> {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {value}")));
        }
        Ok(Delta(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[inline]
pub(crate) fn sq_l2<T: Coord>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        for lane in 0..4 {
            let diff = a[i + lane].into() - b[i + lane].into();
            acc[lane] += diff * diff;
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        let diff = a[i].into() - b[i].into();
        tail += diff * diff;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_dims<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    if a.is_empty() {
        return Err(Error::invalid("points must have dimension > 0"));
    }
    Ok(())
}

pub fn sq_distance<T: Coord>(a: &[T], b: &[T]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(sq_l2(a, b))
}

pub fn distance<T: Coord>(a: &[T], b: &[T]) -> Result<f64> {
    sq_distance(a, b).map(f64::sqrt)
}

/// Occlusion test on precomputed squared distances: is `w` inside
/// `Occlusion_δ(u, v)`?
///
/// `uv` = d²(u,v), `wu` = d²(w,u), `wv` = d²(w,v).
#[inline]
pub fn occludes_sq(uv: f64, wu: f64, wv: f64, delta: f64) -> bool {
    wu < uv && wv + 2.0 * delta * (uv * wu).sqrt() < uv
}

/// True iff `w ∈ Occlusion_δ(u, v)`: d(w,u) < d(u,v) and
/// d²(w,v) + 2δ·d(u,v)·d(w,u) < d²(u,v).
pub fn is_occluded<T: Coord>(u: &[T], v: &[T], w: &[T], delta: Delta) -> Result<bool> {
    check_dims(u, v)?;
    check_dims(u, w)?;
    let uv = sq_l2(u, v);
    if uv == 0.0 {
        return Err(Error::invalid("occlusion region undefined for u = v"));
    }
    Ok(occludes_sq(uv, sq_l2(w, u), sq_l2(w, v), delta.value()))
}

/// Closed-ball membership: d(q,x) ≤ d_nn / δ.
pub fn in_delta_neighborhood<T: Coord>(q: &[T], x: &[T], d_nn: f64, delta: f64) -> Result<bool> {
    check_dims(q, x)?;
    let delta = Delta::bounded(delta)?;
    if d_nn.is_nan() || d_nn < 0.0 {
        return Err(Error::invalid(format!("nearest-neighbor distance must be >= 0, got {d_nn}")));
    }
    Ok(sq_l2(q, x).sqrt() <= d_nn / delta.value())
}
