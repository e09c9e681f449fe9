//! One-bit-per-dimension quantization with a ratio estimator for squared
//! distances, and per-neighborhood code blocks for batch estimation.
//!
//! A vector `o` is centered on the dataset mean `c`, rotated by a seeded
//! orthogonal matrix and normalized; its code is the sign pattern. The
//! decoded unit code `x̄` has entries `±1/√d`. For a query `q`,
//!
//! ```text
//! ⟨unit(o−c), unit(q−c)⟩ ≈ ⟨x̄, unit(q−c)⟩ / ⟨x̄, unit(o−c)⟩
//! d̃²(o,q) = ‖o−c‖² + ‖q−c‖² − 2‖o−c‖‖q−c‖·estimate
//! ```
//!
//! Norms, correction factors and the centroid are kept as `f32`, exactly as
//! they are stored on disk.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;

use crate::build_approx::{build_aligned, BuildParams};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{ProximityGraph, SENTINEL};

pub const DEFAULT_BATCH_WIDTH: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationModel {
    dim: usize,
    seed: u64,
    batch_width: usize,
    centroid: Vec<f32>,
    // d×d row-major
    rotation: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVector {
    /// Sign bits, bit `i` at byte `i/8`, position `i%8`.
    pub code: Vec<u8>,
    pub norm: f32,
    pub corr: f32,
}

/// Codes of one node's `M` neighbor slots, grouped `B` at a time. Within a
/// group the codes are stored byte-transposed: byte `j` of every slot in the
/// group is contiguous, so one lookup-table row serves the whole group.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborBlock {
    ids: Vec<u32>,
    codes: Vec<u8>,
    norms: Vec<f32>,
    corrs: Vec<f32>,
    code_bytes: usize,
    batch_width: usize,
}

#[derive(Clone, Debug)]
pub struct PreparedQuery {
    /// `R·(q − c)`.
    pub rotated: Vec<f64>,
    pub norm: f64,
    pub unit: Vec<f64>,
    // 16 partial sums of `unit` per 4-dimension nibble.
    lut: Vec<[f64; 16]>,
    unit_sum: f64,
}

fn code_bytes(dim: usize) -> usize {
    dim.div_ceil(8)
}

fn random_rotation(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    // Modified Gram-Schmidt, applied twice for numerical orthogonality.
    for _ in 0..2 {
        for i in 0..dim {
            for j in 0..i {
                let dot: f64 = (0..dim).map(|c| m[i * dim + c] * m[j * dim + c]).sum();
                for c in 0..dim {
                    m[i * dim + c] -= dot * m[j * dim + c];
                }
            }
            let norm = (0..dim).map(|c| m[i * dim + c].powi(2)).sum::<f64>().sqrt();
            for c in 0..dim {
                m[i * dim + c] /= norm;
            }
        }
    }
    m
}

impl QuantizationModel {
    pub fn new(centroid: Vec<f32>, seed: u64, batch_width: usize) -> Result<Self> {
        if batch_width == 0 {
            return Err(Error::invalid("batch width B must be >= 1"));
        }
        if centroid.is_empty() {
            return Err(Error::invalid("centroid must have at least one dimension"));
        }
        let dim = centroid.len();
        Ok(QuantizationModel { dim, seed, batch_width, centroid, rotation: random_rotation(dim, seed) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn batch_width(&self) -> usize {
        self.batch_width
    }

    pub fn centroid(&self) -> &[f32] {
        &self.centroid
    }

    pub fn rotation(&self) -> &[f64] {
        &self.rotation
    }

    /// `R·(x − c)`.
    pub fn rotate_centered(&self, x: &[f32]) -> Vec<f64> {
        let d = self.dim;
        let centered: Vec<f64> = x.iter().zip(&self.centroid).map(|(&a, &c)| a as f64 - c as f64).collect();
        (0..d).map(|i| self.rotation[i * d..(i + 1) * d].iter().zip(&centered).map(|(r, x)| r * x).sum()).collect()
    }

    fn check(&self, x: &[f32]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: x.len() });
        }
        Ok(())
    }

    pub fn prepare(&self, q: &[f32]) -> Result<PreparedQuery> {
        self.check(q)?;
        let rotated = self.rotate_centered(q);
        let norm = rotated.iter().map(|x| x * x).sum::<f64>().sqrt();
        let unit: Vec<f64> = if norm > 0.0 { rotated.iter().map(|x| x / norm).collect() } else { vec![0.0; self.dim] };
        let lut = (0..code_bytes(self.dim) * 2)
            .map(|nib| {
                let mut t = [0.0f64; 16];
                for (pattern, slot) in t.iter_mut().enumerate() {
                    *slot = (0..4).filter(|b| pattern >> b & 1 == 1).filter_map(|b| unit.get(nib * 4 + b)).sum();
                }
                t
            })
            .collect();
        let unit_sum = unit.iter().sum();
        Ok(PreparedQuery { rotated, norm, unit, lut, unit_sum })
    }

    pub fn encode(&self, o: &[f32]) -> Result<EncodedVector> {
        self.check(o)?;
        let rotated = self.rotate_centered(o);
        let norm = rotated.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut code = vec![0u8; code_bytes(self.dim)];
        if norm == 0.0 {
            return Ok(EncodedVector { code, norm: 0.0, corr: 1.0 });
        }
        let mut abs_sum = 0.0;
        for (i, &x) in rotated.iter().enumerate() {
            if x >= 0.0 {
                code[i / 8] |= 1 << (i % 8);
            }
            abs_sum += x.abs() / norm;
        }
        let inv_sqrt_d = 1.0 / (self.dim as f64).sqrt();
        let mut corr = abs_sum * inv_sqrt_d;
        if corr.is_nan() || corr <= 0.0 {
            corr = inv_sqrt_d;
        }
        Ok(EncodedVector { code, norm: norm as f32, corr: corr.min(1.0) as f32 })
    }

    /// Inner-product estimate `⟨x̄, unit(q−c)⟩ / corr` by a direct bit loop.
    pub fn estimate_inner_product(&self, q: &PreparedQuery, enc: &EncodedVector) -> f64 {
        let mut s = 0.0;
        for (i, &u) in q.unit.iter().enumerate() {
            if enc.code[i / 8] >> (i % 8) & 1 == 1 {
                s += u;
            } else {
                s -= u;
            }
        }
        s / (self.dim as f64).sqrt() / enc.corr as f64
    }

    pub fn estimate_sq_distance(&self, q: &PreparedQuery, enc: &EncodedVector) -> f64 {
        let ip = self.estimate_inner_product(q, enc);
        combine(enc.norm as f64, q.norm, ip)
    }

    /// Estimates for every slot of `block`; sentinel slots give `+∞`.
    pub fn estimate_block(&self, q: &PreparedQuery, block: &NeighborBlock, out: &mut Vec<f64>) {
        out.clear();
        let b = block.batch_width;
        let cb = block.code_bytes;
        let scale = 1.0 / (self.dim as f64).sqrt();
        let mut acc = vec![0.0f64; b];
        for g in 0..block.ids.len() / b {
            let codes = &block.codes[g * b * cb..(g + 1) * b * cb];
            acc.iter_mut().for_each(|a| *a = 0.0);
            for j in 0..cb {
                let (lo, hi) = (&q.lut[2 * j], &q.lut[2 * j + 1]);
                for (a, &byte) in acc.iter_mut().zip(&codes[j * b..(j + 1) * b]) {
                    *a += lo[(byte & 15) as usize] + hi[(byte >> 4) as usize];
                }
            }
            for (s, &a) in acc.iter().enumerate() {
                let slot = g * b + s;
                if block.ids[slot] == SENTINEL {
                    out.push(f64::INFINITY);
                } else {
                    let ip = (2.0 * a - q.unit_sum) * scale / block.corrs[slot] as f64;
                    out.push(combine(block.norms[slot] as f64, q.norm, ip));
                }
            }
        }
    }
}

#[inline]
fn combine(norm_o: f64, norm_q: f64, ip: f64) -> f64 {
    (norm_o * norm_o + norm_q * norm_q - 2.0 * norm_o * norm_q * ip).max(0.0)
}

pub fn train(data: &Dataset, seed: u64, batch_width: usize) -> Result<QuantizationModel> {
    let centroid = data.centroid().into_iter().map(|c| c as f32).collect();
    QuantizationModel::new(centroid, seed, batch_width)
}

pub fn encode(model: &QuantizationModel, o: &[f32]) -> Result<EncodedVector> {
    model.encode(o)
}

pub fn estimate_sq_distance(model: &QuantizationModel, q: &PreparedQuery, enc: &EncodedVector) -> f64 {
    model.estimate_sq_distance(q, enc)
}

pub fn estimate_block(model: &QuantizationModel, q: &PreparedQuery, block: &NeighborBlock) -> Vec<f64> {
    let mut out = Vec::with_capacity(block.len());
    model.estimate_block(q, block, &mut out);
    out
}

impl NeighborBlock {
    /// Packs `slots` (ids, [`SENTINEL`] for empty) with their encodings.
    /// `slots.len()` must be a multiple of `batch_width`.
    pub fn pack(slots: &[u32], encodings: &[EncodedVector], dim: usize, batch_width: usize) -> Result<NeighborBlock> {
        if batch_width == 0 || !slots.len().is_multiple_of(batch_width) {
            return Err(Error::invalid(format!("slot count {} is not a multiple of B = {batch_width}", slots.len())));
        }
        let cb = code_bytes(dim);
        let m = slots.len();
        let mut block = NeighborBlock {
            ids: slots.to_vec(),
            codes: vec![0; m * cb],
            norms: vec![0.0; m],
            corrs: vec![1.0; m],
            code_bytes: cb,
            batch_width,
        };
        for (slot, &id) in slots.iter().enumerate() {
            if id == SENTINEL {
                continue;
            }
            let enc =
                encodings.get(id as usize).ok_or_else(|| Error::invalid(format!("slot id {id} has no encoding")))?;
            block.set_slot(slot, enc);
        }
        Ok(block)
    }

    fn byte_index(&self, slot: usize, j: usize) -> usize {
        let b = self.batch_width;
        (slot / b) * b * self.code_bytes + j * b + slot % b
    }

    fn set_slot(&mut self, slot: usize, enc: &EncodedVector) {
        for j in 0..self.code_bytes {
            let idx = self.byte_index(slot, j);
            self.codes[idx] = enc.code[j];
        }
        self.norms[slot] = enc.norm;
        self.corrs[slot] = enc.corr;
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn batch_width(&self) -> usize {
        self.batch_width
    }

    pub fn is_sentinel(&self, slot: usize) -> bool {
        self.ids[slot] == SENTINEL
    }

    /// The encoding held in `slot`, un-transposed.
    pub fn slot(&self, slot: usize) -> EncodedVector {
        EncodedVector {
            code: (0..self.code_bytes).map(|j| self.codes[self.byte_index(slot, j)]).collect(),
            norm: self.norms[slot],
            corr: self.corrs[slot],
        }
    }

    pub(crate) fn raw_codes(&self) -> &[u8] {
        &self.codes
    }

    pub(crate) fn norms(&self) -> &[f32] {
        &self.norms
    }

    pub(crate) fn corrs(&self) -> &[f32] {
        &self.corrs
    }

    pub(crate) fn from_raw(
        ids: Vec<u32>,
        codes: Vec<u8>,
        norms: Vec<f32>,
        corrs: Vec<f32>,
        dim: usize,
        batch_width: usize,
    ) -> Result<NeighborBlock> {
        let m = ids.len();
        if batch_width == 0
            || !m.is_multiple_of(batch_width)
            || codes.len() != m * code_bytes(dim)
            || norms.len() != m
            || corrs.len() != m
        {
            return Err(Error::format("inconsistent neighbor block layout"));
        }
        Ok(NeighborBlock { ids, codes, norms, corrs, code_bytes: code_bytes(dim), batch_width })
    }
}

/// A degree-aligned graph whose nodes carry their neighborhoods' codes.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedIndex {
    pub(crate) graph: ProximityGraph,
    pub(crate) data: Dataset,
    pub(crate) model: QuantizationModel,
    pub(crate) blocks: Vec<NeighborBlock>,
}

impl QuantizedIndex {
    pub(crate) fn from_parts(
        graph: ProximityGraph,
        data: Dataset,
        model: QuantizationModel,
        blocks: Vec<NeighborBlock>,
    ) -> Result<Self> {
        let idx = QuantizedIndex { graph, data, model, blocks };
        idx.validate()?;
        Ok(idx)
    }

    pub fn graph(&self) -> &ProximityGraph {
        &self.graph
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn model(&self) -> &QuantizationModel {
        &self.model
    }

    pub fn blocks(&self) -> &[NeighborBlock] {
        &self.blocks
    }

    pub fn block(&self, u: u32) -> &NeighborBlock {
        &self.blocks[u as usize]
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        let m = self.graph.max_degree();
        if self.blocks.len() != self.graph.len() || self.data.len() != self.graph.len() {
            return Err(Error::invalid("graph, data and block counts differ"));
        }
        if self.model.dim() != self.data.dim() {
            return Err(Error::DimensionMismatch { expected: self.data.dim(), actual: self.model.dim() });
        }
        for (u, block) in self.blocks.iter().enumerate() {
            if block.len() != m {
                return Err(Error::invalid(format!("node {u} has {} slots, expected {m}", block.len())));
            }
            let real: Vec<u32> = block.ids().iter().copied().filter(|&v| v != SENTINEL).collect();
            if real != self.graph.neighbors(u as u32) {
                return Err(Error::invalid(format!("node {u}: block ids disagree with adjacency")));
            }
        }
        Ok(())
    }
}

/// Approximate build with degree alignment, then per-node code blocks.
pub fn build_quantized(data: &Dataset, params: &BuildParams, seed: u64, batch_width: usize) -> Result<QuantizedIndex> {
    if batch_width == 0 || !params.max_degree.is_multiple_of(batch_width) {
        return Err(Error::invalid(format!(
            "M = {} must be a multiple of the batch width B = {batch_width}",
            params.max_degree
        )));
    }
    let (graph, slots) = build_aligned(data, params)?;
    let model = train(data, seed, batch_width)?;
    let encodings: Vec<EncodedVector> =
        (0..data.len()).into_par_iter().map(|i| model.encode(data.row(i))).collect::<Result<_>>()?;
    let blocks = slots
        .par_iter()
        .map(|s| NeighborBlock::pack(s, &encodings, data.dim(), batch_width))
        .collect::<Result<Vec<_>>>()?;
    QuantizedIndex::from_parts(graph, data.clone(), model, blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, Distribution};
    use crate::graph::reachable_set;

    fn model(dim: usize, seed: u64) -> QuantizationModel {
        QuantizationModel::new(vec![0.0; dim], seed, 4).unwrap()
    }

    fn identity(dim: usize) -> QuantizationModel {
        let mut m = model(dim, 0);
        m.rotation = (0..dim * dim).map(|i| if i / dim == i % dim { 1.0 } else { 0.0 }).collect();
        m
    }

    #[test]
    fn rotation_is_orthogonal_and_seeded() {
        for dim in [1, 3, 17, 64] {
            let m = model(dim, 9);
            let r = m.rotation();
            for i in 0..dim {
                for j in 0..dim {
                    let dot: f64 = (0..dim).map(|c| r[c * dim + i] * r[c * dim + j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-5);
                }
            }
            assert_eq!(m, model(dim, 9));
        }
        assert!(model(1, 3).rotation()[0].abs() == 1.0);
        assert_ne!(model(8, 1).rotation(), model(8, 2).rotation());
    }

    #[test]
    fn encode_examples() {
        let m = identity(4);
        let enc = m.encode(&[0.0; 4]).unwrap();
        assert_eq!(enc.norm, 0.0);
        let enc = m.encode(&[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!((enc.corr - 0.5).abs() < 1e-7);
        assert_eq!(enc.norm, 2.0);

        let m = model(32, 4);
        let o = gen_synthetic(1, 32, Distribution::UniformCube, 5).unwrap();
        let enc = m.encode(o.row(0)).unwrap();
        let rot = m.rotate_centered(o.row(0));
        let n = rot.iter().map(|x| x * x).sum::<f64>().sqrt();
        let xbar: Vec<f64> =
            (0..32).map(|i| if enc.code[i / 8] >> (i % 8) & 1 == 1 { 1.0 } else { -1.0 } / (32f64).sqrt()).collect();
        let corr: f64 = xbar.iter().zip(&rot).map(|(a, b)| a * b / n).sum();
        assert!((corr - enc.corr as f64).abs() < 1e-6);
        assert!(enc.corr > 0.0 && enc.corr <= 1.0);
    }

    #[test]
    fn one_dimension_is_exact() {
        let m = QuantizationModel::new(vec![0.5], 7, 1).unwrap();
        for (o, q) in [(1.0f32, 3.0f32), (-2.0, 0.25), (0.75, -4.0)] {
            let enc = m.encode(&[o]).unwrap();
            let pq = m.prepare(&[q]).unwrap();
            let est = m.estimate_sq_distance(&pq, &enc);
            let truth = ((o - q) as f64).powi(2);
            assert!((est - truth).abs() <= 1e-6 * truth.max(1.0));
        }
        let enc = m.encode(&[0.5]).unwrap();
        let pq = m.prepare(&[0.5]).unwrap();
        assert_eq!(m.estimate_sq_distance(&pq, &enc), 0.0);
    }

    #[test]
    fn rotation_preserves_distances() {
        let m = model(24, 11);
        let pts = gen_synthetic(20, 24, Distribution::UniformCube, 3).unwrap();
        for i in 0..19 {
            let a = m.rotate_centered(pts.row(i));
            let b = m.rotate_centered(pts.row(i + 1));
            let rot: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            let raw = pts.sq_dist(i as u32, i as u32 + 1);
            assert!((rot - raw).abs() <= 1e-5 * raw);
        }
    }

    #[test]
    fn block_matches_scalar_path() {
        let dim = 37;
        let data = gen_synthetic(200, dim, Distribution::UniformCube, 13).unwrap();
        let m = train(&data, 5, 16).unwrap();
        let encs: Vec<EncodedVector> = data.rows().map(|r| m.encode(r).unwrap()).collect();
        let mut slots: Vec<u32> = (0..64).map(|i| i * 3).collect();
        slots[5] = SENTINEL;
        slots[63] = SENTINEL;
        let block = NeighborBlock::pack(&slots, &encs, dim, 16).unwrap();
        let q = gen_synthetic(10, dim, Distribution::UniformCube, 14).unwrap();
        for qr in q.rows() {
            let pq = m.prepare(qr).unwrap();
            let est = estimate_block(&m, &pq, &block);
            assert_eq!(est.len(), 64);
            for (s, &id) in slots.iter().enumerate() {
                if id == SENTINEL {
                    assert_eq!(est[s], f64::INFINITY);
                    continue;
                }
                let scalar = m.estimate_sq_distance(&pq, &encs[id as usize]);
                assert!((est[s] - scalar).abs() <= 1e-6 * scalar.abs().max(1e-12));
                assert_eq!(block.slot(s), encs[id as usize]);
            }
        }
        let empty = NeighborBlock::pack(&[SENTINEL; 16], &encs, dim, 16).unwrap();
        let pq = m.prepare(q.row(0)).unwrap();
        assert!(estimate_block(&m, &pq, &empty).iter().all(|x| x.is_infinite()));
        assert!(NeighborBlock::pack(&[0; 10], &encs, dim, 16).is_err());
    }

    #[test]
    fn inner_product_estimate_is_nearly_unbiased() {
        let dim = 64;
        let data = gen_synthetic(2000, dim, Distribution::UniformCube, 21).unwrap();
        let m = train(&data, 3, 32).unwrap();
        let mut err = 0.0;
        for i in 0..1000 {
            let (o, q) = (data.row(i), data.row(i + 1000));
            let enc = m.encode(o).unwrap();
            let pq = m.prepare(q).unwrap();
            let ro = m.rotate_centered(o);
            let no = ro.iter().map(|x| x * x).sum::<f64>().sqrt();
            let truth: f64 = ro.iter().zip(&pq.unit).map(|(a, b)| a / no * b).sum();
            err += m.estimate_inner_product(&pq, &enc) - truth;
        }
        assert!((err / 1000.0).abs() < 0.02);
    }

    #[test]
    fn quantized_build_structure() {
        let data = gen_synthetic(600, 16, Distribution::UniformCube, 31).unwrap();
        let params = BuildParams { max_degree: 32, candidates: 64, t: 16, iterations: 2, ..Default::default() };
        assert!(build_quantized(&data, &params, 1, 24).is_err());
        let idx = build_quantized(&data, &params, 1, 16).unwrap();
        idx.validate().unwrap();
        assert!(idx.blocks().iter().all(|b| b.len() == 32));
        assert_eq!(reachable_set(idx.graph(), idx.graph().entry()).len(), 600);
    }
}
