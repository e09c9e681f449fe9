//! Loadable index and the "DEMG" file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "DEMG" | version u32 | mode u8 | n u64 | d u32 | M u32 | entry u32
//! params: delta f64 (NaN = none) | t u32 | L u32 | iters u32 | seed u64
//!         | bootstrap u8 | slot width W u32
//! adjacency: n × W u32, unused slots = u32::MAX
//! vectors: n × d f32
//! quantized only: seed u64 | B u32 | centroid d × f32
//!                 | per node: M × ⌈d/8⌉ code bytes, M norms f32, M corrs f32
//! ```
//!
//! Uncapped exact graphs (M = 0) use the largest out-degree as `W`.

use std::fs;
use std::path::Path;

use crate::build_approx::Bootstrap;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{BuildMeta, BuildMode, ProximityGraph, SENTINEL};
use crate::quantizer::{NeighborBlock, QuantizationModel, QuantizedIndex};
use crate::search::{error_bounded_search_with, SearchReport, SearchScratch};
use crate::search_quantized::probing_search_with;

pub const MAGIC: &[u8; 4] = b"DEMG";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Index {
    /// Exact or approximate graph searched with exact distances.
    Graph {
        graph: ProximityGraph,
        data: Dataset,
    },
    Quantized(QuantizedIndex),
}

impl Index {
    pub fn graph(&self) -> &ProximityGraph {
        match self {
            Index::Graph { graph, .. } => graph,
            Index::Quantized(q) => q.graph(),
        }
    }

    pub fn data(&self) -> &Dataset {
        match self {
            Index::Graph { data, .. } => data,
            Index::Quantized(q) => q.data(),
        }
    }

    /// Error-bounded search from the entry node; probing search on quantized indexes.
    pub fn search(&self, q: &[f32], k: usize, alpha: f64) -> Result<SearchReport> {
        let mut scratch = SearchScratch::new(self.graph().len());
        self.search_with(q, k, alpha, &mut scratch)
    }

    pub fn search_with(&self, q: &[f32], k: usize, alpha: f64, scratch: &mut SearchScratch) -> Result<SearchReport> {
        match self {
            Index::Graph { graph, data } => error_bounded_search_with(graph, data, q, graph.entry(), k, alpha, scratch),
            Index::Quantized(idx) => probing_search_with(idx, q, k, alpha, scratch),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Index> {
        Index::from_bytes(&fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let graph = self.graph();
        let data = self.data();
        let meta = graph.meta();
        let width = match graph.max_degree() {
            0 => graph.adjacency().iter().map(Vec::len).max().unwrap_or(0),
            m => m,
        };
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        put_u32(&mut w, FORMAT_VERSION);
        w.push(meta.mode.to_byte());
        w.extend_from_slice(&(graph.len() as u64).to_le_bytes());
        put_u32(&mut w, data.dim() as u32);
        put_u32(&mut w, graph.max_degree() as u32);
        put_u32(&mut w, graph.entry());
        w.extend_from_slice(&meta.delta.unwrap_or(f64::NAN).to_le_bytes());
        put_u32(&mut w, meta.t);
        put_u32(&mut w, meta.candidates);
        put_u32(&mut w, meta.iterations);
        w.extend_from_slice(&meta.seed.to_le_bytes());
        w.push(meta.bootstrap.to_byte());
        put_u32(&mut w, width as u32);
        for list in graph.adjacency() {
            for slot in 0..width {
                put_u32(&mut w, list.get(slot).copied().unwrap_or(SENTINEL));
            }
        }
        for &x in data.as_slice() {
            w.extend_from_slice(&x.to_le_bytes());
        }
        if let Index::Quantized(q) = self {
            let model = q.model();
            w.extend_from_slice(&model.seed().to_le_bytes());
            put_u32(&mut w, model.batch_width() as u32);
            for &c in model.centroid() {
                w.extend_from_slice(&c.to_le_bytes());
            }
            for b in q.blocks() {
                w.extend_from_slice(b.raw_codes());
                for &x in b.norms().iter().chain(b.corrs()) {
                    w.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Index> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("not a DEMG index (bad magic)"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported format version {version}")));
        }
        let mode = BuildMode::from_byte(r.u8()?)?;
        let n = usize::try_from(r.u64()?).map_err(|_| Error::format("node count overflows"))?;
        let d = r.u32()? as usize;
        let m = r.u32()? as usize;
        let entry = r.u32()?;
        let delta = r.f64()?;
        let meta = BuildMeta {
            mode,
            delta: (!delta.is_nan()).then_some(delta),
            t: r.u32()?,
            candidates: r.u32()?,
            iterations: r.u32()?,
            seed: r.u64()?,
            bootstrap: Bootstrap::from_byte(r.u8()?)?,
        };
        let width = r.u32()? as usize;
        if n == 0 || d == 0 {
            return Err(Error::format("index has no points or zero dimension"));
        }
        if m > 0 && width != m {
            return Err(Error::format(format!("slot width {width} differs from M = {m}")));
        }
        let need = n
            .checked_mul(width)
            .and_then(|a| a.checked_mul(4))
            .and_then(|a| a.checked_add(n.checked_mul(d)?.checked_mul(4)?))
            .ok_or_else(|| Error::format("index size overflows"))?;
        if r.remaining() < need {
            return Err(Error::format("index file truncated"));
        }
        let mut adjacency = Vec::with_capacity(n);
        for u in 0..n {
            let mut list = Vec::with_capacity(width);
            let mut ended = false;
            for _ in 0..width {
                let v = r.u32()?;
                if v == SENTINEL {
                    ended = true;
                } else if ended {
                    return Err(Error::format(format!("node {u}: neighbor after a sentinel slot")));
                } else {
                    list.push(v);
                }
            }
            adjacency.push(list);
        }
        let mut coords = Vec::with_capacity(n * d);
        for _ in 0..n * d {
            coords.push(r.f32()?);
        }
        let data = Dataset::new(d, coords)?;
        let graph = ProximityGraph::from_adjacency(adjacency, m, entry, meta)
            .map_err(|e| Error::format(format!("invalid graph: {e}")))?;
        let index = match mode {
            BuildMode::Quantized => {
                let seed = r.u64()?;
                let b = r.u32()? as usize;
                let centroid = (0..d).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                let model = QuantizationModel::new(centroid, seed, b).map_err(|e| Error::format(e.to_string()))?;
                let code_len = m * d.div_ceil(8);
                let mut blocks = Vec::with_capacity(n);
                for u in 0..n {
                    let codes = r.take(code_len)?.to_vec();
                    let norms = (0..m).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                    let corrs = (0..m).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                    let mut ids = graph.neighbors(u as u32).to_vec();
                    ids.resize(m, SENTINEL);
                    blocks.push(NeighborBlock::from_raw(ids, codes, norms, corrs, d, b)?);
                }
                Index::Quantized(
                    QuantizedIndex::from_parts(graph, data, model, blocks).map_err(|e| Error::format(e.to_string()))?,
                )
            }
            _ => Index::Graph { graph, data },
        };
        if r.remaining() != 0 {
            return Err(Error::format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(index)
    }
}

fn put_u32(w: &mut Vec<u8>, x: u32) {
    w.extend_from_slice(&x.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::format("index file truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}
