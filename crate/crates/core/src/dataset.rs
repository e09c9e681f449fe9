//! Vector storage, the fvecs/ivecs container formats and reproducible
//! synthetic data.
//!
//! fvecs: per record a little-endian `i32` dimension `D` followed by `D`
//! little-endian `f32` values. ivecs: same layout with `i32` payload.
//!
//! Synthetic data is drawn from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded
//! with `seed_from_u64`, so a given `(n, d, distribution, seed)` produces
//! the same bytes on every platform.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::sq_l2;

/// Row-major `n × d` matrix of `f32` vectors. Row index is the point id.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    data: Vec<f32>,
}

impl Dataset {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be > 0"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "data length {} is not a positive multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite coordinate in row {}", pos / dim)));
        }
        if data.len() / dim > u32::MAX as usize - 1 {
            return Err(Error::invalid("too many points for 32-bit ids"));
        }
        Ok(Dataset { dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::invalid(format!("row {i} has dimension {} != {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Dataset::new(dim, data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub(crate) fn sq_dist(&self, a: u32, b: u32) -> f64 {
        sq_l2(self.row(a as usize), self.row(b as usize))
    }

    #[inline]
    pub(crate) fn sq_dist_to(&self, q: &[f32], id: u32) -> f64 {
        sq_l2(q, self.row(id as usize))
    }

    pub(crate) fn check_query(&self, q: &[f32]) -> Result<()> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: q.len() });
        }
        Ok(())
    }

    /// First pair of identical rows, if any (−0.0 and +0.0 compare equal).
    pub fn find_duplicate(&self) -> Option<(u32, u32)> {
        let mut seen: HashMap<Vec<u32>, u32> = HashMap::with_capacity(self.len());
        for (i, row) in self.rows().enumerate() {
            if let Some(&first) = seen.get(&row_key(row)) {
                return Some((first, i as u32));
            }
            seen.insert(row_key(row), i as u32);
        }
        None
    }

    pub fn ensure_distinct(&self) -> Result<()> {
        match self.find_duplicate() {
            Some((a, b)) => Err(Error::DuplicatePoints(a, b)),
            None => Ok(()),
        }
    }

    /// Drops repeated rows, keeping first occurrences. Returns the reduced
    /// dataset and the original id of every kept row.
    pub fn dedup(&self) -> (Dataset, Vec<u32>) {
        let mut seen = HashMap::with_capacity(self.len());
        let mut kept = Vec::new();
        let mut data = Vec::with_capacity(self.data.len());
        for (i, row) in self.rows().enumerate() {
            if seen.insert(row_key(row), ()).is_none() {
                kept.push(i as u32);
                data.extend_from_slice(row);
            }
        }
        (Dataset { dim: self.dim, data }, kept)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0f64; self.dim];
        for row in self.rows() {
            for (acc, &x) in c.iter_mut().zip(row) {
                *acc += x as f64;
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|x| *x /= n);
        c
    }
}

fn row_key(row: &[f32]) -> Vec<u32> {
    row.iter().map(|&x| if x == 0.0 { 0 } else { x.to_bits() }).collect()
}

/// Exact top-k lists for a query set.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub ids: Vec<Vec<u32>>,
    pub distances: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Attaches exact distances to a bare id list (as read from ivecs).
    pub fn from_ids(ids: Vec<Vec<u32>>, base: &Dataset, queries: &Dataset) -> Result<Self> {
        if ids.len() != queries.len() {
            return Err(Error::invalid(format!("ground truth has {} rows for {} queries", ids.len(), queries.len())));
        }
        base.check_query(queries.row(0))?;
        let mut distances = Vec::with_capacity(ids.len());
        for (qi, row) in ids.iter().enumerate() {
            let q = queries.row(qi);
            let mut ds = Vec::with_capacity(row.len());
            for &id in row {
                if id as usize >= base.len() {
                    return Err(Error::format(format!("ground-truth id {id} out of range")));
                }
                ds.push(base.sq_dist_to(q, id).sqrt());
            }
            distances.push(ds);
        }
        Ok(GroundTruth { ids, distances })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.ids.iter().map(Vec::len).min().unwrap_or(0)
    }
}

fn read_records<T, F>(path: &Path, decode: F) -> Result<Vec<Vec<T>>>
where
    F: Fn([u8; 4]) -> T,
{
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let mut records = Vec::new();
    let mut pos = 0usize;
    let mut expected: Option<usize> = None;
    while pos < bytes.len() {
        let idx = records.len();
        if bytes.len() - pos < 4 {
            return Err(Error::format(format!("record {idx}: truncated header")));
        }
        let d = i32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap());
        pos += 4;
        if d <= 0 {
            return Err(Error::format(format!("record {idx}: non-positive dimension {d}")));
        }
        let d = d as usize;
        match expected {
            None => expected = Some(d),
            Some(e) if e != d => return Err(Error::format(format!("record {idx}: dimension {d} differs from {e}"))),
            _ => {}
        }
        if bytes.len() - pos < 4 * d {
            return Err(Error::format(format!("record {idx}: truncated payload")));
        }
        let rec = bytes[pos..pos + 4 * d].chunks_exact(4).map(|c| decode(c.try_into().unwrap())).collect();
        pos += 4 * d;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::format("file holds no records"));
    }
    Ok(records)
}

fn write_records<T, F>(path: &Path, records: impl Iterator<Item = Vec<T>>, encode: F) -> Result<()>
where
    F: Fn(&T) -> [u8; 4],
{
    let mut out = BufWriter::new(File::create(path)?);
    for rec in records {
        let d = i32::try_from(rec.len()).map_err(|_| Error::invalid("record too long"))?;
        if d == 0 {
            return Err(Error::format("empty records cannot be written"));
        }
        out.write_all(&d.to_le_bytes())?;
        for x in &rec {
            out.write_all(&encode(x))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let rows = read_records(path.as_ref(), f32::from_le_bytes)?;
    let dim = rows[0].len();
    let data: Vec<f32> = rows.into_iter().flatten().collect();
    Dataset::new(dim, data).map_err(|e| Error::format(e.to_string()))
}

pub fn write_fvecs(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    write_records(path.as_ref(), data.rows().map(<[f32]>::to_vec), |x| x.to_le_bytes())
}

/// Writes arbitrary `f32` rows (ground-truth distance files).
pub fn write_fvecs_rows(path: impl AsRef<Path>, rows: &[Vec<f32>]) -> Result<()> {
    write_records(path.as_ref(), rows.iter().cloned(), |x| x.to_le_bytes())
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<u32>>> {
    let rows = read_records(path.as_ref(), i32::from_le_bytes)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.into_iter()
                .map(|x| u32::try_from(x).map_err(|_| Error::format(format!("record {i}: negative id {x}"))))
                .collect()
        })
        .collect()
}

pub fn write_ivecs(path: impl AsRef<Path>, ids: &[Vec<u32>]) -> Result<()> {
    for (i, row) in ids.iter().enumerate() {
        if row.is_empty() {
            return Err(Error::format(format!("record {i}: empty id list")));
        }
        if row.iter().any(|&x| x > i32::MAX as u32) {
            return Err(Error::invalid(format!("record {i}: id exceeds i32 range")));
        }
    }
    write_records(path.as_ref(), ids.iter().cloned(), |&x| (x as i32).to_le_bytes())
}

/// Synthetic point distributions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    /// Uniform on `[0,1]^d`.
    UniformCube,
    /// `clusters` isotropic Gaussians (σ = 0.1) with centers uniform in `[0,1]^d`.
    GaussianMixture { clusters: usize },
    /// Gaussian mixture living in a `latent`-dimensional subspace, mapped into
    /// `d` dimensions by a seeded random linear map plus small isotropic
    /// noise. Mimics descriptor data with low intrinsic dimension.
    LatentMixture { clusters: usize, latent: usize },
}

const MIXTURE_SIGMA: f64 = 0.1;
const LATENT_NOISE: f64 = 0.01;

pub fn gen_synthetic(n: usize, d: usize, dist: Distribution, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::invalid("n and d must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    match dist {
        Distribution::UniformCube => {
            data.extend((0..n * d).map(|_| rng.random::<f64>() as f32));
        }
        Distribution::GaussianMixture { clusters } => {
            check_clusters(clusters, n)?;
            let centers: Vec<f64> = (0..clusters * d).map(|_| rng.random::<f64>()).collect();
            let noise = Normal::new(0.0, MIXTURE_SIGMA).unwrap();
            for _ in 0..n {
                let c = rng.random_range(0..clusters);
                for j in 0..d {
                    data.push((centers[c * d + j] + noise.sample(&mut rng)) as f32);
                }
            }
        }
        Distribution::LatentMixture { clusters, latent } => {
            check_clusters(clusters, n)?;
            if latent == 0 || latent > d {
                return Err(Error::invalid(format!("latent dimension must be in 1..={d}")));
            }
            let std = Normal::new(0.0, 1.0).unwrap();
            let centers: Vec<f64> = (0..clusters * latent).map(|_| 4.0 * rng.random::<f64>()).collect();
            let map: Vec<f64> = (0..latent * d).map(|_| std.sample(&mut rng) / (latent as f64).sqrt()).collect();
            let noise = Normal::new(0.0, LATENT_NOISE).unwrap();
            let mut z = vec![0.0f64; latent];
            for _ in 0..n {
                let c = rng.random_range(0..clusters);
                for (i, zi) in z.iter_mut().enumerate() {
                    *zi = centers[c * latent + i] + std.sample(&mut rng);
                }
                for j in 0..d {
                    let mut x = noise.sample(&mut rng);
                    for (i, zi) in z.iter().enumerate() {
                        x += zi * map[i * d + j];
                    }
                    data.push(x as f32);
                }
            }
        }
    }
    Dataset::new(d, data)
}

fn check_clusters(clusters: usize, n: usize) -> Result<()> {
    if clusters == 0 || clusters > n {
        return Err(Error::invalid(format!("cluster count {clusters} must be in 1..={n}")));
    }
    Ok(())
}
