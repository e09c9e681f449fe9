//! Python bindings: datasets, the three builders, search and index files.
//! Vectors cross the boundary as lists of floats.

use ::demg as core;
use core::build_approx::DEFAULT_SEED;
use core::dataset::{read_fvecs, write_fvecs};
use core::geometry::{is_occluded, Delta};
use core::quantizer::DEFAULT_BATCH_WIDTH;
use core::{Bootstrap, BuildParams, Distribution, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// A set of equal-length float32 vectors.
#[pyclass(frozen, module = "demg_py")]
struct Dataset(core::Dataset);

#[pymethods]
impl Dataset {
    #[new]
    fn new(rows: Vec<Vec<f32>>) -> PyResult<Self> {
        core::Dataset::from_rows(&rows).map(Dataset).map_err(to_py)
    }

    /// `dist`: "uniform", "gaussian" or "latent".
    #[staticmethod]
    #[pyo3(signature = (n, d, dist = "uniform", clusters = 10, latent = 8, seed = DEFAULT_SEED))]
    fn synthetic(n: usize, d: usize, dist: &str, clusters: usize, latent: usize, seed: u64) -> PyResult<Self> {
        let dist = match dist {
            "uniform" => Distribution::UniformCube,
            "gaussian" => Distribution::GaussianMixture { clusters },
            "latent" => Distribution::LatentMixture { clusters, latent },
            other => return Err(PyValueError::new_err(format!("unknown distribution '{other}'"))),
        };
        core::gen_synthetic(n, d, dist, seed).map(Dataset).map_err(to_py)
    }

    #[staticmethod]
    fn read_fvecs(path: &str) -> PyResult<Self> {
        read_fvecs(path).map(Dataset).map_err(to_py)
    }

    fn write_fvecs(&self, path: &str) -> PyResult<()> {
        write_fvecs(path, &self.0).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.0.len() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.0.row(i).to_vec())
    }

    fn to_list(&self) -> Vec<Vec<f32>> {
        self.0.rows().map(<[f32]>::to_vec).collect()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, dim={})", self.0.len(), self.0.dim())
    }
}

/// Outcome of one query.
#[pyclass(frozen, get_all, module = "demg_py")]
struct SearchReport {
    ids: Vec<u32>,
    distances: Vec<f64>,
    dist_computations: usize,
    approx_computations: usize,
    hops: usize,
    final_l: usize,
    /// `(id, distance)` of the farthest certified local optimum beyond the top k.
    local_opt: Option<(u32, f64)>,
    delta_prime: Option<f64>,
    terminated_by: String,
    probes: usize,
}

impl From<core::SearchReport> for SearchReport {
    fn from(r: core::SearchReport) -> Self {
        SearchReport {
            ids: r.results.iter().map(|n| n.id).collect(),
            distances: r.results.iter().map(|n| n.dist).collect(),
            dist_computations: r.dist_computations,
            approx_computations: r.approx_computations,
            hops: r.hops,
            final_l: r.final_l,
            local_opt: r.local_opt.map(|n| (n.id, n.dist)),
            delta_prime: r.delta_prime,
            terminated_by: format!("{:?}", r.terminated_by),
            probes: r.probes,
        }
    }
}

#[pymethods]
impl SearchReport {
    fn __repr__(&self) -> String {
        format!("SearchReport(ids={:?}, dist_computations={})", self.ids, self.dist_computations)
    }
}

/// A built graph index (exact, approximate or quantized) with its vectors.
#[pyclass(frozen, module = "demg_py")]
struct Index(core::Index);

#[pymethods]
impl Index {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::Index::load(path).map(Index).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    #[staticmethod]
    fn from_bytes(bytes: Vec<u8>) -> PyResult<Self> {
        core::Index::from_bytes(&bytes).map(Index).map_err(to_py)
    }

    /// Error-bounded search, or probing search on a quantized index.
    #[pyo3(signature = (q, k = 10, alpha = 1.0))]
    fn search(&self, py: Python<'_>, q: Vec<f32>, k: usize, alpha: f64) -> PyResult<SearchReport> {
        py.detach(|| self.0.search(&q, k, alpha)).map(Into::into).map_err(to_py)
    }

    /// Fixed-size beam search with candidate-set size `l`.
    #[pyo3(signature = (q, k, l, start = None))]
    fn greedy_search(&self, q: Vec<f32>, k: usize, l: usize, start: Option<u32>) -> PyResult<SearchReport> {
        let g = self.0.graph();
        core::greedy_search(g, self.0.data(), &q, start.unwrap_or(g.entry()), k, l).map(Into::into).map_err(to_py)
    }

    /// Monotonic greedy top-1 walk; returns `(id, distance, path length)`.
    #[pyo3(signature = (q, start = None))]
    fn top1(&self, q: Vec<f32>, start: Option<u32>) -> PyResult<(u32, f64, usize)> {
        let g = self.0.graph();
        let r = core::monotonic_top1(g, self.0.data(), &q, start.unwrap_or(g.entry())).map_err(to_py)?;
        Ok((r.id, r.dist, r.path_len))
    }

    /// Non-edges `(u, v)` that no out-neighbor of `u` occludes.
    fn audit(&self, py: Python<'_>, delta: f64) -> PyResult<Vec<(u32, u32)>> {
        Delta::bounded(delta).map_err(to_py)?;
        Ok(py.detach(|| core::audit_construction(self.0.graph(), self.0.data(), delta)))
    }

    fn neighbors(&self, u: u32) -> PyResult<Vec<u32>> {
        let g = self.0.graph();
        if u as usize >= g.len() {
            return Err(PyValueError::new_err(format!("node {u} out of range")));
        }
        Ok(g.neighbors(u).to_vec())
    }

    #[getter]
    fn mode(&self) -> String {
        format!("{:?}", self.0.graph().meta().mode).to_lowercase()
    }

    #[getter]
    fn entry(&self) -> u32 {
        self.0.graph().entry()
    }

    #[getter]
    fn max_degree(&self) -> usize {
        self.0.graph().max_degree()
    }

    #[getter]
    fn delta(&self) -> Option<f64> {
        self.0.graph().meta().delta
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.0.graph().edge_count()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.data().dim()
    }

    fn __len__(&self) -> usize {
        self.0.graph().len()
    }

    fn __repr__(&self) -> String {
        format!("Index(mode={}, n={}, edges={})", self.mode(), self.__len__(), self.edge_count())
    }
}

#[pyfunction]
#[pyo3(signature = (data, delta = 0.05))]
fn build_exact(py: Python<'_>, data: &Dataset, delta: f64) -> PyResult<Index> {
    let graph = py.detach(|| core::build_exact(&data.0, delta)).map_err(to_py)?;
    Ok(Index(core::Index::Graph { graph, data: data.0.clone() }))
}

fn params(
    m: usize,
    l: usize,
    t: Option<usize>,
    iters: usize,
    seed: u64,
    bootstrap: &str,
    delta: Option<f64>,
) -> PyResult<BuildParams> {
    let bootstrap = match bootstrap {
        "knn" => Bootstrap::ExactKnn,
        "random" => Bootstrap::RandomRegular,
        other => return Err(PyValueError::new_err(format!("unknown bootstrap '{other}'"))),
    };
    Ok(BuildParams {
        max_degree: m,
        candidates: l,
        t: t.unwrap_or(m),
        iterations: iters,
        seed,
        bootstrap,
        fixed_delta: delta,
    })
}

/// Iterative approximate build. `delta` fixes a global δ; without it the
/// adaptive rule applies.
#[pyfunction]
#[pyo3(signature = (data, m = 64, l = 1000, t = None, iters = 3, seed = DEFAULT_SEED, bootstrap = "knn", delta = None))]
#[allow(clippy::too_many_arguments)]
fn build_approx(
    py: Python<'_>,
    data: &Dataset,
    m: usize,
    l: usize,
    t: Option<usize>,
    iters: usize,
    seed: u64,
    bootstrap: &str,
    delta: Option<f64>,
) -> PyResult<Index> {
    let p = params(m, l, t, iters, seed, bootstrap, delta)?;
    let graph = py.detach(|| core::build_approx(&data.0, &p)).map_err(to_py)?;
    Ok(Index(core::Index::Graph { graph, data: data.0.clone() }))
}

#[pyfunction]
#[pyo3(signature = (data, m = 64, l = 1000, t = None, iters = 3, seed = DEFAULT_SEED, bootstrap = "knn", delta = None, batch_width = DEFAULT_BATCH_WIDTH))]
#[allow(clippy::too_many_arguments)]
fn build_quantized(
    py: Python<'_>,
    data: &Dataset,
    m: usize,
    l: usize,
    t: Option<usize>,
    iters: usize,
    seed: u64,
    bootstrap: &str,
    delta: Option<f64>,
    batch_width: usize,
) -> PyResult<Index> {
    let p = params(m, l, t, iters, seed, bootstrap, delta)?;
    let idx = py.detach(|| core::build_quantized(&data.0, &p, seed, batch_width)).map_err(to_py)?;
    Ok(Index(core::Index::Quantized(idx)))
}

/// Exact top-k as `(id, distance)` pairs, ties by id.
#[pyfunction]
fn brute_force_knn(data: &Dataset, q: Vec<f32>, k: usize) -> PyResult<Vec<(u32, f64)>> {
    let r = core::eval::brute_force_knn(&data.0, &q, k).map_err(to_py)?;
    Ok(r.into_iter().map(|n| (n.id, n.dist)).collect())
}

/// Per-query id lists and matching distance lists.
type IdsAndDistances = (Vec<Vec<u32>>, Vec<Vec<f64>>);

/// Top-k ids and distances for every query.
#[pyfunction]
fn ground_truth(py: Python<'_>, base: &Dataset, queries: &Dataset, k: usize) -> PyResult<IdsAndDistances> {
    let gt = py.detach(|| core::eval::ground_truth(&base.0, &queries.0, k)).map_err(to_py)?;
    Ok((gt.ids, gt.distances))
}

/// Fraction of `ids` among the true top k (plain id overlap).
#[pyfunction]
fn recall(ids: Vec<u32>, truth: Vec<u32>, k: usize) -> f64 {
    core::eval::recall_ids(&ids, &truth, k)
}

/// Whether `w` lies in the δ-occlusion region of the edge `(u, v)`.
#[pyfunction]
fn occludes(u: Vec<f64>, v: Vec<f64>, w: Vec<f64>, delta: f64) -> PyResult<bool> {
    let delta = Delta::new(delta).map_err(to_py)?;
    is_occluded(&u, &v, &w, delta).map_err(to_py)
}

#[pymodule]
fn demg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Index>()?;
    m.add_class::<SearchReport>()?;
    m.add_function(wrap_pyfunction!(build_exact, m)?)?;
    m.add_function(wrap_pyfunction!(build_approx, m)?)?;
    m.add_function(wrap_pyfunction!(build_quantized, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_knn, m)?)?;
    m.add_function(wrap_pyfunction!(ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(recall, m)?)?;
    m.add_function(wrap_pyfunction!(occludes, m)?)?;
    m.add("DEFAULT_SEED", DEFAULT_SEED)?;
    Ok(())
}
