use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use demg::dataset::{read_fvecs, read_ivecs};
use demg::eval::{brute_force_knn, recall};
use demg::graph::{degree_stats, BuildMeta};
use demg::{build_approx, gen_synthetic, BuildParams, Dataset, Distribution, Index, ProximityGraph};
use tempfile::TempDir;

fn demg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demg")).args(args).output().expect("spawn demg")
}

fn ok(args: &[&str]) -> Output {
    let out = demg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn fails(args: &[&str]) -> String {
    let out = demg(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "diagnostic is not one line: {err:?}");
    err
}

struct Files(TempDir);

impl Files {
    fn new() -> Self {
        Files(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }
}

fn gen(f: &Files, name: &str, n: usize, d: usize, seed: u64) -> Dataset {
    ok(&["gen", "--n", &n.to_string(), "--d", &d.to_string(), "--seed", &seed.to_string(), "--out", &f.s(name)]);
    read_fvecs(f.path(name)).unwrap()
}

/// Base, queries and 10-NN ground truth on small uniform data.
fn fixture(f: &Files) -> (Dataset, Dataset) {
    let base = gen(f, "base.fvecs", 1500, 6, 1);
    let queries = gen(f, "q.fvecs", 30, 6, 2);
    ok(&["gt", "--base", &f.s("base.fvecs"), "--queries", &f.s("q.fvecs"), "--k", "10", "--out", &f.s("gt.ivecs")]);
    (base, queries)
}

#[test]
fn gen_tiny_file_round_trips() {
    let f = Files::new();
    let ds = gen(&f, "one.fvecs", 1, 3, 5);
    assert_eq!((ds.len(), ds.dim()), (1, 3));
    assert!(ds.row(0).iter().all(|&x| (0.0..=1.0).contains(&x)));
    assert_eq!(ds, gen_synthetic(1, 3, Distribution::UniformCube, 5).unwrap());
}

#[test]
fn gen_is_deterministic_per_seed() {
    let f = Files::new();
    gen(&f, "a.fvecs", 200, 4, 11);
    gen(&f, "b.fvecs", 200, 4, 11);
    gen(&f, "c.fvecs", 200, 4, 12);
    assert_eq!(fs::read(f.path("a.fvecs")).unwrap(), fs::read(f.path("b.fvecs")).unwrap());
    assert_ne!(fs::read(f.path("a.fvecs")).unwrap(), fs::read(f.path("c.fvecs")).unwrap());
}

#[test]
fn gen_header_scan_matches_shape() {
    let f = Files::new();
    ok(&["gen", "--n", "37", "--d", "5", "--dist", "latent:3:2", "--out", &f.s("x.fvecs")]);
    let bytes = fs::read(f.path("x.fvecs")).unwrap();
    let record = 4 + 5 * 4;
    assert_eq!(bytes.len(), 37 * record);
    for r in 0..37 {
        let header = i32::from_le_bytes(bytes[r * record..r * record + 4].try_into().unwrap());
        assert_eq!(header, 5);
    }
}

#[test]
fn gt_self_query_is_identity() {
    let f = Files::new();
    gen(&f, "base.fvecs", 100, 3, 3);
    ok(&["gt", "--base", &f.s("base.fvecs"), "--queries", &f.s("base.fvecs"), "--k", "1", "--out", &f.s("gt.ivecs")]);
    let ids = read_ivecs(f.path("gt.ivecs")).unwrap();
    assert_eq!(ids, (0..100u32).map(|i| vec![i]).collect::<Vec<_>>());
    let dists = read_fvecs(f.path("gt.ivecs.dist.fvecs")).unwrap();
    assert!(dists.as_slice().iter().all(|&d| d == 0.0));
}

#[test]
fn gt_matches_brute_force_oracle() {
    let f = Files::new();
    let (base, queries) = fixture(&f);
    let ids = read_ivecs(f.path("gt.ivecs")).unwrap();
    let dists = read_fvecs(f.path("gt.ivecs.dist.fvecs")).unwrap();
    for (i, q) in queries.rows().enumerate() {
        let oracle = brute_force_knn(&base, q, 10).unwrap();
        assert_eq!(ids[i], oracle.iter().map(|n| n.id).collect::<Vec<_>>());
        for (j, n) in oracle.iter().enumerate() {
            assert_eq!(dists.row(i)[j], n.dist as f32);
        }
    }
}

#[test]
fn gt_rejects_k_above_n() {
    let f = Files::new();
    gen(&f, "base.fvecs", 5, 2, 1);
    let err = fails(&[
        "gt",
        "--base",
        &f.s("base.fvecs"),
        "--queries",
        &f.s("base.fvecs"),
        "--k",
        "6",
        "--out",
        &f.s("gt.ivecs"),
    ]);
    assert!(err.starts_with("error:"));
}

#[test]
fn build_load_round_trip_equals_library_build() {
    let f = Files::new();
    let base = gen(&f, "base.fvecs", 800, 4, 7);
    ok(&[
        "build",
        "--base",
        &f.s("base.fvecs"),
        "--M",
        "12",
        "--L",
        "40",
        "--iters",
        "2",
        "--seed",
        "99",
        "--out",
        &f.s("a.demg"),
    ]);
    let loaded = Index::load(f.path("a.demg")).unwrap();
    let params = BuildParams { max_degree: 12, candidates: 40, t: 12, iterations: 2, seed: 99, ..Default::default() };
    let expected = build_approx(&base, &params).unwrap();
    assert_eq!(loaded.graph(), &expected);
    assert_eq!(loaded.data(), &base);
}

#[test]
fn approx_build_is_deterministic_per_seed_and_thread_count() {
    let f = Files::new();
    gen(&f, "base.fvecs", 600, 5, 8);
    let b = f.s("base.fvecs");
    let common = ["build", "--base", b.as_str(), "--M", "10", "--L", "30", "--iters", "2"];
    ok(&[&common[..], &["--threads", "1", "--out", &f.s("a.demg")]].concat());
    ok(&[&common[..], &["--threads", "2", "--out", &f.s("b.demg")]].concat());
    ok(&[&common[..], &["--seed", "1", "--bootstrap", "random", "--out", &f.s("c.demg")]].concat());
    let a = fs::read(f.path("a.demg")).unwrap();
    assert_eq!(a, fs::read(f.path("b.demg")).unwrap());
    assert_ne!(a, fs::read(f.path("c.demg")).unwrap());
}

#[test]
fn exact_audit_flag_reports_zero_violations() {
    let f = Files::new();
    gen(&f, "base.fvecs", 150, 2, 4);
    let out = ok(&[
        "build",
        "--base",
        &f.s("base.fvecs"),
        "--mode",
        "exact",
        "--delta",
        "0.5",
        "--audit",
        "--out",
        &f.s("e.demg"),
    ]);
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("audit: 0 violations over 22350 ordered pairs"), "{err}");
    let idx = Index::load(f.path("e.demg")).unwrap();
    assert_eq!(idx.graph().meta().delta, Some(0.5));
    assert_eq!(idx.graph().max_degree(), 0);
}

#[test]
fn build_argument_errors() {
    let f = Files::new();
    gen(&f, "base.fvecs", 100, 4, 4);
    let b = f.s("base.fvecs");
    let err =
        fails(&["build", "--base", &b, "--mode", "quantized", "--M", "20", "--batch-width", "8", "--out", &f.s("q")]);
    assert!(err.contains("multiple"), "{err}");
    fails(&["build", "--base", &b, "--mode", "approx", "--audit", "--out", &f.s("x")]);
    fails(&["build", "--base", &b, "--threads", "0", "--out", &f.s("x")]);
    fails(&["build", "--base", &f.s("missing.fvecs"), "--out", &f.s("x")]);
    fails(&["build", "--base", &b, "--mode", "exact", "--delta", "1.5", "--out", &f.s("x")]);
    fails(&["build", "--base", &b, "--mode", "sideways", "--out", &f.s("x")]);
    assert!(!f.path("x").exists());
}

#[test]
fn exact_build_above_guard_needs_confirmation() {
    let f = Files::new();
    gen(&f, "big.fvecs", 20_001, 1, 4);
    let err = fails(&["build", "--base", &f.s("big.fvecs"), "--mode", "exact", "--out", &f.s("x")]);
    assert!(err.contains("--allow-large"), "{err}");
}

fn bench_rows(f: &Files, index: &str, format: &str, extra: &[&str]) -> String {
    let (index, queries, gt) = (f.s(index), f.s("q.fvecs"), f.s("gt.ivecs"));
    let head = ["bench", "--index", &index, "--queries", &queries, "--gt", &gt, "--reps", "1", "--format", format];
    String::from_utf8(ok(&[&head[..], extra].concat()).stdout).unwrap()
}

const COLUMNS: &[&str] = &[
    "mode",
    "n",
    "k",
    "alpha",
    "queries",
    "recall",
    "rel_dist_err",
    "rel_err_excluded",
    "mean_dist_computations",
    "mean_approx_computations",
    "mean_hops",
    "mean_final_l",
    "local_opt_freq",
    "mean_delta_prime",
    "us_per_query",
];

#[test]
fn bench_csv_and_json_are_schema_valid() {
    let f = Files::new();
    fixture(&f);
    ok(&[
        "build",
        "--base",
        &f.s("base.fvecs"),
        "--M",
        "16",
        "--L",
        "48",
        "--iters",
        "2",
        "--delta",
        "0.1",
        "--out",
        &f.s("a.demg"),
    ]);
    let csv_text = bench_rows(&f, "a.demg", "csv", &["--alpha-sweep", "1,1.5,2", "--k", "5,10"]);
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), COLUMNS);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(&r[0], "approx");
        let rec: f64 = r[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&rec));
        // Empty when no query found a local optimum.
        if !r[13].is_empty() {
            assert!(r[13].parse::<f64>().unwrap() >= 0.1);
        }
    }

    let json_text = bench_rows(&f, "a.demg", "json", &["--alpha-sweep", "1,2"]);
    let v: serde_json::Value = serde_json::from_str(&json_text).unwrap();
    let arr = v.as_array().unwrap();
    assert_eq!(arr.len(), 2);
    for row in arr {
        let obj = row.as_object().unwrap();
        assert_eq!(obj.keys().count(), COLUMNS.len());
        for c in COLUMNS {
            assert!(obj.contains_key(*c), "missing {c}");
        }
    }
}

#[test]
fn bench_recall_matches_recomputation_and_alpha_one_row() {
    let f = Files::new();
    let (base, queries) = fixture(&f);
    ok(&["build", "--base", &f.s("base.fvecs"), "--M", "16", "--L", "48", "--iters", "2", "--out", &f.s("a.demg")]);
    let out = f.path("report.json");
    ok(&[
        "bench",
        "--index",
        &f.s("a.demg"),
        "--queries",
        &f.s("q.fvecs"),
        "--gt",
        &f.s("gt.ivecs"),
        "--reps",
        "1",
        "--format",
        "json",
        "--alpha-sweep",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let index = Index::load(f.path("a.demg")).unwrap();
    let ids = read_ivecs(f.path("gt.ivecs")).unwrap();
    for row in v.as_array().unwrap() {
        let alpha = row["alpha"].as_f64().unwrap();
        let mut sum = 0.0;
        for (i, q) in queries.rows().enumerate() {
            let r = index.search(q, 10, alpha).unwrap();
            let truth: Vec<f64> =
                ids[i].iter().map(|&id| demg::geometry::distance(q, base.row(id as usize)).unwrap()).collect();
            sum += recall(&r.results, &ids[i], &truth, 10);
        }
        assert!((row["recall"].as_f64().unwrap() - sum / queries.len() as f64).abs() < 1e-12);
        if alpha == 1.0 {
            assert_eq!(row["mean_final_l"].as_f64().unwrap(), 10.0);
        }
    }
}

#[test]
fn bench_quantized_index() {
    let f = Files::new();
    fixture(&f);
    ok(&[
        "build",
        "--base",
        &f.s("base.fvecs"),
        "--mode",
        "quantized",
        "--M",
        "16",
        "--batch-width",
        "8",
        "--L",
        "48",
        "--iters",
        "2",
        "--out",
        &f.s("q.demg"),
    ]);
    let text = bench_rows(&f, "q.demg", "csv", &["--alpha-sweep", "1.5"]);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let row = rdr.records().next().unwrap().unwrap();
    assert_eq!(&row[0], "quantized");
    assert!(row[9].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn bench_rejects_mismatched_inputs() {
    let f = Files::new();
    fixture(&f);
    ok(&["build", "--base", &f.s("base.fvecs"), "--M", "8", "--L", "16", "--iters", "1", "--out", &f.s("a.demg")]);
    gen(&f, "q3.fvecs", 30, 3, 2);
    fails(&["bench", "--index", &f.s("a.demg"), "--queries", &f.s("q3.fvecs"), "--gt", &f.s("gt.ivecs")]);
    fails(&["bench", "--index", &f.s("a.demg"), "--queries", &f.s("q.fvecs"), "--gt", &f.s("gt.ivecs"), "--k", "11"]);
    fails(&[
        "bench",
        "--index",
        &f.s("a.demg"),
        "--queries",
        &f.s("q.fvecs"),
        "--gt",
        &f.s("gt.ivecs"),
        "--alpha-sweep",
        "0.5",
    ]);
    fs::write(f.path("junk.demg"), b"DEMGjunk").unwrap();
    fails(&["bench", "--index", &f.s("junk.demg"), "--queries", &f.s("q.fvecs"), "--gt", &f.s("gt.ivecs")]);
}

fn save_graph(path: &Path, adjacency: Vec<Vec<u32>>, m: usize, data: Dataset) {
    let graph = ProximityGraph::from_adjacency(adjacency, m, 0, BuildMeta::exact(0.5)).unwrap();
    Index::Graph { graph, data }.save(path).unwrap();
}

fn stats(path: &Path) -> serde_json::Value {
    let out = ok(&["stats", "--index", path.to_str().unwrap()]);
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn stats_edgeless() {
    let f = Files::new();
    save_graph(&f.path("e.demg"), vec![vec![]], 0, Dataset::from_rows(&[[0.5f32, 0.5]]).unwrap());
    let s = stats(&f.path("e.demg"));
    assert_eq!(s["edges"], 0);
    assert_eq!(s["degree"]["max"], 0);
    assert_eq!(s["degree"]["histogram"], serde_json::json!([1]));
    assert_eq!(s["connected"], true);
}

#[test]
fn stats_m_regular_ring() {
    let f = Files::new();
    let n = 12u32;
    let adj = (0..n).map(|u| vec![(u + 1) % n, (u + n - 1) % n]).collect();
    let data = Dataset::new(1, (0..n).map(|i| i as f32).collect()).unwrap();
    save_graph(&f.path("r.demg"), adj, 2, data);
    let s = stats(&f.path("r.demg"));
    assert_eq!(s["degree"]["min"], 2);
    assert_eq!(s["degree"]["max"], 2);
    assert_eq!(s["edges"], 24);
    assert_eq!(s["reachable_from_entry"], 12);
    assert_eq!(s["meta"]["delta"], 0.5);
}

#[test]
fn stats_recount_matches() {
    let f = Files::new();
    gen(&f, "base.fvecs", 500, 3, 9);
    ok(&["build", "--base", &f.s("base.fvecs"), "--M", "10", "--L", "30", "--iters", "2", "--out", &f.s("a.demg")]);
    let s = stats(&f.path("a.demg"));
    let index = Index::load(f.path("a.demg")).unwrap();
    let recount = degree_stats(index.graph());
    assert_eq!(s["degree"], serde_json::to_value(&recount).unwrap());
    let edges: usize = index.graph().adjacency().iter().map(Vec::len).sum();
    assert_eq!(s["edges"], edges);
    assert_eq!(s["connected"], true);
    assert_eq!(s["meta"]["mode"], "Approx");
}

#[test]
fn malformed_invocations_exit_nonzero_with_one_line() {
    let f = Files::new();
    fails(&["stats", "--index", &f.s("nope.demg")]);
    fails(&["gen", "--n", "0", "--d", "3", "--out", &f.s("x")]);
    fails(&["gen", "--n", "3", "--d", "3", "--dist", "gaussian:x", "--out", &f.s("x")]);
    fails(&["frobnicate"]);
    fails(&[]);
}
