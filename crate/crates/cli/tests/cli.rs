use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use foodprox::data::{read_neighborhoods, read_proximity, read_stores};
use foodprox::geodistance::{straight_line_proximity, EARTH_RADIUS_MILES};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn foodprox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_foodprox")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = foodprox(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Region {
    _dir: TempDir,
    root: PathBuf,
}

impl Region {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["example", s(&root)]);
        Self { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn distances(&self, out: &str, extra: &[&str]) -> Output {
        let (n, st, o) = (self.p("neighborhoods.csv"), self.p("stores.csv"), self.p(out));
        let mut args = vec!["distances", "--neighborhoods", &n, "--stores", &st, "--out", &o];
        args.extend_from_slice(extra);
        foodprox(&args)
    }

    fn analyze(&self, prox: &str, out: &str, extra: &[&str]) -> Output {
        let (p, n, o) = (self.p(prox), self.p("neighborhoods.csv"), self.p(out));
        let mut args = vec!["analyze", "--proximity", &p, "--neighborhoods", &n, "--out", &o];
        args.extend_from_slice(extra);
        foodprox(&args)
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }

    fn manifest(&self, out: &str) -> serde_json::Value {
        serde_json::from_str(&self.read(&format!("{out}.manifest.json"))).unwrap()
    }
}

#[test]
fn version_names_schema() {
    let out = ok(&["--version"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains(env!("CARGO_PKG_VERSION")) && text.contains("schema v1"), "{text}");
}

#[test]
fn query_none_leaves_map_column_empty() {
    let r = Region::new();
    assert_eq!(code(&r.distances("prox.csv", &["--query", "none"])), 0);
    let pairs = read_proximity(r.read("prox.csv").as_bytes()).unwrap();
    assert_eq!(pairs.len(), 36);
    assert!(pairs.iter().all(|p| p.x().is_none()));
    for line in r.read("prox.csv").lines().skip(1) {
        assert!(line.ends_with(",,0"), "{line}");
    }
}

#[test]
fn synthetic_factor_matches_recomputation() {
    let r = Region::new();
    assert_eq!(code(&r.distances("prox.csv", &["--provider", "synthetic:factor=0.7"])), 0);
    let hoods = read_neighborhoods(r.read("neighborhoods.csv").as_bytes()).unwrap();
    let stores: Vec<_> =
        read_stores(r.read("stores.csv").as_bytes()).unwrap().iter().map(|s| s.site().unwrap()).collect();
    let pairs: BTreeMap<String, _> =
        read_proximity(r.read("prox.csv").as_bytes()).unwrap().into_iter().map(|p| (p.id().to_string(), p)).collect();
    assert_eq!(pairs.len(), hoods.len());
    for h in &hoods {
        let nearest = straight_line_proximity(h.site().unwrap().coord, &stores, EARTH_RADIUS_MILES).unwrap().miles;
        let p = &pairs[&h.id];
        assert_eq!(p.x_star(), nearest);
        let x = p.x().unwrap();
        assert!((x - nearest / 0.7).abs() <= 1e-12 * x, "{}: {x} vs {}", h.id, nearest / 0.7);
    }
}

#[test]
fn stratified_query_takes_k_per_county() {
    let dir = tempfile::tempdir().unwrap();
    let mut hoods = String::from("id,lat,lon,population,cases,metro,county\n");
    for c in 0..12 {
        for i in 0..7 {
            let (lat, lon) = (35.0 + c as f64 * 0.05, -80.0 + i as f64 * 0.01);
            hoods.push_str(&format!("c{c}n{i},{lat},{lon},4000,400,{},county{c}\n", i % 2));
        }
    }
    let stores = "id,lat,lon,category\ns1,35.2,-79.99,grocery\ns2,35.4,-80.05,grocery\ns3,35.6,-79.95,produce\n";
    let (n, st, o) = (dir.path().join("n.csv"), dir.path().join("s.csv"), dir.path().join("p.csv"));
    std::fs::write(&n, hoods).unwrap();
    std::fs::write(&st, stores).unwrap();
    let args = [
        "distances",
        "--neighborhoods",
        s(&n),
        "--stores",
        s(&st),
        "--out",
        s(&o),
        "--provider",
        "synthetic:factor=0.7",
    ];
    ok(&[&args[..], &["--query", "stratified:4"]].concat());
    let pairs = read_proximity(std::fs::read(&o).unwrap().as_slice()).unwrap();
    assert_eq!(pairs.iter().filter(|p| p.queried()).count(), 48);
    let mut per_county = BTreeMap::new();
    for p in pairs.iter().filter(|p| p.queried()) {
        *per_county.entry(p.id().split('n').next().unwrap().to_string()).or_insert(0) += 1;
    }
    assert!(per_county.values().all(|&k| k == 4));

    let again = dir.path().join("p2.csv");
    ok(&[
        "distances",
        "--neighborhoods",
        s(&n),
        "--stores",
        s(&st),
        "--out",
        s(&again),
        "--provider",
        "synthetic:factor=0.7",
        "--query",
        "stratified:4",
    ]);
    assert_eq!(std::fs::read(&o).unwrap(), std::fs::read(&again).unwrap());

    let out = foodprox(&[&args[..], &["--query", "stratified:8"]].concat());
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn file_provider_and_its_failures() {
    let r = Region::new();
    let routes = format!("file:{}", r.p("routes.csv"));
    assert_eq!(code(&r.distances("prox.csv", &["--provider", &routes, "--query", "stratified:4"])), 0);
    let pairs = read_proximity(r.read("prox.csv").as_bytes()).unwrap();
    assert_eq!(pairs.iter().filter(|p| p.queried()).count(), 12);
    assert!(pairs.iter().filter_map(|p| p.x().map(|x| x - p.x_star())).all(|d| d >= 0.0));

    let truncated: String = r.read("routes.csv").lines().take(200).map(|l| format!("{l}\n")).collect();
    std::fs::write(r.path("short.csv"), truncated).unwrap();
    let short = format!("file:{}", r.p("short.csv"));
    let out = r.distances("prox2.csv", &["--provider", &short]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn remote_budget_exhaustion_exits_3() {
    let r = Region::new();
    let out = r.distances(
        "prox.csv",
        &["--provider", "remote:http://127.0.0.1:9/route", "--budget", "0", "--query", "stratified:1"],
    );
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("budget"), "{}", stderr(&out));
}

#[test]
fn remote_pairs_are_not_dumped() {
    let r = Region::new();
    let dump = r.p("pairs.csv");
    let out = r.distances(
        "prox.csv",
        &["--provider", "remote:http://127.0.0.1:9/route", "--budget", "0", "--pairs-out", &dump],
    );
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(!r.path("pairs.csv").exists());
}

#[test]
fn input_errors_exit_2() {
    let r = Region::new();
    assert_eq!(code(&r.distances("prox.csv", &["--provider", "carrier-pigeon:fast"])), 2);
    assert_eq!(code(&r.distances("prox.csv", &["--query", "all"])), 2);
    assert_eq!(code(&r.distances("prox.csv", &["--query", "sometimes"])), 2);
    let out = foodprox(&[
        "distances",
        "--neighborhoods",
        "/nonexistent.csv",
        "--stores",
        "/nonexistent.csv",
        "--out",
        "/tmp/x.csv",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn fully_queried_imputation_rows_equal_gold_rows() {
    let r = Region::new();
    let out = r.distances("prox.csv", &["--provider", &format!("file:{}", r.p("routes.csv"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&r.analyze("prox.csv", "report.csv", &[])), 0);
    let csv = r.read("report.csv");
    let rows = |strategy: &str| -> Vec<String> {
        csv.lines().filter_map(|l| l.strip_prefix(&format!("{strategy},")).map(String::from)).collect()
    };
    assert_eq!(rows("gold").len(), 4);
    assert_eq!(rows("imputation"), rows("gold"));
}

#[test]
fn adjacency_adds_moran_line_and_absence_warns() {
    let r = Region::new();
    r.distances("prox.csv", &["--provider", &format!("file:{}", r.p("routes.csv")), "--query", "stratified:4"]);
    let without = r.analyze("prox.csv", "a.csv", &[]);
    assert_eq!(code(&without), 0);
    assert!(stderr(&without).contains("--adjacency"), "{}", stderr(&without));
    assert!(!String::from_utf8_lossy(&without.stdout).contains("Moran"));
    assert!(r.manifest("a.csv")["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w.as_str().unwrap().contains("adjacency")));

    let adj = r.p("adjacency.csv");
    let with = r.analyze("prox.csv", "b.csv", &["--adjacency", &adj]);
    assert_eq!(code(&with), 0, "{}", stderr(&with));
    assert!(String::from_utf8_lossy(&with.stdout).contains("Moran's I"));
    assert_eq!(r.read("a.csv"), r.read("b.csv"));

    let perm = r.analyze(
        "prox.csv",
        "c.csv",
        &["--adjacency", &adj, "--inference", "permutation:999", "--weighting", "binary"],
    );
    assert!(String::from_utf8_lossy(&perm.stdout).contains("permutation, 999 draws"));
    let few = r.analyze("prox.csv", "d.csv", &["--adjacency", &adj, "--inference", "permutation:99"]);
    assert_eq!(code(&few), 2, "{}", stderr(&few));
}

#[test]
fn fixed_seed_reruns_are_byte_identical() {
    let r = Region::new();
    r.distances("prox.csv", &["--provider", &format!("file:{}", r.p("routes.csv")), "--query", "stratified:4"]);
    let a = r.analyze("prox.csv", "a.csv", &["--seed", "11"]);
    let b = r.analyze("prox.csv", "b.csv", &["--seed", "11", "--threads", "1"]);
    let c = r.analyze("prox.csv", "c.csv", &["--seed", "12"]);
    assert_eq!(r.read("a.csv"), r.read("b.csv"));
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(r.read("a.csv"), r.read("c.csv"));
    let imputation =
        |f: &str| r.read(f).lines().filter(|l| !l.starts_with("imputation")).map(String::from).collect::<Vec<_>>();
    assert_eq!(imputation("a.csv"), imputation("c.csv"));
    assert_eq!(c.status.code(), Some(0));
}

#[test]
fn join_mismatch_lists_orphans() {
    let r = Region::new();
    r.distances("prox.csv", &["--provider", "synthetic:factor=0.7", "--query", "stratified:4"]);
    let text = r.read("prox.csv");
    let kept: String = text.lines().filter(|l| !l.starts_with("C23,")).map(|l| format!("{l}\n")).collect();
    std::fs::write(r.path("prox.csv"), kept + "Z99,1.0,,0\n").unwrap();
    let out = r.analyze("prox.csv", "report.csv", &[]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("Z99") && err.contains("C23"), "{err}");
}

#[test]
fn impute_writes_b_completed_datasets() {
    let r = Region::new();
    r.distances("prox.csv", &["--provider", &format!("file:{}", r.p("routes.csv")), "--query", "stratified:4"]);
    let (p, n, o) = (r.p("prox.csv"), r.p("neighborhoods.csv"), r.p("completed.csv"));
    ok(&["impute", "--proximity", &p, "--neighborhoods", &n, "--out", &o, "--b", "5", "--seed", "3"]);
    let observed: BTreeMap<String, Option<f64>> = read_proximity(r.read("prox.csv").as_bytes())
        .unwrap()
        .into_iter()
        .map(|p| (p.id().to_string(), p.x()))
        .collect();
    let text = r.read("completed.csv");
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("imputation,id,x_star,x,queried"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5 * 36);
    for row in &rows {
        let x: f64 = row[3].parse().unwrap();
        match observed[row[1]] {
            Some(v) => assert_eq!((x, row[4]), (v, "1")),
            None => assert_eq!(row[4], "0"),
        }
    }
    let first: Vec<_> = rows.iter().filter(|r| r[0] == "1" && r[4] == "0").map(|r| r[3]).collect();
    let second: Vec<_> = rows.iter().filter(|r| r[0] == "2" && r[4] == "0").map(|r| r[3]).collect();
    assert_ne!(first, second);
}

#[test]
fn manifest_digests_inputs() {
    let r = Region::new();
    r.distances("prox.csv", &["--provider", "synthetic:factor=0.7", "--query", "none"]);
    let m = r.manifest("prox.csv");
    assert_eq!(m["command"], "distances");
    assert_eq!(m["schema"], "v1");
    let inputs = m["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2);
    for input in inputs {
        let bytes = std::fs::read(input["path"].as_str().unwrap()).unwrap();
        assert_eq!(input["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(input["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn flags_override_config_file() {
    let r = Region::new();
    r.distances("prox.csv", &["--provider", &format!("file:{}", r.p("routes.csv")), "--query", "stratified:4"]);
    std::fs::write(r.path("run.toml"), "seed = 5\nb = 4\nlevel = 0.9\n").unwrap();
    let cfg = r.p("run.toml");
    ok(&[
        "analyze",
        "--config",
        &cfg,
        "--proximity",
        &r.p("prox.csv"),
        "--neighborhoods",
        &r.p("neighborhoods.csv"),
        "--out",
        &r.p("a.csv"),
    ]);
    let m = r.manifest("a.csv");
    assert_eq!(
        (m["seed"].as_u64(), m["config"]["imputation"]["b"].as_u64(), m["config"]["level"].as_f64()),
        (Some(5), Some(4), Some(0.9))
    );

    r.analyze("prox.csv", "b.csv", &["--config", &cfg, "--seed", "7"]);
    let m = r.manifest("b.csv");
    assert_eq!((m["seed"].as_u64(), m["config"]["imputation"]["b"].as_u64()), (Some(7), Some(4)));

    std::fs::write(r.path("bad.toml"), "seeed = 5\n").unwrap();
    let out = r.analyze("prox.csv", "c.csv", &["--config", &r.p("bad.toml")]);
    assert_eq!(code(&out), 2);
}

#[test]
fn table1_grid_has_ten_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1.csv");
    ok(&["simulate", "--grid", "table1", "--replicates", "3", "--out", s(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 40);
    let scenarios: std::collections::BTreeSet<&str> = rows.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(scenarios.len(), 10);
    assert!(text.starts_with("scenario,strategy,bias,ese,ase,cp,re,n_reps,n_failed\n"));
}

#[test]
fn smoke_grid_is_fast_and_schedule_independent() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let t = Instant::now();
    ok(&["simulate", "--grid", "smoke", "--threads", "1", "--out", s(&a)]);
    let took = t.elapsed();
    ok(&["simulate", "--grid", "smoke", "--threads", "8", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 1 + 2 * 4);
    assert!(took < Duration::from_secs(10), "smoke grid took {took:?}");
}

#[test]
fn simulate_writes_replicates_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.grid");
    std::fs::write(&grid, "[[scenario]]\nname = \"tiny\"\nn = 100\nq = 0.2\nreplicates = 4\nb = 3\nseed = 9\n")
        .unwrap();
    let (out, reps, dump) = (dir.path().join("m.csv"), dir.path().join("reps"), dir.path().join("dump"));
    ok(&["simulate", "--grid", s(&grid), "--out", s(&out), "--replicates-dir", s(&reps), "--dump", s(&dump)]);
    assert_eq!(std::fs::read_to_string(reps.join("tiny.csv")).unwrap().lines().count(), 1 + 4 * 4);
    for r in 0..4 {
        assert!(dump.join("tiny").join(format!("replicate_{r}.csv")).is_file());
    }
}

#[test]
fn malformed_grids_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    for (i, text) in ["[[scenario]]\nn = \"many\"\n", "[[scenario]]\nflavour = 1\n", "", "[[scenario]]\nq = 1.5\n"]
        .iter()
        .enumerate()
    {
        let grid = dir.path().join(format!("g{i}.grid"));
        std::fs::write(&grid, text).unwrap();
        let o = foodprox(&["simulate", "--grid", s(&grid), "--out", s(&out)]);
        assert_eq!(code(&o), 2, "{text:?}: {}", stderr(&o));
    }
    assert_eq!(code(&foodprox(&["simulate", "--grid", "table9", "--out", s(&out)])), 2);
}
