use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_homedetect"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn homedetect")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small synthetic world with towers, truth, census and one month of CDRs.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let world = dir.path().join("world");
        let sets = ["--set", "n_towers=40", "--set", "n_users=300", "--set", "commuter_fraction=0.3"];
        let mut args = vec!["synth", "generate", "--seed", "11", "--out-dir", p(&world)];
        args.extend(sets);
        ok(&args);
        let cdr = dir.path().join("cdr.csv");
        let mut args = vec!["synth", "simulate", "--seed", "11", "--periods", "2007-06..2007-07", "--out", p(&cdr)];
        args.extend(sets);
        ok(&args);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn towers(&self) -> PathBuf {
        self.path("world/towers.csv")
    }

    fn ingest(&self, cdr: &Path, out: &Path, extra: &[&str]) -> Output {
        let towers = self.towers();
        let mut args = vec!["ingest", "--cdr", p(cdr), "--towers", p(&towers), "--periods", "2007-06..2007-07", "--out", p(out)];
        args.extend(extra);
        run(&args)
    }

    fn aggregates(&self) -> PathBuf {
        let out = self.path("agg.csv");
        if !out.exists() {
            let o = self.ingest(&self.path("cdr.csv"), &out, &[]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        }
        out
    }

    fn detect(&self, rules: &str, out_dir: &Path) -> Output {
        let agg = self.aggregates();
        let towers = self.towers();
        run(&["detect", "--aggregates", p(&agg), "--towers", p(&towers), "--rules", rules, "--out-dir", p(out_dir)])
    }
}

fn csv_files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_str().unwrap().starts_with(prefix))
        .collect();
    v.sort();
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ingest_reports_reconcile_and_write_manifest() {
    let f = Fixture::new();
    f.aggregates();
    let m = json(&f.path("agg.csv.manifest.json"));
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["summary"]["reconciles"], true);
    assert_eq!(m["summary"]["rows_malformed"], 0);
    assert!(m["summary"]["rows_ok"].as_u64().unwrap() > 0);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
    assert_eq!(m["config"]["periods"], "2007-06..2007-07");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);

    let gm = json(&f.path("world/manifest.json"));
    assert_eq!(gm["seed"], 11);
    assert_eq!(gm["config"]["n_users"], "300");
}

#[test]
fn gzip_input_gives_identical_aggregates() {
    let f = Fixture::new();
    let plain = f.path("cdr.csv");
    let gz = f.path("cdr.csv.gz");
    let mut args = vec!["synth", "simulate", "--seed", "11", "--periods", "2007-06..2007-07", "--out", p(&gz)];
    args.extend(["--set", "n_towers=40", "--set", "n_users=300", "--set", "commuter_fraction=0.3"]);
    ok(&args);
    assert_ne!(fs::read(&gz).unwrap(), fs::read(&plain).unwrap());

    let a = f.path("a.csv");
    let b = f.path("b.csv");
    assert!(f.ingest(&plain, &a, &[]).status.success());
    assert!(f.ingest(&gz, &b, &[]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn output_independent_of_workers() {
    let f = Fixture::new();
    let a = f.path("w1.csv");
    let b = f.path("w4.csv");
    assert!(f.ingest(&f.path("cdr.csv"), &a, &["--workers", "1"]).status.success());
    assert!(f.ingest(&f.path("cdr.csv"), &b, &["--workers", "4"]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn missing_tower_file_names_path() {
    let f = Fixture::new();
    let missing = f.path("nope/towers.csv");
    let out = run(&["ingest", "--cdr", p(&f.path("cdr.csv")), "--towers", p(&missing), "--periods", "2007-06", "--out", p(&f.path("x.csv"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn strict_mode_fails_on_malformed_row() {
    let f = Fixture::new();
    let cdr = f.path("bad.csv");
    let mut text = fs::read_to_string(f.path("cdr.csv")).unwrap();
    text.push_str("u9,not-a-time,t00,out,call\n");
    fs::write(&cdr, text).unwrap();
    let lenient = f.ingest(&cdr, &f.path("l.csv"), &[]);
    assert!(lenient.status.success());
    let m = json(&f.path("l.csv.manifest.json"));
    assert_eq!(m["summary"]["rows_malformed"], 1);
    let strict = f.ingest(&cdr, &f.path("s.csv"), &["--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_2() {
    let f = Fixture::new();
    let out = f.ingest(&f.path("cdr.csv"), &f.path("x.csv"), &["--window", "25:00-06:00"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["ingest", "--cdr", p(&f.path("cdr.csv")), "--towers", p(&f.towers()), "--out", p(&f.path("x.csv"))]);
    assert_eq!(out.status.code(), Some(2), "missing --periods");
    assert_eq!(f.detect("7", &f.path("d")).status.code(), Some(2));
    assert_eq!(run(&["detect"]).status.code(), Some(2));
}

#[test]
fn detect_writes_one_file_per_rule_and_period() {
    let f = Fixture::new();
    let one = f.path("one");
    assert!(f.detect("1", &one).status.success());
    assert_eq!(csv_files(&one, "homes_").len(), 2);

    let all = f.path("all");
    assert!(f.detect("all", &all).status.success());
    let files = csv_files(&all, "homes_");
    assert_eq!(files.len(), 10);
    assert!(all.join("homes_activities_2007-06.csv").exists());
    assert!(all.join("homes_time_and_space_2007-07.csv").exists());
    let counts = fs::read_to_string(all.join("detection_counts.csv")).unwrap();
    assert_eq!(counts.lines().count(), 6);
    assert!(all.join("manifest.json").exists());

    let again = f.path("again");
    assert!(f.detect("all", &again).status.success());
    for a in &files {
        let b = again.join(a.file_name().unwrap());
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}

#[test]
fn detect_rejects_mismatched_window() {
    let f = Fixture::new();
    let agg = f.aggregates();
    let towers = f.towers();
    let out = run(&["detect", "--aggregates", p(&agg), "--towers", p(&towers), "--window", "20:00-08:00", "--out-dir", p(&f.path("d"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_identical_tables_gives_hundreds() {
    let f = Fixture::new();
    let d = f.path("d");
    assert!(f.detect("1", &d).status.success());
    let src = d.join("homes_activities_2007-06.csv");
    let text = fs::read_to_string(&src).unwrap().replace("activities", "distinct_days");
    let copy = f.path("copy.csv");
    fs::write(&copy, text).unwrap();
    let out = f.path("smc.csv");
    ok(&["compare", "--tables", p(&src), p(&copy), "--out", p(&out)]);
    let body = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = body.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 1);
    let pct: f64 = rows[0].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(pct, 100.0, "{}", rows[0]);
}

#[test]
fn compare_all_rules_and_heatmap() {
    let f = Fixture::new();
    let d = f.path("d");
    assert!(f.detect("all", &d).status.success());
    let tables = csv_files(&d, "homes_");
    let out = f.path("smc.csv");
    let heat = f.path("heat.csv");
    let mut args = vec!["compare", "--tables"];
    args.extend(tables.iter().map(|t| p(t)));
    args.extend(["--out", p(&out), "--heatmap", p(&heat)]);
    ok(&args);
    let body = fs::read_to_string(&out).unwrap();
    assert_eq!(body.lines().skip(1).count(), 20);
    assert_eq!(fs::read_to_string(&heat).unwrap().lines().skip(1).count(), 50);
}

#[test]
fn validate_against_own_counts_gives_zero_degrees() {
    let f = Fixture::new();
    let d = f.path("d");
    assert!(f.detect("1", &d).status.success());
    let table = d.join("homes_activities_2007-06.csv");

    // Census copied from the table's own per-tower counts.
    let mut counts = std::collections::BTreeMap::<String, u64>::new();
    for l in fs::read_to_string(f.towers()).unwrap().lines().filter(|l| !l.starts_with('#')).skip(1) {
        counts.insert(l.split(',').next().unwrap().to_string(), 0);
    }
    for l in fs::read_to_string(&table).unwrap().lines().filter(|l| !l.starts_with('#')).skip(1) {
        *counts.get_mut(l.split(',').nth(3).unwrap()).unwrap() += 1;
    }
    let mut census = String::from("tower_id,population\n");
    for (t, c) in &counts {
        census.push_str(&format!("{t},{c}\n"));
    }
    let census_path = f.path("census.csv");
    fs::write(&census_path, census).unwrap();

    let out = f.path("csm.csv");
    ok(&["validate", "--tables", p(&table), "--towers", p(&f.towers()), "--census", p(&census_path), "--out", p(&out)]);
    let body = fs::read_to_string(&out).unwrap();
    let row = body.lines().nth(1).unwrap();
    let csm: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(csm.abs() < 1e-6, "{row}");
}

#[test]
fn validate_census_missing_tower_is_data_error() {
    let f = Fixture::new();
    let d = f.path("d");
    assert!(f.detect("1", &d).status.success());
    let census_path = f.path("census.csv");
    fs::write(&census_path, "tower_id,population\nt00,5\n").unwrap();
    let out = run(&[
        "validate", "--tables", p(&d.join("homes_activities_2007-06.csv")), "--towers", p(&f.towers()),
        "--census", p(&census_path), "--out", p(&f.path("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

fn planted_grid(dir: &Path) -> (PathBuf, PathBuf) {
    let mut towers = String::from("tower_id,lon,lat\n");
    let mut values = String::from("tower_id,population\n");
    for r in 0..5 {
        for c in 0..5 {
            let id = format!("g{r}{c}");
            towers.push_str(&format!("{id},{},{}\n", 2.0 + 0.01 * c as f64, 48.0 + 0.01 * r as f64));
            let v = if r == 2 && c == 2 { 100 } else { 0 };
            values.push_str(&format!("{id},{v}\n"));
        }
    }
    let t = dir.join("grid_towers.csv");
    let v = dir.join("grid_values.csv");
    fs::write(&t, towers).unwrap();
    fs::write(&v, values).unwrap();
    (t, v)
}

#[test]
fn hotspots_find_planted_cell() {
    let dir = TempDir::new().unwrap();
    let (towers, values) = planted_grid(dir.path());
    let gj = dir.path().join("hot.geojson");
    let csv = dir.path().join("hot.csv");
    ok(&[
        "hotspots", "--towers", p(&towers), "--values", p(&values), "--weights", "distance_band:1200",
        "--confidence", "90", "--out", p(&gj), "--csv", p(&csv),
    ]);
    let body = fs::read_to_string(&csv).unwrap();
    // The planted cell and its four rook neighbours share the same neighbourhood sum.
    let hot: Vec<&str> = body
        .lines()
        .filter(|l| l.split(',').nth(4) == Some("hot"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(hot, ["g12", "g21", "g22", "g23", "g32"], "{body}");

    let doc = json(&gj);
    let features = doc["features"].as_array().unwrap();
    assert_eq!(features.len(), 25);
    let centre = features.iter().find(|f| f["properties"]["tower_id"] == "g22").unwrap();
    assert_eq!(centre["properties"]["class"], "hot");

    let flat = dir.path().join("flat.csv");
    fs::write(&flat, fs::read_to_string(&values).unwrap().lines().map(|l| l.replace(",100", ",0").replace(",0", ",7")).collect::<Vec<_>>().join("\n")).unwrap();
    let out = run(&["hotspots", "--towers", p(&towers), "--values", p(&flat), "--out", p(&gj)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn hotspots_rejects_bad_confidence() {
    let dir = TempDir::new().unwrap();
    let (towers, values) = planted_grid(dir.path());
    let out = run(&[
        "hotspots", "--towers", p(&towers), "--values", p(&values), "--confidence", "80", "--out",
        p(&dir.path().join("x.geojson")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn voronoi_cells_cover_the_boundary() {
    let dir = TempDir::new().unwrap();
    let (towers, _) = planted_grid(dir.path());
    let out = dir.path().join("cells.geojson");
    ok(&["voronoi", "--towers", p(&towers), "--out", p(&out)]);
    let doc = json(&out);
    assert_eq!(doc["features"].as_array().unwrap().len(), 25);
    let m = json(&dir.path().join("cells.geojson.manifest.json"));
    let area = m["summary"]["area_m2"].as_f64().unwrap();
    let boundary = m["summary"]["boundary_area_m2"].as_f64().unwrap();
    assert!((area - boundary).abs() / boundary < 1e-6);
}

#[test]
fn synth_evaluate_scores_detected_homes() {
    let f = Fixture::new();
    let d = f.path("d");
    assert!(f.detect("1,3", &d).status.success());
    let out = f.path("acc.csv");
    ok(&[
        "synth", "evaluate", "--tables", p(&d.join("homes_activities_2007-06.csv")),
        p(&d.join("homes_time_window_2007-06.csv")), "--truth", p(&f.path("world/truth.csv")), "--towers",
        p(&f.towers()), "--aggregates", p(&f.aggregates()), "--out", p(&out),
    ]);
    let body = fs::read_to_string(&out).unwrap();
    let all_tw = body
        .lines()
        .find(|l| l.starts_with("time_window,2007-06,all,"))
        .expect("time_window row");
    let rate: f64 = all_tw.split(',').nth(6).unwrap().parse().unwrap();
    assert!(rate > 0.9, "{all_tw}");
    assert!(body.lines().any(|l| l.contains(",low_activity,")));
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let c = dir.path().join("c.csv");
    for (seed, out) in [("3", &a), ("3", &b), ("4", &c)] {
        ok(&["synth", "simulate", "--seed", seed, "--set", "n_users=50", "--set", "n_towers=20", "--periods", "2007-06", "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    assert_eq!(run(&["synth", "generate", "--out-dir", p(dir.path())]).status.code(), Some(2));
    let bad = run(&["synth", "generate", "--seed", "1", "--set", "bogus=1", "--out-dir", p(dir.path())]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_file_supplies_options_and_flags_win() {
    let f = Fixture::new();
    let cfg = f.path("run.cfg");
    fs::write(&cfg, "periods=2007-06\nworkers=2\n").unwrap();
    let out = f.path("cfg.csv");
    ok(&["--config", p(&cfg), "ingest", "--cdr", p(&f.path("cdr.csv")), "--towers", p(&f.towers()), "--out", p(&out)]);
    let m = json(&f.path("cfg.csv.manifest.json"));
    assert_eq!(m["config"]["periods"], "2007-06");
    assert_eq!(m["config"]["workers"], "2");

    let out2 = f.path("cfg2.csv");
    ok(&[
        "--config", p(&cfg), "ingest", "--cdr", p(&f.path("cdr.csv")), "--towers", p(&f.towers()), "--workers", "1",
        "--out", p(&out2),
    ]);
    let m = json(&f.path("cfg2.csv.manifest.json"));
    assert_eq!(m["config"]["workers"], "1");
}
