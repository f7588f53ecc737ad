use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use homedetect::compare::{smc_matrices, write_heatmap_csv, write_smc_csv, SmcOptions};
use homedetect::geo::{voronoi, write_towers_csv, TowerNetwork};
use homedetect::hda::{
    detection_counts, read_home_table_csv, run_hda, write_home_table_csv, DecisionRule, HomeTable, DEFAULT_RADIUS_M,
};
use homedetect::ingest::{
    ingest_reader, read_aggregates_csv, write_aggregates_csv, AggregateConfig, NightWindow, PeriodSet, TzOffset,
};
use homedetect::spatial_stats::{
    classify, gi_star, hotspots_geojson, log_ratio, write_hotspots_csv, Confidence, SpatialWeights, WeightsSpec,
};
use homedetect::synth::{
    activity_totals, evaluate, generate_world, parse_kv, write_accuracy_csv, write_simulated_cdr, write_truth_csv,
    EvalOptions, SynthConfig, World,
};
use homedetect::validate::{
    population_counts, read_census_csv, validate_against_census, write_census_csv, write_report_csv, PopulationVector,
    ValidateOptions,
};

use crate::files::{load_network, open, open_buffered, write_with};
use crate::manifest::{self, RunManifest};
use crate::settings::Settings;
use crate::{
    Cli, Command, CompareArgs, DetectArgs, HotspotsArgs, IngestArgs, NetworkArgs, SynthCommand, SynthEvaluateArgs,
    SynthGenerateArgs, SynthSimulateArgs, UsageError, ValidateArgs, VoronoiArgs, WorldArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let out = cli.manifest;
    match cli.command {
        Command::Ingest(a) => ingest(&settings, out, a),
        Command::Detect(a) => detect(&settings, out, a),
        Command::Compare(a) => compare(&settings, out, a),
        Command::Validate(a) => validate(&settings, out, a),
        Command::Hotspots(a) => hotspots(&settings, out, a),
        Command::Voronoi(a) => voronoi_cmd(out, a),
        Command::Synth(SynthCommand::Generate(a)) => synth_generate(&settings, out, a),
        Command::Synth(SynthCommand::Simulate(a)) => synth_simulate(&settings, out, a),
        Command::Synth(SynthCommand::Evaluate(a)) => synth_evaluate(&settings, out, a),
    }
}

/// Writes the manifest, then echoes the summary. A closed stdout is not an error.
fn finish(m: RunManifest, explicit: Option<PathBuf>, out: &Path, is_dir: bool) -> Result<()> {
    let summary = serde_json::to_string_pretty(&m.summary)?;
    let path = explicit.unwrap_or_else(|| manifest::default_path(out, is_dir));
    m.write(&path)?;
    let _ = writeln!(std::io::stdout().lock(), "{summary}");
    Ok(())
}

fn network(m: &mut RunManifest, a: &NetworkArgs) -> Result<TowerNetwork> {
    m.input(&a.towers)?;
    if let Some(b) = &a.boundary {
        m.input(b)?;
    }
    load_network(&a.towers, a.boundary.as_ref())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn ingest(s: &Settings, manifest: Option<PathBuf>, a: IngestArgs) -> Result<()> {
    let mut m = RunManifest::start("ingest");
    let tz = TzOffset::from_hours(s.get(&mut m, "tz_offset", a.tz_offset, 2.0)?)?;
    let window: NightWindow = s.get(&mut m, "window", a.window.as_deref().map(str::parse).transpose()?, NightWindow::default())?;
    let spec: String = s.require(&mut m, "periods", a.periods)?;
    let periods = PeriodSet::parse_months(&spec, tz)?;
    let strict = s.switch(&mut m, "strict", a.strict)?;
    let workers = s.get(&mut m, "workers", a.workers, default_workers())?;
    let net = network(&mut m, &a.net)?;
    m.input(&a.cdr)?;

    let cfg = AggregateConfig { tz, window };
    let (agg, report) = ingest_reader(open(&a.cdr)?, &net, &periods, cfg, strict, workers)
        .with_context(|| format!("ingesting {}", a.cdr.display()))?;
    write_with(&a.out, |w| write_aggregates_csv(w, &net, &periods, cfg, &agg.summaries))?;
    m.output(&a.out);

    let days: BTreeMap<&str, u32> = periods.iter().map(|p| p.label.as_str()).zip(agg.days_observed.iter().copied()).collect();
    let calendar: BTreeMap<&str, u32> = periods.iter().map(|p| (p.label.as_str(), p.n_days(tz))).collect();
    m.summary = json!({
        "rows_read": report.rows_read,
        "rows_ok": report.rows_ok,
        "rows_malformed": report.rows_malformed,
        "rows_unknown_tower": report.rows_unknown_tower,
        "rows_out_of_window": report.rows_out_of_window,
        "reconciles": report.reconciles(),
        "user_periods": agg.summaries.len(),
        "days_with_records": days,
        "days_in_period": calendar,
    });
    finish(m, manifest, &a.out, false)
}

fn detect(s: &Settings, manifest: Option<PathBuf>, a: DetectArgs) -> Result<()> {
    let mut m = RunManifest::start("detect");
    let net = network(&mut m, &a.net)?;
    m.input(&a.aggregates)?;
    let file = read_aggregates_csv(open_buffered(&a.aggregates)?, &net)
        .with_context(|| format!("reading {}", a.aggregates.display()))?;
    let window: NightWindow = s.get(&mut m, "window", a.window.as_deref().map(str::parse).transpose()?, file.cfg.window)?;
    if window != file.cfg.window {
        return Err(anyhow!(UsageError(format!(
            "window {window} differs from the {} used to build {}",
            file.cfg.window,
            a.aggregates.display()
        ))));
    }
    let radius = s.get(&mut m, "radius", a.radius, DEFAULT_RADIUS_M)?;
    let spec: String = s.get(&mut m, "rules", a.rules, "all".to_string())?;
    let rules = DecisionRule::parse_list(&spec, window, radius)?;
    let workers = s.get(&mut m, "workers", a.workers, default_workers())?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let tables: Vec<HomeTable> = pool.install(|| {
        rules
            .iter()
            .flat_map(|r| run_hda(r, &file.summaries, &file.periods, &net))
            .collect()
    });
    for t in &tables {
        let path = a.out_dir.join(format!("homes_{}_{}.csv", t.rule.name(), t.period));
        write_with(&path, |w| write_home_table_csv(w, std::slice::from_ref(t)))?;
        m.output(&path);
    }
    let counts = detection_counts(&tables);
    let counts_path = a.out_dir.join("detection_counts.csv");
    write_with(&counts_path, |w| {
        writeln!(w, "rule,l1,l2,l2_pct,l3,l3_pct,ties")?;
        for c in &counts {
            writeln!(w, "{},{},{},{:.1},{},{:.1},{}", c.rule.name(), c.l1, c.l2, c.l2_pct(), c.l3, c.l3_pct(), c.ties)?;
        }
        Ok(())
    })?;
    m.output(&counts_path);
    m.summary = json!({
        "tables": tables.len(),
        "detections": counts.iter().map(|c| json!({
            "rule": c.rule.name(), "l1": c.l1, "l2": c.l2, "l3": c.l3, "ties": c.ties,
        })).collect::<Vec<_>>(),
    });
    finish(m, manifest, &a.out_dir, true)
}

fn read_tables(m: &mut RunManifest, paths: &[PathBuf]) -> Result<Vec<HomeTable>> {
    let mut out = Vec::new();
    for p in paths {
        m.input(p)?;
        out.extend(read_home_table_csv(open_buffered(p)?).with_context(|| format!("reading {}", p.display()))?);
    }
    Ok(out)
}

fn compare(s: &Settings, manifest: Option<PathBuf>, a: CompareArgs) -> Result<()> {
    let mut m = RunManifest::start("compare");
    let opts = SmcOptions {
        missing_as_mismatch: s.switch(&mut m, "missing_as_mismatch", a.missing_as_mismatch)?,
    };
    let tables = read_tables(&mut m, &a.tables)?;
    let matrices = smc_matrices(&tables, opts)?;
    write_with(&a.out, |w| write_smc_csv(w, &matrices))?;
    m.output(&a.out);
    if let Some(h) = &a.heatmap {
        write_with(h, |w| write_heatmap_csv(w, &matrices))?;
        m.output(h);
    }
    let mut undefined = Vec::new();
    for mx in &matrices {
        for p in mx.pairs.iter().filter(|p| p.result.is_err()) {
            let e = p.result.as_ref().unwrap_err();
            eprintln!("warning: {e}");
            undefined.push(format!("{}:{}-{}", mx.period, mx.rules[p.a].name(), mx.rules[p.b].name()));
        }
    }
    m.summary = json!({
        "periods": matrices.len(),
        "pairs": matrices.iter().map(|x| x.pairs.len()).sum::<usize>(),
        "undefined": undefined,
    });
    finish(m, manifest, &a.out, false)
}

fn validate(s: &Settings, manifest: Option<PathBuf>, a: ValidateArgs) -> Result<()> {
    let mut m = RunManifest::start("validate");
    let opts = ValidateOptions {
        joint_nonzero: s.switch(&mut m, "joint_nonzero", a.joint_nonzero)?,
    };
    let net = network(&mut m, &a.net)?;
    m.input(&a.census)?;
    let census = read_census_csv(open_buffered(&a.census)?, &net).with_context(|| format!("reading {}", a.census.display()))?;
    let tables = read_tables(&mut m, &a.tables)?;
    let reports = validate_against_census(&tables, &census, &net, opts)?;
    write_with(&a.out, |w| write_report_csv(w, &reports))?;
    m.output(&a.out);
    m.summary = json!(reports
        .iter()
        .map(|r| json!({"rule": r.rule.name(), "period": r.period, "csm_deg": r.csm_deg, "gap_deg": r.gap_deg}))
        .collect::<Vec<_>>());
    finish(m, manifest, &a.out, false)
}

fn pick_table(tables: Vec<HomeTable>, rule: Option<&str>, period: Option<&str>) -> Result<HomeTable> {
    let mut matching: Vec<HomeTable> = tables
        .into_iter()
        .filter(|t| rule.is_none_or(|r| t.rule.name() == r) && period.is_none_or(|p| t.period == p))
        .collect();
    match matching.len() {
        1 => Ok(matching.pop().unwrap()),
        0 => Err(anyhow!(UsageError("no table matches --rule/--period".into()))),
        n => Err(anyhow!(UsageError(format!("{n} tables match; narrow with --rule and --period")))),
    }
}

fn hotspots(s: &Settings, manifest: Option<PathBuf>, a: HotspotsArgs) -> Result<()> {
    let mut m = RunManifest::start("hotspots");
    let net = network(&mut m, &a.net)?;
    let weights: WeightsSpec = s.get(&mut m, "weights", a.weights.as_deref().map(str::parse).transpose()?, WeightsSpec::VoronoiAdjacency)?;
    let confidence = Confidence::try_from(s.get(&mut m, "confidence", a.confidence, 90u8)?)?;
    let values: PopulationVector = match (&a.values, &a.table) {
        (Some(p), None) => {
            m.input(p)?;
            read_census_csv(open_buffered(p)?, &net).with_context(|| format!("reading {}", p.display()))?
        }
        (None, Some(p)) => {
            let t = pick_table(read_tables(&mut m, std::slice::from_ref(p))?, a.rule.as_deref(), a.period.as_deref())?;
            population_counts(&t, &net)?
        }
        _ => return Err(anyhow!(UsageError("give exactly one of --values or --table".into()))),
    };
    let ratio = match &a.reference {
        Some(p) => {
            m.input(p)?;
            let r = read_census_csv(open_buffered(p)?, &net).with_context(|| format!("reading {}", p.display()))?;
            Some(log_ratio(values.values(), r.values())?)
        }
        None => None,
    };
    let tess = voronoi(&net)?;
    let w = SpatialWeights::build(weights, &net, Some(&tess))?;
    let z = gi_star(values.values(), &w)?;
    let map = classify(&z, confidence);
    let gj = hotspots_geojson(&tess, &map, ratio.as_ref(), weights);
    write_with(&a.out, |w| Ok(serde_json::to_writer(&mut *w, &gj).map_err(std::io::Error::from)?))?;
    m.output(&a.out);
    if let Some(c) = &a.csv {
        write_with(c, |w| write_hotspots_csv(w, &net, &map, ratio.as_ref(), weights))?;
        m.output(c);
    }
    let count = |name: &str| map.class.iter().filter(|c| c.as_str() == name).count();
    m.summary = json!({
        "towers": net.len(),
        "weights": weights.to_string(),
        "confidence": confidence.percent(),
        "hot": count("hot"),
        "cold": count("cold"),
        "log_ratio_skipped": ratio.as_ref().map(|r| r.skipped),
    });
    finish(m, manifest, &a.out, false)
}

fn voronoi_cmd(manifest: Option<PathBuf>, a: VoronoiArgs) -> Result<()> {
    let mut m = RunManifest::start("voronoi");
    let net = network(&mut m, &a.net)?;
    let tess = voronoi(&net)?;
    let gj = tess.to_geojson(|_| serde_json::Map::new());
    write_with(&a.out, |w| Ok(serde_json::to_writer(&mut *w, &gj).map_err(std::io::Error::from)?))?;
    m.output(&a.out);
    m.summary = json!({
        "cells": tess.cells().len(),
        "sites": tess.n_sites(),
        "area_m2": tess.total_area_m2(),
        "boundary_area_m2": net.boundary().area_m2(),
    });
    finish(m, manifest, &a.out, false)
}

fn world(s: &Settings, m: &mut RunManifest, a: &WorldArgs) -> Result<World> {
    let mut map = s.raw().clone();
    for kv in &a.overrides {
        let extra = parse_kv(kv)?;
        if extra.is_empty() {
            bail!(UsageError(format!("--set expects KEY=VALUE, got `{kv}`")));
        }
        map.extend(extra);
    }
    map.insert("seed".into(), a.seed.to_string());
    let cfg = SynthConfig::from_map(&map)?;
    m.seed = Some(cfg.seed);
    m.config = cfg.to_map();
    Ok(generate_world(&cfg)?)
}

fn synth_generate(s: &Settings, manifest: Option<PathBuf>, a: SynthGenerateArgs) -> Result<()> {
    let mut m = RunManifest::start("synth generate");
    let w = world(s, &mut m, &a.world)?;
    let stamp = format!("# seed={}\n", w.cfg.seed);
    let dir = &a.out_dir;
    let cfg_path = dir.join("world.cfg");
    write_with(&cfg_path, |out| {
        out.write_all(stamp.as_bytes())?;
        out.write_all(w.cfg.to_kv().as_bytes())?;
        Ok(())
    })?;
    let towers_path = dir.join("towers.csv");
    write_with(&towers_path, |out| {
        out.write_all(stamp.as_bytes())?;
        write_towers_csv(w.net.towers(), out)
    })?;
    let truth_path = dir.join("truth.csv");
    write_with(&truth_path, |out| write_truth_csv(out, &w.truth))?;
    let census_path = dir.join("census.csv");
    let census = w.truth.home_census(&w.net)?;
    write_with(&census_path, |out| {
        out.write_all(stamp.as_bytes())?;
        write_census_csv(out, &census, &w.net)
    })?;
    for p in [&cfg_path, &towers_path, &truth_path, &census_path] {
        m.output(p);
    }
    m.summary = json!({
        "towers": w.net.len(),
        "users": w.users.len(),
        "commuters": w.users.iter().filter(|u| u.is_commuter()).count(),
        "displaced": w.users.iter().filter(|u| u.is_displaced()).count(),
    });
    finish(m, manifest, dir, true)
}

fn synth_simulate(s: &Settings, manifest: Option<PathBuf>, a: SynthSimulateArgs) -> Result<()> {
    let mut m = RunManifest::start("synth simulate");
    let w = world(s, &mut m, &a.world)?;
    let periods = PeriodSet::parse_months(&a.periods, w.cfg.tz)?;
    m.set("periods", &a.periods);
    let mut n = 0;
    write_with(&a.out, |out| {
        n = write_simulated_cdr(&w, &periods, out)?;
        Ok(())
    })?;
    m.output(&a.out);
    m.summary = json!({ "users": w.users.len(), "records": n });
    finish(m, manifest, &a.out, false)
}

fn synth_evaluate(s: &Settings, manifest: Option<PathBuf>, a: SynthEvaluateArgs) -> Result<()> {
    let mut m = RunManifest::start("synth evaluate");
    let opts = EvalOptions {
        within_m: s.get(&mut m, "within_m", a.within_m, EvalOptions::default().within_m)?,
        low_activity_max: s.get(&mut m, "low_activity_max", a.low_activity_max, EvalOptions::default().low_activity_max)?,
    };
    let net = network(&mut m, &a.net)?;
    m.input(&a.truth)?;
    let truth = homedetect::synth::read_truth_csv(open_buffered(&a.truth)?)
        .with_context(|| format!("reading {}", a.truth.display()))?;
    m.seed = Some(truth.seed);
    let aggregates = match &a.aggregates {
        Some(p) => {
            m.input(p)?;
            Some(read_aggregates_csv(open_buffered(p)?, &net).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    let tables = read_tables(&mut m, &a.tables)?;
    let mut reports = Vec::new();
    for t in &tables {
        let totals = aggregates
            .as_ref()
            .and_then(|f| f.periods.position(&t.period).map(|i| activity_totals(&f.summaries, i)));
        reports.push(evaluate(t, &truth, &net, totals.as_ref(), opts)?);
    }
    write_with(&a.out, |w| write_accuracy_csv(w, &reports))?;
    m.output(&a.out);
    m.summary = json!(reports
        .iter()
        .map(|r| {
            let all = r.group("all").unwrap();
            json!({"rule": r.rule, "period": r.period, "detected": all.n_detected, "exact_rate": all.exact_rate()})
        })
        .collect::<Vec<_>>());
    finish(m, manifest, &a.out, false)
}

