use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use difftune::data::{load_descriptors, DescriptorFormat, GroundTruth, SyntheticConfig};
use difftune::graph::load_graph;
use difftune::harness::{
    cmd_build_graph, cmd_evaluate, cmd_gen_synthetic, cmd_tune, files, DatasetPaths, ExperimentConfig, GraphBackend,
    GraphConfig, GraphSource, MethodConfig,
};
use difftune::tuners::{GaConfig, RandomSearchConfig, TuneReport};
use difftune::DiffusionParams;

fn difftune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_difftune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn small_data(dir: &Path, format: DescriptorFormat) -> DatasetPaths {
    let cfg = SyntheticConfig::new(50, 0.05, 3, 9);
    let f = cmd_gen_synthetic(&cfg, 8, format, dir).unwrap();
    DatasetPaths {
        dataset: f.database,
        format,
        queries: Some(f.queries),
        gt: f.ground_truth,
    }
}

fn graph(k: usize) -> GraphSource {
    GraphSource::Build(GraphConfig::new(GraphBackend::Bruteforce, k))
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[test]
fn generated_files_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    for format in [DescriptorFormat::Csv, DescriptorFormat::Packed] {
        let out = dir.path().join(format.extension());
        let paths = small_data(&out, format);
        let (db, queries, gt) = paths.load().unwrap();
        assert_eq!(db.len(), 100);
        assert_eq!(queries.len(), 8);
        assert_eq!(gt.len(), 8);
        gt.validate(&db, &queries).unwrap();
        let raw = load_descriptors(&paths.dataset, format).unwrap();
        assert_eq!(raw.dim(), 3);
    }
}

#[test]
fn identity_genome_equals_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let paths = small_data(dir.path(), DescriptorFormat::Csv);
    let base = cmd_evaluate(&paths, &graph(10), None, &dir.path().join("base")).unwrap();
    let p = DiffusionParams {
        alpha: 0.0,
        beta: 3,
        gamma: 1,
        k_s: 100,
        k: 10,
        iterations: 10,
        trunc: 100,
    };
    let ident = cmd_evaluate(&paths, &graph(10), Some(p), &dir.path().join("ident")).unwrap();
    assert!(base.baseline && !ident.baseline);
    assert_eq!(ident.metrics.map, base.metrics.map);
    let csv = fs::read_to_string(dir.path().join("ident").join(files::PER_QUERY)).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(csv.starts_with("query,ap\n"));
}

#[test]
fn random_search_reports_exact_budget() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = small_data(&dir.path().join("data"), DescriptorFormat::Csv);
    let cfg = ExperimentConfig {
        inputs,
        graph: graph(40),
        method: MethodConfig::Random(RandomSearchConfig::new(600, 3)),
        large_ranges: false,
        ranges: None,
        seed: 3,
    };
    let out = dir.path().join("run");
    let o = cmd_tune(&cfg, &out).unwrap();
    assert_eq!(o.report.fitness_evaluations, 600);
    assert_eq!(o.report.pipeline_runs + o.report.cache_hits, 600);
    for f in [files::GRAPH, files::REPORT, files::CONVERGENCE, files::LOG] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let saved = TuneReport::load(&out.join(files::REPORT)).unwrap();
    assert_eq!(saved.best_fitness, o.report.best_fitness);
    assert!(saved.best_params.is_some());
    let csv = fs::read_to_string(out.join(files::CONVERGENCE)).unwrap();
    assert_eq!(csv.lines().next(), Some("iteration,best_fitness,mean_fitness,evals_so_far"));
    assert_eq!(csv.lines().count(), 601);
}

#[test]
fn ga_defaults_echoed_in_report() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = small_data(&dir.path().join("data"), DescriptorFormat::Csv);
    let cfg = ExperimentConfig {
        inputs,
        graph: graph(40),
        method: MethodConfig::Ga(GaConfig::default()),
        large_ranges: false,
        ranges: None,
        seed: 0,
    };
    let o = cmd_tune(&cfg, &dir.path().join("run")).unwrap();
    let m = &o.report.config["method"];
    assert_eq!(m["generations"], 50);
    assert_eq!(m["population"], 50);
    assert_eq!(m["cxpb"], 0.3);
    assert_eq!(m["mutpb"], 0.2);
    assert_eq!(m["indpb"], 0.1);
    assert_eq!(m["tournament_size"], 3);
    let ranges = &o.report.config["experiment"]["ranges"]["genes"];
    assert_eq!(ranges[3]["upper"], 100.0);
    assert!(o.report.fitness_evaluations <= 50 * 51);
}

#[test]
fn bruteforce_graph_file_and_lsh_bytes_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SyntheticConfig::new(500, 0.05, 3, 1);
    let f = cmd_gen_synthetic(&cfg, 10, DescriptorFormat::Csv, &dir.path().join("data")).unwrap();
    let brute = GraphConfig::new(GraphBackend::Bruteforce, 10);
    let o = cmd_build_graph(&f.database, DescriptorFormat::Csv, &brute, false, &dir.path().join("bf")).unwrap();
    assert_eq!(o.n, 1000);
    assert_eq!(load_graph(&dir.path().join("bf").join(files::GRAPH)).unwrap().n(), 1000);

    let lsh = GraphConfig {
        lsh_seed: 5,
        ..GraphConfig::new(GraphBackend::Lsh, 10)
    };
    let mut bytes = Vec::new();
    for run in ["l1", "l2"] {
        let out = dir.path().join(run);
        let o = cmd_build_graph(&f.database, DescriptorFormat::Csv, &lsh, true, &out).unwrap();
        let (_, recall) = o.comparison.unwrap();
        assert!((0.0..=1.0).contains(&recall));
        bytes.push(fs::read(out.join(files::GRAPH)).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(difftune(&["tune", "--bogus"]).status.code(), Some(1));
    assert_eq!(difftune(&[]).status.code(), Some(1));
    assert_eq!(difftune(&["--help"]).status.code(), Some(0));
    let missing = difftune(&["evaluate", "--dataset", "/nonexistent.csv", "--gt", "/nonexistent.json", "--out", "/tmp/x"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("does not exist"));
}

#[test]
fn bad_method_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = small_data(dir.path(), DescriptorFormat::Csv);
    let (db, gt) = (s(&p.dataset), s(&p.gt));
    let out = s(&dir.path().join("run"));
    let o = difftune(&["tune", "--dataset", &db, "--gt", &gt, "--method", "ga", "--population", "2", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
    let o = difftune(&["tune", "--dataset", &db, "--gt", &gt, "--method", "grid", "--grid-levels", "1,2", "--out", &out]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("db.csv");
    fs::write(&db, "a,1,2\nb,1\n").unwrap();
    let gt: PathBuf = dir.path().join("gt.json");
    fs::write(&gt, r#"{"a": ["b"]}"#).unwrap();
    let out = dir.path().join("out");
    let o = difftune(&["evaluate", "--dataset", &s(&db), "--gt", &s(&gt), "--baseline", "--out", &s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn cli_end_to_end_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gen = difftune(&["gen-synthetic", "--n-per-class", "40", "--n-queries", "4", "--format", "packed", "--out", &s(&data)]);
    assert!(gen.status.success());
    let (db, q, gt) = (data.join("database.dset"), data.join("queries.dset"), data.join("gt.json"));
    let parsed = GroundTruth::load(&gt).unwrap();
    assert!(parsed.iter().all(|(query, _)| query.starts_with('q')));
    let mut reports = Vec::new();
    for method in ["pso", "random"] {
        let out = dir.path().join(method);
        let o = difftune(&[
            "tune", "--dataset", &s(&db), "--format", "packed", "--queries", &s(&q), "--gt", &s(&gt),
            "--method", method, "--particles", "4", "--pso-iterations", "3", "--budget", "12", "--out", &s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let line = String::from_utf8_lossy(&o.stdout).into_owned();
        assert!(line.starts_with(method), "{line}");
        assert!(line.contains(" 12 "), "{line}");
        reports.push(s(&out.join(files::REPORT)));
    }
    let summary = dir.path().join("summary.json");
    let o = difftune(&["report", &reports[0], &reports[1], "--out", &s(&summary)]);
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("pso") && table.contains("random"));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
}
