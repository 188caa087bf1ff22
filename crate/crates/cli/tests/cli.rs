use std::path::Path;
use std::process::{Command, Output};

use pinlab_cli::output::to_bytes;
use pinlab_cli::{run, Cell, ExperimentConfig, Format, Output as Artifact, RunManifest, RunOptions, Table};
use proptest::prelude::*;

fn pinlab(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_pinlab"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .env("PINLAB_CACHE", dir.join("cache"))
        .output()
        .unwrap()
}

fn manifest(out: &Path) -> RunManifest {
    serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_key_exits_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = pinlab(&["green", "--out", out.to_str().unwrap()], r#"{"params": {"mode": "discrete"}}"#, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`d`"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = pinlab(&["pam", "--out", out.to_str().unwrap()], r#"{"params": {"d": 1, "beta": 1, "rho": 1, "t": 1, "betta": 2}}"#, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("`betta`"));
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_two_and_names_the_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // an impossible agreement target for the two Green-function routes
    let o = pinlab(&["green", "--out", out.to_str().unwrap()], r#"{"params": {"d": 4, "eps": 1e-16}}"#, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eps"));
}

#[test]
fn green_reports_both_routes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = pinlab(&["green", "--out", out.to_str().unwrap()], r#"{"params": {"d": 4}}"#, dir.path());
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(out.join("greens.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let value = |m: &str| rows.iter().find(|x| &x[2] == "g_pair" && &x[3] == m).unwrap()[4].parse::<f64>().unwrap();
    let (s, q) = (value("series"), value("quadrature"));
    assert!((s - q).abs() / q < 1e-6);
    manifest(&out).verify(&out).unwrap();
}

#[test]
fn recurrent_dimensions_give_zero_critical_point_and_empty_curve() {
    for d in [1, 2] {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let o = pinlab(&["annealed", "--out", out.to_str().unwrap()], &format!(r#"{{"params": {{"d": {d}}}}}"#), dir.path());
        assert!(o.status.success());
        let crit = std::fs::read_to_string(out.join("critical.csv")).unwrap();
        assert_eq!(crit, format!("mode,d,rho,critical_point\r\ndiscrete,{d},1.0,0.0\r\n"));
        assert_eq!(std::fs::read_to_string(out.join("free_energy.csv")).unwrap(), "z,free_energy,ratio\r\n");
    }
}

#[test]
fn manifest_lists_every_output_with_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = ExperimentConfig::from_json(r#"{"params": {"d": 1, "n": 2, "lambda": 0.4, "replicas": 5}}"#).unwrap();
    let opts = RunOptions { out: Some(out.clone()), threads: Some(2), seed: Some(9), cache_root: Some(dir.path().join("c")) };
    let m = run(pinlab_cli::Command::Polymer, &cfg, &opts).unwrap();
    let mut listed: Vec<String> = m.files.iter().map(|f| f.file.clone()).collect();
    listed.push("manifest.json".into());
    listed.sort();
    let mut on_disk: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    on_disk.sort();
    assert_eq!(listed, on_disk);
    m.verify(&out).unwrap();
    assert_eq!(m.config["params"]["seed"], 9);
    std::fs::write(out.join("size_bias.csv"), "tampered").unwrap();
    assert!(m.verify(&out).is_err());
}

#[test]
fn kernel_cache_is_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_json(r#"{"params": {"d": 2, "beta": 0.3, "n": 12, "replicas": 4}}"#).unwrap();
    let opts = |k: usize| RunOptions {
        out: Some(dir.path().join(format!("out{k}"))),
        threads: Some(1),
        seed: None,
        cache_root: Some(dir.path().join("cache")),
    };
    let first = run(pinlab_cli::Command::Quenched, &cfg, &opts(0)).unwrap();
    let second = run(pinlab_cli::Command::Quenched, &cfg, &opts(1)).unwrap();
    assert_eq!((first.cache_hits, first.cache_misses), (0, 1));
    assert_eq!((second.cache_hits, second.cache_misses), (1, 0));
    assert_eq!(first.files, second.files);
}

fn cell() -> impl Strategy<Value = Cell> {
    prop_oneof![
        any::<bool>().prop_map(Cell::Bool),
        any::<i64>().prop_map(Cell::Int),
        (-1e300f64..1e300).prop_map(Cell::Float),
        "[a-z ,\"]{0,8}".prop_map(Cell::Text),
        Just(Cell::Empty),
    ]
}

proptest! {
    #[test]
    fn json_tables_round_trip(rows in proptest::collection::vec(proptest::collection::vec(cell(), 3), 0..6)) {
        let mut t = Table::new(&["a", "b", "c"]);
        for r in rows {
            t.push(r);
        }
        let bytes = to_bytes(&Artifact::Table(t.clone()), Format::Json).unwrap();
        let back: Table = serde_json::from_slice(&bytes).unwrap();
        // an integral float re-reads as a float, a text cell as text
        prop_assert_eq!(back, t);
    }

    #[test]
    fn csv_has_header_and_one_line_per_row(n in 0usize..8, x in -1e6f64..1e6) {
        let mut t = Table::new(&["k", "x"]);
        for k in 0..n {
            t.push(vec![Cell::from(k), Cell::Float(x)]);
        }
        let bytes = to_bytes(&Artifact::Table(t), Format::Csv).unwrap();
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        prop_assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), vec!["k", "x"]);
        let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
        prop_assert_eq!(rows.len(), n);
        for row in rows {
            prop_assert_eq!(row[1].parse::<f64>().unwrap(), x);
        }
    }
}
