use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_conflict-intensity"));
    c.env_remove("CONFLICT_INTENSITY_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
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

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Data rows of a CSV, skipping provenance comments and the header.
fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn simulate(dir: &TempDir, classes: &str, events: &str, seed: &str) -> PathBuf {
    let tuples = p(dir, "tuples.csv");
    ok(&[
        "simulate",
        "--output",
        s(&tuples),
        "--classes",
        classes,
        "--events",
        events,
        "--seed",
        seed,
    ]);
    tuples
}

#[test]
fn simulate_fit_score_recovers_labels() {
    let dir = TempDir::new().unwrap();
    let tuples = simulate(&dir, "3", "1500", "3");
    let post = p(&dir, "post.jsonl");
    let scores = p(&dir, "scores.csv");
    ok(&[
        "fit",
        "--input",
        s(&tuples),
        "--output",
        s(&post),
        "--classes",
        "3",
        "--draws",
        "300",
        "--warmup",
        "200",
        "--chains",
        "2",
        "--seed",
        "3",
    ]);
    assert!(Path::new(&format!("{}.diagnostics.json", s(&post))).is_file());
    ok(&[
        "score",
        "--input",
        s(&tuples),
        "--posterior",
        s(&post),
        "--output",
        s(&scores),
    ]);

    let labels = rows(&PathBuf::from(format!("{}.labels.csv", s(&tuples))));
    let scored = rows(&scores);
    assert_eq!(labels.len(), 1500);
    assert_eq!(scored.len(), 1500);
    let hits = labels.iter().zip(&scored).filter(|(l, r)| l[1] == r[4]).count();
    let acc = hits as f64 / 1500.0;
    assert!(acc >= 0.9, "accuracy {acc}");
    let first = fs::read_to_string(&scores).unwrap();
    assert!(first.starts_with("# config: {"));
}

#[test]
fn fit_is_byte_identical_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let tuples = simulate(&dir, "2", "300", "1");
    let fit = |name: &str| {
        let out = p(&dir, name);
        ok(&[
            "fit",
            "--input",
            s(&tuples),
            "--output",
            s(&out),
            "--classes",
            "2",
            "--draws",
            "100",
            "--warmup",
            "100",
            "--chains",
            "2",
            "--seed",
            "9",
        ]);
        fs::read(out).unwrap()
    };
    let (a, b) = (fit("a.jsonl"), fit("b.jsonl"));
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn impute_emits_one_row_per_method() {
    let dir = TempDir::new().unwrap();
    let tuples = simulate(&dir, "2", "400", "2");
    let out = p(&dir, "impute.csv");
    let summary = p(&dir, "impute.json");
    ok(&[
        "impute",
        "--input",
        s(&tuples),
        "--output",
        s(&out),
        "--site",
        "predicate",
        "--summary",
        s(&summary),
        "--classes",
        "2",
        "--draws",
        "100",
        "--warmup",
        "100",
        "--chains",
        "2",
    ]);
    let r = rows(&out);
    let methods: Vec<&str> = r.iter().map(|row| row[1].as_str()).collect();
    assert_eq!(methods, ["model", "naive", "prior", "lr"]);
    assert!(r.iter().all(|row| row[0] == "predicate" && row[3] == "mse"));
    assert!(r[3][2].is_empty(), "linear baseline has no SPPD");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(doc["results"].as_array().unwrap().len(), 4);
}

#[test]
fn exit_codes_distinguish_error_kinds() {
    let dir = TempDir::new().unwrap();
    let missing = p(&dir, "missing.csv");
    let out = p(&dir, "x.jsonl");
    assert_eq!(
        run(&["fit", "--input", s(&missing), "--output", s(&out)]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["fit", "--bogus-flag"]).status.code(), Some(1));

    let bad = p(&dir, "bad.csv");
    fs::write(
        &bad,
        "subject,predicate,quantifier,object,location,month\ncivilian,high,0,military,x,2001-01\n",
    )
    .unwrap();
    let o = run(&["fit", "--input", s(&bad), "--output", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let cfg = p(&dir, "cfg.toml");
    fs::write(&cfg, "classes = \"three\"\n").unwrap();
    assert_eq!(
        run(&[
            "--config",
            s(&cfg),
            "--print-config",
            "score",
            "--input",
            "a",
            "--posterior",
            "b",
            "--output",
            "c"
        ])
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn flags_override_config_file_and_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = p(&dir, "run.toml");
    fs::write(&cfg, "classes = 3\nseed = 7\n[sampler]\ndraws = 40\n").unwrap();
    let args = ["fit", "--input", "a", "--output", "b", "--print-config"];

    let from_file = String::from_utf8(ok(&[&["--config", s(&cfg)], &args[..]].concat()).stdout).unwrap();
    assert!(from_file.contains("classes = 3") && from_file.contains("draws = 40") && from_file.contains("seed = 7"));

    let overridden =
        String::from_utf8(ok(&[&["--config", s(&cfg), "--seed", "1"], &args[..], &["--classes", "4"]].concat()).stdout)
            .unwrap();
    assert!(overridden.contains("classes = 4") && overridden.contains("seed = 1"));

    let via_env = bin()
        .env("CONFLICT_INTENSITY_CONFIG", &cfg)
        .args(args)
        .output()
        .unwrap();
    assert!(String::from_utf8(via_env.stdout).unwrap().contains("classes = 3"));

    let json = p(&dir, "run.json");
    fs::write(&json, r#"{"classes": 2, "folds": 12}"#).unwrap();
    let from_json = String::from_utf8(ok(&[&["--config", s(&json)], &args[..]].concat()).stdout).unwrap();
    assert!(from_json.contains("classes = 2") && from_json.contains("folds = 12"));
}

#[test]
fn ingest_writes_tuples_and_skip_report() {
    let dir = TempDir::new().unwrap();
    let raw = p(&dir, "raw.csv");
    fs::write(
        &raw,
        "verb10,actor3,actor6,target3,target6,fatalities,wounded,location,date\n\
         19,MIL,,CVL,,2,1,Syria,2012-03-04\n\
         14,CVL,,GOV,,0,0,Syria,2012-04-01\n\
         19,ZZZ,,CVL,,0,0,Syria,2012-04-02\n\
         99,MIL,,CVL,,0,0,Syria,2012-04-03\n",
    )
    .unwrap();
    let out = p(&dir, "tuples.csv");
    ok(&["ingest", "--input", s(&raw), "--output", s(&out)]);
    let t = rows(&out);
    assert_eq!(t.len(), 2);
    assert_eq!(t[0][2], "3");
    assert_eq!(t[0][5], "2012-03");
    let skipped = rows(&PathBuf::from(format!("{}.skipped.csv", s(&out))));
    assert_eq!(skipped.len(), 2);
}

/// Two locations covering ten years of months.
fn two_locations(dir: &TempDir) -> PathBuf {
    let tuples = simulate(dir, "3", "2400", "4");
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&tuples)
        .unwrap();
    let header = r.headers().unwrap().clone();
    let path = p(dir, "located.csv");
    let mut w = csv::Writer::from_path(&path).unwrap();
    w.write_record(&header).unwrap();
    for (i, rec) in r.records().enumerate() {
        let mut rec: Vec<String> = rec.unwrap().iter().map(String::from).collect();
        rec[4] = if (i / 120) % 2 == 0 { "north" } else { "south" }.into();
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
    path
}

#[test]
fn forecast_and_correlate_produce_tables() {
    let dir = TempDir::new().unwrap();
    let tuples = two_locations(&dir);
    let light = ["--classes", "3", "--draws", "100", "--warmup", "100", "--chains", "2"];

    let table = p(&dir, "forecast.csv");
    ok(&[
        &[
            "forecast",
            "--input",
            s(&tuples),
            "--output",
            s(&table),
            "--location",
            "north",
            "--folds",
            "12",
            "--max-lag",
            "3",
        ],
        &light[..],
    ]
    .concat());
    let r = rows(&table);
    let experiments: Vec<&str> = r
        .iter()
        .filter(|row| row[2] == "mse")
        .map(|row| row[1].as_str())
        .collect();
    assert_eq!(
        experiments,
        ["p -> p", "p,q -> p", "p,z -> p", "q -> q", "q,p -> q", "q,z -> q"]
    );
    assert!(r.iter().filter(|row| row[2] == "granger_p").all(|row| {
        let v: f64 = row[3].parse().unwrap();
        (0.0..=1.0).contains(&v)
    }));

    let post = p(&dir, "post.jsonl");
    ok(&[&["fit", "--input", s(&tuples), "--output", s(&post)], &light[..]].concat());
    let ext = p(&dir, "searches.csv");
    let mut series = String::from("month,value\n");
    for m in 0..60 {
        series.push_str(&format!(
            "{}-{:02},{}\n",
            2003 + m / 12,
            m % 12 + 1,
            (m as f64 * 0.7).sin()
        ));
    }
    fs::write(&ext, series).unwrap();
    let matrix = p(&dir, "corr.csv");
    ok(&[
        "correlate",
        "--input",
        s(&tuples),
        "--posterior",
        s(&post),
        "--location",
        "north",
        "--output",
        s(&matrix),
        "--external",
        s(&ext),
    ]);
    let m = rows(&matrix);
    assert_eq!(m.len(), 4);
    assert_eq!(m[3][0], "searches");
    for (i, row) in m.iter().enumerate() {
        let diag: f64 = row[i + 1].parse().unwrap();
        assert!((diag - 1.0).abs() < 1e-12);
    }
}
