mod common;

use std::fs;
use std::path::{Path, PathBuf};

use boxplain::viz::{parse_json, Explanation};
use common::{run_cli, stderr};

fn write_apartments(dir: &Path) -> String {
    let path = dir.join("apts.csv");
    fs::write(&path, common::apartments_csv(120)).unwrap();
    path.display().to_string()
}

fn code(args: &[&str]) -> i32 {
    run_cli(args).status.code().unwrap()
}

fn with_data<'a>(data: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![rest[0], "--data", data, "--target", "price"];
    v.extend_from_slice(&rest[1..]);
    v
}

#[test]
fn importance_with_two_labelled_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    let json = dir.path().join("out.json");
    let json_s = json.display().to_string();
    let out = run_cli(&with_data(
        &data,
        &["importance", "--model", "builtin:ols", "--label", "lm", "--model", "builtin:tree", "--label", "tree", "--json", &json_s],
    ));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
    let results = parse_json(&fs::read_to_string(&json).unwrap()).unwrap();
    let labels: Vec<&str> = results.iter().map(Explanation::label).collect();
    assert_eq!(labels, ["lm", "tree"]);
    assert!(results.iter().all(|r| r.kind() == "importance"));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    let out = run_cli(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("ERROR[1]: ") && err.contains("Usage"), "{err}");

    assert_eq!(code(&["pdp", "--data", &data]), 1);
    assert_eq!(code(&with_data(&data, &["perf", "--label", "x", "--model", "builtin:ols"])), 1);
    assert_eq!(
        code(&with_data(&data, &["perf", "--model", "builtin:ols", "--label", "a", "--model", "builtin:tree", "--label", "a"])),
        1
    );
    assert_eq!(code(&with_data(&data, &["perf", "--model", "builtin:svm"])), 1);
    assert_eq!(code(&with_data(&data, &["pdp", "--model", "builtin:ols", "--variable", "district"])), 1);
    assert_eq!(code(&with_data(&data, &["pdp", "--model", "builtin:ols", "--variable", "nope"])), 1);
    assert_eq!(code(&with_data(&data, &["pdp", "--model", "builtin:ols", "--variable", "year", "--grid", "quantile:1"])), 1);
    assert_eq!(code(&with_data(&data, &["importance", "--model", "builtin:ols", "--loss", "huber"])), 1);
    assert_eq!(code(&with_data(&data, &["perf", "--model", "builtin:ols", "--jobs", "0"])), 1);
    assert_eq!(code(&with_data(&data, &["breakdown", "--model", "builtin:ols"])), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn default_label_is_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    let out = run_cli(&with_data(&data, &["perf", "--model", "builtin:tree:maxdepth=3,minleaf=4"]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let results = parse_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(results[0].label(), "builtin:tree:maxdepth=3,minleaf=4");
}

#[test]
fn data_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    let ragged = dir.path().join("ragged.csv");
    fs::write(&ragged, "a,price\n1,2\n3\n").unwrap();
    let out = run_cli(&["perf", "--data", &ragged.display().to_string(), "--target", "price", "--model", "builtin:ols"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("row 2 has 1 fields, expected 2"), "{}", stderr(&out));

    let empty = dir.path().join("empty.csv");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&["perf", "--data", &empty.display().to_string(), "--target", "price", "--model", "builtin:ols"]), 2);

    assert_eq!(code(&["perf", "--data", "/nonexistent/x.csv", "--target", "price", "--model", "builtin:ols"]), 4);

    // Singular design: a duplicated column cannot be fitted by least squares.
    let dup = dir.path().join("dup.csv");
    fs::write(&dup, "a,b,price\n1,1,1\n2,2,3\n3,3,2\n4,4,5\n").unwrap();
    let out = run_cli(&["perf", "--data", &dup.display().to_string(), "--target", "price", "--model", "builtin:ols"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));

    let json = dir.path().join("ok.json");
    let svg = dir.path().join("missing-dir").join("chart.svg");
    let out = run_cli(&with_data(
        &data,
        &["perf", "--model", "builtin:ols", "--json", &json.display().to_string(), "--svg", &svg.display().to_string()],
    ));
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).starts_with("ERROR[4]: "));
    assert!(!json.exists(), "partial output left behind");
}

#[test]
fn observations_from_file_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    let obs = dir.path().join("obs.csv");
    fs::write(&obs, "price,surface,year,district\n0,50,1990,Wola\n").unwrap();
    let obs_s = obs.display().to_string();
    let out = run_cli(&with_data(&data, &["breakdown", "--model", "builtin:ols", "--observation", &obs_s, "--direction", "down"]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let missing = dir.path().join("missing.csv");
    fs::write(&missing, "surface,year\n50,1990\n").unwrap();
    let out = run_cli(&with_data(
        &data,
        &["cp", "--model", "builtin:ols", "--observation", &missing.display().to_string()],
    ));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing column 'district'"), "{}", stderr(&out));

    let out = run_cli(&with_data(&data, &["cp", "--model", "builtin:ols", "--row-index", "120"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("index 120 out of range 0..119"));

    let out = run_cli(&with_data(&data, &["cp", "--model", "builtin:ols", "--row-index", "0", "--variables", "year,district", "--normalized"]));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = parse_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let Explanation::Cp(p) = &r[0] else { panic!("cp result") };
    assert_eq!(p.curves.len(), 2);
    assert_eq!(p.normalized.keys().collect::<Vec<_>>(), ["year"]);
}

#[test]
fn fitted_model_files_reproduce_builtin_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    for spec in ["builtin:ols", "builtin:tree"] {
        let model = dir.path().join("model.json");
        let out = run_cli(&["fit", "--data", &data, "--target", "price", "--model", spec, "--out", &model.display().to_string()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let file_spec = format!("file:{}", model.display());
        let a = run_cli(&with_data(&data, &["perf", "--model", spec, "--label", "m"]));
        let b = run_cli(&with_data(&data, &["perf", "--model", &file_spec, "--label", "m"]));
        assert_eq!(a.stdout, b.stdout, "{spec}");
    }
    assert_eq!(
        code(&["fit", "--data", &data, "--target", "price", "--model", "cmd:cat", "--out", "/tmp/never.json"]),
        1
    );
}

#[test]
fn separate_training_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    let other = dir.path().join("train.csv");
    let text = fs::read_to_string(&data).unwrap();
    let head: Vec<&str> = text.lines().take(80).collect();
    fs::write(&other, head.join("\n") + "\n").unwrap();
    let a = run_cli(&with_data(&data, &["perf", "--model", "builtin:ols"]));
    let b = run_cli(&with_data(&data, &["perf", "--model", "builtin:ols", "--train", &other.display().to_string()]));
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    assert_ne!(a.stdout, b.stdout);

    let wrong = dir.path().join("wrong.csv");
    fs::write(&wrong, "surface,price\n1,2\n3,4\n5,7\n").unwrap();
    assert_eq!(
        code(&with_data(&data, &["perf", "--model", "builtin:ols", "--train", &wrong.display().to_string()])),
        1
    );
}

fn outputs(dir: &Path, tag: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{tag}.json")), dir.join(format!("{tag}.svg")))
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_apartments(dir.path());
    let commands: Vec<Vec<&str>> = vec![
        vec!["perf"],
        vec!["perf", "--log-y"],
        vec!["pdp", "--variable", "year"],
        vec!["ale", "--variable", "surface", "--bins", "10"],
        vec!["merge", "--variable", "district"],
        vec!["importance", "--repeats", "5", "--seed", "99"],
        vec!["cp", "--row-index", "3"],
        vec!["breakdown", "--row-index", "3"],
    ];
    for (k, cmd) in commands.iter().enumerate() {
        let mut first: Option<(Vec<u8>, Vec<u8>)> = None;
        for (run, jobs) in ["1", "4"].iter().enumerate() {
            let (json, svg) = outputs(dir.path(), &format!("{k}-{run}"));
            let (json_s, svg_s) = (json.display().to_string(), svg.display().to_string());
            let mut args = with_data(&data, cmd);
            args.extend([
                "--model", "builtin:ols", "--label", "lm", "--model", "builtin:tree", "--label", "tree",
                "--json", &json_s, "--svg", &svg_s, "--jobs", jobs,
            ]);
            let out = run_cli(&args);
            assert_eq!(out.status.code(), Some(0), "{cmd:?}: {}", stderr(&out));
            let got = (fs::read(&json).unwrap(), fs::read(&svg).unwrap());
            roxmltree::Document::parse(std::str::from_utf8(&got.1).unwrap()).expect("well-formed SVG");
            match &first {
                None => first = Some(got),
                Some(prev) => assert!(prev == &got, "{cmd:?} differs between runs"),
            }
        }
    }
}
