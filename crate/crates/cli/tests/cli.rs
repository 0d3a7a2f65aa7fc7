use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lyap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyap")).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const LMRGW: [&str; 6] = ["--lambda", "2", "--sigma1", "0.5", "--sigma2", "0.2"];

fn price_column(path: &Path) -> Vec<(String, String, f64, f64)> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].to_string(),
                f[1].to_string(),
                f[2].parse().unwrap(),
                f[6].parse().unwrap(),
            )
        })
        .collect()
}

#[test]
fn price_fixture_and_parity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("priced.csv");
    let input = fixture("five_quotes.csv");
    let mut args = vec!["price", "--input", s(&input), "--output", s(&out)];
    args.extend(LMRGW);
    let o = lyap(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = price_column(&out);
    assert_eq!(rows.len(), 5);
    // same strike and maturity: C - P = S0 - K at zero rates
    let (c, p) = (rows[0].3, rows[1].3);
    assert!((c - p).abs() <= 1e-12);
    assert!(dir.path().join("priced.csv.manifest.json").exists());
}

#[test]
fn price_methods_agree() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("synthetic_lmrgw_500.csv");
    let run = |method: &str| {
        let out = dir.path().join(format!("{method}.csv"));
        let mut args = vec!["price", "--input", s(&input), "--method", method, "--output"];
        let out_s = out.to_str().unwrap().to_string();
        args.push(&out_s);
        args.extend(LMRGW);
        assert!(lyap(&args).status.success());
        price_column(&out)
    };
    let a = run("analytical");
    let n = run("numerical");
    assert_eq!(a.len(), 500);
    for (x, y) in a.iter().zip(&n) {
        assert!((x.3 - y.3).abs() <= 1e-10 * x.3.abs(), "{x:?} {y:?}");
    }
}

#[test]
fn malformed_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "quote_id,option_type,strike,maturity_years,underlying_price,market_price\na,call,abc,1,100,3\nb,put,100,1,100,5\n",
    )
    .unwrap();
    let mut args = vec!["price", "--input", s(&bad)];
    args.extend(LMRGW);
    let o = lyap(&args);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");

    args.push("--skip-invalid");
    let o = lyap(&args);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);

    let header = dir.path().join("header.csv");
    fs::write(&header, "id,type\n1,call\n").unwrap();
    let o = lyap(&["calibrate", "--input", s(&header)]);
    assert_eq!(o.status.code(), Some(2));
    let o = lyap(&["calibrate", "--input", s(&dir.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    let o = lyap(&["price", "--input", s(&fixture("five_quotes.csv")), "--lambda", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lyap(&["price", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_then_calibrate_recovers_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain.csv");
    let mut args = vec!["generate", "--output", s(&chain), "--n-quotes", "100", "--seed", "3"];
    args.extend(LMRGW);
    assert!(lyap(&args).status.success());

    let again = dir.path().join("again.csv");
    args[2] = s(&again);
    assert!(lyap(&args).status.success());
    assert_eq!(fs::read(&chain).unwrap(), fs::read(&again).unwrap());

    let result = dir.path().join("fit.json");
    let o = lyap(&["calibrate", "--input", s(&chain), "--output", s(&result)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    let params = &json["params"];
    for (key, want) in [("lambda", 2.0), ("sigma1", 0.5), ("sigma2", 0.2)] {
        let got = params[key].as_f64().unwrap();
        assert!((got - want).abs() / want < 0.01, "{key} = {got}");
    }
    assert_eq!(json["n_train"], 70);
    assert!(dir.path().join("fit.surface.csv").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "calibrate");
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn full_training_set_has_no_test_report() {
    let dir = tempfile::tempdir().unwrap();
    let result = dir.path().join("fit.json");
    let o = lyap(&[
        "calibrate",
        "--input",
        s(&fixture("synthetic_lmrgw_500.csv")),
        "--train-fraction",
        "1.0",
        "--output",
        s(&result),
    ]);
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    assert!(json["test_rmse"].is_null());
    assert_eq!(json["n_test"], 0);
}

#[test]
fn single_maturity_calibration_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("one.csv");
    let mut args = vec![
        "generate",
        "--output",
        s(&chain),
        "--n-quotes",
        "20",
        "--maturities",
        "1",
    ];
    args.extend(LMRGW);
    assert!(lyap(&args).status.success());
    let o = lyap(&["calibrate", "--input", s(&chain)]);
    assert_eq!(o.status.code(), Some(2));
    // a one-parameter model is identified by a single maturity
    let o = lyap(&["calibrate", "--model", "gbm", "--input", s(&chain)]);
    assert!(o.status.success());
}

#[test]
fn group_by_underlying_fits_each_contract() {
    let dir = tempfile::tempdir().unwrap();
    let result = dir.path().join("groups.json");
    let o = lyap(&[
        "calibrate",
        "--model",
        "gbm",
        "--group-by",
        "underlying",
        "--input",
        s(&fixture("synthetic_lmrgw_500.csv")),
        "--output",
        s(&result),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&result).unwrap()).unwrap();
    let groups = json.as_array().unwrap();
    assert_eq!(groups.len(), 12);
    assert!(groups.iter().all(|g| g["result"].is_object()));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = lyap(&[
        "bench",
        "--evaluations",
        "1,10",
        "--repetitions",
        "2",
        "--output",
        s(&out),
    ]);
    assert!(o.status.success());
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("evaluations,analytical_s,numerical_s,speedup\n"));
    assert_eq!(text.lines().count(), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("speedup"));
    assert_eq!(lyap(&["bench", "--evaluations", "0"]).status.code(), Some(2));
}
