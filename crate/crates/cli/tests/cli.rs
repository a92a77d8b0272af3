use std::path::{Path, PathBuf};
use std::process::Command;

use gmrfmi_cli::adjacency::load_adjacency;
use gmrfmi_cli::config::RawConfig;
use gmrfmi_cli::dataset::{load_dataset, parse_dataset, ColumnType};
use gmrfmi_cli::workflows::{run_fit, run_sensitivity, Context};
use gmrfmi_cli::CliError;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data(name: &str) -> PathBuf {
    root().join("data").join(name).canonicalize().unwrap()
}

fn nhanes_config(extra: &str, out: &Path) -> String {
    format!(
        "dataset = {}\nseed = 1\nderive.chl_std = standardize(chl)\nanalysis.response = chl_std\n\
         analysis.terms = beta_1:age=40-59, beta_2:age=60-99, beta_3:bmi\n\
         imputation.bmi.model = linreg\n\
         imputation.bmi.terms = alpha_I:1, beta_I1:age=40-59, beta_I2:age=60-99\n\
         missingness.covariate = bmi\nmissingness.terms = beta_M1:age=40-59, beta_M2:age=60-99\n\
         missingness.mnar_terms =\noutput.dir = {}\n{extra}",
        data("nhanes2.csv").display(),
        out.display()
    )
}

fn context(text: &str) -> Result<Context, CliError> {
    Context::from_config(&RawConfig::parse(text, Path::new("test.cfg"), Path::new("/")).unwrap())
}

#[test]
fn nhanes_loads_with_the_published_missing_counts() {
    let path = data("nhanes2.csv");
    let d = load_dataset(&path, &[]).unwrap();
    // independent count of `NA` tokens per column straight from the text
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let mut na = vec![0usize; header.len()];
    let mut rows = 0;
    for l in lines {
        rows += 1;
        for (j, f) in l.split(',').enumerate() {
            na[j] += usize::from(f == "NA");
        }
    }
    assert_eq!(d.n_rows, rows);
    assert_eq!(d.n_rows, 25);
    for (j, h) in header.iter().enumerate() {
        assert_eq!(d.column(h).unwrap().n_missing(), na[j], "{h}");
    }
    assert_eq!(d.column("bmi").unwrap().n_missing(), 9);
    assert_eq!(d.column("chl").unwrap().n_missing(), 10);
    assert_eq!(d.column("age").unwrap().column_type(), ColumnType::Categorical);
    assert_eq!(d.column("chl").unwrap().column_type(), ColumnType::Count);
}

#[test]
fn missing_token_is_case_sensitive_and_empty_files_fail() {
    let e = parse_dataset("x,y\n1,2\nna,3\n", Path::new("f.csv"), &[]).unwrap_err();
    assert!(matches!(e, CliError::Parse { line: 3, column: 1, .. }), "{e}");
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert!(matches!(load_dataset(&empty, &[]), Err(CliError::Parse { .. })));
}

#[test]
fn county_adjacency_is_valid() {
    let a = load_adjacency(&data("nc_sids.adj")).unwrap();
    assert_eq!(a.n, 100);
    assert!(!a.edges.is_empty());
    assert!((0..a.n).all(|i| !a.neighbours(i).is_empty()));
}

#[test]
fn complete_data_gives_analysis_rows_only() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("complete.csv");
    std::fs::write(&csv, "y,x\n1.2,0.1\n0.7,-0.4\n2.1,1.3\n1.5,0.6\n0.2,-1.0\n1.9,0.9\n").unwrap();
    let out = dir.path().join("out");
    let text = format!(
        "dataset = {}\nanalysis.response = y\nanalysis.terms = b:x\nimputation.x.model = linreg\n\
         missingness.variant = MNAR\nmissingness.covariate = x\noutput.dir = {}\n",
        csv.display(),
        out.display()
    );
    let outcome = run_fit(&context(&text).unwrap()).unwrap();
    assert!(outcome.converged);
    let res = load_dataset(&out.join("results.csv"), &[]).unwrap();
    let subs = res.column("submodel").unwrap().labels();
    assert!(subs.iter().all(|s| s.as_deref() == Some("Analysis")));
    let names: Vec<String> = res.column("parameter").unwrap().labels().into_iter().flatten().collect();
    assert_eq!(names, vec!["alpha", "b", "tau"]);
    assert!(!out.join("imputed.csv").exists());
}

#[test]
fn mnar_fit_reports_the_joint_model_rows_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ctx = context(&nhanes_config("missingness.variant = MNAR\n", &out)).unwrap();
    let outcome = run_fit(&ctx).unwrap();
    assert!(outcome.converged, "{:?}", outcome.manifest);
    let res = load_dataset(&out.join("results.csv"), &[]).unwrap();
    let names: Vec<String> = res.column("parameter").unwrap().labels().into_iter().flatten().collect();
    let expected = [
        "alpha", "beta_1", "beta_2", "beta_3", "tau", "alpha_I", "beta_I1", "beta_I2", "tau_I", "alpha_M", "delta",
    ];
    assert_eq!(names, expected);
    let header = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(header.starts_with(&format!("# config_hash={} seed=1\n", ctx.prov.config_hash)));
    // the imputed values of the nine missing bmi entries
    let imputed = load_dataset(&out.join("imputed.csv"), &[]).unwrap();
    assert_eq!(imputed.n_rows, 9);
    let predictive = load_dataset(&out.join("predictive.csv"), &[]).unwrap();
    assert_eq!(predictive.n_rows, 10);
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("delta") && summary.contains("MNAR"));
}

#[test]
fn identical_sensitivity_variants_differ_by_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = run_sensitivity(&context(&nhanes_config("sensitivity.variants = MAR, MAR\n", &out)).unwrap()).unwrap();
    assert_eq!(res.labels, vec!["MAR", "MAR#2"]);
    assert!(res.differences.iter().all(|(_, _, d)| *d == Some(0.0)), "{:?}", res.differences);
    let cmp = load_dataset(&out.join("comparison.csv"), &[]).unwrap();
    assert!(cmp.numeric("max_abs_diff").unwrap().iter().all(|v| *v == Some(0.0)));
}

#[test]
fn sensitivity_needs_two_variants() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = context(&nhanes_config("sensitivity.variants = MCAR\n", dir.path())).unwrap();
    assert!(matches!(run_sensitivity(&ctx), Err(CliError::Config(_))));
}

#[test]
fn unknown_columns_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = nhanes_config("", dir.path()).replace("beta_3:bmi", "beta_3:weight");
    assert!(matches!(context(&text), Err(CliError::Config(_))));
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gmrfmi")).args(args).output().unwrap()
}

#[test]
fn exit_codes_distinguish_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "dataset = nowhere.csv\nanalysis.response = y\nengine.grid_points = 4\n").unwrap();
    assert_eq!(binary(&["fit", bad.to_str().unwrap()]).status.code(), Some(2));
    let garbled = dir.path().join("garbled.cfg");
    std::fs::write(&garbled, "this is not a config\n").unwrap();
    let out = binary(&["fit", garbled.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("garbled.cfg:1"));
}

#[test]
fn binary_fit_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("mcar.cfg");
    std::fs::write(&cfg, nhanes_config("missingness.variant = MCAR\noutput.densities = beta_3, bmi[0]\n", &out)).unwrap();
    let run = binary(&["fit", cfg.to_str().unwrap(), "--seed", "3", "--grid-points", "3"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let header = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(header.lines().next().unwrap().ends_with("seed=3"));
    let density = load_dataset(&out.join("densities").join("bmi_0.csv"), &[]).unwrap();
    assert!(density.numeric("density").unwrap().iter().all(|d| d.unwrap() >= 0.0));
    let manifest = std::fs::read_to_string(out.join("errors.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
    let rep = binary(&["report", out.to_str().unwrap()]);
    assert!(rep.status.success());
    let text = String::from_utf8(rep.stdout).unwrap();
    assert!(text.contains("results.csv") && text.contains("beta_3"));
}
