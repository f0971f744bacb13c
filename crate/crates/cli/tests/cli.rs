use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cyclic_empc::config::ExperimentConfig;
use cyclic_empc::sim::parse_trace_metadata;
use cyclic_empc::verify::ReportSet;

fn bundled_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/token_bucket.toml")
}

fn cli(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cyclic-empc"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

/// Bundled configuration with `edit` applied to its text.
fn edited_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let path = dir.join("edited.toml");
    fs::write(&path, edit(fs::read_to_string(bundled_config()).unwrap())).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_trace_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run"], &bundled_config(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));

    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let rows = trace.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows, 15);

    let plot = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    let mut lines = plot.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,x_p1,x_p2,x_p3,x_p4,u_c1,u_c2,gamma,u_a1,u_a2"
    );
    let first: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(&first[..5], [0.0, 1.0, 0.0, 1.0, 0.0]);
    assert_eq!(lines.count(), 14);
}

#[test]
fn embedded_metadata_reparses_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--seed", "17"], &bundled_config(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let (meta, table) =
        parse_trace_metadata(&fs::read_to_string(dir.path().join("trace.csv")).unwrap()).unwrap();
    assert_eq!(meta.seed, 17);
    let restored = ExperimentConfig::from_table(&table.unwrap()).unwrap();
    let mut expected = ExperimentConfig::load(&bundled_config()).unwrap();
    expected.seed = 17;
    assert_eq!(restored.hash().unwrap(), expected.hash().unwrap());
    assert_eq!(meta.config_hash, Some(expected.hash().unwrap()));
}

#[test]
fn check_passes_and_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["check"], &bundled_config(), dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let reports =
        ReportSet::from_toml(&fs::read_to_string(dir.path().join("report.toml")).unwrap()).unwrap();
    assert!(reports.all_pass());
    for name in [
        "dissipativity",
        "terminal_decrease",
        "interior_condition",
        "value_decrease",
        "stability_bound",
    ] {
        assert!(reports.find(name).is_some_and(|r| r.pass), "{name}");
    }
}

#[test]
fn corrupted_terminal_cost_fails_check_and_names_the_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited_config(dir.path(), |text| text + "\n[terminal]\ncost_scale = 0.5\n");
    let o = cli(&["check"], &config, dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("terminal_decrease"), "{}", stderr(&o));
    let reports =
        ReportSet::from_toml(&fs::read_to_string(dir.path().join("report.toml")).unwrap()).unwrap();
    assert!(!reports.find("terminal_decrease").unwrap().pass);
}

#[test]
fn horizon_shorter_than_the_cycle_is_rejected_before_solving() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited_config(dir.path(), |text| text.replace("max = 3", "max = 2"));
    let out = dir.path().join("out");
    let o = cli(&["run"], &config, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 47"), "{}", stderr(&o));
    assert!(stderr(&o).contains("cycle length 3"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn dimension_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited_config(dir.path(), |text| {
        text.replace("xp = [1.0, 0.0, 1.0, 0.0]", "xp = [1.0, 0.0]")
    });
    let o = cli(&["run"], &config, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("initial.xp has 2 entries, expected 4"),
        "{}",
        stderr(&o)
    );
    assert!(stderr(&o).contains("line 43"), "{}", stderr(&o));
}

#[test]
fn equivalence_reports_identical_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(
        &["equivalence", "--tol", "1e-8"],
        &bundled_config(),
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table: toml::Table = fs::read_to_string(dir.path().join("equivalence.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(table["steps"].as_integer(), Some(15));
    assert!(table["max_deviation"].as_float().unwrap() <= 1e-8);
    assert_eq!(table["pass"].as_bool(), Some(true));
}

#[test]
fn oracle_comparison_passes_on_a_small_batch() {
    let dir = tempfile::tempdir().unwrap();
    let config = edited_config(dir.path(), |text| {
        text.replace("instances = 100", "instances = 20")
    });
    let o = cli(&["oracle"], &config, dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let table: toml::Table = fs::read_to_string(dir.path().join("oracle.toml"))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(table["instances"].as_integer(), Some(20));
    assert_eq!(table["solver_worse"].as_integer(), Some(0));
}

#[test]
fn nonpositive_tolerance_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--tol", "0"], &bundled_config(), dir.path());
    assert_eq!(o.status.code(), Some(2));
}
