use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn example_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_direct-bart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    fs::copy(example_dir().join("example.csv"), dir.join("example.csv")).unwrap();
    let path = dir.join("run.conf");
    fs::write(&path, body).unwrap();
    path
}

const SHARED: &str = "data = example.csv\noutcome = y\nrunning = x\ncutoff = 0\n\
covariates = z1, z2, group\ncategorical = group\ngroup.levels = a, b, c\nseed = 3\n";

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn fit_writes_three_consistent_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = example_dir().join("example.conf");
    let o = run(&["fit", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cate = lines(&out.join("cate.csv"));
    assert_eq!(cate[0], "id,tau_mean,lower,upper");
    assert_eq!(cate.len(), 401);
    for row in &cate[1..] {
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3]);
    }
    let scores = lines(&out.join("scores.csv"));
    assert_eq!(scores[0], "candidate,score,feasible");
    assert_eq!(scores.len(), 7);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 1"));
    assert!(manifest.contains("# units = 400"));
}

#[test]
fn manifest_alone_reproduces_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("{SHARED}[fit]\nn_iter = 300\nn_burn = 100\nbw_burn = 50\nbw_keep = 50\n"),
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&["fit", "--config", config.to_str().unwrap(), "--out", a.to_str().unwrap()])
        .status
        .success());
    let manifest = a.join("manifest.txt");
    assert!(run(&["fit", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()])
        .status
        .success());
    for name in ["cate.csv", "scores.csv", "manifest.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn missing_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let body = SHARED.replace("outcome = y", "outcome = income");
    let config = write_config(dir.path(), &format!("{body}[fit]\n"));
    let o = run(&["fit", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("income"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_scenario_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[simulate]\nscenario = scenario7\nsigma2 = 1\n");
    let o = run(&["simulate", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scenario7"));
}

#[test]
fn bandwidth_scores_six_candidates_and_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("{SHARED}[bandwidth]\ngrid_size = 6\nbw_burn = 50\nbw_keep = 50\n"),
    );
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["bandwidth", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "17"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(fs::read_dir(&out).unwrap().count(), 1);
        let rows = lines(&out.join("scores.csv"));
        assert_eq!(rows.len(), 7);
        outputs.push(rows);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn all_infeasible_candidates_name_the_smallest_window() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!("{SHARED}[bandwidth]\ngrid = 0.001, 0.002\nbw_burn = 10\nbw_keep = 10\n"),
    );
    let o = run(&["bandwidth", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("smallest feasible window is h ="));
}

#[test]
fn simulate_tables_have_the_documented_shape() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[simulate]\nscenario = scenario1\ncase = small\nsigma2 = 0.25\nreplications = 2\n\
         n_iter = 200\nn_burn = 50\nbw_burn = 30\nbw_keep = 30\ncalibration_draws = 20000\nn_targets = 50\n",
    );
    let out = dir.path().join("o");
    let o = run(&["simulate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = lines(&out.join("metrics.csv"));
    assert_eq!(metrics.len(), 5);
    assert_eq!(
        metrics[0],
        "method,scenario,setting,sigma2,sample,rmse,coverage,replications,failed"
    );
    let detail = lines(&out.join("detail.csv"));
    let reps: Vec<&str> = detail[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(reps, ["0", "0", "0", "0", "1", "1", "1", "1"]);
    let constants = lines(&out.join("constants.csv"));
    assert_eq!(constants[0], "scenario,parameter,value,calibration_seed");
    assert_eq!(constants.len(), 3);
}
