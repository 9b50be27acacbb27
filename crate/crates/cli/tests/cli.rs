use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use daniel_core::evaluate::frob_error;
use daniel_core::federation::{make_partition, Partition, TransportKind, HUB_SITE_ID};
use daniel_core::harness::{self, fit_partitioned, ExperimentConfig, PipelineOutput};
use daniel_core::optimize::OptimizerConfig;
use daniel_core::sampling::DEFAULT_BURN_IN;
use daniel_core::{baselines::MethodKind, BinaryDataset};

fn daniel() -> Command {
    Command::new(env!("CARGO_BIN_EXE_daniel"))
}

fn run(args: &[&str]) -> Output {
    daniel().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value<'a>(stdout: &'a str, key: &str) -> &'a str {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .unwrap_or_else(|| panic!("no {key} in {stdout}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cli_config(d: usize) -> OptimizerConfig {
    OptimizerConfig { d: Some(d), ..Default::default() }
}

#[test]
fn fit_then_eval_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.isd");
    let truth_path = dir.path().join("truth.dth");
    let theta_path = dir.path().join("theta.dth");
    ok(&["simulate", "--p", "10", "--d", "1", "--n", "500", "--seed", "7", "--out", s(&data_path), "--truth-out", s(&truth_path)]);
    let fit_out = ok(&["fit", "--data", s(&data_path), "--d", "1", "--x", "0", "--theta-out", s(&theta_path)]);
    assert_eq!(value(&fit_out, "m"), "1");
    let eval_out = ok(&["eval", "--theta", s(&theta_path), "--truth", s(&truth_path), "--d", "1", "--data", s(&data_path)]);
    let frob: f64 = value(&eval_out, "frob_err").parse().unwrap();
    value(&eval_out, "subspace_err");
    value(&eval_out, "pseudo_nll");

    let (truth, data) = harness::simulate(10, 1, 500, DEFAULT_BURN_IN, 7).unwrap();
    assert_eq!(BinaryDataset::load(&data_path).unwrap(), data);
    let part = make_partition(500, 0.0).unwrap();
    let out = fit_partitioned(&data, &part, MethodKind::Daniel, 1, &cli_config(1), 1e-3, &TransportKind::InProcess).unwrap();
    assert_eq!(frob, frob_error(&out.fit.theta_hat, &truth.theta_star).unwrap());
    assert_eq!(harness::load_theta(&theta_path).unwrap(), out.fit.theta_hat);

    // A second run is identical.
    let theta2 = dir.path().join("theta2.dth");
    ok(&["fit", "--data", s(&data_path), "--d", "1", "--x", "0", "--theta-out", s(&theta2)]);
    assert_eq!(std::fs::read(&theta_path).unwrap(), std::fs::read(&theta2).unwrap());
}

/// Write each site's block of a fresh dataset and return the in-process
/// result for comparison.
fn two_site_fixture(dir: &Path) -> (Vec<std::path::PathBuf>, PipelineOutput) {
    let (_, data) = harness::simulate(8, 1, 400, DEFAULT_BURN_IN, 11).unwrap();
    let part = Partition::equal(400, 2).unwrap();
    let paths: Vec<_> = part
        .site_ids()
        .map(|site| {
            let path = dir.join(format!("site{site}.isd"));
            part.local_data(&data, site).unwrap().save(&path).unwrap();
            path
        })
        .collect();
    let out = fit_partitioned(&data, &part, MethodKind::Daniel, 1, &cli_config(1), 1e-3, &TransportKind::InProcess).unwrap();
    (paths, out)
}

fn check_hub_outputs(dir: &Path, reference: &PipelineOutput) {
    let corr = harness::load_matrix(&dir.join("corr.dth")).unwrap();
    assert_eq!(corr.shape(), reference.correction.shape());
    for (a, b) in corr.iter().zip(reference.correction.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(harness::load_theta(&dir.join("theta.dth")).unwrap(), reference.fit.theta_hat);
}

#[test]
fn loopback_round_reproduces_in_process_correction() {
    let dir = tempfile::tempdir().unwrap();
    let (paths, reference) = two_site_fixture(dir.path());
    let corr = dir.path().join("corr.dth");
    let theta = dir.path().join("theta.dth");
    let mut hub = daniel()
        .args(["federate-hub", "--port", "0", "--data", s(&paths[0]), "--sites", "2", "--d", "1"])
        .args(["--correction-out", s(&corr), "--theta-out", s(&theta)])
        .env("DANIEL_ROUND_DEADLINE_SECS", "30")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stderr = BufReader::new(hub.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("{line}")).to_string();
    let site = ok(&["federate-site", "--hub", &addr, "--data", s(&paths[1]), "--site-id", "2"]);
    assert_eq!(value(&site, "site_id"), "2");
    let status = hub.wait().unwrap();
    assert!(status.success());
    check_hub_outputs(dir.path(), &reference);
    assert_eq!(HUB_SITE_ID, 1);
}

#[test]
fn exchange_directory_round_reproduces_in_process_correction() {
    let dir = tempfile::tempdir().unwrap();
    let exchange = dir.path().join("exchange");
    std::fs::create_dir(&exchange).unwrap();
    let (paths, reference) = two_site_fixture(dir.path());
    let site = daniel()
        .args(["federate-site", "--exchange-dir", s(&exchange), "--data", s(&paths[1]), "--site-id", "2"])
        .env("DANIEL_ROUND_DEADLINE_SECS", "30")
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    ok(&[
        "federate-hub", "--exchange-dir", s(&exchange), "--data", s(&paths[0]), "--sites", "2", "--d", "1",
        "--correction-out", s(&dir.path().join("corr.dth")), "--theta-out", s(&dir.path().join("theta.dth")),
    ]);
    assert!(site.wait_with_output().unwrap().status.success());
    check_hub_outputs(dir.path(), &reference);
}

#[test]
fn experiment_writes_csv_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        p_list: vec![8],
        n_list: vec![200],
        x_list: vec![0.0, 0.3],
        methods: vec![MethodKind::Daniel, MethodKind::SvTopd],
        reps: 5,
        burn_in: 20,
        ..Default::default()
    };
    let cfg_path = dir.path().join("grid.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&cfg_path).unwrap(), cfg);
    let csv = dir.path().join("out.csv");
    ok(&["experiment", "--config", s(&cfg_path), "--out", s(&csv), "--reps", "2", "--jobs", "1"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method,p,d,n,x,m,rep,frob_err,subspace_err,iterations,wall_time_ms,seed");
    assert_eq!(lines.count(), 2 * 2 * 2);
    let rows = harness::grid::read_csv(&csv).unwrap();
    let again = harness::run_grid(&ExperimentConfig { reps: 2, ..cfg }, Some(1), None).unwrap();
    for (a, b) in rows.iter().zip(&again) {
        assert_eq!((a.frob_err, a.seed, a.iterations), (b.frob_err, b.seed, b.iterations));
    }
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    // Usage errors.
    assert_eq!(run(&["fit"]).status.code(), Some(2));
    assert_eq!(run(&["fit", "--data", "missing.isd", "--d", "1"]).status.code(), Some(2));
    assert_eq!(run(&["federate-hub", "--data", "x", "--sites", "2", "--d", "1"]).status.code(), Some(2));

    // Numerical failure.
    let data = dir.path().join("d.isd");
    ok(&["simulate", "--p", "6", "--d", "1", "--n", "100", "--burn-in", "10", "--out", s(&data)]);
    let out = run(&["fit", "--data", s(&data), "--d", "1", "--eta", "1e6"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // Transport failure: nobody ever broadcasts.
    let out = daniel()
        .args(["federate-site", "--exchange-dir", s(dir.path()), "--data", s(&data), "--site-id", "2"])
        .env("DANIEL_ROUND_DEADLINE_SECS", "0.3")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("deadline"));
}
