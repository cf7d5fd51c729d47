use std::process::{Command, Output};

use fidest::cli::CSV_HEADER;

fn fidest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fidest"))
        .args(args)
        .env_remove("FIDEST_QUBIT_CAP")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn sweep_rows_and_success_per_epsilon() {
    let out = fidest(&[
        "sweep", "--estimator", "optimal", "--k", "1", "--epsilons", "0.2,0.1,0.05", "--trials", "50", "--seed", "2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER);
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 150);
    for eps in ["0.2", "0.1", "0.05"] {
        let group: Vec<_> = rows.iter().filter(|r| r[2] == eps).collect();
        assert_eq!(group.len(), 50);
        let ok = group.iter().filter(|r| r[7] == "true").count();
        assert!(ok as f64 / 50.0 >= 0.6, "eps {eps}: {ok}/50");
    }
    assert!(stderr(&out).contains("slope"));
}

#[test]
fn sweep_json_embeds_scaling() {
    let out = fidest(&[
        "sweep", "--estimator", "swap-baseline", "--epsilons", "0.2,0.1,0.05", "--trials", "3", "--format", "json",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 9);
    let slope = v["scaling"][0]["slope"].as_f64().unwrap();
    assert!((slope + 2.0).abs() <= 0.3, "{slope}");
}

#[test]
fn single_prints_estimation_json() {
    let out = fidest(&["single", "--estimator", "pure-pure", "--k", "2", "--epsilons", "0.05", "--seed", "9"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["delta"], 0.05);
    assert!(v["queries"]["V"]["controlled_inverse"].as_u64().unwrap() > 0);
}

#[test]
fn verify_identities_passes() {
    let out = fidest(&["verify-identities", "--k", "1", "--trials", "20", "--seed", "1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(!stderr(&out).contains("FAIL"));
    for line in stdout(&out).lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let residual: f64 = fields[2].parse().unwrap();
        assert!(residual <= 1e-10, "{line}");
    }
}

#[test]
fn invalid_config_exits_nonzero_with_message() {
    let out = fidest(&["sweep", "--epsilons", "0.1,1.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("epsilon"), "{}", stderr(&out));

    let out = fidest(&["sweep", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--trials"));

    let out = fidest(&["hard-instance", "--rank", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = fidest(&["sweep", "--estimator", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn qubit_cap_from_flag_and_env() {
    let out = fidest(&["single", "--k", "2", "--qubit-cap", "6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cap"), "{}", stderr(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_fidest"))
        .args(["single", "--k", "2"])
        .env("FIDEST_QUBIT_CAP", "6")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_drives_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let dest = dir.path().join("out.csv");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"command": "sweep", "k": 1, "estimator": "tr-rho-sigma2", "epsilons": [0.1], "trials": 4, "seed": 8, "output": {:?}}}"#,
            dest.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = fidest(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&dest).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("tr-rho-sigma2"));

    let out = fidest(&["single", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "command mismatch must fail");
}

#[test]
fn hard_instance_reports_both_members() {
    let out = fidest(&["hard-instance", "--k", "2", "--rank", "4", "--p", "0.4", "--epsilons", "0.1", "--format", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let row = &v[0];
    assert!((row["fidelity_plus"].as_f64().unwrap() - 0.5f64.sqrt()).abs() <= 1e-12);
    assert!((row["fidelity_minus"].as_f64().unwrap() - 0.3f64.sqrt()).abs() <= 1e-12);
    assert!(row["hellinger_residual"].as_f64().unwrap() <= 1e-12);
}
