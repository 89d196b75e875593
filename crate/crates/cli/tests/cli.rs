use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use xbarsim_cli::parse_config;
use xbarsim_core::{ExecMode, Strategy};

fn xbarsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xbarsim"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_analyze_plan_sim_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&xbarsim(
        &[
            "gen",
            "--items",
            "512",
            "--queries",
            "800",
            "--mean-len",
            "6",
            "--seed",
            "4",
            "-o",
            "t.txt",
        ],
        d,
    ));
    let text = fs::read_to_string(d.join("t.txt")).unwrap();
    assert!(text.starts_with("#items 512\n"));
    assert_eq!(text.lines().count(), 801);

    ok(&xbarsim(&["analyze", "--trace", "t.txt", "-o", "an"], d));
    let stats: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("an/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["freq"].as_array().unwrap().len(), 512);
    assert!(
        fs::read_to_string(d.join("an/graph.txt"))
            .unwrap()
            .lines()
            .count()
            > 0
    );

    ok(&xbarsim(
        &[
            "plan",
            "--trace",
            "t.txt",
            "--strategy",
            "correlation",
            "--group-size",
            "16",
            "--budget",
            "0.2",
            "-o",
            "pl",
        ],
        d,
    ));
    let groups = fs::read_to_string(d.join("pl/groups.txt")).unwrap();
    let placement: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("pl/placement.json")).unwrap()).unwrap();
    // greedy groups may close early, so there can be more than 512 / 16
    let num_groups = placement["placement"].as_object().unwrap().len();
    assert!(num_groups >= 32);
    assert_eq!(groups.lines().count(), num_groups);

    let report = ok(&xbarsim(
        &[
            "sim",
            "--trace",
            "t.txt",
            "--group-size",
            "16",
            "--mode",
            "no_switch",
        ],
        d,
    ));
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["queries_processed"], 160);
    assert_eq!(report["read_mode_activations"], 0);
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for name in ["a.txt", "b.txt"] {
        ok(&xbarsim(
            &[
                "gen",
                "--items",
                "300",
                "--queries",
                "200",
                "--mean-len",
                "5",
                "-o",
                name,
            ],
            d,
        ));
    }
    assert_eq!(
        fs::read(d.join("a.txt")).unwrap(),
        fs::read(d.join("b.txt")).unwrap()
    );
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("exp.cfg"),
        "# small matrix\nstrategies = [\"naive\", \"correlation\"]\nbudgets = [0.0]\n\
         exec_modes = [\"switched\"]\ngroup_size = 8\nbatch_size = 32\n\
         generator.num_items = 256\ngenerator.num_queries = 300\ngenerator.mean_len = 4\n\
         generator.num_clusters = 32\nsingle_row_group_sizes = [8]\noutput_dir = from_file\n",
    )
    .unwrap();
    let stdout = ok(&xbarsim(
        &[
            "--config",
            "exp.cfg",
            "exp",
            "--strategies",
            "frequency",
            "-o",
            "from_flag",
        ],
        d,
    ));
    assert!(
        stdout.starts_with("1 runs, baseline frequency-dup0-switched"),
        "{stdout}"
    );
    assert!(d
        .join("from_flag/reports/frequency-dup0-switched.json")
        .exists());
    assert!(!d.join("from_file").exists());
}

#[test]
fn keyed_and_json_configs_agree() {
    let keyed = parse_config("group_size = 16\nexec_modes = [\"nmars\"]\ngenerator.zipf_s = 1.2\n")
        .unwrap();
    let json = parse_config(
        r#"{"group_size": 16, "exec_modes": ["nmars"], "generator": {"zipf_s": 1.2}}"#,
    )
    .unwrap();
    assert_eq!(keyed, json);
    assert_eq!(keyed.group_size, 16);
    assert_eq!(keyed.exec_modes, vec![ExecMode::Nmars]);
    assert_eq!(keyed.strategies, Strategy::ALL.to_vec());
    assert_eq!(keyed.generator.num_items, 10_000);
    assert!(parse_config("no_such_key = 1\n").is_err());
    assert!(parse_config("group_size\n").is_err());
}

#[test]
fn missing_trace_reports_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xbarsim(&["sim", "--trace", "nope.txt"], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("trace: not found"), "{err}");
}

#[test]
fn oversized_group_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xbarsim(&["plan", "--group-size", "65", "-o", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config: group_size 65"));
}
