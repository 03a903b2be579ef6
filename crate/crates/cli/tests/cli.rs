//! End-to-end runs of the `branchlab` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("branchlab-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_branchlab"))
        .args(args)
        .env("BRANCHLAB_ROOT", dir)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn artifact(dir: &Path, command: &str) -> Value {
    let text = fs::read_to_string(dir.join("out").join(format!("{command}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

const FROZEN: &str = r#"
seed = 11
replications = 10

[scenario]
kind = "custom-tabular"
bounds = { c_b = 1.0, c_sigma = 1.0, c_gamma = 0.0, c_phi1 = 1.0, c_phi2 = 0.0, c_terminal = 1.0, c_coercive = 1.0 }

[initial]
atoms = [{ position = [0.25, 1.0] }, { position = [-3.0, 0.0], multiplicity = 2 }]

[sim]
dt_max = 0.01
horizon = 1.0
output_grid = [0.5]

[output]
dir = "out"
"#;

const LQ: &str = r#"
seed = 5
replications = 2000
policy = "lq-optimal"

[scenario]
kind = "lq"
b = 0.2
b_bar = 1.0
sigma = 0.5
gamma = 0.2
offspring = [0.5, 0.0, 0.5]
c = 1.0
c_bar = 1.0
h = 1.0

[initial]
atoms = [{ position = [1.0] }, { position = [-0.5] }]

[sim]
dt_max = 0.01
horizon = 1.0

[compare]
policy_a = "lq-optimal"
policy_b = "zero"

[verify]
value_field = "zero"
mode = "martingale"
checkpoints = [0.0, 0.5, 1.0]

[output]
dir = "out"
"#;

#[test]
fn frozen_simulation_keeps_the_initial_state() {
    let dir = scratch("frozen");
    let cfg = write_config(
        &dir,
        &FROZEN.replace(
            "kind = \"custom-tabular\"",
            "kind = \"custom-tabular\"\nstate_dim = 2\nnoise_dim = 2",
        ),
    );
    let out = run(&dir, &["simulate", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let a = artifact(&dir, "simulate");
    assert_eq!(a["command"], "simulate");
    assert_eq!(a["config"]["seed"], 11);
    let r = &a["result"];
    assert!(r["events"].as_array().unwrap().is_empty());
    let mut terminal: Vec<Vec<f64>> = r["terminal"]["particles"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| serde_json::from_value(p["position"].clone()).unwrap())
        .collect();
    terminal.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(terminal, vec![vec![-3.0, 0.0], vec![-3.0, 0.0], vec![0.25, 1.0]]);
    assert_eq!(
        r["initial"],
        serde_json::json!([
            { "position": [0.25, 1.0], "multiplicity": 1 },
            { "position": [-3.0, 0.0], "multiplicity": 2 }
        ])
    );
    let csv = fs::read_to_string(dir.join("out/simulate.csv")).unwrap();
    assert!(csv.starts_with("time,label,x1,x2\n"));
}

#[test]
fn riccati_solution_of_the_tanh_case() {
    let dir = scratch("tanh");
    let body = LQ
        .replace("b = 0.2", "b = 0.0")
        .replace("gamma = 0.2", "gamma = 0.0")
        .replace("h = 1.0", "h = 0.0");
    let cfg = write_config(&dir, &body);
    let out = run(&dir, &["lq-solve", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let q0 = artifact(&dir, "lq-solve")["result"]["q0"][0][0].as_f64().unwrap();
    assert!((q0 - 1f64.tanh()).abs() < 1e-6, "Q(0) = {q0}");
    let csv = fs::read_to_string(dir.join("out/lq-solve.csv")).unwrap();
    let first: Vec<f64> = csv
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 1f64.tanh()).abs() < 1e-6);
}

#[test]
fn optimal_feedback_beats_zero_control_in_paired_comparison() {
    let dir = scratch("compare");
    let cfg = write_config(&dir, LQ);
    let out = run(&dir, &["compare", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = &artifact(&dir, "compare")["result"];
    let diff = r["comparison"]["difference"]["mean"].as_f64().unwrap();
    let se = r["comparison"]["difference"]["standard_error"].as_f64().unwrap();
    assert!(diff < 0.0 && diff.abs() > 3.0 * se, "difference {diff} ± {se}");
    assert_eq!(r["comparison"]["common_random_numbers"], true);
    assert_eq!(r["a_better"], true);
}

#[test]
fn failed_verdict_exits_with_four() {
    // the zero field plus running cost grows, so martingale mode must fail
    let dir = scratch("verdict");
    let cfg = write_config(&dir, LQ);
    let out = run(&dir, &["verify", &cfg]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(artifact(&dir, "verify")["verdict"], "fail");
}

#[test]
fn schema_violations_name_the_field() {
    let dir = scratch("schema");
    let cfg = write_config(&dir, &LQ.replace("dt_max = 0.01", "dt_max = 0.01\nstep = 3"));
    let out = run(&dir, &["estimate-cost", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sim") && err.contains("step"), "{err}");

    let cfg = write_config(&dir, &LQ.replace("sigma = 0.5", "sigma = \"wide\""));
    let err = String::from_utf8_lossy(&run(&dir, &["lq-solve", &cfg]).stderr).to_string();
    assert!(err.contains("scenario.sigma"), "{err}");

    let cfg = write_config(&dir, &LQ.replace("seed = 5\n", ""));
    let out = run(&dir, &["lq-solve", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let cfg = write_config(
        &dir,
        &LQ.replace("offspring = [0.5, 0.0, 0.5]", "offspring = [0.5, 0.0, 0.6]"),
    );
    assert_eq!(run(&dir, &["lq-solve", &cfg]).status.code(), Some(2));

    let cfg = write_config(&dir, &LQ.replace("kind = \"lq\"", "kind = \"quadratic\""));
    assert_eq!(run(&dir, &["lq-solve", &cfg]).status.code(), Some(2));
}

#[test]
fn unknown_subcommand_and_mismatched_solver() {
    let dir = scratch("unknown");
    let cfg = write_config(&dir, LQ);
    assert_eq!(run(&dir, &["solve-everything", &cfg]).status.code(), Some(2));
    assert_eq!(run(&dir, &["kinetic-solve", &cfg]).status.code(), Some(2));
}

#[test]
fn population_explosion_is_a_numerical_failure() {
    let dir = scratch("explosion");
    let body = FROZEN
        .replace("kind = \"custom-tabular\"", "kind = \"custom-tabular\"\nstate_dim = 2\nnoise_dim = 2\nbranch_rate = 5.0\noffspring = [0.0, 0.0, 0.0, 1.0]")
        .replace("c_gamma = 0.0", "c_gamma = 5.0")
        .replace("horizon = 1.0", "horizon = 1.0\nmax_population = 20");
    let cfg = write_config(&dir, &body);
    let out = run(&dir, &["simulate", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(run(&dir, &["estimate-cost", &cfg]).status.code(), Some(3));
}

#[test]
fn scenario_file_and_workspace_root() {
    let dir = scratch("layout");
    fs::write(
        dir.join("scenario.toml"),
        "kind = \"kinetic\"\nbranch_rate = 0.5\noffspring = [0.5, 0.0, 0.5]\nterminal = { kind = \"quadratic\", scale = 1.0 }\n",
    )
    .unwrap();
    let body = r#"
seed = 2
scenario_file = "scenario.toml"
[initial]
atoms = [{ position = [0.0] }]
[sim]
dt_max = 0.01
horizon = 0.5
[kinetic_grid]
nodes = 121
time_steps = 2000
stored_slices = 20
[output]
dir = "nested/out"
"#;
    let cfg = write_config(&dir, body);
    let out = run(&dir, &["kinetic-solve", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("nested/out/kinetic-solve.json")).unwrap();
    let a: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(a["config"]["scenario"]["kind"], "kinetic");
    // b = 0, φ = 0: h(0, 0) = −ln E exp(−τZ²) = ½ ln(1 + 2τ)
    let v = a["result"]["value_at_origin"].as_f64().unwrap();
    assert!((v - 0.5 * 2f64.ln()).abs() < 2e-3, "{v}");

    // without the environment override, outputs land next to the config file
    let other = scratch("layout-relative");
    let cfg = other.join("experiment.toml");
    fs::copy(dir.join("experiment.toml"), &cfg).unwrap();
    fs::copy(dir.join("scenario.toml"), other.join("scenario.toml")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_branchlab"))
        .args(["kinetic-solve", cfg.to_str().unwrap()])
        .env_remove("BRANCHLAB_ROOT")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(other.join("nested/out/kinetic-solve.csv").exists());
}
