use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::io::Write as _;

use fracperc::density::{density_of, PiecewiseDensity};
use fracperc::geometry::Direction;
use fracperc::percolation::{generate, PercolationParams};
use fracperc::treefile;

fn fracperc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracperc")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generated_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.txt");
    let out = fracperc(&["generate", "--k", "2", "--p", "0.9", "--depth", "3", "--seed", "7", "-o", path(&file)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let tree = treefile::load(&file).unwrap();
    let direct = generate(PercolationParams::new(2, 0.9).unwrap(), 7, 3).unwrap();
    assert_eq!(tree, direct);
    assert_eq!(std::fs::read_to_string(&file).unwrap(), treefile::to_string(&direct));
    // Per-level counts and Z estimates are printed.
    let summary = stdout(&out);
    assert!(summary.starts_with("level\tcells\tz_estimate\n0\t1\t1\n"));
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn depth_zero_is_root_only() {
    let out = fracperc(&["generate", "--k", "3", "--p", "0.5", "--depth", "0", "--seed", "1"]);
    assert!(out.status.success());
    assert!(stdout(&out).ends_with("cells\n0 - -\n"));
}

#[test]
fn piping_into_density_matches_in_process() {
    let gen = fracperc(&["generate", "--k", "3", "--p", "0.7", "--depth", "4", "--seed", "11"]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_fracperc"))
        .args(["density", "--tree", "-", "--theta", "1.1", "--level", "4"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&gen.stdout).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let from_cli = PiecewiseDensity::from_json(&stdout(&out)).unwrap();
    let tree = generate(PercolationParams::new(3, 0.7).unwrap(), 11, 4).unwrap();
    let in_process = density_of(&tree, 4, Direction::oblique(1.1).unwrap()).unwrap();
    assert_eq!(from_cli, in_process);
}

#[test]
fn full_tree_diagonal_profile_is_a_triangle() {
    // Every square kept: the pi/4 density is the chord length of the unit
    // square, a triangle peaking at sqrt(2) over x = sqrt(2)/2, times p^-n.
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("full.txt");
    let mut text = String::from("fracperc-tree v1\nk 2\np 0.5\nseed 0\nmax_depth 2\ncells\n0 - -\n");
    for i in 0..2 {
        for j in 0..2 {
            text.push_str(&format!("1 {i} {j}\n"));
            for a in 0..2 {
                for b in 0..2 {
                    text.push_str(&format!("2 {i}{a} {j}{b}\n"));
                }
            }
        }
    }
    std::fs::write(&file, text).unwrap();
    let out = fracperc(&["density", "--tree", path(&file), "--theta", "pi/4", "--format", "csv", "--points", "9"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = stdout(&out);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# {"));
    assert_eq!(lines.next().unwrap(), "x,value");
    let s2 = 2f64.sqrt();
    for line in lines {
        let (x, v) = line.split_once(',').unwrap();
        let (x, v): (f64, f64) = (x.parse().unwrap(), v.parse().unwrap());
        let triangle = 2.0 * x.min(s2 - x) * 4.0;
        assert!((v - triangle).abs() < 1e-9, "x = {x}: {v} vs {triangle}");
    }
}

#[test]
fn axial_kadic_point_is_a_usage_error() {
    let out = fracperc(&["density", "--k", "3", "--p", "0.7", "--depth", "3", "--seed", "2", "--theta", "vertical", "--x", "0.3333333333333333"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("k-adic"));
    let out = fracperc(&[
        "density", "--k", "3", "--p", "0.7", "--depth", "3", "--seed", "2", "--theta", "vertical", "--x", "0.3333333333333333", "--mode", "left-closed",
    ]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn printed_mass_matches_cell_count() {
    let out = fracperc(&["density", "--k", "3", "--p", "0.7", "--depth", "5", "--seed", "4", "--theta", "horizontal"]);
    assert!(out.status.success());
    let err = stderr(&out);
    let grab = |prefix: &str| -> f64 {
        err.lines().find_map(|l| l.strip_prefix(prefix)).unwrap().trim().parse().unwrap()
    };
    let (mass, expected) = (grab("mass "), grab("p^-n k^-2n #E_n "));
    assert!((mass - expected).abs() <= 1e-12 * expected.max(1.0));
}

#[test]
fn constants_json_is_stable() {
    let a = fracperc(&["constants", "--k", "3", "--p", "0.7"]);
    let b = fracperc(&["constants", "--k", "3", "--p", "0.7"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["n0"], 10);
    assert_eq!(v["l"], 5);
    let gamma = (-0.49f64 / 0.7 / (2.0 * 2f64.sqrt())).exp();
    assert!((v["gamma"].as_f64().unwrap() - gamma).abs() < 1e-12);
    assert!((v["dim_theory"].as_f64().unwrap() - 6.3f64.ln() / 3f64.ln()).abs() < 1e-12);
}

#[test]
fn invalid_p_is_a_usage_error() {
    let out = fracperc(&["constants", "--k", "3", "--p", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fracperc(&["constants", "--k", "3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regime_warnings_are_not_fatal_for_generate() {
    let out = fracperc(&["generate", "--k", "2", "--p", "0.2", "--depth", "3", "--seed", "1"]);
    assert!(out.status.success());
    let err = stderr(&out);
    assert!(err.contains("warning: pk") && err.contains("warning: k^2 p"));
}

#[test]
fn verify_fresh_and_structural_only() {
    let out = fracperc(&["verify", "--k", "3", "--p", "0.7", "--depth", "4", "--seed", "5"]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).lines().all(|l| l.starts_with("PASS")));
    assert_eq!(stdout(&out).lines().count(), 6);
    let out = fracperc(&["verify", "--k", "3", "--p", "0.7", "--depth", "4", "--seed", "5", "--samples", "0"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn verify_reports_orphan_address() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.txt");
    let tree = generate(PercolationParams::new(2, 0.5).unwrap(), 3, 2).unwrap();
    let present = tree.level(1).unwrap();
    let missing = [(0, 0), (0, 1), (1, 0), (1, 1)]
        .into_iter()
        .find(|&(x, y)| !present.contains(&fracperc::addressing::Cell::new(x, y)))
        .expect("seed 3 loses a depth-1 square");
    let text = format!("{}2 {}1 {}1\n", treefile::to_string(&tree), missing.0, missing.1);
    std::fs::write(&file, text).unwrap();
    let out = fracperc(&["verify", "--tree", path(&file)]);
    assert_eq!(out.status.code(), Some(1));
    let report = stdout(&out);
    assert!(report.starts_with("FAIL structure"), "{report}");
    assert!(report.contains(&format!("i:{}1/j:{}1", missing.0, missing.1)), "{report}");
}

#[test]
fn verify_detects_cells_not_drawn_by_the_seed() {
    // Drop a leaf: still structurally valid, but not what the seed draws.
    let tree = generate(PercolationParams::new(3, 0.7).unwrap(), 8, 3).unwrap();
    let text = treefile::to_string(&tree);
    let trimmed: String = {
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        lines.join("\n") + "\n"
    };
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.txt");
    std::fs::write(&file, trimmed).unwrap();
    let out = fracperc(&["verify", "--tree", path(&file), "--samples", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL draws"));
}

#[test]
fn infeasible_depth_is_refused() {
    let out = fracperc(&["generate", "--k", "3", "--p", "0.9", "--depth", "12", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("infeasible"));
}

#[test]
fn experiment_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(fracperc(&["experiment", path(&missing)]).status.code(), Some(2));

    let config = dir.path().join("dim.toml");
    let out_dir = dir.path().join("out");
    std::fs::write(&config, "seed = 5\nparams = { k = 3, p = 0.7 }\n[dimension]\ndepth = 5\nrealizations = 10\ntolerance = 0.2\n").unwrap();
    let out = fracperc(&["experiment", path(&config), "-o", path(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for name in ["report.json", "dimension.csv", "timing.json"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
    let report = std::fs::read_to_string(out_dir.join("report.json")).unwrap();
    assert!(!report.contains("seconds"));

    // The same run with an impossible tolerance fails its gate.
    std::fs::write(&config, "seed = 5\nparams = { k = 3, p = 0.7 }\n[dimension]\ndepth = 5\nrealizations = 10\ntolerance = 1e-9\n").unwrap();
    assert_eq!(fracperc(&["experiment", path(&config)]).status.code(), Some(1));

    // pk <= 1 is fatal for sections that assume pk > 1.
    std::fs::write(&config, "seed = 5\nparams = { k = 2, p = 0.4 }\n[convergence]\n").unwrap();
    assert_eq!(fracperc(&["experiment", path(&config)]).status.code(), Some(2));
}

#[test]
fn dry_run_prints_budget_without_computing() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "seed = 1\nparams = { k = 3, p = 0.7 }\n[dimension]\ndepth = 8\n").unwrap();
    let out = fracperc(&["experiment", path(&config), "--dry-run"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["estimated_cells"].as_f64().unwrap() - 6.3f64.powi(8)).abs() < 1e-3);
    assert_eq!(v["feasible"], true);

    std::fs::write(&config, "seed = 1\nparams = { k = 3, p = 0.7 }\nmax_cells = 1e3\n[dimension]\ndepth = 8\n").unwrap();
    assert_eq!(fracperc(&["experiment", path(&config), "--dry-run"]).status.code(), Some(2));
}

#[test]
fn experiment_reports_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        "seed = 42\nparams = { k = 3, p = 0.7 }\n[convergence]\ndepths = [2, 5]\nrealizations = 6\nx_samples = 20\n[dimension]\ndepth = 5\nrealizations = 8\ntolerance = 0.5\n",
    )
    .unwrap();
    let one = fracperc(&["experiment", path(&config), "--workers", "1"]);
    let many = fracperc(&["experiment", path(&config), "--workers", "4"]);
    assert_eq!(one.status.code(), many.status.code());
    assert!(!one.stdout.is_empty());
    assert_eq!(one.stdout, many.stdout);
}

fn shipped_config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn shipped_quick_config_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = fracperc(&["experiment", &shipped_config("quick.toml"), "-o", path(dir.path())]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
}

#[test]
fn shipped_reference_config_is_feasible() {
    let out = fracperc(&["experiment", &shipped_config("reference.toml"), "--dry-run"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["sections"].as_array().unwrap().len(), 6);
}
