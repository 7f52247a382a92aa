use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctpg::policy::load_params;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctpg-bench")).args(args).output().expect("failed to launch ctpg-bench")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Header and records of a CSV written by the tool, comment line skipped.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn version_flag_reports_and_exits_zero() {
    let out = bench(&["--version"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "u.conf", "seed = 0\neigs.no_such_key = 1\n");
    let out = bench(&["eigs", "--config", unknown.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("eigs.no_such_key"));

    let bad_value = write_config(dir.path(), "v.conf", "eigs.random_systems = many\n");
    assert_eq!(code(&bench(&["eigs", "--config", bad_value.to_str().unwrap()])), 2);

    let bad_env = write_config(dir.path(), "e.conf", "env.name = pendulum\n");
    assert_eq!(code(&bench(&["pareto", "--config", bad_env.to_str().unwrap()])), 2);

    let missing = dir.path().join("absent.conf");
    assert_eq!(code(&bench(&["eigs", "--config", missing.to_str().unwrap()])), 2);
    assert_eq!(code(&bench(&["no-such-command"])), 2);
}

#[test]
fn pareto_rows_follow_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "p.conf",
        "seeds = 0, 1, 2\nbptt.step_sizes = 0.1\nctpg.tolerances = 1e-4\nnode.tolerances =\n",
    );
    let csv = dir.path().join("p.csv");
    let out = bench(&["pareto", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let (header, rows) = read_csv(&csv);
    assert_eq!(rows.len(), 2 * 3);
    let est = column(&header, "estimator");
    assert_eq!(rows.iter().filter(|r| r[est] == "bptt").count(), 3);
    assert_eq!(rows.iter().filter(|r| r[est] == "ctpg").count(), 3);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("# ctpg-bench "));
    assert!(dir.path().join("p.plot.py").exists());
    assert!(dir.path().join("oracle-cache").read_dir().unwrap().count() > 0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.conf",
        "env.name = diffdrive\npolicy.hidden = 8\nseeds = 0, 1\ntrain.iterations = 5\ntrain.batch_size = 4\n",
    );
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let csv = dir.path().join(format!("{run}.csv"));
        let out = bench(&["train", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stdout(&out));
        let params = fs::read(dir.path().join(format!("{run}.seed1.params"))).unwrap();
        outputs.push((fs::read(&csv).unwrap(), params));
    }
    assert_eq!(outputs[0], outputs[1]);

    let pareto: Vec<Vec<u8>> = ["x", "y"]
        .iter()
        .map(|run| {
            let csv = dir.path().join(format!("{run}.pareto.csv"));
            assert_eq!(code(&bench(&["pareto", "--out", csv.to_str().unwrap()])), 1);
            fs::read(&csv).unwrap()
        })
        .collect();
    assert_eq!(pareto[0], pareto[1]);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let cfg = write_config(dir.path(), "s.conf", "policy.hidden = 4\ntrain.iterations = 2\ntrain.batch_size = 2\n");
    let out = bench(&["train", "--config", cfg.to_str().unwrap(), "--seed", "7", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(&csv);
    let seed = column(&header, "seed");
    assert!(rows.iter().all(|r| r[seed] == "7"));
    let (_, meta) = load_params(&dir.path().join("s.seed7.params")).unwrap();
    assert_eq!(meta.seed, 7);
}

#[test]
fn diffdrive_ctpg_training_halves_the_loss() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dd.csv");
    let out = bench(&["train", "--seed", "0", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let (header, rows) = read_csv(&csv);
    assert_eq!(rows.len(), 200);
    let loss = column(&header, "mean_loss");
    let first: f64 = rows[0][loss].parse().unwrap();
    let last: f64 = rows[rows.len() - 1][loss].parse().unwrap();
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
    let (theta, meta) = load_params(&dir.path().join("dd.seed0.params")).unwrap();
    assert_eq!(meta.arch.layer_sizes, vec![7, 64, 64, 2]);
    assert_eq!(theta.len(), meta.arch.num_params());
}

#[test]
fn linear_lqr_training_recovers_unit_gain() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lin.csv");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/train_lqr_linear.conf");
    let out = bench(&["train", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let (theta, meta) = load_params(&dir.path().join("lin.seed0.params")).unwrap();
    assert_eq!(meta.arch.layer_sizes, vec![2, 2]);
    // u = W x + b with W row-major. The start is fixed at [1, 1] and A = 0,
    // so only W·[1, 1] is identified; unit gain means W·[1, 1] = -[1, 1].
    let along = [theta[0] + theta[1], theta[2] + theta[3]];
    for (i, g) in along.iter().enumerate() {
        assert!((g + 1.0).abs() < 0.05, "row {i} of W sums to {g}");
    }
    assert!(theta[4].abs() < 0.05 && theta[5].abs() < 0.05, "bias {:?}", &theta[4..]);
}

#[test]
fn trajectory_dump_covers_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("g.csv");
    let cfg = write_config(
        dir.path(),
        "g.conf",
        "policy.hidden = 4\nseeds = 0\ntrain.iterations = 1\ntrain.batch_size = 1\noutput.trajectory_grid = 3\noutput.trajectory_dt = 0.5\noutput.params = false\n",
    );
    let out = bench(&["train", "--config", cfg.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(!dir.path().join("g.seed0.params").exists());
    let (header, rows) = read_csv(&dir.path().join("g.traj.csv"));
    assert_eq!(header[..3], ["seed", "start", "t"]);
    // 9 starts, horizon 5 at dt 0.5 gives 11 samples each.
    assert_eq!(rows.len(), 9 * 11);
}

#[test]
fn eigs_default_passes_and_lqr_spectrum_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("e.csv");
    let out = bench(&["eigs", "--out", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let (header, rows) = read_csv(&csv);
    let (probe, re, im) = (column(&header, "probe"), column(&header, "re"), column(&header, "im"));
    let lqr: Vec<(f64, f64)> =
        rows.iter().filter(|r| r[probe] == "lqr-u=-x").map(|r| (r[re].parse().unwrap(), r[im].parse().unwrap())).collect();
    let expected = [-1.0, -1.0, 0.0, 1.0, 1.0];
    assert_eq!(lqr.len(), expected.len());
    for ((r, i), e) in lqr.iter().zip(expected) {
        assert!((r - e).abs() < 1e-6 && i.abs() < 1e-9, "{lqr:?}");
    }
    let pass = column(&header, "pass");
    assert!(rows.iter().all(|r| r[pass] == "true"));
}

#[test]
fn gradcheck_gate() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["gradcheck"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(stdout(&out).lines().filter(|l| l.starts_with("[PASS]")).count(), 4);

    let broken = write_config(dir.path(), "b.conf", "gradcheck.omit_feedback = true\n");
    let out = bench(&["gradcheck", "--config", broken.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.lines().any(|l| l.starts_with("[FAIL] ctpg-vs-oracle")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("[PASS] bptt-exact")), "{text}");

    let vacuous = write_config(dir.path(), "v.conf", "gradcheck.omit_feedback = true\ngradcheck.tolerance = 1e9\n");
    assert_eq!(code(&bench(&["gradcheck", "--config", vacuous.to_str().unwrap()])), 0);
}
