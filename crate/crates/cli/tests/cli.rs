use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use demos_core::Checkpoint;
use tempfile::TempDir;

const TINY: &str = r#"
robot = "humanoid"
mode = "demos"
seed = 3
checkpoint_every = 2

[train]
num_envs = 8
steps_per_env = 8
minibatches = 2
epochs = 2
iterations = 3
critic_hidden = [8]

[policy]
hidden = [8]

[analysis]
batch_envs = 8
batch_steps = 4
warmup_steps = 5
eval_episodes = 4
"#;

fn demos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_demos")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> (String, String) {
    let out = demos(args);
    let (stdout, stderr) =
        (String::from_utf8_lossy(&out.stdout).into_owned(), String::from_utf8_lossy(&out.stderr).into_owned());
    assert!(out.status.success(), "demos {args:?} failed:\n{stderr}");
    (stdout, stderr)
}

fn fail(args: &[&str]) -> String {
    let out = demos(args);
    assert!(!out.status.success(), "demos {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn train_into(dir: &Path, extra: &[&str]) -> PathBuf {
    let config = dir.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let run = dir.join("run");
    let mut args = vec!["train", "--config", s(&config), "--out", s(&run)];
    args.extend_from_slice(extra);
    ok(&args);
    run
}

/// One shared demos run; tests that only read it reuse the directory.
fn shared_run() -> &'static Path {
    static RUN: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, run) = RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let run = train_into(dir.path(), &[]);
        (dir, run)
    });
    run
}

fn csv_field(line: &str, header: &str, name: &str) -> String {
    let k = header.split(',').position(|h| h == name).unwrap();
    line.split(',').nth(k).unwrap().to_string()
}

#[test]
fn train_writes_run_directory() {
    let run = shared_run();
    for f in [
        "config.toml",
        "metrics.csv",
        "timing.csv",
        "connections.csv",
        "final.ckpt",
        "unmasked.ckpt",
        "branch_connections.csv",
        "motor_connections.csv",
        "mask_report.txt",
        "eval.csv",
        "checkpoints/iter_00002.ckpt",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    assert!(!run.join("ERROR").exists());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let eval = fs::read_to_string(run.join("eval.csv")).unwrap();
    let labels: Vec<_> = eval.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["pre_mask", "final"]);
}

#[test]
fn run_directory_is_rerunnable_from_config_copy() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let again = dir.path().join("again");
    ok(&["train", "--config", s(&run.join("config.toml")), "--out", s(&again)]);
    assert_eq!(fs::read(run.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(run.join("final.ckpt")).unwrap(), fs::read(again.join("final.ckpt")).unwrap());
}

#[test]
fn centralized_mode_has_no_connection_csv() {
    let dir = TempDir::new().unwrap();
    let run = train_into(dir.path(), &["--mode", "centralized", "--iterations", "1"]);
    assert!(run.join("metrics.csv").exists());
    assert!(!run.join("connections.csv").exists());
    assert!(!run.join("unmasked.ckpt").exists());
}

#[test]
fn zero_iterations_checkpoint_the_initial_policy() {
    let dir = TempDir::new().unwrap();
    let run = train_into(dir.path(), &["--iterations", "0"]);
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() <= 1);
    let ck = Checkpoint::load(run.join("final.ckpt")).unwrap();
    assert_eq!(ck.iteration, 0);
}

#[test]
fn bad_config_fails_with_message() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[train]\nnum_envs = \"many\"\n").unwrap();
    let err = fail(&["train", "--config", s(&config), "--out", s(&dir.path().join("run"))]);
    assert!(err.contains("bad config"), "{err}");
    let err = fail(&["train", "--config", s(&dir.path().join("missing.toml")), "--out", s(&dir.path().join("run"))]);
    assert!(err.contains("cannot read"), "{err}");
}

#[test]
fn eval_reproduces_recorded_evaluation() {
    let run = shared_run();
    let (stdout, stderr) = ok(&["eval", s(&run.join("final.ckpt"))]);
    assert!(stderr.contains("(reproduced)"), "{stderr}");
    let mut lines = stdout.lines();
    let header = lines.next().unwrap();
    let row = lines.next().unwrap();
    let ck = Checkpoint::load(run.join("final.ckpt")).unwrap();
    let recorded = ck.eval.unwrap().mean_return;
    assert_eq!(csv_field(row, header, "mean_return").parse::<f64>().unwrap(), recorded);
}

#[test]
fn sweep_emits_one_row_per_level() {
    let run = shared_run();
    let (stdout, _) =
        ok(&["eval", s(&run.join("final.ckpt")), "--sweep", "noise:l_elbow:0.0,0.1,0.5", "--episodes", "2"]);
    let mut lines = stdout.lines();
    let header = lines.next().unwrap();
    let levels: Vec<String> = lines.map(|l| csv_field(l, header, "level")).collect();
    assert_eq!(levels, ["0.0", "0.1", "0.5"]);
    let err = fail(&["eval", s(&run.join("final.ckpt")), "--malfunction", "stuck:no_such_motor:0.3"]);
    assert!(err.contains("no_such_motor"), "{err}");
}

#[test]
fn decouple_with_zero_eta_changes_nothing() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("same.ckpt");
    let (stdout, _) =
        ok(&["decouple", s(&run.join("unmasked.ckpt")), "--eta", "0", "--batch-size", "64", "--out", s(&out)]);
    assert!(stdout.contains("mask unchanged"), "{stdout}");
    let before = Checkpoint::load(run.join("unmasked.ckpt")).unwrap();
    let after = Checkpoint::load(&out).unwrap();
    assert_eq!(before.policy.mask(), after.policy.mask());
}

#[test]
fn decouple_never_clears_own_motors() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cut.ckpt");
    ok(&["decouple", s(&run.join("unmasked.ckpt")), "--eta", "1e9", "--batch-size", "64", "--out", s(&out)]);
    let ck = Checkpoint::load(&out).unwrap();
    let set = ck.policy.branches();
    for b in &set.branches {
        for m in 0..set.motor_count() {
            assert_eq!(ck.policy.mask().get(b.id, m), b.owns(m), "B{} motor {m}", b.id + 1);
        }
    }
    // Everything foreign is already cut, so a second pass has nothing to do.
    let again = dir.path().join("again.ckpt");
    let (stdout, _) = ok(&["decouple", s(&out), "--eta", "1e9", "--batch-size", "64", "--out", s(&again)]);
    assert!(stdout.contains("mask unchanged"), "{stdout}");
}

#[test]
fn analyze_reports_masked_edges_as_zero() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let cut = dir.path().join("cut.ckpt");
    ok(&["decouple", s(&run.join("unmasked.ckpt")), "--eta", "1e9", "--batch-size", "64", "--out", s(&cut)]);
    ok(&["analyze", s(&cut), "--batch-size", "64", "--out", s(dir.path())]);
    let text = fs::read_to_string(dir.path().join("branch_connections.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    for line in lines {
        let (i, j) = (csv_field(line, header, "from"), csv_field(line, header, "to"));
        if i != j {
            assert_eq!(csv_field(line, header, "c").parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
}

#[test]
fn analyze_zero_weight_checkpoint_flags_every_edge() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let mut ck = Checkpoint::load(run.join("final.ckpt")).unwrap();
    let zeros = vec![0.0; ck.policy.param_count()];
    ck.policy.read_params(&zeros).unwrap();
    let path = dir.path().join("zero.ckpt");
    ck.save(&path).unwrap();
    let (stdout, _) = ok(&["analyze", s(&path), "--batch-size", "32", "--out", s(dir.path())]);
    let n = ck.policy.branches().len();
    let previews = stdout.lines().filter(|l| l.trim_start().starts_with('B') && l.contains('→')).count();
    assert_eq!(previews, n * (n - 1), "{stdout}");
    let text = fs::read_to_string(dir.path().join("branch_connections.csv")).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(lines.all(|l| csv_field(l, header, "c").parse::<f64>().unwrap() == 0.0));
}

#[test]
fn analyze_rejects_other_robot() {
    let run = shared_run();
    let err = fail(&["analyze", s(&run.join("final.ckpt")), "--robot", "quadruped", "--batch-size", "16"]);
    assert!(err.contains("does not match checkpoint"), "{err}");
}

#[test]
fn identity_transfer_matches_eval() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("same.ckpt");
    let (transfer, _) = ok(&["transfer", s(&run.join("final.ckpt")), "--out", s(&out)]);
    let (eval, _) = ok(&["eval", s(&run.join("final.ckpt"))]);
    let field = |text: &str| {
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        csv_field(lines.next().unwrap(), header, "mean_return")
    };
    assert_eq!(field(&transfer), field(&eval));
    assert!(out.exists());
}

#[test]
fn splitting_coupled_legs_names_the_edge() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    // Keep only the leg pair coupled, as after pruning a trained policy.
    let mut ck = Checkpoint::load(run.join("unmasked.ckpt")).unwrap();
    let set = ck.policy.branches().clone();
    let mut mask = ck.policy.mask().clone();
    for i in 0..set.len() {
        for j in 0..set.len() {
            if i != j && !(i >= 2 && j >= 2) {
                for &m in &set.branches[j].motors {
                    mask.clear(&set, i, m).unwrap();
                }
            }
        }
    }
    ck.policy.set_mask(mask).unwrap();
    let legs = dir.path().join("legs.ckpt");
    ck.save(&legs).unwrap();
    let err = fail(&[
        "transfer",
        s(&legs),
        "--fragment",
        "B1",
        "--fragment",
        "B2",
        "--fragment",
        "B3",
        "--fragment",
        "B4",
        "--out",
        s(&dir.path().join("x.ckpt")),
    ]);
    assert!(err.contains("B3→B4") || err.contains("B4→B3"), "{err}");
    ok(&[
        "transfer",
        s(&legs),
        "--fragment",
        "B1",
        "--fragment",
        "B2",
        "--fragment",
        "B3,B4",
        "--episodes",
        "2",
        "--out",
        s(&dir.path().join("y.ckpt")),
    ]);
}

#[test]
fn scripted_arms_replace_pruned_branches() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let cut = dir.path().join("cut.ckpt");
    ok(&["decouple", s(&run.join("unmasked.ckpt")), "--eta", "1e9", "--batch-size", "64", "--out", s(&cut)]);
    let out = dir.path().join("legs.ckpt");
    let (stdout, _) = ok(&[
        "transfer",
        s(&cut),
        "--fragment",
        "B3,B4",
        "--replace",
        "B1=hold",
        "--replace",
        "B2=hold:0.2",
        "--task",
        "hold",
        "--episodes",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(stdout.lines().nth(1).unwrap().starts_with("transfer,"));
    let ck = Checkpoint::load(&out).unwrap();
    assert!(ck.policy.replacements()[0].is_some() && ck.policy.replacements()[2].is_none());
}

#[test]
fn plot_renders_svgs_and_skips_missing_data() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    ok(&[
        "eval",
        s(&run.join("final.ckpt")),
        "--sweep",
        "stuck:l_elbow:0,0.3",
        "--episodes",
        "2",
        "--out",
        s(&dir.path().join("sweep.csv")),
    ]);
    let plots = dir.path().join("plots");
    ok(&["plot", s(run), s(dir.path()), "--out", s(&plots)]);
    for f in ["reward.svg", "connections_0.svg", "sweep.svg"] {
        let svg = fs::read_to_string(plots.join(f)).unwrap();
        assert!(svg.contains("<svg"), "{f}");
    }

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("metrics.csv"), "").unwrap();
    let (stdout, stderr) = ok(&["plot", s(&empty)]);
    assert!(stdout.trim().is_empty());
    assert!(stderr.contains("warning"), "{stderr}");
    assert!(!empty.join("reward.svg").exists());
}

#[test]
fn sweep_without_levels_uses_default_grid() {
    let run = shared_run();
    let (stdout, _) = ok(&["eval", s(&run.join("final.ckpt")), "--sweep", "stuck:l_elbow", "--episodes", "2"]);
    assert_eq!(stdout.lines().count(), 1 + 5);
}

#[test]
fn finetune_keeps_the_mask() {
    let run = shared_run();
    let dir = TempDir::new().unwrap();
    let cut = dir.path().join("cut.ckpt");
    ok(&["decouple", s(&run.join("unmasked.ckpt")), "--eta", "1e9", "--batch-size", "64", "--out", s(&cut)]);
    let out = dir.path().join("tuned");
    ok(&["finetune", s(&cut), "--iterations", "2", "--out", s(&out)]);
    let before = Checkpoint::load(&cut).unwrap();
    let after = Checkpoint::load(out.join("final.ckpt")).unwrap();
    assert_eq!(before.policy.mask(), after.policy.mask());
    assert_eq!(after.iteration, before.iteration + 2);
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 3);
    let (_, stderr) = ok(&["eval", s(&out.join("final.ckpt"))]);
    assert!(stderr.contains("(reproduced)"), "{stderr}");
}
