use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use realism3d::commands::{CHECKPOINT_FILE, LOSS_CSV};
use realism3d::config::RunConfig;
use realism3d::strategies::{Strategy, Trainer};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_realism3d"));
    c.env_remove("REALISM3D_CLIENT").env_remove("REALISM3D_ENDPOINT").env_remove("REALISM3D_API_KEY");
    c
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture_prompts() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/prompts.txt")
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    let o = run(&["train", "--strategy", "gan"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown strategy `gan`"));
    assert_eq!(run(&["pipeline", "--mock", "--live"], dir.path()).status.code(), Some(1));
}

#[test]
fn bad_config_is_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nstrategy = \"coupled\"\nlearning_rate = 0.1\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["train", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn live_mode_without_endpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pipeline", "--live", "--prompts", fixture_prompts().to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("REALISM3D_ENDPOINT"));
}

#[test]
fn pipeline_then_eval_on_the_fixture_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = fixture_prompts();
    let args = ["pipeline", "--mock", "--prompts", prompts.to_str().unwrap()];
    let first = run(&args, dir.path());
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert!(stdout(&first).contains("completed 5 (appended 5), filtered 0, failed 0"));
    let manifest = std::fs::read_to_string(dir.path().join("dataset/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 5);

    let second = run(&args, dir.path());
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout(&second).contains("client calls 0 "), "{}", stdout(&second));
    assert_eq!(std::fs::read_to_string(dir.path().join("dataset/manifest.jsonl")).unwrap(), manifest);

    let eval = run(&["eval"], dir.path());
    assert_eq!(eval.status.code(), Some(0), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("evaluated 5"));
    let csv = std::fs::read_to_string(dir.path().join("eval/report.csv")).unwrap();
    assert!(csv.starts_with("asset_id,clip_sim,consistency,errors\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn missing_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pipeline", "--prompts", "does/not/exist.txt"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does/not/exist.txt"));
    let o = run(&["eval"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest"));
    assert_eq!(run(&["pipeline"], dir.path()).status.code(), Some(1));
}

#[test]
fn train_writes_checkpoint_and_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--strategy", "feedforward", "--steps", "30", "--seed", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run_dir = dir.path().join("train/feedforward");
    assert!(run_dir.join(CHECKPOINT_FILE).is_file());
    let csv = std::fs::read_to_string(run_dir.join(LOSS_CSV)).unwrap();
    assert!(csv.starts_with("step,adapt,match,total\n"));
    assert_eq!(csv.lines().count(), 31);
}

#[test]
fn resume_continues_the_step_counter_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let o = run(&["train", "--strategy", "feedforward", "--steps", "40"], &full);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let mut config = RunConfig::default();
    config.train.steps = 40;
    let mut trainer = Trainer::new(config.train_config(Strategy::Feedforward)).unwrap();
    for _ in 0..17 {
        trainer.step().unwrap();
    }
    let ckpt = dir.path().join("step17.json");
    trainer.checkpoint().save(&ckpt).unwrap();

    let resumed = dir.path().join("resumed");
    let o = run(&["train", "--strategy", "feedforward", "--resume", ckpt.to_str().unwrap()], &resumed);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("resumed at step 17"));
    let a = std::fs::read(full.join("train/feedforward").join(LOSS_CSV)).unwrap();
    let b = std::fs::read(resumed.join("train/feedforward").join(LOSS_CSV)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergence_exits_with_three_and_names_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nstrategy = \"coupled\"\nlr = 1e300\nsteps = 20\n").unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("diverged at step") && err.contains("snapshot at"), "{err}");
    let snaps: Vec<_> = std::fs::read_dir(dir.path().join("out/train/coupled/snapshots")).unwrap().collect();
    assert_eq!(snaps.len(), 1);
}

#[test]
fn ablate_emits_five_rows_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["ablate", "--steps", "15", "--seed", "1"];
    let a = run(&args, &dir.path().join("a"));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = run(&args, &dir.path().join("b"));
    assert_eq!(b.status.code(), Some(0));
    let csv_a = std::fs::read_to_string(dir.path().join("a/ablate/mvdiff/ablation.csv")).unwrap();
    let csv_b = std::fs::read_to_string(dir.path().join("b/ablate/mvdiff/ablation.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let variants: Vec<&str> = csv_a.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(variants, ["full", "w/o L_adapt", "w/o L_match", "w/ L2", "w/ Gram"]);
}

#[test]
fn selftest_passes() {
    let o = bin().arg("selftest").output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
}
