use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rlp_core::cli::{self, RunManifest};
use rlp_core::trainer::read_metrics_csv;

fn rlp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rlp")).args(args).output().unwrap()
}

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY_TRAIN: &str = "seed = 3\ncheckpoint_epochs = [1, 2]\n\
    [dataset]\nname = \"nonlinear\"\nsize = 200\n\
    [train]\nepochs = 3\nbatch_count = 10\nmetric_batch_count = 5\n";

#[test]
fn gen_data_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("moons.csv");
    let o = rlp(&["gen-data", "--name", "moons", "--n", "40", "--seed", "1", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 41);

    let o = rlp(&["gen-data", "--name", "mnist", "--n", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_manifest_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "exp.toml", TINY_TRAIN);
    let out = dir.path().join("run");
    let o = rlp(&["train", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    for f in [cli::METRICS_FILE, cli::MANIFEST_FILE, cli::CONFIG_FILE, cli::CHECKPOINT_FILE] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(out.join(cli::checkpoint_name(1)).exists());
    assert!(out.join(cli::checkpoint_name(2)).exists());

    let manifest = RunManifest::read(&out).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seeds, vec![3]);
    assert!(manifest.finished.is_some());

    let records = read_metrics_csv(&out.join(cli::METRICS_FILE)).unwrap();
    assert_eq!(records.last().unwrap().epoch, 3);
    assert!(records.windows(2).all(|w| w[0].epoch < w[1].epoch));
    assert!(records.iter().all(|r| r.config_hash == manifest.config_hash));
}

#[test]
fn train_seed_flag_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "exp.toml", TINY_TRAIN);
    let out = dir.path().join("run");
    let o = rlp(&["train", "--config", &config, "--out", out.to_str().unwrap(), "--seed", "11", "--update-mode", "per_batch"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = RunManifest::read(&out).unwrap();
    assert_eq!(manifest.seeds, vec![11]);
    let text = fs::read_to_string(out.join(cli::CONFIG_FILE)).unwrap();
    assert!(text.contains("per_batch"));
}

#[test]
fn ablation_writes_one_csv_per_cell_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "grid.toml",
        "seed = 1\n\
         [grid]\nlosses = [\"mse\", \"rlp\", \"rlp_mixup\"]\n\
         gammas = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]\n\
         [dataset]\nname = \"nonlinear\"\nsize = 300\n\
         [train]\nepochs = 2\nbatch_count = 5\nmetric_batch_count = 3\n",
    );
    let out = dir.path().join("grid");
    let o = rlp(&["ablate", "--config", &config, "--out", out.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csvs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert_eq!(csvs.len(), 28);
    assert!(out.join(cli::MANIFEST_FILE).exists());

    let summary = cli::read_summary(&out.join(cli::SUMMARY_FILE)).unwrap();
    assert_eq!(summary.len(), 27);
    for row in &summary {
        let records = read_metrics_csv(&out.join(format!("{}.csv", row.cell))).unwrap();
        assert_eq!(&row.record(), records.last().unwrap(), "{}", row.cell);
    }
}

#[test]
fn empty_grid_writes_only_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "grid.toml",
        "[grid]\nlosses = [\"rlp\"]\n[dataset]\nname = \"linear\"\nsize = 50\n",
    );
    let out = dir.path().join("grid");
    let o = rlp(&["ablate", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(cli::read_summary(&out.join(cli::SUMMARY_FILE)).unwrap().is_empty());
    let csvs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|e| e == "csv"))
        .count();
    assert_eq!(csvs, 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();

    let o = rlp(&["train", "--config", "/nonexistent/exp.toml", "--out", out]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let bad = write(dir.path(), "bad.toml", "[dataset]\nname = \"linear\"\nunknown = 1\n");
    assert_eq!(rlp(&["train", "--config", &bad, "--out", out]).status.code(), Some(1));

    let missing = write(
        dir.path(),
        "missing.toml",
        "[dataset]\nname = \"wine_quality\"\npaths = [\"/nonexistent/wine.csv\"]\n",
    );
    let o = rlp(&["train", "--config", &missing, "--out", out]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let exhausted = write(
        dir.path(),
        "k.toml",
        "[dataset]\nname = \"linear\"\nsize = 12\ntrain_count = 6\n[train]\nbatch_size = 5\nbatch_count = 100\n",
    );
    assert_eq!(rlp(&["train", "--config", &exhausted, "--out", out]).status.code(), Some(1));

    assert_eq!(rlp(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(rlp(&["--help"]).status.code(), Some(0));
}

#[test]
fn verify_reports_all_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("checks");
    let o = rlp(&["verify", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 3);
    let text = fs::read_to_string(out.join(cli::CHECKS_FILE)).unwrap();
    assert_eq!(text.matches("[[check]]").count(), 3);
}

#[test]
fn reconstruct_dumps_graymaps() {
    let images = data_file("mnist5k-images-idx3-ubyte.gz");
    if !images.exists() {
        eprintln!("skipping: {} not present", images.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "mnist.toml",
        &format!(
            "checkpoint_epochs = [1, 2]\n\
             [dataset]\nname = \"mnist\"\npaths = [{:?}]\nlimit = 60\ntrain_count = 20\ntest_limit = 10\n\
             [train]\nepochs = 2\nbatch_count = 4\nmetric_batch_count = 2\n",
            images.to_str().unwrap()
        ),
    );
    let run = dir.path().join("run");
    let o = rlp(&["train", "--config", &config, "--out", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));

    let out = dir.path().join("images");
    let o = rlp(&[
        "reconstruct", "--config", &config, "--run-dir", run.to_str().unwrap(),
        "--epochs", "1,2", "--count", "4", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for epoch in [1, 2] {
        let (w, h, px) = cli::read_pgm(&out.join(format!("recon_epoch{epoch}.pgm"))).unwrap();
        assert_eq!((w, h), (4 * 28, 2 * 28));
        assert_eq!(px.len(), w * h);
    }

    let o = rlp(&[
        "reconstruct", "--config", &config, "--run-dir", run.to_str().unwrap(),
        "--epochs", "7", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
