use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cnf_core::data::DatasetManifest;
use cnf_core::train::{Checkpoint, TrainHistory};

fn cnf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnf"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CNF_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_data_writes_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = cnf(&["synth-data", "--out", "d", "--n", "50", "--side", "32", "--seed", "7"], dir.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pgms = fs::read_dir(dir.path().join("d"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgms, 200);
    let m = DatasetManifest::load(&dir.path().join("d/manifest.csv")).unwrap();
    assert_eq!(m.entries.len(), 200);
    for label in 0..4 {
        assert_eq!(m.entries.iter().filter(|e| e.label == label).count(), 50);
    }
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = cnf(&["train", "--bogus"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(code(&cnf(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&cnf(&[], dir.path())), 1);
    assert_eq!(code(&cnf(&["--help"], dir.path())), 0);
    let o = cnf(&["inspect"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn data_and_format_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("bad.ini"), "[train]\nepochz = 3\n").unwrap();
    let o = cnf(&["inspect", "--config", "bad.ini"], p);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("epochz") && err.contains("batch_size"), "{err}");

    fs::create_dir(p.join("imgs")).unwrap();
    fs::write(p.join("imgs/a.pgm"), b"P2\n1 1\n255\n0\n").unwrap();
    fs::write(p.join("imgs/b.pgm"), b"P5\n1 1\n255\n\x00").unwrap();
    fs::write(p.join("imgs/manifest.csv"), "path,label\na.pgm,0\nb.pgm,1\n").unwrap();
    fs::write(p.join("run.ini"), "[data]\nmanifest = imgs/manifest.csv\n[train]\nepochs = 1\n").unwrap();
    let o = cnf(&["train", "--config", "run.ini"], p);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("a.pgm"), "{}", stderr(&o));

    fs::write(p.join("junk.ckpt"), b"not a checkpoint").unwrap();
    assert_eq!(code(&cnf(&["inspect", "--checkpoint", "junk.ckpt"], p)), 2);
    assert_eq!(code(&cnf(&["inspect", "--checkpoint", "missing.ckpt"], p)), 2);
}

#[test]
fn invalid_settings_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("run.ini"), "[data]\nsynth_n = 5\nside = 16\n[train]\nbatch_size = 0\n").unwrap();
    assert_eq!(code(&cnf(&["train", "--config", "run.ini"], p)), 1);
    fs::write(p.join("t.ini"), "[data]\nsynth_n = 5\nside = 16\n").unwrap();
    let o = cnf(&["tune", "--config", "t.ini"], p);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("no search dimensions"));
}

#[test]
fn divergent_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("run.ini"),
        "[data]\nsynth_n = 6\nside = 16\n[model]\nconv_filters = 4\ndense_units = 8\n\
         [train]\noptimizer = sgd\nlearning_rate = 1e300\nepochs = 5\nbatch_size = 4\n",
    )
    .unwrap();
    let o = cnf(&["train", "--config", "run.ini"], p);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn zero_learning_rate_keeps_loss_flat() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("run.ini"),
        "[data]\nsynth_n = 8\nside = 16\n[model]\nconv_filters = 4\ndense_units = 8\ndropout = 0\n\
         [train]\nlearning_rate = 0\nepochs = 4\nbatch_size = 64\nearly_stopping = false\n",
    )
    .unwrap();
    let o = cnf(&["train", "--config", "run.ini"], p);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let h = TrainHistory::parse_csv(&fs::read_to_string(p.join("out/history.csv")).unwrap()).unwrap();
    assert_eq!(h.len(), 4);
    let first = &h.records[0];
    for r in &h.records[1..] {
        assert!((r.train_loss - first.train_loss).abs() < 1e-12);
        assert!((r.val_loss - first.val_loss).abs() < 1e-12);
    }
}

#[test]
fn prepare_writes_sets_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("run.ini"),
        "[data]\nsynth_n = 10\nside = 16\nsplit = 0.8\naugment = true\nmultiplier = 2\n",
    )
    .unwrap();
    let o = cnf(&["prepare", "--config", "run.ini"], p);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let train = DatasetManifest::load(&p.join("out/prepared/train/manifest.csv")).unwrap();
    let val = DatasetManifest::load(&p.join("out/prepared/val/manifest.csv")).unwrap();
    assert_eq!(train.entries.len(), 32 * 3);
    assert_eq!(val.entries.len(), 8);
    let stats = fs::read_to_string(p.join("out/prepared/stats.txt")).unwrap();
    assert!(stats.starts_with("mean = ") && stats.contains("\nstd = "), "{stats}");

    // The prepared sets feed straight back into training.
    fs::write(
        p.join("again.ini"),
        "[data]\ntrain_manifest = out/prepared/train/manifest.csv\nval_manifest = out/prepared/val/manifest.csv\n\
         side = 16\n[model]\nconv_filters = 4\ndense_units = 8\n[train]\nepochs = 1\n[output]\ndir = again\n",
    )
    .unwrap();
    let o = cnf(&["train", "--config", "again.ini"], p);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck = Checkpoint::load(&p.join("again/model.ckpt")).unwrap();
    assert!(ck.spec.input_stats.is_some());
}

#[test]
fn inspect_prints_layer_table() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("ref.ini"), "[data]\nside = 128\n[model]\nlayers = reference\n").unwrap();
    let o = cnf(&["inspect", "--config", "ref.ini"], p);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    for n in ["320", "9248", "18496", "36928", "802880", "260", "(12544)", "total params 868132"] {
        assert!(text.contains(n), "missing {n} in\n{text}");
    }
}

#[test]
fn duplicate_keys_warn_but_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("d.ini"), "[data]\nside = 64\nside = 128\n[model]\nlayers = reference\n").unwrap();
    let o = cnf(&["inspect", "--config", "d.ini"], p);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("warning") && stderr(&o).contains("later value wins"));
    assert!(String::from_utf8(o.stdout).unwrap().contains("input = 1,128,128"));
}
