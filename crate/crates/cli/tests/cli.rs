use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn molsde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molsde"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn molsde")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const TINY: &[&str] = &["--set", "model.hidden=8", "--set", "model.layers=1", "--set", "model.attn_layers=1"];

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(TINY);
    v
}

fn corpus(dir: &Path, n: &str) {
    let out = molsde(dir, &["gen-synthetic", "--n", n, "--seed", "7", "--out", "c.txt"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn pretrain(dir: &Path, seed: &str, ckpt: &str, csv: &str) {
    let args = with_tiny(&[
        "pretrain", "--corpus", "c.txt", "--checkpoint", ckpt, "--loss-csv", csv, "--seed", seed, "--set", "train.max_steps=6",
        "--set", "train.batch_size=4",
    ]);
    let out = molsde(dir, &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn full_pipeline_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "6");
    pretrain(dir, "1", "m.ckpt", "loss.csv");
    let csv = fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("epoch,loss_total,loss_contrastive,loss_2d3d,loss_3d2d"));
    assert!(csv.lines().count() > 1);

    let out = molsde(
        dir,
        &["sample-conf", "--checkpoint", "m.ckpt", "--corpus", "c.txt", "--out", "g.txt", "--seed", "2", "--per-molecule", "2", "--set", "sde.steps=5"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let refs = molsde::moldata::parse_corpus(&fs::read_to_string(dir.join("c.txt")).unwrap()).unwrap();
    let gens = molsde::moldata::parse_corpus(&fs::read_to_string(dir.join("g.txt")).unwrap()).unwrap();
    assert_eq!(gens.len(), 2 * refs.len());
    assert_eq!(gens[1].topo, refs[0].topo);

    let out = molsde(dir, &["eval-covmat", "--reference", "c.txt", "--generated", "g.txt", "--aggregate", "median", "--out", "r.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("coverage,matching,threshold,molecules"));
    assert_eq!(fs::read_to_string(dir.join("r.csv")).unwrap().lines().count(), refs.len() + 1);

    let out = molsde(dir, &["sample-topo", "--checkpoint", "m.ckpt", "--corpus", "c.txt", "--out", "t.txt", "--seed", "2", "--set", "sde.steps=5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("bond_auc,atom_accuracy"));
    let topo = molsde::moldata::parse_corpus(&fs::read_to_string(dir.join("t.txt")).unwrap()).unwrap();
    assert_eq!(topo.len(), refs.len());
}

#[test]
fn training_is_reproducible_from_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "5");
    pretrain(dir, "9", "a.ckpt", "a.csv");
    pretrain(dir, "9", "b.ckpt", "b.csv");
    pretrain(dir, "10", "c.ckpt", "c.csv");
    let a = fs::read(dir.join("a.ckpt")).unwrap();
    assert_eq!(a, fs::read(dir.join("b.ckpt")).unwrap());
    assert_ne!(a, fs::read(dir.join("c.ckpt")).unwrap());
    assert_eq!(&a[..5], b"MSDE1");
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "4");
    fs::write(
        dir.join("run.cfg"),
        "# tiny run\nmodel.hidden = 8\nmodel.layers = 1\nmodel.attn_layers = 1\ntrain.max_steps = 100\npaths.corpus = c.txt\npaths.checkpoint = m.ckpt\n",
    )
    .unwrap();
    let out = molsde(dir, &["pretrain", "--config", "run.cfg", "--seed", "1", "--set", "train.max_steps=2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2 steps"));
    assert!(dir.join("m.ckpt").is_file());

    fs::write(dir.join("bad.cfg"), "train.learning_rate = 1\n").unwrap();
    let out = molsde(dir, &["pretrain", "--config", "bad.cfg", "--seed", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.learning_rate"));
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    corpus(dir, "3");
    for args in [
        &["pretrain", "--corpus", "c.txt", "--checkpoint", "m.ckpt"][..],
        &["pretrain", "--corpus", "missing.txt", "--checkpoint", "m.ckpt", "--seed", "1"],
        &["pretrain", "--corpus", "c.txt", "--checkpoint", "m.ckpt", "--seed", "1", "--set", "train.lr"],
        &["pretrain", "--corpus", "c.txt", "--checkpoint", "m.ckpt", "--seed", "1", "--set", "train.lr=-1"],
        &["sample-conf", "--corpus", "c.txt", "--out", "g.txt", "--seed", "1"],
        &["sample-topo", "--checkpoint", "none.ckpt", "--corpus", "c.txt", "--out", "t.txt", "--seed", "1"],
        &["eval-covmat", "--reference", "c.txt", "--generated", "c.txt", "--aggregate", "max"],
        &["frobnicate"],
    ] {
        assert_eq!(code(&molsde(dir, args)), 2, "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("junk.ckpt"), b"not a checkpoint").unwrap();
    corpus(dir, "3");
    let out = molsde(dir, &["sample-conf", "--checkpoint", "junk.ckpt", "--corpus", "c.txt", "--out", "g.txt", "--seed", "1"]);
    assert_eq!(code(&out), 1);
    fs::write(dir.join("bad.txt"), "garbage\n").unwrap();
    let out = molsde(dir, &["eval-covmat", "--reference", "c.txt", "--generated", "bad.txt"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn check_passes_and_detects_a_dropped_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = molsde(dir, &with_tiny(&["check", "--trials", "10", "--seed", "3"]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.lines().count(), 10);
    assert!(!table.contains("FAIL"));

    let out = molsde(dir, &with_tiny(&["check", "--trials", "10", "--seed", "3", "--drop-pseudo-axis"]));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("reflection,2d_to_3d"));
}
