use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use graphcloth::checkpoint::Checkpoint;
use graphcloth::mesh::{load_obj, parse_obj};

const TINY: &str = "[network]\nlatent = 8\niterations = 2\n\n[training]\nrings = 1\nlevels = 1\nbatch_size = 2\nlr = 1e-3\n";

fn graphcloth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphcloth"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Trains a tiny checkpoint in `dir` and saves its dataset under `data/`.
fn trained(dir: &Path) -> Output {
    fs::write(dir.join("tiny.toml"), TINY).unwrap();
    graphcloth(
        dir,
        &[
            "train",
            "--config",
            "tiny.toml",
            "--synthetic",
            "4",
            "--epochs",
            "2",
            "--checkpoint",
            "run/model.ckpt",
            "--save-dataset",
            "data",
        ],
    )
}

#[test]
fn train_writes_reproducible_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = trained(a.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(b.path().join("tiny.toml"), TINY).unwrap();
    let out = graphcloth(
        b.path(),
        &["--threads", "2", "train", "--config", "tiny.toml", "--synthetic", "4", "--epochs", "2", "--checkpoint", "run/model.ckpt"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let ckpt = Checkpoint::load(a.path().join("run/model.ckpt")).unwrap();
    assert_eq!((ckpt.k, ckpt.model.history, ckpt.meta.epochs), (5, 3, 2));
    let csv = fs::read_to_string(a.path().join("run/training.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(csv, fs::read_to_string(b.path().join("run/training.csv")).unwrap());
    assert_eq!(fs::read(a.path().join("run/model.ckpt")).unwrap(), fs::read(b.path().join("run/model.ckpt")).unwrap());
    let echoed = fs::read_to_string(a.path().join("run/config.toml")).unwrap();
    assert!(echoed.contains("epochs = 2") && echoed.contains("latent = 8"), "{echoed}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&graphcloth(d, &["train", "--synthetic", "2"])), 2);
    assert_eq!(code(&graphcloth(d, &["frobnicate"])), 2);
    fs::write(d.join("bad.toml"), "[training]\nepochz = 3\n").unwrap();
    assert_eq!(code(&graphcloth(d, &["--config", "bad.toml", "gradcheck", "x.obj"])), 2);
    assert_eq!(code(&graphcloth(d, &["gradcheck", "missing.obj"])), 2);
    assert_eq!(code(&graphcloth(d, &["--terms", "stretch,wind", "gradcheck", "x.obj"])), 2);
    assert_eq!(code(&graphcloth(d, &["--help"])), 0);
}

#[test]
fn enhance_bench_and_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&trained(d)), 0);
    let coarse = "data/sample_0000/coarse.obj";
    let rest = "data/sample_0000/rest.obj";
    let coarse_tris = parse_obj(&fs::read_to_string(d.join(coarse)).unwrap()).unwrap().1.len();

    let out = graphcloth(d, &["enhance", coarse, "--rest", rest, "--checkpoint", "run/model.ckpt", "--out", "elastic/out.obj"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fine = load_obj(d.join("elastic/out.obj")).unwrap();
    assert_eq!(fine.triangles().len(), 16 * coarse_tris);
    let trace = fs::read_to_string(d.join("elastic/out.csv")).unwrap();
    assert!(trace.starts_with("iteration,potential,stretch,bend,gravity,contact,self\n"));
    assert_eq!(trace.lines().count(), 7);
    assert!(d.join("elastic/config.toml").exists());

    let all = "stretch,bend,gravity,contact,self";
    let args = ["enhance", coarse, "--rest", rest, "--checkpoint", "run/model.ckpt", "--terms", all, "--out", "all/out.obj"];
    assert_eq!(code(&graphcloth(d, &args)), 2, "contact without a collider");
    fs::write(d.join("sphere.toml"), "[[shape]]\ntype = \"sphere\"\ncenter = [0.0, 0.0, -20.0]\nradius = 19.8\n").unwrap();
    let mut with_collider = args.to_vec();
    with_collider.extend(["--collider", "sphere.toml"]);
    let out = graphcloth(d, &with_collider);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let missing: Vec<&str> = args.iter().copied().chain(["--collider", "nope.toml"]).collect();
    assert_eq!(code(&graphcloth(d, &missing)), 2);

    let out = graphcloth(d, &["bench", coarse, "--rest", rest, "--checkpoint", "run/model.ckpt", "--out", "bench"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let conv = fs::read_to_string(d.join("bench/convergence.csv")).unwrap();
    assert_eq!(
        conv.lines().next().unwrap(),
        "iteration,neural,gd_lr1e-1,gd_lr1e0,gd_lr1e1,adam_lr1e-2,adam_lr1e-3,adam_lr1e-4"
    );
    assert_eq!(conv.lines().count(), 7);
    let summary = fs::read_to_string(d.join("bench/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 8);
    let timings = fs::read_to_string(d.join("bench/timings.csv")).unwrap();
    let edges: Vec<usize> = timings.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(edges.len(), 4);
    assert!(edges.windows(2).all(|w| w[1] > 3 * w[0]), "{edges:?}");

    let out = graphcloth(d, &["--terms", "stretch,bend", "gradcheck", rest]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("stretch") && text.contains("max |F| 0.000e0"), "{text}");
    let out = graphcloth(d, &["--terms", "stretch,bend,gravity,self", "gradcheck", rest, "--perturb", "0.2", "--out", "gc"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(fs::read_to_string(d.join("gc/gradcheck.csv")).unwrap().lines().count(), 5);
}
