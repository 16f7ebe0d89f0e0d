//! End-to-end checks of the `kwloc` binary: flag validation, exit codes,
//! reproducibility of the emitted files, and the wiring between commands.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn kwloc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kwloc"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn kwloc");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Tiny corpus + trained psc model shared by the read-only tests.
struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn corpus(&self) -> PathBuf {
        self.dir.path().join("corpus")
    }
    fn model(&self) -> PathBuf {
        self.dir.path().join("psc.kwlm")
    }
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let fx = Fixture { dir };
        run_ok(kwloc().args([
            "synth",
            "--out",
            fx.corpus().to_str().unwrap(),
            "--train",
            "60",
            "--dev",
            "20",
            "--test",
            "20",
            "--vocab-size",
            "16",
            "--keywords",
            "6",
            "--semantic-groups",
            "2",
            "--seed",
            "11",
        ]));
        run_ok(kwloc().args([
            "train",
            "--model",
            "psc",
            "--supervision",
            "bow",
            "--data",
            fx.corpus().to_str().unwrap(),
            "--out",
            fx.model().to_str().unwrap(),
            "--epochs",
            "8",
            "--batch-size",
            "8",
            "--lr",
            "2e-3",
            "--seed",
            "3",
        ]));
        fx
    })
}

fn sha_dir(dir: &Path) -> Vec<(String, [u8; 32])> {
    use sha2::{Digest, Sha256};
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                let bytes = std::fs::read(&p).unwrap();
                files.push((rel, Sha256::digest(&bytes).into()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_writes_requested_split_sizes() {
    let fx = fixture();
    let manifest = std::fs::read_to_string(fx.corpus().join("train/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 60);
    let dev = std::fs::read_to_string(fx.corpus().join("dev/manifest.jsonl")).unwrap();
    assert_eq!(dev.lines().count(), 20);
    assert!(fx.corpus().join("vocab.json").exists());
    assert!(fx.corpus().join("run_manifest.json").exists());
}

#[test]
fn synth_same_seed_is_byte_identical_and_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &Path, seed: &str| {
        vec![
            "synth".to_string(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--train".into(),
            "8".into(),
            "--dev".into(),
            "2".into(),
            "--test".into(),
            "2".into(),
            "--vocab-size".into(),
            "10".into(),
            "--keywords".into(),
            "4".into(),
            "--seed".into(),
            seed.into(),
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    run_ok(kwloc().args(args(&a, "1")));
    run_ok(kwloc().args(args(&b, "1")));
    run_ok(kwloc().args(args(&c, "2")));
    // manifests include wall time; compare corpus payload files only
    let payload = |d: &Path| {
        sha_dir(d)
            .into_iter()
            .filter(|(name, _)| !name.ends_with("run_manifest.json"))
            .collect::<Vec<_>>()
    };
    assert_eq!(payload(&a), payload(&b));
    assert_ne!(payload(&a), payload(&c));
}

#[test]
fn train_produces_loadable_model_and_identical_reruns() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("m1.kwlm");
    let out2 = dir.path().join("m2.kwlm");
    for out in [&out1, &out2] {
        run_ok(kwloc().args([
            "train",
            "--model",
            "cnn-poolattend",
            "--supervision",
            "bow",
            "--data",
            fx.corpus().to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--seed",
            "5",
        ]));
    }
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap(),
        "identical invocations must write identical model bytes"
    );
    // and the model is loadable + usable by eval
    let out = run_ok(kwloc().args([
        "eval",
        "--model",
        out1.to_str().unwrap(),
        "--data",
        fx.corpus().to_str().unwrap(),
        "--task",
        "detection",
        "--theta",
        "0.4",
    ]));
    assert!(stdout_of(&out).contains("detection on test"));
}

#[test]
fn visual_training_never_reads_bow_targets() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vis.kwlm");
    let res = run_ok(kwloc().args([
        "train",
        "--model",
        "psc",
        "--supervision",
        "visual",
        "--data",
        fx.corpus().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "8",
    ]));
    let text = stdout_of(&res);
    assert!(
        text.contains("target reads: bow=0"),
        "bow targets must stay untouched under visual supervision: {text}"
    );
}

#[test]
fn eval_oracle_scores_perfectly() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("report.csv");
    let out = run_ok(kwloc().args([
        "eval",
        "--model",
        "oracle",
        "--data",
        fx.corpus().to_str().unwrap(),
        "--task",
        "localisation",
        "--theta",
        "0.5",
        "--out",
        csv.to_str().unwrap(),
    ]));
    assert!(stdout_of(&out).contains("F1=1.0000"));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("model,split,task,theta"));
    assert!(text.contains("oracle,test,localisation,0.5,1.0000,1.0000,1.0000"));
}

#[test]
fn eval_rejects_bad_theta_with_validation_exit() {
    let fx = fixture();
    let out = kwloc()
        .args([
            "eval",
            "--model",
            "oracle",
            "--data",
            fx.corpus().to_str().unwrap(),
            "--task",
            "detection",
            "--theta",
            "1.1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn eval_tune_theta_picks_first_perfect_grid_point() {
    let fx = fixture();
    let out = run_ok(kwloc().args([
        "eval",
        "--model",
        "oracle",
        "--data",
        fx.corpus().to_str().unwrap(),
        "--task",
        "detection",
        "--tune-theta",
    ]));
    // oracle scores are exactly 0/1: every θ > 0 ties at F1 = 1; the
    // smallest positive grid point wins.
    assert!(stdout_of(&out).contains("tuned theta = 0.05"));
}

#[test]
fn unknown_flags_and_variants_exit_one() {
    let out = kwloc().args(["train", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let fx = fixture();
    let out = kwloc()
        .args([
            "train",
            "--model",
            "transformer",
            "--supervision",
            "bow",
            "--data",
            fx.corpus().to_str().unwrap(),
            "--out",
            "/tmp/never.kwlm",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn localise_renders_deterministic_svg() {
    let fx = fixture();
    let manifest = std::fs::read_to_string(fx.corpus().join("test/manifest.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let utt = first["id"].as_str().unwrap();
    let vocab: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fx.corpus().join("vocab.json")).unwrap())
            .unwrap();
    let keyword = vocab["keywords"][0].as_str().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let svg1 = dir.path().join("a.svg");
    let svg2 = dir.path().join("b.svg");
    let mut texts = Vec::new();
    for (svg, theta) in [(&svg1, "0.0"), (&svg2, "0.0")] {
        let out = run_ok(kwloc().args([
            "localise",
            "--model",
            fx.model().to_str().unwrap(),
            "--data",
            fx.corpus().to_str().unwrap(),
            "--utterance",
            utt,
            "--keyword",
            keyword,
            "--theta",
            theta,
            "--emit-svg",
            svg.to_str().unwrap(),
        ]));
        texts.push(stdout_of(&out));
    }
    let a = std::fs::read(&svg1).unwrap();
    let b = std::fs::read(&svg2).unwrap();
    assert_eq!(a, b, "identical inputs must render identical SVG bytes");
    let svg_text = String::from_utf8(a).unwrap();
    assert!(svg_text.contains("polyline"), "curve present");
    assert!(svg_text.contains("curve mass"), "mass annotation present");

    // gated case still renders the curve and reports no proposal
    let svg3 = dir.path().join("c.svg");
    let out = run_ok(kwloc().args([
        "localise",
        "--model",
        fx.model().to_str().unwrap(),
        "--data",
        fx.corpus().to_str().unwrap(),
        "--utterance",
        utt,
        "--keyword",
        keyword,
        "--theta",
        "1.0",
        "--emit-svg",
        svg3.to_str().unwrap(),
    ]));
    assert!(stdout_of(&out).contains("no proposal"));
    let gated = std::fs::read_to_string(&svg3).unwrap();
    assert!(gated.contains("polyline"));

    // unknown utterance / keyword -> validation exit
    let out = kwloc()
        .args([
            "localise",
            "--model",
            fx.model().to_str().unwrap(),
            "--data",
            fx.corpus().to_str().unwrap(),
            "--utterance",
            "nope-99999",
            "--keyword",
            keyword,
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn compare_emits_full_tables() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cmp");
    run_ok(kwloc().env("KWLOC_THREADS", "2").args([
        "compare",
        "--data",
        fx.corpus().to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--seed",
        "4",
    ]));
    for table in ["detection.csv", "localisation.csv"] {
        let text = std::fs::read_to_string(out_dir.join(table)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5, "{table}: header + 4 model rows");
        assert_eq!(
            lines[0],
            "model,bow_precision,bow_recall,bow_f1,visual_precision,visual_recall,visual_f1"
        );
        for (row, model) in lines[1..]
            .iter()
            .zip(["cnn-attend", "cnn-poolattend", "psc", "cnn-pool"])
        {
            assert!(row.starts_with(model), "{table}: {row}");
            assert_eq!(row.split(',').count(), 7);
        }
    }
    assert!(out_dir.join("models/psc-visual.kwlm").exists());
}

#[test]
fn gradcheck_passes_and_corrupt_hook_fails() {
    let out = run_ok(kwloc().args(["gradcheck", "--seeds", "2"]));
    let text = stdout_of(&out);
    assert!(text.contains("gradient check: PASS"));
    // report lists every parameter tensor of every variant
    for name in [
        "cnn-attend/conv0.kernels",
        "cnn-attend/embedding",
        "cnn-attend/mlp.out.weights",
        "psc/conv1.bias",
        "cnn-pool/head.hidden.weights",
        "cnn-poolattend/conv0.bias",
    ] {
        assert!(text.contains(name), "missing tensor line: {name}");
    }
    let out = kwloc()
        .args(["gradcheck", "--seeds", "1", "--corrupt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout_of(&out).contains("gradient check: FAIL"));
}
