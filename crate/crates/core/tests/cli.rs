use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use guided_zoom::pnm;

fn gz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_guided-zoom")).args(args).output().expect("run guided-zoom")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let o = gz(args);
    assert_eq!(code(&o), 0, "{args:?}\nstderr: {}", String::from_utf8_lossy(&o.stderr));
    o
}

/// Small dataset plus conventional and evidence checkpoints.
struct Artifacts {
    dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
    pool: PathBuf,
    evidence: PathBuf,
}

impl Artifacts {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn artifacts() -> Artifacts {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&[
        "gen-data",
        "--out",
        s(&data),
        "--seed",
        "3",
        "--classes",
        "4",
        "--train-per-class",
        "8",
        "--test-per-class",
        "4",
    ]);
    let model = dir.path().join("conv.gzck");
    let (train, test) = (data.join("train.gzds"), data.join("test.gzds"));
    let small = ["--iterations", "10", "--channels", "4,4,4,4", "--batch-size", "8"];
    let mut a = vec!["train", "--data", s(&train), "--test", s(&test), "--out", s(&model)];
    a.extend_from_slice(&small);
    ok(&a);
    let pool = dir.path().join("pool.gzpl");
    ok(&[
        "build-pool",
        "--data",
        s(&train),
        "--model",
        s(&model),
        "--method",
        "gradcam",
        "--L",
        "1",
        "--out",
        s(&pool),
    ]);
    let evidence = dir.path().join("evidence.gzck");
    let mut a = vec!["train-evidence", "--pool", s(&pool), "--out", s(&evidence)];
    a.extend_from_slice(&small);
    ok(&a);
    Artifacts { dir, data, model, pool, evidence }
}

#[test]
fn gen_data_writes_named_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "gen-data",
            "--out",
            s(out),
            "--seed",
            "11",
            "--classes",
            "3",
            "--train-per-class",
            "2",
            "--test-per-class",
            "1",
        ]);
    }
    for f in ["train.gzds", "test.gzds", "manifest.json"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs between identical runs");
    }
    let c = dir.path().join("c");
    ok(&[
        "gen-data",
        "--out",
        s(&c),
        "--seed",
        "12",
        "--classes",
        "3",
        "--train-per-class",
        "2",
        "--test-per-class",
        "1",
    ]);
    assert_ne!(std::fs::read(a.join("train.gzds")).unwrap(), std::fs::read(c.join("train.gzds")).unwrap());
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(code(&gz(&["gen-data"])), 2);
    assert_eq!(code(&gz(&["no-such-command"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(code(&gz(&["gen-data", "--out", s(&out), "--classes", "1"])), 2);
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "[train]\nbogus = 1\n").unwrap();
    assert_eq!(code(&gz(&["--config", s(&cfg), "gen-data", "--out", s(&out)])), 2);
}

#[test]
fn missing_artifacts_exit_1_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing-here.gzds");
    let o = gz(&["train", "--data", s(&missing), "--out", s(&dir.path().join("m.gzck"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nothing-here.gzds"));
}

#[test]
fn pipeline_commands() {
    let a = artifacts();
    let test = a.data.join("test.gzds");
    assert!(a.model.exists() && a.model.with_extension("trace.json").exists());
    assert!(a.pool.exists() && a.pool.with_extension("json").exists());

    // viz
    let viz = a.path("viz");
    ok(&[
        "viz",
        "--data",
        s(&test),
        "--model",
        s(&a.model),
        "--index",
        "1",
        "--method",
        "gradcam",
        "--L",
        "1",
        "--out-dir",
        s(&viz),
    ]);
    let mut maps: Vec<PathBuf> = std::fs::read_dir(&viz).unwrap().map(|e| e.unwrap().path()).collect();
    maps.sort();
    assert_eq!(maps.len(), 4, "{maps:?}");
    let mut normalized = 0;
    for p in maps.iter().filter(|p| p.extension().unwrap() == "pgm") {
        let bytes = pnm::read(p).unwrap().to_u8();
        let (lo, hi) = (*bytes.iter().min().unwrap(), *bytes.iter().max().unwrap());
        // a flat (degenerate) map has nothing to normalize
        assert!((lo, hi) == (0, 255) || lo == hi, "{}: {lo}..{hi}", p.display());
        normalized += usize::from((lo, hi) == (0, 255));
    }
    assert!(normalized > 0);
    assert!(maps.iter().any(|p| p.extension().unwrap() == "ppm"));

    // refine --k 1 cannot change any decision
    let r1 = a.path("k1.json");
    ok(&[
        "refine",
        "--data",
        s(&test),
        "--model",
        s(&a.model),
        "--evidence",
        s(&a.evidence),
        "--k",
        "1",
        "--out",
        s(&r1),
    ]);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&r1).unwrap()).unwrap();
    assert_eq!(rep["refined_top1"], rep["baseline_top1"]);

    let r3 = a.path("k3.json");
    ok(&[
        "refine",
        "--data",
        s(&test),
        "--model",
        s(&a.model),
        "--evidence",
        s(&a.evidence),
        "--k",
        "3",
        "--weights",
        "0.4,0.3,0.2,0.1",
        "--out",
        s(&r3),
    ]);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&r3).unwrap()).unwrap();
    assert_eq!(rep["k"], 3);
    assert_eq!(rep["L"], 2);
    let w: Vec<f64> = serde_json::from_value(rep["weights"].clone()).unwrap();
    for (got, want) in w.iter().zip([0.4, 0.3, 0.2, 0.1]) {
        assert!((got - want).abs() < 1e-12, "{w:?}");
    }
    assert!(rep["provenance"]["conventional_sha256"].is_string());

    // same inputs, same report
    let again = a.path("k3b.json");
    ok(&[
        "refine",
        "--data",
        s(&test),
        "--model",
        s(&a.model),
        "--evidence",
        s(&a.evidence),
        "--k",
        "3",
        "--weights",
        "0.4,0.3,0.2,0.1",
        "--out",
        s(&again),
    ]);
    assert_eq!(std::fs::read(&r3).unwrap(), std::fs::read(&again).unwrap());

    // wrong weight count for L = 2
    let bad = gz(&[
        "refine",
        "--data",
        s(&test),
        "--model",
        s(&a.model),
        "--evidence",
        s(&a.evidence),
        "--L",
        "2",
        "--weights",
        "0.5,0.5",
        "--out",
        s(&a.path("bad.json")),
    ]);
    assert_eq!(code(&bad), 2);
}
