use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use setagg::io;

fn setagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setagg"))
        .args(args)
        .output()
        .expect("spawn setagg")
}

fn ok(args: &[&str]) {
    let out = setagg(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", p(dir), "--num-identities", "12", "--pairs", "60"];
    args.extend_from_slice(extra);
    ok(&args);
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_is_byte_identical_across_runs_and_strategies() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    synth(&a, &[]);
    synth(&b, &[]);
    ok(&[
        "--sequential",
        "synth",
        "--out",
        p(&c),
        "--num-identities",
        "12",
        "--pairs",
        "60",
    ]);
    let da = dir_bytes(&a);
    assert!(da.iter().any(|(n, _)| n == "protocol.json"));
    assert!(da.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(da, dir_bytes(&b));
    assert_eq!(da, dir_bytes(&c));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("gen.txt");
    fs::write(&cfg, "# small world\nnum_identities = 5\nsets_per_identity = 3\n").unwrap();
    let out = tmp.path().join("d");
    ok(&[
        "synth",
        "--config",
        p(&cfg),
        "--sets-per-identity",
        "2",
        "--out",
        p(&out),
        "--pairs",
        "10",
    ]);
    assert_eq!(io::list_files(&out, io::SET_EXTENSION).unwrap().len(), 10);

    fs::write(&cfg, "num_identitiez = 5\n").unwrap();
    let bad = setagg(&["synth", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(bad.status.code(), Some(11));
}

#[test]
fn sum_of_single_element_set_is_that_element() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, &["--set-size-min", "1", "--set-size-max", "1"]);
    let reps = tmp.path().join("r");
    ok(&["aggregate", "--data", p(&data), "--method", "sum", "--out", p(&reps)]);
    for path in io::list_files(&data, io::SET_EXTENSION).unwrap() {
        let set = io::read_set(&path).unwrap();
        assert_eq!(set.len(), 1);
        let rep_path = reps.join(format!("{}.frep", set.source_id()));
        let stored = io::read_representation(&rep_path).unwrap();
        // stored sets already hold f32 values, so the round trip is exact
        assert_eq!(stored.representation.vector, set.features().row(0));
        assert_eq!(stored.identity, set.identity());
    }
}

#[test]
fn errors_map_to_documented_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");

    assert_eq!(
        setagg(&["synth", "--out", p(&out), "--frobnicate"]).status.code(),
        Some(2)
    );
    assert_eq!(
        setagg(&["aggregate", "--data", "/nonexistent/dir", "--out", p(&out)])
            .status
            .code(),
        Some(24)
    );

    let data = tmp.path().join("d");
    synth(&data, &[]);
    assert_eq!(
        setagg(&["aggregate", "--data", p(&data), "--method", "vba", "--out", p(&out)])
            .status
            .code(),
        Some(13)
    );

    // a model trained on d = 64 cannot read d = 48 sets
    let model = tmp.path().join("m.sagm");
    ok(&["train", "--data", p(&data), "--out", p(&model), "--max-steps", "2"]);
    let narrow = tmp.path().join("narrow");
    synth(&narrow, &["--d", "48"]);
    let mismatch = setagg(&[
        "aggregate",
        "--data",
        p(&narrow),
        "--model",
        p(&model),
        "--out",
        p(&out),
    ]);
    assert_eq!(
        mismatch.status.code(),
        Some(10),
        "{}",
        String::from_utf8_lossy(&mismatch.stderr)
    );

    let set = io::list_files(&data, io::SET_EXTENSION).unwrap().remove(0);
    let original = fs::read(&set).unwrap();
    let mut bytes = original.clone();
    let last = bytes.len() - 5;
    bytes[last] ^= 0x40;
    fs::write(&set, &bytes).unwrap();
    assert_eq!(
        setagg(&["aggregate", "--data", p(&data), "--method", "sum", "--out", p(&out)])
            .status
            .code(),
        Some(22)
    );

    fs::write(&set, &original[..original.len() / 2]).unwrap();
    assert_eq!(
        setagg(&["aggregate", "--data", p(&data), "--method", "sum", "--out", p(&out)])
            .status
            .code(),
        Some(23)
    );

    fs::write(&set, b"nope").unwrap();
    assert_eq!(
        setagg(&["aggregate", "--data", p(&data), "--method", "sum", "--out", p(&out)])
            .status
            .code(),
        Some(20)
    );

    fs::write(&set, &original).unwrap();
    fs::write(data.join(io::PROTOCOL_FILE), "{").unwrap();
    ok(&["aggregate", "--data", p(&data), "--method", "sum", "--out", p(&out)]);
    let protocol = data.join(io::PROTOCOL_FILE);
    assert_eq!(
        setagg(&["eval", "--reps", p(&out), "--protocol", p(&protocol), "--out", p(&out)])
            .status
            .code(),
        Some(25)
    );

    let help = setagg(&["--help"]);
    let text = String::from_utf8_lossy(&help.stdout);
    for code in ["10", "13", "22", "24", "25"] {
        assert!(text.contains(&format!("  {code}  ")), "code {code} missing from --help");
    }
}

#[test]
fn pipeline_runs_end_to_end_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    synth(&data, &[]);
    let model = tmp.path().join("m.sagm");
    let loss = tmp.path().join("loss.csv");
    ok(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&model),
        "--loss-csv",
        p(&loss),
        "--epochs",
        "2",
    ]);
    assert!(fs::read_to_string(&loss).unwrap().starts_with(io::LOSS_CSV_HEADER));

    let run = |tag: &str, seq: bool| {
        let reps = tmp.path().join(format!("reps_{tag}"));
        let eval = tmp.path().join(format!("eval_{tag}"));
        let mut agg = vec![
            "aggregate",
            "--data",
            p(&data),
            "--model",
            p(&model),
            "--method",
            "vba+gmp",
            "--out",
            p(&reps),
        ];
        let protocol = data.join(io::PROTOCOL_FILE);
        let mut ev = vec![
            "eval",
            "--reps",
            p(&reps),
            "--protocol",
            p(&protocol),
            "--out",
            p(&eval),
        ];
        ev.extend_from_slice(&["--far", "0.01,0.1"]);
        if seq {
            agg.insert(0, "--sequential");
            ev.insert(0, "--sequential");
        }
        ok(&agg);
        ok(&ev);
        (dir_bytes(&reps), dir_bytes(&eval))
    };
    let (reps_a, eval_a) = run("a", false);
    let (reps_b, eval_b) = run("b", true);
    assert_eq!(reps_a, reps_b);
    assert_eq!(eval_a, eval_b);
    let names: Vec<_> = eval_a.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["identification.json", "roc.csv", "verification.json"]);
    let weights = reps_a.iter().find(|(n, _)| n == "weights.csv").unwrap();
    assert!(weights.1.starts_with(io::WEIGHTS_CSV_HEADER.as_bytes()));
}

#[test]
fn bench_writes_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b.csv");
    ok(&[
        "bench",
        "--method",
        "vbs,gram",
        "--n-grid",
        "20,40",
        "--d",
        "8",
        "--k",
        "4",
        "--repeats",
        "1",
        "--out",
        p(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.starts_with("method,n,d,k,seconds\n"));
    assert_eq!(setagg(&["bench", "--method", "fft"]).status.code(), Some(2));
}
