use std::path::Path;
use std::process::{Command, Output};

fn ttice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttice")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = ttice(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, increments: &str, seed: &str) {
    ok(&[
        "gen", "-o", p(dir), "--shape", "5,6,7", "--ranks", "1,2,3,2,1", "--increments", increments,
        "--batch", "1..3", "--noise", "0.01", "--seed", seed,
    ]);
}

#[test]
fn compress_info_reconstruct() {
    let tmp = tempfile::tempdir().unwrap();
    let stream = tmp.path().join("s");
    gen(&stream, "3", "1");
    let ttc = tmp.path().join("t.ttc");
    let csv = tmp.path().join("m.csv");
    ok(&["compress", p(&stream), "-o", p(&ttc), "--algo", "tt-ice", "--eps", "0.1", "--metrics", p(&csv)]);

    let rows = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = rows.lines().collect();
    assert_eq!(lines[0], "increment,algo,eps,ranks,cr,rel_err_est,obs_used,cpu_seconds");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,tt-ice,0.1,1;"));

    let json = ok(&["info", p(&ttc), "--json"]).stdout;
    let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(v["ortho_count"], 3);
    assert_eq!(v["batch_boundaries"].as_array().unwrap().len(), 3);
    let cr_csv: f64 = lines[3].split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(v["compression_ratio"].as_f64().unwrap(), cr_csv);
    let text = String::from_utf8(ok(&["info", p(&ttc)]).stdout).unwrap();
    assert!(text.contains("compression ratio"));

    let out = tmp.path().join("r.ttb");
    ok(&["reconstruct", p(&ttc), "-o", p(&out), "--range", "0..1"]);
    let r = ttice::stream::read_batch(&out, 0).unwrap();
    assert_eq!(r.tensor.shape(), &[5, 6, 7, 1]);
}

#[test]
fn reconstruction_within_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let stream = tmp.path().join("s");
    gen(&stream, "4", "2");
    let ttc = tmp.path().join("t.ttc");
    ok(&["compress", p(&stream), "-o", p(&ttc), "--algo", "tt-ice-star", "--eps", "0.05"]);
    let out = tmp.path().join("all.ttb");
    ok(&["reconstruct", p(&ttc), "-o", p(&out)]);
    let got = ttice::stream::read_batch(&out, 0).unwrap().tensor;
    let parts: Vec<_> = ttice::stream::list_stream(&stream)
        .unwrap()
        .iter()
        .enumerate()
        .map(|(k, f)| ttice::stream::read_batch(f, k).unwrap().tensor)
        .collect();
    let want = ttice::tensor::stack_last(&parts).unwrap();
    let diff: f64 = got.data().iter().zip(want.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!(diff <= 0.05 * want.frobenius_norm() + 1e-9);
}

#[test]
fn deterministic_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let stream = tmp.path().join("s");
    gen(&stream, "5", "3");
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let ttc = tmp.path().join(format!("{run}.ttc"));
        let csv = tmp.path().join(format!("{run}.csv"));
        ok(&[
            "compress", p(&stream), "-o", p(&ttc), "--algo", "ittd", "--round-every", "2", "--metrics", p(&csv),
            "--no-timing", "--seed", "3",
        ]);
        files.push((std::fs::read(ttc).unwrap(), std::fs::read(csv).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn append_extends_train() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, "2", "4");
    gen(&b, "2", "5");
    let ttc = tmp.path().join("t.ttc");
    ok(&["compress", p(&a), "-o", p(&ttc)]);
    ok(&["append", p(&ttc), p(&b)]);
    let tt = ttice::tt::read_ttc(&ttc).unwrap();
    assert_eq!(tt.batch_boundaries().len(), 4);
}

#[test]
fn bench_emits_all_algorithms() {
    let out = ok(&["bench", "--scenario", "near-duplicate", "--no-timing"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("scenario,algo,increment,ranks,cr,rre,obs_used,cpu_seconds"));
    for algo in ["tt-ice", "tt-ice-star", "ittd-none"] {
        assert_eq!(text.lines().filter(|l| l.split(',').nth(1) == Some(algo)).count(), 20);
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let ttc = tmp.path().join("t.ttc");

    let out = ttice(&["compress", p(&empty), "-o", p(&ttc)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no increments"));

    assert_eq!(ttice(&["compress", p(&empty), "-o", p(&ttc), "--round-every", "3"]).status.code(), Some(1));
    assert_eq!(ttice(&["compress"]).status.code(), Some(1));
    assert_eq!(ttice(&["--help"]).status.code(), Some(0));

    let stream = tmp.path().join("s");
    gen(&stream, "2", "6");
    ok(&["compress", p(&stream), "-o", p(&ttc)]);
    let out = ttice(&["reconstruct", p(&ttc), "-o", p(&tmp.path().join("x.ttb")), "--range", "3..1"]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(tmp.path().join("bad.ttc"), b"nope").unwrap();
    assert_eq!(ttice(&["info", p(&tmp.path().join("bad.ttc"))]).status.code(), Some(2));
}

#[test]
fn failing_increment_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let stream = tmp.path().join("s");
    gen(&stream, "2", "7");
    // a third increment with a different spatial shape
    let bad = ttice::DenseTensor::zeros(vec![5, 6, 8, 1]).unwrap();
    ttice::stream::write_batch(
        &ttice::StreamIncrement::new(bad, 2, "bad").unwrap(),
        stream.join("inc_00002.ttb"),
    )
    .unwrap();
    let ttc = tmp.path().join("t.ttc");
    let out = ttice(&["compress", p(&stream), "-o", p(&ttc)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("increment 2"));
    let tt = ttice::tt::read_ttc(&ttc).unwrap();
    assert_eq!(tt.batch_boundaries().len(), 2);
}
