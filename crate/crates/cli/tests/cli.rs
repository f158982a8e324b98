use std::path::Path;
use std::process::{Command, Output};

fn vlase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlase"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("failed to launch vlase")
}

fn ok(args: &[&str]) {
    let out = vlase(args);
    assert!(out.status.success(), "vlase {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes two passes and runs train, index, query and eval on them.
fn pipeline(root: &Path, scenario: &str) {
    let data = root.join("data");
    ok(&["synth", "--out", s(&data), "--seed", "5", "--locations", "40", "--scenario", scenario, "--noise", "0.02,1,1"]);
    let db = data.join("pass1");
    ok(&["train", "--features", s(&db.join("features")), "--clusters", "8", "--out", s(&root.join("cb.vlc"))]);
    ok(&[
        "index",
        "--features",
        s(&db.join("features")),
        "--geotags",
        s(&db.join("geotags.csv")),
        "--codebook",
        s(&root.join("cb.vlc")),
        "--out",
        s(&root.join("db.vli")),
    ]);
    ok(&[
        "query",
        "--index",
        s(&root.join("db.vli")),
        "--codebook",
        s(&root.join("cb.vlc")),
        "--features",
        s(&data.join("pass2/features")),
        "--out",
        s(&root.join("results.csv")),
    ]);
    ok(&[
        "eval",
        "--results",
        s(&root.join("results.csv")),
        "--truth",
        s(&data.join("pass2/geotags.csv")),
        "--out",
        s(&root.join("report.csv")),
    ]);
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn full_pipeline_produces_report() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "generic");
    let results = read(dir.path().join("results.csv"));
    assert!(results.starts_with("query_id,rank,match_id,cosine_distance,match_lat,match_lon\n"));
    assert_eq!(results.lines().count(), 1 + 40 * 5);
    let report = read(dir.path().join("report.csv"));
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("k,threshold_m,successes,total,accuracy"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path(), "generic");
    pipeline(b.path(), "generic");
    for f in ["cb.vlc", "db.vli", "results.csv", "report.csv", "data/pass2/features/loc00007.ftr"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn self_retrieval_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline(root, "generic");
    let db = root.join("data/pass1");
    ok(&[
        "query",
        "--index",
        s(&root.join("db.vli")),
        "--codebook",
        s(&root.join("cb.vlc")),
        "--features",
        s(&db.join("features")),
        "--out",
        s(&root.join("self.csv")),
    ]);
    ok(&[
        "eval",
        "--results",
        s(&root.join("self.csv")),
        "--truth",
        s(&db.join("geotags.csv")),
        "--out",
        s(&root.join("self_report.csv")),
    ]);
    for line in read(root.join("self_report.csv")).lines().skip(1) {
        assert!(line.ends_with(",1.000000"), "{line}");
    }
}

#[test]
fn ablation_writes_one_curve_row_per_mask() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", s(&data), "--seed", "1", "--locations", "20", "--scenario", "spatial-twin"]);
    let out = dir.path().join("ablation");
    ok(&[
        "ablate",
        "--features",
        s(&data.join("pass1/features")),
        "--geotags",
        s(&data.join("pass1/geotags.csv")),
        "--query-features",
        s(&data.join("pass2/features")),
        "--query-geotags",
        s(&data.join("pass2/geotags.csv")),
        "--masks",
        "all,static",
        "--clusters",
        "8",
        "--out",
        s(&out),
    ]);
    let table = read(out.join("ablation_table.csv"));
    assert_eq!(table.lines().count(), 3);
    let curves = read(out.join("ablation_curves.csv"));
    let rows: Vec<&str> = curves.lines().skip(1).collect();
    assert_eq!(rows.len(), 2 * 2 * 3);
    for k in ["1", "5"] {
        for t in ["5", "10", "20"] {
            let n = rows
                .iter()
                .filter(|r| {
                    let f: Vec<&str> = r.split(',').collect();
                    f[2] == k && f[3] == t
                })
                .count();
            assert_eq!(n, 2, "k={k} t={t}");
        }
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    pipeline(root, "generic");
    let features = root.join("data/pass2/features");

    let mut bytes = std::fs::read(root.join("db.vli")).unwrap();
    bytes[20] ^= 0x40;
    std::fs::write(root.join("bad.vli"), &bytes).unwrap();
    let out = vlase(&[
        "query",
        "--index",
        s(&root.join("bad.vli")),
        "--codebook",
        s(&root.join("cb.vlc")),
        "--features",
        s(&features),
        "--out",
        s(&root.join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    ok(&["train", "--features", s(&features), "--clusters", "8", "--seed", "9", "--out", s(&root.join("other.vlc"))]);
    let out = vlase(&[
        "query",
        "--index",
        s(&root.join("db.vli")),
        "--codebook",
        s(&root.join("other.vlc")),
        "--features",
        s(&features),
        "--out",
        s(&root.join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(root.join("partial.csv"), "image_id,lat,lon\nloc00000,40.0,-111.0\n").unwrap();
    let out = vlase(&[
        "eval",
        "--results",
        s(&root.join("results.csv")),
        "--truth",
        s(&root.join("partial.csv")),
        "--out",
        s(&root.join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("loc00001"));
}

#[test]
fn rejects_bad_mask_syntax() {
    let dir = tempfile::tempdir().unwrap();
    let out = vlase(&["train", "--features", s(dir.path()), "--mask", "no-such-class", "--out", s(&dir.path().join("c"))]);
    assert!(!out.status.success());
}
