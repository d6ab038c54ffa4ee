use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ldm_anon::fixtures;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldm-anon"))
        .args(args)
        .env_remove("LDM_ANON_CACHE_DIR")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenes(dir: &Path, n: u64) {
    for i in 0..n {
        fixtures::scene(300 + i, 64, 1).save_png(&dir.join(format!("s{i}.png"))).unwrap();
    }
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, "schema_version = 1\nresolution = 64\n").unwrap();
    p
}

#[test]
fn anonymize_writes_manifest_with_requested_scale() {
    let src = tempfile::tempdir().unwrap();
    scenes(src.path(), 2);
    let cfg = small_config(src.path());
    let out = tempfile::tempdir().unwrap();
    let o = bin(&[
        "anonymize", "--config", path(&cfg), "--variant", "base", "--as", "1.25",
        "--in", path(src.path()), "--out", path(out.path()), "--seed", "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["a_s"], 1.25);
    assert_eq!(manifest["run_seed"], 5);
    assert_eq!(manifest["summary"]["processed"], 2);
    assert!(out.path().join("images/s0.png").is_file());

    let r = bin(&["report", path(out.path())]);
    assert_eq!(r.status.code(), Some(0));
    assert!(stdout(&r).contains("2 processed"), "{}", stdout(&r));
}

#[test]
fn dry_run_writes_nothing() {
    let src = tempfile::tempdir().unwrap();
    scenes(src.path(), 1);
    let out = src.path().join("never");
    let o = bin(&["anonymize", "--dry-run", "--in", path(src.path()), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 input image"));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let src = tempfile::tempdir().unwrap();
    let missing = src.path().join("missing");
    let o = bin(&["anonymize", "--in", path(&missing), "--out", path(src.path())]);
    assert_eq!(o.status.code(), Some(2));

    let bad = src.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\nno_such_key = 3\n").unwrap();
    scenes(src.path(), 1);
    let o = bin(&["anonymize", "--config", path(&bad), "--in", path(src.path()), "--out", path(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"), "{}", stderr(&o));

    let o = bin(&["anonymize", "--as", "-1", "--in", path(src.path()), "--out", path(&missing)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn build_pool_is_reproducible_and_validates_records() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("ids.jsonl");
    fs::write(
        &src,
        "{\"id\": \"a\", \"embedding\": [1, 0, 0]}\n\
         {\"id\": \"b\", \"embedding\": [0, 1, 0]}\n\
         {\"id\": \"c\", \"embedding\": [0, 0, 2]}\n",
    )
    .unwrap();
    let (p1, p2) = (dir.path().join("p1.bin"), dir.path().join("p2.bin"));
    assert_eq!(bin(&["build-pool", "--source", path(&src), "--out", path(&p1)]).status.code(), Some(0));
    assert_eq!(bin(&["build-pool", "--source", path(&src), "--out", path(&p2)]).status.code(), Some(0));
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

    let dup = dir.path().join("dup.jsonl");
    fs::write(&dup, "{\"id\": \"a\", \"embedding\": [1]}\n{\"id\": \"a\", \"embedding\": [2]}\n").unwrap();
    let o = bin(&["build-pool", "--source", path(&dup), "--out", path(&p1)]);
    assert_eq!(o.status.code(), Some(2));

    let broken = dir.path().join("broken.jsonl");
    fs::write(&broken, "{\"id\": \"ok\", \"embedding\": [1]}\n{\"id\": \"zed\", \"embedding\": null}\n").unwrap();
    let o = bin(&["build-pool", "--source", path(&broken), "--out", path(&p1)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zed"), "{}", stderr(&o));
}

#[test]
fn evaluate_identical_sets() {
    let real = tempfile::tempdir().unwrap();
    scenes(real.path(), 4);
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["evaluate", "fid", "--real", path(real.path()), "--anon", path(real.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("FID: 0.000"), "{}", stdout(&o));

    let o = bin(&[
        "evaluate", "reid", "--real", path(real.path()), "--anon", path(real.path()),
        "--out", path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = fs::read_to_string(out.path().join("reports/evaluation.txt")).unwrap();
    assert!(table.contains("Face-level") && table.contains("Image-level"), "{table}");
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(out.path().join("reports/evaluation.json")).unwrap()).unwrap();
    assert_eq!(json["image_level"]["map_score"], 1.0);
}

#[test]
fn extract_writes_face_records() {
    let src = tempfile::tempdir().unwrap();
    scenes(src.path(), 2);
    let cfg = small_config(src.path());
    let out = tempfile::tempdir().unwrap();
    let o = bin(&["extract", "--config", path(&cfg), "--in", path(src.path()), "--out", path(out.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let lines = fs::read_to_string(out.path().join("faces.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
}
