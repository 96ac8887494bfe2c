use std::path::Path;
use std::process::{Command, Output};

const GOLDEN_MATRIX: &str = include_str!("golden/read_matrix.txt");

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn docflow(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_docflow"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .env_remove("GW_USER")
        .output()
        .expect("run docflow")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn init_then_empty_search() {
    let dir = tempfile::tempdir().unwrap();
    let o = docflow(dir.path(), &["init"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "applied 30, skipped 0\n");
    let o = docflow(dir.path(), &["search", "--class", "Document"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "");
}

#[test]
fn load_matrix_and_search() {
    let dir = tempfile::tempdir().unwrap();
    docflow(dir.path(), &["init"]);
    let o = docflow(dir.path(), &["load", &fixture("standard.fixture")]);
    assert_eq!(stdout(&o), "applied 12, skipped 0\n");
    let o = docflow(dir.path(), &["load", &fixture("standard.fixture")]);
    assert_eq!(stdout(&o), "applied 0, skipped 12\n");

    let o = docflow(dir.path(), &["matrix"]);
    assert_eq!(stdout(&o), GOLDEN_MATRIX);

    let o = docflow(dir.path(), &["search", "--as", "bob"]);
    assert_eq!(stdout(&o), "3|Office hours|IncomingCorrespondence|Draft\n");
    let o = docflow(dir.path(), &["search", "--class", "Correspondence"]);
    assert_eq!(stdout(&o), "3|Office hours|IncomingCorrespondence|Draft\n");
}

#[test]
fn exit_codes_follow_error_categories() {
    let dir = tempfile::tempdir().unwrap();
    docflow(dir.path(), &["init"]);
    docflow(dir.path(), &["load", &fixture("standard.fixture")]);

    let o = docflow(dir.path(), &["route", "trace", "99"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error: UnknownTarget: "), "{}", stderr(&o));

    let o = docflow(dir.path(), &["search", "--as", "nobody"]);
    assert_eq!(o.status.code(), Some(3));

    let o = docflow(dir.path(), &["matrix", "--action", "Fly"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error: MalformedInput: "), "{}", stderr(&o));

    let bad = dir.path().join("bad.fixture");
    std::fs::write(&bad, "frobnicate everything\n").unwrap();
    let o = docflow(dir.path(), &["load", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));

    let denied = dir.path().join("denied.fixture");
    std::fs::write(
        &denied,
        "document \"Leak\" folder=/Corp class=Contract stype=Private owner=finance author=bob level=Corporation content=x\n",
    )
    .unwrap();
    let o = docflow(dir.path(), &["load", denied.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("AccessDenied(FlowViolation)"), "{}", stderr(&o));
}

#[test]
fn route_trace_audit_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    docflow(dir.path(), &["init"]);
    docflow(dir.path(), &["load", &fixture("standard.fixture")]);
    docflow(dir.path(), &["load", &fixture("demo.fixture")]);

    let o = docflow(dir.path(), &["route", "trace", "4"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: NotInRoute: "), "{}", stderr(&o));

    let o = docflow(dir.path(), &["audit", "tail", "-n", "2"]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let last: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(last["op"], "create_document");

    let before = stdout(&docflow(dir.path(), &["digest"]));
    let o = docflow(dir.path(), &["snapshot"]);
    assert!(o.status.success());
    assert_eq!(stdout(&docflow(dir.path(), &["digest"])), before);
    assert!(dir.path().join("snapshot.txt").exists());
}
