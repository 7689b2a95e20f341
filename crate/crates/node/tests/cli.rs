use std::path::Path;
use std::process::Command;

fn orderless(args: &[&str]) -> (bool, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_orderless")).args(args).output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn flip_byte(path: &Path, at: usize) {
    let mut bytes = std::fs::read(path).unwrap();
    bytes[at] ^= 0x40;
    std::fs::write(path, bytes).unwrap();
}

#[test]
fn run_verify_and_check_convergence() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    std::fs::write(
        &config,
        "application = \"auction\"\narrival_rate = 20.0\nduration_s = 5.0\nnum_orgs = 4\nq = 2\nclients = 20\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let (ok, stdout) = orderless(&["run", "--config", config.to_str().unwrap(), "--seed", "3", "--reps", "2", "--out", o]);
    assert!(ok, "{stdout}");
    assert!(stdout.contains("rep 1: seed 4"), "{stdout}");
    for f in ["rep-0.csv", "rep-1.csv", "summary.json", "genesis-rep-0.json", "ledgers/rep-1/org-3/blocks.log"] {
        assert!(out.join(f).exists(), "missing {f}");
    }

    let (ok, stdout) = orderless(&["verify-ledger", "--dir", o]);
    assert!(ok, "{stdout}");
    assert_eq!(stdout.matches(", ok").count(), 8, "{stdout}");
    let (ok, stdout) = orderless(&["convergence-check", "--out", o]);
    assert!(ok, "{stdout}");
    assert_eq!(stdout.matches("converged").count(), 2, "{stdout}");

    // Damage a block payload in the middle of one ledger.
    let blocks = out.join("ledgers/rep-0/org-1/blocks.log");
    let len = std::fs::metadata(&blocks).unwrap().len() as usize;
    flip_byte(&blocks, len / 2);
    let (ok, _) = orderless(&["verify-ledger", "--dir", out.join("ledgers/rep-0").to_str().unwrap()]);
    assert!(!ok);
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(&config, "{\"read_percent\": 70}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_orderless"))
        .args(["run", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum to 120"));
}
