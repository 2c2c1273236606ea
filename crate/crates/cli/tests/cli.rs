use std::path::PathBuf;
use std::process::{Command, Output};

fn hybridbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybridbeam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const TINY: [&str; 5] = ["--small", "--trials", "1", "--steps", "3"];

#[test]
fn config_prints_resolved_toml() {
    let o = hybridbeam(&["config", "--small", "--alpha", "0.95", "--set", "noise_power=0.01"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("num_antennas = 32"), "{text}");
    assert!(text.contains("mobility_alpha = 0.95"), "{text}");
    assert!(text.contains("noise_power = 0.01"), "{text}");
}

#[test]
fn config_output_loads_back() {
    let path = scratch("roundtrip.toml");
    let first = hybridbeam(&["config", "--small", "--beta", "0.7", "--seed", "99"]);
    std::fs::write(&path, &first.stdout).unwrap();
    let second = hybridbeam(&["config", "--scenario", path.to_str().unwrap()]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn run_writes_csv_to_stdout_and_summary_to_stderr() {
    let mut args = vec!["run", "--methods", "geb,whitening"];
    args.extend(TINY);
    let o = hybridbeam(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("#schema_version=1"));
    assert!(lines.next().unwrap().starts_with("trial,slow_time,group,user,method,"));
    assert!(text.contains(",geb,") && text.contains(",whitening,"));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("geb") && err.contains("sinr="), "{err}");
}

#[test]
fn run_is_reproducible_and_writes_files() {
    let a = scratch("run_a.csv");
    let b = scratch("run_b.csv");
    for p in [&a, &b] {
        let mut args = vec!["run", "--methods", "wiener", "--seed", "5", "--out", p.to_str().unwrap()];
        args.extend(TINY);
        let o = hybridbeam(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn sweep_covers_the_grid() {
    let mut args = vec!["sweep", "--methods", "geb", "--axis", "alpha=0.9,0.99", "--axis", "nq=1,2"];
    args.extend(TINY);
    let o = hybridbeam(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert!(!rows.is_empty());
    for alpha in ["0.9", "0.99"] {
        for nq in ["1", "2"] {
            assert!(
                rows.iter().any(|r| {
                    let f: Vec<&str> = r.split(',').collect();
                    f[5] == alpha && f[8] == nq
                }),
                "missing alpha={alpha} nq={nq}"
            );
        }
    }
}

#[test]
fn pattern_and_spread_emit_series() {
    let o = hybridbeam(&["pattern", "--small", "--methods", "dft", "--points", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("dft:col_0"));
    let o = hybridbeam(&["spread", "--antennas", "16", "--sigma-est", "0.5,2", "--points", "9"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).lines().count() > 9);
}

#[test]
fn config_errors_exit_one() {
    let cases: [&[&str]; 6] = [
        &["config", "--small", "--alpha", "1.5"],
        &["config", "--small", "--set", "no_such_key=1"],
        &["config", "--small", "--set", "alpha"],
        &["config", "--scenario", "/nonexistent/scenario.toml"],
        &["run", "--small", "--methods", "bogus"],
        &["spread", "--antennas", "0"],
    ];
    for args in cases {
        let o = hybridbeam(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("error"), "{args:?}");
    }
}

#[test]
fn malformed_scenario_file_exits_one() {
    let path = scratch("broken.toml");
    std::fs::write(&path, "num_antennas = \"many\"\n").unwrap();
    let o = hybridbeam(&["config", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(hybridbeam(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(hybridbeam(&["run", "--alpha", "high"]).status.code(), Some(1));
    assert_eq!(hybridbeam(&["sweep", "--small"]).status.code(), Some(1));
    let help = hybridbeam(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("sweep"));
}
