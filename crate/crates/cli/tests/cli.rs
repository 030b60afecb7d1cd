use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use boltzsim::{Snapshot, Vec3};
use boltzsim_cli::io::{load_samples, save_snapshot};
use boltzsim_cli::run::sampled_initial;
use boltzsim_cli::{parse_config, run, RunOptions};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boltzsim"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    fs::write(&p, body).unwrap();
    p
}

fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

const SMALL_SIM: &str = "
[sim]
n_particles = 300
t_end = 0.1
snapshot_times = [0.0, 0.05, 0.1]
";

#[test]
fn initial_snapshot_matches_the_sampled_cloud() {
    let d = tempfile::tempdir().unwrap();
    let text = format!(
        "subcommand = \"simulate\"\nseed = 9\noutput_dir = {:?}\n[sim]\nn_particles = 500\nt_end = 0.0\nsnapshot_times = [0.0]\n",
        d.path().join("out")
    );
    let cfg = parse_config(&text, Path::new("exp.toml")).unwrap();
    let m = run(&cfg, &RunOptions::default()).unwrap();
    assert!(m.passed());
    let loaded = load_samples(&d.path().join("out/snapshots/t_0.0000.csv")).unwrap();
    assert_eq!(loaded.samples(), sampled_initial(&cfg).unwrap().as_slice());
}

#[test]
fn snapshot_round_trip_is_exact() {
    let d = tempfile::tempdir().unwrap();
    let pts = vec![Vec3::new(0.1, -1e-300, 3.0), Vec3::new(1.0 / 3.0, 2e10, -0.0), Vec3::new(f64::MIN_POSITIVE, 1.0, 7.25)];
    let sn = Snapshot::new(0.5, boltzsim::EmpiricalMeasure::uniform(pts.clone()).unwrap(), &[2.0]).unwrap();
    let p = d.path().join("s.csv");
    save_snapshot(&p, &sn, 4, "abc").unwrap();
    assert_eq!(load_samples(&p).unwrap().samples(), pts.as_slice());
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.with_extension("json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 4);
    assert_eq!(side["config_hash"], "abc");
    assert_eq!(side["n"], 3);
}

#[test]
fn deterministic_runs_are_bit_identical() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL_SIM);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let out = d.path().join(format!("run{i}"));
        let o = run_bin(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--deterministic",
            "--threads",
            threads,
            "--output-dir",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        let csv = fs::read(out.join("snapshots/t_0.1000.csv")).unwrap();
        outputs.push((manifest["summary"].clone(), manifest["config_hash"].clone(), csv));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn thread_count_does_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), SMALL_SIM);
    let mut csvs = Vec::new();
    for threads in ["1", "3"] {
        let out = d.path().join(format!("t{threads}"));
        let o = run_bin(&["simulate", "--config", cfg.to_str().unwrap(), "--threads", threads, "--output-dir", out.to_str().unwrap()]);
        assert!(o.status.success());
        csvs.push(fs::read(out.join("snapshots/t_0.1000.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn invalid_config_fails_with_a_line_number() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "seed = 1\n[sim]\nn_particles = 10\ndt = \"fast\"\n");
    let o = run_bin(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("exp.toml:4:"), "{err}");

    let cfg = write_config(d.path(), "[sim]\nscheme = \"leapfrog\"\n");
    let o = run_bin(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exp.toml:2:"));
}

#[test]
fn domain_errors_and_missing_subcommand_exit_nonzero() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("o");
    let cfg = write_config(d.path(), "[sim]\nnu = 1.5\n");
    let o = run_bin(&["simulate", "--config", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nu"));
    let o = run_bin(&["--output-dir", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn exponents_table_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("exp");
    let o = run_bin(&["exponents", "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("closed_forms"));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "exponents");
    assert_eq!(m["failed"], serde_json::json!([]));
    assert!(m["summary"]["max_abs_gap"].as_f64().unwrap() <= 1e-10);
    let table = fs::read_to_string(out.join("sweeps/exponents.csv")).unwrap();
    assert_eq!(table.lines().count(), 1001);
    assert!(table.starts_with("nu,s_hard,"));
}

#[test]
fn subcommand_can_come_from_the_config() {
    let d = tempfile::tempdir().unwrap();
    let body = format!("subcommand = \"entropy\"\noutput_dir = {:?}\n{SMALL_SIM}", d.path().join("e"));
    let cfg = write_config(d.path(), &body);
    let o = run_bin(&["--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("e/sweeps/entropy.csv").exists());
}

#[test]
fn streaming_load_of_a_million_rows() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("big.csv");
    {
        let mut f = std::io::BufWriter::new(fs::File::create(&p).unwrap());
        writeln!(f, "t,vx,vy,vz").unwrap();
        for i in 0..1_000_000u32 {
            let x = i as f64 * 1e-6;
            writeln!(f, "1.0,{x},{},{}", -x, 0.5).unwrap();
        }
    }
    let m = load_samples(&p).unwrap();
    assert_eq!(m.len(), 1_000_000);
    let x = 999_999f64 * 1e-6;
    assert_eq!(m.samples()[999_999], Vec3::new(x, -x, 0.5));
}
