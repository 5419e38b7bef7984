use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sr_precoding::codebook::load_codebook;
use sr_precoding_cli::commands::{cell_codebook, cell_hash, report_path, CSV_HEADER};
use sr_precoding_cli::spec::ExperimentSpec;
use tempfile::TempDir;

fn srprec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srprec"))
        .args(args)
        .current_dir(dir)
        .env_remove("SRPREC_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &str = r#"
name = "small"
output_dir = "out"
bits = 1

[sim]
dims = { nt = 2, nr = 2, k = 2 }
snr_db = [0.0, 10.0]
n_blocks = 10
beta_bits = 2
quantizer_training_draws = 32
master_seed = 3

[codebook]
source = "random"
seed = 5
"#;

fn write_spec(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn empty_sweep_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        "e.toml",
        &format!("{SMALL}\n[sweep]\nbits = []\n"),
    );
    let o = srprec(tmp.path(), &["simulate", &spec]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty sweep"));
}

#[test]
fn missing_spec_is_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let o = srprec(tmp.path(), &["simulate", "nope.toml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn single_cell_run_then_cache_then_force() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(tmp.path(), "s.toml", SMALL);
    let o = srprec(tmp.path(), &["simulate", &spec, "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("1 cell(s)"));

    let out = tmp.path().join("out");
    let csvs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    assert_eq!(csvs.len(), 1);
    let body = fs::read_to_string(&csvs[0]).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,"));
    let fields: Vec<&str> = lines[2].split(',').collect();
    assert_eq!(fields[0], "10");
    assert_eq!((fields[3], fields[4]), ("200", "10"));

    // The metadata hash validates against the configuration and codebook.
    let meta_path = csvs[0].with_extension("json");
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
    let parsed = ExperimentSpec::load(&tmp.path().join(&spec)).unwrap();
    let cell = &parsed.cells()[0];
    let cb = cell_codebook(&parsed.codebook, cell, &out, false).unwrap();
    assert_eq!(meta["hash"], cell_hash(cell, &parsed.codebook, &cb));
    assert_eq!(meta["seed"], 3);

    let again = srprec(tmp.path(), &["simulate", &spec]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("skipped (cached)"));
    assert_eq!(fs::read_to_string(&csvs[0]).unwrap(), body);

    let forced = srprec(tmp.path(), &["simulate", &spec, "--force"]);
    assert!(!stdout(&forced).contains("skipped"));
    assert_eq!(fs::read_to_string(&csvs[0]).unwrap(), body);

    let reseeded = srprec(tmp.path(), &["simulate", &spec, "--seed", "99"]);
    assert!(!stdout(&reseeded).contains("skipped"));
}

#[test]
fn worker_count_never_changes_csv_bytes() {
    let mut bodies = Vec::new();
    for workers in ["1", "4", "8"] {
        let tmp = TempDir::new().unwrap();
        let spec = write_spec(tmp.path(), "s.toml", SMALL);
        let o = srprec(tmp.path(), &["simulate", &spec, "--workers", workers]);
        assert!(o.status.success());
        let csv = tmp.path().join("out/B1_se0.002_th0_rho0_pe0.csv");
        bodies.push(fs::read(csv).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
    assert_eq!(bodies[0], bodies[2]);
}

#[test]
fn sweep_writes_one_csv_and_metadata_per_cell() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        "g.toml",
        &format!("{SMALL}\n[sweep]\nbits = [0, 1]\npe = [0.0, 0.01]\n"),
    );
    let o = srprec(tmp.path(), &["simulate", &spec]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("4 cell(s)"));
    let names: Vec<String> = fs::read_dir(tmp.path().join("out"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".json")).count(), 4);
    assert_eq!(names.len(), 8);
}

#[test]
fn output_root_is_honoured() {
    let tmp = TempDir::new().unwrap();
    let root = TempDir::new().unwrap();
    let spec = write_spec(tmp.path(), "s.toml", SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_srprec"))
        .args(["simulate", &spec])
        .current_dir(tmp.path())
        .env("SRPREC_OUTPUT_ROOT", root.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(root.path().join("out/B1_se0.002_th0_rho0_pe0.csv").exists());
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn random_codebook_file() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("r.toml"), "nr = 4\nbits = 2\nseed = 11\n").unwrap();
    let o = srprec(
        tmp.path(),
        &["codebook", "random", "r.toml", "-o", "cb.txt"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cb = load_codebook(&tmp.path().join("cb.txt")).unwrap();
    assert_eq!(cb.len(), 4);
    assert_eq!(cb.nr(), 4);
    assert_eq!(cb.seed(), Some(11));
}

fn msc(dir: &Path, cfg: &str) -> serde_json::Value {
    fs::write(dir.join("m.toml"), cfg).unwrap();
    let o = srprec(dir, &["codebook", "msc", "m.toml", "-o", "msc.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("coverage"));
    let text = fs::read_to_string(report_path(&dir.join("msc.txt"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn msc_with_whole_pool_is_uniform_by_construction() {
    let tmp = TempDir::new().unwrap();
    let report = msc(
        tmp.path(),
        "bits = 2\nalpha = 4\nexperiments = 40\nsigma_e_sq = 0.002\ndims = { nt = 2, nr = 2, k = 2 }\n",
    );
    let mut chosen: Vec<u64> = report["chosen"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    chosen.sort();
    assert_eq!(chosen, vec![0, 1, 2, 3]);
    assert_eq!(report["coverage"], 1.0);
}

#[test]
fn msc_coverage_matches_a_histogram_recount() {
    let tmp = TempDir::new().unwrap();
    let report = msc(
        tmp.path(),
        "bits = 3\nalpha = 32\nexperiments = 200\nsigma_e_sq = 0.002\nseed = 4\ndims = { nt = 2, nr = 2, k = 2 }\n",
    );
    let hist: Vec<u64> = report["histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let mut sorted = hist.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let top8: u64 = sorted[..8].iter().sum();
    let total: u64 = hist.iter().sum();
    let skipped = report["skipped"].as_u64().unwrap();
    assert_eq!(total + skipped, 200);
    let coverage = report["coverage"].as_f64().unwrap();
    assert!((coverage - top8 as f64 / total as f64).abs() < 1e-12);
    let cb = load_codebook(&tmp.path().join("msc.txt")).unwrap();
    assert_eq!(cb.len(), 8);
}

#[test]
fn analyze_writes_analytic_curves() {
    let tmp = TempDir::new().unwrap();
    let spec = write_spec(
        tmp.path(),
        "a.toml",
        &format!("{SMALL}\n[analysis]\ndraws = 20\ngamma = 1.0\n"),
    );
    let o = srprec(tmp.path(), &["analyze", &spec]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("efficiency"));
    let body =
        fs::read_to_string(tmp.path().join("out/analytic/B1_se0.002_th0_rho0_pe0.csv")).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "snr_db,ser,p_perfect,draws,source");
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",analytic")));
    // Γ = 1 gives P_b = (1 − √½)/2 on each of the B + C = 3 side bits.
    let p_ok: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!((p_ok - (1.0 - 0.1464466094067262f64).powi(3)).abs() < 1e-9);
}
