//! End-to-end tests of the `flipchip` binary: exit codes, output layout,
//! determinism and the optimize -> chip -> analyze pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flipchip"))
}

fn run_in(dir: &Path, config: Option<&str>, args: &[&str]) -> (Output, PathBuf) {
    let out = dir.join("out");
    let mut cmd = bin();
    if let Some(text) = config {
        let path = dir.join("config.toml");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(&path);
    }
    cmd.arg("--out").arg(&out);
    cmd.args(args);
    (cmd.output().unwrap(), out)
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Numeric data rows of a CSV, skipping `#` comments and the header.
fn data_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

fn group<'a>(report: &'a Value, etched: f64) -> &'a Value {
    report["groups"]
        .as_array()
        .unwrap()
        .iter()
        .find(|g| g["etched_length_um"].as_f64() == Some(etched))
        .unwrap_or_else(|| panic!("no group for {etched} um"))
}

#[test]
fn cpw_writes_expected_tables_and_reruns_bit_identically() {
    let tmp = TempDir::new().unwrap();
    let (out, dir_a) = run_in(tmp.path(), None, &["cpw"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let names = [
        "cl_vs_h.csv",
        "shift_gamma_0.000.csv",
        "shift_gamma_0.820.csv",
        "shift_gamma_1.000.csv",
    ];
    for name in names {
        assert!(dir_a.join(name).exists(), "missing {name}");
    }
    let shift = read(&dir_a.join("shift_gamma_0.000.csv"));
    assert_eq!(shift.lines().nth(1).unwrap(), "h_um,freq_GHz,shift_percent");
    let rows = data_rows(&shift);
    assert_eq!(rows.len(), 41);
    let at_ref = rows.iter().find(|r| r[0] == 9.0).expect("h = 9 row");
    assert_eq!(at_ref[2], 0.0, "shift must vanish at the reference spacing");

    let tmp_b = TempDir::new().unwrap();
    let (out_b, dir_b) = run_in(tmp_b.path(), None, &["cpw"]);
    assert_eq!(code(&out_b), 0);
    for name in names {
        assert_eq!(
            read(&dir_a.join(name)),
            read(&dir_b.join(name)),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn nonpositive_spacing_is_a_config_error_with_no_output() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp.path(), Some("[cpw]\nh_min_um = -1.0\n"), &["cpw"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.exists(), "no output may be written on a config error");
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("h_min_um"), "stderr should name the bad field: {err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp.path(), Some("[cpw]\nbogus = 1\n"), &["cpw"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.exists());
}

#[test]
fn unreachable_linewidth_target_is_a_compute_error() {
    let config = "[purcell.sweep]\nkappa_r_mhz = 500.0\nkappa_f_mhz = [300.0]\n";
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp.path(), Some(config), &["purcell"]);
    assert_eq!(code(&out), 3);
    assert!(!dir.exists(), "no partial output on a compute error");
}

#[test]
fn vacuum_substrate_has_no_insensitive_fraction() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(
        tmp.path(),
        Some("[geometry]\nsubstrate_eps = 1.0\n"),
        &["optimize"],
    );
    assert_eq!(code(&out), 3);
    assert!(!dir.exists());
}

#[test]
fn optimize_json_parses_and_round_trips() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp.path(), None, &["optimize", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = read(&dir.join("optimize.json"));
    let v: Value = serde_json::from_str(&text).unwrap();
    let gs = v["gamma_star"].as_f64().unwrap();
    assert!(gs > 0.0 && gs < 1.0);
    assert!(v["residual_mhz_per_um"].as_f64().unwrap().abs() < 1e-6);
    assert!(v["baseline_mhz_per_um"].as_f64().unwrap().abs() > 1.0);
    assert!(v["config_sha256"].as_str().unwrap().len() == 64);
    let again: Value = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
    assert_eq!(again, v);
}

#[test]
fn purcell_defaults_hit_the_documented_band_edge_lifetime() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp.path(), None, &["purcell"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let sweep = read(&dir.join("purcell_sweep.csv"));
    assert_eq!(
        sweep.lines().nth(1).unwrap(),
        "kappa_f_MHz,step_MHz,delta_rf_MHz,g_qr_MHz,g_rf_MHz,t1_us"
    );
    let rows = data_rows(&sweep);
    assert_eq!(rows.len(), 3 * 14);
    let edge = rows
        .iter()
        .find(|r| r[0] == 600.0 && r[1] == 30.0 && r[2] == -195.0)
        .expect("band-edge row");
    assert!(
        (300.0..=500.0).contains(&edge[5]),
        "band-edge lifetime {} us outside [300, 500]",
        edge[5]
    );

    let spurious: Value = serde_json::from_str(&read(&dir.join("spurious.json"))).unwrap();
    let t1_ms = spurious["t1_ms"].as_f64().unwrap();
    assert!(t1_ms > 0.1, "spurious-mode T1 {t1_ms} ms implausibly small");
    assert_eq!(spurious["reference_t1_ms"].as_f64(), Some(14.5));
}

#[test]
fn purcell_single_resonator_sits_at_the_filter_center() {
    let config = "[purcell.sweep]\nresonator_count = 1\nkappa_f_mhz = [600.0]\n";
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp.path(), Some(config), &["purcell"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&read(&dir.join("purcell_sweep.csv")));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2], 0.0, "single resonator must sit at zero detuning");
    assert!(rows[0][5] > 0.0);
}

#[test]
fn seed_override_changes_the_config_hash_but_not_purcell_rows() {
    let tmp_a = TempDir::new().unwrap();
    let (out_a, dir_a) = run_in(tmp_a.path(), None, &["purcell"]);
    assert_eq!(code(&out_a), 0);
    let tmp_b = TempDir::new().unwrap();
    let (out_b, dir_b) = run_in(tmp_b.path(), None, &["purcell", "--seed", "42"]);
    assert_eq!(code(&out_b), 0);

    let a = read(&dir_a.join("purcell_sweep.csv"));
    let b = read(&dir_b.join("purcell_sweep.csv"));
    assert_ne!(a.lines().next(), b.lines().next(), "hash must track the seed");
    assert_eq!(
        a.lines().skip(1).collect::<Vec<_>>(),
        b.lines().skip(1).collect::<Vec<_>>(),
        "sweep data must not depend on the chip seed"
    );
}

#[test]
fn chip_is_deterministic_per_seed_even_with_noise() {
    let config = "[chip]\nnoise_sigma_mhz = 0.5\n";
    let tmp_a = TempDir::new().unwrap();
    let (out_a, dir_a) = run_in(tmp_a.path(), Some(config), &["chip"]);
    assert_eq!(code(&out_a), 0, "{}", String::from_utf8_lossy(&out_a.stderr));
    let tmp_b = TempDir::new().unwrap();
    let (out_b, dir_b) = run_in(tmp_b.path(), Some(config), &["chip"]);
    assert_eq!(code(&out_b), 0);

    for name in ["scan.csv", "spacing.json", "frequencies.csv"] {
        assert_eq!(
            read(&dir_a.join(name)),
            read(&dir_b.join(name)),
            "{name} differs between identical runs"
        );
    }

    // A different frequency-noise seed changes the hash header everywhere,
    // so compare data bodies: the scan must not move, the frequencies must.
    let body = |path: &Path| {
        read(path)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let tmp_c = TempDir::new().unwrap();
    let (out_c, dir_c) = run_in(tmp_c.path(), Some(config), &["chip", "--seed", "99"]);
    assert_eq!(code(&out_c), 0);
    assert_eq!(body(&dir_a.join("scan.csv")), body(&dir_c.join("scan.csv")));
    assert_ne!(
        body(&dir_a.join("frequencies.csv")),
        body(&dir_c.join("frequencies.csv")),
        "a different noise seed must move the noisy frequencies"
    );
}

#[test]
fn optimize_chip_analyze_pipeline_shows_the_expected_improvement() {
    let tmp = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp.path(), None, &["optimize", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let opt: Value = serde_json::from_str(&read(&dir.join("optimize.json"))).unwrap();
    let gamma_star = opt["gamma_star"].as_f64().unwrap();

    let config = format!(
        "[chip]\ncalibration = [[0.0, 0.0], [330.0, {gamma_star}]]\n"
    );
    let tmp_chip = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp_chip.path(), Some(&config), &["chip"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = dir.join("frequencies.csv");

    let tmp_an = TempDir::new().unwrap();
    let (out, dir) = run_in(tmp_an.path(), None, &["analyze", table.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&read(&dir.join("report.json"))).unwrap();

    let tuned = group(&report, 330.0);
    let baseline = group(&report, 0.0);
    assert_eq!(baseline["improvement_factor"].as_f64(), Some(1.0));
    let improvement = tuned["improvement_factor"].as_f64().unwrap();
    assert!(
        improvement >= 3.0,
        "tilt-insensitive columns improved only {improvement:.2}x"
    );
    let off_tuned = tuned["off_target_mhz"].as_f64().unwrap();
    let off_base = baseline["off_target_mhz"].as_f64().unwrap();
    assert!(
        off_tuned * 5.0 <= off_base,
        "step error {off_tuned:.3} MHz not five times below baseline {off_base:.3} MHz"
    );
    assert!(read(&dir.join("report.txt")).contains("etched_um"));
}

#[test]
fn analyze_without_baseline_columns_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("column,row,etched_length_um,freq_GHz\n");
    for row in 0..6 {
        csv.push_str(&format!("0,{row},330,{}\n", 6.5 + 0.03 * row as f64));
        csv.push_str(&format!("1,{row},165,{}\n", 6.5 + 0.03 * row as f64));
    }
    let table = tmp.path().join("table.csv");
    fs::write(&table, csv).unwrap();
    let (out, dir) = run_in(tmp.path(), None, &["analyze", table.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!dir.exists());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("baseline"), "stderr should explain: {err}");
}

#[test]
fn analyze_reports_exact_ladders_as_infinite_improvement() {
    // A step of 1/32 GHz on a 6.5 GHz base is exactly representable, so a
    // perfect ladder fits with residual exactly zero.
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("column,row,etched_length_um,freq_GHz\n");
    for col in 0..2 {
        for row in 0..8 {
            let f = 6.5 + 0.03125 * row as f64;
            csv.push_str(&format!("{col},{row},{},{f}\n", 330 * col));
        }
    }
    let table = tmp.path().join("table.csv");
    fs::write(&table, csv).unwrap();
    let config = "[analyze]\ntargets = [[0.0, 31.25], [330.0, 31.25]]\n";
    let (out, dir) = run_in(tmp.path(), Some(config), &["analyze", table.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let report: Value = serde_json::from_str(&read(&dir.join("report.json"))).unwrap();
    for etched in [0.0, 330.0] {
        let g = group(&report, etched);
        assert_eq!(g["mean_rmse_mhz"].as_f64(), Some(0.0));
        assert_eq!(g["off_target_mhz"].as_f64(), Some(0.0));
    }
    assert_eq!(group(&report, 0.0)["improvement_factor"].as_f64(), Some(1.0));
    assert_eq!(
        group(&report, 330.0)["improvement_factor"].as_str(),
        Some("inf"),
        "exact ladders must be reported as infinite improvement"
    );
}

#[test]
fn analyze_merges_multiple_tables_with_reindexed_columns() {
    let tmp = TempDir::new().unwrap();
    let mut base = String::from("column,row,etched_length_um,freq_GHz\n");
    let mut etched = String::from("column,row,etched_length_um,freq_GHz\n");
    for row in 0..6 {
        base.push_str(&format!("0,{row},0,{}\n", 6.5 + 0.031 * row as f64));
        etched.push_str(&format!("0,{row},330,{}\n", 6.5 + 0.029 * row as f64));
    }
    let base_path = tmp.path().join("base.csv");
    let etched_path = tmp.path().join("etched.csv");
    fs::write(&base_path, base).unwrap();
    fs::write(&etched_path, etched).unwrap();

    let (out, dir) = run_in(
        tmp.path(),
        None,
        &[
            "analyze",
            base_path.to_str().unwrap(),
            etched_path.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&read(&dir.join("report.json"))).unwrap();
    assert_eq!(group(&report, 0.0)["columns"], serde_json::json!([0]));
    assert_eq!(group(&report, 330.0)["columns"], serde_json::json!([1]));
}
