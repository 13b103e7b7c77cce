//! `flipchip`: command-line driver for the flip-chip readout design library.
//!
//! Five subcommands cover the workflow: `cpw` traces line parameters and
//! frequency-shift curves versus spacing, `optimize` finds the
//! spacing-insensitive etched fraction, `purcell` sweeps filtered qubit
//! lifetimes, `chip` simulates a full tilted-chip frequency table and
//! `analyze` compares designs from such tables.
//!
//! All outputs land in one directory, are written to a temp file first and
//! renamed into place, and carry the SHA-256 of the effective configuration
//! (as a `# config_sha256` comment line in CSV, as a field in JSON) so any
//! result file can be traced back to its inputs.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 computation
//! error (a solver or model rejected valid-looking inputs).

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{OutputFormat, RunConfig};
use flipchip::analysis::{self, AnalysisError};
use flipchip::chipmodel::{self, FrequencyTable};
use flipchip::cpw::{self, Facing, ResonatorDesign};
use flipchip::design;
use flipchip::purcell::{self, SpuriousMode};

const EXIT_CONFIG: u8 = 2;
const EXIT_COMPUTE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "flipchip",
    version,
    about = "Design toolkit for flip-chip superconducting readout circuits"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: `out_dir` from the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format where both are supported (overrides the configuration).
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Override the chip-simulation noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Line parameters and frequency-shift curves versus chip spacing.
    Cpw,
    /// Solve for the spacing-insensitive etched fraction.
    Optimize,
    /// Sweep Purcell-limited qubit lifetimes over filter bandwidths.
    Purcell,
    /// Simulate a frequency table for a tilted two-chip assembly.
    Chip,
    /// Compare designs from one or more frequency tables.
    Analyze {
        /// Frequency table CSVs; columns of later files are re-indexed
        /// after earlier ones.
        #[arg(required = true)]
        tables: Vec<PathBuf>,
    },
}

/// A failure with its exit-code class.
enum Failure {
    Config(String),
    Compute(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Compute(_) => EXIT_COMPUTE,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Compute(m) => m,
        }
    }
}

fn compute<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Compute(e.to_string())
}

type Files = Vec<(String, String)>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Failure::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::from_toml(&text).map_err(Failure::Config)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.chip.seed = seed;
    }
    if let Some(format) = cli.format {
        config.format = format;
    }
    config.validate().map_err(Failure::Config)?;

    let hash = config_sha256(&config)?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.out_dir));

    let files = match &cli.command {
        Command::Cpw => cmd_cpw(&config, &hash)?,
        Command::Optimize => cmd_optimize(&config, &hash)?,
        Command::Purcell => cmd_purcell(&config, &hash)?,
        Command::Chip => cmd_chip(&config, &hash)?,
        Command::Analyze { tables } => cmd_analyze(&config, &hash, tables)?,
    };
    emit_all(&out_dir, &files)?;
    for (name, _) in &files {
        println!("{}", out_dir.join(name).display());
    }
    Ok(())
}

/// SHA-256 (hex) of the effective configuration's canonical TOML text.
fn config_sha256(config: &RunConfig) -> Result<String, Failure> {
    let text = toml::to_string(config)
        .map_err(|e| Failure::Config(format!("cannot serialize config: {e}")))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// 12 significant digits; non-finite values print as `inf`/`-inf`/`NaN`.
fn sig12(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.11e}")
    } else {
        format!("{x}")
    }
}

fn csv_table<I: IntoIterator<Item = String>>(hash: &str, header: &str, rows: I) -> String {
    let mut out = format!("# config_sha256 {hash}\n{header}\n");
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

fn json_with_hash(hash: &str, mut value: serde_json::Value) -> String {
    if let Some(map) = value.as_object_mut() {
        map.insert("config_sha256".into(), json!(hash));
    }
    let mut text = serde_json::to_string_pretty(&value).expect("json render");
    text.push('\n');
    text
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Stage every file as `.<name>.tmp`, then rename all into place, so a
/// failure never leaves a partially written table behind.
fn emit_all(dir: &Path, files: &Files) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Compute(format!("cannot create {}: {e}", dir.display())))?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let clean = |staged: &[(PathBuf, PathBuf)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for (name, content) in files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, content) {
            clean(&staged);
            return Err(Failure::Compute(format!(
                "cannot write {}: {e}",
                tmp.display()
            )));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dest) in &staged {
        if let Err(e) = fs::rename(tmp, dest) {
            clean(&staged);
            return Err(Failure::Compute(format!(
                "cannot move {} into place: {e}",
                dest.display()
            )));
        }
    }
    Ok(())
}

/// The resonator template shared by `cpw` and `optimize`.
fn base_design(config: &RunConfig) -> ResonatorDesign {
    ResonatorDesign {
        total_length_mm: config.resonator.total_length_mm,
        gamma: 0.0,
        cross: config.geometry,
        etch_position: config.resonator.etch_position,
        model: config.resonator.model,
    }
}

fn cmd_cpw(config: &RunConfig, hash: &str) -> Result<Files, Failure> {
    let c = &config.cpw;
    let hs = linspace(c.h_min_um, c.h_max_um, c.h_steps);

    let mut rows = Vec::new();
    for &h in &hs {
        for facing in [Facing::Metal, Facing::Dielectric] {
            let p = cpw::line_params(&config.geometry.at(h, facing)).map_err(compute)?;
            rows.push(format!(
                "{},{},{},{},{},{}",
                sig12(h),
                facing,
                sig12(p.c_per_len),
                sig12(p.l_per_len),
                sig12(p.char_impedance),
                sig12(p.phase_velocity)
            ));
        }
    }
    let mut files: Files = vec![(
        "cl_vs_h.csv".into(),
        csv_table(hash, "h_um,facing,c_f_per_m,l_h_per_m,z_ohm,v_m_per_s", rows),
    )];

    for &gamma in &c.gammas {
        let design = base_design(config).with_gamma(gamma);
        let curve =
            cpw::shift_curve(&design, &hs, config.resonator.h_ref_um).map_err(compute)?;
        let rows = curve.iter().map(|p| {
            format!(
                "{},{},{}",
                sig12(p.spacing_um),
                sig12(p.freq_ghz),
                sig12(p.shift_percent)
            )
        });
        files.push((
            format!("shift_gamma_{gamma:.3}.csv"),
            csv_table(hash, "h_um,freq_GHz,shift_percent", rows),
        ));
    }
    Ok(files)
}

fn cmd_optimize(config: &RunConfig, hash: &str) -> Result<Files, Failure> {
    let r = &config.resonator;
    let gamma_star =
        design::optimal_gamma(&config.geometry, r.total_length_mm, r.h_ref_um, r.model)
            .map_err(compute)?;
    let design = base_design(config);
    let residual =
        cpw::sensitivity(&design.with_gamma(gamma_star), r.h_ref_um).map_err(compute)?;
    let baseline = cpw::sensitivity(&design, r.h_ref_um).map_err(compute)?;

    let file = match config.format {
        OutputFormat::Json => (
            "optimize.json".to_string(),
            json_with_hash(
                hash,
                json!({
                    "gamma_star": gamma_star,
                    "residual_mhz_per_um": residual,
                    "baseline_mhz_per_um": baseline,
                    "h_ref_um": r.h_ref_um,
                    "model": r.model,
                }),
            ),
        ),
        OutputFormat::Csv => (
            "optimize.csv".to_string(),
            csv_table(
                hash,
                "gamma_star,residual_mhz_per_um,baseline_mhz_per_um",
                [format!(
                    "{},{},{}",
                    sig12(gamma_star),
                    sig12(residual),
                    sig12(baseline)
                )],
            ),
        ),
    };
    Ok(vec![file])
}

fn cmd_purcell(config: &RunConfig, hash: &str) -> Result<Files, Failure> {
    let rows = purcell::sweep(&config.purcell.sweep).map_err(compute)?;

    let sweep_file = match config.format {
        OutputFormat::Csv => (
            "purcell_sweep.csv".to_string(),
            csv_table(
                hash,
                "kappa_f_MHz,step_MHz,delta_rf_MHz,g_qr_MHz,g_rf_MHz,t1_us",
                rows.iter().map(|r| {
                    format!(
                        "{},{},{},{},{},{}",
                        sig12(r.kappa_f_mhz),
                        sig12(r.step_mhz),
                        sig12(r.delta_rf_mhz),
                        sig12(r.g_qr_mhz),
                        sig12(r.g_rf_mhz),
                        sig12(r.t1_us)
                    )
                }),
            ),
        ),
        OutputFormat::Json => (
            "purcell_sweep.json".to_string(),
            json_with_hash(hash, json!({ "rows": rows })),
        ),
    };

    let sp = &config.purcell.spurious;
    let mode = SpuriousMode {
        omega_mode_ghz: sp.omega_mode_ghz,
        q_coupling: sp.q_coupling,
        g_mhz: sp.g_mhz,
    };
    let t1_ms = purcell::spurious_mode_t1(config.purcell.sweep.omega_q_ghz, &mode);
    let spurious = json_with_hash(
        hash,
        json!({
            "omega_mode_ghz": sp.omega_mode_ghz,
            "q_coupling": sp.q_coupling,
            "g_mhz": sp.g_mhz,
            "t1_ms": t1_ms,
            "reference_t1_ms": sp.reference_t1_ms,
        }),
    );

    Ok(vec![sweep_file, ("spurious.json".to_string(), spurious)])
}

fn cmd_chip(config: &RunConfig, hash: &str) -> Result<Files, Failure> {
    let ch = &config.chip;
    let r = &config.resonator;

    let scan = chipmodel::synthetic_scan(&ch.layout, &ch.scenario).map_err(compute)?;
    let map = chipmodel::spacing_map(&scan).map_err(compute)?;
    let cal = config.etch_calibration().map_err(Failure::Config)?;

    // One allocation per distinct etched length; columns sharing an etched
    // length share the plan.
    let mut plans: BTreeMap<u64, design::AllocationPlan> = BTreeMap::new();
    let mut gammas: BTreeMap<u64, f64> = BTreeMap::new();
    for &etched in &ch.layout.etched_length_um {
        let key = etched.to_bits();
        if plans.contains_key(&key) {
            continue;
        }
        let gamma = design::gamma_from_etched_length(&cal, etched).map_err(compute)?;
        let plan = design::allocate(
            ch.filter_center_ghz,
            ch.step_mhz,
            ch.layout.rows,
            &config.geometry,
            gamma,
            r.h_ref_um,
            r.model,
        )
        .map_err(compute)?;
        plans.insert(key, plan);
        gammas.insert(key, gamma);
    }

    let mut column_designs = Vec::with_capacity(ch.layout.columns);
    let mut column_plans = Vec::with_capacity(ch.layout.columns);
    for &etched in &ch.layout.etched_length_um {
        let key = etched.to_bits();
        column_designs.push(base_design(config).with_gamma(gammas[&key]));
        column_plans.push(plans[&key].clone());
    }

    let table = chipmodel::simulate_chip(
        &ch.layout,
        &map,
        &column_designs,
        &column_plans,
        ch.noise_sigma_mhz,
        ch.seed,
    )
    .map_err(compute)?;

    let mut files: Files = vec![
        (
            "scan.csv".into(),
            format!("# config_sha256 {hash}\n{}", chipmodel::scan_to_csv(&scan)),
        ),
        (
            "spacing.json".into(),
            json_with_hash(hash, serde_json::to_value(map.report()).expect("json")),
        ),
        (
            "frequencies.csv".into(),
            format!("# config_sha256 {hash}\n{}", table.to_csv()),
        ),
    ];
    for (key, plan) in &plans {
        let etched = f64::from_bits(*key);
        let rows = plan.entries.iter().map(|e| {
            format!(
                "{},{},{}",
                e.index,
                sig12(e.target_freq_ghz),
                sig12(e.length_mm)
            )
        });
        files.push((
            format!("allocation_etched_{etched}um.csv"),
            csv_table(hash, "index,target_freq_GHz,length_mm", rows),
        ));
    }
    Ok(files)
}

fn cmd_analyze(config: &RunConfig, hash: &str, tables: &[PathBuf]) -> Result<Files, Failure> {
    let mut merged = FrequencyTable::default();
    let mut column_offset = 0usize;
    for path in tables {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let table = FrequencyTable::from_csv(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let max_col = table.rows.iter().map(|r| r.column).max().unwrap_or(0);
        for mut row in table.rows {
            row.column += column_offset;
            merged.rows.push(row);
        }
        column_offset += max_col + 1;
    }

    let targets: Vec<(f64, f64)> = config.analyze.targets.iter().map(|p| (p[0], p[1])).collect();
    let report = analysis::compare_designs(&merged, &targets, config.analyze.exclude_tail)
        .map_err(|e| match e {
            AnalysisError::Numerics(_) => compute(e),
            other => Failure::Config(format!("frequency table: {other}")),
        })?;

    let mut value: serde_json::Value =
        serde_json::from_str(&report.to_json()).expect("report json");
    if let Some(map) = value.as_object_mut() {
        map.insert("config_sha256".into(), json!(hash));
    }
    let mut json_text = serde_json::to_string_pretty(&value).expect("json render");
    json_text.push('\n');

    let text = format!("# config_sha256 {hash}\n{}", report.to_text_table());
    Ok(vec![
        ("report.json".into(), json_text),
        ("report.txt".into(), text),
    ])
}
