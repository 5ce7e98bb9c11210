//! Command-line interface: experiment execution (`run`), reaction-wheel A/B
//! comparison (`compare`), terrain artifact export (`terrain`), and config
//! validation (`validate`). All file writes go through a temp-file + atomic
//! rename so outputs are either complete or absent.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, SimConfig};
use crate::metrics::{
    comparison_to_text, compare_runs, episode_metrics, metrics_to_csv, HopMetrics,
};
use crate::model::validate_parameters;
use crate::sim::{log_to_csv, meta_to_text, run_episode, TrajectoryLog};
use crate::terrain::{encode_grayscale, generate_heightfield, profile_slice};

#[derive(Debug, Parser)]
#[command(
    name = "hopper",
    about = "Planar low-gravity bipedal hopper simulator with reaction-wheel attitude control"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override the master RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config key, e.g. `--override sim.rw_enabled=false`.
    /// Repeatable; applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one episode; writes trajectory CSV, per-hop metrics CSV, and a
    /// summary report.
    Run(CommonArgs),
    /// Run the same episode with the reaction wheel on and off; writes both
    /// trajectories and a per-hop deviation-reduction report.
    Compare(CommonArgs),
    /// Generate the terrain artifacts: grayscale PGM heightmap and the
    /// sampled 1-D profile CSV.
    Terrain(CommonArgs),
    /// Check robot parameters and the closed-loop gain stability gate.
    Validate(CommonArgs),
}

/// Exit codes: 0 success, 1 config/I-O error, 2 failed episode or unmet
/// comparison threshold.
pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILED: i32 = 2;

fn fail(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    EXIT_ERROR
}

fn parse_overrides(args: &CommonArgs) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| format!("override `{o}` is not of the form key=value"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        out.push(("sim.rng_seed".into(), seed.to_string()));
    }
    Ok(out)
}

fn load(args: &CommonArgs) -> Result<SimConfig, String> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?,
        None => String::new(),
    };
    let overrides = parse_overrides(args)?;
    load_config(&text, &overrides).map_err(|e| e.to_string())
}

/// Write via a sibling temp file and atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".into(),
    });
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn prepare_out(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn summary_text(log: &TrajectoryLog, metrics: &[HopMetrics], config: &SimConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "episode summary");
    let _ = writeln!(s, "  seed: {}", log.meta.seed);
    let _ = writeln!(s, "  reaction wheel: {}", if log.meta.rw_enabled { "on" } else { "off" });
    let _ = writeln!(s, "  duration logged: {:.3} s", log.records.last().map(|r| r.t).unwrap_or(0.0));
    let _ = writeln!(s, "  completed hops: {}", metrics.len());
    match &log.meta.abort {
        Some(reason) => {
            let _ = writeln!(s, "  aborted: {reason}");
        }
        None => {
            let _ = writeln!(s, "  aborted: no");
        }
    }
    if !metrics.is_empty() {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "hop  peak_dev_deg  rms_rate_deg_s  landing_err_deg  sat_time_s  distance_m  apex_m"
        );
        for m in metrics {
            let _ = writeln!(
                s,
                "{:>3}  {:>12.3}  {:>14.3}  {:>15.3}  {:>10.3}  {:>10.3}  {:>6.3}",
                m.hop_index,
                m.peak_midair_pitch_deviation,
                m.rms_torso_angular_velocity,
                m.landing_pitch_error,
                m.saturation_time,
                m.hop_distance,
                m.apex_height,
            );
        }
        let mean_dist =
            metrics.iter().map(|m| m.hop_distance).sum::<f64>() / metrics.len() as f64;
        let _ = writeln!(s);
        let _ = writeln!(s, "  mean hop distance: {mean_dist:.3} m");
        let _ = writeln!(
            s,
            "  wheel torque limit: {:.1} N*m",
            config.robot.wheel_torque_limit
        );
    }
    s
}

fn run_and_write(
    config: &SimConfig,
    dir: &Path,
    tag: &str,
) -> Result<(TrajectoryLog, Vec<HopMetrics>), String> {
    let log = run_episode(config).map_err(|e| e.to_string())?;
    let metrics = episode_metrics(&log, config.robot.wheel_torque_limit);
    let io = |e: std::io::Error| format!("write failed in {}: {e}", dir.display());
    write_atomic(&dir.join(format!("trajectory{tag}.csv")), log_to_csv(&log).as_bytes())
        .map_err(io)?;
    write_atomic(&dir.join(format!("metrics{tag}.csv")), metrics_to_csv(&metrics).as_bytes())
        .map_err(io)?;
    write_atomic(&dir.join(format!("meta{tag}.txt")), meta_to_text(&log.meta).as_bytes())
        .map_err(io)?;
    Ok((log, metrics))
}

pub fn cmd_run(args: &CommonArgs) -> i32 {
    let config = match load(args) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Err(e) = prepare_out(&args.out) {
        return fail(e);
    }
    let (log, metrics) = match run_and_write(&config, &args.out, "") {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let summary = summary_text(&log, &metrics, &config);
    if let Err(e) = write_atomic(&args.out.join("summary.txt"), summary.as_bytes()) {
        return fail(e);
    }
    print!("{summary}");
    if log.aborted() || metrics.is_empty() {
        EXIT_FAILED
    } else {
        EXIT_OK
    }
}

pub fn cmd_compare(args: &CommonArgs) -> i32 {
    let base = match load(args) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Err(e) = prepare_out(&args.out) {
        return fail(e);
    }
    let on = SimConfig { rw_enabled: true, ..base.clone() };
    let off = SimConfig { rw_enabled: false, ..base.clone() };
    let (log_on, _) = match run_and_write(&on, &args.out, "_rw_on") {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let (log_off, _) = match run_and_write(&off, &args.out, "_rw_off") {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let report = match compare_runs(&log_on, &log_off) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let text = comparison_to_text(&report);
    if let Err(e) = write_atomic(&args.out.join("compare.txt"), text.as_bytes()) {
        return fail(e);
    }
    print!("{text}");
    if report.aggregate_reduction_pct >= base.compare_threshold {
        EXIT_OK
    } else {
        eprintln!(
            "aggregate reduction {:.1}% below threshold {:.1}%",
            report.aggregate_reduction_pct, base.compare_threshold
        );
        EXIT_FAILED
    }
}

pub fn cmd_terrain(args: &CommonArgs) -> i32 {
    let config = match load(args) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Err(e) = prepare_out(&args.out) {
        return fail(e);
    }
    let hf = match generate_heightfield(&config.seeded_terrain()) {
        Ok(h) => h,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_atomic(&args.out.join("heightmap.pgm"), &encode_grayscale(&hf)) {
        return fail(e);
    }
    let profile = match profile_slice(&hf, 0.0) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let mut csv = String::from("x,height,slope\n");
    for i in 0..profile.heights.len() {
        let x = profile.x_start + profile.spacing * i as f64;
        let _ = writeln!(csv, "{:?},{:?},{:?}", x, profile.height(x), profile.slope(x));
    }
    if let Err(e) = write_atomic(&args.out.join("profile.csv"), csv.as_bytes()) {
        return fail(e);
    }
    println!(
        "terrain: {0}x{0} grid over {1} m written to {2}",
        config.terrain.grid_size,
        config.terrain.extent,
        args.out.display()
    );
    EXIT_OK
}

pub fn cmd_validate(args: &CommonArgs) -> i32 {
    let config = match load(args) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    // load() already runs the full validation; report the positive result.
    let report = validate_parameters(&config.robot);
    debug_assert!(report.passed());
    println!(
        "ok: parameters valid; gains kp={} kd={} ki={} pass the closed-loop stability gate",
        config.gains.kp, config.gains.kd, config.gains.ki
    );
    EXIT_OK
}

pub fn dispatch(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Terrain(a) => cmd_terrain(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parsing() {
        let args = CommonArgs {
            config: None,
            out: PathBuf::from("out"),
            seed: Some(9),
            overrides: vec!["sim.rw_enabled=false".into()],
        };
        let o = parse_overrides(&args).unwrap();
        assert_eq!(o[0], ("sim.rw_enabled".into(), "false".into()));
        assert_eq!(o[1], ("sim.rng_seed".into(), "9".into()));
    }

    #[test]
    fn malformed_override_rejected() {
        let args = CommonArgs {
            config: None,
            out: PathBuf::from("out"),
            seed: None,
            overrides: vec!["nonsense".into()],
        };
        assert!(parse_overrides(&args).is_err());
    }

    #[test]
    fn atomic_write_creates_complete_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"hello");
        assert!(!dir.path().join("a.csv.tmp").exists());
    }
}
