//! Hop segmentation and per-hop performance metrics: peak mid-air pitch
//! deviation, RMS torso angular velocity, landing pitch error, saturation
//! time, hop distance, and the reaction-wheel on/off comparison.

use std::fmt::Write as _;

use thiserror::Error;

use crate::control::{HopperPhase, SATURATION_FRACTION};
use crate::model::ITH;
use crate::sim::TrajectoryLog;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mismatched runs: {0}")]
    MismatchedRuns(String),
}

/// Indices into the trajectory log delimiting one hop.
///
/// `stance_start` is the first record of the stance bout leading into this
/// hop's push-off; the hop cycle used for RMS and saturation accounting is
/// `[stance_start, flight_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopInterval {
    pub stance_start: usize,
    /// First record in flight (PushOff -> Flight transition).
    pub flight_start: usize,
    /// Record at the Flight -> Landing transition.
    pub flight_end: usize,
}

/// Segment a log into completed hops (PushOff -> Flight -> Landing). An
/// incomplete trailing flight is excluded.
pub fn segment_hops(log: &TrajectoryLog) -> Vec<HopInterval> {
    let recs = &log.records;
    let mut hops = Vec::new();
    let mut stance_start = 0;
    let mut flight_start: Option<usize> = None;
    for i in 1..recs.len() {
        let (prev, cur) = (recs[i - 1].phase, recs[i].phase);
        if prev == HopperPhase::PushOff && cur == HopperPhase::Flight {
            flight_start = Some(i);
        } else if prev == HopperPhase::Flight && cur == HopperPhase::Landing {
            if let Some(fs) = flight_start.take() {
                hops.push(HopInterval {
                    stance_start,
                    flight_start: fs,
                    flight_end: i,
                });
            }
            stance_start = i;
        }
    }
    hops
}

/// Scalar per-hop metrics. Angles in degrees, times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct HopMetrics {
    pub hop_index: usize,
    pub flight_start: f64,
    pub flight_end: f64,
    pub peak_midair_pitch_deviation: f64,
    pub rms_torso_angular_velocity: f64,
    pub landing_pitch_error: f64,
    pub saturation_time: f64,
    pub hop_distance: f64,
    pub apex_height: f64,
}

/// Compute the metrics of one hop. `prev_touchdown_com_x` is the CoM x at
/// the previous touchdown (episode start for the first hop); `tau_max` is
/// the wheel torque limit used for saturation accounting.
pub fn hop_metrics(
    log: &TrajectoryLog,
    interval: &HopInterval,
    hop_index: usize,
    prev_touchdown_com_x: f64,
    tau_max: f64,
) -> HopMetrics {
    let recs = &log.records;
    let flight = &recs[interval.flight_start..=interval.flight_end];
    let cycle = &recs[interval.stance_start..=interval.flight_end];

    let peak = flight
        .iter()
        .map(|r| r.q[ITH].abs())
        .fold(0.0, f64::max);
    let mean_sq =
        cycle.iter().map(|r| r.qdot[ITH] * r.qdot[ITH]).sum::<f64>() / cycle.len() as f64;
    let landing = recs[interval.flight_end].q[ITH].abs();
    let saturation_time = cycle
        .iter()
        .filter(|r| r.tau[0].abs() >= SATURATION_FRACTION * tau_max)
        .count() as f64
        * log.meta.dt;
    let apex = flight.iter().map(|r| r.com_z).fold(f64::MIN, f64::max);

    HopMetrics {
        hop_index,
        flight_start: recs[interval.flight_start].t,
        flight_end: recs[interval.flight_end].t,
        peak_midair_pitch_deviation: peak.to_degrees(),
        rms_torso_angular_velocity: mean_sq.sqrt().to_degrees(),
        landing_pitch_error: landing.to_degrees(),
        saturation_time,
        hop_distance: recs[interval.flight_end].com_x - prev_touchdown_com_x,
        apex_height: apex,
    }
}

/// All hops of an episode, in order.
pub fn episode_metrics(log: &TrajectoryLog, tau_max: f64) -> Vec<HopMetrics> {
    let hops = segment_hops(log);
    let mut out = Vec::with_capacity(hops.len());
    let mut prev_x = log.records.first().map(|r| r.com_x).unwrap_or(0.0);
    for (i, h) in hops.iter().enumerate() {
        let m = hop_metrics(log, h, i, prev_x, tau_max);
        prev_x = log.records[h.flight_end].com_x;
        out.push(m);
    }
    out
}

/// Pitch magnitude past which a hop counts as uncontrolled tumbling, deg.
pub const TUMBLE_CAP_DEG: f64 = 90.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HopComparison {
    pub hop_index: usize,
    pub peak_on: f64,
    /// Off-run peak, capped at [`TUMBLE_CAP_DEG`] when tumbling.
    pub peak_off: f64,
    pub uncontrolled: bool,
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub hops: Vec<HopComparison>,
    pub aggregate_reduction_pct: f64,
    pub off_run_aborted: bool,
}

/// Compare an RW-on and RW-off run of the same experiment. Hops where the
/// off run exceeds 90 deg pitch (or fails to complete the hop at all) are
/// flagged uncontrolled and capped at 90 deg for the reduction arithmetic.
pub fn compare_runs(
    log_on: &TrajectoryLog,
    log_off: &TrajectoryLog,
) -> Result<ComparisonReport, MetricsError> {
    if log_on.meta.pair_hash != log_off.meta.pair_hash {
        return Err(MetricsError::MismatchedRuns(format!(
            "config hashes differ beyond rw_enabled: {:016x} vs {:016x}",
            log_on.meta.pair_hash, log_off.meta.pair_hash
        )));
    }
    if log_on.meta.seed != log_off.meta.seed {
        return Err(MetricsError::MismatchedRuns(format!(
            "seeds differ: {} vs {}",
            log_on.meta.seed, log_off.meta.seed
        )));
    }
    let hops_on = segment_hops(log_on);
    let hops_off = segment_hops(log_off);
    let mut hops = Vec::new();
    for (i, on) in hops_on.iter().enumerate() {
        let peak_on = log_on.records[on.flight_start..=on.flight_end]
            .iter()
            .map(|r| r.q[ITH].abs())
            .fold(0.0, f64::max)
            .to_degrees();
        let (peak_off_raw, completed) = match hops_off.get(i) {
            Some(off) => (
                log_off.records[off.flight_start..=off.flight_end]
                    .iter()
                    .map(|r| r.q[ITH].abs())
                    .fold(0.0, f64::max)
                    .to_degrees(),
                true,
            ),
            // The off run never completed this hop: count it as tumbled.
            None => (f64::INFINITY, false),
        };
        let uncontrolled = !completed || peak_off_raw > TUMBLE_CAP_DEG;
        let peak_off = peak_off_raw.min(TUMBLE_CAP_DEG);
        let reduction_pct = if peak_off > 0.0 {
            (peak_off - peak_on.min(peak_off)) / peak_off * 100.0
        } else {
            0.0
        };
        hops.push(HopComparison {
            hop_index: i,
            peak_on,
            peak_off,
            uncontrolled,
            reduction_pct,
        });
    }
    let aggregate = if hops.is_empty() {
        0.0
    } else {
        let mean_on: f64 = hops.iter().map(|h| h.peak_on).sum::<f64>() / hops.len() as f64;
        let mean_off: f64 = hops.iter().map(|h| h.peak_off).sum::<f64>() / hops.len() as f64;
        if mean_off > 0.0 {
            (mean_off - mean_on.min(mean_off)) / mean_off * 100.0
        } else {
            0.0
        }
    };
    Ok(ComparisonReport {
        hops,
        aggregate_reduction_pct: aggregate,
        off_run_aborted: log_off.aborted(),
    })
}

pub const METRICS_CSV_HEADER: &str = "hop_index,flight_start,flight_end,\
peak_midair_pitch_deviation_deg,rms_torso_angular_velocity_deg_s,\
landing_pitch_error_deg,saturation_time_s,hop_distance_m,apex_height_m";

pub fn metrics_to_csv(metrics: &[HopMetrics]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            m.hop_index,
            m.flight_start,
            m.flight_end,
            m.peak_midair_pitch_deviation,
            m.rms_torso_angular_velocity,
            m.landing_pitch_error,
            m.saturation_time,
            m.hop_distance,
            m.apex_height,
        );
    }
    out
}

pub fn comparison_to_text(report: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "hop  peak_on_deg  peak_off_deg  reduction_pct  uncontrolled");
    for h in &report.hops {
        let _ = writeln!(
            s,
            "{:>3}  {:>11.3}  {:>12.3}  {:>13.1}  {}",
            h.hop_index, h.peak_on, h.peak_off, h.reduction_pct, h.uncontrolled
        );
    }
    let _ = writeln!(
        s,
        "aggregate peak mid-air deviation reduction: {:.1}%",
        report.aggregate_reduction_pct
    );
    if report.off_run_aborted {
        let _ = writeln!(s, "note: RW-off run aborted before episode end");
    }
    s
}
