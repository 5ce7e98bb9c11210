//! End-to-end acceptance suite. Each numbered criterion prints one PASS/FAIL
//! line; the test asserts only after every criterion has been evaluated so a
//! single regression does not hide the status of the rest.

use hopper::config::{load_config, SimConfig};
use hopper::dynamics::{
    foot_states, forward_dynamics_reduced, gyrostat_accel, impact_map, kinetic_energy,
    mass_matrix, Mat2x8,
};
use hopper::metrics::{compare_runs, episode_metrics, segment_hops};
use hopper::model::{GenState, RobotParams, Vec8, IPHI, ITH, NDOF};
use hopper::sim::{log_to_csv, run_episode, Record, TrajectoryLog};
use hopper::terrain::{encode_grayscale, generate_heightfield};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

struct Ledger {
    failures: Vec<String>,
}

impl Ledger {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        println!(
            "criterion {id}: {} - {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failures.push(format!("{id}: {detail}"));
        }
    }
}

fn config_path(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn load_shipped(name: &str, overrides: &[(String, String)]) -> SimConfig {
    let text = std::fs::read_to_string(config_path(name)).expect("shipped config readable");
    load_config(&text, overrides).expect("shipped config valid")
}

fn ov(key: &str, value: &str) -> (String, String) {
    (key.to_string(), value.to_string())
}

/// Contiguous intervals where both feet are unloaded, at least `min_len`
/// records long (sub-centisecond contact chatter is not a flight interval).
fn flight_windows(log: &TrajectoryLog, min_len: usize) -> Vec<Vec<&Record>> {
    let mut windows = Vec::new();
    let mut current: Vec<&Record> = Vec::new();
    for r in &log.records {
        if r.f_n[0] == 0.0 && r.f_n[1] == 0.0 {
            current.push(r);
        } else {
            if current.len() >= min_len {
                windows.push(std::mem::take(&mut current));
            }
            current.clear();
        }
    }
    if current.len() >= min_len {
        windows.push(current);
    }
    windows
}

fn random_state(rng: &mut ChaCha8Rng, params: &RobotParams) -> GenState {
    let mut s = GenState::zero();
    s.q[0] = rng.gen_range(-2.0..2.0);
    s.q[1] = rng.gen_range(0.5..2.0);
    s.q[2] = rng.gen_range(-1.5..1.5);
    s.q[3] = rng.gen_range(-3.0..3.0);
    for (hip, knee) in [(4, 5), (6, 7)] {
        s.q[hip] = rng.gen_range(params.hip_range.0 * 0.9..params.hip_range.1 * 0.9);
        s.q[knee] = rng.gen_range(params.knee_range.0 * 0.9..-0.05);
    }
    for i in 0..NDOF {
        s.qdot[i] = rng.gen_range(-3.0..3.0);
    }
    s
}

#[test]
fn acceptance() {
    let mut ledger = Ledger { failures: Vec::new() };
    let default_config = load_shipped("default.cfg", &[]);

    // ---- criterion 1: flight-phase conservation and runtime ----
    let start = Instant::now();
    let log = run_episode(&default_config).expect("default episode runs");
    let runtime = start.elapsed().as_secs_f64();
    assert!(!log.aborted(), "default episode aborted: {:?}", log.meta.abort);
    let windows = flight_windows(&log, 50);
    let mut worst_h = 0.0f64;
    let mut worst_vx = 0.0f64;
    for w in &windows {
        let h0 = w[0].pitch_momentum;
        let vx0 = w[0].com_vx;
        for r in w {
            worst_h = worst_h.max((r.pitch_momentum - h0).abs() / h0.abs().max(1e-12));
            worst_vx = worst_vx.max((r.com_vx - vx0).abs());
        }
    }
    ledger.check(
        "1 (flight conservation)",
        worst_h < 1e-3 && worst_vx < 1e-6 && runtime < 10.0,
        format!(
            "angular momentum drift {worst_h:.2e} (< 1e-3), com vx drift {worst_vx:.2e} \
             (< 1e-6), runtime {runtime:.2} s (< 10) over {} flight windows",
            windows.len()
        ),
    );

    // ---- criterion 2: gyrostat equivalence with massless frozen legs ----
    let mut massless = default_config.robot.clone();
    massless.upper_leg_mass = 0.0;
    massless.lower_leg_mass = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let mut s = random_state(&mut rng, &massless);
        for i in [4, 5, 6, 7] {
            s.qdot[i] = 0.0; // frozen legs
        }
        let tau_ext = rng.gen_range(-30.0..30.0);
        let tau_m = rng.gen_range(-29.5..29.5);
        let mut qforce = Vec8::zeros();
        qforce[ITH] = tau_ext;
        qforce[IPHI] = tau_m;
        let qdd = forward_dynamics_reduced(&s, &qforce, &[ITH, IPHI], &massless)
            .expect("reduced dynamics solvable");
        let tau_w = massless.wheel_inertia * qdd[IPHI];
        worst = worst.max((qdd[ITH] - gyrostat_accel(tau_w, tau_ext, &massless)).abs());
    }
    ledger.check(
        "2 (gyrostat equivalence)",
        worst < 1e-10,
        format!("max |thetadd - (tau_ext - tau_w)/(I_b + I_w)| = {worst:.2e} (< 1e-10)"),
    );

    // ---- criterion 3: dynamics oracles ----
    let params = default_config.robot.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_mass = 0.0f64;
    let h = 1e-3;
    for _ in 0..500 {
        let state = random_state(&mut rng, &params);
        let m = mass_matrix(&state.q, &params);
        let scale = m.norm();
        let t_at = |qdot: Vec8| {
            let mut s = state.clone();
            s.qdot = qdot;
            kinetic_energy(&s, &params)
        };
        for i in 0..NDOF {
            for j in 0..NDOF {
                let mut pp = state.qdot;
                let mut pm = state.qdot;
                let mut mp = state.qdot;
                let mut mm = state.qdot;
                pp[i] += h;
                pp[j] += h;
                pm[i] += h;
                pm[j] -= h;
                mp[i] -= h;
                mp[j] += h;
                mm[i] -= h;
                mm[j] -= h;
                let hess = (t_at(pp) - t_at(pm) - t_at(mp) + t_at(mm)) / (4.0 * h * h);
                worst_mass = worst_mass.max((hess - m[(i, j)]).abs() / scale);
            }
        }
    }
    let mut worst_jac = 0.0f64;
    let hj = 1e-6;
    for _ in 0..500 {
        let state = random_state(&mut rng, &params);
        let feet = foot_states(&state, &params);
        for (leg, foot) in feet.iter().enumerate() {
            for col in 0..NDOF {
                let mut sp = state.clone();
                let mut sm = state.clone();
                sp.q[col] += hj;
                sm.q[col] -= hj;
                let fd = (foot_states(&sp, &params)[leg].position
                    - foot_states(&sm, &params)[leg].position)
                    / (2.0 * hj);
                for row in 0..2 {
                    worst_jac = worst_jac.max((fd[row] - foot.jacobian[(row, col)]).abs());
                }
            }
        }
    }
    let mut impact_ok = true;
    for trial in 0..1000 {
        let state = random_state(&mut rng, &params);
        let feet = foot_states(&state, &params);
        let jacs: Vec<Mat2x8> = match trial % 3 {
            0 => vec![feet[0].jacobian],
            1 => vec![feet[1].jacobian],
            _ => vec![feet[0].jacobian, feet[1].jacobian],
        };
        if let Some(qdot_plus) = impact_map(&state.q, &state.qdot, &jacs, &params) {
            let mut post = state.clone();
            post.qdot = qdot_plus;
            impact_ok &=
                kinetic_energy(&post, &params) <= kinetic_energy(&state, &params) * (1.0 + 1e-9);
        }
    }
    ledger.check(
        "3 (dynamics oracles)",
        worst_mass < 1e-6 && worst_jac < 1e-6 && impact_ok,
        format!(
            "mass-matrix Hessian err {worst_mass:.2e} (< 1e-6), foot Jacobian err \
             {worst_jac:.2e} (< 1e-6), impact KE never increased: {impact_ok}"
        ),
    );

    // ---- criterion 4: controller efficacy (compare) ----
    let off_config = load_shipped("default.cfg", &[ov("sim.rw_enabled", "false")]);
    let log_off = run_episode(&off_config).expect("rw-off episode runs");
    let report = compare_runs(&log, &log_off).expect("paired runs comparable");
    let default_reduction = report.aggregate_reduction_pct;
    let seeds = [11u64, 12, 13, 14, 15];
    let mut best_seed_reduction = f64::NEG_INFINITY;
    for seed in seeds {
        let seed_s = seed.to_string();
        let on = run_episode(&load_shipped("default.cfg", &[ov("sim.rng_seed", &seed_s)]))
            .expect("seed episode runs");
        let off = run_episode(&load_shipped(
            "default.cfg",
            &[ov("sim.rng_seed", &seed_s), ov("sim.rw_enabled", "false")],
        ))
        .expect("seed rw-off episode runs");
        let r = compare_runs(&on, &off).expect("seed runs comparable");
        best_seed_reduction = best_seed_reduction.max(r.aggregate_reduction_pct);
    }
    ledger.check(
        "4 (controller efficacy)",
        default_reduction >= 50.0 && best_seed_reduction >= 65.0,
        format!(
            "default aggregate reduction {default_reduction:.1}% (>= 50%), best of 5-seed \
             set {best_seed_reduction:.1}% (>= 65%)"
        ),
    );

    // ---- criterion 5: landing attitude ----
    let metrics = episode_metrics(&log, default_config.robot.wheel_torque_limit);
    let compliant = metrics
        .iter()
        .filter(|m| m.landing_pitch_error <= 3.5)
        .count();
    for m in metrics.iter().filter(|m| m.landing_pitch_error > 3.5) {
        println!(
            "  exception: hop {} landing pitch error {:.2} deg",
            m.hop_index, m.landing_pitch_error
        );
    }
    ledger.check(
        "5 (landing attitude)",
        metrics.len() >= 7 && compliant >= 6,
        format!(
            "{compliant}/{} hops with landing pitch error <= 3.5 deg (need >= 6 of 7); \
             worst {:.3} deg",
            metrics.len(),
            metrics
                .iter()
                .map(|m| m.landing_pitch_error)
                .fold(0.0, f64::max)
        ),
    );

    // ---- criterion 6: torque saturation budget ----
    let worst_sat = metrics.iter().map(|m| m.saturation_time).fold(0.0, f64::max);
    ledger.check(
        "6 (saturation budget)",
        metrics.iter().all(|m| m.saturation_time < 0.9),
        format!("max time at >= 98% of 29.5 N*m: {worst_sat:.3} s per hop cycle (< 0.9)"),
    );

    // ---- criterion 7: gait progress and RW-off tumble ----
    let hops = segment_hops(&log);
    let touchdown_x: Vec<f64> = hops.iter().map(|h| log.records[h.flight_end].com_x).collect();
    let monotone = touchdown_x.windows(2).all(|w| w[1] >= w[0]);
    let distances_ok = metrics
        .iter()
        .all(|m| m.hop_distance >= 0.4 && m.hop_distance <= 1.2);
    let aggressive = load_shipped("aggressive.cfg", &[ov("sim.rw_enabled", "false")]);
    let log_aggro = run_episode(&aggressive).expect("aggressive episode runs");
    let mut touchdowns_before_tumble = 0usize;
    let mut tumbled = false;
    for pair in log_aggro.records.windows(2) {
        let airborne = |r: &Record| r.f_n[0] == 0.0 && r.f_n[1] == 0.0;
        if airborne(&pair[0]) && !airborne(&pair[1]) {
            touchdowns_before_tumble += 1;
        }
        if pair[1].q[ITH].abs() > std::f64::consts::FRAC_PI_2 {
            tumbled = true;
            break;
        }
    }
    ledger.check(
        "7 (gait progress)",
        metrics.len() >= 7 && monotone && distances_ok && tumbled && touchdowns_before_tumble <= 3,
        format!(
            "{} hops (>= 7), touchdown x monotone: {monotone}, distances in [0.4, 1.2] m: \
             {distances_ok}; RW-off aggressive push-off tumbled past 90 deg after \
             {touchdowns_before_tumble} touchdowns (<= 3): {tumbled}",
            metrics.len()
        ),
    );

    // ---- criterion 8: determinism ----
    let log2 = run_episode(&default_config).expect("repeat episode runs");
    let csv_identical = log_to_csv(&log) == log_to_csv(&log2);
    let hf1 = generate_heightfield(&default_config.seeded_terrain()).expect("terrain");
    let hf2 = generate_heightfield(&default_config.seeded_terrain()).expect("terrain");
    let pgm_identical = encode_grayscale(&hf1) == encode_grayscale(&hf2);
    ledger.check(
        "8 (determinism)",
        csv_identical && pgm_identical,
        format!("trajectory CSV byte-identical: {csv_identical}, terrain PGM byte-identical: {pgm_identical}"),
    );

    // ---- criterion 9: gain stability gate ----
    let default_stable = default_config
        .gains
        .is_stable(default_config.robot.pitch_inertia());
    let unstable_text =
        std::fs::read_to_string(config_path("unstable_gains.cfg")).expect("config readable");
    let rejected = match load_config(&unstable_text, &[]) {
        Err(e) => e.to_string().contains("Routh-Hurwitz"),
        Ok(_) => false,
    };
    ledger.check(
        "9 (gain stability gate)",
        default_stable && rejected,
        format!(
            "default gains pass Routh-Hurwitz: {default_stable}, shipped unstable gain set \
             rejected at load: {rejected}"
        ),
    );

    assert!(
        ledger.failures.is_empty(),
        "acceptance failures:\n{}",
        ledger.failures.join("\n")
    );
}
