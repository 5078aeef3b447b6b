//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::time::{Duration, Instant};

use lfd_core::dmp::{fit, rollout, Demonstration, Gains};
use lfd_core::eval::{distance_csv, run_distance_eval, run_tracking_eval, tracking_linearity, DistanceConfig, TrackingConfig};
use lfd_core::gateway::source::min_jerk;
use lfd_core::gateway::Notice;
use lfd_core::host::{transition_allowed, Mode};
use lfd_core::kinematics::{tool_position, KinematicsConfig};
use lfd_core::wire::{self, FRAME_BUDGET};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    check(took < limit, format!("took {:.2} s, limit {:.0} s", took.as_secs_f64(), limit.as_secs_f64()))
}

/// 2 s rest-to-rest line from 0 to 0.5 m at dt = 0.01.
fn line_demo() -> (Vec<f64>, Demonstration) {
    let samples: Vec<f64> = (0..=200).map(|k| 0.5 * min_jerk(k as f64 / 200.0)).collect();
    let demo = Demonstration::from_scalar(&samples, 0.01).expect("valid demo");
    (samples, demo)
}

fn dmp_self_reproduction() -> Outcome {
    let started = Instant::now();
    let (samples, demo) = line_demo();
    let model = fit(&demo, 20, Gains::default()).map_err(|e| e.to_string())?;
    let out = rollout(&model, &[0.0], &[0.5], model.tau, 0.01).map_err(|e| e.to_string())?;
    let endpoint = (out.last()[0] - 0.5).abs();
    let deviation = samples.iter().zip(&out.positions).map(|(d, r)| (d - r[0]).abs()).fold(0.0, f64::max);
    check(endpoint < 1e-3, format!("endpoint error {endpoint:.2e}"))?;
    check(deviation < 0.02 * 0.5, format!("pointwise deviation {deviation:.2e} over 2% of range"))?;
    within(started, Duration::from_secs(1))?;
    Ok(format!("endpoint error {endpoint:.2e}, max deviation {:.3}% of range", 100.0 * deviation / 0.5))
}

fn goal_adaptation() -> Outcome {
    let (_, demo) = line_demo();
    let model = fit(&demo, 20, Gains::default()).map_err(|e| e.to_string())?;
    let out = rollout(&model, &[0.0], &[1.0], model.tau, 0.01).map_err(|e| e.to_string())?;
    let endpoint = (out.last()[0] - 1.0).abs();
    check(endpoint < 1e-3, format!("endpoint error {endpoint:.2e} for g = 1.0"))?;

    // Cartesian: learn one straight reach, replay it toward a different goal.
    let start = [0.4, 0.1, 0.6];
    let end = [0.7, 0.3, 0.45];
    let positions = (0..=200)
        .map(|k| {
            let s = min_jerk(k as f64 / 200.0);
            (0..3).map(|i| start[i] + s * (end[i] - start[i])).collect()
        })
        .collect();
    let cart = fit(&Demonstration::new(positions, 0.01).map_err(|e| e.to_string())?, 20, Gains::default())
        .map_err(|e| e.to_string())?;
    let new_goal = [0.9, -0.2, 0.3];
    let roll = rollout(&cart, &start, &new_goal, cart.tau, 0.01).map_err(|e| e.to_string())?;
    let length: f64 = roll
        .positions
        .windows(2)
        .map(|w| (0..3).map(|i| (w[1][i] - w[0][i]).powi(2)).sum::<f64>().sqrt())
        .sum();
    let euclid = (0..3).map(|i| (new_goal[i] - start[i]).powi(2)).sum::<f64>().sqrt();
    let ratio = length / euclid;
    check(ratio <= 1.05, format!("Cartesian path ratio {ratio:.4}"))?;
    Ok(format!("endpoint error {endpoint:.2e}, Cartesian path ratio {ratio:.4}"))
}

fn distance_experiment() -> Outcome {
    let started = Instant::now();
    let kin = KinematicsConfig::ur10();
    let cfg = DistanceConfig { n_goals: 15, seed: 42, ..DistanceConfig::default() };
    let summary = run_distance_eval(&kin, &cfg).map_err(|e| e.to_string())?;
    for r in &summary.records {
        check(
            r.dmp_length >= r.euclidean - 1e-9 && r.planner_length >= r.euclidean - 1e-9,
            format!("goal {} breaks the Euclidean lower bound", r.goal_index),
        )?;
    }
    check(summary.mean_dmp_ratio <= 1.05, format!("mean dmp/euclidean {:.4}", summary.mean_dmp_ratio))?;
    check(summary.planner_longer >= 12, format!("planner longer on only {}/15 goals", summary.planner_longer))?;
    let again = run_distance_eval(&kin, &cfg).map_err(|e| e.to_string())?;
    check(distance_csv(&again.records) == distance_csv(&summary.records), "report not reproducible")?;
    within(started, Duration::from_secs(120))?;
    Ok(format!(
        "mean dmp/euclidean {:.4}, mean planner/euclidean {:.4}, planner longer on {}/15",
        summary.mean_dmp_ratio, summary.mean_planner_ratio, summary.planner_longer
    ))
}

fn tracking_experiment() -> Outcome {
    let started = Instant::now();
    let sigma = 0.0107;
    let report = run_tracking_eval(&TrackingConfig::new(sigma, 10_000, 7)).map_err(|e| e.to_string())?;
    let mad_x = report.axes[0].mad;
    check((mad_x - 0.0085).abs() <= 0.1 * 0.0085, format!("X-axis MAD {mad_x:.5} m"))?;
    let lin = tracking_linearity(&[0.5 * sigma, sigma, 2.0 * sigma], 10_000, 7).map_err(|e| e.to_string())?;
    let worst_r2 = lin.r_squared.iter().cloned().fold(f64::INFINITY, f64::min);
    check(worst_r2 > 0.99, format!("MAD-vs-sigma R2 {worst_r2:.5}"))?;
    within(started, Duration::from_secs(10))?;
    Ok(format!("X-axis MAD {mad_x:.5} m (target 0.0085), linearity R2 >= {worst_r2:.5}"))
}

fn protocol_budget() -> Outcome {
    let snapshot = wire::encode(&common::maximal_snapshot()).map_err(|e| e.to_string())?;
    check(snapshot.len() <= FRAME_BUDGET, format!("64-object snapshot is {} bytes", snapshot.len()))?;
    let largest = common::roundtrip_fuzz(10_000, 0x5eed)?;
    let accepted = common::garbage_fuzz(10_000, 0xbad5eed)?;
    Ok(format!(
        "64-object snapshot {} bytes, largest fuzzed frame {largest} bytes, 10000 lossless, 10000 garbage buffers ({accepted} decodable) without panic",
        snapshot.len()
    ))
}

fn end_to_end() -> Outcome {
    let run = common::run_loopback();
    let r = &run.report;
    check(r.completed, format!("session did not complete: {:?}", r.notices))?;
    check(
        r.notices.iter().any(|n| matches!(n, Notice::ModelTrained { .. })),
        "no model was trained",
    )?;
    check(
        r.notices.iter().any(|n| matches!(n, Notice::ExecutionDone { object_id } if object_id == "cup")),
        "execution did not finish",
    )?;
    let err = (tool_position(&r.twin.q, &run.kin.dh) - run.pregrasp).norm();
    check(err < 5e-3, format!("final tool {err:.4} m from pre-grasp"))?;
    check(r.elapsed < Duration::from_secs(30), format!("session took {:.1} s", r.elapsed.as_secs_f64()))?;
    check(run.events.iter().all(|e| transition_allowed(e.from, e.to)), "illegal transition in trace")?;
    let visited: Vec<Mode> = run.events.iter().map(|e| e.to).collect();
    for m in [Mode::Steering, Mode::Teaching, Mode::Executing, Mode::Idle] {
        check(visited.contains(&m), format!("trace never entered {m:?}"))?;
    }
    Ok(format!(
        "final error {:.2} mm, session {:.2} s, {} transitions all allowed",
        err * 1e3,
        r.elapsed.as_secs_f64(),
        run.events.len()
    ))
}

fn kinematics() -> Outcome {
    let fk = common::fk_oracle_worst(1000, 2024);
    check(fk < 1e-9, format!("FK off the oracle by {fk:.2e}"))?;
    let ik = common::ik_closure_worst(1000, 99)?;
    check(ik < 1e-4, format!("IK residual {ik:.2e} m"))?;
    Ok(format!("FK worst {fk:.1e}, IK closure worst {ik:.3e} m"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("DMP self-reproduction", dmp_self_reproduction),
        ("Goal adaptation", goal_adaptation),
        ("Distance experiment (15 goals, seed 42)", distance_experiment),
        ("Tracking experiment (sigma 0.0107, n 10000, seed 7)", tracking_experiment),
        ("Protocol budget and fuzz", protocol_budget),
        ("End-to-end loopback", end_to_end),
        ("Kinematics oracle and IK closure", kinematics),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.2} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.2} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
