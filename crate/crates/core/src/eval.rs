//! Desk-scale reproductions of the two experiments: tracker accuracy after
//! calibration, and DMP versus planner tool path length.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::calibration::{self, fit_axis, mad, mape, CalibrationError, CalibrationModel};
use crate::dmp::{self, Demonstration, DmpError, DmpSpace, Gains, DEFAULT_N_BASIS};
use crate::gateway::source::min_jerk;
use crate::host::solve_goal;
use crate::kinematics::{
    execute, execute_timed, solve_position, tool_path_length, tool_position, IkConfig, JointVector,
    KinematicsConfig, KinematicsError,
};
use crate::planner::{self, collision_free, path_is_valid, PlanError, PlanRequest};
use crate::scene::SceneObject;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Dmp(#[from] DmpError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("goal {goal}: no reachable sample after {attempts} attempts")]
    NoReachableGoal { goal: usize, attempts: usize },
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-axis scale and offset of the simulated tracker distortion.
pub const TRACKER_SCALE: [f64; 3] = [1.15, 0.9, 1.05];
pub const TRACKER_OFFSET: [f64; 3] = [0.02, -0.03, 0.01];
/// Sample rate of the synthetic hand path, Hz.
const TRACKING_RATE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingConfig {
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub train_fraction: f64,
}

impl TrackingConfig {
    pub fn new(sigma: f64, n_samples: usize, seed: u64) -> Self {
        Self { sigma, n_samples, seed, train_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMetrics {
    pub mad: f64,
    pub mape: f64,
    pub mape_excluded: usize,
    pub scale: f64,
    pub offset: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingReport {
    pub config: TrackingConfig,
    pub axes: [AxisMetrics; 3],
    /// Held-out `calibrated - reference` errors, in sample order.
    pub errors: Vec<[f64; 3]>,
}

/// Ground-truth hand path: a Lissajous curve kept well away from zero.
pub fn truth_path(n: usize) -> Vec<[f64; 3]> {
    use std::f64::consts::TAU;
    (0..n)
        .map(|k| {
            let t = k as f64 / TRACKING_RATE;
            [
                0.40 + 0.15 * (TAU * 0.13 * t).sin(),
                0.30 + 0.12 * (TAU * 0.07 * t + 0.7).sin(),
                0.50 + 0.10 * (TAU * 0.11 * t + 1.3).sin(),
            ]
        })
        .collect()
}

/// Simulated tracker reading: the truth plus isotropic Gaussian noise, seen
/// through a per-axis affine distortion.
pub fn distort(truth: &[f64; 3], noise: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| TRACKER_SCALE[i] * (truth[i] + noise[i]) + TRACKER_OFFSET[i])
}

pub fn run_tracking_eval(cfg: &TrackingConfig) -> Result<TrackingReport, EvalError> {
    if cfg.n_samples < 100 {
        return Err(EvalError::Parameter(format!("need at least 100 samples, got {}", cfg.n_samples)));
    }
    if !(cfg.sigma.is_finite() && cfg.sigma >= 0.0) {
        return Err(EvalError::Parameter(format!("sigma must be finite and >= 0, got {}", cfg.sigma)));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(EvalError::Parameter("train_fraction must lie in (0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let truth = truth_path(cfg.n_samples);
    let tracker: Vec<[f64; 3]> = truth
        .iter()
        .map(|p| {
            let noise = [0; 3].map(|_| cfg.sigma * unit.sample(&mut rng));
            distort(p, &noise)
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.n_samples).collect();
    order.shuffle(&mut rng);
    let n_train = ((cfg.n_samples as f64 * cfg.train_fraction).round() as usize).clamp(2, cfg.n_samples - 1);
    let (train, test) = order.split_at(n_train);
    let mut test = test.to_vec();
    test.sort_unstable();

    let column = |idx: &[usize], src: &[[f64; 3]], axis: usize| idx.iter().map(|&i| src[i][axis]).collect::<Vec<_>>();
    let fits = [0, 1, 2].map(|axis| fit_axis(&column(train, &tracker, axis), &column(train, &truth, axis)));
    let [x, y, z] = fits;
    let model = CalibrationModel { x: x?, y: y?, z: z? };

    let errors: Vec<[f64; 3]> = test
        .iter()
        .map(|&i| {
            let c = calibration::apply(&model, tracker[i]);
            [c[0] - truth[i][0], c[1] - truth[i][1], c[2] - truth[i][2]]
        })
        .collect();

    let mut axes = [AxisMetrics { mad: 0.0, mape: 0.0, mape_excluded: 0, scale: 0.0, offset: 0.0, r_squared: 0.0 }; 3];
    for (axis, (m, fit)) in axes.iter_mut().zip(model.axes()).enumerate() {
        let e: Vec<f64> = errors.iter().map(|v| v[axis]).collect();
        let reference = column(&test, &truth, axis);
        let predicted: Vec<f64> = reference.iter().zip(&e).map(|(r, d)| r + d).collect();
        let pct = mape(&predicted, &reference)?;
        *m = AxisMetrics {
            mad: mad(&e)?,
            mape: pct.value,
            mape_excluded: pct.excluded,
            scale: fit.scale,
            offset: fit.offset,
            r_squared: fit.r_squared,
        };
    }
    Ok(TrackingReport { config: cfg.clone(), axes, errors })
}

/// Held-out MAD per axis at several noise levels, with the R² of a
/// least-squares line through (sigma, MAD) per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearity {
    pub sigmas: Vec<f64>,
    pub mads: Vec<[f64; 3]>,
    pub r_squared: [f64; 3],
}

pub fn tracking_linearity(sigmas: &[f64], n_samples: usize, seed: u64) -> Result<Linearity, EvalError> {
    let mads: Vec<[f64; 3]> = sigmas
        .iter()
        .map(|&s| run_tracking_eval(&TrackingConfig::new(s, n_samples, seed)).map(|r| r.axes.map(|a| a.mad)))
        .collect::<Result<_, _>>()?;
    let mut r_squared = [0.0; 3];
    for (axis, r2) in r_squared.iter_mut().enumerate() {
        let y: Vec<f64> = mads.iter().map(|m| m[axis]).collect();
        *r2 = fit_axis(sigmas, &y)?.r_squared;
    }
    Ok(Linearity { sigmas: sigmas.to_vec(), mads, r_squared })
}

pub fn write_tracking_outputs(report: &TrackingReport, linearity: Option<&Linearity>, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let names = ["x", "y", "z"];
    let mut csv = String::from("axis,mad_m,mape_pct,mape_excluded,scale,offset_m,r_squared,sigma_m,n,seed\n");
    for (name, a) in names.iter().zip(&report.axes) {
        let c = &report.config;
        writeln!(
            csv,
            "{name},{},{},{},{},{},{},{},{},{}",
            a.mad, a.mape, a.mape_excluded, a.scale, a.offset, a.r_squared, c.sigma, c.n_samples, c.seed
        )
        .expect("string write");
    }
    std::fs::write(dir.join("tracking_report.csv"), csv)?;

    let mut series = String::from("index,err_x_m,err_y_m,err_z_m\n");
    for (i, e) in report.errors.iter().enumerate() {
        writeln!(series, "{i},{},{},{}", e[0], e[1], e[2]).expect("string write");
    }
    std::fs::write(dir.join("tracking_errors.csv"), series)?;

    let mut summary = String::new();
    let c = &report.config;
    writeln!(summary, "tracking evaluation: sigma={} m, n={}, seed={}", c.sigma, c.n_samples, c.seed).unwrap();
    writeln!(summary, "synthetic tracker data; no recorded hand data is used").unwrap();
    for (name, a) in names.iter().zip(&report.axes) {
        writeln!(
            summary,
            "{name}: MAD {:.6} m, MAPE {:.4} % ({} excluded), fit scale {:.5} offset {:.5} r2 {:.6}",
            a.mad, a.mape, a.mape_excluded, a.scale, a.offset, a.r_squared
        )
        .unwrap();
    }
    if let Some(lin) = linearity {
        writeln!(summary, "MAD linearity over sigma {:?}: r2 x={:.6} y={:.6} z={:.6}", lin.sigmas, lin.r_squared[0], lin.r_squared[1], lin.r_squared[2]).unwrap();
    }
    writeln!(summary, "plot: gnuplot> plot 'tracking_errors.csv' using 1:2 with dots title 'x error' (columns 3, 4 for y, z)").unwrap();
    std::fs::write(dir.join("summary.txt"), summary)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceConfig {
    pub n_goals: usize,
    pub seed: u64,
    pub dt: f64,
    /// Centre of the goal box; defaults to 0.7 m in front of the base at
    /// the home tool height.
    pub goal_center: Option<[f64; 3]>,
    pub goal_half_extent: f64,
    pub demo_duration: f64,
    pub n_basis: usize,
    pub space: DmpSpace,
    pub planner_step: f64,
    pub planner_iterations: usize,
    pub max_attempts: usize,
    pub scene: Vec<SceneObject>,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            n_goals: 15,
            seed: 42,
            dt: crate::host::DEFAULT_DT,
            goal_center: None,
            goal_half_extent: 0.3,
            demo_duration: 2.0,
            n_basis: DEFAULT_N_BASIS,
            space: DmpSpace::JointSpace,
            planner_step: planner::DEFAULT_STEP_SIZE,
            planner_iterations: planner::DEFAULT_MAX_ITERATIONS,
            max_attempts: 1000,
            scene: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRecord {
    pub goal_index: usize,
    pub euclidean: f64,
    pub dmp_length: f64,
    pub planner_length: f64,
    pub rng_seed: u64,
    pub goal: [f64; 3],
    /// Goals drawn and rejected before this one.
    pub resampled: usize,
}

impl DistanceRecord {
    /// Goals that coincide with the start carry no ratio.
    pub fn is_degenerate(&self) -> bool {
        self.euclidean < 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSummary {
    pub records: Vec<DistanceRecord>,
    pub resampled: usize,
    pub mean_dmp_ratio: f64,
    pub mean_planner_ratio: f64,
    pub planner_longer: usize,
    pub degenerate: usize,
}

/// Lengths for one goal from the home configuration.
pub fn evaluate_goal(
    kin: &KinematicsConfig,
    cfg: &DistanceConfig,
    goal: &Vector3<f64>,
    seed: u64,
) -> Result<(f64, f64, f64), EvalError> {
    let dh = &kin.dh;
    let home = kin.home;
    let start = tool_position(&home, dh);

    // Straight-line teach demonstration, tracked by IK at the control rate.
    let steps = (cfg.demo_duration / cfg.dt).round().max(2.0) as usize;
    let ik = IkConfig::default();
    let mut q = home;
    let mut demo_q = vec![home];
    for k in 1..=steps {
        let s = min_jerk(k as f64 / steps as f64);
        let target = start + (goal - start) * s;
        q = solve_position(&q, &target, dh, &ik)?;
        demo_q.push(q);
    }
    let q_goal = solve_goal(&q, goal, dh).map_err(|_| KinematicsError::Unreachable { residual: f64::NAN })?;
    *demo_q.last_mut().expect("non-empty") = q_goal;

    let euclidean = (tool_position(&q_goal, dh) - start).norm();

    let dmp_length = match cfg.space {
        DmpSpace::JointSpace => {
            let demo = Demonstration::new(demo_q.iter().map(|q| q.as_slice().to_vec()).collect(), cfg.dt)?;
            let model = dmp::fit(&demo, cfg.n_basis, Gains::default())?;
            let roll = dmp::rollout(&model, home.as_slice(), q_goal.as_slice(), model.tau, cfg.dt)?;
            let mut path: Vec<JointVector> =
                roll.positions.iter().map(|p| JointVector::from_slice(p).expect("6 DOF")).collect();
            path.push(q_goal);
            let log = execute_timed(&path, cfg.dt, dh, cfg.dt)?;
            tool_path_length(log.positions(), dh)?
        }
        DmpSpace::CartesianSpace => {
            let demo = Demonstration::new(
                demo_q.iter().map(|q| tool_position(q, dh).as_slice().to_vec()).collect(),
                cfg.dt,
            )?;
            let model = dmp::fit(&demo, cfg.n_basis, Gains::default())?;
            let end = tool_position(&q_goal, dh);
            let roll = dmp::rollout(&model, start.as_slice(), end.as_slice(), model.tau, cfg.dt)?;
            let mut pts: Vec<Vector3<f64>> = roll.positions.iter().map(|p| Vector3::from_column_slice(p)).collect();
            pts.push(end);
            pts.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
        }
    };

    let mut req = PlanRequest::new(home, q_goal, cfg.scene.clone(), seed);
    req.step_size = cfg.planner_step;
    req.max_iterations = cfg.planner_iterations;
    let path = planner::plan(&req, dh)?;
    let planner_length = tool_path_length(execute(&path, dh, cfg.dt)?.positions(), dh)?;

    Ok((euclidean, dmp_length, planner_length))
}

fn goal_center(kin: &KinematicsConfig, cfg: &DistanceConfig) -> Vector3<f64> {
    cfg.goal_center
        .map(Vector3::from)
        .unwrap_or_else(|| Vector3::new(0.7, 0.0, tool_position(&kin.home, &kin.dh).z))
}

/// A goal is usable when the tool can reach it from home along a straight
/// line without touching the scene.
fn usable_goal(kin: &KinematicsConfig, cfg: &DistanceConfig, goal: &Vector3<f64>) -> bool {
    let dh = &kin.dh;
    let start = tool_position(&kin.home, dh);
    let Ok(q_goal) = solve_goal(&kin.home, goal, dh) else { return false };
    if !collision_free(&q_goal, &cfg.scene, dh) {
        return false;
    }
    let mut q = kin.home;
    let mut path = vec![q];
    let checks = 20;
    for k in 1..=checks {
        let target = start + (goal - start) * (k as f64 / checks as f64);
        match solve_position(&q, &target, dh, &IkConfig::default()) {
            Ok(next) => q = next,
            Err(_) => return false,
        }
        path.push(q);
    }
    path_is_valid(&path, &cfg.scene, dh, 0.02)
}

fn run_goal(kin: &KinematicsConfig, cfg: &DistanceConfig, index: usize) -> Result<DistanceRecord, EvalError> {
    let seed = cfg.seed.wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = goal_center(kin, cfg);
    let h = cfg.goal_half_extent;
    for attempt in 0..cfg.max_attempts {
        let goal = center + Vector3::from_fn(|_, _| rng.gen_range(-h..=h));
        if !usable_goal(kin, cfg, &goal) {
            continue;
        }
        match evaluate_goal(kin, cfg, &goal, seed) {
            Ok((euclidean, dmp_length, planner_length)) => {
                return Ok(DistanceRecord {
                    goal_index: index,
                    euclidean,
                    dmp_length,
                    planner_length,
                    rng_seed: seed,
                    goal: goal.into(),
                    resampled: attempt,
                })
            }
            Err(EvalError::Kinematics(_)) | Err(EvalError::Plan(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(EvalError::NoReachableGoal { goal: index, attempts: cfg.max_attempts })
}

/// Runs every goal (in parallel) and summarizes. Output is independent of
/// thread scheduling.
pub fn run_distance_eval(kin: &KinematicsConfig, cfg: &DistanceConfig) -> Result<DistanceSummary, EvalError> {
    if cfg.n_goals == 0 {
        return Err(EvalError::Parameter("need at least one goal".into()));
    }
    if !(cfg.dt > 0.0 && cfg.demo_duration > 0.0 && cfg.goal_half_extent >= 0.0) {
        return Err(EvalError::Parameter("dt, demo_duration must be > 0 and goal_half_extent >= 0".into()));
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cfg.n_goals);
    let mut slots: Vec<Option<Result<DistanceRecord, EvalError>>> = (0..cfg.n_goals).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    (w..cfg.n_goals).step_by(workers).map(|i| (i, run_goal(kin, cfg, i))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("goal worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    let records: Vec<DistanceRecord> = slots.into_iter().map(|s| s.expect("every goal ran")).collect::<Result<_, _>>()?;
    Ok(summarize(records))
}

pub fn summarize(records: Vec<DistanceRecord>) -> DistanceSummary {
    let usable: Vec<&DistanceRecord> = records.iter().filter(|r| !r.is_degenerate()).collect();
    let mean = |f: &dyn Fn(&DistanceRecord) -> f64| {
        if usable.is_empty() {
            f64::NAN
        } else {
            usable.iter().map(|r| f(r)).sum::<f64>() / usable.len() as f64
        }
    };
    let mean_dmp_ratio = mean(&|r| r.dmp_length / r.euclidean);
    let mean_planner_ratio = mean(&|r| r.planner_length / r.euclidean);
    DistanceSummary {
        resampled: records.iter().map(|r| r.resampled).sum(),
        planner_longer: records.iter().filter(|r| r.planner_length > r.dmp_length).count(),
        degenerate: records.len() - usable.len(),
        mean_dmp_ratio,
        mean_planner_ratio,
        records,
    }
}

pub fn distance_csv(records: &[DistanceRecord]) -> String {
    let mut csv = String::from("goal,euclidean_m,dmp_m,planner_m,seed\n");
    for r in records {
        writeln!(csv, "{},{},{},{},{}", r.goal_index, r.euclidean, r.dmp_length, r.planner_length, r.rng_seed)
            .expect("string write");
    }
    csv
}

pub fn write_distance_outputs(summary: &DistanceSummary, cfg: &DistanceConfig, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("distance_report.csv"), distance_csv(&summary.records))?;
    let mut text = String::new();
    writeln!(text, "distance evaluation: goals={}, seed={}, dmp space={:?}", cfg.n_goals, cfg.seed, cfg.space).unwrap();
    writeln!(text, "goals resampled: {}", summary.resampled).unwrap();
    writeln!(text, "degenerate goals excluded from ratios: {}", summary.degenerate).unwrap();
    writeln!(text, "mean dmp/euclidean: {:.5}", summary.mean_dmp_ratio).unwrap();
    writeln!(text, "mean planner/euclidean: {:.5}", summary.mean_planner_ratio).unwrap();
    writeln!(text, "planner longer than dmp: {}/{}", summary.planner_longer, summary.records.len()).unwrap();
    writeln!(text, "plot: gnuplot> set datafile separator ','; plot for [c=2:4] 'distance_report.csv' using 1:c with linespoints title columnheader").unwrap();
    std::fs::write(dir.join("summary.txt"), text)?;
    Ok(())
}
