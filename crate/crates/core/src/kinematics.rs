//! Kinematic model of a 6-DOF serial arm described by standard
//! Denavit-Hartenberg parameters: forward kinematics, damped-least-squares
//! positional IK, and velocity-limited execution of joint-space paths.

use std::io::{Read, Write};
use std::ops::{Index, IndexMut};
use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Matrix3x6, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DOF: usize = 6;

/// Shipped UR10-class configuration, also available on disk as `config/ur10.toml`.
pub const DEFAULT_KINEMATICS_TOML: &str = include_str!("../../../config/ur10.toml");

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("target unreachable: residual {residual:.6} m after IK budget")]
    Unreachable { residual: f64 },
    #[error("waypoint {waypoint}: joint {joint} = {value} outside limits [{lower}, {upper}]")]
    JointLimit {
        waypoint: usize,
        joint: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("invalid kinematics configuration: {0}")]
    Config(String),
    #[error("trajectory log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory log CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Joint angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub [f64; DOF]);

impl JointVector {
    pub const fn new(q: [f64; DOF]) -> Self {
        Self(q)
    }

    pub fn zeros() -> Self {
        Self([0.0; DOF])
    }

    pub fn from_slice(q: &[f64]) -> Option<Self> {
        <[f64; DOF]>::try_from(q).ok().map(Self)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance in joint space.
    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest per-joint absolute difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn lerp(&self, other: &Self, s: f64) -> Self {
        let mut out = *self;
        for (o, b) in out.0.iter_mut().zip(&other.0) {
            *o += s * (b - *o);
        }
        out
    }

    fn to_vector(self) -> Vector6<f64> {
        Vector6::from_row_slice(&self.0)
    }
}

impl Index<usize> for JointVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for JointVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhRow {
    fn transform(&self, q: f64) -> Isometry3<f64> {
        let theta = q + self.theta_offset;
        Isometry3::rotation(Vector3::z() * theta)
            * Isometry3::from_parts(
                Translation3::new(self.a, 0.0, self.d),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
            )
    }
}

/// DH parameters plus joint limits and speed caps.
#[derive(Debug, Clone, PartialEq)]
pub struct DhTable {
    pub rows: [DhRow; DOF],
    pub joint_limits: [[f64; 2]; DOF],
    pub max_joint_speed: [f64; DOF],
}

impl DhTable {
    pub fn new(
        rows: [DhRow; DOF],
        joint_limits: [[f64; 2]; DOF],
        max_joint_speed: [f64; DOF],
    ) -> Result<Self, KinematicsError> {
        let table = Self { rows, joint_limits, max_joint_speed };
        table.validate()?;
        Ok(table)
    }

    /// Table with the given rows, default +/-2pi limits and 1 rad/s speed caps.
    pub fn from_rows(rows: [DhRow; DOF]) -> Self {
        let two_pi = std::f64::consts::TAU;
        Self {
            rows,
            joint_limits: [[-two_pi, two_pi]; DOF],
            max_joint_speed: [1.0; DOF],
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (i, row) in self.rows.iter().enumerate() {
            if ![row.a, row.d, row.alpha, row.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::Config(format!("row {i} has non-finite parameters")));
            }
            let [lo, hi] = self.joint_limits[i];
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(KinematicsError::Config(format!("joint {i}: limits [{lo}, {hi}] invalid")));
            }
            let speed = self.max_joint_speed[i];
            if !(speed.is_finite() && speed > 0.0) {
                return Err(KinematicsError::Config(format!("joint {i}: speed cap {speed} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.is_finite()
            && q.0
                .iter()
                .zip(&self.joint_limits)
                .all(|(v, [lo, hi])| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, q: &JointVector) -> JointVector {
        let mut out = *q;
        for (v, [lo, hi]) in out.0.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(*lo, *hi);
        }
        out
    }

    fn check_limits(&self, waypoint: usize, q: &JointVector) -> Result<(), KinematicsError> {
        for (joint, (&value, &[lower, upper])) in q.0.iter().zip(&self.joint_limits).enumerate() {
            if !(value >= lower && value <= upper) {
                return Err(KinematicsError::JointLimit { waypoint, joint, value, lower, upper });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct JointEntry {
    a: f64,
    d: f64,
    alpha: f64,
    #[serde(default)]
    theta_offset: f64,
    limits: [f64; 2],
    max_speed: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct KinematicsFile {
    #[serde(default)]
    home: Option<[f64; DOF]>,
    joints: Vec<JointEntry>,
}

/// Contents of a kinematics configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicsConfig {
    pub dh: DhTable,
    pub home: JointVector,
}

impl KinematicsConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, KinematicsError> {
        let file: KinematicsFile =
            toml::from_str(text).map_err(|e| KinematicsError::Config(e.to_string()))?;
        if file.joints.len() != DOF {
            return Err(KinematicsError::Config(format!(
                "expected {DOF} joints, found {}",
                file.joints.len()
            )));
        }
        let mut rows = [DhRow::default(); DOF];
        let mut limits = [[0.0; 2]; DOF];
        let mut speeds = [0.0; DOF];
        for (i, j) in file.joints.iter().enumerate() {
            rows[i] = DhRow { a: j.a, d: j.d, alpha: j.alpha, theta_offset: j.theta_offset };
            limits[i] = j.limits;
            speeds[i] = j.max_speed;
        }
        let dh = DhTable::new(rows, limits, speeds)?;
        let home = JointVector(file.home.unwrap_or([0.0; DOF]));
        if !dh.within_limits(&home) {
            return Err(KinematicsError::Config("home configuration outside joint limits".into()));
        }
        Ok(Self { dh, home })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    /// The shipped UR10-class configuration.
    pub fn ur10() -> Self {
        Self::from_toml_str(DEFAULT_KINEMATICS_TOML).expect("shipped kinematics config is valid")
    }

    pub fn to_toml_string(&self) -> String {
        let file = KinematicsFile {
            home: Some(self.home.0),
            joints: (0..DOF)
                .map(|i| {
                    let r = self.dh.rows[i];
                    JointEntry {
                        a: r.a,
                        d: r.d,
                        alpha: r.alpha,
                        theta_offset: r.theta_offset,
                        limits: self.dh.joint_limits[i],
                        max_speed: self.dh.max_joint_speed[i],
                    }
                })
                .collect(),
        };
        toml::to_string(&file).expect("kinematics config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianPose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl CartesianPose {
    pub fn identity() -> Self {
        Self { position: Vector3::zeros(), orientation: UnitQuaternion::identity() }
    }
}

fn chain(q: &JointVector, dh: &DhTable) -> [Isometry3<f64>; DOF + 1] {
    let mut frames = [Isometry3::identity(); DOF + 1];
    for i in 0..DOF {
        frames[i + 1] = frames[i] * dh.rows[i].transform(q[i]);
    }
    frames
}

pub fn forward_kinematics(q: &JointVector, dh: &DhTable) -> CartesianPose {
    let tool = chain(q, dh)[DOF];
    CartesianPose { position: tool.translation.vector, orientation: tool.rotation }
}

/// End-effector position only.
pub fn tool_position(q: &JointVector, dh: &DhTable) -> Vector3<f64> {
    forward_kinematics(q, dh).position
}

/// Origins of the base frame and every DH frame; consecutive pairs are the
/// link segments used for collision checking.
pub fn frame_origins(q: &JointVector, dh: &DhTable) -> [Vector3<f64>; DOF + 1] {
    chain(q, dh).map(|f| f.translation.vector)
}

/// Positional Jacobian by central differences.
pub fn position_jacobian(q: &JointVector, dh: &DhTable, step: f64) -> Matrix3x6<f64> {
    let mut jac = Matrix3x6::zeros();
    for j in 0..DOF {
        let mut plus = *q;
        let mut minus = *q;
        plus[j] += step;
        minus[j] -= step;
        let column = (tool_position(&plus, dh) - tool_position(&minus, dh)) / (2.0 * step);
        jac.set_column(j, &column);
    }
    jac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkConfig {
    /// Largest accepted Cartesian step, metres.
    pub step_cap: f64,
    pub damping: f64,
    pub tolerance: f64,
    /// Residual above which the target is declared unreachable.
    pub accept: f64,
    pub max_iterations: usize,
    pub jacobian_step: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            step_cap: 0.05,
            damping: 0.05,
            tolerance: 1e-4,
            accept: 1e-3,
            max_iterations: 50,
            jacobian_step: 1e-6,
        }
    }
}

/// Moves the end effector by `cartesian_delta` with the default [`IkConfig`].
pub fn ik_step(
    q_current: &JointVector,
    cartesian_delta: &Vector3<f64>,
    dh: &DhTable,
) -> Result<JointVector, KinematicsError> {
    ik_step_with(q_current, cartesian_delta, dh, &IkConfig::default())
}

pub fn ik_step_with(
    q_current: &JointVector,
    cartesian_delta: &Vector3<f64>,
    dh: &DhTable,
    cfg: &IkConfig,
) -> Result<JointVector, KinematicsError> {
    if !q_current.is_finite() || !cartesian_delta.iter().all(|v| v.is_finite()) {
        return Err(KinematicsError::Parameter("non-finite IK input".into()));
    }
    let step = cartesian_delta.norm();
    if step > cfg.step_cap {
        return Err(KinematicsError::Parameter(format!(
            "cartesian step {step:.4} m exceeds cap {} m",
            cfg.step_cap
        )));
    }
    let target = tool_position(q_current, dh) + cartesian_delta;
    solve_position(q_current, &target, dh, cfg)
}

/// Damped least squares toward an absolute tool position.
pub fn solve_position(
    q_start: &JointVector,
    target: &Vector3<f64>,
    dh: &DhTable,
    cfg: &IkConfig,
) -> Result<JointVector, KinematicsError> {
    let damping_sq = cfg.damping * cfg.damping;
    let mut q = dh.clamp(q_start);
    let mut error = target - tool_position(&q, dh);
    let mut best = (error.norm(), q);

    for _ in 0..cfg.max_iterations {
        if best.0 < cfg.tolerance {
            break;
        }
        let jac = position_jacobian(&q, dh, cfg.jacobian_step);
        let jjt = jac * jac.transpose() + Matrix3::identity() * damping_sq;
        let Some(inv) = jjt.try_inverse() else { break };
        let dq = jac.transpose() * (inv * error);
        let next = q.to_vector() + dq;
        q = dh.clamp(&JointVector(next.into()));
        error = target - tool_position(&q, dh);
        let residual = error.norm();
        if residual < best.0 {
            best = (residual, q);
        }
    }

    if best.0 > cfg.accept {
        Err(KinematicsError::Unreachable { residual: best.0 })
    } else {
        Ok(best.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSample {
    pub t: f64,
    pub q: JointVector,
}

/// Uniformly sampled joint trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    samples: Vec<LogSample>,
    dt: f64,
}

impl TrajectoryLog {
    pub fn new(dt: f64) -> Self {
        Self { samples: Vec::new(), dt }
    }

    /// Builds a log from joint samples at `k * dt`.
    pub fn from_positions(positions: impl IntoIterator<Item = JointVector>, dt: f64) -> Self {
        let mut log = Self::new(dt);
        for q in positions {
            log.push(q);
        }
        log
    }

    /// Appends a sample one `dt` after the last one (or at `t = 0`).
    pub fn push(&mut self, q: JointVector) {
        let t = self.samples.len() as f64 * self.dt;
        self.samples.push(LogSample { t, q });
    }

    pub fn samples(&self) -> &[LogSample] {
        &self.samples
    }

    pub fn positions(&self) -> impl Iterator<Item = &JointVector> + '_ {
        self.samples.iter().map(|s| &s.q)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last(&self) -> Option<&JointVector> {
        self.samples.last().map(|s| &s.q)
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), KinematicsError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "q1", "q2", "q3", "q4", "q5", "q6"])?;
        for s in &self.samples {
            let mut record = vec![s.t.to_string()];
            record.extend(s.q.0.iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, KinematicsError> {
        let mut r = csv::Reader::from_reader(reader);
        let mut times = Vec::new();
        let mut qs = Vec::new();
        for record in r.records() {
            let record = record?;
            let values: Vec<f64> = record
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| KinematicsError::Parameter(format!("bad number in log: {e}")))?;
            if values.len() != DOF + 1 {
                return Err(KinematicsError::Parameter(format!(
                    "log row has {} columns, expected {}",
                    values.len(),
                    DOF + 1
                )));
            }
            times.push(values[0]);
            qs.push(JointVector::from_slice(&values[1..]).expect("length checked"));
        }
        let dt = if times.len() >= 2 { times[1] - times[0] } else { 0.0 };
        let samples = times.into_iter().zip(qs).map(|(t, q)| LogSample { t, q }).collect();
        Ok(Self { samples, dt })
    }
}

/// Runs `q_path` at the fastest speed the per-joint caps allow.
pub fn execute(q_path: &[JointVector], dh: &DhTable, dt: f64) -> Result<TrajectoryLog, KinematicsError> {
    execute_timed(q_path, 0.0, dh, dt)
}

/// Like [`execute`], but no segment takes less than `min_segment_time`, which
/// preserves the timing of paths that are already sampled at a fixed rate.
pub fn execute_timed(
    q_path: &[JointVector],
    min_segment_time: f64,
    dh: &DhTable,
    dt: f64,
) -> Result<TrajectoryLog, KinematicsError> {
    if q_path.is_empty() {
        return Err(KinematicsError::Parameter("empty path".into()));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(KinematicsError::Parameter(format!("dt must be > 0, got {dt}")));
    }
    for (i, q) in q_path.iter().enumerate() {
        dh.check_limits(i, q)?;
    }

    let mut knots = Vec::with_capacity(q_path.len());
    knots.push(0.0);
    for w in q_path.windows(2) {
        let needed = (0..DOF)
            .map(|j| (w[1][j] - w[0][j]).abs() / dh.max_joint_speed[j])
            .fold(0.0, f64::max);
        let last = *knots.last().expect("non-empty");
        knots.push(last + needed.max(min_segment_time));
    }
    let total = *knots.last().expect("non-empty");
    let intervals = if total > 0.0 { (total / dt - 1e-9).ceil() as usize } else { 0 };

    let mut log = TrajectoryLog::new(dt);
    let mut seg = 0;
    for k in 0..=intervals {
        let t = k as f64 * dt;
        if t >= total {
            log.push(*q_path.last().expect("non-empty"));
            continue;
        }
        while seg + 1 < knots.len() - 1 && t > knots[seg + 1] {
            seg += 1;
        }
        let span = knots[seg + 1] - knots[seg];
        let s = if span > 0.0 { ((t - knots[seg]) / span).clamp(0.0, 1.0) } else { 1.0 };
        log.push(q_path[seg].lerp(&q_path[seg + 1], s));
    }
    Ok(log)
}

/// Sum of consecutive positional distances.
pub fn path_length(poses: &[CartesianPose]) -> Result<f64, KinematicsError> {
    if poses.is_empty() {
        return Err(KinematicsError::Parameter("path_length needs at least one pose".into()));
    }
    Ok(poses.windows(2).map(|w| (w[1].position - w[0].position).norm()).sum())
}

/// Tool path length of a joint trajectory.
pub fn tool_path_length<'a>(
    qs: impl IntoIterator<Item = &'a JointVector>,
    dh: &DhTable,
) -> Result<f64, KinematicsError> {
    let poses: Vec<CartesianPose> = qs.into_iter().map(|q| forward_kinematics(q, dh)).collect();
    path_length(&poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn ur10() -> KinematicsConfig {
        KinematicsConfig::ur10()
    }

    fn pose_at(p: [f64; 3]) -> CartesianPose {
        CartesianPose { position: Vector3::from(p), orientation: UnitQuaternion::identity() }
    }

    #[test]
    fn zero_table_is_identity() {
        let dh = DhTable::from_rows([DhRow::default(); DOF]);
        let pose = forward_kinematics(&JointVector([0.3, -1.0, 2.0, 0.1, 0.2, 0.3]), &dh);
        assert!(pose.position.norm() < 1e-15);
        // Pure z rotations accumulate, so only the position is the identity's.
        let pose0 = forward_kinematics(&JointVector::zeros(), &dh);
        assert!(pose0.orientation.angle() < 1e-15);
    }

    #[test]
    fn single_unit_link_rotates_in_plane() {
        let mut rows = [DhRow::default(); DOF];
        rows[0].a = 1.0;
        let dh = DhTable::from_rows(rows);
        let p = tool_position(&JointVector([FRAC_PI_2, 0.0, 0.0, 0.0, 0.0, 0.0]), &dh);
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn orientation_is_unit() {
        let cfg = ur10();
        let pose = forward_kinematics(&cfg.home, &cfg.dh);
        assert!((pose.orientation.quaternion().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn config_rejects_wrong_joint_count() {
        let text = "joints = []";
        assert!(matches!(KinematicsConfig::from_toml_str(text), Err(KinematicsError::Config(_))));
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = ur10();
        let back = KinematicsConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_rejects_inverted_limits() {
        let text = DEFAULT_KINEMATICS_TOML.replacen(
            "limits = [-6.283185307179586, 6.283185307179586]",
            "limits = [1.0, -1.0]",
            1,
        );
        assert!(KinematicsConfig::from_toml_str(&text).is_err());
    }

    #[test]
    fn ik_zero_delta_is_identity() {
        let cfg = ur10();
        let q = ik_step(&cfg.home, &Vector3::zeros(), &cfg.dh).unwrap();
        assert_eq!(q, cfg.home);
    }

    #[test]
    fn ik_small_delta_closes_loop() {
        let cfg = ur10();
        let q0 = JointVector([0.4, -1.2, 1.4, -1.3, -1.6, 0.2]);
        let delta = Vector3::new(0.01, 0.0, 0.0);
        let q1 = ik_step(&q0, &delta, &cfg.dh).unwrap();
        let err = tool_position(&q1, &cfg.dh) - (tool_position(&q0, &cfg.dh) + delta);
        assert!(err.norm() < 1e-4, "residual {}", err.norm());
    }

    #[test]
    fn ik_beyond_reach_is_unreachable() {
        let cfg = ur10();
        // Configuration maximizing the tool's distance from the shoulder
        // origin (about 1.3435 m; found by numeric search over the DH chain).
        let q = JointVector([2.4931758, 0.52351531, 0.0, -0.91001305, 1.34895813, 2.04804963]);
        let shoulder = Vector3::new(0.0, 0.0, cfg.dh.rows[0].d);
        let p = tool_position(&q, &cfg.dh);
        let outward = (p - shoulder).normalize();
        assert!((p - shoulder).norm() > 1.343);
        match ik_step(&q, &(outward * 0.05), &cfg.dh) {
            Err(KinematicsError::Unreachable { residual }) => assert!(residual > 1e-3),
            other => panic!("expected unreachable, got {other:?}"),
        }
    }

    #[test]
    fn ik_rejects_oversized_step() {
        let cfg = ur10();
        let r = ik_step(&cfg.home, &Vector3::new(0.06, 0.0, 0.0), &cfg.dh);
        assert!(matches!(r, Err(KinematicsError::Parameter(_))));
    }

    #[test]
    fn ik_respects_limits() {
        let cfg = ur10();
        let mut dh = cfg.dh.clone();
        dh.joint_limits[0] = [PI - 0.001, PI + 0.001];
        let q = ik_step(&cfg.home, &Vector3::new(0.0, 0.03, 0.0), &dh);
        if let Ok(q) = q {
            assert!(dh.within_limits(&q));
        }
    }

    #[test]
    fn execute_single_waypoint() {
        let cfg = ur10();
        let log = execute(&[cfg.home], &cfg.dh, 0.02).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.samples()[0].t, 0.0);
    }

    #[test]
    fn execute_one_radian_ramp() {
        let mut dh = DhTable::from_rows([DhRow::default(); DOF]);
        dh.max_joint_speed = [1.0; DOF];
        let a = JointVector::zeros();
        let mut b = a;
        b[2] = 1.0;
        let log = execute(&[a, b], &dh, 0.1).unwrap();
        assert_eq!(log.len(), 11);
        assert!((log.duration() - 1.0).abs() < 1e-12);
        for (k, s) in log.samples().iter().enumerate() {
            assert!((s.q[2] - 0.1 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn execute_rejects_limit_violation() {
        let cfg = ur10();
        let mut bad = cfg.home;
        bad[1] = 7.0;
        match execute(&[cfg.home, bad], &cfg.dh, 0.02) {
            Err(KinematicsError::JointLimit { waypoint: 1, joint: 1, .. }) => {}
            other => panic!("expected limit error, got {other:?}"),
        }
    }

    #[test]
    fn execute_timed_keeps_sample_spacing() {
        let cfg = ur10();
        let path: Vec<JointVector> = (0..10)
            .map(|k| {
                let mut q = cfg.home;
                q[0] += 0.001 * k as f64;
                q
            })
            .collect();
        let log = execute_timed(&path, 0.02, &cfg.dh, 0.02).unwrap();
        assert_eq!(log.len(), 10);
        for (s, q) in log.samples().iter().zip(&path) {
            assert!(s.q.max_abs_diff(q) < 1e-12);
        }
    }

    #[test]
    fn path_length_cases() {
        assert!(path_length(&[]).is_err());
        assert_eq!(path_length(&[pose_at([1.0, 2.0, 3.0])]).unwrap(), 0.0);
        assert_eq!(path_length(&[pose_at([0.0; 3]), pose_at([0.0, 1.0, 0.0])]).unwrap(), 1.0);
        let line: Vec<CartesianPose> =
            (0..=100).map(|k| pose_at([0.005 * k as f64, 0.0, 0.0])).collect();
        assert!((path_length(&line).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn trajectory_log_csv_roundtrip() {
        let cfg = ur10();
        let log = execute(&[cfg.home, cfg.dh.clamp(&JointVector([0.1; 6]))], &cfg.dh, 0.02).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,q1,q2,q3,q4,q5,q6\n"));
        let back = TrajectoryLog::read_csv(&buf[..]).unwrap();
        assert_eq!(back.samples(), log.samples());
    }
}
