//! The robot-side service: a mode machine that owns the simulated arm and
//! the scene, plus a TCP front end in [`server`].

pub mod server;

pub use server::HostServer;

use std::collections::{BTreeMap, VecDeque};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dmp::{self, DmpModel, DmpSpace};
use crate::kinematics::{
    execute, execute_timed, ik_step, solve_position, tool_position, DhTable, IkConfig, JointVector, TrajectoryLog,
    DOF,
};
use crate::planner::{self, collision_free, path_is_valid, straight_line_plan, LinePlan, PlanRequest};
use crate::scene::{Scene, SceneError, SceneObject};
use crate::wire::{self, NackCode, WireMessage, FRAME_BUDGET};

pub const DEFAULT_DT: f64 = 0.02;
pub const DEFAULT_PREGRASP_OFFSET: f64 = 0.10;
/// Joint-space spacing of the micro-paths used while steering.
const STEER_PLAN_STEP: f64 = 0.05;
/// Resolution used when validating a DMP execution path.
const PATH_CHECK_RESOLUTION: f64 = 0.01;
/// The goal IK stops once the tool is this close to the pre-grasp point.
const GOAL_TOLERANCE: f64 = 1e-5;
const GOAL_MAX_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Idle,
    Steering,
    Teaching,
    Executing,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Idle, Mode::Steering, Mode::Teaching, Mode::Executing];
}

/// The only transitions the host ever makes.
pub const ALLOWED_TRANSITIONS: [(Mode, Mode); 6] = [
    (Mode::Idle, Mode::Steering),
    (Mode::Steering, Mode::Idle),
    (Mode::Steering, Mode::Teaching),
    (Mode::Teaching, Mode::Idle),
    (Mode::Idle, Mode::Executing),
    (Mode::Executing, Mode::Idle),
];

pub fn transition_allowed(from: Mode, to: Mode) -> bool {
    ALLOWED_TRANSITIONS.contains(&(from, to))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostConfig {
    pub dt: f64,
    pub pregrasp_offset: f64,
    /// Models in any other space are rejected on upload.
    pub dmp_space: DmpSpace,
    pub chunk_bytes: usize,
    pub telemetry_capacity: usize,
    pub plan_seed: u64,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            pregrasp_offset: DEFAULT_PREGRASP_OFFSET,
            dmp_space: DmpSpace::JointSpace,
            chunk_bytes: FRAME_BUDGET,
            telemetry_capacity: 256,
            plan_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostState {
    pub mode: Mode,
    pub q_current: JointVector,
    pub scene: Scene,
    pub active_log: Option<TrajectoryLog>,
    pub dmp_store: BTreeMap<String, DmpModel>,
    pub last_applied_frame: Option<u64>,
}

/// One line of the structured event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionEvent {
    pub seq: u64,
    /// Simulated time, seconds.
    pub t: f64,
    pub from: Mode,
    pub to: Mode,
    pub cause: String,
}

impl TransitionEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// A message for the operator side. Telemetry may be dropped under
/// backpressure; replies may not.
#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Reply(WireMessage),
    Telemetry(WireMessage),
}

impl Outbound {
    pub fn message(&self) -> &WireMessage {
        match self {
            Outbound::Reply(m) | Outbound::Telemetry(m) => m,
        }
    }

    pub fn is_telemetry(&self) -> bool {
        matches!(self, Outbound::Telemetry(_))
    }
}

/// Bounded outbound buffer that sheds the oldest telemetry first.
#[derive(Debug, Clone, Default)]
pub struct Outbox {
    queue: VecDeque<Outbound>,
    telemetry: usize,
    capacity: usize,
    dropped: u64,
}

impl Outbox {
    pub fn new(telemetry_capacity: usize) -> Self {
        Self { capacity: telemetry_capacity.max(1), ..Self::default() }
    }

    pub fn push(&mut self, item: Outbound) {
        if item.is_telemetry() {
            if self.telemetry >= self.capacity {
                if let Some(pos) = self.queue.iter().position(Outbound::is_telemetry) {
                    self.queue.remove(pos);
                    self.telemetry -= 1;
                    self.dropped += 1;
                }
            }
            self.telemetry += 1;
        }
        self.queue.push_back(item);
    }

    pub fn pop(&mut self) -> Option<Outbound> {
        let item = self.queue.pop_front()?;
        if item.is_telemetry() {
            self.telemetry -= 1;
        }
        Some(item)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

/// The host's control logic, driven by [`Host::handle`] for each inbound
/// message and [`Host::tick`] once per control period.
#[derive(Debug, Clone)]
pub struct Host {
    state: HostState,
    dh: DhTable,
    cfg: HostConfig,
    sim_time: f64,
    telemetry_frame: u64,
    moved_since_tick: bool,
    pending_motion: VecDeque<JointVector>,
    events: Vec<TransitionEvent>,
    event_seq: u64,
    plan_calls: u64,
}

impl Host {
    /// Fails if `q_home` is outside the limits or collides with the scene.
    pub fn new(dh: DhTable, q_home: JointVector, scene: Scene, cfg: HostConfig) -> Result<Self, SceneError> {
        scene.validate()?;
        if !dh.within_limits(&q_home) || !collision_free(&q_home, &scene.objects, &dh) {
            return Err(SceneError::InvalidObject {
                id: String::new(),
                reason: "home configuration collides with the scene or violates joint limits".into(),
            });
        }
        Ok(Self {
            state: HostState {
                mode: Mode::Idle,
                q_current: q_home,
                scene,
                active_log: None,
                dmp_store: BTreeMap::new(),
                last_applied_frame: None,
            },
            dh,
            cfg,
            sim_time: 0.0,
            telemetry_frame: 0,
            moved_since_tick: false,
            pending_motion: VecDeque::new(),
            events: Vec::new(),
            event_seq: 0,
            plan_calls: 0,
        })
    }

    pub fn state(&self) -> &HostState {
        &self.state
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn config(&self) -> &HostConfig {
        &self.cfg
    }

    pub fn dh(&self) -> &DhTable {
        &self.dh
    }

    pub fn events(&self) -> &[TransitionEvent] {
        &self.events
    }

    pub fn drain_events(&mut self) -> Vec<TransitionEvent> {
        std::mem::take(&mut self.events)
    }

    /// Messages sent to a newly connected operator.
    pub fn on_connect(&mut self) -> Vec<Outbound> {
        vec![Outbound::Reply(self.scene_snapshot()), Outbound::Reply(self.joint_state())]
    }

    pub fn scene_snapshot(&self) -> WireMessage {
        WireMessage::SceneSnapshot { objects: self.state.scene.objects.clone() }
    }

    /// Adds or replaces an object and pushes the new scene.
    pub fn add_object(&mut self, object: SceneObject) -> Result<Vec<Outbound>, SceneError> {
        let mut scene = self.state.scene.clone();
        scene.upsert(object.clone())?;
        if !collision_free(&self.state.q_current, &scene.objects, &self.dh) {
            return Err(SceneError::InvalidObject { id: object.id, reason: "intersects the arm".into() });
        }
        self.state.scene = scene;
        Ok(vec![Outbound::Reply(self.scene_snapshot())])
    }

    pub fn handle(&mut self, msg: WireMessage) -> Vec<Outbound> {
        match msg {
            WireMessage::HandDelta { frame, delta } => self.on_hand_delta(frame, delta),
            WireMessage::TeachStart => self.on_teach_start(),
            WireMessage::TeachStop => self.on_teach_stop(),
            WireMessage::DmpModelUpload { model } => self.on_model_upload(&model),
            WireMessage::ExecuteToObject { object_id } => self.on_execute_to_object(&object_id),
            other => vec![nack(
                NackCode::Protocol,
                format!("unexpected message tag {:#04x} from operator", other.tag()),
            )],
        }
    }

    /// One control period: advances an execution by one sample, or records
    /// a hold sample while teaching if nothing moved.
    pub fn tick(&mut self) -> Vec<Outbound> {
        let mut out = Vec::new();
        match self.state.mode {
            Mode::Executing => {
                if let Some(q) = self.pending_motion.pop_front() {
                    self.state.q_current = q;
                    self.sim_time += self.cfg.dt;
                    if self.pending_motion.is_empty() {
                        out.push(Outbound::Reply(self.joint_state()));
                        self.finish_execution(&mut out);
                    } else {
                        out.push(Outbound::Telemetry(self.joint_state()));
                    }
                } else {
                    self.finish_execution(&mut out);
                }
            }
            Mode::Teaching => {
                if !self.moved_since_tick {
                    let q = self.state.q_current;
                    self.record(q);
                }
            }
            Mode::Idle | Mode::Steering => {
                if !self.moved_since_tick {
                    self.sim_time += self.cfg.dt;
                }
            }
        }
        self.moved_since_tick = false;
        out
    }

    fn finish_execution(&mut self, out: &mut Vec<Outbound>) {
        self.transition(Mode::Idle, "execution complete");
        out.push(Outbound::Reply(self.ack()));
    }

    fn joint_state(&mut self) -> WireMessage {
        self.telemetry_frame += 1;
        WireMessage::JointState { frame: self.telemetry_frame, q: self.state.q_current }
    }

    fn ack(&self) -> WireMessage {
        WireMessage::Ack { ref_frame: self.state.last_applied_frame.unwrap_or(0) }
    }

    fn transition(&mut self, to: Mode, cause: &str) {
        let from = self.state.mode;
        debug_assert!(transition_allowed(from, to), "{from:?} -> {to:?}");
        self.state.mode = to;
        let event = TransitionEvent {
            seq: self.event_seq,
            t: self.sim_time,
            from,
            to,
            cause: cause.to_string(),
        };
        self.event_seq += 1;
        log::info!(target: "host_events", "{}", event.to_json_line());
        self.events.push(event);
    }

    /// Moves the arm to `q` for one control sample.
    fn record(&mut self, q: JointVector) {
        self.state.q_current = q;
        self.sim_time += self.cfg.dt;
        self.moved_since_tick = true;
        if let Some(log) = self.state.active_log.as_mut() {
            log.push(q);
        }
    }

    fn on_hand_delta(&mut self, frame: u64, delta: [f64; 3]) -> Vec<Outbound> {
        if self.state.last_applied_frame.is_some_and(|last| frame <= last) {
            return Vec::new();
        }
        if !matches!(self.state.mode, Mode::Idle | Mode::Steering | Mode::Teaching) {
            return vec![nack(NackCode::BadState, "hand deltas are rejected while executing")];
        }
        let motion = match self.steer_motion(Vector3::from(delta)) {
            Ok(motion) => motion,
            Err(reply) => return vec![reply],
        };
        if self.state.mode == Mode::Idle {
            self.transition(Mode::Steering, "hand delta");
        }
        for q in motion {
            self.record(q);
        }
        self.state.last_applied_frame = Some(frame);
        vec![Outbound::Telemetry(self.joint_state()), Outbound::Reply(WireMessage::Ack { ref_frame: frame })]
    }

    /// Samples (excluding the current configuration) that realize a tool
    /// displacement of `delta`.
    fn steer_motion(&mut self, delta: Vector3<f64>) -> Result<Vec<JointVector>, Outbound> {
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(nack(NackCode::Protocol, "non-finite hand delta"));
        }
        let cap = step_limit();
        let substeps = (delta.norm() / cap).ceil().max(1.0) as usize;
        let mut q_target = self.state.q_current;
        for _ in 0..substeps {
            q_target = ik_step(&q_target, &(delta / substeps as f64), &self.dh)
                .map_err(|e| nack(NackCode::Unreachable, e.to_string()))?;
        }
        let scene = &self.state.scene.objects;
        let path = match straight_line_plan(&self.state.q_current, &q_target, scene, &self.dh, STEER_PLAN_STEP) {
            LinePlan::Path(path) => path,
            LinePlan::Blocked { .. } => {
                self.plan_calls += 1;
                let req = PlanRequest::new(
                    self.state.q_current,
                    q_target,
                    scene.clone(),
                    self.cfg.plan_seed ^ self.plan_calls,
                );
                planner::plan(&req, &self.dh).map_err(|e| nack(NackCode::Blocked, e.to_string()))?
            }
        };
        let log = execute(&path, &self.dh, self.cfg.dt).map_err(|e| nack(NackCode::Blocked, e.to_string()))?;
        Ok(log.positions().skip(1).copied().collect())
    }

    fn on_teach_start(&mut self) -> Vec<Outbound> {
        if self.state.mode != Mode::Steering {
            return vec![nack(NackCode::BadState, format!("teach start in {:?}", self.state.mode))];
        }
        let mut log = TrajectoryLog::new(self.cfg.dt);
        log.push(self.state.q_current);
        self.state.active_log = Some(log);
        self.transition(Mode::Teaching, "teach start");
        vec![Outbound::Reply(self.ack())]
    }

    fn on_teach_stop(&mut self) -> Vec<Outbound> {
        if self.state.mode != Mode::Teaching {
            return vec![nack(NackCode::BadState, format!("teach stop in {:?}", self.state.mode))];
        }
        let log = self.state.active_log.take().expect("teaching implies an active log");
        self.transition(Mode::Idle, "teach stop");
        if log.len() < 3 {
            return vec![nack(NackCode::EmptyDemo, format!("demonstration has {} samples, need 3", log.len()))];
        }
        match wire::chunk_trajectory(&log, self.cfg.chunk_bytes) {
            Ok(chunks) => chunks.into_iter().map(|c| Outbound::Reply(WireMessage::TrajectoryUpload(c))).collect(),
            Err(e) => vec![nack(NackCode::Protocol, e.to_string())],
        }
    }

    fn on_model_upload(&mut self, bytes: &[u8]) -> Vec<Outbound> {
        let model = match std::str::from_utf8(bytes)
            .map_err(|e| e.to_string())
            .and_then(|text| dmp::from_document(text).map_err(|e| e.to_string()))
        {
            Ok(model) => model,
            Err(e) => return vec![nack(NackCode::BadModel, e)],
        };
        let expected_dim = match self.cfg.dmp_space {
            DmpSpace::JointSpace => DOF,
            DmpSpace::CartesianSpace => 3,
        };
        if model.space != self.cfg.dmp_space || model.dimension() != expected_dim {
            return vec![nack(
                NackCode::BadModel,
                format!("expected a {:?} model with {expected_dim} DOFs", self.cfg.dmp_space),
            )];
        }
        let Some(object_id) = model.object_id.clone() else {
            return vec![nack(NackCode::BadModel, "model has no object_id")];
        };
        self.state.dmp_store.insert(object_id, model);
        vec![Outbound::Reply(self.ack())]
    }

    fn on_execute_to_object(&mut self, object_id: &str) -> Vec<Outbound> {
        if !matches!(self.state.mode, Mode::Idle | Mode::Steering) {
            return vec![nack(NackCode::BadState, format!("execute in {:?}", self.state.mode))];
        }
        if self.state.mode == Mode::Steering {
            self.transition(Mode::Idle, "execute request");
        }
        let Some(object) = self.state.scene.get(object_id) else {
            return vec![nack(NackCode::NoObject, format!("no object {object_id:?}"))];
        };
        let Some(model) = self.state.dmp_store.get(object_id) else {
            return vec![nack(NackCode::NoModel, format!("no model for {object_id:?}"))];
        };
        let target = object.centroid() + Vector3::z() * self.cfg.pregrasp_offset;
        let path = match execution_path(model, &self.state.q_current, &target, &self.state.scene, &self.dh, self.cfg.dt)
        {
            Ok(path) => path,
            Err(reply) => return vec![reply],
        };
        self.transition(Mode::Executing, "execute request");
        self.pending_motion = path.into_iter().skip(1).collect();
        let mut out = Vec::new();
        if self.pending_motion.is_empty() {
            self.finish_execution(&mut out);
        }
        out
    }
}

/// Slightly under the IK step cap so rescaled steps never round above it.
fn step_limit() -> f64 {
    IkConfig::default().step_cap * (1.0 - 1e-9)
}

fn nack(code: NackCode, detail: impl Into<String>) -> Outbound {
    Outbound::Reply(WireMessage::nack(code, detail))
}

/// Joint configuration that puts the tool on `target`, reached by repeated
/// capped IK steps from `q_start`.
pub fn solve_goal(q_start: &JointVector, target: &Vector3<f64>, dh: &DhTable) -> Result<JointVector, NackCode> {
    let cap = step_limit();
    let mut q = *q_start;
    for _ in 0..GOAL_MAX_STEPS {
        let error = target - tool_position(&q, dh);
        if error.norm() < GOAL_TOLERANCE {
            return Ok(q);
        }
        let step = if error.norm() > cap { error * (cap / error.norm()) } else { error };
        q = ik_step(&q, &step, dh).map_err(|_| NackCode::Unreachable)?;
    }
    let residual = (target - tool_position(&q, dh)).norm();
    if residual <= IkConfig::default().accept {
        Ok(q)
    } else {
        Err(NackCode::Unreachable)
    }
}

/// Time-sampled joint path that carries the arm from `q_start` to the tool
/// target along the model's rollout, ending exactly on the goal solution.
pub fn execution_path(
    model: &DmpModel,
    q_start: &JointVector,
    target: &Vector3<f64>,
    scene: &Scene,
    dh: &DhTable,
    dt: f64,
) -> Result<Vec<JointVector>, Outbound> {
    let q_goal = solve_goal(q_start, target, dh).map_err(|code| nack(code, "pre-grasp point is unreachable"))?;
    let bad_model = |e: dmp::DmpError| nack(NackCode::BadModel, e.to_string());
    let mut waypoints: Vec<JointVector> = match model.space {
        DmpSpace::JointSpace => dmp::rollout(model, q_start.as_slice(), q_goal.as_slice(), model.tau, dt)
            .map_err(bad_model)?
            .positions
            .iter()
            .map(|p| JointVector::from_slice(p).ok_or_else(|| nack(NackCode::BadModel, "model is not 6-DOF")))
            .collect::<Result<_, _>>()?,
        DmpSpace::CartesianSpace => {
            let start = tool_position(q_start, dh);
            let roll =
                dmp::rollout(model, start.as_slice(), target.as_slice(), model.tau, dt).map_err(bad_model)?;
            let mut q = *q_start;
            let mut out = Vec::with_capacity(roll.len());
            for p in &roll.positions {
                let point = Vector3::from_column_slice(p);
                q = solve_position(&q, &point, dh, &IkConfig::default())
                    .map_err(|e| nack(NackCode::Unreachable, e.to_string()))?;
                out.push(q);
            }
            out
        }
    };
    waypoints.push(q_goal);
    if !waypoints.iter().all(|q| q.is_finite() && dh.within_limits(q))
        || !path_is_valid(&waypoints, &scene.objects, dh, PATH_CHECK_RESOLUTION)
    {
        return Err(nack(NackCode::Blocked, "rollout leaves joint limits or collides"));
    }
    let log = execute_timed(&waypoints, dt, dh, dt).map_err(|e| nack(NackCode::Blocked, e.to_string()))?;
    Ok(log.positions().copied().collect())
}
