//! The operator-side service: turns hand samples into steering deltas,
//! mirrors the remote arm in a [`TwinState`], and trains DMPs from the
//! demonstrations the host returns.

pub mod console;
pub mod session;
pub mod source;

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Serialize;
use thiserror::Error;

use crate::calibration::{apply, CalibrationModel};
use crate::dmp::{self, Demonstration, DmpError, DmpModel, DmpSpace, Gains, DEFAULT_N_BASIS};
use crate::kinematics::{tool_position, DhTable, JointVector, KinematicsConfig};
use crate::scene::{SceneObject, MAX_OBJECT_ID_LEN};
use crate::wire::{self, NackCode, TrajectoryUpload, WireError, WireMessage};

pub use console::{ConsoleHub, ConsoleServer};
pub use session::{run_session, SessionObserver, SessionOptions, SessionReport};
pub use source::{Command, FileReplay, HandSample, PoseSource, ScriptedGenerator, SourceEvent};

/// Per-axis cap on one steering delta; matches the host's IK step cap.
pub const DEFAULT_STEP_CAP: f64 = 0.05;
pub const LATENCY_ALPHA: f64 = 0.2;
/// Seconds an incomplete trajectory upload may wait for its missing chunks.
pub const DEFAULT_UPLOAD_TIMEOUT: f64 = 5.0;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("incomplete upload: {0}")]
    IncompleteUpload(String),
    #[error("DMP fit failed: {0}")]
    Fit(#[from] DmpError),
    #[error("no object to associate with the demonstration")]
    NoObject,
    #[error("invalid object id {0:?} for the model store")]
    BadObjectId(String),
    #[error("model store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("pose source: {0}")]
    Source(String),
    #[error("link: {0}")]
    Link(String),
}

/// A steering delta and the per-axis amount the clamp removed from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaOutcome {
    pub delta: [f64; 3],
    pub clamp_loss: [f64; 3],
    pub clamped_axes: u32,
}

/// `gain * (cal(cur) - cal(prev))`, clamped per axis to `step_cap`.
pub fn sample_to_delta(
    prev: &HandSample,
    cur: &HandSample,
    cal: &CalibrationModel,
    gain: f64,
    step_cap: f64,
) -> DeltaOutcome {
    let a = apply(cal, prev.position);
    let b = apply(cal, cur.position);
    let mut out = DeltaOutcome { delta: [0.0; 3], clamp_loss: [0.0; 3], clamped_axes: 0 };
    for i in 0..3 {
        let raw = gain * (b[i] - a[i]);
        let clamped = raw.clamp(-step_cap, step_cap);
        out.delta[i] = clamped;
        out.clamp_loss[i] = raw - clamped;
        if clamped != raw {
            out.clamped_axes += 1;
        }
    }
    out
}

/// Local mirror of the remote arm, folded from host messages.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TwinState {
    pub q: JointVector,
    pub scene: Vec<SceneObject>,
    pub last_ack_frame: u64,
    /// Round-trip estimate in seconds; `None` before the first measurement.
    pub link_latency_estimate: Option<f64>,
    /// Send time of every unacknowledged hand delta.
    pub pending: BTreeMap<u64, f64>,
}

impl TwinState {
    pub fn new(q: JointVector) -> Self {
        Self { q, ..Self::default() }
    }

    pub fn note_sent(&mut self, frame: u64, now: f64) {
        self.pending.insert(frame, now);
    }

    pub fn latency_ms(&self) -> f64 {
        self.link_latency_estimate.unwrap_or(0.0) * 1000.0
    }
}

/// Pure fold of one host message into the twin. `now` shares the clock used
/// for [`TwinState::note_sent`].
pub fn twin_update(state: &TwinState, msg: &WireMessage, now: f64) -> TwinState {
    let mut next = state.clone();
    match msg {
        WireMessage::JointState { q, .. } => next.q = *q,
        WireMessage::SceneSnapshot { objects } => next.scene = objects.clone(),
        WireMessage::Ack { ref_frame } => {
            if let Some(sent) = next.pending.remove(ref_frame) {
                let rtt = (now - sent).max(0.0);
                next.link_latency_estimate = Some(match next.link_latency_estimate {
                    Some(est) => est + LATENCY_ALPHA * (rtt - est),
                    None => rtt,
                });
            }
            next.pending.retain(|f, _| f > ref_frame);
            next.last_ack_frame = next.last_ack_frame.max(*ref_frame);
        }
        _ => {}
    }
    next
}

/// Collects the chunks of one trajectory upload.
#[derive(Debug, Clone, Default)]
pub struct UploadAssembler {
    chunks: Vec<TrajectoryUpload>,
    started: Option<f64>,
}

impl UploadAssembler {
    /// Adds a chunk; returns the full set once every index has arrived.
    pub fn push(&mut self, chunk: TrajectoryUpload, now: f64) -> Result<Option<Vec<TrajectoryUpload>>, GatewayError> {
        if let Some(first) = self.chunks.first() {
            if first.chunk_count != chunk.chunk_count {
                self.reset();
                return Err(GatewayError::IncompleteUpload("chunk_count changed mid-upload".into()));
            }
        }
        self.started.get_or_insert(now);
        if self.chunks.iter().any(|c| c.chunk_index == chunk.chunk_index) {
            self.reset();
            return Err(GatewayError::IncompleteUpload(format!("duplicate chunk {}", chunk.chunk_index)));
        }
        self.chunks.push(chunk);
        if self.chunks.len() as u32 == self.chunks[0].chunk_count {
            self.started = None;
            return Ok(Some(std::mem::take(&mut self.chunks)));
        }
        Ok(None)
    }

    /// Fails (and discards the partial upload) once `timeout` has passed since
    /// the first chunk.
    pub fn check_timeout(&mut self, now: f64, timeout: f64) -> Result<(), GatewayError> {
        match self.started {
            Some(start) if now - start > timeout => {
                let have: Vec<u32> = self.chunks.iter().map(|c| c.chunk_index).collect();
                let count = self.chunks.first().map_or(0, |c| c.chunk_count);
                self.reset();
                Err(GatewayError::IncompleteUpload(format!("received chunks {have:?} of {count}")))
            }
            _ => Ok(()),
        }
    }

    pub fn in_progress(&self) -> bool {
        !self.chunks.is_empty()
    }

    fn reset(&mut self) {
        self.chunks.clear();
        self.started = None;
    }
}

/// Directory of `<object_id>.dmp.json` documents.
#[derive(Debug, Clone)]
pub struct DmpStore {
    dir: PathBuf,
}

impl DmpStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, object_id: &str) -> Result<PathBuf, GatewayError> {
        let ok = !object_id.is_empty()
            && object_id.len() <= MAX_OBJECT_ID_LEN
            && object_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            && !object_id.starts_with('.');
        if !ok {
            return Err(GatewayError::BadObjectId(object_id.to_string()));
        }
        Ok(self.dir.join(format!("{object_id}.dmp.json")))
    }

    pub fn save(&self, model: &DmpModel) -> Result<PathBuf, GatewayError> {
        let id = model.object_id.as_deref().ok_or(GatewayError::NoObject)?;
        let path = self.path_for(id)?;
        std::fs::write(&path, dmp::to_document(model))?;
        Ok(path)
    }

    pub fn load(&self, object_id: &str) -> Result<DmpModel, GatewayError> {
        let text = std::fs::read_to_string(self.path_for(object_id)?)?;
        Ok(dmp::from_document(&text)?)
    }
}

/// Settings for [`train_from_upload`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub n_basis: usize,
    pub gains: Gains,
    pub space: DmpSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { n_basis: DEFAULT_N_BASIS, gains: Gains::default(), space: DmpSpace::JointSpace }
    }
}

/// Scene object closest to a tool position.
pub fn nearest_object<'a>(scene: &'a [SceneObject], p: &Vector3<f64>) -> Option<&'a SceneObject> {
    scene.iter().min_by(|a, b| a.distance_to_point(p).total_cmp(&b.distance_to_point(p)))
}

/// Reassembles a demonstration and fits one DMP per joint (or per Cartesian
/// axis), stamping `object_id` and persisting to `store` when given.
pub fn train_from_upload(
    chunks: &[TrajectoryUpload],
    object_id: &str,
    dh: &DhTable,
    cfg: &TrainConfig,
    store: Option<&DmpStore>,
) -> Result<DmpModel, GatewayError> {
    let log = wire::reassemble(chunks).map_err(|e: WireError| GatewayError::IncompleteUpload(e.to_string()))?;
    let positions: Vec<Vec<f64>> = match cfg.space {
        DmpSpace::JointSpace => log.positions().map(|q| q.as_slice().to_vec()).collect(),
        DmpSpace::CartesianSpace => log.positions().map(|q| tool_position(q, dh).as_slice().to_vec()).collect(),
    };
    let demo = Demonstration::new(positions, log.dt())?;
    let model = dmp::fit(&demo, cfg.n_basis, cfg.gains)?.with_space(cfg.space).with_object(object_id);
    if let Some(store) = store {
        store.save(&model)?;
    }
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub gain: f64,
    pub step_cap: f64,
    /// Host control period; faster sources are decimated to it.
    pub host_dt: f64,
    pub train: TrainConfig,
    pub upload_timeout: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            gain: 1.0,
            step_cap: DEFAULT_STEP_CAP,
            host_dt: crate::host::DEFAULT_DT,
            train: TrainConfig::default(),
            upload_timeout: DEFAULT_UPLOAD_TIMEOUT,
        }
    }
}

/// Things the operator should hear about.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notice {
    Ack { request: String },
    Nack { request: String, code: u16, name: String, detail: String },
    ModelTrained { object_id: String, samples: usize },
    ExecutionDone { object_id: String },
    Error { detail: String },
}

/// Requests whose reply has not arrived yet, in send order.
#[derive(Debug, Clone, PartialEq)]
enum Expect {
    Delta(u64),
    TeachStart,
    TeachStop { object_id: Option<String> },
    ModelUpload { object_id: String },
    Execute { object_id: String },
}

impl Expect {
    fn name(&self) -> &'static str {
        match self {
            Expect::Delta(_) => "hand",
            Expect::TeachStart => "teach_start",
            Expect::TeachStop { .. } => "teach_stop",
            Expect::ModelUpload { .. } => "model_upload",
            Expect::Execute { .. } => "execute",
        }
    }
}

/// Counters reported at the end of a session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GatewayStats {
    pub samples_in: u64,
    pub deltas_sent: u64,
    pub decimated: u64,
    pub clamp_events: u64,
    pub clamp_loss: [f64; 3],
    pub delta_sum: [f64; 3],
    pub dropped_while_executing: u64,
}

/// The gateway's protocol logic, free of I/O. Feed it source events and
/// host messages; it returns the messages to send to the host.
#[derive(Debug)]
pub struct Gateway {
    cfg: GatewayConfig,
    cal: CalibrationModel,
    kin: KinematicsConfig,
    store: Option<DmpStore>,
    twin: TwinState,
    baseline: Option<HandSample>,
    held: Option<HandSample>,
    last_send_at: f64,
    frame: u64,
    expected: VecDeque<Expect>,
    deferred: VecDeque<Command>,
    assembler: UploadAssembler,
    last_trained: Option<String>,
    models: Vec<DmpModel>,
    notices: Vec<Notice>,
    stats: GatewayStats,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig, cal: CalibrationModel, kin: KinematicsConfig, store: Option<DmpStore>) -> Self {
        let twin = TwinState::new(kin.home);
        Self {
            cfg,
            cal,
            kin,
            store,
            twin,
            baseline: None,
            held: None,
            last_send_at: f64::NEG_INFINITY,
            frame: 0,
            expected: VecDeque::new(),
            deferred: VecDeque::new(),
            assembler: UploadAssembler::default(),
            last_trained: None,
            models: Vec::new(),
            notices: Vec::new(),
            stats: GatewayStats::default(),
        }
    }

    pub fn twin(&self) -> &TwinState {
        &self.twin
    }

    pub fn kinematics(&self) -> &KinematicsConfig {
        &self.kin
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn models(&self) -> &[DmpModel] {
        &self.models
    }

    pub fn drain_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    /// True while a reply, deferred command or partial upload is outstanding.
    pub fn busy(&self) -> bool {
        !self.expected.is_empty() || !self.deferred.is_empty() || self.assembler.in_progress() || self.held.is_some()
    }

    fn executing(&self) -> bool {
        self.expected.iter().any(|e| matches!(e, Expect::Execute { .. }))
    }

    /// Waiting on a demonstration or a model upload that a later execute
    /// depends on.
    fn training(&self) -> bool {
        self.expected.iter().any(|e| matches!(e, Expect::TeachStop { .. } | Expect::ModelUpload { .. }))
    }

    pub fn on_source(&mut self, event: SourceEvent, now: f64) -> Vec<WireMessage> {
        match event {
            SourceEvent::Sample(sample) => self.on_sample(sample, now),
            SourceEvent::Command(cmd) => {
                let mut out = self.flush_held(now);
                out.extend(self.on_command(cmd));
                out
            }
        }
    }

    /// Sends a held (decimated) sample once the host period has elapsed, and
    /// expires stale uploads.
    pub fn poll(&mut self, now: f64) -> Vec<WireMessage> {
        if let Err(e) = self.assembler.check_timeout(now, self.cfg.upload_timeout) {
            self.fail_teach_stop(e.to_string());
        }
        if self.held.is_some() && now - self.last_send_at >= self.cfg.host_dt {
            self.flush_held(now)
        } else {
            Vec::new()
        }
    }

    /// Sends whatever the decimator is holding, e.g. at end of stream.
    pub fn flush_held(&mut self, now: f64) -> Vec<WireMessage> {
        match self.held.take() {
            Some(sample) => self.send_delta(sample, now).into_iter().collect(),
            None => Vec::new(),
        }
    }

    fn on_sample(&mut self, sample: HandSample, now: f64) -> Vec<WireMessage> {
        self.stats.samples_in += 1;
        let Some(base) = &self.baseline else {
            self.baseline = Some(sample);
            return Vec::new();
        };
        if sample.frame <= base.frame || self.held.as_ref().is_some_and(|h| sample.frame <= h.frame) {
            return Vec::new();
        }
        if self.executing() {
            self.stats.dropped_while_executing += 1;
            self.baseline = Some(sample);
            self.held = None;
            return Vec::new();
        }
        if sample.t - base.t < self.cfg.host_dt {
            if self.held.replace(sample).is_some() {
                self.stats.decimated += 1;
            }
            return Vec::new();
        }
        if self.held.take().is_some() {
            self.stats.decimated += 1;
        }
        self.send_delta(sample, now).into_iter().collect()
    }

    fn send_delta(&mut self, sample: HandSample, now: f64) -> Option<WireMessage> {
        let base = self.baseline.replace(sample.clone())?;
        let outcome = sample_to_delta(&base, &sample, &self.cal, self.cfg.gain, self.cfg.step_cap);
        self.stats.clamp_events += outcome.clamped_axes as u64;
        for i in 0..3 {
            self.stats.clamp_loss[i] += outcome.clamp_loss[i];
            self.stats.delta_sum[i] += outcome.delta[i];
        }
        self.stats.deltas_sent += 1;
        self.last_send_at = now;
        self.frame += 1;
        self.twin.note_sent(self.frame, now);
        self.expected.push_back(Expect::Delta(self.frame));
        Some(WireMessage::HandDelta { frame: self.frame, delta: outcome.delta })
    }

    fn blocked(&self, cmd: &Command) -> bool {
        self.executing() || (matches!(cmd, Command::Execute { .. }) && self.training())
    }

    fn on_command(&mut self, cmd: Command) -> Vec<WireMessage> {
        if !self.deferred.is_empty() || self.blocked(&cmd) {
            self.deferred.push_back(cmd);
            return Vec::new();
        }
        self.dispatch(cmd)
    }

    fn dispatch(&mut self, cmd: Command) -> Vec<WireMessage> {
        match cmd {
            Command::TeachStart => {
                self.expected.push_back(Expect::TeachStart);
                vec![WireMessage::TeachStart]
            }
            Command::TeachStop { object_id } => {
                self.expected.push_back(Expect::TeachStop { object_id });
                vec![WireMessage::TeachStop]
            }
            Command::Execute { object_id } => {
                let Some(object_id) = object_id.or_else(|| self.last_trained.clone()) else {
                    self.notices.push(Notice::Error { detail: "execute: no object given and no trained model".into() });
                    return Vec::new();
                };
                self.expected.push_back(Expect::Execute { object_id: object_id.clone() });
                vec![WireMessage::ExecuteToObject { object_id }]
            }
        }
    }

    fn release_deferred(&mut self) -> Vec<WireMessage> {
        let mut out = Vec::new();
        while let Some(cmd) = self.deferred.front() {
            if self.blocked(cmd) {
                break;
            }
            let cmd = self.deferred.pop_front().expect("front exists");
            out.extend(self.dispatch(cmd));
        }
        out
    }

    pub fn on_host(&mut self, msg: WireMessage, now: f64) -> Vec<WireMessage> {
        self.twin = twin_update(&self.twin, &msg, now);
        let mut out = match msg {
            WireMessage::Ack { .. } => self.resolve(None),
            WireMessage::NackError { code, detail } => self.resolve(Some((code, detail))),
            WireMessage::TrajectoryUpload(chunk) => self.on_chunk(chunk, now),
            WireMessage::JointState { .. } | WireMessage::SceneSnapshot { .. } => Vec::new(),
            other => {
                self.notices.push(Notice::Error { detail: format!("unexpected host message tag {:#04x}", other.tag()) });
                Vec::new()
            }
        };
        out.extend(self.release_deferred());
        out
    }

    fn resolve(&mut self, nack: Option<(u16, String)>) -> Vec<WireMessage> {
        let Some(expect) = self.expected.pop_front() else {
            if let Some((code, detail)) = nack {
                self.push_nack("unsolicited", code, detail);
            }
            return Vec::new();
        };
        let request = expect.name();
        if let Some((code, detail)) = nack {
            self.push_nack(request, code, detail);
            return Vec::new();
        }
        match expect {
            Expect::Delta(_) => {}
            Expect::Execute { object_id } => self.notices.push(Notice::ExecutionDone { object_id }),
            Expect::TeachStop { .. } => {
                self.notices.push(Notice::Error { detail: "teach stop acknowledged without an upload".into() })
            }
            _ => self.notices.push(Notice::Ack { request: request.into() }),
        }
        Vec::new()
    }

    fn push_nack(&mut self, request: &str, code: u16, detail: String) {
        let name = NackCode::from_u16(code).map_or("UNKNOWN", NackCode::name).to_string();
        log::warn!("host rejected {request}: {name} {detail}");
        self.notices.push(Notice::Nack { request: request.into(), code, name, detail });
    }

    fn fail_teach_stop(&mut self, detail: String) {
        if let Some(pos) = self.expected.iter().position(|e| matches!(e, Expect::TeachStop { .. })) {
            self.expected.remove(pos);
        }
        self.notices.push(Notice::Error { detail });
    }

    fn on_chunk(&mut self, chunk: TrajectoryUpload, now: f64) -> Vec<WireMessage> {
        let chunks = match self.assembler.push(chunk, now) {
            Ok(Some(chunks)) => chunks,
            Ok(None) => return Vec::new(),
            Err(e) => {
                self.fail_teach_stop(e.to_string());
                return Vec::new();
            }
        };
        let explicit = match self.expected.front() {
            Some(Expect::TeachStop { object_id }) => object_id.clone(),
            _ => None,
        };
        if matches!(self.expected.front(), Some(Expect::TeachStop { .. })) {
            self.expected.pop_front();
        }
        match self.train(&chunks, explicit) {
            Ok(model) => {
                let object_id = model.object_id.clone().expect("trained models carry an object id");
                let samples: usize = chunks.iter().map(|c| c.samples.len()).sum();
                self.notices.push(Notice::ModelTrained { object_id: object_id.clone(), samples });
                self.last_trained = Some(object_id.clone());
                let doc = dmp::to_document(&model);
                self.models.push(model);
                self.expected.push_back(Expect::ModelUpload { object_id });
                vec![WireMessage::DmpModelUpload { model: doc.into_bytes() }]
            }
            Err(e) => {
                self.notices.push(Notice::Error { detail: e.to_string() });
                Vec::new()
            }
        }
    }

    fn train(&self, chunks: &[TrajectoryUpload], explicit: Option<String>) -> Result<DmpModel, GatewayError> {
        let object_id = match explicit {
            Some(id) => id,
            None => {
                let last = chunks
                    .iter()
                    .max_by_key(|c| c.chunk_index)
                    .and_then(|c| c.samples.last())
                    .ok_or_else(|| GatewayError::IncompleteUpload("empty upload".into()))?;
                let tool = tool_position(last, &self.kin.dh);
                nearest_object(&self.twin.scene, &tool).ok_or(GatewayError::NoObject)?.id.clone()
            }
        };
        train_from_upload(chunks, &object_id, &self.kin.dh, &self.cfg.train, self.store.as_ref())
    }
}
