//! Length-prefixed binary framing for the operator <-> robot TCP link.
//!
//! ```text
//! frame   = len:u32le  tag:u8  payload
//! len     = 1 + payload length (the tag is counted)
//! integer = little-endian
//! real    = IEEE-754 binary64, little-endian
//! string  = count:u16le  UTF-8 bytes
//! array   = count:u16le  elements
//! ```
//!
//! Tag `0x00` is reserved for version negotiation. Apart from trajectory and
//! model uploads, every frame fits in [`FRAME_BUDGET`] bytes.

use thiserror::Error;

use crate::kinematics::{JointVector, TrajectoryLog, DOF};
use crate::scene::{SceneObject, Shape, MAX_OBJECT_ID_LEN, MAX_SCENE_OBJECTS};

/// Size ceiling for every non-chunked frame, header included.
pub const FRAME_BUDGET: usize = 4096;

/// Largest `len` field the reader accepts.
pub const MAX_FRAME_LEN: usize = 4 * 1024 * 1024;

pub const MAX_DETAIL_LEN: usize = 255;

const HEADER_LEN: usize = 4;
const JOINT_ROW_BYTES: usize = DOF * 8;
/// Header, tag, dt, sample count, chunk index, chunk count.
pub const UPLOAD_OVERHEAD: usize = HEADER_LEN + 1 + 8 + 2 + 4 + 4;

pub mod tag {
    pub const VERSION: u8 = 0x00;
    pub const HAND_DELTA: u8 = 0x01;
    pub const JOINT_STATE: u8 = 0x02;
    pub const SCENE_SNAPSHOT: u8 = 0x03;
    pub const TEACH_START: u8 = 0x04;
    pub const TEACH_STOP: u8 = 0x05;
    pub const TRAJECTORY_UPLOAD: u8 = 0x06;
    pub const DMP_MODEL_UPLOAD: u8 = 0x07;
    pub const EXECUTE_TO_OBJECT: u8 = 0x08;
    pub const ACK: u8 = 0x09;
    pub const NACK_ERROR: u8 = 0x0A;
}

const SHAPE_SPHERE: u8 = 0;
const SHAPE_BOX: u8 = 1;

/// Error codes carried by [`WireMessage::NackError`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum NackCode {
    Unreachable = 1,
    EmptyDemo = 2,
    BadState = 3,
    NoObject = 4,
    NoModel = 5,
    Blocked = 6,
    BadModel = 7,
    Protocol = 8,
}

impl NackCode {
    pub fn from_u16(code: u16) -> Option<Self> {
        use NackCode::*;
        [Unreachable, EmptyDemo, BadState, NoObject, NoModel, Blocked, BadModel, Protocol]
            .into_iter()
            .find(|c| *c as u16 == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            NackCode::Unreachable => "UNREACHABLE",
            NackCode::EmptyDemo => "EMPTY_DEMO",
            NackCode::BadState => "BAD_STATE",
            NackCode::NoObject => "NO_OBJECT",
            NackCode::NoModel => "NO_MODEL",
            NackCode::Blocked => "BLOCKED",
            NackCode::BadModel => "BAD_MODEL",
            NackCode::Protocol => "PROTOCOL",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryUpload {
    pub dt: f64,
    pub samples: Vec<JointVector>,
    pub chunk_index: u32,
    pub chunk_count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    HandDelta { frame: u64, delta: [f64; 3] },
    JointState { frame: u64, q: JointVector },
    SceneSnapshot { objects: Vec<SceneObject> },
    TeachStart,
    TeachStop,
    TrajectoryUpload(TrajectoryUpload),
    DmpModelUpload { model: Vec<u8> },
    ExecuteToObject { object_id: String },
    Ack { ref_frame: u64 },
    NackError { code: u16, detail: String },
}

impl WireMessage {
    pub fn nack(code: NackCode, detail: impl Into<String>) -> Self {
        let mut detail: String = detail.into();
        if detail.len() > MAX_DETAIL_LEN {
            let mut cut = MAX_DETAIL_LEN;
            while !detail.is_char_boundary(cut) {
                cut -= 1;
            }
            detail.truncate(cut);
        }
        WireMessage::NackError { code: code as u16, detail }
    }

    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::HandDelta { .. } => tag::HAND_DELTA,
            WireMessage::JointState { .. } => tag::JOINT_STATE,
            WireMessage::SceneSnapshot { .. } => tag::SCENE_SNAPSHOT,
            WireMessage::TeachStart => tag::TEACH_START,
            WireMessage::TeachStop => tag::TEACH_STOP,
            WireMessage::TrajectoryUpload(_) => tag::TRAJECTORY_UPLOAD,
            WireMessage::DmpModelUpload { .. } => tag::DMP_MODEL_UPLOAD,
            WireMessage::ExecuteToObject { .. } => tag::EXECUTE_TO_OBJECT,
            WireMessage::Ack { .. } => tag::ACK,
            WireMessage::NackError { .. } => tag::NACK_ERROR,
        }
    }

    /// Uploads may exceed [`FRAME_BUDGET`]; everything else may not.
    pub fn is_chunked(&self) -> bool {
        matches!(self, WireMessage::TrajectoryUpload(_) | WireMessage::DmpModelUpload { .. })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("encoded {kind} is {size} bytes, limit {limit}")]
    Size { kind: &'static str, size: usize, limit: usize },
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("stream closed with {0} bytes of an incomplete frame")]
    Truncated(usize),
    #[error("trajectory upload: {0}")]
    Upload(String),
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn count(&mut self, n: usize, what: &'static str) -> Result<(), WireError> {
        let n16 = u16::try_from(n).map_err(|_| WireError::Size { kind: what, size: n, limit: u16::MAX as usize })?;
        self.u16(n16);
        Ok(())
    }
    fn string(&mut self, s: &str, limit: usize, what: &'static str) -> Result<(), WireError> {
        if s.len() > limit {
            return Err(WireError::Size { kind: what, size: s.len(), limit });
        }
        self.count(s.len(), what)?;
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let mut e = Encoder { buf: vec![0; HEADER_LEN] };
    e.u8(msg.tag());
    match msg {
        WireMessage::HandDelta { frame, delta } => {
            e.u64(*frame);
            delta.iter().for_each(|v| e.f64(*v));
        }
        WireMessage::JointState { frame, q } => {
            e.u64(*frame);
            q.0.iter().for_each(|v| e.f64(*v));
        }
        WireMessage::SceneSnapshot { objects } => {
            if objects.len() > MAX_SCENE_OBJECTS {
                return Err(WireError::Size {
                    kind: "scene object count",
                    size: objects.len(),
                    limit: MAX_SCENE_OBJECTS,
                });
            }
            e.count(objects.len(), "scene object count")?;
            for obj in objects {
                e.string(&obj.id, MAX_OBJECT_ID_LEN, "object id")?;
                obj.centroid.iter().for_each(|v| e.f64(*v));
                match obj.shape {
                    Shape::Sphere { radius } => {
                        e.u8(SHAPE_SPHERE);
                        e.f64(radius);
                    }
                    Shape::Box { half_extents } => {
                        e.u8(SHAPE_BOX);
                        half_extents.iter().for_each(|v| e.f64(*v));
                    }
                }
            }
        }
        WireMessage::TeachStart | WireMessage::TeachStop => {}
        WireMessage::TrajectoryUpload(up) => {
            e.f64(up.dt);
            e.count(up.samples.len(), "trajectory chunk rows")?;
            for q in &up.samples {
                q.0.iter().for_each(|v| e.f64(*v));
            }
            e.u32(up.chunk_index);
            e.u32(up.chunk_count);
        }
        WireMessage::DmpModelUpload { model } => {
            e.count(model.len(), "model document")?;
            e.buf.extend_from_slice(model);
        }
        WireMessage::ExecuteToObject { object_id } => {
            e.string(object_id, MAX_OBJECT_ID_LEN, "object id")?;
        }
        WireMessage::Ack { ref_frame } => e.u64(*ref_frame),
        WireMessage::NackError { code, detail } => {
            e.u16(*code);
            e.string(detail, MAX_DETAIL_LEN, "nack detail")?;
        }
    }
    let size = e.buf.len();
    if !msg.is_chunked() && size > FRAME_BUDGET {
        return Err(WireError::Size { kind: "frame", size, limit: FRAME_BUDGET });
    }
    if size - HEADER_LEN > MAX_FRAME_LEN {
        return Err(WireError::Size { kind: "frame", size, limit: MAX_FRAME_LEN + HEADER_LEN });
    }
    let len = (size - HEADER_LEN) as u32;
    e.buf[..HEADER_LEN].copy_from_slice(&len.to_le_bytes());
    Ok(e.buf)
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            WireError::Protocol(format!("payload too short: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s<const N: usize>(&mut self) -> Result<[f64; N], WireError> {
        let mut out = [0.0; N];
        for v in &mut out {
            *v = self.f64()?;
        }
        Ok(out)
    }
    fn string(&mut self, limit: usize) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        if n > limit {
            return Err(WireError::Protocol(format!("string of {n} bytes exceeds {limit}")));
        }
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| WireError::Protocol("string is not UTF-8".into()))
    }
}

/// Decodes one frame from the front of `bytes`.
///
/// `Ok(None)` means the frame is not complete yet. On success returns the
/// message and the number of bytes consumed.
pub fn decode(bytes: &[u8]) -> Result<Option<(WireMessage, usize)>, WireError> {
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let len = u32::from_le_bytes(bytes[..HEADER_LEN].try_into().expect("4 bytes")) as usize;
    if len == 0 {
        return Err(WireError::Protocol("zero-length frame".into()));
    }
    if len > MAX_FRAME_LEN {
        return Err(WireError::Protocol(format!("declared length {len} exceeds {MAX_FRAME_LEN}")));
    }
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Ok(None);
    }
    let frame = &bytes[HEADER_LEN..total];
    let mut d = Decoder { bytes: &frame[1..], pos: 0 };
    let msg = match frame[0] {
        tag::HAND_DELTA => WireMessage::HandDelta { frame: d.u64()?, delta: d.f64s::<3>()? },
        tag::JOINT_STATE => WireMessage::JointState { frame: d.u64()?, q: JointVector(d.f64s::<DOF>()?) },
        tag::SCENE_SNAPSHOT => {
            let n = d.u16()? as usize;
            if n > MAX_SCENE_OBJECTS {
                return Err(WireError::Protocol(format!("{n} scene objects exceed {MAX_SCENE_OBJECTS}")));
            }
            let mut objects = Vec::with_capacity(n);
            for _ in 0..n {
                let id = d.string(MAX_OBJECT_ID_LEN)?;
                let centroid = d.f64s::<3>()?;
                let shape = match d.u8()? {
                    SHAPE_SPHERE => Shape::Sphere { radius: d.f64()? },
                    SHAPE_BOX => Shape::Box { half_extents: d.f64s::<3>()? },
                    other => return Err(WireError::Protocol(format!("unknown shape kind {other}"))),
                };
                objects.push(SceneObject { id, centroid, shape });
            }
            WireMessage::SceneSnapshot { objects }
        }
        tag::TEACH_START => WireMessage::TeachStart,
        tag::TEACH_STOP => WireMessage::TeachStop,
        tag::TRAJECTORY_UPLOAD => {
            let dt = d.f64()?;
            let n = d.u16()? as usize;
            let mut samples = Vec::with_capacity(n.min(frame.len() / JOINT_ROW_BYTES + 1));
            for _ in 0..n {
                samples.push(JointVector(d.f64s::<DOF>()?));
            }
            let chunk_index = d.u32()?;
            let chunk_count = d.u32()?;
            WireMessage::TrajectoryUpload(TrajectoryUpload { dt, samples, chunk_index, chunk_count })
        }
        tag::DMP_MODEL_UPLOAD => {
            let n = d.u16()? as usize;
            WireMessage::DmpModelUpload { model: d.take(n)?.to_vec() }
        }
        tag::EXECUTE_TO_OBJECT => WireMessage::ExecuteToObject { object_id: d.string(MAX_OBJECT_ID_LEN)? },
        tag::ACK => WireMessage::Ack { ref_frame: d.u64()? },
        tag::NACK_ERROR => WireMessage::NackError { code: d.u16()?, detail: d.string(MAX_DETAIL_LEN)? },
        other => return Err(WireError::UnknownTag(other)),
    };
    if d.pos != d.bytes.len() {
        return Err(WireError::Protocol(format!(
            "declared length {len} but payload used {} bytes",
            d.pos + 1
        )));
    }
    Ok(Some((msg, total)))
}

/// Incremental frame reader for one connection.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
    failed: bool,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, `Ok(None)` if more bytes are needed. After an
    /// error the reader stays failed.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, WireError> {
        if self.failed {
            return Err(WireError::Protocol("reader failed earlier".into()));
        }
        match decode(&self.buf) {
            Ok(Some((msg, used))) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Ok(None) => Ok(None),
            Err(e) => {
                self.failed = true;
                Err(e)
            }
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Call at end of stream: leftover bytes are a truncated frame.
    pub fn finish(&self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::Truncated(self.buf.len()))
        }
    }
}

/// Rows of a trajectory chunk that fit in `max_chunk_bytes`.
pub fn rows_per_chunk(max_chunk_bytes: usize) -> usize {
    (max_chunk_bytes.saturating_sub(UPLOAD_OVERHEAD) / JOINT_ROW_BYTES).min(u16::MAX as usize)
}

/// Splits a log into upload frames no larger than `max_chunk_bytes`.
pub fn chunk_trajectory(log: &TrajectoryLog, max_chunk_bytes: usize) -> Result<Vec<TrajectoryUpload>, WireError> {
    if log.is_empty() {
        return Err(WireError::Upload("trajectory log has no samples".into()));
    }
    let rows = rows_per_chunk(max_chunk_bytes);
    if rows == 0 {
        return Err(WireError::Upload(format!(
            "chunk limit {max_chunk_bytes} bytes cannot hold one sample row"
        )));
    }
    let positions: Vec<JointVector> = log.positions().copied().collect();
    let chunk_count = positions.len().div_ceil(rows);
    let chunk_count_u32 = u32::try_from(chunk_count).map_err(|_| WireError::Upload("too many chunks".into()))?;
    Ok(positions
        .chunks(rows)
        .enumerate()
        .map(|(i, rows)| TrajectoryUpload {
            dt: log.dt(),
            samples: rows.to_vec(),
            chunk_index: i as u32,
            chunk_count: chunk_count_u32,
        })
        .collect())
}

/// Reassembles chunks (in any order) into a log starting at `t = 0`.
pub fn reassemble(chunks: &[TrajectoryUpload]) -> Result<TrajectoryLog, WireError> {
    let first = chunks.first().ok_or_else(|| WireError::Upload("no chunks".into()))?;
    let count = first.chunk_count as usize;
    let mut slots: Vec<Option<&TrajectoryUpload>> = vec![None; count];
    for c in chunks {
        if c.chunk_count as usize != count {
            return Err(WireError::Upload("inconsistent chunk_count".into()));
        }
        if c.dt.to_bits() != first.dt.to_bits() {
            return Err(WireError::Upload("inconsistent dt across chunks".into()));
        }
        let slot = slots
            .get_mut(c.chunk_index as usize)
            .ok_or_else(|| WireError::Upload(format!("chunk index {} out of range", c.chunk_index)))?;
        if slot.is_some() {
            return Err(WireError::Upload(format!("duplicate chunk {}", c.chunk_index)));
        }
        *slot = Some(c);
    }
    let missing: Vec<usize> = slots.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
    if !missing.is_empty() {
        return Err(WireError::Upload(format!("missing chunks {missing:?} of {count}")));
    }
    Ok(TrajectoryLog::from_positions(
        slots.into_iter().flatten().flat_map(|c| c.samples.iter().copied()),
        first.dt,
    ))
}
