//! Hand-pose sources.

use std::collections::VecDeque;
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::GatewayError;
use crate::calibration::CalibrationModel;

/// One tracker reading, in the tracker's own frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HandSample {
    pub frame: u64,
    /// Seconds since the source started.
    pub t: f64,
    pub position: [f64; 3],
}

/// Operator commands that travel alongside the sample stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    TeachStart,
    /// Without an id the demonstration is attributed to the object nearest
    /// its final tool position.
    TeachStop { object_id: Option<String> },
    /// Without an id, targets the object of the most recently trained model.
    Execute { object_id: Option<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceEvent {
    Sample(HandSample),
    Command(Command),
}

/// A stream of hand samples and commands, ordered by frame. `None` ends the
/// stream.
pub trait PoseSource: Send {
    fn next_event(&mut self) -> Option<SourceEvent>;
}

impl<S: PoseSource + ?Sized> PoseSource for Box<S> {
    fn next_event(&mut self) -> Option<SourceEvent> {
        (**self).next_event()
    }
}

/// Replays a recorded `frame,t,x,y,z` CSV.
#[derive(Debug, Clone)]
pub struct FileReplay {
    samples: VecDeque<HandSample>,
}

#[derive(Deserialize)]
struct ReplayRow {
    frame: u64,
    t: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl FileReplay {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, GatewayError> {
        let mut samples = VecDeque::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        for (i, row) in rdr.deserialize::<ReplayRow>().enumerate() {
            let row = row.map_err(|e| GatewayError::Source(format!("replay row {i}: {e}")))?;
            let position = [row.x, row.y, row.z];
            if !(row.t.is_finite() && position.iter().all(|v| v.is_finite())) {
                return Err(GatewayError::Source(format!("replay row {i}: non-finite value")));
            }
            if samples.back().is_some_and(|p: &HandSample| row.frame <= p.frame) {
                return Err(GatewayError::Source(format!("replay row {i}: frame {} is not increasing", row.frame)));
            }
            samples.push_back(HandSample { frame: row.frame, t: row.t, position });
        }
        Ok(Self { samples })
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl PoseSource for FileReplay {
    fn next_event(&mut self) -> Option<SourceEvent> {
        self.samples.pop_front().map(SourceEvent::Sample)
    }
}

/// One step of a scripted hand motion, in calibrated (robot) coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptStep {
    /// Minimum-jerk move by `displacement` metres over `duration` seconds.
    Move { displacement: [f64; 3], duration: f64 },
    Hold { duration: f64 },
    Command(Command),
}

/// Synthesizes tracker samples by running a script through the inverse of a
/// calibration model.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    events: VecDeque<SourceEvent>,
}

/// Geometry of the built-in `demo` script.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoScript {
    pub approach: [f64; 3],
    pub reach: [f64; 3],
    pub reach_duration: f64,
    pub rate_hz: f64,
}

impl Default for DemoScript {
    fn default() -> Self {
        Self { approach: [0.0, 0.02, 0.0], reach: [0.0, 0.15, -0.15], reach_duration: 2.0, rate_hz: 100.0 }
    }
}

impl DemoScript {
    /// Steer, teach a straight reach, stop, steer back, execute.
    pub fn steps(&self) -> Vec<ScriptStep> {
        let back = [
            -self.approach[0] - self.reach[0],
            -self.approach[1] - self.reach[1],
            -self.approach[2] - self.reach[2],
        ];
        vec![
            ScriptStep::Move { displacement: self.approach, duration: 0.5 },
            ScriptStep::Command(Command::TeachStart),
            ScriptStep::Move { displacement: self.reach, duration: self.reach_duration },
            ScriptStep::Hold { duration: 0.1 },
            ScriptStep::Command(Command::TeachStop { object_id: None }),
            ScriptStep::Move { displacement: back, duration: 1.0 },
            ScriptStep::Command(Command::Execute { object_id: None }),
        ]
    }

    /// Teaching only: steer, teach, stop.
    pub fn teach_steps(&self) -> Vec<ScriptStep> {
        let mut steps = self.steps();
        steps.truncate(5);
        steps
    }
}

impl ScriptedGenerator {
    /// Built-in scripts: `demo` (full session) and `teach` (no execution).
    pub fn named(name: &str, cal: &CalibrationModel) -> Result<Self, GatewayError> {
        let demo = DemoScript::default();
        let steps = match name {
            "demo" => demo.steps(),
            "teach" => demo.teach_steps(),
            other => return Err(GatewayError::Source(format!("unknown script {other:?} (try demo or teach)"))),
        };
        Self::new(&steps, [0.0, 0.0, 0.3], demo.rate_hz, cal)
    }

    /// Samples the script at `rate_hz` starting from `origin`.
    pub fn new(steps: &[ScriptStep], origin: [f64; 3], rate_hz: f64, cal: &CalibrationModel) -> Result<Self, GatewayError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(GatewayError::Source(format!("rate must be > 0, got {rate_hz}")));
        }
        let period = 1.0 / rate_hz;
        let mut events = VecDeque::new();
        let mut frame = 0u64;
        let mut t = 0.0;
        let mut pos = origin;
        let mut emit = |events: &mut VecDeque<SourceEvent>, t: f64, p: [f64; 3]| {
            frame += 1;
            events.push_back(SourceEvent::Sample(HandSample { frame, t, position: invert(cal, p) }));
        };
        emit(&mut events, t, pos);
        for step in steps {
            let (d, duration) = match step {
                ScriptStep::Move { displacement, duration } => (*displacement, *duration),
                ScriptStep::Hold { duration } => ([0.0; 3], *duration),
                ScriptStep::Command(cmd) => {
                    events.push_back(SourceEvent::Command(cmd.clone()));
                    continue;
                }
            };
            if !(duration.is_finite() && duration > 0.0) {
                return Err(GatewayError::Source(format!("step duration must be > 0, got {duration}")));
            }
            let n = (duration * rate_hz).round().max(1.0) as usize;
            let start = pos;
            for k in 1..=n {
                let s = min_jerk(k as f64 / n as f64);
                t += period;
                pos = [start[0] + s * d[0], start[1] + s * d[1], start[2] + s * d[2]];
                emit(&mut events, t, pos);
            }
        }
        Ok(Self { events })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

impl PoseSource for ScriptedGenerator {
    fn next_event(&mut self) -> Option<SourceEvent> {
        self.events.pop_front()
    }
}

/// `10 s^3 - 15 s^4 + 6 s^5`.
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Tracker reading that calibrates to `p`.
pub fn invert(cal: &CalibrationModel, p: [f64; 3]) -> [f64; 3] {
    let axes = cal.axes();
    [0, 1, 2].map(|i| (p[i] - axes[i].offset) / axes[i].scale)
}
