//! WebSocket bridge for the browser console. Every message is one JSON
//! object with a `type` field.
//!
//! Outbound: `twin` (periodic), `kinematics` (on connect), `fk_origins`
//! (on request), `error`, plus every gateway [`Notice`] (`ack`, `nack`,
//! `model_trained`, `execution_done`).
//!
//! Inbound: `hand {x,y,z}`, `teach_start`, `teach_stop {object_id?}`,
//! `execute {object_id?}`, `fk_origins {q?}`.

use std::io;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use super::session::SessionObserver;
use super::{Command, HandSample, Notice, PoseSource, SourceEvent, TwinState};
use crate::kinematics::{frame_origins, DhRow, JointVector, KinematicsConfig};
use crate::scene::SceneObject;

/// Twin messages are pushed at most this often per client.
pub const TWIN_PERIOD: Duration = Duration::from_millis(50);
const READ_POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConsoleInbound {
    Hand {
        x: f64,
        y: f64,
        z: f64,
    },
    TeachStart,
    TeachStop {
        #[serde(default)]
        object_id: Option<String>,
    },
    Execute {
        #[serde(default)]
        object_id: Option<String>,
    },
    FkOrigins {
        #[serde(default)]
        q: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConsoleOutbound {
    Twin { q: [f64; 6], scene: Vec<SceneObject>, latency_ms: f64 },
    Kinematics { dh: Vec<DhRow>, joint_limits: Vec<[f64; 2]>, home: [f64; 6] },
    FkOrigins { q: [f64; 6], origins: Vec<[f64; 3]> },
    Error { detail: String },
}

impl ConsoleOutbound {
    pub fn twin(twin: &TwinState) -> Self {
        ConsoleOutbound::Twin { q: twin.q.0, scene: twin.scene.clone(), latency_ms: twin.latency_ms() }
    }

    pub fn kinematics(kin: &KinematicsConfig) -> Self {
        ConsoleOutbound::Kinematics {
            dh: kin.dh.rows.to_vec(),
            joint_limits: kin.dh.joint_limits.to_vec(),
            home: kin.home.0,
        }
    }

    pub fn fk_origins(q: &JointVector, kin: &KinematicsConfig) -> Self {
        let origins = frame_origins(q, &kin.dh).iter().map(|p| [p.x, p.y, p.z]).collect();
        ConsoleOutbound::FkOrigins { q: q.0, origins }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("console message serializes")
    }
}

/// State shared between the session loop and the console clients.
pub struct ConsoleHub {
    twin: RwLock<TwinState>,
    clients: Mutex<Vec<Sender<String>>>,
    kin: KinematicsConfig,
    events: Sender<SourceEvent>,
    frame: AtomicU64,
    start: Instant,
}

impl ConsoleHub {
    /// The hub and the pose source fed by console `hand` and command messages.
    pub fn new(kin: KinematicsConfig) -> (Arc<Self>, ConsoleBridge) {
        let (events, rx) = mpsc::channel();
        let hub = Arc::new(Self {
            twin: RwLock::new(TwinState::new(kin.home)),
            clients: Mutex::new(Vec::new()),
            kin,
            events,
            frame: AtomicU64::new(0),
            start: Instant::now(),
        });
        (hub, ConsoleBridge { rx })
    }

    /// A consistent copy of the twin.
    pub fn twin_snapshot(&self) -> TwinState {
        self.twin.read().expect("twin lock").clone()
    }

    fn broadcast(&self, text: String) {
        self.clients.lock().expect("client lock").retain(|c| c.send(text.clone()).is_ok());
    }

    /// Handles one inbound text message, returning the direct reply if any.
    pub fn handle_text(&self, text: &str) -> Option<ConsoleOutbound> {
        let msg: ConsoleInbound = match serde_json::from_str(text) {
            Ok(msg) => msg,
            Err(e) => return Some(ConsoleOutbound::Error { detail: format!("bad console message: {e}") }),
        };
        let event = match msg {
            ConsoleInbound::Hand { x, y, z } => {
                if ![x, y, z].iter().all(|v| v.is_finite()) {
                    return Some(ConsoleOutbound::Error { detail: "hand position must be finite".into() });
                }
                SourceEvent::Sample(HandSample {
                    frame: self.frame.fetch_add(1, Ordering::SeqCst) + 1,
                    t: self.start.elapsed().as_secs_f64(),
                    position: [x, y, z],
                })
            }
            ConsoleInbound::TeachStart => SourceEvent::Command(Command::TeachStart),
            ConsoleInbound::TeachStop { object_id } => SourceEvent::Command(Command::TeachStop { object_id }),
            ConsoleInbound::Execute { object_id } => SourceEvent::Command(Command::Execute { object_id }),
            ConsoleInbound::FkOrigins { q } => {
                let q = match q {
                    None => self.twin_snapshot().q,
                    Some(v) => match JointVector::from_slice(&v).filter(JointVector::is_finite) {
                        Some(q) => q,
                        None => return Some(ConsoleOutbound::Error { detail: "q must have 6 finite entries".into() }),
                    },
                };
                return Some(ConsoleOutbound::fk_origins(&q, &self.kin));
            }
        };
        if self.events.send(event).is_err() {
            return Some(ConsoleOutbound::Error { detail: "gateway session has ended".into() });
        }
        None
    }
}

impl SessionObserver for ConsoleHub {
    fn twin(&self, twin: &TwinState) {
        *self.twin.write().expect("twin lock") = twin.clone();
    }

    fn notice(&self, notice: &Notice) {
        self.broadcast(serde_json::to_string(notice).expect("notice serializes"));
    }
}

/// Pose source fed by console clients; ends when the hub is dropped.
pub struct ConsoleBridge {
    rx: Receiver<SourceEvent>,
}

impl PoseSource for ConsoleBridge {
    fn next_event(&mut self) -> Option<SourceEvent> {
        self.rx.recv().ok()
    }
}

/// Accepts console WebSocket clients until dropped.
pub struct ConsoleServer {
    local_addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ConsoleServer {
    pub fn spawn(listener: TcpListener, hub: Arc<ConsoleHub>) -> io::Result<Self> {
        let local_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::Builder::new().name("console-accept".into()).spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        let hub = Arc::clone(&hub);
                        let flag = Arc::clone(&flag);
                        let spawned = thread::Builder::new().name(format!("console-{peer}")).spawn(move || {
                            if let Err(e) = serve_client(stream, &hub, &flag) {
                                log::info!("console client {peer} closed: {e}");
                            }
                        });
                        if let Err(e) = spawned {
                            log::warn!("console client thread: {e}");
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(READ_POLL),
                    Err(e) => {
                        log::warn!("console accept failed: {e}");
                        thread::sleep(READ_POLL);
                    }
                }
            }
        })?;
        Ok(Self { local_addr, stop, thread: Some(thread) })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }
}

impl Drop for ConsoleServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn serve_client(stream: TcpStream, hub: &ConsoleHub, stop: &AtomicBool) -> Result<(), String> {
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    let mut ws = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_ref().set_read_timeout(Some(READ_POLL)).map_err(|e| e.to_string())?;
    let (tx, rx) = mpsc::channel();
    hub.clients.lock().expect("client lock").push(tx);

    send_json(&mut ws, ConsoleOutbound::kinematics(&hub.kin).to_json())?;
    let mut last_twin: Option<Instant> = None;
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(reply) = hub.handle_text(&text) {
                    send_json(&mut ws, reply.to_json())?;
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.to_string()),
        }
        while let Ok(text) = rx.try_recv() {
            send_json(&mut ws, text)?;
        }
        if !last_twin.is_some_and(|t| t.elapsed() < TWIN_PERIOD) {
            send_json(&mut ws, ConsoleOutbound::twin(&hub.twin_snapshot()).to_json())?;
            last_twin = Some(Instant::now());
        }
    }
    let _ = ws.close(None);
    Ok(())
}

fn send_json(ws: &mut WebSocket<TcpStream>, text: String) -> Result<(), String> {
    ws.send(Message::Text(text)).map_err(|e| e.to_string())
}
