//! Drives a [`Gateway`] against a host over TCP.

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{Gateway, GatewayError, GatewayStats, Notice, PoseSource, SourceEvent, TwinState};
use crate::dmp::DmpModel;
use crate::wire::{self, FrameReader, WireMessage};

/// Receives twin updates and notices as the session runs.
pub trait SessionObserver: Send + Sync {
    fn twin(&self, twin: &TwinState);
    fn notice(&self, notice: &Notice);
}

#[derive(Debug, Clone)]
pub struct SessionOptions {
    /// Replay samples at their recorded timestamps instead of as fast as
    /// they can be read.
    pub paced: bool,
    /// Give up after this long; `None` runs until the source ends.
    pub timeout: Option<Duration>,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { paced: true, timeout: Some(Duration::from_secs(120)) }
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub stats: GatewayStats,
    pub twin: TwinState,
    pub models: Vec<DmpModel>,
    pub notices: Vec<Notice>,
    pub elapsed: Duration,
    /// False when the session ended on timeout or a lost link.
    pub completed: bool,
}

enum Input {
    Host(WireMessage),
    HostClosed(Option<String>),
    Source(SourceEvent),
    SourceEnd,
}

/// Connects to the host, runs `source` to completion, and waits until every
/// outstanding request has been answered.
pub fn run_session<S: PoseSource + 'static>(
    host: impl ToSocketAddrs,
    mut gateway: Gateway,
    source: S,
    opts: &SessionOptions,
    observer: Option<Arc<dyn SessionObserver>>,
) -> Result<SessionReport, GatewayError> {
    let link = |e: std::io::Error| GatewayError::Link(e.to_string());
    let stream = TcpStream::connect(host).map_err(link)?;
    stream.set_nodelay(true).map_err(link)?;
    let mut writer = stream.try_clone().map_err(link)?;
    let mut reader_stream = stream.try_clone().map_err(link)?;
    let (tx, rx) = mpsc::channel();

    {
        let tx = tx.clone();
        thread::Builder::new()
            .name("gateway-link-reader".into())
            .spawn(move || {
                let mut reader = FrameReader::new();
                let mut buf = vec![0u8; 8192];
                loop {
                    let n = match reader_stream.read(&mut buf) {
                        Ok(0) => {
                            let _ = tx.send(Input::HostClosed(reader.finish().err().map(|e| e.to_string())));
                            return;
                        }
                        Ok(n) => n,
                        Err(e) => {
                            let _ = tx.send(Input::HostClosed(Some(e.to_string())));
                            return;
                        }
                    };
                    reader.push(&buf[..n]);
                    loop {
                        match reader.next_message() {
                            Ok(Some(msg)) => {
                                if tx.send(Input::Host(msg)).is_err() {
                                    return;
                                }
                            }
                            Ok(None) => break,
                            Err(e) => {
                                let _ = tx.send(Input::HostClosed(Some(e.to_string())));
                                return;
                            }
                        }
                    }
                }
            })
            .map_err(link)?;
    }

    let start = Instant::now();
    {
        let tx = tx.clone();
        let paced = opts.paced;
        let mut source = source;
        thread::Builder::new()
            .name("gateway-source".into())
            .spawn(move || {
                while let Some(event) = source.next_event() {
                    if let (true, SourceEvent::Sample(s)) = (paced, &event) {
                        let due = start + Duration::from_secs_f64(s.t.max(0.0));
                        if let Some(wait) = due.checked_duration_since(Instant::now()) {
                            thread::sleep(wait);
                        }
                    }
                    if tx.send(Input::Source(event)).is_err() {
                        return;
                    }
                }
                let _ = tx.send(Input::SourceEnd);
            })
            .map_err(link)?;
    }
    drop(tx);

    let poll = Duration::from_secs_f64(gateway.cfg.host_dt / 2.0);
    let mut source_done = false;
    let mut notices = Vec::new();
    let mut completed = false;

    let mut send = |msgs: Vec<WireMessage>| -> Result<(), GatewayError> {
        for m in msgs {
            let bytes = wire::encode(&m).map_err(|e| GatewayError::Link(e.to_string()))?;
            writer.write_all(&bytes).map_err(|e| GatewayError::Link(e.to_string()))?;
        }
        Ok(())
    };

    loop {
        if opts.timeout.is_some_and(|limit| start.elapsed() > limit) {
            log::warn!("session timed out");
            break;
        }
        let now = start.elapsed().as_secs_f64();
        let input = match rx.recv_timeout(poll) {
            Ok(input) => Some(input),
            Err(RecvTimeoutError::Timeout) => None,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let mut twin_changed = false;
        match input {
            Some(Input::Host(msg)) => {
                twin_changed = matches!(
                    msg,
                    WireMessage::JointState { .. } | WireMessage::SceneSnapshot { .. } | WireMessage::Ack { .. }
                );
                send(gateway.on_host(msg, now))?;
            }
            Some(Input::Source(event)) => send(gateway.on_source(event, now))?,
            Some(Input::SourceEnd) => {
                source_done = true;
                send(gateway.flush_held(now))?;
            }
            Some(Input::HostClosed(reason)) => {
                if let Some(reason) = reason {
                    log::warn!("host link closed: {reason}");
                }
                break;
            }
            None => send(gateway.poll(now))?,
        }
        for n in gateway.drain_notices() {
            log::info!("{n:?}");
            if let Some(obs) = &observer {
                obs.notice(&n);
            }
            notices.push(n);
        }
        if twin_changed {
            if let Some(obs) = &observer {
                obs.twin(gateway.twin());
            }
        }
        if source_done && !gateway.busy() {
            completed = true;
            break;
        }
    }
    let _ = stream.shutdown(std::net::Shutdown::Both);

    Ok(SessionReport {
        stats: gateway.stats().clone(),
        twin: gateway.twin().clone(),
        models: gateway.models().to_vec(),
        notices,
        elapsed: start.elapsed(),
        completed,
    })
}
