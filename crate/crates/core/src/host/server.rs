//! TCP front end for [`Host`]: one reader and one writer thread per
//! connection, and a single control loop that owns the host.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::{Host, HostState, Outbound, Outbox, TransitionEvent};
use crate::scene::{SceneError, SceneObject};
use crate::wire::{self, FrameReader, NackCode, WireError, WireMessage};

const ACCEPT_POLL: Duration = Duration::from_millis(10);
const READ_BUFFER: usize = 8192;

enum Control {
    Connected(Connection),
    Inbound { conn: u64, msg: WireMessage },
    ProtocolError { conn: u64, error: WireError },
    Disconnected { conn: u64 },
    AddObject { object: SceneObject, done: Sender<Result<(), SceneError>> },
    Snapshot { done: Sender<HostState> },
    Shutdown,
}

struct SharedOutbox {
    inner: Mutex<(Outbox, bool)>,
    ready: Condvar,
}

impl SharedOutbox {
    fn push_all(&self, items: impl IntoIterator<Item = Outbound>) {
        let mut guard = self.inner.lock().expect("outbox lock");
        for item in items {
            guard.0.push(item);
        }
        self.ready.notify_one();
    }

    fn close(&self) {
        self.inner.lock().expect("outbox lock").1 = true;
        self.ready.notify_one();
    }

    /// Blocks until an item is available; `None` once closed and drained.
    fn pop(&self) -> Option<Outbound> {
        let mut guard = self.inner.lock().expect("outbox lock");
        loop {
            if let Some(item) = guard.0.pop() {
                return Some(item);
            }
            if guard.1 {
                return None;
            }
            guard = self.ready.wait(guard).expect("outbox lock");
        }
    }
}

struct Connection {
    id: u64,
    outbox: Arc<SharedOutbox>,
    stream: TcpStream,
}

impl Connection {
    fn close(&self) {
        self.outbox.close();
        let _ = self.stream.shutdown(Shutdown::Read);
    }
}

/// A running host service.
pub struct HostServer {
    local_addr: SocketAddr,
    control: Sender<Control>,
    stop: Arc<AtomicBool>,
    events: Arc<Mutex<Vec<TransitionEvent>>>,
    threads: Vec<JoinHandle<()>>,
}

impl HostServer {
    pub fn bind(
        addr: impl ToSocketAddrs,
        host: Host,
        event_sink: Option<Box<dyn Write + Send>>,
    ) -> io::Result<Self> {
        Self::spawn(TcpListener::bind(addr)?, host, event_sink)
    }

    /// Starts the control loop and accepts operator connections on `listener`.
    /// A new connection replaces the previous one.
    pub fn spawn(listener: TcpListener, host: Host, event_sink: Option<Box<dyn Write + Send>>) -> io::Result<Self> {
        let local_addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let events = Arc::new(Mutex::new(Vec::new()));

        let control = {
            let events = Arc::clone(&events);
            thread::Builder::new()
                .name("host-control".into())
                .spawn(move || control_loop(host, rx, events, event_sink))?
        };
        let acceptor = {
            let tx = tx.clone();
            let stop = Arc::clone(&stop);
            thread::Builder::new().name("host-accept".into()).spawn(move || accept_loop(listener, tx, stop))?
        };
        Ok(Self { local_addr, control: tx, stop, events, threads: vec![control, acceptor] })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Adds an object to the live scene; connected operators receive a new
    /// snapshot.
    pub fn add_object(&self, object: SceneObject) -> Result<(), SceneError> {
        let (done, wait) = mpsc::channel();
        self.control
            .send(Control::AddObject { object, done })
            .map_err(|_| SceneError::Io(io::Error::new(io::ErrorKind::BrokenPipe, "host stopped")))?;
        wait.recv()
            .map_err(|_| SceneError::Io(io::Error::new(io::ErrorKind::BrokenPipe, "host stopped")))?
    }

    pub fn state(&self) -> Option<HostState> {
        let (done, wait) = mpsc::channel();
        self.control.send(Control::Snapshot { done }).ok()?;
        wait.recv().ok()
    }

    /// Transitions recorded so far.
    pub fn events(&self) -> Vec<TransitionEvent> {
        self.events.lock().expect("event lock").clone()
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.control.send(Control::Shutdown);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for HostServer {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Control>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                next_id += 1;
                log::info!("operator connected from {peer}");
                if let Err(e) = start_connection(next_id, stream, &tx) {
                    log::warn!("could not start connection from {peer}: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn start_connection(id: u64, stream: TcpStream, tx: &Sender<Control>) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let outbox = Arc::new(SharedOutbox { inner: Mutex::new((Outbox::new(usize::MAX), false)), ready: Condvar::new() });
    let reader = stream.try_clone()?;
    let writer = stream.try_clone()?;
    {
        let outbox = Arc::clone(&outbox);
        thread::Builder::new().name(format!("host-writer-{id}")).spawn(move || writer_loop(writer, outbox))?;
    }
    {
        let tx = tx.clone();
        thread::Builder::new().name(format!("host-reader-{id}")).spawn(move || reader_loop(id, reader, tx))?;
    }
    tx.send(Control::Connected(Connection { id, outbox, stream }))
        .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "host stopped"))
}

fn reader_loop(conn: u64, mut stream: TcpStream, tx: Sender<Control>) {
    let mut reader = FrameReader::new();
    let mut buf = vec![0u8; READ_BUFFER];
    loop {
        let n = match stream.read(&mut buf) {
            Ok(0) | Err(_) => {
                if let Err(error) = reader.finish() {
                    let _ = tx.send(Control::ProtocolError { conn, error });
                }
                let _ = tx.send(Control::Disconnected { conn });
                return;
            }
            Ok(n) => n,
        };
        reader.push(&buf[..n]);
        loop {
            match reader.next_message() {
                Ok(Some(msg)) => {
                    if tx.send(Control::Inbound { conn, msg }).is_err() {
                        return;
                    }
                }
                Ok(None) => break,
                Err(error) => {
                    let _ = tx.send(Control::ProtocolError { conn, error });
                    return;
                }
            }
        }
    }
}

fn writer_loop(mut stream: TcpStream, outbox: Arc<SharedOutbox>) {
    while let Some(item) = outbox.pop() {
        let bytes = match wire::encode(item.message()) {
            Ok(bytes) => bytes,
            Err(e) => {
                log::error!("dropping unencodable message: {e}");
                continue;
            }
        };
        if stream.write_all(&bytes).is_err() {
            outbox.close();
            break;
        }
    }
    let _ = stream.shutdown(Shutdown::Write);
}

fn control_loop(
    mut host: Host,
    rx: Receiver<Control>,
    events: Arc<Mutex<Vec<TransitionEvent>>>,
    mut sink: Option<Box<dyn Write + Send>>,
) {
    let dt = Duration::from_secs_f64(host.config().dt);
    let telemetry_capacity = host.config().telemetry_capacity;
    let mut current: Option<Connection> = None;
    let mut next_tick = Instant::now() + dt;

    let send = |current: &Option<Connection>, out: Vec<Outbound>| {
        if let Some(conn) = current {
            conn.outbox.push_all(out);
        }
    };

    loop {
        loop {
            let now = Instant::now();
            if now >= next_tick {
                break;
            }
            let control = match rx.recv_timeout(next_tick - now) {
                Ok(c) => c,
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return,
            };
            match control {
                Control::Connected(conn) => {
                    if let Some(old) = current.take() {
                        old.close();
                    }
                    conn.outbox.inner.lock().expect("outbox lock").0 = Outbox::new(telemetry_capacity);
                    conn.outbox.push_all(host.on_connect());
                    current = Some(conn);
                }
                Control::Inbound { conn, msg } => {
                    if current.as_ref().is_some_and(|c| c.id == conn) {
                        let out = host.handle(msg);
                        send(&current, out);
                    }
                }
                Control::ProtocolError { conn, error } => {
                    if current.as_ref().is_some_and(|c| c.id == conn) {
                        log::warn!("protocol error, closing connection: {error}");
                        let conn = current.take().expect("checked above");
                        conn.outbox.push_all([Outbound::Reply(WireMessage::nack(NackCode::Protocol, error.to_string()))]);
                        conn.close();
                    }
                }
                Control::Disconnected { conn } => {
                    if current.as_ref().is_some_and(|c| c.id == conn) {
                        log::info!("operator disconnected");
                        current.take().expect("checked above").close();
                    }
                }
                Control::AddObject { object, done } => {
                    let result = host.add_object(object).map(|out| send(&current, out));
                    let _ = done.send(result);
                }
                Control::Snapshot { done } => {
                    let _ = done.send(host.state().clone());
                }
                Control::Shutdown => {
                    if let Some(conn) = current.take() {
                        conn.close();
                    }
                    flush_events(&mut host, &events, &mut sink);
                    return;
                }
            }
            flush_events(&mut host, &events, &mut sink);
        }

        let out = host.tick();
        send(&current, out);
        flush_events(&mut host, &events, &mut sink);

        next_tick += dt;
        let now = Instant::now();
        if next_tick + dt < now {
            next_tick = now;
        }
    }
}

fn flush_events(
    host: &mut Host,
    events: &Mutex<Vec<TransitionEvent>>,
    sink: &mut Option<Box<dyn Write + Send>>,
) {
    let fresh = host.drain_events();
    if fresh.is_empty() {
        return;
    }
    if let Some(out) = sink.as_mut() {
        for e in &fresh {
            let _ = writeln!(out, "{}", e.to_json_line());
        }
        let _ = out.flush();
    }
    events.lock().expect("event lock").extend(fresh);
}
