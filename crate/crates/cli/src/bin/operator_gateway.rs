use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Parser;
use lfd_core::calibration::CalibrationModel;
use lfd_core::dmp::DmpSpace;
use lfd_core::gateway::{
    run_session, ConsoleHub, ConsoleServer, DmpStore, FileReplay, Gateway, GatewayConfig, PoseSource,
    ScriptedGenerator, SessionObserver, SessionOptions, TrainConfig,
};
use lfd_core::kinematics::KinematicsConfig;

/// Operator-side gateway: streams hand deltas to a robot host, trains DMPs
/// from returned demonstrations, and serves the console bridge.
#[derive(Parser)]
#[command(name = "operator-gateway", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:7600")]
    host: String,
    /// Calibration JSON from a tracker fit; identity when omitted.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// `replay:<csv>`, `script:<demo|teach>` or `console`.
    #[arg(long, default_value = "script:demo")]
    source: String,
    /// WebSocket address for the operator console.
    #[arg(long)]
    console_listen: Option<String>,
    /// Directory for `<object_id>.dmp.json` documents.
    #[arg(long, default_value = "dmp_store")]
    store: PathBuf,
    /// Kinematics TOML; must match the host. Built-in UR10 when omitted.
    #[arg(long)]
    kinematics: Option<PathBuf>,
    /// Steering gain applied to calibrated hand displacement.
    #[arg(long, default_value_t = 1.0)]
    gain: f64,
    /// Train Cartesian-space models (the host must run with the same flag).
    #[arg(long)]
    cartesian_dmp: bool,
    /// Feed replayed and scripted samples as fast as possible.
    #[arg(long)]
    no_pace: bool,
    /// Give up after this many seconds.
    #[arg(long)]
    timeout: Option<f64>,
}

enum Source {
    Replay(PathBuf),
    Script(String),
    Console,
}

fn parse_source(s: &str) -> Result<Source> {
    if s == "console" {
        Ok(Source::Console)
    } else if let Some(path) = s.strip_prefix("replay:") {
        Ok(Source::Replay(path.into()))
    } else if let Some(name) = s.strip_prefix("script:") {
        Ok(Source::Script(name.into()))
    } else {
        bail!("--source must be replay:<csv>, script:<name> or console, got {s:?}")
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if !(args.gain.is_finite() && args.gain > 0.0) {
        bail!("--gain must be > 0");
    }
    let source = parse_source(&args.source)?;
    let cal = match &args.calibration {
        Some(p) => CalibrationModel::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            log::warn!("no --calibration given; using identity");
            CalibrationModel::identity()
        }
    };
    let kin = match &args.kinematics {
        Some(p) => KinematicsConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => KinematicsConfig::ur10(),
    };
    let store = DmpStore::open(&args.store)?;
    let space = if args.cartesian_dmp { DmpSpace::CartesianSpace } else { DmpSpace::JointSpace };
    let cfg = GatewayConfig { gain: args.gain, train: TrainConfig { space, ..TrainConfig::default() }, ..GatewayConfig::default() };
    let gateway = Gateway::new(cfg, cal, kin.clone(), Some(store));

    let console = matches!(source, Source::Console);
    if console && args.console_listen.is_none() {
        bail!("--source console needs --console-listen");
    }
    let (hub, bridge) = ConsoleHub::new(kin);
    let _server = match &args.console_listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding console {addr}"))?;
            let server = ConsoleServer::spawn(listener, Arc::clone(&hub))?;
            log::info!("console bridge on ws://{}", server.local_addr());
            Some(server)
        }
        None => None,
    };

    let opts = SessionOptions {
        paced: !args.no_pace && !console,
        timeout: args.timeout.map(Duration::from_secs_f64).or(if console { None } else { SessionOptions::default().timeout }),
    };
    let observer: Arc<dyn SessionObserver> = hub.clone();
    let source: Box<dyn PoseSource> = match source {
        Source::Console => Box::new(bridge),
        Source::Replay(path) => {
            Box::new(FileReplay::open(&path).with_context(|| format!("loading replay {}", path.display()))?)
        }
        Source::Script(name) => Box::new(ScriptedGenerator::named(&name, &cal)?),
    };
    drop(hub);

    let report = run_session(&args.host, gateway, source, &opts, Some(observer))?;
    let s = &report.stats;
    println!(
        "session {} in {:.2} s: {} samples, {} deltas sent, {} decimated, {} clamp events",
        if report.completed { "completed" } else { "ended early" },
        report.elapsed.as_secs_f64(),
        s.samples_in,
        s.deltas_sent,
        s.decimated,
        s.clamp_events
    );
    for m in &report.models {
        println!("trained model for {}", m.object_id.as_deref().unwrap_or("?"));
    }
    for n in &report.notices {
        println!("{}", serde_json::to_string(n)?);
    }
    println!("final q {:?}, latency {:.1} ms", report.twin.q.0, report.twin.latency_ms());
    if !report.completed {
        std::process::exit(2);
    }
    Ok(())
}
