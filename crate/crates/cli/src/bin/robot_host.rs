use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Parser;
use lfd_core::dmp::DmpSpace;
use lfd_core::host::{Host, HostConfig, HostServer};
use lfd_core::kinematics::KinematicsConfig;
use lfd_core::scene::{Scene, SceneObject};

/// Simulated arm host: accepts one operator gateway and steers, records,
/// and executes on a kinematic UR10 twin.
#[derive(Parser)]
#[command(name = "robot-host", version)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:7600")]
    listen: String,
    /// Scene TOML; an empty scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Kinematics TOML; the built-in UR10 table when omitted.
    #[arg(long)]
    kinematics: Option<PathBuf>,
    /// Control period, seconds.
    #[arg(long, default_value_t = lfd_core::host::DEFAULT_DT)]
    dt: f64,
    /// Accept Cartesian-space DMP models instead of joint-space ones.
    #[arg(long)]
    cartesian_dmp: bool,
    /// Write transition events here instead of stdout.
    #[arg(long)]
    events: Option<PathBuf>,
}

const ADMIN_HELP: &str = "commands: add sphere <id> <x> <y> <z> <r> | add box <id> <x> <y> <z> <hx> <hy> <hz> | state | quit";

fn parse_object(words: &[&str]) -> Result<SceneObject> {
    let nums = |s: &[&str]| -> Result<Vec<f64>> {
        s.iter().map(|w| w.parse::<f64>().with_context(|| format!("not a number: {w}"))).collect()
    };
    match words {
        ["sphere", id, rest @ ..] if rest.len() == 4 => {
            let v = nums(rest)?;
            Ok(SceneObject::sphere(*id, [v[0], v[1], v[2]], v[3]))
        }
        ["box", id, rest @ ..] if rest.len() == 6 => {
            let v = nums(rest)?;
            Ok(SceneObject::cuboid(*id, [v[0], v[1], v[2]], [v[3], v[4], v[5]]))
        }
        _ => bail!("{ADMIN_HELP}"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if !(args.dt.is_finite() && args.dt > 0.0) {
        bail!("--dt must be > 0");
    }
    let kin = match &args.kinematics {
        Some(p) => KinematicsConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => KinematicsConfig::ur10(),
    };
    let scene = match &args.scene {
        Some(p) => Scene::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Scene::default(),
    };
    let cfg = HostConfig {
        dt: args.dt,
        dmp_space: if args.cartesian_dmp { DmpSpace::CartesianSpace } else { DmpSpace::JointSpace },
        ..HostConfig::default()
    };
    let host = Host::new(kin.dh, kin.home, scene, cfg)?;
    let sink: Box<dyn Write + Send> = match &args.events {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let server = HostServer::bind(&args.listen, host, Some(sink)).with_context(|| format!("binding {}", args.listen))?;
    log::info!("listening on {}; {ADMIN_HELP}", server.local_addr());

    let mut quit = false;
    for line in std::io::stdin().lock().lines() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] => {}
            ["quit"] | ["exit"] => {
                quit = true;
                break;
            }
            ["state"] => match server.state() {
                Some(s) => eprintln!(
                    "mode {:?}, q {:?}, objects {:?}, models {:?}",
                    s.mode,
                    s.q_current.0,
                    s.scene.objects.iter().map(|o| o.id.as_str()).collect::<Vec<_>>(),
                    s.dmp_store.keys().collect::<Vec<_>>()
                ),
                None => eprintln!("host stopped"),
            },
            ["add", rest @ ..] => match parse_object(rest).map(|o| server.add_object(o)) {
                Ok(Ok(())) => eprintln!("ok"),
                Ok(Err(e)) => eprintln!("rejected: {e}"),
                Err(e) => eprintln!("{e}"),
            },
            _ => eprintln!("{ADMIN_HELP}"),
        }
    }
    // Without a console (stdin at EOF) serve until killed.
    if !quit {
        loop {
            std::thread::park();
        }
    }
    server.shutdown();
    Ok(())
}
