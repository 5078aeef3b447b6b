use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lfd_core::calibration::{fit_model, PairedSamples};
use lfd_core::dmp::DmpSpace;
use lfd_core::eval::{
    run_distance_eval, run_tracking_eval, tracking_linearity, write_distance_outputs, write_tracking_outputs,
    DistanceConfig, TrackingConfig,
};
use lfd_core::kinematics::KinematicsConfig;
use lfd_core::scene::Scene;

/// Desk-scale tracking and path-length evaluations.
#[derive(Parser)]
#[command(name = "eval", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Calibrate a synthetic noisy tracker and report held-out MAD and MAPE.
    Tracking {
        /// Tracker noise standard deviation, metres.
        #[arg(long, default_value_t = 0.0107)]
        sigma: f64,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Skip the three-sigma linearity sweep.
        #[arg(long)]
        no_linearity: bool,
    },
    /// Compare DMP and RRT-Connect tool path lengths over random goals.
    Distance {
        #[arg(long, default_value_t = 15)]
        goals: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Kinematics TOML; the built-in UR10 table when omitted.
        #[arg(long)]
        kinematics: Option<PathBuf>,
        /// Scene TOML used for goal feasibility and planning.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Fit and roll out the DMP on tool positions instead of joints.
        #[arg(long)]
        cartesian_dmp: bool,
    },
    /// Fit a calibration model from a `tx,ty,tz,rx,ry,rz` CSV.
    Calibrate {
        #[arg(long)]
        pairs: PathBuf,
        /// Where to write the calibration JSON.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Cmd::Tracking { sigma, n, seed, out, no_linearity } => {
            let started = Instant::now();
            let report = run_tracking_eval(&TrackingConfig::new(sigma, n, seed))?;
            let linearity = if no_linearity {
                None
            } else {
                Some(tracking_linearity(&[sigma * 0.5, sigma, sigma * 2.0], n, seed)?)
            };
            write_tracking_outputs(&report, linearity.as_ref(), &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            println!("elapsed {:.2} s, outputs in {}", started.elapsed().as_secs_f64(), out.display());
        }
        Cmd::Distance { goals, seed, out, kinematics, scene, cartesian_dmp } => {
            let started = Instant::now();
            let kin = match kinematics {
                Some(p) => KinematicsConfig::load(&p).with_context(|| format!("loading {}", p.display()))?,
                None => KinematicsConfig::ur10(),
            };
            let scene = match scene {
                Some(p) => Scene::load(&p).with_context(|| format!("loading {}", p.display()))?.objects,
                None => Vec::new(),
            };
            let cfg = DistanceConfig {
                n_goals: goals,
                seed,
                space: if cartesian_dmp { DmpSpace::CartesianSpace } else { DmpSpace::JointSpace },
                scene,
                ..DistanceConfig::default()
            };
            let summary = run_distance_eval(&kin, &cfg)?;
            write_distance_outputs(&summary, &cfg, &out)?;
            print!("{}", std::fs::read_to_string(out.join("distance_report.csv"))?);
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            println!("elapsed {:.2} s, outputs in {}", started.elapsed().as_secs_f64(), out.display());
        }
        Cmd::Calibrate { pairs, out } => {
            let samples = PairedSamples::load(&pairs).with_context(|| format!("loading {}", pairs.display()))?;
            let model = fit_model(&samples)?;
            model.save(&out)?;
            for (name, axis) in ["x", "y", "z"].iter().zip(model.axes()) {
                println!("{name}: scale {:.5} offset {:+.5} m r2 {:.5}", axis.scale, axis.offset, axis.r_squared);
            }
            println!("{} pairs, model written to {}", samples.len(), out.display());
        }
    }
    Ok(())
}
