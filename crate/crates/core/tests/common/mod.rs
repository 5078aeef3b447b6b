//! Shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::net::TcpListener;
use std::time::Duration;

use lfd_core::calibration::{AxisRegression, CalibrationModel};
use lfd_core::gateway::{run_session, DmpStore, Gateway, GatewayConfig, ScriptedGenerator, SessionOptions, SessionReport};
use lfd_core::host::{Host, HostConfig, HostServer, TransitionEvent};
use lfd_core::kinematics::{DhTable, JointVector, KinematicsConfig};
use lfd_core::scene::{Scene, SceneObject};
use lfd_core::wire::{self, TrajectoryUpload, WireMessage, FRAME_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SCENE_TOML: &str = include_str!("../../../../config/scene.toml");

/// Tool position by explicit standard-DH 4x4 products on plain arrays.
pub fn dh_oracle_position(q: &JointVector, dh: &DhTable) -> [f64; 3] {
    let mut t = [[0.0f64; 4]; 4];
    for (i, row) in t.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for (j, r) in dh.rows.iter().enumerate() {
        let th = q[j] + r.theta_offset;
        let (st, ct) = th.sin_cos();
        let (sa, ca) = r.alpha.sin_cos();
        let a = [
            [ct, -st * ca, st * sa, r.a * ct],
            [st, ct * ca, -ct * sa, r.a * st],
            [0.0, sa, ca, r.d],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let mut next = [[0.0; 4]; 4];
        for (r_i, row) in next.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..4).map(|k| t[r_i][k] * a[k][c]).sum();
            }
        }
        t = next;
    }
    [t[0][3], t[1][3], t[2][3]]
}

pub fn any_f64(rng: &mut ChaCha8Rng) -> f64 {
    // Raw bit patterns include NaN payloads, infinities and subnormals.
    if rng.gen_bool(0.2) {
        f64::from_bits(rng.gen())
    } else {
        rng.gen_range(-10.0..10.0)
    }
}

pub fn any_id(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=12);
    (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

pub fn any_message(rng: &mut ChaCha8Rng) -> WireMessage {
    match rng.gen_range(0..10) {
        0 => WireMessage::HandDelta { frame: rng.gen(), delta: [0; 3].map(|_| any_f64(rng)) },
        1 => WireMessage::JointState { frame: rng.gen(), q: JointVector([0; 6].map(|_| any_f64(rng))) },
        2 => WireMessage::SceneSnapshot {
            objects: (0..rng.gen_range(0..20))
                .map(|_| {
                    let c = [0; 3].map(|_| any_f64(rng));
                    if rng.gen() {
                        SceneObject::sphere(any_id(rng), c, any_f64(rng))
                    } else {
                        SceneObject::cuboid(any_id(rng), c, [0; 3].map(|_| any_f64(rng)))
                    }
                })
                .collect(),
        },
        3 => WireMessage::TeachStart,
        4 => WireMessage::TeachStop,
        5 => WireMessage::TrajectoryUpload(TrajectoryUpload {
            dt: any_f64(rng),
            samples: (0..rng.gen_range(0..80)).map(|_| JointVector([0; 6].map(|_| any_f64(rng)))).collect(),
            chunk_index: rng.gen(),
            chunk_count: rng.gen(),
        }),
        6 => WireMessage::DmpModelUpload { model: (0..rng.gen_range(0..3000)).map(|_| rng.gen()).collect() },
        7 => WireMessage::ExecuteToObject { object_id: any_id(rng) },
        8 => WireMessage::Ack { ref_frame: rng.gen() },
        _ => WireMessage::NackError {
            code: rng.gen_range(1..=8),
            detail: (0..rng.gen_range(0..200)).map(|_| rng.gen_range(' '..='~')).collect(),
        },
    }
}


/// Tracker distortion used by the scripted loopback session.
pub fn skewed_calibration() -> CalibrationModel {
    CalibrationModel {
        x: AxisRegression { scale: 0.87, offset: -0.013, r_squared: 0.99 },
        y: AxisRegression { scale: 1.09, offset: 0.038, r_squared: 0.99 },
        z: AxisRegression { scale: 0.93, offset: 0.001, r_squared: 0.99 },
    }
}

pub struct Loopback {
    pub report: SessionReport,
    pub events: Vec<TransitionEvent>,
    pub pregrasp: nalgebra::Vector3<f64>,
    pub store: tempfile::TempDir,
    pub kin: KinematicsConfig,
}

/// Host and gateway over localhost TCP, driven by the built-in demo script.
pub fn run_loopback() -> Loopback {
    let kin = KinematicsConfig::ur10();
    let scene = Scene::from_toml_str(SCENE_TOML).unwrap();
    let cup = scene.get("cup").unwrap().centroid();
    let host = Host::new(kin.dh.clone(), kin.home, scene, HostConfig::default()).unwrap();
    let server = HostServer::spawn(TcpListener::bind("127.0.0.1:0").unwrap(), host, None).unwrap();

    let store = tempfile::tempdir().unwrap();
    let cal = skewed_calibration();
    let gateway = Gateway::new(GatewayConfig::default(), cal, kin.clone(), Some(DmpStore::open(store.path()).unwrap()));
    let source = ScriptedGenerator::named("demo", &cal).unwrap();
    let opts = SessionOptions { paced: true, timeout: Some(Duration::from_secs(30)) };
    let report = run_session(server.local_addr(), gateway, source, &opts, None).unwrap();
    let events = server.events();
    server.shutdown();
    Loopback { report, events, pregrasp: cup + nalgebra::Vector3::new(0.0, 0.0, 0.10), store, kin }
}

/// Encodes `count` random messages, decodes them and re-encodes; every byte
/// must survive. Returns the largest non-chunked frame seen.
pub fn roundtrip_fuzz(count: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut largest = 0;
    for i in 0..count {
        let msg = any_message(&mut rng);
        let bytes = wire::encode(&msg).map_err(|e| format!("message {i} failed to encode: {e}"))?;
        if !msg.is_chunked() {
            if bytes.len() > FRAME_BUDGET {
                return Err(format!("message {i}: {} bytes over budget", bytes.len()));
            }
            largest = largest.max(bytes.len());
        }
        let (decoded, used) = wire::decode(&bytes)
            .map_err(|e| format!("message {i}: {e}"))?
            .ok_or_else(|| format!("message {i}: decoder wants more bytes"))?;
        if used != bytes.len() {
            return Err(format!("message {i}: consumed {used} of {}", bytes.len()));
        }
        if wire::encode(&decoded).map_err(|e| e.to_string())? != bytes {
            return Err(format!("message {i} changed on re-encode"));
        }
    }
    Ok(largest)
}

/// Feeds `count` random buffers to the decoder. Anything it accepts must
/// re-encode to the bytes it consumed. Returns how many buffers decoded.
pub fn garbage_fuzz(count: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut accepted = 0;
    for i in 0..count {
        let n = rng.gen_range(0..256);
        let mut bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
        // Half the cases get a plausible header so the payload decoder runs.
        if n > 5 && rng.gen() {
            let len = (n - 4) as u32;
            bytes[..4].copy_from_slice(&len.to_le_bytes());
            bytes[4] = rng.gen_range(0..=0x0C);
        }
        let result = std::panic::catch_unwind(|| wire::decode(&bytes)).map_err(|_| format!("buffer {i} panicked"))?;
        if let Ok(Some((msg, used))) = result {
            accepted += 1;
            if wire::encode(&msg).map_err(|e| e.to_string())? != bytes[..used] {
                return Err(format!("buffer {i} decoded to a different message"));
            }
        }
    }
    Ok(accepted)
}

/// The largest SceneSnapshot the protocol allows: 64 boxes with 12-byte ids.
pub fn maximal_snapshot() -> WireMessage {
    let objects = (0..lfd_core::scene::MAX_SCENE_OBJECTS)
        .map(|i| SceneObject::cuboid(format!("object{i:05}"), [0.1 * i as f64, 0.5, 0.2], [0.01, 0.02, 0.03]))
        .collect();
    WireMessage::SceneSnapshot { objects }
}

/// Worst FK disagreement with the oracle over `count` configurations drawn
/// across the full joint range.
pub fn fk_oracle_worst(count: usize, seed: u64) -> f64 {
    let kin = KinematicsConfig::ur10();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let q = JointVector([0; 6].map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)));
            let p = lfd_core::kinematics::tool_position(&q, &kin.dh);
            let o = dh_oracle_position(&q, &kin.dh);
            (0..3).map(|i| (p[i] - o[i]).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Worst `ik_step` loop-closure residual over `count` random 1 cm deltas from
/// configurations around home (away from singularities).
pub fn ik_closure_worst(count: usize, seed: u64) -> Result<f64, String> {
    let kin = KinematicsConfig::ur10();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let mut q = kin.home;
        for j in 0..6 {
            q[j] += rng.gen_range(-0.5..0.5);
        }
        let dir = nalgebra::Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        if dir.norm() < 1e-3 {
            continue;
        }
        let delta = dir.normalize() * 0.01;
        let q1 = lfd_core::kinematics::ik_step(&q, &delta, &kin.dh).map_err(|e| format!("case {i}: {e}"))?;
        let target = lfd_core::kinematics::tool_position(&q, &kin.dh) + delta;
        worst = worst.max((lfd_core::kinematics::tool_position(&q1, &kin.dh) - target).norm());
    }
    Ok(worst)
}
