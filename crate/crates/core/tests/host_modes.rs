use std::collections::HashSet;

use lfd_core::dmp::{self, fit, Demonstration, Gains, DEFAULT_N_BASIS};
use lfd_core::host::{transition_allowed, Host, HostConfig, Mode, Outbound};
use lfd_core::kinematics::{JointVector, KinematicsConfig};
use lfd_core::planner::collision_free;
use lfd_core::scene::{Scene, SceneObject};
use lfd_core::wire::{NackCode, WireMessage};

#[derive(Debug, Clone, Copy)]
enum Input {
    Delta,
    Start,
    Stop,
    Exec,
    Upload,
    /// Ticks until the host leaves Executing (or once if it is not executing).
    Drain,
}

const ALPHABET: [Input; 6] = [Input::Delta, Input::Start, Input::Stop, Input::Exec, Input::Upload, Input::Drain];

fn cup_host() -> Host {
    let kin = KinematicsConfig::ur10();
    let scene = Scene::new(vec![SceneObject::sphere("cup", [0.75, 0.25, 0.35], 0.04)]).unwrap();
    Host::new(kin.dh, kin.home, scene, HostConfig::default()).unwrap()
}

fn model_upload(home: &JointVector) -> WireMessage {
    let mut end = *home;
    end[0] += 0.3;
    end[1] += 0.2;
    let positions = (0..=60).map(|k| home.lerp(&end, k as f64 / 60.0).as_slice().to_vec()).collect();
    let model = fit(&Demonstration::new(positions, 0.02).unwrap(), DEFAULT_N_BASIS, Gains::default())
        .unwrap()
        .with_object("cup");
    WireMessage::DmpModelUpload { model: dmp::to_document(&model).into_bytes() }
}

struct Checker {
    upload: WireMessage,
    seen: HashSet<(Mode, Mode)>,
    modes: HashSet<Mode>,
    traces: usize,
    joint_states: usize,
}

impl Checker {
    fn check_output(&mut self, host: &Host, out: &[Outbound]) {
        for o in out {
            if let WireMessage::JointState { q, .. } = o.message() {
                self.joint_states += 1;
                assert!(host.dh().within_limits(q), "JointState outside limits: {q:?}");
                assert!(collision_free(q, &host.state().scene.objects, host.dh()), "JointState in collision: {q:?}");
            }
        }
    }

    fn apply(&mut self, host: &mut Host, input: Input, frame: u64) {
        let before = host.mode();
        let out = match input {
            Input::Delta => host.handle(WireMessage::HandDelta { frame, delta: [0.01, 0.0, 0.0] }),
            Input::Start => host.handle(WireMessage::TeachStart),
            Input::Stop => host.handle(WireMessage::TeachStop),
            Input::Exec => host.handle(WireMessage::ExecuteToObject { object_id: "cup".into() }),
            Input::Upload => host.handle(self.upload.clone()),
            Input::Drain => {
                let mut out = host.tick();
                let mut guard = 0;
                while host.mode() == Mode::Executing {
                    self.check_output(host, &out);
                    out = host.tick();
                    guard += 1;
                    assert!(guard < 10_000, "execution never finished");
                }
                out
            }
        };
        self.check_output(host, &out);
        // A started execution is answered when it completes, during ticks.
        let started = matches!(input, Input::Exec) && host.mode() == Mode::Executing && before != Mode::Executing;
        if !matches!(input, Input::Drain) && !started {
            assert!(out.iter().any(|o| !o.is_telemetry()), "{input:?} in {before:?} got no reply");
        }
        if before == Mode::Executing && !matches!(input, Input::Drain | Input::Upload) {
            let nacked = out.iter().any(|o| {
                matches!(o.message(), WireMessage::NackError { code, .. } if *code == NackCode::BadState as u16)
            });
            assert!(nacked, "{input:?} while executing must be refused");
        }
        self.modes.insert(host.mode());
    }

    fn explore(&mut self, host: &Host, depth: usize) {
        if depth == 6 {
            self.traces += 1;
            return;
        }
        for input in ALPHABET {
            let mut next = host.clone();
            self.apply(&mut next, input, depth as u64 + 1);
            for e in next.events() {
                assert!(transition_allowed(e.from, e.to), "illegal {:?} -> {:?} ({})", e.from, e.to, e.cause);
                self.seen.insert((e.from, e.to));
            }
            self.explore(&next, depth + 1);
        }
    }
}

#[test]
fn exhaustive_six_message_traces_stay_in_the_mode_machine() {
    let host = cup_host();
    let mut checker = Checker {
        upload: model_upload(&host.state().q_current),
        seen: HashSet::new(),
        modes: HashSet::new(),
        traces: 0,
        joint_states: 0,
    };
    checker.explore(&host, 0);
    assert_eq!(checker.traces, 6usize.pow(6));
    let expected: HashSet<(Mode, Mode)> = [
        (Mode::Idle, Mode::Steering),
        (Mode::Steering, Mode::Idle),
        (Mode::Steering, Mode::Teaching),
        (Mode::Teaching, Mode::Idle),
        (Mode::Idle, Mode::Executing),
        (Mode::Executing, Mode::Idle),
    ]
    .into_iter()
    .collect();
    // Every allowed transition is reachable and nothing else is.
    assert_eq!(checker.seen, expected);
    assert_eq!(checker.modes.len(), 4);
    assert!(checker.joint_states > 0);
}

#[test]
fn teaching_log_has_one_sample_per_period() {
    let mut host = cup_host();
    host.handle(WireMessage::HandDelta { frame: 1, delta: [0.0, 0.0, 0.01] });
    host.tick();
    host.handle(WireMessage::TeachStart);
    let mut frame = 2;
    for k in 0..150 {
        // Mix motion periods, idle periods and a multi-sample move.
        if k % 3 == 0 {
            host.handle(WireMessage::HandDelta { frame, delta: [0.0, 0.004, -0.002] });
            frame += 1;
        }
        if k == 70 {
            host.handle(WireMessage::HandDelta { frame, delta: [0.0, -0.04, 0.0] });
            frame += 1;
        }
        host.tick();
    }
    let samples = host.state().active_log.as_ref().unwrap().len();
    let out = host.handle(WireMessage::TeachStop);
    assert!(out.iter().all(|o| !matches!(o.message(), WireMessage::NackError { .. })));

    let events = host.events();
    let start = events.iter().find(|e| e.to == Mode::Teaching).unwrap().t;
    let stop = events.iter().rev().find(|e| e.from == Mode::Teaching).unwrap().t;
    let dt = host.config().dt;
    let expected = (stop - start) / dt;
    assert!(
        (samples as f64 - expected).abs() <= 1.0 + 1e-9,
        "{samples} samples over {:.3} s at dt {dt}",
        stop - start
    );
    assert!(samples >= 150);
}

#[test]
fn admin_object_pushes_snapshot() {
    let mut host = cup_host();
    let out = host.add_object(SceneObject::cuboid("crate", [0.35, -0.6, 0.15], [0.1, 0.1, 0.15])).unwrap();
    match out.last().unwrap().message() {
        WireMessage::SceneSnapshot { objects } => assert_eq!(objects.len(), 2),
        other => panic!("expected snapshot, got {other:?}"),
    }
}
