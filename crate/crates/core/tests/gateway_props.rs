use lfd_core::calibration::{apply, AxisRegression, CalibrationModel};
use lfd_core::dmp::{rollout, DmpSpace};
use lfd_core::gateway::source::min_jerk;
use lfd_core::gateway::{
    train_from_upload, twin_update, DmpStore, Gateway, GatewayConfig, HandSample, SourceEvent, TrainConfig, TwinState,
};
use lfd_core::kinematics::{
    solve_position, tool_path_length, tool_position, IkConfig, JointVector, KinematicsConfig, TrajectoryLog,
};
use lfd_core::wire::{chunk_trajectory, WireMessage};
use nalgebra::Vector3;
use proptest::prelude::*;

fn calibration() -> impl Strategy<Value = CalibrationModel> {
    let axis = (0.5f64..2.0, -0.2f64..0.2).prop_map(|(scale, offset)| AxisRegression { scale, offset, r_squared: 1.0 });
    (axis.clone(), axis.clone(), axis).prop_map(|(x, y, z)| CalibrationModel { x, y, z })
}

/// Random walk with occasional large jumps and irregular timing.
fn sample_stream() -> impl Strategy<Value = Vec<HandSample>> {
    prop::collection::vec(((-0.03f64..0.03, -0.03f64..0.03, -0.03f64..0.03), 0.001f64..0.06, prop::bool::weighted(0.05)), 2..200)
        .prop_map(|steps| {
            let mut pos = [0.1, 0.2, 0.3];
            let mut t = 0.0;
            steps
                .into_iter()
                .enumerate()
                .map(|(i, ((dx, dy, dz), gap, jump))| {
                    let k = if jump { 8.0 } else { 1.0 };
                    pos = [pos[0] + k * dx, pos[1] + k * dy, pos[2] + k * dz];
                    t += gap;
                    HandSample { frame: i as u64 + 1, t, position: pos }
                })
                .collect()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn delta_stream_is_conservative(samples in sample_stream(), cal in calibration(), gain in 0.2f64..3.0, poll_every in 1usize..5) {
        let cfg = GatewayConfig { gain, ..GatewayConfig::default() };
        let cap = cfg.step_cap;
        let mut gw = Gateway::new(cfg, cal, KinematicsConfig::ur10(), None);
        let mut sent = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            sent.extend(gw.on_source(SourceEvent::Sample(s.clone()), s.t));
            if i % poll_every == 0 {
                sent.extend(gw.poll(s.t + 0.03));
            }
        }
        sent.extend(gw.flush_held(samples.last().unwrap().t));

        let mut sum = [0.0; 3];
        let mut last_frame = 0;
        for m in &sent {
            let WireMessage::HandDelta { frame, delta } = m else { panic!("unexpected {m:?}") };
            prop_assert!(*frame > last_frame);
            last_frame = *frame;
            for i in 0..3 {
                prop_assert!(delta[i].abs() <= cap);
                sum[i] += delta[i];
            }
        }
        let stats = gw.stats();
        let first = apply(&cal, samples[0].position);
        let last = apply(&cal, samples.last().unwrap().position);
        for i in 0..3 {
            let expected = gain * (last[i] - first[i]);
            prop_assert!((sum[i] + stats.clamp_loss[i] - expected).abs() < 1e-9, "axis {i}: {} + {} vs {expected}", sum[i], stats.clamp_loss[i]);
            prop_assert!((stats.delta_sum[i] - sum[i]).abs() < 1e-12);
        }
        prop_assert_eq!(stats.deltas_sent as usize, sent.len());
        prop_assert_eq!(stats.clamp_loss == [0.0; 3], stats.clamp_events == 0);
    }

    #[test]
    fn twin_mirrors_last_joint_state(qs in prop::collection::vec(prop::array::uniform6(-3.0f64..3.0), 1..30), acks in prop::collection::vec(0u64..40, 0..30)) {
        let mut twin = TwinState::new(JointVector::zeros());
        let mut last_ack = 0;
        let mut now = 0.0;
        let mut acks = acks.into_iter();
        for (i, q) in qs.iter().enumerate() {
            now += 0.02;
            twin.note_sent(i as u64 + 1, now);
            twin = twin_update(&twin, &WireMessage::JointState { frame: i as u64, q: JointVector(*q) }, now);
            prop_assert_eq!(twin.q, JointVector(*q));
            if let Some(a) = acks.next() {
                twin = twin_update(&twin, &WireMessage::Ack { ref_frame: a }, now + 0.005);
                prop_assert!(twin.last_ack_frame >= last_ack);
                last_ack = twin.last_ack_frame;
                prop_assert_eq!(twin.q, JointVector(*q));
            }
        }
    }
}

#[test]
fn straight_teach_session_trains_a_converging_model() {
    let kin = KinematicsConfig::ur10();
    let dh = &kin.dh;
    let start = tool_position(&kin.home, dh);
    let goal = start + Vector3::new(0.05, 0.15, -0.15);
    let dt = 0.02;
    let mut q = kin.home;
    let mut positions = vec![q];
    for k in 1..=100 {
        let target = start + (goal - start) * min_jerk(k as f64 / 100.0);
        q = solve_position(&q, &target, dh, &IkConfig::default()).unwrap();
        positions.push(q);
    }
    let log = TrajectoryLog::from_positions(positions.clone(), dt);
    let chunks = chunk_trajectory(&log, 1024).unwrap();
    assert!(chunks.len() > 1);

    let dir = tempfile::tempdir().unwrap();
    let store = DmpStore::open(dir.path()).unwrap();
    let model = train_from_upload(&chunks, "cup", dh, &TrainConfig::default(), Some(&store)).unwrap();
    assert_eq!(model.space, DmpSpace::JointSpace);
    assert_eq!(store.load("cup").unwrap(), model);

    let q_end = *positions.last().unwrap();
    let roll = rollout(&model, kin.home.as_slice(), q_end.as_slice(), model.tau, dt).unwrap();
    let qs: Vec<JointVector> = roll.positions.iter().map(|p| JointVector::from_slice(p).unwrap()).collect();
    let miss = (tool_position(qs.last().unwrap(), dh) - tool_position(&q_end, dh)).norm();
    assert!(miss < 1e-3, "endpoint off by {miss}");
    let ratio = tool_path_length(&qs, dh).unwrap() / (goal - start).norm();
    assert!(ratio <= 1.05, "path ratio {ratio}");
}

#[test]
fn model_upload_follows_training() {
    let kin = KinematicsConfig::ur10();
    let mut gw = Gateway::new(GatewayConfig::default(), CalibrationModel::identity(), kin.clone(), None);
    gw.on_host(
        WireMessage::SceneSnapshot { objects: vec![lfd_core::scene::SceneObject::sphere("cup", [0.7, 0.3, 0.4], 0.04)] },
        0.0,
    );
    let mut out = gw.on_source(SourceEvent::Command(lfd_core::gateway::Command::TeachStart), 0.0);
    out.extend(gw.on_host(WireMessage::Ack { ref_frame: 0 }, 0.01));
    out.extend(gw.on_source(SourceEvent::Command(lfd_core::gateway::Command::TeachStop { object_id: None }), 0.02));
    assert_eq!(out, vec![WireMessage::TeachStart, WireMessage::TeachStop]);

    let mut end = kin.home;
    end[0] += 0.2;
    let log = TrajectoryLog::from_positions((0..=40).map(|k| kin.home.lerp(&end, k as f64 / 40.0)), 0.02);
    let mut out = Vec::new();
    for c in chunk_trajectory(&log, 512).unwrap() {
        out.extend(gw.on_host(WireMessage::TrajectoryUpload(c), 0.1));
    }
    assert_eq!(out.len(), 1);
    let WireMessage::DmpModelUpload { model } = &out[0] else { panic!("expected model upload, got {out:?}") };
    let model = lfd_core::dmp::from_document(std::str::from_utf8(model).unwrap()).unwrap();
    assert_eq!(model.object_id.as_deref(), Some("cup"));
}
