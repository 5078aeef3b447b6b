//! Two-site teleoperation with learning from demonstration: an operator-side
//! gateway streams hand motion to a simulated arm host, the host records
//! demonstrations, and the gateway fits dynamic movement primitives that the
//! host replays toward scene objects.

pub mod calibration;
pub mod dmp;
pub mod eval;
pub mod gateway;
pub mod host;
pub mod kinematics;
pub mod planner;
pub mod scene;
pub mod wire;

pub use nalgebra::Vector3;

pub use calibration::{AxisRegression, CalibrationModel, MapeReport};
pub use dmp::{Demonstration, DmpModel, DmpSpace, Gains, Rollout};
pub use gateway::{Gateway, GatewayConfig, HandSample, Notice, TwinState};
pub use host::{Host, HostConfig, HostServer, Mode};
pub use kinematics::{CartesianPose, DhTable, JointVector, KinematicsConfig, TrajectoryLog};
pub use planner::PlanRequest;
pub use scene::{Scene, SceneObject, Shape};
pub use wire::{NackCode, TrajectoryUpload, WireMessage};
