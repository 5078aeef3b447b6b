//! Joint-space RRT-Connect with link-segment collision checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kinematics::{frame_origins, DhTable, JointVector, DOF};
use crate::scene::SceneObject;

pub const DEFAULT_STEP_SIZE: f64 = 0.1;
pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;
pub const DEFAULT_SAFETY_MARGIN: f64 = 0.02;

/// Edges are validated at this fraction of the step size.
const VALIDATION_DIVISOR: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("start configuration is in collision or outside joint limits")]
    InvalidStart,
    #[error("goal configuration is in collision or outside joint limits")]
    InvalidGoal,
    #[error("no path found within {iterations} iterations")]
    NoPath { iterations: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

/// True iff every link segment keeps at least `margin` clearance from every object.
pub fn collision_free_with_margin(q: &JointVector, scene: &[SceneObject], dh: &DhTable, margin: f64) -> bool {
    if scene.is_empty() {
        return true;
    }
    let origins = frame_origins(q, dh);
    origins.windows(2).all(|seg| {
        scene
            .iter()
            .all(|obj| obj.distance_to_segment(&seg[0], &seg[1]) >= margin)
    })
}

pub fn collision_free(q: &JointVector, scene: &[SceneObject], dh: &DhTable) -> bool {
    collision_free_with_margin(q, scene, dh, DEFAULT_SAFETY_MARGIN)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub q_start: JointVector,
    pub q_goal: JointVector,
    pub scene: Vec<SceneObject>,
    pub step_size: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub safety_margin: f64,
    /// Random shortcutting after a path is found. Off by default.
    pub smooth: bool,
}

impl PlanRequest {
    pub fn new(q_start: JointVector, q_goal: JointVector, scene: Vec<SceneObject>, rng_seed: u64) -> Self {
        Self {
            q_start,
            q_goal,
            scene,
            step_size: DEFAULT_STEP_SIZE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            rng_seed,
            safety_margin: DEFAULT_SAFETY_MARGIN,
            smooth: false,
        }
    }
}

/// Validity checker shared by the planners.
struct Checker<'a> {
    scene: &'a [SceneObject],
    dh: &'a DhTable,
    margin: f64,
    resolution: f64,
}

impl Checker<'_> {
    fn state_ok(&self, q: &JointVector) -> bool {
        self.dh.within_limits(q) && collision_free_with_margin(q, self.scene, self.dh, self.margin)
    }

    /// Checks the interior and the end of `a -> b`; `a` is assumed valid.
    fn motion_ok(&self, a: &JointVector, b: &JointVector) -> bool {
        let n = (a.distance(b) / self.resolution).ceil().max(1.0) as usize;
        (1..=n).all(|k| self.state_ok(&a.lerp(b, k as f64 / n as f64)))
    }
}

struct Tree {
    nodes: Vec<JointVector>,
    parents: Vec<Option<usize>>,
}

impl Tree {
    fn new(root: JointVector) -> Self {
        Self { nodes: vec![root], parents: vec![None] }
    }

    fn nearest(&self, q: &JointVector) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.distance(q);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    fn add(&mut self, q: JointVector, parent: usize) -> usize {
        self.nodes.push(q);
        self.parents.push(Some(parent));
        self.nodes.len() - 1
    }

    /// Root-to-node sequence.
    fn branch(&self, mut idx: usize) -> Vec<JointVector> {
        let mut out = vec![self.nodes[idx]];
        while let Some(p) = self.parents[idx] {
            out.push(self.nodes[p]);
            idx = p;
        }
        out.reverse();
        out
    }
}

enum Extend {
    Trapped,
    Advanced(usize),
    Reached(usize),
}

fn extend(tree: &mut Tree, target: &JointVector, step: f64, checker: &Checker) -> Extend {
    let near_idx = tree.nearest(target);
    let near = tree.nodes[near_idx];
    let dist = near.distance(target);
    let (q_new, reached) = if dist <= step {
        (*target, true)
    } else {
        (near.lerp(target, step / dist), false)
    };
    if !checker.motion_ok(&near, &q_new) {
        return Extend::Trapped;
    }
    let idx = tree.add(q_new, near_idx);
    if reached {
        Extend::Reached(idx)
    } else {
        Extend::Advanced(idx)
    }
}

fn connect(tree: &mut Tree, target: &JointVector, step: f64, checker: &Checker) -> Extend {
    loop {
        match extend(tree, target, step, checker) {
            Extend::Advanced(_) => continue,
            other => return other,
        }
    }
}

/// Bidirectional RRT-Connect. The returned path starts at `q_start`, ends at
/// `q_goal`, and no consecutive pair is farther apart than `step_size`.
pub fn plan(req: &PlanRequest, dh: &DhTable) -> Result<Vec<JointVector>, PlanError> {
    if !(req.step_size.is_finite() && req.step_size > 0.0) {
        return Err(PlanError::Parameter(format!("step_size must be > 0, got {}", req.step_size)));
    }
    let checker = Checker {
        scene: &req.scene,
        dh,
        margin: req.safety_margin,
        resolution: req.step_size / VALIDATION_DIVISOR,
    };
    if !checker.state_ok(&req.q_start) {
        return Err(PlanError::InvalidStart);
    }
    if !checker.state_ok(&req.q_goal) {
        return Err(PlanError::InvalidGoal);
    }
    if req.q_start == req.q_goal {
        return Ok(vec![req.q_start]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(req.rng_seed);
    let mut start_tree = Tree::new(req.q_start);
    let mut goal_tree = Tree::new(req.q_goal);
    // `a` is the tree being extended toward the random sample this round.
    let mut a_is_start = true;

    for _ in 0..req.max_iterations {
        let sample = random_configuration(&mut rng, dh);
        let (a, b) = if a_is_start {
            (&mut start_tree, &mut goal_tree)
        } else {
            (&mut goal_tree, &mut start_tree)
        };
        let new_idx = match extend(a, &sample, req.step_size, &checker) {
            Extend::Trapped => None,
            Extend::Advanced(i) | Extend::Reached(i) => Some(i),
        };
        if let Some(new_idx) = new_idx {
            let q_new = a.nodes[new_idx];
            if let Extend::Reached(b_idx) = connect(b, &q_new, req.step_size, &checker) {
                let mut from_a = a.branch(new_idx);
                let mut from_b = b.branch(b_idx);
                // Both branches end at q_new; keep one copy.
                from_b.pop();
                from_b.reverse();
                from_a.extend(from_b);
                if !a_is_start {
                    from_a.reverse();
                }
                let path = if req.smooth {
                    shortcut(&from_a, &checker, req.step_size, &mut rng)
                } else {
                    from_a
                };
                return Ok(path);
            }
        }
        a_is_start = !a_is_start;
    }
    Err(PlanError::NoPath { iterations: req.max_iterations })
}

fn random_configuration(rng: &mut ChaCha8Rng, dh: &DhTable) -> JointVector {
    let mut q = [0.0; DOF];
    for (v, [lo, hi]) in q.iter_mut().zip(&dh.joint_limits) {
        *v = rng.gen_range(*lo..=*hi);
    }
    JointVector(q)
}

/// Linear interpolation so that no joint moves more than `step` per waypoint.
pub fn interpolate(a: &JointVector, b: &JointVector, step: f64) -> Vec<JointVector> {
    let n = (a.max_abs_diff(b) / step).ceil().max(1.0) as usize;
    (0..=n).map(|k| a.lerp(b, k as f64 / n as f64)).collect()
}

fn shortcut(path: &[JointVector], checker: &Checker, step: f64, rng: &mut ChaCha8Rng) -> Vec<JointVector> {
    let mut pts = path.to_vec();
    for _ in 0..(4 * pts.len()).min(400) {
        if pts.len() < 3 {
            break;
        }
        let i = rng.gen_range(0..pts.len() - 2);
        let j = rng.gen_range(i + 2..pts.len());
        if checker.motion_ok(&pts[i], &pts[j]) {
            pts.drain(i + 1..j);
        }
    }
    let mut out = vec![pts[0]];
    for w in pts.windows(2) {
        let seg = interpolate(&w[0], &w[1], step / (DOF as f64).sqrt());
        out.extend_from_slice(&seg[1..]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinePlan {
    Path(Vec<JointVector>),
    /// The waypoint index at which the interpolation first collides.
    Blocked { at: usize },
}

/// Joint-space straight line at `step_size` per joint; `Blocked` when any
/// configuration along it collides.
pub fn straight_line_plan(
    q_start: &JointVector,
    q_goal: &JointVector,
    scene: &[SceneObject],
    dh: &DhTable,
    step_size: f64,
) -> LinePlan {
    if q_start == q_goal {
        return LinePlan::Path(vec![*q_start]);
    }
    let checker = Checker {
        scene,
        dh,
        margin: DEFAULT_SAFETY_MARGIN,
        resolution: step_size / VALIDATION_DIVISOR,
    };
    let path = interpolate(q_start, q_goal, step_size);
    if !checker.state_ok(&path[0]) {
        return LinePlan::Blocked { at: 0 };
    }
    for (i, w) in path.windows(2).enumerate() {
        if !checker.motion_ok(&w[0], &w[1]) {
            return LinePlan::Blocked { at: i + 1 };
        }
    }
    LinePlan::Path(path)
}

/// Dense validity check of a whole path at the given resolution.
pub fn path_is_valid(path: &[JointVector], scene: &[SceneObject], dh: &DhTable, resolution: f64) -> bool {
    let checker = Checker { scene, dh, margin: DEFAULT_SAFETY_MARGIN, resolution };
    path.first().is_some_and(|q| checker.state_ok(q)) && path.windows(2).all(|w| checker.motion_ok(&w[0], &w[1]))
}
