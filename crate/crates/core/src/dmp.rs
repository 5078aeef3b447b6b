//! Discrete Dynamic Movement Primitives.
//!
//! Each degree of freedom is a critically damped spring-damper pulled toward
//! its goal, plus a learned forcing term driven by an exponentially decaying
//! phase variable:
//!
//! ```text
//! tau * dz/dt = alpha_z * (beta_z * (g - y) - z) + f(x) * (g - y0)
//! tau * dy/dt = z
//! tau * dx/dt = -alpha_x * x
//! ```
//!
//! The forcing term is a normalized mixture of Gaussian basis functions in
//! phase space whose weights are learned from a single demonstration with
//! locally weighted regression. Because the forcing vanishes as `x -> 0`, the
//! attractor guarantees convergence to whatever goal is supplied at rollout.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ALPHA_Z: f64 = 25.0;
pub const DEFAULT_N_BASIS: usize = 20;

/// Rollouts integrate for this multiple of `tau` so the attractor can settle.
pub const SETTLING_FACTOR: f64 = 1.5;

/// Forcing denominators below this are treated as zero.
const EPS_DEN: f64 = 1e-10;

/// Below this demonstrated amplitude the forcing is not amplitude-normalized.
pub const DEGENERATE_AMPLITUDE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum DmpError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("insufficient data: {samples} samples, need at least 3")]
    InsufficientData { samples: usize },
    #[error("non-finite or malformed demonstration sample at index {index}")]
    Data { index: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub alpha_z: f64,
    pub beta_z: f64,
    pub alpha_x: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Self::critically_damped(DEFAULT_ALPHA_Z)
    }
}

impl Gains {
    /// `beta_z = alpha_z / 4`, `alpha_x = alpha_z / 3`.
    pub fn critically_damped(alpha_z: f64) -> Self {
        Self {
            alpha_z,
            beta_z: alpha_z / 4.0,
            alpha_x: alpha_z / 3.0,
        }
    }

    fn validate(&self) -> Result<(), DmpError> {
        for (name, v) in [
            ("alpha_z", self.alpha_z),
            ("beta_z", self.beta_z),
            ("alpha_x", self.alpha_x),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DmpError::Parameter(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DmpSpace {
    #[default]
    JointSpace,
    CartesianSpace,
}

/// Forcing-term parameters and boundary values of one degree of freedom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpDof {
    pub weights: Vec<f64>,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub y0: f64,
    pub g: f64,
}

impl DmpDof {
    /// Multiplier applied to the normalized forcing for a rollout from
    /// `y0_new` to `g_new`.
    ///
    /// DOFs whose demonstration did not move between its endpoints were
    /// learned unnormalized, so their forcing is replayed as-is.
    pub fn forcing_scale(&self, y0_new: f64, g_new: f64) -> f64 {
        if self.is_degenerate() {
            1.0
        } else {
            g_new - y0_new
        }
    }

    pub fn is_degenerate(&self) -> bool {
        (self.g - self.y0).abs() < DEGENERATE_AMPLITUDE
    }

    pub fn validate(&self) -> Result<(), DmpError> {
        let n = self.weights.len();
        if n < 2 || self.centers.len() != n || self.widths.len() != n {
            return Err(DmpError::InvalidModel(format!(
                "basis arrays must share a length >= 2 (weights {n}, centers {}, widths {})",
                self.centers.len(),
                self.widths.len()
            )));
        }
        if self.widths.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(DmpError::InvalidModel("widths must be finite and > 0".into()));
        }
        if self.centers.iter().any(|c| !(*c > 0.0 && *c <= 1.0)) {
            return Err(DmpError::InvalidModel("centers must lie in (0, 1]".into()));
        }
        if self.centers.windows(2).any(|w| w[1] >= w[0]) {
            return Err(DmpError::InvalidModel("centers must be strictly decreasing".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) || !self.y0.is_finite() || !self.g.is_finite() {
            return Err(DmpError::InvalidModel("non-finite weights or boundary values".into()));
        }
        Ok(())
    }
}

/// A learned skill: one [`DmpDof`] per degree of freedom plus shared timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpModel {
    pub space: DmpSpace,
    pub tau: f64,
    pub dt: f64,
    pub gains: Gains,
    pub dofs: Vec<DmpDof>,
    pub object_id: Option<String>,
}

impl DmpModel {
    pub fn dimension(&self) -> usize {
        self.dofs.len()
    }

    pub fn start(&self) -> Vec<f64> {
        self.dofs.iter().map(|d| d.y0).collect()
    }

    pub fn goal(&self) -> Vec<f64> {
        self.dofs.iter().map(|d| d.g).collect()
    }

    pub fn with_space(mut self, space: DmpSpace) -> Self {
        self.space = space;
        self
    }

    pub fn with_object(mut self, object_id: impl Into<String>) -> Self {
        self.object_id = Some(object_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), DmpError> {
        self.gains.validate()?;
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(DmpError::InvalidModel(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(DmpError::InvalidModel(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.dofs.is_empty() {
            return Err(DmpError::InvalidModel("model has no degrees of freedom".into()));
        }
        self.dofs.iter().try_for_each(DmpDof::validate)
    }
}

/// A uniformly sampled demonstration, `positions[t][dof]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    positions: Vec<Vec<f64>>,
    dt: f64,
}

impl Demonstration {
    pub fn new(positions: Vec<Vec<f64>>, dt: f64) -> Result<Self, DmpError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DmpError::Parameter(format!("dt must be > 0, got {dt}")));
        }
        if positions.len() < 3 {
            return Err(DmpError::InsufficientData { samples: positions.len() });
        }
        let dim = positions[0].len();
        if dim == 0 {
            return Err(DmpError::Data { index: 0 });
        }
        for (index, row) in positions.iter().enumerate() {
            if row.len() != dim || row.iter().any(|v| !v.is_finite()) {
                return Err(DmpError::Data { index });
            }
        }
        Ok(Self { positions, dt })
    }

    /// Builds a single-DOF demonstration from a scalar series.
    pub fn from_scalar(samples: &[f64], dt: f64) -> Result<Self, DmpError> {
        Self::new(samples.iter().map(|&v| vec![v]).collect(), dt)
    }

    pub fn positions(&self) -> &[Vec<f64>] {
        &self.positions
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.positions[0].len()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    fn column(&self, dof: usize) -> Vec<f64> {
        self.positions.iter().map(|row| row[dof]).collect()
    }
}

/// Phase of the canonical system, `exp(-alpha_x * t / tau)`.
pub fn canonical_phase(t: f64, tau: f64, alpha_x: f64) -> Result<f64, DmpError> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(DmpError::Parameter(format!("tau must be > 0, got {tau}")));
    }
    if !(alpha_x.is_finite() && alpha_x > 0.0) {
        return Err(DmpError::Parameter(format!("alpha_x must be > 0, got {alpha_x}")));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(DmpError::Parameter(format!("t must be >= 0, got {t}")));
    }
    Ok((-alpha_x * t / tau).exp())
}

/// Basis centers spaced evenly in time along the canonical decay, and widths
/// such that neighbouring Gaussians cross at `exp(-1)`.
pub fn basis_layout(n_basis: usize, alpha_x: f64) -> (Vec<f64>, Vec<f64>) {
    let last = (n_basis - 1) as f64;
    let centers: Vec<f64> = (0..n_basis)
        .map(|i| (-alpha_x * i as f64 / last).exp())
        .collect();
    let mut widths: Vec<f64> = centers
        .windows(2)
        .map(|w| {
            let half_gap = 0.5 * (w[1] - w[0]);
            1.0 / (half_gap * half_gap)
        })
        .collect();
    let tail = *widths.last().expect("n_basis >= 2");
    widths.push(tail);
    (centers, widths)
}

fn basis_activation(width: f64, center: f64, x: f64) -> f64 {
    let d = x - center;
    (-width * d * d).exp()
}

/// `x * scale * sum(psi_i * w_i) / sum(psi_i)`; zero when the basis
/// activations underflow.
pub fn forcing_term(dof: &DmpDof, x: f64, scale: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((w, c), h) in dof.weights.iter().zip(&dof.centers).zip(&dof.widths) {
        let psi = basis_activation(*h, *c, x);
        num += psi * w;
        den += psi;
    }
    if den < EPS_DEN {
        0.0
    } else {
        x * scale * num / den
    }
}

/// Central differences in the interior, one-sided at both ends.
pub fn finite_difference(series: &[f64], dt: f64) -> Vec<f64> {
    let n = series.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    out[0] = (series[1] - series[0]) / dt;
    out[n - 1] = (series[n - 1] - series[n - 2]) / dt;
    for i in 1..n - 1 {
        out[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
    }
    out
}

/// Learns one DMP per demonstrated degree of freedom.
pub fn fit(demo: &Demonstration, n_basis: usize, gains: Gains) -> Result<DmpModel, DmpError> {
    if n_basis < 2 {
        return Err(DmpError::Parameter(format!("n_basis must be >= 2, got {n_basis}")));
    }
    gains.validate()?;

    let dt = demo.dt();
    let tau = demo.duration();
    let phases: Vec<f64> = (0..demo.len())
        .map(|k| canonical_phase(k as f64 * dt, tau, gains.alpha_x))
        .collect::<Result<_, _>>()?;
    let (centers, widths) = basis_layout(n_basis, gains.alpha_x);

    let dofs = (0..demo.dimension())
        .map(|d| {
            let y = demo.column(d);
            fit_dof(&y, dt, tau, &phases, gains, &centers, &widths)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let model = DmpModel {
        space: DmpSpace::default(),
        tau,
        dt,
        gains,
        dofs,
        object_id: None,
    };
    model.validate()?;
    Ok(model)
}

fn fit_dof(
    y: &[f64],
    dt: f64,
    tau: f64,
    phases: &[f64],
    gains: Gains,
    centers: &[f64],
    widths: &[f64],
) -> Result<DmpDof, DmpError> {
    let y0 = y[0];
    let g = *y.last().expect("demo has >= 3 samples");
    let yd = finite_difference(y, dt);
    let ydd = finite_difference(&yd, dt);

    let mut dof = DmpDof {
        weights: vec![0.0; centers.len()],
        centers: centers.to_vec(),
        widths: widths.to_vec(),
        y0,
        g,
    };
    let scale = dof.forcing_scale(y0, g);

    // Forcing that makes the transformation system reproduce the demo exactly.
    let target: Vec<f64> = (0..y.len())
        .map(|k| {
            tau * tau * ydd[k] - gains.alpha_z * (gains.beta_z * (g - y[k]) - tau * yd[k])
        })
        .collect();

    for (i, w) in dof.weights.iter_mut().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (k, &x) in phases.iter().enumerate() {
            let psi = basis_activation(widths[i], centers[i], x);
            let xi = x * scale;
            num += psi * xi * target[k];
            den += psi * xi * xi;
        }
        *w = if den > EPS_DEN * EPS_DEN { num / den } else { 0.0 };
    }

    if dof.weights.iter().any(|w| !w.is_finite()) {
        return Err(DmpError::Data { index: 0 });
    }
    Ok(dof)
}

/// Sampled output of [`rollout`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `positions[k][dof]` at time `k * dt`.
    pub positions: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
    pub dt: f64,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last(&self) -> &[f64] {
        self.positions.last().expect("rollout has at least one sample")
    }

    /// Samples of a single degree of freedom.
    pub fn dof(&self, index: usize) -> Vec<f64> {
        self.positions.iter().map(|p| p[index]).collect()
    }
}

/// Number of samples produced for a rollout of duration `tau` at step `dt`.
pub fn rollout_len(tau: f64, dt: f64) -> usize {
    (SETTLING_FACTOR * tau / dt).ceil() as usize + 1
}

/// Integrates the learned system from `y0_new` toward `g_new` with explicit
/// Euler steps of `dt` over `1.5 * tau_new`.
pub fn rollout(
    model: &DmpModel,
    y0_new: &[f64],
    g_new: &[f64],
    tau_new: f64,
    dt: f64,
) -> Result<Rollout, DmpError> {
    let dim = model.dimension();
    if y0_new.len() != dim || g_new.len() != dim {
        return Err(DmpError::Parameter(format!(
            "start/goal must have {dim} entries (got {} and {})",
            y0_new.len(),
            g_new.len()
        )));
    }
    if y0_new.iter().chain(g_new).any(|v| !v.is_finite()) {
        return Err(DmpError::Parameter("start/goal must be finite".into()));
    }
    if !(tau_new.is_finite() && tau_new > 0.0) {
        return Err(DmpError::Parameter(format!("tau must be > 0, got {tau_new}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(DmpError::Parameter(format!("dt must be > 0, got {dt}")));
    }

    let Gains { alpha_z, beta_z, alpha_x } = model.gains;
    let steps = rollout_len(tau_new, dt);
    let scales: Vec<f64> = model
        .dofs
        .iter()
        .zip(y0_new.iter().zip(g_new))
        .map(|(dof, (&s, &g))| dof.forcing_scale(s, g))
        .collect();

    let mut y = y0_new.to_vec();
    let mut z = vec![0.0; dim];
    let mut positions = Vec::with_capacity(steps);
    let mut phases = Vec::with_capacity(steps);

    for k in 0..steps {
        let x = canonical_phase(k as f64 * dt, tau_new, alpha_x)?;
        positions.push(y.clone());
        phases.push(x);
        for d in 0..dim {
            let f = forcing_term(&model.dofs[d], x, scales[d]);
            let z_dot = (alpha_z * (beta_z * (g_new[d] - y[d]) - z[d]) + f) / tau_new;
            let y_dot = z[d] / tau_new;
            y[d] += y_dot * dt;
            z[d] += z_dot * dt;
        }
    }

    Ok(Rollout { positions, phases, dt })
}

/// Version written into every stored model document.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoreDocument<M> {
    schema_version: u32,
    #[serde(flatten)]
    model: M,
}

/// Serializes a model as a versioned JSON store document. Floats are written
/// with shortest round-trip precision.
pub fn to_document(model: &DmpModel) -> String {
    serde_json::to_string_pretty(&StoreDocument { schema_version: SCHEMA_VERSION, model })
        .expect("model serializes")
}

pub fn from_document(text: &str) -> Result<DmpModel, DmpError> {
    let doc: StoreDocument<DmpModel> =
        serde_json::from_str(text).map_err(|e| DmpError::InvalidModel(format!("store document: {e}")))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(DmpError::InvalidModel(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            doc.schema_version
        )));
    }
    doc.model.validate()?;
    Ok(doc.model)
}
