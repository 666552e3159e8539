//! Residual factors binding graph nodes to measurements: relative-pose
//! constraints from odometry plus GPS, magnetometer, and barometer
//! constraints, each with its covariance-assignment policy and an optional
//! Huber robust loss.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};
use thiserror::Error;

use crate::graph::NodeId;
use crate::manifold::{quat_boxminus, relative_pose, Pose, UnitQuat};

/// Satellite count at and above which the GPS covariance stops shrinking.
pub const GPS_REFERENCE_SATELLITES: u32 = 10;
/// Lower bound on the windowed barometer variance, m^2.
pub const BARO_VARIANCE_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("covariance dimension {got} does not match residual dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("magnetometer measurement has zero norm")]
    ZeroNormMeasurement,
}

/// Relative pose measured by the local odometry between two consecutive nodes.
#[derive(Debug, Clone, Copy)]
pub struct LocalMeasurement {
    /// frame of the earlier node -> frame of the later node
    pub relative: Pose,
}

/// GPS fix already expressed in the ENU world frame.
#[derive(Debug, Clone, Copy)]
pub struct GpsMeasurement {
    pub position: Vector3<f64>,
    pub satellites: Option<u32>,
    pub time: f64,
}

/// Raw magnetic field vector in the sensor frame.
#[derive(Debug, Clone, Copy)]
pub struct MagMeasurement {
    pub field: Vector3<f64>,
    pub time: f64,
}

/// Calibrated magnetometer context: the local world field and the
/// body-to-sensor rotation, both supplied by configuration.
#[derive(Debug, Clone, Copy)]
pub struct MagReference {
    pub world_field: Vector3<f64>,
    pub body_to_sensor: UnitQuat,
}

/// Barometric height relative to the stream's reference, with the variance
/// estimated from a short window of recent samples.
#[derive(Debug, Clone, Copy)]
pub struct BaroMeasurement {
    pub height: f64,
    pub variance: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustLoss {
    None,
    Huber { delta: f64 },
}

#[derive(Debug, Clone)]
pub enum FactorKind {
    Local(LocalMeasurement),
    Gps(GpsMeasurement),
    Mag { measurement: MagMeasurement, reference: MagReference },
    Baro(BaroMeasurement),
}

impl FactorKind {
    pub fn residual_dim(&self) -> usize {
        match self {
            FactorKind::Local(_) => 6,
            FactorKind::Gps(_) | FactorKind::Mag { .. } => 3,
            FactorKind::Baro(_) => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FactorKind::Local(_) => "local",
            FactorKind::Gps(_) => "gps",
            FactorKind::Mag { .. } => "mag",
            FactorKind::Baro(_) => "baro",
        }
    }
}

/// Node binding of a factor: unary constraints touch one node, the local
/// relative-pose constraint touches two consecutive nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorNodes {
    One(NodeId),
    Two(NodeId, NodeId),
}

impl FactorNodes {
    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        match *self {
            FactorNodes::One(a) => vec![a].into_iter(),
            FactorNodes::Two(a, b) => vec![a, b].into_iter(),
        }
    }

    pub fn touches(&self, id: NodeId) -> bool {
        match *self {
            FactorNodes::One(a) => a == id,
            FactorNodes::Two(a, b) => a == id || b == id,
        }
    }
}

/// A measurement-derived residual over one or two nodes, with its SPD
/// covariance (stored with its whitening square root) and robust loss.
#[derive(Debug, Clone)]
pub struct Factor {
    pub nodes: FactorNodes,
    pub kind: FactorKind,
    pub covariance: DMatrix<f64>,
    /// inverse of the lower Cholesky factor of the covariance
    sqrt_info: DMatrix<f64>,
    pub loss: RobustLoss,
}

impl Factor {
    pub fn new(
        nodes: FactorNodes,
        kind: FactorKind,
        covariance: DMatrix<f64>,
        loss: RobustLoss,
    ) -> Result<Self, FactorError> {
        let dim = kind.residual_dim();
        if covariance.nrows() != dim || covariance.ncols() != dim {
            return Err(FactorError::DimensionMismatch { got: covariance.nrows(), expected: dim });
        }
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or(FactorError::NotPositiveDefinite)?;
        let sqrt_info = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(dim, dim))
            .ok_or(FactorError::NotPositiveDefinite)?;
        Ok(Factor { nodes, kind, covariance, sqrt_info, loss })
    }

    /// Whitening matrix `L^-1` with `covariance = L L^T`.
    pub fn sqrt_info(&self) -> &DMatrix<f64> {
        &self.sqrt_info
    }

    /// Raw (unwhitened) residual given the bound node states, in binding order.
    pub fn residual(&self, states: &[Pose]) -> Result<DVector<f64>, FactorError> {
        match &self.kind {
            FactorKind::Local(z) => {
                let r = local_residual(&states[0], &states[1], z);
                Ok(DVector::from_column_slice(r.as_slice()))
            }
            FactorKind::Gps(z) => {
                let r = gps_residual(&states[0], z);
                Ok(DVector::from_column_slice(r.as_slice()))
            }
            FactorKind::Mag { measurement, reference } => {
                let r = mag_residual(&states[0], measurement, reference)?;
                Ok(DVector::from_column_slice(r.as_slice()))
            }
            FactorKind::Baro(z) => Ok(DVector::from_vec(vec![baro_residual(&states[0], z)])),
        }
    }
}

/// Relative-pose residual between two nodes: measured minus estimated
/// relative pose, position rows first, then the rotation error state.
pub fn local_residual(x_prev: &Pose, x_curr: &Pose, z: &LocalMeasurement) -> Vector6<f64> {
    let est = relative_pose(x_prev, x_curr);
    let dp = z.relative.position - est.position;
    let dq = quat_boxminus(&z.relative.orientation, &est.orientation);
    Vector6::new(dp.x, dp.y, dp.z, dq.x, dq.y, dq.z)
}

/// Direct position residual `p_gps - p`.
pub fn gps_residual(x: &Pose, z: &GpsMeasurement) -> Vector3<f64> {
    z.position - x.position
}

/// GPS covariance from satellite count: `sigma = base * max(1, n_ref / n)`,
/// diagonal `(sigma^2, sigma^2, (2 sigma)^2)` -- the vertical channel is
/// modeled twice as noisy. A count of zero is clamped to one.
pub fn gps_covariance(satellite_count: u32, base_sigma: f64) -> Matrix3<f64> {
    let n = satellite_count.max(1) as f64;
    let sigma = base_sigma * (GPS_REFERENCE_SATELLITES as f64 / n).max(1.0);
    Matrix3::from_diagonal(&Vector3::new(
        sigma * sigma,
        sigma * sigma,
        4.0 * sigma * sigma,
    ))
}

/// Normalized field-direction residual; rejects zero-norm measurements.
pub fn mag_residual(
    x: &Pose,
    z: &MagMeasurement,
    reference: &MagReference,
) -> Result<Vector3<f64>, FactorError> {
    let zn = z.field.norm();
    if zn <= 0.0 || !zn.is_finite() {
        return Err(FactorError::ZeroNormMeasurement);
    }
    let wn = reference.world_field.norm();
    if wn <= 0.0 || !wn.is_finite() {
        return Err(FactorError::ZeroNormMeasurement);
    }
    let measured = z.field / zn;
    let world_unit = reference.world_field / wn;
    let predicted = reference
        .body_to_sensor
        .rotate(&x.orientation.inverse().rotate(&world_unit));
    Ok(measured - predicted)
}

/// Magnetometer covariance from the field-strength ratio:
/// `sigma = base * max(1, r, 1/r)^2`, isotropic.
pub fn mag_covariance(measured_norm: f64, reference_norm: f64, base_sigma: f64) -> Matrix3<f64> {
    let ratio = measured_norm / reference_norm;
    let scale = ratio.max(1.0 / ratio).max(1.0);
    let sigma = base_sigma * scale * scale;
    Matrix3::from_diagonal_element(sigma * sigma)
}

/// Height residual `z_h - z`.
pub fn baro_residual(x: &Pose, z: &BaroMeasurement) -> f64 {
    z.height - x.position.z
}

/// Unbiased sample variance of a short window of heights, floored at
/// [`BARO_VARIANCE_FLOOR`]; falls back to `default_variance` with fewer
/// than two samples.
pub fn baro_variance(window: &[f64], default_variance: f64) -> f64 {
    if window.len() < 2 {
        return default_variance;
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / (n - 1.0);
    var.max(BARO_VARIANCE_FLOOR)
}

/// Huber loss on a squared residual norm `s`: returns `(rho(s), rho'(s))`.
/// Quadratic for `s <= delta^2`, linear in `sqrt(s)` beyond.
pub fn huber_loss(residual_norm_sq: f64, delta: f64) -> (f64, f64) {
    let d2 = delta * delta;
    if residual_norm_sq <= d2 {
        (residual_norm_sq, 1.0)
    } else {
        let s = residual_norm_sq.sqrt();
        (2.0 * delta * s - d2, delta / s)
    }
}

/// Parameters of the unified odometry covariance used when the upstream
/// source provides none: a base floor plus a fraction of the step size.
#[derive(Debug, Clone, Copy)]
pub struct LocalNoiseParams {
    pub sigma_translation_base: f64,
    /// fraction of the step length added to the translation sigma
    pub sigma_translation_rate: f64,
    pub sigma_rotation_base: f64,
    /// fraction of the step angle added to the rotation sigma
    pub sigma_rotation_rate: f64,
}

impl Default for LocalNoiseParams {
    fn default() -> Self {
        LocalNoiseParams {
            sigma_translation_base: 0.01,
            sigma_translation_rate: 0.01,
            sigma_rotation_base: 0.001,
            sigma_rotation_rate: 0.01,
        }
    }
}

/// Unified covariance for a relative-pose step.
pub fn local_covariance(step: &Pose, params: &LocalNoiseParams) -> DMatrix<f64> {
    let len = step.position.norm();
    let angle = step.orientation.log().norm();
    let st = params.sigma_translation_base + params.sigma_translation_rate * len;
    let sr = params.sigma_rotation_base + params.sigma_rotation_rate * angle;
    let mut cov = DMatrix::zeros(6, 6);
    for i in 0..3 {
        cov[(i, i)] = st * st;
        cov[(i + 3, i + 3)] = sr * sr;
    }
    cov
}
