//! Ground-truth oracle: synthetic trajectories and sensor streams with
//! seeded randomness. Odometry drifts, global sensors are noisy but
//! drift-free, and with every noise at zero each factor residual evaluated
//! at the truth is exactly zero.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::evaluation::Trajectory;
use crate::factors::{GpsMeasurement, MagMeasurement};
use crate::manifold::{relative_pose, Pose, UnitQuat};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("waypoint shape needs at least 2 waypoints")]
    TooFewWaypoints,
    #[error("sensor rate {rate} Hz exceeds the trajectory sample rate {sample_rate} Hz")]
    RateTooHigh { rate: f64, sample_rate: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeKind {
    Circle,
    FigureEight,
    Straight,
    Helix,
    Waypoints(Vec<Vector3<f64>>),
}

/// Per-step odometry corruption. Translation noise is applied per axis in
/// the body frame; yaw noise and the systematic yaw-rate bias realize the
/// heading drift that dominates planar dead reckoning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryDriftConfig {
    /// per-step translation sigma, meters per axis
    pub sigma_translation: f64,
    /// per-step yaw noise, radians
    pub sigma_yaw: f64,
    /// per-step roll/pitch noise, radians
    pub sigma_attitude: f64,
    /// systematic heading drift, radians per second
    pub yaw_rate_bias: f64,
}

impl Default for OdometryDriftConfig {
    fn default() -> Self {
        OdometryDriftConfig {
            sigma_translation: 0.001,
            sigma_yaw: 0.002,
            sigma_attitude: 0.0,
            yaw_rate_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpsSimConfig {
    pub rate: f64,
    pub sigma_horizontal: f64,
    pub sigma_vertical: f64,
    /// probability of dropping each sample
    pub dropout: f64,
    pub satellites_min: u32,
    pub satellites_max: u32,
    /// fraction of samples replaced by outliers
    pub outlier_fraction: f64,
    /// horizontal magnitude of injected outliers, meters
    pub outlier_magnitude: f64,
    /// per-sample random-walk sigma for correlated (multipath-like) error
    pub random_walk_sigma: f64,
}

impl Default for GpsSimConfig {
    fn default() -> Self {
        GpsSimConfig {
            rate: 1.0,
            sigma_horizontal: 0.5,
            sigma_vertical: 1.0,
            dropout: 0.0,
            satellites_min: 10,
            satellites_max: 10,
            outlier_fraction: 0.0,
            outlier_magnitude: 0.0,
            random_walk_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagSimConfig {
    pub rate: f64,
    /// additive field noise sigma per axis, same unit as the world field
    pub sigma: f64,
    pub world_field: Vector3<f64>,
    pub body_to_sensor: UnitQuat,
}

impl Default for MagSimConfig {
    fn default() -> Self {
        MagSimConfig {
            rate: 10.0,
            sigma: 0.02,
            world_field: Vector3::new(0.0, 1.0, 0.0),
            body_to_sensor: UnitQuat::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaroSimConfig {
    pub rate: f64,
    pub sigma: f64,
}

impl Default for BaroSimConfig {
    fn default() -> Self {
        BaroSimConfig { rate: 10.0, sigma: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub shape: ShapeKind,
    pub path_length: f64,
    pub speed: f64,
    pub sample_rate: f64,
    /// loop radius for circle/eight/helix; derived from the path length when absent
    pub radius: Option<f64>,
    /// vertical climb per meter of arc, helix only
    pub climb_rate: f64,
    pub odometry: OdometryDriftConfig,
    pub gps: GpsSimConfig,
    pub mag: MagSimConfig,
    pub baro: BaroSimConfig,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            shape: ShapeKind::Circle,
            path_length: 1000.0,
            speed: 10.0,
            sample_rate: 100.0,
            radius: None,
            climb_rate: 0.05,
            odometry: OdometryDriftConfig::default(),
            gps: GpsSimConfig::default(),
            mag: MagSimConfig::default(),
            baro: BaroSimConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryStep {
    pub time: f64,
    /// relative pose from the previous sample's frame to this one
    pub relative: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaroSample {
    pub time: f64,
    pub height: f64,
}

#[derive(Debug, Clone)]
pub struct SensorStreams {
    pub truth: Trajectory,
    pub odometry: Vec<OdometryStep>,
    pub gps: Vec<GpsMeasurement>,
    pub mag: Vec<MagMeasurement>,
    pub baro: Vec<BaroSample>,
}

// distinct sub-seeds so the streams are independent but reproducible
const SEED_ODOMETRY: u64 = 0x6f646f6d;
const SEED_GPS: u64 = 0x677073;
const SEED_MAG: u64 = 0x6d6167;
const SEED_BARO: u64 = 0x6261726f;

/// Arc-length parameterized curve with horizontal tangent heading.
fn curve_point(shape: &ShapeKind, scenario: &Scenario, s: f64) -> (Vector3<f64>, f64) {
    match shape {
        ShapeKind::Straight => (Vector3::new(s, 0.0, 0.0), 0.0),
        ShapeKind::Circle => {
            let r = scenario.radius.unwrap_or(scenario.path_length / std::f64::consts::TAU);
            let u = s / r;
            (Vector3::new(r * u.sin(), r * (1.0 - u.cos()), 0.0), u)
        }
        ShapeKind::Helix => {
            let r = scenario.radius.unwrap_or(scenario.path_length / std::f64::consts::TAU);
            let u = s / r;
            (
                Vector3::new(r * u.sin(), r * (1.0 - u.cos()), scenario.climb_rate * s),
                u,
            )
        }
        ShapeKind::FigureEight => {
            // two tangent loops through the origin, opposite turning
            let r = scenario.radius.unwrap_or(scenario.path_length / (2.0 * std::f64::consts::TAU));
            let loop_len = std::f64::consts::TAU * r;
            let period = 2.0 * loop_len;
            let sm = s.rem_euclid(period);
            if sm < loop_len {
                let u = sm / r;
                (Vector3::new(r * u.sin(), r * (1.0 - u.cos()), 0.0), u)
            } else {
                let u = (sm - loop_len) / r;
                (Vector3::new(r * u.sin(), -r * (1.0 - u.cos()), 0.0), -u)
            }
        }
        ShapeKind::Waypoints(_) => unreachable!("waypoints handled separately"),
    }
}

/// Smooth pose sequence along the scenario shape; yaw follows the velocity
/// direction, roll and pitch stay zero.
pub fn generate_truth(scenario: &Scenario) -> Result<Trajectory, SimulateError> {
    if scenario.speed <= 0.0 {
        return Err(SimulateError::NonPositive("speed"));
    }
    if scenario.sample_rate <= 0.0 {
        return Err(SimulateError::NonPositive("sample rate"));
    }

    if let ShapeKind::Waypoints(points) = &scenario.shape {
        if points.len() < 2 {
            return Err(SimulateError::TooFewWaypoints);
        }
        return waypoint_truth(points, scenario.speed, scenario.sample_rate);
    }

    if scenario.path_length <= 0.0 {
        return Err(SimulateError::NonPositive("path length"));
    }
    let duration = scenario.path_length / scenario.speed;
    let n = (duration * scenario.sample_rate).floor() as usize;
    let mut traj = Trajectory::new();
    for k in 0..=n {
        let t = k as f64 / scenario.sample_rate;
        let s = scenario.speed * t;
        let (p, yaw) = curve_point(&scenario.shape, scenario, s);
        let q = UnitQuat::exp(&Vector3::new(0.0, 0.0, yaw));
        traj.push(t, Pose::new(p, q)).expect("monotone by construction");
    }
    Ok(traj)
}

fn waypoint_truth(
    points: &[Vector3<f64>],
    speed: f64,
    sample_rate: f64,
) -> Result<Trajectory, SimulateError> {
    let mut cumulative = vec![0.0];
    for w in points.windows(2) {
        let d = (w[1] - w[0]).norm();
        cumulative.push(cumulative.last().unwrap() + d);
    }
    let total = *cumulative.last().unwrap();
    if total <= 0.0 {
        return Err(SimulateError::NonPositive("waypoint path length"));
    }
    let duration = total / speed;
    let n = (duration * sample_rate).floor() as usize;
    let mut traj = Trajectory::new();
    let mut last_yaw = 0.0;
    for k in 0..=n {
        let t = k as f64 / sample_rate;
        let s = (speed * t).min(total);
        let seg = cumulative.partition_point(|&c| c <= s).min(points.len() - 1);
        let (i, j) = (seg - 1, seg);
        let seg_len = cumulative[j] - cumulative[i];
        let alpha = if seg_len > 0.0 { (s - cumulative[i]) / seg_len } else { 0.0 };
        let p = points[i] + (points[j] - points[i]) * alpha;
        let dir = points[j] - points[i];
        if dir.x.abs() > 1e-12 || dir.y.abs() > 1e-12 {
            last_yaw = dir.y.atan2(dir.x);
        }
        let q = UnitQuat::exp(&Vector3::new(0.0, 0.0, last_yaw));
        traj.push(t, Pose::new(p, q)).expect("monotone by construction");
    }
    Ok(traj)
}

/// Per-step true relative pose corrupted by zero-mean Gaussian noise plus an
/// optional systematic yaw-rate bias; integrating the stream drifts.
pub fn generate_odometry(
    truth: &Trajectory,
    config: &OdometryDriftConfig,
    seed: u64,
) -> Vec<OdometryStep> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ SEED_ODOMETRY);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let samples = truth.samples();
    let mut out = Vec::with_capacity(samples.len().saturating_sub(1));
    for w in samples.windows(2) {
        let dt = w[1].time - w[0].time;
        let rel = relative_pose(&w[0].pose, &w[1].pose);
        let dp = Vector3::new(
            normal.sample(&mut rng) * config.sigma_translation,
            normal.sample(&mut rng) * config.sigma_translation,
            normal.sample(&mut rng) * config.sigma_translation,
        );
        let drot = Vector3::new(
            normal.sample(&mut rng) * config.sigma_attitude,
            normal.sample(&mut rng) * config.sigma_attitude,
            normal.sample(&mut rng) * config.sigma_yaw + config.yaw_rate_bias * dt,
        );
        out.push(OdometryStep {
            time: w[1].time,
            relative: Pose {
                position: rel.position + dp,
                orientation: rel.orientation.compose(&UnitQuat::exp(&drot)),
            },
        });
    }
    out
}

/// Dead-reckons an odometry stream from a start pose, one sample per step
/// plus the start itself.
pub fn integrate_odometry(start_time: f64, start: &Pose, steps: &[OdometryStep]) -> Trajectory {
    let mut traj = Trajectory::new();
    traj.push(start_time, *start).expect("first sample");
    let mut pose = *start;
    for s in steps {
        pose = pose.compose(&s.relative);
        traj.push(s.time, pose).expect("odometry steps sorted");
    }
    traj
}

fn subsample_indices(truth: &Trajectory, rate: f64) -> Result<Vec<usize>, SimulateError> {
    let samples = truth.samples();
    if samples.len() < 2 {
        return Ok(if samples.is_empty() { vec![] } else { vec![0] });
    }
    let sample_rate =
        (samples.len() - 1) as f64 / (samples.last().unwrap().time - samples[0].time);
    if rate > sample_rate + 1e-9 {
        return Err(SimulateError::RateTooHigh { rate, sample_rate });
    }
    let end = samples.last().unwrap().time;
    let mut indices = Vec::new();
    let mut k = 0usize;
    loop {
        let target = samples[0].time + k as f64 / rate;
        if target > end + 1e-9 {
            break;
        }
        let idx = samples.partition_point(|s| s.time < target - 1e-9);
        if idx >= samples.len() {
            break;
        }
        indices.push(idx);
        k += 1;
    }
    indices.dedup();
    Ok(indices)
}

/// Subsampled truth positions plus iid Gaussian noise, optional dropout,
/// outlier injection, and a correlated random-walk component.
pub fn generate_gps(
    truth: &Trajectory,
    config: &GpsSimConfig,
    seed: u64,
) -> Result<Vec<GpsMeasurement>, SimulateError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ SEED_GPS);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let indices = subsample_indices(truth, config.rate)?;
    let mut out = Vec::with_capacity(indices.len());
    let mut walk = Vector3::zeros();
    for idx in indices {
        let s = &truth.samples()[idx];
        // fixed draw order keeps the stream reproducible
        let drop_draw: f64 = rng.gen();
        let noise = Vector3::new(
            normal.sample(&mut rng) * config.sigma_horizontal,
            normal.sample(&mut rng) * config.sigma_horizontal,
            normal.sample(&mut rng) * config.sigma_vertical,
        );
        walk += Vector3::new(
            normal.sample(&mut rng) * config.random_walk_sigma,
            normal.sample(&mut rng) * config.random_walk_sigma,
            normal.sample(&mut rng) * config.random_walk_sigma,
        );
        let outlier_draw: f64 = rng.gen();
        let outlier_dir: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
        let sats = if config.satellites_max > config.satellites_min {
            rng.gen_range(config.satellites_min..=config.satellites_max)
        } else {
            config.satellites_min
        };
        if drop_draw < config.dropout {
            continue;
        }
        let position = if outlier_draw < config.outlier_fraction {
            s.pose.position
                + Vector3::new(outlier_dir.cos(), outlier_dir.sin(), 0.0) * config.outlier_magnitude
        } else {
            s.pose.position + noise + walk
        };
        out.push(GpsMeasurement { position, satellites: Some(sats), time: s.time });
    }
    Ok(out)
}

/// Field measured in the sensor frame: the world field rotated into the
/// body, then into the sensor, plus noise.
pub fn generate_mag(
    truth: &Trajectory,
    config: &MagSimConfig,
    seed: u64,
) -> Result<Vec<MagMeasurement>, SimulateError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ SEED_MAG);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let indices = subsample_indices(truth, config.rate)?;
    let mut out = Vec::with_capacity(indices.len());
    for idx in indices {
        let s = &truth.samples()[idx];
        let in_body = s.pose.orientation.inverse().rotate(&config.world_field);
        let in_sensor = config.body_to_sensor.rotate(&in_body);
        let noise = Vector3::new(
            normal.sample(&mut rng) * config.sigma,
            normal.sample(&mut rng) * config.sigma,
            normal.sample(&mut rng) * config.sigma,
        );
        out.push(MagMeasurement { field: in_sensor + noise, time: s.time });
    }
    Ok(out)
}

/// Truth height plus noise.
pub fn generate_baro(
    truth: &Trajectory,
    config: &BaroSimConfig,
    seed: u64,
) -> Result<Vec<BaroSample>, SimulateError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ SEED_BARO);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let indices = subsample_indices(truth, config.rate)?;
    let mut out = Vec::with_capacity(indices.len());
    for idx in indices {
        let s = &truth.samples()[idx];
        out.push(BaroSample {
            time: s.time,
            height: s.pose.position.z + normal.sample(&mut rng) * config.sigma,
        });
    }
    Ok(out)
}

/// All sensor streams for a scenario, deterministically derived from its seed.
pub fn generate(scenario: &Scenario) -> Result<SensorStreams, SimulateError> {
    let truth = generate_truth(scenario)?;
    let odometry = generate_odometry(&truth, &scenario.odometry, scenario.seed);
    let gps = generate_gps(&truth, &scenario.gps, scenario.seed)?;
    let mag = generate_mag(&truth, &scenario.mag, scenario.seed)?;
    let baro = generate_baro(&truth, &scenario.baro, scenario.seed)?;
    Ok(SensorStreams { truth, odometry, gps, mag, baro })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::{baro_residual, gps_residual, mag_residual, local_residual};
    use crate::factors::{BaroMeasurement, LocalMeasurement, MagReference};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, TAU};

    fn zero_noise_scenario(shape: ShapeKind) -> Scenario {
        Scenario {
            shape,
            path_length: 100.0,
            speed: 5.0,
            sample_rate: 20.0,
            odometry: OdometryDriftConfig {
                sigma_translation: 0.0,
                sigma_yaw: 0.0,
                sigma_attitude: 0.0,
                yaw_rate_bias: 0.0,
            },
            gps: GpsSimConfig { sigma_horizontal: 0.0, sigma_vertical: 0.0, ..Default::default() },
            mag: MagSimConfig { sigma: 0.0, ..Default::default() },
            baro: BaroSimConfig { sigma: 0.0, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn circle_closes() {
        let sc = Scenario {
            shape: ShapeKind::Circle,
            path_length: TAU * 20.0,
            radius: Some(20.0),
            speed: 5.0,
            sample_rate: 50.0,
            ..Default::default()
        };
        let t = generate_truth(&sc).unwrap();
        let first = t.samples().first().unwrap().pose.position;
        let last = t.samples().last().unwrap().pose.position;
        assert!((last - first).norm() < sc.speed / sc.sample_rate + 1e-9);
    }

    #[test]
    fn straight_line_sample_count_and_spacing() {
        let sc = Scenario {
            shape: ShapeKind::Straight,
            path_length: 10.0,
            speed: 1.0,
            sample_rate: 10.0,
            ..Default::default()
        };
        let t = generate_truth(&sc).unwrap();
        assert_eq!(t.len(), 101);
        for w in t.samples().windows(2) {
            assert_abs_diff_eq!(
                (w[1].pose.position - w[0].pose.position).norm(),
                0.1,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn waypoints_interpolate_linearly() {
        let sc = Scenario {
            shape: ShapeKind::Waypoints(vec![Vector3::zeros(), Vector3::new(10.0, 0.0, 0.0)]),
            speed: 1.0,
            sample_rate: 2.0,
            ..Default::default()
        };
        let t = generate_truth(&sc).unwrap();
        assert_eq!(t.len(), 21);
        let mid = t.samples()[10];
        assert_abs_diff_eq!((mid.pose.position - Vector3::new(5.0, 0.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut sc = Scenario::default();
        sc.speed = 0.0;
        assert!(generate_truth(&sc).is_err());
        let mut sc = Scenario::default();
        sc.path_length = 0.0;
        assert!(generate_truth(&sc).is_err());
        let sc = Scenario {
            shape: ShapeKind::Waypoints(vec![Vector3::zeros()]),
            ..Default::default()
        };
        assert!(matches!(generate_truth(&sc), Err(SimulateError::TooFewWaypoints)));
    }

    #[test]
    fn zero_noise_odometry_reproduces_truth() {
        let sc = zero_noise_scenario(ShapeKind::Circle);
        let truth = generate_truth(&sc).unwrap();
        let steps = generate_odometry(&truth, &sc.odometry, 1);
        let start = truth.samples()[0];
        let integrated = integrate_odometry(start.time, &start.pose, &steps);
        for (a, b) in integrated.samples().iter().zip(truth.samples()) {
            assert!((a.pose.position - b.pose.position).norm() < 1e-12);
            let gap = crate::manifold::quat_boxminus(&a.pose.orientation, &b.pose.orientation);
            assert!(gap.norm() < 1e-10);
        }
    }

    #[test]
    fn yaw_rate_bias_integrates_in_closed_form() {
        let mut sc = zero_noise_scenario(ShapeKind::Straight);
        sc.odometry.yaw_rate_bias = 0.01;
        let truth = generate_truth(&sc).unwrap();
        let steps = generate_odometry(&truth, &sc.odometry, 1);
        let start = truth.samples()[0];
        let integrated = integrate_odometry(start.time, &start.pose, &steps);
        let end = integrated.samples().last().unwrap();
        let end_truth = truth.samples().last().unwrap();
        let heading_err =
            crate::manifold::quat_boxminus(&end.pose.orientation, &end_truth.pose.orientation);
        // beta * s / speed after path length s
        let expected = 0.01 * sc.path_length / sc.speed;
        assert_abs_diff_eq!(heading_err.z, expected, epsilon = 1e-9);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let sc = Scenario { seed: 1234, ..Default::default() };
        let a = generate(&sc).unwrap();
        let b = generate(&sc).unwrap();
        assert_eq!(a.odometry.len(), b.odometry.len());
        for (x, y) in a.odometry.iter().zip(&b.odometry) {
            assert_eq!(x.relative.position, y.relative.position);
            assert_eq!(x.relative.orientation, y.relative.orientation);
        }
        for (x, y) in a.gps.iter().zip(&b.gps) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.satellites, y.satellites);
        }
        for (x, y) in a.mag.iter().zip(&b.mag) {
            assert_eq!(x.field, y.field);
        }
        for (x, y) in a.baro.iter().zip(&b.baro) {
            assert_eq!(x.height, y.height);
        }
    }

    #[test]
    fn gps_exact_when_noise_free() {
        let sc = zero_noise_scenario(ShapeKind::Circle);
        let truth = generate_truth(&sc).unwrap();
        let gps = generate_gps(&truth, &sc.gps, 7).unwrap();
        assert!(!gps.is_empty());
        for m in &gps {
            let idx = truth.samples().iter().position(|s| s.time == m.time).unwrap();
            assert_eq!(m.position, truth.samples()[idx].pose.position);
        }
    }

    #[test]
    fn gps_dropout_one_empties_stream() {
        let sc = Scenario {
            gps: GpsSimConfig { dropout: 1.0, ..Default::default() },
            ..Default::default()
        };
        let truth = generate_truth(&sc).unwrap();
        assert!(generate_gps(&truth, &sc.gps, 5).unwrap().is_empty());
    }

    #[test]
    fn gps_noise_matches_configured_sigma() {
        // statistical check over ~1e4 samples, seeded
        let sc = Scenario {
            shape: ShapeKind::Straight,
            path_length: 10_000.0,
            speed: 10.0,
            sample_rate: 10.0,
            gps: GpsSimConfig {
                rate: 10.0,
                sigma_horizontal: 0.5,
                sigma_vertical: 1.5,
                ..Default::default()
            },
            ..Default::default()
        };
        let truth = generate_truth(&sc).unwrap();
        let gps = generate_gps(&truth, &sc.gps, 99).unwrap();
        assert!(gps.len() >= 10_000);
        let errs: Vec<Vector3<f64>> = gps
            .iter()
            .map(|m| {
                let idx = truth.samples().iter().position(|s| s.time == m.time).unwrap();
                m.position - truth.samples()[idx].pose.position
            })
            .collect();
        let n = errs.len() as f64;
        let std_x = (errs.iter().map(|e| e.x * e.x).sum::<f64>() / n).sqrt();
        let std_z = (errs.iter().map(|e| e.z * e.z).sum::<f64>() / n).sqrt();
        assert!((std_x - 0.5).abs() / 0.5 < 0.05, "std_x {std_x}");
        assert!((std_z - 1.5).abs() / 1.5 < 0.05, "std_z {std_z}");
    }

    #[test]
    fn rate_above_truth_rate_is_rejected() {
        let sc = Scenario::default();
        let truth = generate_truth(&sc).unwrap();
        let bad = GpsSimConfig { rate: 1000.0, ..Default::default() };
        assert!(matches!(
            generate_gps(&truth, &bad, 0),
            Err(SimulateError::RateTooHigh { .. })
        ));
    }

    #[test]
    fn mag_yaw_90_hand_case() {
        // yawed 90 deg with a pure north field: the sensor sees it along +x
        let truth = Trajectory::from_samples([(
            0.0,
            Pose::new(Vector3::zeros(), UnitQuat::from_axis_angle(&Vector3::z(), PI / 2.0)),
        )])
        .unwrap();
        let cfg = MagSimConfig { sigma: 0.0, rate: 1.0, ..Default::default() };
        let mag = generate_mag(&truth, &cfg, 0).unwrap();
        assert_eq!(mag.len(), 1);
        // oracle: explicit rotation-matrix product
        let oracle = truth.samples()[0]
            .pose
            .orientation
            .rotation_matrix()
            .transpose()
            * cfg.world_field;
        assert_abs_diff_eq!((mag[0].field - oracle).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mag[0].field.x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mag[0].field.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_noise_streams_have_zero_residuals_at_truth() {
        // the single most important invariant tying the simulator to the
        // factors: noise-free measurements are consistent with the truth
        for shape in [ShapeKind::Circle, ShapeKind::Straight, ShapeKind::Helix, ShapeKind::FigureEight] {
            let sc = zero_noise_scenario(shape);
            let streams = generate(&sc).unwrap();
            let truth = &streams.truth;

            let pose_at = |t: f64| -> Pose {
                truth.samples().iter().find(|s| s.time == t).unwrap().pose
            };

            for (w, step) in truth.samples().windows(2).zip(&streams.odometry) {
                let r = local_residual(
                    &w[0].pose,
                    &w[1].pose,
                    &LocalMeasurement { relative: step.relative },
                );
                assert!(r.norm() < 1e-12);
            }
            for m in &streams.gps {
                assert!(gps_residual(&pose_at(m.time), m).norm() < 1e-12);
            }
            let reference = MagReference {
                world_field: sc.mag.world_field,
                body_to_sensor: sc.mag.body_to_sensor,
            };
            for m in &streams.mag {
                let r = mag_residual(&pose_at(m.time), m, &reference).unwrap();
                assert!(r.norm() < 1e-12);
            }
            for m in &streams.baro {
                let z = BaroMeasurement { height: m.height, variance: 1.0, time: m.time };
                assert!(baro_residual(&pose_at(m.time), &z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn drift_grows_with_path_length() {
        // with default drift and no global sensors, integrated odometry ATE
        // grows with distance (checked over 10 seeds)
        use crate::evaluation::ate_rmse;
        for seed in 0..10u64 {
            let mut sc = Scenario {
                shape: ShapeKind::Straight,
                path_length: 2000.0,
                speed: 10.0,
                sample_rate: 20.0,
                seed,
                ..Default::default()
            };
            sc.odometry = OdometryDriftConfig::default();
            let truth = generate_truth(&sc).unwrap();
            let steps = generate_odometry(&truth, &sc.odometry, seed);
            let start = truth.samples()[0];
            let dead = integrate_odometry(start.time, &start.pose, &steps);

            let clip = |traj: &Trajectory, t_max: f64| {
                Trajectory::from_samples(
                    traj.samples()
                        .iter()
                        .filter(|s| s.time <= t_max)
                        .map(|s| (s.time, s.pose)),
                )
                .unwrap()
            };
            let short = ate_rmse(&clip(&dead, 50.0), &clip(&truth, 50.0), 0.01).unwrap();
            let long = ate_rmse(&dead, &truth, 0.01).unwrap();
            assert!(
                long > short,
                "seed {seed}: drift did not grow ({short} -> {long})"
            );
        }
    }
}
