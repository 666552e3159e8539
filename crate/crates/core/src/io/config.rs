//! Flat key-value configuration files (`key = value`, `#` comments).
//!
//! Two kinds: the fuse run configuration and the simulation scenario.
//! Unknown keys are rejected so typos fail fast; every key is documented
//! in the README.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::IoError;
use crate::factors::{LocalNoiseParams, MagReference, RobustLoss};
use crate::geodesy::DEFAULT_METERS_PER_PASCAL;
use crate::graph::GraphConfig;
use crate::manifold::UnitQuat;
use crate::simulate::{
    BaroSimConfig, GpsSimConfig, MagSimConfig, OdometryDriftConfig, Scenario, ShapeKind,
};
use crate::solver::SolverOptions;

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, IoError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| IoError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(IoError::Config(format!("line {}: duplicate key {key:?}", i + 1)));
        }
    }
    Ok(map)
}

struct Keys {
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<Vec<String>>,
}

impl Keys {
    fn new(map: BTreeMap<String, String>) -> Self {
        Keys { map, used: std::cell::RefCell::new(Vec::new()) }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().push(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    fn f64(&self, key: &str, default: f64) -> Result<f64, IoError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| IoError::Config(format!("{key}: invalid number {v:?}"))),
        }
    }

    fn u64(&self, key: &str, default: u64) -> Result<u64, IoError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| IoError::Config(format!("{key}: invalid integer {v:?}"))),
        }
    }

    fn bool(&self, key: &str, default: bool) -> Result<bool, IoError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(IoError::Config(format!("{key}: expected true|false, got {v:?}"))),
        }
    }

    fn vector3(&self, key: &str, default: Vector3<f64>) -> Result<Vector3<f64>, IoError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let parts: Vec<f64> = v
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| IoError::Config(format!("{key}: expected 3 numbers, got {v:?}")))?;
                if parts.len() != 3 {
                    return Err(IoError::Config(format!("{key}: expected 3 numbers, got {v:?}")));
                }
                Ok(Vector3::new(parts[0], parts[1], parts[2]))
            }
        }
    }

    fn quat(&self, key: &str, default: UnitQuat) -> Result<UnitQuat, IoError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => {
                let parts: Vec<f64> = v
                    .split_whitespace()
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| IoError::Config(format!("{key}: expected `qw qx qy qz`, got {v:?}")))?;
                if parts.len() != 4 {
                    return Err(IoError::Config(format!("{key}: expected 4 numbers, got {v:?}")));
                }
                let norm =
                    (parts[0].powi(2) + parts[1].powi(2) + parts[2].powi(2) + parts[3].powi(2)).sqrt();
                if (norm - 1.0).abs() > 1e-3 {
                    return Err(IoError::Config(format!("{key}: quaternion norm {norm} is not 1")));
                }
                Ok(UnitQuat::new(parts[0], parts[1], parts[2], parts[3]))
            }
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    fn reject_unknown(&self) -> Result<(), IoError> {
        let used = self.used.borrow();
        for key in self.map.keys() {
            if !used.iter().any(|u| u == key) {
                return Err(IoError::Config(format!("unknown key {key:?}")));
            }
        }
        Ok(())
    }
}

fn positive(value: f64, key: &str) -> Result<f64, IoError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(IoError::Config(format!("{key} must be positive, got {value}")))
    }
}

fn non_negative(value: f64, key: &str) -> Result<f64, IoError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(IoError::Config(format!("{key} must be nonnegative, got {value}")))
    }
}

/// Configuration of a fuse run: input files, sensor switches, covariance
/// policy parameters, solver options, and pipeline timing.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub odometry_path: PathBuf,
    pub gps_path: Option<PathBuf>,
    pub mag_path: Option<PathBuf>,
    pub baro_path: Option<PathBuf>,
    pub enable_gps: bool,
    pub enable_mag: bool,
    pub enable_baro: bool,
    pub graph: GraphConfig,
    pub solver: SolverOptions,
    /// data-time seconds between optimization cycles
    pub optimize_period: f64,
    /// slope for pressure-mode barometer files, m/Pa
    pub baro_meters_per_pascal: f64,
    /// original text, hashed into the run log
    pub source_text: String,
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, IoError> {
        let keys = Keys::new(parse_pairs(text)?);

        let odometry_path = keys
            .path("odometry")
            .ok_or_else(|| IoError::Config("missing required key `odometry`".into()))?;
        let gps_path = keys.path("gps");
        let mag_path = keys.path("mag");
        let baro_path = keys.path("baro");

        let enable_gps = keys.bool("enable_gps", gps_path.is_some())?;
        let enable_mag = keys.bool("enable_mag", mag_path.is_some())?;
        let enable_baro = keys.bool("enable_baro", baro_path.is_some())?;

        let keyframe_interval = positive(keys.f64("keyframe_interval", 0.1)?, "keyframe_interval")?;
        let window_capacity = keys.u64("window_capacity", 100_000)? as usize;
        if window_capacity < 2 {
            return Err(IoError::Config("window_capacity must be at least 2".into()));
        }
        let association_tolerance =
            positive(keys.f64("association_tolerance", 0.05)?, "association_tolerance")?;

        let local_noise = LocalNoiseParams {
            sigma_translation_base: positive(
                keys.f64("local_sigma_translation_base", 0.01)?,
                "local_sigma_translation_base",
            )?,
            sigma_translation_rate: non_negative(
                keys.f64("local_sigma_translation_rate", 0.01)?,
                "local_sigma_translation_rate",
            )?,
            sigma_rotation_base: positive(
                keys.f64("local_sigma_rotation_base", 0.001)?,
                "local_sigma_rotation_base",
            )?,
            sigma_rotation_rate: non_negative(
                keys.f64("local_sigma_rotation_rate", 0.01)?,
                "local_sigma_rotation_rate",
            )?,
        };

        let gps_base_sigma = positive(keys.f64("gps_base_sigma", 1.0)?, "gps_base_sigma")?;
        let gps_loss = if keys.bool("gps_huber", true)? {
            RobustLoss::Huber {
                delta: positive(keys.f64("gps_huber_delta", 1.0)?, "gps_huber_delta")?,
            }
        } else {
            keys.f64("gps_huber_delta", 1.0)?; // accepted but unused when disabled
            RobustLoss::None
        };

        let mag_base_sigma = positive(keys.f64("mag_base_sigma", 0.05)?, "mag_base_sigma")?;
        let mag_world_field = keys.vector3("mag_world_field", Vector3::new(0.0, 1.0, 0.0))?;
        if mag_world_field.norm() <= 0.0 {
            return Err(IoError::Config("mag_world_field must be nonzero".into()));
        }
        let mag_extrinsic = keys.quat("mag_extrinsic", UnitQuat::identity())?;

        let baro_default_variance =
            positive(keys.f64("baro_default_variance", 1.0)?, "baro_default_variance")?;
        let baro_window = keys.u64("baro_window", 10)? as usize;
        let baro_meters_per_pascal = positive(
            keys.f64("baro_meters_per_pascal", DEFAULT_METERS_PER_PASCAL)?,
            "baro_meters_per_pascal",
        )?;

        let solver = SolverOptions {
            max_iterations: keys.u64("max_iterations", 50)? as usize,
            cost_decrease_tolerance: positive(
                keys.f64("cost_decrease_tolerance", 1e-8)?,
                "cost_decrease_tolerance",
            )?,
            gradient_tolerance: positive(keys.f64("gradient_tolerance", 1e-8)?, "gradient_tolerance")?,
            initial_damping: positive(keys.f64("initial_damping", 1e-4)?, "initial_damping")?,
            ..SolverOptions::default()
        };

        let optimize_period = positive(keys.f64("optimize_period", 1.0)?, "optimize_period")?;

        keys.reject_unknown()?;

        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        Ok(RunConfig {
            odometry_path: resolve(odometry_path),
            gps_path: gps_path.map(resolve),
            mag_path: mag_path.map(resolve),
            baro_path: baro_path.map(resolve),
            enable_gps,
            enable_mag,
            enable_baro,
            graph: GraphConfig {
                keyframe_interval,
                window_capacity,
                association_tolerance,
                local_noise,
                gps_base_sigma,
                gps_loss,
                mag_base_sigma,
                mag_reference: MagReference {
                    world_field: mag_world_field,
                    body_to_sensor: mag_extrinsic,
                },
                baro_default_variance,
                baro_window,
            },
            solver,
            optimize_period,
            baro_meters_per_pascal,
            source_text: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IoError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }
}

/// Scenario configuration for the simulate command.
#[derive(Debug, Clone)]
pub struct ScenarioConfig;

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Scenario, IoError> {
        let keys = Keys::new(parse_pairs(text)?);

        let shape = match keys.raw("shape").unwrap_or("circle") {
            "circle" => ShapeKind::Circle,
            "eight" | "figure-eight" => ShapeKind::FigureEight,
            "straight" => ShapeKind::Straight,
            "helix" => ShapeKind::Helix,
            "waypoints" => {
                let raw = keys
                    .raw("waypoints")
                    .ok_or_else(|| IoError::Config("waypoints shape needs `waypoints` key".into()))?;
                let mut points = Vec::new();
                for part in raw.split(';') {
                    let coords: Vec<f64> = part
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| IoError::Config(format!("waypoints: bad point {part:?}")))?;
                    if coords.len() != 3 {
                        return Err(IoError::Config(format!("waypoints: bad point {part:?}")));
                    }
                    points.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                ShapeKind::Waypoints(points)
            }
            other => return Err(IoError::Config(format!("unknown shape {other:?}"))),
        };
        if !matches!(shape, ShapeKind::Waypoints(_)) {
            keys.raw("waypoints"); // tolerated but ignored for analytic shapes
        }

        let scenario = Scenario {
            shape,
            path_length: positive(keys.f64("path_length", 1000.0)?, "path_length")?,
            speed: positive(keys.f64("speed", 10.0)?, "speed")?,
            sample_rate: positive(keys.f64("sample_rate", 100.0)?, "sample_rate")?,
            radius: match keys.raw("radius") {
                None => None,
                Some(v) => Some(positive(
                    v.parse()
                        .map_err(|_| IoError::Config(format!("radius: invalid number {v:?}")))?,
                    "radius",
                )?),
            },
            climb_rate: keys.f64("climb_rate", 0.05)?,
            odometry: OdometryDriftConfig {
                sigma_translation: non_negative(
                    keys.f64("odom_sigma_translation", 0.001)?,
                    "odom_sigma_translation",
                )?,
                sigma_yaw: non_negative(keys.f64("odom_sigma_yaw", 0.002)?, "odom_sigma_yaw")?,
                sigma_attitude: non_negative(
                    keys.f64("odom_sigma_attitude", 0.0)?,
                    "odom_sigma_attitude",
                )?,
                yaw_rate_bias: keys.f64("odom_yaw_rate_bias", 0.0)?,
            },
            gps: GpsSimConfig {
                rate: positive(keys.f64("gps_rate", 1.0)?, "gps_rate")?,
                sigma_horizontal: non_negative(
                    keys.f64("gps_sigma_horizontal", 0.5)?,
                    "gps_sigma_horizontal",
                )?,
                sigma_vertical: non_negative(
                    keys.f64("gps_sigma_vertical", 1.0)?,
                    "gps_sigma_vertical",
                )?,
                dropout: non_negative(keys.f64("gps_dropout", 0.0)?, "gps_dropout")?,
                satellites_min: keys.u64("gps_satellites_min", 10)? as u32,
                satellites_max: keys.u64("gps_satellites_max", 10)? as u32,
                outlier_fraction: non_negative(
                    keys.f64("gps_outlier_fraction", 0.0)?,
                    "gps_outlier_fraction",
                )?,
                outlier_magnitude: non_negative(
                    keys.f64("gps_outlier_magnitude", 0.0)?,
                    "gps_outlier_magnitude",
                )?,
                random_walk_sigma: non_negative(
                    keys.f64("gps_random_walk_sigma", 0.0)?,
                    "gps_random_walk_sigma",
                )?,
            },
            mag: MagSimConfig {
                rate: positive(keys.f64("mag_rate", 10.0)?, "mag_rate")?,
                sigma: non_negative(keys.f64("mag_sigma", 0.02)?, "mag_sigma")?,
                world_field: keys.vector3("mag_world_field", Vector3::new(0.0, 1.0, 0.0))?,
                body_to_sensor: keys.quat("mag_extrinsic", UnitQuat::identity())?,
            },
            baro: BaroSimConfig {
                rate: positive(keys.f64("baro_rate", 10.0)?, "baro_rate")?,
                sigma: non_negative(keys.f64("baro_sigma", 0.3)?, "baro_sigma")?,
            },
            seed: keys.u64("seed", 0)?,
        };
        keys.reject_unknown()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario, IoError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IoError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Options of the evaluate command.
#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub association_tolerance: f64,
    pub rpe_lengths: Vec<f64>,
    /// align with rotation+translation+scale instead of rigid-only
    pub similarity: bool,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            association_tolerance: crate::evaluation::DEFAULT_ASSOCIATION_TOLERANCE,
            rpe_lengths: crate::evaluation::DEFAULT_RPE_LENGTHS.to_vec(),
            similarity: false,
        }
    }
}
