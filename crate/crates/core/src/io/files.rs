//! Readers and writers for trajectory and sensor stream files.
//!
//! Trajectory: `t px py pz qw qx qy qz` per line.
//! GPS: header `# frame: lla` with lines `t lat lon alt nsats`, or
//! `# frame: enu` with lines `t x y z nsats`.
//! Magnetometer: `t mx my mz`.
//! Barometer: header `# kind: pressure_pa` or `# kind: height_m` with
//! lines `t value`.
//!
//! Writers go through a temp file plus atomic rename so a failed run never
//! leaves a partial output in place.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::IoError;
use crate::evaluation::Trajectory;
use crate::factors::{GpsMeasurement, MagMeasurement};
use crate::geodesy::GeoPoint;
use crate::manifold::{Pose, UnitQuat};
use crate::simulate::BaroSample;

/// Writes `content` to `path` atomically (temp file + rename).
pub(crate) fn write_atomic(path: &Path, content: &str) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_f64(path: &Path, line_no: usize, field: &str, token: &str) -> Result<f64, IoError> {
    token
        .parse::<f64>()
        .map_err(|_| IoError::format(path, line_no, format!("invalid {field}: {token:?}")))
}

/// Non-comment, non-empty lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// `# key: value` header comments.
fn header_lines(text: &str) -> impl Iterator<Item = (usize, &str, &str)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        let rest = l.strip_prefix('#')?.trim();
        let (key, value) = rest.split_once(':')?;
        Some((i + 1, key.trim(), value.trim()))
    })
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("# trajectory: t px py pz qw qx qy qz\n");
    for s in trajectory.samples() {
        let p = s.pose.position;
        let q = s.pose.orientation;
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {}\n",
            s.time, p.x, p.y, p.z, q.w, q.x, q.y, q.z
        ));
    }
    write_atomic(path, &out)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError::file(path, format!("cannot read: {e}")))?;
    let mut trajectory = Trajectory::new();
    let mut any = false;
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(IoError::format(
                path,
                line_no,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let t = parse_f64(path, line_no, "timestamp", fields[0])?;
        let mut v = [0.0; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = parse_f64(path, line_no, "value", fields[k + 1])?;
        }
        let norm = (v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]).sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(IoError::format(
                path,
                line_no,
                format!("quaternion norm {norm} deviates from 1 by more than 1e-3"),
            ));
        }
        let pose = Pose::new(
            Vector3::new(v[0], v[1], v[2]),
            UnitQuat::new(v[3], v[4], v[5], v[6]),
        );
        trajectory
            .push(t, pose)
            .map_err(|e| IoError::format(path, line_no, e.to_string()))?;
        any = true;
    }
    if !any {
        return Err(IoError::file(path, "no trajectory records"));
    }
    Ok(trajectory)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpsFrame {
    Lla,
    Enu,
}

#[derive(Debug, Clone, Copy)]
pub enum GpsRecord {
    Lla { time: f64, point: GeoPoint, satellites: u32 },
    Enu { time: f64, position: Vector3<f64>, satellites: u32 },
}

impl GpsRecord {
    pub fn time(&self) -> f64 {
        match self {
            GpsRecord::Lla { time, .. } | GpsRecord::Enu { time, .. } => *time,
        }
    }
}

pub fn read_gps(path: &Path) -> Result<(GpsFrame, Vec<GpsRecord>), IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError::file(path, format!("cannot read: {e}")))?;
    let mut frame: Option<GpsFrame> = None;
    for (line_no, key, value) in header_lines(&text) {
        if key == "frame" {
            let parsed = match value {
                "lla" => GpsFrame::Lla,
                "enu" => GpsFrame::Enu,
                other => {
                    return Err(IoError::format(path, line_no, format!("unknown frame {other:?}")))
                }
            };
            if let Some(existing) = frame {
                if existing != parsed {
                    return Err(IoError::format(path, line_no, "conflicting frame headers"));
                }
            }
            frame = Some(parsed);
        }
    }
    let frame = frame
        .ok_or_else(|| IoError::file(path, "missing `# frame: lla|enu` header"))?;

    let mut records = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(IoError::format(
                path,
                line_no,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let t = parse_f64(path, line_no, "timestamp", fields[0])?;
        if t <= last_t {
            return Err(IoError::format(path, line_no, "timestamps not strictly increasing"));
        }
        last_t = t;
        let a = parse_f64(path, line_no, "field", fields[1])?;
        let b = parse_f64(path, line_no, "field", fields[2])?;
        let c = parse_f64(path, line_no, "field", fields[3])?;
        let sats: u32 = fields[4]
            .parse()
            .map_err(|_| IoError::format(path, line_no, format!("invalid satellite count {:?}", fields[4])))?;
        let record = match frame {
            GpsFrame::Lla => GpsRecord::Lla {
                time: t,
                point: GeoPoint::new(a, b, c)
                    .map_err(|e| IoError::format(path, line_no, e.to_string()))?,
                satellites: sats,
            },
            GpsFrame::Enu => GpsRecord::Enu {
                time: t,
                position: Vector3::new(a, b, c),
                satellites: sats,
            },
        };
        records.push(record);
    }
    Ok((frame, records))
}

pub fn write_gps_enu(path: &Path, records: &[GpsMeasurement]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("# frame: enu\n");
    out.push_str("# gps: t x y z nsats\n");
    for r in records {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            r.time,
            r.position.x,
            r.position.y,
            r.position.z,
            r.satellites.unwrap_or(crate::factors::GPS_REFERENCE_SATELLITES)
        ));
    }
    write_atomic(path, &out)
}

#[derive(Debug, Clone, Copy)]
pub struct MagRecord {
    pub time: f64,
    pub field: Vector3<f64>,
}

pub fn read_mag(path: &Path) -> Result<Vec<MagRecord>, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError::file(path, format!("cannot read: {e}")))?;
    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(IoError::format(
                path,
                line_no,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let t = parse_f64(path, line_no, "timestamp", fields[0])?;
        if t <= last_t {
            return Err(IoError::format(path, line_no, "timestamps not strictly increasing"));
        }
        last_t = t;
        out.push(MagRecord {
            time: t,
            field: Vector3::new(
                parse_f64(path, line_no, "mx", fields[1])?,
                parse_f64(path, line_no, "my", fields[2])?,
                parse_f64(path, line_no, "mz", fields[3])?,
            ),
        });
    }
    Ok(out)
}

pub fn write_mag(path: &Path, records: &[MagMeasurement]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("# mag: t mx my mz\n");
    for r in records {
        out.push_str(&format!("{} {} {} {}\n", r.time, r.field.x, r.field.y, r.field.z));
    }
    write_atomic(path, &out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaroKind {
    PressurePa,
    HeightM,
}

#[derive(Debug, Clone, Copy)]
pub struct BaroRecord {
    pub time: f64,
    /// pressure in Pa or height in m, per the file's kind header
    pub value: f64,
}

pub fn read_baro(path: &Path) -> Result<(BaroKind, Vec<BaroRecord>), IoError> {
    let text = fs::read_to_string(path)
        .map_err(|e| IoError::file(path, format!("cannot read: {e}")))?;
    let mut kind: Option<BaroKind> = None;
    for (line_no, key, value) in header_lines(&text) {
        if key == "kind" {
            let parsed = match value {
                "pressure_pa" => BaroKind::PressurePa,
                "height_m" => BaroKind::HeightM,
                other => {
                    return Err(IoError::format(path, line_no, format!("unknown kind {other:?}")))
                }
            };
            if let Some(existing) = kind {
                if existing != parsed {
                    return Err(IoError::format(path, line_no, "conflicting kind headers"));
                }
            }
            kind = Some(parsed);
        }
    }
    let kind = kind
        .ok_or_else(|| IoError::file(path, "missing `# kind: pressure_pa|height_m` header"))?;
    let mut out = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(IoError::format(
                path,
                line_no,
                format!("expected 2 fields, got {}", fields.len()),
            ));
        }
        let t = parse_f64(path, line_no, "timestamp", fields[0])?;
        if t <= last_t {
            return Err(IoError::format(path, line_no, "timestamps not strictly increasing"));
        }
        last_t = t;
        out.push(BaroRecord { time: t, value: parse_f64(path, line_no, "value", fields[1])? });
    }
    Ok((kind, out))
}

pub fn write_baro_heights(path: &Path, records: &[BaroSample]) -> Result<(), IoError> {
    let mut out = String::new();
    out.push_str("# kind: height_m\n");
    out.push_str("# baro: t height_m\n");
    for r in records {
        out.push_str(&format!("{} {}\n", r.time, r.height));
    }
    write_atomic(path, &out)
}
