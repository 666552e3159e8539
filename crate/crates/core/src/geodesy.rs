//! Conversions from raw global-sensor quantities (geodetic coordinates,
//! air pressure) into the Cartesian world frame used by the pose graph.
//!
//! Positions use the WGS-84 ellipsoid; the world frame is local East-North-Up
//! anchored at a caller-chosen origin (in practice the first GPS fix).
//! Altitude is treated as ellipsoidal height; geoid corrections are out of
//! scope. The barometric model is linear with a configurable slope.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// WGS-84 semi-major axis, meters.
pub const WGS84_A: f64 = 6378137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257223563;
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);

/// Default barometric slope: meters of height per pascal of pressure drop
/// (standard atmosphere near sea level, ~8.32 m per hPa).
pub const DEFAULT_METERS_PER_PASCAL: f64 = 1.0 / 12.013;

#[derive(Debug, Error)]
pub enum GeodesyError {
    #[error("latitude {0} deg outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} deg outside [-180, 180]")]
    LongitudeOutOfRange(f64),
    #[error("pressure must be positive, got {0} Pa")]
    NonPositivePressure(f64),
}

/// Geodetic coordinates on the WGS-84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    /// degrees, [-90, 90]
    pub latitude: f64,
    /// degrees, [-180, 180]
    pub longitude: f64,
    /// meters above the ellipsoid
    pub altitude: f64,
}

impl GeoPoint {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeodesyError> {
        if !(-90.0..=90.0).contains(&latitude) || !latitude.is_finite() {
            return Err(GeodesyError::LatitudeOutOfRange(latitude));
        }
        if !(-180.0..=180.0).contains(&longitude) || !longitude.is_finite() {
            return Err(GeodesyError::LongitudeOutOfRange(longitude));
        }
        Ok(GeoPoint { latitude, longitude, altitude })
    }
}

/// Geodetic to Earth-Centred-Earth-Fixed under WGS-84.
pub fn lla_to_ecef(p: &GeoPoint) -> Vector3<f64> {
    let lat = p.latitude.to_radians();
    let lon = p.longitude.to_radians();
    let sin_lat = lat.sin();
    let cos_lat = lat.cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Vector3::new(
        (n + p.altitude) * cos_lat * lon.cos(),
        (n + p.altitude) * cos_lat * lon.sin(),
        (n * (1.0 - WGS84_E2) + p.altitude) * sin_lat,
    )
}

/// ENU anchor: caches the origin's ECEF position and the ECEF-to-ENU rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnuOrigin {
    origin: GeoPoint,
    origin_ecef: Vector3<f64>,
    ecef_to_enu: Matrix3<f64>,
}

impl EnuOrigin {
    pub fn new(origin: GeoPoint) -> Self {
        let lat = origin.latitude.to_radians();
        let lon = origin.longitude.to_radians();
        let (sin_lat, cos_lat) = (lat.sin(), lat.cos());
        let (sin_lon, cos_lon) = (lon.sin(), lon.cos());
        let ecef_to_enu = Matrix3::new(
            -sin_lon,
            cos_lon,
            0.0,
            -sin_lat * cos_lon,
            -sin_lat * sin_lon,
            cos_lat,
            cos_lat * cos_lon,
            cos_lat * sin_lon,
            sin_lat,
        );
        EnuOrigin { origin, origin_ecef: lla_to_ecef(&origin), ecef_to_enu }
    }

    pub fn origin(&self) -> &GeoPoint {
        &self.origin
    }

    pub fn ecef_to_enu(&self, ecef: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu * (ecef - self.origin_ecef)
    }

    pub fn enu_to_ecef(&self, enu: &Vector3<f64>) -> Vector3<f64> {
        self.ecef_to_enu.transpose() * enu + self.origin_ecef
    }
}

/// Geodetic to local East-North-Up about `origin`.
pub fn lla_to_enu(p: &GeoPoint, origin: &EnuOrigin) -> Vector3<f64> {
    origin.ecef_to_enu(&lla_to_ecef(p))
}

/// Linear barometric height: `(reference_pressure - pressure) * meters_per_pascal`,
/// relative to the height of the reference pressure.
pub fn pressure_to_height(
    pressure: f64,
    reference_pressure: f64,
    meters_per_pascal: f64,
) -> Result<f64, GeodesyError> {
    if !(pressure > 0.0) {
        return Err(GeodesyError::NonPositivePressure(pressure));
    }
    if !(reference_pressure > 0.0) {
        return Err(GeodesyError::NonPositivePressure(reference_pressure));
    }
    Ok((reference_pressure - pressure) * meters_per_pascal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn ecef_at_equator_prime_meridian() {
        let p = GeoPoint::new(0.0, 0.0, 0.0).unwrap();
        let e = lla_to_ecef(&p);
        assert_abs_diff_eq!(e.x, WGS84_A, epsilon = 1e-9);
        assert_abs_diff_eq!(e.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.z, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn ecef_at_north_pole() {
        let p = GeoPoint::new(90.0, 0.0, 0.0).unwrap();
        let e = lla_to_ecef(&p);
        let b = WGS84_A * (1.0 - WGS84_F);
        assert_abs_diff_eq!(e.x, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(e.y, 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(e.z, b, epsilon = 1e-6);
        assert_abs_diff_eq!(b, 6356752.314245179, epsilon = 1e-6);
    }

    #[test]
    fn ecef_pinned_value() {
        // pinned from an independent evaluation of the closed-form conversion
        let p = GeoPoint::new(22.3, 114.2, 10.0).unwrap();
        let e = lla_to_ecef(&p);
        assert_abs_diff_eq!(e.x, -2420173.171084933, epsilon = 1e-6);
        assert_abs_diff_eq!(e.y, 5385129.528535248, epsilon = 1e-6);
        assert_abs_diff_eq!(e.z, 2405184.731301442, epsilon = 1e-6);
    }

    #[test]
    fn geopoint_range_validation() {
        assert!(matches!(
            GeoPoint::new(90.5, 0.0, 0.0),
            Err(GeodesyError::LatitudeOutOfRange(_))
        ));
        assert!(matches!(
            GeoPoint::new(0.0, -180.5, 0.0),
            Err(GeodesyError::LongitudeOutOfRange(_))
        ));
    }

    #[test]
    fn enu_of_origin_is_zero() {
        let origin = EnuOrigin::new(GeoPoint::new(22.3, 114.2, 10.0).unwrap());
        let v = lla_to_enu(origin.origin(), &origin);
        assert_abs_diff_eq!(v.norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn enu_meridian_arc_pinned() {
        // pinned from an independent geodesy oracle: 1e-5 deg along the
        // meridian at the equator is 1.1057427582159383 m of North
        let origin = EnuOrigin::new(GeoPoint::new(0.0, 0.0, 0.0).unwrap());
        let p = GeoPoint::new(1e-5, 0.0, 0.0).unwrap();
        let v = lla_to_enu(&p, &origin);
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.y, 1.1057427582159383, epsilon = 1e-3);
        assert_abs_diff_eq!(v.z, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn enu_pure_altitude_is_up() {
        let origin = EnuOrigin::new(GeoPoint::new(0.0, 0.0, 0.0).unwrap());
        let p = GeoPoint::new(0.0, 0.0, 5.0).unwrap();
        let v = lla_to_enu(&p, &origin);
        assert_abs_diff_eq!(v.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v.z, 5.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let origin = EnuOrigin::new(GeoPoint::new(47.3, 8.55, 430.0).unwrap());
        let r = origin.ecef_to_enu;
        let err = (r.transpose() * r - Matrix3::identity()).norm();
        assert!(err < 1e-12, "R^T R - I norm {err}");
    }

    #[test]
    fn pressure_examples() {
        let k = DEFAULT_METERS_PER_PASCAL;
        assert_eq!(pressure_to_height(101325.0, 101325.0, k).unwrap(), 0.0);
        // pinned: 100 Pa drop under the default slope
        assert_abs_diff_eq!(
            pressure_to_height(101225.0, 101325.0, k).unwrap(),
            8.324315325064513,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            pressure_to_height(101425.0, 101325.0, k).unwrap(),
            -8.324315325064513,
            epsilon = 1e-12
        );
    }

    #[test]
    fn pressure_rejects_non_positive() {
        assert!(pressure_to_height(0.0, 101325.0, DEFAULT_METERS_PER_PASCAL).is_err());
        assert!(pressure_to_height(-5.0, 101325.0, DEFAULT_METERS_PER_PASCAL).is_err());
        assert!(pressure_to_height(101325.0, 0.0, DEFAULT_METERS_PER_PASCAL).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn enu_ecef_roundtrip(
            lat in -80.0f64..80.0, lon in -179.0f64..179.0, alt in -100.0f64..5000.0,
            e in -10_000.0f64..10_000.0, n in -10_000.0f64..10_000.0, u in -2_000.0f64..2_000.0,
        ) {
            let origin = EnuOrigin::new(GeoPoint::new(lat, lon, alt).unwrap());
            let v = Vector3::new(e, n, u);
            let back = origin.ecef_to_enu(&origin.enu_to_ecef(&v));
            prop_assert!((back - v).norm() < 1e-9);
        }

        #[test]
        fn enu_locally_isometric(
            lat in -60.0f64..60.0, lon in -170.0f64..170.0,
            de1 in -100.0f64..100.0, dn1 in -100.0f64..100.0,
            de2 in -100.0f64..100.0, dn2 in -100.0f64..100.0,
        ) {
            // independent small-displacement oracle: meridian/normal curvature radii
            let origin = EnuOrigin::new(GeoPoint::new(lat, lon, 0.0).unwrap());
            let phi = lat.to_radians();
            let w2 = 1.0 - WGS84_E2 * phi.sin() * phi.sin();
            let m = WGS84_A * (1.0 - WGS84_E2) / w2.powf(1.5);
            let n_rad = WGS84_A / w2.sqrt();
            let to_point = |de: f64, dn: f64| {
                GeoPoint::new(
                    lat + (dn / m).to_degrees(),
                    lon + (de / (n_rad * phi.cos())).to_degrees(),
                    0.0,
                ).unwrap()
            };
            let p1 = to_point(de1, dn1);
            let p2 = to_point(de2, dn2);
            let enu_dist = (lla_to_enu(&p1, &origin) - lla_to_enu(&p2, &origin)).norm();
            let oracle = ((de1 - de2).powi(2) + (dn1 - dn2).powi(2)).sqrt();
            prop_assume!(oracle > 1.0);
            prop_assert!((enu_dist - oracle).abs() / oracle < 1e-3);
        }

        #[test]
        fn pressure_is_affine(
            p1 in 50_000.0f64..110_000.0,
            p2 in 50_000.0f64..110_000.0,
            p3 in 50_000.0f64..110_000.0,
        ) {
            let k = DEFAULT_METERS_PER_PASCAL;
            // difference of heights depends only on pressure difference
            let a = pressure_to_height(p1, p3, k).unwrap() - pressure_to_height(p2, p3, k).unwrap();
            let b = (p2 - p1) * k;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
