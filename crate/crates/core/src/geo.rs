//! Geodetic points and the local metric tangent plane used for all filtering.
//!
//! The projection is equirectangular around a fixed reference origin. Over the
//! few-kilometre extents of an intersection scenario its distortion is far
//! below detection noise, and the inverse is exact, so positions survive a
//! round trip through the wire format unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of arc on the mean sphere.
pub const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;

/// Largest reference latitude (absolute, degrees) for which the inverse is defined.
pub const MAX_REFERENCE_LAT: f64 = 89.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("longitude {0} outside [-180, 180)")]
    LongitudeOutOfRange(f64),
    #[error("reference latitude {0} too close to a pole (|lat| must be < 89)")]
    ReferenceTooPolar(f64),
}

/// Latitude/longitude in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let p = GeoPoint { lat, lon };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<(), GeoError> {
        if !(self.lat.is_finite() && (-90.0..=90.0).contains(&self.lat)) {
            return Err(GeoError::LatitudeOutOfRange(self.lat));
        }
        if !(self.lon.is_finite() && (-180.0..180.0).contains(&self.lon)) {
            return Err(GeoError::LongitudeOutOfRange(self.lon));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }
}

/// East/north offsets in meters from a [`ReferenceOrigin`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnuPoint {
    pub east: f64,
    pub north: f64,
}

impl EnuPoint {
    pub const ORIGIN: EnuPoint = EnuPoint {
        east: 0.0,
        north: 0.0,
    };

    pub fn new(east: f64, north: f64) -> Self {
        EnuPoint { east, north }
    }

    pub fn distance(&self, other: &EnuPoint) -> f64 {
        enu_distance(self, other)
    }
}

/// Anchor of the tangent plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferenceOrigin {
    pub origin: GeoPoint,
}

impl ReferenceOrigin {
    pub fn new(origin: GeoPoint) -> Result<Self, GeoError> {
        origin.check()?;
        Ok(ReferenceOrigin { origin })
    }

    fn east_scale(&self) -> f64 {
        METERS_PER_DEGREE * self.origin.lat.to_radians().cos()
    }
}

pub fn geo_to_enu(p: &GeoPoint, reference: &ReferenceOrigin) -> EnuPoint {
    let r = &reference.origin;
    EnuPoint {
        east: (p.lon - r.lon) * reference.east_scale(),
        north: (p.lat - r.lat) * METERS_PER_DEGREE,
    }
}

pub fn enu_to_geo(p: &EnuPoint, reference: &ReferenceOrigin) -> Result<GeoPoint, GeoError> {
    let r = &reference.origin;
    if r.lat.abs() >= MAX_REFERENCE_LAT {
        return Err(GeoError::ReferenceTooPolar(r.lat));
    }
    Ok(GeoPoint {
        lat: r.lat + p.north / METERS_PER_DEGREE,
        lon: r.lon + p.east / reference.east_scale(),
    })
}

/// Euclidean distance in the tangent plane.
pub fn enu_distance(a: &EnuPoint, b: &EnuPoint) -> f64 {
    (a.east - b.east).hypot(a.north - b.north)
}
