//! Spherical azimuthal equidistant projection.
//!
//! Distances and bearings from the projection centre are exact on the
//! sphere; distortion grows with the square of the distance from the centre,
//! which stays well below tower spacing at country scale.

use super::EARTH_RADIUS_M;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthalEquidistant {
    lon0: f64,
    sin_lat0: f64,
    cos_lat0: f64,
}

impl AzimuthalEquidistant {
    /// Projection centred at `(lon0, lat0)` in degrees.
    pub fn new(lon0: f64, lat0: f64) -> Self {
        let phi0 = lat0.to_radians();
        Self {
            lon0: lon0.to_radians(),
            sin_lat0: phi0.sin(),
            cos_lat0: phi0.cos(),
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.lon0.to_degrees(),
            self.sin_lat0.atan2(self.cos_lat0).to_degrees(),
        )
    }

    /// lon/lat degrees to planar meters.
    pub fn forward(&self, lon: f64, lat: f64) -> [f64; 2] {
        let phi = lat.to_radians();
        let dl = lon.to_radians() - self.lon0;
        let (sin_phi, cos_phi) = phi.sin_cos();
        let cos_dl = dl.cos();
        let cos_c = (self.sin_lat0 * sin_phi + self.cos_lat0 * cos_phi * cos_dl).clamp(-1.0, 1.0);
        let c = cos_c.acos();
        let k = if c < 1e-12 { 1.0 } else { c / c.sin() };
        [
            EARTH_RADIUS_M * k * cos_phi * dl.sin(),
            EARTH_RADIUS_M * k * (self.cos_lat0 * sin_phi - self.sin_lat0 * cos_phi * cos_dl),
        ]
    }

    /// Planar meters back to lon/lat degrees.
    pub fn inverse(&self, p: [f64; 2]) -> (f64, f64) {
        let [x, y] = p;
        let rho = x.hypot(y);
        if rho < 1e-9 {
            return self.center();
        }
        let c = rho / EARTH_RADIUS_M;
        let (sin_c, cos_c) = c.sin_cos();
        let phi = (cos_c * self.sin_lat0 + y * sin_c * self.cos_lat0 / rho)
            .clamp(-1.0, 1.0)
            .asin();
        let lam = self.lon0
            + (x * sin_c).atan2(rho * self.cos_lat0 * cos_c - y * self.sin_lat0 * sin_c);
        let mut lon = lam.to_degrees();
        if lon > 180.0 {
            lon -= 360.0;
        } else if lon < -180.0 {
            lon += 360.0;
        }
        (lon, phi.to_degrees())
    }
}
