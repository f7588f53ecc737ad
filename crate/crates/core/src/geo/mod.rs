//! Tower registry, great-circle distances, radius neighbourhoods and
//! Voronoi tessellation.

mod polygon;
mod projection;
mod voronoi;

use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};

pub use polygon::{area as ring_area, contains as ring_contains, Point};
pub use projection::AzimuthalEquidistant;
pub use voronoi::{voronoi, Tessellation, VoronoiCell};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Buffer applied around the tower hull when no boundary is supplied.
pub const DEFAULT_BOUNDARY_BUFFER_M: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CellTower {
    pub tower_id: String,
    pub lon: f64,
    pub lat: f64,
}

impl CellTower {
    pub fn new(tower_id: impl Into<String>, lon: f64, lat: f64) -> Self {
        Self {
            tower_id: tower_id.into(),
            lon,
            lat,
        }
    }
}

fn check_coord(lon: f64, lat: f64) -> Result<()> {
    if lon.is_finite() && lat.is_finite() && (-180.0..=180.0).contains(&lon) && (-90.0..=90.0).contains(&lat) {
        Ok(())
    } else {
        Err(Error::CoordinateOutOfRange { lon, lat })
    }
}

#[inline]
fn haversine_rad(lat1: f64, lon1: f64, cos1: f64, lat2: f64, lon2: f64, cos2: f64) -> f64 {
    let s_lat = ((lat2 - lat1) * 0.5).sin();
    let s_lon = ((lon2 - lon1) * 0.5).sin();
    let h = s_lat * s_lat + cos1 * cos2 * s_lon * s_lon;
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Great-circle distance in meters between two `(lon, lat)` points in degrees.
pub fn haversine_distance(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    check_coord(a.0, a.1)?;
    check_coord(b.0, b.1)?;
    let (la1, la2) = (a.1.to_radians(), b.1.to_radians());
    Ok(haversine_rad(
        la1,
        a.0.to_radians(),
        la1.cos(),
        la2,
        b.0.to_radians(),
        la2.cos(),
    ))
}

/// Clipping region for the tessellation, kept both in lon/lat and in the
/// network's planar projection.
#[derive(Debug, Clone)]
pub struct Boundary {
    pub lonlat: Vec<(f64, f64)>,
    pub planar: Vec<Point>,
}

impl Boundary {
    pub fn area_m2(&self) -> f64 {
        polygon::area(&self.planar)
    }
}

/// Immutable, validated tower registry. Towers are stored in ascending
/// `tower_id` order and addressed by their position in that order.
#[derive(Debug, Clone)]
pub struct TowerNetwork {
    towers: Vec<CellTower>,
    index: HashMap<String, usize>,
    // (lat rad, lon rad, cos lat)
    radians: Vec<(f64, f64, f64)>,
    by_lat: Vec<usize>,
    projection: AzimuthalEquidistant,
    planar: Vec<Point>,
    boundary: Boundary,
}

impl TowerNetwork {
    /// Validates and indexes `towers`. Without a `boundary` the convex hull of
    /// the towers buffered by 10 km is used.
    pub fn build(mut towers: Vec<CellTower>, boundary: Option<Vec<(f64, f64)>>) -> Result<Self> {
        if towers.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        for t in &towers {
            check_coord(t.lon, t.lat)?;
        }
        towers.sort_by(|a, b| a.tower_id.cmp(&b.tower_id));
        if let Some(w) = towers.windows(2).find(|w| w[0].tower_id == w[1].tower_id) {
            return Err(Error::DuplicateTower(w[0].tower_id.clone()));
        }
        let index = towers
            .iter()
            .enumerate()
            .map(|(i, t)| (t.tower_id.clone(), i))
            .collect();
        let radians: Vec<_> = towers
            .iter()
            .map(|t| {
                let lat = t.lat.to_radians();
                (lat, t.lon.to_radians(), lat.cos())
            })
            .collect();
        let mut by_lat: Vec<usize> = (0..towers.len()).collect();
        by_lat.sort_by(|&a, &b| towers[a].lat.total_cmp(&towers[b].lat).then(a.cmp(&b)));

        let n = towers.len() as f64;
        let lon0 = towers.iter().map(|t| t.lon).sum::<f64>() / n;
        let lat0 = towers.iter().map(|t| t.lat).sum::<f64>() / n;
        let projection = AzimuthalEquidistant::new(lon0, lat0);
        let planar: Vec<Point> = towers.iter().map(|t| projection.forward(t.lon, t.lat)).collect();

        let boundary = match boundary {
            Some(ring) => {
                let mut ring = ring;
                if ring.len() > 1 && ring.first() == ring.last() {
                    ring.pop();
                }
                if ring.len() < 3 {
                    return Err(Error::InvalidBoundary("fewer than 3 vertices".into()));
                }
                for &(lon, lat) in &ring {
                    check_coord(lon, lat)?;
                }
                let mut planar_ring: Vec<Point> =
                    ring.iter().map(|&(lon, lat)| projection.forward(lon, lat)).collect();
                let signed = polygon::signed_area(&planar_ring);
                if signed.abs() <= 0.0 {
                    return Err(Error::InvalidBoundary("zero area".into()));
                }
                if signed < 0.0 {
                    planar_ring.reverse();
                    ring.reverse();
                }
                for (t, &p) in towers.iter().zip(&planar) {
                    if !polygon::contains(&planar_ring, p) {
                        return Err(Error::TowerOutsideBoundary(t.tower_id.clone()));
                    }
                }
                Boundary {
                    lonlat: ring,
                    planar: planar_ring,
                }
            }
            None => {
                let hull = polygon::convex_hull(&planar);
                let ring = polygon::buffer_convex(&hull, DEFAULT_BOUNDARY_BUFFER_M, 2f64.to_radians());
                Boundary {
                    lonlat: ring.iter().map(|&p| projection.inverse(p)).collect(),
                    planar: ring,
                }
            }
        };

        Ok(Self {
            towers,
            index,
            radians,
            by_lat,
            projection,
            planar,
            boundary,
        })
    }

    pub fn len(&self) -> usize {
        self.towers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.towers.is_empty()
    }

    pub fn towers(&self) -> &[CellTower] {
        &self.towers
    }

    pub fn tower(&self, idx: usize) -> &CellTower {
        &self.towers[idx]
    }

    pub fn index_of(&self, tower_id: &str) -> Option<usize> {
        self.index.get(tower_id).copied()
    }

    pub fn require(&self, tower_id: &str) -> Result<usize> {
        self.index_of(tower_id)
            .ok_or_else(|| Error::UnknownTower(tower_id.to_string()))
    }

    pub fn projection(&self) -> &AzimuthalEquidistant {
        &self.projection
    }

    /// Tower positions in the planar projection, in tower order.
    pub fn planar(&self) -> &[Point] {
        &self.planar
    }

    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }

    /// Haversine distance between two towers by index.
    #[inline]
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (la1, lo1, c1) = self.radians[a];
        let (la2, lo2, c2) = self.radians[b];
        haversine_rad(la1, lo1, c1, la2, lo2, c2)
    }

    /// Indices of all towers within `radius` meters (inclusive) of tower
    /// `idx`, ascending. Always contains `idx`.
    pub fn neighbors_within_idx(&self, idx: usize, radius: f64) -> Vec<usize> {
        let lat = self.towers[idx].lat;
        let dlat = (radius / EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9) + 1e-9;
        let lo = self.by_lat.partition_point(|&j| self.towers[j].lat < lat - dlat);
        let hi = self.by_lat.partition_point(|&j| self.towers[j].lat <= lat + dlat);
        let mut out: Vec<usize> = self.by_lat[lo..hi]
            .iter()
            .copied()
            .filter(|&j| j == idx || self.distance(idx, j) <= radius)
            .collect();
        out.sort_unstable();
        out
    }

    /// Tower ids within `radius` meters of `tower_id`, inclusive, ascending.
    pub fn neighbors_within(&self, tower_id: &str, radius: f64) -> Result<Vec<&str>> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidParameter(format!("radius must be >= 0, got {radius}")));
        }
        let idx = self.require(tower_id)?;
        Ok(self
            .neighbors_within_idx(idx, radius)
            .into_iter()
            .map(|j| self.towers[j].tower_id.as_str())
            .collect())
    }
}

/// Reads a tower CSV with header `tower_id,lon,lat`.
pub fn read_towers_csv<R: Read>(reader: R) -> Result<Vec<CellTower>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["tower_id", "lon", "lat"] {
        return Err(Error::Schema {
            source_name: "tower file".into(),
            msg: format!("expected header `tower_id,lon,lat`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: String| Error::Parse { line, msg };
        if rec.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", rec.len())));
        }
        let lon: f64 = rec[1].parse().map_err(|_| bad(format!("invalid lon `{}`", &rec[1])))?;
        let lat: f64 = rec[2].parse().map_err(|_| bad(format!("invalid lat `{}`", &rec[2])))?;
        out.push(CellTower::new(&rec[0], lon, lat));
    }
    Ok(out)
}

/// Reads a boundary ring from a CSV with header `lon,lat`.
pub fn read_boundary_csv<R: Read>(reader: R) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["lon", "lat"] {
        return Err(Error::Schema {
            source_name: "boundary file".into(),
            msg: "expected header `lon,lat`".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Parse {
                line,
                msg: format!("invalid coordinate `{s}`"),
            })
        };
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                msg: "expected 2 fields".into(),
            });
        }
        out.push((parse(&rec[0])?, parse(&rec[1])?));
    }
    Ok(out)
}

pub fn write_towers_csv<W: std::io::Write>(towers: &[CellTower], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["tower_id", "lon", "lat"])?;
    for t in towers {
        wtr.write_record([t.tower_id.as_str(), &format!("{:.7}", t.lon), &format!("{:.7}", t.lat)])?;
    }
    wtr.flush()?;
    Ok(())
}
