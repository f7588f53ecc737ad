//! Getis-Ord Gi* hot and cold spots over tower-indexed values, and per-tower
//! log ratios between two population vectors.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::{Tessellation, TowerNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum WeightsSpec {
    /// Towers whose Voronoi cells share an edge.
    #[default]
    VoronoiAdjacency,
    /// Towers within `d_m` meters (great circle, inclusive).
    DistanceBand { d_m: f64 },
}

impl fmt::Display for WeightsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VoronoiAdjacency => f.write_str("voronoi_adjacency"),
            Self::DistanceBand { d_m } => write!(f, "distance_band:{d_m}"),
        }
    }
}

impl FromStr for WeightsSpec {
    type Err = Error;

    /// `voronoi_adjacency` or `distance_band:<meters>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "voronoi_adjacency" || s == "voronoi" {
            return Ok(Self::VoronoiAdjacency);
        }
        let d = s
            .strip_prefix("distance_band:")
            .or_else(|| s.strip_prefix("band:"))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown weights scheme `{s}`")))?;
        let d_m: f64 = d
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("invalid band distance `{d}`")))?;
        if !(d_m > 0.0 && d_m.is_finite()) {
            return Err(Error::InvalidParameter(format!("band distance must be > 0, got {d_m}")));
        }
        Ok(Self::DistanceBand { d_m })
    }
}

/// Binary weights as neighbour lists. Every list contains its own tower and
/// is ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    spec: WeightsSpec,
    neighbors: Vec<Vec<usize>>,
}

impl SpatialWeights {
    /// `tess` is required for Voronoi adjacency and ignored otherwise.
    pub fn build(spec: WeightsSpec, net: &TowerNetwork, tess: Option<&Tessellation>) -> Result<Self> {
        let neighbors = match spec {
            WeightsSpec::VoronoiAdjacency => {
                let tess = tess.ok_or_else(|| {
                    Error::InvalidParameter("Voronoi adjacency weights need a tessellation".into())
                })?;
                if tess.cells().len() != net.len() {
                    return Err(Error::LengthMismatch {
                        expected: net.len(),
                        found: tess.cells().len(),
                    });
                }
                (0..net.len())
                    .map(|i| {
                        let mut n = tess.adjacent(i).to_vec();
                        n.push(i);
                        n.sort_unstable();
                        n
                    })
                    .collect()
            }
            WeightsSpec::DistanceBand { d_m } => (0..net.len())
                .into_par_iter()
                .map(|i| net.neighbors_within_idx(i, d_m))
                .collect(),
        };
        Ok(Self { spec, neighbors })
    }

    /// Weights from explicit neighbour lists; self links are added.
    pub fn from_neighbors(spec: WeightsSpec, mut neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.push(i);
            list.sort_unstable();
            list.dedup();
            if list.last().is_some_and(|&j| j >= n) {
                return Err(Error::InvalidParameter(format!("neighbour index out of range for tower {i}")));
            }
        }
        Ok(Self { spec, neighbors })
    }

    pub fn spec(&self) -> WeightsSpec {
        self.spec
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }
}

/// Gi* z-score of every tower under binary weights including self. Towers
/// are identified in errors by their position.
pub fn gi_star(values: &[f64], w: &SpatialWeights) -> Result<Vec<f64>> {
    if values.len() != w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            found: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateField);
    }
    (0..values.len())
        .into_par_iter()
        .map(|i| {
            let nb = w.neighbors(i);
            let wi = nb.len() as f64;
            let num: f64 = nb.iter().map(|&j| values[j] - mean).sum();
            let var = (n * wi - wi * wi) / (n - 1.0);
            if !(var > 0.0) {
                return Err(Error::DegenerateWeights(format!(
                    "tower #{i} neighbours every tower, so its z-score is undefined"
                )));
            }
            Ok(num / (sd * var.sqrt()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Confidence {
    P90,
    P95,
    P99,
}

impl Confidence {
    /// Two-sided normal critical value.
    pub fn critical_z(self) -> f64 {
        match self {
            Self::P90 => 1.645,
            Self::P95 => 1.960,
            Self::P99 => 2.576,
        }
    }

    pub fn percent(self) -> u8 {
        match self {
            Self::P90 => 90,
            Self::P95 => 95,
            Self::P99 => 99,
        }
    }
}

impl TryFrom<u8> for Confidence {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            90 => Ok(Self::P90),
            95 => Ok(Self::P95),
            99 => Ok(Self::P99),
            _ => Err(Error::InvalidParameter(format!("confidence must be 90, 95 or 99, got {v}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HotspotClass {
    Hot,
    Cold,
    Neutral,
}

impl HotspotClass {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hot => "hot",
            Self::Cold => "cold",
            Self::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotspotMap {
    pub confidence: Confidence,
    pub z: Vec<f64>,
    pub class: Vec<HotspotClass>,
}

pub fn classify(z: &[f64], confidence: Confidence) -> HotspotMap {
    let c = confidence.critical_z();
    let class = z
        .iter()
        .map(|&v| {
            if v >= c {
                HotspotClass::Hot
            } else if v <= -c {
                HotspotClass::Cold
            } else {
                HotspotClass::Neutral
            }
        })
        .collect();
    HotspotMap {
        confidence,
        z: z.to_vec(),
        class,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRatio {
    /// `ln(a / b)` where both are positive.
    pub values: Vec<Option<f64>>,
    pub skipped: usize,
}

pub fn log_ratio(a: &[f64], b: &[f64]) -> Result<LogRatio> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let values: Vec<Option<f64>> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x > 0.0 && y > 0.0).then(|| (x / y).ln()))
        .collect();
    let skipped = values.iter().filter(|v| v.is_none()).count();
    Ok(LogRatio { values, skipped })
}

/// Voronoi polygons with `z`, `class`, `log_ratio` (null when undefined) and
/// the weights label.
pub fn hotspots_geojson(
    tess: &Tessellation,
    map: &HotspotMap,
    ratio: Option<&LogRatio>,
    weights: WeightsSpec,
) -> serde_json::Value {
    let label = weights.to_string();
    tess.to_geojson(|i| {
        let mut p = serde_json::Map::new();
        p.insert("z".into(), map.z[i].into());
        p.insert("class".into(), map.class[i].as_str().into());
        p.insert(
            "log_ratio".into(),
            ratio.and_then(|r| r.values[i]).map_or(serde_json::Value::Null, Into::into),
        );
        p.insert("weights".into(), label.clone().into());
        p.insert("confidence".into(), map.confidence.percent().into());
        p
    })
}

pub const HOTSPOT_HEADER: &str = "tower_id,weights,confidence,z,class,log_ratio";

pub fn write_hotspots_csv<W: Write>(
    mut w: W,
    net: &TowerNetwork,
    map: &HotspotMap,
    ratio: Option<&LogRatio>,
    weights: WeightsSpec,
) -> Result<()> {
    writeln!(w, "{HOTSPOT_HEADER}")?;
    for (i, t) in net.towers().iter().enumerate() {
        let lr = ratio.and_then(|r| r.values[i]).map(|v| format!("{v:.9}")).unwrap_or_default();
        writeln!(
            w,
            "{},{weights},{},{:.9},{},{lr}",
            t.tower_id,
            map.confidence.percent(),
            map.z[i],
            map.class[i].as_str()
        )?;
    }
    w.flush()?;
    Ok(())
}
