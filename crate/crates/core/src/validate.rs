//! Census validation: per-tower home counts compared against per-tower census
//! population by the angle between the two vectors, in degrees.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::TowerNetwork;
use crate::hda::{DecisionRule, HomeTable};

/// One non-negative value per network tower, in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationVector {
    values: Vec<f64>,
    source_tag: String,
}

impl PopulationVector {
    pub fn new(values: Vec<f64>, source_tag: impl Into<String>, net: &TowerNetwork) -> Result<Self> {
        let source_tag = source_tag.into();
        if values.len() != net.len() {
            return Err(Error::LengthMismatch {
                expected: net.len(),
                found: values.len(),
            });
        }
        let invalid = |msg: &str| Error::InvalidVector {
            source_tag: source_tag.clone(),
            msg: msg.into(),
        };
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid("entries must be finite and non-negative"));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(invalid("all entries are zero"));
        }
        Ok(Self { values, source_tag })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Number of users whose L1 is each tower.
pub fn population_counts(t: &HomeTable, net: &TowerNetwork) -> Result<PopulationVector> {
    let mut values = vec![0.0; net.len()];
    for e in t.entries() {
        let idx = net
            .index_of(&e.l1().tower_id)
            .ok_or_else(|| Error::UnknownTower(e.l1().tower_id.clone()))?;
        values[idx] += 1.0;
    }
    PopulationVector::new(values, format!("{}/{}", t.rule.name(), t.period), net)
}

/// Cosine of the angle between `x` and `y`, clamped to [-1, 1].
pub fn cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    if nx == 0.0 {
        return Err(Error::ZeroNorm("x".into()));
    }
    if ny == 0.0 {
        return Err(Error::ZeroNorm("y".into()));
    }
    // a single square root keeps cosine(x, x) exactly 1
    Ok((dot / (nx * ny).sqrt()).clamp(-1.0, 1.0))
}

/// Angle between `x` and `y` in degrees: 0 for parallel vectors, 90 for
/// orthogonal ones.
pub fn csm_degrees(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(cosine(x, y)?.acos().to_degrees().abs())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Compare only towers where both vectors are nonzero.
    pub joint_nonzero: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsmReport {
    pub rule: DecisionRule,
    pub period: String,
    pub cosine: f64,
    pub csm_deg: f64,
    /// Distance from perfect agreement (0 degrees).
    pub gap_deg: f64,
}

fn compare(x: &[f64], y: &[f64], opts: ValidateOptions) -> Result<f64> {
    if !opts.joint_nonzero {
        return cosine(x, y);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a != 0.0 && **b != 0.0)
        .map(|(a, b)| (*a, *b))
        .unzip();
    cosine(&xs, &ys)
}

/// One report per table, in table order.
pub fn validate_against_census(
    tables: &[HomeTable],
    census: &PopulationVector,
    net: &TowerNetwork,
    opts: ValidateOptions,
) -> Result<Vec<CsmReport>> {
    if census.values().len() != net.len() {
        return Err(Error::LengthMismatch {
            expected: net.len(),
            found: census.values().len(),
        });
    }
    tables
        .par_iter()
        .map(|t| {
            let est = population_counts(t, net)?;
            let cos = compare(est.values(), census.values(), opts)?;
            let deg = cos.acos().to_degrees().abs();
            Ok(CsmReport {
                rule: t.rule,
                period: t.period.clone(),
                cosine: cos,
                csm_deg: deg,
                gap_deg: deg,
            })
        })
        .collect()
}

pub const CENSUS_HEADER: &str = "tower_id,population";

/// Reads a census covering every network tower.
pub fn read_census_csv<R: BufRead>(reader: R, net: &TowerNetwork) -> Result<PopulationVector> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CENSUS_HEADER {
        return Err(Error::Schema {
            source_name: "census".into(),
            msg: format!("expected header `{CENSUS_HEADER}`, found `{}`", header.join(",")),
        });
    }
    let mut values = vec![f64::NAN; net.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default();
        let idx = net.index_of(id).ok_or_else(|| Error::UnknownTower(id.to_string()))?;
        if !values[idx].is_nan() {
            return Err(Error::DuplicateTower(id.to_string()));
        }
        let raw = rec.get(1).unwrap_or_default();
        values[idx] = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("invalid population `{raw}`"),
            })?;
    }
    let missing: Vec<String> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_nan())
        .map(|(i, _)| net.tower(i).tower_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCensusTowers(missing));
    }
    PopulationVector::new(values, "census", net)
}

pub fn write_census_csv<W: Write>(mut w: W, census: &PopulationVector, net: &TowerNetwork) -> Result<()> {
    writeln!(w, "{CENSUS_HEADER}")?;
    for (i, v) in census.values().iter().enumerate() {
        writeln!(w, "{},{v}", net.tower(i).tower_id)?;
    }
    w.flush()?;
    Ok(())
}

pub const REPORT_HEADER: &str = "rule,period,cosine,csm_deg";

pub fn write_report_csv<W: Write>(mut w: W, reports: &[CsmReport]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(w, "{},{},{:.12},{:.9}", r.rule.name(), r.period, r.cosine, r.csm_deg)?;
    }
    w.flush()?;
    Ok(())
}
