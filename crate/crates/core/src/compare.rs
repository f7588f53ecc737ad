//! Agreement between home detection rules: the share of users, among those
//! both rules detected, whose L1 tower is identical.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hda::{DecisionRule, HomeTable};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SmcOptions {
    /// Count users present in only one table as mismatches instead of
    /// dropping them.
    pub missing_as_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmcResult {
    pub rule_a: DecisionRule,
    pub rule_b: DecisionRule,
    pub period: String,
    pub n_joint: u64,
    pub n_match: u64,
    pub smc_pct: f64,
}

pub fn smc(a: &HomeTable, b: &HomeTable, opts: SmcOptions) -> Result<SmcResult> {
    if a.period != b.period {
        return Err(Error::PeriodMismatch(a.period.clone(), b.period.clone()));
    }
    let (ea, eb) = (a.entries(), b.entries());
    let (mut i, mut j) = (0, 0);
    let (mut n_joint, mut n_match, mut n_only) = (0u64, 0u64, 0u64);
    while i < ea.len() && j < eb.len() {
        match ea[i].user_id.cmp(&eb[j].user_id) {
            Ordering::Less => {
                n_only += 1;
                i += 1;
            }
            Ordering::Greater => {
                n_only += 1;
                j += 1;
            }
            Ordering::Equal => {
                n_joint += 1;
                n_match += u64::from(ea[i].l1().tower_id == eb[j].l1().tower_id);
                i += 1;
                j += 1;
            }
        }
    }
    n_only += (ea.len() - i + eb.len() - j) as u64;
    if opts.missing_as_mismatch {
        n_joint += n_only;
    }
    if n_joint == 0 {
        return Err(Error::UndefinedSmc {
            rule_a: a.rule.name().into(),
            rule_b: b.rule.name().into(),
            period: a.period.clone(),
        });
    }
    Ok(SmcResult {
        rule_a: a.rule,
        rule_b: b.rule,
        period: a.period.clone(),
        n_joint,
        n_match,
        smc_pct: 100.0 * n_match as f64 / n_joint as f64,
    })
}

#[derive(Debug)]
pub struct SmcPair {
    pub a: usize,
    pub b: usize,
    pub result: Result<SmcResult>,
}

/// All unordered pairs of rules for one period. An undefined pair is kept
/// as an error in its cell rather than failing the whole matrix.
#[derive(Debug)]
pub struct SmcMatrix {
    pub period: String,
    pub rules: Vec<DecisionRule>,
    pub pairs: Vec<SmcPair>,
}

impl SmcMatrix {
    /// Percentage for rules `i` and `j` (either order). The diagonal is 100;
    /// undefined pairs give `None`.
    pub fn pct(&self, i: usize, j: usize) -> Option<f64> {
        if i == j {
            return Some(100.0);
        }
        let (a, b) = (i.min(j), i.max(j));
        self.pairs
            .iter()
            .find(|p| p.a == a && p.b == b)
            .and_then(|p| p.result.as_ref().ok())
            .map(|r| r.smc_pct)
    }
}

pub fn smc_matrix(tables: &[HomeTable], opts: SmcOptions) -> Result<SmcMatrix> {
    if tables.len() < 2 {
        return Err(Error::InvalidParameter("an SMC matrix needs at least two tables".into()));
    }
    let period = tables[0].period.clone();
    if let Some(t) = tables.iter().find(|t| t.period != period) {
        return Err(Error::PeriodMismatch(period, t.period.clone()));
    }
    let idx: Vec<(usize, usize)> = (0..tables.len())
        .flat_map(|a| (a + 1..tables.len()).map(move |b| (a, b)))
        .collect();
    let pairs = idx
        .into_par_iter()
        .map(|(a, b)| SmcPair {
            a,
            b,
            result: smc(&tables[a], &tables[b], opts),
        })
        .collect();
    Ok(SmcMatrix {
        period,
        rules: tables.iter().map(|t| t.rule).collect(),
        pairs,
    })
}

/// Groups tables by period (in order of first appearance) and builds one
/// matrix per period.
pub fn smc_matrices(tables: &[HomeTable], opts: SmcOptions) -> Result<Vec<SmcMatrix>> {
    let mut periods: Vec<&str> = Vec::new();
    for t in tables {
        if !periods.contains(&t.period.as_str()) {
            periods.push(&t.period);
        }
    }
    periods
        .into_iter()
        .map(|p| {
            let group: Vec<HomeTable> = tables.iter().filter(|t| t.period == p).cloned().collect();
            smc_matrix(&group, opts)
        })
        .collect()
}

pub const SMC_HEADER: &str = "period,rule_a,rule_b,n_joint,n_match,smc_pct";

/// Undefined pairs are written with `n_joint` 0 and an empty percentage.
pub fn write_smc_csv<W: Write>(mut w: W, matrices: &[SmcMatrix]) -> Result<()> {
    writeln!(w, "{SMC_HEADER}")?;
    for m in matrices {
        for p in &m.pairs {
            let (ra, rb) = (m.rules[p.a].name(), m.rules[p.b].name());
            match &p.result {
                Ok(r) => writeln!(w, "{},{ra},{rb},{},{},{:.3}", m.period, r.n_joint, r.n_match, r.smc_pct)?,
                Err(_) => writeln!(w, "{},{ra},{rb},0,0,", m.period)?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format with every ordered pair, diagonal included, ready to pivot
/// into a heatmap.
pub fn write_heatmap_csv<W: Write>(mut w: W, matrices: &[SmcMatrix]) -> Result<()> {
    writeln!(w, "period,row,col,smc_pct")?;
    for m in matrices {
        for (i, ri) in m.rules.iter().enumerate() {
            for (j, rj) in m.rules.iter().enumerate() {
                match m.pct(i, j) {
                    Some(v) => writeln!(w, "{},{},{},{v:.3}", m.period, ri.name(), rj.name())?,
                    None => writeln!(w, "{},{},{},", m.period, ri.name(), rj.name())?,
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
