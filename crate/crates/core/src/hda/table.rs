//! Home table CSV: `rule,period,user_id,l1,score_l1,l2,score_l2,l3,score_l3`.
//! A `# rule=` line per rule records its window and radius.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::{Candidate, DecisionRule, DetectionResult, HomeTable, DEFAULT_RADIUS_M};
use crate::error::{Error, Result};
use crate::ingest::NightWindow;

pub const HOME_TABLE_HEADER: &str = "rule,period,user_id,l1,score_l1,l2,score_l2,l3,score_l3";

pub fn write_home_table_csv<W: Write>(mut w: W, tables: &[HomeTable]) -> Result<()> {
    let mut seen: Vec<&DecisionRule> = Vec::new();
    for t in tables {
        if !seen.contains(&&t.rule) {
            writeln!(w, "# rule={}", t.rule)?;
            seen.push(&t.rule);
        }
    }
    writeln!(w, "{HOME_TABLE_HEADER}")?;
    for t in tables {
        for e in t.entries() {
            write!(w, "{},{},{}", t.rule.name(), t.period, e.user_id)?;
            for i in 0..3 {
                match e.ranked.get(i) {
                    Some(c) => write!(w, ",{},{}", c.tower_id, c.score)?,
                    None => write!(w, ",,")?,
                }
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_rule_line(v: &str) -> Result<DecisionRule> {
    let mut parts = v.split(';');
    let name = parts.next().unwrap_or_default().trim();
    let mut window = NightWindow::default();
    let mut radius = DEFAULT_RADIUS_M;
    for kv in parts {
        match kv.split_once('=') {
            Some(("window", x)) => window = x.parse()?,
            Some(("radius_m", x)) => {
                radius = x
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("bad radius `{x}`")))?
            }
            _ => {}
        }
    }
    DecisionRule::from_name(name, window, radius)
}

/// Reads tables in file order of first appearance of each (rule, period).
/// Rules without a `# rule=` line get the default window and radius.
pub fn read_home_table_csv<R: BufRead>(reader: R) -> Result<Vec<HomeTable>> {
    let mut declared: BTreeMap<String, DecisionRule> = BTreeMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<DetectionResult>> = BTreeMap::new();
    let mut header_seen = false;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim_end_matches('\r');
        let line_no = i as u64 + 1;
        if text.trim().is_empty() {
            continue;
        }
        if let Some(meta) = text.strip_prefix('#') {
            if let Some(v) = meta.trim().strip_prefix("rule=") {
                let rule = parse_rule_line(v)?;
                declared.insert(rule.name().to_string(), rule);
            }
            continue;
        }
        if !header_seen {
            if text != HOME_TABLE_HEADER {
                return Err(Error::Schema {
                    source_name: "home table".into(),
                    msg: format!("expected header `{HOME_TABLE_HEADER}`, found `{text}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let f: Vec<&str> = text.split(',').collect();
        if f.len() != 9 {
            return Err(bad(format!("expected 9 fields, found {}", f.len())));
        }
        if f[2].is_empty() {
            return Err(bad("empty user_id".into()));
        }
        let mut ranked = Vec::new();
        for k in 0..3 {
            let (id, score) = (f[3 + 2 * k], f[4 + 2 * k]);
            match (id.is_empty(), score.is_empty()) {
                (true, true) => break,
                (false, false) => ranked.push(Candidate {
                    tower_id: id.to_string(),
                    score: score.parse().map_err(|_| bad(format!("invalid score `{score}`")))?,
                }),
                _ => return Err(bad("tower and score must both be present or both empty".into())),
            }
        }
        if ranked.is_empty() || f[3 + 2 * ranked.len()..].iter().any(|s| !s.is_empty()) {
            return Err(bad("L1 required and ranks must be contiguous".into()));
        }
        let key = (f[0].to_string(), f[1].to_string());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(DetectionResult {
            user_id: f[2].to_string(),
            ranked,
        });
    }
    if !header_seen {
        return Err(Error::Schema {
            source_name: "home table".into(),
            msg: "missing header".into(),
        });
    }
    order
        .into_iter()
        .map(|key| {
            let rule = match declared.get(&key.0) {
                Some(r) => *r,
                None => DecisionRule::from_name(&key.0, NightWindow::default(), DEFAULT_RADIUS_M)?,
            };
            let entries = groups.remove(&key).unwrap();
            HomeTable::new(rule, key.1, entries)
        })
        .collect()
}
