//! Aggregates CSV: `user_id,period,tower_id,n_total,n_window,n_days_total,n_days_window`,
//! preceded by `#` lines recording the window, offset and period bounds so
//! a later stage can rebuild the study without re-reading the CDRs.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::parse::{format_timestamp, parse_timestamp};
use super::{ActivitySummary, AggregateConfig, NightWindow, Period, PeriodSet, TowerActivity, TzOffset};
use crate::error::{Error, Result};
use crate::geo::TowerNetwork;

pub const AGGREGATES_HEADER: &str = "user_id,period,tower_id,n_total,n_window,n_days_total,n_days_window";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatesFile {
    pub cfg: AggregateConfig,
    pub periods: PeriodSet,
    pub summaries: Vec<ActivitySummary>,
}

pub fn write_aggregates_csv<W: Write>(
    mut w: W,
    net: &TowerNetwork,
    periods: &PeriodSet,
    cfg: AggregateConfig,
    summaries: &[ActivitySummary],
) -> Result<()> {
    writeln!(w, "# window={}", cfg.window)?;
    writeln!(w, "# tz_offset_s={}", cfg.tz.seconds())?;
    for p in periods.iter() {
        writeln!(w, "# period={},{},{}", p.label, format_timestamp(p.start), format_timestamp(p.end))?;
    }
    writeln!(w, "{AGGREGATES_HEADER}")?;
    for s in summaries {
        let label = &periods.get(s.period).label;
        for t in &s.towers {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.user_id,
                label,
                net.tower(t.tower as usize).tower_id,
                t.n_total,
                t.n_window,
                t.n_days_total,
                t.n_days_window
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema {
        source_name: "aggregates file".into(),
        msg: msg.into(),
    }
}

pub fn read_aggregates_csv<R: BufRead>(reader: R, net: &TowerNetwork) -> Result<AggregatesFile> {
    let mut window = None;
    let mut tz = None;
    let mut periods = Vec::new();
    let mut header_seen = false;
    let mut groups: BTreeMap<(usize, String), Vec<TowerActivity>> = BTreeMap::new();
    let mut period_set: Option<PeriodSet> = None;

    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = i as u64 + 1;
        let text = line.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        if let Some(meta) = text.strip_prefix('#') {
            let meta = meta.trim();
            if let Some(v) = meta.strip_prefix("window=") {
                window = Some(v.parse::<NightWindow>()?);
            } else if let Some(v) = meta.strip_prefix("tz_offset_s=") {
                let s: i32 = v.parse().map_err(|_| schema(format!("bad tz offset `{v}`")))?;
                tz = Some(TzOffset::from_seconds(s));
            } else if let Some(v) = meta.strip_prefix("period=") {
                let parts: Vec<&str> = v.split(',').collect();
                let ts = |s: &str| parse_timestamp(s).ok_or_else(|| schema(format!("bad period bound `{s}`")));
                if parts.len() != 3 {
                    return Err(schema(format!("bad period line `{v}`")));
                }
                periods.push(Period::new(parts[0], ts(parts[1])?, ts(parts[2])?)?);
            }
            continue;
        }
        if !header_seen {
            if text != AGGREGATES_HEADER {
                return Err(schema(format!("expected header `{AGGREGATES_HEADER}`, found `{text}`")));
            }
            header_seen = true;
            period_set = Some(PeriodSet::new(std::mem::take(&mut periods))?);
            continue;
        }
        let set = period_set.as_ref().unwrap();
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let f: Vec<&str> = text.split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, found {}", f.len())));
        }
        let period = set
            .position(f[1])
            .ok_or_else(|| bad(format!("undeclared period `{}`", f[1])))?;
        let tower = net.index_of(f[2]).ok_or_else(|| bad(format!("unknown tower `{}`", f[2])))? as u32;
        let num = |s: &str| s.parse::<u32>().map_err(|_| bad(format!("invalid count `{s}`")));
        let t = TowerActivity {
            tower,
            n_total: num(f[3])?,
            n_window: num(f[4])?,
            n_days_total: num(f[5])?,
            n_days_window: num(f[6])?,
        };
        if t.n_window > t.n_total || t.n_days_window > t.n_days_total || t.n_days_total > t.n_total || t.n_total == 0 {
            return Err(bad("inconsistent counts".into()));
        }
        let entry = groups.entry((period, f[0].to_string())).or_default();
        if entry.iter().any(|e| e.tower == tower) {
            return Err(bad(format!("duplicate entry for tower `{}`", f[2])));
        }
        entry.push(t);
    }
    if !header_seen {
        return Err(schema("missing header"));
    }
    let cfg = AggregateConfig {
        tz: tz.ok_or_else(|| schema("missing `# tz_offset_s=` line"))?,
        window: window.ok_or_else(|| schema("missing `# window=` line"))?,
    };
    let summaries = groups
        .into_iter()
        .map(|((period, user_id), mut towers)| {
            towers.sort_unstable_by_key(|t| t.tower);
            ActivitySummary {
                user_id,
                period,
                towers,
            }
        })
        .collect();
    Ok(AggregatesFile {
        cfg,
        periods: period_set.unwrap(),
        summaries,
    })
}
