use std::collections::HashMap;
use std::io::Write;

use super::GroundTruth;
use crate::error::{Error, Result};
use crate::geo::TowerNetwork;
use crate::hda::HomeTable;
use crate::ingest::ActivitySummary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Distance counted as a near hit.
    pub within_m: f64,
    /// Users with at most this many records in the period are low-activity.
    pub low_activity_max: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            within_m: 1000.0,
            low_activity_max: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRow {
    pub group: &'static str,
    /// Users of the group in the ground truth.
    pub n_users: u64,
    pub n_detected: u64,
    /// Detected users whose L1 is their true home.
    pub n_exact: u64,
    /// Detected users whose L1 is within `within_m` of their true home.
    pub n_within: u64,
}

impl AccuracyRow {
    fn new(group: &'static str) -> Self {
        Self {
            group,
            n_users: 0,
            n_detected: 0,
            n_exact: 0,
            n_within: 0,
        }
    }

    /// Share of detected users with the exact home; `None` when nobody in
    /// the group was detected.
    pub fn exact_rate(&self) -> Option<f64> {
        (self.n_detected > 0).then(|| self.n_exact as f64 / self.n_detected as f64)
    }

    pub fn within_rate(&self) -> Option<f64> {
        (self.n_detected > 0).then(|| self.n_within as f64 / self.n_detected as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub rule: String,
    pub period: String,
    /// `all`, `commuters`, `non_commuters`, `displaced`, and `low_activity`
    /// when activity totals were supplied.
    pub rows: Vec<AccuracyRow>,
}

impl AccuracyReport {
    pub fn group(&self, name: &str) -> Option<&AccuracyRow> {
        self.rows.iter().find(|r| r.group == name)
    }
}

/// Records per user in one period, from aggregated summaries.
pub fn activity_totals(summaries: &[ActivitySummary], period: usize) -> HashMap<String, u64> {
    summaries
        .iter()
        .filter(|s| s.period == period)
        .map(|s| (s.user_id.clone(), s.total_records()))
        .collect()
}

pub fn evaluate(
    table: &HomeTable,
    truth: &GroundTruth,
    net: &TowerNetwork,
    activity: Option<&HashMap<String, u64>>,
    opts: EvalOptions,
) -> Result<AccuracyReport> {
    if let Some(e) = table.entries().iter().find(|e| truth.get(&e.user_id).is_none()) {
        return Err(Error::UnknownUser(e.user_id.clone()));
    }
    let mut rows = vec![
        AccuracyRow::new("all"),
        AccuracyRow::new("commuters"),
        AccuracyRow::new("non_commuters"),
        AccuracyRow::new("displaced"),
    ];
    if activity.is_some() {
        rows.push(AccuracyRow::new("low_activity"));
    }
    for t in truth.records() {
        let low = activity.map(|a| a.get(&t.user_id).copied().unwrap_or(0) <= opts.low_activity_max);
        let member = [true, t.is_commuter, !t.is_commuter, t.is_displaced, low.unwrap_or(false)];
        let detected = table.get(&t.user_id);
        let (exact, within) = match detected {
            Some(d) => {
                let home = net.require(&t.home_tower)?;
                let l1 = net.require(&d.l1().tower_id)?;
                (l1 == home, net.distance(l1, home) <= opts.within_m)
            }
            None => (false, false),
        };
        for (row, _) in rows.iter_mut().zip(member).filter(|(_, m)| *m) {
            row.n_users += 1;
            row.n_detected += u64::from(detected.is_some());
            row.n_exact += u64::from(exact);
            row.n_within += u64::from(within);
        }
    }
    Ok(AccuracyReport {
        rule: table.rule.name().into(),
        period: table.period.clone(),
        rows,
    })
}

pub const ACCURACY_HEADER: &str = "rule,period,group,n_users,n_detected,n_exact,exact_rate,n_within,within_rate";

pub fn write_accuracy_csv<W: Write>(mut w: W, reports: &[AccuracyReport]) -> Result<()> {
    writeln!(w, "{ACCURACY_HEADER}")?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for rep in reports {
        for r in &rep.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                rep.rule,
                rep.period,
                r.group,
                r.n_users,
                r.n_detected,
                r.n_exact,
                fmt(r.exact_rate()),
                r.n_within,
                fmt(r.within_rate())
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hda::{run_hda, Candidate, DecisionRule, DetectionResult};
    use crate::ingest::{aggregate, AggregateConfig, PeriodSet};
    use crate::synth::{generate_world, simulate_cdr, SynthConfig};

    #[test]
    fn home_only_callers_are_all_found() {
        let cfg = SynthConfig {
            seed: 3,
            n_towers: 40,
            n_users: 300,
            commuter_fraction: 0.0,
            roam_share: 0.0,
            ..SynthConfig::default()
        };
        let w = generate_world(&cfg).unwrap();
        let periods = PeriodSet::parse_months("2007-06", Default::default()).unwrap();
        let recs: Vec<_> = simulate_cdr(&w, &periods).collect();
        let agg = aggregate(&recs, &w.net, &periods, AggregateConfig::default());
        let tables = run_hda(&DecisionRule::Activities, &agg.summaries, &periods, &w.net);
        let totals = activity_totals(&agg.summaries, 0);
        let rep = evaluate(&tables[0], &w.truth, &w.net, Some(&totals), EvalOptions::default()).unwrap();
        let all = rep.group("all").unwrap();
        assert_eq!(all.n_users, 300);
        assert_eq!(all.exact_rate(), Some(1.0));
        assert_eq!(all.within_rate(), Some(1.0));
        assert_eq!(rep.group("commuters").unwrap().exact_rate(), None);
        assert!(rep.group("low_activity").is_some());
    }

    #[test]
    fn commuters_lose_activities_but_not_night() {
        let cfg = SynthConfig {
            seed: 5,
            n_towers: 40,
            n_users: 1000,
            commuter_fraction: 0.4,
            commuter_night_share: 0.1,
            rate_sigma: 0.3,
            ..SynthConfig::default()
        };
        let w = generate_world(&cfg).unwrap();
        let periods = PeriodSet::parse_months("2007-06", Default::default()).unwrap();
        let recs: Vec<_> = simulate_cdr(&w, &periods).collect();
        let agg = aggregate(&recs, &w.net, &periods, AggregateConfig::default());
        let f = w.users.iter().filter(|u| u.is_commuter()).count() as f64 / 1000.0;
        let act = run_hda(&DecisionRule::Activities, &agg.summaries, &periods, &w.net);
        let rep = evaluate(&act[0], &w.truth, &w.net, None, EvalOptions::default()).unwrap();
        let sd = (f * (1.0 - f) / 1000.0).sqrt();
        assert!((rep.group("all").unwrap().exact_rate().unwrap() - (1.0 - f)).abs() <= 2.0 * sd);
        let night = run_hda(&DecisionRule::TimeWindow { window: Default::default() }, &agg.summaries, &periods, &w.net);
        let rep = evaluate(&night[0], &w.truth, &w.net, None, EvalOptions::default()).unwrap();
        assert_eq!(rep.group("all").unwrap().exact_rate(), Some(1.0));
    }

    #[test]
    fn unknown_user_is_an_error() {
        let w = generate_world(&SynthConfig { seed: 1, n_towers: 10, n_users: 5, ..SynthConfig::default() }).unwrap();
        let t = HomeTable::new(
            DecisionRule::Activities,
            "2007-06",
            vec![DetectionResult {
                user_id: "ghost".into(),
                ranked: vec![Candidate { tower_id: w.net.tower(0).tower_id.clone(), score: 1 }],
            }],
        )
        .unwrap();
        assert!(matches!(evaluate(&t, &w.truth, &w.net, None, EvalOptions::default()), Err(Error::UnknownUser(_))));
        let mut buf = Vec::new();
        let empty = HomeTable::new(DecisionRule::Activities, "2007-06", vec![]).unwrap();
        let rep = evaluate(&empty, &w.truth, &w.net, None, EvalOptions::default()).unwrap();
        write_accuracy_csv(&mut buf, &[rep]).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("activities,2007-06,all,5,0,0,,0,"));
    }
}
