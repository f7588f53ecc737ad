//! Single-step home detection: score every tower a user was seen at under a
//! decision rule, rank, and keep the top three as L1/L2/L3.

mod table;

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geo::TowerNetwork;
use crate::ingest::{ActivitySummary, NightWindow, PeriodSet, TowerActivity};

pub use table::{read_home_table_csv, write_home_table_csv, HOME_TABLE_HEADER};

pub const DEFAULT_RADIUS_M: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecisionRule {
    /// Most records overall.
    Activities,
    /// Most distinct local dates with a record.
    DistinctDays,
    /// Most records inside the night window.
    TimeWindow { window: NightWindow },
    /// Most records within `radius_m` of the tower, summed.
    SpaceRadius { radius_m: f64 },
    /// Night-window records within `radius_m`, summed.
    TimeAndSpace { window: NightWindow, radius_m: f64 },
}

impl DecisionRule {
    pub const ALL_IDS: [u8; 5] = [1, 2, 3, 4, 5];

    pub fn from_id(id: u8, window: NightWindow, radius_m: f64) -> Result<Self> {
        let rule = match id {
            1 => Self::Activities,
            2 => Self::DistinctDays,
            3 => Self::TimeWindow { window },
            4 => Self::SpaceRadius { radius_m },
            5 => Self::TimeAndSpace { window, radius_m },
            _ => return Err(Error::InvalidParameter(format!("unknown rule id {id}, expected 1-5"))),
        };
        rule.validate()?;
        Ok(rule)
    }

    /// `all` or a comma-separated list of ids 1-5.
    pub fn parse_list(spec: &str, window: NightWindow, radius_m: f64) -> Result<Vec<Self>> {
        let ids: Vec<u8> = if spec.trim() == "all" {
            Self::ALL_IDS.to_vec()
        } else {
            let mut ids = spec
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u8>()
                        .map_err(|_| Error::InvalidParameter(format!("unknown rule id `{}`", s.trim())))
                })
                .collect::<Result<Vec<_>>>()?;
            ids.sort_unstable();
            ids.dedup();
            ids
        };
        ids.into_iter().map(|id| Self::from_id(id, window, radius_m)).collect()
    }

    pub fn from_name(name: &str, window: NightWindow, radius_m: f64) -> Result<Self> {
        let id = match name {
            "activities" => 1,
            "distinct_days" => 2,
            "time_window" => 3,
            "space_radius" => 4,
            "time_and_space" => 5,
            other => return Err(Error::InvalidParameter(format!("unknown rule `{other}`"))),
        };
        Self::from_id(id, window, radius_m)
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::SpaceRadius { radius_m } | Self::TimeAndSpace { radius_m, .. } if !(radius_m > 0.0 && radius_m.is_finite()) => {
                Err(Error::InvalidParameter(format!("radius must be > 0, got {radius_m}")))
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> u8 {
        match self {
            Self::Activities => 1,
            Self::DistinctDays => 2,
            Self::TimeWindow { .. } => 3,
            Self::SpaceRadius { .. } => 4,
            Self::TimeAndSpace { .. } => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Activities => "activities",
            Self::DistinctDays => "distinct_days",
            Self::TimeWindow { .. } => "time_window",
            Self::SpaceRadius { .. } => "space_radius",
            Self::TimeAndSpace { .. } => "time_and_space",
        }
    }

    pub fn window(&self) -> Option<NightWindow> {
        match *self {
            Self::TimeWindow { window } | Self::TimeAndSpace { window, .. } => Some(window),
            _ => None,
        }
    }

    pub fn radius_m(&self) -> Option<f64> {
        match *self {
            Self::SpaceRadius { radius_m } | Self::TimeAndSpace { radius_m, .. } => Some(radius_m),
            _ => None,
        }
    }

    /// Per-tower count the rule is built on.
    fn base(&self, t: &TowerActivity) -> u64 {
        match self {
            Self::Activities | Self::SpaceRadius { .. } => t.n_total as u64,
            Self::DistinctDays => t.n_days_total as u64,
            Self::TimeWindow { .. } | Self::TimeAndSpace { .. } => t.n_window as u64,
        }
    }
}

impl fmt::Display for DecisionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())?;
        if let Some(w) = self.window() {
            write!(f, ";window={w}")?;
        }
        if let Some(r) = self.radius_m() {
            write!(f, ";radius_m={r}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TowerScore {
    pub tower: u32,
    pub score: u64,
}

/// Scores of every tower the user was observed at whose base count under
/// the rule is positive, ascending by tower. Spatial rules sum the base
/// count over all the user's towers within the radius, the centre included.
pub fn score_towers(rule: &DecisionRule, s: &ActivitySummary, net: &TowerNetwork) -> Vec<TowerScore> {
    let candidates = s.towers.iter().filter(|t| rule.base(t) > 0);
    match rule.radius_m() {
        None => candidates
            .map(|t| TowerScore {
                tower: t.tower,
                score: rule.base(t),
            })
            .collect(),
        Some(r) => candidates
            .map(|t| TowerScore {
                tower: t.tower,
                score: s
                    .towers
                    .iter()
                    .filter(|u| u.tower == t.tower || net.distance(t.tower as usize, u.tower as usize) <= r)
                    .map(|u| rule.base(u))
                    .sum(),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub tower_id: String,
    pub score: u64,
}

/// Ranked home candidates for one user: one to three distinct towers, with
/// non-increasing scores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionResult {
    pub user_id: String,
    pub ranked: Vec<Candidate>,
}

impl DetectionResult {
    pub fn l1(&self) -> &Candidate {
        &self.ranked[0]
    }

    pub fn l2(&self) -> Option<&Candidate> {
        self.ranked.get(1)
    }

    pub fn l3(&self) -> Option<&Candidate> {
        self.ranked.get(2)
    }

    /// L1 and L2 share the same score and were separated by the tie-break.
    pub fn is_tie(&self) -> bool {
        self.l2().is_some_and(|c| c.score == self.l1().score)
    }
}

/// Ranks by score, then total records, then distinct days (all descending),
/// then tower id ascending.
pub fn detect_home(rule: &DecisionRule, s: &ActivitySummary, net: &TowerNetwork) -> Option<DetectionResult> {
    let scores = score_towers(rule, s, net);
    if scores.is_empty() {
        return None;
    }
    let activity = |tower: u32| s.towers.iter().find(|t| t.tower == tower).unwrap();
    let mut ranked: Vec<(TowerScore, &TowerActivity)> = scores.into_iter().map(|sc| (sc, activity(sc.tower))).collect();
    ranked.sort_unstable_by(|(a, ta), (b, tb)| {
        b.score
            .cmp(&a.score)
            .then(tb.n_total.cmp(&ta.n_total))
            .then(tb.n_days_total.cmp(&ta.n_days_total))
            .then(a.tower.cmp(&b.tower))
    });
    Some(DetectionResult {
        user_id: s.user_id.clone(),
        ranked: ranked
            .into_iter()
            .take(3)
            .map(|(sc, _)| Candidate {
                tower_id: net.tower(sc.tower as usize).tower_id.clone(),
                score: sc.score,
            })
            .collect(),
    })
}

/// Detected homes for one rule and period, ascending by user id.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeTable {
    pub rule: DecisionRule,
    pub period: String,
    entries: Vec<DetectionResult>,
}

impl HomeTable {
    pub fn new(rule: DecisionRule, period: impl Into<String>, mut entries: Vec<DetectionResult>) -> Result<Self> {
        entries.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        if let Some(w) = entries.windows(2).find(|w| w[0].user_id == w[1].user_id) {
            return Err(Error::InvalidParameter(format!("user `{}` appears twice", w[0].user_id)));
        }
        for e in &entries {
            let ok = !e.ranked.is_empty()
                && e.ranked.len() <= 3
                && e.ranked.windows(2).all(|w| w[0].score >= w[1].score && w[0].tower_id != w[1].tower_id)
                && (e.ranked.len() < 3 || e.ranked[0].tower_id != e.ranked[2].tower_id)
                && e.ranked.iter().all(|c| c.score > 0);
            if !ok {
                return Err(Error::InvalidParameter(format!("invalid ranking for user `{}`", e.user_id)));
            }
        }
        Ok(Self {
            rule,
            period: period.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[DetectionResult] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&DetectionResult> {
        self.entries
            .binary_search_by(|e| e.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Users whose L1 was chosen by tie-break rather than by score.
    pub fn ties(&self) -> usize {
        self.entries.iter().filter(|e| e.is_tie()).count()
    }
}

/// Applies `rule` to every summary; one table per period of `periods`, in
/// period order. Users without a positive score are absent.
pub fn run_hda(
    rule: &DecisionRule,
    summaries: &[ActivitySummary],
    periods: &PeriodSet,
    net: &TowerNetwork,
) -> Vec<HomeTable> {
    let detected: Vec<(usize, DetectionResult)> = summaries
        .par_iter()
        .filter_map(|s| detect_home(rule, s, net).map(|d| (s.period, d)))
        .collect();
    let mut buckets: Vec<Vec<DetectionResult>> = vec![Vec::new(); periods.len()];
    for (p, d) in detected {
        buckets[p].push(d);
    }
    buckets
        .into_iter()
        .zip(periods.iter())
        .map(|(entries, p)| HomeTable::new(*rule, p.label.clone(), entries).expect("detections are well formed"))
        .collect()
}

/// Table 1 style row: detections per rank for one rule, summed over periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionCounts {
    pub rule: DecisionRule,
    pub l1: u64,
    pub l2: u64,
    pub l3: u64,
    pub ties: u64,
}

impl DetectionCounts {
    /// L2 detections as a percentage of L1, rounded to 0.1.
    pub fn l2_pct(&self) -> f64 {
        pct(self.l2, self.l1)
    }

    pub fn l3_pct(&self) -> f64 {
        pct(self.l3, self.l1)
    }
}

/// `100 * count / base` rounded to one decimal; 0 when `base` is 0.
pub fn pct(count: u64, base: u64) -> f64 {
    if base == 0 {
        return 0.0;
    }
    (1000.0 * count as f64 / base as f64).round() / 10.0
}

/// One row per rule (ascending id), summed across all the rule's tables.
pub fn detection_counts(tables: &[HomeTable]) -> Vec<DetectionCounts> {
    let mut rows: Vec<DetectionCounts> = Vec::new();
    for t in tables {
        let row = match rows.iter_mut().position(|r| r.rule == t.rule) {
            Some(i) => &mut rows[i],
            None => {
                rows.push(DetectionCounts {
                    rule: t.rule,
                    l1: 0,
                    l2: 0,
                    l3: 0,
                    ties: 0,
                });
                rows.last_mut().unwrap()
            }
        };
        row.l1 += t.len() as u64;
        row.l2 += t.entries().iter().filter(|e| e.l2().is_some()).count() as u64;
        row.l3 += t.entries().iter().filter(|e| e.l3().is_some()).count() as u64;
        row.ties += t.ties() as u64;
    }
    rows.sort_by_key(|r| r.rule.id());
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{CellTower, EARTH_RADIUS_M};
    use crate::ingest::{Period, TzOffset};

    fn m(d: f64) -> f64 {
        (d / EARTH_RADIUS_M).to_degrees()
    }

    fn net() -> TowerNetwork {
        TowerNetwork::build(
            vec![
                CellTower::new("t1", 0.0, 0.0),
                CellTower::new("t2", m(800.0), 0.0),
                CellTower::new("t3", m(5000.0), 0.0),
            ],
            None,
        )
        .unwrap()
    }

    fn act(tower: u32, n_total: u32, n_window: u32, days: u32) -> TowerActivity {
        TowerActivity {
            tower,
            n_total,
            n_window,
            n_days_total: days,
            n_days_window: days.min(n_window),
        }
    }

    fn summary(towers: Vec<TowerActivity>) -> ActivitySummary {
        ActivitySummary {
            user_id: "u".into(),
            period: 0,
            towers,
        }
    }

    fn w() -> NightWindow {
        NightWindow::default()
    }

    #[test]
    fn activities_scores_totals() {
        let s = summary(vec![act(0, 5, 0, 2), act(1, 3, 0, 1)]);
        let sc = score_towers(&DecisionRule::Activities, &s, &net());
        assert_eq!(sc, vec![TowerScore { tower: 0, score: 5 }, TowerScore { tower: 1, score: 3 }]);
    }

    #[test]
    fn space_radius_sums_neighbourhood() {
        let n = net();
        let s = summary(vec![act(0, 5, 0, 2), act(1, 3, 0, 1)]);
        let rule = DecisionRule::SpaceRadius { radius_m: 1000.0 };
        // brute force over every network tower within 1000 m
        let brute = |t: u32| -> u64 {
            (0..n.len())
                .filter(|&u| n.distance(t as usize, u) <= 1000.0)
                .map(|u| s.towers.iter().find(|a| a.tower as usize == u).map_or(0, |a| a.n_total as u64))
                .sum()
        };
        let sc = score_towers(&rule, &s, &n);
        assert_eq!(sc.iter().map(|x| x.score).collect::<Vec<_>>(), vec![8, 8]);
        for x in &sc {
            assert_eq!(x.score, brute(x.tower));
        }
    }

    #[test]
    fn time_window_without_night_records_is_empty() {
        let s = summary(vec![act(0, 5, 0, 2)]);
        assert!(score_towers(&DecisionRule::TimeWindow { window: w() }, &s, &net()).is_empty());
        assert!(detect_home(&DecisionRule::TimeWindow { window: w() }, &s, &net()).is_none());
        assert!(detect_home(&DecisionRule::Activities, &s, &net()).is_some());
    }

    #[test]
    fn ranks_top_three() {
        let s = summary(vec![act(0, 5, 0, 1), act(1, 3, 0, 1), act(2, 1, 0, 1)]);
        let d = detect_home(&DecisionRule::Activities, &s, &net()).unwrap();
        assert_eq!(d.l1().tower_id, "t1");
        assert_eq!(d.l2().unwrap().tower_id, "t2");
        assert_eq!(d.l3().unwrap().tower_id, "t3");
        assert!(!d.is_tie());
    }

    #[test]
    fn tie_breaks_by_id_then_behaviour() {
        let s = summary(vec![act(2, 4, 0, 2), act(0, 4, 0, 2)]);
        let d = detect_home(&DecisionRule::Activities, &s, &net()).unwrap();
        assert_eq!(d.l1().tower_id, "t1");
        assert!(d.is_tie());
        // distinct days decides before id
        let s = summary(vec![act(0, 4, 0, 1), act(2, 4, 0, 3)]);
        let d = detect_home(&DecisionRule::Activities, &s, &net()).unwrap();
        assert_eq!(d.l1().tower_id, "t3");
        // under DistinctDays, total count decides before id
        let s = summary(vec![act(0, 2, 0, 2), act(2, 6, 0, 2)]);
        let d = detect_home(&DecisionRule::DistinctDays, &s, &net()).unwrap();
        assert_eq!(d.l1().tower_id, "t3");
    }

    #[test]
    fn single_tower_user() {
        let s = summary(vec![act(1, 2, 1, 1)]);
        let d = detect_home(&DecisionRule::Activities, &s, &net()).unwrap();
        assert_eq!(d.l1().tower_id, "t2");
        assert!(d.l2().is_none() && d.l3().is_none());
    }

    #[test]
    fn run_hda_on_empty_input() {
        let periods = PeriodSet::new(vec![Period::calendar_month(2007, 6, TzOffset::default()).unwrap()]).unwrap();
        let tables = run_hda(&DecisionRule::Activities, &[], &periods, &net());
        assert_eq!(tables.len(), 1);
        assert!(tables[0].is_empty());
    }

    #[test]
    fn paper_arithmetic_night_share() {
        // 98.4 M of 109.4 M L1 detections survive the night window: up to 10 % lost
        let lost: f64 = 100.0 * (1.0 - 98.4 / 109.4);
        assert!((lost - 10.05).abs() < 0.01);
        assert_eq!(lost.round(), 10.0);
        assert_eq!(pct(984, 1094), 89.9);
    }

    #[test]
    fn detection_counts_with_full_diversity() {
        let s: Vec<ActivitySummary> = (0..3)
            .map(|i| ActivitySummary {
                user_id: format!("u{i}"),
                period: 0,
                towers: vec![act(0, 3, 0, 1), act(1, 2, 0, 1), act(2, 1, 0, 1)],
            })
            .collect();
        let periods = PeriodSet::new(vec![Period::calendar_month(2007, 6, TzOffset::default()).unwrap()]).unwrap();
        let tables = run_hda(&DecisionRule::Activities, &s, &periods, &net());
        let rows = detection_counts(&tables);
        assert_eq!((rows[0].l1, rows[0].l2, rows[0].l3), (3, 3, 3));
        assert_eq!((rows[0].l2_pct(), rows[0].l3_pct()), (100.0, 100.0));
    }

    #[test]
    fn rule_parsing() {
        let rules = DecisionRule::parse_list("all", w(), 1000.0).unwrap();
        assert_eq!(rules.len(), 5);
        let rules = DecisionRule::parse_list("5,1,3", w(), 1000.0).unwrap();
        assert_eq!(rules.iter().map(|r| r.id()).collect::<Vec<_>>(), vec![1, 3, 5]);
        assert!(DecisionRule::parse_list("6", w(), 1000.0).is_err());
        assert!(DecisionRule::parse_list("x", w(), 1000.0).is_err());
        assert!(DecisionRule::from_id(4, w(), 0.0).is_err());
        assert_eq!(DecisionRule::from_name("time_and_space", w(), 1000.0).unwrap().id(), 5);
    }

    #[test]
    fn home_table_rejects_bad_rankings() {
        let bad = DetectionResult {
            user_id: "u".into(),
            ranked: vec![
                Candidate { tower_id: "a".into(), score: 1 },
                Candidate { tower_id: "b".into(), score: 2 },
            ],
        };
        assert!(HomeTable::new(DecisionRule::Activities, "p", vec![bad]).is_err());
    }
}
