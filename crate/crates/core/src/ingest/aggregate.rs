//! Partition-mergeable reduction of CDR rows.
//!
//! Per-tower entries form a commutative monoid (counts add, distinct-day sets
//! union), so any partition of the input reduced independently and merged in
//! any order yields the same summaries. Output is sorted by period then user.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};

use rayon::prelude::*;

use super::parse::{check_header, parse_line, Line};
use super::{ActivitySummary, AggregateConfig, CdrRecord, IngestReport, PeriodSet, TowerActivity};
use crate::error::{Error, Result};
use crate::geo::TowerNetwork;

/// Bytes handed to each worker per read block.
const BLOCK_PER_WORKER: usize = 8 << 20;

/// Sorted set of local day numbers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct DaySet(Vec<i32>);

impl DaySet {
    fn insert(&mut self, d: i32) {
        match self.0.last() {
            None => self.0.push(d),
            Some(&l) if l < d => self.0.push(d),
            Some(&l) if l == d => {}
            _ => {
                if let Err(pos) = self.0.binary_search(&d) {
                    self.0.insert(pos, d);
                }
            }
        }
    }

    fn union(&mut self, other: &DaySet) {
        if other.0.is_empty() {
            return;
        }
        let mut out = Vec::with_capacity(self.0.len() + other.0.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.0, &other.0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        self.0 = out;
    }

    fn len(&self) -> u32 {
        self.0.len() as u32
    }

    #[cfg(test)]
    fn is_subset(&self, other: &DaySet) -> bool {
        self.0.iter().all(|d| other.0.binary_search(d).is_ok())
    }
}

#[derive(Debug, Clone, Default)]
struct TowerAcc {
    period: u32,
    tower: u32,
    n_total: u32,
    n_window: u32,
    days_total: DaySet,
    days_window: DaySet,
}

impl TowerAcc {
    fn merge(&mut self, other: &TowerAcc) {
        self.n_total += other.n_total;
        self.n_window += other.n_window;
        self.days_total.union(&other.days_total);
        self.days_window.union(&other.days_window);
    }
}

/// Output of a reduction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregation {
    pub summaries: Vec<ActivitySummary>,
    pub accepted: u64,
    pub unknown_tower: u64,
    pub out_of_window: u64,
    /// Distinct local dates with at least one accepted record, per period.
    pub days_observed: Vec<u32>,
}

impl Aggregation {
    /// Completes a parse report with the aggregation-side counts.
    pub fn report(&self, parsed: IngestReport) -> IngestReport {
        IngestReport {
            rows_read: parsed.rows_read,
            rows_ok: self.accepted,
            rows_malformed: parsed.rows_malformed,
            rows_unknown_tower: self.unknown_tower,
            rows_out_of_window: self.out_of_window,
        }
    }
}

pub struct Aggregator<'a> {
    net: &'a TowerNetwork,
    periods: &'a PeriodSet,
    cfg: AggregateConfig,
    users: HashMap<String, Vec<TowerAcc>>,
    period_days: Vec<DaySet>,
    accepted: u64,
    unknown_tower: u64,
    out_of_window: u64,
}

impl<'a> Aggregator<'a> {
    pub fn new(net: &'a TowerNetwork, periods: &'a PeriodSet, cfg: AggregateConfig) -> Self {
        Self {
            net,
            periods,
            cfg,
            users: HashMap::new(),
            period_days: vec![DaySet::default(); periods.len()],
            accepted: 0,
            unknown_tower: 0,
            out_of_window: 0,
        }
    }

    pub fn add(&mut self, user: &str, ts: i64, tower_id: &str) {
        let Some(tower) = self.net.index_of(tower_id) else {
            self.unknown_tower += 1;
            return;
        };
        let Some(period) = self.periods.find(ts) else {
            self.out_of_window += 1;
            return;
        };
        self.accepted += 1;
        let day = self.cfg.tz.local_day(ts);
        let in_window = self.cfg.window.contains(self.cfg.tz.local_second_of_day(ts));
        self.period_days[period].insert(day);

        let entries = match self.users.get_mut(user) {
            Some(e) => e,
            None => self.users.entry(user.to_string()).or_default(),
        };
        let (period, tower) = (period as u32, tower as u32);
        let acc = match entries.iter().position(|e| e.period == period && e.tower == tower) {
            Some(i) => &mut entries[i],
            None => {
                entries.push(TowerAcc {
                    period,
                    tower,
                    ..Default::default()
                });
                entries.last_mut().unwrap()
            }
        };
        acc.n_total += 1;
        acc.days_total.insert(day);
        if in_window {
            acc.n_window += 1;
            acc.days_window.insert(day);
        }
    }

    pub fn add_record(&mut self, r: &CdrRecord) {
        self.add(&r.user_id, r.ts, &r.tower_id);
    }

    pub fn merge(&mut self, other: Aggregator<'_>) {
        self.accepted += other.accepted;
        self.unknown_tower += other.unknown_tower;
        self.out_of_window += other.out_of_window;
        for (mine, theirs) in self.period_days.iter_mut().zip(&other.period_days) {
            mine.union(theirs);
        }
        for (user, accs) in other.users {
            match self.users.get_mut(&user) {
                None => {
                    self.users.insert(user, accs);
                }
                Some(entries) => {
                    for acc in accs {
                        match entries
                            .iter_mut()
                            .find(|e| e.period == acc.period && e.tower == acc.tower)
                        {
                            Some(e) => e.merge(&acc),
                            None => entries.push(acc),
                        }
                    }
                }
            }
        }
    }

    pub fn finish(self) -> Aggregation {
        let mut summaries = Vec::new();
        for (user, mut accs) in self.users {
            accs.sort_unstable_by_key(|a| (a.period, a.tower));
            for group in accs.chunk_by(|a, b| a.period == b.period) {
                summaries.push(ActivitySummary {
                    user_id: user.clone(),
                    period: group[0].period as usize,
                    towers: group
                        .iter()
                        .map(|a| TowerActivity {
                            tower: a.tower,
                            n_total: a.n_total,
                            n_window: a.n_window,
                            n_days_total: a.days_total.len(),
                            n_days_window: a.days_window.len(),
                        })
                        .collect(),
                });
            }
        }
        summaries.sort_unstable_by(|a, b| a.period.cmp(&b.period).then_with(|| a.user_id.cmp(&b.user_id)));
        Aggregation {
            summaries,
            accepted: self.accepted,
            unknown_tower: self.unknown_tower,
            out_of_window: self.out_of_window,
            days_observed: self.period_days.iter().map(DaySet::len).collect(),
        }
    }
}

/// Sequential reduction.
pub fn aggregate<'r, I>(records: I, net: &TowerNetwork, periods: &PeriodSet, cfg: AggregateConfig) -> Aggregation
where
    I: IntoIterator<Item = &'r CdrRecord>,
{
    let mut agg = Aggregator::new(net, periods, cfg);
    for r in records {
        agg.add_record(r);
    }
    agg.finish()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Reduction over `workers` contiguous partitions, merged in partition order.
/// The result equals [`aggregate`] for every worker count.
pub fn aggregate_parallel(
    records: &[CdrRecord],
    net: &TowerNetwork,
    periods: &PeriodSet,
    cfg: AggregateConfig,
    workers: usize,
) -> Result<Aggregation> {
    let workers = workers.max(1);
    let chunk = records.len().div_ceil(workers).max(1);
    let partials: Vec<Aggregator<'_>> = pool(workers)?.install(|| {
        records
            .par_chunks(chunk)
            .map(|part| {
                let mut a = Aggregator::new(net, periods, cfg);
                part.iter().for_each(|r| a.add_record(r));
                a
            })
            .collect()
    });
    let mut acc = Aggregator::new(net, periods, cfg);
    for p in partials {
        acc.merge(p);
    }
    Ok(acc.finish())
}

#[derive(Debug, Default, Clone, Copy)]
struct LineCounts {
    read: u64,
    malformed: u64,
}

fn reduce_chunk(agg: &mut Aggregator<'_>, chunk: &[u8], first_line: u64, strict: bool) -> Result<LineCounts> {
    let mut counts = LineCounts::default();
    for (i, line) in chunk.split(|&b| b == b'\n').enumerate() {
        match parse_line(line) {
            Line::Skip => {}
            Line::Row(Ok(row)) => {
                counts.read += 1;
                agg.add(&row.user, row.ts, &row.tower);
            }
            Line::Row(Err(msg)) => {
                counts.read += 1;
                if strict {
                    return Err(Error::Parse {
                        line: first_line + i as u64,
                        msg,
                    });
                }
                counts.malformed += 1;
            }
        }
    }
    Ok(counts)
}

/// Splits `data` into at most `parts` pieces that end on line boundaries.
fn split_lines(data: &[u8], parts: usize) -> Vec<&[u8]> {
    let mut out = Vec::with_capacity(parts);
    let mut rest = data;
    for k in (1..=parts).rev() {
        if rest.is_empty() {
            break;
        }
        if k == 1 {
            out.push(rest);
            break;
        }
        let target = rest.len() / k;
        let cut = match rest[target..].iter().position(|&b| b == b'\n') {
            Some(p) => target + p + 1,
            None => rest.len(),
        };
        out.push(&rest[..cut]);
        rest = &rest[cut..];
    }
    out
}

fn count_newlines(b: &[u8]) -> u64 {
    b.iter().filter(|&&c| c == b'\n').count() as u64
}

/// Parses and reduces a whole CDR CSV stream with `workers` threads, reading
/// it in blocks that are split on line boundaries. Rows must not contain
/// embedded newlines. Output and report are identical for any `workers`.
pub fn ingest_reader<R: Read>(
    reader: R,
    net: &TowerNetwork,
    periods: &PeriodSet,
    cfg: AggregateConfig,
    strict: bool,
    workers: usize,
) -> Result<(Aggregation, IngestReport)> {
    let workers = workers.max(1);
    let pool = pool(workers)?;
    let mut reader = BufReader::with_capacity(1 << 16, reader);

    // header, after any leading comments or blank lines
    let mut line_base = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Err(Error::Schema {
                source_name: "CDR stream".into(),
                msg: "missing header".into(),
            });
        }
        line_base += 1;
        let end = buf.len() - usize::from(buf.last() == Some(&b'\n'));
        if matches!(parse_line(&buf[..end]), Line::Skip) {
            continue;
        }
        check_header(&buf)?;
        break;
    }

    let mut accs: Vec<Aggregator<'_>> = (0..workers).map(|_| Aggregator::new(net, periods, cfg)).collect();
    let mut totals = LineCounts::default();
    let mut block_size = BLOCK_PER_WORKER * workers;
    let mut block: Vec<u8> = Vec::with_capacity(block_size + (1 << 16));
    let mut eof = false;
    while !eof {
        while block.len() < block_size {
            let before = block.len();
            block.resize(block_size.max(before + 1), 0);
            let n = reader.read(&mut block[before..])?;
            block.truncate(before + n);
            if n == 0 {
                eof = true;
                break;
            }
        }
        let cut = if eof {
            block.len()
        } else {
            match block.iter().rposition(|&b| b == b'\n') {
                Some(p) => p + 1,
                None => {
                    // a single line longer than the block
                    block_size *= 2;
                    continue;
                }
            }
        };
        let data = &block[..cut];
        let chunks = split_lines(data, workers);
        let mut starts = Vec::with_capacity(chunks.len());
        let mut line = line_base + 1;
        for c in &chunks {
            starts.push(line);
            line += count_newlines(c);
        }
        let results: Vec<Result<LineCounts>> = pool.install(|| {
            accs.par_iter_mut()
                .zip(chunks.par_iter().zip(starts.par_iter()))
                .map(|(acc, (chunk, &start))| reduce_chunk(acc, chunk, start, strict))
                .collect()
        });
        for r in results {
            let c = r?;
            totals.read += c.read;
            totals.malformed += c.malformed;
        }
        line_base += count_newlines(data);
        block.drain(..cut);
    }

    let mut merged = Aggregator::new(net, periods, cfg);
    for a in accs {
        merged.merge(a);
    }
    let agg = merged.finish();
    let report = agg.report(IngestReport {
        rows_read: totals.read,
        rows_ok: totals.read - totals.malformed,
        rows_malformed: totals.malformed,
        ..Default::default()
    });
    Ok((agg, report))
}
