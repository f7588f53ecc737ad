use std::borrow::Cow;
use std::io::{BufRead, Write};

use chrono::{DateTime, NaiveDate};

use super::{CdrRecord, Direction, IngestReport, Kind};
use crate::error::{Error, Result};

pub const CDR_HEADER: &str = "user_id,ts,tower_id,direction,kind";

pub(crate) struct RawRow<'a> {
    pub user: Cow<'a, str>,
    pub ts: i64,
    pub tower: Cow<'a, str>,
    pub direction: Direction,
    pub kind: Kind,
}

pub(crate) enum Line<'a> {
    /// Blank or `#` comment.
    Skip,
    Row(std::result::Result<RawRow<'a>, String>),
}

fn digits(b: &[u8]) -> Option<u32> {
    b.iter().try_fold(0u32, |acc, &c| {
        c.is_ascii_digit().then(|| acc * 10 + (c - b'0') as u32)
    })
}

/// Parses an ISO 8601 UTC timestamp to epoch seconds. `YYYY-MM-DDTHH:MM:SSZ`
/// takes a fast path; other RFC 3339 forms (explicit offsets, fractional
/// seconds) are converted to UTC and truncated to the second.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let b = s.as_bytes();
    if b.len() == 20 && b[4] == b'-' && b[7] == b'-' && b[10] == b'T' && b[13] == b':' && b[16] == b':' && b[19] == b'Z' {
        let y = digits(&b[0..4])? as i32;
        let (mo, d) = (digits(&b[5..7])?, digits(&b[8..10])?);
        let (h, mi, sec) = (digits(&b[11..13])?, digits(&b[14..16])?, digits(&b[17..19])?);
        return NaiveDate::from_ymd_opt(y, mo, d)?
            .and_hms_opt(h, mi, sec)
            .map(|t| t.and_utc().timestamp());
    }
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.timestamp())
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_default()
}

/// Appends `YYYY-MM-DDTHH:MM:SSZ` for years 0-9999.
pub(crate) fn push_timestamp(buf: &mut Vec<u8>, ts: i64) {
    let days = ts.div_euclid(86_400);
    let secs = ts.rem_euclid(86_400) as u32;
    // days-from-civil inverse, proleptic Gregorian
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = (yoe + era * 400 + i64::from(m <= 2)) as u32;
    let two = |buf: &mut Vec<u8>, v: u32| buf.extend_from_slice(&[b'0' + (v / 10) as u8, b'0' + (v % 10) as u8]);
    two(buf, y / 100);
    two(buf, y % 100);
    buf.push(b'-');
    two(buf, m);
    buf.push(b'-');
    two(buf, d);
    buf.push(b'T');
    two(buf, secs / 3600);
    buf.push(b':');
    two(buf, secs / 60 % 60);
    buf.push(b':');
    two(buf, secs % 60);
    buf.push(b'Z');
}

/// Appends one CDR row and its newline.
pub(crate) fn push_cdr_line(buf: &mut Vec<u8>, user: &str, ts: i64, tower: &str, direction: Direction, kind: Kind) {
    buf.extend_from_slice(user.as_bytes());
    buf.push(b',');
    push_timestamp(buf, ts);
    buf.push(b',');
    buf.extend_from_slice(tower.as_bytes());
    buf.push(b',');
    buf.extend_from_slice(direction.as_str().as_bytes());
    buf.push(b',');
    buf.extend_from_slice(kind.as_str().as_bytes());
    buf.push(b'\n');
}

fn parse_fields<'a>(f: [Cow<'a, str>; 5]) -> std::result::Result<RawRow<'a>, String> {
    let [user, ts, tower, direction, kind] = f;
    if user.is_empty() {
        return Err("empty user_id".into());
    }
    if tower.is_empty() {
        return Err("empty tower_id".into());
    }
    let ts = parse_timestamp(&ts).ok_or_else(|| format!("invalid timestamp `{ts}`"))?;
    let direction = match direction.as_ref() {
        "incoming" => Direction::Incoming,
        "outgoing" => Direction::Outgoing,
        other => return Err(format!("unknown direction `{other}`")),
    };
    let kind = match kind.as_ref() {
        "call" => Kind::Call,
        "text" => Kind::Text,
        other => return Err(format!("unknown kind `{other}`")),
    };
    Ok(RawRow {
        user,
        ts,
        tower,
        direction,
        kind,
    })
}

/// Classifies one physical line (without its terminator).
pub(crate) fn parse_line(line: &[u8]) -> Line<'_> {
    let line = match line.last() {
        Some(b'\r') => &line[..line.len() - 1],
        _ => line,
    };
    if line.iter().all(|c| c.is_ascii_whitespace()) || line.first() == Some(&b'#') {
        return Line::Skip;
    }
    let Ok(text) = std::str::from_utf8(line) else {
        return Line::Row(Err("invalid UTF-8".into()));
    };
    if text.contains('"') {
        return Line::Row(parse_quoted(text));
    }
    let mut it = text.split(',');
    let mut f: [Cow<'_, str>; 5] = Default::default();
    for slot in f.iter_mut() {
        match it.next() {
            Some(v) => *slot = Cow::Borrowed(v.trim()),
            None => return Line::Row(Err(format!("expected 5 fields, found fewer in `{text}`"))),
        }
    }
    if it.next().is_some() {
        return Line::Row(Err(format!("expected 5 fields, found more in `{text}`")));
    }
    Line::Row(parse_fields(f))
}

fn parse_quoted(text: &str) -> std::result::Result<RawRow<'static>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let rec = rdr
        .records()
        .next()
        .ok_or("empty record")?
        .map_err(|e| e.to_string())?;
    if rec.len() != 5 {
        return Err(format!("expected 5 fields, found {}", rec.len()));
    }
    let f: [Cow<'static, str>; 5] = std::array::from_fn(|i| Cow::Owned(rec[i].trim().to_string()));
    parse_fields(f)
}

pub(crate) fn check_header(line: &[u8]) -> Result<()> {
    let text = String::from_utf8_lossy(line);
    let text = text.trim_end_matches(['\r', '\n']).trim_start_matches('\u{feff}');
    let cols: Vec<&str> = text.split(',').map(str::trim).collect();
    if cols.join(",") != CDR_HEADER {
        return Err(Error::Schema {
            source_name: "CDR stream".into(),
            msg: format!("expected header `{CDR_HEADER}`, found `{text}`"),
        });
    }
    Ok(())
}

/// Streaming CDR reader. Valid rows come out in input order; invalid rows are
/// counted and skipped, or end the stream with a [`Error::Parse`] in strict
/// mode.
pub struct CdrReader<R> {
    reader: R,
    strict: bool,
    line_no: u64,
    buf: Vec<u8>,
    report: IngestReport,
    failed: bool,
}

/// Opens a CDR stream, consuming leading comments and validating the header.
pub fn parse_cdr<R: BufRead>(mut reader: R, strict: bool) -> Result<CdrReader<R>> {
    let mut buf = Vec::new();
    let mut line_no = 0u64;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Err(Error::Schema {
                source_name: "CDR stream".into(),
                msg: "missing header".into(),
            });
        }
        line_no += 1;
        if matches!(parse_line(&buf[..buf.len() - usize::from(buf.last() == Some(&b'\n'))]), Line::Skip) {
            continue;
        }
        check_header(&buf)?;
        break;
    }
    Ok(CdrReader {
        reader,
        strict,
        line_no,
        buf,
        report: IngestReport::default(),
        failed: false,
    })
}

impl<R: BufRead> CdrReader<R> {
    /// Counts so far. `rows_unknown_tower` and `rows_out_of_window` are
    /// filled in by aggregation, not here.
    pub fn report(&self) -> IngestReport {
        self.report
    }

    /// Physical lines consumed so far, header included.
    pub fn lines_consumed(&self) -> u64 {
        self.line_no
    }
}

impl<R: BufRead> Iterator for CdrReader<R> {
    type Item = Result<CdrRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            self.line_no += 1;
            let end = self.buf.len() - usize::from(self.buf.last() == Some(&b'\n'));
            match parse_line(&self.buf[..end]) {
                Line::Skip => continue,
                Line::Row(Ok(row)) => {
                    self.report.rows_read += 1;
                    self.report.rows_ok += 1;
                    return Some(Ok(CdrRecord {
                        user_id: row.user.into_owned(),
                        ts: row.ts,
                        tower_id: row.tower.into_owned(),
                        direction: row.direction,
                        kind: row.kind,
                    }));
                }
                Line::Row(Err(msg)) => {
                    self.report.rows_read += 1;
                    if self.strict {
                        self.failed = true;
                        return Some(Err(Error::Parse {
                            line: self.line_no,
                            msg,
                        }));
                    }
                    self.report.rows_malformed += 1;
                }
            }
        }
    }
}

/// Writes records in CDR CSV format, optionally preceded by `# comment` lines.
pub fn write_cdr_csv<'a, W, I>(records: I, mut w: W, comments: &[String]) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a CdrRecord>,
{
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{CDR_HEADER}")?;
    let mut buf = Vec::with_capacity(1 << 16);
    for r in records {
        push_cdr_line(&mut buf, &r.user_id, r.ts, &r.tower_id, r.direction, r.kind);
        if buf.len() >= 1 << 16 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}
