use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use super::{substream, UserProfile, World, TAG_EVENTS};
use crate::error::Result;
use crate::ingest::{date_to_day, push_cdr_line, CdrRecord, Direction, Kind, NightWindow, PeriodSet, CDR_HEADER};

const USERS_PER_CHUNK: usize = 256;

/// Local day numbers touched by any period, ascending.
fn period_days(world: &World, periods: &PeriodSet) -> Vec<i32> {
    let tz = world.cfg.tz;
    let mut days: Vec<i32> = periods
        .iter()
        .flat_map(|p| tz.local_day(p.start)..=tz.local_day(p.end - 1))
        .collect();
    days.dedup();
    days
}

fn is_weekday(day: i32) -> bool {
    // day 0 (1970-01-01) was a Thursday
    (day + 3).rem_euclid(7) < 5
}

/// Uniform second of day inside (or outside) the window.
fn second_in(window: &NightWindow, inside: bool, rng: &mut impl Rng) -> i64 {
    let len = window.len_s();
    let (from, span) = if inside {
        (window.start_s(), len)
    } else {
        (window.end_s(), 86_400 - len)
    };
    ((from + rng.gen_range(0..span)) % 86_400) as i64
}

fn emit(world: &World, user: &UserProfile, days: &[i32], periods: &PeriodSet, mut out: impl FnMut(i64, usize, Direction, Kind)) {
    let cfg = &world.cfg;
    let holiday = cfg
        .holiday
        .as_ref()
        .map(|h| (date_to_day(h.start), date_to_day(h.end)));
    let poisson = Poisson::new(user.rate).expect("rates are positive");
    let roam = world.roam_towers(user.home);
    let mut day_events: Vec<(i64, usize, Direction, Kind)> = Vec::new();
    for &day in days {
        let mut rng = substream(cfg.seed, &[TAG_EVENTS, user.index, day as u64]);
        let n = poisson.sample(&mut rng) as u64;
        let away = match (user.holiday, holiday) {
            (Some(t), Some((start, end))) if (start..end).contains(&day) => Some(t),
            _ => None,
        };
        let workday = user.work.is_some() && is_weekday(day) && away.is_none();
        let night_p = if workday { cfg.commuter_night_share } else { cfg.night_share };
        day_events.clear();
        for _ in 0..n {
            let night = rng.gen::<f64>() < night_p && !user.night_silent;
            let roaming = rng.gen::<f64>() < cfg.roam_share;
            let pick = rng.gen_range(0..roam.len().max(1));
            let tower = match away {
                Some(t) => t,
                None if night => user.home,
                None if workday => user.work.unwrap(),
                None if roaming && !roam.is_empty() => roam[pick],
                None => user.home,
            };
            let sec = second_in(&cfg.window, night, &mut rng);
            let ts = day as i64 * 86_400 + sec - cfg.tz.seconds() as i64;
            let direction = if rng.gen::<bool>() { Direction::Outgoing } else { Direction::Incoming };
            let kind = if rng.gen::<f64>() < 0.7 { Kind::Call } else { Kind::Text };
            if periods.find(ts).is_some() {
                day_events.push((ts, tower, direction, kind));
            }
        }
        day_events.sort_unstable_by_key(|e| (e.0, e.1));
        for &(ts, tower, d, k) in &day_events {
            out(ts, tower, d, k);
        }
    }
}

/// One user's records over `periods`, in time order.
pub fn simulate_user(world: &World, user: &UserProfile, periods: &PeriodSet) -> Vec<CdrRecord> {
    let days = period_days(world, periods);
    let mut out = Vec::new();
    emit(world, user, &days, periods, |ts, tower, direction, kind| {
        out.push(CdrRecord {
            user_id: user.user_id.clone(),
            ts,
            tower_id: world.net.tower(tower).tower_id.clone(),
            direction,
            kind,
        })
    });
    out
}

/// All records, user by user. Each user's stream depends only on the seed,
/// the user's index and the day, never on which other users exist.
pub fn simulate_cdr<'a>(world: &'a World, periods: &'a PeriodSet) -> impl Iterator<Item = CdrRecord> + 'a {
    world.users.iter().flat_map(move |u| simulate_user(world, u, periods))
}

/// Writes the CDR file for `periods` (header preceded by a seed stamp),
/// simulating users in parallel chunks. Returns the number of records.
pub fn write_simulated_cdr<W: Write>(world: &World, periods: &PeriodSet, mut w: W) -> Result<u64> {
    writeln!(w, "# seed={}", world.cfg.seed)?;
    writeln!(w, "{CDR_HEADER}")?;
    let days = period_days(world, periods);
    let chunks: Vec<&[UserProfile]> = world.users.chunks(USERS_PER_CHUNK).collect();
    let batch = 4 * rayon::current_num_threads().max(1);
    let mut total = 0u64;
    for group in chunks.chunks(batch) {
        let bufs: Vec<(Vec<u8>, u64)> = group
            .par_iter()
            .map(|users| {
                let mut buf = Vec::with_capacity(users.len() * 64 * days.len());
                let mut n = 0u64;
                for u in users.iter() {
                    emit(world, u, &days, periods, |ts, tower, d, k| {
                        push_cdr_line(&mut buf, &u.user_id, ts, &world.net.tower(tower).tower_id, d, k);
                        n += 1;
                    });
                }
                (buf, n)
            })
            .collect();
        for (buf, n) in bufs {
            w.write_all(&buf)?;
            total += n;
        }
    }
    w.flush()?;
    Ok(total)
}
