//! Synthetic towers, users and CDRs with known homes.
//!
//! Every random draw comes from a ChaCha stream keyed by the seed, a purpose
//! tag and the entity's index, so a user's attributes and events do not
//! depend on how many other users exist, which users are retained by the
//! market share filter, or how work is split across threads.

mod config;
mod evaluate;
mod simulate;

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geo::{CellTower, TowerNetwork, EARTH_RADIUS_M};
use crate::validate::PopulationVector;

pub use config::{parse_kv, Holiday, Layout, SynthConfig};
pub use evaluate::{
    activity_totals, evaluate, write_accuracy_csv, AccuracyReport, AccuracyRow, EvalOptions, ACCURACY_HEADER,
};
pub use simulate::{simulate_cdr, simulate_user, write_simulated_cdr};

const TAG_TOWERS: u64 = 1;
const TAG_USER: u64 = 2;
const TAG_RETAIN: u64 = 3;
const TAG_EVENTS: u64 = 4;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, keys...)`.
pub(crate) fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &k in keys {
        h = splitmix(h ^ splitmix(k));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Simulated behaviour of one retained user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    /// Position in the full (pre market share) population.
    pub index: u64,
    pub user_id: String,
    pub home: usize,
    pub work: Option<usize>,
    pub holiday: Option<usize>,
    /// Expected records per day.
    pub rate: f64,
    /// Never active inside the night window.
    pub night_silent: bool,
}

impl UserProfile {
    pub fn is_commuter(&self) -> bool {
        self.work.is_some()
    }

    pub fn is_displaced(&self) -> bool {
        self.holiday.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthRecord {
    pub user_id: String,
    pub home_tower: String,
    pub work_tower: Option<String>,
    pub is_commuter: bool,
    pub is_displaced: bool,
}

/// Planted homes, ascending by user id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    pub seed: u64,
    records: Vec<TruthRecord>,
}

impl GroundTruth {
    pub fn new(seed: u64, mut records: Vec<TruthRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        if let Some(w) = records.windows(2).find(|w| w[0].user_id == w[1].user_id) {
            return Err(Error::InvalidParameter(format!("user `{}` appears twice", w[0].user_id)));
        }
        Ok(Self { seed, records })
    }

    pub fn records(&self) -> &[TruthRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&TruthRecord> {
        self.records
            .binary_search_by(|r| r.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Number of users whose true home is each tower.
    pub fn home_census(&self, net: &TowerNetwork) -> Result<PopulationVector> {
        let mut v = vec![0.0; net.len()];
        for r in &self.records {
            v[net.require(&r.home_tower)?] += 1.0;
        }
        PopulationVector::new(v, "true_homes", net)
    }
}

pub const TRUTH_HEADER: &str = "user_id,home_tower,work_tower,is_commuter,is_displaced";

pub fn write_truth_csv<W: Write>(mut w: W, truth: &GroundTruth) -> Result<()> {
    writeln!(w, "# seed={}", truth.seed)?;
    writeln!(w, "{TRUTH_HEADER}")?;
    for r in &truth.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.user_id,
            r.home_tower,
            r.work_tower.as_deref().unwrap_or(""),
            r.is_commuter,
            r.is_displaced
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: BufRead>(reader: R) -> Result<GroundTruth> {
    let mut seed = None;
    let mut header = false;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim_end_matches('\r');
        let line_no = i as u64 + 1;
        if text.trim().is_empty() {
            continue;
        }
        if let Some(meta) = text.strip_prefix('#') {
            if let Some(v) = meta.trim().strip_prefix("seed=") {
                seed = v.trim().parse().ok();
            }
            continue;
        }
        if !header {
            if text != TRUTH_HEADER {
                return Err(Error::Schema {
                    source_name: "ground truth".into(),
                    msg: format!("expected header `{TRUTH_HEADER}`, found `{text}`"),
                });
            }
            header = true;
            continue;
        }
        let bad = |msg: String| Error::Parse { line: line_no, msg };
        let f: Vec<&str> = text.split(',').collect();
        if f.len() != 5 || f[0].is_empty() || f[1].is_empty() {
            return Err(bad(format!("malformed row `{text}`")));
        }
        let flag = |s: &str| s.parse::<bool>().map_err(|_| bad(format!("invalid flag `{s}`")));
        records.push(TruthRecord {
            user_id: f[0].into(),
            home_tower: f[1].into(),
            work_tower: (!f[2].is_empty()).then(|| f[2].to_string()),
            is_commuter: flag(f[3])?,
            is_displaced: flag(f[4])?,
        });
    }
    if !header {
        return Err(Error::Schema {
            source_name: "ground truth".into(),
            msg: "missing header".into(),
        });
    }
    GroundTruth::new(seed.unwrap_or(0), records)
}

#[derive(Debug, Clone)]
pub struct World {
    pub cfg: SynthConfig,
    pub net: TowerNetwork,
    pub truth: GroundTruth,
    /// Retained users, ascending by index (and so by id).
    pub users: Vec<UserProfile>,
    /// Nearest other towers of each tower, closest first.
    roam: Vec<Vec<usize>>,
}

impl World {
    pub(crate) fn roam_towers(&self, tower: usize) -> &[usize] {
        &self.roam[tower]
    }
}

fn tower_positions(cfg: &SynthConfig) -> Vec<(f64, f64)> {
    let mut rng = substream(cfg.seed, &[TAG_TOWERS]);
    // Inset so no tower sits on the boundary ring, whose projected edges are chords.
    let (ix, iy) = (BOX_INSET * (cfg.lon_max - cfg.lon_min), BOX_INSET * (cfg.lat_max - cfg.lat_min));
    let (lon0, lon1, lat0, lat1) = (cfg.lon_min + ix, cfg.lon_max - ix, cfg.lat_min + iy, cfg.lat_max - iy);
    let uniform = |rng: &mut ChaCha8Rng| (rng.gen_range(lon0..lon1), rng.gen_range(lat0..lat1));
    let n_urban = match cfg.layout {
        Layout::Uniform => 0,
        Layout::Clustered { urban_fraction } => (urban_fraction * cfg.n_towers as f64).round() as usize,
    };
    let cities: Vec<(f64, f64)> = (0..if n_urban > 0 { cfg.n_cities } else { 0 })
        .map(|_| {
            let (dx, dy) = (0.1 * (lon1 - lon0), 0.1 * (lat1 - lat0));
            (rng.gen_range(lon0 + dx..lon1 - dx), rng.gen_range(lat0 + dy..lat1 - dy))
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.n_towers);
    for i in 0..cfg.n_towers {
        if i < n_urban {
            let (clon, clat) = cities[rng.gen_range(0..cities.len())];
            loop {
                let dx: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.city_sigma_m;
                let dy: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.city_sigma_m;
                let lat = clat + (dy / EARTH_RADIUS_M).to_degrees();
                let lon = clon + (dx / (EARTH_RADIUS_M * clat.to_radians().cos())).to_degrees();
                if lon > lon0 && lon < lon1 && lat > lat0 && lat < lat1 {
                    out.push((lon, lat));
                    break;
                }
            }
        } else {
            out.push(uniform(&mut rng));
        }
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, items: &[usize]) -> Option<usize> {
    (!items.is_empty()).then(|| items[rng.gen_range(0..items.len())])
}

const BOX_INSET: f64 = 1e-4;
const EDGE_STEPS: usize = 32;

/// The bounding box as a ring whose edges follow parallels and meridians
/// closely enough once projected.
fn bbox_ring(cfg: &SynthConfig) -> Vec<(f64, f64)> {
    let corners = [
        (cfg.lon_min, cfg.lat_min),
        (cfg.lon_max, cfg.lat_min),
        (cfg.lon_max, cfg.lat_max),
        (cfg.lon_min, cfg.lat_max),
    ];
    let mut ring = Vec::with_capacity(4 * EDGE_STEPS);
    for k in 0..4 {
        let (a, b) = (corners[k], corners[(k + 1) % 4]);
        for s in 0..EDGE_STEPS {
            let t = s as f64 / EDGE_STEPS as f64;
            ring.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    ring
}

/// Builds towers and users. Identical configs give identical worlds.
pub fn generate_world(cfg: &SynthConfig) -> Result<World> {
    cfg.validate()?;
    let width = (cfg.n_towers - 1).to_string().len();
    let towers: Vec<CellTower> = tower_positions(cfg)
        .into_iter()
        .enumerate()
        .map(|(i, (lon, lat))| CellTower::new(format!("t{i:0width$}"), lon, lat))
        .collect();
    let net = TowerNetwork::build(towers, Some(bbox_ring(cfg)))?;
    let n = net.len();
    let spacing = (net.boundary().area_m2() / n as f64).sqrt();

    let roam: Vec<Vec<usize>> = (0..n)
        .map(|t| {
            // Grow the search disc until it holds k others; everything closer is inside it.
            let mut radius = spacing;
            let within = loop {
                let found = net.neighbors_within_idx(t, radius);
                if found.len() > cfg.roam_k || found.len() == n {
                    break found;
                }
                radius *= 2.0;
            };
            let mut others: Vec<(f64, usize)> =
                within.into_iter().filter(|&u| u != t).map(|u| (net.distance(t, u), u)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(cfg.roam_k).map(|(_, u)| u).collect()
        })
        .collect();

    let region: Vec<usize> = match &cfg.holiday {
        Some(h) => {
            let [x0, y0, x1, y1] = h.region;
            let lon = |f: f64| cfg.lon_min + f * (cfg.lon_max - cfg.lon_min);
            let lat = |f: f64| cfg.lat_min + f * (cfg.lat_max - cfg.lat_min);
            let r: Vec<usize> = (0..n)
                .filter(|&i| {
                    let t = net.tower(i);
                    t.lon >= lon(x0) && t.lon <= lon(x1) && t.lat >= lat(y0) && t.lat <= lat(y1)
                })
                .collect();
            if r.is_empty() && h.displaced_fraction > 0.0 {
                return Err(Error::InvalidParameter("holiday region contains no tower".into()));
            }
            r
        }
        None => Vec::new(),
    };

    let width = (cfg.n_users.max(1) - 1).to_string().len().max(7);
    let mut users = Vec::new();
    for i in 0..cfg.n_users as u64 {
        let retained = cfg.market_share >= 1.0 || substream(cfg.seed, &[TAG_RETAIN, i]).gen::<f64>() < cfg.market_share;
        if !retained {
            continue;
        }
        let mut rng = substream(cfg.seed, &[TAG_USER, i]);
        let home = rng.gen_range(0..n);
        let commuter = rng.gen::<f64>() < cfg.commuter_fraction;
        let z: f64 = rng.sample(StandardNormal);
        let rate = cfg.rate_mean * (cfg.rate_sigma * z - 0.5 * cfg.rate_sigma * cfg.rate_sigma).exp();
        let displaced = cfg.holiday.as_ref().is_some_and(|h| rng.gen::<f64>() < h.displaced_fraction);
        let work = commuter.then(|| {
            let far: Vec<usize> = (0..n).filter(|&u| net.distance(home, u) >= cfg.min_commute_m).collect();
            pick(&mut rng, &far).unwrap_or_else(|| {
                (0..n)
                    .max_by(|&a, &b| net.distance(home, a).total_cmp(&net.distance(home, b)))
                    .unwrap()
            })
        });
        let holiday = displaced.then(|| {
            let away: Vec<usize> = region.iter().copied().filter(|&t| t != home).collect();
            pick(&mut rng, &away).unwrap_or(roam[home][0])
        });
        // exact quota: floor(n f) silent users spread evenly over the index range
        let f = cfg.night_silent_fraction;
        let night_silent = ((i + 1) as f64 * f).floor() - (i as f64 * f).floor() >= 1.0;
        users.push(UserProfile {
            index: i,
            user_id: format!("u{i:0width$}"),
            home,
            work,
            holiday,
            rate,
            night_silent,
        });
    }

    let truth = GroundTruth::new(
        cfg.seed,
        users
            .iter()
            .map(|u| TruthRecord {
                user_id: u.user_id.clone(),
                home_tower: net.tower(u.home).tower_id.clone(),
                work_tower: u.work.map(|w| net.tower(w).tower_id.clone()),
                is_commuter: u.is_commuter(),
                is_displaced: u.is_displaced(),
            })
            .collect(),
    )?;
    Ok(World {
        cfg: cfg.clone(),
        net,
        truth,
        users,
        roam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SynthConfig {
        SynthConfig {
            seed: 7,
            n_towers: 60,
            n_users: 500,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_world(&cfg()).unwrap();
        let b = generate_world(&cfg()).unwrap();
        assert_eq!(a.users, b.users);
        assert_eq!(a.net.towers(), b.net.towers());
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        write_truth_csv(&mut ta, &a.truth).unwrap();
        write_truth_csv(&mut tb, &b.truth).unwrap();
        assert_eq!(ta, tb);
        let c = generate_world(&SynthConfig { seed: 8, ..cfg() }).unwrap();
        assert_ne!(a.users, c.users);
    }

    #[test]
    fn market_share_keeps_retained_users_unchanged() {
        let full = generate_world(&cfg()).unwrap();
        let part = generate_world(&SynthConfig { market_share: 0.3, ..cfg() }).unwrap();
        assert!(part.users.len() < full.users.len());
        for u in &part.users {
            assert_eq!(u, &full.users[u.index as usize]);
        }
    }

    #[test]
    fn market_share_binomial_bound() {
        let c = SynthConfig {
            n_towers: 20,
            n_users: 10_000,
            market_share: 0.3,
            ..cfg()
        };
        let w = generate_world(&c).unwrap();
        // sd of Binomial(10000, 0.3) is about 46
        assert!((w.users.len() as i64 - 3000).abs() <= 100, "{}", w.users.len());
    }

    #[test]
    fn commuters_work_away_from_home() {
        let w = generate_world(&SynthConfig { commuter_fraction: 0.5, ..cfg() }).unwrap();
        let commuters: Vec<&UserProfile> = w.users.iter().filter(|u| u.is_commuter()).collect();
        assert!(commuters.len() > 150 && commuters.len() < 350);
        for u in commuters {
            assert!(w.net.distance(u.home, u.work.unwrap()) >= w.cfg.min_commute_m);
        }
    }

    #[test]
    fn silent_quota_is_exact() {
        let w = generate_world(&SynthConfig { night_silent_fraction: 0.1, ..cfg() }).unwrap();
        assert_eq!(w.users.iter().filter(|u| u.night_silent).count(), 50);
    }

    #[test]
    fn holiday_towers_sit_in_region() {
        let c = SynthConfig {
            holiday: Some(Holiday {
                start: "2007-07-01".parse().unwrap(),
                end: "2007-09-01".parse().unwrap(),
                displaced_fraction: 0.4,
                region: [0.0, 0.0, 1.0, 0.2],
            }),
            ..cfg()
        };
        let w = generate_world(&c).unwrap();
        let cut = c.lat_min + 0.2 * (c.lat_max - c.lat_min);
        let displaced: Vec<&UserProfile> = w.users.iter().filter(|u| u.is_displaced()).collect();
        assert!(!displaced.is_empty());
        for u in displaced {
            let h = u.holiday.unwrap();
            assert_ne!(h, u.home);
            assert!(w.net.tower(h).lat <= cut);
        }
    }

    #[test]
    fn clustered_layout_concentrates_towers() {
        let c = SynthConfig {
            n_towers: 400,
            layout: Layout::Clustered { urban_fraction: 0.8 },
            ..cfg()
        };
        let w = generate_world(&c).unwrap();
        let nn = |w: &World| {
            let mut d: Vec<f64> = (0..w.net.len()).map(|i| w.roam_towers(i).first().map_or(0.0, |&j| w.net.distance(i, j))).collect();
            d.sort_by(f64::total_cmp);
            d[d.len() / 2]
        };
        let u = generate_world(&SynthConfig { n_towers: 400, ..cfg() }).unwrap();
        assert!(nn(&w) < 0.7 * nn(&u), "{} {}", nn(&w), nn(&u));
    }

    #[test]
    fn dense_towers_stay_inside_the_box() {
        let cfg = SynthConfig {
            n_towers: 20_000,
            n_users: 1,
            ..SynthConfig::default()
        };
        let w = generate_world(&cfg).unwrap();
        let b = w.net.boundary().area_m2();
        assert!(w.net.len() == 20_000 && b > 0.0);
    }

    #[test]
    fn infeasible_configs() {
        assert!(generate_world(&SynthConfig { n_towers: 0, ..cfg() }).is_err());
        assert!(generate_world(&SynthConfig { market_share: 0.0, ..cfg() }).is_err());
        assert!(generate_world(&SynthConfig { rate_mean: 0.0, ..cfg() }).is_err());
    }

    #[test]
    fn truth_csv_round_trip() {
        let w = generate_world(&SynthConfig { commuter_fraction: 0.3, ..cfg() }).unwrap();
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &w.truth).unwrap();
        assert!(buf.starts_with(b"# seed=7\n"));
        assert_eq!(read_truth_csv(buf.as_slice()).unwrap(), w.truth);
    }

    #[test]
    fn census_counts_every_user() {
        let w = generate_world(&cfg()).unwrap();
        assert_eq!(w.truth.home_census(&w.net).unwrap().total(), 500.0);
    }
}
