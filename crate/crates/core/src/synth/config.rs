use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::ingest::{NightWindow, TzOffset};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Layout {
    Uniform,
    /// `urban_fraction` of the towers are scattered around a few city
    /// centres, the rest uniformly.
    Clustered { urban_fraction: f64 },
}

/// A block of local dates `[start, end)` during which displaced users make
/// all their records at one tower inside `region`.
#[derive(Debug, Clone, PartialEq)]
pub struct Holiday {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub displaced_fraction: f64,
    /// `[x0, y0, x1, y1]` as fractions of the bounding box, origin south-west.
    pub region: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_towers: usize,
    pub layout: Layout,
    pub n_cities: usize,
    pub city_sigma_m: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    pub n_users: usize,
    /// Mean records per user and day.
    pub rate_mean: f64,
    /// Log-normal spread of the per-user rate multiplier (mean 1).
    pub rate_sigma: f64,
    /// Probability that a record falls in the night window (at home).
    pub night_share: f64,
    pub commuter_fraction: f64,
    /// Night probability for commuters on workdays; their day records are
    /// made at work.
    pub commuter_night_share: f64,
    pub min_commute_m: f64,
    /// Probability that a daytime record at home is made at a nearby tower.
    pub roam_share: f64,
    pub roam_k: usize,
    pub night_silent_fraction: f64,
    pub holiday: Option<Holiday>,
    pub market_share: f64,
    pub tz: TzOffset,
    pub window: NightWindow,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_towers: 200,
            layout: Layout::Uniform,
            n_cities: 3,
            city_sigma_m: 3000.0,
            lon_min: 2.0,
            lon_max: 2.6,
            lat_min: 48.6,
            lat_max: 49.0,
            n_users: 1000,
            rate_mean: 4.0,
            rate_sigma: 0.5,
            night_share: 0.6,
            commuter_fraction: 0.2,
            commuter_night_share: 0.2,
            min_commute_m: 3000.0,
            roam_share: 0.1,
            roam_k: 6,
            night_silent_fraction: 0.0,
            holiday: None,
            market_share: 1.0,
            tz: TzOffset::default(),
            window: NightWindow::default(),
        }
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i as u64 + 1,
            msg: format!("expected key=value, found `{line}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidParameter(format!("invalid value `{v}` for `{key}`")))
}

fn date(key: &str, v: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(v, "%Y-%m-%d").map_err(|_| Error::InvalidParameter(format!("invalid date `{v}` for `{key}`")))
}

impl SynthConfig {
    /// Starts from the defaults and applies `map`; unknown keys are rejected.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = Self::default();
        let mut urban_fraction = None;
        let mut layout = None;
        let (mut h_start, mut h_end, mut h_frac, mut h_region) = (None, None, None, None);
        for (k, v) in map {
            let v = v.as_str();
            match k.as_str() {
                "seed" => c.seed = num(k, v)?,
                "n_towers" => c.n_towers = num(k, v)?,
                "layout" => layout = Some(v.to_string()),
                "urban_fraction" => urban_fraction = Some(num::<f64>(k, v)?),
                "n_cities" => c.n_cities = num(k, v)?,
                "city_sigma_m" => c.city_sigma_m = num(k, v)?,
                "lon_min" => c.lon_min = num(k, v)?,
                "lon_max" => c.lon_max = num(k, v)?,
                "lat_min" => c.lat_min = num(k, v)?,
                "lat_max" => c.lat_max = num(k, v)?,
                "n_users" => c.n_users = num(k, v)?,
                "rate_mean" => c.rate_mean = num(k, v)?,
                "rate_sigma" => c.rate_sigma = num(k, v)?,
                "night_share" => c.night_share = num(k, v)?,
                "commuter_fraction" => c.commuter_fraction = num(k, v)?,
                "commuter_night_share" => c.commuter_night_share = num(k, v)?,
                "min_commute_m" => c.min_commute_m = num(k, v)?,
                "roam_share" => c.roam_share = num(k, v)?,
                "roam_k" => c.roam_k = num(k, v)?,
                "night_silent_fraction" => c.night_silent_fraction = num(k, v)?,
                "holiday_start" => h_start = Some(date(k, v)?),
                "holiday_end" => h_end = Some(date(k, v)?),
                "displaced_fraction" => h_frac = Some(num::<f64>(k, v)?),
                "holiday_region" => {
                    let parts = v.split(',').map(|p| num::<f64>(k, p.trim())).collect::<Result<Vec<_>>>()?;
                    let region: [f64; 4] = parts
                        .try_into()
                        .map_err(|_| Error::InvalidParameter("holiday_region needs x0,y0,x1,y1".into()))?;
                    h_region = Some(region);
                }
                "market_share" => c.market_share = num(k, v)?,
                "tz_offset_h" => c.tz = TzOffset::from_hours(num(k, v)?)?,
                "night_window" => c.window = v.parse()?,
                _ => return Err(Error::InvalidParameter(format!("unknown synth setting `{k}`"))),
            }
        }
        c.layout = match (layout.as_deref(), urban_fraction) {
            (None | Some("uniform"), _) => Layout::Uniform,
            (Some("clustered"), f) => Layout::Clustered {
                urban_fraction: f.unwrap_or(0.6),
            },
            (Some(other), _) => return Err(Error::InvalidParameter(format!("unknown layout `{other}`"))),
        };
        c.holiday = match (h_start, h_end) {
            (Some(start), Some(end)) => Some(Holiday {
                start,
                end,
                displaced_fraction: h_frac.unwrap_or(0.0),
                region: h_region.unwrap_or([0.0, 0.0, 1.0, 0.2]),
            }),
            (None, None) if h_frac.is_none() && h_region.is_none() => None,
            _ => {
                return Err(Error::InvalidParameter(
                    "holiday settings need both holiday_start and holiday_end".into(),
                ))
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seed", self.seed.to_string());
        put("n_towers", self.n_towers.to_string());
        match self.layout {
            Layout::Uniform => put("layout", "uniform".into()),
            Layout::Clustered { urban_fraction } => {
                put("layout", "clustered".into());
                put("urban_fraction", urban_fraction.to_string());
            }
        }
        put("n_cities", self.n_cities.to_string());
        put("city_sigma_m", self.city_sigma_m.to_string());
        put("lon_min", self.lon_min.to_string());
        put("lon_max", self.lon_max.to_string());
        put("lat_min", self.lat_min.to_string());
        put("lat_max", self.lat_max.to_string());
        put("n_users", self.n_users.to_string());
        put("rate_mean", self.rate_mean.to_string());
        put("rate_sigma", self.rate_sigma.to_string());
        put("night_share", self.night_share.to_string());
        put("commuter_fraction", self.commuter_fraction.to_string());
        put("commuter_night_share", self.commuter_night_share.to_string());
        put("min_commute_m", self.min_commute_m.to_string());
        put("roam_share", self.roam_share.to_string());
        put("roam_k", self.roam_k.to_string());
        put("night_silent_fraction", self.night_silent_fraction.to_string());
        if let Some(h) = &self.holiday {
            put("holiday_start", h.start.to_string());
            put("holiday_end", h.end.to_string());
            put("displaced_fraction", h.displaced_fraction.to_string());
            put(
                "holiday_region",
                h.region.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            );
        }
        put("market_share", self.market_share.to_string());
        put("tz_offset_h", (self.tz.seconds() as f64 / 3600.0).to_string());
        put("night_window", self.window.to_string());
        m
    }

    /// `key=value` lines, sorted by key.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        let fractions = [
            ("night_share", self.night_share),
            ("commuter_fraction", self.commuter_fraction),
            ("commuter_night_share", self.commuter_night_share),
            ("roam_share", self.roam_share),
            ("night_silent_fraction", self.night_silent_fraction),
        ];
        for (name, f) in fractions {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} must be in [0, 1], got {f}"));
            }
        }
        if self.n_towers < 3 {
            return bad(format!("need at least 3 towers, got {}", self.n_towers));
        }
        if !(self.market_share > 0.0 && self.market_share <= 1.0) {
            return bad(format!("market_share must be in (0, 1], got {}", self.market_share));
        }
        if !(self.rate_mean > 0.0 && self.rate_mean.is_finite()) {
            return bad(format!("rate_mean must be > 0, got {}", self.rate_mean));
        }
        if !(self.rate_sigma >= 0.0 && self.rate_sigma.is_finite()) {
            return bad(format!("rate_sigma must be >= 0, got {}", self.rate_sigma));
        }
        if !(self.lon_min < self.lon_max && self.lat_min < self.lat_max)
            || self.lon_min < -180.0
            || self.lon_max > 180.0
            || self.lat_min < -85.0
            || self.lat_max > 85.0
        {
            return bad("invalid bounding box".into());
        }
        if !(self.min_commute_m >= 0.0 && self.city_sigma_m > 0.0) {
            return bad("distances must be positive".into());
        }
        if self.roam_share > 0.0 && self.roam_k == 0 {
            return bad("roam_share > 0 needs roam_k >= 1".into());
        }
        if let Layout::Clustered { urban_fraction } = self.layout {
            if !(0.0..=1.0).contains(&urban_fraction) {
                return bad(format!("urban_fraction must be in [0, 1], got {urban_fraction}"));
            }
            if self.n_cities == 0 && urban_fraction > 0.0 {
                return bad("clustered layout needs n_cities >= 1".into());
            }
        }
        if let Some(h) = &self.holiday {
            if h.start >= h.end {
                return bad("holiday_start must precede holiday_end".into());
            }
            if !(0.0..=1.0).contains(&h.displaced_fraction) {
                return bad(format!("displaced_fraction must be in [0, 1], got {}", h.displaced_fraction));
            }
            let [x0, y0, x1, y1] = h.region;
            if !(0.0 <= x0 && x0 < x1 && x1 <= 1.0 && 0.0 <= y0 && y0 < y1 && y1 <= 1.0) {
                return bad("holiday_region must satisfy 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1".into());
            }
        }
        Ok(())
    }
}
