//! Day-long PV / load / price series: CSV ingestion, a seeded synthetic
//! generator with seasonal shapes, and the calendar train/test split.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("day {day}: {message}")]
    Validation { day: String, message: String },
    #[error("dataset split produced an empty {0} set")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Exogenous inputs for one day at hourly resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    /// Calendar tag; required for the train/test split.
    pub date: Option<NaiveDate>,
    pub pv: Vec<f64>,
    pub load: Vec<f64>,
    pub price: Vec<f64>,
}

impl DayProfile {
    pub fn len(&self) -> usize {
        self.pv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pv.is_empty()
    }

    pub fn label(&self) -> String {
        self.date
            .map(|d| d.to_string())
            .unwrap_or_else(|| "<untagged>".to_string())
    }

    pub fn validate(&self, horizon: usize) -> Result<(), ProfileError> {
        let fail = |message: String| ProfileError::Validation {
            day: self.label(),
            message,
        };
        if self.pv.len() != horizon || self.load.len() != horizon || self.price.len() != horizon {
            return Err(fail(format!(
                "expected {horizon} entries, got pv={} load={} price={}",
                self.pv.len(),
                self.load.len(),
                self.price.len()
            )));
        }
        for h in 0..horizon {
            if !(self.pv[h] >= 0.0 && self.pv[h].is_finite()) {
                return Err(fail(format!("hour {h}: pv must be >= 0")));
            }
            if !(self.load[h] >= 0.0 && self.load[h].is_finite()) {
                return Err(fail(format!("hour {h}: load must be >= 0")));
            }
            if !(self.price[h] > 0.0 && self.price[h].is_finite()) {
                return Err(fail(format!("hour {h}: price must be > 0")));
            }
        }
        Ok(())
    }

    /// Largest load − pv over the day, kW.
    pub fn peak_net_load(&self) -> f64 {
        self.load
            .iter()
            .zip(&self.pv)
            .map(|(l, p)| l - p)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<DayProfile>,
    pub test: Vec<DayProfile>,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRow {
    timestamp: String,
    pv_kw: f64,
    load_kw: f64,
    price: f64,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<DayProfile>, ProfileError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["timestamp", "pv_kw", "load_kw", "price"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(ProfileError::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }
    type Slot = Option<(f64, f64, f64)>;
    let mut days: BTreeMap<NaiveDate, Vec<Slot>> = BTreeMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| ProfileError::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: CsvRow = record
            .deserialize(Some(&headers))
            .map_err(|e| ProfileError::Parse {
                line,
                message: e.to_string(),
            })?;
        let ts = match parse_timestamp(&row.timestamp) {
            Some(ts) if ts.minute() == 0 && ts.second() == 0 => ts,
            _ => {
                return Err(ProfileError::Parse {
                    line,
                    message: format!("invalid hourly timestamp `{}`", row.timestamp),
                })
            }
        };
        let slots = days
            .entry(ts.date())
            .or_insert_with(|| vec![None; HOURS_PER_DAY]);
        let hour = ts.hour() as usize;
        if slots[hour].is_some() {
            return Err(ProfileError::Validation {
                day: ts.date().to_string(),
                message: format!("duplicate hour {hour}"),
            });
        }
        slots[hour] = Some((row.pv_kw, row.load_kw, row.price));
    }

    let mut out = Vec::with_capacity(days.len());
    for (date, slots) in days {
        let missing: Vec<usize> = (0..HOURS_PER_DAY).filter(|&h| slots[h].is_none()).collect();
        if !missing.is_empty() {
            return Err(ProfileError::Validation {
                day: date.to_string(),
                message: format!("incomplete day, missing hours {missing:?}"),
            });
        }
        let (mut pv, mut load, mut price) = (vec![], vec![], vec![]);
        for (p, l, c) in slots.into_iter().flatten() {
            pv.push(p);
            load.push(l);
            price.push(c);
        }
        let day = DayProfile {
            date: Some(date),
            pv,
            load,
            price,
        };
        day.validate(HOURS_PER_DAY)?;
        out.push(day);
    }
    Ok(out)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<DayProfile>, ProfileError> {
    read_csv(std::fs::File::open(path)?)
}

pub fn write_csv<W: Write>(writer: W, days: &[DayProfile]) -> Result<(), ProfileError> {
    let mut wtr = csv::Writer::from_writer(writer);
    for day in days {
        let date = day.date.ok_or_else(|| ProfileError::Validation {
            day: day.label(),
            message: "cannot write an untagged day".into(),
        })?;
        for h in 0..day.len() {
            wtr.serialize(CsvRow {
                timestamp: format!("{}T{:02}:00:00", date, h),
                pv_kw: day.pv[h],
                load_kw: day.load[h],
                price: day.price[h],
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, days: &[DayProfile]) -> Result<(), ProfileError> {
    write_csv(std::fs::File::create(path)?, days)
}

/// Seasonal shape of the mean daily curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonShape {
    /// PV output at solar noon (12h), kW.
    pub pv_peak_kw: f64,
    /// Half the daylight duration; PV is zero outside `12 ± half_daylight_h`.
    pub half_daylight_h: f64,
    pub load_base_kw: f64,
    pub load_morning_kw: f64,
    pub load_midday_kw: f64,
    pub load_evening_kw: f64,
}

/// Three-level time-of-use tariff, $/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TouTariff {
    pub off_peak: f64,
    pub shoulder: f64,
    pub peak: f64,
    /// Hours `[start, end)` billed at the shoulder rate.
    pub shoulder_hours: (usize, usize),
    /// Hours `[start, end)` billed at the peak rate (overrides shoulder).
    pub peak_hours: (usize, usize),
}

impl Default for TouTariff {
    fn default() -> Self {
        Self {
            off_peak: 2.0,
            shoulder: 5.0,
            peak: 9.0,
            shoulder_hours: (7, 23),
            peak_hours: (17, 21),
        }
    }
}

impl TouTariff {
    pub fn rate(&self, hour: usize) -> f64 {
        if (self.peak_hours.0..self.peak_hours.1).contains(&hour) {
            self.peak
        } else if (self.shoulder_hours.0..self.shoulder_hours.1).contains(&hour) {
            self.shoulder
        } else {
            self.off_peak
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seasonality {
    /// Cosine blend between winter and summer shapes over the calendar year.
    Annual,
    /// Constant blend; 1.0 is pure summer.
    Fixed { summer_weight: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonParams {
    pub start_date: NaiveDate,
    pub summer: SeasonShape,
    pub winter: SeasonShape,
    pub seasonality: Seasonality,
    /// Relative std of the hourly multiplicative PV perturbation.
    pub pv_noise: f64,
    /// Relative std of the hourly multiplicative load perturbation.
    pub load_noise: f64,
    /// Absolute std of the hourly price perturbation, $/kWh.
    pub price_noise: f64,
    pub price_floor: f64,
    /// Load is raised so that `load − pv` never drops below this, kW.
    pub min_net_load_kw: f64,
    pub tariff: TouTariff,
}

impl Default for SeasonParams {
    fn default() -> Self {
        Self {
            start_date: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            summer: SeasonShape {
                pv_peak_kw: 170.0,
                half_daylight_h: 7.0,
                load_base_kw: 200.0,
                load_morning_kw: 50.0,
                load_midday_kw: 120.0,
                load_evening_kw: 100.0,
            },
            winter: SeasonShape {
                pv_peak_kw: 90.0,
                half_daylight_h: 4.5,
                load_base_kw: 195.0,
                load_morning_kw: 70.0,
                load_midday_kw: 45.0,
                load_evening_kw: 110.0,
            },
            seasonality: Seasonality::Annual,
            pv_noise: 0.1,
            load_noise: 0.04,
            price_noise: 0.1,
            price_floor: 0.1,
            min_net_load_kw: 150.0,
            tariff: TouTariff::default(),
        }
    }
}

impl SeasonParams {
    pub fn summer_weight(&self, date: NaiveDate) -> f64 {
        match self.seasonality {
            Seasonality::Fixed { summer_weight } => summer_weight.clamp(0.0, 1.0),
            Seasonality::Annual => {
                let doy = date.ordinal() as f64;
                0.5 * (1.0 + (2.0 * PI * (doy - 172.0) / 365.25).cos())
            }
        }
    }

    fn shape(&self, w: f64) -> SeasonShape {
        let mix = |s: f64, v: f64| w * s + (1.0 - w) * v;
        let (s, v) = (&self.summer, &self.winter);
        SeasonShape {
            pv_peak_kw: mix(s.pv_peak_kw, v.pv_peak_kw),
            half_daylight_h: mix(s.half_daylight_h, v.half_daylight_h),
            load_base_kw: mix(s.load_base_kw, v.load_base_kw),
            load_morning_kw: mix(s.load_morning_kw, v.load_morning_kw),
            load_midday_kw: mix(s.load_midday_kw, v.load_midday_kw),
            load_evening_kw: mix(s.load_evening_kw, v.load_evening_kw),
        }
    }
}

/// Mean PV output at `hour` for a season shape.
pub fn mean_pv(shape: &SeasonShape, hour: usize) -> f64 {
    let h = hour as f64;
    let (rise, set) = (12.0 - shape.half_daylight_h, 12.0 + shape.half_daylight_h);
    if h <= rise || h >= set {
        0.0
    } else {
        shape.pv_peak_kw * (PI * (h - rise) / (set - rise)).sin()
    }
}

/// Mean load at `hour`: base plus morning, midday and evening bumps.
pub fn mean_load(shape: &SeasonShape, hour: usize) -> f64 {
    let bump = |centre: f64, width: f64| {
        let d = hour as f64 - centre;
        (-d * d / (2.0 * width * width)).exp()
    };
    shape.load_base_kw
        + shape.load_morning_kw * bump(8.0, 1.5)
        + shape.load_midday_kw * bump(13.0, 2.5)
        + shape.load_evening_kw * bump(19.0, 2.0)
}

/// Generates `n_days` consecutive days starting at `params.start_date`.
/// Pure function of `(seed, n_days, params)`.
pub fn synthesize(seed: u64, n_days: usize, params: &SeasonParams) -> Vec<DayProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut days = Vec::with_capacity(n_days);
    let mut date = params.start_date;
    for _ in 0..n_days {
        let shape = params.shape(params.summer_weight(date));
        let mut pv = Vec::with_capacity(HOURS_PER_DAY);
        let mut load = Vec::with_capacity(HOURS_PER_DAY);
        let mut price = Vec::with_capacity(HOURS_PER_DAY);
        for h in 0..HOURS_PER_DAY {
            let z_pv: f64 = unit.sample(&mut rng);
            let z_load: f64 = unit.sample(&mut rng);
            let z_price: f64 = unit.sample(&mut rng);
            let p = (mean_pv(&shape, h) * (1.0 + params.pv_noise * z_pv)).max(0.0);
            let l = (mean_load(&shape, h) * (1.0 + params.load_noise * z_load))
                .max(p + params.min_net_load_kw)
                .max(0.0);
            let c = (params.tariff.rate(h) + params.price_noise * z_price).max(params.price_floor);
            pv.push(p);
            load.push(l);
            price.push(c);
        }
        days.push(DayProfile {
            date: Some(date),
            pv,
            load,
            price,
        });
        date = date.succ_opt().expect("date in range");
    }
    days
}

/// Days 1–21 of each month train, the rest test.
pub fn split_train_test(days: &[DayProfile]) -> Result<Dataset, ProfileError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for day in days {
        let date = day.date.ok_or_else(|| ProfileError::Validation {
            day: day.label(),
            message: "day has no calendar tag".into(),
        })?;
        if date.day() <= 21 {
            train.push(day.clone());
        } else {
            test.push(day.clone());
        }
    }
    if train.is_empty() {
        return Err(ProfileError::EmptySplit("train"));
    }
    if test.is_empty() {
        return Err(ProfileError::EmptySplit("test"));
    }
    Ok(Dataset { train, test })
}
