//! Single-zone 1R1C thermal testbed.
//!
//! The zone is a lumped capacitance `C` coupled to outdoor air through a
//! resistance `R`, heated by direct solar gain and occupants, and cooled by
//! an ideal thermostat-controlled unit limited by its capacity:
//!
//! ```text
//! C·dT/dt = (T_oa − T)/R + radiation·gain_area + occupancy·gain_per_person − Q_cool
//! ```
//!
//! Each hourly [`step`] integrates this balance with backward-Euler substeps.
//! Within a substep the unit delivers the smaller of its capacity and the
//! load needed to hold the setpoint, and nothing when the free-floating
//! temperature stays at or below the setpoint. The hour reports the mean
//! zone air temperature and the mean cooling rate, the same quantities a
//! building simulator prints at hourly reporting frequency.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STEP_SECONDS: f64 = 3600.0;
pub const HOURS_PER_DAY: usize = 24;

/// Power limit outside demand-response events.
pub const NORMAL_POWER_LIMIT_W: f64 = 5000.0;
pub const EVENT_LIMIT_MIN_W: f64 = 750.0;
pub const EVENT_LIMIT_MAX_W: f64 = 1750.0;
pub const EVENT_EARLIEST_START: u32 = 11;
pub const EVENT_LATEST_START: u32 = 18;

/// Setpoints accepted by [`step`].
pub const SETPOINT_RANGE_C: (f64, f64) = (20.0, 30.0);
/// Setpoints drawn during random excitation.
pub const EXCITATION_SETPOINTS_C: [f64; 5] = [22.0, 23.0, 24.0, 25.0, 26.0];

const TEMP_SANITY_C: (f64, f64) = (0.0, 60.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneState {
    /// Mean zone air temperature over the hour that ended at `timestamp`, °C.
    pub zone_temp: f64,
    /// Instantaneous zone air temperature at `timestamp`, °C.
    pub air_temp: f64,
    /// Hour index, 0-based.
    pub timestamp: usize,
}

impl ZoneState {
    pub fn new(temp: f64, timestamp: usize) -> Self {
        Self {
            zone_temp: temp,
            air_temp: temp,
            timestamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    /// Outdoor dry-bulb temperature, °C.
    pub oa_temp: f64,
    /// Direct solar radiation, W/m².
    pub oa_radiation: f64,
    /// Persons in the zone.
    pub occupancy: f64,
}

impl Disturbance {
    pub fn validate(&self) -> Result<()> {
        let finite = self.oa_temp.is_finite()
            && self.oa_radiation.is_finite()
            && self.occupancy.is_finite();
        if !finite {
            return Err(Error::InvalidInput(format!(
                "non-finite disturbance {self:?}"
            )));
        }
        if self.oa_radiation < 0.0 || self.occupancy < 0.0 {
            return Err(Error::InvalidInput(format!(
                "negative radiation or occupancy in {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvacOutput {
    /// Mean cooling rate delivered over the hour, W.
    pub cooling_rate: f64,
    pub setpoint_applied: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrEvent {
    pub day: usize,
    /// Hour of day the event starts.
    pub start_hour: u32,
    pub duration_hours: u32,
    pub power_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestbedConfig {
    /// K/W
    pub thermal_resistance: f64,
    /// J/K
    pub thermal_capacitance: f64,
    /// Effective aperture converting direct radiation to zone gain, m².
    pub solar_gain_area: f64,
    /// W per person
    pub internal_gain_per_person: f64,
    /// W
    pub cooling_capacity: f64,
    /// Inert during the summer run period.
    pub heating_setpoint: f64,
    pub rng_seed: u64,
    /// Backward-Euler substeps per hour.
    pub substeps: usize,
    pub initial_zone_temp: f64,
    pub weather: WeatherConfig,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        Self {
            thermal_resistance: 0.01,
            thermal_capacitance: 2.0e6,
            solar_gain_area: 1.0,
            internal_gain_per_person: 100.0,
            cooling_capacity: 4000.0,
            heating_setpoint: 20.0,
            rng_seed: 7,
            substeps: 60,
            initial_zone_temp: 24.0,
            weather: WeatherConfig::default(),
        }
    }
}

/// Synthetic summer weather and office schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeatherConfig {
    /// Daily maximum on the hottest day, °C.
    pub oa_max: f64,
    /// Day-to-day spread of the daily maximum below `oa_max`, K.
    pub oa_max_spread: f64,
    /// Peak-to-trough diurnal swing, K.
    pub oa_daily_range: f64,
    /// Hour of day the outdoor temperature peaks.
    pub peak_hour: f64,
    /// Clear-sky peak direct radiation, W/m².
    pub peak_radiation: f64,
    /// Lowest daily clearness factor (1 = clear).
    pub min_clearness: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    pub occupants: f64,
    /// First occupied hour of day (inclusive).
    pub occupied_from: u32,
    /// Last occupied hour of day (exclusive).
    pub occupied_until: u32,
    /// Weekday of day index 0, 0 = Monday. Saturdays and Sundays are unoccupied.
    pub first_weekday: u32,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        Self {
            oa_max: 40.0,
            oa_max_spread: 4.0,
            oa_daily_range: 13.0,
            peak_hour: 14.0,
            peak_radiation: 800.0,
            min_clearness: 0.7,
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
            occupants: 5.0,
            occupied_from: 8,
            occupied_until: 17,
            first_weekday: 0,
        }
    }
}

impl TestbedConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("thermal_resistance", self.thermal_resistance),
            ("thermal_capacitance", self.thermal_capacitance),
            ("solar_gain_area", self.solar_gain_area),
            ("internal_gain_per_person", self.internal_gain_per_person),
            ("cooling_capacity", self.cooling_capacity),
            ("heating_setpoint", self.heating_setpoint),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {value}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        let w = &self.weather;
        if !(w.sunrise_hour < w.sunset_hour) || w.peak_radiation < 0.0 || w.occupants < 0.0 {
            return Err(Error::Config(format!("invalid weather config {w:?}")));
        }
        if !(0.0..=1.0).contains(&w.min_clearness) {
            return Err(Error::Config("min_clearness must be within [0, 1]".into()));
        }
        Ok(())
    }

    /// Steady-state cooling load needed to hold `setpoint` under `d`, W.
    pub fn hold_load(&self, d: &Disturbance, setpoint: f64) -> f64 {
        (d.oa_temp - setpoint) / self.thermal_resistance + self.internal_gains(d)
    }

    fn internal_gains(&self, d: &Disturbance) -> f64 {
        d.oa_radiation * self.solar_gain_area + d.occupancy * self.internal_gain_per_person
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Advances the zone by one hour under `d` with the cooling setpoint held.
pub fn step(
    state: &ZoneState,
    d: &Disturbance,
    cooling_setpoint: f64,
    cfg: &TestbedConfig,
) -> Result<(ZoneState, HvacOutput)> {
    if !(state.zone_temp.is_finite() && state.air_temp.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite state {state:?}")));
    }
    d.validate()?;
    if !cooling_setpoint.is_finite()
        || cooling_setpoint < SETPOINT_RANGE_C.0
        || cooling_setpoint > SETPOINT_RANGE_C.1
    {
        return Err(Error::InvalidInput(format!(
            "setpoint {cooling_setpoint} outside [{}, {}] C",
            SETPOINT_RANGE_C.0, SETPOINT_RANGE_C.1
        )));
    }

    let dt = STEP_SECONDS / cfg.substeps as f64;
    let a = cfg.thermal_capacitance / dt;
    let b = 1.0 / cfg.thermal_resistance;
    let gains = cfg.internal_gains(d);

    let mut temp = state.air_temp;
    let mut temp_sum = 0.0;
    let mut cooling_sum = 0.0;
    for _ in 0..cfg.substeps {
        let free_float = (a * temp + b * d.oa_temp + gains) / (a + b);
        let (next, cooling) = if free_float <= cooling_setpoint {
            (free_float, 0.0)
        } else {
            let hold = a * (temp - cooling_setpoint) + b * (d.oa_temp - cooling_setpoint) + gains;
            if hold <= cfg.cooling_capacity {
                (cooling_setpoint, hold)
            } else {
                let capped =
                    (a * temp + b * d.oa_temp + gains - cfg.cooling_capacity) / (a + b);
                (capped, cfg.cooling_capacity)
            }
        };
        temp = next;
        temp_sum += temp;
        cooling_sum += cooling;
    }

    let n = cfg.substeps as f64;
    let next = ZoneState {
        zone_temp: temp_sum / n,
        air_temp: temp,
        timestamp: state.timestamp + 1,
    };
    for t in [next.zone_temp, next.air_temp] {
        if !(TEMP_SANITY_C.0..=TEMP_SANITY_C.1).contains(&t) {
            return Err(Error::SimulationDiverged {
                hour: state.timestamp,
                temp: t,
            });
        }
    }
    Ok((
        next,
        HvacOutput {
            cooling_rate: cooling_sum / n,
            setpoint_applied: cooling_setpoint,
        },
    ))
}

/// Day-level weather draws behind [`synth_disturbances`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DayWeather {
    pub oa_max: f64,
    pub clearness: f64,
    pub occupied: bool,
}

pub fn day_weather(day_index: usize, cfg: &TestbedConfig) -> DayWeather {
    let w = &cfg.weather;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.rng_seed, day_index as u64));
    let spread: f64 = rng.gen();
    let clear: f64 = rng.gen();
    let weekday = (w.first_weekday as usize + day_index) % 7;
    DayWeather {
        oa_max: w.oa_max - w.oa_max_spread * spread,
        clearness: w.min_clearness + (1.0 - w.min_clearness) * clear,
        occupied: weekday < 5,
    }
}

/// Hourly disturbances for one day: diurnal cosine outdoor temperature
/// peaking at `peak_hour`, half-sine daytime radiation, office occupancy.
pub fn synth_disturbances(day_index: usize, cfg: &TestbedConfig) -> Vec<Disturbance> {
    let w = &cfg.weather;
    let day = day_weather(day_index, cfg);
    (0..HOURS_PER_DAY)
        .map(|hour| {
            let h = hour as f64;
            let phase = 2.0 * PI * (h - w.peak_hour) / HOURS_PER_DAY as f64;
            let oa_temp = day.oa_max - 0.5 * w.oa_daily_range * (1.0 - phase.cos());
            let oa_radiation = if h > w.sunrise_hour && h < w.sunset_hour {
                let s = (PI * (h - w.sunrise_hour) / (w.sunset_hour - w.sunrise_hour)).sin();
                (w.peak_radiation * day.clearness * s).max(0.0)
            } else {
                0.0
            };
            let in_hours = (w.occupied_from..w.occupied_until).contains(&(hour as u32));
            let occupancy = if day.occupied && in_hours {
                w.occupants
            } else {
                0.0
            };
            Disturbance {
                oa_temp,
                oa_radiation,
                occupancy,
            }
        })
        .collect()
}

/// Disturbances for consecutive days starting at `first_day`, flattened hourly.
pub fn disturbance_series(first_day: usize, n_days: usize, cfg: &TestbedConfig) -> Vec<Disturbance> {
    (first_day..first_day + n_days)
        .flat_map(|day| synth_disturbances(day, cfg))
        .collect()
}

/// Hourly power limits over a run. `limits[h]` applies to hour `[h, h+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrCalendar {
    pub seed: u64,
    pub event_probability: f64,
    pub limits: Vec<f64>,
    pub events: Vec<DrEvent>,
}

impl DrCalendar {
    /// Limit for hour index `hour`; hours past the calendar are normal.
    pub fn limit_at(&self, hour: usize) -> f64 {
        self.limits.get(hour).copied().unwrap_or(NORMAL_POWER_LIMIT_W)
    }

    pub fn n_hours(&self) -> usize {
        self.limits.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// At most one one-hour event per day, starting between 11:00 and 18:00,
/// with the limit drawn uniformly from [750, 1750] W.
pub fn generate_dr_calendar(n_days: usize, event_probability: f64, seed: u64) -> Result<DrCalendar> {
    if !(0.0..=1.0).contains(&event_probability) {
        return Err(Error::InvalidInput(format!(
            "event probability {event_probability} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut limits = vec![NORMAL_POWER_LIMIT_W; n_days * HOURS_PER_DAY];
    let mut events = Vec::new();
    for day in 0..n_days {
        // Draw all three values every day so calendars at different
        // probabilities share their event hours and limits.
        let roll: f64 = rng.gen();
        let start_hour = rng.gen_range(EVENT_EARLIEST_START..=EVENT_LATEST_START);
        let power_limit = rng.gen_range(EVENT_LIMIT_MIN_W..=EVENT_LIMIT_MAX_W);
        if roll < event_probability {
            limits[day * HOURS_PER_DAY + start_hour as usize] = power_limit;
            events.push(DrEvent {
                day,
                start_hour,
                duration_hours: 1,
                power_limit,
            });
        }
    }
    Ok(DrCalendar {
        seed,
        event_probability,
        limits,
        events,
    })
}

pub const DATASET_HEADER: [&str; 8] = [
    "time_hour",
    "setpoint_c",
    "zone_temp_c",
    "oa_temp_c",
    "oa_radiation_wm2",
    "occupancy",
    "next_zone_temp_c",
    "next_cooling_rate_w",
];

/// One excitation hour: inputs at the start of hour `time_hour`, zone
/// temperature and mean cooling rate reported at its end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationRow {
    pub time_hour: usize,
    pub setpoint_c: f64,
    pub zone_temp_c: f64,
    pub oa_temp_c: f64,
    pub oa_radiation_wm2: f64,
    pub occupancy: f64,
    pub next_zone_temp_c: f64,
    pub next_cooling_rate_w: f64,
}

impl ExcitationRow {
    pub fn disturbance(&self) -> Disturbance {
        Disturbance {
            oa_temp: self.oa_temp_c,
            oa_radiation: self.oa_radiation_wm2,
            occupancy: self.occupancy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExcitationDataset {
    pub rows: Vec<ExcitationRow>,
}

impl ExcitationDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// CSV with a fixed header; floats carry six decimals.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(DATASET_HEADER)?;
        for r in &self.rows {
            w.write_record(&[
                r.time_hour.to_string(),
                format!("{:.6}", r.setpoint_c),
                format!("{:.6}", r.zone_temp_c),
                format!("{:.6}", r.oa_temp_c),
                format!("{:.6}", r.oa_radiation_wm2),
                format!("{:.6}", r.occupancy),
                format!("{:.6}", r.next_zone_temp_c),
                format!("{:.6}", r.next_cooling_rate_w),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv flush: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header != DATASET_HEADER {
            return Err(Error::Schema(format!(
                "dataset header {header:?} does not match {DATASET_HEADER:?}"
            )));
        }
        let mut rows = Vec::new();
        for row in reader.deserialize() {
            let row: ExcitationRow = row?;
            let values = [
                row.setpoint_c,
                row.zone_temp_c,
                row.oa_temp_c,
                row.oa_radiation_wm2,
                row.occupancy,
                row.next_zone_temp_c,
                row.next_cooling_rate_w,
            ];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "non-finite value in dataset row {}",
                    row.time_hour
                )));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }
}

/// Random-excitation run: the setpoint is redrawn uniformly from
/// {22, ..., 26} °C every hour. Weather comes from `cfg.rng_seed`, the
/// setpoint sequence from `seed`.
pub fn run_excitation(n_days: usize, cfg: &TestbedConfig, seed: u64) -> Result<ExcitationDataset> {
    if n_days == 0 {
        return Err(Error::InvalidInput("n_days must be >= 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weather = disturbance_series(0, n_days, cfg);
    let mut state = ZoneState::new(cfg.initial_zone_temp, 0);
    let mut rows = Vec::with_capacity(weather.len());
    for d in &weather {
        let setpoint = EXCITATION_SETPOINTS_C[rng.gen_range(0..EXCITATION_SETPOINTS_C.len())];
        let (next, out) = step(&state, d, setpoint, cfg)?;
        rows.push(ExcitationRow {
            time_hour: state.timestamp,
            setpoint_c: setpoint,
            zone_temp_c: state.zone_temp,
            oa_temp_c: d.oa_temp,
            oa_radiation_wm2: d.oa_radiation,
            occupancy: d.occupancy,
            next_zone_temp_c: next.zone_temp,
            next_cooling_rate_w: out.cooling_rate,
        });
        state = next;
    }
    Ok(ExcitationDataset { rows })
}

pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
